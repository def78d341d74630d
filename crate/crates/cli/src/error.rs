use thiserror::Error;

/// CLI failures, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("infeasible experiment: {0}")]
    Infeasible(String),
    #[error("check failed: {0}")]
    CheckFailed(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::CheckFailed(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl From<distest::Error> for CliError {
    fn from(e: distest::Error) -> Self {
        use distest::Error as E;
        match e {
            E::InsufficientBudget(_)
            | E::Infeasible(_)
            | E::AlphabetTooLarge { .. }
            | E::EmptyGrid(_)
            | E::BudgetExceeded { .. } => CliError::Infeasible(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}
