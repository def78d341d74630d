//! Simulation of Gaussian mean testing under per-machine communication budgets.
//!
//! `m` machines each observe `X^j = f + √(m/n) Z^j` in `R^d` and send `b`
//! bits to a central machine, which decides between `f = 0` and
//! `‖f‖₂ ≥ ρ`. The crate implements the optimal distributed tests, their
//! calibration, the nonparametric reduction to a truncated sequence model,
//! the smoothness-adaptive tests and Monte Carlo harnesses for risk,
//! thresholds and information diagnostics.
//!
//! Numerical kernels are generic over [`Real`] (`f32`/`f64`); the simulation
//! harnesses run in `f64`. Aliases for both precisions live at the crate root.

pub mod adaptive;
pub mod calibration;
pub mod error;
pub mod infodiag;
pub mod lemmas;
pub mod model;
pub mod nonparametric;
pub mod protocols;
pub mod randomness;
pub mod risk;
pub mod scalar;
pub mod stats;

pub use calibration::{calibrate, Calibration, CalibrationMethod, ThresholdTable};
pub use error::{Error, Result};
pub use model::{CoinMode, ProblemConfig, RiskReport, Transcript};
pub use nonparametric::SobolevBall;
pub use protocols::{Protocol, ProtocolChoice, ProtocolKind, ReplicationSeeds, Thresholds};
pub use randomness::SeedNode;
pub use scalar::Real;

pub type Signal64 = model::Signal<f64>;
pub type Signal32 = model::Signal<f32>;
pub type Dataset64 = model::Dataset<f64>;
pub type Dataset32 = model::Dataset<f32>;
pub type LeveledSignal64 = nonparametric::LeveledSignal<f64>;
pub type LeveledSignal32 = nonparametric::LeveledSignal<f32>;
pub type OrthogonalFrame64 = randomness::OrthogonalFrame<f64>;
pub type OrthogonalFrame32 = randomness::OrthogonalFrame<f32>;
pub type OrthogonalMatrix64 = randomness::OrthogonalMatrix<f64>;
pub type OrthogonalMatrix32 = randomness::OrthogonalMatrix<f32>;
