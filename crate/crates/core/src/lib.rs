//! Sequential change-point detection in nonlinear quantile regression.
//!
//! A quantile model is fitted on `m` change-free historical observations.
//! Each new observation then feeds a CUSUM of the quantile subgradient,
//! normalized by a boundary function, and an alarm is raised the first time
//! the statistic reaches a critical value tabulated by Monte-Carlo
//! simulation of a `p`-dimensional Wiener process.
//!
//! The numerical core ([`models`], [`linalg`], [`qfit`], [`detector`]) is
//! generic over the floating-point type through [`Scalar`]. The Monte-Carlo
//! layers ([`critvals`], [`simlab`]) work in `f64`. Concrete aliases for the
//! common instantiations live at the crate root.

pub mod critvals;
pub mod detector;
pub mod error;
pub mod fitfile;
pub mod linalg;
pub mod models;
pub mod nelder_mead;
pub mod qfit;
pub mod rng;
pub mod scalar;
pub mod simlab;

pub use critvals::{CriticalValueTable, Procedure};
pub use detector::{
    boundary_z, compute_jm, DetectorState, DetectorStatus, GammaParam, HistoricalArtifacts, Verdict,
};
pub use error::{Error, Result};
pub use linalg::{inv_sqrt_psd, SquareMatrix};
pub use models::{check_loss, psi, Model, Observation, ParamBox, QuantileLevel, RegressionFn};
pub use qfit::{fit_quantile, objective_at, FitConfig, FitResult};
pub use scalar::Scalar;
pub use simlab::{AggregateReport, ErrorLaw, ReplicationSummary, Scenario};

pub type Model64 = Model<f64>;
pub type Model32 = Model<f32>;
pub type Observation64 = Observation<f64>;
pub type FitResult64 = FitResult<f64>;
pub type Artifacts64 = HistoricalArtifacts<f64>;
pub type Artifacts32 = HistoricalArtifacts<f32>;
pub type Detector64 = DetectorState<f64>;
pub type Detector32 = DetectorState<f32>;
pub type Matrix64 = SquareMatrix<f64>;
