//! Robust local basis function (LBF) identification of time-varying FIR
//! systems under impulsive measurement noise.
//!
//! The crate is organised bottom-up:
//!
//! - [`basis`]: parameter-variation hypermodels, the Karhunen-Loève
//!   eigenbasis, closed-form bias/variance and model order selection.
//! - [`lbf`]: analysis frames, generalized regression vectors and the plain
//!   least-squares LBF estimator.
//! - [`robust`]: sequential trimming, local variance estimates and the
//!   adaptive basis-count rule.
//! - [`bank`]: a bank of trimmed estimators tuned online by leave-one-out
//!   cross-validation, including the Woodbury downdate chain.
//! - [`lad`]: least absolute deviations baseline (IRLS).
//! - [`sim`]: channel, input and noise generators plus the Monte-Carlo
//!   experiment driver.
//! - [`tracking`]: the streaming [`Tracker`](tracking::Tracker) interface
//!   shared by all estimators.

pub mod bank;
pub mod basis;
mod error;
pub mod lad;
pub mod lbf;
pub mod linalg;
pub mod robust;
pub mod sim;
pub mod tracking;

pub use error::{Error, Result};

/// Complex sample type used throughout.
pub type C64 = num_complex::Complex64;

pub use bank::{BankConfig, BankTracker, LevelSolver, Ranking};
pub use basis::{BasisSet, HyperModel, ParameterModel};
pub use lad::{LadConfig, LadTracker};
pub use lbf::{Frame, LbfEstimate, LbfTracker};
pub use robust::{AdaptiveState, InitMethod, TrimConfig, TrimmedEstimate, TrimmedTracker};
pub use sim::{run_experiment, Algorithm, AlgorithmResult, ChannelConfig, NoiseConfig, RunResult, Scenario};
pub use tracking::{MPolicy, Step, Tracker};
