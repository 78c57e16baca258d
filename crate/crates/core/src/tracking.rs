//! Streaming interface shared by all estimators: one call per analysis
//! window, strictly in time order.

use serde::{Deserialize, Serialize};

use crate::lbf::Frame;
use crate::{Result, C64};

/// How the number of basis functions is chosen in each window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MPolicy {
    /// Constant basis count.
    Fixed(usize),
    /// Threshold rule with known noise and parameter variances; the input
    /// covariance is still tracked by exponential forgetting.
    Known { sigma_e_sq: f64, sigma_theta_sq: f64 },
    /// Threshold rule driven by local variance estimates from the previous window.
    Adaptive,
}

impl MPolicy {
    pub fn label(&self) -> String {
        match self {
            MPolicy::Fixed(m) => format!("fixed:{m}"),
            MPolicy::Known { .. } => "known".into(),
            MPolicy::Adaptive => "adaptive".into(),
        }
    }
}

/// Output of one window.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    /// Parameter estimate at the window center.
    pub theta: Vec<C64>,
    /// Basis count used.
    pub m: usize,
    /// Number of samples trimmed away (selected member for a bank).
    pub delta: usize,
    /// The fit was rejected and the previous estimate held.
    pub degraded: bool,
}

pub trait Tracker {
    /// Processes the window centered at `frame.center()`. Windows must be
    /// supplied in consecutive order.
    fn step(&mut self, frame: &Frame) -> Result<Step>;
}

impl<T: Tracker + ?Sized> Tracker for Box<T> {
    fn step(&mut self, frame: &Frame) -> Result<Step> {
        (**self).step(frame)
    }
}
