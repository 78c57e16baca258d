use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use rlbf_core::basis::{hypermodel_basis, identifiability_bound, predicted_mse, select_m_optimal};
use rlbf_core::{run_experiment, MPolicy};
use serde::Serialize;

use crate::config::ExperimentSpec;
use crate::CliError;

/// One CSV row per (algorithm, K, noise point, seed).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Row {
    pub algorithm: String,
    #[serde(rename = "K")]
    pub width: usize,
    pub m_policy: String,
    pub noise_kind: String,
    pub noise_param: f64,
    pub seed: u64,
    #[serde(rename = "T")]
    pub len: usize,
    pub mse: f64,
    pub mean_m: f64,
    pub mean_delta_selected: f64,
    pub wall_time_ms: Option<f64>,
}

/// Runs the whole grid on `threads` workers (0 picks the rayon default).
/// Rows come back in grid order regardless of scheduling.
pub fn run_grid(spec: &ExperimentSpec, threads: usize) -> Result<Vec<Row>, CliError> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| CliError::Io(e.to_string()))?;
    let scenarios = spec.scenarios();
    let runs = pool.install(|| {
        scenarios.par_iter().map(|sc| run_experiment(sc).map(|r| (sc, r))).collect::<Result<Vec<_>, _>>()
    })?;
    Ok(runs
        .into_iter()
        .flat_map(|(sc, run)| {
            run.results.into_iter().map(move |r| Row {
                algorithm: r.algorithm.to_string(),
                width: sc.width,
                m_policy: sc.m_policy.label(),
                noise_kind: sc.noise.kind_label().to_string(),
                noise_param: sc.noise.param(),
                seed: sc.seed,
                len: sc.len,
                mse: r.mse,
                mean_m: r.mean_m,
                mean_delta_selected: r.mean_delta,
                wall_time_ms: r.frame_time_ms,
            })
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MoptRow {
    #[serde(rename = "K")]
    pub width: usize,
    pub m_opt: usize,
    pub sigma_e_sq: f64,
    pub sigma_theta_sq: f64,
    pub predicted_mse: f64,
}

/// Optimal basis count per configured width with known variances and white
/// unit-power input (`tr Φ⁻¹ = n`). A `known` policy supplies the
/// variances; otherwise they come from the channel profile and the nominal
/// noise of the first grid point.
pub fn emit_mopt_table(spec: &ExperimentSpec) -> Result<Vec<MoptRow>, CliError> {
    let n = spec.channel.n;
    let (sigma_e_sq, sigma_theta_sq) = match spec.m_policy {
        MPolicy::Known { sigma_e_sq, sigma_theta_sq } => (sigma_e_sq, sigma_theta_sq),
        _ => {
            let noise = spec.noise.points().first().copied().ok_or_else(|| CliError::config("noise", "empty grid"))?;
            (noise.nominal_variance(), spec.channel.sigma_theta_sq())
        }
    };
    let model = spec.channel.hypermodel().map_err(|e| CliError::config("channel", e.to_string()))?;
    let tr_phi_inv = n as f64;
    spec.widths
        .iter()
        .map(|&width| {
            let cap = identifiability_bound(width, n);
            let basis = hypermodel_basis(&model, width, cap.clamp(1, width))
                .map_err(|e| CliError::config("widths", e.to_string()))?;
            let m_opt = select_m_optimal(basis.lambdas(), sigma_e_sq, sigma_theta_sq, tr_phi_inv, cap);
            let pred = predicted_mse(&basis, m_opt, sigma_e_sq, sigma_theta_sq, tr_phi_inv)?;
            Ok(MoptRow { width, m_opt, sigma_e_sq, sigma_theta_sq, predicted_mse: pred.mse })
        })
        .collect()
}

pub fn write_csv<R: Serialize>(rows: &[R], out: Option<&Path>) -> Result<(), CliError> {
    let sink: Box<dyn Write> = match out {
        Some(path) => {
            Box::new(std::fs::File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?)
        }
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    for row in rows {
        w.serialize(row).map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}
