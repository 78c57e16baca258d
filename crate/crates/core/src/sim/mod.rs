//! Input, channel and noise generators for Monte-Carlo experiments.
//!
//! Every stream draws from its own `ChaCha8` generator, seeded from the
//! experiment seed and a fixed stream identifier, so the input, the channel
//! taps and the noise are mutually independent and individually reproducible.

mod experiment;

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::basis::{HyperModel, ParameterModel};
use crate::{Error, Result, C64};

pub use experiment::{run_experiment, Algorithm, AlgorithmResult, BankSpec, RunResult, Scenario};

const STREAM_INPUT: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_OUTLIER: u64 = 3;
const STREAM_STABLE_W: u64 = 4;
const STREAM_CHANNEL: u64 = 100;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of an independent sub-stream.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(seed, stream))
}

/// Circular complex Gaussian with unit variance.
fn circular_normal(rng: &mut ChaCha8Rng) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * FRAC_1_SQRT_2
}

/// White QPSK symbols `(±1 ± i)/√2`.
pub fn gen_qpsk(len: usize, seed: u64) -> Vec<C64> {
    let mut rng = stream_rng(seed, STREAM_INPUT);
    (0..len)
        .map(|_| {
            let bits: u8 = rng.random_range(0..4);
            let re = if bits & 1 == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
            let im = if bits & 2 == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
            C64::new(re, im)
        })
        .collect()
}

/// Channel with exponentially decaying tap powers, each tap a lowpass
/// filtered circular Gaussian process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    /// Number of taps `n`.
    pub n: usize,
    /// Power ratio between consecutive taps.
    pub decay: f64,
    /// Lowpass cutoff in cycles per sample.
    pub bandwidth: f64,
    /// Length of the lowpass FIR filter.
    pub filter_len: usize,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self { n: 10, decay: 0.69, bandwidth: 0.003, filter_len: 2001 }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("channel.n must be positive".into()));
        }
        if !(self.decay > 0.0) {
            return Err(Error::InvalidArgument("channel.decay must be positive".into()));
        }
        if !(self.bandwidth > 0.0 && self.bandwidth < 0.5) {
            return Err(Error::InvalidArgument("channel.bandwidth must lie in (0, 0.5)".into()));
        }
        if self.filter_len == 0 {
            return Err(Error::InvalidArgument("channel.filter_len must be positive".into()));
        }
        Ok(())
    }

    /// Target power of tap `i` (zero-based).
    pub fn tap_variance(&self, i: usize) -> f64 {
        self.decay.powi(i as i32)
    }

    /// Total parameter power `σ_θ²`.
    pub fn sigma_theta_sq(&self) -> f64 {
        (0..self.n).map(|i| self.tap_variance(i)).sum()
    }

    /// Flat Doppler hypermodel matching the lowpass band, `ω₀ = 2πB`.
    pub fn hypermodel(&self) -> Result<ParameterModel> {
        ParameterModel::new(HyperModel::FlatDoppler, 2.0 * PI * self.bandwidth, self.sigma_theta_sq())
    }
}

/// Hamming-windowed sinc lowpass with cutoff `bandwidth` (cycles/sample)
/// and unit DC gain.
pub fn lowpass_taps(bandwidth: f64, len: usize) -> Vec<f64> {
    let mid = (len as f64 - 1.0) / 2.0;
    let mut taps: Vec<f64> = (0..len)
        .map(|i| {
            let x = i as f64 - mid;
            let sinc = if x == 0.0 { 2.0 * bandwidth } else { (2.0 * PI * bandwidth * x).sin() / (PI * x) };
            let window = if len > 1 { 0.54 - 0.46 * (2.0 * PI * i as f64 / (len as f64 - 1.0)).cos() } else { 1.0 };
            sinc * window
        })
        .collect();
    let gain: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|v| *v /= gain);
    taps
}

/// Steady-state part of the linear convolution of `x` with `h`:
/// `len(x) − len(h) + 1` samples.
fn fft_filter(x: &[C64], h: &[f64]) -> Vec<C64> {
    let size = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut a: Vec<C64> = x.iter().copied().chain(std::iter::repeat(C64::new(0.0, 0.0))).take(size).collect();
    let mut b: Vec<C64> =
        h.iter().map(|&v| C64::new(v, 0.0)).chain(std::iter::repeat(C64::new(0.0, 0.0))).take(size).collect();
    fwd.process(&mut a);
    fwd.process(&mut b);
    a.iter_mut().zip(&b).for_each(|(p, q)| *p *= q);
    inv.process(&mut a);
    let scale = 1.0 / size as f64;
    a[h.len() - 1..x.len()].iter().map(|v| v * scale).collect()
}

/// Tap trajectories `θ_i(t)`, `i < n`, `t < len`. Each tap is renormalized
/// so its empirical power equals the target exactly.
pub fn gen_channel(cfg: &ChannelConfig, len: usize, seed: u64) -> Result<Vec<Vec<C64>>> {
    cfg.validate()?;
    let h = lowpass_taps(cfg.bandwidth, cfg.filter_len);
    (0..cfg.n)
        .map(|i| {
            let mut rng = stream_rng(seed, STREAM_CHANNEL + i as u64);
            let white: Vec<C64> = (0..len + h.len() - 1).map(|_| circular_normal(&mut rng)).collect();
            let mut tap = fft_filter(&white, &h);
            let power = tap.iter().map(|v| v.norm_sqr()).sum::<f64>() / len.max(1) as f64;
            if !(power > 0.0) {
                return Err(Error::InvalidArgument("channel trajectory has zero power".into()));
            }
            let gain = (cfg.tap_variance(i) / power).sqrt();
            tap.iter_mut().for_each(|v| *v *= gain);
            Ok(tap)
        })
        .collect()
}

/// Measurement noise law.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseConfig {
    /// `CN(0, σ₁²)` with probability `1 − ε`, `CN(0, σ₂²)` otherwise.
    ContaminatedGaussian { sigma1_sq: f64, sigma2_sq: f64, epsilon: f64 },
    /// Real and imaginary parts i.i.d. symmetric α-stable with scale `σ`.
    SymmetricAlphaStable { alpha: f64, sigma: f64 },
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseConfig::ContaminatedGaussian { sigma1_sq, sigma2_sq, epsilon } => {
                if !(sigma1_sq > 0.0 && sigma2_sq > 0.0) {
                    return Err(Error::InvalidArgument("noise variances must be positive".into()));
                }
                if !(0.0..1.0).contains(&epsilon) {
                    return Err(Error::InvalidArgument(format!("noise.epsilon {epsilon} outside [0, 1)")));
                }
            }
            NoiseConfig::SymmetricAlphaStable { alpha, sigma } => {
                if !(alpha > 0.0 && alpha <= 2.0) {
                    return Err(Error::InvalidArgument(format!("noise.alpha {alpha} outside (0, 2]")));
                }
                if !(sigma > 0.0) {
                    return Err(Error::InvalidArgument("noise.sigma must be positive".into()));
                }
            }
        }
        Ok(())
    }

    /// Variance of the nominal (outlier-free) noise: `σ₁²`, or `4σ²` for
    /// the Gaussian member `α = 2` of the stable family.
    pub fn nominal_variance(&self) -> f64 {
        match *self {
            NoiseConfig::ContaminatedGaussian { sigma1_sq, .. } => sigma1_sq,
            NoiseConfig::SymmetricAlphaStable { sigma, .. } => 4.0 * sigma * sigma,
        }
    }

    /// The same law without impulsive behavior. Generated with the same
    /// seed, it shares the underlying random draws.
    pub fn clean_twin(&self) -> Self {
        match *self {
            NoiseConfig::ContaminatedGaussian { sigma1_sq, sigma2_sq, .. } => {
                NoiseConfig::ContaminatedGaussian { sigma1_sq, sigma2_sq, epsilon: 0.0 }
            }
            NoiseConfig::SymmetricAlphaStable { sigma, .. } => NoiseConfig::SymmetricAlphaStable { alpha: 2.0, sigma },
        }
    }

    /// Short name of the law: `contaminated` or `sas`.
    pub fn kind_label(&self) -> &'static str {
        match self {
            NoiseConfig::ContaminatedGaussian { .. } => "contaminated",
            NoiseConfig::SymmetricAlphaStable { .. } => "sas",
        }
    }

    /// The swept parameter: `ε` or `α`.
    pub fn param(&self) -> f64 {
        match *self {
            NoiseConfig::ContaminatedGaussian { epsilon, .. } => epsilon,
            NoiseConfig::SymmetricAlphaStable { alpha, .. } => alpha,
        }
    }
}

/// Chambers-Mallows-Stuck draw of a standard symmetric α-stable variable
/// from `V ~ U(−π/2, π/2)` and `W ~ Exp(1)`.
fn sas_standard(alpha: f64, v: f64, w: f64) -> f64 {
    let av = alpha * v;
    av.sin() / v.cos().powf(1.0 / alpha) * (((1.0 - alpha) * v).cos() / w).powf((1.0 - alpha) / alpha)
}

pub fn gen_noise(cfg: &NoiseConfig, len: usize, seed: u64) -> Result<Vec<C64>> {
    cfg.validate()?;
    let mut rng = stream_rng(seed, STREAM_NOISE);
    Ok(match *cfg {
        NoiseConfig::ContaminatedGaussian { sigma1_sq, sigma2_sq, epsilon } => {
            let mut flips = stream_rng(seed, STREAM_OUTLIER);
            let (s1, s2) = (sigma1_sq.sqrt(), sigma2_sq.sqrt());
            (0..len)
                .map(|_| {
                    let z = circular_normal(&mut rng);
                    let outlier = flips.random::<f64>() < epsilon;
                    z * if outlier { s2 } else { s1 }
                })
                .collect()
        }
        NoiseConfig::SymmetricAlphaStable { alpha, sigma } => {
            let mut exp = stream_rng(seed, STREAM_STABLE_W);
            let mut draw = || {
                // open interval keeps cos(V) away from zero
                let v = loop {
                    let v = PI * (rng.random::<f64>() - 0.5);
                    if v.abs() < PI / 2.0 {
                        break v;
                    }
                };
                let w: f64 = exp.sample(Exp1);
                sigma * sas_standard(alpha, v, w.max(f64::MIN_POSITIVE))
            };
            (0..len)
                .map(|_| {
                    let re = draw();
                    C64::new(re, draw())
                })
                .collect()
        }
    })
}

/// `y(t) = Σ_i θ_i*(t) u(t − i) + e(t)` with `u(s) = 0` for `s < 0`.
pub fn gen_output(u: &[C64], theta: &[Vec<C64>], e: &[C64]) -> Vec<C64> {
    (0..u.len())
        .map(|t| {
            let mut acc = e[t];
            for (i, tap) in theta.iter().enumerate().take(t + 1) {
                acc += tap[t].conj() * u[t - i];
            }
            acc
        })
        .collect()
}
