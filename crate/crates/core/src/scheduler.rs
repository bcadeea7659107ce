//! Range-measurement scheduling from the inverse-range variance.
//!
//! A scalar three-point unscented transform maps `(s_hat, P_s)` to the range
//! mean and standard deviation; the active range finder fires whenever that
//! standard deviation exceeds the threshold, and on every frame of the warm-up.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ukf::UtParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub threshold_sigma_r: f64,
    pub warmup_frames: usize,
    pub ut_params: UtParams,
    /// When false, range is measured on every frame.
    #[serde(default = "enabled_default")]
    pub enabled: bool,
}

fn enabled_default() -> bool {
    true
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            threshold_sigma_r: 5.0,
            warmup_frames: 50,
            ut_params: UtParams::default(),
            enabled: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleDecision {
    pub measure_range: bool,
    pub sigma_r: f64,
    pub r_hat: f64,
}

/// Scalar unscented transform of `r = 1/s`. Returns `(r_hat, sigma_r)`.
///
/// The points are `s_hat` and `s_hat +- sqrt((1 + lambda) P_s)`. Deviations
/// are accumulated relative to the central point `1/s_hat`, which is the same
/// weighted sum without the cancellation of summing raw ranges.
pub fn range_sigma(s_hat: f64, p_s: f64, params: &UtParams) -> Result<(f64, f64)> {
    if !(s_hat > 0.0) {
        return Err(Error::NonpositiveInverseRange(s_hat));
    }
    if !(p_s >= 0.0) {
        return Err(Error::ConfigInvalid(format!("negative inverse-range variance {p_s}")));
    }
    let (w0, wi) = params.weights(1)?;
    let spread = ((1.0 + params.lambda(1)) * p_s).sqrt();
    if spread >= s_hat {
        return Err(Error::SigmaPointCrossesZero);
    }
    let r0 = 1.0 / s_hat;
    // 1/(s + d) - 1/s = -d / (s (s + d))
    let dev = |d: f64| -d / (s_hat * (s_hat + d));
    let deviations = [0.0, dev(spread), dev(-spread)];
    let weights = [w0, wi, wi];

    let mean_dev: f64 = deviations.iter().zip(&weights).map(|(d, w)| d * w).sum();
    let r_hat = r0 + mean_dev;
    // sum w (d - m)^2 = sum w d^2 - m^2; the central deviation is zero, so
    // the large negative central weight at small alpha drops out
    let second: f64 = wi * (deviations[1].powi(2) + deviations[2].powi(2));
    let p_r = second - mean_dev * mean_dev;
    Ok((r_hat, p_r.max(0.0).sqrt()))
}

/// Scheduling decision for one frame.
pub fn decide(cfg: &SchedulerConfig, frame: usize, s_hat: f64, p_s: f64) -> ScheduleDecision {
    let warm = frame < cfg.warmup_frames || !cfg.enabled;
    match range_sigma(s_hat, p_s, &cfg.ut_params) {
        Ok((r_hat, sigma_r)) => ScheduleDecision {
            measure_range: warm || sigma_r > cfg.threshold_sigma_r,
            sigma_r,
            r_hat,
        },
        Err(_) => ScheduleDecision {
            measure_range: true,
            sigma_r: f64::INFINITY,
            r_hat: if s_hat > 0.0 { 1.0 / s_hat } else { f64::INFINITY },
        },
    }
}
