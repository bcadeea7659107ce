//! Additive-noise unscented Kalman filter.
//!
//! Sigma points are `mean +- columns of chol((n + lambda) P)` with
//! `lambda = alpha^2 (n + kappa) - n`, mean weight `lambda / (n + lambda)` and
//! `1 / (2 (n + lambda))` elsewhere; the same weights are used for means and
//! covariances. The process noise is added after propagation and the update
//! redraws sigma points from the predicted estimate.
//!
//! Angular components are averaged as `ref + sum w_i wrap(x_i - ref)` with the
//! central point as reference. This is exact for linear maps and stays
//! accurate when the central weight is large and negative.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::coords::wrap_angle;
use crate::dynamics::{self, MscState, ProcessNoiseConfig, PSI, S, THETA};
use crate::error::{Error, Result};
use crate::measurement::{observe, Measurement};

/// Smallest inverse range a propagated or updated state is clamped to.
pub const MIN_INVERSE_RANGE: f64 = 1e-7;
const ELEVATION_LIMIT: f64 = std::f64::consts::FRAC_PI_2 - 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtParams {
    pub alpha: f64,
    pub kappa: f64,
}

impl Default for UtParams {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            kappa: 0.0,
        }
    }
}

impl UtParams {
    /// `kappa = 3 - n` variant.
    pub fn with_kappa_3_minus_n(alpha: f64, n: usize) -> Self {
        Self {
            alpha,
            kappa: 3.0 - n as f64,
        }
    }

    pub fn lambda(&self, n: usize) -> f64 {
        let n = n as f64;
        self.alpha * self.alpha * (n + self.kappa) - n
    }

    /// `(w0, wi)` for an `n`-dimensional transform.
    pub fn weights(&self, n: usize) -> Result<(f64, f64)> {
        let lambda = self.lambda(n);
        let scale = n as f64 + lambda;
        if !(scale > 0.0) {
            return Err(Error::InvalidUtParams(scale));
        }
        Ok((lambda / scale, 0.5 / scale))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianEstimate {
    pub mean: MscState,
    pub cov: DMatrix<f64>,
}

impl GaussianEstimate {
    pub fn new(mean: MscState, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.model.dim();
        if cov.shape() != (n, n) {
            return Err(Error::DimensionMismatch {
                model: mean.model,
                expected: n,
                got: cov.nrows(),
            });
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.values.len()
    }

    /// Symmetry within 1e-10 and no eigenvalue below `-1e-9 * trace`.
    pub fn is_consistent(&self) -> bool {
        let asym = (&self.cov - self.cov.transpose()).abs().max();
        let scale = self.cov.abs().max().max(f64::MIN_POSITIVE);
        if asym > 1e-10 * scale {
            return false;
        }
        let tr = self.cov.trace();
        self.cov.clone().symmetric_eigenvalues().min() >= -1e-9 * tr.abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaPointSet {
    pub points: Vec<DVector<f64>>,
    pub weights: Vec<f64>,
}

/// Lower Cholesky factor of the symmetrized matrix, retrying with diagonal
/// jitter `1e-12 * trace / n` (doubling, three retries).
pub fn lower_factor(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = p.nrows();
    let sym = (p + p.transpose()) * 0.5;
    if let Some(c) = sym.clone().cholesky() {
        return Ok(c.l());
    }
    if sym.iter().all(|v| *v == 0.0) {
        return Ok(sym);
    }
    let mut eps = 1e-12 * sym.trace().abs() / n as f64;
    for _ in 0..3 {
        let jittered = &sym + DMatrix::identity(n, n) * eps;
        if let Some(c) = jittered.cholesky() {
            return Ok(c.l());
        }
        eps *= 2.0;
    }
    Err(Error::FactorizationFailed)
}

/// Sigma points of a raw mean/covariance pair.
pub fn sigma_points_raw(mean: &DVector<f64>, cov: &DMatrix<f64>, params: &UtParams) -> Result<SigmaPointSet> {
    let n = mean.len();
    let (w0, wi) = params.weights(n)?;
    let scale = n as f64 + params.lambda(n);
    let l = lower_factor(&(cov * scale))?;
    let mut points = Vec::with_capacity(2 * n + 1);
    points.push(mean.clone());
    for i in 0..n {
        points.push(mean + l.column(i));
    }
    for i in 0..n {
        points.push(mean - l.column(i));
    }
    let mut weights = vec![wi; 2 * n + 1];
    weights[0] = w0;
    Ok(SigmaPointSet { points, weights })
}

pub fn sigma_points(est: &GaussianEstimate, params: &UtParams) -> Result<SigmaPointSet> {
    sigma_points_raw(&est.mean.values, &est.cov, params)
}

fn diff(a: &DVector<f64>, b: &DVector<f64>, angle: Option<usize>) -> DVector<f64> {
    let mut d = a - b;
    if let Some(i) = angle {
        d[i] = wrap_angle(d[i]);
    }
    d
}

/// Weighted mean around the first point; `angle` marks a wrapped component.
pub fn weighted_mean(points: &[DVector<f64>], weights: &[f64], angle: Option<usize>) -> DVector<f64> {
    let reference = &points[0];
    let mut acc = DVector::zeros(reference.len());
    for (p, w) in points.iter().zip(weights).skip(1) {
        acc += diff(p, reference, angle) * *w;
    }
    let mut mean = reference + acc;
    if let Some(i) = angle {
        mean[i] = wrap_angle(mean[i]);
    }
    mean
}

/// Weighted cross-covariance `sum w (a_i - a_mean)(b_i - b_mean)^T`.
pub fn weighted_cross(
    a: &[DVector<f64>],
    a_mean: &DVector<f64>,
    a_angle: Option<usize>,
    b: &[DVector<f64>],
    b_mean: &DVector<f64>,
    b_angle: Option<usize>,
    weights: &[f64],
) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a_mean.len(), b_mean.len());
    for ((ai, bi), w) in a.iter().zip(b).zip(weights) {
        let da = diff(ai, a_mean, a_angle);
        let db = diff(bi, b_mean, b_angle);
        out += (da * db.transpose()) * *w;
    }
    out
}

fn symmetrize(p: DMatrix<f64>) -> DMatrix<f64> {
    (&p + p.transpose()) * 0.5
}

/// Output of a time update before noise is added.
pub struct Propagated {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Generic unscented time update: propagate sigma points through `transition`,
/// recombine with eqs. for mean and covariance, then add `q`.
pub fn predict_with<F>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    params: &UtParams,
    mut transition: F,
    q: &DMatrix<f64>,
    angle: Option<usize>,
) -> Result<Propagated>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let sp = sigma_points_raw(mean, cov, params)?;
    let moved = sp
        .points
        .iter()
        .map(&mut transition)
        .collect::<Result<Vec<_>>>()?;
    let m = weighted_mean(&moved, &sp.weights, angle);
    let p = weighted_cross(&moved, &m, angle, &moved, &m, angle, &sp.weights) + q;
    Ok(Propagated {
        mean: m,
        cov: symmetrize(p),
    })
}

/// Result of a measurement update.
pub struct Updated {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub innovation: DVector<f64>,
    pub innovation_cov: DMatrix<f64>,
    pub likelihood: f64,
}

/// Generic unscented measurement update.
#[allow(clippy::too_many_arguments)]
pub fn update_with<H>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    params: &UtParams,
    z: &DVector<f64>,
    r: &DMatrix<f64>,
    mut h: H,
    state_angle: Option<usize>,
    meas_angle: Option<usize>,
) -> Result<Updated>
where
    H: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let m = z.len();
    if r.shape() != (m, m) {
        return Err(Error::MeasurementDimension(r.nrows()));
    }
    let sp = sigma_points_raw(mean, cov, params)?;
    let zs = sp.points.iter().map(&mut h).collect::<Result<Vec<_>>>()?;
    let z_hat = weighted_mean(&zs, &sp.weights, meas_angle);
    let x_hat = weighted_mean(&sp.points, &sp.weights, state_angle);
    let s = symmetrize(weighted_cross(&zs, &z_hat, meas_angle, &zs, &z_hat, meas_angle, &sp.weights) + r);
    let pxz = weighted_cross(&sp.points, &x_hat, state_angle, &zs, &z_hat, meas_angle, &sp.weights);

    let chol = s.clone().cholesky().ok_or(Error::SingularInnovation)?;
    let nu = diff(z, &z_hat, meas_angle);
    // K = Pxz S^-1, computed as (S^-1 Pxz^T)^T
    let gain = chol.solve(&pxz.transpose()).transpose();
    let mut post_mean = mean + &gain * &nu;
    if let Some(i) = state_angle {
        post_mean[i] = wrap_angle(post_mean[i]);
    }
    let post_cov = symmetrize(cov - &gain * &s * gain.transpose());

    let maha = nu.dot(&chol.solve(&nu));
    let det = chol.determinant();
    if !(det > 0.0) || !maha.is_finite() {
        return Err(Error::SingularInnovation);
    }
    let likelihood = (-0.5 * maha).exp() / ((2.0 * std::f64::consts::PI).powi(m as i32) * det).sqrt();

    Ok(Updated {
        mean: post_mean,
        cov: post_cov,
        innovation: nu,
        innovation_cov: s,
        likelihood,
    })
}

/// Keeps a state inside the MSC domain, logging when a clamp happens.
pub fn clamp_to_domain(x: &mut DVector<f64>) {
    if !(x[S] >= MIN_INVERSE_RANGE) {
        warn!("inverse range {} clamped to {}", x[S], MIN_INVERSE_RANGE);
        x[S] = MIN_INVERSE_RANGE;
    }
    if x[THETA].abs() > ELEVATION_LIMIT {
        warn!("elevation {} clamped", x[THETA]);
        x[THETA] = x[THETA].clamp(-ELEVATION_LIMIT, ELEVATION_LIMIT);
    }
}

/// Euler step with the clamp-and-log recovery for sigma points that leave the domain.
fn step_recovering(model: dynamics::ModelId, x: &DVector<f64>, dt: f64) -> Result<DVector<f64>> {
    match dynamics::step_vector(model, x, dt) {
        Err(Error::StepLeftDomain(_)) => {
            let fx = dynamics::drift(model, x.as_slice())?;
            let mut next = x + fx * dt;
            next[PSI] = wrap_angle(next[PSI]);
            clamp_to_domain(&mut next);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::StepLeftDomain("non-finite state"));
            }
            Ok(next)
        }
        other => other,
    }
}

/// MSC time update: Euler-propagated sigma points plus the mid-point `Qd`
/// evaluated at the predicted mean.
pub fn predict(
    est: &GaussianEstimate,
    dt: f64,
    noise: &ProcessNoiseConfig,
    params: &UtParams,
) -> Result<GaussianEstimate> {
    let model = est.mean.model;
    let zero = DMatrix::zeros(model.dim(), model.dim());
    let prop = predict_with(
        &est.mean.values,
        &est.cov,
        params,
        |x| step_recovering(model, x, dt),
        &zero,
        Some(PSI),
    )?;
    let mean = MscState::from_vector(model, prop.mean)?;
    let qd = dynamics::discrete_qd(&mean, noise, dt)?;
    Ok(GaussianEstimate {
        mean,
        cov: prop.cov + qd,
    })
}

/// MSC time update with an externally supplied discrete noise covariance.
pub fn predict_with_noise(
    est: &GaussianEstimate,
    dt: f64,
    qd: &DMatrix<f64>,
    params: &UtParams,
) -> Result<GaussianEstimate> {
    let model = est.mean.model;
    let prop = predict_with(
        &est.mean.values,
        &est.cov,
        params,
        |x| step_recovering(model, x, dt),
        qd,
        Some(PSI),
    )?;
    Ok(GaussianEstimate {
        mean: MscState::from_vector(model, prop.mean)?,
        cov: prop.cov,
    })
}

/// MSC measurement update. Returns the posterior and the innovation likelihood.
pub fn update(
    pred: &GaussianEstimate,
    z: &Measurement,
    r: &DMatrix<f64>,
    params: &UtParams,
) -> Result<(GaussianEstimate, f64)> {
    let dim = z.dim();
    let up = update_with(
        &pred.mean.values,
        &pred.cov,
        params,
        &z.to_vector(),
        r,
        |x| observe(x, dim),
        Some(PSI),
        Some(0),
    )?;
    let mut mean = up.mean;
    clamp_to_domain(&mut mean);
    Ok((
        GaussianEstimate {
            mean: MscState::from_vector(pred.mean.model, mean)?,
            cov: up.cov,
        },
        up.likelihood,
    ))
}
