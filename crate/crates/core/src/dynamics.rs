//! Continuous-time MSC dynamics for the NCV, NCA and CT kinematic models.
//!
//! Every model shares the six core states `[omega, theta_dot, tau, psi, theta, s]`
//! where `omega = psi_dot * cos(theta)`, `tau = r_dot / r` and `s = 1 / r`. The
//! drift `f` never reads `s` except in its own row `ds/dt = -tau * s`; inverse
//! range only enters through the noise gain `g`.
//!
//! Discretization is the first-order stochastic Taylor step `x + f(x) dt` and
//! the discrete process-noise covariance uses the mid-point rule
//! `Qd = exp(A dt/2) (g Q g^T dt) exp(A^T dt/2)` with `A = df/dx`.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::coords::{rotation_c_to_s, wrap_angle, POLE_MARGIN};
use crate::error::{Error, Result};

pub const OMEGA: usize = 0;
pub const THETA_DOT: usize = 1;
pub const TAU: usize = 2;
pub const PSI: usize = 3;
pub const THETA: usize = 4;
pub const S: usize = 5;
/// Number of states shared by all models.
pub const CORE_DIM: usize = 6;
/// CT turn-rate state.
pub const OMEGA_T: usize = 6;
/// First NCA scaled-acceleration state (`sigma_x = s * a_x`).
pub const SIGMA_X: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelId {
    Ncv,
    Nca,
    Ct,
}

impl ModelId {
    pub const ALL: [ModelId; 3] = [ModelId::Ncv, ModelId::Nca, ModelId::Ct];

    pub fn dim(self) -> usize {
        match self {
            ModelId::Ncv => 6,
            ModelId::Nca => 9,
            ModelId::Ct => 7,
        }
    }

    /// Number of process-noise inputs (columns of `g`).
    pub fn noise_dim(self) -> usize {
        match self {
            ModelId::Ncv | ModelId::Nca => 3,
            ModelId::Ct => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelId::Ncv => "ncv",
            ModelId::Nca => "nca",
            ModelId::Ct => "ct",
        }
    }
}

impl std::str::FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ncv" => Ok(ModelId::Ncv),
            "nca" => Ok(ModelId::Nca),
            "ct" => Ok(ModelId::Ct),
            other => Err(Error::ConfigInvalid(format!("unknown model '{other}'"))),
        }
    }
}

/// Model-tagged MSC state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MscState {
    pub model: ModelId,
    pub values: DVector<f64>,
}

impl MscState {
    pub fn new(model: ModelId, values: impl Into<Vec<f64>>) -> Result<Self> {
        Self::from_vector(model, DVector::from_vec(values.into()))
    }

    pub fn from_vector(model: ModelId, values: DVector<f64>) -> Result<Self> {
        if values.len() != model.dim() {
            return Err(Error::DimensionMismatch {
                model,
                expected: model.dim(),
                got: values.len(),
            });
        }
        Ok(Self { model, values })
    }

    pub fn omega(&self) -> f64 {
        self.values[OMEGA]
    }
    pub fn theta_dot(&self) -> f64 {
        self.values[THETA_DOT]
    }
    pub fn tau(&self) -> f64 {
        self.values[TAU]
    }
    pub fn psi(&self) -> f64 {
        self.values[PSI]
    }
    pub fn theta(&self) -> f64 {
        self.values[THETA]
    }
    pub fn s(&self) -> f64 {
        self.values[S]
    }

    /// The six shared states.
    pub fn core(&self) -> DVector<f64> {
        self.values.rows(0, CORE_DIM).into_owned()
    }

    /// Checks `s > 0`, the elevation margin and finiteness.
    pub fn validate(&self) -> Result<()> {
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::StepLeftDomain("non-finite state"));
        }
        if !(self.s() > 0.0) {
            return Err(Error::NonpositiveInverseRange(self.s()));
        }
        check_elevation(self.theta())
    }
}

/// Process-noise intensities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessNoiseConfig {
    /// White acceleration noise per Cartesian axis (NCV, CT), m/s^2.
    pub sigma_accel: f64,
    /// White jerk noise per Cartesian axis (NCA), m/s^3.
    pub sigma_jerk: f64,
    /// Turn-rate noise of the CT model, rad/s^2.
    pub q_turn: f64,
    pub turn_noise: TurnNoiseSemantics,
}

/// How `q_turn` enters the CT spectral density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnNoiseSemantics {
    /// `q_turn` is a standard deviation; the density entry is `q_turn^2`.
    #[default]
    StdDev,
    /// `q_turn` is already the density entry.
    Psd,
}

impl Default for ProcessNoiseConfig {
    fn default() -> Self {
        Self {
            sigma_accel: 2.0,
            sigma_jerk: 15.0,
            q_turn: 0.05,
            turn_noise: TurnNoiseSemantics::StdDev,
        }
    }
}

impl ProcessNoiseConfig {
    pub fn turn_psd(&self) -> f64 {
        match self.turn_noise {
            TurnNoiseSemantics::StdDev => self.q_turn * self.q_turn,
            TurnNoiseSemantics::Psd => self.q_turn,
        }
    }
}

fn check_elevation(theta: f64) -> Result<()> {
    if !(FRAC_PI_2 - theta.abs() >= POLE_MARGIN) {
        Err(Error::ElevationSingularity(theta))
    } else {
        Ok(())
    }
}

fn check_dim(model: ModelId, x: &[f64]) -> Result<()> {
    if x.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            model,
            expected: model.dim(),
            got: x.len(),
        });
    }
    Ok(())
}

/// Shared NCV drift for the six core states.
fn core_drift(x: &[f64]) -> [f64; 6] {
    let (w, td, tau, th, s) = (x[OMEGA], x[THETA_DOT], x[TAU], x[THETA], x[S]);
    let tan = th.tan();
    [
        -2.0 * tau * w + td * w * tan,
        -w * w * tan - 2.0 * td * tau,
        td * td + w * w - tau * tau,
        w / th.cos(),
        td,
        -tau * s,
    ]
}

/// Drift `f(x)` for any model, on a raw state slice.
pub fn drift(model: ModelId, x: &[f64]) -> Result<DVector<f64>> {
    check_dim(model, x)?;
    check_elevation(x[THETA])?;
    let mut out = DVector::from_row_slice(&core_drift(x));
    match model {
        ModelId::Ncv => {}
        ModelId::Nca => {
            let (sp, cp) = x[PSI].sin_cos();
            let (st, ct) = x[THETA].sin_cos();
            let (ax, ay, az) = (x[SIGMA_X], x[SIGMA_X + 1], x[SIGMA_X + 2]);
            // scaled Cartesian acceleration rotated into the spherical frame
            out[OMEGA] += -sp * ax + cp * ay;
            out[THETA_DOT] += -st * cp * ax - st * sp * ay + ct * az;
            out[TAU] += ct * cp * ax + ct * sp * ay + st * az;
            let tau = x[TAU];
            out = out.push(-tau * ax).push(-tau * ay).push(-tau * az);
        }
        ModelId::Ct => {
            let (w, td, tau, th) = (x[OMEGA], x[THETA_DOT], x[TAU], x[THETA]);
            let wt = x[OMEGA_T];
            let (st, ct) = th.sin_cos();
            out[OMEGA] += -td * wt * st + tau * wt * ct;
            out[THETA_DOT] += w * wt * st;
            out[TAU] += -w * wt * ct;
            out = out.push(0.0);
        }
    }
    Ok(out)
}

fn expect_model(x: &MscState, model: ModelId) -> Result<()> {
    if x.model != model {
        return Err(Error::DimensionMismatch {
            model,
            expected: model.dim(),
            got: x.values.len(),
        });
    }
    Ok(())
}

pub fn f_ncv(x: &MscState) -> Result<DVector<f64>> {
    expect_model(x, ModelId::Ncv)?;
    drift(ModelId::Ncv, x.values.as_slice())
}

pub fn f_nca(x: &MscState) -> Result<DVector<f64>> {
    expect_model(x, ModelId::Nca)?;
    drift(ModelId::Nca, x.values.as_slice())
}

pub fn f_ct(x: &MscState) -> Result<DVector<f64>> {
    expect_model(x, ModelId::Ct)?;
    drift(ModelId::Ct, x.values.as_slice())
}

/// Drift of whichever model the state is tagged with.
pub fn f(x: &MscState) -> Result<DVector<f64>> {
    drift(x.model, x.values.as_slice())
}

/// Noise gain `g(x)`.
///
/// NCV and NCA place `s` on the diagonal of the rate rows (NCV) or the
/// scaled-acceleration rows (NCA). CT takes the noise vector
/// `[w_x^s, w_y^s, w_z^s, w_turn]`, so `d omega` reads `w_y^s`, `d theta_dot`
/// reads `w_z^s` and `d tau` reads `w_x^s`.
pub fn g_matrix(x: &MscState) -> DMatrix<f64> {
    let s = x.s();
    let model = x.model;
    let mut g = DMatrix::zeros(model.dim(), model.noise_dim());
    match model {
        ModelId::Ncv => {
            for i in 0..3 {
                g[(i, i)] = s;
            }
        }
        ModelId::Nca => {
            for i in 0..3 {
                g[(SIGMA_X + i, i)] = s;
            }
        }
        ModelId::Ct => {
            g[(OMEGA, 1)] = s;
            g[(THETA_DOT, 2)] = s;
            g[(TAU, 0)] = s;
            g[(OMEGA_T, 3)] = 1.0;
        }
    }
    g
}

/// One Euler step on a raw vector: `x + f(x) dt`, azimuth re-wrapped.
pub fn step_vector(model: ModelId, x: &DVector<f64>, dt: f64) -> Result<DVector<f64>> {
    let fx = drift(model, x.as_slice())?;
    let mut next = x + fx * dt;
    next[PSI] = wrap_angle(next[PSI]);
    if !(next[S] > 0.0) {
        return Err(Error::StepLeftDomain("inverse range not positive"));
    }
    if !(next[THETA].abs() < FRAC_PI_2) {
        return Err(Error::StepLeftDomain("elevation reached the pole"));
    }
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::StepLeftDomain("non-finite state"));
    }
    Ok(next)
}

pub fn discretize(x: &MscState, dt: f64) -> Result<MscState> {
    let values = step_vector(x.model, &x.values, dt)?;
    Ok(MscState {
        model: x.model,
        values,
    })
}

/// Continuous process-noise spectral density in the coordinates of `g`'s columns.
pub fn continuous_q(model: ModelId, cfg: &ProcessNoiseConfig, x: &MscState) -> DMatrix<f64> {
    match model {
        ModelId::Nca => DMatrix::from_diagonal_element(3, 3, cfg.sigma_jerk * cfg.sigma_jerk),
        ModelId::Ncv | ModelId::Ct => {
            let c = rotation_c_to_s(x.psi(), x.theta()).0;
            let qw = nalgebra::Matrix3::from_diagonal_element(cfg.sigma_accel * cfg.sigma_accel);
            let rotated = c * qw * c.transpose();
            let n = model.noise_dim();
            let mut q = DMatrix::zeros(n, n);
            q.view_mut((0, 0), (3, 3)).copy_from(&rotated);
            if model == ModelId::Ct {
                q[(3, 3)] = cfg.turn_psd();
            }
            q
        }
    }
}

/// Central-difference Jacobian of the drift with per-coordinate step
/// `rel_step * max(1, |x_i|)`.
pub fn jacobian_with_step(x: &MscState, rel_step: f64) -> Result<DMatrix<f64>> {
    let n = x.model.dim();
    let mut a = DMatrix::zeros(n, n);
    let mut probe = x.values.clone();
    for j in 0..n {
        let h = rel_step * x.values[j].abs().max(1.0);
        let orig = probe[j];
        probe[j] = orig + h;
        let fp = drift(x.model, probe.as_slice())?;
        probe[j] = orig - h;
        let fm = drift(x.model, probe.as_slice())?;
        probe[j] = orig;
        a.set_column(j, &((fp - fm) / (2.0 * h)));
    }
    Ok(a)
}

pub fn jacobian_a(x: &MscState) -> Result<DMatrix<f64>> {
    jacobian_with_step(x, 1e-6)
}

/// Mid-point rule for a given `A` and noise density `S = g Q g^T`.
pub fn midpoint_qd(a: &DMatrix<f64>, s: &DMatrix<f64>, dt: f64) -> DMatrix<f64> {
    let half = (a * (0.5 * dt)).exp();
    let qd = &half * (s * dt) * half.transpose();
    (&qd + qd.transpose()) * 0.5
}

/// Noise density mapped into the state space, `g Q g^T`.
pub fn state_noise_density(x: &MscState, cfg: &ProcessNoiseConfig) -> DMatrix<f64> {
    let g = g_matrix(x);
    let q = continuous_q(x.model, cfg, x);
    &g * q * g.transpose()
}

pub fn discrete_qd(x: &MscState, cfg: &ProcessNoiseConfig, dt: f64) -> Result<DMatrix<f64>> {
    let a = jacobian_a(x)?;
    Ok(midpoint_qd(&a, &state_noise_density(x, cfg), dt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn ncv(v: [f64; 6]) -> MscState {
        MscState::new(ModelId::Ncv, v.to_vec()).unwrap()
    }

    #[test]
    fn zero_rates_give_zero_drift() {
        let d = f_ncv(&ncv([0.0, 0.0, 0.0, 1.2, -0.3, 4e-4])).unwrap();
        assert!(d.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn radial_closing_rates() {
        let d = f_ncv(&ncv([0.0, 0.0, 0.1, 0.0, 0.0, 0.001])).unwrap();
        assert_relative_eq!(d[TAU], -0.01, epsilon = 1e-18);
        assert_relative_eq!(d[S], -1e-4, epsilon = 1e-18);
        for i in [OMEGA, THETA_DOT, PSI, THETA] {
            assert_eq!(d[i], 0.0);
        }
    }

    #[test]
    fn nca_reduces_to_ncv_without_acceleration() {
        let core = [0.02, -0.01, -0.08, 2.0, 0.4, 5e-4];
        let mut v = core.to_vec();
        v.extend([0.0; 3]);
        let a = f_nca(&MscState::new(ModelId::Nca, v).unwrap()).unwrap();
        let b = f_ncv(&ncv(core)).unwrap();
        assert_eq!(a.rows(0, 6), b.rows(0, 6));
    }

    #[test]
    fn nca_at_zero_angles() {
        let c = 0.004;
        let x = MscState::new(ModelId::Nca, vec![0.0, 0.0, 0.0, 0.0, 0.0, 1e-3, c, 0.0, 0.0])
            .unwrap();
        let d = f_nca(&x).unwrap();
        assert_eq!(d[TAU], c);
        assert_eq!(d[OMEGA], 0.0);
        assert_eq!(d[THETA_DOT], 0.0);
    }

    #[test]
    fn ct_reduces_to_ncv_without_turn() {
        let core = [0.02, -0.01, -0.08, 2.0, 0.4, 5e-4];
        let mut v = core.to_vec();
        v.push(0.0);
        let a = f_ct(&MscState::new(ModelId::Ct, v).unwrap()).unwrap();
        let b = f_ncv(&ncv(core)).unwrap();
        assert_eq!(a.rows(0, 6), b.rows(0, 6));
        assert_eq!(a[OMEGA_T], 0.0);
    }

    #[test]
    fn ct_turn_coupling_at_level_elevation() {
        let x = MscState::new(ModelId::Ct, vec![0.0, 0.0, 0.1, 0.0, 0.0, 1e-3, 0.3]).unwrap();
        let d = f_ct(&x).unwrap();
        assert_relative_eq!(d[OMEGA], 0.03, epsilon = 1e-16);
    }

    #[test]
    fn wrong_model_rejected() {
        let x = ncv([0.0, 0.0, 0.0, 0.0, 0.0, 1e-3]);
        assert!(f_ct(&x).is_err());
        assert!(MscState::new(ModelId::Ct, vec![0.0; 6]).is_err());
    }

    #[test]
    fn pole_rejected() {
        let x = ncv([0.0, 0.0, 0.0, 0.0, FRAC_PI_2, 1e-3]);
        assert!(matches!(f_ncv(&x), Err(Error::ElevationSingularity(_))));
    }

    #[test]
    fn gain_shapes() {
        let x = ncv([0.0, 0.0, 0.0, 0.0, 0.0, 0.001]);
        let g = g_matrix(&x);
        assert_eq!(g.shape(), (6, 3));
        for i in 0..6 {
            for j in 0..3 {
                let e = if i == j { 0.001 } else { 0.0 };
                assert_eq!(g[(i, j)], e);
            }
        }

        let x = MscState::new(ModelId::Nca, vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.001, 0.0, 0.0, 0.0])
            .unwrap();
        let g = g_matrix(&x);
        assert_eq!(g.shape(), (9, 3));
        assert_eq!(g.rows(0, 6).abs().max(), 0.0);
        assert_eq!(g.rows(6, 3).into_owned(), DMatrix::from_diagonal_element(3, 3, 0.001));

        let x = MscState::new(ModelId::Ct, vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.001, 0.0]).unwrap();
        let g = g_matrix(&x);
        assert_eq!(g.shape(), (7, 4));
        // one-based (3,1), (1,2), (2,3), (7,4)
        assert_eq!(g[(2, 0)], 0.001);
        assert_eq!(g[(0, 1)], 0.001);
        assert_eq!(g[(1, 2)], 0.001);
        assert_eq!(g[(6, 3)], 1.0);
        assert_eq!(g.iter().filter(|v| **v != 0.0).count(), 4);
    }

    #[test]
    fn euler_step() {
        let x = ncv([0.0, 0.0, 0.0, 0.5, 0.2, 1e-3]);
        assert_eq!(discretize(&x, 0.033).unwrap(), x);

        let x = ncv([0.0, 0.0, 0.1, 0.0, 0.0, 0.001]);
        let y = discretize(&x, 0.033).unwrap();
        assert_relative_eq!(y.s(), 9.967e-4, max_relative = 1e-12);
    }

    #[test]
    fn step_leaving_domain_is_an_error() {
        let x = ncv([0.0, 0.0, 50.0, 0.0, 0.0, 1e-3]);
        assert!(matches!(discretize(&x, 0.033), Err(Error::StepLeftDomain(_))));
        let x = ncv([0.0, 60.0, 0.0, 0.0, 1.5, 1e-3]);
        assert!(matches!(discretize(&x, 0.033), Err(Error::StepLeftDomain(_))));
    }

    #[test]
    fn azimuth_rewrapped_after_step() {
        let x = ncv([0.5, 0.0, 0.0, 3.14, 0.0, 1e-3]);
        let y = discretize(&x, 0.033).unwrap();
        assert!(y.psi() < 0.0 && y.psi() > -std::f64::consts::PI);
    }

    #[test]
    fn continuous_q_structure() {
        let cfg = ProcessNoiseConfig::default();
        let x = ncv([0.0, 0.0, 0.0, 0.0, 0.0, 1e-3]);
        assert_eq!(continuous_q(ModelId::Ncv, &cfg, &x), DMatrix::from_diagonal_element(3, 3, 4.0));

        let x = ncv([0.0, 0.0, 0.0, 1.1, -0.6, 1e-3]);
        let q = continuous_q(ModelId::Ncv, &cfg, &x);
        let eig = q.symmetric_eigenvalues();
        for e in eig.iter() {
            assert_relative_eq!(*e, 4.0, max_relative = 1e-12);
        }

        let q = continuous_q(ModelId::Ct, &cfg, &x);
        assert_eq!(q.shape(), (4, 4));
        assert_relative_eq!(q[(3, 3)], 0.0025, max_relative = 1e-15);
        for i in 0..3 {
            assert_eq!(q[(i, 3)], 0.0);
            assert_eq!(q[(3, i)], 0.0);
        }

        let psd = ProcessNoiseConfig {
            turn_noise: TurnNoiseSemantics::Psd,
            ..cfg
        };
        assert_eq!(continuous_q(ModelId::Ct, &psd, &x)[(3, 3)], 0.05);
        assert_eq!(continuous_q(ModelId::Nca, &cfg, &x), DMatrix::from_diagonal_element(3, 3, 225.0));
    }

    #[test]
    fn jacobian_known_entries() {
        let x = ncv([0.0, 0.0, 0.0, 0.3, 0.2, 1e-3]);
        let a = jacobian_a(&x).unwrap();
        assert!(a[(TAU, TAU)].abs() < 1e-12);
        for m in ModelId::ALL {
            let mut v = vec![0.01, -0.02, 0.07, 0.3, 0.2, 4e-4];
            v.resize(m.dim(), 1e-3);
            let x = MscState::new(m, v).unwrap();
            let a = jacobian_a(&x).unwrap();
            assert_relative_eq!(a[(S, S)], -0.07, max_relative = 1e-8);
            assert_relative_eq!(a[(S, TAU)], -4e-4, max_relative = 1e-8);
        }
    }

    #[test]
    fn qd_with_zero_jacobian_is_density_times_dt() {
        let x = ncv([0.0, 0.0, 0.0, 0.3, 0.2, 1e-3]);
        let s = state_noise_density(&x, &ProcessNoiseConfig::default());
        let qd = midpoint_qd(&DMatrix::zeros(6, 6), &s, 0.033);
        assert!((qd - &s * 0.033).abs().max() < 1e-20);
    }

    fn arb_state(model: ModelId) -> impl Strategy<Value = MscState> {
        (
            -0.5f64..0.5,
            -0.5f64..0.5,
            -0.5f64..0.5,
            -3.1f64..3.1,
            -1.3f64..1.3,
            1e-5f64..1e-2,
            proptest::collection::vec(-0.5f64..0.5, 3),
        )
            .prop_map(move |(w, td, tau, psi, th, s, extra)| {
                let mut v = vec![w, td, tau, psi, th, s];
                v.extend(extra.into_iter().take(model.dim() - 6));
                MscState::new(model, v).unwrap()
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn qd_symmetric_psd(x in prop_oneof![arb_state(ModelId::Ncv), arb_state(ModelId::Nca), arb_state(ModelId::Ct)]) {
            let qd = discrete_qd(&x, &ProcessNoiseConfig::default(), 0.033).unwrap();
            prop_assert_eq!(&qd, &qd.transpose());
            let tr = qd.trace();
            let min = qd.symmetric_eigenvalues().min();
            prop_assert!(min >= -1e-12 * tr, "min eig {} trace {}", min, tr);
        }

        #[test]
        fn s_only_drives_its_own_row(x in prop_oneof![arb_state(ModelId::Ncv), arb_state(ModelId::Nca), arb_state(ModelId::Ct)]) {
            let mut y = x.clone();
            y.values[S] *= 10.0;
            let a = f(&x).unwrap();
            let b = f(&y).unwrap();
            for i in 0..x.model.dim() {
                if i != S {
                    prop_assert_eq!(a[i], b[i]);
                }
            }
            prop_assert_eq!(a[S], -x.tau() * x.s());
        }
    }
}
