//! Interacting multiple model bank over the NCV, NCA and CT filters.
//!
//! The models have different state dimensions (6, 9, 7). Mixing and output
//! combination act on the shared core `[omega, theta_dot, tau, psi, theta, s]`.
//! When mixing into model `j`, every source estimate is first lifted into
//! `j`'s state space by borrowing `j`'s own private states and their
//! covariance block; cross terms between the core and the private states are
//! kept only for `j`'s own contribution. The result is a convex combination
//! of PSD matrices, so it stays PSD, and the private states pass through
//! unchanged.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::coords::wrap_angle;
use crate::dynamics::{ModelId, MscState, ProcessNoiseConfig, CORE_DIM, PSI, S, THETA};
use crate::error::{Error, Result};
use crate::measurement::{measurement_covariance, Measurement};
use crate::ukf::{self, GaussianEstimate, UtParams};

/// Likelihood floor applied before the probability update.
pub const LIKELIHOOD_FLOOR: f64 = 1e-30;

/// Row-stochastic model transition matrix, `p[(i, j)] = P(j at k | i at k-1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovMatrix(DMatrix<f64>);

impl MarkovMatrix {
    pub fn new(p: DMatrix<f64>) -> Result<Self> {
        if !p.is_square() || p.nrows() == 0 {
            return Err(Error::ConfigInvalid("markov matrix must be square".into()));
        }
        for (i, row) in p.row_iter().enumerate() {
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::ConfigInvalid(format!(
                    "markov row {i} has entry {v} outside [0, 1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::ConfigInvalid(format!("markov row {i} sums to {sum}, expected 1")));
            }
        }
        Ok(Self(p))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::ConfigInvalid("markov matrix must be square".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(DMatrix::from_row_slice(n, n, &flat))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    /// 0.99 on the diagonal, 0.005 elsewhere.
    pub fn three_model_default() -> Self {
        let mut p = DMatrix::from_element(3, 3, 0.005);
        p.fill_diagonal(0.990);
        Self(p)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }
}

/// Sensor standard deviations assumed by the filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorSigmas {
    pub sigma_psi: f64,
    pub sigma_theta: f64,
    pub sigma_r: f64,
}

impl SensorSigmas {
    pub fn covariance(&self, dim: usize) -> DMatrix<f64> {
        measurement_covariance(self.sigma_psi, self.sigma_theta, self.sigma_r, dim)
    }
}

/// Prior spread used when a track is started from a single measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitConfig {
    /// Std of `omega` and `theta_dot`, rad/s.
    pub rate_sigma: f64,
    /// Std of `tau`, 1/s.
    pub tau_sigma: f64,
    /// NCA scaled-acceleration std, as an acceleration in m/s^2 (multiplied by `s`).
    pub accel_sigma: f64,
    /// CT turn-rate std, rad/s.
    pub turn_rate_sigma: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            rate_sigma: 0.1,
            tau_sigma: 0.2,
            accel_sigma: 5.0,
            turn_rate_sigma: 0.5,
        }
    }
}

/// Everything the bank needs besides its state.
#[derive(Debug, Clone, PartialEq)]
pub struct ImmConfig {
    pub ut_params: UtParams,
    pub noise: ProcessNoiseConfig,
    pub sensor: SensorSigmas,
    /// Private states are re-initialized after the model probability stays
    /// below `extras_reset_mu` for `extras_reset_frames` consecutive steps.
    pub extras_reset_mu: f64,
    pub extras_reset_frames: usize,
}

impl ImmConfig {
    pub fn new(sensor: SensorSigmas) -> Self {
        Self {
            ut_params: UtParams::default(),
            noise: ProcessNoiseConfig::default(),
            sensor,
            extras_reset_mu: 1e-6,
            extras_reset_frames: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFilter {
    pub estimate: GaussianEstimate,
    /// Prior for the private states, restored on reset.
    pub extras_mean: DVector<f64>,
    pub extras_cov: DMatrix<f64>,
    pub low_mu_frames: usize,
}

impl ModelFilter {
    pub fn model(&self) -> ModelId {
        self.estimate.mean.model
    }

    fn reset_extras(&mut self) {
        let n = self.estimate.dim();
        let k = n - CORE_DIM;
        if k == 0 {
            return;
        }
        self.estimate
            .mean
            .values
            .rows_mut(CORE_DIM, k)
            .copy_from(&self.extras_mean);
        let cov = &mut self.estimate.cov;
        cov.view_mut((CORE_DIM, 0), (k, CORE_DIM)).fill(0.0);
        cov.view_mut((0, CORE_DIM), (CORE_DIM, k)).fill(0.0);
        cov.view_mut((CORE_DIM, CORE_DIM), (k, k)).copy_from(&self.extras_cov);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImmBank {
    pub filters: Vec<ModelFilter>,
    pub mu: DVector<f64>,
    pub pij: MarkovMatrix,
    pub config: ImmConfig,
}

/// Output of one bank cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub combined: GaussianEstimate,
    pub likelihoods: Vec<f64>,
}

fn core_diff(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut d = a.rows(0, CORE_DIM) - b.rows(0, CORE_DIM);
    d[PSI] = wrap_angle(d[PSI]);
    d
}

impl ImmBank {
    pub fn new(
        filters: Vec<ModelFilter>,
        mu: DVector<f64>,
        pij: MarkovMatrix,
        config: ImmConfig,
    ) -> Result<Self> {
        if filters.is_empty() || mu.len() != filters.len() || pij.len() != filters.len() {
            return Err(Error::ConfigInvalid(
                "model count, probabilities and markov matrix disagree".into(),
            ));
        }
        if mu.iter().any(|m| !(*m >= 0.0)) || (mu.sum() - 1.0).abs() > 1e-12 {
            return Err(Error::ConfigInvalid("initial model probabilities must be a distribution".into()));
        }
        Ok(Self {
            filters,
            mu,
            pij,
            config,
        })
    }

    /// Starts a bank from the first measurement, which must carry range.
    pub fn from_measurement(
        z: &Measurement,
        models: &[ModelId],
        mu: DVector<f64>,
        pij: MarkovMatrix,
        config: ImmConfig,
        init: &InitConfig,
    ) -> Result<Self> {
        let range = z.range.ok_or(Error::MissingInput {
            model: models.first().copied().unwrap_or(ModelId::Ncv),
            what: "range in the initializing measurement",
        })?;
        if !(range > 0.0) {
            return Err(Error::NonpositiveInverseRange(range));
        }
        let s = 1.0 / range;
        let sensor = config.sensor;
        let core_mean = [0.0, 0.0, 0.0, wrap_angle(z.psi), z.theta, s];
        let core_var = [
            init.rate_sigma.powi(2),
            init.rate_sigma.powi(2),
            init.tau_sigma.powi(2),
            sensor.sigma_psi.powi(2),
            sensor.sigma_theta.powi(2),
            sensor.sigma_r.powi(2) * s.powi(4),
        ];
        let filters = models
            .iter()
            .map(|&m| {
                let (extras_mean, extras_var) = match m {
                    ModelId::Ncv => (vec![], vec![]),
                    ModelId::Nca => (vec![0.0; 3], vec![(init.accel_sigma * s).powi(2); 3]),
                    ModelId::Ct => (vec![0.0], vec![init.turn_rate_sigma.powi(2)]),
                };
                let mut values = core_mean.to_vec();
                values.extend(&extras_mean);
                let mut var = core_var.to_vec();
                var.extend(&extras_var);
                let estimate = GaussianEstimate::new(
                    MscState::new(m, values)?,
                    DMatrix::from_diagonal(&DVector::from_vec(var)),
                )?;
                Ok(ModelFilter {
                    estimate,
                    extras_mean: DVector::from_vec(extras_mean),
                    extras_cov: DMatrix::from_diagonal(&DVector::from_vec(extras_var)),
                    low_mu_frames: 0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(filters, mu, pij, config)
    }

    pub fn models(&self) -> Vec<ModelId> {
        self.filters.iter().map(ModelFilter::model).collect()
    }

    pub fn filter(&self, model: ModelId) -> Option<&ModelFilter> {
        self.filters.iter().find(|f| f.model() == model)
    }

    pub fn probability(&self, model: ModelId) -> f64 {
        self.filters
            .iter()
            .position(|f| f.model() == model)
            .map_or(0.0, |i| self.mu[i])
    }

    /// Predicted mode probabilities `c_j = sum_i p_ij mu_i`.
    pub fn predicted_probabilities(&self) -> DVector<f64> {
        self.pij.matrix().transpose() * &self.mu
    }

    /// Mixed initial conditions for every model.
    pub fn mix(&self) -> Result<Vec<GaussianEstimate>> {
        let c_bar = self.predicted_probabilities();
        if c_bar.iter().all(|c| *c < 1e-30) {
            return Err(Error::DegenerateProbabilities);
        }
        let p = self.pij.matrix();
        let n = self.filters.len();
        let mut out = Vec::with_capacity(n);
        for (j, target) in self.filters.iter().enumerate() {
            let weights: Vec<f64> = if c_bar[j] > 0.0 {
                (0..n).map(|i| p[(i, j)] * self.mu[i] / c_bar[j]).collect()
            } else {
                (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect()
            };
            out.push(mix_into(target, &self.filters, &weights)?);
        }
        Ok(out)
    }

    /// One full cycle: mix, per-model predict and update, probability update,
    /// private-state bookkeeping and output combination.
    pub fn step(&mut self, z: &Measurement, dt: f64) -> Result<StepOutput> {
        let c_bar = self.predicted_probabilities();
        let mixed = self.mix()?;
        let r = self.config.sensor.covariance(z.dim());
        let ut = self.config.ut_params;
        let noise = self.config.noise;

        let mut likelihoods = Vec::with_capacity(self.filters.len());
        for (filter, start) in self.filters.iter_mut().zip(mixed) {
            let model = start.mean.model;
            let (est, lik) = match ukf::predict(&start, dt, &noise, &ut) {
                Ok(pred) => match ukf::update(&pred, z, &r, &ut) {
                    Ok((post, lik)) => (post, lik),
                    Err(e) => {
                        warn!("{} update failed: {e}", model.name());
                        (pred, LIKELIHOOD_FLOOR)
                    }
                },
                Err(e) => {
                    warn!("{} prediction failed: {e}", model.name());
                    (start, LIKELIHOOD_FLOOR)
                }
            };
            filter.estimate = est;
            likelihoods.push(if lik.is_finite() { lik.max(LIKELIHOOD_FLOOR) } else { LIKELIHOOD_FLOOR });
        }

        let mut mu: DVector<f64> = DVector::from_iterator(
            c_bar.len(),
            c_bar.iter().zip(&likelihoods).map(|(c, l)| c * l),
        );
        let total = mu.sum();
        if !(total > 0.0) {
            return Err(Error::DegenerateProbabilities);
        }
        mu /= total;
        self.mu = mu;

        for (i, filter) in self.filters.iter_mut().enumerate() {
            if filter.estimate.dim() == CORE_DIM {
                continue;
            }
            if self.mu[i] < self.config.extras_reset_mu {
                filter.low_mu_frames += 1;
                if filter.low_mu_frames >= self.config.extras_reset_frames {
                    filter.reset_extras();
                    filter.low_mu_frames = 0;
                }
            } else {
                filter.low_mu_frames = 0;
            }
        }

        Ok(StepOutput {
            combined: self.combined()?,
            likelihoods,
        })
    }

    /// Probability-weighted core estimate with the spread-of-means term.
    pub fn combined(&self) -> Result<GaussianEstimate> {
        let reference = self
            .mu
            .iter()
            .enumerate()
            .fold(0, |best, (i, m)| if *m > self.mu[best] { i } else { best });
        let ref_mean = &self.filters[reference].estimate.mean.values;

        let mut offset = DVector::zeros(CORE_DIM);
        for (f, m) in self.filters.iter().zip(self.mu.iter()) {
            offset += core_diff(&f.estimate.mean.values, ref_mean) * *m;
        }
        let mut mean = ref_mean.rows(0, CORE_DIM) + offset;
        mean[PSI] = wrap_angle(mean[PSI]);

        let mut cov = DMatrix::zeros(CORE_DIM, CORE_DIM);
        for (f, m) in self.filters.iter().zip(self.mu.iter()) {
            let d = core_diff(&f.estimate.mean.values, &mean);
            cov += (f.estimate.cov.view((0, 0), (CORE_DIM, CORE_DIM)) + &d * d.transpose()) * *m;
        }
        GaussianEstimate::new(MscState::from_vector(ModelId::Ncv, mean)?, cov)
    }
}

/// Mixes all sources into `target`'s state space with the given weights.
fn mix_into(target: &ModelFilter, sources: &[ModelFilter], weights: &[f64]) -> Result<GaussianEstimate> {
    let own = &target.estimate;
    let n = own.dim();
    let reference = &own.mean.values;

    let mut offset = DVector::zeros(CORE_DIM);
    for (src, w) in sources.iter().zip(weights) {
        if *w != 0.0 {
            offset += core_diff(&src.estimate.mean.values, reference) * *w;
        }
    }
    let mut mean = reference.clone();
    {
        let mut core = mean.rows_mut(0, CORE_DIM);
        core += offset;
    }
    mean[PSI] = wrap_angle(mean[PSI]);

    let mut cov = DMatrix::zeros(n, n);
    for (src, w) in sources.iter().zip(weights) {
        if *w == 0.0 {
            continue;
        }
        let lifted = if std::ptr::eq(src, target) {
            own.cov.clone()
        } else {
            let mut p = DMatrix::zeros(n, n);
            p.view_mut((0, 0), (CORE_DIM, CORE_DIM))
                .copy_from(&src.estimate.cov.view((0, 0), (CORE_DIM, CORE_DIM)));
            if n > CORE_DIM {
                let k = n - CORE_DIM;
                p.view_mut((CORE_DIM, CORE_DIM), (k, k))
                    .copy_from(&own.cov.view((CORE_DIM, CORE_DIM), (k, k)));
            }
            p
        };
        let mut d = DVector::zeros(n);
        d.rows_mut(0, CORE_DIM)
            .copy_from(&core_diff(&src.estimate.mean.values, &mean));
        cov += (lifted + &d * d.transpose()) * *w;
    }

    // keep the mixed state inside the domain
    if !(mean[S] > 0.0) || mean[THETA].abs() >= std::f64::consts::FRAC_PI_2 {
        ukf::clamp_to_domain(&mut mean);
    }
    GaussianEstimate::new(MscState::from_vector(own.mean.model, mean)?, cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sensor() -> SensorSigmas {
        SensorSigmas {
            sigma_psi: 0.02f64.to_radians(),
            sigma_theta: 0.02f64.to_radians(),
            sigma_r: 3.0,
        }
    }

    fn bank(pij: MarkovMatrix, mu: [f64; 3]) -> ImmBank {
        let z = Measurement::with_range(2.9, 0.33, 2177.0);
        let mut b = ImmBank::from_measurement(
            &z,
            &ModelId::ALL,
            DVector::from_row_slice(&mu),
            pij,
            ImmConfig::new(sensor()),
            &InitConfig::default(),
        )
        .unwrap();
        // make the three estimates distinct
        b.filters[0].estimate.mean.values[0] = 0.01;
        b.filters[1].estimate.mean.values[2] = -0.05;
        b.filters[2].estimate.mean.values[1] = 0.02;
        b.filters[2].estimate.mean.values[6] = 0.3;
        b
    }

    #[test]
    fn markov_validation_names_row() {
        let err = MarkovMatrix::from_rows(&[
            vec![0.99, 0.005, 0.005],
            vec![0.005, 0.98, 0.005],
            vec![0.005, 0.005, 0.99],
        ])
        .unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
        let p = MarkovMatrix::three_model_default();
        assert_eq!(p.matrix()[(0, 0)], 0.99);
        assert!(MarkovMatrix::new(p.matrix().clone()).is_ok());
    }

    #[test]
    fn identity_transitions_do_not_mix() {
        let b = bank(MarkovMatrix::identity(3), [0.2, 0.3, 0.5]);
        let mixed = b.mix().unwrap();
        for (m, f) in mixed.iter().zip(&b.filters) {
            assert_eq!(m, &f.estimate);
        }
    }

    #[test]
    fn mixing_weights_from_certain_ncv() {
        let b = bank(MarkovMatrix::three_model_default(), [1.0, 0.0, 0.0]);
        let c = b.predicted_probabilities();
        assert_relative_eq!(c[0], 0.990);
        assert_relative_eq!(c[1], 0.005);
        assert_relative_eq!(c[2], 0.005);
        // every model is fed entirely by NCV
        let mixed = b.mix().unwrap();
        for m in &mixed {
            assert_relative_eq!(m.mean.values[0], 0.01, epsilon = 1e-15);
        }
        // private states survive
        assert_eq!(mixed[2].mean.values[6], 0.3);
    }

    #[test]
    fn identical_estimates_mix_to_themselves() {
        let mut b = bank(MarkovMatrix::three_model_default(), [0.5, 0.5, 0.0]);
        b.filters[1].estimate = {
            let mut e = b.filters[0].estimate.clone();
            let mut v = e.mean.values.as_slice().to_vec();
            v.extend([0.0; 3]);
            let mut cov = DMatrix::zeros(9, 9);
            cov.view_mut((0, 0), (6, 6)).copy_from(&e.cov);
            cov.view_mut((6, 6), (3, 3)).fill_diagonal(1e-6);
            e.mean = MscState::new(ModelId::Nca, v).unwrap();
            e.cov = cov;
            e
        };
        let mixed = b.mix().unwrap();
        let core = b.filters[0].estimate.mean.values.clone();
        assert!((mixed[0].mean.values.clone() - core).abs().max() < 1e-15);
    }

    #[test]
    fn mixed_covariances_are_psd() {
        let b = bank(MarkovMatrix::three_model_default(), [0.3, 0.3, 0.4]);
        for m in b.mix().unwrap() {
            assert!(m.is_consistent());
        }
    }

    #[test]
    fn degenerate_probabilities() {
        let mut b = bank(MarkovMatrix::identity(3), [1.0, 0.0, 0.0]);
        b.mu = DVector::zeros(3);
        assert_eq!(b.mix(), Err(Error::DegenerateProbabilities));
    }

    #[test]
    fn combined_spread_term_is_psd() {
        let b = bank(MarkovMatrix::three_model_default(), [0.3, 0.3, 0.4]);
        let c = b.combined().unwrap();
        let mut avg = DMatrix::zeros(6, 6);
        for (f, m) in b.filters.iter().zip(b.mu.iter()) {
            avg += f.estimate.cov.view((0, 0), (6, 6)) * *m;
        }
        let diff = &c.cov - avg;
        assert!(diff.symmetric_eigenvalues().min() > -1e-15);
    }

    #[test]
    fn probabilities_stay_normalized() {
        let mut b = bank(MarkovMatrix::three_model_default(), [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
        for k in 0..20 {
            let z = Measurement::bearings(2.9 + 1e-4 * k as f64, 0.33);
            b.step(&z, 0.033).unwrap();
            assert!((b.mu.sum() - 1.0).abs() < 1e-12);
            assert!(b.mu.iter().all(|m| *m >= 0.0));
        }
    }

    #[test]
    fn zero_probability_cannot_regrow_under_identity() {
        let mut b = bank(MarkovMatrix::identity(3), [0.0, 1.0, 0.0]);
        for k in 0..10 {
            let z = Measurement::bearings(2.9 + 1e-3 * k as f64, 0.33);
            b.step(&z, 0.033).unwrap();
            assert_eq!(b.mu.as_slice(), &[0.0, 1.0, 0.0]);
        }
    }

    #[test]
    fn private_states_reset_after_long_low_probability() {
        let mut b = bank(MarkovMatrix::identity(3), [1.0, 0.0, 0.0]);
        b.filters[2].estimate.mean.values[6] = 0.4;
        for k in 0..30 {
            let z = Measurement::bearings(2.9, 0.33 + 1e-5 * k as f64);
            b.step(&z, 0.033).unwrap();
        }
        assert_eq!(b.filters[2].estimate.mean.values[6], 0.0);
        assert_eq!(b.filters[2].estimate.cov[(6, 6)], 0.25);
    }

    #[test]
    fn single_model_bank_matches_plain_filter() {
        let z0 = Measurement::with_range(0.5, 0.2, 1500.0);
        let cfg = ImmConfig::new(sensor());
        let mut b = ImmBank::from_measurement(
            &z0,
            &[ModelId::Ncv],
            DVector::from_element(1, 1.0),
            MarkovMatrix::identity(1),
            cfg.clone(),
            &InitConfig::default(),
        )
        .unwrap();
        let mut plain = b.filters[0].estimate.clone();
        for k in 1..40 {
            let z = Measurement::bearings(0.5 + 1e-4 * k as f64, 0.2 - 5e-5 * k as f64);
            let out = b.step(&z, 0.033).unwrap();
            let pred = ukf::predict(&plain, 0.033, &cfg.noise, &cfg.ut_params).unwrap();
            plain = ukf::update(&pred, &z, &cfg.sensor.covariance(2), &cfg.ut_params).unwrap().0;
            assert_eq!(out.combined.mean.values, plain.mean.values);
            assert_eq!(out.combined.cov, plain.cov);
        }
    }

    #[test]
    fn equal_likelihoods_follow_the_chain() {
        let b = bank(MarkovMatrix::three_model_default(), [0.6, 0.3, 0.1]);
        let c = b.predicted_probabilities();
        // with equal likelihoods the posterior equals c_bar
        let expected = [
            0.99 * 0.6 + 0.005 * 0.3 + 0.005 * 0.1,
            0.005 * 0.6 + 0.99 * 0.3 + 0.005 * 0.1,
            0.005 * 0.6 + 0.005 * 0.3 + 0.99 * 0.1,
        ];
        for i in 0..3 {
            assert_relative_eq!(c[i], expected[i], epsilon = 1e-15);
        }
    }
}
