//! Measurement synthesis, single-track runs and Monte-Carlo batches.
//!
//! Noise comes from ChaCha8 seeded with the run seed; Gaussian draws use the
//! ziggurat `StandardNormal` from `rand_distr`, three draws per frame (azimuth,
//! elevation, range) whether or not range is reported, so a run's stream does
//! not depend on the scheduling decisions.

use std::io::Write;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::coords::{cart_kinematics_to_msc, cart_to_spherical, wrap_angle, CartesianPoint};
use crate::dynamics::{ModelId, CORE_DIM, OMEGA_T, PSI, S};
use crate::error::{Error, Result};
use crate::imm::{ImmBank, ImmConfig, InitConfig, MarkovMatrix, SensorSigmas};
use crate::measurement::Measurement;
use crate::scenario::{truth_trajectory, PhaseKind, Scenario, TruthSample};
use crate::scheduler::{decide, range_sigma, ScheduleDecision, SchedulerConfig};
use crate::ukf::GaussianEstimate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementNoise {
    pub sigma_psi: f64,
    pub sigma_theta: f64,
    pub sigma_r: f64,
}

impl MeasurementNoise {
    pub fn paper() -> Self {
        Self {
            sigma_psi: 0.02f64.to_radians(),
            sigma_theta: 0.02f64.to_radians(),
            sigma_r: 3.0,
        }
    }
}

/// Everything the filter bank needs apart from the scheduler.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub models: Vec<ModelId>,
    pub initial_mu: Vec<f64>,
    pub markov: MarkovMatrix,
    pub imm: ImmConfig,
    pub init: InitConfig,
}

impl FilterConfig {
    /// NCV/NCA/CT bank with uniform starting probabilities and a filter
    /// sensor model matching `noise`.
    pub fn three_model(noise: &MeasurementNoise) -> Self {
        Self {
            models: ModelId::ALL.to_vec(),
            initial_mu: vec![1.0 / 3.0; 3],
            markov: MarkovMatrix::three_model_default(),
            imm: ImmConfig::new(SensorSigmas {
                sigma_psi: noise.sigma_psi,
                sigma_theta: noise.sigma_theta,
                sigma_r: noise.sigma_r,
            }),
            init: InitConfig::default(),
        }
    }
}

/// Exact bearings and range of the truth plus independent Gaussian noise.
pub fn synthesize_measurement<R: Rng + ?Sized>(
    truth: &TruthSample,
    noise: &MeasurementNoise,
    include_range: bool,
    rng: &mut R,
) -> Result<Measurement> {
    let sp = cart_to_spherical(CartesianPoint::from(truth.pos))?;
    let n_psi: f64 = rng.sample(StandardNormal);
    let n_theta: f64 = rng.sample(StandardNormal);
    let n_r: f64 = rng.sample(StandardNormal);
    let psi = wrap_angle(sp.psi + noise.sigma_psi * n_psi);
    let theta = sp.theta + noise.sigma_theta * n_theta;
    Ok(if include_range {
        Measurement::with_range(psi, theta, sp.r + noise.sigma_r * n_r)
    } else {
        Measurement::bearings(psi, theta)
    })
}

/// One logged frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame: usize,
    pub t: f64,
    pub phase: usize,
    pub truth: TruthSample,
    pub measurement: Measurement,
    pub decision: ScheduleDecision,
    /// Probabilities in NCV, NCA, CT order; zero for models not in the bank.
    pub mu: [f64; 3],
    pub estimate: [f64; CORE_DIM],
    pub error: [f64; CORE_DIM],
    pub bound3: [f64; CORE_DIM],
    pub omega_t_est: Option<f64>,
    pub nees: f64,
}

impl FrameRecord {
    pub fn range_true(&self) -> f64 {
        self.truth.pos.norm()
    }

    pub fn range_est(&self) -> f64 {
        1.0 / self.estimate[S]
    }

    pub fn range_error(&self) -> f64 {
        self.range_est() - self.range_true()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub seed: u64,
    pub frames: Vec<FrameRecord>,
}

pub const RUN_CSV_HEADER: &str = "frame,t_s,x_true,y_true,z_true,psi_meas,theta_meas,r_meas,range_measured,sigma_r_m,mu_ncv,mu_nca,mu_ct,omega_est,thetadot_est,tau_est,psi_est,theta_est,s_est,err_omega,err_thetadot,err_tau,err_psi,err_theta,err_s,b3_omega,b3_thetadot,b3_tau,b3_psi,b3_theta,b3_s,omega_T_est,nees";

pub const SUMMARY_CSV_HEADER: &str = "frame,t_s,rms_range_err_m,mean_nees,sched_rate";

impl RunLog {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{RUN_CSV_HEADER}")?;
        for f in &self.frames {
            let mut row = vec![
                f.frame.to_string(),
                f.t.to_string(),
                f.truth.pos.x.to_string(),
                f.truth.pos.y.to_string(),
                f.truth.pos.z.to_string(),
                f.measurement.psi.to_string(),
                f.measurement.theta.to_string(),
                f.measurement.range.map(|r| r.to_string()).unwrap_or_default(),
                u8::from(f.decision.measure_range).to_string(),
                f.decision.sigma_r.to_string(),
            ];
            row.extend(f.mu.iter().map(f64::to_string));
            row.extend(f.estimate.iter().map(f64::to_string));
            row.extend(f.error.iter().map(f64::to_string));
            row.extend(f.bound3.iter().map(f64::to_string));
            row.push(f.omega_t_est.map(|v| v.to_string()).unwrap_or_default());
            row.push(f.nees.to_string());
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv is ascii")
    }

    /// Fraction of frames in `phases` at or after `first_frame` that measured range.
    pub fn range_rate(&self, phases: &[usize], first_frame: usize) -> Option<f64> {
        let sel: Vec<_> = self
            .frames
            .iter()
            .filter(|f| f.frame >= first_frame && phases.contains(&f.phase))
            .collect();
        if sel.is_empty() {
            return None;
        }
        let hits = sel.iter().filter(|f| f.decision.measure_range).count();
        Some(hits as f64 / sel.len() as f64)
    }
}

fn mu_by_model(bank: &ImmBank) -> [f64; 3] {
    [
        bank.probability(ModelId::Ncv),
        bank.probability(ModelId::Nca),
        bank.probability(ModelId::Ct),
    ]
}

fn nees(err: &DVector<f64>, est: &GaussianEstimate) -> f64 {
    let p = est.cov.view((0, 0), (CORE_DIM, CORE_DIM)).into_owned();
    match p.cholesky() {
        Some(ch) => err.dot(&ch.solve(err)),
        None => f64::NAN,
    }
}

fn record(
    frame: usize,
    truth: &TruthSample,
    z: Measurement,
    decision: ScheduleDecision,
    bank: &ImmBank,
    est: &GaussianEstimate,
) -> Result<FrameRecord> {
    let truth_msc = cart_kinematics_to_msc(
        CartesianPoint::from(truth.pos),
        truth.vel,
        None,
        None,
        ModelId::Ncv,
    )?;
    let mean = est.mean.core();
    let mut err = &mean - truth_msc.core();
    err[PSI] = wrap_angle(err[PSI]);
    let mut estimate = [0.0; CORE_DIM];
    let mut error = [0.0; CORE_DIM];
    let mut bound3 = [0.0; CORE_DIM];
    for i in 0..CORE_DIM {
        estimate[i] = mean[i];
        error[i] = err[i];
        bound3[i] = 3.0 * est.cov[(i, i)].max(0.0).sqrt();
    }
    Ok(FrameRecord {
        frame,
        t: truth.t,
        phase: truth.phase,
        truth: *truth,
        measurement: z,
        decision,
        mu: mu_by_model(bank),
        estimate,
        error,
        bound3,
        omega_t_est: bank.filter(ModelId::Ct).map(|f| f.estimate.mean.values[OMEGA_T]),
        nees: nees(&err, est),
    })
}

/// Tracks one realisation of the scenario.
///
/// Frame 0 always measures range because the bank is started from it; its
/// logged `sigma_r` is that of the freshly initialised estimate. Every later
/// frame's decision is taken from the previous combined posterior.
pub fn run_track(
    scenario: &Scenario,
    noise: &MeasurementNoise,
    filter: &FilterConfig,
    scheduler: &SchedulerConfig,
    seed: u64,
) -> Result<RunLog> {
    let truth = truth_trajectory(scenario)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let at = |frame: usize| move |e: Error| Error::AtFrame { frame, source: Box::new(e) };

    let first = truth.first().ok_or_else(|| Error::ConfigInvalid("scenario has no frames".into()))?;
    let z0 = synthesize_measurement(first, noise, true, &mut rng).map_err(at(0))?;
    let mut bank = ImmBank::from_measurement(
        &z0,
        &filter.models,
        DVector::from_vec(filter.initial_mu.clone()),
        filter.markov.clone(),
        filter.imm.clone(),
        &filter.init,
    )
    .map_err(at(0))?;
    let mut est = bank.combined().map_err(at(0))?;
    let d0 = {
        let (r_hat, sigma_r) = range_sigma(est.mean.values[S], est.cov[(S, S)], &scheduler.ut_params)
            .unwrap_or((1.0 / est.mean.values[S], f64::INFINITY));
        ScheduleDecision {
            measure_range: true,
            sigma_r,
            r_hat,
        }
    };

    let mut frames = Vec::with_capacity(truth.len());
    frames.push(record(0, first, z0, d0, &bank, &est).map_err(at(0))?);

    for (k, tr) in truth.iter().enumerate().skip(1) {
        let decision = decide(scheduler, k, est.mean.values[S], est.cov[(S, S)]);
        let z = synthesize_measurement(tr, noise, decision.measure_range, &mut rng).map_err(at(k))?;
        est = bank.step(&z, scenario.sample_interval).map_err(at(k))?.combined;
        frames.push(record(k, tr, z, decision, &bank, &est).map_err(at(k))?);
    }
    Ok(RunLog { seed, frames })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryRow {
    pub frame: usize,
    pub t: f64,
    pub rms_range_err: f64,
    pub mean_nees: f64,
    pub sched_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloResult {
    pub runs: Vec<RunLog>,
    pub summary: Vec<SummaryRow>,
    /// Mean over runs of each phase's post-warm-up range-measurement rate.
    pub phase_rates: Vec<Option<f64>>,
}

/// Per-frame aggregation over runs; sums run in run order so the result does
/// not depend on which worker finished first.
pub fn summarize(runs: &[RunLog]) -> Vec<SummaryRow> {
    let Some(first) = runs.first() else {
        return Vec::new();
    };
    let n = runs.len() as f64;
    (0..first.frames.len())
        .map(|k| {
            let mut sq = 0.0;
            let mut nees = 0.0;
            let mut hits = 0usize;
            for run in runs {
                let f = &run.frames[k];
                sq += f.range_error().powi(2);
                nees += f.nees;
                hits += usize::from(f.decision.measure_range);
            }
            SummaryRow {
                frame: k,
                t: first.frames[k].t,
                rms_range_err: (sq / n).sqrt(),
                mean_nees: nees / n,
                sched_rate: hits as f64 / n,
            }
        })
        .collect()
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], mut w: W) -> Result<()> {
    writeln!(w, "{SUMMARY_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.frame, r.t, r.rms_range_err, r.mean_nees, r.sched_rate
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Runs `n_runs` independent tracks with seeds `base_seed + i` in parallel.
pub fn monte_carlo(
    scenario: &Scenario,
    noise: &MeasurementNoise,
    filter: &FilterConfig,
    scheduler: &SchedulerConfig,
    n_runs: usize,
    base_seed: u64,
) -> Result<MonteCarloResult> {
    if n_runs == 0 {
        return Err(Error::ConfigInvalid("monte_carlo.n_runs must be at least 1".into()));
    }
    let runs = (0..n_runs as u64)
        .into_par_iter()
        .map(|i| run_track(scenario, noise, filter, scheduler, base_seed.wrapping_add(i)))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&runs);
    let phase_rates = (0..scenario.phases.len())
        .map(|p| {
            let rates: Vec<f64> = runs
                .iter()
                .filter_map(|r| r.range_rate(&[p], scheduler.warmup_frames))
                .collect();
            (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64)
        })
        .collect();
    Ok(MonteCarloResult {
        runs,
        summary,
        phase_rates,
    })
}

/// Two-sided chi-square band for the run-averaged NEES of a `dof`-dimensional
/// state at the given confidence.
pub fn nees_band(dof: usize, n_runs: usize, confidence: f64) -> Result<(f64, f64)> {
    let k = (dof * n_runs) as f64;
    let chi = ChiSquared::new(k).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
    let tail = 0.5 * (1.0 - confidence);
    let n = n_runs as f64;
    Ok((chi.inverse_cdf(tail) / n, chi.inverse_cdf(1.0 - tail) / n))
}

impl MonteCarloResult {
    /// Fraction of scored frames whose mean NEES lies inside the 95% band.
    /// Frames before `skip_s` seconds and frames in constant-jerk phases are
    /// not scored.
    pub fn nees_pass_fraction(&self, scenario: &Scenario, skip_s: f64) -> Result<f64> {
        let (lo, hi) = nees_band(CORE_DIM, self.runs.len(), 0.95)?;
        let scored: Vec<_> = self
            .summary
            .iter()
            .filter(|r| {
                r.t >= skip_s
                    && !matches!(
                        scenario.phases[scenario.phase_at(r.t)].kind,
                        PhaseKind::ConstBodyJerk { .. }
                    )
            })
            .collect();
        if scored.is_empty() {
            return Ok(f64::NAN);
        }
        let pass = scored
            .iter()
            .filter(|r| r.mean_nees >= lo && r.mean_nees <= hi)
            .count();
        Ok(pass as f64 / scored.len() as f64)
    }

    pub fn final_rms_range_error(&self) -> f64 {
        self.summary.last().map_or(f64::NAN, |r| r.rms_range_err)
    }
}
