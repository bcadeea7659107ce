//! TOML run configuration.
//!
//! Angles are given in degrees and converted here. The turn-rate noise
//! `q_turn_rad_s2` and the initializer rate sigmas stay in radians because
//! they are filter-internal tuning quantities. See `configs/paper_scenario.toml`
//! for the full schema.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::{ModelId, ProcessNoiseConfig, TurnNoiseSemantics};
use crate::error::{Error, Result};
use crate::imm::{ImmConfig, InitConfig, MarkovMatrix, SensorSigmas};
use crate::scenario::{PhaseKind, Scenario, ScenarioPhase};
use crate::scheduler::SchedulerConfig;
use crate::sim::{FilterConfig, MeasurementNoise};
use crate::ukf::UtParams;

pub const PAPER_SCENARIO_NAME: &str = "paper_scenario";
pub const PAPER_SCENARIO_TOML: &str = include_str!("../configs/paper_scenario.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioSection,
    pub noise: NoiseSection,
    pub filter: FilterSection,
    pub scheduler: SchedulerSection,
    pub monte_carlo: MonteCarloSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub total_time_s: f64,
    pub sample_interval_s: f64,
    pub initial_position_m: [f64; 3],
    pub initial_velocity_mps: [f64; 3],
    pub phases: Vec<PhaseSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhaseSection {
    ConstVel { duration_s: f64 },
    ConstTurn { duration_s: f64, turn_rate_deg_s: f64 },
    ConstBodyAccel { duration_s: f64, accel_mps2: f64 },
    ConstBodyJerk { duration_s: f64, jerk_mps3: f64 },
}

impl PhaseSection {
    fn duration(&self) -> f64 {
        match *self {
            Self::ConstVel { duration_s }
            | Self::ConstTurn { duration_s, .. }
            | Self::ConstBodyAccel { duration_s, .. }
            | Self::ConstBodyJerk { duration_s, .. } => duration_s,
        }
    }

    fn to_phase(&self) -> ScenarioPhase {
        let kind = match *self {
            Self::ConstVel { .. } => PhaseKind::ConstVel,
            Self::ConstTurn { turn_rate_deg_s, .. } => PhaseKind::ConstTurn {
                turn_rate: turn_rate_deg_s.to_radians(),
            },
            Self::ConstBodyAccel { accel_mps2, .. } => PhaseKind::ConstBodyAccel { accel: accel_mps2 },
            Self::ConstBodyJerk { jerk_mps3, .. } => PhaseKind::ConstBodyJerk { jerk: jerk_mps3 },
        };
        ScenarioPhase {
            kind,
            duration: self.duration(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub sigma_psi_deg: f64,
    pub sigma_theta_deg: f64,
    pub sigma_r_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    pub models: Vec<ModelId>,
    pub initial_mu: Vec<f64>,
    pub markov: Vec<Vec<f64>>,
    pub ut_alpha: f64,
    pub ut_kappa: f64,
    pub sigma_accel_mps2: f64,
    pub sigma_jerk_mps3: f64,
    pub q_turn_rad_s2: f64,
    #[serde(default)]
    pub turn_noise: TurnNoiseSemantics,
    pub extras_reset_mu: f64,
    pub extras_reset_frames: usize,
    pub init: InitSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSection {
    pub rate_sigma_rad_s: f64,
    pub tau_sigma_per_s: f64,
    pub accel_sigma_mps2: f64,
    pub turn_rate_sigma_rad_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerSection {
    #[serde(default = "yes")]
    pub enabled: bool,
    pub threshold_m: f64,
    pub warmup_frames: usize,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSection {
    pub n_runs: usize,
    pub base_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

/// One violated invariant, located by its dotted field path.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Everything a run needs, in internal units.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSetup {
    pub scenario: Scenario,
    pub noise: MeasurementNoise,
    pub filter: FilterConfig,
    pub scheduler: SchedulerConfig,
    pub n_runs: usize,
    pub base_seed: u64,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn paper() -> Self {
        Self::from_toml(PAPER_SCENARIO_TOML).expect("bundled config parses")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))
    }

    /// Reads a config file; the bare name `paper_scenario` selects the bundled
    /// config unless a file of that name exists.
    pub fn load(path: &Path) -> Result<Self> {
        if path == Path::new(PAPER_SCENARIO_NAME) && !path.exists() {
            return Ok(Self::paper());
        }
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Every violated invariant; empty when the config is usable.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut bad = |path: &str, message: String| {
            out.push(Violation {
                path: path.to_string(),
                message,
            })
        };
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;

        let sc = &self.scenario;
        if !positive(sc.total_time_s) {
            bad("scenario.total_time_s", format!("must be positive, got {}", sc.total_time_s));
        }
        if !positive(sc.sample_interval_s) {
            bad("scenario.sample_interval_s", format!("must be positive, got {}", sc.sample_interval_s));
        }
        if sc.initial_position_m.iter().all(|v| *v == 0.0) {
            bad("scenario.initial_position_m", "target must not start at the sensor".into());
        }
        if sc.initial_position_m.iter().chain(&sc.initial_velocity_mps).any(|v| !v.is_finite()) {
            bad("scenario", "initial state must be finite".into());
        }
        if sc.phases.is_empty() {
            bad("scenario.phases", "at least one phase is required".into());
        }
        for (i, p) in sc.phases.iter().enumerate() {
            if !positive(p.duration()) {
                bad(
                    &format!("scenario.phases[{i}].duration_s"),
                    format!("must be positive, got {}", p.duration()),
                );
            }
        }
        if !sc.phases.is_empty() {
            let s = self.scenario_unchecked();
            if let Err(e) = s.check_phase_sum() {
                bad("scenario.phases", e.to_string());
            }
        }

        let n = &self.noise;
        for (path, v) in [
            ("noise.sigma_psi_deg", n.sigma_psi_deg),
            ("noise.sigma_theta_deg", n.sigma_theta_deg),
            ("noise.sigma_r_m", n.sigma_r_m),
        ] {
            if !nonneg(v) {
                bad(path, format!("must be non-negative, got {v}"));
            }
        }

        let f = &self.filter;
        let k = f.models.len();
        if k == 0 {
            bad("filter.models", "at least one model is required".into());
        }
        for (i, m) in f.models.iter().enumerate() {
            if f.models[..i].contains(m) {
                bad("filter.models", format!("{} listed twice", m.name()));
            }
        }
        if f.initial_mu.len() != k {
            bad("filter.initial_mu", format!("expected {k} entries, got {}", f.initial_mu.len()));
        } else if f.initial_mu.iter().any(|m| !(0.0..=1.0).contains(m))
            || (f.initial_mu.iter().sum::<f64>() - 1.0).abs() > 1e-12
        {
            bad("filter.initial_mu", "must be a probability distribution".into());
        }
        if f.markov.len() != k {
            bad("filter.markov", format!("expected {k} rows, got {}", f.markov.len()));
        }
        for (i, row) in f.markov.iter().enumerate() {
            let path = format!("filter.markov[{i}]");
            if row.len() != k {
                bad(&path, format!("expected {k} entries, got {}", row.len()));
                continue;
            }
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                bad(&path, "entries must lie in [0, 1]".into());
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                bad(&path, format!("row {i} sums to {sum}, expected 1"));
            }
        }
        if !positive(f.ut_alpha) || f.ut_alpha > 1.0 {
            bad("filter.ut_alpha", format!("must lie in (0, 1], got {}", f.ut_alpha));
        }
        let ut = UtParams {
            alpha: f.ut_alpha,
            kappa: f.ut_kappa,
        };
        for m in &f.models {
            if let Err(e) = ut.weights(m.dim()) {
                bad("filter.ut_kappa", format!("{} model: {e}", m.name()));
            }
        }
        if ut.weights(1).is_err() {
            bad("filter.ut_kappa", "scalar range transform needs 1 + lambda > 0".into());
        }
        for (path, v) in [
            ("filter.sigma_accel_mps2", f.sigma_accel_mps2),
            ("filter.sigma_jerk_mps3", f.sigma_jerk_mps3),
            ("filter.q_turn_rad_s2", f.q_turn_rad_s2),
            ("filter.init.rate_sigma_rad_s", f.init.rate_sigma_rad_s),
            ("filter.init.tau_sigma_per_s", f.init.tau_sigma_per_s),
            ("filter.init.accel_sigma_mps2", f.init.accel_sigma_mps2),
            ("filter.init.turn_rate_sigma_rad_s", f.init.turn_rate_sigma_rad_s),
        ] {
            if !nonneg(v) {
                bad(path, format!("must be non-negative, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&f.extras_reset_mu) {
            bad("filter.extras_reset_mu", format!("must lie in [0, 1), got {}", f.extras_reset_mu));
        }
        if n.sigma_psi_deg == 0.0 || n.sigma_theta_deg == 0.0 || n.sigma_r_m == 0.0 {
            bad("noise", "filter sensor model needs nonzero sigmas".into());
        }

        let s = &self.scheduler;
        if !nonneg(s.threshold_m) {
            bad("scheduler.threshold_m", format!("must be non-negative, got {}", s.threshold_m));
        }
        if s.warmup_frames == 0 {
            bad("scheduler.warmup_frames", "must be at least 1 (initialization needs range)".into());
        }
        if self.monte_carlo.n_runs == 0 {
            bad("monte_carlo.n_runs", "must be at least 1".into());
        }
        out
    }

    fn scenario_unchecked(&self) -> Scenario {
        let sc = &self.scenario;
        Scenario {
            initial_position: sc.initial_position_m,
            initial_velocity: sc.initial_velocity_mps,
            phases: sc.phases.iter().map(PhaseSection::to_phase).collect(),
            total_time: sc.total_time_s,
            sample_interval: sc.sample_interval_s,
        }
    }

    /// Validates and converts to internal units.
    pub fn build(&self) -> Result<RunSetup> {
        let violations = self.validate();
        if !violations.is_empty() {
            let text: Vec<String> = violations.iter().map(ToString::to_string).collect();
            return Err(Error::ConfigInvalid(text.join("; ")));
        }
        let noise = MeasurementNoise {
            sigma_psi: self.noise.sigma_psi_deg.to_radians(),
            sigma_theta: self.noise.sigma_theta_deg.to_radians(),
            sigma_r: self.noise.sigma_r_m,
        };
        let f = &self.filter;
        let ut_params = UtParams {
            alpha: f.ut_alpha,
            kappa: f.ut_kappa,
        };
        let imm = ImmConfig {
            ut_params,
            noise: ProcessNoiseConfig {
                sigma_accel: f.sigma_accel_mps2,
                sigma_jerk: f.sigma_jerk_mps3,
                q_turn: f.q_turn_rad_s2,
                turn_noise: f.turn_noise,
            },
            sensor: SensorSigmas {
                sigma_psi: noise.sigma_psi,
                sigma_theta: noise.sigma_theta,
                sigma_r: noise.sigma_r,
            },
            extras_reset_mu: f.extras_reset_mu,
            extras_reset_frames: f.extras_reset_frames,
        };
        Ok(RunSetup {
            scenario: self.scenario_unchecked(),
            noise,
            filter: FilterConfig {
                models: f.models.clone(),
                initial_mu: f.initial_mu.clone(),
                markov: MarkovMatrix::from_rows(&f.markov)?,
                imm,
                init: InitConfig {
                    rate_sigma: f.init.rate_sigma_rad_s,
                    tau_sigma: f.init.tau_sigma_per_s,
                    accel_sigma: f.init.accel_sigma_mps2,
                    turn_rate_sigma: f.init.turn_rate_sigma_rad_s,
                },
            },
            scheduler: SchedulerConfig {
                threshold_sigma_r: self.scheduler.threshold_m,
                warmup_frames: self.scheduler.warmup_frames,
                ut_params,
                enabled: self.scheduler.enabled,
            },
            n_runs: self.monte_carlo.n_runs,
            base_seed: self.monte_carlo.base_seed,
            out_dir: self.output.dir.clone(),
        })
    }
}
