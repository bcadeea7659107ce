//! Piecewise closed-form ground truth.
//!
//! Turns rotate the horizontal velocity about +z at constant planar speed.
//! Body-axis acceleration and jerk act along the horizontal velocity
//! direction, so the vertical velocity is never touched. A jerk phase starts
//! from the body acceleration the previous phase ended with (zero after a
//! constant-velocity or turn phase).

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhaseKind {
    ConstVel,
    /// Turn rate in rad/s, positive counter-clockwise seen from +z.
    ConstTurn { turn_rate: f64 },
    /// Acceleration along the horizontal velocity, m/s^2.
    ConstBodyAccel { accel: f64 },
    /// Jerk along the horizontal velocity, m/s^3.
    ConstBodyJerk { jerk: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioPhase {
    pub kind: PhaseKind,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub initial_position: [f64; 3],
    pub initial_velocity: [f64; 3],
    pub phases: Vec<ScenarioPhase>,
    pub total_time: f64,
    pub sample_interval: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthSample {
    pub t: f64,
    pub pos: Vector3<f64>,
    pub vel: Vector3<f64>,
    pub acc: Vector3<f64>,
    pub turn_rate: f64,
    pub phase: usize,
}

impl Scenario {
    /// Six-phase maneuver: straight, +18 deg/s turn, straight, -22.5 deg/s
    /// turn, 0.3 m/s^2 body acceleration, 10 m/s^3 body jerk; 40 s at 33 ms.
    pub fn paper() -> Self {
        Self {
            initial_position: [-2000.0, 500.0, 700.0],
            initial_velocity: [200.0, 0.0, 50.0],
            phases: vec![
                ScenarioPhase { kind: PhaseKind::ConstVel, duration: 5.0 },
                ScenarioPhase {
                    kind: PhaseKind::ConstTurn { turn_rate: 18f64.to_radians() },
                    duration: 7.0,
                },
                ScenarioPhase { kind: PhaseKind::ConstVel, duration: 5.0 },
                ScenarioPhase {
                    kind: PhaseKind::ConstTurn { turn_rate: (-22.5f64).to_radians() },
                    duration: 8.0,
                },
                ScenarioPhase {
                    kind: PhaseKind::ConstBodyAccel { accel: 0.3 },
                    duration: 5.0,
                },
                ScenarioPhase {
                    kind: PhaseKind::ConstBodyJerk { jerk: 10.0 },
                    duration: 10.0,
                },
            ],
            total_time: 40.0,
            sample_interval: 0.033,
        }
    }

    pub fn frame_count(&self) -> usize {
        frame_count(self.total_time, self.sample_interval)
    }

    /// Start time of each phase, plus the end time as the last entry.
    pub fn phase_bounds(&self) -> Vec<f64> {
        let mut bounds = vec![0.0];
        let mut t = 0.0;
        for p in &self.phases {
            t += p.duration;
            bounds.push(t);
        }
        bounds
    }

    /// Phase index containing time `t`; the final instant belongs to the last phase.
    pub fn phase_at(&self, t: f64) -> usize {
        let bounds = self.phase_bounds();
        (0..self.phases.len())
            .find(|&i| t < bounds[i + 1])
            .unwrap_or(self.phases.len().saturating_sub(1))
    }

    pub fn check_phase_sum(&self) -> Result<()> {
        let sum: f64 = self.phases.iter().map(|p| p.duration).sum();
        if (sum - self.total_time).abs() > 1e-9 * self.total_time.max(1.0) {
            return Err(Error::PhaseSumMismatch {
                sum,
                total: self.total_time,
            });
        }
        Ok(())
    }
}

/// `ceil(total / ts)` with a guard against round-off just above an integer.
pub fn frame_count(total: f64, ts: f64) -> usize {
    (total / ts - 1e-9).ceil().max(0.0) as usize
}

/// Kinematic state at the start of a phase.
#[derive(Debug, Clone, Copy)]
struct PhaseStart {
    pos: Vector3<f64>,
    vel: Vector3<f64>,
    body_accel: f64,
}

fn heading(vel: &Vector3<f64>) -> Vector2<f64> {
    let h = Vector2::new(vel.x, vel.y);
    let n = h.norm();
    if n > 0.0 {
        h / n
    } else {
        Vector2::new(1.0, 0.0)
    }
}

fn rotate(v: Vector2<f64>, a: f64) -> Vector2<f64> {
    let (s, c) = a.sin_cos();
    Vector2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

/// Closed-form state `dt` seconds into a phase.
fn propagate(start: &PhaseStart, kind: PhaseKind, dt: f64) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>, f64, f64) {
    let p0 = start.pos;
    let v0 = start.vel;
    let vz = v0.z;
    let vh = Vector2::new(v0.x, v0.y);
    match kind {
        PhaseKind::ConstVel => (p0 + v0 * dt, v0, Vector3::zeros(), 0.0, 0.0),
        PhaseKind::ConstTurn { turn_rate: w } => {
            let a = w * dt;
            let v = rotate(vh, a);
            // integral of the rotating velocity; series form for tiny angles
            let (sin_over, one_minus_cos_over) = if a.abs() < 1e-6 {
                (dt * (1.0 - a * a / 6.0), dt * (a / 2.0 - a * a * a / 24.0))
            } else {
                (a.sin() / w, (1.0 - a.cos()) / w)
            };
            let disp = Vector2::new(
                sin_over * vh.x - one_minus_cos_over * vh.y,
                one_minus_cos_over * vh.x + sin_over * vh.y,
            );
            let pos = Vector3::new(p0.x + disp.x, p0.y + disp.y, p0.z + vz * dt);
            let acc = Vector3::new(-w * v.y, w * v.x, 0.0);
            (pos, Vector3::new(v.x, v.y, vz), acc, w, 0.0)
        }
        PhaseKind::ConstBodyAccel { accel } => along_heading(start, accel, 0.0, dt),
        PhaseKind::ConstBodyJerk { jerk } => along_heading(start, start.body_accel, jerk, dt),
    }
}

fn along_heading(
    start: &PhaseStart,
    a0: f64,
    jerk: f64,
    dt: f64,
) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>, f64, f64) {
    let u = heading(&start.vel);
    let sp0 = Vector2::new(start.vel.x, start.vel.y).norm();
    let dist = sp0 * dt + 0.5 * a0 * dt * dt + jerk * dt * dt * dt / 6.0;
    let sp = sp0 + a0 * dt + 0.5 * jerk * dt * dt;
    let a = a0 + jerk * dt;
    let vz = start.vel.z;
    let pos = Vector3::new(
        start.pos.x + u.x * dist,
        start.pos.y + u.y * dist,
        start.pos.z + vz * dt,
    );
    (
        pos,
        Vector3::new(u.x * sp, u.y * sp, vz),
        Vector3::new(u.x * a, u.y * a, 0.0),
        0.0,
        a,
    )
}

/// Samples the scenario on `t_k = k * Ts`, `k = 0..frame_count`.
pub fn truth_trajectory(scenario: &Scenario) -> Result<Vec<TruthSample>> {
    scenario.check_phase_sum()?;
    let bounds = scenario.phase_bounds();

    let mut starts = Vec::with_capacity(scenario.phases.len());
    let mut cur = PhaseStart {
        pos: Vector3::from(scenario.initial_position),
        vel: Vector3::from(scenario.initial_velocity),
        body_accel: 0.0,
    };
    for p in &scenario.phases {
        starts.push(cur);
        let (pos, vel, _, _, body) = propagate(&cur, p.kind, p.duration);
        cur = PhaseStart {
            pos,
            vel,
            body_accel: body,
        };
    }

    let n = scenario.frame_count();
    let samples = (0..n)
        .map(|k| {
            let t = k as f64 * scenario.sample_interval;
            let i = scenario.phase_at(t);
            let (pos, vel, acc, turn_rate, _) =
                propagate(&starts[i], scenario.phases[i].kind, t - bounds[i]);
            TruthSample {
                t,
                pos,
                vel,
                acc,
                turn_rate,
                phase: i,
            }
        })
        .collect();
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn paper_frame_count() {
        assert_eq!(Scenario::paper().frame_count(), 1213);
        assert_eq!(frame_count(1.0, 0.25), 4);
    }

    #[test]
    fn initial_and_phase_one_end() {
        let s = Scenario::paper();
        let tr = truth_trajectory(&s).unwrap();
        assert_eq!(tr[0].pos, Vector3::new(-2000.0, 500.0, 700.0));
        assert_eq!(tr[0].vel, Vector3::new(200.0, 0.0, 50.0));
        // closed form at t = 5
        let start = PhaseStart {
            pos: Vector3::new(-2000.0, 500.0, 700.0),
            vel: Vector3::new(200.0, 0.0, 50.0),
            body_accel: 0.0,
        };
        let (p, _, _, _, _) = propagate(&start, PhaseKind::ConstVel, 5.0);
        assert_relative_eq!(p, Vector3::new(-1000.0, 500.0, 950.0), epsilon = 1e-9);
    }

    #[test]
    fn turn_keeps_planar_speed_and_vertical_rate() {
        let s = Scenario::paper();
        for t in truth_trajectory(&s).unwrap() {
            assert_eq!(t.vel.z, 50.0);
            if t.phase == 1 || t.phase == 3 {
                assert_relative_eq!(t.vel.xy().norm(), 200.0, max_relative = 1e-12);
                assert!(t.turn_rate != 0.0);
            }
        }
    }

    #[test]
    fn phases_join_continuously() {
        let s = Scenario::paper();
        let bounds = s.phase_bounds();
        let mut cur = PhaseStart {
            pos: Vector3::from(s.initial_position),
            vel: Vector3::from(s.initial_velocity),
            body_accel: 0.0,
        };
        for (i, p) in s.phases.iter().enumerate() {
            let (pos, vel, _, _, body) = propagate(&cur, p.kind, p.duration);
            // just before the boundary vs the next phase at zero elapsed time
            let (pe, ve, _, _, _) = propagate(&cur, p.kind, p.duration - 1e-9);
            assert!((pos - pe).norm() < 1e-5);
            assert!((vel - ve).norm() < 1e-5);
            cur = PhaseStart { pos, vel, body_accel: body };
            if i + 1 < s.phases.len() {
                let (p0, v0, _, _, _) = propagate(&cur, s.phases[i + 1].kind, 0.0);
                assert!((p0 - pos).norm() < 1e-9);
                assert!((v0 - vel).norm() < 1e-9);
            }
            assert!(bounds[i + 1] > bounds[i]);
        }
    }

    #[test]
    fn jerk_phase_carries_acceleration() {
        let s = Scenario::paper();
        let tr = truth_trajectory(&s).unwrap();
        let first_jerk = tr.iter().find(|t| t.phase == 5).unwrap();
        let a = first_jerk.acc.norm();
        assert!(a >= 0.3 && a < 0.3 + 10.0 * 0.034);
        let last = tr.last().unwrap();
        assert_relative_eq!(last.acc.norm(), 0.3 + 10.0 * (last.t - 30.0), max_relative = 1e-9);
    }

    #[test]
    fn phase_sum_mismatch() {
        let mut s = Scenario::paper();
        s.phases[0].duration = 4.0;
        assert!(matches!(
            truth_trajectory(&s),
            Err(Error::PhaseSumMismatch { .. })
        ));
    }

    #[test]
    fn turn_matches_numeric_integration() {
        let start = PhaseStart {
            pos: Vector3::new(0.0, 0.0, 0.0),
            vel: Vector3::new(200.0, 0.0, 50.0),
            body_accel: 0.0,
        };
        let w = 0.3;
        let (p, _, _, _, _) = propagate(&start, PhaseKind::ConstTurn { turn_rate: w }, 2.0);
        // midpoint integration of the rotating velocity
        let n = 200_000;
        let h = 2.0 / n as f64;
        let mut acc = Vector2::zeros();
        for i in 0..n {
            let t = (i as f64 + 0.5) * h;
            acc += rotate(Vector2::new(200.0, 0.0), w * t) * h;
        }
        assert!((p.xy() - acc).norm() < 1e-6);
    }
}
