//! Hand-coded magnet controller used to generate demonstrations.
//!
//! Position is servoed toward a target above the capsule; orientation is
//! servoed so that the dipole field at the capsule points along a desired
//! capsule axis.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::arm::magnet_moment_direction;
use crate::env::Environment;
use crate::sim::{capsule_heading, capsule_pitch, Landmark, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpertConfig {
    /// 1/s
    pub position_gain: f64,
    /// 1/s
    pub orientation_gain: f64,
    /// Std of additive action noise, mm/s.
    pub noise_linear: f64,
    /// Std of additive action noise, rad/s.
    pub noise_angular: f64,
    /// Fraction of the capsule's remaining offset added as magnet lead.
    pub lead: f64,
    /// m
    pub max_lead: f64,
    /// Magnet height above the waypoint, m.
    pub clearance: f64,
    /// Magnet height during orientation tasks, m.
    pub hover_height: f64,
    /// Heading/pitch band that counts as settled, degrees.
    pub settle_deg: f64,
    /// s
    pub hold_s: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            position_gain: 1.5,
            orientation_gain: 2.0,
            noise_linear: 1.0,
            noise_angular: 0.02,
            lead: 1.5,
            max_lead: 0.03,
            clearance: 0.085,
            hover_height: 0.15,
            settle_deg: 5.0,
            hold_s: 1.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Goal {
    Reach(Landmark),
    /// Yaw relative to the first observed heading, degrees.
    Yaw(f64),
    /// Absolute pitch, degrees.
    Pitch(f64),
    Hold,
}

#[derive(Debug, Clone)]
pub struct ScriptedExpert {
    cfg: ExpertConfig,
    goals: Vec<Goal>,
    index: usize,
    held: f64,
    rng: ChaCha8Rng,
    yaw_origin: Option<f64>,
    yaw: Option<f64>,
    /// Horizontal heading used for view targets, rad.
    view_heading: Option<f64>,
    pitch_bias: f64,
}

impl ScriptedExpert {
    pub fn new(env: &Environment, cfg: ExpertConfig, seed: u64) -> Self {
        let task = env.task();
        let th = &env.config().thresholds;
        let rot = th.rotation_target_deg;
        let yaw = [Goal::Yaw(rot), Goal::Yaw(0.0), Goal::Yaw(-rot)];
        let views = th.view_targets(task.water).map(Goal::Pitch);
        let mut goals: Vec<Goal> = match task.kind {
            TaskKind::Navigation => Landmark::ALL.iter().map(|l| Goal::Reach(*l)).collect(),
            TaskKind::Rotation => yaw.to_vec(),
            TaskKind::ViewAdjustment => views.to_vec(),
            TaskKind::ViewRotation => yaw.iter().chain(views.iter()).copied().collect(),
        };
        goals.push(Goal::Hold);
        let mut e = Self {
            cfg,
            goals,
            index: 0,
            held: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x6578_7065_7274),
            yaw_origin: None,
            yaw: None,
            view_heading: None,
            pitch_bias: 0.0,
        };
        e.track_yaw(env);
        e
    }

    /// All scripted goals reached.
    pub fn finished(&self) -> bool {
        matches!(self.goals[self.index], Goal::Hold)
    }

    fn track_yaw(&mut self, env: &Environment) {
        let Some(h) = capsule_heading(&env.state().capsule.pose) else { return };
        let o = *self.yaw_origin.get_or_insert(h);
        let raw = h - o;
        let wrap = |a: f64| (a + 180.0).rem_euclid(360.0) - 180.0;
        self.yaw = Some(match self.yaw {
            None => wrap(raw),
            Some(prev) => prev + wrap(raw - prev),
        });
    }

    fn advance(&mut self, settled: bool, dt: f64) {
        if settled {
            self.held += dt;
        } else {
            self.held = 0.0;
        }
        if self.held >= self.cfg.hold_s {
            self.index += 1;
            self.held = 0.0;
            self.pitch_bias = 0.0;
        }
    }

    /// Action for the current tick. Call once per tick, before `env.step`.
    pub fn act(&mut self, env: &Environment) -> Action {
        let dt = env.config().tick_dt();
        self.track_yaw(env);
        let st = env.state();
        let cap = st.capsule.pose.position;
        let magnet = st.magnet_pose.position;
        let stomach = &env.config().sim.stomach;

        let (target_pos, desired_axis) = match self.goals[self.index] {
            Goal::Reach(lm) => {
                if stomach.landmarks.get(lm).contains(&cap) {
                    self.index += 1;
                }
                let lm = match self.goals[self.index] {
                    Goal::Reach(next) => next,
                    _ => lm,
                };
                let w = stomach.landmarks.get(lm).center;
                let mut lead = (w - cap) * self.cfg.lead;
                lead.z = 0.0;
                let n = lead.norm();
                if n > self.cfg.max_lead {
                    lead *= self.cfg.max_lead / n;
                }
                let p = Vector3::new(w.x + lead.x, w.y + lead.y, w.z + self.cfg.clearance);
                (p, None)
            }
            Goal::Yaw(g) => {
                let origin = self.yaw_origin.unwrap_or(0.0);
                let settled = self.yaw.is_some_and(|y| (y - g).abs() < self.cfg.settle_deg);
                self.advance(settled, dt);
                let g = match self.goals[self.index] {
                    Goal::Yaw(next) => next,
                    _ => g,
                };
                let h = (origin + g).to_radians();
                self.view_heading = Some(h);
                (hover(cap, self.cfg.hover_height), Some(Vector3::new(h.cos(), h.sin(), 0.0)))
            }
            Goal::Pitch(p) => {
                let pitch = capsule_pitch(&st.capsule.pose);
                let settled = (pitch - p).abs() < self.cfg.settle_deg;
                self.pitch_bias = (self.pitch_bias + 0.5 * (p - pitch) * dt).clamp(-20.0, 20.0);
                self.advance(settled, dt);
                let p = match self.goals[self.index] {
                    Goal::Pitch(next) => next,
                    _ => p,
                };
                let h = *self.view_heading.get_or_insert_with(|| {
                    let a = st.capsule.axis();
                    if a.x.hypot(a.y) > 1e-6 {
                        a.y.atan2(a.x)
                    } else {
                        0.0
                    }
                });
                let e = (p + self.pitch_bias).clamp(-89.0, 0.0).to_radians();
                let d = Vector3::new(e.cos() * h.cos(), e.cos() * h.sin(), e.sin());
                (hover(cap, self.cfg.hover_height), Some(d))
            }
            Goal::Hold => (magnet, None),
        };

        let v = (target_pos - magnet) * (self.cfg.position_gain * 1e3);
        let m = magnet_moment_direction(&st.magnet_pose);
        let m_star = match desired_axis {
            Some(d) => moment_for_field(&(cap - magnet), &d),
            None => -Vector3::z(),
        };
        let w = m.cross(&m_star) * self.cfg.orientation_gain
            + if m.dot(&m_star) < 0.0 {
                // antiparallel: the cross product vanishes, so kick about any perpendicular
                m.cross(&Vector3::x()).try_normalize(1e-9).unwrap_or(Vector3::y()) * 0.3
            } else {
                Vector3::zeros()
            };

        let nl = Normal::new(0.0, self.cfg.noise_linear.max(0.0)).expect("finite std");
        let na = Normal::new(0.0, self.cfg.noise_angular.max(0.0)).expect("finite std");
        let a = Action {
            dx: v.x + nl.sample(&mut self.rng),
            dy: v.y + nl.sample(&mut self.rng),
            dz: v.z + nl.sample(&mut self.rng),
            droll: w.x + na.sample(&mut self.rng),
            dpitch: w.y + na.sample(&mut self.rng),
            dyaw: w.z + na.sample(&mut self.rng),
            gripper: 1.0,
        };
        a.clamped(&env.config().bounds)
    }
}

fn hover(cap: Vector3<f64>, height: f64) -> Vector3<f64> {
    Vector3::new(cap.x, cap.y, height)
}

/// Unit moment whose dipole field at offset `r` (from magnet to target)
/// points along `d`: inverts `B ∝ 3r̂(r̂·m) − m`.
pub fn moment_for_field(r: &Vector3<f64>, d: &Vector3<f64>) -> Vector3<f64> {
    let rh = r.normalize();
    let m = rh * (1.5 * rh.dot(d)) - d;
    m.try_normalize(1e-12).unwrap_or(-Vector3::z())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::magnetics::{Dipole, PhysicalConstants};

    #[test]
    fn moment_inverse_reproduces_field_direction() {
        let r = Vector3::new(0.01, -0.02, -0.15);
        for d in [Vector3::x(), Vector3::new(0.3, -0.2, -0.9).normalize(), -Vector3::z()] {
            let m = moment_for_field(&r, &d);
            let src = Dipole::new(m * 100.0, Vector3::zeros()).unwrap();
            let b = PhysicalConstants::default().dipole_field(&src, &r).unwrap();
            assert!((b.normalize() - d).norm() < 1e-9);
        }
    }
}
