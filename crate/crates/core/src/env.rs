//! Closed-loop environment: task resets, 10 Hz control ticks over a finer
//! physics step, observations, and joint angles recovered by IK for logging.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action::{Action, ActionBounds};
use crate::arm::{self, ArmConfig, ArmState, Pose};
use crate::error::{Error, Result};
use crate::observation::{tokenize, Observation, PROPRIO_DIM};
use crate::sim::{
    check_samples, render, CameraKind, RenderConfig, SimConfig, SimState, Simulator, TaskKind,
    TaskOutcome, TaskSample, TaskSpec, TaskThresholds,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub sim: SimConfig,
    pub arm: ArmConfig,
    pub render: RenderConfig,
    pub bounds: ActionBounds,
    pub thresholds: TaskThresholds,
    /// Hz
    pub control_hz: f64,
    /// Physics sub-step, s.
    pub physics_dt: f64,
    /// Unrecorded settling time after a reset, s.
    pub settle_s: f64,
    /// Half-width of the uniform initial capsule heading for the orientation
    /// tasks, rad.
    pub heading_jitter: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            arm: ArmConfig::new_default(),
            render: RenderConfig::default(),
            bounds: ActionBounds::default(),
            thresholds: TaskThresholds::default(),
            control_hz: 10.0,
            physics_dt: 0.002,
            settle_s: 1.0,
            heading_jitter: 0.1,
        }
    }
}

impl EnvConfig {
    pub fn substeps(&self) -> usize {
        ((1.0 / self.control_hz) / self.physics_dt).round().max(1.0) as usize
    }

    pub fn tick_dt(&self) -> f64 {
        1.0 / self.control_hz
    }

    /// Ticks available inside the task time budget.
    pub fn max_ticks(&self) -> usize {
        (self.thresholds.time_budget_s * self.control_hz).round() as usize
    }
}

/// Magnet moment pointing along `dir`, with the frame otherwise minimally rotated
/// from identity.
pub fn orientation_for_moment(dir: &Vector3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::rotation_between(&-Vector3::z(), dir).unwrap_or_else(|| {
        UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI)
    })
}

#[derive(Debug, Clone)]
pub struct Environment {
    sim: Simulator,
    cfg: EnvConfig,
    task: TaskSpec,
    instruction: String,
    tokens: Vec<u32>,
    seed: u64,
    state: SimState,
    joints: ArmState,
    ik_flagged: bool,
    ticks: usize,
    history: Vec<TaskSample>,
}

impl Environment {
    pub fn new(cfg: EnvConfig, task: TaskSpec, instruction: &str, seed: u64) -> Result<Self> {
        let sim = Simulator::new(cfg.sim.clone())?;
        let (capsule, magnet) = initial_poses(&sim, &task, cfg.heading_jitter, seed);
        let mut state = sim.initial_state(capsule, magnet, task.water, seed)?;
        let settle = (cfg.settle_s / cfg.physics_dt).round() as usize;
        for _ in 0..settle {
            state = sim.step(&state, &magnet, cfg.physics_dt)?;
        }
        state.time = 0.0;
        let mut env = Self {
            sim,
            task,
            instruction: instruction.to_string(),
            tokens: tokenize(instruction),
            seed,
            state,
            joints: ArmState::zeros(),
            ik_flagged: false,
            ticks: 0,
            history: Vec::new(),
            cfg,
        };
        env.update_joints(40);
        env.history.push(TaskSample::from(&env.state));
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn instruction(&self) -> &str {
        &self.instruction
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn joints(&self) -> &ArmState {
        &self.joints
    }

    pub fn ik_flagged(&self) -> bool {
        self.ik_flagged
    }

    pub fn ticks(&self) -> usize {
        self.ticks
    }

    /// Sim time on the nominal 10 Hz grid.
    pub fn timestamp(&self) -> f64 {
        self.ticks as f64 / self.cfg.control_hz
    }

    pub fn history(&self) -> &[TaskSample] {
        &self.history
    }

    pub fn done(&self) -> bool {
        self.ticks >= self.cfg.max_ticks()
    }

    pub fn outcome(&self) -> Result<TaskOutcome> {
        check_samples(&self.history, &self.task, &self.cfg.sim.stomach, &self.cfg.thresholds)
    }

    /// Advance one control tick with `action` held constant.
    pub fn step(&mut self, action: &Action) -> Result<()> {
        if !action.is_finite() {
            return Err(Error::validation("non-finite action"));
        }
        let action = action.clamped(&self.cfg.bounds);
        let dt = self.cfg.physics_dt;
        let mut state = self.state;
        for _ in 0..self.cfg.substeps() {
            let pose = arm::integrate_velocity_command(
                &state.magnet_pose,
                &action,
                dt,
                &self.cfg.arm.workspace,
            )?;
            state = self.sim.step(&state, &pose, dt)?;
        }
        self.state = state;
        self.ticks += 1;
        self.update_joints(8);
        self.history.push(TaskSample::from(&self.state));
        Ok(())
    }

    fn update_joints(&mut self, iterations: usize) {
        let arm = &self.cfg.arm;
        let tcp_world = self
            .state
            .magnet_pose
            .compose(&Pose::from_isometry(&arm.mount.as_pose().to_isometry().inverse()));
        let tcp_base = Pose::from_isometry(&(arm.base.to_isometry().inverse() * tcp_world.to_isometry()));
        let seed = if self.ticks == 0 { home_seed() } else { self.joints };
        let sol = arm::solve_ik(&arm.dh, &arm.limits, &seed, &tcp_base, iterations);
        self.joints = sol.state;
        self.ik_flagged = sol.flagged;
    }

    pub fn render(&self, which: CameraKind) -> crate::sim::CameraFrame {
        render(&self.sim, &self.cfg.render, &self.state, which)
    }

    pub fn proprio(&self) -> Vec<f64> {
        proprio_vector(
            &self.cfg,
            &self.joints,
            &self.state.magnet_pose,
            &self.state.capsule.pose,
        )
    }

    pub fn observe(&self) -> Observation {
        Observation {
            frames: [
                self.render(CameraKind::CapsuleCam),
                self.render(CameraKind::ExteriorCam),
            ],
            proprio: self.proprio(),
            control_frequency: self.cfg.control_hz,
            instruction: self.tokens.clone(),
        }
    }
}

/// Joints over their largest limit, magnet position in the workspace box,
/// capsule position in the stomach bounds, both orientations as `w ≥ 0`
/// quaternions; clamped to `[-1, 1]`.
pub fn proprio_vector(cfg: &EnvConfig, joints: &ArmState, magnet: &Pose, capsule: &Pose) -> Vec<f64> {
    let mut p = Vec::with_capacity(PROPRIO_DIM);
    let lim = &cfg.arm.limits;
    for (i, q) in joints.joints.iter().enumerate() {
        p.push(q / lim.upper[i].abs().max(lim.lower[i].abs()));
    }
    p.extend(cfg.arm.workspace.normalize(&magnet.position).iter());
    p.extend(canonical_quat(&magnet.orientation));
    let (lo, hi) = cfg.sim.stomach.bounds();
    let center = (lo + hi) * 0.5;
    let half = (hi - lo) * 0.5;
    p.extend((capsule.position - center).component_div(&half).iter());
    p.extend(canonical_quat(&capsule.orientation));
    p.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
    p
}

fn canonical_quat(q: &UnitQuaternion<f64>) -> [f64; 4] {
    let c = q.quaternion();
    let s = if c.w < 0.0 { -1.0 } else { 1.0 };
    [s * c.w, s * c.i, s * c.j, s * c.k]
}

fn home_seed() -> ArmState {
    ArmState {
        joints: [0.0, 0.2, 0.0, -0.4, 0.0, 0.2, 0.0],
    }
}

/// Seeded start configuration for each task family.
fn initial_poses(sim: &Simulator, task: &TaskSpec, jitter: f64, seed: u64) -> (Pose, Pose) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let (zlo, _) = sim.z_range();
    match task.kind {
        TaskKind::Navigation => {
            let c = Vector3::new(u(-0.004, 0.008), u(-0.004, 0.004), zlo + 0.02);
            let m = Vector3::new(c.x + u(-0.01, 0.01), c.y + u(-0.01, 0.01), 0.22);
            let down = UnitQuaternion::rotation_between(&Vector3::x(), &-Vector3::z()).unwrap();
            (Pose::new(c, down), Pose::new(m, UnitQuaternion::identity()))
        }
        TaskKind::Rotation | TaskKind::ViewRotation | TaskKind::ViewAdjustment => {
            let c = Vector3::new(u(0.008, 0.02), u(-0.004, 0.004), zlo + 0.015);
            let m = Vector3::new(c.x + u(-0.005, 0.005), c.y + u(-0.005, 0.005), 0.15);
            let heading = if jitter > 0.0 { u(-jitter, jitter) } else { 0.0 };
            let horizontal = Vector3::new(heading.cos(), heading.sin(), 0.0);
            let moment = if task.kind == TaskKind::ViewAdjustment {
                // mostly downward, slightly tilted toward the heading
                (-Vector3::z() + horizontal * 0.2).normalize()
            } else {
                horizontal
            };
            // the capsule settles antiparallel to a horizontal moment below the magnet
            let cap_axis = if task.kind == TaskKind::ViewAdjustment {
                moment
            } else {
                -moment
            };
            let cap_q = UnitQuaternion::rotation_between(&Vector3::x(), &cap_axis)
                .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 2.0 * FRAC_PI_2));
            (Pose::new(c, cap_q), Pose::new(m, orientation_for_moment(&moment)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::WaterFraction;

    #[test]
    fn idle_env_is_deterministic() {
        let task = TaskSpec::new(TaskKind::Navigation, WaterFraction::OneHalf);
        let mut a = Environment::new(EnvConfig::default(), task, "go", 7).unwrap();
        let mut b = Environment::new(EnvConfig::default(), task, "go", 7).unwrap();
        for _ in 0..5 {
            a.step(&Action::IDLE).unwrap();
            b.step(&Action::IDLE).unwrap();
        }
        assert_eq!(a.state(), b.state());
        assert_eq!(a.observe(), b.observe());
        assert_eq!(a.proprio().len(), PROPRIO_DIM);
        assert!(a.proprio().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn idle_capsule_rests_inside() {
        let task = TaskSpec::new(TaskKind::Navigation, WaterFraction::OneHalf);
        let mut env = Environment::new(EnvConfig::default(), task, "go", 1).unwrap();
        let z0 = env.state().capsule.pose.position.z;
        for _ in 0..20 {
            env.step(&Action::IDLE).unwrap();
        }
        assert!((env.state().capsule.pose.position.z - z0).abs() < 1e-3);
        assert!(env.simulator().sdf(env.state(), &env.state().capsule.pose.position) < 0.0);
        assert!(!env.outcome().unwrap().success);
    }
}
