use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::arm::{ArmState, Pose};
use crate::env::{EnvConfig, Environment};
use crate::error::{Error, Result};
use crate::sim::{check_samples, CameraFrame, CameraKind, TaskOutcome, TaskSample, TaskSpec, WaterLine};

/// Allowed deviation from the nominal control period, s.
pub const TIMESTAMP_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoSource {
    Scripted,
    Teleop,
}

/// State at one control tick and the action chosen there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRecord {
    /// Sim time, s.
    pub timestamp: f64,
    pub joints: ArmState,
    pub magnet_pose: Pose,
    pub capsule_pose: Pose,
    pub action: Action,
    /// Indices of `[capsule_cam, exterior_cam]` in the demo's frame store.
    pub frames: [usize; 2],
    pub water: WaterLine,
    pub ik_flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub task: TaskSpec,
    pub instruction: String,
    pub seed: u64,
    pub source: DemoSource,
    pub records: Vec<TrajectoryRecord>,
    pub frames: Vec<CameraFrame>,
    pub outcome: TaskOutcome,
    /// Timed out or otherwise unfit for training; kept for debugging.
    pub flagged: bool,
}

impl Demonstration {
    pub fn duration(&self) -> f64 {
        match (self.records.first(), self.records.last()) {
            (Some(a), Some(b)) => b.timestamp - a.timestamp,
            _ => 0.0,
        }
    }

    pub fn actions(&self) -> Vec<Action> {
        self.records.iter().map(|r| r.action).collect()
    }

    pub fn record_frames(&self, i: usize) -> [&CameraFrame; 2] {
        let [a, b] = self.records[i].frames;
        [&self.frames[a], &self.frames[b]]
    }

    pub fn recompute_outcome(&self, cfg: &EnvConfig) -> Result<TaskOutcome> {
        let samples: Vec<TaskSample> = self
            .records
            .iter()
            .map(|r| TaskSample {
                time: r.timestamp,
                capsule_pose: r.capsule_pose,
                water: r.water.fraction,
            })
            .collect();
        check_samples(&samples, &self.task, &cfg.sim.stomach, &cfg.thresholds)
    }

    /// Schema, timing and outcome checks.
    pub fn validate(&self, cfg: &EnvConfig) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::validation("demonstration has no records"));
        }
        check_spacing(self.records.iter().map(|r| r.timestamp), cfg.tick_dt())?;
        for (i, r) in self.records.iter().enumerate() {
            if r.frames.iter().any(|f| *f >= self.frames.len()) {
                return Err(Error::validation(format!("record {i} references a missing frame")));
            }
            let finite = r.timestamp.is_finite()
                && r.joints.joints.iter().all(|q| q.is_finite())
                && r.magnet_pose.is_finite()
                && r.capsule_pose.is_finite()
                && r.action.is_finite();
            if !finite {
                return Err(Error::validation(format!("record {i} has non-finite values")));
            }
            if r.water.fraction != self.task.water {
                return Err(Error::validation(format!("record {i} water line differs from the task")));
            }
        }
        for f in &self.frames {
            if f.intensity.len() != f.width * f.height {
                return Err(Error::validation("frame size does not match its dimensions"));
            }
        }
        if self.recompute_outcome(cfg)? != self.outcome {
            return Err(Error::validation("stored outcome disagrees with the records"));
        }
        Ok(())
    }
}

fn check_spacing(times: impl Iterator<Item = f64>, dt: f64) -> Result<()> {
    let mut prev: Option<f64> = None;
    for t in times {
        if let Some(p) = prev {
            if t <= p || ((t - p) - dt).abs() > TIMESTAMP_TOLERANCE {
                return Err(Error::validation(format!(
                    "timestamp {t:.6} does not follow {p:.6} at {dt} s spacing"
                )));
            }
        }
        prev = Some(t);
    }
    Ok(())
}

/// Accumulates one rollout tick by tick. Call [`Recorder::push`] with the
/// action chosen at the current state, before stepping the environment.
#[derive(Debug, Clone)]
pub struct Recorder {
    source: DemoSource,
    records: Vec<TrajectoryRecord>,
    frames: Vec<CameraFrame>,
}

impl Recorder {
    pub fn new(source: DemoSource) -> Self {
        Self {
            source,
            records: Vec::new(),
            frames: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, env: &Environment, action: Action) -> Result<()> {
        let frames = [env.render(CameraKind::CapsuleCam), env.render(CameraKind::ExteriorCam)];
        self.push_with_frames(env, action, frames)
    }

    /// As [`Recorder::push`] with frames the caller already rendered.
    pub fn push_with_frames(&mut self, env: &Environment, action: Action, frames: [CameraFrame; 2]) -> Result<()> {
        let s = env.state();
        if let Some(last) = self.records.last() {
            check_spacing([last.timestamp, s.time].into_iter(), env.config().tick_dt())?;
        }
        let base = self.frames.len();
        self.frames.extend(frames);
        self.records.push(TrajectoryRecord {
            timestamp: s.time,
            joints: *env.joints(),
            magnet_pose: s.magnet_pose,
            capsule_pose: s.capsule.pose,
            action,
            frames: [base, base + 1],
            water: s.water,
            ik_flagged: env.ik_flagged(),
        });
        Ok(())
    }

    /// Closes the rollout with its outcome, recomputed from the records.
    pub fn finish(self, env: &Environment) -> Result<Demonstration> {
        if self.records.is_empty() {
            return Err(Error::validation("empty rollout"));
        }
        let mut demo = Demonstration {
            task: *env.task(),
            instruction: env.instruction().to_string(),
            seed: env.seed(),
            source: self.source,
            records: self.records,
            frames: self.frames,
            outcome: TaskOutcome {
                task: *env.task(),
                subtasks: Vec::new(),
                success: false,
            },
            flagged: false,
        };
        demo.outcome = demo.recompute_outcome(env.config())?;
        demo.flagged = !demo.outcome.success;
        Ok(demo)
    }
}

/// Re-runs the recorded actions from the demo's reset and returns the
/// capsule pose after each step, aligned with records `1..`.
pub fn replay(demo: &Demonstration, cfg: &EnvConfig) -> Result<Vec<Pose>> {
    let mut env = Environment::new(cfg.clone(), demo.task, &demo.instruction, demo.seed)?;
    let n = demo.records.len().saturating_sub(1);
    let mut out = Vec::with_capacity(n);
    for r in &demo.records[..n] {
        env.step(&r.action)?;
        out.push(env.state().capsule.pose);
    }
    Ok(out)
}

/// Largest capsule position error of a replay against the records, m.
pub fn replay_error(demo: &Demonstration, cfg: &EnvConfig) -> Result<f64> {
    let start = Environment::new(cfg.clone(), demo.task, &demo.instruction, demo.seed)?;
    let first = demo
        .records
        .first()
        .ok_or_else(|| Error::validation("demonstration has no records"))?;
    let mut err = (start.state().capsule.pose.position - first.capsule_pose.position).norm();
    for (pose, rec) in replay(demo, cfg)?.iter().zip(&demo.records[1..]) {
        err = err.max((pose.position - rec.capsule_pose.position).norm());
    }
    Ok(err)
}

/// `[x, y, z, qw, qx, qy, qz]` back to a pose without renormalizing.
pub fn pose_from_array(a: &[f64; 7]) -> Pose {
    Pose::new(
        Vector3::new(a[0], a[1], a[2]),
        UnitQuaternion::new_unchecked(Quaternion::new(a[3], a[4], a[5], a[6])),
    )
}
