//! Success checkers for the four task families.
//!
//! Rotation sign convention: yaw is measured about +z from the capsule's
//! initial heading; "clockwise" is positive yaw, i.e. clockwise as seen from
//! below the stomach (the capsule camera's usual downward view).

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{SimState, StomachModel, WaterFraction};
use crate::arm::Pose;
use crate::error::{Error, Result};
use crate::sim::Landmark;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Navigation,
    Rotation,
    ViewAdjustment,
    ViewRotation,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [
        TaskKind::Navigation,
        TaskKind::Rotation,
        TaskKind::ViewAdjustment,
        TaskKind::ViewRotation,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            TaskKind::Navigation => "navigation",
            TaskKind::Rotation => "rotation",
            TaskKind::ViewAdjustment => "view_adjustment",
            TaskKind::ViewRotation => "view_rotation",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.id() == s)
            .ok_or_else(|| Error::validation(format!("unknown task id {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub water: WaterFraction,
}

impl TaskSpec {
    pub fn new(kind: TaskKind, water: WaterFraction) -> Self {
        Self { kind, water }
    }

    /// `"<task>"` or `"<task>@<water>"`; navigation and rotation default to one_half.
    pub fn parse(s: &str) -> Result<Self> {
        let (kind, water) = match s.split_once('@') {
            Some((k, w)) => (k.parse()?, WaterFraction::parse(w)?),
            None => (s.parse()?, WaterFraction::OneHalf),
        };
        Ok(Self { kind, water })
    }

    pub fn label(&self) -> String {
        format!("{}@{}", self.kind.id(), self.water.name())
    }

    pub fn subtask_names(&self) -> Vec<&'static str> {
        let nav = ["esophagus_entry", "fundus", "gastric_antrum"];
        let rot = ["rotate_90_clockwise", "back_into_place", "rotate_90_counterclockwise"];
        let view = ["view_1", "view_2", "view_3"];
        match self.kind {
            TaskKind::Navigation => nav.to_vec(),
            TaskKind::Rotation => rot.to_vec(),
            TaskKind::ViewAdjustment => view.to_vec(),
            TaskKind::ViewRotation => view.iter().chain(rot.iter()).copied().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskThresholds {
    pub rotation_target_deg: f64,
    pub rotation_tolerance_deg: f64,
    pub view_tolerance_deg: f64,
    /// Minimum continuous time inside a view tolerance, s.
    pub dwell_s: f64,
    /// Only history within this long after the first sample counts, s.
    pub time_budget_s: f64,
    /// Capsule pitch setpoints (degrees, negative = camera looking down).
    pub view_targets_one_third: [f64; 3],
    pub view_targets_one_half: [f64; 3],
    pub view_targets_full: [f64; 3],
}

impl Default for TaskThresholds {
    fn default() -> Self {
        Self {
            rotation_target_deg: 90.0,
            rotation_tolerance_deg: 10.0,
            view_tolerance_deg: 15.0,
            dwell_s: 1.0,
            time_budget_s: 60.0,
            view_targets_one_third: [-20.0, -45.0, -70.0],
            view_targets_one_half: [-25.0, -50.0, -75.0],
            view_targets_full: [-15.0, -40.0, -65.0],
        }
    }
}

impl TaskThresholds {
    pub fn view_targets(&self, water: WaterFraction) -> [f64; 3] {
        match water {
            WaterFraction::OneThird => self.view_targets_one_third,
            WaterFraction::OneHalf => self.view_targets_one_half,
            WaterFraction::Full => self.view_targets_full,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskResult {
    pub name: String,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task: TaskSpec,
    pub subtasks: Vec<SubtaskResult>,
    pub success: bool,
}

impl TaskOutcome {
    pub fn subtask(&self, name: &str) -> Option<bool> {
        self.subtasks.iter().find(|s| s.name == name).map(|s| s.done)
    }
}

/// The slice of state the checkers need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskSample {
    pub time: f64,
    pub capsule_pose: Pose,
    pub water: WaterFraction,
}

impl From<&SimState> for TaskSample {
    fn from(s: &SimState) -> Self {
        Self {
            time: s.time,
            capsule_pose: s.capsule.pose,
            water: s.water.fraction,
        }
    }
}

/// Elevation of the capsule's long axis, degrees.
pub fn capsule_pitch(pose: &Pose) -> f64 {
    let axis = pose.orientation * Vector3::x();
    axis.z.clamp(-1.0, 1.0).asin().to_degrees()
}

/// Heading of the long axis projected on the horizontal plane, degrees, or
/// `None` when the capsule stands nearly vertical.
pub fn capsule_heading(pose: &Pose) -> Option<f64> {
    let axis = pose.orientation * Vector3::x();
    let h = (axis.x * axis.x + axis.y * axis.y).sqrt();
    (h > 0.2).then(|| axis.y.atan2(axis.x).to_degrees())
}

pub fn check_task(
    history: &[SimState],
    task: &TaskSpec,
    stomach: &StomachModel,
    thresholds: &TaskThresholds,
) -> Result<TaskOutcome> {
    let samples: Vec<TaskSample> = history.iter().map(TaskSample::from).collect();
    check_samples(&samples, task, stomach, thresholds)
}

pub fn check_samples(
    samples: &[TaskSample],
    task: &TaskSpec,
    stomach: &StomachModel,
    th: &TaskThresholds,
) -> Result<TaskOutcome> {
    let first = samples
        .first()
        .ok_or_else(|| Error::validation("task history is empty"))?;
    let end = first.time + th.time_budget_s + 1e-9;
    let window: Vec<TaskSample> = samples.iter().copied().take_while(|s| s.time <= end).collect();

    let flags: Vec<bool> = match task.kind {
        TaskKind::Navigation => navigation(&window, stomach).to_vec(),
        TaskKind::Rotation => rotation(&window, th).to_vec(),
        TaskKind::ViewAdjustment => views(&window, task.water, th).to_vec(),
        TaskKind::ViewRotation => {
            let mut v = views(&window, task.water, th).to_vec();
            v.extend(rotation(&window, th));
            v
        }
    };
    let subtasks = task
        .subtask_names()
        .into_iter()
        .zip(flags.iter())
        .map(|(name, done)| SubtaskResult {
            name: name.to_string(),
            done: *done,
        })
        .collect();
    Ok(TaskOutcome {
        task: *task,
        subtasks,
        success: flags.iter().all(|f| *f),
    })
}

/// Landmarks must be entered in order; each flag requires the previous.
fn navigation(samples: &[TaskSample], stomach: &StomachModel) -> [bool; 3] {
    let mut stage = 0;
    for s in samples {
        if stage < 3
            && stomach
                .landmarks
                .get(Landmark::ALL[stage])
                .contains(&s.capsule_pose.position)
        {
            stage += 1;
        }
    }
    [stage >= 1, stage >= 2, stage >= 3]
}

/// Unwrapped yaw relative to the first well-defined heading.
pub(crate) fn yaw_trace(samples: &[TaskSample]) -> Vec<Option<f64>> {
    let mut origin: Option<f64> = None;
    let mut last: Option<f64> = None;
    samples
        .iter()
        .map(|s| {
            let h = capsule_heading(&s.capsule_pose)?;
            let o = *origin.get_or_insert(h);
            let raw = h - o;
            let unwrapped = match last {
                None => wrap180(raw),
                Some(prev) => prev + wrap180(raw - prev),
            };
            last = Some(unwrapped);
            Some(unwrapped)
        })
        .collect()
}

fn wrap180(a: f64) -> f64 {
    (a + 180.0).rem_euclid(360.0) - 180.0
}

/// +target, back to 0, then −target, each within tolerance and in order.
fn rotation(samples: &[TaskSample], th: &TaskThresholds) -> [bool; 3] {
    let goals = [th.rotation_target_deg, 0.0, -th.rotation_target_deg];
    let mut stage = 0;
    for yaw in yaw_trace(samples).into_iter().flatten() {
        if stage < 3 && (yaw - goals[stage]).abs() <= th.rotation_tolerance_deg {
            stage += 1;
        }
    }
    [stage >= 1, stage >= 2, stage >= 3]
}

/// Each pitch target must be held continuously for the dwell time at the
/// task's water line.
fn views(samples: &[TaskSample], water: WaterFraction, th: &TaskThresholds) -> [bool; 3] {
    th.view_targets(water).map(|target| {
        let mut start: Option<f64> = None;
        for s in samples {
            let ok = s.water == water
                && (capsule_pitch(&s.capsule_pose) - target).abs() <= th.view_tolerance_deg;
            if ok {
                let t0 = *start.get_or_insert(s.time);
                if s.time - t0 >= th.dwell_s - 1e-9 {
                    return true;
                }
            } else {
                start = None;
            }
        }
        false
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;

    fn sample(t: f64, pos: Vector3<f64>, q: UnitQuaternion<f64>) -> TaskSample {
        TaskSample {
            time: t,
            capsule_pose: Pose::new(pos, q),
            water: WaterFraction::OneHalf,
        }
    }

    fn yawed(deg: f64) -> UnitQuaternion<f64> {
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), deg.to_radians())
    }

    #[test]
    fn parse_task_ids() {
        assert_eq!(TaskSpec::parse("rotation").unwrap().kind, TaskKind::Rotation);
        let t = TaskSpec::parse("view_adjustment@full").unwrap();
        assert_eq!(t.water, WaterFraction::Full);
        assert!(matches!(TaskSpec::parse("swim"), Err(Error::Validation(_))));
        assert!(TaskSpec::parse("rotation@deep").is_err());
    }

    #[test]
    fn empty_history_is_an_error() {
        let t = TaskSpec::parse("navigation").unwrap();
        assert!(check_samples(&[], &t, &StomachModel::bean(), &TaskThresholds::default()).is_err());
    }

    #[test]
    fn stationary_capsule_fails_everything() {
        let stomach = StomachModel::bean();
        let th = TaskThresholds::default();
        let hist: Vec<_> = (0..100)
            .map(|i| sample(i as f64 * 0.1, Vector3::new(0.0, 0.0, -0.02), UnitQuaternion::identity()))
            .collect();
        for kind in TaskKind::ALL {
            let out = check_samples(&hist, &TaskSpec::new(kind, WaterFraction::OneHalf), &stomach, &th).unwrap();
            assert!(!out.success);
            assert!(out.subtasks.iter().all(|s| !s.done), "{kind}");
        }
    }

    #[test]
    fn teleport_through_landmarks_in_order() {
        let stomach = StomachModel::bean();
        let th = TaskThresholds::default();
        let lm = &stomach.landmarks;
        let pts = [
            Vector3::new(0.0, 0.0, -0.02),
            lm.esophagus_entry.center,
            lm.fundus.center,
            lm.gastric_antrum.center,
        ];
        let hist: Vec<_> = pts
            .iter()
            .enumerate()
            .map(|(i, p)| sample(i as f64, *p, UnitQuaternion::identity()))
            .collect();
        let out = check_samples(&hist, &TaskSpec::parse("navigation").unwrap(), &stomach, &th).unwrap();
        assert!(out.success);

        // wrong order: antrum first does not count
        let rev: Vec<_> = pts
            .iter()
            .rev()
            .enumerate()
            .map(|(i, p)| sample(i as f64, *p, UnitQuaternion::identity()))
            .collect();
        let out = check_samples(&rev, &TaskSpec::parse("navigation").unwrap(), &stomach, &th).unwrap();
        assert_eq!(out.subtask("esophagus_entry"), Some(true));
        assert_eq!(out.subtask("fundus"), Some(false));
        assert!(!out.success);
    }

    #[test]
    fn navigation_respects_time_budget() {
        let stomach = StomachModel::bean();
        let lm = &stomach.landmarks;
        let hist = vec![
            sample(0.0, Vector3::new(0.0, 0.0, -0.02), UnitQuaternion::identity()),
            sample(10.0, lm.esophagus_entry.center, UnitQuaternion::identity()),
            sample(20.0, lm.fundus.center, UnitQuaternion::identity()),
            sample(61.0, lm.gastric_antrum.center, UnitQuaternion::identity()),
        ];
        let out = check_samples(&hist, &TaskSpec::parse("navigation").unwrap(), &stomach, &TaskThresholds::default()).unwrap();
        assert_eq!(out.subtask("fundus"), Some(true));
        assert!(!out.success);
    }

    #[test]
    fn yaw_trace_plus_back_minus() {
        let stomach = StomachModel::bean();
        let th = TaskThresholds::default();
        let mut yaws: Vec<f64> = (0..=90).map(|d| d as f64).collect();
        yaws.extend((0..=90).rev().map(|d| d as f64));
        yaws.extend((0..=90).map(|d| -(d as f64)));
        let hist: Vec<_> = yaws
            .iter()
            .enumerate()
            .map(|(i, y)| sample(i as f64 * 0.1, Vector3::zeros(), yawed(*y)))
            .collect();
        let out = check_samples(&hist, &TaskSpec::parse("rotation").unwrap(), &stomach, &th).unwrap();
        assert!(out.success, "{out:?}");

        // only the first excursion
        let out = check_samples(&hist[..91], &TaskSpec::parse("rotation").unwrap(), &stomach, &th).unwrap();
        assert_eq!(out.subtask("rotate_90_clockwise"), Some(true));
        assert_eq!(out.subtask("back_into_place"), Some(false));
    }

    #[test]
    fn yaw_unwraps_past_180() {
        let hist: Vec<_> = (0..=40)
            .map(|i| sample(i as f64, Vector3::zeros(), yawed(170.0 + i as f64)))
            .collect();
        let trace = yaw_trace(&hist);
        assert!((trace.last().unwrap().unwrap() - 40.0).abs() < 1e-9);
    }

    #[test]
    fn view_requires_dwell() {
        let stomach = StomachModel::bean();
        let th = TaskThresholds::default();
        let targets = th.view_targets(WaterFraction::OneHalf);
        let pitched = |deg: f64| UnitQuaternion::from_axis_angle(&Vector3::y_axis(), -deg.to_radians());
        let mut hist = Vec::new();
        let mut t = 0.0;
        for target in targets {
            for _ in 0..11 {
                hist.push(sample(t, Vector3::zeros(), pitched(target + 5.0)));
                t += 0.1;
            }
        }
        let spec = TaskSpec::new(TaskKind::ViewAdjustment, WaterFraction::OneHalf);
        assert!(check_samples(&hist, &spec, &stomach, &th).unwrap().success);
        // 0.9 s dwell is not enough
        let short: Vec<_> = hist.iter().copied().filter(|s| ((s.time * 10.0).round() as i64 % 11) != 10).collect();
        let out = check_samples(&short, &spec, &stomach, &th).unwrap();
        assert!(!out.success);
        // wrong water line
        let spec_full = TaskSpec::new(TaskKind::ViewAdjustment, WaterFraction::Full);
        assert!(!check_samples(&hist, &spec_full, &stomach, &th).unwrap().success);
    }
}
