//! Seven-joint serial arm: Denavit-Hartenberg forward kinematics, the rigid
//! magnet mount, Cartesian velocity integration of the magnet pose and a
//! damped least-squares IK used to fill in joint angles for logging.

use nalgebra::{
    Isometry3, Matrix6, Rotation3, SMatrix, Translation3, UnitQuaternion, Vector3, Vector6,
};
use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::error::{Error, Result};

pub const N_JOINTS: usize = 7;

/// One link of a classic D-H table: `Rz(θ + offset) · Tz(d) · Tx(a) · Rx(α)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhRow {
    pub a: f64,
    pub alpha: f64,
    pub d: f64,
    #[serde(default)]
    pub theta_offset: f64,
}

impl DhRow {
    pub fn transform(&self, theta: f64) -> Isometry3<f64> {
        let th = theta + self.theta_offset;
        let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), th)
            * Rotation3::from_axis_angle(&Vector3::x_axis(), self.alpha);
        Isometry3::from_parts(
            Translation3::new(self.a * th.cos(), self.a * th.sin(), self.d),
            UnitQuaternion::from_rotation_matrix(&rot),
        )
    }
}

/// Position + unit-quaternion orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            position: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
        }
    }

    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Self { position, orientation }
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Self {
            position: iso.translation.vector,
            orientation: iso.rotation,
        }
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.position), self.orientation)
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::from_isometry(&(self.to_isometry() * other.to_isometry()))
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.orientation.coords.iter().all(|v| v.is_finite())
    }

    /// `[x, y, z, qw, qx, qy, qz]`
    pub fn to_array(&self) -> [f64; 7] {
        let q = self.orientation.quaternion();
        [
            self.position.x,
            self.position.y,
            self.position.z,
            q.w,
            q.i,
            q.j,
            q.k,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DhTable {
    pub rows: Vec<DhRow>,
}

impl Default for DhTable {
    /// Seven-link table with iiwa 7 R800 geometry.
    fn default() -> Self {
        use std::f64::consts::FRAC_PI_2;
        let row = |alpha: f64, d: f64| DhRow { a: 0.0, alpha, d, theta_offset: 0.0 };
        Self {
            rows: vec![
                row(-FRAC_PI_2, 0.34),
                row(FRAC_PI_2, 0.0),
                row(FRAC_PI_2, 0.4),
                row(-FRAC_PI_2, 0.0),
                row(-FRAC_PI_2, 0.4),
                row(FRAC_PI_2, 0.0),
                row(0.0, 0.126),
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    pub joints: [f64; N_JOINTS],
}

impl ArmState {
    pub fn zeros() -> Self {
        Self { joints: [0.0; N_JOINTS] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLimits {
    pub lower: [f64; N_JOINTS],
    pub upper: [f64; N_JOINTS],
}

impl Default for JointLimits {
    fn default() -> Self {
        let deg = [170.0, 120.0, 170.0, 120.0, 170.0, 120.0, 175.0_f64];
        let upper = deg.map(f64::to_radians);
        Self { lower: upper.map(|v| -v), upper }
    }
}

impl JointLimits {
    pub fn check(&self, state: &ArmState) -> Result<()> {
        for (i, q) in state.joints.iter().enumerate() {
            if !q.is_finite() || *q < self.lower[i] || *q > self.upper[i] {
                return Err(Error::validation(format!(
                    "joint {} = {q} outside [{}, {}]",
                    i + 1,
                    self.lower[i],
                    self.upper[i]
                )));
            }
        }
        Ok(())
    }

    fn clamp(&self, joints: &mut [f64; N_JOINTS]) {
        for (i, q) in joints.iter_mut().enumerate() {
            *q = q.clamp(self.lower[i], self.upper[i]);
        }
    }
}

/// Rigid transform from the TCP frame to the magnet center frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MountTransform {
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

impl Default for MountTransform {
    fn default() -> Self {
        Self {
            translation: Vector3::new(0.0, 0.0, 0.037),
            rotation: UnitQuaternion::identity(),
        }
    }
}

impl MountTransform {
    pub fn as_pose(&self) -> Pose {
        Pose::new(self.translation, self.rotation)
    }
}

/// Axis-aligned box the magnet center is clamped into.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceBox {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Default for WorkspaceBox {
    fn default() -> Self {
        Self {
            min: Vector3::new(-0.12, -0.10, 0.07),
            max: Vector3::new(0.12, 0.10, 0.30),
        }
    }
}

impl WorkspaceBox {
    pub fn clamp(&self, p: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(
            p.x.clamp(self.min.x, self.max.x),
            p.y.clamp(self.min.y, self.max.y),
            p.z.clamp(self.min.z, self.max.z),
        )
    }

    /// Map a point in the box to `[-1, 1]³`.
    pub fn normalize(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let c = (self.min + self.max) * 0.5;
        let h = (self.max - self.min) * 0.5;
        (p - c).component_div(&h)
    }
}

/// Everything needed to go from joint angles to the magnet dipole pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ArmConfig {
    #[serde(default)]
    pub dh: DhTable,
    #[serde(default)]
    pub limits: JointLimits,
    #[serde(default)]
    pub mount: MountTransform,
    #[serde(default)]
    pub workspace: WorkspaceBox,
    /// Pose of the arm base in the world (stomach) frame.
    #[serde(default = "default_base")]
    pub base: Pose,
}

fn default_base() -> Pose {
    // Flange straight up above the stomach at the home configuration.
    Pose::new(Vector3::new(0.0, 0.0, -1.0), UnitQuaternion::identity())
}

impl ArmConfig {
    pub fn new_default() -> Self {
        Self {
            base: default_base(),
            ..Default::default()
        }
    }
}

/// TCP pose in the arm base frame.
pub fn forward_kinematics(dh: &DhTable, limits: &JointLimits, state: &ArmState) -> Result<Pose> {
    if dh.rows.len() != N_JOINTS {
        return Err(Error::DimensionMismatch {
            what: "D-H table rows",
            expected: N_JOINTS,
            actual: dh.rows.len(),
        });
    }
    limits.check(state)?;
    Ok(Pose::from_isometry(&fk_unchecked(dh, &state.joints)))
}

fn fk_unchecked(dh: &DhTable, joints: &[f64; N_JOINTS]) -> Isometry3<f64> {
    dh.rows
        .iter()
        .zip(joints.iter())
        .fold(Isometry3::identity(), |acc, (row, q)| acc * row.transform(*q))
}

pub fn magnet_pose(tcp: &Pose, mount: &MountTransform) -> Pose {
    tcp.compose(&mount.as_pose())
}

/// Direction of the magnet's moment: its frame's −z axis.
pub fn magnet_moment_direction(magnet: &Pose) -> Vector3<f64> {
    magnet.orientation * -Vector3::z()
}

/// Advance the magnet pose by one velocity command held for `dt`.
///
/// Linear rates are mm/s; angular rates are world-frame rad/s applied through
/// the rotation exponential. The result is clamped into `workspace`.
pub fn integrate_velocity_command(
    pose: &Pose,
    action: &Action,
    dt: f64,
    workspace: &WorkspaceBox,
) -> Result<Pose> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Domain(format!("dt must be positive, got {dt}")));
    }
    if !action.is_finite() {
        return Err(Error::validation("non-finite action"));
    }
    let v = Vector3::new(action.dx, action.dy, action.dz) * 1e-3;
    let w = Vector3::new(action.droll, action.dpitch, action.dyaw);
    let position = workspace.clamp(&(pose.position + v * dt));
    let mut orientation = UnitQuaternion::from_scaled_axis(w * dt) * pose.orientation;
    orientation.renormalize();
    Ok(Pose { position, orientation })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkSolution {
    pub state: ArmState,
    /// Position residual of the TCP, m.
    pub residual: f64,
    /// Set when the residual exceeds 1 mm.
    pub flagged: bool,
}

/// Damped least-squares IK for a target TCP pose given in the base frame,
/// warm-started from `seed`. Best effort: always returns the final iterate.
pub fn solve_ik(
    dh: &DhTable,
    limits: &JointLimits,
    seed: &ArmState,
    target: &Pose,
    iterations: usize,
) -> IkSolution {
    const DAMPING: f64 = 0.05;
    const FD_STEP: f64 = 1e-6;
    let mut q = seed.joints;
    limits.clamp(&mut q);
    let target_iso = target.to_isometry();

    let pose_error = |q: &[f64; N_JOINTS]| -> Vector6<f64> {
        let cur = fk_unchecked(dh, q);
        let dp = target_iso.translation.vector - cur.translation.vector;
        let dr = (target_iso.rotation * cur.rotation.inverse()).scaled_axis();
        Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
    };

    for _ in 0..iterations {
        let err = pose_error(&q);
        if err.fixed_rows::<3>(0).norm() < 1e-6 && err.fixed_rows::<3>(3).norm() < 1e-6 {
            break;
        }
        let mut jac = SMatrix::<f64, 6, N_JOINTS>::zeros();
        for j in 0..N_JOINTS {
            let mut qp = q;
            qp[j] += FD_STEP;
            // the error shrinks as we move toward the target, hence the sign
            let col = (err - pose_error(&qp)) / FD_STEP;
            jac.set_column(j, &col);
        }
        let jjt: Matrix6<f64> = jac * jac.transpose() + Matrix6::identity() * DAMPING * DAMPING;
        let Some(inv) = jjt.try_inverse() else { break };
        let dq = jac.transpose() * (inv * err);
        for j in 0..N_JOINTS {
            q[j] += dq[j];
        }
        limits.clamp(&mut q);
    }
    let residual = pose_error(&q).fixed_rows::<3>(0).norm();
    IkSolution {
        state: ArmState { joints: q },
        residual,
        flagged: residual > 1e-3,
    }
}
