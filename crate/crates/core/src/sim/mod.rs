//! Capsule-in-stomach environment: rigid-body dynamics under gravity,
//! buoyancy, the magnet's wrench, viscous drag and wall contact.

mod render;
mod stomach;
mod tasks;

use std::f64::consts::PI;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arm::{magnet_moment_direction, Pose};
use crate::error::{Error, Result};
use crate::magnetics::{Dipole, PhysicalConstants};

pub use render::{render, CameraFrame, CameraKind, RenderConfig};
pub use stomach::{Landmark, Landmarks, Shape, Sphere, StomachModel, Tube};
pub use tasks::{
    check_samples, check_task, capsule_pitch, capsule_heading, SubtaskResult, TaskKind, TaskOutcome, TaskSample,
    TaskSpec, TaskThresholds,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapsuleParams {
    /// kg
    pub mass: f64,
    /// m
    pub length: f64,
    /// m
    pub diameter: f64,
    /// A·m², along the long (+x body) axis
    pub moment: f64,
}

impl Default for CapsuleParams {
    fn default() -> Self {
        Self {
            mass: 4.56e-3,
            length: 0.026,
            diameter: 0.015,
            moment: 0.126,
        }
    }
}

impl CapsuleParams {
    pub fn radius(&self) -> f64 {
        0.5 * self.diameter
    }

    /// Cylinder plus two hemispherical caps.
    pub fn volume(&self) -> f64 {
        let r = self.radius();
        PI * r * r * (self.length - 2.0 * r) + 4.0 / 3.0 * PI * r.powi(3)
    }

    /// Radius of the sphere with the same volume; sets the width of the
    /// partial-submersion band.
    pub fn equivalent_radius(&self) -> f64 {
        (3.0 * self.volume() / (4.0 * PI)).cbrt()
    }

    /// Body-frame principal inertia of a solid cylinder of the full length.
    pub fn inertia_body(&self) -> Vector3<f64> {
        let r = self.radius();
        let axial = 0.5 * self.mass * r * r;
        let trans = self.mass * (3.0 * r * r + self.length * self.length) / 12.0;
        Vector3::new(axial, trans, trans)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mass > 0.0 && self.length > self.diameter && self.diameter > 0.0 {
            Ok(())
        } else {
            Err(Error::validation("capsule mass and dimensions must be positive, length > diameter"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaterFraction {
    OneThird,
    OneHalf,
    Full,
}

impl WaterFraction {
    pub const ALL: [WaterFraction; 3] = [Self::OneThird, Self::OneHalf, Self::Full];

    pub fn fraction(&self) -> f64 {
        match self {
            Self::OneThird => 1.0 / 3.0,
            Self::OneHalf => 0.5,
            Self::Full => 1.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::OneThird => "one_third",
            Self::OneHalf => "one_half",
            Self::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "one_third" | "1/3" => Ok(Self::OneThird),
            "one_half" | "1/2" => Ok(Self::OneHalf),
            "full" | "1" => Ok(Self::Full),
            other => Err(Error::validation(format!("unknown water line {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaterLine {
    pub fraction: WaterFraction,
    /// Height of the free surface, m.
    pub surface_height: f64,
}

impl WaterLine {
    /// Full sits 1 cm above the stomach roof so everything is submerged.
    pub fn new(fraction: WaterFraction, z_range: (f64, f64)) -> Self {
        let (lo, hi) = z_range;
        let surface_height = match fraction {
            WaterFraction::Full => hi + 0.01,
            f => lo + f.fraction() * (hi - lo),
        };
        Self { fraction, surface_height }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapsuleBody {
    pub pose: Pose,
    pub linear_velocity: Vector3<f64>,
    pub angular_velocity: Vector3<f64>,
    pub params: CapsuleParams,
}

impl CapsuleBody {
    pub fn at_rest(pose: Pose, params: CapsuleParams) -> Self {
        Self {
            pose,
            linear_velocity: Vector3::zeros(),
            angular_velocity: Vector3::zeros(),
            params,
        }
    }

    pub fn axis(&self) -> Vector3<f64> {
        self.pose.orientation * Vector3::x()
    }

    pub fn dipole(&self) -> Dipole {
        Dipole {
            moment: self.axis() * self.params.moment,
            position: self.pose.position,
        }
    }

    /// Camera position at the front cap.
    pub fn tip(&self) -> Vector3<f64> {
        self.pose.position + self.axis() * (0.5 * self.params.length)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DragParams {
    /// N·s/m
    pub linear_air: f64,
    /// N·s/m
    pub linear_water: f64,
    /// N·m·s
    pub angular_air: f64,
    /// N·m·s
    pub angular_water: f64,
}

impl Default for DragParams {
    fn default() -> Self {
        Self {
            linear_air: 0.02,
            linear_water: 0.2,
            angular_air: 1e-5,
            angular_water: 5e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WallMotion {
    /// Peak stomach displacement at the full water line, m.
    pub amplitude: f64,
    /// Hz
    pub frequency: f64,
}

impl Default for WallMotion {
    fn default() -> Self {
        Self {
            amplitude: 0.002,
            frequency: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    #[serde(default)]
    pub constants: PhysicalConstants,
    /// Actuating magnet moment magnitude, A·m².
    pub magnet_moment: f64,
    #[serde(default)]
    pub capsule: CapsuleParams,
    pub gravity: f64,
    /// kg/m³
    pub water_density: f64,
    #[serde(default)]
    pub drag: DragParams,
    /// Coulomb coefficient for tangential velocity loss at the wall.
    pub wall_friction: f64,
    /// Below this magnet–capsule distance the dipole force is clamped, m.
    pub min_separation: f64,
    #[serde(default)]
    pub wall_motion: WallMotion,
    #[serde(default)]
    pub stomach: StomachModel,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            constants: PhysicalConstants::default(),
            magnet_moment: 119.6,
            capsule: CapsuleParams::default(),
            gravity: 9.81,
            water_density: 1000.0,
            drag: DragParams::default(),
            wall_friction: 0.15,
            min_separation: 0.02,
            wall_motion: WallMotion::default(),
            stomach: StomachModel::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub time: f64,
    pub capsule: CapsuleBody,
    pub magnet: Dipole,
    pub magnet_pose: Pose,
    pub water: WaterLine,
    pub rng_seed: u64,
    /// Current stomach translation (non-zero only at the full water line).
    pub wall_offset: Vector3<f64>,
}

/// Net forces from one evaluation, exposed for diagnostics and tests.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ForceBreakdown {
    pub gravity: Vector3<f64>,
    pub buoyancy: Vector3<f64>,
    pub magnetic: Vector3<f64>,
    pub magnetic_torque: Vector3<f64>,
    pub submerged_fraction: f64,
}

impl ForceBreakdown {
    pub fn conservative(&self) -> Vector3<f64> {
        self.gravity + self.buoyancy + self.magnetic
    }
}

#[derive(Debug, Clone)]
pub struct Simulator {
    pub cfg: SimConfig,
    z_range: (f64, f64),
}

impl Simulator {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        cfg.capsule.validate()?;
        cfg.stomach.validate()?;
        let z_range = cfg.stomach.z_range();
        Ok(Self { cfg, z_range })
    }

    pub fn z_range(&self) -> (f64, f64) {
        self.z_range
    }

    pub fn water_line(&self, fraction: WaterFraction) -> WaterLine {
        WaterLine::new(fraction, self.z_range)
    }

    pub fn magnet_dipole(&self, magnet_pose: &Pose) -> Dipole {
        Dipole {
            moment: magnet_moment_direction(magnet_pose) * self.cfg.magnet_moment,
            position: magnet_pose.position,
        }
    }

    /// Build an initial state with the capsule at rest.
    pub fn initial_state(
        &self,
        capsule_pose: Pose,
        magnet_pose: Pose,
        water: WaterFraction,
        seed: u64,
    ) -> Result<SimState> {
        let state = SimState {
            time: 0.0,
            capsule: CapsuleBody::at_rest(capsule_pose, self.cfg.capsule),
            magnet: self.magnet_dipole(&magnet_pose),
            magnet_pose,
            water: self.water_line(water),
            rng_seed: seed,
            wall_offset: self.wall_offset(water, seed, 0.0),
        };
        let d = self.sdf(&state, &capsule_pose.position);
        if d >= 0.0 {
            return Err(Error::validation(format!(
                "initial capsule center is outside the stomach (sdf = {d})"
            )));
        }
        Ok(state)
    }

    pub fn wall_offset(&self, water: WaterFraction, seed: u64, time: f64) -> Vector3<f64> {
        if water != WaterFraction::Full || self.cfg.wall_motion.amplitude == 0.0 {
            return Vector3::zeros();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5741_4c4c);
        let phases: [f64; 3] = std::array::from_fn(|_| rng.random::<f64>() * 2.0 * PI);
        let w = 2.0 * PI * self.cfg.wall_motion.frequency;
        let a = self.cfg.wall_motion.amplitude;
        // incommensurate per-axis rates so the motion does not repeat quickly
        Vector3::new(
            a * (w * time + phases[0]).sin(),
            a * (w * 1.37 * time + phases[1]).sin(),
            0.5 * a * (w * 0.71 * time + phases[2]).sin(),
        )
    }

    pub fn sdf(&self, state: &SimState, p: &Vector3<f64>) -> f64 {
        self.cfg.stomach.sdf(&(p - state.wall_offset))
    }

    pub fn submerged_fraction(&self, z: f64, water: &WaterLine) -> f64 {
        let r = self.cfg.capsule.equivalent_radius();
        ((water.surface_height - (z - r)) / (2.0 * r)).clamp(0.0, 1.0)
    }

    pub fn forces(&self, state: &SimState) -> Result<ForceBreakdown> {
        let c = &state.capsule;
        let p = &c.params;
        let g = self.cfg.gravity;
        let frac = self.submerged_fraction(c.pose.position.z, &state.water);
        let wrench = if state.magnet.moment.norm_squared() == 0.0 {
            Default::default()
        } else {
            self.cfg.constants.dipole_wrench_clamped(
                &state.magnet,
                &c.dipole(),
                self.cfg.min_separation,
            )?
        };
        Ok(ForceBreakdown {
            gravity: Vector3::new(0.0, 0.0, -p.mass * g),
            buoyancy: Vector3::new(0.0, 0.0, self.cfg.water_density * p.volume() * frac * g),
            magnetic: wrench.force,
            magnetic_torque: wrench.torque,
            submerged_fraction: frac,
        })
    }

    /// Advance the state by `dt` with the magnet held at `magnet_pose`.
    ///
    /// Semi-implicit Euler: velocities first (drag treated implicitly), then
    /// positions from the new velocities, then SDF contact projection.
    pub fn step(&self, state: &SimState, magnet_pose: &Pose, dt: f64) -> Result<SimState> {
        if !(dt > 0.0 && dt <= 0.05) {
            return Err(Error::Domain(format!("dt must lie in (0, 0.05], got {dt}")));
        }
        if !magnet_pose.is_finite() {
            return Err(Error::validation("non-finite magnet pose"));
        }
        let mut next = *state;
        next.magnet_pose = *magnet_pose;
        next.magnet = self.magnet_dipole(magnet_pose);

        let f = self.forces(&next)?;
        let cap = &mut next.capsule;
        let params = cap.params;
        let drag = &self.cfg.drag;
        let frac = f.submerged_fraction;
        let lin_c = drag.linear_air + (drag.linear_water - drag.linear_air) * frac;
        let ang_c = drag.angular_air + (drag.angular_water - drag.angular_air) * frac;

        let force = f.conservative();
        cap.linear_velocity =
            (cap.linear_velocity + force / params.mass * dt) / (1.0 + lin_c * dt / params.mass);

        let rot = cap.pose.orientation.to_rotation_matrix();
        let ib = Matrix3::from_diagonal(&params.inertia_body());
        let iw = rot.matrix() * ib * rot.matrix().transpose();
        let iw_inv = iw.try_inverse().ok_or_else(|| fault(state, "singular inertia"))?;
        let w = cap.angular_velocity;
        let gyro = w.cross(&(iw * w));
        let w_free = w + iw_inv * (f.magnetic_torque - gyro) * dt;
        // implicit isotropic damping; exact for the axisymmetric transverse axes
        let i_min = params.inertia_body().min();
        cap.angular_velocity = w_free / (1.0 + ang_c * dt / i_min);

        cap.pose.position += cap.linear_velocity * dt;
        let mut q = UnitQuaternion::from_scaled_axis(cap.angular_velocity * dt) * cap.pose.orientation;
        q.renormalize();
        cap.pose.orientation = q;

        next.time = state.time + dt;
        next.wall_offset = self.wall_offset(state.water.fraction, state.rng_seed, next.time);
        self.resolve_contact(&mut next, &force, dt)?;

        if !next.capsule.pose.is_finite()
            || !next.capsule.linear_velocity.iter().all(|v| v.is_finite())
            || !next.capsule.angular_velocity.iter().all(|v| v.is_finite())
        {
            return Err(fault(&next, "non-finite capsule state"));
        }
        Ok(next)
    }

    fn resolve_contact(&self, state: &mut SimState, force: &Vector3<f64>, dt: f64) -> Result<()> {
        let r = state.capsule.params.radius();
        let mass = state.capsule.params.mass;
        let stomach = &self.cfg.stomach;
        for _ in 0..4 {
            let local = state.capsule.pose.position - state.wall_offset;
            let pen = stomach.sdf(&local) + r;
            if pen <= 0.0 {
                break;
            }
            let n = stomach.normal(&local);
            state.capsule.pose.position -= n * pen;

            let v = state.capsule.linear_velocity;
            let vn = v.dot(&n);
            let into_wall = vn.max(0.0);
            let mut vt = v - n * vn;
            // friction budget: normal impulse plus the pressing force over dt
            let press = force.dot(&n).max(0.0) * dt / mass;
            let budget = self.cfg.wall_friction * (into_wall + press);
            let speed = vt.norm();
            if speed > 0.0 {
                vt *= (1.0 - budget / speed).max(0.0);
            }
            state.capsule.linear_velocity = vt + n * vn.min(0.0);
        }
        let escaped = self.sdf(state, &state.capsule.pose.position);
        if escaped > 1e-3 {
            return Err(fault(state, format!("capsule left the stomach by {escaped:.4} m")));
        }
        Ok(())
    }
}

fn fault(state: &SimState, reason: impl Into<String>) -> Error {
    Error::SimulationFault {
        time: state.time,
        reason: reason.into(),
    }
}
