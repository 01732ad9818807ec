//! Point-dipole magnetostatics: field, force and torque between two magnetic
//! dipoles, plus the closed-form coaxial force magnitude used as a cross-check.
//!
//! Sign convention: the separation vector is always `target - source`.

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Separations below this are treated as coincident.
const COINCIDENT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// Vacuum permeability, N/A².
    pub mu0: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self { mu0: 4.0 * PI * 1e-7 }
    }
}

/// A point magnetic dipole: moment in A·m², position in m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dipole {
    pub moment: Vector3<f64>,
    pub position: Vector3<f64>,
}

impl Dipole {
    pub fn new(moment: Vector3<f64>, position: Vector3<f64>) -> Result<Self> {
        let d = Self { moment, position };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.moment.iter().chain(self.position.iter()).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::validation("dipole moment and position must be finite"))
        }
    }
}

/// Force (N) and torque (N·m) acting on a body.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Wrench {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
}

impl PhysicalConstants {
    fn k(&self) -> f64 {
        self.mu0 / (4.0 * PI)
    }

    /// Flux density of `source` evaluated at `at`, in tesla.
    pub fn dipole_field(&self, source: &Dipole, at: &Vector3<f64>) -> Result<Vector3<f64>> {
        let r = at - source.position;
        let dist = r.norm();
        if dist < COINCIDENT_EPS {
            return Err(Error::Singularity);
        }
        let r_hat = r / dist;
        let m = &source.moment;
        Ok(self.k() / dist.powi(3) * (3.0 * r_hat * m.dot(&r_hat) - m))
    }

    /// Force and torque exerted by `source` on `target`.
    ///
    /// The force is the analytic gradient of `target.moment · B_source`:
    ///
    /// `F = 3k/r⁵ [ (M·r) m + (m·r) M + (M·m) r − 5 (M·r)(m·r) r / r² ]`
    pub fn dipole_wrench(&self, source: &Dipole, target: &Dipole) -> Result<Wrench> {
        let r = target.position - source.position;
        let dist2 = r.norm_squared();
        if dist2.sqrt() < COINCIDENT_EPS {
            return Err(Error::Singularity);
        }
        let dist = dist2.sqrt();
        let big = &source.moment;
        let small = &target.moment;
        let big_r = big.dot(&r);
        let small_r = small.dot(&r);
        let force = 3.0 * self.k() / dist.powi(5)
            * (big_r * small
                + small_r * big
                + big.dot(small) * r
                - 5.0 * big_r * small_r / dist2 * r);
        let field = self.dipole_field(source, &target.position)?;
        Ok(Wrench {
            force,
            torque: small.cross(&field),
        })
    }

    /// Like [`Self::dipole_wrench`], but if the dipoles are closer than
    /// `min_separation` the target is evaluated at the floor distance along
    /// the same direction. Coincident points fall back to the source's −z axis.
    pub fn dipole_wrench_clamped(
        &self,
        source: &Dipole,
        target: &Dipole,
        min_separation: f64,
    ) -> Result<Wrench> {
        let r = target.position - source.position;
        let dist = r.norm();
        if dist >= min_separation {
            return self.dipole_wrench(source, target);
        }
        let dir = if dist < COINCIDENT_EPS {
            -Vector3::z()
        } else {
            r / dist
        };
        let moved = Dipole {
            moment: target.moment,
            position: source.position + dir * min_separation,
        };
        self.dipole_wrench(source, &moved)
    }

    /// Interaction energy `U = −m_target · B_source`, in joules.
    pub fn interaction_energy(&self, source: &Dipole, target: &Dipole) -> Result<f64> {
        Ok(-target.moment.dot(&self.dipole_field(source, &target.position)?))
    }

    /// Attractive force magnitude between two coaxial, co-aligned dipoles:
    /// `3 μ0 |M| |m| / (2π |r|⁴)`.
    pub fn coaxial_force_magnitude(&self, big: f64, small: f64, dist: f64) -> Result<f64> {
        if !(dist > 0.0) {
            return Err(Error::Domain(format!("separation must be positive, got {dist}")));
        }
        Ok(3.0 * self.mu0 * big * small / (2.0 * PI * dist.powi(4)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn consts() -> PhysicalConstants {
        PhysicalConstants::default()
    }

    fn dip(m: [f64; 3], p: [f64; 3]) -> Dipole {
        Dipole::new(Vector3::from(m), Vector3::from(p)).unwrap()
    }

    #[test]
    fn zero_moment_gives_zero_field() {
        let b = consts()
            .dipole_field(&dip([0.0; 3], [0.0; 3]), &Vector3::new(0.1, 0.2, -0.3))
            .unwrap();
        assert_eq!(b, Vector3::zeros());
    }

    #[test]
    fn on_axis_field_falls_off_with_cube() {
        let src = dip([0.0, 0.0, 119.6], [0.0; 3]);
        let b1 = consts().dipole_field(&src, &Vector3::new(0.0, 0.0, 0.1)).unwrap();
        let b2 = consts().dipole_field(&src, &Vector3::new(0.0, 0.0, 0.2)).unwrap();
        assert_relative_eq!(b1.norm() / b2.norm(), 8.0, max_relative = 1e-12);
    }

    #[test]
    fn on_axis_field_spot_value() {
        // mu0 * 2 * 119.6 / (4 pi 0.15^3) = 1e-7 * 239.2 / 3.375e-3
        let expected = 239.2e-7 / 3.375e-3;
        let src = dip([0.0, 0.0, 119.6], [0.0; 3]);
        let b = consts().dipole_field(&src, &Vector3::new(0.0, 0.0, 0.15)).unwrap();
        assert_relative_eq!(b.norm(), expected, max_relative = 1e-12);
        assert_relative_eq!(b.norm(), 7.086e-3, max_relative = 1e-3);
    }

    #[test]
    fn coincident_points_are_singular() {
        let src = dip([0.0, 0.0, 1.0], [0.1, 0.1, 0.1]);
        assert!(matches!(
            consts().dipole_field(&src, &Vector3::new(0.1, 0.1, 0.1)),
            Err(Error::Singularity)
        ));
        assert!(matches!(
            consts().dipole_wrench(&src, &src),
            Err(Error::Singularity)
        ));
    }

    #[test]
    fn parallel_moment_has_no_torque() {
        let c = consts();
        let src = dip([0.3, -1.0, 2.0], [0.0; 3]);
        let at = Vector3::new(0.05, 0.02, -0.1);
        let b = c.dipole_field(&src, &at).unwrap();
        let tgt = Dipole { moment: b.normalize() * 0.126, position: at };
        let w = c.dipole_wrench(&src, &tgt).unwrap();
        assert!(w.torque.norm() < 1e-12);
    }

    #[test]
    fn newtons_third_law() {
        let c = consts();
        let a = dip([0.1, 0.2, 119.6], [0.0, 0.01, 0.2]);
        let b = dip([0.126, 0.0, 0.01], [0.03, -0.02, 0.0]);
        let fab = c.dipole_wrench(&a, &b).unwrap().force;
        let fba = c.dipole_wrench(&b, &a).unwrap().force;
        assert_relative_eq!(fab, -fba, max_relative = 1e-12, epsilon = 1e-18);
    }

    #[test]
    fn coaxial_wrench_matches_closed_form() {
        let c = consts();
        let src = dip([0.0, 0.0, 119.6], [0.0, 0.0, 0.15]);
        let tgt = dip([0.0, 0.0, 0.126], [0.0, 0.0, 0.0]);
        let w = c.dipole_wrench(&src, &tgt).unwrap();
        let expected = c.coaxial_force_magnitude(119.6, 0.126, 0.15).unwrap();
        assert_relative_eq!(w.force.norm(), expected, max_relative = 1e-12);
        // attraction: the capsule below is pulled up toward the magnet
        assert!(w.force.z > 0.0);
        assert_relative_eq!(expected, 1.786e-2, max_relative = 1e-3);
    }

    #[test]
    fn coaxial_magnitude_scaling_and_domain() {
        let c = consts();
        let f1 = c.coaxial_force_magnitude(119.6, 0.126, 0.1).unwrap();
        let f2 = c.coaxial_force_magnitude(119.6, 0.126, 0.2).unwrap();
        assert_relative_eq!(f1 / f2, 16.0, max_relative = 1e-12);
        assert_eq!(c.coaxial_force_magnitude(119.6, 0.0, 0.1).unwrap(), 0.0);
        assert!(matches!(c.coaxial_force_magnitude(1.0, 1.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(c.coaxial_force_magnitude(1.0, 1.0, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn clamped_wrench_uses_floor_distance() {
        let c = consts();
        let src = dip([0.0, 0.0, -119.6], [0.0, 0.0, 0.01]);
        let tgt = dip([0.0, 0.0, -0.126], [0.0, 0.0, 0.0]);
        let clamped = c.dipole_wrench_clamped(&src, &tgt, 0.02).unwrap();
        let at_floor = c
            .dipole_wrench(&src, &dip([0.0, 0.0, -0.126], [0.0, 0.0, -0.01]))
            .unwrap();
        assert_relative_eq!(clamped.force, at_floor.force, max_relative = 1e-12);
        assert!(c.dipole_wrench_clamped(&src, &src, 0.02).is_ok());
    }
}
