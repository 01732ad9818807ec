//! Analytic stomach geometry as a signed-distance function (negative inside).

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: Vector3<f64>,
    pub radius: f64,
}

impl Sphere {
    fn sdf(&self, p: &Vector3<f64>) -> f64 {
        (p - self.center).norm() - self.radius
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (p - self.center).norm() <= self.radius
    }
}

/// Round-capped tube between two points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tube {
    pub start: Vector3<f64>,
    pub end: Vector3<f64>,
    pub radius: f64,
}

impl Tube {
    fn sdf(&self, p: &Vector3<f64>) -> f64 {
        let ab = self.end - self.start;
        let t = ((p - self.start).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
        (p - (self.start + ab * t)).norm() - self.radius
    }
}

fn smooth_min(a: f64, b: f64, k: f64) -> f64 {
    if k <= 0.0 {
        return a.min(b);
    }
    let h = (0.5 + 0.5 * (b - a) / k).clamp(0.0, 1.0);
    b + (a - b) * h - k * h * (1.0 - h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Smooth blend of a fundus sphere, a body sphere and an antrum tube.
    Bean {
        fundus: Sphere,
        body: Sphere,
        antrum: Tube,
        blend: f64,
    },
    Sphere(Sphere),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Landmark {
    EsophagusEntry,
    Fundus,
    GastricAntrum,
}

impl Landmark {
    pub const ALL: [Landmark; 3] = [
        Landmark::EsophagusEntry,
        Landmark::Fundus,
        Landmark::GastricAntrum,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Landmark::EsophagusEntry => "esophagus_entry",
            Landmark::Fundus => "fundus",
            Landmark::GastricAntrum => "gastric_antrum",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landmarks {
    pub esophagus_entry: Sphere,
    pub fundus: Sphere,
    pub gastric_antrum: Sphere,
}

impl Landmarks {
    pub fn get(&self, which: Landmark) -> &Sphere {
        match which {
            Landmark::EsophagusEntry => &self.esophagus_entry,
            Landmark::Fundus => &self.fundus,
            Landmark::GastricAntrum => &self.gastric_antrum,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StomachModel {
    pub shape: Shape,
    pub landmarks: Landmarks,
}

impl Default for StomachModel {
    fn default() -> Self {
        Self::bean()
    }
}

impl StomachModel {
    /// Default bean-shaped stomach, fundus on −x, antrum rising toward +x.
    pub fn bean() -> Self {
        let s = |x: f64, y: f64, z: f64, r: f64| Sphere { center: Vector3::new(x, y, z), radius: r };
        Self {
            shape: Shape::Bean {
                fundus: s(-0.022, 0.0, 0.004, 0.036),
                body: s(0.016, 0.0, -0.004, 0.032),
                antrum: Tube {
                    start: Vector3::new(0.016, 0.0, -0.004),
                    end: Vector3::new(0.050, 0.0, 0.002),
                    radius: 0.020,
                },
                blend: 0.012,
            },
            landmarks: Landmarks {
                esophagus_entry: s(-0.004, 0.0, 0.026, 0.012),
                fundus: s(-0.040, 0.0, 0.024, 0.012),
                gastric_antrum: s(0.050, 0.0, 0.006, 0.012),
            },
        }
    }

    /// A plain sphere with landmarks at fixed interior offsets.
    pub fn sphere(center: Vector3<f64>, radius: f64) -> Self {
        let lm = |dx: f64| Sphere {
            center: center + Vector3::new(dx * radius, 0.0, 0.0),
            radius: 0.1 * radius,
        };
        Self {
            shape: Shape::Sphere(Sphere { center, radius }),
            landmarks: Landmarks {
                esophagus_entry: lm(-0.5),
                fundus: lm(0.0),
                gastric_antrum: lm(0.5),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        for lm in Landmark::ALL {
            let s = self.landmarks.get(lm);
            if !(s.radius > 0.0) || self.sdf(&s.center) >= 0.0 {
                return Err(Error::validation(format!(
                    "landmark {} must have positive radius and lie inside the stomach",
                    lm.name()
                )));
            }
        }
        Ok(())
    }

    pub fn sdf(&self, p: &Vector3<f64>) -> f64 {
        match &self.shape {
            Shape::Bean {
                fundus,
                body,
                antrum,
                blend,
            } => {
                let d = smooth_min(fundus.sdf(p), body.sdf(p), *blend);
                smooth_min(d, antrum.sdf(p), *blend)
            }
            Shape::Sphere(s) => s.sdf(p),
        }
    }

    /// Unit outward normal from central differences of the SDF.
    pub fn normal(&self, p: &Vector3<f64>) -> Vector3<f64> {
        const H: f64 = 1e-6;
        let g = Vector3::new(
            self.sdf(&(p + Vector3::x() * H)) - self.sdf(&(p - Vector3::x() * H)),
            self.sdf(&(p + Vector3::y() * H)) - self.sdf(&(p - Vector3::y() * H)),
            self.sdf(&(p + Vector3::z() * H)) - self.sdf(&(p - Vector3::z() * H)),
        );
        let n = g.norm();
        if n > 0.0 {
            g / n
        } else {
            Vector3::z()
        }
    }

    /// Loose axis-aligned bounds of the interior.
    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let grow = |s: &Sphere, lo: &mut Vector3<f64>, hi: &mut Vector3<f64>| {
            let r = Vector3::repeat(s.radius);
            *lo = lo.inf(&(s.center - r));
            *hi = hi.sup(&(s.center + r));
        };
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        match &self.shape {
            Shape::Bean { fundus, body, antrum, .. } => {
                grow(fundus, &mut lo, &mut hi);
                grow(body, &mut lo, &mut hi);
                for c in [antrum.start, antrum.end] {
                    grow(&Sphere { center: c, radius: antrum.radius }, &mut lo, &mut hi);
                }
            }
            Shape::Sphere(s) => grow(s, &mut lo, &mut hi),
        }
        (lo, hi)
    }

    /// Lowest and highest interior heights, found by bisection on vertical
    /// lines through a coarse grid.
    pub fn z_range(&self) -> (f64, f64) {
        let (lo, hi) = self.bounds();
        let mut zmin = f64::INFINITY;
        let mut zmax = f64::NEG_INFINITY;
        const N: usize = 24;
        for i in 0..=N {
            for j in 0..=N {
                let x = lo.x + (hi.x - lo.x) * i as f64 / N as f64;
                let y = lo.y + (hi.y - lo.y) * j as f64 / N as f64;
                // find any interior seed on this column
                let seed = (0..=64)
                    .map(|k| lo.z + (hi.z - lo.z) * k as f64 / 64.0)
                    .find(|z| self.sdf(&Vector3::new(x, y, *z)) < 0.0);
                let Some(z0) = seed else { continue };
                let edge = |mut inside: f64, mut outside: f64| {
                    for _ in 0..60 {
                        let mid = 0.5 * (inside + outside);
                        if self.sdf(&Vector3::new(x, y, mid)) < 0.0 {
                            inside = mid;
                        } else {
                            outside = mid;
                        }
                    }
                    inside
                };
                zmin = zmin.min(edge(z0, lo.z - 0.01));
                zmax = zmax.max(edge(z0, hi.z + 0.01));
            }
        }
        (zmin, zmax)
    }

    /// Which landmark (if any) contains `p`, in the fixed order of [`Landmark::ALL`].
    pub fn landmark_at(&self, p: &Vector3<f64>) -> Option<Landmark> {
        Landmark::ALL
            .into_iter()
            .find(|lm| self.landmarks.get(*lm).contains(p))
    }
}
