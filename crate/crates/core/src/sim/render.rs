//! Deterministic synthetic cameras: a first-person ray-marched capsule view
//! and an orthographic top-down exterior view.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{SimState, Simulator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraFrame {
    pub width: usize,
    pub height: usize,
    /// Row-major, each value in `[0, 1]`.
    pub intensity: Vec<f32>,
}

impl CameraFrame {
    pub fn filled(width: usize, height: usize, v: f32) -> Self {
        Self {
            width,
            height,
            intensity: vec![v; width * height],
        }
    }

    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.intensity[row * self.width + col]
    }

    /// Mean over non-overlapping `patch × patch` blocks, row-major.
    pub fn patch_means(&self, patch: usize) -> Vec<f64> {
        let (pr, pc) = (self.height / patch, self.width / patch);
        let mut out = vec![0.0; pr * pc];
        for r in 0..pr * patch {
            for c in 0..pc * patch {
                out[(r / patch) * pc + c / patch] += self.at(r, c) as f64;
            }
        }
        let n = (patch * patch) as f64;
        out.iter_mut().for_each(|v| *v /= n);
        out
    }

    /// Nearest-neighbour resample to `size × size`.
    pub fn downsampled(&self, size: usize) -> CameraFrame {
        if size == self.width && size == self.height {
            return self.clone();
        }
        let mut out = CameraFrame::filled(size, size, 0.0);
        for r in 0..size {
            for c in 0..size {
                out.intensity[r * size + c] =
                    self.at(r * self.height / size, c * self.width / size);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraKind {
    CapsuleCam,
    ExteriorCam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
    /// Full horizontal field of view of the capsule camera, rad.
    pub fov: f64,
    /// Depth at which the capsule camera fades to black, m.
    pub max_depth: f64,
    /// Intensity multiplier for wall points below the water surface.
    pub water_tint: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            fov: 100f64.to_radians(),
            max_depth: 0.14,
            water_tint: 0.7,
        }
    }
}

pub fn render(sim: &Simulator, cfg: &RenderConfig, state: &SimState, which: CameraKind) -> CameraFrame {
    match which {
        CameraKind::CapsuleCam => render_capsule(sim, cfg, state),
        CameraKind::ExteriorCam => render_exterior(sim, cfg, state),
    }
}

fn render_capsule(sim: &Simulator, cfg: &RenderConfig, state: &SimState) -> CameraFrame {
    let cap = &state.capsule;
    let rot = cap.pose.orientation;
    let fwd = rot * Vector3::x();
    let right = rot * -Vector3::y();
    let up = rot * Vector3::z();
    let eye = cap.tip();
    let half = (0.5 * cfg.fov).tan();
    let surface = state.water.surface_height;
    let eye_wet = eye.z < surface;

    let mut frame = CameraFrame::filled(cfg.width, cfg.height, 0.0);
    for row in 0..cfg.height {
        let v = 1.0 - 2.0 * (row as f64 + 0.5) / cfg.height as f64;
        for col in 0..cfg.width {
            let u = 2.0 * (col as f64 + 0.5) / cfg.width as f64 - 1.0;
            let dir = (fwd + right * (u * half) + up * (v * half)).normalize();
            let depth = march(sim, state, &eye, &dir, cfg.max_depth);
            let mut shade = match depth {
                Some(t) => 1.0 - t / cfg.max_depth,
                None => 0.0,
            };
            let hit_z = eye.z + dir.z * depth.unwrap_or(cfg.max_depth);
            let hit_wet = hit_z < surface;
            if hit_wet {
                shade *= cfg.water_tint;
            }
            // the free surface shows up as a brighter band where the ray crosses it
            if eye_wet != hit_wet && dir.z.abs() > 1e-12 {
                shade = 0.5 * shade + 0.25;
            }
            frame.intensity[row * cfg.width + col] = shade.clamp(0.0, 1.0) as f32;
        }
    }
    frame
}

/// Sphere-trace the interior; returns the hit distance if within `max_t`.
fn march(sim: &Simulator, state: &SimState, eye: &Vector3<f64>, dir: &Vector3<f64>, max_t: f64) -> Option<f64> {
    let mut t = 0.0;
    for _ in 0..256 {
        let p = eye + dir * t;
        let d = -sim.sdf(state, &p);
        if d < 1e-6 {
            return Some(t);
        }
        t += d;
        if t > max_t {
            return None;
        }
    }
    Some(t.min(max_t))
}

fn render_exterior(sim: &Simulator, cfg: &RenderConfig, state: &SimState) -> CameraFrame {
    let (lo, hi) = sim.cfg.stomach.bounds();
    let margin = 0.01;
    let (x0, x1) = (lo.x - margin, hi.x + margin);
    let (y0, y1) = (lo.y - margin, hi.y + margin);
    let (z0, z1) = sim.z_range();
    let cap = &state.capsule;
    let a = cap.pose.position - cap.axis() * (0.5 * cap.params.length - cap.params.radius());
    let b = cap.pose.position + cap.axis() * (0.5 * cap.params.length - cap.params.radius());
    let cap_h = ((cap.pose.position.z - z0) / (z1 - z0)).clamp(0.0, 1.0);
    let magnet = state.magnet_pose.position;
    let pix = (x1 - x0) / cfg.width as f64;

    let mut frame = CameraFrame::filled(cfg.width, cfg.height, 0.0);
    for row in 0..cfg.height {
        let y = y1 - (y1 - y0) * (row as f64 + 0.5) / cfg.height as f64;
        for col in 0..cfg.width {
            let x = x0 + (x1 - x0) * (col as f64 + 0.5) / cfg.width as f64;
            let inside = (0..12)
                .map(|k| z0 + (z1 - z0) * (k as f64 + 0.5) / 12.0)
                .any(|z| sim.sdf(state, &Vector3::new(x, y, z)) < 0.0);
            let mut v = if inside { 0.35 } else { 0.1 };
            let p = Vector3::new(x, y, 0.0);
            if segment_distance_xy(&p, &a, &b) <= cap.params.radius() {
                v = 0.55 + 0.35 * cap_h;
            }
            let dm = ((x - magnet.x).powi(2) + (y - magnet.y).powi(2)).sqrt();
            if dm <= 1.5 * pix {
                v = 1.0;
            }
            frame.intensity[row * cfg.width + col] = v as f32;
        }
    }
    frame
}

fn segment_distance_xy(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let (px, py) = (p.x - a.x, p.y - a.y);
    let (bx, by) = (b.x - a.x, b.y - a.y);
    let len2 = bx * bx + by * by;
    let t = if len2 > 0.0 {
        ((px * bx + py * by) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((px - bx * t).powi(2) + (py - by * t).powi(2)).sqrt()
}
