use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ACTION_DIM: usize = 7;

/// One control command: translational rates in mm/s, rotational rates in
/// rad/s (world frame), and a gripper signal in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub droll: f64,
    pub dpitch: f64,
    pub dyaw: f64,
    pub gripper: f64,
}

impl Action {
    pub const IDLE: Action = Action {
        dx: 0.0,
        dy: 0.0,
        dz: 0.0,
        droll: 0.0,
        dpitch: 0.0,
        dyaw: 0.0,
        gripper: 1.0,
    };

    pub fn to_array(&self) -> [f64; ACTION_DIM] {
        [self.dx, self.dy, self.dz, self.droll, self.dpitch, self.dyaw, self.gripper]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != ACTION_DIM {
            return Err(Error::DimensionMismatch {
                what: "action",
                expected: ACTION_DIM,
                actual: v.len(),
            });
        }
        Ok(Self {
            dx: v[0],
            dy: v[1],
            dz: v[2],
            droll: v[3],
            dpitch: v[4],
            dyaw: v[5],
            gripper: v[6],
        })
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn validate(&self, bounds: &ActionBounds) -> Result<()> {
        if !self.is_finite() {
            return Err(Error::validation("action has non-finite components"));
        }
        if !(0.0..=1.0).contains(&self.gripper) {
            return Err(Error::validation(format!("gripper {} outside [0,1]", self.gripper)));
        }
        let lim = bounds.limits();
        for (i, v) in self.to_array().iter().take(6).enumerate() {
            if v.abs() > lim[i] + 1e-9 {
                return Err(Error::validation(format!(
                    "action component {i} = {v} exceeds bound {}",
                    lim[i]
                )));
            }
        }
        Ok(())
    }

    /// Clamp every component into `bounds`, gripper into `[0, 1]`.
    pub fn clamped(&self, bounds: &ActionBounds) -> Self {
        let lim = bounds.limits();
        let mut a = self.to_array();
        for i in 0..6 {
            a[i] = a[i].clamp(-lim[i], lim[i]);
        }
        a[6] = a[6].clamp(0.0, 1.0);
        Self::from_slice(&a).expect("fixed length")
    }
}

/// Symmetric velocity bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionBounds {
    /// mm/s
    pub max_linear: f64,
    /// rad/s
    pub max_angular: f64,
}

impl Default for ActionBounds {
    fn default() -> Self {
        Self {
            max_linear: 30.0,
            max_angular: 0.6,
        }
    }
}

impl ActionBounds {
    pub fn limits(&self) -> [f64; 6] {
        let (l, a) = (self.max_linear, self.max_angular);
        [l, l, l, a, a, a]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamp_respects_bounds() {
        let b = ActionBounds::default();
        let a = Action {
            dx: 100.0,
            dyaw: -5.0,
            gripper: 2.0,
            ..Action::default()
        }
        .clamped(&b);
        assert_eq!(a.dx, 30.0);
        assert_eq!(a.dyaw, -0.6);
        assert_eq!(a.gripper, 1.0);
        assert!(a.validate(&b).is_ok());
    }

    #[test]
    fn rejects_non_finite() {
        let a = Action { dz: f64::NAN, ..Action::IDLE };
        assert!(a.validate(&ActionBounds::default()).is_err());
        assert!(Action::from_slice(&[0.0; 6]).is_err());
    }
}
