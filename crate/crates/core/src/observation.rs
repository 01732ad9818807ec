use serde::{Deserialize, Serialize};

use crate::sim::CameraFrame;

/// Number of proprioceptive features: 7 joints, magnet pose, capsule pose.
pub const PROPRIO_DIM: usize = 21;

/// What the policy sees at one control tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// `[capsule_cam, exterior_cam]`
    pub frames: [CameraFrame; 2],
    /// Normalized to `[-1, 1]`.
    pub proprio: Vec<f64>,
    /// Hz
    pub control_frequency: f64,
    pub instruction: Vec<u32>,
}

/// Lower-cased alphanumeric words hashed with 32-bit FNV-1a.
pub fn tokenize(text: &str) -> Vec<u32> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| fnv1a(&w.to_lowercase()))
        .collect()
}

pub fn fnv1a(word: &str) -> u32 {
    let mut h: u32 = 0x811c_9dc5;
    for b in word.bytes() {
        h ^= b as u32;
        h = h.wrapping_mul(0x0100_0193);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_is_case_insensitive() {
        assert_eq!(tokenize("Rotate the Capsule"), tokenize("rotate, the capsule!"));
        assert_eq!(tokenize("").len(), 0);
        assert_eq!(fnv1a("a"), 0xe40c292c);
    }
}
