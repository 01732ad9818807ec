//! Instruction templates (skill, object, scene, modality) and seeded
//! paraphrase expansion.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sim::{TaskKind, TaskSpec, WaterFraction};

#[derive(Debug, Clone, PartialEq)]
pub struct InstructionTemplate {
    /// Verb lemma every expansion contains.
    pub skill: String,
    /// Noun lemma every expansion contains.
    pub object: String,
    pub scene: String,
    pub modality: String,
    pub openers: Vec<String>,
    pub skill_phrases: Vec<String>,
    pub scene_phrases: Vec<String>,
    pub modality_phrases: Vec<String>,
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn water_words(w: WaterFraction) -> (&'static str, &'static str) {
    match w {
        WaterFraction::OneThird => ("one-third", "a third full"),
        WaterFraction::OneHalf => ("half", "half full"),
        WaterFraction::Full => ("full", "completely full"),
    }
}

impl InstructionTemplate {
    pub fn for_task(task: &TaskSpec) -> Self {
        let (line, fill) = water_words(task.water);
        let water_phrases = |lead: &str| {
            vec![
                format!("{lead} with the water line at {line}"),
                format!("{lead} while the stomach is {fill}"),
                format!("{lead} at the {line} water level"),
                format!("{lead} with the stomach filled to {line}"),
                format!("{lead} in {line} water"),
            ]
        };
        let openers = strings(&["", "please ", "now ", "carefully ", "gently "]);
        match task.kind {
            TaskKind::Navigation => Self {
                skill: "navigate".into(),
                object: "capsule".into(),
                scene: "through the stomach".into(),
                modality: "from the esophagus to the antrum".into(),
                openers,
                skill_phrases: strings(&[
                    "navigate the capsule",
                    "navigate the capsule robot",
                    "navigate the endoscopy capsule",
                    "navigate the magnetic capsule",
                ]),
                scene_phrases: strings(&[
                    "through the stomach",
                    "through the stomach simulator",
                    "inside the stomach",
                    "across the stomach model",
                    "through the gastric cavity",
                ]),
                modality_phrases: strings(&[
                    "from the esophagus to the antrum",
                    "past the esophagus entry, the fundus and the antrum",
                    "visiting the esophagus, fundus and antrum in order",
                    "along the esophagus, fundus, antrum route",
                    "from the cardia to the gastric antrum",
                ]),
            },
            TaskKind::Rotation => Self {
                skill: "rotate".into(),
                object: "capsule".into(),
                scene: "in the water".into(),
                modality: "90 degrees clockwise, back, then 90 degrees counterclockwise".into(),
                openers,
                skill_phrases: strings(&[
                    "rotate the capsule",
                    "rotate the capsule robot",
                    "rotate the endoscopy capsule",
                    "rotate the magnetic capsule",
                ]),
                scene_phrases: strings(&[
                    "in the water",
                    "while it floats in the water",
                    "inside the stomach",
                    "in the stomach simulator",
                    "in place",
                ]),
                modality_phrases: strings(&[
                    "90 degrees clockwise, back, then 90 degrees counterclockwise",
                    "a quarter turn clockwise, back to the start, then a quarter turn counterclockwise",
                    "by 90 degrees each way, clockwise first",
                    "clockwise by 90 degrees, return, and counterclockwise by 90 degrees",
                    "through a right angle clockwise and counterclockwise",
                ]),
            },
            TaskKind::ViewAdjustment => Self {
                skill: "adjust".into(),
                object: "view".into(),
                scene: "inside the stomach".into(),
                modality: format!("with the water line at {line}"),
                openers,
                skill_phrases: strings(&[
                    "adjust the capsule view",
                    "adjust the camera view",
                    "adjust the view of the capsule",
                    "adjust the endoscope view",
                ]),
                scene_phrases: strings(&[
                    "inside the stomach",
                    "in the stomach simulator",
                    "through three viewing angles",
                    "to three pitch angles",
                    "while floating",
                ]),
                modality_phrases: water_phrases(""),
            },
            TaskKind::ViewRotation => Self {
                skill: "rotate".into(),
                object: "view".into(),
                scene: "inside the stomach".into(),
                modality: format!("with the water line at {line}"),
                openers,
                skill_phrases: strings(&[
                    "adjust the view and rotate the capsule",
                    "rotate the capsule after adjusting the view",
                    "adjust the camera view, then rotate",
                    "set three views and rotate the capsule",
                ]),
                scene_phrases: strings(&[
                    "inside the stomach",
                    "in the stomach simulator",
                    "in the water",
                    "while floating",
                    "in place",
                ]),
                modality_phrases: water_phrases(""),
            },
        }
    }

    /// The unvaried form.
    pub fn canonical(&self) -> String {
        self.compose(0, 0, 0, 0)
    }

    pub fn variety(&self) -> usize {
        self.openers.len() * self.skill_phrases.len() * self.scene_phrases.len() * self.modality_phrases.len()
    }

    fn compose(&self, o: usize, s: usize, c: usize, m: usize) -> String {
        let text = format!(
            "{}{} {} {}",
            self.openers[o],
            self.skill_phrases[s],
            self.scene_phrases[c],
            self.modality_phrases[m].trim()
        );
        text.split_whitespace().collect::<Vec<_>>().join(" ")
    }

    fn nth(&self, mut i: usize) -> String {
        let m = i % self.modality_phrases.len();
        i /= self.modality_phrases.len();
        let c = i % self.scene_phrases.len();
        i /= self.scene_phrases.len();
        let s = i % self.skill_phrases.len();
        i /= self.skill_phrases.len();
        self.compose(i, s, c, m)
    }
}

/// `n` distinct expansions; the first is always the canonical form.
pub fn augment_instructions(template: &InstructionTemplate, n: usize, seed: u64) -> Result<Vec<String>> {
    if n == 0 {
        return Err(Error::validation("need at least one instruction"));
    }
    let total = template.variety();
    if n > total {
        return Err(Error::validation(format!(
            "template yields only {total} distinct instructions, {n} requested"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![template.canonical()];
    out.extend(
        index::sample(&mut rng, total - 1, n - 1)
            .into_iter()
            .map(|i| template.nth(i + 1)),
    );
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn hundred_distinct_with_lemmas() {
        for kind in TaskKind::ALL {
            let t = InstructionTemplate::for_task(&TaskSpec::new(kind, WaterFraction::Full));
            let v = augment_instructions(&t, 100, 7).unwrap();
            assert_eq!(v.iter().collect::<HashSet<_>>().len(), 100);
            for s in &v {
                assert!(s.contains(&t.skill) && s.contains(&t.object), "{s}");
                assert!(!s.contains("  "));
            }
            assert_eq!(v, augment_instructions(&t, 100, 7).unwrap());
        }
    }

    #[test]
    fn one_gives_canonical() {
        let t = InstructionTemplate::for_task(&TaskSpec::new(TaskKind::Rotation, WaterFraction::OneHalf));
        assert_eq!(augment_instructions(&t, 1, 99).unwrap(), vec![t.canonical()]);
        assert!(augment_instructions(&t, 0, 0).is_err());
        assert!(augment_instructions(&t, t.variety() + 1, 0).is_err());
    }
}
