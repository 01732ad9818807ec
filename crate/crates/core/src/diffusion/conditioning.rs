//! Observation featurizers. Image and text maps are fixed random
//! projections; the proprioception branch is a Fourier map followed by a
//! trainable MLP.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{sinusoidal_embedding, Activation, FourierFeatureMap, Mlp};
use crate::observation::Observation;

/// Patch grid per side for image features.
pub const PATCH_GRID: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskProbs {
    pub image: f64,
    pub text: f64,
    pub proprio: f64,
}

impl Default for MaskProbs {
    fn default() -> Self {
        Self {
            image: 0.1,
            text: 0.1,
            proprio: 0.1,
        }
    }
}

impl MaskProbs {
    pub fn validate(&self) -> Result<()> {
        for p in [self.image, self.text, self.proprio] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::validation(format!("mask probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StackConfig {
    /// Features per camera.
    pub image_dim: usize,
    pub text_dim: usize,
    pub text_buckets: usize,
    pub proprio_in: usize,
    pub proprio_freqs: usize,
    pub fourier_sigma: f64,
    pub proprio_hidden: usize,
    pub proprio_dim: usize,
    pub freq_dim: usize,
    pub mask: MaskProbs,
}

impl Default for StackConfig {
    fn default() -> Self {
        Self {
            image_dim: 32,
            text_dim: 16,
            text_buckets: 512,
            proprio_in: crate::observation::PROPRIO_DIM,
            proprio_freqs: 32,
            fourier_sigma: 1.0,
            proprio_hidden: 64,
            proprio_dim: 32,
            freq_dim: 8,
            mask: MaskProbs::default(),
        }
    }
}

impl StackConfig {
    pub fn embedding_dim(&self) -> usize {
        2 * self.image_dim + self.text_dim + self.proprio_dim + self.freq_dim
    }
}

/// Fixed (non-trainable) features of one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    /// Both cameras, concatenated.
    pub image: Vec<f64>,
    pub text: Vec<f64>,
    /// Fourier-encoded proprioception, input of the trainable branch.
    pub proprio: Vec<f64>,
    pub frequency: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodeMode {
    Train,
    Eval,
}

/// Which modalities survive masking for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keep {
    pub image: f64,
    pub text: f64,
    pub proprio: f64,
}

impl Keep {
    pub const ALL: Keep = Keep {
        image: 1.0,
        text: 1.0,
        proprio: 1.0,
    };

    pub fn draw<R: Rng + ?Sized>(mask: &MaskProbs, rng: &mut R) -> Self {
        let mut keep = |p: f64| if rng.random::<f64>() < p { 0.0 } else { 1.0 };
        Keep {
            image: keep(mask.image),
            text: keep(mask.text),
            proprio: keep(mask.proprio),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningStack {
    pub cfg: StackConfig,
    /// `image_dim × PATCH_GRID²`, shared by both cameras.
    pub image_proj: Array2<f64>,
    /// `text_dim × text_buckets`
    pub text_table: Array2<f64>,
    pub fourier: FourierFeatureMap,
    pub proprio_mlp: Mlp,
}

impl ConditioningStack {
    pub fn new(cfg: StackConfig, seed: u64) -> Result<Self> {
        cfg.mask.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let npatch = PATCH_GRID * PATCH_GRID;
        let s = 1.0 / (npatch as f64).sqrt();
        let image_proj = Array2::from_shape_simple_fn((cfg.image_dim, npatch), || {
            2.0 * s * rng.sample::<f64, _>(StandardNormal)
        });
        let text_table =
            Array2::from_shape_simple_fn((cfg.text_dim, cfg.text_buckets), || rng.sample::<f64, _>(StandardNormal));
        let fourier = FourierFeatureMap::new(cfg.proprio_in, cfg.proprio_freqs, cfg.fourier_sigma, &mut rng);
        let proprio_mlp = Mlp::new(
            &[fourier.out_dim(), cfg.proprio_hidden, cfg.proprio_dim],
            Activation::Gelu,
            &mut rng,
        )?;
        Ok(Self {
            cfg,
            image_proj,
            text_table,
            fourier,
            proprio_mlp,
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.cfg.embedding_dim()
    }

    /// Deterministic features of the fixed branches.
    pub fn featurize(&self, obs: &Observation) -> Result<Features> {
        if !(obs.control_frequency > 0.0) {
            return Err(Error::validation("control frequency must be positive"));
        }
        let mut image = Vec::with_capacity(2 * self.cfg.image_dim);
        for frame in &obs.frames {
            if frame.width < PATCH_GRID || frame.height < PATCH_GRID {
                return Err(Error::validation(format!(
                    "frame {}x{} smaller than the patch grid",
                    frame.width, frame.height
                )));
            }
            let means: Vec<f64> = grid_means(frame).into_iter().map(|m| m - 0.5).collect();
            image.extend(self.image_proj.dot(&ArrayView1::from(&means[..])).iter());
        }
        let mut text = Array1::<f64>::zeros(self.cfg.text_dim);
        for tok in &obs.instruction {
            text += &self.text_table.column(*tok as usize % self.cfg.text_buckets);
        }
        if !obs.instruction.is_empty() {
            text /= (obs.instruction.len() as f64).sqrt();
        }
        let proprio = self.fourier.encode(&obs.proprio)?;
        let frequency = sinusoidal_embedding(obs.control_frequency, self.cfg.freq_dim, 100.0);
        Ok(Features {
            image,
            text: text.to_vec(),
            proprio,
            frequency,
        })
    }

    /// Embedding for a batch of feature sets, one row each, with the given
    /// keep masks. Returns the embedding and the proprio-branch cache.
    pub fn embed(
        &self,
        feats: &[&Features],
        keep: &[Keep],
    ) -> Result<(Array2<f64>, crate::nn::ForwardCache)> {
        let n = feats.len();
        let p_in = Array2::from_shape_fn((n, self.fourier.out_dim()), |(i, j)| feats[i].proprio[j]);
        let (p_out, cache) = self.proprio_mlp.forward_cached(p_in.view())?;
        let dim = self.embedding_dim();
        let mut out = Array2::zeros((n, dim));
        let (ni, nt, np) = (2 * self.cfg.image_dim, self.cfg.text_dim, self.cfg.proprio_dim);
        for (i, f) in feats.iter().enumerate() {
            let mut row = out.row_mut(i);
            let k = keep[i];
            for j in 0..ni {
                row[j] = k.image * f.image[j];
            }
            for j in 0..nt {
                row[ni + j] = k.text * f.text[j];
            }
            for j in 0..np {
                row[ni + nt + j] = k.proprio * p_out[[i, j]];
            }
            for (j, v) in f.frequency.iter().enumerate() {
                row[ni + nt + np + j] = *v;
            }
        }
        Ok((out, cache))
    }

    /// Column range of the proprio branch inside the embedding.
    pub fn proprio_slice(&self) -> std::ops::Range<usize> {
        let lo = 2 * self.cfg.image_dim + self.cfg.text_dim;
        lo..lo + self.cfg.proprio_dim
    }

    pub fn image_slice(&self) -> std::ops::Range<usize> {
        0..2 * self.cfg.image_dim
    }

    pub fn text_slice(&self) -> std::ops::Range<usize> {
        let lo = 2 * self.cfg.image_dim;
        lo..lo + self.cfg.text_dim
    }

    /// One observation's embedding; in train mode each modality is dropped
    /// with its mask probability.
    pub fn encode_observation<R: Rng + ?Sized>(
        &self,
        obs: &Observation,
        mode: EncodeMode,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let f = self.featurize(obs)?;
        let keep = match mode {
            EncodeMode::Train => Keep::draw(&self.cfg.mask, rng),
            EncodeMode::Eval => Keep::ALL,
        };
        let (e, _) = self.embed(&[&f], &[keep])?;
        Ok(e.into_raw_vec_and_offset().0)
    }
}

/// Means over an 8×8 grid of equal patches, row-major.
fn grid_means(frame: &crate::sim::CameraFrame) -> Vec<f64> {
    let (ph, pw) = (frame.height / PATCH_GRID, frame.width / PATCH_GRID);
    let mut out = vec![0.0; PATCH_GRID * PATCH_GRID];
    for r in 0..ph * PATCH_GRID {
        for c in 0..pw * PATCH_GRID {
            out[(r / ph) * PATCH_GRID + c / pw] += frame.at(r, c) as f64;
        }
    }
    let n = (ph * pw) as f64;
    out.iter_mut().for_each(|v| *v /= n);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observation::tokenize;
    use crate::sim::CameraFrame;

    fn obs(v: f32, text: &str) -> Observation {
        Observation {
            frames: [CameraFrame::filled(16, 16, v), CameraFrame::filled(16, 16, 1.0 - v)],
            proprio: vec![0.1; crate::observation::PROPRIO_DIM],
            control_frequency: 10.0,
            instruction: tokenize(text),
        }
    }

    #[test]
    fn full_image_mask_hides_images() {
        let cfg = StackConfig {
            mask: MaskProbs {
                image: 1.0,
                text: 0.0,
                proprio: 0.0,
            },
            ..StackConfig::default()
        };
        let stack = ConditioningStack::new(cfg, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = stack.encode_observation(&obs(0.2, "go"), EncodeMode::Train, &mut rng).unwrap();
        let b = stack.encode_observation(&obs(0.9, "go"), EncodeMode::Train, &mut rng).unwrap();
        assert_eq!(a, b);
        assert!(a[stack.image_slice()].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let stack = ConditioningStack::new(StackConfig::default(), 2).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        let o = obs(0.4, "rotate the capsule");
        let a = stack.encode_observation(&o, EncodeMode::Eval, &mut r1).unwrap();
        let b = stack.encode_observation(&o, EncodeMode::Eval, &mut r2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), stack.embedding_dim());
    }
}
