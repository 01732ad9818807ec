use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::conditioning::{ConditioningStack, Features, Keep, StackConfig};
use super::schedule::{build_schedule, NoiseSchedule, ScheduleKind};
use crate::action::{Action, ActionBounds, ACTION_DIM};
use crate::error::{Error, Result};
use crate::nn::{self, sinusoidal_embedding, Activation, Mlp};
use crate::observation::Observation;

const CHECKPOINT_MAGIC: &[u8; 4] = b"CPOL";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Denoiser over noisy chunks.
    Diffusion,
    /// Direct chunk regression from the embedding.
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    Ancestral,
    FastDeterministic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    pub chunk_len: usize,
    pub steps: usize,
    pub schedule: ScheduleKind,
    pub fast_steps: usize,
    pub time_dim: usize,
    pub hidden: Vec<usize>,
    pub stack: StackConfig,
    pub seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            kind: PolicyKind::Diffusion,
            chunk_len: 16,
            steps: 100,
            schedule: ScheduleKind::Cosine,
            fast_steps: 5,
            time_dim: 32,
            hidden: vec![256, 256],
            stack: StackConfig::default(),
            seed: 0,
        }
    }
}

impl PolicyConfig {
    pub fn chunk_dim(&self) -> usize {
        self.chunk_len * ACTION_DIM
    }

    pub fn net_widths(&self) -> Vec<usize> {
        let mut w = vec![self.net_in_dim()];
        w.extend(&self.hidden);
        w.push(self.chunk_dim());
        w
    }

    fn net_in_dim(&self) -> usize {
        let e = self.stack.embedding_dim();
        match self.kind {
            PolicyKind::Diffusion => e + self.chunk_dim() + self.time_dim,
            PolicyKind::Regression => e,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.chunk_len == 0 || self.steps == 0 || self.fast_steps == 0 {
            return Err(Error::validation("chunk length and step counts must be positive"));
        }
        if self.fast_steps > self.steps {
            return Err(Error::validation("fast sampler cannot use more steps than the schedule"));
        }
        self.stack.mask.validate()
    }
}

/// Per-dimension affine map of actions onto `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionNormalizer {
    pub lo: [f64; ACTION_DIM],
    pub hi: [f64; ACTION_DIM],
}

impl ActionNormalizer {
    pub fn identity() -> Self {
        Self {
            lo: [-1.0; ACTION_DIM],
            hi: [1.0; ACTION_DIM],
        }
    }

    pub fn fit<'a>(actions: impl IntoIterator<Item = &'a Action>) -> Result<Self> {
        let mut lo = [f64::INFINITY; ACTION_DIM];
        let mut hi = [f64::NEG_INFINITY; ACTION_DIM];
        let mut any = false;
        for a in actions {
            any = true;
            for (i, v) in a.to_array().iter().enumerate() {
                lo[i] = lo[i].min(*v);
                hi[i] = hi[i].max(*v);
            }
        }
        if !any {
            return Err(Error::validation("cannot fit a normalizer to zero actions"));
        }
        Ok(Self { lo, hi })
    }

    fn degenerate(&self, i: usize) -> bool {
        self.hi[i] - self.lo[i] < 1e-12
    }

    pub fn normalize(&self, a: &Action) -> [f64; ACTION_DIM] {
        let v = a.to_array();
        std::array::from_fn(|i| {
            if self.degenerate(i) {
                0.0
            } else {
                2.0 * (v[i] - self.lo[i]) / (self.hi[i] - self.lo[i]) - 1.0
            }
        })
    }

    pub fn denormalize(&self, x: &[f64]) -> [f64; ACTION_DIM] {
        std::array::from_fn(|i| {
            if self.degenerate(i) {
                self.lo[i]
            } else {
                self.lo[i] + 0.5 * (x[i] + 1.0) * (self.hi[i] - self.lo[i])
            }
        })
    }
}

/// A training pair: fixed observation features and a normalized flattened chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Features,
    pub chunk: Vec<f64>,
}

/// Random draws behind one loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Draws {
    pub keep: Vec<Keep>,
    pub k: Vec<usize>,
    /// `batch × chunk_dim`
    pub eps: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub net_grad: Vec<f64>,
    pub proprio_grad: Vec<f64>,
    /// Gradient with respect to the unmasked embedding inputs, per row.
    pub embedding_grad: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub cfg: PolicyConfig,
    pub stack: ConditioningStack,
    pub net: Mlp,
    pub schedule: NoiseSchedule,
    pub normalizer: ActionNormalizer,
}

pub fn mse(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> f64 {
    let d = &pred - &target;
    d.mapv(|v| v * v).mean().unwrap_or(0.0)
}

impl Policy {
    pub fn new(cfg: PolicyConfig, normalizer: ActionNormalizer) -> Result<Self> {
        cfg.validate()?;
        let stack = ConditioningStack::new(cfg.stack, cfg.seed)?;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(cfg.seed ^ 0x6e65_74);
        let net = Mlp::new(&cfg.net_widths(), Activation::Gelu, &mut rng)?;
        let schedule = build_schedule(cfg.steps, cfg.schedule)?;
        Ok(Self {
            cfg,
            stack,
            net,
            schedule,
            normalizer,
        })
    }

    pub fn kind(&self) -> PolicyKind {
        self.cfg.kind
    }

    pub fn chunk_dim(&self) -> usize {
        self.cfg.chunk_dim()
    }

    pub fn is_finite(&self) -> bool {
        self.net.is_finite() && self.stack.proprio_mlp.is_finite()
    }

    fn time_embedding(&self, k: usize) -> Vec<f64> {
        sinusoidal_embedding(k as f64, self.cfg.time_dim, 4.0 * self.cfg.steps as f64)
    }

    fn net_input(&self, emb: &Array2<f64>, noisy: Option<&Array2<f64>>, ks: &[usize]) -> Array2<f64> {
        match (self.cfg.kind, noisy) {
            (PolicyKind::Diffusion, Some(x)) => {
                let n = emb.nrows();
                let (e, c) = (emb.ncols(), x.ncols());
                let mut input = Array2::zeros((n, e + c + self.cfg.time_dim));
                input.slice_mut(s![.., ..e]).assign(emb);
                input.slice_mut(s![.., e..e + c]).assign(x);
                for (i, k) in ks.iter().enumerate() {
                    let t = self.time_embedding(*k);
                    for (j, v) in t.iter().enumerate() {
                        input[[i, e + c + j]] = *v;
                    }
                }
                input
            }
            _ => emb.clone(),
        }
    }

    /// Draw masks, steps and noise for a batch.
    pub fn draw<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Draws {
        let keep = (0..batch).map(|_| Keep::draw(&self.cfg.stack.mask, rng)).collect();
        let k = (0..batch).map(|_| rng.random_range(1..=self.cfg.steps)).collect();
        let eps = Array2::from_shape_simple_fn((batch, self.chunk_dim()), || rng.sample::<f64, _>(StandardNormal));
        Draws { keep, k, eps }
    }

    /// Mean squared error between the network's clean-chunk estimate and the
    /// target chunk, with gradients for every trainable parameter.
    pub fn loss_with_draws(&self, batch: &[&Example], draws: &Draws) -> Result<LossOutput> {
        let n = batch.len();
        if n == 0 {
            return Err(Error::validation("empty batch"));
        }
        let d = self.chunk_dim();
        let feats: Vec<&Features> = batch.iter().map(|e| &e.features).collect();
        let (emb, pcache) = self.stack.embed(&feats, &draws.keep)?;
        let mut target = Array2::zeros((n, d));
        for (i, ex) in batch.iter().enumerate() {
            if ex.chunk.len() != d {
                return Err(Error::DimensionMismatch {
                    what: "action chunk",
                    expected: d,
                    actual: ex.chunk.len(),
                });
            }
            target.row_mut(i).assign(&ndarray::ArrayView1::from(&ex.chunk[..]));
        }
        let noisy = match self.cfg.kind {
            PolicyKind::Diffusion => {
                let mut x = Array2::zeros((n, d));
                for i in 0..n {
                    let (sa, sn) = self.schedule.noise_coefficients(draws.k[i]);
                    let row = &target.row(i) * sa + &draws.eps.row(i) * sn;
                    x.row_mut(i).assign(&row);
                }
                Some(x)
            }
            PolicyKind::Regression => None,
        };
        let input = self.net_input(&emb, noisy.as_ref(), &draws.k);
        let (pred, cache) = self.net.forward_cached(input.view())?;
        let loss = mse(pred.view(), target.view());
        if !loss.is_finite() {
            return Err(Error::TrainingFault {
                step: 0,
                reason: "non-finite loss".into(),
            });
        }
        let upstream = (&pred - &target) * (2.0 / (n * d) as f64);
        let (net_grad, input_grad) = self.net.backward(&cache, upstream.view())?;
        let e = self.stack.embedding_dim();
        let mut embedding_grad = input_grad.slice(s![.., ..e]).to_owned();
        let ps = self.stack.proprio_slice();
        for (i, k) in draws.keep.iter().enumerate() {
            let mut row = embedding_grad.row_mut(i);
            for j in self.stack.image_slice() {
                row[j] *= k.image;
            }
            for j in self.stack.text_slice() {
                row[j] *= k.text;
            }
            for j in ps.clone() {
                row[j] *= k.proprio;
            }
        }
        let p_up = embedding_grad.slice(s![.., ps]).to_owned();
        let (proprio_grad, _) = self.stack.proprio_mlp.backward(&pcache, p_up.view())?;
        Ok(LossOutput {
            loss,
            net_grad,
            proprio_grad,
            embedding_grad,
        })
    }

    pub fn denoising_loss<R: Rng + ?Sized>(&self, batch: &[&Example], rng: &mut R) -> Result<LossOutput> {
        let draws = self.draw(batch.len(), rng);
        self.loss_with_draws(batch, &draws)
    }

    /// Clean-chunk estimate at step `k` for `n` noisy rows sharing one embedding.
    fn denoise(&self, emb: &Array2<f64>, x: &Array2<f64>, k: usize) -> Result<Array2<f64>> {
        let n = x.nrows();
        let embs = emb.broadcast((n, emb.ncols())).expect("single row").to_owned();
        let ks = vec![k; n];
        let input = self.net_input(&embs, Some(x), &ks);
        let mut out = self.net.forward(input.view())?;
        out.mapv_inplace(|v| v.clamp(-1.0, 1.0));
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::SamplingFault {
                step: k,
                reason: "non-finite clean estimate".into(),
            });
        }
        Ok(out)
    }

    /// `n` normalized chunks (`n × chunk_dim`, values in `[-1, 1]`) for one
    /// observation's features.
    pub fn sample_normalized<R: Rng + ?Sized>(
        &self,
        feats: &Features,
        sampler: Sampler,
        n: usize,
        rng: &mut R,
    ) -> Result<Array2<f64>> {
        let (emb, _) = self.stack.embed(&[feats], &[Keep::ALL])?;
        let d = self.chunk_dim();
        if self.cfg.kind == PolicyKind::Regression {
            let out = self.net.forward(emb.view())?;
            let row = out.mapv(|v| v.clamp(-1.0, 1.0));
            return Ok(row.broadcast((n, d)).expect("single row").to_owned());
        }
        let mut x = Array2::from_shape_simple_fn((n, d), || rng.sample::<f64, _>(StandardNormal));
        match sampler {
            Sampler::Ancestral => {
                for k in (1..=self.cfg.steps).rev() {
                    let x0 = self.denoise(&emb, &x, k)?;
                    let z: Vec<f64> = if k > 1 {
                        (0..n * d).map(|_| rng.sample(StandardNormal)).collect()
                    } else {
                        vec![0.0; n * d]
                    };
                    let next = self.schedule.posterior_step(
                        k,
                        x0.as_slice().expect("standard layout"),
                        x.as_slice().expect("standard layout"),
                        &z,
                    )?;
                    x = Array2::from_shape_vec((n, d), next).expect("sized");
                }
            }
            Sampler::FastDeterministic => {
                x = self.fast_sample(&emb, x)?;
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SamplingFault {
                step: 0,
                reason: "non-finite sample".into(),
            });
        }
        x.mapv_inplace(|v| v.clamp(-1.0, 1.0));
        Ok(x)
    }

    /// Sub-grid `K = k₀ > k₁ > … ≥ 1`, then 0. After the pure-noise start the
    /// points are spread evenly in log signal-to-noise ratio between steps
    /// `0.95 K` and `0.1 K`; the cosine tails add little per evaluation.
    pub fn fast_grid(&self) -> Vec<usize> {
        let (big_k, steps) = (self.cfg.steps, self.cfg.fast_steps);
        let ab = &self.schedule.alpha_bar;
        let lambda = |k: usize| 0.5 * (ab[k] / (1.0 - ab[k])).ln();
        let mut grid = vec![big_k];
        if steps > 1 && big_k > 1 {
            let k_hi = ((0.95 * big_k as f64).round() as usize).clamp(1, big_k - 1);
            let k_lo = ((0.1 * big_k as f64).round() as usize).clamp(1, k_hi);
            let (hi, lo) = (lambda(k_lo), lambda(k_hi));
            for i in 0..steps - 1 {
                let target = lo + (hi - lo) * i as f64 / (steps - 2).max(1) as f64;
                let k = (1..big_k)
                    .min_by(|a, b| (lambda(*a) - target).abs().total_cmp(&(lambda(*b) - target).abs()))
                    .expect("non-empty");
                if k < *grid.last().expect("non-empty") {
                    grid.push(k);
                }
            }
        }
        grid.push(0);
        grid
    }

    /// Second-order multistep solver in clean-sample form, with a
    /// first-order final step onto `k = 0`.
    fn fast_sample(&self, emb: &Array2<f64>, mut x: Array2<f64>) -> Result<Array2<f64>> {
        let grid = self.fast_grid();
        let ab = &self.schedule.alpha_bar;
        let alpha = |k: usize| ab[k].sqrt();
        let sigma = |k: usize| (1.0 - ab[k]).sqrt();
        let lambda = |k: usize| (alpha(k) / sigma(k)).ln();
        let mut prev: Option<(Array2<f64>, f64)> = None;
        for w in grid.windows(2) {
            let (s, t) = (w[0], w[1]);
            let x0 = self.denoise(emb, &x, s)?;
            if t == 0 {
                return Ok(x0);
            }
            let h = lambda(t) - lambda(s);
            let d = match &prev {
                Some((p, h_prev)) => {
                    let r = h_prev / h;
                    &x0 * (1.0 + 0.5 / r) - p * (0.5 / r)
                }
                None => x0.clone(),
            };
            x = &x * (sigma(t) / sigma(s)) - &d * (alpha(t) * ((-h).exp() - 1.0));
            prev = Some((x0, h));
        }
        Ok(x)
    }

    /// Denormalize a flat normalized chunk into bounded actions.
    pub fn to_actions(&self, chunk: &[f64], bounds: &ActionBounds) -> Result<Vec<Action>> {
        chunk
            .chunks(ACTION_DIM)
            .map(|a| Action::from_slice(&self.normalizer.denormalize(a)).map(|a| a.clamped(bounds)))
            .collect()
    }

    /// One action chunk for an observation.
    pub fn act<R: Rng + ?Sized>(
        &self,
        obs: &Observation,
        sampler: Sampler,
        bounds: &ActionBounds,
        rng: &mut R,
    ) -> Result<Vec<Action>> {
        let f = self.stack.featurize(obs)?;
        let x = self.sample_normalized(&f, sampler, 1, rng)?;
        self.to_actions(x.row(0).as_slice().expect("contiguous"), bounds)
    }

    /// Mean of rows, handy for comparing samplers.
    pub fn mean_row(x: &Array2<f64>) -> Vec<f64> {
        x.mean_axis(Axis(0)).expect("non-empty").to_vec()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r).map_err(|e| match e {
            Error::Io(_) | Error::Validation(_) | Error::Json(_) => Error::format(path, e.to_string()),
            other => other,
        })
    }

    /// Layout: magic `CPOL`, u32 version, u64 meta length, meta JSON
    /// (config + normalizer), then image projection, text table and Fourier
    /// matrices, the proprio MLP and the denoiser MLP.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let meta = serde_json::to_vec(&CheckpointMeta {
            config: self.cfg.clone(),
            normalizer: self.normalizer.clone(),
        })?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(meta.len() as u64).to_le_bytes())?;
        w.write_all(&meta)?;
        nn::write_matrix(w, &self.stack.image_proj.view())?;
        nn::write_matrix(w, &self.stack.text_table.view())?;
        self.stack.fourier.write_to(w)?;
        self.stack.proprio_mlp.write_to(w)?;
        self.net.write_to(w)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        nn::expect_magic(r, CHECKPOINT_MAGIC)?;
        let version = nn::read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::validation(format!("unsupported checkpoint version {version}")));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len);
        if len > 1 << 20 {
            return Err(Error::validation("checkpoint metadata too large"));
        }
        let mut meta = vec![0u8; len as usize];
        r.read_exact(&mut meta)?;
        let meta: CheckpointMeta = serde_json::from_slice(&meta)?;
        let cfg = meta.config;
        cfg.validate()?;
        let image_proj = nn::read_matrix(r)?;
        let text_table = nn::read_matrix(r)?;
        let fourier = crate::nn::FourierFeatureMap::read_from(r)?;
        let proprio_mlp = Mlp::read_from(r)?;
        let net = Mlp::read_from(r)?;
        let sc = &cfg.stack;
        let consistent = image_proj.dim() == (sc.image_dim, super::conditioning::PATCH_GRID.pow(2))
            && text_table.dim() == (sc.text_dim, sc.text_buckets)
            && fourier.in_dim() == sc.proprio_in
            && fourier.out_dim() == 2 * sc.proprio_freqs
            && proprio_mlp.widths() == [fourier.out_dim(), sc.proprio_hidden, sc.proprio_dim]
            && net.widths() == cfg.net_widths().as_slice();
        if !consistent {
            return Err(Error::validation("checkpoint tensors do not match its configuration"));
        }
        let schedule = build_schedule(cfg.steps, cfg.schedule)?;
        Ok(Self {
            stack: ConditioningStack {
                cfg: *sc,
                image_proj,
                text_table,
                fourier,
                proprio_mlp,
            },
            net,
            schedule,
            normalizer: meta.normalizer,
            cfg,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    config: PolicyConfig,
    normalizer: ActionNormalizer,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizer_round_trip_and_degenerate_dims() {
        let a = Action {
            dx: -10.0,
            dy: 5.0,
            gripper: 1.0,
            ..Action::IDLE
        };
        let b = Action {
            dx: 30.0,
            dy: -5.0,
            gripper: 1.0,
            ..Action::IDLE
        };
        let n = ActionNormalizer::fit([&a, &b]).unwrap();
        let x = n.normalize(&a);
        assert_eq!(x[0], -1.0);
        assert_eq!(x[6], 0.0);
        let back = n.denormalize(&x);
        assert!((back[0] + 10.0).abs() < 1e-12 && back[6] == 1.0);
    }

    #[test]
    fn fast_grid_is_strictly_decreasing() {
        let p = Policy::new(PolicyConfig::default(), ActionNormalizer::identity()).unwrap();
        let g = p.fast_grid();
        assert_eq!(g, vec![100, 95, 80, 39, 10, 0]);
        let small = Policy::new(
            PolicyConfig {
                steps: 3,
                fast_steps: 3,
                ..PolicyConfig::default()
            },
            ActionNormalizer::identity(),
        )
        .unwrap();
        let g = small.fast_grid();
        assert!(g.windows(2).all(|w| w[1] < w[0]) && *g.last().unwrap() == 0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = PolicyConfig {
            hidden: vec![16],
            ..PolicyConfig::default()
        };
        let p = Policy::new(cfg, ActionNormalizer::identity()).unwrap();
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        let q = Policy::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(p, q);
    }
}
