//! Small dense-network core: Fourier feature maps, GELU multilayer
//! perceptrons with analytic backprop, and Adam.
//!
//! Parameters of an [`Mlp`] live in one flat vector, layer by layer, each
//! layer stored as its weight matrix (row-major, `out × in`) followed by its
//! bias. Gradients use the same layout, which keeps the optimizer trivial.

use std::f64::consts::PI;
use std::io::{Read, Write};

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MLP_MAGIC: &[u8; 4] = b"MLP1";
const MATRIX_MAGIC: &[u8; 4] = b"MAT1";

/// Random Fourier features: `[sin(2π Fᵀx), cos(2π Fᵀx)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierFeatureMap {
    /// `in_dim × n_freq`
    pub freqs: Array2<f64>,
}

impl FourierFeatureMap {
    pub fn new<R: Rng + ?Sized>(in_dim: usize, n_freq: usize, sigma: f64, rng: &mut R) -> Self {
        let freqs = Array2::from_shape_simple_fn((in_dim, n_freq), || {
            sigma * rng.sample::<f64, _>(StandardNormal)
        });
        Self { freqs }
    }

    pub fn in_dim(&self) -> usize {
        self.freqs.nrows()
    }

    pub fn out_dim(&self) -> usize {
        2 * self.freqs.ncols()
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("fourier input", self.in_dim(), x.len())?;
        let proj = ArrayView1::from(x).dot(&self.freqs);
        let n = proj.len();
        let mut out = vec![0.0; 2 * n];
        for (i, p) in proj.iter().enumerate() {
            let a = 2.0 * PI * p;
            out[i] = a.sin();
            out[n + i] = a.cos();
        }
        Ok(out)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        write_matrix(w, &self.freqs.view())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        Ok(Self { freqs: read_matrix(r)? })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// Tanh approximation of GELU.
    Gelu,
    Identity,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl Activation {
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()),
            Activation::Identity => x,
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
            }
            Activation::Identity => 1.0,
        }
    }

    fn code(&self) -> u8 {
        match self {
            Activation::Gelu => 1,
            Activation::Identity => 0,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            1 => Some(Activation::Gelu),
            0 => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Dense network; `activation` on hidden layers, identity on the output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

/// Per-layer values kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Array2<f64>>,
}

fn check_dim(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { what, expected, actual });
    }
    Ok(())
}

impl Mlp {
    /// Seeded Gaussian weights with std `1/√fan_in`, zero biases.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(widths, activation)?;
        for l in 0..net.n_layers() {
            let (o, i) = (widths[l + 1], widths[l]);
            let std = 1.0 / (i as f64).sqrt();
            let off = net.offset(l);
            for p in &mut net.params[off..off + o * i] {
                *p = std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Ok(net)
    }

    pub fn zeros(widths: &[usize], activation: Activation) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::validation(format!("invalid layer widths {widths:?}")));
        }
        let n = widths.windows(2).map(|w| w[1] * w[0] + w[1]).sum();
        Ok(Self {
            widths: widths.to_vec(),
            activation,
            params: vec![0.0; n],
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn in_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.widths.last().expect("at least two widths")
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offset(&self, layer: usize) -> usize {
        self.widths[..=layer]
            .windows(2)
            .map(|w| w[1] * w[0] + w[1])
            .sum()
    }

    /// Weight (`out × in`) and bias views of one layer.
    pub fn layer(&self, l: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let (o, i) = (self.widths[l + 1], self.widths[l]);
        let off = self.offset(l);
        let w = ArrayView2::from_shape((o, i), &self.params[off..off + o * i]).expect("layout");
        let b = ArrayView1::from(&self.params[off + o * i..off + o * i + o]);
        (w, b)
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Forward a batch (`rows × in_dim`).
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, x.len()), x).expect("row");
        Ok(self.forward(x)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        check_dim("mlp input", self.in_dim(), x.ncols())?;
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.n_layers()),
            pre: Vec::with_capacity(self.n_layers()),
        };
        let mut h = x.to_owned();
        for l in 0..self.n_layers() {
            let (w, b) = self.layer(l);
            let z = h.dot(&w.t()) + &b;
            let act = if l + 1 == self.n_layers() {
                Activation::Identity
            } else {
                self.activation
            };
            let next = z.mapv(|v| act.apply(v));
            cache.inputs.push(h);
            cache.pre.push(z);
            h = next;
        }
        Ok((h, cache))
    }

    /// Reverse-mode gradients of `sum(output ⊙ upstream)`: flat parameter
    /// gradient (same layout as the parameters) and the input gradient.
    pub fn backward(&self, cache: &ForwardCache, upstream: ArrayView2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
        check_dim("mlp upstream", self.out_dim(), upstream.ncols())?;
        let rows = cache.inputs.first().map_or(0, |x| x.nrows());
        check_dim("mlp upstream rows", rows, upstream.nrows())?;
        let mut grad = vec![0.0; self.params.len()];
        let mut g = upstream.to_owned();
        for l in (0..self.n_layers()).rev() {
            if l + 1 != self.n_layers() {
                let act = self.activation;
                g.zip_mut_with(&cache.pre[l], |gi, zi| *gi *= act.derivative(*zi));
            }
            let (w, _) = self.layer(l);
            let (o, i) = (self.widths[l + 1], self.widths[l]);
            let off = self.offset(l);
            let dw = g.t().dot(&cache.inputs[l]);
            grad[off..off + o * i].copy_from_slice(dw.as_slice().expect("standard layout"));
            let db = g.sum_axis(Axis(0));
            grad[off + o * i..off + o * i + o].copy_from_slice(db.as_slice().expect("contiguous"));
            g = g.dot(&w);
        }
        Ok((grad, g))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MLP_MAGIC)?;
        w.write_all(&(self.widths.len() as u32).to_le_bytes())?;
        for width in &self.widths {
            w.write_all(&(*width as u32).to_le_bytes())?;
        }
        w.write_all(&[self.activation.code()])?;
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        expect_magic(r, MLP_MAGIC)?;
        let n = read_u32(r)? as usize;
        if !(2..=64).contains(&n) {
            return Err(Error::validation(format!("implausible layer count {n}")));
        }
        let widths = (0..n)
            .map(|_| read_u32(r).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let mut code = [0u8];
        r.read_exact(&mut code)?;
        let act = Activation::from_code(code[0])
            .ok_or_else(|| Error::validation(format!("unknown activation code {}", code[0])))?;
        let mut net = Self::zeros(&widths, act)?;
        for p in net.params.iter_mut() {
            *p = read_f64(r)?;
        }
        if !net.is_finite() {
            return Err(Error::validation("checkpoint holds non-finite parameters"));
        }
        Ok(net)
    }
}

/// Adam with bias-corrected moments:
/// `m ← β₁m + (1−β₁)g`, `v ← β₂v + (1−β₂)g²`,
/// `p ← p − lr · m̂ / (√v̂ + ε)` with `m̂ = m/(1−β₁ᵗ)`, `v̂ = v/(1−β₂ᵗ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_dim("optimizer params", self.m.len(), params.len())?;
        check_dim("optimizer grads", self.m.len(), grads.len())?;
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::TrainingFault {
                step: self.step as usize,
                reason: format!("non-finite gradient at parameter {i}"),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Sinusoidal embedding of a scalar, `dim/2` geometric frequencies from 1 to `max_period`.
pub fn sinusoidal_embedding(x: f64, dim: usize, max_period: f64) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let f = (-(max_period.ln()) * i as f64 / half as f64).exp();
        out[i] = (x * f).sin();
        out[half + i] = (x * f).cos();
    }
    out
}

pub(crate) fn write_matrix<W: Write>(w: &mut W, m: &ArrayView2<f64>) -> Result<()> {
    w.write_all(MATRIX_MAGIC)?;
    w.write_all(&(m.nrows() as u32).to_le_bytes())?;
    w.write_all(&(m.ncols() as u32).to_le_bytes())?;
    for v in m.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_matrix<R: Read>(r: &mut R) -> Result<Array2<f64>> {
    expect_magic(r, MATRIX_MAGIC)?;
    let rows = read_u32(r)? as usize;
    let cols = read_u32(r)? as usize;
    if rows.saturating_mul(cols) > 1 << 26 {
        return Err(Error::validation("matrix block too large"));
    }
    let data = (0..rows * cols).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?;
    Ok(Array2::from_shape_vec((rows, cols), data).expect("sized"))
}

pub(crate) fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<()> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    if &buf != magic {
        return Err(Error::validation(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&buf),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
