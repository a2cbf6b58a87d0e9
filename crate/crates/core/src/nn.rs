//! Fully connected Q-network: rectified hidden layers, linear output head,
//! hand-written backpropagation, Adam, and the DQNC checkpoint format.
//!
//! Weights are stored input-major (`weights[j * out_dim + k]` connects input
//! `j` to output `k`) so a forward pass over a sparse input touches only the
//! rows of its nonzero entries. The same row sparsity is carried through the
//! gradient buffers and Adam, which skips rows whose moments and gradient
//! are all exactly zero (their update is exactly zero).

use std::fmt::Debug;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::features::StateVector;

/// Output widths of the full-size network (hidden layers then the 12-way head).
pub const PAPER_HIDDEN: [usize; 3] = [4096, 4096, 512];
/// Reduced hidden widths for CPU-scale runs.
pub const DESK_HIDDEN: [usize; 3] = [512, 512, 128];

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

const CHECKPOINT_MAGIC: &[u8; 4] = b"DQNC";
const CHECKPOINT_VERSION: u32 = 1;
const MAX_LAYER_PARAMS: u64 = 1 << 31;

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_NET_ID.fetch_add(1, Ordering::Relaxed)
}

/// Parameter element type. `f32` for real networks, `f64` for gradient checks.
pub trait Scalar: Copy + Default + PartialEq + PartialOrd + Debug + Send + Sync + 'static {
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
    /// One Adam update over parallel slices, in the type's own precision.
    fn adam_span(params: &mut [Self], m: &mut [Self], v: &mut [Self], g: &[Self], k: AdamCoeffs);
}

/// Per-step Adam constants: `step_size = lr / (1 - beta1^t)` and
/// `inv_sqrt_c2 = 1 / sqrt(1 - beta2^t)`.
#[derive(Clone, Copy, Debug)]
pub struct AdamCoeffs {
    pub step_size: f64,
    pub inv_sqrt_c2: f64,
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            fn adam_span(params: &mut [Self], m: &mut [Self], v: &mut [Self], g: &[Self], k: AdamCoeffs) {
                let (b1, b2) = (ADAM_BETA1 as $t, ADAM_BETA2 as $t);
                let (step, isc, eps) = (k.step_size as $t, k.inv_sqrt_c2 as $t, ADAM_EPSILON as $t);
                for (((p, m), v), &g) in params.iter_mut().zip(m).zip(v).zip(g) {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= step * *m / (v.sqrt() * isc + eps);
                    // Subnormal moments are flushed; decaying rows otherwise
                    // crawl through slow denormal arithmetic.
                    if m.abs() < <$t>::MIN_POSITIVE {
                        *m = 0.0;
                    }
                    if *v < <$t>::MIN_POSITIVE {
                        *v = 0.0;
                    }
                }
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

/// Anything that can be fed to the first layer.
pub trait InputVector<T> {
    fn input_len(&self) -> usize;
    /// Visits nonzero entries in ascending index order.
    fn for_each_nonzero(&self, f: &mut dyn FnMut(usize, T));
}

impl<T: Scalar> InputVector<T> for [T] {
    fn input_len(&self) -> usize {
        self.len()
    }

    fn for_each_nonzero(&self, f: &mut dyn FnMut(usize, T)) {
        for (i, &v) in self.iter().enumerate() {
            if v != T::default() {
                f(i, v);
            }
        }
    }
}

impl<T: Scalar> InputVector<T> for Vec<T> {
    fn input_len(&self) -> usize {
        self.len()
    }

    fn for_each_nonzero(&self, f: &mut dyn FnMut(usize, T)) {
        self.as_slice().for_each_nonzero(f)
    }
}

impl InputVector<f32> for StateVector {
    fn input_len(&self) -> usize {
        self.len()
    }

    fn for_each_nonzero(&self, f: &mut dyn FnMut(usize, f32)) {
        for (i, v) in self.nonzero() {
            f(i, v);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<T>,
    bias: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    pub fn new(in_dim: usize, out_dim: usize, weights: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::param("layer", "dimensions must be positive"));
        }
        if weights.len() != in_dim * out_dim {
            return Err(Error::dims("layer weights", in_dim * out_dim, weights.len()));
        }
        if bias.len() != out_dim {
            return Err(Error::dims("layer bias", out_dim, bias.len()));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
        })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![T::default(); in_dim * out_dim],
            bias: vec![T::default(); out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [T] {
        &mut self.bias
    }

    fn row(&self, j: usize) -> &[T] {
        &self.weights[j * self.out_dim..(j + 1) * self.out_dim]
    }

    /// `bias + x·W` accumulated in f64, visiting only nonzero inputs.
    fn affine(&self, visit: impl FnOnce(&mut dyn FnMut(usize, T)), acc: &mut Vec<f64>) {
        acc.clear();
        acc.extend(self.bias.iter().map(|b| b.to_f64()));
        visit(&mut |j, x| {
            let x = x.to_f64();
            for (a, w) in acc.iter_mut().zip(self.row(j)) {
                *a += x * w.to_f64();
            }
        });
    }
}

/// Multilayer perceptron; every layer but the last is followed by a rectifier.
#[derive(Clone, Debug)]
pub struct Mlp<T> {
    layers: Vec<Layer<T>>,
    id: u64,
}

pub type MlpNetwork = Mlp<f32>;

impl<T: Scalar> PartialEq for Mlp<T> {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Intermediate values kept by [`Mlp::forward_cached`] for [`Mlp::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    net_id: u64,
    input: Vec<(u32, T)>,
    /// Post-activation output of every layer except the last.
    hidden: Vec<Vec<T>>,
}

impl<T: Scalar> Mlp<T> {
    pub fn from_layers(layers: Vec<Layer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::param("layers", "network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::dims("consecutive layer widths", pair[0].out_dim, pair[1].in_dim));
            }
        }
        Ok(Self { layers, id: fresh_id() })
    }

    /// He-normal weights (variance 2 / fan_in), zero biases. `dims` lists
    /// every width from input to output.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::param("dims", format!("need >= 2 positive widths, got {dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
                let weights = (0..fan_in * fan_out).map(|_| T::from_f64(normal.sample(&mut rng))).collect();
                Layer {
                    in_dim: fan_in,
                    out_dim: fan_out,
                    weights,
                    bias: vec![T::default(); fan_out],
                }
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    /// Mutable access; invalidates outstanding forward caches.
    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        self.id = fresh_id();
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").out_dim
    }

    /// Layer widths from input to output.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.out_dim))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.to_f64().is_finite()))
    }

    fn check_input<X: InputVector<T> + ?Sized>(&self, x: &X) -> Result<()> {
        if x.input_len() != self.input_dim() {
            return Err(Error::dims("network input length", self.input_dim(), x.input_len()));
        }
        Ok(())
    }

    pub fn forward<X: InputVector<T> + ?Sized>(&self, x: &X) -> Result<Vec<T>> {
        self.check_input(x)?;
        let mut acc = Vec::new();
        let mut current: Vec<T> = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if i == 0 {
                layer.affine(|f| x.for_each_nonzero(f), &mut acc);
            } else {
                layer.affine(|f| current.as_slice().for_each_nonzero(f), &mut acc);
            }
            let last = i + 1 == self.layers.len();
            current = acc
                .iter()
                .map(|&v| T::from_f64(if last { v } else { v.max(0.0) }))
                .collect();
        }
        Ok(current)
    }

    pub fn forward_cached<X: InputVector<T> + ?Sized>(&self, x: &X) -> Result<(Vec<T>, ForwardCache<T>)> {
        self.check_input(x)?;
        let mut input = Vec::new();
        x.for_each_nonzero(&mut |j, v| input.push((j as u32, v)));
        let mut acc = Vec::new();
        let mut hidden: Vec<Vec<T>> = Vec::with_capacity(self.layers.len() - 1);
        let mut output = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match hidden.last() {
                None => layer.affine(
                    |f| {
                        for &(j, v) in &input {
                            f(j as usize, v);
                        }
                    },
                    &mut acc,
                ),
                Some(prev) => layer.affine(|f| prev.as_slice().for_each_nonzero(f), &mut acc),
            }
            if i + 1 == self.layers.len() {
                output = acc.iter().map(|&v| T::from_f64(v)).collect();
            } else {
                hidden.push(acc.iter().map(|&v| T::from_f64(v.max(0.0))).collect());
            }
        }
        Ok((
            output,
            ForwardCache {
                net_id: self.id,
                input,
                hidden,
            },
        ))
    }

    pub fn backward(&self, cache: &ForwardCache<T>, output_grad: &[T]) -> Result<GradientSet<T>> {
        let mut grads = GradientSet::zeros_like(self);
        self.accumulate_backward(cache, output_grad, &mut grads)?;
        Ok(grads)
    }

    /// Adds the parameter gradients of `output_grad · ∂output/∂θ` into `grads`.
    pub fn accumulate_backward(
        &self,
        cache: &ForwardCache<T>,
        output_grad: &[T],
        grads: &mut GradientSet<T>,
    ) -> Result<()> {
        if cache.net_id != self.id {
            return Err(Error::Protocol("forward cache is stale for this network".into()));
        }
        if output_grad.len() != self.output_dim() {
            return Err(Error::dims("output gradient length", self.output_dim(), output_grad.len()));
        }
        grads.check_shape(self)?;
        let mut delta: Vec<f64> = output_grad.iter().map(|g| g.to_f64()).collect();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let g = &mut grads.layers[li];
            for (b, d) in g.bias.iter_mut().zip(&delta) {
                *b = T::from_f64(b.to_f64() + d);
            }
            let mut visit_row = |j: usize, a: f64| {
                g.rows_touched[j] = true;
                let row = &mut g.weights[j * layer.out_dim..(j + 1) * layer.out_dim];
                for (w, d) in row.iter_mut().zip(&delta) {
                    *w = T::from_f64(w.to_f64() + a * d);
                }
            };
            if li == 0 {
                for &(j, a) in &cache.input {
                    visit_row(j as usize, a.to_f64());
                }
                break;
            }
            let prev = &cache.hidden[li - 1];
            for (j, a) in prev.iter().enumerate() {
                if *a != T::default() {
                    visit_row(j, a.to_f64());
                }
            }
            // Back through the rectifier: inactive units pass no gradient.
            delta = prev
                .iter()
                .enumerate()
                .map(|(j, a)| {
                    if a.to_f64() > 0.0 {
                        layer.row(j).iter().zip(&delta).map(|(w, d)| w.to_f64() * d).sum()
                    } else {
                        0.0
                    }
                })
                .collect();
        }
        Ok(())
    }
}

/// Convenience for [`Mlp::init`] with `input_dim -> hidden.. -> 12`.
pub fn init_network(input_dim: usize, hidden: &[usize], seed: u64) -> Result<MlpNetwork> {
    let mut dims = vec![input_dim];
    dims.extend_from_slice(hidden);
    dims.push(crate::actions::NUM_ACTIONS);
    Mlp::init(&dims, seed)
}

#[derive(Clone, Debug)]
pub struct LayerGrad<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    /// Input rows whose weight gradient may be nonzero.
    rows_touched: Vec<bool>,
}

/// Compares values only; the touched-row flags are a skipping hint.
impl<T: PartialEq> PartialEq for LayerGrad<T> {
    fn eq(&self, other: &Self) -> bool {
        self.weights == other.weights && self.bias == other.bias
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet<T> {
    layers: Vec<LayerGrad<T>>,
}

impl<T: Scalar> GradientSet<T> {
    pub fn zeros_like(net: &Mlp<T>) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![T::default(); l.weights.len()],
                    bias: vec![T::default(); l.out_dim],
                    rows_touched: vec![false; l.in_dim],
                })
                .collect(),
        }
    }

    pub fn layers(&self) -> &[LayerGrad<T>] {
        &self.layers
    }

    fn check_shape(&self, net: &Mlp<T>) -> Result<()> {
        let ok = self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.weights.len() == l.weights.len() && g.bias.len() == l.bias.len());
        if ok {
            Ok(())
        } else {
            Err(Error::dims("gradient shapes", format!("{:?}", net.dims()), "different topology"))
        }
    }

    /// Resets to zero, touching only rows that may be nonzero.
    pub fn clear(&mut self) {
        for g in &mut self.layers {
            let width = g.bias.len();
            for (j, touched) in g.rows_touched.iter_mut().enumerate() {
                if *touched {
                    g.weights[j * width..(j + 1) * width].fill(T::default());
                    *touched = false;
                }
            }
            g.bias.fill(T::default());
        }
    }

    fn for_each_live(&self, mut f: impl FnMut(T)) {
        for g in &self.layers {
            let width = g.bias.len();
            for (j, &touched) in g.rows_touched.iter().enumerate() {
                if touched {
                    g.weights[j * width..(j + 1) * width].iter().copied().for_each(&mut f);
                }
            }
            g.bias.iter().copied().for_each(&mut f);
        }
    }

    pub fn global_norm(&self) -> f64 {
        let mut sq = 0.0;
        self.for_each_live(|v| sq += v.to_f64() * v.to_f64());
        sq.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.for_each_live(|v| ok &= v.to_f64().is_finite());
        ok
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.layers {
            let width = g.bias.len();
            for (j, &touched) in g.rows_touched.iter().enumerate() {
                if touched {
                    for w in &mut g.weights[j * width..(j + 1) * width] {
                        *w = T::from_f64(w.to_f64() * factor);
                    }
                }
            }
            for b in &mut g.bias {
                *b = T::from_f64(b.to_f64() * factor);
            }
        }
    }

    /// Rescales so the global L2 norm is at most `max_norm`; returns the
    /// norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm {
            self.scale(max_norm / norm);
        }
        norm
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    first: Vec<LayerGrad<T>>,
    second: Vec<LayerGrad<T>>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(net: &Mlp<T>) -> Self {
        let zeros = GradientSet::zeros_like(net).layers;
        Self {
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[LayerGrad<T>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[LayerGrad<T>] {
        &self.second
    }

    fn matches(&self, net: &Mlp<T>) -> bool {
        self.first.len() == net.layers.len()
            && self
                .first
                .iter()
                .zip(&self.second)
                .zip(&net.layers)
                .all(|((m, v), l)| m.weights.len() == l.weights.len() && v.weights.len() == l.weights.len())
    }

    /// Marks rows holding any nonzero moment (after loading from disk).
    fn refresh_active_rows(&mut self) {
        for (m, v) in self.first.iter_mut().zip(&mut self.second) {
            let width = m.bias.len();
            for j in 0..m.rows_touched.len() {
                let span = j * width..(j + 1) * width;
                let live = m.weights[span.clone()].iter().chain(&v.weights[span]).any(|x| *x != T::default());
                m.rows_touched[j] = live;
                v.rows_touched[j] = live;
            }
        }
    }
}

/// One bias-corrected Adam step with learning rate `lr`.
pub fn adam_update<T: Scalar>(net: &mut Mlp<T>, adam: &mut AdamState<T>, grads: &GradientSet<T>, lr: f64) -> Result<()> {
    grads.check_shape(net)?;
    if !adam.matches(net) {
        return Err(Error::dims("optimizer state", format!("{:?}", net.dims()), "different topology"));
    }
    adam.step += 1;
    let t = adam.step as i32;
    let k = AdamCoeffs {
        step_size: lr / (1.0 - ADAM_BETA1.powi(t)),
        inv_sqrt_c2: 1.0 / (1.0 - ADAM_BETA2.powi(t)).sqrt(),
    };
    net.id = fresh_id();
    for (((layer, g), m), v) in net
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut adam.first)
        .zip(&mut adam.second)
    {
        let width = layer.out_dim;
        for j in 0..layer.in_dim {
            if !(g.rows_touched[j] || m.rows_touched[j]) {
                continue;
            }
            m.rows_touched[j] = true;
            v.rows_touched[j] = true;
            let span = j * width..(j + 1) * width;
            T::adam_span(
                &mut layer.weights[span.clone()],
                &mut m.weights[span.clone()],
                &mut v.weights[span.clone()],
                &g.weights[span],
                k,
            );
        }
        T::adam_span(&mut layer.bias, &mut m.bias, &mut v.bias, &g.bias, k);
    }
    Ok(())
}

/// Step-decayed learning rate with a floor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub min: f64,
    pub decay: f64,
    pub decay_every: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            base: 1e-5,
            min: 1e-8,
            decay: 0.96,
            decay_every: 5000,
        }
    }
}

impl LrSchedule {
    pub fn lr_at(&self, iteration: u64) -> f64 {
        let periods = (iteration / self.decay_every.max(1)).min(i32::MAX as u64) as i32;
        (self.base * self.decay.powi(periods)).max(self.min)
    }
}

/// `max(1e-8, 1e-5 · 0.96^floor(iteration / 5000))`.
pub fn lr_at(iteration: u64) -> f64 {
    LrSchedule::default().lr_at(iteration)
}

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f32s(w: &mut impl Write, vs: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(vs.len() * 4);
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn truncated(field: &'static str) -> impl FnOnce(std::io::Error) -> Error {
    move |_| Error::format("DQNC", field, "file truncated")
}

fn get_u32(r: &mut impl Read, field: &'static str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated(field))?;
    Ok(u32::from_le_bytes(b))
}

fn get_f32s(r: &mut impl Read, n: usize, field: &'static str) -> Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf).map_err(truncated(field))?;
    Ok(buf.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect())
}

/// Serializes a network and, optionally, its optimizer state:
/// `"DQNC"`, u32 version, u32 layer count, per layer (u32 in, u32 out), per
/// layer input-major weights then bias as f32, u8 optimizer flag, then (if
/// set) first moments, second moments (same layout) and a u64 step count.
/// All little-endian.
pub fn write_checkpoint(mut w: impl Write, net: &MlpNetwork, adam: Option<&AdamState<f32>>) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    put_u32(&mut w, CHECKPOINT_VERSION)?;
    put_u32(&mut w, net.layers.len() as u32)?;
    for l in &net.layers {
        put_u32(&mut w, l.in_dim as u32)?;
        put_u32(&mut w, l.out_dim as u32)?;
    }
    for l in &net.layers {
        put_f32s(&mut w, &l.weights)?;
        put_f32s(&mut w, &l.bias)?;
    }
    match adam {
        None => w.write_all(&[0])?,
        Some(adam) => {
            if !adam.matches(net) {
                return Err(Error::dims("optimizer state", format!("{:?}", net.dims()), "different topology"));
            }
            w.write_all(&[1])?;
            for moments in [&adam.first, &adam.second] {
                for m in moments {
                    put_f32s(&mut w, &m.weights)?;
                    put_f32s(&mut w, &m.bias)?;
                }
            }
            w.write_all(&adam.step.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(mut r: impl Read) -> Result<(MlpNetwork, Option<AdamState<f32>>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated("magic"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::format("DQNC", "magic", format!("expected DQNC, got {magic:?}")));
    }
    let version = get_u32(&mut r, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format("DQNC", "version", format!("unsupported version {version}")));
    }
    let num_layers = get_u32(&mut r, "num_layers")? as usize;
    if num_layers == 0 || num_layers > 64 {
        return Err(Error::format("DQNC", "num_layers", format!("implausible layer count {num_layers}")));
    }
    let mut shapes = Vec::with_capacity(num_layers);
    for _ in 0..num_layers {
        let i = get_u32(&mut r, "in_dim")? as usize;
        let o = get_u32(&mut r, "out_dim")? as usize;
        if i == 0 || o == 0 || (i as u64) * (o as u64) > MAX_LAYER_PARAMS {
            return Err(Error::format("DQNC", "layer dims", format!("implausible layer {i}x{o}")));
        }
        shapes.push((i, o));
    }
    fn read_layers(r: &mut impl Read, shapes: &[(usize, usize)], field: &'static str) -> Result<Vec<Layer<f32>>> {
        shapes
            .iter()
            .map(|&(i, o)| {
                let weights = get_f32s(r, i * o, field)?;
                let bias = get_f32s(r, o, field)?;
                Layer::new(i, o, weights, bias)
            })
            .collect()
    }
    let layers = read_layers(&mut r, &shapes, "weights")?;
    let net = Mlp::from_layers(layers).map_err(|e| Error::format("DQNC", "layer dims", e.to_string()))?;
    if !net.is_finite() {
        return Err(Error::format("DQNC", "weights", "non-finite parameter"));
    }
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag).map_err(truncated("optimizer flag"))?;
    let adam = match flag[0] {
        0 => None,
        1 => {
            let to_grads = |ls: Vec<Layer<f32>>| -> Vec<LayerGrad<f32>> {
                ls.into_iter()
                    .map(|l| LayerGrad {
                        rows_touched: vec![false; l.in_dim],
                        weights: l.weights,
                        bias: l.bias,
                    })
                    .collect()
            };
            let first = to_grads(read_layers(&mut r, &shapes, "first moments")?);
            let second = to_grads(read_layers(&mut r, &shapes, "second moments")?);
            let mut step = [0u8; 8];
            r.read_exact(&mut step).map_err(truncated("optimizer step"))?;
            let mut adam = AdamState {
                first,
                second,
                step: u64::from_le_bytes(step),
            };
            adam.refresh_active_rows();
            Some(adam)
        }
        other => return Err(Error::format("DQNC", "optimizer flag", format!("unexpected value {other}"))),
    };
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::format("DQNC", "trailer", "unexpected bytes after checkpoint"));
    }
    Ok((net, adam))
}

/// Writes via a sibling temporary file and rename so readers never see a
/// half-written checkpoint.
pub fn save_checkpoint(path: impl AsRef<Path>, net: &MlpNetwork, adam: Option<&AdamState<f32>>) -> Result<()> {
    let path = path.as_ref();
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        write_checkpoint(&mut w, net, adam)?;
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(MlpNetwork, Option<AdamState<f32>>)> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

/// Fails unless the network consumes `input_dim`-wide states.
pub fn check_input_dim(net: &MlpNetwork, input_dim: usize) -> Result<()> {
    if net.input_dim() != input_dim {
        return Err(Error::dims("checkpoint input width vs feature layout", input_dim, net.input_dim()));
    }
    Ok(())
}


#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;

    fn net() -> impl Strategy<Value = MlpNetwork> {
        (1usize..6, proptest::collection::vec(1usize..6, 0..3), 1usize..6, any::<u64>()).prop_map(|(i, hidden, o, seed)| {
            let mut dims = vec![i];
            dims.extend(hidden);
            dims.push(o);
            Mlp::init(&dims, seed).unwrap()
        })
    }

    proptest! {
        #[test]
        fn checkpoint_round_trip(n in net(), with_adam in any::<bool>()) {
            let mut adam = AdamState::new(&n);
            let mut trained = n.clone();
            let x = vec![0.5f32; n.input_dim()];
            let (_, cache) = trained.forward_cached(x.as_slice()).unwrap();
            let g = trained.backward(&cache, &vec![1.0; n.output_dim()]).unwrap();
            adam_update(&mut trained, &mut adam, &g, 1e-3).unwrap();
            let mut buf = Vec::new();
            write_checkpoint(&mut buf, &trained, with_adam.then_some(&adam)).unwrap();
            let (back, back_adam) = read_checkpoint(buf.as_slice()).unwrap();
            prop_assert_eq!(&back, &trained);
            prop_assert_eq!(back_adam.is_some(), with_adam);
            if let Some(b) = back_adam {
                prop_assert_eq!(b.step(), 1);
                prop_assert_eq!(b.first_moments(), adam.first_moments());
                prop_assert_eq!(b.second_moments(), adam.second_moments());
            }
        }

        #[test]
        fn only_the_taken_action_gets_output_gradient(n in net(), pick in any::<prop::sample::Index>()) {
            let x = vec![0.3f32; n.input_dim()];
            let (_, cache) = n.forward_cached(x.as_slice()).unwrap();
            let a = pick.index(n.output_dim());
            let mut og = vec![0.0f32; n.output_dim()];
            og[a] = 0.7;
            let g = n.backward(&cache, &og).unwrap();
            let last = g.layers().last().unwrap();
            let width = n.output_dim();
            for (k, v) in last.bias.iter().enumerate() {
                prop_assert_eq!(*v != 0.0, k == a);
            }
            for (k, v) in last.weights.iter().enumerate() {
                if k % width != a {
                    prop_assert_eq!(*v, 0.0);
                }
            }
        }

        #[test]
        fn learning_rate_is_floored_and_non_increasing(it in 0u64..10_000_000) {
            let s = LrSchedule::default();
            prop_assert!(s.lr_at(it) >= s.min);
            prop_assert!(s.lr_at(it + 5_000) <= s.lr_at(it));
        }
    }
}
