//! Dense feed-forward networks with hand-written reverse-mode gradients,
//! an Adam optimizer and a bit-exact binary checkpoint format.
//!
//! Batched passes use row-major `(batch, features)` buffers and run through
//! `matrixmultiply`'s GEMM kernels. Parameter gradients are summed over the
//! batch; callers fold any `1/batch` factor into the output gradient.

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// Fully connected layer; `weights` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
    hidden: Activation,
    output: Activation,
}

/// Per-layer parameter gradients, shaped like the network they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

/// Activations retained by a batched forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchCache {
    batch: usize,
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
}

impl BatchCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache holds the input at least")
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// `c (m x n) = a (m x k) * b (k x n)` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the strides describe in-bounds views of `a`, `b` and `c`; every
    // caller passes buffers sized for the given dimensions.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Mlp {
    /// Uniform fan-in initialisation: every weight and bias of a layer with
    /// `n` inputs is drawn from `U(-1/sqrt(n), 1/sqrt(n))`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes, hidden, output)?;
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = rng.gen_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::validation("network needs at least two non-zero layer sizes"));
        }
        let layers = sizes
            .windows(2)
            .map(|w| Dense {
                inputs: w[0],
                outputs: w[1],
                weights: vec![0.0; w[0] * w[1]],
                bias: vec![0.0; w[1]],
            })
            .collect();
        Ok(Self {
            layers,
            hidden,
            output,
        })
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").outputs
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn activations(&self) -> (Activation, Activation) {
        (self.hidden, self.output)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    fn activation_of(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(x, 1)?.output().to_vec())
    }

    pub fn forward_batch(&self, x: &[f64], batch: usize) -> Result<BatchCache> {
        if x.len() != batch * self.input_dim() {
            return Err(Error::validation(format!(
                "input has {} values, expected {} x {}",
                x.len(),
                batch,
                self.input_dim()
            )));
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let input = acts.last().unwrap();
            let mut out = vec![0.0; batch * layer.outputs];
            // out = input * W^T
            gemm(
                batch,
                layer.inputs,
                layer.outputs,
                input,
                layer.inputs,
                1,
                &layer.weights,
                1,
                layer.inputs,
                &mut out,
            );
            let act = self.activation_of(l);
            for row in out.chunks_exact_mut(layer.outputs) {
                for (o, b) in row.iter_mut().zip(&layer.bias) {
                    *o = act.apply(*o + b);
                }
            }
            acts.push(out);
        }
        Ok(BatchCache { batch, acts })
    }

    /// Gradients of `sum(d_out . f(x))` with respect to the parameters and the
    /// input, for a single sample.
    pub fn backward(&self, x: &[f64], d_out: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        let cache = self.forward_batch(x, 1)?;
        self.backward_batch(&cache, d_out)
    }

    /// Reverse pass over a cached batch. Parameter gradients are summed over
    /// the batch; the input gradient is per sample (`batch x input_dim`).
    pub fn backward_batch(&self, cache: &BatchCache, d_out: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        let batch = cache.batch;
        if d_out.len() != batch * self.output_dim() {
            return Err(Error::validation(format!(
                "output gradient has {} values, expected {} x {}",
                d_out.len(),
                batch,
                self.output_dim()
            )));
        }
        if cache.acts.len() != self.layers.len() + 1 || cache.acts[0].len() != batch * self.input_dim() {
            return Err(Error::validation("batch cache does not belong to this network"));
        }
        let mut grads = self.zero_gradients();
        let mut delta = d_out.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let act = self.activation_of(l);
            let y = &cache.acts[l + 1];
            for (d, &yv) in delta.iter_mut().zip(y) {
                *d *= act.grad_from_output(yv);
            }
            let input = &cache.acts[l];
            let g = &mut grads.layers[l];
            // dW = delta^T * input
            gemm(
                layer.outputs,
                batch,
                layer.inputs,
                &delta,
                1,
                layer.outputs,
                input,
                layer.inputs,
                1,
                &mut g.weights,
            );
            for row in delta.chunks_exact(layer.outputs) {
                for (gb, d) in g.bias.iter_mut().zip(row) {
                    *gb += d;
                }
            }
            // d_input = delta * W
            let mut d_in = vec![0.0; batch * layer.inputs];
            gemm(
                batch,
                layer.outputs,
                layer.inputs,
                &delta,
                layer.outputs,
                1,
                &layer.weights,
                layer.inputs,
                1,
                &mut d_in,
            );
            delta = d_in;
        }
        Ok((grads, delta))
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    inputs: l.inputs,
                    outputs: l.outputs,
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    fn same_shape(&self, other: &[Dense]) -> bool {
        self.layers.len() == other.len()
            && self
                .layers
                .iter()
                .zip(other)
                .all(|(a, b)| a.inputs == b.inputs && a.outputs == b.outputs)
    }

    /// Polyak averaging: `self <- tau * online + (1 - tau) * self`.
    pub fn soft_update_from(&mut self, online: &Mlp, tau: f64) -> Result<()> {
        if !self.same_shape(&online.layers) {
            return Err(Error::validation("target and online networks differ in shape"));
        }
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            for (tv, ov) in t
                .weights
                .iter_mut()
                .chain(t.bias.iter_mut())
                .zip(o.weights.iter().chain(&o.bias))
            {
                *tv = tau * ov + (1.0 - tau) * *tv;
            }
        }
        Ok(())
    }

    /// Largest absolute parameter difference to a network of the same shape.
    pub fn max_abs_diff(&self, other: &Mlp) -> f64 {
        self.layers
            .iter()
            .zip(&other.layers)
            .flat_map(|(a, b)| {
                a.weights
                    .iter()
                    .chain(&a.bias)
                    .zip(b.weights.iter().chain(&b.bias))
                    .map(|(x, y)| (x - y).abs())
            })
            .fold(0.0, f64::max)
    }

    /// Little-endian checkpoint:
    ///
    /// | bytes | content |
    /// |-------|---------|
    /// | 4 | magic `RMLP` |
    /// | 4 | format version (u32, = 1) |
    /// | 4 | number of layer sizes `n` (u32) |
    /// | 4n | layer sizes (u32 each) |
    /// | 1 | hidden activation tag (0 identity, 1 relu, 2 tanh) |
    /// | 1 | output activation tag |
    /// | ... | per layer: weights (row-major f64), then bias (f64) |
    pub fn to_bytes(&self) -> Vec<u8> {
        let sizes = self.sizes();
        let mut out = Vec::with_capacity(14 + 4 * sizes.len() + 8 * self.param_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
        for s in &sizes {
            out.extend_from_slice(&(*s as u32).to_le_bytes());
        }
        out.push(self.hidden.tag());
        out.push(self.output.tag());
        for l in &self.layers {
            for v in l.weights.iter().chain(&l.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::validation("not a network checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::validation(format!("unsupported checkpoint version {version}")));
        }
        let n = r.u32()? as usize;
        if !(2..=64).contains(&n) {
            return Err(Error::validation(format!("implausible layer count {n}")));
        }
        let sizes = (0..n).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let tag = |t: u8| Activation::from_tag(t).ok_or_else(|| Error::validation(format!("unknown activation tag {t}")));
        let hidden = tag(r.u8()?)?;
        let output = tag(r.u8()?)?;
        let mut net = Self::zeros(&sizes, hidden, output)?;
        for l in &mut net.layers {
            for v in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *v = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::validation("trailing bytes after checkpoint"));
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::parse(path, 0, e.to_string()))
    }
}

const MAGIC: &[u8; 4] = b"RMLP";
const FORMAT_VERSION: u32 = 1;

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::validation("checkpoint truncated"))?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

impl Gradients {
    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
    }
}

/// Adaptive-moment optimizer state for one network.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        let shapes: Vec<Vec<f64>> = net
            .layers
            .iter()
            .map(|l| vec![0.0; l.weights.len() + l.bias.len()])
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: shapes.clone(),
            v: shapes,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> impl Iterator<Item = f64> + '_ {
        self.m.iter().flatten().copied()
    }

    /// One bias-corrected Adam update. A non-finite gradient leaves both the
    /// network and the optimizer state untouched.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<()> {
        if !net.same_shape(&grads.layers) || self.m.len() != net.layers.len() {
            return Err(Error::validation("gradient shape does not match network"));
        }
        if !grads.is_finite() {
            return Err(Error::Diverged("non-finite gradient".into()));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powf(self.t as f64);
        let bc2 = 1.0 - self.beta2.powf(self.t as f64);
        for (l, (layer, g)) in net.layers.iter_mut().zip(&grads.layers).enumerate() {
            let params = layer.weights.iter_mut().chain(layer.bias.iter_mut());
            let gs = g.weights.iter().chain(&g.bias);
            for (((p, &gv), m), v) in params.zip(gs).zip(self.m[l].iter_mut()).zip(self.v[l].iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * gv;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gv * gv;
                *p -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
