//! Parameter storage, seeded initialization, and small trainable blocks.
//!
//! A [`ParamStore`] owns named tensors in a fixed registration order; that
//! order defines the layout used by checkpoints, optimizer state, and the
//! `register`-onto-a-[`Tape`] call, so values, gradients, and moments always
//! line up by index. Layers hold block indices into the store rather than the
//! tensors themselves, which keeps forward passes free to run on any tape.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tape::{Activation, Gradients, Tape, Var};
use crate::tensor::Tensor;

/// Derives an independent child seed from a base seed and two labels.
///
/// Uses the splitmix64 mixing function twice, so distinct `(stream, index)`
/// pairs give statistically independent streams and the derivation is pure —
/// resuming a run can re-derive any step's stream without replaying history.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }
    mix(base
        .wrapping_add(mix(stream.wrapping_mul(0x9e3779b97f4a7c15)))
        .wrapping_add(index.wrapping_mul(0xd1b54a32d192ed03)))
}

/// Deterministic RNG for a derived stream.
pub fn seeded_rng(base: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream, index))
}

// ── Parameter store ─────────────────────────────────────────────────────────

/// Ordered collection of named parameter blocks.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    blocks: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a block and returns its index. Names must be unique; they become
    /// checkpoint keys.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<usize> {
        let name = name.into();
        if self.blocks.iter().any(|(n, _)| *n == name) {
            return Err(Error::contract(format!("duplicate parameter block {name:?}")));
        }
        self.blocks.push((name, value));
        Ok(self.blocks.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Tensor {
        &self.blocks[idx].1
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.blocks[idx].0
    }

    /// Replaces a block's value; the shape must be unchanged.
    pub fn set(&mut self, idx: usize, value: Tensor) -> Result<()> {
        let current = &self.blocks[idx].1;
        if current.shape() != value.shape() {
            return Err(Error::Shape {
                op: "param set",
                lhs: current.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        self.blocks[idx].1 = value;
        Ok(())
    }

    pub fn blocks(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.blocks.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// Total number of scalar parameters across all blocks.
    pub fn num_params(&self) -> usize {
        self.blocks.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Records every block on `tape` in store order and returns the handles.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> Result<Vec<Var>> {
        self.blocks
            .iter()
            .map(|(_, t)| tape.leaf(t.clone(), trainable))
            .collect()
    }

    /// Looks up a block index by name (used when loading checkpoints).
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.blocks.iter().position(|(n, _)| n == name)
    }
}

/// Pulls the gradient for each registered block out of a backward result,
/// in store order. Missing entries are an internal-contract violation because
/// trainable leaves always receive gradients (zeros when unreachable).
pub fn collect_grads(grads: &Gradients, vars: &[Var]) -> Result<Vec<Tensor>> {
    vars.iter()
        .map(|&v| {
            grads
                .get(v)
                .cloned()
                .ok_or_else(|| Error::contract("registered parameter missing its gradient"))
        })
        .collect()
}

/// Elementwise mean of per-sample gradient lists, accumulated in sample
/// order so the reduction is bit-identical however the samples were computed.
pub fn mean_grad_lists(lists: &[Vec<Tensor>]) -> Result<Vec<Tensor>> {
    let first = lists
        .first()
        .ok_or_else(|| Error::contract("gradient mean over an empty batch"))?;
    let mut acc: Vec<Vec<f64>> = first.iter().map(|t| t.data().to_vec()).collect();
    for list in &lists[1..] {
        if list.len() != acc.len() {
            return Err(Error::contract("per-sample gradient lists differ in block count"));
        }
        for (sum, t) in acc.iter_mut().zip(list) {
            if t.numel() != sum.len() {
                return Err(Error::contract("per-sample gradient lists differ in shape"));
            }
            for (s, &g) in sum.iter_mut().zip(t.data()) {
                *s += g;
            }
        }
    }
    let scale = 1.0 / lists.len() as f64;
    acc.iter_mut().for_each(|sum| sum.iter_mut().for_each(|s| *s *= scale));
    acc.into_iter()
        .zip(first)
        .map(|(data, t)| Tensor::new(t.shape().to_vec(), data))
        .collect()
}

// ── Initialization ──────────────────────────────────────────────────────────

/// Uniform init on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn uniform_init(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    debug_assert!(fan_in > 0);
    let bound = 1.0 / (fan_in as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.gen_range(-bound..=bound);
    }
    t
}

// ── Layers ──────────────────────────────────────────────────────────────────

/// Affine layer `y = W x + b` acting on 1-D vectors.
#[derive(Debug, Clone)]
pub struct LinearLayer {
    pub w: usize,
    pub b: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LinearLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Result<Self> {
        let w = store.add(
            format!("{name}.w"),
            uniform_init(rng, vec![out_dim, in_dim], in_dim),
        )?;
        let b = store.add(
            format!("{name}.b"),
            uniform_init(rng, vec![out_dim], in_dim),
        )?;
        Ok(LinearLayer { w, b, in_dim, out_dim })
    }

    pub fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        tape.linear(params[self.w], x, params[self.b])
    }

    pub fn param_count(&self) -> usize {
        self.out_dim * self.in_dim + self.out_dim
    }
}

/// 1-D transposed-convolution layer (`w: [C_in, C_out, K]`).
#[derive(Debug, Clone)]
pub struct ConvT1dLayer {
    pub w: usize,
    pub b: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvT1dLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let fan_in = c_in * k;
        let w = store.add(
            format!("{name}.w"),
            uniform_init(rng, vec![c_in, c_out, k], fan_in),
        )?;
        let b = store.add(format!("{name}.b"), uniform_init(rng, vec![c_out], fan_in))?;
        Ok(ConvT1dLayer { w, b, stride, pad })
    }

    pub fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        tape.conv_transpose1d(x, params[self.w], params[self.b], self.stride, self.pad)
    }
}

/// 2-D transposed-convolution layer (`w: [C_in, C_out, K, K]`).
#[derive(Debug, Clone)]
pub struct ConvT2dLayer {
    pub w: usize,
    pub b: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvT2dLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let fan_in = c_in * k * k;
        let w = store.add(
            format!("{name}.w"),
            uniform_init(rng, vec![c_in, c_out, k, k], fan_in),
        )?;
        let b = store.add(format!("{name}.b"), uniform_init(rng, vec![c_out], fan_in))?;
        Ok(ConvT2dLayer { w, b, stride, pad })
    }

    pub fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        tape.conv_transpose2d(x, params[self.w], params[self.b], self.stride, self.pad)
    }
}

/// 3-D convolution layer (`w: [C_out, C_in, K, K, K]`).
#[derive(Debug, Clone)]
pub struct Conv3dLayer {
    pub w: usize,
    pub b: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv3dLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let fan_in = c_in * k * k * k;
        let w = store.add(
            format!("{name}.w"),
            uniform_init(rng, vec![c_out, c_in, k, k, k], fan_in),
        )?;
        let b = store.add(format!("{name}.b"), uniform_init(rng, vec![c_out], fan_in))?;
        Ok(Conv3dLayer { w, b, stride, pad })
    }

    pub fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        tape.conv3d(x, params[self.w], params[self.b], self.stride, self.pad)
    }
}

/// Multi-layer perceptron over 1-D vectors.
///
/// `dims` lists layer widths including input and output; hidden layers apply
/// `hidden`, the final layer applies `output` when given.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<LinearLayer>,
    pub hidden: Activation,
    pub output: Option<Activation>,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        dims: &[usize],
        hidden: Activation,
        output: Option<Activation>,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::contract("an MLP needs at least input and output dims"));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for i in 0..dims.len() - 1 {
            layers.push(LinearLayer::new(
                store,
                rng,
                &format!("{name}.{i}"),
                dims[i],
                dims[i + 1],
            )?);
        }
        Ok(Mlp { layers, hidden, output })
    }

    pub fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, params, h)?;
            if i < last {
                h = tape.apply_activation(h, self.hidden)?;
            } else if let Some(act) = self.output {
                h = tape.apply_activation(h, act)?;
            }
        }
        Ok(h)
    }
}

/// Number of scalar parameters in an MLP with the given layer widths.
pub fn mlp_param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

/// Single LSTM cell with combined gate weights.
///
/// Gates are computed as `W [x; h] + b` with `W: [4d, 2d]` and split in the
/// order input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub w: usize,
    pub b: usize,
    pub dim: usize,
}

impl LstmCell {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, dim: usize) -> Result<Self> {
        let fan_in = 2 * dim;
        let w = store.add(
            format!("{name}.w"),
            uniform_init(rng, vec![4 * dim, 2 * dim], fan_in),
        )?;
        let b = store.add(format!("{name}.b"), uniform_init(rng, vec![4 * dim], fan_in))?;
        Ok(LstmCell { w, b, dim })
    }

    /// One step: `(h, c) -> (h', c')` for input `x`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &[Var],
        x: Var,
        h: Var,
        c: Var,
    ) -> Result<(Var, Var)> {
        let d = self.dim;
        let xh = tape.concat_features(x, h)?;
        let gates = tape.linear(params[self.w], xh, params[self.b])?;
        let i_gate = tape.slice_last(gates, 0, d)?;
        let f_gate = tape.slice_last(gates, d, d)?;
        let g_gate = tape.slice_last(gates, 2 * d, d)?;
        let o_gate = tape.slice_last(gates, 3 * d, d)?;
        let i_gate = tape.sigmoid(i_gate)?;
        let f_gate = tape.sigmoid(f_gate)?;
        let g_gate = tape.tanh(g_gate)?;
        let o_gate = tape.sigmoid(o_gate)?;
        let fc = tape.mul(f_gate, c)?;
        let ig = tape.mul(i_gate, g_gate)?;
        let c_new = tape.add(fc, ig)?;
        let c_act = tape.tanh(c_new)?;
        let h_new = tape.mul(o_gate, c_act)?;
        Ok((h_new, c_new))
    }

    /// `4 * (2d^2 + d)` per cell: combined weights plus bias.
    pub fn param_count(&self) -> usize {
        4 * self.dim * 2 * self.dim + 4 * self.dim
    }
}
