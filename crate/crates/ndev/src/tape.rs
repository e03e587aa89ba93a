//! Reverse-mode automatic differentiation on a Wengert tape.
//!
//! A [`Tape`] owns an append-only arena of nodes. Each forward operation
//! validates shapes, checks its output for non-finite values, records the
//! inputs it needs for its vector-Jacobian product, and returns a [`Var`]
//! handle. [`Tape::backward`] replays the recorded operations exactly once in
//! reverse order, accumulating adjoints into a [`Gradients`] table.
//!
//! Design notes:
//! - values are immutable once recorded; a fresh tape is built per forward
//!   pass (training constructs one per optimizer step and sample),
//! - gradients are only propagated through nodes reachable from a trainable
//!   leaf, everything else is recorded for value storage only,
//! - all reductions are sequential over the flat buffers, so identical inputs
//!   produce bit-identical outputs and gradients,
//! - concurrency happens *across* tapes (e.g., one per batch element), never
//!   inside one; a tape is single-owner.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Elementwise activation kinds supported by [`Tape::apply_activation`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf { trainable: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Matmul(Var, Var),
    Linear { w: Var, x: Var, b: Var },
    Act { x: Var, kind: Activation },
    LeakyRelu { x: Var, slope: f64 },
    Softplus(Var),
    Concat { a: Var, b: Var },
    SliceLast { x: Var, start: usize, len: usize },
    Sum(Var),
    Mean(Var),
    Stack { parts: Vec<Var> },
    Reshape(Var),
    ChannelMean(Var),
    ConvT1d { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    ConvT2d { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    Conv3d { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    SoftmaxXent { logits: Var, target: usize },
}

struct Node {
    value: Tensor,
    needs_grad: bool,
    op: Op,
}

/// Ordered record of forward operations plus their values.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if one was accumulated.
    /// Trainable leaves always have an entry (zeros when unreachable).
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

// ── Forward recording ───────────────────────────────────────────────────────

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value stored at `v`.
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Reads a rank-1 single-element value as a scalar.
    pub fn scalar_value(&self, v: Var) -> Result<f64> {
        let t = self.value(v);
        if t.numel() != 1 {
            return Err(Error::contract(format!(
                "expected a scalar, got shape {:?}",
                t.shape()
            )));
        }
        Ok(t.data()[0])
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, needs_grad: bool, op: Op, name: &'static str) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::Numeric(format!(
                "non-finite value produced by {name}"
            )));
        }
        self.nodes.push(Node {
            value,
            needs_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records an input tensor. `trainable` marks it as a gradient target.
    pub fn leaf(&mut self, value: Tensor, trainable: bool) -> Result<Var> {
        self.push(value, trainable, Op::Leaf { trainable }, "leaf")
    }

    /// Constant convenience leaf (never differentiated).
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    fn binary_same_shape(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op: name,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(out, self.needs(a) || self.needs(b), op, name)
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    /// Elementwise difference `a - b`.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::new(
            self.shape(x).to_vec(),
            self.value(x).data().iter().map(|v| -v).collect(),
        )?;
        self.push(out, self.needs(x), Op::Neg(x), "neg")
    }

    /// Multiplies every element by the constant `c`.
    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = Tensor::new(
            self.shape(x).to_vec(),
            self.value(x).data().iter().map(|v| v * c).collect(),
        )?;
        self.push(out, self.needs(x), Op::Scale(x, c), "scale")
    }

    /// Adds the constant `c` to every element.
    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = Tensor::new(
            self.shape(x).to_vec(),
            self.value(x).data().iter().map(|v| v + c).collect(),
        )?;
        self.push(out, self.needs(x), Op::AddScalar(x), "add_scalar")
    }

    /// Strict 2-D matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = da[i * k + p];
                let row_b = &db[p * n..(p + 1) * n];
                let row_o = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    row_o[j] += aip * row_b[j];
                }
            }
        }
        let out = Tensor::new(vec![m, n], out)?;
        self.push(out, self.needs(a) || self.needs(b), Op::Matmul(a, b), "matmul")
    }

    /// Fused affine map `y = W x + b` for a 1-D input.
    pub fn linear(&mut self, w: Var, x: Var, b: Var) -> Result<Var> {
        let (sw, sx, sb) = (self.shape(w), self.shape(x), self.shape(b));
        if sw.len() != 2 || sx.len() != 1 || sw[1] != sx[0] {
            return Err(Error::Shape {
                op: "linear",
                lhs: sw.to_vec(),
                rhs: sx.to_vec(),
            });
        }
        if sb.len() != 1 || sb[0] != sw[0] {
            return Err(Error::Shape {
                op: "linear bias",
                lhs: sw.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (o, i) = (sw[0], sw[1]);
        let (dw, dx, dbv) = (self.value(w).data(), self.value(x).data(), self.value(b).data());
        let mut out = vec![0.0; o];
        for r in 0..o {
            let row = &dw[r * i..(r + 1) * i];
            let mut acc = dbv[r];
            for c in 0..i {
                acc += row[c] * dx[c];
            }
            out[r] = acc;
        }
        let out = Tensor::new(vec![o], out)?;
        let needs = self.needs(w) || self.needs(x) || self.needs(b);
        self.push(out, needs, Op::Linear { w, x, b }, "linear")
    }

    /// Elementwise activation; `kind` selects tanh, relu, or sigmoid.
    pub fn apply_activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let f = match kind {
            Activation::Tanh => |v: f64| v.tanh(),
            Activation::Relu => |v: f64| if v > 0.0 { v } else { 0.0 },
            Activation::Sigmoid => sigmoid,
        };
        let out = Tensor::new(
            self.shape(x).to_vec(),
            self.value(x).data().iter().map(|v| f(*v)).collect(),
        )?;
        self.push(out, self.needs(x), Op::Act { x, kind }, "apply_activation")
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.apply_activation(x, Activation::Tanh)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.apply_activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.apply_activation(x, Activation::Sigmoid)
    }

    /// Leaky ReLU with the given negative-side slope.
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let out = Tensor::new(
            self.shape(x).to_vec(),
            self.value(x)
                .data()
                .iter()
                .map(|v| if *v > 0.0 { *v } else { slope * *v })
                .collect(),
        )?;
        self.push(out, self.needs(x), Op::LeakyRelu { x, slope }, "leaky_relu")
    }

    /// Numerically stable `ln(1 + exp(x))`.
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::new(
            self.shape(x).to_vec(),
            self.value(x).data().iter().map(|v| softplus(*v)).collect(),
        )?;
        self.push(out, self.needs(x), Op::Softplus(x), "softplus")
    }

    /// Concatenates two tensors along their last axis; all leading dimensions
    /// must match.
    pub fn concat_features(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let rank_ok = !sa.is_empty() && sa.len() == sb.len();
        if !rank_ok || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::Shape {
                op: "concat_features",
                lhs: sa,
                rhs: sb,
            });
        }
        let (da_len, db_len) = (sa[sa.len() - 1], sb[sb.len() - 1]);
        let lead: usize = sa[..sa.len() - 1].iter().product();
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(lead * (da_len + db_len));
        for r in 0..lead {
            out.extend_from_slice(&da[r * da_len..(r + 1) * da_len]);
            out.extend_from_slice(&db[r * db_len..(r + 1) * db_len]);
        }
        let mut shape = sa.clone();
        *shape.last_mut().unwrap() = da_len + db_len;
        let out = Tensor::new(shape, out)?;
        self.push(
            out,
            self.needs(a) || self.needs(b),
            Op::Concat { a, b },
            "concat_features",
        )
    }

    /// Slices `len` entries starting at `start` along the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.is_empty() {
            return Err(Error::contract("slice_last requires rank >= 1"));
        }
        let last = sx[sx.len() - 1];
        if len == 0 || start + len > last {
            return Err(Error::contract(format!(
                "slice_last range {start}..{} out of bounds for last axis {last}",
                start + len
            )));
        }
        let lead: usize = sx[..sx.len() - 1].iter().product();
        let dx = self.value(x).data();
        let mut out = Vec::with_capacity(lead * len);
        for r in 0..lead {
            out.extend_from_slice(&dx[r * last + start..r * last + start + len]);
        }
        let mut shape = sx;
        *shape.last_mut().unwrap() = len;
        let out = Tensor::new(shape, out)?;
        self.push(out, self.needs(x), Op::SliceLast { x, start, len }, "slice_last")
    }

    /// Sum of all elements, as a `[1]` scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), self.needs(x), Op::Sum(x), "sum")
    }

    /// Mean of all elements, as a `[1]` scalar.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        if n == 0 {
            return Err(Error::contract("mean of an empty tensor"));
        }
        let s: f64 = self.value(x).data().iter().sum();
        self.push(
            Tensor::scalar(s / n as f64),
            self.needs(x),
            Op::Mean(x),
            "mean",
        )
    }

    /// Stacks equal-shape tensors along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::contract("stack requires at least one input"));
        }
        let shape0 = self.shape(parts[0]).to_vec();
        let mut out = Vec::with_capacity(parts.len() * self.value(parts[0]).numel());
        let mut needs = false;
        for &p in parts {
            if self.shape(p) != shape0.as_slice() {
                return Err(Error::Shape {
                    op: "stack",
                    lhs: shape0,
                    rhs: self.shape(p).to_vec(),
                });
            }
            out.extend_from_slice(self.value(p).data());
            needs |= self.needs(p);
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&shape0);
        let out = Tensor::new(shape, out)?;
        self.push(
            out,
            needs,
            Op::Stack {
                parts: parts.to_vec(),
            },
            "stack",
        )
    }

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).numel() {
            return Err(Error::contract(format!(
                "reshape {:?} -> {:?} changes element count",
                self.shape(x),
                shape
            )));
        }
        let out = Tensor::new(shape, self.value(x).data().to_vec())?;
        self.push(out, self.needs(x), Op::Reshape(x), "reshape")
    }

    /// Per-channel mean over all trailing (spatial) axes: `[C, ...] -> [C]`.
    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() < 2 {
            return Err(Error::contract("channel_mean requires rank >= 2"));
        }
        let channels = sx[0];
        let spatial: usize = sx[1..].iter().product();
        let dx = self.value(x).data();
        let mut out = vec![0.0; channels];
        for c in 0..channels {
            let s: f64 = dx[c * spatial..(c + 1) * spatial].iter().sum();
            out[c] = s / spatial as f64;
        }
        let out = Tensor::new(vec![channels], out)?;
        self.push(out, self.needs(x), Op::ChannelMean(x), "channel_mean")
    }

    /// 1-D transposed convolution.
    ///
    /// `x: [C_in, L]`, `w: [C_in, C_out, K]`, `b: [C_out]`, output
    /// `[C_out, (L-1)*stride - 2*pad + K]`.
    pub fn conv_transpose1d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 2 || sw.len() != 3 || sx[0] != sw[0] {
            return Err(Error::Shape {
                op: "conv_transpose1d",
                lhs: sx,
                rhs: sw,
            });
        }
        let (ci, l) = (sx[0], sx[1]);
        let (co, k) = (sw[1], sw[2]);
        self.check_bias(b, co, "conv_transpose1d")?;
        let lout = conv_t_out(l, stride, pad, k, "conv_transpose1d")?;
        let (dx, dw, dbv) = (
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        let mut out = vec![0.0; co * lout];
        for (c, row) in out.chunks_mut(lout).enumerate() {
            row.fill(dbv[c]);
        }
        for c_in in 0..ci {
            for li in 0..l {
                let xv = dx[c_in * l + li];
                for c_out in 0..co {
                    let wrow = &dw[(c_in * co + c_out) * k..(c_in * co + c_out + 1) * k];
                    for (kk, wv) in wrow.iter().enumerate() {
                        let j = (li * stride + kk) as isize - pad as isize;
                        if j >= 0 && (j as usize) < lout {
                            out[c_out * lout + j as usize] += xv * wv;
                        }
                    }
                }
            }
        }
        let out = Tensor::new(vec![co, lout], out)?;
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(
            out,
            needs,
            Op::ConvT1d { x, w, b, stride, pad },
            "conv_transpose1d",
        )
    }

    /// 2-D transposed convolution.
    ///
    /// `x: [C_in, H, W]`, `w: [C_in, C_out, K, K]`, `b: [C_out]`, output
    /// `[C_out, (H-1)*stride - 2*pad + K, (W-1)*stride - 2*pad + K]`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 4 || sx[0] != sw[0] || sw[2] != sw[3] {
            return Err(Error::Shape {
                op: "conv_transpose2d",
                lhs: sx,
                rhs: sw,
            });
        }
        let (ci, h, wid) = (sx[0], sx[1], sx[2]);
        let (co, k) = (sw[1], sw[2]);
        self.check_bias(b, co, "conv_transpose2d")?;
        let hout = conv_t_out(h, stride, pad, k, "conv_transpose2d")?;
        let wout = conv_t_out(wid, stride, pad, k, "conv_transpose2d")?;
        let (dx, dw, dbv) = (
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        let mut out = vec![0.0; co * hout * wout];
        for (c, plane) in out.chunks_mut(hout * wout).enumerate() {
            plane.fill(dbv[c]);
        }
        for c_in in 0..ci {
            for i in 0..h {
                for j in 0..wid {
                    let xv = dx[(c_in * h + i) * wid + j];
                    if xv == 0.0 {
                        continue;
                    }
                    for c_out in 0..co {
                        let wbase = ((c_in * co + c_out) * k) * k;
                        for ki in 0..k {
                            let oi = (i * stride + ki) as isize - pad as isize;
                            if oi < 0 || oi as usize >= hout {
                                continue;
                            }
                            let orow = (c_out * hout + oi as usize) * wout;
                            for kj in 0..k {
                                let oj = (j * stride + kj) as isize - pad as isize;
                                if oj >= 0 && (oj as usize) < wout {
                                    out[orow + oj as usize] += xv * dw[wbase + ki * k + kj];
                                }
                            }
                        }
                    }
                }
            }
        }
        let out = Tensor::new(vec![co, hout, wout], out)?;
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(
            out,
            needs,
            Op::ConvT2d { x, w, b, stride, pad },
            "conv_transpose2d",
        )
    }

    /// Strided 3-D convolution over `(D, H, W)` volumes.
    ///
    /// `x: [C_in, D, H, W]`, `w: [C_out, C_in, K, K, K]`, `b: [C_out]`,
    /// output dims `(n + 2*pad - K)/stride + 1` (floor) per axis.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 5 || sx[0] != sw[1] || sw[2] != sw[3] || sw[3] != sw[4] {
            return Err(Error::Shape {
                op: "conv3d",
                lhs: sx,
                rhs: sw,
            });
        }
        let (ci, d, h, wid) = (sx[0], sx[1], sx[2], sx[3]);
        let (co, k) = (sw[0], sw[2]);
        self.check_bias(b, co, "conv3d")?;
        let od = conv_out(d, stride, pad, k, "conv3d")?;
        let oh = conv_out(h, stride, pad, k, "conv3d")?;
        let ow = conv_out(wid, stride, pad, k, "conv3d")?;
        let (dx, dw, dbv) = (
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        let mut out = vec![0.0; co * od * oh * ow];
        let mut idx = 0;
        for c_out in 0..co {
            for zd in 0..od {
                for zh in 0..oh {
                    for zw in 0..ow {
                        let mut acc = dbv[c_out];
                        for c_in in 0..ci {
                            let wbase = (c_out * ci + c_in) * k * k * k;
                            for kd in 0..k {
                                let id = (zd * stride + kd) as isize - pad as isize;
                                if id < 0 || id as usize >= d {
                                    continue;
                                }
                                for kh in 0..k {
                                    let ih = (zh * stride + kh) as isize - pad as isize;
                                    if ih < 0 || ih as usize >= h {
                                        continue;
                                    }
                                    let xrow = ((c_in * d + id as usize) * h + ih as usize) * wid;
                                    let wrow = wbase + (kd * k + kh) * k;
                                    for kw in 0..k {
                                        let iw = (zw * stride + kw) as isize - pad as isize;
                                        if iw >= 0 && (iw as usize) < wid {
                                            acc += dx[xrow + iw as usize] * dw[wrow + kw];
                                        }
                                    }
                                }
                            }
                        }
                        out[idx] = acc;
                        idx += 1;
                    }
                }
            }
        }
        let out = Tensor::new(vec![co, od, oh, ow], out)?;
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(out, needs, Op::Conv3d { x, w, b, stride, pad }, "conv3d")
    }

    /// Cross-entropy of a softmax over 1-D `logits` against a class index,
    /// computed through a numerically stable log-sum-exp.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 1 || target >= s[0] {
            return Err(Error::contract(format!(
                "softmax_cross_entropy: logits shape {s:?}, target {target}"
            )));
        }
        let d = self.value(logits).data();
        let m = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + d.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let loss = lse - d[target];
        self.push(
            Tensor::scalar(loss),
            self.needs(logits),
            Op::SoftmaxXent { logits, target },
            "softmax_cross_entropy",
        )
    }

    fn check_bias(&self, b: Var, co: usize, op: &'static str) -> Result<()> {
        let sb = self.shape(b);
        if sb.len() != 1 || sb[0] != co {
            return Err(Error::Shape {
                op,
                lhs: vec![co],
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }
}

// ── Backward pass ───────────────────────────────────────────────────────────

impl Tape {
    /// Reverse-mode sweep from a scalar loss.
    ///
    /// Visits nodes exactly once in reverse recording order. Every trainable
    /// leaf receives a gradient entry; leaves unreachable from the loss get
    /// zeros rather than an error.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::contract("loss variable is not on this tape"));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].needs_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut out: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let g = match grads[i].take() {
                Some(g) => Some(Tensor::new(node.value.shape().to_vec(), g)?),
                None => match node.op {
                    // Unreachable trainable leaves still get (zero) gradients.
                    Op::Leaf { trainable: true } => Some(Tensor::zeros(node.value.shape().to_vec())),
                    _ => None,
                },
            };
            out.push(g);
        }
        Ok(Gradients { grads: out })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        // Accumulates `f(slot)` into the adjoint buffer of `v` if that input
        // participates in differentiation.
        macro_rules! into {
            ($v:expr, $f:expr) => {
                if self.nodes[$v.0].needs_grad {
                    let len = self.nodes[$v.0].value.numel();
                    let slot = grads[$v.0].get_or_insert_with(|| vec![0.0; len]);
                    #[allow(clippy::redundant_closure_call)]
                    ($f)(slot.as_mut_slice());
                }
            };
        }
        match &self.nodes[i].op {
            Op::Leaf { .. } => {}
            Op::Add(a, b) => {
                into!(a, |s: &mut [f64]| axpy(s, g, 1.0));
                into!(b, |s: &mut [f64]| axpy(s, g, 1.0));
            }
            Op::Sub(a, b) => {
                into!(a, |s: &mut [f64]| axpy(s, g, 1.0));
                into!(b, |s: &mut [f64]| axpy(s, g, -1.0));
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                into!(a, |s: &mut [f64]| {
                    for (j, sv) in s.iter_mut().enumerate() {
                        *sv += g[j] * db[j];
                    }
                });
                into!(b, |s: &mut [f64]| {
                    for (j, sv) in s.iter_mut().enumerate() {
                        *sv += g[j] * da[j];
                    }
                });
            }
            Op::Neg(x) => into!(x, |s: &mut [f64]| axpy(s, g, -1.0)),
            Op::Scale(x, c) => {
                let c = *c;
                into!(x, |s: &mut [f64]| axpy(s, g, c));
            }
            Op::AddScalar(x) => into!(x, |s: &mut [f64]| axpy(s, g, 1.0)),
            Op::Matmul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                into!(a, |s: &mut [f64]| {
                    for i2 in 0..m {
                        for j in 0..k {
                            let mut acc = 0.0;
                            for p in 0..n {
                                acc += g[i2 * n + p] * db[j * n + p];
                            }
                            s[i2 * k + j] += acc;
                        }
                    }
                });
                into!(b, |s: &mut [f64]| {
                    for i2 in 0..m {
                        for j in 0..k {
                            let aij = da[i2 * k + j];
                            for p in 0..n {
                                s[j * n + p] += aij * g[i2 * n + p];
                            }
                        }
                    }
                });
            }
            Op::Linear { w, x, b } => {
                let (o, inp) = (self.shape(*w)[0], self.shape(*w)[1]);
                let (dw, dx) = (self.value(*w).data(), self.value(*x).data());
                into!(w, |s: &mut [f64]| {
                    for r in 0..o {
                        let gr = g[r];
                        for c in 0..inp {
                            s[r * inp + c] += gr * dx[c];
                        }
                    }
                });
                into!(x, |s: &mut [f64]| {
                    for r in 0..o {
                        let gr = g[r];
                        let row = &dw[r * inp..(r + 1) * inp];
                        for c in 0..inp {
                            s[c] += gr * row[c];
                        }
                    }
                });
                into!(b, |s: &mut [f64]| axpy(s, g, 1.0));
            }
            Op::Act { x, kind } => {
                let y = self.nodes[i].value.data();
                let dx = self.value(*x).data();
                let kind = *kind;
                into!(x, |s: &mut [f64]| {
                    for j in 0..s.len() {
                        let d = match kind {
                            Activation::Tanh => 1.0 - y[j] * y[j],
                            Activation::Relu => {
                                if dx[j] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Activation::Sigmoid => y[j] * (1.0 - y[j]),
                        };
                        s[j] += g[j] * d;
                    }
                });
            }
            Op::LeakyRelu { x, slope } => {
                let dx = self.value(*x).data();
                let slope = *slope;
                into!(x, |s: &mut [f64]| {
                    for j in 0..s.len() {
                        s[j] += g[j] * if dx[j] > 0.0 { 1.0 } else { slope };
                    }
                });
            }
            Op::Softplus(x) => {
                let dx = self.value(*x).data();
                into!(x, |s: &mut [f64]| {
                    for j in 0..s.len() {
                        s[j] += g[j] * sigmoid(dx[j]);
                    }
                });
            }
            Op::Concat { a, b } => {
                let da_len = *self.shape(*a).last().unwrap();
                let db_len = *self.shape(*b).last().unwrap();
                let lead = self.value(*a).numel() / da_len;
                let tot = da_len + db_len;
                into!(a, |s: &mut [f64]| {
                    for r in 0..lead {
                        for j in 0..da_len {
                            s[r * da_len + j] += g[r * tot + j];
                        }
                    }
                });
                into!(b, |s: &mut [f64]| {
                    for r in 0..lead {
                        for j in 0..db_len {
                            s[r * db_len + j] += g[r * tot + da_len + j];
                        }
                    }
                });
            }
            Op::SliceLast { x, start, len } => {
                let last = *self.shape(*x).last().unwrap();
                let lead = self.value(*x).numel() / last;
                let (start, len) = (*start, *len);
                into!(x, |s: &mut [f64]| {
                    for r in 0..lead {
                        for j in 0..len {
                            s[r * last + start + j] += g[r * len + j];
                        }
                    }
                });
            }
            Op::Sum(x) => {
                let gv = g[0];
                into!(x, |s: &mut [f64]| {
                    for sv in s.iter_mut() {
                        *sv += gv;
                    }
                });
            }
            Op::Mean(x) => {
                let gv = g[0] / self.value(*x).numel() as f64;
                into!(x, |s: &mut [f64]| {
                    for sv in s.iter_mut() {
                        *sv += gv;
                    }
                });
            }
            Op::Stack { parts } => {
                let part_len = if parts.is_empty() {
                    0
                } else {
                    self.value(parts[0]).numel()
                };
                for (p, v) in parts.iter().enumerate() {
                    let seg = &g[p * part_len..(p + 1) * part_len];
                    into!(v, |s: &mut [f64]| axpy(s, seg, 1.0));
                }
            }
            Op::Reshape(x) => into!(x, |s: &mut [f64]| axpy(s, g, 1.0)),
            Op::ChannelMean(x) => {
                let sx = self.shape(*x);
                let channels = sx[0];
                let spatial: usize = sx[1..].iter().product();
                into!(x, |s: &mut [f64]| {
                    for c in 0..channels {
                        let gv = g[c] / spatial as f64;
                        for j in 0..spatial {
                            s[c * spatial + j] += gv;
                        }
                    }
                });
            }
            Op::ConvT1d { x, w, b, stride, pad } => {
                self.conv_t1d_backward(*x, *w, *b, *stride, *pad, g, grads);
            }
            Op::ConvT2d { x, w, b, stride, pad } => {
                self.conv_t2d_backward(*x, *w, *b, *stride, *pad, g, grads);
            }
            Op::Conv3d { x, w, b, stride, pad } => {
                self.conv3d_backward(*x, *w, *b, *stride, *pad, g, grads);
            }
            Op::SoftmaxXent { logits, target } => {
                let d = self.value(*logits).data();
                let m = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = d.iter().map(|v| (v - m).exp()).sum();
                let gv = g[0];
                let target = *target;
                into!(logits, |s: &mut [f64]| {
                    for j in 0..s.len() {
                        let p = (d[j] - m).exp() / denom;
                        let ind = if j == target { 1.0 } else { 0.0 };
                        s[j] += gv * (p - ind);
                    }
                });
            }
        }
    }

    fn conv_t1d_backward(
        &self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (ci, l) = (self.shape(x)[0], self.shape(x)[1]);
        let (co, k) = (self.shape(w)[1], self.shape(w)[2]);
        let lout = g.len() / co;
        let (dx, dw) = (self.value(x).data(), self.value(w).data());
        if self.nodes[x.0].needs_grad {
            let s = grads[x.0].get_or_insert_with(|| vec![0.0; ci * l]);
            for c_in in 0..ci {
                for li in 0..l {
                    let mut acc = 0.0;
                    for c_out in 0..co {
                        let wrow = &dw[(c_in * co + c_out) * k..(c_in * co + c_out + 1) * k];
                        for (kk, wv) in wrow.iter().enumerate() {
                            let j = (li * stride + kk) as isize - pad as isize;
                            if j >= 0 && (j as usize) < lout {
                                acc += g[c_out * lout + j as usize] * wv;
                            }
                        }
                    }
                    s[c_in * l + li] += acc;
                }
            }
        }
        if self.nodes[w.0].needs_grad {
            let s = grads[w.0].get_or_insert_with(|| vec![0.0; ci * co * k]);
            for c_in in 0..ci {
                for li in 0..l {
                    let xv = dx[c_in * l + li];
                    for c_out in 0..co {
                        for kk in 0..k {
                            let j = (li * stride + kk) as isize - pad as isize;
                            if j >= 0 && (j as usize) < lout {
                                s[(c_in * co + c_out) * k + kk] += xv * g[c_out * lout + j as usize];
                            }
                        }
                    }
                }
            }
        }
        if self.nodes[b.0].needs_grad {
            let s = grads[b.0].get_or_insert_with(|| vec![0.0; co]);
            for c_out in 0..co {
                s[c_out] += g[c_out * lout..(c_out + 1) * lout].iter().sum::<f64>();
            }
        }
    }

    fn conv_t2d_backward(
        &self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (ci, h, wid) = (self.shape(x)[0], self.shape(x)[1], self.shape(x)[2]);
        let (co, k) = (self.shape(w)[1], self.shape(w)[2]);
        let hout = conv_t_out(h, stride, pad, k, "conv_transpose2d").expect("validated in forward");
        let wout = g.len() / (co * hout);
        let (dx, dw) = (self.value(x).data(), self.value(w).data());
        if self.nodes[x.0].needs_grad {
            let s = grads[x.0].get_or_insert_with(|| vec![0.0; ci * h * wid]);
            for c_in in 0..ci {
                for i in 0..h {
                    for j in 0..wid {
                        let mut acc = 0.0;
                        for c_out in 0..co {
                            let wbase = ((c_in * co + c_out) * k) * k;
                            for ki in 0..k {
                                let oi = (i * stride + ki) as isize - pad as isize;
                                if oi < 0 || oi as usize >= hout {
                                    continue;
                                }
                                let orow = (c_out * hout + oi as usize) * wout;
                                for kj in 0..k {
                                    let oj = (j * stride + kj) as isize - pad as isize;
                                    if oj >= 0 && (oj as usize) < wout {
                                        acc += g[orow + oj as usize] * dw[wbase + ki * k + kj];
                                    }
                                }
                            }
                        }
                        s[(c_in * h + i) * wid + j] += acc;
                    }
                }
            }
        }
        if self.nodes[w.0].needs_grad {
            let s = grads[w.0].get_or_insert_with(|| vec![0.0; ci * co * k * k]);
            for c_in in 0..ci {
                for i in 0..h {
                    for j in 0..wid {
                        let xv = dx[(c_in * h + i) * wid + j];
                        if xv == 0.0 {
                            continue;
                        }
                        for c_out in 0..co {
                            let wbase = ((c_in * co + c_out) * k) * k;
                            for ki in 0..k {
                                let oi = (i * stride + ki) as isize - pad as isize;
                                if oi < 0 || oi as usize >= hout {
                                    continue;
                                }
                                let orow = (c_out * hout + oi as usize) * wout;
                                for kj in 0..k {
                                    let oj = (j * stride + kj) as isize - pad as isize;
                                    if oj >= 0 && (oj as usize) < wout {
                                        s[wbase + ki * k + kj] += xv * g[orow + oj as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        if self.nodes[b.0].needs_grad {
            let s = grads[b.0].get_or_insert_with(|| vec![0.0; co]);
            for c_out in 0..co {
                s[c_out] += g[c_out * hout * wout..(c_out + 1) * hout * wout]
                    .iter()
                    .sum::<f64>();
            }
        }
    }

    fn conv3d_backward(
        &self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let sx = self.shape(x);
        let (ci, d, h, wid) = (sx[0], sx[1], sx[2], sx[3]);
        let (co, k) = (self.shape(w)[0], self.shape(w)[2]);
        let od = conv_out(d, stride, pad, k, "conv3d").expect("validated in forward");
        let oh = conv_out(h, stride, pad, k, "conv3d").expect("validated in forward");
        let ow = g.len() / (co * od * oh);
        let (dx, dw) = (self.value(x).data(), self.value(w).data());
        let needs_x = self.nodes[x.0].needs_grad;
        let needs_w = self.nodes[w.0].needs_grad;
        if needs_x || needs_w {
            // One joint sweep over output positions keeps the scatter pattern
            // identical to the forward gather.
            let mut sx_buf = if needs_x { vec![0.0; ci * d * h * wid] } else { Vec::new() };
            let mut sw_buf = if needs_w { vec![0.0; co * ci * k * k * k] } else { Vec::new() };
            let mut idx = 0;
            for c_out in 0..co {
                for zd in 0..od {
                    for zh in 0..oh {
                        for zw in 0..ow {
                            let gv = g[idx];
                            idx += 1;
                            if gv == 0.0 {
                                continue;
                            }
                            for c_in in 0..ci {
                                let wbase = (c_out * ci + c_in) * k * k * k;
                                for kd in 0..k {
                                    let id = (zd * stride + kd) as isize - pad as isize;
                                    if id < 0 || id as usize >= d {
                                        continue;
                                    }
                                    for kh in 0..k {
                                        let ih = (zh * stride + kh) as isize - pad as isize;
                                        if ih < 0 || ih as usize >= h {
                                            continue;
                                        }
                                        let xrow =
                                            ((c_in * d + id as usize) * h + ih as usize) * wid;
                                        let wrow = wbase + (kd * k + kh) * k;
                                        for kw in 0..k {
                                            let iw = (zw * stride + kw) as isize - pad as isize;
                                            if iw < 0 || iw as usize >= wid {
                                                continue;
                                            }
                                            if needs_x {
                                                sx_buf[xrow + iw as usize] += gv * dw[wrow + kw];
                                            }
                                            if needs_w {
                                                sw_buf[wrow + kw] += gv * dx[xrow + iw as usize];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            if needs_x {
                let s = grads[x.0].get_or_insert_with(|| vec![0.0; ci * d * h * wid]);
                axpy(s, &sx_buf, 1.0);
            }
            if needs_w {
                let s = grads[w.0].get_or_insert_with(|| vec![0.0; co * ci * k * k * k]);
                axpy(s, &sw_buf, 1.0);
            }
        }
        if self.nodes[b.0].needs_grad {
            let s = grads[b.0].get_or_insert_with(|| vec![0.0; co]);
            let plane = od * oh * ow;
            for c_out in 0..co {
                s[c_out] += g[c_out * plane..(c_out + 1) * plane].iter().sum::<f64>();
            }
        }
    }
}

// ── Shared numeric helpers ──────────────────────────────────────────────────

fn axpy(acc: &mut [f64], src: &[f64], a: f64) {
    for (s, v) in acc.iter_mut().zip(src) {
        *s += a * v;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn conv_t_out(n: usize, stride: usize, pad: usize, k: usize, op: &'static str) -> Result<usize> {
    if stride == 0 || n == 0 {
        return Err(Error::contract(format!("{op}: empty input or zero stride")));
    }
    let raw = (n - 1) * stride + k;
    if raw <= 2 * pad {
        return Err(Error::contract(format!(
            "{op}: padding {pad} swallows the whole output (input {n}, kernel {k}, stride {stride})"
        )));
    }
    Ok(raw - 2 * pad)
}

fn conv_out(n: usize, stride: usize, pad: usize, k: usize, op: &'static str) -> Result<usize> {
    if stride == 0 {
        return Err(Error::contract(format!("{op}: zero stride")));
    }
    if n + 2 * pad < k {
        return Err(Error::contract(format!(
            "{op}: kernel {k} larger than padded input {n}+2*{pad}"
        )));
    }
    Ok((n + 2 * pad - k) / stride + 1)
}
