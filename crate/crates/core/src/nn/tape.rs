//! Reverse-mode differentiation over a linear tape of tensor operations.
//!
//! Every operation appends a node holding its output value and whatever it
//! needs for the backward pass. [`Tape::backward`] walks the nodes in
//! reverse, propagating gradients from a scalar loss to inputs and
//! parameters.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::kernels::{self, ImageDims};
use super::params::{ParamId, ParamStore};
use super::{Scalar, Tensor};
use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics for batch norm, dropout active.
    Train,
    /// Running statistics for batch norm, dropout off.
    Eval,
}

/// Batch-norm running-statistic update produced by a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct BnUpdate<T> {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub batch_mean: Vec<T>,
    pub batch_var_unbiased: Vec<T>,
    pub momentum: f64,
}

/// Batch-norm settings shared by the layers that use it.
#[derive(Debug, Clone, Copy)]
pub struct BnParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub eps: f64,
    pub momentum: f64,
}

enum Op<T> {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    AddMinChannels {
        target: Var,
        source: Var,
        channels: usize,
    },
    Scale(Var, T),
    Relu(Var),
    LeakyRelu(Var, T),
    Reshape(Var),
    Conv3x3 {
        x: Var,
        w: Var,
        b: Var,
    },
    TConv2x2 {
        x: Var,
        w: Var,
        b: Var,
    },
    MaxPool2x2 {
        x: Var,
        argmax: Vec<u32>,
    },
    Resize {
        x: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    SplitHeads {
        x: Var,
        heads: usize,
    },
    MergeHeads {
        x: Var,
        heads: usize,
    },
    Bmm {
        a: Var,
        b: Var,
        transpose_b: bool,
    },
    Softmax(Var),
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Mse {
        pred: Var,
        target: Var,
    },
}

struct Node<T> {
    /// `None` for parameter nodes, whose value lives in the store.
    value: Option<Tensor<T>>,
    op: Op<T>,
}

pub struct Tape<'p, T: Scalar> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
    mode: Mode,
    rng: ChaCha8Rng,
    bn_updates: Vec<BnUpdate<T>>,
}

fn image_dims(shape: &[usize]) -> Result<ImageDims> {
    match *shape {
        [n, c, h, w] => Ok(ImageDims { n, c, h, w }),
        _ => Err(shape_err!("expected an [N, C, H, W] tensor, got {shape:?}")),
    }
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(params: &'p ParamStore<T>, mode: Mode) -> Self {
        Self::with_seed(params, mode, 0)
    }

    /// `seed` drives dropout masks.
    pub fn with_seed(params: &'p ParamStore<T>, mode: Mode, seed: u64) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            bn_updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value: Some(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Registers an input (or constant) tensor.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn take_bn_updates(&mut self) -> Vec<BnUpdate<T>> {
        std::mem::take(&mut self.bn_updates)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err!("add: {:?} vs {:?}", va.shape(), vb.shape()));
        }
        let mut out = va.clone();
        out.add_assign(vb);
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds `source` onto the first `min(C_target, C_source)` channels of
    /// `target`. Both are `[N, C, ...]` with equal batch and per-channel size.
    pub fn add_min_channels(&mut self, target: Var, source: Var) -> Result<Var> {
        let (vt, vs) = (self.value(target), self.value(source));
        let (st, ss) = (vt.shape(), vs.shape());
        if st.len() < 2 || ss.len() < 2 || st[0] != ss[0] {
            return Err(shape_err!("skip add: {st:?} vs {ss:?}"));
        }
        let per_t: usize = st[2..].iter().product();
        let per_s: usize = ss[2..].iter().product();
        if per_t != per_s {
            return Err(shape_err!("skip add: spatial sizes differ, {st:?} vs {ss:?}"));
        }
        let channels = st[1].min(ss[1]);
        let mut out = vt.clone();
        let (ct, cs) = (st[1], ss[1]);
        for n in 0..st[0] {
            let dst = &mut out.data_mut()[n * ct * per_t..][..channels * per_t];
            let src = &vs.data()[n * cs * per_s..][..channels * per_s];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = *d + s;
            }
        }
        Ok(self.push(
            out,
            Op::AddMinChannels {
                target,
                source,
                channels,
            },
        ))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.push(out, Op::Scale(x, s))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, alpha: T) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { alpha * v });
        self.push(out, Op::LeakyRelu(x, alpha))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// Same-padded 3×3 convolution; `w` is `[C_out, C_in, 3, 3]`, `b` is `[C_out]`.
    pub fn conv3x3(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let dims = image_dims(self.shape(x))?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 4 || ws[1] != dims.c || ws[2] != 3 || ws[3] != 3 {
            return Err(shape_err!(
                "conv3x3: weight {ws:?} does not fit input with {} channels",
                dims.c
            ));
        }
        let c_out = ws[0];
        if self.shape(b) != [c_out] {
            return Err(shape_err!("conv3x3: bias {:?} for {c_out} channels", self.shape(b)));
        }
        let out = kernels::conv3x3_forward(
            self.value(x).data(),
            dims,
            self.value(w).data(),
            self.value(b).data(),
            c_out,
        );
        let t = Tensor::new(vec![dims.n, c_out, dims.h, dims.w], out)?;
        Ok(self.push(t, Op::Conv3x3 { x, w, b }))
    }

    /// Stride-2 2×2 transposed convolution; `w` is `[C_in, C_out, 2, 2]`.
    /// `target` extends the `2H × 2W` result with bias-only rows/columns.
    pub fn tconv2x2(&mut self, x: Var, w: Var, b: Var, target: Option<(usize, usize)>) -> Result<Var> {
        let dims = image_dims(self.shape(x))?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 4 || ws[0] != dims.c || ws[2] != 2 || ws[3] != 2 {
            return Err(shape_err!(
                "tconv2x2: weight {ws:?} does not fit input with {} channels",
                dims.c
            ));
        }
        let c_out = ws[1];
        if self.shape(b) != [c_out] {
            return Err(shape_err!("tconv2x2: bias {:?} for {c_out} channels", self.shape(b)));
        }
        let (oh, ow) = target.unwrap_or((2 * dims.h, 2 * dims.w));
        if oh < 2 * dims.h || ow < 2 * dims.w {
            return Err(shape_err!(
                "tconv2x2: target {oh}x{ow} is smaller than {}x{}",
                2 * dims.h,
                2 * dims.w
            ));
        }
        let out = kernels::tconv2x2_forward(
            self.value(x).data(),
            dims,
            self.value(w).data(),
            self.value(b).data(),
            c_out,
            (oh, ow),
        );
        let t = Tensor::new(vec![dims.n, c_out, oh, ow], out)?;
        Ok(self.push(t, Op::TConv2x2 { x, w, b }))
    }

    pub fn max_pool2x2(&mut self, x: Var) -> Result<Var> {
        let dims = image_dims(self.shape(x))?;
        if dims.h < 2 || dims.w < 2 {
            return Err(shape_err!("max_pool2x2 needs H, W >= 2, got {}x{}", dims.h, dims.w));
        }
        let (out, argmax) = kernels::maxpool2x2_forward(self.value(x).data(), dims);
        let t = Tensor::new(vec![dims.n, dims.c, dims.h / 2, dims.w / 2], out)?;
        Ok(self.push(t, Op::MaxPool2x2 { x, argmax }))
    }

    pub fn resize_bilinear(&mut self, x: Var, target: (usize, usize)) -> Result<Var> {
        let dims = image_dims(self.shape(x))?;
        if target.0 == 0 || target.1 == 0 {
            return Err(shape_err!("resize target must be at least 1x1"));
        }
        let out = kernels::resize_bilinear_forward(self.value(x).data(), dims, target);
        let t = Tensor::new(vec![dims.n, dims.c, target.0, target.1], out)?;
        Ok(self.push(t, Op::Resize { x }))
    }

    /// Batch normalization over axis 1 of an `[N, C, ...]` tensor.
    pub fn batch_norm(&mut self, x: Var, bn: &BnParams) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(shape_err!("batch_norm needs [N, C, ...], got {shape:?}"));
        }
        let (n, c) = (shape[0], shape[1]);
        let per: usize = shape[2..].iter().product();
        if self.params.get(bn.gamma).shape() != [c] {
            return Err(shape_err!(
                "batch_norm: {c} channels, gamma {:?}",
                self.params.get(bn.gamma).shape()
            ));
        }
        let train = self.mode == Mode::Train;
        if train && n < 2 {
            return Err(Error::InvalidInput(
                "batch_norm in training mode needs a batch of at least 2".into(),
            ));
        }
        let eps = T::from_f64_lossy(bn.eps);
        let xv = self.value(x).data();
        let count = n * per;
        let (mean, var): (Vec<T>, Vec<T>) = if train {
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mut s = 0.0f64;
                for b in 0..n {
                    s += xv[(b * c + ch) * per..][..per]
                        .iter()
                        .map(|v| v.to_f64_lossy())
                        .sum::<f64>();
                }
                let m = s / count as f64;
                let mut ss = 0.0f64;
                for b in 0..n {
                    ss += xv[(b * c + ch) * per..][..per]
                        .iter()
                        .map(|v| (v.to_f64_lossy() - m).powi(2))
                        .sum::<f64>();
                }
                mean[ch] = T::from_f64_lossy(m);
                var[ch] = T::from_f64_lossy(ss / count as f64);
            }
            (mean, var)
        } else {
            (
                self.params.get(bn.running_mean).data().to_vec(),
                self.params.get(bn.running_var).data().to_vec(),
            )
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let gamma = self.params.get(bn.gamma).data();
        let beta = self.params.get(bn.beta).data();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * per;
                for i in off..off + per {
                    let h = (xv[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = gamma[ch] * h + beta[ch];
                }
            }
        }
        if train {
            let unbias = T::from_f64_lossy(count as f64 / (count as f64 - 1.0).max(1.0));
            self.bn_updates.push(BnUpdate {
                running_mean: bn.running_mean,
                running_var: bn.running_var,
                batch_mean: mean,
                batch_var_unbiased: var.iter().map(|&v| v * unbias).collect(),
                momentum: bn.momentum,
            });
        }
        let gamma_v = self.param(bn.gamma);
        let beta_v = self.param(bn.beta);
        let t = Tensor::new(shape, out)?;
        Ok(self.push(
            t,
            Op::BatchNorm {
                x,
                gamma: gamma_v,
                beta: beta_v,
                xhat,
                inv_std,
                train,
            },
        ))
    }

    /// Affine map on the last axis; `w` is `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let in_f = *xs.last().ok_or_else(|| shape_err!("linear on a scalar"))?;
        if ws.len() != 2 || ws[1] != in_f {
            return Err(shape_err!("linear: weight {ws:?} for input {xs:?}"));
        }
        let out_f = ws[0];
        if let Some(b) = b {
            if self.shape(b) != [out_f] {
                return Err(shape_err!("linear: bias {:?} for {out_f} features", self.shape(b)));
            }
        }
        let rows = self.value(x).len() / in_f;
        let out = kernels::linear_forward(
            self.value(x).data(),
            rows,
            in_f,
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            out_f,
        );
        let mut shape = xs;
        *shape.last_mut().unwrap() = out_f;
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::Linear { x, w, b }))
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| shape_err!("layer_norm on a scalar"))?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(shape_err!("layer_norm: affine parameters do not match width {d}"));
        }
        let xv = self.value(x).data();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let rows = xv.len() / d;
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v.to_f64_lossy() - mean).powi(2)).sum::<f64>() / d as f64;
            let is = T::from_f64_lossy(1.0 / (var + eps).sqrt());
            let mean = T::from_f64_lossy(mean);
            for i in 0..d {
                let h = (row[i] - mean) * is;
                xhat[r * d + i] = h;
                out[r * d + i] = g[i] * h + bt[i];
            }
            inv_std.push(is);
        }
        let t = Tensor::new(shape, out)?;
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    /// `[N, S, H·D] -> [N·H, S, D]`.
    pub fn split_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let [n, s, e] = shape[..] else {
            return Err(shape_err!("split_heads needs [N, S, E], got {shape:?}"));
        };
        if heads == 0 || e % heads != 0 {
            return Err(shape_err!("split_heads: width {e} not divisible by {heads} heads"));
        }
        let d = e / heads;
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); xv.len()];
        for b in 0..n {
            for t in 0..s {
                for h in 0..heads {
                    let src = &xv[(b * s + t) * e + h * d..][..d];
                    out[((b * heads + h) * s + t) * d..][..d].copy_from_slice(src);
                }
            }
        }
        let t = Tensor::new(vec![n * heads, s, d], out)?;
        Ok(self.push(t, Op::SplitHeads { x, heads }))
    }

    /// `[N·H, S, D] -> [N, S, H·D]`.
    pub fn merge_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let [nh, s, d] = shape[..] else {
            return Err(shape_err!("merge_heads needs [N*H, S, D], got {shape:?}"));
        };
        if heads == 0 || nh % heads != 0 {
            return Err(shape_err!("merge_heads: {nh} groups not divisible by {heads} heads"));
        }
        let n = nh / heads;
        let e = heads * d;
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); xv.len()];
        for b in 0..n {
            for t in 0..s {
                for h in 0..heads {
                    let src = &xv[((b * heads + h) * s + t) * d..][..d];
                    out[(b * s + t) * e + h * d..][..d].copy_from_slice(src);
                }
            }
        }
        let t = Tensor::new(vec![n, s, e], out)?;
        Ok(self.push(t, Op::MergeHeads { x, heads }))
    }

    /// `[G, M, K] · [G, K, N]`, or `[G, M, K] · [G, N, K]ᵀ` with `transpose_b`.
    pub fn bmm(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (&[g, m, k], &[g2, b1, b2]) = (&sa[..], &sb[..]) else {
            return Err(shape_err!("bmm needs rank-3 operands, got {sa:?} and {sb:?}"));
        };
        let (kb, n) = if transpose_b { (b2, b1) } else { (b1, b2) };
        if g != g2 || k != kb {
            return Err(shape_err!("bmm: {sa:?} x {sb:?} (transpose_b = {transpose_b})"));
        }
        let out = kernels::bmm_forward(self.value(a).data(), self.value(b).data(), g, m, k, n, transpose_b);
        let t = Tensor::new(vec![g, m, n], out)?;
        Ok(self.push(t, Op::Bmm { a, b, transpose_b }))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| shape_err!("softmax on a scalar"))?;
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_exact_mut(d) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum = sum + *v;
            }
            for v in row.iter_mut() {
                *v = *v / sum;
            }
        }
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::Softmax(x)))
    }

    /// Inverted dropout; identity in eval mode or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        if self.mode == Mode::Eval || p <= 0.0 {
            return x;
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - p));
        let n = self.value(x).len();
        let mask: Vec<T> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let xv = self.value(x);
        let out = Tensor::new(
            xv.shape().to_vec(),
            xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect(),
        )
        .expect("same shape");
        self.push(out, Op::Dropout { x, mask })
    }

    /// Mean of squared differences, as a one-element tensor.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(shape_err!("mse: {:?} vs {:?}", p.shape(), t.shape()));
        }
        let n = p.len() as f64;
        let s: f64 = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| (a - b).to_f64_lossy().powi(2))
            .sum();
        Ok(self.push(Tensor::scalar(T::from_f64_lossy(s / n)), Op::Mse { pred, target }))
    }

    /// Back-propagates from the one-element tensor `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(shape_err!("backward needs a scalar loss, got {:?}", self.shape(loss)));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(self.shape(loss).to_vec(), vec![T::one()])?);

        fn acc<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }
        let like = |v: Var, data: Vec<T>| -> Tensor<T> {
            Tensor::new(self.shape(v).to_vec(), data).expect("gradient matches value shape")
        };

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let keep = matches!(node.op, Op::Leaf | Op::Param(_));
            let g = if keep {
                continue;
            } else {
                match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                }
            };
            let gd = g.data();
            match &node.op {
                Op::Leaf | Op::Param(_) => unreachable!(),
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::AddMinChannels {
                    target,
                    source,
                    channels,
                } => {
                    let ss = self.shape(*source);
                    let (n, cs) = (ss[0], ss[1]);
                    let per: usize = ss[2..].iter().product();
                    let ct = self.shape(*target)[1];
                    let mut ds = vec![T::zero(); n * cs * per];
                    for b in 0..n {
                        ds[b * cs * per..][..channels * per].copy_from_slice(&gd[b * ct * per..][..channels * per]);
                    }
                    acc(&mut grads, *source, like(*source, ds));
                    acc(&mut grads, *target, g);
                }
                Op::Scale(x, s) => acc(&mut grads, *x, g.map(|v| v * *s)),
                Op::Relu(x) => {
                    let xv = self.value(*x).data();
                    let d = gd
                        .iter()
                        .zip(xv)
                        .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                        .collect();
                    acc(&mut grads, *x, like(*x, d));
                }
                Op::LeakyRelu(x, alpha) => {
                    let xv = self.value(*x).data();
                    let d = gd
                        .iter()
                        .zip(xv)
                        .map(|(&g, &x)| if x > T::zero() { g } else { *alpha * g })
                        .collect();
                    acc(&mut grads, *x, like(*x, d));
                }
                Op::Reshape(x) => acc(&mut grads, *x, like(*x, g.into_data())),
                Op::Conv3x3 { x, w, b } => {
                    let dims = image_dims(self.shape(*x))?;
                    let c_out = self.shape(*w)[0];
                    let (dx, dw, db) =
                        kernels::conv3x3_backward(self.value(*x).data(), dims, self.value(*w).data(), c_out, gd);
                    acc(&mut grads, *x, like(*x, dx));
                    acc(&mut grads, *w, like(*w, dw));
                    acc(&mut grads, *b, like(*b, db));
                }
                Op::TConv2x2 { x, w, b } => {
                    let dims = image_dims(self.shape(*x))?;
                    let c_out = self.shape(*w)[1];
                    let os = g.shape();
                    let (dx, dw, db) = kernels::tconv2x2_backward(
                        self.value(*x).data(),
                        dims,
                        self.value(*w).data(),
                        c_out,
                        (os[2], os[3]),
                        gd,
                    );
                    acc(&mut grads, *x, like(*x, dx));
                    acc(&mut grads, *w, like(*w, dw));
                    acc(&mut grads, *b, like(*b, db));
                }
                Op::MaxPool2x2 { x, argmax } => {
                    let dx = kernels::maxpool2x2_backward(self.value(*x).len(), argmax, gd);
                    acc(&mut grads, *x, like(*x, dx));
                }
                Op::Resize { x } => {
                    let dims = image_dims(self.shape(*x))?;
                    let os = g.shape();
                    let dx = kernels::resize_bilinear_backward(dims, (os[2], os[3]), gd);
                    acc(&mut grads, *x, like(*x, dx));
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    train,
                } => {
                    let shape = self.shape(*x);
                    let (n, c) = (shape[0], shape[1]);
                    let per: usize = shape[2..].iter().product();
                    let gm = self.value(*gamma).data();
                    let mut dgamma = vec![T::zero(); c];
                    let mut dbeta = vec![T::zero(); c];
                    for b in 0..n {
                        for ch in 0..c {
                            let off = (b * c + ch) * per;
                            for i in off..off + per {
                                dgamma[ch] = dgamma[ch] + gd[i] * xhat[i];
                                dbeta[ch] = dbeta[ch] + gd[i];
                            }
                        }
                    }
                    let mut dx = vec![T::zero(); gd.len()];
                    let m = T::from_usize(n * per).expect("count");
                    for ch in 0..c {
                        let scale = gm[ch] * inv_std[ch];
                        // Σ dxhat = γ Σ g = γ dβ ; Σ dxhat·xhat = γ dγ
                        let (sum_g, sum_gx) = (dbeta[ch], dgamma[ch]);
                        for b in 0..n {
                            let off = (b * c + ch) * per;
                            for i in off..off + per {
                                dx[i] = if *train {
                                    scale * (gd[i] - sum_g / m - xhat[i] * sum_gx / m)
                                } else {
                                    scale * gd[i]
                                };
                            }
                        }
                    }
                    acc(&mut grads, *x, like(*x, dx));
                    acc(&mut grads, *gamma, like(*gamma, dgamma));
                    acc(&mut grads, *beta, like(*beta, dbeta));
                }
                Op::Linear { x, w, b } => {
                    let ws = self.shape(*w);
                    let (out_f, in_f) = (ws[0], ws[1]);
                    let rows = self.value(*x).len() / in_f;
                    let (dx, dw, db) =
                        kernels::linear_backward(self.value(*x).data(), rows, in_f, self.value(*w).data(), out_f, gd);
                    acc(&mut grads, *x, like(*x, dx));
                    acc(&mut grads, *w, like(*w, dw));
                    if let Some(b) = b {
                        acc(&mut grads, *b, like(*b, db));
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let d = self.shape(*gamma)[0];
                    let gm = self.value(*gamma).data();
                    let mut dgamma = vec![T::zero(); d];
                    let mut dbeta = vec![T::zero(); d];
                    let mut dx = vec![T::zero(); gd.len()];
                    let df = T::from_usize(d).expect("width");
                    for (r, is) in inv_std.iter().enumerate() {
                        let gr = &gd[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for i in 0..d {
                            dgamma[i] = dgamma[i] + gr[i] * hr[i];
                            dbeta[i] = dbeta[i] + gr[i];
                            let dh = gr[i] * gm[i];
                            s1 = s1 + dh;
                            s2 = s2 + dh * hr[i];
                        }
                        for i in 0..d {
                            let dh = gr[i] * gm[i];
                            dx[r * d + i] = *is * (dh - s1 / df - hr[i] * s2 / df);
                        }
                    }
                    acc(&mut grads, *x, like(*x, dx));
                    acc(&mut grads, *gamma, like(*gamma, dgamma));
                    acc(&mut grads, *beta, like(*beta, dbeta));
                }
                Op::SplitHeads { x, heads } => {
                    let [n, s, e] = self.shape(*x)[..] else { unreachable!() };
                    let d = e / heads;
                    let mut dx = vec![T::zero(); gd.len()];
                    for b in 0..n {
                        for t in 0..s {
                            for h in 0..*heads {
                                dx[(b * s + t) * e + h * d..][..d]
                                    .copy_from_slice(&gd[((b * heads + h) * s + t) * d..][..d]);
                            }
                        }
                    }
                    acc(&mut grads, *x, like(*x, dx));
                }
                Op::MergeHeads { x, heads } => {
                    let [nh, s, d] = self.shape(*x)[..] else { unreachable!() };
                    let n = nh / heads;
                    let e = heads * d;
                    let mut dx = vec![T::zero(); gd.len()];
                    for b in 0..n {
                        for t in 0..s {
                            for h in 0..*heads {
                                dx[((b * heads + h) * s + t) * d..][..d]
                                    .copy_from_slice(&gd[(b * s + t) * e + h * d..][..d]);
                            }
                        }
                    }
                    acc(&mut grads, *x, like(*x, dx));
                }
                Op::Bmm { a, b, transpose_b } => {
                    let [g_, m, k] = self.shape(*a)[..] else { unreachable!() };
                    let n = g.shape()[2];
                    let (da, db) = kernels::bmm_backward(
                        self.value(*a).data(),
                        self.value(*b).data(),
                        g_,
                        m,
                        k,
                        n,
                        *transpose_b,
                        gd,
                    );
                    acc(&mut grads, *a, like(*a, da));
                    acc(&mut grads, *b, like(*b, db));
                }
                Op::Softmax(x) => {
                    let y = node.value.as_ref().expect("softmax output").data();
                    let d = *g.shape().last().unwrap();
                    let mut dx = vec![T::zero(); gd.len()];
                    for ((dr, gr), yr) in dx.chunks_exact_mut(d).zip(gd.chunks_exact(d)).zip(y.chunks_exact(d)) {
                        let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for i in 0..d {
                            dr[i] = yr[i] * (gr[i] - dot);
                        }
                    }
                    acc(&mut grads, *x, like(*x, dx));
                }
                Op::Dropout { x, mask } => {
                    let dx = gd.iter().zip(mask).map(|(&g, &m)| g * m).collect();
                    acc(&mut grads, *x, like(*x, dx));
                }
                Op::Mse { pred, target } => {
                    let (p, t) = (self.value(*pred).data(), self.value(*target).data());
                    let scale = gd[0] * T::from_f64_lossy(2.0 / p.len() as f64);
                    let dp: Vec<T> = p.iter().zip(t).map(|(&a, &b)| (a - b) * scale).collect();
                    let dt: Vec<T> = dp.iter().map(|&v| -v).collect();
                    acc(&mut grads, *pred, like(*pred, dp));
                    acc(&mut grads, *target, like(*target, dt));
                }
            }
        }

        let params = self
            .param_vars
            .iter()
            .map(|v| v.and_then(|v| grads[v.0].take()))
            .collect();
        Ok(Gradients { nodes: grads, params })
    }
}

/// Gradients of a scalar loss after [`Tape::backward`].
pub struct Gradients<T> {
    nodes: Vec<Option<Tensor<T>>>,
    params: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to an input registered with [`Tape::input`].
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].as_ref()
    }

    /// Gradient with respect to a parameter; `None` if it did not affect the loss.
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(id.0).and_then(|g| g.as_ref())
    }

    /// Sum of squared gradient entries over all parameters.
    pub fn param_norm_sq(&self) -> f64 {
        self.params
            .iter()
            .flatten()
            .flat_map(|t| t.data().iter())
            .map(|v| v.to_f64_lossy().powi(2))
            .sum()
    }
}

/// Applies running-statistic updates: `r ← (1 − m)·r + m·batch`.
pub fn apply_bn_updates<T: Scalar>(store: &mut ParamStore<T>, updates: &[BnUpdate<T>]) {
    for u in updates {
        let m = T::from_f64_lossy(u.momentum);
        for (r, &b) in store.get_mut(u.running_mean).data_mut().iter_mut().zip(&u.batch_mean) {
            *r = (T::one() - m) * *r + m * b;
        }
        for (r, &b) in store
            .get_mut(u.running_var)
            .data_mut()
            .iter_mut()
            .zip(&u.batch_var_unbiased)
        {
            *r = (T::one() - m) * *r + m * b;
        }
    }
}
