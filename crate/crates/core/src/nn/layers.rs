//! Parameterized layers on top of [`Tape`] operations.

use rand::Rng;

use super::params::{ParamId, ParamKind, ParamStore};
use super::tape::{BnParams, Tape, Var};
use super::{Scalar, Tensor};
use crate::error::{shape_err, Result};

pub const LEAKY_SLOPE: f64 = 0.01;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct Conv3x3 {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv3x3 {
    pub fn init<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = c_in * 9;
        Self {
            weight: store.add_fan_in_uniform(format!("{name}.weight"), vec![c_out, c_in, 3, 3], fan_in, rng),
            bias: store.add_fan_in_uniform(format!("{name}.bias"), vec![c_out], fan_in, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        tape.conv3x3(x, w, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TConv2x2 {
    pub weight: ParamId,
    pub bias: ParamId,
    pub target: Option<(usize, usize)>,
}

impl TConv2x2 {
    pub fn init<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        target: Option<(usize, usize)>,
        rng: &mut R,
    ) -> Self {
        let fan_in = c_out * 4;
        Self {
            weight: store.add_fan_in_uniform(format!("{name}.weight"), vec![c_in, c_out, 2, 2], fan_in, rng),
            bias: store.add_fan_in_uniform(format!("{name}.bias"), vec![c_out], fan_in, rng),
            target,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        tape.tconv2x2(x, w, b, self.target)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn init<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_f: usize,
        out_f: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: store.add_fan_in_uniform(format!("{name}.weight"), vec![out_f, in_f], in_f, rng),
            bias: bias.then(|| store.add_fan_in_uniform(format!("{name}.bias"), vec![out_f], in_f, rng)),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let w = tape.param(self.weight);
        let b = self.bias.map(|b| tape.param(b));
        tape.linear(x, w, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BatchNorm(pub BnParams);

impl BatchNorm {
    pub fn init<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        Self(BnParams {
            gamma: store.add(
                format!("{name}.gamma"),
                ParamKind::Trainable,
                Tensor::full(vec![channels], T::one()),
            ),
            beta: store.add(
                format!("{name}.beta"),
                ParamKind::Trainable,
                Tensor::zeros(vec![channels]),
            ),
            running_mean: store.add(
                format!("{name}.running_mean"),
                ParamKind::Buffer,
                Tensor::zeros(vec![channels]),
            ),
            running_var: store.add(
                format!("{name}.running_var"),
                ParamKind::Buffer,
                Tensor::full(vec![channels], T::one()),
            ),
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        tape.batch_norm(x, &self.0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn init<T: Scalar>(store: &mut ParamStore<T>, name: &str, width: usize) -> Self {
        Self {
            gamma: store.add(
                format!("{name}.gamma"),
                ParamKind::Trainable,
                Tensor::full(vec![width], T::one()),
            ),
            beta: store.add(format!("{name}.beta"), ParamKind::Trainable, Tensor::zeros(vec![width])),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let g = tape.param(self.gamma);
        let b = tape.param(self.beta);
        tape.layer_norm(x, g, b, LN_EPS)
    }
}

/// Multi-head scaled dot-product attention without masking.
#[derive(Debug, Clone, Copy)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
    pub dropout: f64,
}

impl MultiHeadAttention {
    pub fn init<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        d_model: usize,
        heads: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(shape_err!("d_model {d_model} is not divisible by {heads} heads"));
        }
        Ok(Self {
            q: Linear::init(store, &format!("{name}.q"), d_model, d_model, true, rng),
            k: Linear::init(store, &format!("{name}.k"), d_model, d_model, true, rng),
            v: Linear::init(store, &format!("{name}.v"), d_model, d_model, true, rng),
            out: Linear::init(store, &format!("{name}.out"), d_model, d_model, true, rng),
            heads,
            dropout,
        })
    }

    /// `query` is `[N, S, E]`, `kv` is `[N, S_kv, E]`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, query: Var, kv: Var) -> Result<Var> {
        let (qs, ks) = (tape.shape(query).to_vec(), tape.shape(kv).to_vec());
        if qs.len() != 3 || ks.len() != 3 || qs[0] != ks[0] || qs[2] != ks[2] {
            return Err(shape_err!("attention: query {qs:?} vs key/value {ks:?}"));
        }
        let dh = qs[2] / self.heads;
        let q = self.q.forward(tape, query)?;
        let k = self.k.forward(tape, kv)?;
        let v = self.v.forward(tape, kv)?;
        let q = tape.split_heads(q, self.heads)?;
        let k = tape.split_heads(k, self.heads)?;
        let v = tape.split_heads(v, self.heads)?;
        let q = tape.scale(q, T::from_f64_lossy(1.0 / (dh as f64).sqrt()));
        let scores = tape.bmm(q, k, true)?;
        let attn = tape.softmax(scores)?;
        let attn = tape.dropout(attn, self.dropout);
        let ctx = tape.bmm(attn, v, false)?;
        let ctx = tape.merge_heads(ctx, self.heads)?;
        self.out.forward(tape, ctx)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FeedForward {
    pub lin1: Linear,
    pub lin2: Linear,
    pub dropout: f64,
}

impl FeedForward {
    pub fn init<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        d_model: usize,
        ff_dim: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            lin1: Linear::init(store, &format!("{name}.lin1"), d_model, ff_dim, true, rng),
            lin2: Linear::init(store, &format!("{name}.lin2"), ff_dim, d_model, true, rng),
            dropout,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let h = self.lin1.forward(tape, x)?;
        let h = tape.relu(h);
        let h = tape.dropout(h, self.dropout);
        self.lin2.forward(tape, h)
    }
}

/// Post-norm transformer encoder layer.
#[derive(Debug, Clone, Copy)]
pub struct TransformerEncoderLayer {
    pub self_attn: MultiHeadAttention,
    pub ff: FeedForward,
    pub norm1: LayerNorm,
    pub norm2: LayerNorm,
    pub dropout: f64,
}

impl TransformerEncoderLayer {
    pub fn init<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        d_model: usize,
        heads: usize,
        ff_dim: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            self_attn: MultiHeadAttention::init(store, &format!("{name}.self_attn"), d_model, heads, dropout, rng)?,
            ff: FeedForward::init(store, &format!("{name}.ff"), d_model, ff_dim, dropout, rng),
            norm1: LayerNorm::init(store, &format!("{name}.norm1"), d_model),
            norm2: LayerNorm::init(store, &format!("{name}.norm2"), d_model),
            dropout,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let sa = self.self_attn.forward(tape, x, x)?;
        let sa = tape.dropout(sa, self.dropout);
        let h = tape.add(x, sa)?;
        let h = self.norm1.forward(tape, h)?;
        let ff = self.ff.forward(tape, h)?;
        let ff = tape.dropout(ff, self.dropout);
        let h2 = tape.add(h, ff)?;
        self.norm2.forward(tape, h2)
    }
}

/// Post-norm transformer decoder layer with unmasked self-attention.
#[derive(Debug, Clone, Copy)]
pub struct TransformerDecoderLayer {
    pub self_attn: MultiHeadAttention,
    pub cross_attn: MultiHeadAttention,
    pub ff: FeedForward,
    pub norm1: LayerNorm,
    pub norm2: LayerNorm,
    pub norm3: LayerNorm,
    pub dropout: f64,
}

impl TransformerDecoderLayer {
    pub fn init<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        d_model: usize,
        heads: usize,
        ff_dim: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            self_attn: MultiHeadAttention::init(store, &format!("{name}.self_attn"), d_model, heads, dropout, rng)?,
            cross_attn: MultiHeadAttention::init(store, &format!("{name}.cross_attn"), d_model, heads, dropout, rng)?,
            ff: FeedForward::init(store, &format!("{name}.ff"), d_model, ff_dim, dropout, rng),
            norm1: LayerNorm::init(store, &format!("{name}.norm1"), d_model),
            norm2: LayerNorm::init(store, &format!("{name}.norm2"), d_model),
            norm3: LayerNorm::init(store, &format!("{name}.norm3"), d_model),
            dropout,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, tgt: Var, memory: Var) -> Result<Var> {
        let (ts, ms) = (tape.shape(tgt).to_vec(), tape.shape(memory).to_vec());
        if ts.last() != ms.last() {
            return Err(shape_err!("decoder: tgt {ts:?} and memory {ms:?} differ in d_model"));
        }
        let sa = self.self_attn.forward(tape, tgt, tgt)?;
        let sa = tape.dropout(sa, self.dropout);
        let h = tape.add(tgt, sa)?;
        let h = self.norm1.forward(tape, h)?;
        let ca = self.cross_attn.forward(tape, h, memory)?;
        let ca = tape.dropout(ca, self.dropout);
        let h2 = tape.add(h, ca)?;
        let h2 = self.norm2.forward(tape, h2)?;
        let ff = self.ff.forward(tape, h2)?;
        let ff = tape.dropout(ff, self.dropout);
        let h3 = tape.add(h2, ff)?;
        self.norm3.forward(tape, h3)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::Mode;

    // Reference values from torch.nn.TransformerEncoderLayer / TransformerDecoderLayer
    // (d_model 4, 2 heads, feed-forward 6, dropout 0, post-norm) loaded with the
    // same deterministic weights as `fill` below.
    const ENC_REF: [f64; 12] = [
        0.800107041176124,
        -0.333374359853492,
        1.19599125392353,
        -1.500238399774329,
        0.324953195802231,
        -0.808022546418032,
        1.656929286019681,
        -1.098210193810317,
        0.901271841795671,
        -0.533531062159449,
        1.186805395512527,
        -1.423087381296924,
    ];
    const DEC_REF: [f64; 12] = [
        1.583618369075731,
        -0.264281167733113,
        -0.396923166938717,
        -0.773264932913866,
        1.43487139783946,
        -0.512555449546715,
        0.17158050633185,
        -1.013120744747916,
        1.603151771989807,
        -0.351359106543957,
        -0.376538738599537,
        -0.71450585127409,
    ];

    fn fill(store: &mut ParamStore<f64>, id: ParamId, k: usize) {
        for (j, v) in store.get_mut(id).data_mut().iter_mut().enumerate() {
            *v = 0.5 * (0.7 * j as f64 + 1.1 * k as f64).sin();
        }
    }

    fn set_mha(store: &mut ParamStore<f64>, m: &MultiHeadAttention, k: usize) -> usize {
        let lins = [m.q, m.k, m.v];
        for (i, l) in lins.iter().enumerate() {
            fill(store, l.weight, k + i);
            fill(store, l.bias.unwrap(), k + 3 + i);
        }
        fill(store, m.out.weight, k + 6);
        fill(store, m.out.bias.unwrap(), k + 7);
        k + 8
    }

    fn set_ff(store: &mut ParamStore<f64>, f: &FeedForward, k: usize) -> usize {
        fill(store, f.lin1.weight, k);
        fill(store, f.lin1.bias.unwrap(), k + 1);
        fill(store, f.lin2.weight, k + 2);
        fill(store, f.lin2.bias.unwrap(), k + 3);
        k + 4
    }

    fn set_ln(store: &mut ParamStore<f64>, n: &LayerNorm, k: usize) -> usize {
        for (j, v) in store.get_mut(n.gamma).data_mut().iter_mut().enumerate() {
            *v = 1.0 + 0.2 * ((k + j) as f64).sin();
        }
        for (j, v) in store.get_mut(n.beta).data_mut().iter_mut().enumerate() {
            *v = 0.1 * ((k + j) as f64).cos();
        }
        k + 1
    }

    fn tokens(f: impl Fn(f64) -> f64) -> Tensor<f64> {
        Tensor::from_fn(vec![1, 3, 4], |j| f(j as f64))
    }

    fn x_ref() -> Tensor<f64> {
        tokens(|j| 0.3 * (0.9 * j + 0.2).cos())
    }

    fn m_ref() -> Tensor<f64> {
        tokens(|j| 0.4 * (0.5 * j - 0.3).sin())
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(9)
    }

    #[test]
    fn encoder_matches_reference() {
        let mut store = ParamStore::new();
        let enc = TransformerEncoderLayer::init(&mut store, "enc", 4, 2, 6, 0.0, &mut rng()).unwrap();
        let k = set_mha(&mut store, &enc.self_attn, 0);
        let k = set_ff(&mut store, &enc.ff, k);
        let k = set_ln(&mut store, &enc.norm1, k);
        set_ln(&mut store, &enc.norm2, k);
        let mut tape = Tape::new(&store, Mode::Eval);
        let x = tape.input(x_ref());
        let y = enc.forward(&mut tape, x).unwrap();
        for (a, b) in tape.value(y).data().iter().zip(ENC_REF) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn decoder_matches_reference() {
        let mut store = ParamStore::new();
        let dec = TransformerDecoderLayer::init(&mut store, "dec", 4, 2, 6, 0.0, &mut rng()).unwrap();
        let k = set_mha(&mut store, &dec.self_attn, 0);
        let k = set_mha(&mut store, &dec.cross_attn, k);
        let k = set_ff(&mut store, &dec.ff, k);
        let k = set_ln(&mut store, &dec.norm1, k);
        let k = set_ln(&mut store, &dec.norm2, k);
        set_ln(&mut store, &dec.norm3, k);
        let mut tape = Tape::new(&store, Mode::Eval);
        let x = tape.input(x_ref());
        let m = tape.input(m_ref());
        let y = dec.forward(&mut tape, x, m).unwrap();
        for (a, b) in tape.value(y).data().iter().zip(DEC_REF) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn encoder_is_permutation_equivariant() {
        let mut store = ParamStore::new();
        let enc = TransformerEncoderLayer::init(&mut store, "enc", 6, 3, 8, 0.0, &mut rng()).unwrap();
        let x = Tensor::<f64>::from_fn(vec![1, 4, 6], |i| ((i * 7) % 5) as f64 * 0.3 - 0.5 + i as f64 * 0.01);
        let perm = [2usize, 0, 3, 1];
        let mut px = Tensor::zeros(vec![1, 4, 6]);
        for (dst, &src) in perm.iter().enumerate() {
            px.data_mut()[dst * 6..(dst + 1) * 6].copy_from_slice(&x.data()[src * 6..(src + 1) * 6]);
        }
        let mut tape = Tape::new(&store, Mode::Eval);
        let (a, b) = (tape.input(x), tape.input(px));
        let ya = enc.forward(&mut tape, a).unwrap();
        let yb = enc.forward(&mut tape, b).unwrap();
        let (ya, yb) = (tape.value(ya).data(), tape.value(yb).data());
        for (dst, &src) in perm.iter().enumerate() {
            for i in 0..6 {
                assert!((yb[dst * 6 + i] - ya[src * 6 + i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn decoder_with_zero_projections_is_residual_identity() {
        let mut store = ParamStore::new();
        let dec = TransformerDecoderLayer::init(&mut store, "dec", 4, 2, 6, 0.0, &mut rng()).unwrap();
        for id in store.ids().collect::<Vec<_>>() {
            if !store.entry(id).name.contains("norm") {
                store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        // Layer-normalized input so the identity-affine norms are no-ops.
        let mut tape = Tape::new(&store, Mode::Eval);
        let raw = tape.input(x_ref().map(|v| 100.0 * v));
        let (g, b) = (
            tape.input(Tensor::full(vec![4], 1.0)),
            tape.input(Tensor::zeros(vec![4])),
        );
        let tgt = tape.layer_norm(raw, g, b, LN_EPS).unwrap();
        let m = tape.input(m_ref());
        let y = dec.forward(&mut tape, tgt, m).unwrap();
        // Each norm rescales unit-variance rows by 1/sqrt(1 + eps).
        assert!(tape.value(y).max_abs_diff(tape.value(tgt)) < 1e-4);
    }

    #[test]
    fn figure_geometry_and_head_check() {
        let mut store = ParamStore::<f32>::new();
        let mut r = rng();
        let enc = TransformerEncoderLayer::init(&mut store, "enc", 500, 10, 2048, 0.1, &mut r).unwrap();
        let dec = TransformerDecoderLayer::init(&mut store, "dec", 500, 10, 2048, 0.1, &mut r).unwrap();
        let mut tape = Tape::new(&store, Mode::Eval);
        let x = tape.input(Tensor::full(vec![1, 32, 500], 0.1));
        let mem = enc.forward(&mut tape, x).unwrap();
        assert_eq!(tape.shape(mem), &[1, 32, 500]);
        let y = dec.forward(&mut tape, x, mem).unwrap();
        assert_eq!(tape.shape(y), &[1, 32, 500]);
        assert!(MultiHeadAttention::init(&mut store, "bad", 500, 7, 0.0, &mut r).is_err());
    }

    #[test]
    fn leaky_relu_and_mse_examples() {
        let store = ParamStore::<f64>::new();
        let mut tape = Tape::new(&store, Mode::Eval);
        let x = tape.input(Tensor::new(vec![3], vec![3.0, -2.0, -5.0]).unwrap());
        let y = tape.leaky_relu(x, 0.01);
        assert_eq!(tape.value(y).data(), &[3.0, -0.02, -0.05]);
        let z = tape.leaky_relu(x, 0.0);
        assert_eq!(tape.value(z).data(), &[3.0, -0.0, -0.0]);
        let p = tape.input(Tensor::new(vec![2], vec![1.0, 3.0]).unwrap());
        let t = tape.input(Tensor::new(vec![2], vec![1.0, 1.0]).unwrap());
        let l = tape.mse(p, t).unwrap();
        assert_eq!(tape.value(l).data(), &[2.0]);
        let l0 = tape.mse(p, p).unwrap();
        assert_eq!(tape.value(l0).data(), &[0.0]);
    }

    #[test]
    fn batch_norm_examples() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm::init(&mut store, "bn", 1);
        let mut tape = Tape::new(&store, Mode::Train);
        let x = tape.input(Tensor::new(vec![2, 1, 1, 1], vec![0.0, 2.0]).unwrap());
        let y = bn.forward(&mut tape, x).unwrap();
        let v = tape.value(y).data();
        assert!((v[0] + 1.0).abs() < 1e-5 && (v[1] - 1.0).abs() < 1e-5);
        let single = tape.input(Tensor::zeros(vec![1, 1, 2, 2]));
        assert!(bn.forward(&mut tape, single).is_err());
        let updates = tape.take_bn_updates();
        drop(tape);
        crate::nn::apply_bn_updates(&mut store, &updates);
        // mean 1, unbiased var 2
        assert!((store.get(bn.0.running_mean).data()[0] - 0.1).abs() < 1e-12);
        assert!((store.get(bn.0.running_var).data()[0] - (0.9 + 0.2)).abs() < 1e-12);

        store.get_mut(bn.0.beta).data_mut()[0] = 0.5;
        let mut tape = Tape::new(&store, Mode::Train);
        let c = tape.input(Tensor::full(vec![3, 1, 2, 2], 4.0));
        let y = bn.forward(&mut tape, c).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.5));
    }
}
