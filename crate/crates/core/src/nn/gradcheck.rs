//! Central finite-difference gradient checks at f64, and a suite covering
//! every tape operation and layer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::*;
use super::*;
use crate::error::Result;

const EPS: f64 = 1e-6;
const TOL: f64 = 1e-4;

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

/// Reduces `out` to a scalar with fixed random weights.
fn project(tape: &mut Tape<'_, f64>, out: Var, seed: u64) -> Result<Var> {
    let n = tape.value(out).len();
    let flat = tape.reshape(out, vec![1, n])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = tape.input(random(&[1, n], &mut rng));
    tape.linear(flat, w, None)
}

fn loss_value<F>(store: &ParamStore<f64>, inputs: &[Tensor<f64>], mode: Mode, f: &F) -> f64
where
    F: Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::with_seed(store, mode, 3);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let out = f(&mut tape, &vars).unwrap();
    let loss = project(&mut tape, out, 1).unwrap();
    tape.value(loss).data()[0]
}

fn close(analytic: f64, numeric: f64, tol: f64) -> bool {
    (analytic - numeric).abs() <= tol * analytic.abs().max(numeric.abs()) + 1e-8
}

/// Outcome of one check: the number of probed entries, or the first mismatch.
pub type CheckResult = std::result::Result<usize, String>;

/// Checks gradients w.r.t. every input and every trainable parameter at
/// relative tolerance 1e-4.
pub fn check<F>(store: &ParamStore<f64>, inputs: &[Tensor<f64>], mode: Mode, f: F) -> CheckResult
where
    F: Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var>,
{
    check_with(store, inputs, mode, TOL, usize::MAX, f)
}

/// As [`check`] with relative tolerance `tol`, probing at most
/// `max_per_tensor` evenly spaced entries of each tensor.
pub fn check_with<F>(
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    mode: Mode,
    tol: f64,
    max_per_tensor: usize,
    f: F,
) -> CheckResult
where
    F: Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var>,
{
    let probes = |len: usize| -> Vec<usize> {
        if len <= max_per_tensor {
            (0..len).collect()
        } else {
            (0..max_per_tensor).map(|i| i * len / max_per_tensor).collect()
        }
    };
    let mut tape = Tape::with_seed(store, mode, 3);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let out = f(&mut tape, &vars).map_err(|e| e.to_string())?;
    let loss = project(&mut tape, out, 1).map_err(|e| e.to_string())?;
    let grads = tape.backward(loss).map_err(|e| e.to_string())?;
    let mut probed = 0;

    for (k, (input, var)) in inputs.iter().zip(&vars).enumerate() {
        let g = grads
            .wrt(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(input.shape().to_vec()));
        for i in probes(input.len()) {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += EPS;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= EPS;
            let num = (loss_value(store, &plus, mode, &f) - loss_value(store, &minus, mode, &f)) / (2.0 * EPS);
            if !close(g.data()[i], num, tol) {
                return Err(format!("input {k}[{i}]: analytic {} vs numeric {num}", g.data()[i]));
            }
            probed += 1;
        }
    }
    for id in store.ids() {
        let entry = store.entry(id);
        if entry.kind != ParamKind::Trainable {
            continue;
        }
        let g = grads
            .param(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(entry.value.shape().to_vec()));
        for i in probes(entry.value.len()) {
            let mut plus = store.clone();
            plus.get_mut(id).data_mut()[i] += EPS;
            let mut minus = store.clone();
            minus.get_mut(id).data_mut()[i] -= EPS;
            let num = (loss_value(&plus, inputs, mode, &f) - loss_value(&minus, inputs, mode, &f)) / (2.0 * EPS);
            if !close(g.data()[i], num, tol) {
                return Err(format!(
                    "{}[{i}]: analytic {} vs numeric {num}",
                    entry.name,
                    g.data()[i]
                ));
            }
            probed += 1;
        }
    }
    Ok(probed)
}

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(42)
}

fn grad_conv3x3() -> CheckResult {
    let mut n = 0;
    let mut r = rng();
    let mut store = ParamStore::new();
    let conv = Conv3x3::init(&mut store, "c", 2, 3, &mut r);
    let x = random(&[2, 2, 4, 5], &mut r);
    n += check(&store, &[x], Mode::Train, |t, v| conv.forward(t, v[0]))?;
    Ok(n)
}

fn grad_tconv2x2_with_and_without_target() -> CheckResult {
    let mut n = 0;
    let mut r = rng();
    for target in [None, Some((7, 5))] {
        let mut store = ParamStore::new();
        let tc = TConv2x2::init(&mut store, "t", 3, 2, target, &mut r);
        let x = random(&[2, 3, 3, 2], &mut r);
        n += check(&store, &[x], Mode::Train, |t, v| tc.forward(t, v[0]))?;
    }
    Ok(n)
}

fn grad_maxpool_odd_sizes() -> CheckResult {
    let mut n = 0;
    let mut r = rng();
    let store = ParamStore::new();
    let x = random(&[2, 2, 5, 7], &mut r);
    n += check(&store, &[x], Mode::Train, |t, v| t.max_pool2x2(v[0]))?;
    Ok(n)
}

fn grad_resize_up_and_down() -> CheckResult {
    let mut n = 0;
    let mut r = rng();
    let store = ParamStore::new();
    for target in [(9, 5), (3, 2), (1, 4)] {
        let x = random(&[1, 2, 4, 3], &mut r);
        n += check(&store, &[x], Mode::Train, |t, v| t.resize_bilinear(v[0], target))?;
    }
    Ok(n)
}

fn grad_batch_norm_train_and_eval() -> CheckResult {
    let mut n = 0;
    let mut r = rng();
    let mut store = ParamStore::new();
    let bn = BatchNorm::init(&mut store, "bn", 3);
    // Non-trivial affine and running statistics.
    store.get_mut(bn.0.gamma).data_mut().copy_from_slice(&[1.5, -0.7, 0.3]);
    store.get_mut(bn.0.beta).data_mut().copy_from_slice(&[0.1, 0.2, -0.4]);
    store
        .get_mut(bn.0.running_mean)
        .data_mut()
        .copy_from_slice(&[0.3, -0.1, 0.0]);
    store
        .get_mut(bn.0.running_var)
        .data_mut()
        .copy_from_slice(&[2.0, 0.5, 1.0]);
    let x4 = random(&[3, 3, 2, 2], &mut r);
    let x2 = random(&[4, 3], &mut r);
    for mode in [Mode::Train, Mode::Eval] {
        n += check(&store, std::slice::from_ref(&x4), mode, |t, v| bn.forward(t, v[0]))?;
        n += check(&store, std::slice::from_ref(&x2), mode, |t, v| bn.forward(t, v[0]))?;
    }
    Ok(n)
}

fn grad_linear_with_and_without_bias() -> CheckResult {
    let mut n = 0;
    let mut r = rng();
    for bias in [true, false] {
        let mut store = ParamStore::new();
        let lin = Linear::init(&mut store, "l", 4, 3, bias, &mut r);
        let x = random(&[2, 3, 4], &mut r);
        n += check(&store, &[x], Mode::Train, |t, v| lin.forward(t, v[0]))?;
    }
    Ok(n)
}

fn grad_activations_and_elementwise() -> CheckResult {
    let mut n = 0;
    let mut r = rng();
    let store = ParamStore::new();
    let x = random(&[2, 3, 4], &mut r);
    let y = random(&[2, 3, 4], &mut r);
    n += check(&store, std::slice::from_ref(&x), Mode::Train, |t, v| Ok(t.relu(v[0])))?;
    n += check(&store, std::slice::from_ref(&x), Mode::Train, |t, v| {
        Ok(t.leaky_relu(v[0], LEAKY_SLOPE))
    })?;
    n += check(&store, std::slice::from_ref(&x), Mode::Train, |t, v| {
        Ok(t.scale(v[0], -2.5))
    })?;
    n += check(&store, &[x.clone(), y.clone()], Mode::Train, |t, v| t.add(v[0], v[1]))?;
    n += check(&store, &[x.clone(), y.clone()], Mode::Train, |t, v| t.mse(v[0], v[1]))?;
    n += check(&store, std::slice::from_ref(&x), Mode::Train, |t, v| t.softmax(v[0]))?;
    n += check(&store, std::slice::from_ref(&x), Mode::Train, |t, v| {
        t.reshape(v[0], vec![4, 6])
    })?;
    n += check(&store, &[x], Mode::Train, |t, v| Ok(t.dropout(v[0], 0.3)))?;
    Ok(n)
}

fn grad_skip_add_min_channels() -> CheckResult {
    let mut n = 0;
    let mut r = rng();
    let store = ParamStore::new();
    let wide = random(&[2, 4, 3, 2], &mut r);
    let narrow = random(&[2, 2, 6], &mut r);
    n += check(&store, &[wide.clone(), narrow.clone()], Mode::Train, |t, v| {
        t.add_min_channels(v[0], v[1])
    })?;
    n += check(&store, &[narrow, wide], Mode::Train, |t, v| {
        t.add_min_channels(v[0], v[1])
    })?;
    Ok(n)
}

fn grad_layer_norm_heads_bmm() -> CheckResult {
    let mut n = 0;
    let mut r = rng();
    let mut store = ParamStore::new();
    let ln = LayerNorm::init(&mut store, "ln", 6);
    store
        .get_mut(ln.gamma)
        .data_mut()
        .copy_from_slice(&[1.0, 0.5, -1.2, 2.0, 0.3, 0.9]);
    let x = random(&[2, 3, 6], &mut r);
    n += check(&store, std::slice::from_ref(&x), Mode::Train, |t, v| {
        ln.forward(t, v[0])
    })?;
    let empty = ParamStore::new();
    n += check(&empty, std::slice::from_ref(&x), Mode::Train, |t, v| {
        t.split_heads(v[0], 3)
    })?;
    let y = random(&[6, 3, 2], &mut r);
    n += check(&empty, &[y], Mode::Train, |t, v| t.merge_heads(v[0], 3))?;
    let a = random(&[2, 3, 4], &mut r);
    let b = random(&[2, 4, 5], &mut r);
    let bt = random(&[2, 5, 4], &mut r);
    n += check(&empty, &[a.clone(), b], Mode::Train, |t, v| t.bmm(v[0], v[1], false))?;
    n += check(&empty, &[a, bt], Mode::Train, |t, v| t.bmm(v[0], v[1], true))?;
    Ok(n)
}

fn grad_transformer_layers() -> CheckResult {
    let mut n = 0;
    let mut r = rng();
    let mut store = ParamStore::new();
    let enc = TransformerEncoderLayer::init(&mut store, "enc", 4, 2, 6, 0.0, &mut r).map_err(|e| e.to_string())?;
    let dec = TransformerDecoderLayer::init(&mut store, "dec", 4, 2, 6, 0.0, &mut r).map_err(|e| e.to_string())?;
    let x = random(&[2, 3, 4], &mut r);
    let m = random(&[2, 3, 4], &mut r);
    n += check(&store, std::slice::from_ref(&x), Mode::Train, |t, v| {
        enc.forward(t, v[0])
    })?;
    n += check(&store, &[x, m], Mode::Train, |t, v| dec.forward(t, v[0], v[1]))?;
    Ok(n)
}

fn grad_transformer_with_dropout_mask() -> CheckResult {
    let mut n = 0;
    let mut r = rng();
    let mut store = ParamStore::new();
    let enc = TransformerEncoderLayer::init(&mut store, "enc", 4, 2, 5, 0.2, &mut r).map_err(|e| e.to_string())?;
    let x = random(&[1, 3, 4], &mut r);
    n += check(&store, &[x], Mode::Train, |t, v| enc.forward(t, v[0]))?;
    Ok(n)
}

/// Every operation and layer with its check outcome.
pub fn layer_suite() -> Vec<(&'static str, CheckResult)> {
    vec![
        ("conv3x3", grad_conv3x3()),
        (
            "tconv2x2_with_and_without_target",
            grad_tconv2x2_with_and_without_target(),
        ),
        ("maxpool_odd_sizes", grad_maxpool_odd_sizes()),
        ("resize_up_and_down", grad_resize_up_and_down()),
        ("batch_norm_train_and_eval", grad_batch_norm_train_and_eval()),
        ("linear_with_and_without_bias", grad_linear_with_and_without_bias()),
        ("activations_and_elementwise", grad_activations_and_elementwise()),
        ("skip_add_min_channels", grad_skip_add_min_channels()),
        ("layer_norm_heads_bmm", grad_layer_norm_heads_bmm()),
        ("transformer_layers", grad_transformer_layers()),
        ("transformer_with_dropout_mask", grad_transformer_with_dropout_mask()),
    ]
}

#[cfg(test)]
mod tests {
    #[test]
    fn every_layer_passes() {
        for (name, r) in super::layer_suite() {
            assert!(r.is_ok(), "{name}: {}", r.unwrap_err());
        }
    }
}
