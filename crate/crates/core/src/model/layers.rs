//! Row-wise building blocks with hand-written backward passes.
//!
//! Matrices hold one token (or one sample) per row.

use ndarray::{Array1, Array2, Axis};

use super::params::{LayerNorm, Linear, Mlp};

pub(crate) const LN_EPS: f64 = 1e-5;

pub(crate) fn linear(x: &Array2<f64>, l: &Linear) -> Array2<f64> {
    x.dot(&l.weight) + &l.bias
}

/// Accumulates into `grad` and returns the gradient w.r.t. `x`.
pub(crate) fn linear_backward(
    x: &Array2<f64>,
    dy: &Array2<f64>,
    l: &Linear,
    grad: &mut Linear,
) -> Array2<f64> {
    accumulate_linear(x, dy, grad);
    dy.dot(&l.weight.t())
}

/// Parameter gradients only, for layers whose input is a constant.
pub(crate) fn accumulate_linear(x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Linear) {
    grad.weight += &x.t().dot(dy);
    grad.bias += &dy.sum_axis(Axis(0));
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // √(2/π)
const GELU_A: f64 = 0.044_715;

/// GELU, tanh form.
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub(crate) struct NormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

pub(crate) fn layer_norm(x: &Array2<f64>, ln: &LayerNorm) -> (Array2<f64>, NormCache) {
    let d = x.ncols() as f64;
    let mean = x.sum_axis(Axis(1)) / d;
    let centered = x - &mean.view().insert_axis(Axis(1));
    let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / d;
    let inv_std = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
    let xhat = centered * inv_std.view().insert_axis(Axis(1));
    let y = &xhat * &ln.gain + &ln.bias;
    (y, NormCache { xhat, inv_std })
}

pub(crate) fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &NormCache,
    ln: &LayerNorm,
    grad: &mut LayerNorm,
) -> Array2<f64> {
    grad.gain += &(dy * &cache.xhat).sum_axis(Axis(0));
    grad.bias += &dy.sum_axis(Axis(0));
    let d = dy.ncols() as f64;
    let dxhat = dy * &ln.gain;
    let mean_dxhat = dxhat.sum_axis(Axis(1)) / d;
    let mean_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(1)) / d;
    let mut dx = dxhat - &mean_dxhat.insert_axis(Axis(1));
    dx -= &(&cache.xhat * &mean_dxhat_xhat.insert_axis(Axis(1)));
    dx * cache.inv_std.view().insert_axis(Axis(1))
}

pub(crate) struct MlpCache {
    input: Array2<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
}

pub(crate) fn mlp(x: Array2<f64>, m: &Mlp) -> (Array2<f64>, MlpCache) {
    let pre = linear(&x, &m.hidden);
    let act = pre.mapv(gelu);
    let y = linear(&act, &m.out);
    (
        y,
        MlpCache {
            input: x,
            pre,
            act,
        },
    )
}

/// Backward through an MLP. The input gradient is only formed when asked
/// for, since branch inputs are often constant features.
pub(crate) fn mlp_backward(
    dy: &Array2<f64>,
    cache: &MlpCache,
    m: &Mlp,
    grad: &mut Mlp,
    want_input_grad: bool,
) -> Option<Array2<f64>> {
    let dact = linear_backward(&cache.act, dy, &m.out, &mut grad.out);
    let dpre = dact * &cache.pre.mapv(gelu_grad);
    if want_input_grad {
        Some(linear_backward(&cache.input, &dpre, &m.hidden, &mut grad.hidden))
    } else {
        accumulate_linear(&cache.input, &dpre, &mut grad.hidden);
        None
    }
}

/// Row-wise softmax, max-shifted.
pub(crate) fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
