//! Pre-norm transformer encoder.
//!
//! Per layer: `h = x + MHA(LN(x))`, `y = h + FF(LN(h))` with a GELU
//! feed-forward; a final layer norm follows the last layer.

use ndarray::{s, Array2, Axis};

use super::layers::{
    gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward, softmax_rows,
    NormCache,
};
use super::params::{EncoderLayer, LayerNorm, ParameterSet};
use super::ModelError;

pub(crate) struct LayerCache {
    norm1: NormCache,
    a: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    concat: Array2<f64>,
    norm2: NormCache,
    b: Array2<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
}

pub(crate) struct EncoderCache {
    layers: Vec<LayerCache>,
    final_norm: NormCache,
}

impl EncoderCache {
    /// Attention probabilities, `[layer][head]`, each `(L, L)`.
    pub(crate) fn attention(&self) -> Vec<Vec<Array2<f64>>> {
        self.layers.iter().map(|l| l.probs.clone()).collect()
    }
}

fn layer_forward(x: Array2<f64>, p: &EncoderLayer, n_heads: usize) -> (Array2<f64>, LayerCache) {
    let d = x.ncols();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let (a, norm1) = layer_norm(&x, &p.attn_norm);
    let q = linear(&a, &p.query);
    let k = linear(&a, &p.key);
    let v = linear(&a, &p.value);
    let mut concat = Array2::zeros(x.raw_dim());
    let mut probs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        softmax_rows(&mut scores);
        concat.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
        probs.push(scores);
    }
    let h = x + linear(&concat, &p.attn_out);

    let (b, norm2) = layer_norm(&h, &p.ff_norm);
    let pre = linear(&b, &p.ff_in);
    let act = pre.mapv(gelu);
    let y = &h + &linear(&act, &p.ff_out);
    (
        y,
        LayerCache {
            norm1,
            a,
            q,
            k,
            v,
            probs,
            concat,
            norm2,
            b,
            pre,
            act,
        },
    )
}

fn layer_backward(
    dy: Array2<f64>,
    c: &LayerCache,
    p: &EncoderLayer,
    g: &mut EncoderLayer,
    n_heads: usize,
) -> Array2<f64> {
    let d = dy.ncols();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    // feed-forward path
    let dact = linear_backward(&c.act, &dy, &p.ff_out, &mut g.ff_out);
    let dpre = dact * &c.pre.mapv(gelu_grad);
    let db = linear_backward(&c.b, &dpre, &p.ff_in, &mut g.ff_in);
    let dh_res = dy + layer_norm_backward(&db, &c.norm2, &p.ff_norm, &mut g.ff_norm);

    // attention path
    let dconcat = linear_backward(&c.concat, &dh_res, &p.attn_out, &mut g.attn_out);
    let mut dq = Array2::zeros(c.q.raw_dim());
    let mut dk = Array2::zeros(c.k.raw_dim());
    let mut dv = Array2::zeros(c.v.raw_dim());
    for (h, probs) in c.probs.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let dout = dconcat.slice(cols);
        let dprobs = dout.dot(&c.v.slice(cols).t());
        dv.slice_mut(cols).assign(&probs.t().dot(&dout));
        let row_dot = (&dprobs * probs).sum_axis(Axis(1)).insert_axis(Axis(1));
        let dscores = (dprobs - &row_dot) * probs * scale;
        dq.slice_mut(cols).assign(&dscores.dot(&c.k.slice(cols)));
        dk.slice_mut(cols).assign(&dscores.t().dot(&c.q.slice(cols)));
    }
    let da = linear_backward(&c.a, &dq, &p.query, &mut g.query)
        + linear_backward(&c.a, &dk, &p.key, &mut g.key)
        + linear_backward(&c.a, &dv, &p.value, &mut g.value);
    dh_res + layer_norm_backward(&da, &c.norm1, &p.attn_norm, &mut g.attn_norm)
}

pub(crate) fn encode(
    x: Array2<f64>,
    layers: &[EncoderLayer],
    final_norm: &LayerNorm,
    n_heads: usize,
) -> (Array2<f64>, EncoderCache) {
    let mut caches = Vec::with_capacity(layers.len());
    let mut h = x;
    for layer in layers {
        let (next, cache) = layer_forward(h, layer, n_heads);
        caches.push(cache);
        h = next;
    }
    let (y, final_cache) = layer_norm(&h, final_norm);
    (
        y,
        EncoderCache {
            layers: caches,
            final_norm: final_cache,
        },
    )
}

pub(crate) fn encode_backward(
    dy: &Array2<f64>,
    cache: &EncoderCache,
    layers: &[EncoderLayer],
    final_norm: &LayerNorm,
    grad_layers: &mut [EncoderLayer],
    grad_final: &mut LayerNorm,
    n_heads: usize,
) -> Array2<f64> {
    let mut d = layer_norm_backward(dy, &cache.final_norm, final_norm, grad_final);
    for ((layer, g), c) in layers
        .iter()
        .zip(grad_layers.iter_mut())
        .zip(&cache.layers)
        .rev()
    {
        d = layer_backward(d, c, layer, g, n_heads);
    }
    d
}

fn check_tokens(params: &ParameterSet, tokens: &Array2<f64>) -> Result<(), ModelError> {
    if params.voxel_language.is_none() {
        return Err(ModelError::Input(format!(
            "variant {} has no transformer",
            params.config.variant
        )));
    }
    if tokens.nrows() == 0 {
        return Err(ModelError::Input("transformer needs at least one token".into()));
    }
    if tokens.ncols() != params.config.d_model {
        return Err(ModelError::Width {
            what: "transformer tokens",
            expected: params.config.d_model,
            found: tokens.ncols(),
        });
    }
    Ok(())
}

/// Contextual tokens for an already-embedded `(L, d_model)` sequence.
pub fn transformer_encode(
    tokens: &Array2<f64>,
    params: &ParameterSet,
) -> Result<Array2<f64>, ModelError> {
    transformer_encode_with_attention(tokens, params).map(|(y, _)| y)
}

/// Like [`transformer_encode`], also returning attention probabilities
/// indexed `[layer][head]`.
#[allow(clippy::type_complexity)]
pub fn transformer_encode_with_attention(
    tokens: &Array2<f64>,
    params: &ParameterSet,
) -> Result<(Array2<f64>, Vec<Vec<Array2<f64>>>), ModelError> {
    check_tokens(params, tokens)?;
    let vl = params.voxel_language.as_ref().expect("checked");
    let (y, cache) = encode(
        tokens.clone(),
        &vl.layers,
        &vl.final_norm,
        params.config.n_heads,
    );
    Ok((y, cache.attention()))
}
