use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;

use super::layers::{accumulate_linear, linear, linear_backward, mlp, mlp_backward, sigmoid, MlpCache};
use super::params::ParameterSet;
use super::transformer::{encode, encode_backward, EncoderCache};
use super::{ModelError, Pooling, Variant};
use crate::dataset::ReferenceInstance;
use crate::features::{DescriptionFeatures, FeatureArchive, ObjectFeatures};
use crate::training::loss::{pair_loss, LossConfig};
use crate::voxel::{factor_tokens, NUM_FACTORS, TOKEN_WIDTH};

/// Scores closer than this count as a tie.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Outcome of scoring both candidates of one instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScorePair {
    pub s_target: f64,
    pub s_distractor: f64,
    /// 0 = target, 1 = distractor. Ties resolve to 0.
    pub predicted_index: usize,
    pub tie: bool,
}

impl ScorePair {
    pub fn from_scores(s_target: f64, s_distractor: f64) -> Self {
        let tie = (s_target - s_distractor).abs() <= TIE_TOLERANCE;
        let predicted_index = if tie || s_target > s_distractor { 0 } else { 1 };
        ScorePair {
            s_target,
            s_distractor,
            predicted_index,
            tie,
        }
    }

    pub fn correct(&self) -> bool {
        self.predicted_index == 0
    }
}

/// One candidate object paired with one description, widened to f64.
#[derive(Debug, Clone)]
pub struct CandidateInputs {
    /// `(n_views, d_v)`
    pub views: Array2<f64>,
    pub sentence: Array1<f64>,
    /// `(m, d_t)`
    pub words: Array2<f64>,
    /// `(12, 96)`
    pub factor_tokens: Array2<f64>,
}

fn rows(v: &[Vec<f32>], width: usize) -> Array2<f64> {
    Array2::from_shape_fn((v.len(), width), |(i, j)| f64::from(v[i][j]))
}

impl CandidateInputs {
    pub fn new(object: &ObjectFeatures, description: &DescriptionFeatures) -> Self {
        let d_v = object.view_embeddings.first().map_or(0, Vec::len);
        let d_t = description.sentence_embedding.len();
        let tokens = factor_tokens(&object.factors);
        CandidateInputs {
            views: rows(&object.view_embeddings, d_v),
            sentence: description
                .sentence_embedding
                .iter()
                .map(|&v| f64::from(v))
                .collect(),
            words: rows(&description.word_embeddings, d_t),
            factor_tokens: Array2::from_shape_fn((NUM_FACTORS, TOKEN_WIDTH), |(i, j)| {
                f64::from(tokens.tokens()[i][j])
            }),
        }
    }
}

fn pool_views(views: &Array2<f64>, pooling: Pooling) -> Array1<f64> {
    match pooling {
        Pooling::Max => views.fold_axis(Axis(0), f64::NEG_INFINITY, |&a, &b| a.max(b)),
        Pooling::Mean => views.mean_axis(Axis(0)).expect("at least one view"),
    }
}

fn max_pool_factors(tokens: &Array2<f64>) -> Array1<f64> {
    tokens.fold_axis(Axis(0), f64::NEG_INFINITY, |&a, &b| a.max(b))
}

fn as_row(v: ArrayView1<f64>) -> Array2<f64> {
    v.to_owned().insert_axis(Axis(0))
}

fn check_width(what: &'static str, expected: usize, found: usize) -> Result<(), ModelError> {
    if expected == found {
        Ok(())
    } else {
        Err(ModelError::Width {
            what,
            expected,
            found,
        })
    }
}

struct VlCache {
    mlp: MlpCache,
}

fn vl_forward(
    sentence: &Array1<f64>,
    views: &Array2<f64>,
    params: &ParameterSet,
) -> Result<(Array1<f64>, VlCache), ModelError> {
    let c = &params.config;
    let m = params
        .visiolinguistic
        .as_ref()
        .ok_or_else(|| ModelError::Input(format!("variant {} has no visiolinguistic branch", c.variant)))?;
    if views.nrows() == 0 {
        return Err(ModelError::Input("no view embeddings".into()));
    }
    check_width("view embeddings", c.d_view, views.ncols())?;
    check_width("sentence embedding", c.d_text, sentence.len())?;
    let pooled = pool_views(views, c.view_pooling);
    let mut input = Array2::zeros((1, c.d_view + c.d_text));
    input.slice_mut(s![0, ..c.d_view]).assign(&pooled);
    input.slice_mut(s![0, c.d_view..]).assign(sentence);
    let (y, mlp_cache) = mlp(input, m);
    Ok((y.row(0).to_owned(), VlCache { mlp: mlp_cache }))
}

/// `e_vw = MLP([pool(views) ; sentence])`.
pub fn visiolinguistic_forward(
    sentence: &Array1<f64>,
    views: &Array2<f64>,
    params: &ParameterSet,
) -> Result<Array1<f64>, ModelError> {
    vl_forward(sentence, views, params).map(|(y, _)| y)
}

struct OwCache {
    words_used: Array2<f64>,
    encoder: EncoderCache,
    cls_out: Array2<f64>,
}

fn ow_forward(
    words: &Array2<f64>,
    factors: &Array2<f64>,
    params: &ParameterSet,
) -> Result<(Array1<f64>, OwCache), ModelError> {
    let c = &params.config;
    let vl = params
        .voxel_language
        .as_ref()
        .ok_or_else(|| ModelError::Input(format!("variant {} has no transformer", c.variant)))?;
    if words.nrows() == 0 {
        return Err(ModelError::Input("no word embeddings".into()));
    }
    check_width("word embeddings", c.d_text, words.ncols())?;
    if factors.nrows() != NUM_FACTORS {
        return Err(ModelError::Input(format!(
            "expected {NUM_FACTORS} factor tokens, got {}",
            factors.nrows()
        )));
    }
    check_width("factor tokens", TOKEN_WIDTH, factors.ncols())?;
    let m = if words.nrows() > c.max_words {
        log::warn!(
            "description has {} words, truncating to {}",
            words.nrows(),
            c.max_words
        );
        c.max_words
    } else {
        words.nrows()
    };
    let words_used = words.slice(s![..m, ..]).to_owned();

    let d = c.d_model;
    let mut x = Array2::zeros((1 + m + NUM_FACTORS, d));
    x.row_mut(0).assign(&vl.cls);
    {
        let mut w = x.slice_mut(s![1..1 + m, ..]);
        w.assign(&linear(&words_used, &vl.word_proj));
        w += &vl.lang_type;
        if let Some(pos) = &vl.word_pos {
            w += &pos.slice(s![..m, ..]);
        }
    }
    {
        let mut f = x.slice_mut(s![1 + m.., ..]);
        f.assign(&linear(factors, &vl.factor_proj));
        f += &vl.factor_type;
        if let Some(pos) = &vl.factor_pos {
            f += pos;
        }
    }
    let (y, encoder) = encode(x, &vl.layers, &vl.final_norm, c.n_heads);
    let cls_out = as_row(y.row(0));
    let e_ow = linear(&cls_out, &vl.head).row(0).to_owned();
    Ok((
        e_ow,
        OwCache {
            words_used,
            encoder,
            cls_out,
        },
    ))
}

fn ow_backward(
    de_ow: &Array2<f64>,
    cache: &OwCache,
    factors: &Array2<f64>,
    params: &ParameterSet,
    grads: &mut ParameterSet,
) {
    let vl = params.voxel_language.as_ref().expect("forward succeeded");
    let g = grads.voxel_language.as_mut().expect("same variant");
    let dcls = linear_backward(&cache.cls_out, de_ow, &vl.head, &mut g.head);
    let m = cache.words_used.nrows();
    let mut dy = Array2::zeros((1 + m + NUM_FACTORS, params.config.d_model));
    dy.row_mut(0).assign(&dcls.row(0));
    let dx = encode_backward(
        &dy,
        &cache.encoder,
        &vl.layers,
        &vl.final_norm,
        &mut g.layers,
        &mut g.final_norm,
        params.config.n_heads,
    );
    g.cls += &dx.row(0);
    let dwords = dx.slice(s![1..1 + m, ..]).to_owned();
    accumulate_linear(&cache.words_used, &dwords, &mut g.word_proj);
    g.lang_type += &dwords.sum_axis(Axis(0));
    if let Some(pos) = g.word_pos.as_mut() {
        let mut rows = pos.slice_mut(s![..m, ..]);
        rows += &dwords;
    }
    let dfactors = dx.slice(s![1 + m.., ..]).to_owned();
    accumulate_linear(factors, &dfactors, &mut g.factor_proj);
    g.factor_type += &dfactors.sum_axis(Axis(0));
    if let Some(pos) = g.factor_pos.as_mut() {
        *pos += &dfactors;
    }
}

/// `e_ow`: the projected contextual CLS token of
/// `[CLS ; words + pos + lang ; factors + factor_type]`.
pub fn voxel_language_forward(
    words: &Array2<f64>,
    factor_tokens: &Array2<f64>,
    params: &ParameterSet,
) -> Result<Array1<f64>, ModelError> {
    ow_forward(words, factor_tokens, params).map(|(y, _)| y)
}

fn score_logit(input: Array2<f64>, params: &ParameterSet) -> (f64, MlpCache) {
    let (z, cache) = mlp(input, &params.scorer);
    (z[[0, 0]], cache)
}

/// `sigmoid(MLP([first ; second]))`. `second` is empty for single-branch
/// variants; for the MLP-fusion variant it holds the pooled factor tokens.
pub fn score(first: &[f64], second: &[f64], params: &ParameterSet) -> Result<f64, ModelError> {
    let width = params.config.score_input_dim();
    check_width("scorer input", width, first.len() + second.len())?;
    let input = Array2::from_shape_fn((1, width), |(_, j)| {
        if j < first.len() {
            first[j]
        } else {
            second[j - first.len()]
        }
    });
    Ok(sigmoid(score_logit(input, params).0))
}

struct CandidateCache {
    vl: Option<VlCache>,
    ow: Option<OwCache>,
    scorer: MlpCache,
}

fn candidate_forward(
    x: &CandidateInputs,
    params: &ParameterSet,
) -> Result<(f64, CandidateCache), ModelError> {
    let c = &params.config;
    let vl = if c.variant.uses_views() {
        Some(vl_forward(&x.sentence, &x.views, params)?)
    } else {
        None
    };
    let ow = if c.variant.uses_transformer() {
        Some(ow_forward(&x.words, &x.factor_tokens, params)?)
    } else {
        None
    };
    let mut parts: Vec<ArrayView1<f64>> = match c.variant {
        Variant::Full => vec![vl.as_ref().unwrap().0.view(), ow.as_ref().unwrap().0.view()],
        Variant::VisiolinguisticOnly => vec![vl.as_ref().unwrap().0.view()],
        Variant::VoxelOnly => vec![ow.as_ref().unwrap().0.view()],
        Variant::MlpFusion => vec![vl.as_ref().unwrap().0.view()],
    };
    let pooled;
    if c.variant == Variant::MlpFusion {
        check_width("factor tokens", TOKEN_WIDTH, x.factor_tokens.ncols())?;
        pooled = max_pool_factors(&x.factor_tokens);
        parts.push(pooled.view());
    }
    let input = ndarray::concatenate(Axis(0), &parts)
        .expect("1-d parts")
        .insert_axis(Axis(0));
    let (z, scorer) = score_logit(input, params);
    Ok((
        z,
        CandidateCache {
            vl: vl.map(|(_, c)| c),
            ow: ow.map(|(_, c)| c),
            scorer,
        },
    ))
}

fn candidate_backward(
    dz: f64,
    cache: &CandidateCache,
    x: &CandidateInputs,
    params: &ParameterSet,
    grads: &mut ParameterSet,
) {
    let c = &params.config;
    let dz = Array2::from_elem((1, 1), dz);
    let dinput = mlp_backward(&dz, &cache.scorer, &params.scorer, &mut grads.scorer, true)
        .expect("input gradient requested");
    let f = c.fusion_dim;
    let (dvl, dow) = match c.variant {
        Variant::Full => (Some(dinput.slice(s![.., ..f]).to_owned()), Some(dinput.slice(s![.., f..]).to_owned())),
        Variant::VisiolinguisticOnly | Variant::MlpFusion => {
            (Some(dinput.slice(s![.., ..f]).to_owned()), None)
        }
        Variant::VoxelOnly => (None, Some(dinput)),
    };
    if let (Some(d), Some(vc)) = (dvl, &cache.vl) {
        mlp_backward(
            &d,
            &vc.mlp,
            params.visiolinguistic.as_ref().unwrap(),
            grads.visiolinguistic.as_mut().unwrap(),
            false,
        );
    }
    if let (Some(d), Some(oc)) = (dow, &cache.ow) {
        ow_backward(&d, oc, &x.factor_tokens, params, grads);
    }
}

fn candidate_inputs(
    inst: &ReferenceInstance,
    archive: &FeatureArchive,
) -> Result<(CandidateInputs, CandidateInputs), ModelError> {
    let desc = archive.get_description(&inst.description_id)?;
    let target = archive.get_object(&inst.target_id)?;
    let distractor = archive.get_object(&inst.distractor_id)?;
    Ok((
        CandidateInputs::new(target, desc),
        CandidateInputs::new(distractor, desc),
    ))
}

/// Scores target and distractor independently and picks the larger.
pub fn forward_instance(
    instance: &ReferenceInstance,
    archive: &FeatureArchive,
    params: &ParameterSet,
) -> Result<ScorePair, ModelError> {
    let (t, d) = candidate_inputs(instance, archive)?;
    let (zt, _) = candidate_forward(&t, params)?;
    let (zd, _) = candidate_forward(&d, params)?;
    Ok(ScorePair::from_scores(sigmoid(zt), sigmoid(zd)))
}

/// [`forward_instance`] over many instances, in input order.
pub fn predict(
    instances: &[ReferenceInstance],
    archive: &FeatureArchive,
    params: &ParameterSet,
) -> Result<Vec<ScorePair>, ModelError> {
    instances
        .par_iter()
        .map(|i| forward_instance(i, archive, params))
        .collect()
}

/// Mean batch loss without gradients.
pub fn batch_loss(
    params: &ParameterSet,
    batch: &[&ReferenceInstance],
    archive: &FeatureArchive,
    loss: &LossConfig,
) -> Result<f64, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut total = 0.0;
    for inst in batch {
        let (t, d) = candidate_inputs(inst, archive)?;
        let (zt, _) = candidate_forward(&t, params)?;
        let (zd, _) = candidate_forward(&d, params)?;
        total += pair_loss(zt, zd, loss).0;
    }
    let mean = total / batch.len() as f64;
    if mean.is_finite() {
        Ok(mean)
    } else {
        Err(ModelError::NonFiniteLoss)
    }
}

fn instance_gradients(
    inst: &ReferenceInstance,
    archive: &FeatureArchive,
    params: &ParameterSet,
    loss: &LossConfig,
    weight: f64,
) -> Result<(f64, ParameterSet), ModelError> {
    let (t, d) = candidate_inputs(inst, archive)?;
    let (zt, ct) = candidate_forward(&t, params)?;
    let (zd, cd) = candidate_forward(&d, params)?;
    let (l, dzt, dzd) = pair_loss(zt, zd, loss);
    let mut g = params.zeros_like();
    candidate_backward(dzt * weight, &ct, &t, params, &mut g);
    candidate_backward(dzd * weight, &cd, &d, params, &mut g);
    Ok((l, g))
}

/// Mean loss over `batch` and its gradient w.r.t. every parameter.
///
/// Instances are evaluated in parallel and summed in batch order, so the
/// result does not depend on scheduling.
pub fn gradients(
    params: &ParameterSet,
    batch: &[&ReferenceInstance],
    archive: &FeatureArchive,
    loss: &LossConfig,
) -> Result<(f64, ParameterSet), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let weight = 1.0 / batch.len() as f64;
    let parts: Vec<(f64, ParameterSet)> = batch
        .par_iter()
        .map(|inst| instance_gradients(inst, archive, params, loss, weight))
        .collect::<Result<_, _>>()?;
    let mut total = params.zeros_like();
    let mut loss_sum = 0.0;
    for (l, g) in &parts {
        loss_sum += l;
        total.add_assign(g);
    }
    let mean = loss_sum * weight;
    if !mean.is_finite() {
        return Err(ModelError::NonFiniteLoss);
    }
    Ok((mean, total))
}

/// Per-candidate scores straight from prepared inputs.
pub fn score_candidate(x: &CandidateInputs, params: &ParameterSet) -> Result<f64, ModelError> {
    candidate_forward(x, params).map(|(z, _)| sigmoid(z))
}
