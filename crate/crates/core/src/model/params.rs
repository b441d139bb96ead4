use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::{ModelConfig, ModelError, Variant};
use crate::voxel::{NUM_FACTORS, TOKEN_WIDTH};

type Named<'a> = Vec<(String, ArrayViewD<'a, f64>)>;
type NamedMut<'a> = Vec<(String, ArrayViewMutD<'a, f64>)>;

/// `y = x·W + b`, `W` stored `(in, out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    fn init(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        Linear {
            weight: Array2::from_shape_simple_fn((fan_in, fan_out), || dist.sample(rng)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn collect<'a>(&'a self, name: &str, out: &mut Named<'a>) {
        out.push((format!("{name}.weight"), self.weight.view().into_dyn()));
        out.push((format!("{name}.bias"), self.bias.view().into_dyn()));
    }

    fn collect_mut<'a>(&'a mut self, name: &str, out: &mut NamedMut<'a>) {
        out.push((format!("{name}.weight"), self.weight.view_mut().into_dyn()));
        out.push((format!("{name}.bias"), self.bias.view_mut().into_dyn()));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Array1<f64>,
    pub bias: Array1<f64>,
}

impl LayerNorm {
    fn init(dim: usize) -> Self {
        LayerNorm {
            gain: Array1::ones(dim),
            bias: Array1::zeros(dim),
        }
    }

    fn collect<'a>(&'a self, name: &str, out: &mut Named<'a>) {
        out.push((format!("{name}.gain"), self.gain.view().into_dyn()));
        out.push((format!("{name}.bias"), self.bias.view().into_dyn()));
    }

    fn collect_mut<'a>(&'a mut self, name: &str, out: &mut NamedMut<'a>) {
        out.push((format!("{name}.gain"), self.gain.view_mut().into_dyn()));
        out.push((format!("{name}.bias"), self.bias.view_mut().into_dyn()));
    }
}

/// Two linear layers with a GELU between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    fn init(rng: &mut ChaCha8Rng, input: usize, hidden: usize, output: usize) -> Self {
        Mlp {
            hidden: Linear::init(rng, input, hidden),
            out: Linear::init(rng, hidden, output),
        }
    }

    fn collect<'a>(&'a self, name: &str, out: &mut Named<'a>) {
        self.hidden.collect(&format!("{name}.hidden"), out);
        self.out.collect(&format!("{name}.out"), out);
    }

    fn collect_mut<'a>(&'a mut self, name: &str, out: &mut NamedMut<'a>) {
        self.hidden.collect_mut(&format!("{name}.hidden"), out);
        self.out.collect_mut(&format!("{name}.out"), out);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub attn_norm: LayerNorm,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub attn_out: Linear,
    pub ff_norm: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
}

impl EncoderLayer {
    fn init(rng: &mut ChaCha8Rng, d_model: usize, d_ff: usize) -> Self {
        EncoderLayer {
            attn_norm: LayerNorm::init(d_model),
            query: Linear::init(rng, d_model, d_model),
            key: Linear::init(rng, d_model, d_model),
            value: Linear::init(rng, d_model, d_model),
            attn_out: Linear::init(rng, d_model, d_model),
            ff_norm: LayerNorm::init(d_model),
            ff_in: Linear::init(rng, d_model, d_ff),
            ff_out: Linear::init(rng, d_ff, d_model),
        }
    }

    fn collect<'a>(&'a self, name: &str, out: &mut Named<'a>) {
        self.attn_norm.collect(&format!("{name}.attn_norm"), out);
        self.query.collect(&format!("{name}.query"), out);
        self.key.collect(&format!("{name}.key"), out);
        self.value.collect(&format!("{name}.value"), out);
        self.attn_out.collect(&format!("{name}.attn_out"), out);
        self.ff_norm.collect(&format!("{name}.ff_norm"), out);
        self.ff_in.collect(&format!("{name}.ff_in"), out);
        self.ff_out.collect(&format!("{name}.ff_out"), out);
    }

    fn collect_mut<'a>(&'a mut self, name: &str, out: &mut NamedMut<'a>) {
        self.attn_norm.collect_mut(&format!("{name}.attn_norm"), out);
        self.query.collect_mut(&format!("{name}.query"), out);
        self.key.collect_mut(&format!("{name}.key"), out);
        self.value.collect_mut(&format!("{name}.value"), out);
        self.attn_out.collect_mut(&format!("{name}.attn_out"), out);
        self.ff_norm.collect_mut(&format!("{name}.ff_norm"), out);
        self.ff_in.collect_mut(&format!("{name}.ff_in"), out);
        self.ff_out.collect_mut(&format!("{name}.ff_out"), out);
    }
}

/// Cross-modal transformer over words and factor tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelLanguage {
    pub word_proj: Linear,
    pub factor_proj: Linear,
    pub cls: Array1<f64>,
    /// `(max_words, d_model)`, present when word positions are enabled.
    pub word_pos: Option<Array2<f64>>,
    /// `(12, d_model)`, present when factor positions are enabled.
    pub factor_pos: Option<Array2<f64>>,
    pub lang_type: Array1<f64>,
    pub factor_type: Array1<f64>,
    pub layers: Vec<EncoderLayer>,
    pub final_norm: LayerNorm,
    pub head: Linear,
}

impl VoxelLanguage {
    fn init(rng: &mut ChaCha8Rng, c: &ModelConfig) -> Self {
        let d = c.d_model;
        let emb = Normal::new(0.0, 0.02).expect("finite sigma");
        let mut embedding = |rows: usize| Array2::from_shape_simple_fn((rows, d), || emb.sample(rng));
        let cls = embedding(1).row(0).to_owned();
        let lang_type = embedding(1).row(0).to_owned();
        let factor_type = embedding(1).row(0).to_owned();
        let word_pos = c.word_positions.then(|| embedding(c.max_words));
        let factor_pos = c.factor_positions.then(|| embedding(NUM_FACTORS));
        VoxelLanguage {
            word_proj: Linear::init(rng, c.d_text, d),
            factor_proj: Linear::init(rng, TOKEN_WIDTH, d),
            cls,
            word_pos,
            factor_pos,
            lang_type,
            factor_type,
            layers: (0..c.n_layers)
                .map(|_| EncoderLayer::init(rng, d, c.d_ff))
                .collect(),
            final_norm: LayerNorm::init(d),
            head: Linear::init(rng, d, c.fusion_dim),
        }
    }

    fn collect<'a>(&'a self, name: &str, out: &mut Named<'a>) {
        self.word_proj.collect(&format!("{name}.word_proj"), out);
        self.factor_proj.collect(&format!("{name}.factor_proj"), out);
        out.push((format!("{name}.cls"), self.cls.view().into_dyn()));
        if let Some(p) = &self.word_pos {
            out.push((format!("{name}.word_pos"), p.view().into_dyn()));
        }
        if let Some(p) = &self.factor_pos {
            out.push((format!("{name}.factor_pos"), p.view().into_dyn()));
        }
        out.push((format!("{name}.lang_type"), self.lang_type.view().into_dyn()));
        out.push((format!("{name}.factor_type"), self.factor_type.view().into_dyn()));
        for (i, l) in self.layers.iter().enumerate() {
            l.collect(&format!("{name}.layers.{i}"), out);
        }
        self.final_norm.collect(&format!("{name}.final_norm"), out);
        self.head.collect(&format!("{name}.head"), out);
    }

    fn collect_mut<'a>(&'a mut self, name: &str, out: &mut NamedMut<'a>) {
        let VoxelLanguage {
            word_proj,
            factor_proj,
            cls,
            word_pos,
            factor_pos,
            lang_type,
            factor_type,
            layers,
            final_norm,
            head,
        } = self;
        word_proj.collect_mut(&format!("{name}.word_proj"), out);
        factor_proj.collect_mut(&format!("{name}.factor_proj"), out);
        out.push((format!("{name}.cls"), cls.view_mut().into_dyn()));
        if let Some(p) = word_pos {
            out.push((format!("{name}.word_pos"), p.view_mut().into_dyn()));
        }
        if let Some(p) = factor_pos {
            out.push((format!("{name}.factor_pos"), p.view_mut().into_dyn()));
        }
        out.push((format!("{name}.lang_type"), lang_type.view_mut().into_dyn()));
        out.push((format!("{name}.factor_type"), factor_type.view_mut().into_dyn()));
        for (i, l) in layers.iter_mut().enumerate() {
            l.collect_mut(&format!("{name}.layers.{i}"), out);
        }
        final_norm.collect_mut(&format!("{name}.final_norm"), out);
        head.collect_mut(&format!("{name}.head"), out);
    }
}

/// All learnable weights. Gradients and optimizer moments reuse this type.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub config: ModelConfig,
    /// `f_vw`, absent for the voxel-only variant.
    pub visiolinguistic: Option<Mlp>,
    /// Absent unless the variant runs the transformer.
    pub voxel_language: Option<VoxelLanguage>,
    pub scorer: Mlp,
}

/// Linear weights ~ U(±1/√fan_in), biases zero, CLS and embedding tables
/// ~ N(0, 0.02), layer-norm gains one.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ParameterSet, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let visiolinguistic = config.variant.uses_views().then(|| {
        Mlp::init(
            &mut rng,
            config.d_view + config.d_text,
            config.mlp_hidden,
            config.fusion_dim,
        )
    });
    let voxel_language = config
        .variant
        .uses_transformer()
        .then(|| VoxelLanguage::init(&mut rng, config));
    let scorer = Mlp::init(&mut rng, config.score_input_dim(), config.mlp_hidden, 1);
    Ok(ParameterSet {
        config: config.clone(),
        visiolinguistic,
        voxel_language,
        scorer,
    })
}

impl ParameterSet {
    /// Every tensor with its dotted name, in a fixed order.
    pub fn named_tensors(&self) -> Named<'_> {
        let mut out = Vec::new();
        if let Some(m) = &self.visiolinguistic {
            m.collect("visiolinguistic", &mut out);
        }
        if let Some(v) = &self.voxel_language {
            v.collect("voxel_language", &mut out);
        }
        self.scorer.collect("scorer", &mut out);
        out
    }

    pub fn named_tensors_mut(&mut self) -> NamedMut<'_> {
        let mut out = Vec::new();
        let ParameterSet {
            visiolinguistic,
            voxel_language,
            scorer,
            ..
        } = self;
        if let Some(m) = visiolinguistic {
            m.collect_mut("visiolinguistic", &mut out);
        }
        if let Some(v) = voxel_language {
            v.collect_mut("voxel_language", &mut out);
        }
        scorer.collect_mut("scorer", &mut out);
        out
    }

    pub fn zeros_like(&self) -> ParameterSet {
        let mut z = self.clone();
        for (_, mut t) in z.named_tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn num_scalars(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &ParameterSet) {
        for ((_, mut a), (_, b)) in self.named_tensors_mut().into_iter().zip(other.named_tensors()) {
            a += &b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, mut t) in self.named_tensors_mut() {
            t.mapv_inplace(|v| v * factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.named_tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Copy with every value rounded through `f32`, the checkpoint precision.
    pub fn rounded_to_f32(&self) -> ParameterSet {
        let mut p = self.clone();
        for (_, mut t) in p.named_tensors_mut() {
            t.mapv_inplace(|v| v as f32 as f64);
        }
        p
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }
}
