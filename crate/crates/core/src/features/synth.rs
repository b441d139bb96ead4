//! Deterministic synthetic feature bundles with known attributes.
//!
//! Colour lives only in the view embeddings; geometry (shape and part count)
//! lives only in the voxel factors. Visual descriptions mention colour and
//! shape, blind descriptions mention shape and part count, so a model that
//! ignores the factors can only guess on blind references.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use super::{ArchiveError, DescriptionFeatures, FeatureArchive, Manifest, ObjectFeatures};
use crate::dataset::{Category, ReferenceInstance, Split};
use crate::voxel::{FactorSet, FactorTriplet, GRID, NUM_FACTORS};

/// Seed of the embedding vocabularies and shape templates.
pub const VOCAB_SEED: u64 = 1234;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("{field} = {value} out of range (limit {limit})")]
    AttributeOutOfRange {
        field: &'static str,
        value: usize,
        limit: usize,
    },
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("pair {0}: no admissible distractor in its object pool")]
    NoDistractor(usize),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub views: usize,
    pub d_view: usize,
    pub d_text: usize,
    pub colors: usize,
    pub shapes: usize,
    /// Part counts range over `1..=max_parts`.
    pub max_parts: usize,
    pub view_noise: f64,
    pub factor_noise: f64,
    pub word_noise: f64,
    pub vocab_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            views: 8,
            d_view: 512,
            d_text: 512,
            colors: 8,
            shapes: 4,
            max_parts: 4,
            view_noise: 0.1,
            factor_noise: 0.05,
            word_noise: 0.0,
            vocab_seed: VOCAB_SEED,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SynthAttributes {
    pub color_id: usize,
    pub shape_id: usize,
    pub part_count: usize,
}

impl SynthAttributes {
    pub fn geometry(&self) -> (usize, usize) {
        (self.shape_id, self.part_count)
    }
}

const COLOR_NAMES: [&str; 8] = [
    "red", "green", "blue", "yellow", "white", "black", "orange", "purple",
];
const SHAPE_NAMES: [&str; 6] = ["boxy", "round", "tall", "flat", "curved", "spiky"];

fn name(table: &[&str], prefix: &str, i: usize) -> String {
    table
        .get(i)
        .map_or_else(|| format!("{prefix}{i}"), |s| s.to_string())
}

/// Unit-norm rows of a seeded Gaussian matrix, Gram–Schmidt orthogonalised
/// when there are no more rows than columns.
fn vocabulary(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Vec<Vec<f64>> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(rows);
    for _ in 0..rows {
        let mut v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        if rows <= dim {
            for u in &out {
                let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        out.push(v);
    }
    out
}

fn interval_profile(rng: &mut ChaCha8Rng) -> [f32; GRID] {
    let len = rng.random_range(4..=16);
    let start = rng.random_range(0..=GRID - len);
    let mut p = [0.0f32; GRID];
    p[start..start + len].iter_mut().for_each(|v| *v = 1.0);
    p
}

pub struct SynthGenerator {
    config: SynthConfig,
    color_views: Vec<Vec<f64>>,
    color_words: Vec<Vec<f64>>,
    shape_words: Vec<Vec<f64>>,
    part_words: Vec<Vec<f64>>,
    templates: Vec<Vec<FactorTriplet>>,
}

impl SynthGenerator {
    pub fn new(config: SynthConfig) -> Result<Self, SynthError> {
        let c = &config;
        if c.views == 0 || c.d_view == 0 || c.d_text == 0 {
            return Err(SynthError::InvalidConfig("dims must be at least 1".into()));
        }
        if c.colors < 2 || c.shapes < 1 || !(1..=NUM_FACTORS).contains(&c.max_parts) {
            return Err(SynthError::InvalidConfig(format!(
                "need colors >= 2, shapes >= 1, 1 <= max_parts <= {NUM_FACTORS}"
            )));
        }
        if [c.view_noise, c.factor_noise, c.word_noise]
            .iter()
            .any(|s| !(s.is_finite() && *s >= 0.0))
        {
            return Err(SynthError::InvalidConfig("noise must be finite and >= 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(c.vocab_seed);
        let color_views = vocabulary(&mut rng, c.colors, c.d_view);
        let mut words = vocabulary(&mut rng, c.colors + c.shapes + c.max_parts, c.d_text);
        let part_words = words.split_off(c.colors + c.shapes);
        let shape_words = words.split_off(c.colors);
        let color_words = words;
        let templates = (0..c.shapes)
            .map(|_| {
                (0..NUM_FACTORS)
                    .map(|_| FactorTriplet {
                        x: interval_profile(&mut rng),
                        y: interval_profile(&mut rng),
                        z: interval_profile(&mut rng),
                    })
                    .collect()
            })
            .collect();
        Ok(SynthGenerator {
            config,
            color_views,
            color_words,
            shape_words,
            part_words,
            templates,
        })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    pub fn manifest(&self) -> Manifest {
        let c = &self.config;
        Manifest {
            views: c.views,
            d_view: c.d_view,
            d_text: c.d_text,
            provenance: format!(
                "synthetic vocab_seed={} colors={} shapes={} max_parts={} view_noise={} factor_noise={} word_noise={}",
                c.vocab_seed, c.colors, c.shapes, c.max_parts, c.view_noise, c.factor_noise, c.word_noise
            ),
        }
    }

    fn check(&self, a: &SynthAttributes) -> Result<(), SynthError> {
        let c = &self.config;
        let bad = |field, value, limit| SynthError::AttributeOutOfRange {
            field,
            value,
            limit,
        };
        if a.color_id >= c.colors {
            return Err(bad("color_id", a.color_id, c.colors - 1));
        }
        if a.shape_id >= c.shapes {
            return Err(bad("shape_id", a.shape_id, c.shapes - 1));
        }
        if a.part_count == 0 || a.part_count > c.max_parts {
            return Err(bad("part_count", a.part_count, c.max_parts));
        }
        Ok(())
    }

    pub fn random_attributes(&self, rng: &mut impl Rng) -> SynthAttributes {
        SynthAttributes {
            color_id: rng.random_range(0..self.config.colors),
            shape_id: rng.random_range(0..self.config.shapes),
            part_count: rng.random_range(1..=self.config.max_parts),
        }
    }

    /// Noise-free factors: the first `part_count` template factors of the
    /// shape, the rest zero.
    pub fn clean_factors(&self, attrs: &SynthAttributes) -> Result<FactorSet, SynthError> {
        self.check(attrs)?;
        let mut fs = FactorSet::zeros();
        for (slot, t) in fs
            .factors_mut()
            .iter_mut()
            .zip(&self.templates[attrs.shape_id])
            .take(attrs.part_count)
        {
            *slot = t.clone();
        }
        Ok(fs)
    }

    /// View and factor noise come from separate streams of the same seed, so
    /// two objects that differ only in colour share their factors exactly.
    pub fn object(
        &self,
        object_id: &str,
        seed: u64,
        attrs: SynthAttributes,
    ) -> Result<(ObjectFeatures, SynthAttributes), SynthError> {
        let mut factors = self.clean_factors(&attrs)?;
        let c = &self.config;

        let mut view_rng = ChaCha8Rng::seed_from_u64(seed);
        view_rng.set_stream(0);
        let view_noise = Normal::new(0.0, c.view_noise).expect("finite sigma");
        let base = &self.color_views[attrs.color_id];
        let view_embeddings = (0..c.views)
            .map(|_| {
                base.iter()
                    .map(|&b| (b + view_noise.sample(&mut view_rng)) as f32)
                    .collect()
            })
            .collect();

        let mut factor_rng = ChaCha8Rng::seed_from_u64(seed);
        factor_rng.set_stream(1);
        let factor_noise = Normal::new(0.0, c.factor_noise).expect("finite sigma");
        for f in factors.factors_mut() {
            for v in f.x.iter_mut().chain(f.y.iter_mut()).chain(f.z.iter_mut()) {
                *v = (f64::from(*v) + factor_noise.sample(&mut factor_rng)) as f32;
            }
        }
        Ok((
            ObjectFeatures {
                object_id: object_id.to_string(),
                view_embeddings,
                factors,
            },
            attrs,
        ))
    }

    pub fn description(
        &self,
        description_id: &str,
        seed: u64,
        attrs: SynthAttributes,
        style: Category,
    ) -> Result<DescriptionFeatures, SynthError> {
        self.check(&attrs)?;
        let (rows, text) = match style {
            Category::Visual => (
                [
                    &self.color_words[attrs.color_id],
                    &self.shape_words[attrs.shape_id],
                ],
                format!(
                    "{} {} object",
                    name(&COLOR_NAMES, "color", attrs.color_id),
                    name(&SHAPE_NAMES, "shape", attrs.shape_id)
                ),
            ),
            Category::Blind => (
                [
                    &self.shape_words[attrs.shape_id],
                    &self.part_words[attrs.part_count - 1],
                ],
                format!(
                    "{} with {} parts",
                    name(&SHAPE_NAMES, "shape", attrs.shape_id),
                    attrs.part_count
                ),
            ),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, self.config.word_noise).expect("finite sigma");
        let words: Vec<Vec<f32>> = rows
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&v| (v + noise.sample(&mut rng)) as f32)
                    .collect()
            })
            .collect();
        let d = self.config.d_text;
        let sentence = (0..d)
            .map(|j| {
                let s: f64 = words.iter().map(|w| f64::from(w[j])).sum();
                (s / words.len() as f64) as f32
            })
            .collect();
        Ok(DescriptionFeatures {
            description_id: description_id.to_string(),
            sentence_embedding: sentence,
            word_embeddings: words,
            text: Some(text),
        })
    }
}

/// Parameters of a whole synthetic reference-game dataset.
#[derive(Debug, Clone)]
pub struct SynthDatasetSpec {
    pub objects: usize,
    pub pairs: usize,
    pub seed: u64,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    /// Give each split its own object pool.
    pub disjoint_objects: bool,
    pub config: SynthConfig,
}

impl SynthDatasetSpec {
    pub fn new(objects: usize, pairs: usize, seed: u64) -> Self {
        SynthDatasetSpec {
            objects,
            pairs,
            seed,
            valid_fraction: 0.1,
            test_fraction: 0.1,
            disjoint_objects: false,
            config: SynthConfig::default(),
        }
    }

    /// Pair counts for train, valid and test.
    pub fn split_sizes(&self, total: usize) -> [usize; 3] {
        let valid = (total as f64 * self.valid_fraction).round() as usize;
        let test = (total as f64 * self.test_fraction).round() as usize;
        let valid = valid.min(total);
        let test = test.min(total - valid);
        [total - valid - test, valid, test]
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub archive: FeatureArchive,
    pub instances: Vec<ReferenceInstance>,
    /// Ground truth, parallel to `archive.objects()`.
    pub attributes: Vec<SynthAttributes>,
}

/// Pairs alternate visual/blind over their global index, so the two
/// categories differ by at most one. Visual distractors differ in colour;
/// blind distractors differ in shape or part count.
pub fn generate_dataset(spec: &SynthDatasetSpec) -> Result<SynthDataset, SynthError> {
    if spec.objects < 2 || spec.pairs < 1 {
        return Err(SynthError::InvalidConfig(
            "need at least 2 objects and 1 pair".into(),
        ));
    }
    let fractions_ok = [spec.valid_fraction, spec.test_fraction]
        .iter()
        .all(|f| (0.0..=1.0).contains(f))
        && spec.valid_fraction + spec.test_fraction <= 1.0;
    if !fractions_ok {
        return Err(SynthError::InvalidConfig("split fractions must sum to at most 1".into()));
    }
    let gen = SynthGenerator::new(spec.config.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut objects = Vec::with_capacity(spec.objects);
    let mut attributes = Vec::with_capacity(spec.objects);
    for i in 0..spec.objects {
        let attrs = gen.random_attributes(&mut rng);
        let (o, a) = gen.object(&format!("o{i:05}"), rng.next_u64(), attrs)?;
        objects.push(o);
        attributes.push(a);
    }

    let pair_sizes = spec.split_sizes(spec.pairs);
    let pools: Vec<Vec<usize>> = if spec.disjoint_objects {
        let sizes = spec.split_sizes(spec.objects);
        let mut start = 0;
        sizes
            .iter()
            .map(|&n| {
                let pool = (start..start + n).collect();
                start += n;
                pool
            })
            .collect()
    } else {
        vec![(0..spec.objects).collect(); 3]
    };

    let mut instances = Vec::with_capacity(spec.pairs);
    let mut descriptions = Vec::with_capacity(spec.pairs);
    let mut index = 0;
    for (s, split) in Split::ALL.into_iter().enumerate() {
        let pool = &pools[s];
        for _ in 0..pair_sizes[s] {
            let style = if index % 2 == 0 {
                Category::Visual
            } else {
                Category::Blind
            };
            if pool.len() < 2 {
                return Err(SynthError::NoDistractor(index));
            }
            let target = pool[rng.random_range(0..pool.len())];
            let ta = attributes[target];
            let admissible: Vec<usize> = pool
                .iter()
                .copied()
                .filter(|&o| {
                    let oa: SynthAttributes = attributes[o];
                    match style {
                        Category::Visual => oa.color_id != ta.color_id,
                        Category::Blind => oa.geometry() != ta.geometry(),
                    }
                })
                .collect();
            if admissible.is_empty() {
                return Err(SynthError::NoDistractor(index));
            }
            let distractor = admissible[rng.random_range(0..admissible.len())];
            let description_id = format!("d{index:05}");
            descriptions.push(gen.description(&description_id, rng.next_u64(), ta, style)?);
            instances.push(ReferenceInstance {
                target_id: objects[target].object_id.clone(),
                distractor_id: objects[distractor].object_id.clone(),
                description_id,
                category: style,
                split,
            });
            index += 1;
        }
    }
    let archive = FeatureArchive::new(gen.manifest(), objects, descriptions)?;
    Ok(SynthDataset {
        archive,
        instances,
        attributes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            views: 3,
            d_view: 16,
            d_text: 16,
            ..SynthConfig::default()
        }
    }

    fn attrs(color_id: usize, shape_id: usize, part_count: usize) -> SynthAttributes {
        SynthAttributes {
            color_id,
            shape_id,
            part_count,
        }
    }

    #[test]
    fn deterministic() {
        let g = SynthGenerator::new(small()).unwrap();
        let a = g.object("x", 5, attrs(1, 2, 3)).unwrap();
        let b = g.object("x", 5, attrs(1, 2, 3)).unwrap();
        assert_eq!(a, b);
        let d1 = g.description("d", 3, attrs(1, 2, 3), Category::Blind).unwrap();
        let d2 = g.description("d", 3, attrs(1, 2, 3), Category::Blind).unwrap();
        assert_eq!(d1, d2);
    }

    #[test]
    fn active_factor_count() {
        let g = SynthGenerator::new(small()).unwrap();
        let fs = g.clean_factors(&attrs(0, 1, 3)).unwrap();
        assert_eq!(fs.factors().iter().filter(|f| f.is_active()).count(), 3);
        assert!(fs.factors()[..3].iter().all(FactorTriplet::is_active));
    }

    #[test]
    fn colour_does_not_touch_factors() {
        let g = SynthGenerator::new(small()).unwrap();
        assert_eq!(
            g.clean_factors(&attrs(0, 1, 2)).unwrap(),
            g.clean_factors(&attrs(4, 1, 2)).unwrap()
        );
        let (a, _) = g.object("a", 9, attrs(0, 1, 2)).unwrap();
        let (b, _) = g.object("b", 9, attrs(4, 1, 2)).unwrap();
        assert_eq!(a.factors, b.factors);
        assert_ne!(a.view_embeddings, b.view_embeddings);
    }

    #[test]
    fn blind_descriptions_never_use_colour_rows() {
        let g = SynthGenerator::new(small()).unwrap();
        for color in 0..g.config().colors {
            let d = g.description("d", 1, attrs(color, 0, 1), Category::Blind).unwrap();
            for w in &d.word_embeddings {
                for row in &g.color_words {
                    let as_f32: Vec<f32> = row.iter().map(|&v| v as f32).collect();
                    assert_ne!(w, &as_f32);
                }
            }
        }
    }

    #[test]
    fn visual_descriptions_differ_only_in_colour_row() {
        let g = SynthGenerator::new(small()).unwrap();
        let a = g.description("d", 1, attrs(2, 1, 1), Category::Visual).unwrap();
        let b = g.description("d", 1, attrs(5, 1, 1), Category::Visual).unwrap();
        assert_ne!(a.word_embeddings[0], b.word_embeddings[0]);
        assert_eq!(a.word_embeddings[1], b.word_embeddings[1]);
    }

    #[test]
    fn sentence_is_mean_of_words() {
        let g = SynthGenerator::new(small()).unwrap();
        let d = g.description("d", 1, attrs(2, 1, 1), Category::Visual).unwrap();
        for j in 0..16 {
            let mean = (f64::from(d.word_embeddings[0][j]) + f64::from(d.word_embeddings[1][j])) / 2.0;
            assert!((f64::from(d.sentence_embedding[j]) - mean).abs() < 1e-6);
        }
    }

    #[test]
    fn out_of_range_rejected() {
        let g = SynthGenerator::new(small()).unwrap();
        assert!(g.object("x", 1, attrs(8, 0, 1)).is_err());
        assert!(g.object("x", 1, attrs(0, 4, 1)).is_err());
        assert!(g.object("x", 1, attrs(0, 0, 0)).is_err());
        assert!(g.description("x", 1, attrs(0, 0, 5), Category::Blind).is_err());
    }

    #[test]
    fn dataset_balance_and_constraints() {
        let mut spec = SynthDatasetSpec::new(20, 31, 4);
        spec.config = small();
        let ds = generate_dataset(&spec).unwrap();
        let visual = ds
            .instances
            .iter()
            .filter(|i| i.category == Category::Visual)
            .count();
        assert_eq!(visual, 16);
        let attr = |id: &str| {
            let i = ds.archive.objects().iter().position(|o| o.object_id == id).unwrap();
            ds.attributes[i]
        };
        for inst in &ds.instances {
            let (t, d) = (attr(&inst.target_id), attr(&inst.distractor_id));
            match inst.category {
                Category::Visual => assert_ne!(t.color_id, d.color_id),
                Category::Blind => assert_ne!(t.geometry(), d.geometry()),
            }
        }
    }
}
