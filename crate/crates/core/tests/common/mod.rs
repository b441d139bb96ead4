#![allow(dead_code)]

use vlg::features::synth::{generate_dataset, SynthConfig, SynthDataset, SynthDatasetSpec};
use vlg::model::{ModelConfig, Pooling, Variant};

pub fn small_synth(d: usize) -> SynthConfig {
    SynthConfig {
        views: 3,
        d_view: d,
        d_text: d,
        ..SynthConfig::default()
    }
}

pub fn tiny_dataset(pairs: usize, seed: u64) -> SynthDataset {
    let mut spec = SynthDatasetSpec::new(12, pairs, seed);
    spec.config = small_synth(16);
    generate_dataset(&spec).unwrap()
}

pub fn tiny_model(variant: Variant) -> ModelConfig {
    ModelConfig {
        d_view: 16,
        d_text: 16,
        d_model: 8,
        n_heads: 2,
        n_layers: 2,
        d_ff: 12,
        mlp_hidden: 6,
        fusion_dim: 4,
        variant,
        max_words: 4,
        word_positions: true,
        factor_positions: true,
        view_pooling: Pooling::Max,
    }
}
