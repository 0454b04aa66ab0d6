//! Small fixtures shared by the integration tests.

#![allow(dead_code)]

use bayesic::agent_embedding::EmbeddingConfig;
use bayesic::duration_model::DurationConfig;
use bayesic::poi_model::PoiConfig;
use bayesic::synthgen::{generate, GeneratedData, GeneratorConfig, PersonaTemplate};
use bayesic::training::{PipelineConfig, TrainingConfig};

pub fn small_data(seed: u64) -> GeneratedData {
    let cfg = GeneratorConfig { n_agents: 9, weeks_train: 2, weeks_test: 1, ..GeneratorConfig::default() };
    generate(&PersonaTemplate::defaults(), &cfg, seed).unwrap()
}

pub fn tiny_config(seed: u64) -> PipelineConfig {
    PipelineConfig {
        training: TrainingConfig { seed, epochs: 3, batch_size: 4, ..TrainingConfig::default() },
        embedding: EmbeddingConfig {
            d_model: 8,
            encoder_layers: 1,
            decoder_layers: 1,
            heads: 2,
            ff_width: 16,
            d_embed: 4,
            window_len: 16,
        },
        poi: PoiConfig { hidden: 8, layers: 1 },
        duration: DurationConfig { components: 3, d_model: 8, heads: 2, ff_width: 16, ..DurationConfig::default() },
    }
}
