#![allow(dead_code)]

use cellroute::model::ModelConfig;
use cellroute_flatland::{make_dataset, Dataset};
use cellroute_harness::RunConfig;

/// A model small enough to train for a few hundred steps in a test.
pub fn tiny_run(seed: u64) -> RunConfig {
    let mut cfg = RunConfig {
        model: ModelConfig {
            world_cells: 8,
            embed_dim: 4,
            w2c_hidden: 16,
            wce_hidden: 8,
            vce_hidden: 8,
            channels: 4,
            width: 16,
            patch: 4,
            latent_dim: 3,
            encoder_hidden: 8,
            head_hidden: 8,
            decoder_hidden: 16,
            ..ModelConfig::default()
        },
        steps: 20,
        batch_size: 4,
        obs_min: 1,
        obs_max: 3,
        seed,
        checkpoint_interval: 7,
        scenes: 10,
        views_per_scene: 6,
        ..RunConfig::default()
    };
    cfg.adam.learning_rate = 3e-3;
    cfg
}

pub fn tiny_data(cfg: &RunConfig) -> Dataset {
    make_dataset(&cfg.gen_config(false).unwrap()).unwrap()
}
