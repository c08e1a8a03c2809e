#![allow(dead_code)]

use std::path::PathBuf;

use spanrel::config::RunConfig;
use spanrel::corpus::{load_dataset_inferring_schema, LabelSchema, Sentence};

pub fn fixture_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/fixture.json")
}

pub fn fixture() -> (Vec<Sentence>, LabelSchema) {
    load_dataset_inferring_schema(fixture_path()).expect("fixture loads")
}

/// 8 sentences at batch size 2 for 50 epochs: 200 updates.
pub fn overfit_config() -> RunConfig {
    let mut cfg = RunConfig {
        epochs: 50,
        learning_rate: 3e-2,
        seed: 7,
        ..RunConfig::default()
    };
    cfg.encoder.dim = 32;
    cfg
}
