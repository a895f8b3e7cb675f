#![allow(dead_code)]

use std::sync::OnceLock;

use asr_smooth::recognizer::{synth_corpus, train_clean, ModelParams, ToyCorpus, TrainConfig};

/// Small corpus and a briefly trained model shared by the tests in one binary.
pub fn fixture() -> &'static (ToyCorpus, ModelParams) {
    static FIXTURE: OnceLock<(ToyCorpus, ModelParams)> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let corpus = synth_corpus(11, 120, 8).unwrap();
        let cfg = TrainConfig {
            hidden: vec![32],
            epochs: 3,
            ..TrainConfig::default()
        };
        let params = train_clean(&corpus.train, &corpus.vocabulary, &cfg, &mut |_, _| {}).unwrap();
        (corpus, params)
    })
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}
