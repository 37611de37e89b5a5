//! Fixtures shared by the benchmarks.

use mdat::data::{gen_corpus, Corpus, Sample, SyntheticSpec};
use mdat::model::{AtModel, DatModel, ModelConfig};

/// Long-sentence corpus: every source has at least 32 tokens.
pub fn long_corpus() -> Corpus {
    gen_corpus(&SyntheticSpec {
        concepts: 40,
        min_len: 32,
        max_len: 40,
        train_per_direction: 50,
        valid_per_direction: 5,
        test_per_direction: 5,
        ..SyntheticSpec::default()
    })
    .expect("valid corpus settings")
}

/// Untrained DAT and AT models of the same shape.
pub fn models(corpus: &Corpus) -> (DatModel, AtModel) {
    let cfg = ModelConfig {
        vocab_size: corpus.vocab.len(),
        ..ModelConfig::default()
    };
    (
        DatModel::new(cfg.clone()).expect("valid model config"),
        AtModel::new(cfg).expect("valid model config"),
    )
}

pub fn first_test_sample(corpus: &Corpus) -> &Sample {
    corpus.test.values().flatten().next().expect("non-empty test split")
}
