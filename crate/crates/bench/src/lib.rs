//! Shared fixtures for the criterion benchmarks.

use mmtopic::corpus::{generate_synthetic, Corpus, SyntheticSpec};
use mmtopic::descriptors::all_top_keywords;
use mmtopic::{train, ModelConfig, ModelKind, TrainedTopicModel};

/// A planted corpus of the given size with 5 true topics.
pub fn planted(docs: usize, vocab_size: usize, seed: u64) -> Corpus {
    generate_synthetic(&SyntheticSpec {
        docs,
        vocab_size,
        seed,
        ..SyntheticSpec::default()
    })
    .expect("valid synthetic spec")
    .corpus
}

/// A briefly trained model, good enough to have distinct descriptors.
pub fn quick_model(corpus: &Corpus, kind: ModelKind, k: usize) -> TrainedTopicModel {
    let mut cfg = ModelConfig::new(kind, k);
    cfg.epochs = 2;
    train(corpus, &cfg).expect("training succeeds")
}

pub fn keywords(model: &TrainedTopicModel, n: usize) -> Vec<Vec<String>> {
    all_top_keywords(model.beta(), &model.vocabulary, n).expect("n within vocabulary")
}
