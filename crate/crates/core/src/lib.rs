//! Multimodal neural topic modeling.
//!
//! The crate trains variational-autoencoder topic models over documents that
//! carry a bag of words, a text embedding and an image embedding:
//!
//! * [`ModelKind::ZeroShot`] and [`ModelKind::Combined`], text-only baselines;
//! * [`ModelKind::MultimodalZeroShot`], which encodes the concatenated text and
//!   image embeddings and reconstructs both the bag of words and the image
//!   embedding (through a topic-image matrix);
//! * [`ModelKind::MultimodalContrast`], which runs one inference network per
//!   modality and aligns the two topic distributions with an InfoNCE term.
//!
//! Around the models sit topic descriptors (top keywords, top images), keyword
//! and image coherence/diversity metrics, Hungarian topic alignment between
//! two models, and an experiment harness with checkpoints and reports.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod descriptors;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod nncore;
pub mod overlap;

pub use corpus::{
    build_vocabulary, generate_synthetic, load_corpus, preprocess_tokens, save_corpus, vectorize,
    BagOfWords, Corpus, MultimodalDocument, PlantedCorpus, PlantedTopic, SyntheticSpec, Vocabulary,
};
pub use descriptors::{top_images, top_keywords, ImageDescriptor, TopicDescriptors};
pub use error::{Error, Result};
pub use harness::{load_model, save_model, ExperimentPlan, RunManifest};
pub use metrics::MetricReport;
pub use models::{infer_theta, train, InferenceInput, LossTerms, ModelConfig, ModelKind, TrainedTopicModel};
pub use nncore::{DenseMatrix, GaussianPrior};
pub use overlap::{hungarian, overlap_report, Assignment, OverlapReport};
