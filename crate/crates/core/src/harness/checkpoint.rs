//! Model checkpoints: one JSON header line, then the parameter blocks as raw
//! little-endian `f64` in header order. The header carries a SHA-256 of the
//! payload.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::harness::write_atomic;
use crate::models::{LossTerms, ModelConfig, ModelKind, TopicParams, TrainedTopicModel};
use crate::nncore::{DenseMatrix, ParameterSet};

pub const CHECKPOINT_FORMAT: &str = "mmtopic-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BlockInfo {
    name: String,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    kind: ModelKind,
    config: ModelConfig,
    text_dim: usize,
    image_dim: usize,
    vocab_size: usize,
    num_docs: usize,
    blocks: Vec<BlockInfo>,
    payload_len: usize,
    checksum: String,
    loss_trace: Vec<LossTerms>,
    vocabulary: Vocabulary,
}

const DOC_THETA: &str = "doc_theta";

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Serialises a model to bytes.
pub fn encode_model(model: &TrainedTopicModel) -> Result<Vec<u8>> {
    let mut blocks = Vec::new();
    let mut payload = Vec::new();
    let mut push = |name: String, values: &[f64]| {
        blocks.push(BlockInfo {
            name,
            len: values.len(),
        });
        for v in values {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    };
    for (name, values) in model.params.blocks() {
        push(name, values);
    }
    push(DOC_THETA.into(), model.doc_theta.values());

    let header = Header {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        kind: model.kind(),
        config: model.config.clone(),
        text_dim: model.text_dim,
        image_dim: model.image_dim,
        vocab_size: model.vocabulary.len(),
        num_docs: model.doc_theta.rows(),
        blocks,
        payload_len: payload.len(),
        checksum: sha256_hex(&payload),
        loss_trace: model.loss_trace.clone(),
        vocabulary: model.vocabulary.clone(),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Parses bytes written by [`encode_model`].
pub fn decode_model(bytes: &[u8]) -> Result<TrainedTopicModel> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::CorruptCheckpoint("no header line".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| Error::CorruptCheckpoint(format!("bad header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(Error::CorruptCheckpoint(format!(
            "unknown format `{}`",
            header.format
        )));
    }
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            expected: CHECKPOINT_VERSION,
            found: header.version,
        });
    }
    let payload = &bytes[newline + 1..];
    if payload.len() != header.payload_len || sha256_hex(payload) != header.checksum {
        return Err(Error::ChecksumMismatch);
    }
    let config = header.config;
    if config.kind != header.kind || header.vocabulary.len() != header.vocab_size {
        return Err(Error::CorruptCheckpoint("header fields disagree".into()));
    }
    config.validate()?;

    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut params = TopicParams::init(
        config.kind,
        config.num_topics,
        header.vocab_size,
        header.text_dim,
        header.image_dim,
        config.hidden_width,
        config.dropout_rate,
        &mut ChaCha8Rng::seed_from_u64(0),
    );
    let expected: Vec<(String, usize)> = params
        .blocks()
        .into_iter()
        .map(|(n, b)| (n, b.len()))
        .chain([(DOC_THETA.to_string(), header.num_docs * config.num_topics)])
        .collect();
    let found: Vec<(String, usize)> = header.blocks.iter().map(|b| (b.name.clone(), b.len)).collect();
    if expected != found {
        return Err(Error::CorruptCheckpoint(
            "block layout does not match the model configuration".into(),
        ));
    }
    if expected.iter().map(|(_, l)| l * 8).sum::<usize>() != payload.len() {
        return Err(Error::CorruptCheckpoint("payload length does not match blocks".into()));
    }
    for (_, block) in params.blocks_mut() {
        for slot in block.iter_mut() {
            *slot = values.next().expect("length checked");
        }
    }
    let doc_theta = DenseMatrix::from_vec(
        header.num_docs,
        config.num_topics,
        values.collect(),
    )?;
    Ok(TrainedTopicModel {
        config,
        vocabulary: header.vocabulary,
        text_dim: header.text_dim,
        image_dim: header.image_dim,
        params,
        loss_trace: header.loss_trace,
        doc_theta,
    })
}

/// Writes a checkpoint atomically.
pub fn save_model(model: &TrainedTopicModel, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_model(model)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedTopicModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

/// Loads a checkpoint and checks that it holds a model of `kind`.
pub fn load_model_as(path: impl AsRef<Path>, kind: ModelKind) -> Result<TrainedTopicModel> {
    let model = load_model(path)?;
    if model.kind() != kind {
        return Err(Error::KindMismatch {
            expected: kind,
            found: model.kind(),
        });
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SyntheticSpec};
    use crate::models::{infer_theta, train, InferenceInput};

    fn trained(kind: ModelKind) -> (TrainedTopicModel, crate::corpus::Corpus) {
        let corpus = generate_synthetic(&SyntheticSpec {
            num_topics_true: 3,
            vocab_size: 30,
            docs: 30,
            doc_length: 10.0,
            embed_dim_text: 4,
            embed_dim_image: 3,
            ..SyntheticSpec::default()
        })
        .unwrap()
        .corpus;
        let mut cfg = ModelConfig::new(kind, 3);
        cfg.epochs = 2;
        (train(&corpus, &cfg).unwrap(), corpus)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for kind in ModelKind::ALL {
            let (m, corpus) = trained(kind);
            let p = dir.path().join(format!("{kind}.ckpt"));
            save_model(&m, &p).unwrap();
            let back = load_model(&p).unwrap();
            assert_eq!(back, m);
            let bits = |d: &DenseMatrix| d.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(back.beta()), bits(m.beta()));
            let doc = &corpus.documents()[0];
            assert_eq!(
                infer_theta(&back, InferenceInput::full(doc)).unwrap(),
                infer_theta(&m, InferenceInput::full(doc)).unwrap()
            );
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (m, _) = trained(ModelKind::MultimodalZeroShot);
        let p = dir.path().join("m.ckpt");
        save_model(&m, &p).unwrap();
        let bytes = fs::read(&p).unwrap();

        fs::write(&p, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(load_model(&p), Err(Error::ChecksumMismatch)));

        let mut flipped = bytes.clone();
        let last = flipped.len() - 1;
        flipped[last] ^= 1;
        fs::write(&p, &flipped).unwrap();
        assert!(matches!(load_model(&p), Err(Error::ChecksumMismatch)));

        fs::write(&p, &bytes[..20]).unwrap();
        assert!(matches!(load_model(&p), Err(Error::CorruptCheckpoint(_))));

        let text = String::from_utf8_lossy(&bytes[..bytes.iter().position(|&b| b == b'\n').unwrap()]).to_string();
        let bumped = text.replacen("\"version\":1", "\"version\":9", 1);
        let mut v = bumped.into_bytes();
        v.extend_from_slice(&bytes[text.len()..]);
        fs::write(&p, &v).unwrap();
        assert!(matches!(
            load_model(&p),
            Err(Error::VersionMismatch { expected: 1, found: 9 })
        ));

        fs::write(&p, &bytes).unwrap();
        assert!(matches!(
            load_model_as(&p, ModelKind::ZeroShot),
            Err(Error::KindMismatch { .. })
        ));
        assert!(load_model_as(&p, ModelKind::MultimodalZeroShot).is_ok());
    }
}
