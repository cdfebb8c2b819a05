//! Per-topic descriptors: top keywords from `β` and top images by document
//! topic mass.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Vocabulary};
use crate::error::{Error, Result};
use crate::nncore::DenseMatrix;

pub const DEFAULT_TOP_N: usize = 10;

/// One representative image of a topic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDescriptor {
    pub doc_id: String,
    pub image_ref: Option<String>,
    /// Not exported to JSON lines.
    #[serde(skip)]
    pub embedding: Vec<f64>,
    #[serde(skip)]
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicDescriptors {
    pub topic_id: usize,
    pub keywords: Vec<String>,
    pub images: Vec<ImageDescriptor>,
}

/// Indices of the `n` largest values, largest first, equal values in
/// ascending index order.
pub fn top_indices(values: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(n);
    idx
}

fn check_topic(topic_id: usize, k: usize) -> Result<()> {
    if topic_id >= k {
        return Err(Error::InvalidArgument(format!(
            "topic {topic_id} out of range for {k} topics"
        )));
    }
    Ok(())
}

/// The `n` terms with the largest weight in row `topic_id` of `beta`.
pub fn top_keywords(
    beta: &DenseMatrix,
    vocab: &Vocabulary,
    topic_id: usize,
    n: usize,
) -> Result<Vec<String>> {
    check_topic(topic_id, beta.rows())?;
    if beta.cols() != vocab.len() {
        return Err(Error::Shape(format!(
            "beta has {} columns for a {}-term vocabulary",
            beta.cols(),
            vocab.len()
        )));
    }
    if n > vocab.len() {
        return Err(Error::InvalidArgument(format!(
            "asked for {n} keywords from a {}-term vocabulary",
            vocab.len()
        )));
    }
    Ok(top_indices(beta.row(topic_id), n)
        .into_iter()
        .map(|i| vocab.terms()[i].clone())
        .collect())
}

/// Keyword lists for every topic.
pub fn all_top_keywords(beta: &DenseMatrix, vocab: &Vocabulary, n: usize) -> Result<Vec<Vec<String>>> {
    (0..beta.rows())
        .map(|k| top_keywords(beta, vocab, k, n))
        .collect()
}

/// The `n` documents with the largest `doc_theta[·, topic_id]`.
pub fn top_images(
    doc_theta: &DenseMatrix,
    corpus: &Corpus,
    topic_id: usize,
    n: usize,
) -> Result<Vec<ImageDescriptor>> {
    check_topic(topic_id, doc_theta.cols())?;
    if doc_theta.rows() != corpus.len() {
        return Err(Error::Shape(format!(
            "doc_theta has {} rows for {} documents",
            doc_theta.rows(),
            corpus.len()
        )));
    }
    if n > corpus.len() {
        return Err(Error::InvalidArgument(format!(
            "asked for {n} images from {} documents",
            corpus.len()
        )));
    }
    let column = doc_theta.column(topic_id);
    Ok(top_indices(&column, n)
        .into_iter()
        .map(|d| {
            let doc = &corpus.documents()[d];
            ImageDescriptor {
                doc_id: doc.id.clone(),
                image_ref: doc.image_ref.clone(),
                embedding: doc.image_embedding.clone(),
                weight: column[d],
            }
        })
        .collect())
}

/// Keywords and images for every topic. List lengths are capped at the
/// vocabulary size and the number of documents.
pub fn describe_topics(
    beta: &DenseMatrix,
    vocab: &Vocabulary,
    doc_theta: &DenseMatrix,
    corpus: &Corpus,
    n: usize,
) -> Result<Vec<TopicDescriptors>> {
    if beta.rows() != doc_theta.cols() {
        return Err(Error::Shape(format!(
            "beta has {} topics, doc_theta {}",
            beta.rows(),
            doc_theta.cols()
        )));
    }
    (0..beta.rows())
        .map(|k| {
            Ok(TopicDescriptors {
                topic_id: k,
                keywords: top_keywords(beta, vocab, k, n.min(vocab.len()))?,
                images: top_images(doc_theta, corpus, k, n.min(corpus.len()))?,
            })
        })
        .collect()
}

pub fn write_descriptors(descriptors: &[TopicDescriptors], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for d in descriptors {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_descriptors(path: impl AsRef<Path>) -> Result<Vec<TopicDescriptors>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}
