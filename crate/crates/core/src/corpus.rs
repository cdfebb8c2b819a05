//! Corpus ingestion, preprocessing and synthetic planted-topic corpora.
//!
//! A dataset is a JSON-lines file, one document per line:
//!
//! ```text
//! {"id": "d1", "text": "A dog on a beach", "text_embedding": [...], "image_embedding": [...], "image_ref": "img/1.jpg"}
//! {"id": "d2", "tokens": ["dog", "beach"], "text_embedding": [...], "image_embedding": [...]}
//! ```
//!
//! Exactly one of `text` and `tokens` must be present; `text` is run through
//! [`preprocess_tokens`]. A `vocab.txt` next to the dataset (one term per line)
//! pins the vocabulary, otherwise it is built from the data.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_VOCAB_CAP: usize = 2000;
pub const VOCAB_SIDECAR: &str = "vocab.txt";

const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords_en.txt");

/// The bundled English stopword list.
pub fn default_stopwords() -> HashSet<String> {
    parse_term_list(DEFAULT_STOPWORDS).into_iter().collect()
}

/// Reads a plain-text stopword file, one word per line.
pub fn load_stopwords(path: impl AsRef<Path>) -> Result<HashSet<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_term_list(&text)
        .into_iter()
        .map(|w| w.to_lowercase())
        .collect())
}

fn parse_term_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Ordered list of distinct terms with the inverse index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn from_terms(terms: Vec<String>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        let mut index = HashMap::with_capacity(terms.len());
        for (i, t) in terms.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate vocabulary term `{t}`"
                )));
            }
        }
        Ok(Self { terms, index })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn term(&self, id: usize) -> Option<&str> {
        self.terms.get(id).map(String::as_str)
    }

    pub fn id(&self, term: &str) -> Option<usize> {
        self.index.get(term).map(|&i| i as usize)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_terms(parse_term_list(&text))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::with_capacity(self.terms.len() * 8);
        for t in &self.terms {
            out.push_str(t);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.terms.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let terms = Vec::<String>::deserialize(d)?;
        Vocabulary::from_terms(terms).map_err(serde::de::Error::custom)
    }
}

/// Sparse term counts over a vocabulary of fixed size.
///
/// Entries are sorted by term id and never hold a zero count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BagOfWords {
    dim: usize,
    entries: Vec<(u32, u32)>,
}

impl BagOfWords {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    /// Builds from a dense count vector.
    pub fn from_dense(counts: &[u32]) -> Self {
        let entries = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (i as u32, c))
            .collect();
        Self {
            dim: counts.len(),
            entries,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(u32, u32)] {
        &self.entries
    }

    pub fn get(&self, id: usize) -> u32 {
        self.entries
            .binary_search_by_key(&(id as u32), |&(i, _)| i)
            .map(|pos| self.entries[pos].1)
            .unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().map(|&(_, c)| c as u64).sum()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for &(i, c) in &self.entries {
            v[i as usize] = c as f64;
        }
        v
    }

    /// Dense counts divided by the total; all zeros for an empty document.
    pub fn to_normalized(&self) -> Vec<f64> {
        let total = self.total();
        let mut v = self.to_dense();
        if total > 0 {
            let inv = 1.0 / total as f64;
            v.iter_mut().for_each(|x| *x *= inv);
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultimodalDocument {
    pub id: String,
    pub tokens: Vec<String>,
    pub bow: BagOfWords,
    pub text_embedding: Vec<f64>,
    pub image_embedding: Vec<f64>,
    pub image_ref: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub name: String,
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    vocabulary: Vocabulary,
    documents: Vec<MultimodalDocument>,
    pub meta: CorpusMeta,
}

impl Corpus {
    /// Validates the corpus invariants: every bag of words spans the
    /// vocabulary, embedding dimensions are constant and finite, and at least
    /// one document has an in-vocabulary token.
    pub fn new(
        vocabulary: Vocabulary,
        documents: Vec<MultimodalDocument>,
        meta: CorpusMeta,
    ) -> Result<Self> {
        let v = vocabulary.len();
        let first = documents.first().ok_or(Error::EmptyCorpus)?;
        let (dt, di) = (first.text_embedding.len(), first.image_embedding.len());
        for (pos, d) in documents.iter().enumerate() {
            let line = pos + 1;
            if d.bow.dim() != v {
                return Err(Error::DimensionMismatch {
                    line,
                    field: "bow",
                    expected: v,
                    found: d.bow.dim(),
                });
            }
            if d.text_embedding.len() != dt {
                return Err(Error::DimensionMismatch {
                    line,
                    field: "text_embedding",
                    expected: dt,
                    found: d.text_embedding.len(),
                });
            }
            if d.image_embedding.len() != di {
                return Err(Error::DimensionMismatch {
                    line,
                    field: "image_embedding",
                    expected: di,
                    found: d.image_embedding.len(),
                });
            }
            let finite = d
                .text_embedding
                .iter()
                .chain(&d.image_embedding)
                .all(|x| x.is_finite());
            if !finite {
                return Err(Error::MalformedLine {
                    line,
                    message: "non-finite embedding entry".into(),
                });
            }
        }
        if documents.iter().all(|d| d.bow.total() == 0) {
            return Err(Error::EmptyCorpus);
        }
        Ok(Self {
            vocabulary,
            documents,
            meta,
        })
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn documents(&self) -> &[MultimodalDocument] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn text_dim(&self) -> usize {
        self.documents[0].text_embedding.len()
    }

    pub fn image_dim(&self) -> usize {
        self.documents[0].image_embedding.len()
    }

    /// Token lists restricted to in-vocabulary terms, the reference corpus
    /// used for co-occurrence coherence.
    pub fn reference_tokens(&self) -> Vec<Vec<String>> {
        self.documents
            .iter()
            .map(|d| {
                d.tokens
                    .iter()
                    .filter(|t| self.vocabulary.id(t).is_some())
                    .cloned()
                    .collect()
            })
            .collect()
    }

    /// SHA-256 over the vocabulary and every document's content.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for t in self.vocabulary.terms() {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        for d in &self.documents {
            h.update([1u8]);
            h.update(d.id.as_bytes());
            h.update([0u8]);
            for t in &d.tokens {
                h.update(t.as_bytes());
                h.update([0u8]);
            }
            for &(i, c) in d.bow.entries() {
                h.update(i.to_le_bytes());
                h.update(c.to_le_bytes());
            }
            for x in d.text_embedding.iter().chain(&d.image_embedding) {
                h.update(x.to_le_bytes());
            }
            if let Some(r) = &d.image_ref {
                h.update(r.as_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Lowercases, splits on whitespace, strips punctuation at token boundaries,
/// drops tokens that contain a digit or end up empty, and removes stopwords.
pub fn preprocess_tokens(raw_text: &str, stopwords: &HashSet<String>) -> Vec<String> {
    raw_text
        .to_lowercase()
        .split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|t| !t.is_empty())
        .filter(|t| !t.chars().any(|c| c.is_numeric()))
        .filter(|t| !stopwords.contains(*t))
        .map(str::to_owned)
        .collect()
}

/// Keeps the `cap` most frequent tokens; equal counts are ordered
/// lexicographically ascending.
pub fn build_vocabulary(token_lists: &[Vec<String>], cap: usize) -> Result<Vocabulary> {
    if cap == 0 {
        return Err(Error::InvalidArgument("vocabulary cap must be >= 1".into()));
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for t in token_lists.iter().flatten() {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    if counts.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(cap);
    Vocabulary::from_terms(ranked.into_iter().map(|(t, _)| t.to_owned()).collect())
}

pub fn vectorize(tokens: &[String], vocab: &Vocabulary) -> BagOfWords {
    let mut counts = vec![0u32; vocab.len()];
    for t in tokens {
        if let Some(i) = vocab.id(t) {
            counts[i] += 1;
        }
    }
    BagOfWords::from_dense(&counts)
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub vocab_cap: usize,
    pub stopwords: HashSet<String>,
    /// Pinned vocabulary; takes precedence over the sidecar file.
    pub vocabulary: Option<Vocabulary>,
    /// Look for `vocab.txt` next to the dataset.
    pub use_sidecar: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            vocab_cap: DEFAULT_VOCAB_CAP,
            stopwords: default_stopwords(),
            vocabulary: None,
            use_sidecar: true,
        }
    }
}

#[derive(Deserialize)]
struct RawRecord {
    id: Option<String>,
    text: Option<String>,
    tokens: Option<Vec<String>>,
    text_embedding: Option<Vec<f64>>,
    image_embedding: Option<Vec<f64>>,
    image_ref: Option<String>,
}

#[derive(Serialize)]
struct OutRecord<'a> {
    id: &'a str,
    tokens: &'a [String],
    text_embedding: &'a [f64],
    image_embedding: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    image_ref: Option<&'a str>,
}

pub fn load_corpus(dataset_path: impl AsRef<Path>) -> Result<Corpus> {
    load_corpus_with(dataset_path, &LoadOptions::default())
}

pub fn sidecar_path(dataset_path: &Path) -> PathBuf {
    dataset_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(VOCAB_SIDECAR)
}

pub fn load_corpus_with(dataset_path: impl AsRef<Path>, opts: &LoadOptions) -> Result<Corpus> {
    let path = dataset_path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);

    struct Pending {
        id: String,
        tokens: Vec<String>,
        text_embedding: Vec<f64>,
        image_embedding: Vec<f64>,
        image_ref: Option<String>,
    }

    let mut pending: Vec<Pending> = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            line: line_no,
            message: e.to_string(),
        })?;
        let id = rec.id.ok_or(Error::MissingField {
            line: line_no,
            field: "id",
        })?;
        let tokens = match (rec.text, rec.tokens) {
            (Some(_), Some(_)) => {
                return Err(Error::MalformedLine {
                    line: line_no,
                    message: "both `text` and `tokens` present".into(),
                })
            }
            (Some(text), None) => preprocess_tokens(&text, &opts.stopwords),
            (None, Some(tokens)) => tokens,
            (None, None) => {
                return Err(Error::MissingField {
                    line: line_no,
                    field: "text",
                })
            }
        };
        let text_embedding = rec.text_embedding.ok_or(Error::MissingField {
            line: line_no,
            field: "text_embedding",
        })?;
        let image_embedding = rec.image_embedding.ok_or(Error::MissingField {
            line: line_no,
            field: "image_embedding",
        })?;
        match dims {
            None => dims = Some((text_embedding.len(), image_embedding.len())),
            Some((dt, di)) => {
                if text_embedding.len() != dt {
                    return Err(Error::DimensionMismatch {
                        line: line_no,
                        field: "text_embedding",
                        expected: dt,
                        found: text_embedding.len(),
                    });
                }
                if image_embedding.len() != di {
                    return Err(Error::DimensionMismatch {
                        line: line_no,
                        field: "image_embedding",
                        expected: di,
                        found: image_embedding.len(),
                    });
                }
            }
        }
        if text_embedding
            .iter()
            .chain(&image_embedding)
            .any(|x| !x.is_finite())
        {
            return Err(Error::MalformedLine {
                line: line_no,
                message: "non-finite embedding entry".into(),
            });
        }
        pending.push(Pending {
            id,
            tokens,
            text_embedding,
            image_embedding,
            image_ref: rec.image_ref,
        });
    }

    let sidecar = sidecar_path(path);
    let vocabulary = match &opts.vocabulary {
        Some(v) => v.clone(),
        None if opts.use_sidecar && sidecar.is_file() => Vocabulary::read(&sidecar)?,
        None => {
            let lists: Vec<Vec<String>> = pending.iter().map(|p| p.tokens.clone()).collect();
            build_vocabulary(&lists, opts.vocab_cap)?
        }
    };

    let documents = pending
        .into_iter()
        .map(|p| MultimodalDocument {
            bow: vectorize(&p.tokens, &vocabulary),
            id: p.id,
            tokens: p.tokens,
            text_embedding: p.text_embedding,
            image_embedding: p.image_embedding,
            image_ref: p.image_ref,
        })
        .collect();
    let meta = CorpusMeta {
        name: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        provenance: path.display().to_string(),
    };
    Corpus::new(vocabulary, documents, meta)
}

/// Writes the dataset as JSON lines (always with explicit `tokens`) and pins
/// the vocabulary in the sibling `vocab.txt`.
pub fn save_corpus(corpus: &Corpus, dataset_path: impl AsRef<Path>) -> Result<()> {
    let path = dataset_path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for d in corpus.documents() {
        let rec = OutRecord {
            id: &d.id,
            tokens: &d.tokens,
            text_embedding: &d.text_embedding,
            image_embedding: &d.image_embedding,
            image_ref: d.image_ref.as_deref(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    corpus.vocabulary().write(sidecar_path(path))
}

/// Parameters of a planted-topic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub num_topics_true: usize,
    pub vocab_size: usize,
    pub docs: usize,
    /// Mean document length (Poisson).
    pub doc_length: f64,
    pub embed_dim_text: usize,
    pub embed_dim_image: usize,
    /// Symmetric Dirichlet concentration of each topic's distribution over its word block.
    pub topic_word_concentration: f64,
    /// Symmetric Dirichlet concentration of per-document topic mixtures.
    pub doc_topic_concentration: f64,
    pub embedding_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_topics_true: 5,
            vocab_size: 200,
            docs: 1000,
            doc_length: 40.0,
            embed_dim_text: 16,
            embed_dim_image: 16,
            topic_word_concentration: 1.0,
            doc_topic_concentration: 0.1,
            embedding_noise: 0.05,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_topics_true", self.num_topics_true),
            ("vocab_size", self.vocab_size),
            ("docs", self.docs),
            ("embed_dim_text", self.embed_dim_text),
            ("embed_dim_image", self.embed_dim_image),
        ];
        for (name, c) in counts {
            if c == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if !(self.doc_length >= 1.0) {
            return Err(Error::InvalidConfig("doc_length must be >= 1".into()));
        }
        if !(self.topic_word_concentration > 0.0) || !(self.doc_topic_concentration > 0.0) {
            return Err(Error::InvalidConfig(
                "Dirichlet concentrations must be positive".into(),
            ));
        }
        if !(self.embedding_noise >= 0.0) {
            return Err(Error::InvalidConfig("embedding_noise must be >= 0".into()));
        }
        if self.vocab_size < self.num_topics_true {
            return Err(Error::InvalidConfig(format!(
                "vocab_size {} < num_topics_true {}: word blocks impossible",
                self.vocab_size, self.num_topics_true
            )));
        }
        Ok(())
    }
}

/// Ground truth for one planted topic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTopic {
    pub id: usize,
    /// Vocabulary ids owned by this topic.
    pub word_block: Range<usize>,
    /// Distribution over the full vocabulary; zero outside `word_block`.
    pub word_distribution: Vec<f64>,
    pub text_centroid: Vec<f64>,
    pub image_centroid: Vec<f64>,
}

impl PlantedTopic {
    /// Top-`n` terms by planted probability, ties by ascending id.
    pub fn top_words(&self, vocab: &Vocabulary, n: usize) -> Vec<String> {
        let mut ids: Vec<usize> = self.word_block.clone().collect();
        ids.sort_by(|&a, &b| {
            self.word_distribution[b]
                .total_cmp(&self.word_distribution[a])
                .then(a.cmp(&b))
        });
        ids.into_iter()
            .take(n)
            .filter_map(|i| vocab.term(i).map(str::to_owned))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct PlantedCorpus {
    pub corpus: Corpus,
    pub topics: Vec<PlantedTopic>,
    /// Per-document topic mixture that generated it.
    pub mixtures: Vec<Vec<f64>>,
}

/// `normalize(sum_k mixture[k] * centroids[k])`.
pub fn mix_embedding(centroids: &[Vec<f64>], mixture: &[f64]) -> Vec<f64> {
    let dim = centroids.first().map_or(0, Vec::len);
    let mut out = vec![0.0; dim];
    for (c, &w) in centroids.iter().zip(mixture) {
        for (o, x) in out.iter_mut().zip(c) {
            *o += w * x;
        }
    }
    let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        out.iter_mut().for_each(|x| *x /= norm);
    }
    out
}

fn sample_dirichlet(rng: &mut ChaCha8Rng, alpha: f64, k: usize) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("positive concentration");
    let mut draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        draws.iter_mut().for_each(|x| *x /= sum);
    } else {
        // every gamma draw underflowed; fall back to a single random vertex
        let hot = rng.random_range(0..k);
        draws.iter_mut().enumerate().for_each(|(i, x)| *x = (i == hot) as u8 as f64);
    }
    draws
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Generates a planted-topic corpus. Topic `k` owns the contiguous word block
/// `[k*V/K, (k+1)*V/K)`; identical specs (including the seed) give identical
/// corpora.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<PlantedCorpus> {
    spec.validate()?;
    let k = spec.num_topics_true;
    let v = spec.vocab_size;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let width = (v as f64).log10().floor() as usize + 1;
    let terms: Vec<String> = (0..v).map(|i| format!("w{i:0width$}")).collect();
    let vocabulary = Vocabulary::from_terms(terms)?;

    let mut topics = Vec::with_capacity(k);
    for t in 0..k {
        let block = (t * v / k)..((t + 1) * v / k);
        let weights = sample_dirichlet(&mut rng, spec.topic_word_concentration, block.len());
        let mut word_distribution = vec![0.0; v];
        for (i, w) in block.clone().zip(weights) {
            word_distribution[i] = w;
        }
        let text_centroid = random_unit(&mut rng, spec.embed_dim_text);
        let image_centroid = random_unit(&mut rng, spec.embed_dim_image);
        topics.push(PlantedTopic {
            id: t,
            word_block: block,
            word_distribution,
            text_centroid,
            image_centroid,
        });
    }
    let word_samplers: Vec<WeightedIndex<f64>> = topics
        .iter()
        .map(|t| WeightedIndex::new(&t.word_distribution[t.word_block.clone()]).expect("weights"))
        .collect();
    let text_centroids: Vec<Vec<f64>> = topics.iter().map(|t| t.text_centroid.clone()).collect();
    let image_centroids: Vec<Vec<f64>> = topics.iter().map(|t| t.image_centroid.clone()).collect();
    let length = Poisson::new(spec.doc_length)
        .map_err(|e| Error::InvalidConfig(format!("doc_length: {e}")))?;

    let mut documents = Vec::with_capacity(spec.docs);
    let mut mixtures = Vec::with_capacity(spec.docs);
    for d in 0..spec.docs {
        let mixture = sample_dirichlet(&mut rng, spec.doc_topic_concentration, k);
        let n_tokens = (length.sample(&mut rng) as usize).max(1);
        let topic_sampler = WeightedIndex::new(&mixture).expect("mixture");
        let tokens: Vec<String> = (0..n_tokens)
            .map(|_| {
                let z = topic_sampler.sample(&mut rng);
                let w = topics[z].word_block.start + word_samplers[z].sample(&mut rng);
                vocabulary.terms()[w].clone()
            })
            .collect();
        let mut text_embedding = mix_embedding(&text_centroids, &mixture);
        let mut image_embedding = mix_embedding(&image_centroids, &mixture);
        for x in text_embedding.iter_mut().chain(image_embedding.iter_mut()) {
            let n: f64 = rng.sample(StandardNormal);
            if spec.embedding_noise > 0.0 {
                *x += spec.embedding_noise * n;
            }
        }
        documents.push(MultimodalDocument {
            id: format!("doc{d:06}"),
            bow: vectorize(&tokens, &vocabulary),
            tokens,
            text_embedding,
            image_embedding,
            image_ref: Some(format!("synthetic/img{d:06}")),
        });
        mixtures.push(mixture);
    }

    let corpus = Corpus::new(
        vocabulary,
        documents,
        CorpusMeta {
            name: format!("synthetic-k{k}-v{v}-n{}-s{}", spec.docs, spec.seed),
            provenance: serde_json::to_string(spec)?,
        },
    )?;
    Ok(PlantedCorpus {
        corpus,
        topics,
        mixtures,
    })
}
