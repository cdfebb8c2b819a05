//! Keyword and image metrics for topic sets.
//!
//! Coherence: NPMI, WE (word-embedding coherence), IEC (image-embedding
//! coherence). Diversity: TD, I-RBO, IEPS.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::descriptors::{all_top_keywords, top_images};
use crate::error::{Error, Result};
use crate::models::{infer_corpus, TrainedTopicModel};
use crate::nncore::{dot, norm};

pub const NPMI_EPS: f64 = 1e-12;
pub const DEFAULT_WINDOW: usize = 10;
pub const DEFAULT_RBO_P: f64 = 0.9;

pub type WordEmbeddings = HashMap<String, Vec<f64>>;

/// Mean score over topics plus the per-topic values behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicScores {
    pub mean: f64,
    /// `None` for topics that could not be scored.
    pub per_topic: Vec<Option<f64>>,
    /// Topics with no scorable pair.
    pub flagged: Vec<usize>,
}

/// Sliding-window document frequencies for a fixed set of words.
struct WindowCounts {
    windows: u64,
    single: Vec<u64>,
    pair: HashMap<(usize, usize), u64>,
}

fn count_windows(words: &HashMap<&str, usize>, reference: &[Vec<String>], window: usize) -> WindowCounts {
    let mut counts = WindowCounts {
        windows: 0,
        single: vec![0; words.len()],
        pair: HashMap::new(),
    };
    let mut present: BTreeSet<usize> = BTreeSet::new();
    for doc in reference {
        if doc.is_empty() {
            continue;
        }
        let ids: Vec<Option<usize>> = doc.iter().map(|t| words.get(t.as_str()).copied()).collect();
        let starts = doc.len().saturating_sub(window) + 1;
        for s in 0..starts {
            let end = (s + window).min(doc.len());
            present.clear();
            present.extend(ids[s..end].iter().flatten().copied());
            counts.windows += 1;
            let list: Vec<usize> = present.iter().copied().collect();
            for (i, &a) in list.iter().enumerate() {
                counts.single[a] += 1;
                for &b in &list[i + 1..] {
                    *counts.pair.entry((a, b)).or_default() += 1;
                }
            }
        }
    }
    counts
}

/// NPMI of one word pair from window frequencies. Both words must occur in
/// at least one window.
pub fn npmi_from_counts(c_i: u64, c_j: u64, c_ij: u64, windows: u64) -> f64 {
    let n = windows as f64;
    let (p_i, p_j, p_ij) = (c_i as f64 / n, c_j as f64 / n, c_ij as f64 / n);
    if p_ij >= 1.0 {
        return 1.0;
    }
    let pmi = ((p_ij + NPMI_EPS) / (p_i * p_j)).ln();
    pmi / -(p_ij + NPMI_EPS).ln()
}

/// NPMI coherence with boolean sliding-window co-occurrence.
///
/// Windows are `window` consecutive tokens with step 1 and never cross a
/// document boundary; a document shorter than the window is one window.
/// Pairs with a word that never occurs in the reference are skipped; a topic
/// left with no pair scores 0 and is flagged.
pub fn npmi(topics: &[Vec<String>], reference: &[Vec<String>], window: usize) -> Result<TopicScores> {
    if topics.is_empty() {
        return Err(Error::InvalidArgument("no topics to score".into()));
    }
    if window == 0 {
        return Err(Error::InvalidArgument("window must be >= 1".into()));
    }
    let mut words: HashMap<&str, usize> = HashMap::new();
    for w in topics.iter().flatten() {
        let next = words.len();
        words.entry(w.as_str()).or_insert(next);
    }
    let counts = count_windows(&words, reference, window);
    let mut per_topic = Vec::with_capacity(topics.len());
    let mut flagged = Vec::new();
    for (t, topic) in topics.iter().enumerate() {
        let mut acc = 0.0;
        let mut pairs = 0usize;
        for i in 0..topic.len() {
            for j in i + 1..topic.len() {
                let (a, b) = (words[topic[i].as_str()], words[topic[j].as_str()]);
                let (c_i, c_j) = (counts.single[a], counts.single[b]);
                if c_i == 0 || c_j == 0 {
                    continue;
                }
                let c_ij = counts.pair.get(&(a.min(b), a.max(b))).copied().unwrap_or(0);
                acc += npmi_from_counts(c_i, c_j, c_ij, counts.windows);
                pairs += 1;
            }
        }
        if pairs == 0 {
            flagged.push(t);
            per_topic.push(Some(0.0));
        } else {
            per_topic.push(Some(acc / pairs as f64));
        }
    }
    let mean = per_topic.iter().flatten().sum::<f64>() / topics.len() as f64;
    Ok(TopicScores {
        mean,
        per_topic,
        flagged,
    })
}

/// Cosine similarity; zero-norm vectors are an error.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "cosine between {}- and {}-dim vectors",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector("embedding"));
    }
    Ok(dot(a, b) / (na * nb))
}

fn unit(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroVector("embedding"));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

fn mean_pairwise_cosine(units: &[Vec<f64>]) -> f64 {
    let mut acc = 0.0;
    let mut pairs = 0usize;
    for i in 0..units.len() {
        for j in i + 1..units.len() {
            acc += dot(&units[i], &units[j]);
            pairs += 1;
        }
    }
    acc / pairs as f64
}

/// Word-embedding coherence: mean pairwise cosine of each topic's embedded
/// keywords, averaged over topics. Unembedded terms are dropped; topics with
/// fewer than two embedded terms are skipped and flagged.
pub fn we_coherence(topics: &[Vec<String>], embeddings: &WordEmbeddings) -> Result<TopicScores> {
    let mut per_topic = Vec::with_capacity(topics.len());
    let mut flagged = Vec::new();
    for (t, topic) in topics.iter().enumerate() {
        let units = topic
            .iter()
            .filter_map(|w| embeddings.get(w))
            .map(|v| unit(v))
            .collect::<Result<Vec<_>>>()?;
        if units.len() < 2 {
            flagged.push(t);
            per_topic.push(None);
        } else {
            per_topic.push(Some(mean_pairwise_cosine(&units)));
        }
    }
    let scored: Vec<f64> = per_topic.iter().flatten().copied().collect();
    if scored.is_empty() {
        return Err(Error::InvalidArgument(
            "no topic has two keywords with embeddings".into(),
        ));
    }
    Ok(TopicScores {
        mean: scored.iter().sum::<f64>() / scored.len() as f64,
        per_topic,
        flagged,
    })
}

/// Keywords with no embedding, in first-seen order.
pub fn missing_embeddings(topics: &[Vec<String>], embeddings: &WordEmbeddings) -> Vec<String> {
    let mut seen = HashSet::new();
    topics
        .iter()
        .flatten()
        .filter(|w| !embeddings.contains_key(*w) && seen.insert(w.as_str()))
        .cloned()
        .collect()
}

/// Reads `term v1 ... vd` lines. A leading `count dim` header line is skipped.
pub fn load_word_embeddings(path: impl AsRef<Path>) -> Result<WordEmbeddings> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = WordEmbeddings::new();
    let mut dim: Option<usize> = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut fields = line.split_whitespace();
        let Some(term) = fields.next() else { continue };
        let rest: Vec<&str> = fields.collect();
        if i == 0 && rest.len() == 1 && term.parse::<usize>().is_ok() && rest[0].parse::<usize>().is_ok() {
            continue;
        }
        let v = rest
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::MalformedLine {
                line: i + 1,
                message: e.to_string(),
            })?;
        match dim {
            None => dim = Some(v.len()),
            Some(d) if d != v.len() => {
                return Err(Error::DimensionMismatch {
                    line: i + 1,
                    field: "word_embedding",
                    expected: d,
                    found: v.len(),
                })
            }
            _ => {}
        }
        out.insert(term.to_owned(), v);
    }
    Ok(out)
}

/// Fraction of distinct words among the top `n` of every topic.
pub fn topic_diversity(topics: &[Vec<String>], n: usize) -> Result<f64> {
    if topics.is_empty() || n == 0 {
        return Err(Error::InvalidArgument("topic diversity needs topics and n >= 1".into()));
    }
    if let Some(short) = topics.iter().find(|t| t.len() < n) {
        return Err(Error::InvalidArgument(format!(
            "topic has {} keywords, fewer than {n}",
            short.len()
        )));
    }
    let unique: HashSet<&str> = topics
        .iter()
        .flat_map(|t| t[..n].iter().map(String::as_str))
        .collect();
    Ok(unique.len() as f64 / (topics.len() * n) as f64)
}

/// Extrapolated rank-biased overlap of two equal-length rankings.
pub fn rbo(a: &[String], b: &[String], p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!("rbo p must be in (0, 1), got {p}")));
    }
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "rbo over lists of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("rbo over empty lists".into()));
    }
    let (mut seen_a, mut seen_b) = (HashSet::new(), HashSet::new());
    let mut overlap = 0usize;
    let mut sum = 0.0;
    let mut weight = 1.0;
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        if !seen_a.insert(x.as_str()) || !seen_b.insert(y.as_str()) {
            return Err(Error::InvalidArgument("duplicate entry in an rbo list".into()));
        }
        if x == y {
            overlap += 1;
        } else {
            overlap += seen_b.contains(x.as_str()) as usize + seen_a.contains(y.as_str()) as usize;
        }
        weight *= p;
        sum += overlap as f64 / (i + 1) as f64 * weight;
    }
    let d = a.len() as f64;
    Ok(overlap as f64 / d * weight + (1.0 - p) / p * sum)
}

/// Inverted RBO: one minus the mean RBO over unordered topic pairs.
pub fn irbo(topics: &[Vec<String>], p: f64) -> Result<f64> {
    if topics.len() < 2 {
        return Err(Error::InvalidArgument("I-RBO needs at least two topics".into()));
    }
    let mut acc = 0.0;
    let mut pairs = 0usize;
    for i in 0..topics.len() {
        for j in i + 1..topics.len() {
            acc += rbo(&topics[i], &topics[j], p)?;
            pairs += 1;
        }
    }
    Ok(1.0 - acc / pairs as f64)
}

fn unit_sets(sets: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<Vec<f64>>>> {
    sets.iter()
        .map(|s| s.iter().map(|v| unit(v)).collect())
        .collect()
}

/// Per-topic mean pairwise cosine of the topic's image embeddings.
pub fn iec_per_topic(topic_images: &[Vec<Vec<f64>>]) -> Result<Vec<f64>> {
    if topic_images.is_empty() {
        return Err(Error::InvalidArgument("no topics to score".into()));
    }
    if let Some(t) = topic_images.iter().position(|s| s.len() < 2) {
        return Err(Error::InvalidArgument(format!("topic {t} has fewer than two images")));
    }
    Ok(unit_sets(topic_images)?
        .iter()
        .map(|s| mean_pairwise_cosine(s))
        .collect())
}

/// Image-embedding coherence.
pub fn iec(topic_images: &[Vec<Vec<f64>>]) -> Result<f64> {
    let per = iec_per_topic(topic_images)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Image-embedding pairwise similarity between topics.
pub fn ieps(topic_images: &[Vec<Vec<f64>>]) -> Result<f64> {
    if topic_images.len() < 2 {
        return Err(Error::InvalidArgument("IEPS needs at least two topics".into()));
    }
    let n = topic_images[0].len();
    if n == 0 || topic_images.iter().any(|s| s.len() != n) {
        return Err(Error::InvalidArgument(
            "IEPS needs the same nonzero number of images per topic".into(),
        ));
    }
    let units = unit_sets(topic_images)?;
    let mut acc = 0.0;
    let mut pairs = 0usize;
    for i in 0..units.len() {
        for j in i + 1..units.len() {
            let mut s = 0.0;
            for v in &units[i] {
                for u in &units[j] {
                    s += dot(v, u);
                }
            }
            acc += s / (n * n) as f64;
            pairs += 1;
        }
    }
    Ok(acc / pairs as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricParams {
    pub window: usize,
    pub rbo_p: f64,
    pub n_descriptors: usize,
}

impl Default for MetricParams {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            rbo_p: DEFAULT_RBO_P,
            n_descriptors: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerTopicScores {
    pub npmi: Vec<f64>,
    pub we: Option<Vec<Option<f64>>>,
    pub iec: Option<Vec<f64>>,
}

/// All metrics for one model. Image metrics are only computed for the
/// multimodal kinds, WE only when word embeddings are supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model_id: String,
    pub npmi: f64,
    pub we: Option<f64>,
    pub td: f64,
    pub irbo: f64,
    pub iec: Option<f64>,
    pub ieps: Option<f64>,
    pub per_topic: PerTopicScores,
    pub params: MetricParams,
    /// Topics with no scorable NPMI pair.
    #[serde(default)]
    pub npmi_flagged: Vec<usize>,
    /// Keywords with no word embedding.
    #[serde(default)]
    pub missing_embeddings: Vec<String>,
}

/// Scores a trained model's descriptors on a corpus.
pub fn evaluate_model(
    model_id: &str,
    model: &TrainedTopicModel,
    corpus: &Corpus,
    word_embeddings: Option<&WordEmbeddings>,
    params: &MetricParams,
) -> Result<MetricReport> {
    let n = params.n_descriptors.min(model.vocabulary.len());
    let keywords = all_top_keywords(model.beta(), &model.vocabulary, n)?;
    let npmi_scores = npmi(&keywords, &corpus.reference_tokens(), params.window)?;
    let (we, we_topics, missing) = match word_embeddings {
        Some(e) => {
            let missing = missing_embeddings(&keywords, e);
            match we_coherence(&keywords, e) {
                Ok(s) => (Some(s.mean), Some(s.per_topic), missing),
                Err(Error::InvalidArgument(_)) => (None, None, missing),
                Err(e) => return Err(e),
            }
        }
        None => (None, None, Vec::new()),
    };
    let (iec_mean, iec_topics, ieps_score) = if model.kind().is_multimodal() {
        let doc_theta = infer_corpus(model, corpus)?;
        let n_img = params.n_descriptors.min(corpus.len());
        let sets = (0..model.num_topics())
            .map(|k| {
                Ok(top_images(&doc_theta, corpus, k, n_img)?
                    .into_iter()
                    .map(|d| d.embedding)
                    .collect())
            })
            .collect::<Result<Vec<Vec<Vec<f64>>>>>()?;
        let per = iec_per_topic(&sets)?;
        let mean = per.iter().sum::<f64>() / per.len() as f64;
        (Some(mean), Some(per), Some(ieps(&sets)?))
    } else {
        (None, None, None)
    };
    Ok(MetricReport {
        model_id: model_id.to_owned(),
        npmi: npmi_scores.mean,
        we,
        td: topic_diversity(&keywords, n)?,
        irbo: irbo(&keywords, params.rbo_p)?,
        iec: iec_mean,
        ieps: ieps_score,
        per_topic: PerTopicScores {
            npmi: npmi_scores.per_topic.iter().map(|v| v.unwrap_or(0.0)).collect(),
            we: we_topics,
            iec: iec_topics,
        },
        params: *params,
        npmi_flagged: npmi_scores.flagged,
        missing_embeddings: missing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn npmi_examples() {
        let reference = vec![s(&["a", "b"]), s(&["a", "b", "c"]), s(&["b", "a"])];
        // a and b appear together in every window
        let r = npmi(&[s(&["a", "b"])], &reference, 10).unwrap();
        assert!((r.mean - 1.0).abs() < 1e-12);
        let reference = vec![s(&["a", "x"]), s(&["b", "y"]), s(&["z"])];
        let r = npmi(&[s(&["a", "b"])], &reference, 10).unwrap();
        assert!(r.mean < -0.9 && r.mean >= -1.0 - 1e-9, "{}", r.mean);
        let r = npmi(&[s(&["a", "q"])], &reference, 10).unwrap();
        assert_eq!(r.flagged, vec![0]);
        assert_eq!(r.mean, 0.0);
        assert!(npmi(&[], &reference, 10).is_err());
        assert!(npmi(&[s(&["a", "b"])], &reference, 0).is_err());
    }

    #[test]
    fn npmi_windows_slide_within_documents() {
        // windows of 2 over [a b c]: {a,b}, {b,c}; over [] none; over [c]: {c}
        let reference = vec![s(&["a", "b", "c"]), vec![], s(&["c"])];
        let r = npmi(&[s(&["a", "c"])], &reference, 2).unwrap();
        let want = npmi_from_counts(1, 2, 0, 3);
        assert!((r.mean - want).abs() < 1e-15);
    }

    #[test]
    fn we_examples() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut e = WordEmbeddings::new();
        e.insert("a".into(), vec![1.0, 0.0]);
        e.insert("b".into(), vec![0.0, 1.0]);
        e.insert("c".into(), vec![h, h]);
        e.insert("d".into(), vec![2.0, 0.0]);
        let r = we_coherence(&[s(&["a", "b", "c"])], &e).unwrap();
        assert!((r.mean - 0.4714045207910317).abs() < 1e-12);
        assert_eq!(we_coherence(&[s(&["a", "b"])], &e).unwrap().mean, 0.0);
        assert!((we_coherence(&[s(&["a", "d"])], &e).unwrap().mean - 1.0).abs() < 1e-15);
        let r = we_coherence(&[s(&["a", "b"]), s(&["a", "zz"])], &e).unwrap();
        assert_eq!(r.flagged, vec![1]);
        assert_eq!(missing_embeddings(&[s(&["a", "zz", "zz"])], &e), ["zz"]);
        e.insert("z0".into(), vec![0.0, 0.0]);
        assert!(we_coherence(&[s(&["a", "z0"])], &e).is_err());
    }

    #[test]
    fn embeddings_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vec.txt");
        fs::write(&p, "2 3\ncat 1 0 0\ndog 0 1 0.5\n").unwrap();
        let e = load_word_embeddings(&p).unwrap();
        assert_eq!(e["dog"], vec![0.0, 1.0, 0.5]);
        fs::write(&p, "cat 1 0 0\ndog 0 1\n").unwrap();
        assert!(matches!(
            load_word_embeddings(&p),
            Err(Error::DimensionMismatch { line: 2, .. })
        ));
    }

    #[test]
    fn td_examples() {
        let a = s(&["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"]);
        let b = s(&["a", "b", "c", "d", "e", "k", "l", "m", "n", "o"]);
        assert_eq!(topic_diversity(&[a.clone(), b], 10).unwrap(), 0.75);
        assert_eq!(topic_diversity(&[a.clone(), a.clone(), a.clone()], 10).unwrap(), 1.0 / 3.0);
        assert!(topic_diversity(&[a], 11).is_err());
    }

    #[test]
    fn rbo_examples() {
        let a = s(&["a", "b", "c"]);
        assert!((rbo(&a, &a, 0.9).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(rbo(&a, &s(&["x", "y", "z"]), 0.9).unwrap(), 0.0);
        let b = s(&["a", "c", "b"]);
        // X = 1, 1, 3
        let p: f64 = 0.9;
        let want = 3.0 / 3.0 * p.powi(3) + (1.0 - p) / p * (p + 0.5 * p * p + p.powi(3));
        assert!((rbo(&a, &b, 0.9).unwrap() - want).abs() < 1e-12);
        assert!(rbo(&a, &s(&["a", "a", "b"]), 0.9).is_err());
        assert!(rbo(&a, &s(&["a"]), 0.9).is_err());
        assert!(rbo(&a, &a, 1.0).is_err());
    }

    #[test]
    fn irbo_examples() {
        let a = s(&["a", "b", "c"]);
        assert!(irbo(&[a.clone(), a.clone()], 0.9).unwrap().abs() < 1e-12);
        assert_eq!(irbo(&[a.clone(), s(&["x", "y", "z"])], 0.9).unwrap(), 1.0);
        let b = s(&["a", "c", "b"]);
        let r = rbo(&a, &b, 0.9).unwrap();
        let got = irbo(&[a.clone(), a.clone(), b], 0.9).unwrap();
        assert!((got - (1.0 - (1.0 + r + r) / 3.0)).abs() < 1e-12);
        assert!(irbo(&[a], 0.9).is_err());
    }

    #[test]
    fn image_metric_examples() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let same = vec![vec![vec![0.6, 0.8]; 3]; 2];
        assert!((iec(&same).unwrap() - 1.0).abs() < 1e-12);
        assert!((ieps(&same).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(iec(&[vec![vec![1.0, 0.0], vec![0.0, 1.0]]]).unwrap(), 0.0);
        let three = vec![vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![h, h]]];
        assert!((iec(&three).unwrap() - 0.4714045207910317).abs() < 1e-12);
        let orth = vec![vec![vec![1.0, 0.0, 0.0]], vec![vec![0.0, 1.0, 0.0]]];
        assert_eq!(ieps(&orth).unwrap(), 0.0);
        assert!(iec(&[vec![vec![1.0]]]).is_err());
        assert!(iec(&[vec![vec![1.0], vec![0.0]]]).is_err());
        assert!(ieps(&[vec![vec![1.0]], vec![vec![1.0], vec![2.0]]]).is_err());
        assert!(ieps(&[vec![vec![1.0]]]).is_err());
    }
}
