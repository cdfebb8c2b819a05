//! Topic overlap between two models: RBO similarity of keyword lists, then
//! an optimal one-to-one topic alignment.

use serde::{Deserialize, Serialize};

use crate::descriptors::all_top_keywords;
use crate::error::{Error, Result};
use crate::metrics::rbo;
use crate::models::TrainedTopicModel;
use crate::nncore::DenseMatrix;

/// Row `i` is matched to column `columns[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub columns: Vec<usize>,
    /// Sum of the matched entries of the input matrix.
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub model_a: String,
    pub model_b: String,
    /// Row-major K × K, entry (i, j) = RBO of topic i of A and topic j of B.
    pub similarity: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub assigned: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of `assigned`.
    pub sd: f64,
}

pub fn topic_similarity_matrix(
    topics_a: &[Vec<String>],
    topics_b: &[Vec<String>],
    p: f64,
) -> Result<DenseMatrix> {
    if topics_a.len() != topics_b.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot align {} topics with {}",
            topics_a.len(),
            topics_b.len()
        )));
    }
    let k = topics_a.len();
    let mut m = DenseMatrix::zeros(k, k);
    for (i, a) in topics_a.iter().enumerate() {
        for (j, b) in topics_b.iter().enumerate() {
            m.row_mut(i)[j] = rbo(a, b, p)?;
        }
    }
    Ok(m)
}

/// Optimal assignment of a square matrix (shortest augmenting paths with
/// row/column potentials, O(n³)). Maximisation runs on negated costs.
pub fn hungarian(matrix: &DenseMatrix, maximize: bool) -> Result<Assignment> {
    let n = matrix.rows();
    if matrix.cols() != n {
        return Err(Error::InvalidArgument(format!(
            "assignment needs a square matrix, got {}x{}",
            n,
            matrix.cols()
        )));
    }
    if matrix.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("assignment matrix has non-finite entries".into()));
    }
    let cost = |i: usize, j: usize| {
        let v = matrix.get(i, j);
        if maximize {
            -v
        } else {
            v
        }
    };
    // 1-based arrays; index 0 is the virtual unmatched row/column
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut columns = vec![0usize; n];
    for j in 1..=n {
        if row_of[j] > 0 {
            columns[row_of[j] - 1] = j - 1;
        }
    }
    let total = columns
        .iter()
        .enumerate()
        .map(|(i, &j)| matrix.get(i, j))
        .sum();
    Ok(Assignment { columns, total })
}

/// Mean and population standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Overlap between two keyword-list topic sets.
pub fn overlap_from_keywords(
    id_a: &str,
    topics_a: &[Vec<String>],
    id_b: &str,
    topics_b: &[Vec<String>],
    p: f64,
) -> Result<OverlapReport> {
    let sim = topic_similarity_matrix(topics_a, topics_b, p)?;
    let assignment = hungarian(&sim, true)?;
    let assigned: Vec<f64> = assignment
        .columns
        .iter()
        .enumerate()
        .map(|(i, &j)| sim.get(i, j))
        .collect();
    let (mean, sd) = mean_sd(&assigned);
    Ok(OverlapReport {
        model_a: id_a.to_owned(),
        model_b: id_b.to_owned(),
        similarity: (0..sim.rows()).map(|r| sim.row(r).to_vec()).collect(),
        assignment: assignment.columns,
        assigned,
        mean,
        sd,
    })
}

pub fn model_id(model: &TrainedTopicModel) -> String {
    format!(
        "{}-k{}-seed{}",
        model.kind(),
        model.num_topics(),
        model.config.seed
    )
}

/// Top-`n` keywords of both models, RBO similarity, maximum-weight alignment.
pub fn overlap_report(
    model_a: &TrainedTopicModel,
    model_b: &TrainedTopicModel,
    n: usize,
    p: f64,
) -> Result<OverlapReport> {
    if model_a.num_topics() != model_b.num_topics() {
        return Err(Error::InvalidArgument(format!(
            "models have {} and {} topics",
            model_a.num_topics(),
            model_b.num_topics()
        )));
    }
    let n = n.min(model_a.vocabulary.len()).min(model_b.vocabulary.len());
    let a = all_top_keywords(model_a.beta(), &model_a.vocabulary, n)?;
    let b = all_top_keywords(model_b.beta(), &model_b.vocabulary, n)?;
    overlap_from_keywords(&model_id(model_a), &a, &model_id(model_b), &b, p)
}
