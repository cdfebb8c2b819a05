//! Small dense-network substrate with hand-written gradients.
//!
//! Everything runs in `f64`. The only network shape needed is the inference
//! network: one hidden linear layer with softplus, dropout on the hidden
//! activation, then two linear heads for the posterior mean and log-variance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_HIDDEN_WIDTH: usize = 100;
pub const DEFAULT_DROPOUT: f64 = 0.2;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                values.len()
            )));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite matrix entry".into()));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    /// Glorot-uniform initialisation, bound `sqrt(6 / (rows + cols))`.
    pub fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let values = (0..rows * cols)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self { rows, cols, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    /// `self * x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `selfᵀ * y`.
    pub fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.row(r)) {
                *o += yr * w;
            }
        }
        out
    }

    /// `self += scale * a bᵀ`.
    pub fn add_outer(&mut self, a: &[f64], b: &[f64], scale: f64) {
        for (r, &ar) in a.iter().enumerate() {
            let s = scale * ar;
            if s == 0.0 {
                continue;
            }
            for (w, bc) in self.row_mut(r).iter_mut().zip(b) {
                *w += s * bc;
            }
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.values.iter_mut().for_each(|x| *x = v);
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logsumexp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let lse = logsumexp(x);
    x.iter().map(|v| v - lse).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Softplus,
    Softmax,
}

pub fn activation(kind: Activation, x: &[f64]) -> Vec<f64> {
    match kind {
        Activation::Softplus => x.iter().map(|&v| softplus(v)).collect(),
        Activation::Softmax => softmax(x),
    }
}

/// Fully connected layer `y = W x + b` with `W` of shape `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn new(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: DenseMatrix::glorot(output, input, rng),
            bias: vec![0.0; output],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: DenseMatrix::zeros(self.weight.rows(), self.weight.cols()),
            bias: vec![0.0; self.bias.len()],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.weight.matvec(x);
        y.iter_mut().zip(&self.bias).for_each(|(y, b)| *y += b);
        y
    }

    /// Accumulates parameter gradients into `grad` for upstream gradient `dy`
    /// at input `x`.
    fn accumulate(&self, x: &[f64], dy: &[f64], grad: &mut Linear) {
        grad.weight.add_outer(dy, x, 1.0);
        grad.bias.iter_mut().zip(dy).for_each(|(g, d)| *g += d);
    }
}

/// Encoder from an input embedding to a diagonal Gaussian posterior over
/// topic logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceNetwork {
    pub input_dim: usize,
    pub hidden: Linear,
    pub mu_head: Linear,
    pub logvar_head: Linear,
    pub dropout_rate: f64,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct EncoderPass {
    pub pre_activation: Vec<f64>,
    /// Hidden activation after softplus and dropout.
    pub hidden: Vec<f64>,
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
    keep_scale: Vec<f64>,
}

impl InferenceNetwork {
    pub fn new(
        input_dim: usize,
        hidden_width: usize,
        num_topics: usize,
        dropout_rate: f64,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            input_dim,
            hidden: Linear::new(input_dim, hidden_width, rng),
            mu_head: Linear::new(hidden_width, num_topics, rng),
            logvar_head: Linear::new(hidden_width, num_topics, rng),
            dropout_rate,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            input_dim: self.input_dim,
            hidden: self.hidden.zeros_like(),
            mu_head: self.mu_head.zeros_like(),
            logvar_head: self.logvar_head.zeros_like(),
            dropout_rate: self.dropout_rate,
        }
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden.bias.len()
    }

    pub fn num_topics(&self) -> usize {
        self.mu_head.bias.len()
    }

    /// `keep` is the dropout mask over hidden units (`None` disables dropout).
    /// Kept units are scaled by `1 / (1 - rate)` so inference needs no rescale.
    pub fn forward(&self, x: &[f64], keep: Option<&[bool]>) -> EncoderPass {
        let pre_activation = self.hidden.forward(x);
        let keep_scale: Vec<f64> = match keep {
            Some(mask) => {
                let s = 1.0 / (1.0 - self.dropout_rate);
                mask.iter().map(|&k| if k { s } else { 0.0 }).collect()
            }
            None => vec![1.0; pre_activation.len()],
        };
        let hidden: Vec<f64> = pre_activation
            .iter()
            .zip(&keep_scale)
            .map(|(&a, &s)| softplus(a) * s)
            .collect();
        let mu = self.mu_head.forward(&hidden);
        let logvar = self.logvar_head.forward(&hidden);
        EncoderPass {
            pre_activation,
            hidden,
            mu,
            logvar,
            keep_scale,
        }
    }

    /// Posterior mean and log-variance with dropout disabled.
    pub fn posterior(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let p = self.forward(x, None);
        (p.mu, p.logvar)
    }

    pub fn backward(
        &self,
        x: &[f64],
        pass: &EncoderPass,
        dmu: &[f64],
        dlogvar: &[f64],
        grad: &mut InferenceNetwork,
    ) {
        self.mu_head.accumulate(&pass.hidden, dmu, &mut grad.mu_head);
        self.logvar_head
            .accumulate(&pass.hidden, dlogvar, &mut grad.logvar_head);
        let mut dh = self.mu_head.weight.matvec_t(dmu);
        let dh2 = self.logvar_head.weight.matvec_t(dlogvar);
        for (((d, d2), &a), &s) in dh
            .iter_mut()
            .zip(dh2)
            .zip(&pass.pre_activation)
            .zip(&pass.keep_scale)
        {
            *d = (*d + d2) * s * sigmoid(a);
        }
        self.hidden.accumulate(x, &dh, &mut grad.hidden);
    }

    pub fn sample_dropout_mask(&self, rng: &mut impl Rng) -> Vec<bool> {
        (0..self.hidden_width())
            .map(|_| rng.random::<f64>() >= self.dropout_rate)
            .collect()
    }
}

/// Latent sample `z = mu + exp(logvar / 2) * eps`.
pub fn reparameterize_logits(mu: &[f64], logvar: &[f64], eps: &[f64]) -> Vec<f64> {
    mu.iter()
        .zip(logvar)
        .zip(eps)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect()
}

/// Topic proportions `softmax(mu + exp(logvar / 2) * eps)`.
pub fn reparameterize(mu: &[f64], logvar: &[f64], eps: &[f64]) -> Vec<f64> {
    softmax(&reparameterize_logits(mu, logvar, eps))
}

/// Diagonal Gaussian prior over topic logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrior {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl GaussianPrior {
    pub fn new(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        if mean.len() != variance.len() {
            return Err(Error::Shape("prior mean/variance lengths differ".into()));
        }
        if variance.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "prior variance must be strictly positive".into(),
            ));
        }
        Ok(Self { mean, variance })
    }

    pub fn standard(k: usize) -> Self {
        Self {
            mean: vec![0.0; k],
            variance: vec![1.0; k],
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Logistic-normal Laplace approximation of a symmetric Dirichlet(`alpha`)
/// over `k` topics: zero mean and variance `(1/alpha)(1 - 1/k)` per dimension.
pub fn dirichlet_laplace_prior(k: usize, alpha: f64) -> Result<GaussianPrior> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("prior needs K >= 2, got {k}")));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "Dirichlet alpha must be positive, got {alpha}"
        )));
    }
    let kf = k as f64;
    // mean_k = log a_k - avg(log a) vanishes for a symmetric Dirichlet
    let variance = (1.0 / alpha) * (1.0 - 2.0 / kf) + (1.0 / (kf * kf)) * kf * (1.0 / alpha);
    GaussianPrior::new(vec![0.0; k], vec![variance; k])
}

/// KL(N(mu, diag(exp(logvar))) || prior).
pub fn kl_diag_gaussian(mu: &[f64], logvar: &[f64], prior: &GaussianPrior) -> Result<f64> {
    if mu.len() != logvar.len() || mu.len() != prior.len() {
        return Err(Error::Shape(format!(
            "KL over {} / {} dims against a {}-dim prior",
            mu.len(),
            logvar.len(),
            prior.len()
        )));
    }
    if prior.variance.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument(
            "prior variance must be strictly positive".into(),
        ));
    }
    Ok(kl_unchecked(mu, logvar, prior))
}

pub(crate) fn kl_unchecked(mu: &[f64], logvar: &[f64], prior: &GaussianPrior) -> f64 {
    let mut kl = 0.0;
    for i in 0..mu.len() {
        let pv = prior.variance[i];
        let diff = mu[i] - prior.mean[i];
        kl += logvar[i].exp() / pv + diff * diff / pv - 1.0 - logvar[i] + pv.ln();
    }
    0.5 * kl
}

/// Gradient of [`kl_diag_gaussian`] with respect to `mu` and `logvar`,
/// added (times `scale`) into `dmu` and `dlogvar`.
pub(crate) fn kl_grad(
    mu: &[f64],
    logvar: &[f64],
    prior: &GaussianPrior,
    scale: f64,
    dmu: &mut [f64],
    dlogvar: &mut [f64],
) {
    for i in 0..mu.len() {
        let pv = prior.variance[i];
        dmu[i] += scale * (mu[i] - prior.mean[i]) / pv;
        dlogvar[i] += scale * 0.5 * (logvar[i].exp() / pv - 1.0);
    }
}

/// A set of named flat parameter blocks (weights, biases, ...).
///
/// Gradients are represented by a value of the same type, so blocks line up
/// positionally between parameters, gradients and optimizer moments.
pub trait ParameterSet {
    fn blocks(&self) -> Vec<(String, &[f64])>;
    fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])>;
}

impl ParameterSet for InferenceNetwork {
    fn blocks(&self) -> Vec<(String, &[f64])> {
        vec![
            ("hidden.weight".into(), self.hidden.weight.values()),
            ("hidden.bias".into(), &self.hidden.bias[..]),
            ("mu.weight".into(), self.mu_head.weight.values()),
            ("mu.bias".into(), &self.mu_head.bias[..]),
            ("logvar.weight".into(), self.logvar_head.weight.values()),
            ("logvar.bias".into(), &self.logvar_head.bias[..]),
        ]
    }

    fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        vec![
            ("hidden.weight".into(), self.hidden.weight.values_mut()),
            ("hidden.bias".into(), &mut self.hidden.bias[..]),
            ("mu.weight".into(), self.mu_head.weight.values_mut()),
            ("mu.bias".into(), &mut self.mu_head.bias[..]),
            ("logvar.weight".into(), self.logvar_head.weight.values_mut()),
            ("logvar.bias".into(), &mut self.logvar_head.bias[..]),
        ]
    }
}

impl ParameterSet for Vec<f64> {
    fn blocks(&self) -> Vec<(String, &[f64])> {
        vec![("values".into(), &self[..])]
    }

    fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        vec![("values".into(), &mut self[..])]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-3,
            beta1: 0.99,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &impl ParameterSet, config: AdamConfig) -> Self {
        let shapes: Vec<usize> = params.blocks().iter().map(|(_, b)| b.len()).collect();
        Self {
            config,
            step: 0,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One bias-corrected Adam update of `params` along `grads`.
pub fn adam_step<P: ParameterSet>(params: &mut P, grads: &P, state: &mut AdamState) -> Result<()> {
    let grad_blocks = grads.blocks();
    let mut param_blocks = params.blocks_mut();
    if grad_blocks.len() != param_blocks.len() || param_blocks.len() != state.first.len() {
        return Err(Error::Shape(format!(
            "adam: {} parameter blocks, {} gradient blocks, {} moment blocks",
            param_blocks.len(),
            grad_blocks.len(),
            state.first.len()
        )));
    }
    for (i, ((name, p), (_, g))) in param_blocks.iter().zip(&grad_blocks).enumerate() {
        if p.len() != g.len() || p.len() != state.first[i].len() {
            return Err(Error::Shape(format!(
                "adam: block `{name}` has {} params, {} grads, {} moments",
                p.len(),
                g.len(),
                state.first[i].len()
            )));
        }
    }
    state.step += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for (i, ((_, p), (_, g))) in param_blocks.iter_mut().zip(&grad_blocks).enumerate() {
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        for j in 0..p.len() {
            let gj = g[j];
            m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
            v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Pass threshold on the maximum relative error.
    pub tolerance: f64,
    /// Number of random points at which to compare.
    pub points: usize,
    /// Half-width of the uniform jitter applied to every parameter at each
    /// point (the first point is the unperturbed input).
    pub perturbation: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            points: 1,
            perturbation: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    /// Maximum relative error per parameter block, over all points.
    pub blocks: Vec<(String, f64)>,
    pub max_relative_error: f64,
    pub passed: bool,
}

/// Compares analytic gradients against central finite differences.
///
/// `loss` evaluates the objective alone (used for the differences) and
/// `loss_and_grad` adds its analytic gradient. The relative error
/// of one entry is `|a - n| / max(|a|, |n|, 1e-6 * max(1, |loss|))`: entries
/// whose gradient is tiny relative to the loss are compared on the loss's
/// scale, where finite-difference roundoff lives.
pub fn gradcheck<P, L, G>(params: &P, loss: L, loss_and_grad: G, config: &GradcheckConfig) -> GradcheckReport
where
    P: ParameterSet + Clone,
    L: Fn(&P) -> f64,
    G: Fn(&P) -> (f64, P),
{
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut names: Vec<String> = params.blocks().into_iter().map(|(n, _)| n).collect();
    dedup_names(&mut names);
    let mut worst = vec![0.0f64; names.len()];

    for point in 0..config.points.max(1) {
        let mut at = params.clone();
        if point > 0 {
            for (_, b) in at.blocks_mut() {
                for x in b.iter_mut() {
                    *x += config.perturbation * rng.random_range(-1.0..1.0);
                }
            }
        }
        let (value, analytic) = loss_and_grad(&at);
        let floor = 1e-6 * value.abs().max(1.0);
        let analytic_blocks: Vec<Vec<f64>> =
            analytic.blocks().into_iter().map(|(_, b)| b.to_vec()).collect();
        let sizes: Vec<usize> = analytic_blocks.iter().map(Vec::len).collect();
        let base: Vec<Vec<f64>> = at.blocks().into_iter().map(|(_, b)| b.to_vec()).collect();
        for (bi, &size) in sizes.iter().enumerate() {
            for j in 0..size {
                let original = base[bi][j];
                at.blocks_mut()[bi].1[j] = original + config.step;
                let plus = loss(&at);
                at.blocks_mut()[bi].1[j] = original - config.step;
                let minus = loss(&at);
                at.blocks_mut()[bi].1[j] = original;
                let numeric = (plus - minus) / (2.0 * config.step);
                let a = analytic_blocks[bi][j];
                let denom = a.abs().max(numeric.abs()).max(floor);
                let rel = (a - numeric).abs() / denom;
                let rel = if rel.is_nan() { f64::INFINITY } else { rel };
                worst[bi] = worst[bi].max(rel);
            }
        }
    }
    let max_relative_error = worst.iter().copied().fold(0.0, f64::max);
    GradcheckReport {
        blocks: names.into_iter().zip(worst).collect(),
        max_relative_error,
        passed: max_relative_error < config.tolerance,
    }
}

fn dedup_names(names: &mut [String]) {
    for i in 0..names.len() {
        let dup = names[..i].iter().filter(|n| **n == names[i]).count();
        if dup > 0 {
            names[i] = format!("{}#{dup}", names[i]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn activation_examples() {
        assert!((activation(Activation::Softplus, &[0.0])[0] - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
        let s = activation(Activation::Softmax, &[0.0, 0.0, 0.0]);
        for p in s {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax(&[1000.0, 0.0]);
        assert!((s[0] - 1.0).abs() < 1e-15 && s[1] >= 0.0 && s[1] < 1e-300);
    }

    #[test]
    fn reparameterize_examples() {
        // variance -> 0: logvar very negative
        let t = reparameterize(&[0.0, 0.0], &[-800.0, -800.0], &[3.0, -2.0]);
        assert!((t[0] - 0.5).abs() < 1e-15 && (t[1] - 0.5).abs() < 1e-15);
        let mu = [0.3, -1.2, 2.0];
        assert_eq!(reparameterize(&mu, &[0.4, 0.1, -0.3], &[0.0; 3]), softmax(&mu));
        let t = reparameterize(&[2.0, 0.0, 0.0], &[0.0; 3], &[0.0; 3]);
        let e2 = 2f64.exp();
        let expected = [e2 / (e2 + 2.0), 1.0 / (e2 + 2.0), 1.0 / (e2 + 2.0)];
        for (a, b) in t.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((t[0] - 0.7870).abs() < 1e-4 && (t[1] - 0.1065).abs() < 1e-4);
    }

    #[test]
    fn kl_examples() {
        let prior = GaussianPrior::new(vec![0.3, -0.2], vec![0.5, 2.0]).unwrap();
        let lv: Vec<f64> = prior.variance.iter().map(|v| v.ln()).collect();
        assert!(kl_diag_gaussian(&prior.mean, &lv, &prior).unwrap().abs() < 1e-15);
        let std = GaussianPrior::standard(4);
        assert_eq!(kl_diag_gaussian(&[0.0; 4], &[0.0; 4], &std).unwrap(), 0.0);
        let kl = kl_diag_gaussian(&[1.0], &[0.0], &GaussianPrior::standard(1)).unwrap();
        assert!((kl - 0.5).abs() < 1e-15);
        let bad = GaussianPrior {
            mean: vec![0.0],
            variance: vec![0.0],
        };
        assert!(kl_diag_gaussian(&[0.0], &[0.0], &bad).is_err());
        assert!(kl_diag_gaussian(&[0.0, 1.0], &[0.0], &std).is_err());
    }

    #[test]
    fn kl_matches_monte_carlo() {
        // E_q[log q(z) - log p(z)] for q = N(1, 1), p = N(0, 1)
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 400_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let e: f64 = rand::Rng::sample(&mut rng, rand_distr::StandardNormal);
            let z = 1.0 + e;
            acc += -0.5 * e * e + 0.5 * z * z;
        }
        let mc = acc / n as f64;
        assert!((mc - 0.5).abs() < 0.01, "monte carlo {mc}");
    }

    #[test]
    fn dirichlet_prior_examples() {
        let p = dirichlet_laplace_prior(2, 1.0).unwrap();
        assert_eq!(p.mean, vec![0.0, 0.0]);
        assert!((p.variance[0] - 0.5).abs() < 1e-15);
        let p = dirichlet_laplace_prior(100_000, 1.0).unwrap();
        assert!((p.variance[0] - 1.0).abs() < 1e-4);
        let p = dirichlet_laplace_prior(25, 1.0 / 25.0).unwrap();
        assert!((p.variance[7] - 24.0).abs() < 1e-12);
        assert!(dirichlet_laplace_prior(1, 1.0).is_err());
        assert!(dirichlet_laplace_prior(5, 0.0).is_err());
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = vec![1.0, -2.0];
        let mut st = AdamState::new(&p, AdamConfig::default());
        adam_step(&mut p, &vec![0.0, 0.0], &mut st).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let cfg = AdamConfig::default();
        let mut p = vec![0.0, 0.0, 0.0];
        let mut st = AdamState::new(&p, cfg);
        adam_step(&mut p, &vec![3.0, -0.01, 250.0], &mut st).unwrap();
        assert!((p[0] + cfg.learning_rate).abs() < 1e-9);
        assert!((p[1] - cfg.learning_rate).abs() < 1e-8);
        assert!((p[2] + cfg.learning_rate).abs() < 1e-9);
    }

    #[test]
    fn adam_minimises_a_quadratic() {
        let cfg = AdamConfig {
            learning_rate: 0.05,
            ..AdamConfig::default()
        };
        // scalar recurrence oracle
        let (mut p_ref, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=100 {
            let g = 2.0 * p_ref;
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let mh = m / (1.0 - cfg.beta1.powi(t));
            let vh = v / (1.0 - cfg.beta2.powi(t));
            p_ref -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon);
        }
        assert!(p_ref.abs() < 0.5);

        let mut p = vec![1.0];
        let mut st = AdamState::new(&p, cfg);
        for _ in 0..100 {
            let g = vec![2.0 * p[0]];
            adam_step(&mut p, &g, &mut st).unwrap();
        }
        assert!((p[0] - p_ref).abs() < 1e-12);
        assert!(p[0].abs() < 0.5);
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut p = vec![1.0, 2.0];
        let mut st = AdamState::new(&p, AdamConfig::default());
        assert!(adam_step(&mut p, &vec![1.0], &mut st).is_err());
    }

    #[test]
    fn gradcheck_quadratic() {
        let params = vec![0.3, -1.2, 2.5, 0.0];
        let f = |p: &Vec<f64>| {
            let loss = p.iter().enumerate().map(|(i, x)| (i as f64 + 1.0) * x * x).sum();
            let g: Vec<f64> = p.iter().enumerate().map(|(i, x)| 2.0 * (i as f64 + 1.0) * x).collect();
            (loss, g)
        };
        let report = gradcheck(
            &params,
            |p: &Vec<f64>| f(p).0,
            f,
            &GradcheckConfig {
                points: 5,
                tolerance: 1e-7,
                ..GradcheckConfig::default()
            },
        );
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn gradcheck_flags_wrong_gradient() {
        let report = gradcheck(
            &vec![1.0, 2.0],
            |p: &Vec<f64>| p[0] * p[0] + p[1],
            |p: &Vec<f64>| (p[0] * p[0] + p[1], vec![p[0], 1.0]),
            &GradcheckConfig::default(),
        );
        assert!(!report.passed);
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = InferenceNetwork::new(6, 7, 3, 0.2, &mut rng);
        let x: Vec<f64> = (0..6).map(|i| (i as f64 * 0.37).sin()).collect();
        let mask = net.sample_dropout_mask(&mut rng);
        let (wm, wl) = ([0.5, -1.0, 2.0], [0.1, 0.7, -0.4]);
        let f = |n: &InferenceNetwork| {
                let pass = n.forward(&x, Some(&mask));
                let loss = dot(&pass.mu, &wm) + dot(&pass.logvar.iter().map(|v| v * v).collect::<Vec<_>>(), &wl);
                let dlv: Vec<f64> = pass.logvar.iter().zip(wl).map(|(v, w)| 2.0 * v * w).collect();
                let mut g = n.zeros_like();
                n.backward(&x, &pass, &wm, &dlv, &mut g);
                (loss, g)
            };
        let report = gradcheck(
            &net,
            |n: &InferenceNetwork| f(n).0,
            f,
            &GradcheckConfig {
                points: 3,
                ..GradcheckConfig::default()
            },
        );
        assert!(report.passed, "{report:?}");
    }

    proptest! {
        #[test]
        fn reparameterized_theta_is_a_probability_vector(
            v in proptest::collection::vec((-5.0f64..5.0, -4.0f64..2.0, -3.0f64..3.0), 2..12)
        ) {
            let mu: Vec<f64> = v.iter().map(|t| t.0).collect();
            let lv: Vec<f64> = v.iter().map(|t| t.1).collect();
            let eps: Vec<f64> = v.iter().map(|t| t.2).collect();
            let theta = reparameterize(&mu, &lv, &eps);
            prop_assert!(theta.iter().all(|&p| p > 0.0 && p < 1.0));
            prop_assert!((theta.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn kl_is_nonnegative(
            v in proptest::collection::vec((-5.0f64..5.0, -6.0f64..4.0, -2.0f64..2.0, 0.05f64..30.0), 1..10)
        ) {
            let mu: Vec<f64> = v.iter().map(|t| t.0).collect();
            let lv: Vec<f64> = v.iter().map(|t| t.1).collect();
            let prior = GaussianPrior::new(
                v.iter().map(|t| t.2).collect(),
                v.iter().map(|t| t.3).collect(),
            ).unwrap();
            prop_assert!(kl_diag_gaussian(&mu, &lv, &prior).unwrap() >= -1e-12);
        }

        #[test]
        fn softmax_is_shift_invariant(
            x in proptest::collection::vec(-50.0f64..50.0, 1..10),
            c in -100.0f64..100.0
        ) {
            let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
            for (a, b) in softmax(&x).iter().zip(softmax(&shifted)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
