//! Topic models, their objectives and the training loop.
//!
//! All four kinds share the same decoder for words: topic proportions `θ`
//! mix the rows of the topic-word matrix `β` (K × V) into logits `βᵀθ`, and
//! the bag of words is scored under `softmax(βᵀθ)`. They differ in what the
//! inference network sees and in the third loss term:
//!
//! | kind                  | encoder input(s)                       | extra term                              |
//! |-----------------------|----------------------------------------|-----------------------------------------|
//! | `zeroshot`            | text embedding                         | none                                    |
//! | `combined`            | text embedding ⊕ L1-normalised BoW     | none                                    |
//! | `multimodal_zeroshot` | text embedding ⊕ image embedding       | `λ (1 - cos(x_img, γᵀθ))`               |
//! | `multimodal_contrast` | text and image, one encoder each       | second KL + `ω` · InfoNCE over the batch |
//!
//! Objectives are minimised: `-wᵀ log softmax(βᵀθ) + KL + third term`.

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{BagOfWords, Corpus, MultimodalDocument, Vocabulary};
use crate::error::{Error, Result};
use crate::nncore::{
    adam_step, dirichlet_laplace_prior, dot, kl_grad, kl_unchecked, logsumexp, norm,
    reparameterize_logits, softmax, AdamConfig, AdamState, DenseMatrix, EncoderPass,
    GaussianPrior, InferenceNetwork, ParameterSet, DEFAULT_DROPOUT, DEFAULT_HIDDEN_WIDTH,
};

/// Added to the norm product in the training-time cosine.
pub const COSINE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "zeroshot")]
    ZeroShot,
    #[serde(rename = "combined")]
    Combined,
    #[serde(rename = "multimodal_zeroshot")]
    MultimodalZeroShot,
    #[serde(rename = "multimodal_contrast")]
    MultimodalContrast,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::ZeroShot,
        ModelKind::Combined,
        ModelKind::MultimodalZeroShot,
        ModelKind::MultimodalContrast,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::ZeroShot => "zeroshot",
            ModelKind::Combined => "combined",
            ModelKind::MultimodalZeroShot => "multimodal_zeroshot",
            ModelKind::MultimodalContrast => "multimodal_contrast",
        }
    }

    pub fn is_multimodal(self) -> bool {
        matches!(
            self,
            ModelKind::MultimodalZeroShot | ModelKind::MultimodalContrast
        )
    }

    pub fn encoder_count(self) -> usize {
        match self {
            ModelKind::MultimodalContrast => 2,
            _ => 1,
        }
    }

    pub fn default_batch_size(self) -> usize {
        match self {
            ModelKind::MultimodalContrast => 32,
            _ => 64,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model kind `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub num_topics: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the image-reconstruction term.
    pub lambda: f64,
    /// Weight of the contrastive term.
    pub omega: f64,
    /// InfoNCE temperature.
    pub tau: f64,
    pub seed: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub dropout_rate: f64,
    /// Symmetric Dirichlet concentration behind the prior; `None` means `1/K`.
    pub prior_alpha: Option<f64>,
    pub hidden_width: usize,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, num_topics: usize) -> Self {
        let adam = AdamConfig::default();
        Self {
            kind,
            num_topics,
            epochs: 100,
            batch_size: kind.default_batch_size(),
            lambda: 1.0,
            omega: 100.0,
            tau: 0.07,
            seed: 0,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            dropout_rate: DEFAULT_DROPOUT,
            prior_alpha: None,
            hidden_width: DEFAULT_HIDDEN_WIDTH,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.num_topics < 2 {
            return fail(format!("num_topics must be >= 2, got {}", self.num_topics));
        }
        if self.batch_size == 0 || self.hidden_width == 0 {
            return fail("batch_size and hidden_width must be >= 1".into());
        }
        if !(self.tau > 0.0) {
            return fail(format!("tau must be > 0, got {}", self.tau));
        }
        if !(self.lambda >= 0.0) || !(self.omega >= 0.0) {
            return fail("lambda and omega must be >= 0".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate must be in [0, 1), got {}", self.dropout_rate));
        }
        if !(self.learning_rate > 0.0) {
            return fail("learning_rate must be > 0".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("Adam betas must be in [0, 1)".into());
        }
        if let Some(a) = self.prior_alpha {
            if !(a > 0.0) {
                return fail(format!("prior_alpha must be > 0, got {a}"));
            }
        }
        Ok(())
    }

    pub fn prior(&self) -> Result<GaussianPrior> {
        let alpha = self
            .prior_alpha
            .unwrap_or(1.0 / self.num_topics as f64);
        dirichlet_laplace_prior(self.num_topics, alpha)
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }
}

/// Fixed (non-learned) pieces of an objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub kind: ModelKind,
    pub prior: GaussianPrior,
    pub lambda: f64,
    pub omega: f64,
    pub tau: f64,
}

impl Objective {
    pub fn from_config(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            kind: config.kind,
            prior: config.prior()?,
            lambda: config.lambda,
            omega: config.omega,
            tau: config.tau,
        })
    }
}

/// Learned parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicParams {
    /// One encoder, or `[text, image]` for the contrastive model.
    pub encoders: Vec<InferenceNetwork>,
    /// Topic-word matrix, K × V.
    pub beta: DenseMatrix,
    /// Topic-image-feature matrix, K × D_i (multimodal zero-shot only).
    pub gamma: Option<DenseMatrix>,
}

impl TopicParams {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        kind: ModelKind,
        num_topics: usize,
        vocab_size: usize,
        text_dim: usize,
        image_dim: usize,
        hidden_width: usize,
        dropout_rate: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let inputs: Vec<usize> = match kind {
            ModelKind::ZeroShot => vec![text_dim],
            ModelKind::Combined => vec![text_dim + vocab_size],
            ModelKind::MultimodalZeroShot => vec![text_dim + image_dim],
            ModelKind::MultimodalContrast => vec![text_dim, image_dim],
        };
        let encoders = inputs
            .into_iter()
            .map(|d| InferenceNetwork::new(d, hidden_width, num_topics, dropout_rate, rng))
            .collect();
        let beta = DenseMatrix::glorot(num_topics, vocab_size, rng);
        let gamma = (kind == ModelKind::MultimodalZeroShot)
            .then(|| DenseMatrix::glorot(num_topics, image_dim, rng));
        Self {
            encoders,
            beta,
            gamma,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            encoders: self.encoders.iter().map(InferenceNetwork::zeros_like).collect(),
            beta: DenseMatrix::zeros(self.beta.rows(), self.beta.cols()),
            gamma: self
                .gamma
                .as_ref()
                .map(|g| DenseMatrix::zeros(g.rows(), g.cols())),
        }
    }

    pub fn num_topics(&self) -> usize {
        self.beta.rows()
    }
}

impl ParameterSet for TopicParams {
    fn blocks(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (i, e) in self.encoders.iter().enumerate() {
            for (n, b) in e.blocks() {
                out.push((format!("encoder{i}.{n}"), b));
            }
        }
        out.push(("beta".into(), self.beta.values()));
        if let Some(g) = &self.gamma {
            out.push(("gamma".into(), g.values()));
        }
        out
    }

    fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for (i, e) in self.encoders.iter_mut().enumerate() {
            for (n, b) in e.blocks_mut() {
                out.push((format!("encoder{i}.{n}"), b));
            }
        }
        out.push(("beta".into(), self.beta.values_mut()));
        if let Some(g) = &mut self.gamma {
            out.push(("gamma".into(), g.values_mut()));
        }
        out
    }
}

/// Noise for one encoder pass: the standard-normal draw and the dropout mask.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderNoise {
    pub eps: Vec<f64>,
    pub keep: Option<Vec<bool>>,
}

impl EncoderNoise {
    /// Posterior mean, no dropout.
    pub fn deterministic(k: usize) -> Self {
        Self {
            eps: vec![0.0; k],
            keep: None,
        }
    }

    pub fn sample(k: usize, rng: &mut impl Rng) -> Self {
        Self {
            eps: (0..k).map(|_| rng.sample(StandardNormal)).collect(),
            keep: None,
        }
    }
}

/// Noise for all encoders of one document.
#[derive(Debug, Clone, PartialEq)]
pub struct DocNoise {
    pub encoders: Vec<EncoderNoise>,
}

impl DocNoise {
    pub fn deterministic(kind: ModelKind, k: usize) -> Self {
        Self {
            encoders: (0..kind.encoder_count())
                .map(|_| EncoderNoise::deterministic(k))
                .collect(),
        }
    }

    /// Fresh reparameterisation noise; dropout stays off.
    pub fn sample(kind: ModelKind, k: usize, rng: &mut impl Rng) -> Self {
        Self {
            encoders: (0..kind.encoder_count())
                .map(|_| EncoderNoise::sample(k, rng))
                .collect(),
        }
    }
}

/// Per-term loss values. Every field is already weighted (λ, ω), so `total`
/// is their sum. Terms a model does not have stay zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    /// `-wᵀ log softmax(βᵀθ)` (text-side θ for the contrastive model).
    pub recon_nll: f64,
    /// KL of the only encoder, or of the text encoder.
    pub kl: f64,
    /// KL of the image encoder (contrastive model).
    pub kl_image: f64,
    /// `λ (1 - cos(x_img, γᵀθ))`.
    pub image: f64,
    /// `ω` · InfoNCE.
    pub contrastive: f64,
}

impl LossTerms {
    fn add(&mut self, o: &LossTerms) {
        self.total += o.total;
        self.recon_nll += o.recon_nll;
        self.kl += o.kl;
        self.kl_image += o.kl_image;
        self.image += o.image;
        self.contrastive += o.contrastive;
    }

    fn scaled(&self, s: f64) -> LossTerms {
        LossTerms {
            total: self.total * s,
            recon_nll: self.recon_nll * s,
            kl: self.kl * s,
            kl_image: self.kl_image * s,
            image: self.image * s,
            contrastive: self.contrastive * s,
        }
    }

    fn finish(mut self) -> Self {
        self.total = self.recon_nll + self.kl + self.kl_image + self.image + self.contrastive;
        self
    }
}

/// Batch loss: summed terms plus each document's share of the total.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub terms: LossTerms,
    pub per_document: Vec<f64>,
}

/// Encoder inputs of a document for the given model kind, one per encoder.
pub fn encoder_inputs(kind: ModelKind, doc: &MultimodalDocument) -> Vec<Cow<'_, [f64]>> {
    let concat = |a: &[f64], b: &[f64]| {
        let mut v = Vec::with_capacity(a.len() + b.len());
        v.extend_from_slice(a);
        v.extend_from_slice(b);
        Cow::Owned(v)
    };
    match kind {
        ModelKind::ZeroShot => vec![Cow::Borrowed(&doc.text_embedding[..])],
        ModelKind::Combined => vec![concat(&doc.text_embedding, &doc.bow.to_normalized())],
        ModelKind::MultimodalZeroShot => vec![concat(&doc.text_embedding, &doc.image_embedding)],
        ModelKind::MultimodalContrast => vec![
            Cow::Borrowed(&doc.text_embedding[..]),
            Cow::Borrowed(&doc.image_embedding[..]),
        ],
    }
}

struct Latent {
    pass: EncoderPass,
    theta: Vec<f64>,
}

fn encode(net: &InferenceNetwork, x: &[f64], noise: &EncoderNoise) -> Latent {
    let pass = net.forward(x, noise.keep.as_deref());
    let theta = softmax(&reparameterize_logits(&pass.mu, &pass.logvar, &noise.eps));
    Latent { pass, theta }
}

/// Backpropagates `dtheta` (and the KL term, scaled by `kl_scale`) through
/// the reparameterisation and the encoder.
fn backprop_latent(
    net: &InferenceNetwork,
    x: &[f64],
    lat: &Latent,
    noise: &EncoderNoise,
    dtheta: &[f64],
    prior: &GaussianPrior,
    grad: &mut InferenceNetwork,
) {
    let k = lat.theta.len();
    let inner = dot(&lat.theta, dtheta);
    let mut dmu: Vec<f64> = (0..k).map(|i| lat.theta[i] * (dtheta[i] - inner)).collect();
    let mut dlogvar: Vec<f64> = (0..k)
        .map(|i| dmu[i] * noise.eps[i] * 0.5 * (0.5 * lat.pass.logvar[i]).exp())
        .collect();
    kl_grad(
        &lat.pass.mu,
        &lat.pass.logvar,
        prior,
        1.0,
        &mut dmu,
        &mut dlogvar,
    );
    net.backward(x, &lat.pass, &dmu, &dlogvar, grad);
}

/// Multinomial reconstruction NLL `-Σ_v w_v log softmax(βᵀθ)_v` and, when
/// asked, its gradient with respect to the logits `βᵀθ`.
fn reconstruction(
    beta: &DenseMatrix,
    theta: &[f64],
    bow: &BagOfWords,
    want_grad: bool,
) -> (f64, Option<Vec<f64>>) {
    let logits = beta.matvec_t(theta);
    let lse = logsumexp(&logits);
    let n = bow.total() as f64;
    let mut nll = n * lse;
    for &(i, c) in bow.entries() {
        nll -= c as f64 * logits[i as usize];
    }
    let grad = want_grad.then(|| {
        let mut d: Vec<f64> = logits.iter().map(|l| n * (l - lse).exp()).collect();
        for &(i, c) in bow.entries() {
            d[i as usize] -= c as f64;
        }
        d
    });
    (nll, grad)
}

/// `λ (1 - cos(x, r))` with `|x||r| + COSINE_EPS` in the denominator, and its
/// gradient with respect to `r`.
fn image_term(x: &[f64], r: &[f64], lambda: f64, want_grad: bool) -> (f64, Option<Vec<f64>>) {
    let nx = norm(x);
    let nr = norm(r);
    let den = nx * nr + COSINE_EPS;
    let xr = dot(x, r);
    let loss = lambda * (1.0 - xr / den);
    let grad = want_grad.then(|| {
        let second = if nr > 0.0 { xr * nx / (nr * den * den) } else { 0.0 };
        x.iter()
            .zip(r)
            .map(|(xi, ri)| -lambda * (xi / den - second * ri))
            .collect()
    });
    (loss, grad)
}

/// Cosine embedding loss `1 - cos(x, r)`; errors on an exactly-zero vector.
pub fn cosine_embedding_loss(x: &[f64], r: &[f64]) -> Result<f64> {
    if x.len() != r.len() {
        return Err(Error::Shape(format!(
            "cosine between {}- and {}-dim vectors",
            x.len(),
            r.len()
        )));
    }
    if x.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroVector("image embedding"));
    }
    if r.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroVector("reconstructed image features"));
    }
    Ok(1.0 - dot(x, r) / (norm(x) * norm(r)))
}

fn check_input(net: &InferenceNetwork, x: &[f64], what: &str) -> Result<()> {
    if x.len() != net.input_dim {
        return Err(Error::Shape(format!(
            "{what}: encoder expects {} inputs, got {}",
            net.input_dim,
            x.len()
        )));
    }
    Ok(())
}

fn check_noise(noise: &EncoderNoise, k: usize) -> Result<()> {
    if noise.eps.len() != k {
        return Err(Error::Shape(format!(
            "noise draw has {} entries for {k} topics",
            noise.eps.len()
        )));
    }
    Ok(())
}

/// Unimodal ZeroShotTM loss for one document: reconstruction NLL plus KL,
/// with the encoder fed `input`.
pub fn loss_zeroshot(
    input: &[f64],
    bow: &BagOfWords,
    encoder: &InferenceNetwork,
    beta: &DenseMatrix,
    prior: &GaussianPrior,
    noise: &EncoderNoise,
) -> Result<LossTerms> {
    check_input(encoder, input, "zeroshot")?;
    check_noise(noise, beta.rows())?;
    if bow.dim() != beta.cols() {
        return Err(Error::Shape(format!(
            "bag of words over {} terms, beta over {}",
            bow.dim(),
            beta.cols()
        )));
    }
    let lat = encode(encoder, input, noise);
    let (recon_nll, _) = reconstruction(beta, &lat.theta, bow, false);
    let kl = kl_unchecked(&lat.pass.mu, &lat.pass.logvar, prior);
    Ok(LossTerms {
        recon_nll,
        kl,
        ..LossTerms::default()
    }
    .finish())
}

/// Multimodal zero-shot loss for one document: reconstruction NLL + KL +
/// `λ (1 - cos(x_img, γᵀθ))`, the encoder fed `text ⊕ image`.
pub fn loss_multimodal_zeroshot(
    doc: &MultimodalDocument,
    params: &TopicParams,
    objective: &Objective,
    noise: &DocNoise,
) -> Result<LossTerms> {
    let gamma = params
        .gamma
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("parameters have no gamma matrix".into()))?;
    let net = &params.encoders[0];
    let inputs = encoder_inputs(ModelKind::MultimodalZeroShot, doc);
    check_input(net, &inputs[0], "multimodal_zeroshot")?;
    check_noise(&noise.encoders[0], params.num_topics())?;
    if doc.image_embedding.len() != gamma.cols() {
        return Err(Error::Shape(format!(
            "image embedding has {} dims, gamma has {}",
            doc.image_embedding.len(),
            gamma.cols()
        )));
    }
    let lat = encode(net, &inputs[0], &noise.encoders[0]);
    let recon = gamma.matvec_t(&lat.theta);
    cosine_embedding_loss(&doc.image_embedding, &recon)?;
    let (recon_nll, _) = reconstruction(&params.beta, &lat.theta, &doc.bow, false);
    let kl = kl_unchecked(&lat.pass.mu, &lat.pass.logvar, &objective.prior);
    let (image, _) = image_term(&doc.image_embedding, &recon, objective.lambda, false);
    Ok(LossTerms {
        recon_nll,
        kl,
        image,
        ..LossTerms::default()
    }
    .finish())
}

fn infonce_checks(theta_txt: &[Vec<f64>], theta_img: &[Vec<f64>], tau: f64) -> Result<()> {
    if theta_txt.is_empty() {
        return Err(Error::InvalidArgument("InfoNCE over an empty batch".into()));
    }
    if theta_txt.len() != theta_img.len() {
        return Err(Error::Shape(format!(
            "InfoNCE batches of {} and {} rows",
            theta_txt.len(),
            theta_img.len()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be > 0, got {tau}")));
    }
    let k = theta_txt[0].len();
    if theta_txt.iter().chain(theta_img).any(|r| r.len() != k) {
        return Err(Error::Shape("InfoNCE rows differ in length".into()));
    }
    Ok(())
}

type ThetaGrads = (Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Per-anchor InfoNCE terms and, when asked, gradients wrt both batches.
///
/// For anchor `i` with modalities `θ_i^1 = θ_txt[i]`, `θ_i^2 = θ_img[i]`:
/// `ℓ_i = -Σ_{a≠b} log( exp(θ_i^a·θ_i^b / τ) / Σ_j Σ_{c,d} exp(θ_i^c·θ_j^d / τ) )`
/// where the denominator runs over every batch element and every ordered
/// modality pair, same-modality pairs and the positive itself included.
/// Returns `ω/N · ℓ_i` per anchor.
fn infonce_terms(
    theta_txt: &[Vec<f64>],
    theta_img: &[Vec<f64>],
    tau: f64,
    omega: f64,
    want_grad: bool,
) -> (Vec<f64>, Option<ThetaGrads>) {
    let n = theta_txt.len();
    let k = theta_txt[0].len();
    let scale = omega / n as f64;
    let modal = |m: usize, j: usize| -> &[f64] {
        if m == 0 {
            &theta_txt[j]
        } else {
            &theta_img[j]
        }
    };
    let mut per_anchor = Vec::with_capacity(n);
    let mut grads = want_grad.then(|| (vec![vec![0.0; k]; n], vec![vec![0.0; k]; n]));
    let mut sims = vec![0.0; 4 * n];
    for i in 0..n {
        for c in 0..2 {
            for j in 0..n {
                for d in 0..2 {
                    sims[(c * 2 + d) * n + j] = dot(modal(c, i), modal(d, j)) / tau;
                }
            }
        }
        let log_den = logsumexp(&sims);
        let positive = dot(&theta_txt[i], &theta_img[i]) / tau;
        // two ordered positive pairs (txt,img) and (img,txt) share one similarity
        per_anchor.push(scale * -2.0 * (positive - log_den));

        if let Some((gt, gi)) = grads.as_mut() {
            let g = scale * 2.0 / tau;
            for kk in 0..k {
                gt[i][kk] -= g * theta_img[i][kk];
                gi[i][kk] -= g * theta_txt[i][kk];
            }
            for c in 0..2 {
                for j in 0..n {
                    for d in 0..2 {
                        let w = g * (sims[(c * 2 + d) * n + j] - log_den).exp();
                        let (a, b) = (modal(c, i).to_vec(), modal(d, j).to_vec());
                        let ga = if c == 0 { &mut gt[i] } else { &mut gi[i] };
                        for kk in 0..k {
                            ga[kk] += w * b[kk];
                        }
                        let gb = if d == 0 { &mut gt[j] } else { &mut gi[j] };
                        for kk in 0..k {
                            gb[kk] += w * a[kk];
                        }
                    }
                }
            }
        }
    }
    (per_anchor, grads)
}

/// `ω` times the InfoNCE loss averaged over the batch.
pub fn infonce(theta_txt: &[Vec<f64>], theta_img: &[Vec<f64>], tau: f64, omega: f64) -> Result<f64> {
    infonce_checks(theta_txt, theta_img, tau)?;
    let (terms, _) = infonce_terms(theta_txt, theta_img, tau, omega, false);
    Ok(terms.iter().sum())
}

/// Contrastive multimodal loss over a batch: reconstruction from the text
/// encoder's θ, KL for both encoders, and `ω` · InfoNCE between the text and
/// image θ of the batch. Reconstruction and KL are summed over documents; the
/// InfoNCE term is already a batch mean.
pub fn loss_multimodal_contrast(
    batch: &[&MultimodalDocument],
    params: &TopicParams,
    objective: &Objective,
    noise: &[DocNoise],
) -> Result<BatchLoss> {
    if params.encoders.len() != 2 {
        return Err(Error::InvalidArgument(
            "contrastive loss needs a text and an image encoder".into(),
        ));
    }
    let obj = Objective {
        kind: ModelKind::MultimodalContrast,
        ..objective.clone()
    };
    Ok(batch_eval(params, &obj, batch, noise, false)?.0)
}

/// Batch loss for any model kind (gradients not computed).
pub fn batch_loss(
    params: &TopicParams,
    objective: &Objective,
    batch: &[&MultimodalDocument],
    noise: &[DocNoise],
) -> Result<BatchLoss> {
    Ok(batch_eval(params, objective, batch, noise, false)?.0)
}

/// Batch loss and its exact gradient with respect to every parameter.
pub fn batch_loss_and_grad(
    params: &TopicParams,
    objective: &Objective,
    batch: &[&MultimodalDocument],
    noise: &[DocNoise],
) -> Result<(BatchLoss, TopicParams)> {
    let (loss, grad) = batch_eval(params, objective, batch, noise, true)?;
    Ok((loss, grad.expect("gradient requested")))
}

fn validate_batch(
    params: &TopicParams,
    objective: &Objective,
    batch: &[&MultimodalDocument],
    noise: &[DocNoise],
) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if noise.len() != batch.len() {
        return Err(Error::Shape(format!(
            "{} noise draws for {} documents",
            noise.len(),
            batch.len()
        )));
    }
    if params.encoders.len() != objective.kind.encoder_count() {
        return Err(Error::InvalidArgument(format!(
            "{} encoders for kind {}",
            params.encoders.len(),
            objective.kind
        )));
    }
    if objective.prior.len() != params.num_topics() {
        return Err(Error::Shape("prior and beta disagree on K".into()));
    }
    if objective.kind == ModelKind::MultimodalZeroShot && params.gamma.is_none() {
        return Err(Error::InvalidArgument("parameters have no gamma matrix".into()));
    }
    let k = params.num_topics();
    for (doc, nz) in batch.iter().zip(noise) {
        if doc.bow.dim() != params.beta.cols() {
            return Err(Error::Shape(format!(
                "document {} has a {}-term bag of words, beta has {}",
                doc.id,
                doc.bow.dim(),
                params.beta.cols()
            )));
        }
        if nz.encoders.len() != params.encoders.len() {
            return Err(Error::Shape("noise draws do not match encoders".into()));
        }
        for (net, (x, en)) in params
            .encoders
            .iter()
            .zip(encoder_inputs(objective.kind, doc).iter().zip(&nz.encoders))
        {
            check_input(net, x, &doc.id)?;
            check_noise(en, k)?;
        }
        if let Some(g) = &params.gamma {
            if objective.kind == ModelKind::MultimodalZeroShot
                && g.cols() != doc.image_embedding.len()
            {
                return Err(Error::Shape(format!(
                    "document {} image embedding has {} dims, gamma has {}",
                    doc.id,
                    doc.image_embedding.len(),
                    g.cols()
                )));
            }
        }
    }
    Ok(())
}

fn batch_eval(
    params: &TopicParams,
    objective: &Objective,
    batch: &[&MultimodalDocument],
    noise: &[DocNoise],
    want_grad: bool,
) -> Result<(BatchLoss, Option<TopicParams>)> {
    validate_batch(params, objective, batch, noise)?;
    let mut grad = want_grad.then(|| params.zeros_like());
    let mut terms = LossTerms::default();
    let mut per_document = Vec::with_capacity(batch.len());

    if objective.kind != ModelKind::MultimodalContrast {
        let net = &params.encoders[0];
        for (doc, nz) in batch.iter().zip(noise) {
            let inputs = encoder_inputs(objective.kind, doc);
            let x = &inputs[0];
            let en = &nz.encoders[0];
            let lat = encode(net, x, en);
            let (recon_nll, dlogits) = reconstruction(&params.beta, &lat.theta, &doc.bow, want_grad);
            let kl = kl_unchecked(&lat.pass.mu, &lat.pass.logvar, &objective.prior);
            let mut t = LossTerms {
                recon_nll,
                kl,
                ..LossTerms::default()
            };
            let mut dr = None;
            let mut recon_img = Vec::new();
            if objective.kind == ModelKind::MultimodalZeroShot {
                let gamma = params.gamma.as_ref().expect("validated");
                recon_img = gamma.matvec_t(&lat.theta);
                let (img, d) = image_term(&doc.image_embedding, &recon_img, objective.lambda, want_grad);
                t.image = img;
                dr = d;
            }
            let t = t.finish();
            per_document.push(t.total);
            terms.add(&t);

            if let Some(g) = grad.as_mut() {
                let dlogits = dlogits.expect("requested");
                g.beta.add_outer(&lat.theta, &dlogits, 1.0);
                let mut dtheta = params.beta.matvec(&dlogits);
                if let Some(dr) = dr {
                    let gamma = params.gamma.as_ref().expect("validated");
                    g.gamma
                        .as_mut()
                        .expect("gamma grad")
                        .add_outer(&lat.theta, &dr, 1.0);
                    let extra = gamma.matvec(&dr);
                    dtheta.iter_mut().zip(extra).for_each(|(a, b)| *a += b);
                    let _ = &recon_img;
                }
                backprop_latent(net, x, &lat, en, &dtheta, &objective.prior, &mut g.encoders[0]);
            }
        }
        return Ok((
            BatchLoss {
                terms,
                per_document,
            },
            grad,
        ));
    }

    // contrastive: text encoder 0, image encoder 1
    let (text_net, image_net) = (&params.encoders[0], &params.encoders[1]);
    let mut text_lat = Vec::with_capacity(batch.len());
    let mut image_lat = Vec::with_capacity(batch.len());
    let mut dlogits_all = Vec::with_capacity(batch.len());
    for (doc, nz) in batch.iter().zip(noise) {
        let lt = encode(text_net, &doc.text_embedding, &nz.encoders[0]);
        let li = encode(image_net, &doc.image_embedding, &nz.encoders[1]);
        let (recon_nll, dlogits) = reconstruction(&params.beta, &lt.theta, &doc.bow, want_grad);
        let t = LossTerms {
            recon_nll,
            kl: kl_unchecked(&lt.pass.mu, &lt.pass.logvar, &objective.prior),
            kl_image: kl_unchecked(&li.pass.mu, &li.pass.logvar, &objective.prior),
            ..LossTerms::default()
        }
        .finish();
        per_document.push(t.total);
        terms.add(&t);
        text_lat.push(lt);
        image_lat.push(li);
        dlogits_all.push(dlogits);
    }
    let tt: Vec<Vec<f64>> = text_lat.iter().map(|l| l.theta.clone()).collect();
    let ti: Vec<Vec<f64>> = image_lat.iter().map(|l| l.theta.clone()).collect();
    infonce_checks(&tt, &ti, objective.tau)?;
    let (nce, nce_grad) = infonce_terms(&tt, &ti, objective.tau, objective.omega, want_grad);
    for (p, c) in per_document.iter_mut().zip(&nce) {
        *p += c;
    }
    terms.contrastive = nce.iter().sum();
    terms = terms.finish();

    if let Some(g) = grad.as_mut() {
        let (gt, gi) = nce_grad.expect("requested");
        for (i, doc) in batch.iter().enumerate() {
            let dlogits = dlogits_all[i].as_ref().expect("requested");
            g.beta.add_outer(&text_lat[i].theta, dlogits, 1.0);
            let mut dtheta_t = params.beta.matvec(dlogits);
            dtheta_t.iter_mut().zip(&gt[i]).for_each(|(a, b)| *a += b);
            let (ge_t, rest) = g.encoders.split_at_mut(1);
            backprop_latent(
                text_net,
                &doc.text_embedding,
                &text_lat[i],
                &noise[i].encoders[0],
                &dtheta_t,
                &objective.prior,
                &mut ge_t[0],
            );
            backprop_latent(
                image_net,
                &doc.image_embedding,
                &image_lat[i],
                &noise[i].encoders[1],
                &gi[i],
                &objective.prior,
                &mut rest[0],
            );
        }
    }
    Ok((
        BatchLoss {
            terms,
            per_document,
        },
        grad,
    ))
}

/// A trained model together with what it needs for inference and reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedTopicModel {
    pub config: ModelConfig,
    pub vocabulary: Vocabulary,
    pub text_dim: usize,
    pub image_dim: usize,
    pub params: TopicParams,
    /// Per-epoch means (per document) of each loss term.
    pub loss_trace: Vec<LossTerms>,
    /// Documents × K posterior-mean topic proportions of the training corpus.
    pub doc_theta: DenseMatrix,
}

impl TrainedTopicModel {
    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn num_topics(&self) -> usize {
        self.config.num_topics
    }

    pub fn beta(&self) -> &DenseMatrix {
        &self.params.beta
    }

    pub fn gamma(&self) -> Option<&DenseMatrix> {
        self.params.gamma.as_ref()
    }

    pub fn objective(&self) -> Result<Objective> {
        Objective::from_config(&self.config)
    }
}

const STREAM_INIT: u64 = 0;
const STREAM_ORDER: u64 = 1;
const STREAM_DROPOUT: u64 = 2;
const STREAM_NOISE: u64 = 3;

/// Independent generator for one named purpose, derived from the run seed.
fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn check_corpus(corpus: &Corpus, config: &ModelConfig) -> Result<()> {
    if corpus.text_dim() == 0 {
        return Err(Error::InvalidArgument("corpus has empty text embeddings".into()));
    }
    if config.kind.is_multimodal() && corpus.image_dim() == 0 {
        return Err(Error::InvalidArgument(format!(
            "{} needs image embeddings",
            config.kind
        )));
    }
    Ok(())
}

/// Mini-batch Adam training. Data order, dropout masks and reparameterisation
/// noise each come from their own stream of the seeded generator, so the same
/// corpus and config always produce the same parameters.
pub fn train(corpus: &Corpus, config: &ModelConfig) -> Result<TrainedTopicModel> {
    let objective = Objective::from_config(config)?;
    check_corpus(corpus, config)?;
    let k = config.num_topics;
    let mut init_rng = rng_stream(config.seed, STREAM_INIT);
    let mut order_rng = rng_stream(config.seed, STREAM_ORDER);
    let mut dropout_rng = rng_stream(config.seed, STREAM_DROPOUT);
    let mut noise_rng = rng_stream(config.seed, STREAM_NOISE);

    let mut params = TopicParams::init(
        config.kind,
        k,
        corpus.vocabulary().len(),
        corpus.text_dim(),
        corpus.image_dim(),
        config.hidden_width,
        config.dropout_rate,
        &mut init_rng,
    );
    let mut adam = AdamState::new(&params, config.adam());
    let docs = corpus.documents();
    let mut order: Vec<usize> = (0..docs.len()).collect();
    let mut loss_trace = Vec::with_capacity(config.epochs);

    for _epoch in 0..config.epochs {
        order.shuffle(&mut order_rng);
        let mut epoch_terms = LossTerms::default();
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&MultimodalDocument> = chunk.iter().map(|&i| &docs[i]).collect();
            let noise: Vec<DocNoise> = batch
                .iter()
                .map(|_| DocNoise {
                    encoders: params
                        .encoders
                        .iter()
                        .map(|net| EncoderNoise {
                            eps: (0..k).map(|_| noise_rng.sample(StandardNormal)).collect(),
                            keep: (net.dropout_rate > 0.0)
                                .then(|| net.sample_dropout_mask(&mut dropout_rng)),
                        })
                        .collect(),
                })
                .collect();
            let (loss, grad) = batch_loss_and_grad(&params, &objective, &batch, &noise)?;
            if !loss.terms.total.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "training diverged: non-finite loss {:?}",
                    loss.terms
                )));
            }
            epoch_terms.add(&loss.terms);
            adam_step(&mut params, &grad, &mut adam)?;
        }
        loss_trace.push(epoch_terms.scaled(1.0 / docs.len() as f64));
    }

    let mut model = TrainedTopicModel {
        config: config.clone(),
        vocabulary: corpus.vocabulary().clone(),
        text_dim: corpus.text_dim(),
        image_dim: corpus.image_dim(),
        params,
        loss_trace,
        doc_theta: DenseMatrix::zeros(0, k),
    };
    model.doc_theta = infer_corpus(&model, corpus)?;
    Ok(model)
}

/// Which parts of a document are available for inference.
#[derive(Debug, Clone, Copy, Default)]
pub struct InferenceInput<'a> {
    pub text_embedding: Option<&'a [f64]>,
    pub image_embedding: Option<&'a [f64]>,
    pub bow: Option<&'a BagOfWords>,
}

impl<'a> InferenceInput<'a> {
    pub fn full(doc: &'a MultimodalDocument) -> Self {
        Self {
            text_embedding: Some(&doc.text_embedding),
            image_embedding: Some(&doc.image_embedding),
            bow: Some(&doc.bow),
        }
    }

    pub fn text_only(text_embedding: &'a [f64]) -> Self {
        Self {
            text_embedding: Some(text_embedding),
            ..Self::default()
        }
    }

    pub fn image_only(image_embedding: &'a [f64]) -> Self {
        Self {
            image_embedding: Some(image_embedding),
            ..Self::default()
        }
    }

    fn describe(&self) -> &'static str {
        match (
            self.text_embedding.is_some(),
            self.image_embedding.is_some(),
            self.bow.is_some(),
        ) {
            (false, false, _) => "no embeddings",
            (false, true, _) => "image-only input",
            (true, false, false) => "text-only input",
            _ => "the given input",
        }
    }
}

fn mean_theta(net: &InferenceNetwork, x: &[f64]) -> Result<Vec<f64>> {
    check_input(net, x, "inference")?;
    let (mu, _) = net.posterior(x);
    Ok(softmax(&mu))
}

/// Posterior-mean topic proportions (`ε = 0`, no dropout).
///
/// The contrastive model uses its text encoder when a text embedding is
/// given and its image encoder otherwise; the other kinds need their full
/// encoder input.
pub fn infer_theta(model: &TrainedTopicModel, input: InferenceInput<'_>) -> Result<Vec<f64>> {
    let kind = model.kind();
    let unsupported = || Error::UnsupportedModality {
        kind,
        requested: input.describe(),
    };
    let nets = &model.params.encoders;
    match kind {
        ModelKind::ZeroShot => mean_theta(&nets[0], input.text_embedding.ok_or_else(unsupported)?),
        ModelKind::Combined => {
            let text = input.text_embedding.ok_or_else(unsupported)?;
            let bow = input.bow.ok_or_else(unsupported)?;
            let mut x = text.to_vec();
            x.extend(bow.to_normalized());
            mean_theta(&nets[0], &x)
        }
        ModelKind::MultimodalZeroShot => {
            let text = input.text_embedding.ok_or_else(unsupported)?;
            let image = input.image_embedding.ok_or_else(unsupported)?;
            let mut x = text.to_vec();
            x.extend_from_slice(image);
            mean_theta(&nets[0], &x)
        }
        ModelKind::MultimodalContrast => match (input.text_embedding, input.image_embedding) {
            (Some(text), _) => mean_theta(&nets[0], text),
            (None, Some(image)) => mean_theta(&nets[1], image),
            (None, None) => Err(unsupported()),
        },
    }
}

/// Documents × K matrix of posterior-mean proportions for a corpus.
pub fn infer_corpus(model: &TrainedTopicModel, corpus: &Corpus) -> Result<DenseMatrix> {
    let k = model.num_topics();
    let mut values = Vec::with_capacity(corpus.len() * k);
    for doc in corpus.documents() {
        values.extend(infer_theta(model, InferenceInput::full(doc))?);
    }
    DenseMatrix::from_vec(corpus.len(), k, values)
}

/// `γᵀθ`, the image features predicted from topic proportions.
pub fn reconstruct_image_features(model: &TrainedTopicModel, theta: &[f64]) -> Result<Vec<f64>> {
    let gamma = model.gamma().ok_or_else(|| {
        Error::InvalidArgument(format!("a {} model has no topic-image matrix", model.kind()))
    })?;
    if theta.len() != gamma.rows() {
        return Err(Error::Shape(format!(
            "theta has {} entries for {} topics",
            theta.len(),
            gamma.rows()
        )));
    }
    Ok(gamma.matvec_t(theta))
}

/// Mean unweighted cosine loss `1 - cos(x_img, γᵀθ)` over a corpus, with θ
/// the posterior mean.
pub fn image_reconstruction_error(model: &TrainedTopicModel, corpus: &Corpus) -> Result<f64> {
    let mut acc = 0.0;
    for doc in corpus.documents() {
        let theta = infer_theta(model, InferenceInput::full(doc))?;
        let r = reconstruct_image_features(model, &theta)?;
        let (l, _) = image_term(&doc.image_embedding, &r, 1.0, false);
        acc += l;
    }
    Ok(acc / corpus.len() as f64)
}
