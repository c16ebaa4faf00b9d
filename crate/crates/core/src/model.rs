//! Tabular autoregressive language models.
//!
//! A [`TabularLM`] of order `m` keeps one logit row per length-`m` context;
//! shorter contexts are left-padded with BOS. Rows are stored densely, so the
//! table has `vocab.size^m` rows.

use std::cell::Cell;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Example, Vocab};
use crate::divergence::{divergence_and_logit_grad, DivergenceMetric};
use crate::rng::substream;
use crate::{Error, Result, TokenId};

/// Largest table (rows × vocab) a model may allocate.
pub const MAX_TABLE_ENTRIES: usize = 1 << 26;

const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Normalized next-token distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbDist(Vec<f64>);

impl ProbDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::contract("empty distribution"));
        }
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::contract(format!("invalid probability {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::contract(format!("probabilities sum to {total}")));
        }
        Ok(ProbDist(probs))
    }

    /// Normalizes non-negative weights. Panics if their sum is not positive.
    pub fn from_weights(weights: &[f64]) -> Self {
        let total: f64 = weights.iter().sum();
        assert!(total > 0.0, "weights must have positive mass");
        ProbDist(weights.iter().map(|w| w / total).collect())
    }

    pub fn one_hot(len: usize, token: TokenId) -> Self {
        let mut probs = vec![0.0; len];
        probs[token as usize] = 1.0;
        ProbDist(probs)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn prob(&self, token: TokenId) -> f64 {
        self.0[token as usize]
    }

    /// Highest-probability token, lowest id on ties.
    pub fn argmax(&self) -> TokenId {
        argmax(&self.0)
    }
}

fn argmax(values: &[f64]) -> TokenId {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best as TokenId
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Teacher,
    Student,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub top_p: f64,
    #[serde(default)]
    pub greedy: bool,
}

impl SamplingConfig {
    pub const fn new(temperature: f64, top_p: f64) -> Self {
        SamplingConfig { temperature, top_p, greedy: false }
    }

    pub const fn greedy() -> Self {
        SamplingConfig { temperature: 1.0, top_p: 1.0, greedy: true }
    }

    /// Student generation defaults: temperature 0.5, top-p 0.5.
    pub const fn student_default() -> Self {
        SamplingConfig::new(0.5, 0.5)
    }

    /// Teacher generation defaults: temperature 0.2, top-p 0.5.
    pub const fn teacher_default() -> Self {
        SamplingConfig::new(0.2, 0.5)
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        if self.greedy {
            return Ok(());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config(
                format!("{field}.temperature"),
                format!("must be positive, got {}", self.temperature),
            ));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::config(format!("{field}.top_p"), format!("must lie in (0, 1], got {}", self.top_p)));
        }
        Ok(())
    }

    /// Distribution to sample from given raw logits.
    pub fn apply(&self, logits: &[f64]) -> ProbDist {
        if self.greedy {
            return ProbDist::one_hot(logits.len(), argmax(logits));
        }
        let probs = softmax(logits, self.temperature);
        if self.top_p >= 1.0 {
            return ProbDist(probs);
        }
        let keep = nucleus(&probs, self.top_p);
        let mut truncated = vec![0.0; probs.len()];
        for &t in &keep {
            truncated[t as usize] = probs[t as usize];
        }
        ProbDist::from_weights(&truncated)
    }
}

/// Numerically stable softmax of `logits / temperature`.
pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| ((z - max) / temperature).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Untruncated temperature-1 distribution. Divergences and losses always use this.
pub fn model_dist(logits: &[f64]) -> ProbDist {
    ProbDist(softmax(logits, 1.0))
}

/// Smallest set of highest-probability tokens whose cumulative mass reaches
/// `mass`, in descending probability order (lowest id first on ties).
pub fn nucleus(probs: &[f64], mass: f64) -> Vec<TokenId> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    if mass >= 1.0 {
        return order.into_iter().map(|t| t as TokenId).collect();
    }
    let mut kept = Vec::new();
    let mut cumulative = 0.0;
    for t in order {
        kept.push(t as TokenId);
        cumulative += probs[t];
        if cumulative >= mass - 1e-12 {
            break;
        }
    }
    kept
}

/// Anything that maps a context to next-token logits. One call is one
/// forward pass.
pub trait LanguageModel {
    fn vocab(&self) -> &Vocab;
    fn logits(&self, context: &[TokenId]) -> Vec<f64>;
}

impl<M: LanguageModel + ?Sized> LanguageModel for &M {
    fn vocab(&self) -> &Vocab {
        (**self).vocab()
    }

    fn logits(&self, context: &[TokenId]) -> Vec<f64> {
        (**self).logits(context)
    }
}

/// Next-token distribution under a sampling configuration.
pub fn next_dist<M: LanguageModel + ?Sized>(model: &M, context: &[TokenId], sampling: &SamplingConfig) -> ProbDist {
    sampling.apply(&model.logits(context))
}

/// Inverse-CDF draw. Always consumes exactly one uniform from `rng`.
pub fn sample_token<R: Rng + ?Sized>(dist: &ProbDist, rng: &mut R) -> TokenId {
    let u: f64 = rng.gen();
    let mut cumulative = 0.0;
    let mut last_supported = 0;
    for (i, &p) in dist.as_slice().iter().enumerate() {
        if p > 0.0 {
            last_supported = i;
            cumulative += p;
            if u < cumulative {
                return i as TokenId;
            }
        }
    }
    last_supported as TokenId
}

/// Context-conditioned softmax table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularLM {
    vocab: Vocab,
    order: usize,
    role: Role,
    logits: Vec<f64>,
}

impl TabularLM {
    pub fn zeros(vocab: Vocab, order: usize, role: Role) -> Result<Self> {
        vocab.validate()?;
        if order == 0 {
            return Err(Error::config("order", "context order must be >= 1"));
        }
        let entries = (vocab.len() as u128).checked_pow(order as u32 + 1).unwrap_or(u128::MAX);
        if entries > MAX_TABLE_ENTRIES as u128 {
            return Err(Error::config(
                "order",
                format!("table of {entries} entries exceeds the {MAX_TABLE_ENTRIES} limit"),
            ));
        }
        Ok(TabularLM { vocab, order, role, logits: vec![0.0; entries as usize] })
    }

    /// Logits drawn uniformly from (-0.01, 0.01) using the `init` substream of `seed`.
    pub fn random(vocab: Vocab, order: usize, role: Role, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(vocab, order, role)?;
        let mut rng = substream(seed, &["init", role_label(role)]);
        for z in &mut model.logits {
            *z = rng.gen_range(-0.01..0.01);
        }
        Ok(model)
    }

    pub fn from_rows(vocab: Vocab, order: usize, role: Role, rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut model = Self::zeros(vocab, order, role)?;
        if rows.len() != model.num_rows() {
            return Err(Error::contract(format!("expected {} rows, got {}", model.num_rows(), rows.len())));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != vocab.len() || row.iter().any(|z| !z.is_finite()) {
                return Err(Error::contract(format!("row {i} must hold {} finite logits", vocab.len())));
            }
            model.row_mut(i).copy_from_slice(row);
        }
        Ok(model)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn set_role(&mut self, role: Role) {
        self.role = role;
    }

    pub fn num_rows(&self) -> usize {
        self.logits.len() / self.vocab.len()
    }

    /// Row addressed by the trailing `order` tokens of `context`.
    pub fn row_index(&self, context: &[TokenId]) -> usize {
        let v = self.vocab.len();
        let start = context.len().saturating_sub(self.order);
        let padding = self.order - (context.len() - start);
        let padded = std::iter::repeat_n(self.vocab.bos, padding).chain(context[start..].iter().copied());
        padded.fold(0usize, |acc, t| {
            assert!(self.vocab.contains(t), "token {t} outside vocabulary");
            acc * v + t as usize
        })
    }

    pub fn row(&self, index: usize) -> &[f64] {
        let v = self.vocab.len();
        &self.logits[index * v..(index + 1) * v]
    }

    pub fn row_mut(&mut self, index: usize) -> &mut [f64] {
        let v = self.vocab.len();
        &mut self.logits[index * v..(index + 1) * v]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.logits.chunks(self.vocab.len())
    }

    /// Gradient-descent update `logits -= learning_rate * gradient`.
    pub fn apply_gradient(&mut self, gradient: &Gradient, learning_rate: f64) {
        for (&row, g) in &gradient.rows {
            for (z, gi) in self.row_mut(row).iter_mut().zip(g) {
                *z -= learning_rate * gi;
            }
        }
    }

    /// SHA-256 over the logit bit patterns; equal iff the tables are bitwise equal.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.order as u64).to_le_bytes());
        hasher.update(self.vocab.size.to_le_bytes());
        for z in &self.logits {
            hasher.update(z.to_bits().to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = ModelFile {
            version: MODEL_FORMAT_VERSION,
            vocab: self.vocab,
            order: self.order,
            role: self.role,
            rows: self.rows().map(<[f64]>::to_vec).collect(),
        };
        let text = serde_json::to_string(&file)?;
        fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let file: ModelFile = serde_json::from_str(&text)?;
        if file.version != MODEL_FORMAT_VERSION {
            return Err(Error::contract(format!("unsupported model format version {}", file.version)));
        }
        Self::from_rows(file.vocab, file.order, file.role, file.rows)
    }
}

fn role_label(role: Role) -> &'static str {
    match role {
        Role::Teacher => "teacher",
        Role::Student => "student",
    }
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    vocab: Vocab,
    order: usize,
    role: Role,
    rows: Vec<Vec<f64>>,
}

impl LanguageModel for TabularLM {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn logits(&self, context: &[TokenId]) -> Vec<f64> {
        self.row(self.row_index(context)).to_vec()
    }
}

/// Sparse gradient over logit rows; untouched rows are implicitly zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradient {
    pub rows: BTreeMap<usize, Vec<f64>>,
}

impl Gradient {
    fn accumulate(&mut self, row: usize, values: &[f64], scale: f64) {
        let entry = self.rows.entry(row).or_insert_with(|| vec![0.0; values.len()]);
        for (e, v) in entry.iter_mut().zip(values) {
            *e += scale * v;
        }
    }

    /// Gradient entry for `(row, token)`.
    pub fn get(&self, row: usize, token: usize) -> f64 {
        self.rows.get(&row).map_or(0.0, |g| g[token])
    }

    pub fn is_zero(&self) -> bool {
        self.rows.values().flatten().all(|&g| g == 0.0)
    }
}

/// Sequence-level divergence between teacher and student along `y`, with
/// its exact gradient with respect to the student's logits.
pub fn loss_and_gradient<T: LanguageModel + ?Sized>(
    student: &TabularLM,
    teacher: &T,
    prompt: &[TokenId],
    y: &[TokenId],
    metric: &DivergenceMetric,
) -> Result<(f64, Gradient)> {
    if y.is_empty() {
        return Err(Error::contract("loss over an empty sequence"));
    }
    if teacher.vocab().size != student.vocab.size {
        return Err(Error::contract("teacher and student vocabularies differ"));
    }
    let scale = 1.0 / y.len() as f64;
    let mut context = prompt.to_vec();
    let mut loss = 0.0;
    let mut gradient = Gradient::default();
    for &token in y {
        let p_t = model_dist(&teacher.logits(&context));
        let row = student.row_index(&context);
        let p_s = model_dist(student.row(row));
        let (d, g) = divergence_and_logit_grad(metric, p_t.as_slice(), p_s.as_slice());
        loss += d;
        gradient.accumulate(row, &g, scale);
        context.push(token);
    }
    Ok((loss * scale, gradient))
}

/// Mean per-token negative log-likelihood of `y` and its gradient.
pub fn nll_and_gradient(model: &TabularLM, prompt: &[TokenId], y: &[TokenId]) -> Result<(f64, Gradient)> {
    if y.is_empty() {
        return Err(Error::contract("NLL over an empty sequence"));
    }
    let scale = 1.0 / y.len() as f64;
    let mut context = prompt.to_vec();
    let mut loss = 0.0;
    let mut gradient = Gradient::default();
    for &token in y {
        let row = model.row_index(&context);
        let mut g = softmax(model.row(row), 1.0);
        loss -= g[token as usize].ln();
        g[token as usize] -= 1.0;
        gradient.accumulate(row, &g, scale);
        context.push(token);
    }
    Ok((loss * scale, gradient))
}

/// One SGD step on the NLL of `example.target`. Returns the loss before the step.
pub fn sft_step(model: &mut TabularLM, example: &Example, learning_rate: f64) -> Result<f64> {
    if !(learning_rate >= 0.0) {
        return Err(Error::config("learning_rate", format!("must be non-negative, got {learning_rate}")));
    }
    let (loss, gradient) = nll_and_gradient(model, &example.prompt, &example.target)?;
    model.apply_gradient(&gradient, learning_rate);
    Ok(loss)
}

/// Wraps a model and counts forward passes.
#[derive(Debug)]
pub struct CountingLM<M> {
    inner: M,
    calls: Cell<u64>,
}

impl<M> CountingLM<M> {
    pub fn new(inner: M) -> Self {
        CountingLM { inner, calls: Cell::new(0) }
    }

    pub fn calls(&self) -> u64 {
        self.calls.get()
    }

    pub fn reset(&self) {
        self.calls.set(0);
    }

    pub fn into_inner(self) -> M {
        self.inner
    }
}

impl<M: LanguageModel> LanguageModel for CountingLM<M> {
    fn vocab(&self) -> &Vocab {
        self.inner.vocab()
    }

    fn logits(&self, context: &[TokenId]) -> Vec<f64> {
        self.calls.set(self.calls.get() + 1);
        self.inner.logits(context)
    }
}
