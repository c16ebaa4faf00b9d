//! Token- and sequence-level divergences between teacher and student.
//!
//! All values are in nats. Terms whose numerator mass is zero contribute
//! nothing; denominators are clamped at `epsilon` so one-hot inputs stay
//! finite.

use serde::{Deserialize, Serialize};

use crate::model::{model_dist, LanguageModel, ProbDist};
use crate::{Error, Result, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceKind {
    /// KL(teacher || student)
    ForwardKl,
    /// KL(student || teacher)
    ReverseKl,
    Jsd,
}

impl std::fmt::Display for DivergenceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DivergenceKind::ForwardKl => "forward_kl",
            DivergenceKind::ReverseKl => "reverse_kl",
            DivergenceKind::Jsd => "jsd",
        })
    }
}

impl std::str::FromStr for DivergenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward_kl" | "kl" => Ok(DivergenceKind::ForwardKl),
            "reverse_kl" => Ok(DivergenceKind::ReverseKl),
            "jsd" => Ok(DivergenceKind::Jsd),
            other => Err(Error::config("metric", format!("unknown divergence `{other}`"))),
        }
    }
}

pub const DEFAULT_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceMetric {
    pub kind: DivergenceKind,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

impl Default for DivergenceMetric {
    fn default() -> Self {
        DivergenceMetric::new(DivergenceKind::ForwardKl)
    }
}

impl DivergenceMetric {
    pub const fn new(kind: DivergenceKind) -> Self {
        DivergenceMetric { kind, epsilon: DEFAULT_EPSILON }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1e-6) {
            return Err(Error::config("metric.epsilon", format!("must lie in (0, 1e-6], got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// `Σ a ln(a / max(b, eps))` over the support of `a`.
fn kl(a: &[f64], b: &[f64], eps: f64) -> f64 {
    let total: f64 =
        a.iter().zip(b).filter(|(&ai, _)| ai > 0.0).map(|(&ai, &bi)| ai * (ai.ln() - bi.max(eps).ln())).sum();
    total.max(0.0)
}

fn mixture(p: &[f64], q: &[f64]) -> Vec<f64> {
    p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect()
}

fn divergence_raw(kind: DivergenceKind, eps: f64, teacher: &[f64], student: &[f64]) -> f64 {
    match kind {
        DivergenceKind::ForwardKl => kl(teacher, student, eps),
        DivergenceKind::ReverseKl => kl(student, teacher, eps),
        DivergenceKind::Jsd => {
            let m = mixture(teacher, student);
            0.5 * kl(teacher, &m, eps) + 0.5 * kl(student, &m, eps)
        }
    }
}

/// d_i between a teacher and a student next-token distribution.
pub fn token_divergence(metric: &DivergenceMetric, teacher: &ProbDist, student: &ProbDist) -> Result<f64> {
    if teacher.len() != student.len() {
        return Err(Error::contract(format!(
            "distribution lengths differ: teacher {} vs student {}",
            teacher.len(),
            student.len()
        )));
    }
    Ok(divergence_raw(metric.kind, metric.epsilon, teacher.as_slice(), student.as_slice()))
}

/// Divergence and its gradient with respect to the student's logits, given
/// both distributions. `student` must be the softmax of those logits.
pub(crate) fn divergence_and_logit_grad(
    metric: &DivergenceMetric,
    teacher: &[f64],
    student: &[f64],
) -> (f64, Vec<f64>) {
    let eps = metric.epsilon;
    let value = divergence_raw(metric.kind, eps, teacher, student);
    let grad = match metric.kind {
        DivergenceKind::ForwardKl => {
            // Only terms whose student probability escaped the clamp depend on the logits.
            let active: Vec<bool> = student.iter().map(|&s| s >= eps).collect();
            let active_mass: f64 = if active.iter().all(|&a| a) {
                1.0
            } else {
                teacher.iter().zip(&active).filter(|(_, &a)| a).map(|(t, _)| t).sum()
            };
            student
                .iter()
                .zip(teacher)
                .zip(&active)
                .map(|((&s, &t), &a)| s * active_mass - if a { t } else { 0.0 })
                .collect()
        }
        DivergenceKind::ReverseKl => {
            let g: Vec<f64> = student
                .iter()
                .zip(teacher)
                .map(|(&s, &t)| if s > 0.0 { s.ln() - t.max(eps).ln() } else { 0.0 })
                .collect();
            softmax_vjp(student, &g)
        }
        DivergenceKind::Jsd => {
            let m = mixture(teacher, student);
            let g: Vec<f64> = student
                .iter()
                .zip(&m)
                .map(|(&s, &mi)| if s > 0.0 { 0.5 * (s.ln() - mi.max(eps).ln()) } else { 0.0 })
                .collect();
            softmax_vjp(student, &g)
        }
    };
    (value, grad)
}

/// Pulls a gradient with respect to probabilities back through softmax.
fn softmax_vjp(probs: &[f64], g: &[f64]) -> Vec<f64> {
    let mean: f64 = probs.iter().zip(g).map(|(p, gi)| p * gi).sum();
    probs.iter().zip(g).map(|(p, gi)| p * (gi - mean)).collect()
}

/// Mean token divergence along `y` given prompt `prompt`, with both models'
/// untruncated temperature-1 distributions.
pub fn sequence_divergence<T, S>(
    metric: &DivergenceMetric,
    teacher: &T,
    student: &S,
    prompt: &[TokenId],
    y: &[TokenId],
) -> Result<f64>
where
    T: LanguageModel + ?Sized,
    S: LanguageModel + ?Sized,
{
    if y.is_empty() {
        return Err(Error::contract("sequence divergence of an empty sequence"));
    }
    if teacher.vocab().size != student.vocab().size {
        return Err(Error::contract("teacher and student vocabularies differ"));
    }
    let mut context = prompt.to_vec();
    let mut total = 0.0;
    for &token in y {
        let p_t = model_dist(&teacher.logits(&context));
        let p_s = model_dist(&student.logits(&context));
        total += token_divergence(metric, &p_t, &p_s)?;
        context.push(token);
    }
    Ok(total / y.len() as f64)
}
