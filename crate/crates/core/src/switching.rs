//! Adaptive one-time switching from student exploration to teacher guidance.
//!
//! The student generates while the per-step divergence `d_i` between the
//! two models' next-token distributions stays within `K` times the mean of
//! the previous `L` divergences. The first step that exceeds it is sampled
//! from the teacher, and so is every step after it; no divergence is
//! computed once the teacher has taken over.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Example;
use crate::divergence::{token_divergence, DivergenceMetric};
use crate::model::{model_dist, sample_token, LanguageModel, SamplingConfig};
use crate::policies::{ForwardCalls, GenerationTrace, Source};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchConfig {
    /// Sliding-window length `L`.
    pub window: usize,
    /// Threshold multiplier `K`.
    pub multiplier: f64,
    pub metric: DivergenceMetric,
    /// Decoding limit.
    pub max_len: usize,
}

impl Default for SwitchConfig {
    fn default() -> Self {
        SwitchConfig { window: 10, multiplier: 3.0, metric: DivergenceMetric::default(), max_len: 32 }
    }
}

impl SwitchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::config("switch.window", "window length must be >= 1"));
        }
        if !(self.multiplier > 0.0) {
            return Err(Error::config("switch.multiplier", format!("must be positive, got {}", self.multiplier)));
        }
        if self.max_len == 0 {
            return Err(Error::config("switch.max_len", "decoding limit must be >= 1"));
        }
        self.metric.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchEvent {
    /// 1-based step that was handed to the teacher.
    pub position: usize,
    #[serde(rename = "d_switch")]
    pub divergence_at_switch: f64,
    #[serde(rename = "tau")]
    pub threshold_at_switch: f64,
}

/// Mean of the last `window` values.
pub fn sliding_mean(divergences: &[f64], window: usize) -> Result<f64> {
    if window == 0 || divergences.len() < window {
        return Err(Error::contract(format!(
            "sliding mean over {window} values needs at least that many, have {}",
            divergences.len()
        )));
    }
    let recent = &divergences[divergences.len() - window..];
    Ok(recent.iter().sum::<f64>() / window as f64)
}

/// Switch threshold `K * mean`.
pub fn threshold(mean_divergence: f64, multiplier: f64) -> f64 {
    multiplier * mean_divergence
}

/// Generates one target sequence with adaptive switching.
///
/// Before the switch each step costs one student and one teacher forward
/// pass; after it, one teacher pass. The switching step itself is sampled
/// from the teacher distribution already computed for `d_i`.
pub fn adaswitch_generate<S, T, R>(
    student: &S,
    teacher: &T,
    example: &Example,
    student_sampling: &SamplingConfig,
    teacher_sampling: &SamplingConfig,
    cfg: &SwitchConfig,
    rng: &mut R,
) -> Result<GenerationTrace>
where
    S: LanguageModel + ?Sized,
    T: LanguageModel + ?Sized,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    if student.vocab().size != teacher.vocab().size {
        return Err(Error::contract("teacher and student vocabularies differ"));
    }
    let eos = teacher.vocab().eos;
    let mut context = example.prompt.clone();
    let mut tokens = Vec::new();
    let mut sources = Vec::new();
    let mut divergences: Vec<f64> = Vec::new();
    let mut calls = ForwardCalls::default();
    let mut switch: Option<SwitchEvent> = None;

    for step in 1..=cfg.max_len {
        let (token, source) = if switch.is_some() {
            let teacher_logits = teacher.logits(&context);
            calls.teacher += 1;
            (sample_token(&teacher_sampling.apply(&teacher_logits), rng), Source::Teacher)
        } else {
            let student_logits = student.logits(&context);
            let teacher_logits = teacher.logits(&context);
            calls.student += 1;
            calls.teacher += 1;
            let d = token_divergence(&cfg.metric, &model_dist(&teacher_logits), &model_dist(&student_logits))?;
            if step > cfg.window {
                let tau = threshold(sliding_mean(&divergences, cfg.window)?, cfg.multiplier);
                if d > tau {
                    switch = Some(SwitchEvent { position: step, divergence_at_switch: d, threshold_at_switch: tau });
                }
            }
            divergences.push(d);
            if switch.is_some() {
                (sample_token(&teacher_sampling.apply(&teacher_logits), rng), Source::Teacher)
            } else {
                (sample_token(&student_sampling.apply(&student_logits), rng), Source::Student)
            }
        };
        tokens.push(token);
        sources.push(source);
        context.push(token);
        if token == eos {
            break;
        }
    }

    Ok(GenerationTrace {
        id: example.id.clone(),
        prompt: example.prompt.clone(),
        tokens,
        sources,
        step_divergences: divergences,
        switch,
        calls,
    })
}
