//! Target-sequence selection strategies.
//!
//! Every policy turns an [`Example`] into a [`GenerationTrace`]: the tokens
//! the trainer will supervise, who produced each token, and how many forward
//! passes each model spent producing them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Example;
use crate::model::{model_dist, next_dist, nucleus, sample_token, LanguageModel, SamplingConfig};
use crate::switching::{adaswitch_generate, SwitchConfig, SwitchEvent};
use crate::{Error, Result, TokenId};

/// Who supplied a kept token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Student,
    Teacher,
    GroundTruth,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForwardCalls {
    pub student: u64,
    pub teacher: u64,
}

impl ForwardCalls {
    pub fn weighted(&self, weights: &CallWeights) -> f64 {
        self.student as f64 * weights.student + self.teacher as f64 * weights.teacher
    }
}

impl std::ops::AddAssign for ForwardCalls {
    fn add_assign(&mut self, rhs: Self) {
        self.student += rhs.student;
        self.teacher += rhs.teacher;
    }
}

/// Relative cost of one student and one teacher forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CallWeights {
    pub student: f64,
    pub teacher: f64,
}

impl Default for CallWeights {
    fn default() -> Self {
        CallWeights { student: 1.0, teacher: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub id: String,
    pub prompt: Vec<TokenId>,
    pub tokens: Vec<TokenId>,
    pub sources: Vec<Source>,
    /// Per-step divergences, where the policy computed them.
    pub step_divergences: Vec<f64>,
    pub switch: Option<SwitchEvent>,
    pub calls: ForwardCalls,
}

impl GenerationTrace {
    fn ground_truth(example: &Example) -> Self {
        GenerationTrace {
            id: example.id.clone(),
            prompt: example.prompt.clone(),
            tokens: example.target.clone(),
            sources: vec![Source::GroundTruth; example.target.len()],
            step_divergences: Vec::new(),
            switch: None,
            calls: ForwardCalls::default(),
        }
    }

    /// 1-based step at which generation switched to the teacher.
    pub fn switch_index(&self) -> Option<usize> {
        self.switch.as_ref().map(|s| s.position)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Checks the structural invariants shared by every policy.
    pub fn check_invariants(&self, eos: TokenId, max_len: usize) -> Result<()> {
        if self.tokens.len() != self.sources.len() {
            return Err(Error::contract(format!("trace {}: tokens and sources differ in length", self.id)));
        }
        if self.tokens.is_empty() {
            return Err(Error::contract(format!("trace {}: empty", self.id)));
        }
        if let Some(first_eos) = self.tokens.iter().position(|&t| t == eos) {
            if first_eos + 1 != self.tokens.len() {
                return Err(Error::contract(format!("trace {}: continues past EOS", self.id)));
            }
        } else if self.tokens.len() != max_len {
            return Err(Error::contract(format!("trace {}: stopped without EOS before the length limit", self.id)));
        }
        if self.tokens.len() > max_len {
            return Err(Error::contract(format!("trace {}: exceeds the length limit", self.id)));
        }
        if let Some(k) = self.switch_index() {
            if k == 0 || k > self.tokens.len() || self.sources[k - 1..].iter().any(|&s| s != Source::Teacher) {
                return Err(Error::contract(format!("trace {}: non-teacher token after switch", self.id)));
            }
        }
        Ok(())
    }
}

/// Policy roster with per-policy parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    Sft,
    Seqkd,
    OffPolicyKd,
    OnPolicyKd,
    Imitkd {
        #[serde(default = "default_mix")]
        mix_probability: f64,
    },
    Skd {
        #[serde(default = "default_k_skd")]
        k_skd: f64,
    },
    Adaswitch,
}

fn default_mix() -> f64 {
    0.5
}

fn default_k_skd() -> f64 {
    0.5
}

impl PolicyKind {
    /// All seven policies with default parameters, in reporting order.
    pub const ALL: [PolicyKind; 7] = [
        PolicyKind::Sft,
        PolicyKind::Seqkd,
        PolicyKind::OffPolicyKd,
        PolicyKind::OnPolicyKd,
        PolicyKind::Imitkd { mix_probability: 0.5 },
        PolicyKind::Skd { k_skd: 0.5 },
        PolicyKind::Adaswitch,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Sft => "sft",
            PolicyKind::Seqkd => "seqkd",
            PolicyKind::OffPolicyKd => "off_policy_kd",
            PolicyKind::OnPolicyKd => "on_policy_kd",
            PolicyKind::Imitkd { .. } => "imitkd",
            PolicyKind::Skd { .. } => "skd",
            PolicyKind::Adaswitch => "adaswitch",
        }
    }

    /// SFT-style policies train on NLL; the rest on divergence to the teacher.
    pub fn uses_nll(&self) -> bool {
        matches!(self, PolicyKind::Sft | PolicyKind::Seqkd)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PolicyKind::Imitkd { mix_probability } if !(0.0..=1.0).contains(&mix_probability) => {
                Err(Error::config("policy.mix_probability", format!("must lie in [0, 1], got {mix_probability}")))
            }
            PolicyKind::Skd { k_skd } if !(k_skd > 0.0 && k_skd <= 1.0) => {
                Err(Error::config("policy.k_skd", format!("must lie in (0, 1], got {k_skd}")))
            }
            _ => Ok(()),
        }
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let normalized = s.to_ascii_lowercase().replace('-', "_");
        let policy = match normalized.as_str() {
            "sft" => PolicyKind::Sft,
            "seqkd" => PolicyKind::Seqkd,
            "off_policy_kd" | "off_policy" | "supervised_kd" => PolicyKind::OffPolicyKd,
            "on_policy_kd" | "on_policy" | "gkd" => PolicyKind::OnPolicyKd,
            "imitkd" => PolicyKind::Imitkd { mix_probability: default_mix() },
            "skd" => PolicyKind::Skd { k_skd: default_k_skd() },
            "adaswitch" => PolicyKind::Adaswitch,
            other => return Err(Error::config("policy", format!("unknown policy `{other}`"))),
        };
        Ok(policy)
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn check_max_len(max_len: usize) -> Result<()> {
    if max_len == 0 {
        return Err(Error::config("max_len", "decoding limit must be >= 1"));
    }
    Ok(())
}

/// Autoregressive rollout of a single model.
fn rollout<M, R>(
    model: &M,
    source: Source,
    example: &Example,
    sampling: &SamplingConfig,
    max_len: usize,
    rng: &mut R,
) -> Result<GenerationTrace>
where
    M: LanguageModel + ?Sized,
    R: Rng + ?Sized,
{
    check_max_len(max_len)?;
    let eos = model.vocab().eos;
    let mut context = example.prompt.clone();
    let mut tokens = Vec::new();
    while tokens.len() < max_len {
        let token = sample_token(&next_dist(model, &context, sampling), rng);
        tokens.push(token);
        context.push(token);
        if token == eos {
            break;
        }
    }
    let n = tokens.len() as u64;
    let calls = match source {
        Source::Teacher => ForwardCalls { student: 0, teacher: n },
        _ => ForwardCalls { student: n, teacher: 0 },
    };
    Ok(GenerationTrace {
        id: example.id.clone(),
        prompt: example.prompt.clone(),
        sources: vec![source; tokens.len()],
        tokens,
        step_divergences: Vec::new(),
        switch: None,
        calls,
    })
}

/// Supervised fine-tuning: the ground-truth target, paired with NLL loss.
pub fn select_target_sft(example: &Example) -> GenerationTrace {
    GenerationTrace::ground_truth(example)
}

/// Sequence-level KD: the teacher's own rollout, paired with NLL loss.
pub fn select_target_seqkd<T, R>(
    teacher: &T,
    example: &Example,
    sampling: &SamplingConfig,
    max_len: usize,
    rng: &mut R,
) -> Result<GenerationTrace>
where
    T: LanguageModel + ?Sized,
    R: Rng + ?Sized,
{
    rollout(teacher, Source::Teacher, example, sampling, max_len, rng)
}

/// Off-policy (supervised) KD: the ground-truth target, paired with the
/// divergence loss against the teacher.
pub fn select_target_off_policy(example: &Example) -> GenerationTrace {
    GenerationTrace::ground_truth(example)
}

/// On-policy KD: the student's own rollout.
pub fn select_target_on_policy<S, R>(
    student: &S,
    example: &Example,
    sampling: &SamplingConfig,
    max_len: usize,
    rng: &mut R,
) -> Result<GenerationTrace>
where
    S: LanguageModel + ?Sized,
    R: Rng + ?Sized,
{
    rollout(student, Source::Student, example, sampling, max_len, rng)
}

/// Sequence-level mixing: the ground truth with probability
/// `mix_probability`, otherwise the student's rollout. The choice is drawn
/// from `mix_rng` so `rng` sees the same stream as a pure on-policy rollout.
#[allow(clippy::too_many_arguments)]
pub fn select_target_imitkd<S, R1, R2>(
    student: &S,
    example: &Example,
    sampling: &SamplingConfig,
    max_len: usize,
    mix_probability: f64,
    mix_rng: &mut R1,
    rng: &mut R2,
) -> Result<GenerationTrace>
where
    S: LanguageModel + ?Sized,
    R1: Rng + ?Sized,
    R2: Rng + ?Sized,
{
    PolicyKind::Imitkd { mix_probability }.validate()?;
    let u: f64 = mix_rng.gen();
    if u < mix_probability {
        Ok(GenerationTrace::ground_truth(example))
    } else {
        select_target_on_policy(student, example, sampling, max_len, rng)
    }
}

/// Speculative-style supervision: the student proposes each token and keeps
/// it when it lies in the teacher's top-`k_skd` nucleus of the untruncated
/// distribution; otherwise the teacher resamples that position.
#[allow(clippy::too_many_arguments)]
pub fn select_target_skd<S, T, R>(
    student: &S,
    teacher: &T,
    example: &Example,
    student_sampling: &SamplingConfig,
    teacher_sampling: &SamplingConfig,
    max_len: usize,
    k_skd: f64,
    rng: &mut R,
) -> Result<GenerationTrace>
where
    S: LanguageModel + ?Sized,
    T: LanguageModel + ?Sized,
    R: Rng + ?Sized,
{
    check_max_len(max_len)?;
    PolicyKind::Skd { k_skd }.validate()?;
    let eos = teacher.vocab().eos;
    let mut context = example.prompt.clone();
    let mut tokens = Vec::new();
    let mut sources = Vec::new();
    let mut calls = ForwardCalls::default();
    while tokens.len() < max_len {
        let student_logits = student.logits(&context);
        let teacher_logits = teacher.logits(&context);
        calls.student += 1;
        calls.teacher += 1;
        let proposal = sample_token(&student_sampling.apply(&student_logits), rng);
        let accepted = k_skd >= 1.0 || nucleus(model_dist(&teacher_logits).as_slice(), k_skd).contains(&proposal);
        let (token, source) = if accepted {
            (proposal, Source::Student)
        } else {
            (sample_token(&teacher_sampling.apply(&teacher_logits), rng), Source::Teacher)
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
        step_divergences: Vec::new(),
        switch: None,
        calls,
    })
}

/// Generation settings shared by every policy in a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationSettings {
    pub student_sampling: SamplingConfig,
    pub teacher_sampling: SamplingConfig,
    /// Switching parameters; `max_len` doubles as the decoding limit for all policies.
    pub switch: SwitchConfig,
}

/// Dispatches to the selection routine for `policy`.
pub fn select_target<S, T, R1, R2>(
    policy: &PolicyKind,
    student: &S,
    teacher: &T,
    example: &Example,
    settings: &GenerationSettings,
    mix_rng: &mut R1,
    rng: &mut R2,
) -> Result<GenerationTrace>
where
    S: LanguageModel + ?Sized,
    T: LanguageModel + ?Sized,
    R1: Rng + ?Sized,
    R2: Rng + ?Sized,
{
    let max_len = settings.switch.max_len;
    match *policy {
        PolicyKind::Sft => Ok(select_target_sft(example)),
        PolicyKind::Seqkd => select_target_seqkd(teacher, example, &settings.teacher_sampling, max_len, rng),
        PolicyKind::OffPolicyKd => Ok(select_target_off_policy(example)),
        PolicyKind::OnPolicyKd => select_target_on_policy(student, example, &settings.student_sampling, max_len, rng),
        PolicyKind::Imitkd { mix_probability } => {
            select_target_imitkd(student, example, &settings.student_sampling, max_len, mix_probability, mix_rng, rng)
        }
        PolicyKind::Skd { k_skd } => select_target_skd(
            student,
            teacher,
            example,
            &settings.student_sampling,
            &settings.teacher_sampling,
            max_len,
            k_skd,
            rng,
        ),
        PolicyKind::Adaswitch => adaswitch_generate(
            student,
            teacher,
            example,
            &settings.student_sampling,
            &settings.teacher_sampling,
            &settings.switch,
            rng,
        ),
    }
}
