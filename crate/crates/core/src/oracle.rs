//! Brute-force verification backends for small instances.
//!
//! Nothing here shares code with [`crate::switching`]: the window and
//! threshold arithmetic is written out again so a replay is an independent
//! check rather than a re-run.

use crate::corpus::Vocab;
use crate::divergence::{sequence_divergence, token_divergence, DivergenceMetric};
use crate::model::{model_dist, LanguageModel, SamplingConfig};
use crate::policies::{GenerationTrace, Source};
use crate::switching::SwitchConfig;
use crate::{Error, Result, TokenId};

pub const MAX_ENUMERATION_VOCAB: usize = 5;
pub const MAX_ENUMERATION_LEN: usize = 5;
pub const DEFAULT_BUDGET: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnumerationSpec {
    pub max_len: usize,
    /// Upper bound on the number of sequences visited.
    pub budget: u128,
}

impl EnumerationSpec {
    pub fn new(max_len: usize) -> Self {
        EnumerationSpec { max_len, budget: DEFAULT_BUDGET }
    }

    /// Number of sequences of length 1..=max_len over `vocab_size` tokens.
    pub fn sequence_count(&self, vocab_size: usize) -> u128 {
        (1..=self.max_len as u32).map(|l| (vocab_size as u128).saturating_pow(l)).sum()
    }

    fn check(&self, vocab: &Vocab) -> Result<()> {
        if vocab.len() > MAX_ENUMERATION_VOCAB {
            return Err(Error::config(
                "vocab.size",
                format!("enumeration supports at most {MAX_ENUMERATION_VOCAB} tokens"),
            ));
        }
        if self.max_len == 0 || self.max_len > MAX_ENUMERATION_LEN {
            return Err(Error::config("max_len", format!("enumeration supports lengths 1..={MAX_ENUMERATION_LEN}")));
        }
        let count = self.sequence_count(vocab.len());
        if count > self.budget {
            return Err(Error::Budget { count, limit: self.budget });
        }
        Ok(())
    }
}

/// Generation policies whose trace distribution is available in closed form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnumeratedPolicy {
    /// Student rollout.
    OnPolicy { sampling: SamplingConfig },
    /// Teacher rollout (sequence-level KD).
    TeacherRollout { sampling: SamplingConfig },
    /// Adaptive switching.
    Adaswitch {
        student_sampling: SamplingConfig,
        teacher_sampling: SamplingConfig,
        window: usize,
        multiplier: f64,
        switch_metric: DivergenceMetric,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Enumeration {
    /// Expected sequence divergence over the policy's trace distribution.
    pub expected: f64,
    /// Total probability of all enumerated traces.
    pub total_probability: f64,
    pub traces: usize,
}

/// Exact expectation of the sequence divergence of a policy's traces,
/// by walking every trace with non-zero probability.
pub fn exact_expected_sequence_divergence<S, T>(
    policy: &EnumeratedPolicy,
    student: &S,
    teacher: &T,
    prompt: &[TokenId],
    metric: &DivergenceMetric,
    spec: &EnumerationSpec,
) -> Result<Enumeration>
where
    S: LanguageModel + ?Sized,
    T: LanguageModel + ?Sized,
{
    spec.check(teacher.vocab())?;
    let mut walker = Walker {
        policy,
        student,
        teacher,
        prompt,
        metric,
        max_len: spec.max_len,
        eos: teacher.vocab().eos,
        result: Enumeration { expected: 0.0, total_probability: 0.0, traces: 0 },
    };
    walker.visit(&mut Vec::new(), 1.0, false, &mut Vec::new())?;
    let result = walker.result;
    if (result.total_probability - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!("trace probabilities sum to {}", result.total_probability)));
    }
    Ok(result)
}

struct Walker<'a, S: ?Sized, T: ?Sized> {
    policy: &'a EnumeratedPolicy,
    student: &'a S,
    teacher: &'a T,
    prompt: &'a [TokenId],
    metric: &'a DivergenceMetric,
    max_len: usize,
    eos: TokenId,
    result: Enumeration,
}

impl<S: LanguageModel + ?Sized, T: LanguageModel + ?Sized> Walker<'_, S, T> {
    fn visit(&mut self, generated: &mut Vec<TokenId>, prob: f64, switched: bool, window: &mut Vec<f64>) -> Result<()> {
        let finished = generated.len() == self.max_len || generated.last() == Some(&self.eos);
        if finished {
            let d = sequence_divergence(self.metric, self.teacher, self.student, self.prompt, generated)?;
            self.result.expected += prob * d;
            self.result.total_probability += prob;
            self.result.traces += 1;
            return Ok(());
        }
        let context: Vec<TokenId> = self.prompt.iter().chain(generated.iter()).copied().collect();
        let step = generated.len() + 1;
        let (dist, now_switched, pushed) = match *self.policy {
            EnumeratedPolicy::OnPolicy { sampling } => (sampling.apply(&self.student.logits(&context)), false, false),
            EnumeratedPolicy::TeacherRollout { sampling } => {
                (sampling.apply(&self.teacher.logits(&context)), false, false)
            }
            EnumeratedPolicy::Adaswitch {
                student_sampling,
                teacher_sampling,
                window: l,
                multiplier,
                switch_metric,
            } => {
                let teacher_logits = self.teacher.logits(&context);
                if switched {
                    (teacher_sampling.apply(&teacher_logits), true, false)
                } else {
                    let student_logits = self.student.logits(&context);
                    let d =
                        token_divergence(&switch_metric, &model_dist(&teacher_logits), &model_dist(&student_logits))?;
                    let fire = step > l && {
                        let mut acc = 0.0;
                        for &v in &window[window.len() - l..] {
                            acc += v;
                        }
                        d > multiplier * (acc / l as f64)
                    };
                    window.push(d);
                    if fire {
                        (teacher_sampling.apply(&teacher_logits), true, true)
                    } else {
                        (student_sampling.apply(&student_logits), false, true)
                    }
                }
            }
        };
        for (token, &p) in dist.as_slice().iter().enumerate() {
            if p > 0.0 {
                generated.push(token as TokenId);
                self.visit(generated, prob * p, now_switched, window)?;
                generated.pop();
            }
        }
        if pushed {
            window.pop();
        }
        Ok(())
    }
}

/// Replays the recorded step divergences through the switching rule and
/// checks that they reproduce the recorded switch position (or its absence).
pub fn replay_switch_check(trace: &GenerationTrace, cfg: &SwitchConfig) -> bool {
    let l = cfg.window;
    let d = &trace.step_divergences;
    let mut expected = None;
    for i in 0..d.len() {
        let step = i + 1;
        if step <= l {
            continue;
        }
        let mut acc = 0.0;
        for v in &d[i - l..i] {
            acc += *v;
        }
        let tau = cfg.multiplier * (acc / l as f64);
        if d[i] > tau {
            expected = Some(step);
            break;
        }
    }
    match (expected, trace.switch_index()) {
        (None, None) => d.len() == trace.tokens.len() && trace.sources.iter().all(|&s| s == Source::Student),
        (Some(e), Some(recorded)) => {
            recorded == e
                && recorded > l
                && d.len() == recorded
                && recorded <= trace.sources.len()
                && trace.sources[..recorded - 1].iter().all(|&s| s == Source::Student)
                && trace.sources[recorded - 1..].iter().all(|&s| s == Source::Teacher)
        }
        _ => false,
    }
}

/// Language model whose logits depend only on how many tokens have been
/// generated after the prompt. Used to script exact divergence streams.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedLM {
    vocab: Vocab,
    prompt_len: usize,
    steps: Vec<Vec<f64>>,
}

/// Logit given to tokens outside a scripted support; its softmax weight is exactly zero.
const OFF_SUPPORT: f64 = -1e4;

impl ScriptedLM {
    /// `steps[i]` holds the logits for generation step `i + 1`; the last
    /// entry repeats for later steps.
    pub fn new(vocab: Vocab, prompt_len: usize, steps: Vec<Vec<f64>>) -> Result<Self> {
        vocab.validate()?;
        if steps.is_empty() || steps.iter().any(|s| s.len() != vocab.len()) {
            return Err(Error::contract("scripted steps must each hold one logit per token"));
        }
        Ok(ScriptedLM { vocab, prompt_len, steps })
    }

    /// Student/teacher pair (over a 5-token vocabulary, prompt `[BOS]`) whose
    /// forward-KL divergence at step `i` equals `divergences[i]` and is zero
    /// afterwards. Both models put all their mass on the two content tokens,
    /// so greedy and sampled rollouts never emit EOS. Each value must lie in
    /// `[0, ln 2)`.
    pub fn pair_for_divergences(divergences: &[f64], max_len: usize) -> Result<(ScriptedLM, ScriptedLM)> {
        let vocab = Vocab::new(5)?;
        let uniform = |q: f64| {
            let mut row = vec![OFF_SUPPORT; vocab.len()];
            row[0] = q.ln();
            row[1] = (1.0 - q).ln();
            row
        };
        let steps = divergences.len().max(max_len).max(1);
        let mut student = Vec::with_capacity(steps);
        let mut teacher = Vec::with_capacity(steps);
        for i in 0..steps {
            let d = divergences.get(i).copied().unwrap_or(0.0);
            if !(0.0..std::f64::consts::LN_2).contains(&d) {
                return Err(Error::contract(format!("scripted divergence {d} outside [0, ln 2)")));
            }
            student.push(uniform(0.5));
            teacher.push(uniform(bernoulli_for_kl(d)));
        }
        Ok((ScriptedLM::new(vocab, 1, student)?, ScriptedLM::new(vocab, 1, teacher)?))
    }
}

/// `q ∈ [0.5, 1)` with KL(Bern(q) ‖ Bern(0.5)) = d, by bisection.
fn bernoulli_for_kl(d: f64) -> f64 {
    let kl = |q: f64| {
        let h = |x: f64| if x > 0.0 { x * x.ln() } else { 0.0 };
        std::f64::consts::LN_2 + h(q) + h(1.0 - q)
    };
    let (mut lo, mut hi) = (0.5, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if kl(mid) < d {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

impl LanguageModel for ScriptedLM {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn logits(&self, context: &[TokenId]) -> Vec<f64> {
        let step = context.len().saturating_sub(self.prompt_len);
        self.steps[step.min(self.steps.len() - 1)].clone()
    }
}
