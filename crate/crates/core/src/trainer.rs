//! Teacher fine-tuning and the distillation loop.
//!
//! Distillation is plain SGD with one example per step. Each step asks the
//! configured policy for a fresh target trace, computes the loss on the
//! trace tokens (NLL for `sft`/`seqkd`, the configured divergence to the
//! teacher otherwise) and updates the student. Every
//! `validation_interval` steps the student is scored and snapshotted; the
//! snapshot with the lowest validation loss is the result.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{exact_match, Dataset, Example};
use crate::divergence::{sequence_divergence, DivergenceMetric};
use crate::model::{loss_and_gradient, next_dist, nll_and_gradient, LanguageModel, Role, SamplingConfig, TabularLM};
use crate::policies::{select_target, ForwardCalls, GenerationSettings, GenerationTrace, PolicyKind};
use crate::rng::substream;
use crate::switching::SwitchConfig;
use crate::telemetry::{aggregate, RunReport};
use crate::{Error, Result, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KDConfig {
    pub policy: PolicyKind,
    /// Window, multiplier and decoding limit. The switching divergence
    /// always follows `metric`.
    pub switch: SwitchConfig,
    pub student_sampling: SamplingConfig,
    pub teacher_sampling: SamplingConfig,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub metric: DivergenceMetric,
    pub validation_interval: usize,
    /// Steps per telemetry window.
    pub report_window: usize,
}

impl Default for KDConfig {
    fn default() -> Self {
        KDConfig {
            policy: PolicyKind::Adaswitch,
            switch: SwitchConfig::default(),
            student_sampling: SamplingConfig::student_default(),
            teacher_sampling: SamplingConfig::teacher_default(),
            learning_rate: 0.1,
            epochs: 3,
            seed: 0,
            metric: DivergenceMetric::default(),
            validation_interval: 100,
            report_window: 100,
        }
    }
}

impl KDConfig {
    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        self.switch.validate()?;
        self.metric.validate()?;
        self.student_sampling.validate("student_sampling")?;
        self.teacher_sampling.validate("teacher_sampling")?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", format!("must be positive, got {}", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be >= 1"));
        }
        if self.validation_interval == 0 {
            return Err(Error::config("validation_interval", "must be >= 1"));
        }
        if self.report_window == 0 {
            return Err(Error::config("report_window", "must be >= 1"));
        }
        Ok(())
    }

    pub fn settings(&self) -> GenerationSettings {
        GenerationSettings {
            student_sampling: self.student_sampling,
            teacher_sampling: self.teacher_sampling,
            switch: SwitchConfig { metric: self.metric, ..self.switch },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: usize,
    pub student: TabularLM,
    pub validation_loss: f64,
    pub accuracy: f64,
}

/// One optimisation step as written to the trace log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub switch_index: Option<usize>,
    #[serde(flatten)]
    pub trace: GenerationTrace,
    /// Forward passes spent computing the loss (on top of `trace.calls`).
    pub loss_calls: ForwardCalls,
}

impl StepRecord {
    pub fn total_calls(&self) -> ForwardCalls {
        let mut total = self.trace.calls;
        total += self.loss_calls;
        total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub step: usize,
    pub validation_loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillRun {
    /// Student from the lowest-validation-loss checkpoint.
    pub student: TabularLM,
    pub checkpoints: Vec<Checkpoint>,
    pub steps: Vec<StepRecord>,
    pub validations: Vec<ValidationRecord>,
    pub report: RunReport,
}

impl DistillRun {
    pub fn best_checkpoint(&self) -> &Checkpoint {
        best_by_loss(&self.checkpoints)
    }
}

fn best_by_loss(checkpoints: &[Checkpoint]) -> &Checkpoint {
    checkpoints
        .iter()
        .reduce(|best, c| if c.validation_loss < best.validation_loss { c } else { best })
        .expect("at least the step-0 checkpoint")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub mean_divergence: f64,
}

/// Greedy decoding up to `max_len` tokens or EOS.
pub fn greedy_decode<M: LanguageModel + ?Sized>(model: &M, prompt: &[TokenId], max_len: usize) -> Vec<TokenId> {
    let eos = model.vocab().eos;
    let greedy = SamplingConfig::greedy();
    let mut context = prompt.to_vec();
    let mut out = Vec::new();
    while out.len() < max_len {
        let token = next_dist(model, &context, &greedy).argmax();
        out.push(token);
        context.push(token);
        if token == eos {
            break;
        }
    }
    out
}

/// Greedy exact-match accuracy and mean forward-KL sequence divergence to
/// the teacher over the ground-truth targets.
pub fn evaluate<M, T>(model: &M, teacher: &T, examples: &[Example], max_len: usize) -> Result<Evaluation>
where
    M: LanguageModel + ?Sized,
    T: LanguageModel + ?Sized,
{
    if examples.is_empty() {
        return Err(Error::config("dataset", "evaluation needs at least one example"));
    }
    Ok(Evaluation {
        accuracy: accuracy(model, examples, max_len),
        mean_divergence: mean_divergence(teacher, model, examples)?,
    })
}

pub fn accuracy<M: LanguageModel + ?Sized>(model: &M, examples: &[Example], max_len: usize) -> f64 {
    let vocab = *model.vocab();
    let hits =
        examples.iter().filter(|e| exact_match(&greedy_decode(model, &e.prompt, max_len), &e.target, &vocab)).count();
    hits as f64 / examples.len() as f64
}

/// Mean forward-KL sequence divergence over ground-truth targets.
pub fn mean_divergence<T, M>(teacher: &T, model: &M, examples: &[Example]) -> Result<f64>
where
    T: LanguageModel + ?Sized,
    M: LanguageModel + ?Sized,
{
    let metric = DivergenceMetric::default();
    let mut total = 0.0;
    for e in examples {
        total += sequence_divergence(&metric, teacher, model, &e.prompt, &e.target)?;
    }
    Ok(total / examples.len() as f64)
}

/// Mean per-token NLL of the ground-truth targets.
pub fn mean_nll(model: &TabularLM, examples: &[Example]) -> Result<f64> {
    let mut total = 0.0;
    for e in examples {
        total += nll_and_gradient(model, &e.prompt, &e.target)?.0;
    }
    Ok(total / examples.len() as f64)
}

/// Runs distillation of `student` towards the frozen `teacher`.
pub fn distill(teacher: &TabularLM, student: TabularLM, data: &Dataset, cfg: &KDConfig) -> Result<DistillRun> {
    cfg.validate()?;
    for (name, split) in [("train", &data.train), ("valid", &data.valid), ("test", &data.test)] {
        if split.is_empty() {
            return Err(Error::config(format!("dataset.{name}"), "split is empty"));
        }
    }
    if teacher.vocab() != student.vocab() {
        return Err(Error::contract("teacher and student vocabularies differ"));
    }
    let settings = cfg.settings();
    let max_len = settings.switch.max_len;
    let mut student = student;
    let mut checkpoints = Vec::new();
    let mut validations = Vec::new();
    let mut steps = Vec::new();

    let mut validate = |step: usize, student: &TabularLM| -> Result<()> {
        let validation_loss = mean_divergence(teacher, student, &data.valid)?;
        let acc = accuracy(student, &data.test, max_len);
        validations.push(ValidationRecord { step, validation_loss, accuracy: acc });
        checkpoints.push(Checkpoint { step, student: student.clone(), validation_loss, accuracy: acc });
        Ok(())
    };
    validate(0, &student)?;

    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let epoch_label = format!("epoch-{epoch}");
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut substream(cfg.seed, &["shuffle", &epoch_label]));
        for index in order {
            step += 1;
            let example = &data.train[index];
            let mut rng = substream(cfg.seed, &["policy", &epoch_label, &example.id]);
            let mut mix_rng = substream(cfg.seed, &["mix", &epoch_label, &example.id]);
            let trace = select_target(&cfg.policy, &student, teacher, example, &settings, &mut mix_rng, &mut rng)?;
            let n = trace.tokens.len() as u64;
            let (loss, gradient, loss_calls) = if cfg.policy.uses_nll() {
                let (loss, g) = nll_and_gradient(&student, &trace.prompt, &trace.tokens)?;
                (loss, g, ForwardCalls { student: n, teacher: 0 })
            } else {
                let (loss, g) = loss_and_gradient(&student, teacher, &trace.prompt, &trace.tokens, &cfg.metric)?;
                (loss, g, ForwardCalls { student: n, teacher: n })
            };
            student.apply_gradient(&gradient, cfg.learning_rate);
            steps.push(StepRecord { step, epoch, loss, switch_index: trace.switch_index(), trace, loss_calls });
            if step % cfg.validation_interval == 0 {
                validate(step, &student)?;
            }
        }
    }
    if step % cfg.validation_interval != 0 {
        validate(step, &student)?;
    }

    let report = aggregate(&steps, &validations, cfg.report_window);
    let best = best_by_loss(&checkpoints).student.clone();
    Ok(DistillRun { student: best, checkpoints, steps, validations, report })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SftCheckpoint {
    pub epoch: usize,
    pub validation_nll: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SftRun {
    /// Lowest-validation-NLL snapshot, with role set to teacher.
    pub model: TabularLM,
    pub checkpoints: Vec<SftCheckpoint>,
    pub selected_epoch: usize,
}

/// Fine-tunes a teacher on the ground truth by per-example NLL SGD,
/// keeping the epoch with the lowest validation NLL (epoch 0 included).
pub fn sft_teacher(
    teacher: TabularLM,
    train: &[Example],
    valid: &[Example],
    epochs: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<SftRun> {
    if train.is_empty() || valid.is_empty() {
        return Err(Error::config("dataset", "teacher fine-tuning needs train and valid examples"));
    }
    if !(learning_rate > 0.0 && learning_rate.is_finite()) {
        return Err(Error::config("teacher_sft.learning_rate", format!("must be positive, got {learning_rate}")));
    }
    let mut model = teacher;
    let mut best = (0, mean_nll(&model, valid)?, model.clone());
    let mut checkpoints = vec![SftCheckpoint { epoch: 0, validation_nll: best.1 }];
    for epoch in 1..=epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut substream(seed, &["sft-shuffle", &format!("epoch-{epoch}")]));
        for index in order {
            let example = &train[index];
            let (_, gradient) = nll_and_gradient(&model, &example.prompt, &example.target)?;
            model.apply_gradient(&gradient, learning_rate);
        }
        let validation_nll = mean_nll(&model, valid)?;
        checkpoints.push(SftCheckpoint { epoch, validation_nll });
        if validation_nll < best.1 {
            best = (epoch, validation_nll, model.clone());
        }
    }
    let (selected_epoch, _, mut model) = best;
    model.set_role(Role::Teacher);
    Ok(SftRun { model, checkpoints, selected_epoch })
}

/// Forward passes one policy spends over `examples` with frozen models:
/// generation plus loss evaluation, no parameter updates.
pub fn forward_call_audit(
    policy: &PolicyKind,
    student: &TabularLM,
    teacher: &TabularLM,
    examples: &[Example],
    cfg: &KDConfig,
) -> Result<ForwardCalls> {
    let settings = cfg.settings();
    let mut total = ForwardCalls::default();
    for example in examples {
        let mut rng = substream(cfg.seed, &["audit", &example.id]);
        let mut mix_rng = substream(cfg.seed, &["audit-mix", &example.id]);
        let trace = select_target(policy, student, teacher, example, &settings, &mut mix_rng, &mut rng)?;
        let n = trace.tokens.len() as u64;
        total += trace.calls;
        total += if policy.uses_nll() {
            ForwardCalls { student: n, teacher: 0 }
        } else {
            ForwardCalls { student: n, teacher: n }
        };
    }
    Ok(total)
}
