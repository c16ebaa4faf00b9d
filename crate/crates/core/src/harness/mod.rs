//! Experiment orchestration: data, teacher fine-tuning, distillation,
//! comparisons, sweeps and oracle batteries, each writing its artifacts
//! and a manifest under one output directory.

pub mod cli;
pub mod config;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{generate_dataset, write_jsonl, Dataset, Example, Vocab};
use crate::divergence::{sequence_divergence, DivergenceMetric};
use crate::model::{LanguageModel, Role, SamplingConfig, TabularLM};
use crate::oracle::{exact_expected_sequence_divergence, replay_switch_check, EnumeratedPolicy, EnumerationSpec};
use crate::policies::{select_target_on_policy, select_target_seqkd, ForwardCalls, PolicyKind};
use crate::rng::substream;
use crate::switching::{adaswitch_generate, SwitchConfig};
use crate::telemetry::{read_trace_log, write_trace_log, RunReport};
use crate::trainer::{accuracy, distill, sft_teacher, DistillRun, KDConfig, SftRun};
use crate::{Error, Result, TokenId};

pub use config::ExperimentConfig;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: ExperimentConfig,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
}

/// Creates `out`, refusing a non-empty directory unless `force`.
pub fn prepare_out_dir(out: &Path, force: bool) -> Result<()> {
    if out.exists() {
        let mut entries = std::fs::read_dir(out).map_err(|e| Error::io(out.display().to_string(), e))?;
        if entries.next().is_some() && !force {
            return Err(Error::OutputExists(out.to_path_buf()));
        }
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))
}

/// Accumulates artifact paths for the manifest.
#[derive(Debug)]
pub struct Artifacts {
    root: PathBuf,
    files: Vec<String>,
}

impl Artifacts {
    pub fn new(root: &Path) -> Self {
        Artifacts { root: root.to_path_buf(), files: Vec::new() }
    }

    /// Absolute path for `relative`, creating parent directories.
    pub fn path(&mut self, relative: &str) -> Result<PathBuf> {
        let path = self.root.join(relative);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
        self.files.push(relative.to_string());
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, relative: &str, value: &T) -> Result<()> {
        let path = self.path(relative)?;
        let text = serde_json::to_string_pretty(value)? + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn finish(mut self, command: &str, cfg: &ExperimentConfig) -> Result<Manifest> {
        self.files.sort();
        self.files.dedup();
        let manifest = Manifest {
            manifest_version: MANIFEST_VERSION,
            command: command.to_string(),
            seed: cfg.seed,
            config_hash: cfg.hash(),
            config: cfg.clone(),
            artifacts: self.files,
        };
        let path = self.root.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(manifest)
    }
}

pub fn build_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    generate_dataset(&cfg.task_spec()?, cfg.data.n_train, cfg.data.n_valid, cfg.data.n_test)
}

pub fn vocab(cfg: &ExperimentConfig) -> Result<Vocab> {
    Ok(cfg.task_spec()?.vocab)
}

pub fn train_teacher(cfg: &ExperimentConfig, data: &Dataset) -> Result<SftRun> {
    let init = TabularLM::random(vocab(cfg)?, cfg.teacher.order, Role::Teacher, cfg.teacher_seed())?;
    sft_teacher(init, &data.train, &data.valid, cfg.teacher_sft.epochs, cfg.teacher_sft.learning_rate, cfg.seed)
}

pub fn initial_student(cfg: &ExperimentConfig) -> Result<TabularLM> {
    TabularLM::random(vocab(cfg)?, cfg.student.order, Role::Student, cfg.student_seed())
}

fn write_dataset(artifacts: &mut Artifacts, data: &Dataset) -> Result<()> {
    for (name, split) in [("train", &data.train), ("valid", &data.valid), ("test", &data.test)] {
        write_jsonl(&artifacts.path(&format!("data/{name}.jsonl"))?, split)?;
    }
    Ok(())
}

pub fn gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest> {
    let data = build_dataset(cfg)?;
    let mut artifacts = Artifacts::new(out);
    write_dataset(&mut artifacts, &data)?;
    artifacts.finish("gen-data", cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherSummary {
    pub selected_epoch: usize,
    pub checkpoints: Vec<crate::trainer::SftCheckpoint>,
    pub test_accuracy: f64,
    pub fingerprint: String,
}

pub fn run_sft_teacher(cfg: &ExperimentConfig, out: &Path) -> Result<(Manifest, TeacherSummary)> {
    let data = build_dataset(cfg)?;
    let run = train_teacher(cfg, &data)?;
    let summary = TeacherSummary {
        selected_epoch: run.selected_epoch,
        checkpoints: run.checkpoints.clone(),
        test_accuracy: accuracy(&run.model, &data.test, cfg.kd.max_len),
        fingerprint: run.model.fingerprint(),
    };
    let mut artifacts = Artifacts::new(out);
    write_dataset(&mut artifacts, &data)?;
    run.model.save_json(&artifacts.path("teacher.json")?)?;
    artifacts.write_json("teacher_sft.json", &summary)?;
    Ok((artifacts.finish("sft-teacher", cfg)?, summary))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSummary {
    pub step: usize,
    pub validation_loss: f64,
    pub accuracy: f64,
}

/// Writes a distillation run's student, trace log, report and checkpoint
/// list under `prefix` (empty or ending in `/`).
fn write_run(artifacts: &mut Artifacts, prefix: &str, run: &DistillRun) -> Result<()> {
    run.student.save_json(&artifacts.path(&format!("{prefix}student.json"))?)?;
    write_trace_log(&artifacts.path(&format!("{prefix}trace.jsonl"))?, &run.steps, &run.validations)?;
    let csv = artifacts.path(&format!("{prefix}report.csv"))?;
    let json = artifacts.path(&format!("{prefix}report.json"))?;
    run.report.save(&csv, &json)?;
    let checkpoints: Vec<CheckpointSummary> = run
        .checkpoints
        .iter()
        .map(|c| CheckpointSummary { step: c.step, validation_loss: c.validation_loss, accuracy: c.accuracy })
        .collect();
    artifacts.write_json(&format!("{prefix}checkpoints.json"), &checkpoints)
}

pub fn run_distill(cfg: &ExperimentConfig, out: &Path) -> Result<(Manifest, DistillRun)> {
    let kd = cfg.kd_config()?;
    let data = build_dataset(cfg)?;
    let teacher = train_teacher(cfg, &data)?.model;
    let run = distill(&teacher, initial_student(cfg)?, &data, &kd)?;
    let mut artifacts = Artifacts::new(out);
    teacher.save_json(&artifacts.path("teacher.json")?)?;
    write_run(&mut artifacts, "", &run)?;
    Ok((artifacts.finish("distill", cfg)?, run))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub policy: String,
    pub accuracy: f64,
    pub val_loss: f64,
    pub s_calls: u64,
    pub t_calls: u64,
}

fn run_summary(run: &DistillRun) -> (f64, f64, ForwardCalls) {
    let best = run.best_checkpoint();
    (best.accuracy, best.validation_loss, run.report.total_calls())
}

/// All seven policies against one teacher and one initial student.
pub fn run_compare(cfg: &ExperimentConfig, out: &Path) -> Result<(Manifest, Vec<CompareRow>)> {
    let base = cfg.kd_config()?;
    let data = build_dataset(cfg)?;
    let teacher = train_teacher(cfg, &data)?.model;
    let student = initial_student(cfg)?;
    let mut artifacts = Artifacts::new(out);
    teacher.save_json(&artifacts.path("teacher.json")?)?;
    student.save_json(&artifacts.path("student_init.json")?)?;

    let policies = PolicyKind::ALL.map(|p| match p {
        PolicyKind::Imitkd { .. } => PolicyKind::Imitkd { mix_probability: cfg.kd.mix_probability },
        PolicyKind::Skd { .. } => PolicyKind::Skd { k_skd: cfg.kd.k_skd },
        other => other,
    });
    let runs = parallel_map(&policies, |policy| {
        distill(&teacher, student.clone(), &data, &KDConfig { policy: *policy, ..base })
    })?;
    let mut rows = Vec::new();
    for (policy, run) in policies.iter().zip(&runs) {
        write_run(&mut artifacts, &format!("runs/{}/", policy.name()), run)?;
        let (accuracy, val_loss, calls) = run_summary(run);
        rows.push(CompareRow {
            policy: policy.name().to_string(),
            accuracy,
            val_loss,
            s_calls: calls.student,
            t_calls: calls.teacher,
        });
    }
    write_csv(&artifacts.path("compare.csv")?, &rows)?;
    Ok((artifacts.finish("compare", cfg)?, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub multiplier: f64,
    pub window: usize,
    pub accuracy: f64,
    pub val_loss: f64,
    pub switch_rate: f64,
    pub s_calls: u64,
    pub t_calls: u64,
}

/// AdaSwitch over the K x L grid.
pub fn run_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<(Manifest, Vec<SweepRow>)> {
    let base = KDConfig { policy: PolicyKind::Adaswitch, ..cfg.kd_config()? };
    let data = build_dataset(cfg)?;
    let teacher = train_teacher(cfg, &data)?.model;
    let student = initial_student(cfg)?;
    let grid: Vec<(f64, usize)> =
        cfg.sweep.multipliers.iter().flat_map(|&k| cfg.sweep.windows.iter().map(move |&l| (k, l))).collect();
    let runs = parallel_map(&grid, |&(multiplier, window)| {
        let kd = KDConfig { switch: SwitchConfig { window, multiplier, ..base.switch }, ..base };
        distill(&teacher, student.clone(), &data, &kd)
    })?;
    let mut artifacts = Artifacts::new(out);
    teacher.save_json(&artifacts.path("teacher.json")?)?;
    let mut rows = Vec::new();
    for (&(multiplier, window), run) in grid.iter().zip(&runs) {
        write_run(&mut artifacts, &format!("runs/k{multiplier}-l{window}/"), run)?;
        let (accuracy, val_loss, calls) = run_summary(run);
        let switched = run.steps.iter().filter(|s| s.switch_index.is_some()).count();
        rows.push(SweepRow {
            multiplier,
            window,
            accuracy,
            val_loss,
            switch_rate: switched as f64 / run.steps.len().max(1) as f64,
            s_calls: calls.student,
            t_calls: calls.teacher,
        });
    }
    write_csv(&artifacts.path("sweep.csv")?, &rows)?;
    Ok((artifacts.finish("sweep", cfg)?, rows))
}

/// Re-derives report CSV/JSON from a trace log.
pub fn run_report(cfg: &ExperimentConfig, trace: &Path, out: &Path) -> Result<(Manifest, RunReport)> {
    let (steps, validations) = read_trace_log(trace)?;
    let report = crate::telemetry::aggregate(&steps, &validations, cfg.kd.report_window);
    let mut artifacts = Artifacts::new(out);
    let csv = artifacts.path("report.csv")?;
    let json = artifacts.path("report.json")?;
    report.save(&csv, &json)?;
    Ok((artifacts.finish("report", cfg)?, report))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

/// Runs `f` over `items` on scoped threads, preserving order.
fn parallel_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> Result<U> + Sync) -> Result<Vec<U>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len()).max(1);
    let chunk = items.len().div_ceil(workers).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> =
            items.chunks(chunk).map(|part| scope.spawn(|| part.iter().map(&f).collect::<Result<Vec<U>>>())).collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("worker panicked")?);
        }
        Ok(out)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnumerationCheck {
    pub policy: String,
    pub exact: f64,
    pub monte_carlo: f64,
    pub standard_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub enumeration: Vec<EnumerationCheck>,
    pub replay_traces: usize,
    pub replay_failures: usize,
}

impl OracleSummary {
    pub fn pass(&self) -> bool {
        self.replay_failures == 0 && self.enumeration.iter().all(|c| c.pass)
    }
}

/// Small random models for the enumeration battery: vocab 4, length 4.
pub fn oracle_models(seed: u64) -> Result<(TabularLM, TabularLM)> {
    let vocab = Vocab::new(4)?;
    let mut student = TabularLM::random(vocab, 2, Role::Student, seed)?;
    let mut teacher = TabularLM::random(vocab, 2, Role::Teacher, seed)?;
    // the default init is near-uniform; spread the rows so the models differ
    let mut rng = substream(seed, &["oracle-models"]);
    for m in [&mut student, &mut teacher] {
        for r in 0..m.num_rows() {
            for x in m.row_mut(r) {
                *x = rand::Rng::gen_range(&mut rng, -2.0..2.0);
            }
        }
    }
    Ok((student, teacher))
}

/// Monte Carlo mean and standard error of the sequence divergence of
/// `samples` traces drawn by `draw`.
pub fn monte_carlo<F>(samples: usize, mut draw: F) -> Result<(f64, f64)>
where
    F: FnMut(usize) -> Result<f64>,
{
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for i in 0..samples {
        let d = draw(i)?;
        sum += d;
        sum_sq += d * d;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Enumeration-versus-sampling checks for on-policy, teacher rollout and
/// greedy-continuation AdaSwitch, plus switch replays on sampled traces.
pub fn oracle_battery(seed: u64, samples: usize) -> Result<OracleSummary> {
    let (student, teacher) = oracle_models(seed)?;
    let vocab = *student.vocab();
    let prompt: Vec<TokenId> = vec![vocab.bos, 0];
    let example = Example { id: "oracle".into(), prompt: prompt.clone(), target: vec![vocab.eos] };
    let metric = DivergenceMetric::default();
    let spec = EnumerationSpec::new(4);
    let full = SamplingConfig::new(1.0, 1.0);
    let greedy = SamplingConfig::greedy();
    let switch = SwitchConfig { window: 1, multiplier: 1.5, metric, max_len: spec.max_len };
    let seq = |tokens: &[TokenId]| sequence_divergence(&metric, &teacher, &student, &prompt, tokens);

    let mut enumeration = Vec::new();
    let mut replay_traces = 0;
    let mut replay_failures = 0;
    let cases = [
        ("on_policy", EnumeratedPolicy::OnPolicy { sampling: full }),
        ("teacher_rollout", EnumeratedPolicy::TeacherRollout { sampling: full }),
        (
            "adaswitch_greedy",
            EnumeratedPolicy::Adaswitch {
                student_sampling: full,
                teacher_sampling: greedy,
                window: switch.window,
                multiplier: switch.multiplier,
                switch_metric: metric,
            },
        ),
    ];
    for (name, policy) in cases {
        let exact = exact_expected_sequence_divergence(&policy, &student, &teacher, &prompt, &metric, &spec)?.expected;
        let mut rng = substream(seed, &["oracle", name]);
        let (mc, se) = monte_carlo(samples, |_| {
            let trace = match policy {
                EnumeratedPolicy::OnPolicy { .. } => {
                    select_target_on_policy(&student, &example, &full, spec.max_len, &mut rng)?
                }
                EnumeratedPolicy::TeacherRollout { .. } => {
                    select_target_seqkd(&teacher, &example, &full, spec.max_len, &mut rng)?
                }
                EnumeratedPolicy::Adaswitch { .. } => {
                    let t = adaswitch_generate(&student, &teacher, &example, &full, &greedy, &switch, &mut rng)?;
                    replay_traces += 1;
                    if !replay_switch_check(&t, &switch) {
                        replay_failures += 1;
                    }
                    t
                }
            };
            seq(&trace.tokens)
        })?;
        enumeration.push(EnumerationCheck {
            policy: name.to_string(),
            exact,
            monte_carlo: mc,
            standard_error: se,
            pass: (mc - exact).abs() <= 3.0 * se,
        });
    }
    Ok(OracleSummary { enumeration, replay_traces, replay_failures })
}

pub fn run_oracle_check(cfg: &ExperimentConfig, out: &Path) -> Result<(Manifest, OracleSummary)> {
    let summary = oracle_battery(cfg.seed, 50_000)?;
    let mut artifacts = Artifacts::new(out);
    artifacts.write_json("oracle.json", &summary)?;
    Ok((artifacts.finish("oracle-check", cfg)?, summary))
}
