//! Experiment configuration: a single JSON document layered over defaults,
//! with flat `key.path=value` overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::corpus::{LengthRange, TaskKind, TaskSpec, Vocab};
use crate::divergence::{DivergenceKind, DivergenceMetric, DEFAULT_EPSILON};
use crate::model::SamplingConfig;
use crate::policies::{CallWeights, PolicyKind};
use crate::switching::SwitchConfig;
use crate::trainer::KDConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub kind: TaskKind,
    pub vocab_size: u32,
    /// Body tokens, BOS excluded. `null` takes the kind's default.
    pub prompt_len: Option<LengthRange>,
    /// Target tokens including EOS. `null` takes the kind's default.
    pub target_len: Option<LengthRange>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Context order `m`.
    pub order: usize,
    /// Initialisation seed; `null` uses the run seed.
    pub init_seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SftConfig {
    pub epochs: usize,
    pub learning_rate: f64,
}

/// Distillation settings, flattened for `--set`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdSection {
    pub policy: String,
    pub mix_probability: f64,
    pub k_skd: f64,
    pub window: usize,
    pub multiplier: f64,
    pub max_len: usize,
    pub metric: DivergenceKind,
    pub epsilon: f64,
    pub student_sampling: SamplingConfig,
    pub teacher_sampling: SamplingConfig,
    pub learning_rate: f64,
    pub epochs: usize,
    pub validation_interval: usize,
    pub report_window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub multipliers: Vec<f64>,
    pub windows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub task: TaskConfig,
    pub data: DataConfig,
    pub teacher: ModelConfig,
    pub student: ModelConfig,
    pub teacher_sft: SftConfig,
    pub kd: KdSection,
    pub call_weights: CallWeights,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let kd = KDConfig::default();
        ExperimentConfig {
            seed: 0,
            task: TaskConfig { kind: TaskKind::Copy, vocab_size: 16, prompt_len: None, target_len: None },
            data: DataConfig { n_train: 1000, n_valid: 200, n_test: 500 },
            teacher: ModelConfig { order: 3, init_seed: None },
            student: ModelConfig { order: 2, init_seed: None },
            teacher_sft: SftConfig { epochs: 10, learning_rate: 0.5 },
            kd: KdSection {
                policy: kd.policy.name().to_string(),
                mix_probability: 0.5,
                k_skd: 0.5,
                window: kd.switch.window,
                multiplier: kd.switch.multiplier,
                max_len: kd.switch.max_len,
                metric: kd.metric.kind,
                epsilon: DEFAULT_EPSILON,
                student_sampling: kd.student_sampling,
                teacher_sampling: kd.teacher_sampling,
                learning_rate: kd.learning_rate,
                epochs: kd.epochs,
                validation_interval: kd.validation_interval,
                report_window: kd.report_window,
            },
            call_weights: CallWeights::default(),
            sweep: SweepConfig { multipliers: vec![2.0, 3.0, 4.0, 5.0], windows: vec![5, 10, 15, 20] },
        }
    }
}

impl ExperimentConfig {
    /// Builds a config from an optional JSON document and `key=value`
    /// overrides. A manifest written by a previous run is accepted in place
    /// of a config file.
    pub fn resolve(document: Option<Value>, overrides: &[String]) -> Result<Self> {
        let mut value = serde_json::to_value(ExperimentConfig::default())?;
        if let Some(mut doc) = document {
            if doc_is_manifest(&doc) {
                doc = doc["config"].take();
            }
            let mut unknown = Vec::new();
            merge(&mut value, doc, "", &mut unknown);
            unknown.sort();
            if !unknown.is_empty() {
                return Err(Error::UnknownKeys(unknown));
            }
        }
        let mut unknown = Vec::new();
        for o in overrides {
            let (key, raw) =
                o.split_once('=').ok_or_else(|| Error::config("--set", format!("expected key=value, got `{o}`")))?;
            let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut value, key, parsed, &mut unknown)?;
        }
        if !unknown.is_empty() {
            return Err(Error::UnknownKeys(unknown));
        }
        let cfg: ExperimentConfig =
            serde_json::from_value(value).map_err(|e| Error::config("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let doc: Value =
            serde_json::from_str(&text).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        ExperimentConfig::resolve(Some(doc), overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.task_spec()?;
        self.kd_config()?.validate()?;
        if self.data.n_train == 0 || self.data.n_valid == 0 || self.data.n_test == 0 {
            return Err(Error::config("data", "every split needs at least one example"));
        }
        for (field, m) in [("teacher.order", self.teacher.order), ("student.order", self.student.order)] {
            if m == 0 {
                return Err(Error::config(field, "context order must be >= 1"));
            }
        }
        if !(self.teacher_sft.learning_rate > 0.0 && self.teacher_sft.learning_rate.is_finite()) {
            return Err(Error::config("teacher_sft.learning_rate", "must be positive"));
        }
        if self.sweep.multipliers.is_empty() || self.sweep.windows.is_empty() {
            return Err(Error::config("sweep", "grids must be nonempty"));
        }
        if self.call_weights.student < 0.0 || self.call_weights.teacher < 0.0 {
            return Err(Error::config("call_weights", "weights must be non-negative"));
        }
        Ok(())
    }

    pub fn task_spec(&self) -> Result<TaskSpec> {
        let vocab = Vocab::new(self.task.vocab_size).map_err(|e| Error::config("task.vocab_size", e.to_string()))?;
        let defaults = TaskSpec::desk_default(self.task.kind, self.seed);
        let spec = TaskSpec {
            kind: self.task.kind,
            vocab,
            prompt_len: self.task.prompt_len.unwrap_or(defaults.prompt_len),
            target_len: self.task.target_len.unwrap_or(defaults.target_len),
            seed: self.seed,
        };
        spec.validate()?;
        if spec.target_len.max > self.kd.max_len {
            return Err(Error::config(
                "task.target_len",
                format!("max {} exceeds the decoding limit {}", spec.target_len.max, self.kd.max_len),
            ));
        }
        Ok(spec)
    }

    pub fn policy(&self) -> Result<PolicyKind> {
        let policy = match self.kd.policy.parse()? {
            PolicyKind::Imitkd { .. } => PolicyKind::Imitkd { mix_probability: self.kd.mix_probability },
            PolicyKind::Skd { .. } => PolicyKind::Skd { k_skd: self.kd.k_skd },
            other => other,
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn kd_config(&self) -> Result<KDConfig> {
        let metric = DivergenceMetric { kind: self.kd.metric, epsilon: self.kd.epsilon };
        Ok(KDConfig {
            policy: self.policy()?,
            switch: SwitchConfig {
                window: self.kd.window,
                multiplier: self.kd.multiplier,
                metric,
                max_len: self.kd.max_len,
            },
            student_sampling: self.kd.student_sampling,
            teacher_sampling: self.kd.teacher_sampling,
            learning_rate: self.kd.learning_rate,
            epochs: self.kd.epochs,
            seed: self.seed,
            metric,
            validation_interval: self.kd.validation_interval,
            report_window: self.kd.report_window,
        })
    }

    pub fn teacher_seed(&self) -> u64 {
        self.teacher.init_seed.unwrap_or(self.seed)
    }

    pub fn student_seed(&self) -> u64 {
        self.student.init_seed.unwrap_or(self.seed)
    }

    /// Compact JSON of the resolved config; the hash input.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

fn doc_is_manifest(doc: &Value) -> bool {
    doc.get("manifest_version").is_some()
}

/// Overlays `src` onto `dst`, recording keys absent from `dst`.
fn merge(dst: &mut Value, src: Value, prefix: &str, unknown: &mut Vec<String>) {
    match (dst, src) {
        (Value::Object(d), Value::Object(s)) => {
            for (k, v) in s {
                let path = join(prefix, &k);
                match d.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v, &path, unknown),
                    Some(slot) => *slot = v,
                    None => unknown.push(path),
                }
            }
        }
        (d, s) => *d = s,
    }
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

/// Key tree accepted by `--set`: the defaults with optional sections
/// filled in.
fn schema() -> Value {
    let mut cfg = ExperimentConfig::default();
    let spec = TaskSpec::desk_default(cfg.task.kind, 0);
    cfg.task.prompt_len = Some(spec.prompt_len);
    cfg.task.target_len = Some(spec.target_len);
    cfg.teacher.init_seed = Some(0);
    cfg.student.init_seed = Some(0);
    serde_json::to_value(cfg).expect("config serialises")
}

fn set_path(root: &mut Value, key: &str, new: Value, unknown: &mut Vec<String>) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut known = &schema();
    for part in &parts {
        match known.get(part) {
            Some(v) => known = v,
            None => {
                unknown.push(key.to_string());
                return Ok(());
            }
        }
    }
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut node = root;
    for part in parents {
        if node.is_null() {
            *node = Value::Object(Map::new());
        }
        let Value::Object(map) = node else {
            return Err(Error::config(key, "path descends into a non-object value"));
        };
        node = map.entry((*part).to_string()).or_insert(Value::Null);
    }
    if node.is_null() {
        *node = Value::Object(Map::new());
    }
    match node {
        Value::Object(map) => {
            map.insert((*last).to_string(), new);
            Ok(())
        }
        _ => Err(Error::config(key, "path descends into a non-object value")),
    }
}
