//! Switch statistics, windowed run reports and the forward-call runtime
//! proxy.
//!
//! Reports are a pure fold over the step log, so a report written during
//! training and one re-derived from the trace JSONL are identical.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::policies::{CallWeights, ForwardCalls, GenerationTrace};
use crate::trainer::{StepRecord, ValidationRecord};
use crate::{Error, Result};

/// CSV header, in emitted order.
pub const CSV_COLUMNS: [&str; 9] =
    ["step", "switch_rate", "d_at_switch", "rel_pos", "train_loss", "val_loss", "accuracy", "s_calls", "t_calls"];

/// Fraction of traces whose switch fired.
pub fn switch_rate(traces: &[GenerationTrace]) -> Result<f64> {
    if traces.is_empty() {
        return Err(Error::contract("switch rate over an empty trace collection"));
    }
    let switched = traces.iter().filter(|t| t.switch.is_some()).count();
    Ok(switched as f64 / traces.len() as f64)
}

/// Share of a switched trace's tokens that the student produced.
/// `None` when the trace never switched.
pub fn relative_switch_position(trace: &GenerationTrace) -> Option<f64> {
    let index = trace.switch_index()?;
    Some((index - 1) as f64 / trace.tokens.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowRow {
    /// Last step in the window.
    pub step: usize,
    pub switch_rate: f64,
    /// Absent when no trace in the window switched.
    pub d_at_switch: Option<f64>,
    pub rel_pos: Option<f64>,
    pub train_loss: f64,
    /// Latest validation at or before `step`.
    pub val_loss: Option<f64>,
    pub accuracy: Option<f64>,
    /// Cumulative from step 1, generation and loss passes.
    pub s_calls: u64,
    pub t_calls: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub window: usize,
    pub rows: Vec<WindowRow>,
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Folds a step log into `window`-step rows. A trailing partial window
/// gets its own row.
pub fn aggregate(steps: &[StepRecord], validations: &[ValidationRecord], window: usize) -> RunReport {
    let window = window.max(1);
    let mut rows = Vec::new();
    let mut cumulative = ForwardCalls::default();
    for chunk in steps.chunks(window) {
        let mut d_switch = Vec::new();
        let mut rel = Vec::new();
        let mut losses = Vec::with_capacity(chunk.len());
        for s in chunk {
            cumulative += s.total_calls();
            losses.push(s.loss);
            if let Some(event) = &s.trace.switch {
                d_switch.push(event.divergence_at_switch);
            }
            if let Some(r) = relative_switch_position(&s.trace) {
                rel.push(r);
            }
        }
        let step = chunk.last().map_or(0, |s| s.step);
        let validation = validations.iter().rev().find(|v| v.step <= step);
        rows.push(WindowRow {
            step,
            switch_rate: d_switch.len() as f64 / chunk.len() as f64,
            d_at_switch: mean(&d_switch),
            rel_pos: mean(&rel),
            train_loss: mean(&losses).unwrap_or(0.0),
            val_loss: validation.map(|v| v.validation_loss),
            accuracy: validation.map(|v| v.accuracy),
            s_calls: cumulative.student,
            t_calls: cumulative.teacher,
        });
    }
    RunReport { window, rows }
}

impl RunReport {
    pub fn total_calls(&self) -> ForwardCalls {
        self.rows.last().map_or(ForwardCalls::default(), |r| ForwardCalls { student: r.s_calls, teacher: r.t_calls })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_COLUMNS)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.step.to_string(),
                r.switch_rate.to_string(),
                opt(r.d_at_switch),
                opt(r.rel_pos),
                r.train_loss.to_string(),
                opt(r.val_loss),
                opt(r.accuracy),
                r.s_calls.to_string(),
                r.t_calls.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("flushing report csv", e))?;
        Ok(())
    }

    pub fn save(&self, csv_path: &Path, json_path: &Path) -> Result<()> {
        let file = std::fs::File::create(csv_path).map_err(|e| Error::io(csv_path.display().to_string(), e))?;
        self.write_csv(file)?;
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(json_path, json + "\n").map_err(|e| Error::io(json_path.display().to_string(), e))
    }
}

/// Weighted cost of `a` relative to `b`.
pub fn runtime_proxy(a: &RunReport, b: &RunReport, weights: &CallWeights) -> Result<f64> {
    let denominator = b.total_calls().weighted(weights);
    if denominator <= 0.0 {
        return Err(Error::contract("reference report has no forward calls"));
    }
    Ok(a.total_calls().weighted(weights) / denominator)
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    Step(StepRecord),
    Validation(ValidationRecord),
}

/// Writes steps and validations interleaved in step order; a validation
/// follows the step it was taken after.
pub fn write_trace_log(path: &Path, steps: &[StepRecord], validations: &[ValidationRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = std::io::BufWriter::new(file);
    let mut pending = validations.iter().peekable();
    let emit = |event: &LogEvent, out: &mut std::io::BufWriter<std::fs::File>| -> Result<()> {
        serde_json::to_writer(&mut *out, event)?;
        out.write_all(b"\n").map_err(|e| Error::io(path.display().to_string(), e))
    };
    while let Some(v) = pending.next_if(|v| v.step == 0) {
        emit(&LogEvent::Validation(*v), &mut out)?;
    }
    for s in steps {
        emit(&LogEvent::Step(s.clone()), &mut out)?;
        while let Some(v) = pending.next_if(|v| v.step <= s.step) {
            emit(&LogEvent::Validation(*v), &mut out)?;
        }
    }
    for v in pending {
        emit(&LogEvent::Validation(*v), &mut out)?;
    }
    out.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_trace_log(path: &Path) -> Result<(Vec<StepRecord>, Vec<ValidationRecord>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut steps = Vec::new();
    let mut validations = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line).map_err(|e| Error::contract(format!("{}:{}: {e}", path.display(), n + 1)))? {
            LogEvent::Step(s) => steps.push(s),
            LogEvent::Validation(v) => validations.push(v),
        }
    }
    Ok((steps, validations))
}
