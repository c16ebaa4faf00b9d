//! Seed-averaged switching dynamics of AdaSwitch runs on the copy task.

use adaswitch::harness::config::ExperimentConfig;
use adaswitch::harness::{build_dataset, initial_student, train_teacher};
use adaswitch::telemetry::WindowRow;
use adaswitch::trainer::distill;

const SEEDS: std::ops::Range<u64> = 0..5;

fn copy_rows(seed: u64) -> Vec<WindowRow> {
    let cfg = ExperimentConfig::resolve(None, &[format!("seed={seed}")]).unwrap();
    let data = build_dataset(&cfg).unwrap();
    let teacher = train_teacher(&cfg, &data).unwrap().model;
    distill(&teacher, initial_student(&cfg).unwrap(), &data, &cfg.kd_config().unwrap()).unwrap().report.rows
}

/// Per-window means across seeds; `None` where no seed switched.
fn seed_average(runs: &[Vec<WindowRow>], field: impl Fn(&WindowRow) -> Option<f64>) -> Vec<Option<f64>> {
    (0..runs[0].len())
        .map(|w| {
            let vals: Vec<f64> = runs.iter().filter_map(|r| field(&r[w])).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect()
}

#[test]
fn copy_switch_rate_collapses_as_student_converges() {
    let runs: Vec<_> = SEEDS.map(copy_rows).collect();
    let rates: Vec<f64> = seed_average(&runs, |r| Some(r.switch_rate)).into_iter().flatten().collect();
    let peak = rates.iter().cloned().fold(0.0, f64::max);
    assert!(peak > 0.1, "{rates:?}");
    assert!(*rates.last().unwrap() <= 0.01, "{rates:?}");
    let d = seed_average(&runs, |r| r.d_at_switch);
    assert!(d[1].unwrap() < d[0].unwrap(), "{d:?}");
    for run in &runs {
        assert!(run.last().unwrap().accuracy.unwrap() >= 0.9);
    }
}

/// After the first few hundred steps switches become rare, and the few that
/// fire are outliers, so the smoothed mean climbs again over 3 epochs.
#[test]
#[ignore = "not reproduced: the smoothed mean drops over the first windows, then rises as switches thin out"]
fn copy_divergence_at_switch_non_increasing_when_smoothed() {
    let runs: Vec<_> = SEEDS.map(copy_rows).collect();
    let d: Vec<f64> = seed_average(&runs, |r| r.d_at_switch).into_iter().flatten().collect();
    let smoothed: Vec<f64> = d.windows(3).map(|w| w.iter().sum::<f64>() / 3.0).collect();
    for pair in smoothed.windows(2) {
        assert!(pair[1] <= pair[0], "{smoothed:?}");
    }
}
