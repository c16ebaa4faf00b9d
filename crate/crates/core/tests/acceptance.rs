//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any fails.

// oracle values keep the digits the oracle produced
#![allow(clippy::excessive_precision, clippy::approx_constant)]

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use adaswitch::corpus::{Example, Vocab};
use adaswitch::divergence::{token_divergence, DivergenceKind, DivergenceMetric};
use adaswitch::harness::cli::{run, Cli};
use adaswitch::harness::config::ExperimentConfig;
use adaswitch::harness::{build_dataset, initial_student, oracle_battery, train_teacher};
use adaswitch::model::{loss_and_gradient, LanguageModel, ProbDist, Role, SamplingConfig, TabularLM};
use adaswitch::oracle::{replay_switch_check, ScriptedLM};
use adaswitch::policies::{
    select_target_imitkd, select_target_on_policy, select_target_sft, select_target_skd, CallWeights, GenerationTrace,
    PolicyKind, Source,
};
use adaswitch::rng::substream;
use adaswitch::switching::{adaswitch_generate, SwitchConfig};
use adaswitch::trainer::{accuracy, distill, forward_call_audit, sft_teacher, KDConfig};
use adaswitch::TokenId;
use clap::Parser;
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_secs: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_secs, || format!("took {:.2}s, limit {limit_secs}s", elapsed.as_secs_f64()))
}

fn dist(p: &[f64]) -> ProbDist {
    ProbDist::new(p.to_vec()).unwrap()
}

fn random_simplex<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(1e-3..1.0f64).powi(2)).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

/// Random model whose rows are spread over `[-spread, spread]`.
fn spread_model(vocab: Vocab, order: usize, role: Role, seed: u64, spread: f64) -> TabularLM {
    let mut m = TabularLM::random(vocab, order, role, seed).unwrap();
    let mut rng = substream(seed, &["acceptance-spread"]);
    for r in 0..m.num_rows() {
        for x in m.row_mut(r) {
            *x = rng.gen_range(-spread..spread);
        }
    }
    m
}

fn example(vocab: &Vocab, body: TokenId) -> Example {
    Example { id: format!("x{body}"), prompt: vec![vocab.bos, body], target: vec![body, vocab.eos] }
}

// forward KL, reverse KL (None where undefined), JSD; mpmath at 40 digits
#[allow(clippy::type_complexity)]
const CLOSED_FORM: &[(&[f64], &[f64], Option<f64>, Option<f64>, f64)] = &[
    (&[0.5, 0.5], &[0.25, 0.75], Some(0.14384103622589046372), Some(0.13081203594113695913), 0.03382207556860523),
    (&[1.0, 0.0], &[0.0, 1.0], None, None, 0.69314718055994530942),
    (&[1.0, 0.0], &[0.5, 0.5], Some(0.69314718055994530942), None, 0.21576155433883569558),
    (&[0.5, 0.5], &[0.5, 0.5], Some(0.0), Some(0.0), 0.0),
    (&[0.9, 0.1], &[0.1, 0.9], Some(1.7577796618689755062), Some(1.7577796618689755062), 0.36806420716849706991),
    (
        &[0.25, 0.25, 0.25, 0.25],
        &[0.1, 0.2, 0.3, 0.4],
        Some(0.12177727428716866027),
        Some(0.10644013528622315165),
        0.027865613457276731488,
    ),
    (
        &[0.7, 0.2, 0.1],
        &[0.2, 0.5, 0.3],
        Some(0.58381470270511561481),
        Some(0.53717645883843684087),
        0.13291800605539907264,
    ),
    (&[1.0, 0.0, 0.0], &[0.2, 0.3, 0.5], Some(1.6094379124341003746), None, 0.42281045524016249623),
    (&[0.6, 0.4, 0.0], &[0.3, 0.3, 0.4], Some(0.53096113731667955663), None, 0.1676979681821144618),
    (&[0.5, 0.5, 0.0, 0.0], &[0.0, 0.0, 0.5, 0.5], None, None, 0.69314718055994530942),
    (&[0.99, 0.01], &[0.01, 0.99], Some(4.5032174531318981283), Some(4.5032174531318981283), 0.63714564620509796897),
    (
        &[0.125, 0.375, 0.5],
        &[0.5, 0.375, 0.125],
        Some(0.51986038541995898206),
        Some(0.51986038541995898206),
        0.12046547313859839368,
    ),
    (
        &[0.2, 0.2, 0.2, 0.2, 0.2],
        &[0.05, 0.1, 0.15, 0.3, 0.4],
        Some(0.25370226509270143286),
        Some(0.21711665767667123736),
        0.056403666810109407518,
    ),
    (&[0.3, 0.7], &[0.7, 0.3], Some(0.33891914415488144548), Some(0.33891914415488144548), 0.082282878505051846392),
    (
        &[0.4, 0.3, 0.2, 0.1],
        &[0.1, 0.2, 0.3, 0.4],
        Some(0.45643481914678362385),
        Some(0.45643481914678362385),
        0.10644013528622315165,
    ),
    (&[0.001, 0.999], &[0.5, 0.5], Some(0.6852399254477132224), Some(2.7612307090979149834), 0.21235656655633805206),
    (&[0.5, 0.25, 0.25], &[0.5, 0.25, 0.25], Some(0.0), Some(0.0), 0.0),
    (
        &[0.6, 0.3, 0.1],
        &[0.6, 0.1, 0.3],
        Some(0.21972245773362193828),
        Some(0.21972245773362193828),
        0.052324814376454783652,
    ),
    (&[1.0, 0.0, 0.0, 0.0], &[0.25, 0.25, 0.25, 0.25], Some(1.3862943611198906188), None, 0.38039566584857788471),
    (
        &[0.8, 0.15, 0.05],
        &[0.75, 0.2, 0.05],
        Some(0.0084785060422897982225),
        Some(0.0091325236371778067332),
        0.002195134042618433512,
    ),
    (
        &[0.34, 0.33, 0.33],
        &[0.9, 0.05, 0.05],
        Some(0.91449325881857545794),
        Some(0.68739726623945532334),
        0.18100490092780607362,
    ),
    (
        &[0.1, 0.1, 0.8],
        &[0.8, 0.1, 0.1],
        Some(1.4556090791758851498),
        Some(1.4556090791758851498),
        0.30988357624522207657,
    ),
];

fn divergences() -> Outcome {
    let start = Instant::now();
    let fkl = DivergenceMetric::new(DivergenceKind::ForwardKl);
    let rkl = DivergenceMetric::new(DivergenceKind::ReverseKl);
    let jsd = DivergenceMetric::new(DivergenceKind::Jsd);
    let mut checked = 0;
    for (i, &(p, q, f, r, j)) in CLOSED_FORM.iter().enumerate() {
        let (p, q) = (dist(p), dist(q));
        let mut check = |metric: &DivergenceMetric, want: f64| {
            let got = token_divergence(metric, &p, &q).unwrap();
            checked += 1;
            ensure((got - want).abs() <= 1e-9, || format!("pair {i} {:?}: got {got}, want {want}", metric.kind))
        };
        if let Some(f) = f {
            check(&fkl, f)?;
        }
        if let Some(r) = r {
            check(&rkl, r)?;
        }
        check(&jsd, j)?;
    }
    let mut rng = substream(1, &["acceptance", "divergence-pairs"]);
    for i in 0..10_000 {
        let n = rng.gen_range(2..=8);
        let (p, q) = (dist(&random_simplex(&mut rng, n)), dist(&random_simplex(&mut rng, n)));
        let pq = token_divergence(&jsd, &p, &q).unwrap();
        ensure(pq == token_divergence(&jsd, &q, &p).unwrap(), || format!("jsd asymmetric on pair {i}"))?;
        ensure(pq <= std::f64::consts::LN_2, || format!("jsd above ln 2 on pair {i}"))?;
        ensure(token_divergence(&rkl, &p, &q).unwrap() == token_divergence(&fkl, &q, &p).unwrap(), || {
            format!("reverse/forward identity broken on pair {i}")
        })?;
    }
    let elapsed = start.elapsed();
    within(elapsed, 1.0)?;
    Ok(format!(
        "{} closed-form pairs ({checked} values) to 1e-9, 10000 random pairs exact, {:.3}s",
        CLOSED_FORM.len(),
        elapsed.as_secs_f64()
    ))
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut rng = substream(2, &["acceptance", "gradients"]);
    for trial in 0..100u64 {
        let vocab = Vocab::new(rng.gen_range(4..=7)).unwrap();
        let teacher = spread_model(vocab, 2, Role::Teacher, 1000 + trial, 2.0);
        let mut student = spread_model(vocab, rng.gen_range(1..=2), Role::Student, 2000 + trial, 2.0);
        let prompt = vec![vocab.bos, rng.gen_range(0..vocab.size - 3)];
        let y: Vec<TokenId> = (0..rng.gen_range(1..=5)).map(|_| rng.gen_range(0..vocab.size)).collect();
        let mut rows: Vec<usize> = (0..y.len())
            .map(|k| {
                let mut ctx = prompt.clone();
                ctx.extend_from_slice(&y[..k]);
                student.row_index(&ctx)
            })
            .collect();
        rows.sort_unstable();
        rows.dedup();
        for kind in [DivergenceKind::ForwardKl, DivergenceKind::ReverseKl, DivergenceKind::Jsd] {
            let metric = DivergenceMetric::new(kind);
            let (_, grad) = loss_and_gradient(&student, &teacher, &prompt, &y, &metric).unwrap();
            let mut analytic = Vec::new();
            let mut numeric = Vec::new();
            for &row in &rows {
                for t in 0..vocab.len() {
                    let orig = student.row(row)[t];
                    student.row_mut(row)[t] = orig + h;
                    let up = loss_and_gradient(&student, &teacher, &prompt, &y, &metric).unwrap().0;
                    student.row_mut(row)[t] = orig - h;
                    let down = loss_and_gradient(&student, &teacher, &prompt, &y, &metric).unwrap().0;
                    student.row_mut(row)[t] = orig;
                    analytic.push(grad.get(row, t));
                    numeric.push((up - down) / (2.0 * h));
                }
            }
            // relative to the largest gradient entry of the triple
            let scale = analytic.iter().chain(&numeric).fold(0.0f64, |m, g| m.max(g.abs())).max(1e-12);
            let err = analytic.iter().zip(&numeric).fold(0.0f64, |m, (a, n)| m.max((a - n).abs())) / scale;
            worst = worst.max(err);
            ensure(err <= 1e-5, || format!("trial {trial} {kind}: relative error {err:.3e}"))?;
        }
    }
    let elapsed = start.elapsed();
    within(elapsed, 10.0)?;
    Ok(format!("300 gradients, max relative error {worst:.2e}, {:.3}s", elapsed.as_secs_f64()))
}

fn check_trace(trace: &GenerationTrace, cfg: &SwitchConfig) -> Result<bool, String> {
    ensure(replay_switch_check(trace, cfg), || format!("replay mismatch: {trace:?}"))?;
    let first_teacher = trace.sources.iter().position(|&s| s == Source::Teacher);
    ensure(
        trace.sources.iter().all(|&s| s != Source::GroundTruth)
            && first_teacher.is_none_or(|k| trace.sources[k..].iter().all(|&s| s == Source::Teacher)),
        || format!("sources interleave: {:?}", trace.sources),
    )?;
    match trace.switch_index() {
        Some(k) => {
            ensure(k > cfg.window, || format!("switch at {k} with L={}", cfg.window))?;
            ensure(first_teacher == Some(k - 1), || "switch index disagrees with sources".into())?;
            Ok(true)
        }
        None => {
            ensure(first_teacher.is_none(), || "teacher tokens without a switch".into())?;
            Ok(false)
        }
    }
}

fn conformance() -> Outcome {
    let start = Instant::now();
    let mut rng = substream(3, &["acceptance", "conformance"]);
    let full = SamplingConfig::new(1.0, 1.0);
    let mut switched = 0;
    let metrics = [DivergenceKind::ForwardKl, DivergenceKind::ReverseKl, DivergenceKind::Jsd];
    // random tabular models
    for m in 0..50u64 {
        let vocab = Vocab::new(rng.gen_range(5..=9)).unwrap();
        let student = spread_model(vocab, 1 + (m % 2) as usize, Role::Student, 3000 + m, 1.5);
        let teacher = spread_model(vocab, 2, Role::Teacher, 4000 + m, 3.0);
        let cfg = SwitchConfig {
            window: rng.gen_range(1..=5),
            multiplier: rng.gen_range(1.0..3.0),
            metric: DivergenceMetric::new(metrics[(m % 3) as usize]),
            max_len: 16,
        };
        for i in 0..100u64 {
            let ex = example(&vocab, (i % (vocab.size as u64 - 3)) as TokenId);
            let mut trng = substream(m, &["trace", &i.to_string()]);
            let t = adaswitch_generate(&student, &teacher, &ex, &full, &full, &cfg, &mut trng).unwrap();
            switched += check_trace(&t, &cfg)? as usize;
        }
    }
    // scripted divergence streams, including early spikes that must not switch
    for i in 0..5_000u64 {
        let max_len = rng.gen_range(2..=12);
        let script: Vec<f64> = (0..max_len)
            .map(|_| if rng.gen_bool(0.2) { rng.gen_range(0.3..0.69) } else { rng.gen_range(0.0..0.1) })
            .collect();
        let (student, teacher) = ScriptedLM::pair_for_divergences(&script, max_len).unwrap();
        let cfg = SwitchConfig {
            window: rng.gen_range(1..=4),
            multiplier: rng.gen_range(1.0..4.0),
            metric: DivergenceMetric::new(DivergenceKind::ForwardKl),
            max_len,
        };
        let ex = Example { id: format!("s{i}"), prompt: vec![student.vocab().bos], target: vec![student.vocab().eos] };
        let mut trng = substream(i, &["scripted"]);
        let t = adaswitch_generate(&student, &teacher, &ex, &full, &full, &cfg, &mut trng).unwrap();
        switched += check_trace(&t, &cfg)? as usize;
    }
    let elapsed = start.elapsed();
    within(elapsed, 30.0)?;
    ensure(switched > 1000 && switched < 9000, || format!("degenerate switch count {switched}"))?;
    Ok(format!("10000 traces replayed, {switched} switched, {:.3}s", elapsed.as_secs_f64()))
}

fn reductions() -> Outcome {
    let vocab = Vocab::new(8).unwrap();
    let sampling = SamplingConfig::new(0.8, 0.9);
    let cfg = SwitchConfig { window: 2, multiplier: 1e18, metric: DivergenceMetric::default(), max_len: 12 };
    for trial in 0..1000u64 {
        let student = spread_model(vocab, 2, Role::Student, 5000 + trial % 20, 2.0);
        let teacher = spread_model(vocab, 2, Role::Teacher, 6000 + trial % 20, 2.0);
        let ex = example(&vocab, (trial % 5) as TokenId);
        let rng = || substream(trial, &["reduction"]);
        let on = select_target_on_policy(&student, &ex, &sampling, cfg.max_len, &mut rng()).unwrap();
        let ada = adaswitch_generate(&student, &teacher, &ex, &sampling, &sampling, &cfg, &mut rng()).unwrap();
        ensure(ada.switch.is_none() && ada.tokens == on.tokens && ada.sources == on.sources, || {
            format!("trial {trial}: huge K diverged from on-policy")
        })?;
        let skd =
            select_target_skd(&student, &teacher, &ex, &sampling, &sampling, cfg.max_len, 1.0, &mut rng()).unwrap();
        ensure(skd.sources.iter().all(|&s| s == Source::Student) && skd.tokens == on.tokens, || {
            format!("trial {trial}: k_skd = 1 rejected a proposal")
        })?;
        let mut mix = substream(trial, &["mix"]);
        let pure_on = select_target_imitkd(&student, &ex, &sampling, cfg.max_len, 0.0, &mut mix, &mut rng()).unwrap();
        ensure(pure_on == on, || format!("trial {trial}: mix 0 differs from on-policy"))?;
        let pure_gt = select_target_imitkd(&student, &ex, &sampling, cfg.max_len, 1.0, &mut mix, &mut rng()).unwrap();
        ensure(pure_gt == select_target_sft(&ex), || format!("trial {trial}: mix 1 differs from ground truth"))?;
    }
    Ok("1000 trials: K=1e18 = on-policy, k_skd=1 accepts all, mix 0/1 = pure".into())
}

fn enumeration() -> Outcome {
    let start = Instant::now();
    let summary = oracle_battery(0, 50_000).map_err(|e| e.to_string())?;
    let detail: Vec<String> = summary
        .enumeration
        .iter()
        .map(|c| format!("{} |mc-exact|={:.2}se", c.policy, (c.monte_carlo - c.exact).abs() / c.standard_error))
        .collect();
    ensure(summary.pass(), || format!("{summary:?}"))?;
    ensure(summary.enumeration.len() == 3, || "expected three policies".into())?;
    Ok(format!("{}, {:.1}s", detail.join(", "), start.elapsed().as_secs_f64()))
}

fn config(sets: &[&str]) -> ExperimentConfig {
    let sets: Vec<String> = sets.iter().map(|s| s.to_string()).collect();
    ExperimentConfig::resolve(None, &sets).unwrap()
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let cfg = config(&[]);
    let data = build_dataset(&cfg).map_err(|e| e.to_string())?;
    let teacher = train_teacher(&cfg, &data).map_err(|e| e.to_string())?.model;
    let max_len = cfg.kd.max_len;
    let teacher_acc = accuracy(&teacher, &data.test, max_len);
    let run = distill(&teacher, initial_student(&cfg).unwrap(), &data, &cfg.kd_config().unwrap())
        .map_err(|e| e.to_string())?;
    let first = run.validations.first().unwrap();
    let last = run.validations.last().unwrap();
    let elapsed = start.elapsed();
    let detail = format!(
        "teacher {teacher_acc:.3}, student {:.3} -> {:.3}, val divergence {:.4} -> {:.4}, {:.2}s",
        first.accuracy,
        last.accuracy,
        first.validation_loss,
        last.validation_loss,
        elapsed.as_secs_f64()
    );
    ensure(teacher_acc >= 0.95, || format!("teacher below 0.95: {detail}"))?;
    ensure(first.accuracy <= 0.05, || format!("student not near zero at step 0: {detail}"))?;
    ensure(last.accuracy >= 0.90, || format!("student below 0.90: {detail}"))?;
    ensure(last.validation_loss <= 0.5 * first.validation_loss, || format!("divergence not halved: {detail}"))?;
    within(elapsed, 120.0)?;
    Ok(detail)
}

/// Per-window (d_at_switch, switch_rate) over the first 1000 steps.
fn switch_profile(kind: &str, seed: u64) -> Vec<(Option<f64>, f64)> {
    let task = format!("task.kind={kind}");
    let seed = format!("seed={seed}");
    let cfg = config(&[&task, &seed, "kd.window=2", "kd.epochs=1", "kd.report_window=100"]);
    let data = build_dataset(&cfg).unwrap();
    let teacher = train_teacher(&cfg, &data).unwrap().model;
    let run = distill(&teacher, initial_student(&cfg).unwrap(), &data, &cfg.kd_config().unwrap()).unwrap();
    run.report.rows.iter().take(10).map(|r| (r.d_at_switch, r.switch_rate)).collect()
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn switch_dynamics() -> Outcome {
    let seeds = 0..5u64;
    let hard: Vec<_> = seeds.clone().map(|s| switch_profile("modular-sum", s)).collect();
    let easy: Vec<_> = seeds.map(|s| switch_profile("copy", s)).collect();
    ensure(hard.iter().chain(&easy).all(|p| p.len() == 10), || "expected ten windows per run".into())?;
    let d_window = |w: usize| mean(hard.iter().filter_map(|p| p[w].0));
    let rate_window = |runs: &[Vec<(Option<f64>, f64)>], w: usize| mean(runs.iter().map(|p| p[w].1));
    let (d_first, d_last) = (d_window(0), d_window(9));
    let hard_rates: Vec<f64> = (0..10).map(|w| rate_window(&hard, w)).collect();
    let easy_rates: Vec<f64> = (0..10).map(|w| rate_window(&easy, w)).collect();
    let detail = format!(
        "modular-sum d_switch {d_first:.3} -> {d_last:.3}; switch rate modular-sum {:.3} vs copy {:.3}",
        mean(hard_rates.iter().copied()),
        mean(easy_rates.iter().copied())
    );
    ensure(d_last < d_first, || format!("divergence at switch did not fall: {detail}"))?;
    for w in 0..10 {
        ensure(hard_rates[w] > easy_rates[w], || {
            format!("window {w}: {:.3} vs {:.3}; {detail}", hard_rates[w], easy_rates[w])
        })?;
    }
    Ok(detail)
}

/// Weighted forward calls of off-policy, on-policy, AdaSwitch and SKD on the
/// test split, with frozen models. The student is first fitted to the
/// ground truth with the teacher's schedule so its rollouts terminate like a
/// pretrained student's instead of running to the length limit.
fn audit_costs(kind: &str) -> [f64; 4] {
    let task = format!("task.kind={kind}");
    let cfg = config(&[&task]);
    let data = build_dataset(&cfg).unwrap();
    let teacher = train_teacher(&cfg, &data).unwrap().model;
    let sft = &cfg.teacher_sft;
    let mut student =
        sft_teacher(initial_student(&cfg).unwrap(), &data.train, &data.valid, sft.epochs, sft.learning_rate, cfg.seed)
            .unwrap()
            .model;
    student.set_role(Role::Student);
    let weights = CallWeights::default();
    let kd = cfg.kd_config().unwrap();
    let policies = [
        PolicyKind::OffPolicyKd,
        PolicyKind::OnPolicyKd,
        PolicyKind::Adaswitch,
        PolicyKind::Skd { k_skd: cfg.kd.k_skd },
    ];
    policies.map(|policy| {
        let kd = KDConfig { policy, ..kd };
        forward_call_audit(&policy, &student, &teacher, &data.test, &kd).unwrap().weighted(&weights)
    })
}

fn runtime_ordering() -> Outcome {
    let mut details = Vec::new();
    for kind in ["copy", "modular-sum"] {
        let [off, on, ada, skd] = audit_costs(kind);
        let detail = format!("{kind}: off {off} < on {on} < adaswitch {ada} <= skd {skd}");
        ensure(off < on && on < ada && ada <= skd, || format!("ordering broken: {detail}"))?;
        details.push(detail);
    }
    Ok(details.join("; "))
}

fn run_cli(args: &[&str]) -> Result<String, String> {
    let mut argv = vec!["adaswitch"];
    argv.extend_from_slice(args);
    run(Cli::try_parse_from(argv).map_err(|e| e.to_string())?).map_err(|e| e.to_string())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let a_str = a.to_str().unwrap();
    run_cli(&["distill", "--out", a_str, "--seed", "11", "--set", "kd.epochs=1"])?;
    let manifest = a.join("manifest.json");
    run_cli(&["distill", "--config", manifest.to_str().unwrap(), "--out", b.to_str().unwrap()])?;
    let files = ["trace.jsonl", "report.csv", "report.json", "student.json", "checkpoints.json", "manifest.json"];
    for f in files {
        let x = std::fs::read(a.join(f)).map_err(|e| format!("{f}: {e}"))?;
        let y = std::fs::read(b.join(f)).map_err(|e| format!("{f}: {e}"))?;
        ensure(x == y, || format!("{f} differs between runs"))?;
    }
    Ok(format!("{} artifacts byte-identical across a manifest replay", files.len()))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("divergence correctness", divergences),
        ("gradient oracle", gradients),
        ("switching conformance", conformance),
        ("reduction identities", reductions),
        ("enumeration oracle", enumeration),
        ("end-to-end distillation", end_to_end),
        ("switch dynamics, hard vs easy", switch_dynamics),
        ("forward-call ordering", runtime_ordering),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
