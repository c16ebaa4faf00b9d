//! Property tests for the invariants each module promises.

use adaswitch::corpus::{Example, Vocab};
use adaswitch::divergence::{DivergenceKind, DivergenceMetric};
use adaswitch::model::{next_dist, CountingLM, LanguageModel, Role, SamplingConfig, TabularLM};
use adaswitch::oracle::{
    exact_expected_sequence_divergence, replay_switch_check, EnumeratedPolicy, EnumerationSpec, ScriptedLM,
};
use adaswitch::policies::{
    select_target, select_target_imitkd, select_target_on_policy, GenerationSettings, PolicyKind, Source,
};
use adaswitch::rng::substream;
use adaswitch::switching::{adaswitch_generate, SwitchConfig};
use adaswitch::TokenId;
use proptest::prelude::*;
use rand::Rng;

fn spread(vocab_size: u32, order: usize, role: Role, seed: u64, scale: f64) -> TabularLM {
    let mut m = TabularLM::random(Vocab::new(vocab_size).unwrap(), order, role, seed).unwrap();
    let mut rng = substream(seed, &["prop-spread"]);
    for r in 0..m.num_rows() {
        for x in m.row_mut(r) {
            *x = rng.gen_range(-scale..scale);
        }
    }
    m
}

fn example(vocab: &Vocab, body: TokenId) -> Example {
    Example { id: format!("p{body}"), prompt: vec![vocab.bos, body], target: vec![body, vocab.eos] }
}

fn metric_of(i: usize) -> DivergenceMetric {
    DivergenceMetric::new([DivergenceKind::ForwardKl, DivergenceKind::ReverseKl, DivergenceKind::Jsd][i % 3])
}

fn sampling() -> impl Strategy<Value = SamplingConfig> {
    (0.05f64..2.0, 0.05f64..=1.0, prop::bool::weighted(0.1)).prop_map(|(t, p, g)| SamplingConfig {
        temperature: t,
        top_p: p,
        greedy: g,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn next_dist_is_a_distribution(seed in any::<u64>(), s in sampling(), ctx in prop::collection::vec(0u32..13, 0..4)) {
        let m = spread(16, 2, Role::Student, seed, 5.0);
        let d = next_dist(&m, &ctx, &s);
        prop_assert!((d.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(d.as_slice().iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn top_p_one_is_identity(seed in any::<u64>(), t in 0.1f64..3.0) {
        let m = spread(8, 1, Role::Student, seed, 3.0);
        let ctx = [m.vocab().bos];
        let a = next_dist(&m, &ctx, &SamplingConfig::new(t, 1.0));
        let logits: Vec<f64> = m.logits(&ctx).iter().map(|l| l / t).collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        for (p, l) in a.as_slice().iter().zip(&logits) {
            prop_assert!((p - l.exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn switching_traces_conform(
        seed in any::<u64>(),
        window in 1usize..5,
        multiplier in 1.0f64..4.0,
        metric in 0usize..3,
        s in sampling(),
        t in sampling(),
    ) {
        let student = spread(7, 1, Role::Student, seed, 1.5);
        let teacher = spread(7, 2, Role::Teacher, seed ^ 0x5eed, 3.0);
        let vocab = *teacher.vocab();
        let cfg = SwitchConfig { window, multiplier, metric: metric_of(metric), max_len: 14 };
        let (cs, ct) = (CountingLM::new(&student), CountingLM::new(&teacher));
        let mut rng = substream(seed, &["trace"]);
        let trace = adaswitch_generate(&cs, &ct, &example(&vocab, 1), &s, &t, &cfg, &mut rng).unwrap();
        trace.check_invariants(vocab.eos, cfg.max_len).unwrap();
        prop_assert!(replay_switch_check(&trace, &cfg));
        let first_teacher = trace.sources.iter().position(|&s| s == Source::Teacher);
        if let Some(k) = first_teacher {
            prop_assert!(trace.sources[k..].iter().all(|&s| s == Source::Teacher));
        }
        prop_assert_eq!(trace.switch_index().map(|k| k - 1), first_teacher);
        if let Some(k) = trace.switch_index() {
            prop_assert!(k > window);
        }
        // teacher every step; student on every student step plus the switching step
        let student_steps = trace.sources.iter().filter(|&&s| s == Source::Student).count();
        prop_assert_eq!(trace.calls.teacher as usize, trace.len());
        prop_assert_eq!(trace.calls.student as usize, student_steps + trace.switch_index().is_some() as usize);
        prop_assert_eq!((cs.calls(), ct.calls()), (trace.calls.student, trace.calls.teacher));
    }

    #[test]
    fn larger_multiplier_never_switches_earlier(
        script in prop::collection::vec(0.0f64..0.69, 2..12),
        window in 1usize..4,
        k in 1.0f64..4.0,
        dk in 0.0f64..4.0,
        seed in any::<u64>(),
    ) {
        let max_len = script.len();
        let (student, teacher) = ScriptedLM::pair_for_divergences(&script, max_len).unwrap();
        let vocab = *student.vocab();
        let ex = Example { id: "s".into(), prompt: vec![vocab.bos], target: vec![vocab.eos] };
        let full = SamplingConfig::new(1.0, 1.0);
        let position = |multiplier: f64| {
            let cfg = SwitchConfig { window, multiplier, metric: DivergenceMetric::default(), max_len };
            let mut rng = substream(seed, &["monotone"]);
            adaswitch_generate(&student, &teacher, &ex, &full, &full, &cfg, &mut rng)
                .unwrap()
                .switch_index()
                .unwrap_or(usize::MAX)
        };
        prop_assert!(position(k + dk) >= position(k));
    }

    #[test]
    fn every_policy_obeys_trace_invariants(seed in any::<u64>(), policy in 0usize..7, s in sampling(), t in sampling()) {
        let student = spread(9, 1, Role::Student, seed, 2.0);
        let teacher = spread(9, 2, Role::Teacher, seed.wrapping_add(1), 2.0);
        let vocab = *teacher.vocab();
        let settings = GenerationSettings {
            student_sampling: s,
            teacher_sampling: t,
            switch: SwitchConfig { window: 2, max_len: 10, ..SwitchConfig::default() },
        };
        let policy = PolicyKind::ALL[policy];
        let (cs, ct) = (CountingLM::new(&student), CountingLM::new(&teacher));
        let (mut mix, mut rng) = (substream(seed, &["mix"]), substream(seed, &["policy"]));
        let trace = select_target(&policy, &cs, &ct, &example(&vocab, 2), &settings, &mut mix, &mut rng).unwrap();
        trace.check_invariants(vocab.eos, settings.switch.max_len).unwrap();
        prop_assert_eq!((cs.calls(), ct.calls()), (trace.calls.student, trace.calls.teacher));
    }

    #[test]
    fn imitkd_returns_one_pure_trace(seed in any::<u64>(), p in 0.0f64..=1.0) {
        let student = spread(9, 2, Role::Student, seed, 2.0);
        let vocab = *student.vocab();
        let ex = example(&vocab, 3);
        let s = SamplingConfig::student_default();
        let mut mix = substream(seed, &["mix"]);
        let mixed = select_target_imitkd(&student, &ex, &s, 10, p, &mut mix, &mut substream(seed, &["g"])).unwrap();
        let on = select_target_on_policy(&student, &ex, &s, 10, &mut substream(seed, &["g"])).unwrap();
        let gt_sources = vec![Source::GroundTruth; ex.target.len()];
        prop_assert!(mixed == on || (mixed.tokens == ex.target && mixed.sources == gt_sources));
    }

    #[test]
    fn enumeration_mass_sums_to_one(seed in any::<u64>(), window in 1usize..3, multiplier in 1.0f64..3.0, greedy in any::<bool>()) {
        let student = spread(4, 2, Role::Student, seed, 2.0);
        let teacher = spread(4, 2, Role::Teacher, seed ^ 7, 2.0);
        let prompt = [student.vocab().bos, 0];
        let full = SamplingConfig::new(1.0, 1.0);
        let teacher_sampling = if greedy { SamplingConfig::greedy() } else { SamplingConfig::new(0.7, 0.9) };
        let metric = DivergenceMetric::default();
        let spec = EnumerationSpec::new(4);
        for policy in [
            EnumeratedPolicy::OnPolicy { sampling: full },
            EnumeratedPolicy::TeacherRollout { sampling: teacher_sampling },
            EnumeratedPolicy::Adaswitch { student_sampling: full, teacher_sampling, window, multiplier, switch_metric: metric },
        ] {
            let e = exact_expected_sequence_divergence(&policy, &student, &teacher, &prompt, &metric, &spec).unwrap();
            prop_assert!((e.total_probability - 1.0).abs() <= 1e-9);
            prop_assert!(e.expected >= 0.0);
        }
    }
}
