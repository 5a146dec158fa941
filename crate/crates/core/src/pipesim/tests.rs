use super::*;
use crate::workload::{AdapterSpec, SampleRecord};

fn linear() -> TimeModelParams {
    TimeModelParams::linear(1e-6, 0.0)
}

fn uniform_schedule(m: usize, tokens: u32, stages: usize) -> Schedule {
    let entries = (0..m)
        .map(|i| {
            let mut mb = Microbatch::empty(u64::MAX);
            mb.push(
                "u",
                1,
                PackedSample {
                    sample_id: format!("u{i}"),
                    length_tokens: tokens,
                    global_batch_index: 0,
                },
            );
            ScheduleEntry::microbatch(0, 0, mb)
        })
        .collect();
    Schedule::new(stages, u64::MAX, entries)
}

#[test]
fn single_stage_has_no_bubble() {
    let cfg = PipelineConfig::new(1, linear());
    for m in [1, 5, 17] {
        let r = simulate_pipeline(PipelineInput::Schedule(&uniform_schedule(m, 1000, 1)), &cfg).unwrap();
        assert!(r.bubble_ratio.abs() < 1e-12);
    }
}

#[test]
fn uniform_closed_form_s4_m8() {
    let cfg = PipelineConfig::new(4, linear());
    let r = simulate_pipeline(PipelineInput::Schedule(&uniform_schedule(8, 1000, 4)), &cfg).unwrap();
    assert!((r.bubble_ratio - 3.0 / 11.0).abs() < 1e-9);
    let f = 1000.0 * 1e-6 / 4.0;
    assert!((r.total_time - 11.0 * 3.0 * f).abs() < 1e-12);
    for (b, i) in r.stage_busy.iter().zip(&r.stage_idle) {
        assert!((b + i - r.total_time).abs() < 1e-12);
    }
}

#[test]
fn bubble_shrinks_with_more_microbatches() {
    let cfg = PipelineConfig::new(4, linear());
    let mut prev = 1.0;
    for m in [1, 2, 4, 8, 16, 64, 256] {
        let r = simulate_pipeline(PipelineInput::Schedule(&uniform_schedule(m, 100, 4)), &cfg).unwrap();
        assert!(r.bubble_ratio < prev);
        prev = r.bubble_ratio;
    }
}

#[test]
fn noop_takes_mean_of_its_batch() {
    let mut s = uniform_schedule(2, 1000, 2);
    s.entries[1].microbatch.as_mut().unwrap().segments[0].samples[0].length_tokens = 3000;
    let mb = {
        let mut m = Microbatch::empty(u64::MAX);
        m.push(
            "u",
            1,
            PackedSample {
                sample_id: "x".into(),
                length_tokens: 3000,
                global_batch_index: 0,
            },
        );
        m
    };
    s.entries[1].microbatch = Some(mb);
    s.entries.insert(1, ScheduleEntry::noop(0, 0));
    let s = Schedule::new(2, u64::MAX, s.entries);
    let mut cfg = PipelineConfig::new(2, linear());
    cfg.record_trace = true;
    let r = simulate_pipeline(PipelineInput::Schedule(&s), &cfg).unwrap();
    let n = r.trace.iter().find(|e| e.op == Op::N).unwrap();
    assert!((n.end - n.start - 2000.0 * 1e-6 / 2.0).abs() < 1e-12);
    assert_eq!(r.noops, 1);
    // busy excludes the noop
    let work: f64 = [1000.0, 3000.0].iter().map(|t| t * 1e-6 / 2.0 * 3.0).sum();
    assert!((r.stage_busy[0] - work).abs() < 1e-12);
}

#[test]
fn lemma_violation_is_rejected() {
    let mut s = uniform_schedule(2, 10, 4);
    s.entries[1].microbatch.as_mut().unwrap().segments[0].samples[0].global_batch_index = 1;
    let s = Schedule::new(4, u64::MAX, s.entries);
    let err = simulate_pipeline(PipelineInput::Schedule(&s), &PipelineConfig::new(4, linear())).unwrap_err();
    assert!(matches!(err, SimError::LemmaViolated { count: 1, .. }));
}

#[test]
fn dp_examples() {
    let p = linear();
    let r = simulate_dp(&[vec![1000], vec![2000]], &p, 2.0).unwrap();
    assert!((r.load_imbalance.unwrap() - 0.25).abs() < 1e-12);
    let same = simulate_dp(&[vec![5, 7], vec![5, 7]], &p, 2.0).unwrap();
    assert_eq!(same.load_imbalance, Some(0.0));
    assert_eq!(simulate_dp(&[vec![3, 4]], &p, 2.0).unwrap().load_imbalance, Some(0.0));
    assert!(simulate_dp(&[vec![1], vec![1, 2]], &p, 2.0).is_err());
    assert!(simulate_dp(&[], &p, 2.0).is_err());
}

#[test]
fn multipliers_are_validated() {
    let mut cfg = PipelineConfig::new(2, linear());
    cfg.stage_multipliers = vec![1.0];
    assert!(cfg.validate().is_err());
    cfg.stage_multipliers = vec![1.0, 0.0];
    assert!(cfg.validate().is_err());
    cfg.stage_multipliers = vec![1.0, 1.5];
    cfg.validate().unwrap();
}

fn small_workload() -> Workload {
    let mut samples = Vec::new();
    for (a, base) in [("x", 100), ("y", 700)] {
        for i in 0..16 {
            samples.push(SampleRecord::new(a, format!("{a}{i}"), base + (i * 37 % 200) as u32));
        }
    }
    Workload::new(vec![AdapterSpec::new("x", 8, 1), AdapterSpec::new("y", 8, 1)], samples).unwrap()
}

#[test]
fn policies_conserve_work() {
    let w = small_workload();
    let cfg = PipelineConfig::new(4, linear());
    let seq = simulate_pipeline(PipelineInput::Sequential(&w), &cfg).unwrap();
    let fill = simulate_pipeline(PipelineInput::UniformFill(&w), &cfg).unwrap();
    assert_eq!(seq.tokens, w.total_tokens());
    assert_eq!(fill.tokens, w.total_tokens());
    let work = |r: &SimResult| r.stage_busy.iter().sum::<f64>();
    assert!((work(&seq) - work(&fill)).abs() < 1e-9);
    // 2 adapters x 2 batches x 2 chunks, 4 runs of 2
    assert_eq!(seq.microbatches, 8);
    let expected = 4.0 * uniform_1f1b_makespan(4, 2, 808.0 * 1e-6 / 4.0, 2.0 * 808.0 * 1e-6 / 4.0);
    assert!(seq.total_time > 0.0 && expected > 0.0);
}

#[test]
fn policy_names_round_trip() {
    for p in Policy::ALL {
        assert_eq!(p.as_str().parse::<Policy>().unwrap(), p);
        assert_eq!(serde_json::to_string(&p).unwrap(), format!("\"{p}\""));
    }
    assert!("nope".parse::<Policy>().is_err());
}

#[test]
fn trace_is_deterministic() {
    let w = small_workload();
    let mut cfg = PipelineConfig::new(3, linear());
    cfg.record_trace = true;
    let a = simulate_pipeline(PipelineInput::UniformFill(&w), &cfg).unwrap();
    let b = simulate_pipeline(PipelineInput::UniformFill(&w), &cfg).unwrap();
    assert_eq!(a.trace_text(), b.trace_text());
    assert!(!a.trace.is_empty());
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn busy_time_is_conserved(tokens in prop::collection::vec(1u32..5000, 1..40), stages in 1usize..7) {
            let entries = tokens
                .iter()
                .enumerate()
                .map(|(i, &t)| {
                    let mut mb = Microbatch::empty(u64::MAX);
                    mb.push("u", 1, PackedSample { sample_id: format!("u{i}"), length_tokens: t, global_batch_index: 0 });
                    ScheduleEntry::microbatch(0, 0, mb)
                })
                .collect();
            let s = Schedule::new(stages, u64::MAX, entries);
            let cfg = PipelineConfig::new(stages, linear());
            let r = simulate_pipeline(PipelineInput::Schedule(&s), &cfg).unwrap();
            let work: f64 = tokens.iter().map(|&t| 3.0 * f64::from(t) * 1e-6 / stages as f64).sum();
            for (b, i) in r.stage_busy.iter().zip(&r.stage_idle) {
                prop_assert!((b - work).abs() < 1e-9);
                prop_assert!((b + i - r.total_time).abs() < 1e-9);
            }
            prop_assert!((0.0..1.0).contains(&r.bubble_ratio));
            let bound = (stages - 1) as f64 / (tokens.len() + stages - 1) as f64;
            if tokens.iter().all(|&t| t == tokens[0]) {
                prop_assert!((r.bubble_ratio - bound).abs() < 1e-9);
            }
        }
    }
}
