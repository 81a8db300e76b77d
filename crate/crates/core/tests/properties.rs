use std::collections::BTreeSet;

use proptest::prelude::*;
use ptylab_core::discovery::{
    run_generation, Candidate, CandidateEvaluator, DiscoveryConfig, ParentInfo,
};
use ptylab_core::evolution::{
    best_so_far, compress, lineage, ranked, select_action, Action, ActionChoice, AlgorithmRecord,
    CompressionPolicy, DiscoveryState, Outcome, PolicyConfig, PolicyState,
};
use ptylab_core::fft::{fft2, ifft2};
use ptylab_core::metrics::{Aggregation, EvalMode, EvalResult, Tier, TierPolicy};
use ptylab_core::pipeline::{lookup, validate, PipelineSpec};
use ptylab_core::recon::ReconConfig;
use ptylab_core::regops::slice_l2_renorm;
use ptylab_core::scripted::{scripted_crossover, scripted_generate, scripted_mutate, scripted_tune, ScriptedBackend, TuneNoise};
use ptylab_core::sim::{Archetype, Dataset, SimSetup};
use ptylab_core::{derive_seed, Complex64, ComplexField, Shape};

fn record(generation: u64, score: Option<f64>) -> AlgorithmRecord {
    let outcome = match score {
        Some(s) => Outcome::Evaluated {
            eval: EvalResult::from_score(EvalMode::GroundTruth, s, None, None, &TierPolicy::default()).unwrap(),
        },
        None => Outcome::Failed { error: "x".into() },
    };
    AlgorithmRecord {
        id: format!("g{generation:04}-r"),
        spec: None,
        generation,
        action: Action::Generated,
        parents: vec![],
        outcome,
        attempts: 1,
        technique_tags: vec![],
        created_at: 0,
    }
}

/// Scores on a coarse grid so ties are common; `None` is a failed record.
fn history() -> impl Strategy<Value = Vec<AlgorithmRecord>> {
    prop::collection::vec(prop::option::weighted(0.85, (0u32..=20).prop_map(|k| k as f64 / 20.0)), 0..90)
        .prop_map(|scores| scores.into_iter().enumerate().map(|(g, s)| record(g as u64, s)).collect())
}

fn compression() -> impl Strategy<Value = CompressionPolicy> {
    (1usize..8, 0usize..12, 0usize..30).prop_map(|(k, r, extra)| CompressionPolicy {
        trigger_size: k + r + 4 + extra,
        keep_top_k: k,
        keep_recent: r,
    })
}

fn archetype() -> impl Strategy<Value = Archetype> {
    prop_oneof![Just(Archetype::Multislice), Just(Archetype::Ic), Just(Archetype::Apoferritin)]
}

fn in_bounds(spec: &PipelineSpec) -> bool {
    spec.ops.iter().all(|op| {
        let entry = lookup(&op.name).unwrap();
        op.params.iter().all(|(k, v)| {
            let p = entry.param(k).unwrap();
            v.as_f64().is_none_or(|x| (p.min..=p.max).contains(&x))
        })
    })
}

proptest! {
    #[test]
    fn tiers_are_monotone_in_score(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let p = TierPolicy::default();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(p.classify(lo) <= p.classify(hi));
    }

    #[test]
    fn aggregates_are_ordered(values in prop::collection::vec(-10.0f64..10.0, 1..12), q in 0.0f64..=100.0, q2 in 0.0f64..=100.0) {
        let min = Aggregation::Min.apply(&values).unwrap();
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pq = Aggregation::Percentile(q).apply(&values).unwrap();
        let pq2 = Aggregation::Percentile(q2).apply(&values).unwrap();
        let mean = Aggregation::Mean.apply(&values).unwrap();
        let median = Aggregation::Median.apply(&values).unwrap();
        prop_assert!(min <= pq && pq <= max);
        prop_assert!(min <= median && median <= max);
        prop_assert!(min - 1e-12 <= mean && mean <= max + 1e-12);
        if q <= q2 {
            prop_assert!(pq <= pq2 + 1e-12);
        }
        prop_assert_eq!(Aggregation::Percentile(0.0).apply(&values).unwrap(), min);
        prop_assert_eq!(Aggregation::Percentile(100.0).apply(&values).unwrap(), max);
    }

    #[test]
    fn compression_invariants(h in history(), policy in compression()) {
        let out = compress(&h, &policy);
        if h.len() <= policy.trigger_size {
            prop_assert_eq!(&out, &h);
        } else {
            prop_assert!(out.len() <= policy.trigger_size);
        }
        // idempotent, order-preserving, keeps the best and the most recent
        prop_assert_eq!(&compress(&out, &policy), &out);
        let gens: Vec<u64> = out.iter().map(|r| r.generation).collect();
        prop_assert!(gens.windows(2).all(|w| w[0] < w[1]));
        if let Some(best) = ranked(&h).first() {
            prop_assert!(out.iter().any(|r| r.id == best.id));
        }
        for r in h.iter().rev().take(policy.keep_recent) {
            prop_assert!(out.contains(r));
        }
        for tier in Tier::ALL {
            if let Some(b) = ranked(&h).into_iter().find(|r| r.tier() == Some(tier)) {
                prop_assert!(out.iter().any(|r| r.id == b.id));
            }
        }
    }

    #[test]
    fn best_so_far_never_decreases(h in history()) {
        let curve = best_so_far(&h);
        prop_assert!(curve.windows(2).all(|w| w[0] <= w[1]));
        let best = ranked(&h).first().and_then(|r| r.score()).unwrap_or(0.0);
        prop_assert_eq!(curve.last().copied().unwrap_or(0.0), best);
    }

    #[test]
    fn warmup_always_generates(h in history(), warmup in 1u64..20, g in 0u64..40, draw in any::<u64>(), lt in prop::option::of(0u64..40), le in prop::option::of(0u64..40)) {
        let policy = PolicyConfig { warmup_generations: warmup, ..PolicyConfig::default() };
        let state = PolicyState { last_tune: lt, last_evolve: le };
        let choice = select_action(&h, &policy, &state, g, draw);
        if g < warmup {
            prop_assert_eq!(choice, ActionChoice::Generate);
        } else {
            for p in choice.parents() {
                let r = h.iter().find(|r| r.id == p);
                prop_assert!(r.is_some_and(|r| r.is_successful()));
            }
            if let ActionChoice::Crossover { parents } = &choice {
                prop_assert_ne!(&parents[0], &parents[1]);
            }
            if let ActionChoice::Tune { parent } = &choice {
                let r = h.iter().find(|r| &r.id == parent).unwrap();
                prop_assert_eq!(r.tier(), Some(Tier::Excellent));
            }
        }
    }

    #[test]
    fn scripted_specs_are_valid(a in archetype(), s1 in any::<u64>(), s2 in any::<u64>(), s3 in any::<u64>()) {
        let p1 = scripted_generate(a, s1);
        let p2 = scripted_generate(a, s2);
        prop_assert!(validate(&p1).is_empty(), "{:?}", validate(&p1));
        prop_assert!(in_bounds(&p1));

        let tuned = scripted_tune(&p1, s3, TuneNoise::default());
        prop_assert!(validate(&tuned).is_empty());
        prop_assert!(in_bounds(&tuned));
        let names = |s: &PipelineSpec| s.ops.iter().map(|o| o.name.clone()).collect::<Vec<_>>();
        prop_assert_eq!(names(&tuned), names(&p1));
        prop_assert_eq!(&scripted_tune(&p1, s3, TuneNoise::ZERO), &p1);

        let a1 = ParentInfo { id: "a".into(), spec: p1.clone(), score: 0.9 };
        let a2 = ParentInfo { id: "b".into(), spec: p2.clone(), score: 0.85 };
        let child = scripted_crossover(&a1, &a2);
        prop_assert!(validate(&child).is_empty());
        prop_assert!(in_bounds(&child));
        let union: BTreeSet<String> = p1.technique_tags().into_iter().chain(p2.technique_tags()).collect();
        prop_assert!(child.technique_tags().iter().all(|t| union.contains(t)));

        let (m, _) = scripted_mutate(&p1, a, s3);
        prop_assert!(validate(&m).is_empty());
        prop_assert!(in_bounds(&m));
    }

    #[test]
    fn spec_json_round_trip_keeps_id(a in archetype(), seed in any::<u64>()) {
        let spec = scripted_generate(a, seed);
        let back = PipelineSpec::from_json(&spec.to_json()).unwrap();
        prop_assert_eq!(back.id(), spec.id());
        prop_assert_eq!(back, spec);
    }

    #[test]
    fn fft_round_trip(rows in 2usize..24, cols in 2usize..24, seed in any::<u64>()) {
        let sh = Shape::new(1, rows, cols).unwrap();
        let f = ComplexField::from_fn(sh, |_, r, c| {
            let u = derive_seed(seed, &[r as u64, c as u64]);
            Complex64::new((u % 1000) as f64 / 500.0 - 1.0, ((u >> 20) % 1000) as f64 / 500.0 - 1.0)
        });
        let back = ifft2(&fft2(&f));
        for (a, b) in back.data().iter().zip(f.data()) {
            prop_assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn renorm_restores_slice_norms(scale in prop::collection::vec(0.01f64..100.0, 3), seed in any::<u64>()) {
        let sh = Shape::new(3, 6, 5).unwrap();
        let old = ComplexField::from_fn(sh, |s, r, c| {
            let u = derive_seed(seed, &[s as u64, r as u64, c as u64]);
            Complex64::new((u % 97) as f64 / 97.0 + 0.01, (u % 89) as f64 / 89.0)
        });
        let new = ComplexField::from_fn(sh, |s, r, c| old.get(s, r, c) * scale[s] * Complex64::new(0.6, 0.8));
        let out = slice_l2_renorm(&new, &old).unwrap();
        for (a, b) in out.slice_norms().iter().zip(old.slice_norms()) {
            prop_assert!((a - b).abs() <= 1e-9 * b);
        }
    }

    #[test]
    fn checkpoint_json_round_trips(h in history()) {
        let mut state = DiscoveryState::new("cafe", 9);
        let policy = CompressionPolicy { trigger_size: 30, keep_top_k: 5, keep_recent: 10 };
        for r in h {
            state.insert(r, &policy).unwrap();
            state.next_generation += 1;
        }
        let back = DiscoveryState::from_json(&state.to_json(), "cafe").unwrap();
        prop_assert_eq!(&back, &state);
        prop_assert!(DiscoveryState::from_json(&state.to_json(), "beef").is_err());
        for r in &state.archive {
            prop_assert_eq!(lineage(&state.archive, &r.id).unwrap().node_count(), 1);
        }
    }
}

/// Deterministic pseudo-score from the spec id; no image analysis.
struct HashEvaluator;

impl CandidateEvaluator for HashEvaluator {
    fn evaluate(&mut self, c: &Candidate<'_>) -> ptylab_core::Result<EvalResult> {
        let h = u64::from_str_radix(&c.spec.id()[..8], 16).unwrap();
        let score = 0.55 + 0.45 * (derive_seed(h, &[]) % 10_000) as f64 / 10_000.0;
        EvalResult::from_score(EvalMode::GroundTruth, score, None, None, &TierPolicy::default())
    }
}

fn tiny() -> (Dataset, DiscoveryConfig) {
    let ds = SimSetup::for_archetype(Archetype::Multislice, 48, 11).build().unwrap();
    let mut recon = ReconConfig::new(1);
    recon.track_metrics = false;
    let cfg = DiscoveryConfig {
        archetype: Archetype::Multislice,
        policy: PolicyConfig { warmup_generations: 4, ..PolicyConfig::default() },
        compression: CompressionPolicy { trigger_size: 19, keep_top_k: 5, keep_recent: 10 },
        tiers: TierPolicy::default(),
        recon,
    };
    (ds, cfg)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn resume_from_checkpoint_is_equivalent(split in 1u64..24, seed in any::<u64>()) {
        let (ds, cfg) = tiny();
        let total = 24;
        let mut straight = DiscoveryState::new("h", seed);
        for _ in 0..total {
            run_generation(&mut straight, &cfg, &ds, &mut ScriptedBackend::default(), &mut HashEvaluator, 0).unwrap();
        }
        let mut first = DiscoveryState::new("h", seed);
        for _ in 0..split {
            run_generation(&mut first, &cfg, &ds, &mut ScriptedBackend::default(), &mut HashEvaluator, 0).unwrap();
        }
        let mut resumed = DiscoveryState::from_json(&first.to_json(), "h").unwrap();
        for _ in split..total {
            run_generation(&mut resumed, &cfg, &ds, &mut ScriptedBackend::default(), &mut HashEvaluator, 0).unwrap();
        }
        prop_assert_eq!(&resumed, &straight);
        prop_assert!(straight.history.len() <= 19);
        prop_assert!(straight.archive[..4].iter().all(|r| r.action == Action::Generated));
    }
}
