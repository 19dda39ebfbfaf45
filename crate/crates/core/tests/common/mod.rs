//! Property checks shared by the property tests and the acceptance gate.
//! Each check returns `Err` with a description of the first violation.

#![allow(dead_code)]

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::Rng;

use spectrum_sim::agent::{build_double_q_target, select_channel};
use spectrum_sim::aloha::analytic_probabilities;
use spectrum_sim::engine::{run_training, SimConfig};
use spectrum_sim::load::{ChannelCounts, LoadEstimator};
use spectrum_sim::qnet::{
    backward, dueling_aggregate, loss, NetShape, QNetworkParams, Sequence, TrainingBatch,
};
use spectrum_sim::rng::{stream, Stream};
use spectrum_sim::snapshot::{params_from_str, params_to_string};

pub type Check = Result<(), String>;
pub type NamedCheck = (&'static str, fn() -> Check);

pub fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Check
where
    S::Value: std::fmt::Debug,
{
    runner(cases)
        .run(&strategy, test)
        .map_err(|e| e.to_string())
}

/// Exact success ratios `(1 − p)^(L−1)` realized on 10¹⁸ transmissions invert
/// to `L` for every `L ≤ 20` and `p` on a 0.05-spaced grid up to 0.8 (beyond
/// 0.8 the ratio for `L = 20` underflows a 64-bit count).
pub fn check_load_inversion() -> Check {
    let transmitted: u64 = 1_000_000_000_000_000_000;
    for step in 1..=16 {
        let p = step as f64 * 0.05;
        let estimator = LoadEstimator::new(p, 20).map_err(|e| e.to_string())?;
        for load in 1..=20usize {
            let ratio = (1.0 - p).powi(load as i32 - 1);
            let counts = ChannelCounts {
                transmitted,
                succeeded: (ratio * transmitted as f64).round() as u64,
            };
            let got = estimator.estimate_counts(counts);
            if got != Some(load) {
                return Err(format!("p = {p}, L = {load}: estimated {got:?}"));
            }
        }
    }
    Ok(())
}

/// More successes never raise the estimate.
pub fn check_estimate_monotone() -> Check {
    run(
        2_000,
        (0.01f64..0.99, 1u64..500, 2usize..40),
        |(p, transmitted, users)| {
            let e = LoadEstimator::new(p, users).unwrap();
            let mut last = usize::MAX;
            for succeeded in 0..=transmitted {
                let l = e
                    .estimate_counts(ChannelCounts {
                        transmitted,
                        succeeded,
                    })
                    .unwrap();
                prop_assert!(l <= last && (1..=users).contains(&l));
                last = l;
            }
            Ok(())
        },
    )
}

pub fn check_probability_sum() -> Check {
    run(20_000, (0.0f64..=1.0, 1usize..200), |(p, load)| {
        let a = analytic_probabilities(p, load).unwrap();
        prop_assert_eq!(a.no_transmission + a.success + a.collision, 1.0);
        Ok(())
    })
}

/// Reference selection: larger Q first, lower index on ties, then least load.
fn brute_force_select(q: &[f64], loads: &[usize], m: usize) -> usize {
    let mut channels: Vec<usize> = (1..q.len()).collect();
    channels.sort_by(|&a, &b| q[b].total_cmp(&q[a]).then(a.cmp(&b)));
    channels.truncate(m);
    *channels
        .iter()
        .min_by(|&&a, &&b| {
            loads[a - 1]
                .cmp(&loads[b - 1])
                .then(q[b].total_cmp(&q[a]))
                .then(a.cmp(&b))
        })
        .unwrap()
}

/// For K ≤ 6 and M ≤ 3, every load vector in {1..4}^K, with continuous and
/// heavily tied Q-vectors.
pub fn check_selection_brute_force() -> Check {
    let mut rng = stream(11, Stream::Policy(0));
    for k in 1..=6usize {
        for m in 1..=k.min(3) {
            for code in 0..4usize.pow(k as u32) {
                let loads: Vec<usize> = (0..k)
                    .map(|i| 1 + code / 4usize.pow(i as u32) % 4)
                    .collect();
                let continuous: Vec<f64> = (0..=k).map(|_| rng.random_range(-1.0..1.0)).collect();
                let tied: Vec<f64> = (0..=k).map(|_| rng.random_range(0..3) as f64).collect();
                for q in [continuous, tied] {
                    let got = select_channel(&q, &loads, m).map_err(|e| e.to_string())?;
                    let want = brute_force_select(&q, &loads, m);
                    if got != want {
                        return Err(format!(
                            "q {q:?} loads {loads:?} M {m}: got {got}, want {want}"
                        ));
                    }
                }
            }
        }
    }
    Ok(())
}

fn selection_instance() -> impl Strategy<Value = (Vec<f64>, Vec<usize>, usize)> {
    (1usize..=20).prop_flat_map(|k| {
        (
            prop::collection::vec(-5.0f64..5.0, k + 1),
            prop::collection::vec(1usize..=10, k),
            1..=k.min(8),
        )
    })
}

/// The chosen channel is in the top-M set and no other member has a smaller
/// load; 10⁴ instances with K ≤ 20, M ≤ 8.
pub fn check_selection_invariants() -> Check {
    run(10_000, selection_instance(), |(q, loads, m)| {
        let chosen = select_channel(&q, &loads, m).unwrap();
        let mut order: Vec<usize> = (1..q.len()).collect();
        order.sort_by(|&a, &b| q[b].total_cmp(&q[a]).then(a.cmp(&b)));
        let top = &order[..m];
        prop_assert!(top.contains(&chosen));
        prop_assert!(top.iter().all(|&c| loads[chosen - 1] <= loads[c - 1]));
        Ok(())
    })
}

/// Strictly increasing transforms of Q leave the choice unchanged.
pub fn check_rank_invariance() -> Check {
    run(
        10_000,
        (selection_instance(), 0.1f64..10.0, -3.0f64..3.0),
        |((q, loads, m), scale, shift)| {
            let base = select_channel(&q, &loads, m).unwrap();
            let transforms: [&dyn Fn(f64) -> f64; 3] =
                [&|x| x * scale + shift, &|x| x.exp(), &|x| x * x * x + x];
            for f in transforms {
                let mapped: Vec<f64> = q.iter().map(|&x| f(x)).collect();
                prop_assert_eq!(select_channel(&mapped, &loads, m).unwrap(), base);
            }
            Ok(())
        },
    )
}

/// Adding a constant to every advantage leaves Q unchanged, and adding it to
/// the value shifts every Q by exactly that constant. Values are multiples
/// of 1/16 and the action count a power of two, so every operation is exact
/// in binary floating point.
pub fn check_dueling_shift() -> Check {
    let dyadic = || (-1024i32..1024).prop_map(|v| v as f64 / 16.0);
    let strategy = (0u32..5).prop_flat_map(move |log_n| {
        (
            dyadic(),
            prop::collection::vec(dyadic(), 1usize << log_n),
            dyadic(),
        )
    });
    run(5_000, strategy, |(v, adv, c)| {
        let q = dueling_aggregate(v, &adv);
        let shifted: Vec<f64> = adv.iter().map(|a| a + c).collect();
        prop_assert_eq!(dueling_aggregate(v, &shifted), q.clone());
        let raised: Vec<f64> = q.iter().map(|x| x + c).collect();
        prop_assert_eq!(dueling_aggregate(v + c, &adv), raised);
        Ok(())
    })
}

pub fn check_double_q_reduction() -> Check {
    let strategy = (
        prop::collection::vec(-10.0f64..10.0, 1..30),
        -2.0f64..2.0,
        0.0f64..=1.0,
    );
    run(10_000, strategy, |(q, r, gamma)| {
        let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(build_double_q_target(r, &q, &q, gamma), r + gamma * max);
        Ok(())
    })
}

fn gradient_batch(seed: u64, shape: NetShape) -> TrainingBatch {
    let mut rng = stream(seed, Stream::Policy(1));
    let sequences = (0..2)
        .map(|_| {
            let len = 4;
            Sequence {
                inputs: (0..len)
                    .map(|_| {
                        (0..shape.inputs)
                            .map(|_| rng.random_range(0.0..1.0))
                            .collect()
                    })
                    .collect(),
                targets: (0..len)
                    .map(|_| {
                        (0..shape.actions)
                            .map(|_| rng.random_range(-2.0..2.0))
                            .collect()
                    })
                    .collect(),
                actions: (0..len)
                    .map(|_| rng.random_range(0..shape.actions))
                    .collect(),
            }
        })
        .collect();
    TrainingBatch { sequences }
}

/// Largest relative error between the analytic gradient and a central
/// difference with step 1e-5, over 20 seeded networks with K = 2, H = 3.
/// Entries where both are below 1e-7 in magnitude are compared absolutely.
pub fn max_gradient_error() -> Result<f64, String> {
    let h = 1e-5;
    let shape = NetShape::for_channels(2, 3, 3, 3);
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let params = QNetworkParams::random(shape, &mut stream(seed, Stream::Init(0)))
            .map_err(|e| e.to_string())?;
        let batch = gradient_batch(seed, shape);
        let grads = backward(&params, &batch).map_err(|e| e.to_string())?;
        let analytic: Vec<f64> = grads.values().copied().collect();
        for (i, &g) in analytic.iter().enumerate() {
            let mut plus = params.clone();
            *plus.values_mut().nth(i).unwrap() += h;
            let mut minus = params.clone();
            *minus.values_mut().nth(i).unwrap() -= h;
            let fd = (loss(&plus, &batch).unwrap() - loss(&minus, &batch).unwrap()) / (2.0 * h);
            let scale = g.abs().max(fd.abs());
            let err = if scale < 1e-7 {
                (g - fd).abs()
            } else {
                (g - fd).abs() / scale
            };
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

pub fn check_gradients() -> Check {
    let worst = max_gradient_error()?;
    if worst < 1e-4 {
        Ok(())
    } else {
        Err(format!("max relative gradient error {worst:e}"))
    }
}

pub fn check_snapshot_round_trip() -> Check {
    run(200, (any::<u64>(), 1usize..5, 1usize..6), |(seed, k, h)| {
        let shape = NetShape::for_channels(k, h, 2, 3);
        let mut params = QNetworkParams::random(shape, &mut stream(seed, Stream::Init(0))).unwrap();
        // Include awkward values.
        if let Some(v) = params.values_mut().next() {
            *v = 1e-300;
        }
        let back = params_from_str(&params_to_string(&params)).unwrap();
        let same = params
            .values()
            .zip(back.values())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same);
        Ok(())
    })
}

/// Two runs with the same seed write byte-identical CSV.
pub fn check_determinism() -> Check {
    let cfg = SimConfig {
        users: 4,
        channels: 2,
        iterations: 4,
        episodes: 2,
        slots: 6,
        hidden: 5,
        seed: 77,
        ..SimConfig::default()
    };
    let csv = || -> Result<Vec<u8>, String> {
        let out = run_training(&cfg).map_err(|e| e.to_string())?;
        let mut bytes = Vec::new();
        out.record
            .write_rows(&mut bytes)
            .map_err(|e| e.to_string())?;
        out.record
            .write_summaries(&mut bytes)
            .map_err(|e| e.to_string())?;
        for s in &out.snapshots {
            bytes.extend(spectrum_sim::snapshot::agent_to_string(s).into_bytes());
        }
        Ok(bytes)
    };
    if csv()? == csv()? {
        Ok(())
    } else {
        Err("reruns differ".into())
    }
}

/// Every property check, by name.
pub fn property_suite() -> Vec<NamedCheck> {
    vec![
        ("load inversion exact for L <= 20", check_load_inversion),
        (
            "load estimate monotone in successes",
            check_estimate_monotone,
        ),
        ("P_NT + P_succ + P_coll == 1", check_probability_sum),
        ("selection matches brute force", check_selection_brute_force),
        (
            "selection in top-M with minimal load",
            check_selection_invariants,
        ),
        ("selection rank invariant", check_rank_invariance),
        ("dueling shift invariance", check_dueling_shift),
        ("double-Q reduces to Q-learning", check_double_q_reduction),
        ("gradient matches finite differences", check_gradients),
        ("snapshot round trip", check_snapshot_round_trip),
        ("bit-identical reruns", check_determinism),
    ]
}
