//! Trains D3RL and the softmax baseline on the desk-scale setting, runs the
//! random-access baseline alongside, and prints evaluation rewards.
//!
//! cargo run --release --example compare_policies -- [seeds] [iterations]

use std::time::Instant;

use spectrum_sim::engine::{
    load_balance_statistic, run_evaluation, run_training, Policy, SimConfig,
};

fn main() -> spectrum_sim::Result<()> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().map_or(2, |s| s.parse().expect("seed count"));
    let iterations: usize = args.next().map_or(500, |s| s.parse().expect("iterations"));
    let mut extra: Vec<(String, String)> = Vec::new();
    for a in args {
        let (k, v) = a.split_once('=').expect("KEY=VALUE");
        extra.push((k.into(), v.into()));
    }
    let policies: Vec<Policy> = match extra.iter().position(|(k, _)| k == "policies") {
        Some(i) => extra
            .remove(i)
            .1
            .split(',')
            .map(|p| p.parse().expect("policy name"))
            .collect(),
        None => Policy::ALL.to_vec(),
    };
    for policy in &policies {
        let mut total = 0.0;
        for seed in 1..=seeds {
            let base = SimConfig {
                iterations,
                policy: *policy,
                seed,
                eval_episodes: Some(50),
                record_slots: false,
                ..SimConfig::default()
            };
            let cfg = spectrum_sim::config::apply_assignments(base, &extra)?;
            let start = Instant::now();
            let trained = run_training(&cfg)?;
            let eval = run_evaluation(&cfg, &trained.snapshots)?;
            let balance = load_balance_statistic(&trained.record);
            let r = eval.mean_reward();
            total += r;
            println!(
                "{policy:8} seed {seed}: eval reward {r:.4}  max load {:.2}  ({:.1}s)",
                balance.max_load,
                start.elapsed().as_secs_f64()
            );
        }
        println!("{policy:8} mean {:.4}", total / seeds as f64);
    }
    Ok(())
}
