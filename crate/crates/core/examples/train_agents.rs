//! Trains D3RL agents at desk scale, evaluates them, writes their snapshots
//! and reports the load balance reached.
//!
//! cargo run --release --example train_agents -- [iterations] [snapshot dir]

use std::time::Instant;

use spectrum_sim::engine::{
    load_balance_statistic, run_evaluation, run_training, upper_bound_reward, SimConfig,
};
use spectrum_sim::snapshot::{agent_from_str, agent_to_string};

fn main() -> spectrum_sim::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations: usize = args.next().map_or(200, |s| s.parse().expect("iterations"));
    let dir = std::path::PathBuf::from(args.next().unwrap_or_else(|| "train-agents-out".into()));
    let cfg = SimConfig {
        iterations,
        record_slots: false,
        ..SimConfig::default()
    };

    let start = Instant::now();
    let out = run_training(&cfg)?;
    println!(
        "trained {iterations} iterations in {:.1}s",
        start.elapsed().as_secs_f64()
    );
    for s in out
        .record
        .summaries
        .iter()
        .step_by((iterations / 10).max(1))
    {
        println!(
            "iteration {:4}: reward {:.4}, collisions {:.3}, max load {:.2}",
            s.iteration, s.mean_reward, s.collision_rate, s.max_true_load
        );
    }

    std::fs::create_dir_all(&dir)?;
    for (n, snap) in out.snapshots.iter().enumerate() {
        let text = agent_to_string(snap);
        assert_eq!(&agent_from_str(&text)?, snap);
        std::fs::write(dir.join(format!("agent{n}.txt")), text)?;
    }
    println!("snapshots written to {}", dir.display());

    let eval = run_evaluation(&cfg, &out.snapshots)?;
    let balance = load_balance_statistic(&out.record);
    println!(
        "evaluation reward {:.4} (bound {:.4}); final-quarter max load {:.2} vs N/K = {:.1}",
        eval.mean_reward(),
        upper_bound_reward(&cfg)?,
        balance.max_load,
        balance.reference
    );
    Ok(())
}
