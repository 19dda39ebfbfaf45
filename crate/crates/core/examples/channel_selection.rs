//! Top-M selection: pick the M channels with the largest Q-values, then the
//! least-loaded among them. Prints a few decisions and the comparison cost.
//!
//! cargo run --release --example channel_selection

use rand::Rng;

use spectrum_sim::agent::{select_channel_counted, top_m_channels};
use spectrum_sim::rng::{stream, Stream};

fn main() -> spectrum_sim::Result<()> {
    let q = [0.0, 0.9, 0.7, 0.95, 0.2, 0.6];
    let loads = [3, 1, 4, 1, 2];
    for m in 1..=5 {
        let (top, _) = top_m_channels(&q, m)?;
        let (chosen, comparisons) = select_channel_counted(&q, &loads, m)?;
        println!(
            "M = {m}: top {top:?} -> channel {chosen} (load {}), {comparisons} comparisons",
            loads[chosen - 1]
        );
    }

    println!("\nworst comparison count over 1000 random Q-vectors, as a multiple of K log2(M+1):");
    let mut rng = stream(4, Stream::Policy(0));
    for k in [8, 32, 128] {
        for m in [1, 2, 4, 8] {
            let mut worst = 0;
            for _ in 0..1000 {
                let q: Vec<f64> = (0..=k).map(|_| rng.random::<f64>()).collect();
                let loads: Vec<usize> = (0..k).map(|_| rng.random_range(1..5)).collect();
                worst = worst.max(select_channel_counted(&q, &loads, m)?.1);
            }
            let budget = k as f64 * ((m + 1) as f64).log2();
            println!(
                "K = {k:3}, M = {m}: {worst:4} ({:.2})",
                worst as f64 / budget
            );
        }
    }
    Ok(())
}
