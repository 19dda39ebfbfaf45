//! Feeds ACK counts from a channel with a known number of contenders into
//! the load counters and shows how the estimate settles.
//!
//! cargo run --release --example load_estimation -- [true load] [p_T]

use spectrum_sim::aloha::draw_transmit;
use spectrum_sim::load::{LoadCounters, LoadEstimator};
use spectrum_sim::rng::{stream, Stream};

fn main() -> spectrum_sim::Result<()> {
    let mut args = std::env::args().skip(1);
    let load: usize = args.next().map_or(3, |s| s.parse().expect("load"));
    let p: f64 = args.next().map_or(0.5, |s| s.parse().expect("p_T"));
    let users = 10;
    let estimator = LoadEstimator::new(p, users)?;
    let mut counters = LoadCounters::new(1, 100);
    let mut gates: Vec<_> = (0..load).map(|n| stream(7, Stream::Gate(n))).collect();

    println!("true load {load}, p_T = {p}; user 0 observes channel 1");
    for slot in 1..=400 {
        let sends: Vec<bool> = gates.iter_mut().map(|g| draw_transmit(g, p)).collect();
        let others = sends[1..].iter().filter(|&&s| s).count();
        counters.record(1, sends[0], sends[0] && others == 0)?;
        counters.end_slot();
        if slot % 50 == 0 {
            let c = counters.counts(1);
            let shown = estimator
                .estimate(&counters, 1)
                .map_or("unknown".to_string(), |l| l.to_string());
            println!(
                "slot {slot:3}: {:3} sent, {:3} acked, estimate {shown}",
                c.transmitted, c.succeeded
            );
        }
    }
    Ok(())
}
