//! Tabulates the throughput bound against the transmission probability and
//! the number of channels.
//!
//! cargo run --release --example upper_bound -- [users]

use spectrum_sim::baselines::{balanced_success, upper_bound_curve, BoundInputs};
use spectrum_sim::fading::RadioConfig;

fn main() -> spectrum_sim::Result<()> {
    let users: usize = std::env::args()
        .nth(1)
        .map_or(10, |s| s.parse().expect("users"));
    let radio = RadioConfig::default();
    println!(
        "N = {users}; bound in multiples of the unit-gain rate {:.3e} bit/s",
        radio.reference_rate()
    );
    println!("  K   p_T  success   bound");
    for channels in [2, 3, 5, 8] {
        if channels >= users {
            continue;
        }
        for p in [0.25, 0.5, channels as f64 / users as f64, 0.75] {
            let bound = upper_bound_curve(&BoundInputs {
                users,
                channels,
                p_transmit: p,
                radio,
                fixed_field: None,
                seed: 1,
            })?;
            println!(
                "{channels:3}  {p:.2}  {:.4}   {:.4}",
                balanced_success(users, channels, p)?,
                bound / radio.reference_rate()
            );
        }
    }
    Ok(())
}
