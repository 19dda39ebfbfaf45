//! Simulates slotted multi-channel ALOHA over Rayleigh gains and compares
//! the empirical per-user outcome frequencies with the closed form.
//!
//! cargo run --release --example aloha_medium -- [users] [channels] [slots]

use spectrum_sim::aloha::{analytic_probabilities, draw_transmit, step_medium, ActionProfile};
use spectrum_sim::fading::{ChannelGainField, ChannelMode, RadioConfig};
use spectrum_sim::rng::{stream, Stream};

fn main() -> spectrum_sim::Result<()> {
    let mut args = std::env::args()
        .skip(1)
        .map(|a| a.parse::<usize>().expect("integer argument"));
    let users = args.next().unwrap_or(10);
    let channels = args.next().unwrap_or(5);
    let slots = args.next().unwrap_or(100_000);
    let p = channels as f64 / users as f64;
    let radio = RadioConfig::default();

    let mut fading = stream(1, Stream::Fading);
    let mut field = ChannelGainField::random(users, channels, ChannelMode::Iid, &mut fading)?;
    let mut gate = stream(1, Stream::Gate(0));

    // Users spread round-robin so every channel carries the same load.
    let load = users.div_ceil(channels);
    let mut silent = 0u64;
    let mut acked = 0u64;
    let mut rate = 0.0;
    for _ in 0..slots {
        field.advance(&mut fading);
        let actions: Vec<usize> = (0..users)
            .map(|n| {
                if draw_transmit(&mut gate, p) {
                    n % channels + 1
                } else {
                    0
                }
            })
            .collect();
        let profile = ActionProfile::new(actions, channels)?;
        // User 0 is the one we follow.
        let obs = step_medium(&profile, &field, &radio);
        silent += u64::from(profile.action(0) == 0);
        acked += u64::from(obs[0].ack);
        rate += obs[0].realized_rate;
    }
    let a = analytic_probabilities(p, load)?;
    let n = slots as f64;
    println!("N = {users}, K = {channels}, p_T = {p:.3}, load on user 0's channel = {load}");
    println!("               empirical   closed form");
    println!(
        "silent         {:9.4}   {:11.4}",
        silent as f64 / n,
        a.no_transmission
    );
    println!(
        "success        {:9.4}   {:11.4}",
        acked as f64 / n,
        a.success
    );
    println!(
        "collision      {:9.4}   {:11.4}",
        (n - silent as f64 - acked as f64) / n,
        a.collision
    );
    println!("mean delivered rate of user 0: {:.3e} bit/s", rate / n);
    Ok(())
}
