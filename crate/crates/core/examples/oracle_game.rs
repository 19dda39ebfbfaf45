//! Enumerates a small fixed-gain channel access game: welfare-optimal
//! profile, pure Nash equilibria and the payoff of uniform mixing.
//!
//! cargo run --release --example oracle_game

use spectrum_sim::baselines::{
    brute_force_optimal, is_pure_nash, mixed_strategy_payoff, UtilityTable,
};
use spectrum_sim::fading::{ChannelGainField, RadioConfig};

fn main() -> spectrum_sim::Result<()> {
    // Three users, two channels; rows are users.
    let gains = vec![2.0, 0.5, 1.0, 1.0, 0.5, 2.0];
    let field = ChannelGainField::fixed(3, 2, gains)?;
    let radio = RadioConfig {
        snr_db: 0.0,
        bandwidth_hz: 1.0,
        ..RadioConfig::default()
    };
    let table = UtilityTable::from_field(&field, &radio)?;
    let (best, welfare) = brute_force_optimal(&table)?;
    println!("{} joint profiles", table.len());
    println!(
        "optimal profile {:?}, welfare {welfare:.4} bit/s/Hz",
        best.actions()
    );
    println!("pure Nash equilibria:");
    for i in 0..table.len() {
        let profile = table.profile(i);
        if is_pure_nash(&profile, &table) {
            println!(
                "  {:?} welfare {:.4}",
                profile.actions(),
                table.welfare(&profile)
            );
        }
    }
    let uniform = vec![vec![1.0 / 3.0; 3]; 3];
    let payoff = mixed_strategy_payoff(&uniform, &table)?;
    println!("uniform mixing over silence and both channels pays {payoff:.4?}");
    Ok(())
}
