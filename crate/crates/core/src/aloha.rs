//! One slot of multi-channel slotted ALOHA.
//!
//! Any overlap on a channel destroys every packet on it (no capture), and the
//! ACK arrives in the same slot.

use rand::Rng;

use crate::error::{Error, Result};
use crate::fading::{instantaneous_utility, ChannelGainField, RadioConfig};

/// Joint action for one slot. Entry `n` is 0 (stay silent) or a channel in `1..=K`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActionProfile {
    actions: Vec<usize>,
    channels: usize,
}

impl ActionProfile {
    pub fn new(actions: Vec<usize>, channels: usize) -> Result<Self> {
        if let Some(&bad) = actions.iter().find(|&&a| a > channels) {
            return Err(Error::Shape(format!("action {bad} outside 0..={channels}")));
        }
        Ok(ActionProfile { actions, channels })
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn action(&self, user: usize) -> usize {
        self.actions[user]
    }

    pub fn users(&self) -> usize {
        self.actions.len()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of users per action, index 0 counts the silent users.
    pub fn action_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.channels + 1];
        for &a in &self.actions {
            counts[a] += 1;
        }
        counts
    }

    /// Same profile with one user's action replaced.
    pub fn with_action(&self, user: usize, action: usize) -> Self {
        let mut actions = self.actions.clone();
        actions[user] = action;
        ActionProfile {
            actions,
            channels: self.channels,
        }
    }
}

/// What a user learns at the end of a slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub ack: bool,
    /// Delivered rate in bits/s; positive exactly when `ack` is set.
    pub realized_rate: f64,
}

impl Observation {
    pub const SILENT: Observation = Observation {
        ack: false,
        realized_rate: 0.0,
    };
}

/// Resolves collisions and hands every user its observation.
pub fn step_medium(
    profile: &ActionProfile,
    field: &ChannelGainField,
    radio: &RadioConfig,
) -> Vec<Observation> {
    let counts = profile.action_counts();
    profile
        .actions()
        .iter()
        .enumerate()
        .map(|(user, &a)| {
            if a == 0 || counts[a] != 1 {
                return Observation::SILENT;
            }
            let rate = instantaneous_utility(profile, field, user, radio);
            Observation {
                ack: rate > 0.0,
                realized_rate: rate,
            }
        })
        .collect()
}

/// Per-user slot outcome probabilities for `load` users contending on one
/// channel, each transmitting with probability `p_transmit`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlohaProbabilities {
    pub no_transmission: f64,
    pub success: f64,
    pub collision: f64,
}

pub fn analytic_probabilities(p_transmit: f64, load: usize) -> Result<AlohaProbabilities> {
    if !(0.0..=1.0).contains(&p_transmit) {
        return Err(Error::invalid(
            "p_T",
            format!("{p_transmit} outside [0, 1]"),
        ));
    }
    if load == 0 {
        return Err(Error::invalid("load", "must be at least 1"));
    }
    let no_transmission = 1.0 - p_transmit;
    let success = p_transmit * (1.0 - p_transmit).powi(load as i32 - 1);
    // Closing the sum this way makes the three terms add to exactly 1.0.
    let collision = 1.0 - (no_transmission + success);
    Ok(AlohaProbabilities {
        no_transmission,
        success,
        collision,
    })
}

/// Bernoulli(`p_transmit`) gate.
pub fn draw_transmit<R: Rng + ?Sized>(rng: &mut R, p_transmit: f64) -> bool {
    if p_transmit <= 0.0 {
        return false;
    }
    if p_transmit >= 1.0 {
        return true;
    }
    rng.random::<f64>() < p_transmit
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn unit() -> (ChannelGainField, RadioConfig) {
        let radio = RadioConfig {
            snr_db: 0.0,
            bandwidth_hz: 1.0,
            ..RadioConfig::default()
        };
        (ChannelGainField::fixed(3, 3, vec![1.0; 9]).unwrap(), radio)
    }

    #[test]
    fn distinct_channels_both_ack() {
        let (field, radio) = unit();
        let field = ChannelGainField::fixed(2, 3, field.gains()[..6].to_vec()).unwrap();
        let obs = step_medium(&ActionProfile::new(vec![1, 2], 3).unwrap(), &field, &radio);
        assert!(obs.iter().all(|o| o.ack && o.realized_rate == 1.0));
    }

    #[test]
    fn shared_channel_both_fail() {
        let field = ChannelGainField::fixed(2, 1, vec![1.0, 1.0]).unwrap();
        let (_, radio) = unit();
        let obs = step_medium(&ActionProfile::new(vec![1, 1], 1).unwrap(), &field, &radio);
        assert!(obs.iter().all(|o| !o.ack && o.realized_rate == 0.0));
    }

    #[test]
    fn silent_user_gets_nothing() {
        let field = ChannelGainField::fixed(1, 1, vec![1.0]).unwrap();
        let (_, radio) = unit();
        let obs = step_medium(&ActionProfile::new(vec![0], 1).unwrap(), &field, &radio);
        assert_eq!(obs, vec![Observation::SILENT]);
    }

    #[test]
    fn profile_rejects_out_of_range() {
        assert!(ActionProfile::new(vec![0, 3], 2).is_err());
    }

    #[test]
    fn closed_form_examples() {
        let p = analytic_probabilities(0.5, 1).unwrap();
        assert_eq!((p.no_transmission, p.success, p.collision), (0.5, 0.5, 0.0));
        let p = analytic_probabilities(0.5, 2).unwrap();
        assert_eq!(
            (p.no_transmission, p.success, p.collision),
            (0.5, 0.25, 0.25)
        );
        let p = analytic_probabilities(1.0, 2).unwrap();
        assert_eq!((p.no_transmission, p.success, p.collision), (0.0, 0.0, 1.0));
        assert!(analytic_probabilities(1.5, 2).is_err());
        assert!(analytic_probabilities(0.5, 0).is_err());
    }

    #[test]
    fn probabilities_sum_exactly_to_one_on_grid() {
        for i in 1..=99 {
            let p = i as f64 / 100.0;
            for load in 1..=50 {
                let pr = analytic_probabilities(p, load).unwrap();
                assert_eq!(
                    pr.no_transmission + pr.success + pr.collision,
                    1.0,
                    "p={p} L={load}"
                );
                let direct = p * (1.0 - (1.0 - p).powi(load as i32 - 1));
                assert!((pr.collision - direct).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gate_extremes_and_frequency() {
        let mut rng = stream(3, Stream::Gate(0));
        assert!((0..1000).all(|_| !draw_transmit(&mut rng, 0.0)));
        assert!((0..1000).all(|_| draw_transmit(&mut rng, 1.0)));
        let n = 100_000;
        let hits = (0..n).filter(|_| draw_transmit(&mut rng, 0.5)).count();
        let f = hits as f64 / n as f64;
        assert!((0.49..=0.51).contains(&f), "{f}");
    }

    #[test]
    fn symmetric_single_channel_success_matches_closed_form() {
        let (users, p, slots) = (4usize, 0.3, 100_000usize);
        let field = ChannelGainField::fixed(users, 1, vec![1.0; users]).unwrap();
        let (_, radio) = unit();
        let mut rngs: Vec<_> = (0..users).map(|n| stream(5, Stream::Gate(n))).collect();
        let mut successes = 0usize;
        for _ in 0..slots {
            let actions = rngs
                .iter_mut()
                .map(|r| usize::from(draw_transmit(r, p)))
                .collect();
            let obs = step_medium(&ActionProfile::new(actions, 1).unwrap(), &field, &radio);
            successes += usize::from(obs[0].ack);
        }
        let expected = analytic_probabilities(p, users).unwrap().success;
        let freq = successes as f64 / slots as f64;
        let se = (expected * (1.0 - expected) / slots as f64).sqrt();
        assert!((freq - expected).abs() < 3.0 * se, "{freq} vs {expected}");
    }
}
