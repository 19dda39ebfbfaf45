//! Rayleigh block-fading channel gains and the per-slot utility of a joint action.
//!
//! Gains are stored as power gains `|h|²`. For a Rayleigh amplitude the power
//! gain is unit-mean exponential. In AR(1) mode the underlying complex
//! Gaussian pair is kept so the autoregression acts on `h`, not on `|h|²`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::aloha::ActionProfile;
use crate::error::{Error, Result};

/// Converts decibels to a linear power ratio.
pub fn snr_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Link-level parameters shared by all users.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadioConfig {
    /// Transmit power over noise power, in dB.
    pub snr_db: f64,
    pub bandwidth_hz: f64,
    pub doppler_hz: f64,
    pub slot_duration_s: f64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        RadioConfig {
            snr_db: 35.0,
            bandwidth_hz: 20e6,
            doppler_hz: 100.0,
            slot_duration_s: 1e-3,
        }
    }
}

impl RadioConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.snr_db.is_finite() {
            return Err(Error::invalid("snr_db", "must be finite"));
        }
        if !(self.bandwidth_hz > 0.0 && self.bandwidth_hz.is_finite()) {
            return Err(Error::invalid("bandwidth_hz", "must be positive"));
        }
        if !(self.doppler_hz >= 0.0 && self.doppler_hz.is_finite()) {
            return Err(Error::invalid("doppler_hz", "must be non-negative"));
        }
        if !(self.slot_duration_s > 0.0 && self.slot_duration_s.is_finite()) {
            return Err(Error::invalid("slot_duration_s", "must be positive"));
        }
        Ok(())
    }

    pub fn snr_linear(&self) -> f64 {
        snr_linear(self.snr_db)
    }

    /// Shannon rate in bits/s for a sole transmitter with power gain `gain`.
    pub fn rate(&self, gain: f64) -> f64 {
        self.bandwidth_hz * (1.0 + self.snr_linear() * gain).log2()
    }

    /// Rate at unit power gain; rewards are expressed in multiples of this.
    pub fn reference_rate(&self) -> f64 {
        self.rate(1.0)
    }

    /// First-order Doppler coherence `exp(-2π f_d T_s)`.
    pub fn default_ar1_coefficient(&self) -> f64 {
        (-2.0 * std::f64::consts::PI * self.doppler_hz * self.slot_duration_s).exp()
    }
}

/// How gains evolve when the field is advanced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChannelMode {
    /// Fresh independent draws on every advance.
    Iid,
    /// `h ← ρ h + sqrt(1-ρ²) w` on the complex amplitude.
    Ar1 { coefficient: f64 },
    /// Gains supplied by the caller, never changed.
    Fixed,
}

impl ChannelMode {
    pub fn validate(&self) -> Result<()> {
        if let ChannelMode::Ar1 { coefficient } = *self {
            if !(0.0..1.0).contains(&coefficient) {
                return Err(Error::invalid(
                    "ar1_coefficient",
                    format!("{coefficient} outside [0, 1)"),
                ));
            }
        }
        Ok(())
    }
}

/// Per-user, per-channel power gains `|h_n(k)|²`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelGainField {
    users: usize,
    channels: usize,
    mode: ChannelMode,
    gains: Vec<f64>,
    /// Complex amplitudes `(re, im)`, present for random modes.
    amplitudes: Vec<(f64, f64)>,
}

fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> (f64, f64) {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    (
        re * std::f64::consts::FRAC_1_SQRT_2,
        im * std::f64::consts::FRAC_1_SQRT_2,
    )
}

impl ChannelGainField {
    /// Draws an initial field. Each entry has unit-mean exponential power.
    pub fn random<R: Rng + ?Sized>(
        users: usize,
        channels: usize,
        mode: ChannelMode,
        rng: &mut R,
    ) -> Result<Self> {
        mode.validate()?;
        if matches!(mode, ChannelMode::Fixed) {
            return Err(Error::InvalidConfig(
                "fixed channel mode needs explicit gains".into(),
            ));
        }
        let amplitudes: Vec<(f64, f64)> = (0..users * channels)
            .map(|_| complex_gaussian(rng))
            .collect();
        let gains = amplitudes
            .iter()
            .map(|&(re, im)| re * re + im * im)
            .collect();
        Ok(ChannelGainField {
            users,
            channels,
            mode,
            gains,
            amplitudes,
        })
    }

    /// A field with caller-supplied power gains, row-major `users × channels`.
    pub fn fixed(users: usize, channels: usize, gains: Vec<f64>) -> Result<Self> {
        if gains.len() != users * channels {
            return Err(Error::Shape(format!(
                "expected {} gains for {users}x{channels}, got {}",
                users * channels,
                gains.len()
            )));
        }
        if gains.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::invalid(
                "fixed_gains",
                "gains must be finite and >= 0",
            ));
        }
        Ok(ChannelGainField {
            users,
            channels,
            mode: ChannelMode::Fixed,
            gains,
            amplitudes: Vec::new(),
        })
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn mode(&self) -> ChannelMode {
        self.mode
    }

    /// Power gain of `user` on `channel`, channels numbered from 1.
    pub fn gain(&self, user: usize, channel: usize) -> f64 {
        debug_assert!(channel >= 1 && channel <= self.channels);
        self.gains[user * self.channels + channel - 1]
    }

    /// Row of gains for one user, index 0 is channel 1.
    pub fn user_gains(&self, user: usize) -> &[f64] {
        &self.gains[user * self.channels..(user + 1) * self.channels]
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    /// Moves the field forward one coherence step in place.
    pub fn advance<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        match self.mode {
            ChannelMode::Fixed => {}
            ChannelMode::Iid => {
                for (amp, gain) in self.amplitudes.iter_mut().zip(self.gains.iter_mut()) {
                    *amp = complex_gaussian(rng);
                    *gain = amp.0 * amp.0 + amp.1 * amp.1;
                }
            }
            ChannelMode::Ar1 { coefficient } => {
                let innovation = (1.0 - coefficient * coefficient).sqrt();
                for (amp, gain) in self.amplitudes.iter_mut().zip(self.gains.iter_mut()) {
                    let (wr, wi) = complex_gaussian(rng);
                    amp.0 = coefficient * amp.0 + innovation * wr;
                    amp.1 = coefficient * amp.1 + innovation * wi;
                    *gain = amp.0 * amp.0 + amp.1 * amp.1;
                }
            }
        }
    }
}

/// Returns the advanced field, leaving the input untouched.
pub fn advance_gains<R: Rng + ?Sized>(field: &ChannelGainField, rng: &mut R) -> ChannelGainField {
    let mut next = field.clone();
    next.advance(rng);
    next
}

/// Throughput of `user` under the joint action: the Shannon rate of its
/// channel if it is the only transmitter there, zero otherwise.
pub fn instantaneous_utility(
    profile: &ActionProfile,
    field: &ChannelGainField,
    user: usize,
    radio: &RadioConfig,
) -> f64 {
    let channel = profile.action(user);
    if channel == 0 {
        return 0.0;
    }
    let shared = profile
        .actions()
        .iter()
        .enumerate()
        .any(|(other, &a)| other != user && a == channel);
    if shared {
        0.0
    } else {
        radio.rate(field.gain(user, channel))
    }
}
