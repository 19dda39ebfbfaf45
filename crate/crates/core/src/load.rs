//! Channel load estimation from a user's own ACK statistics.
//!
//! Under slotted ALOHA a transmission on a channel contended by `L` users
//! succeeds with probability `(1 - p_T)^(L-1)`. Inverting the observed success
//! ratio gives the load estimate
//!
//! ```text
//! L̂ = 1 + ceil( log(succeeded / transmitted) / log(1 - p_T) - offset )
//! ```
//!
//! With `offset = 0` this is the plain ceiling. The default offset of 0.5
//! turns the ceiling into rounding, which keeps estimates stable when the
//! true ratio sits exactly on an integer boundary (every `L ≥ 2` does).

use crate::error::{Error, Result};

/// Default shift subtracted before the ceiling.
pub const DEFAULT_CEIL_OFFSET: f64 = 0.5;

/// Transmission and success counts of one channel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ChannelCounts {
    pub transmitted: u64,
    pub succeeded: u64,
}

impl ChannelCounts {
    fn add(self, other: ChannelCounts) -> ChannelCounts {
        ChannelCounts {
            transmitted: self.transmitted + other.transmitted,
            succeeded: self.succeeded + other.succeeded,
        }
    }
}

/// Per-channel counters over a two-bucket window.
///
/// Counts land in the current bucket. Every `window` slots the current bucket
/// replaces the previous one and starts again from zero. Estimates read the
/// sum of both buckets, so they always cover between one and two windows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadCounters {
    window: usize,
    slots_in_bucket: usize,
    current: Vec<ChannelCounts>,
    previous: Vec<ChannelCounts>,
}

impl LoadCounters {
    pub fn new(channels: usize, window: usize) -> Self {
        LoadCounters {
            window: window.max(1),
            slots_in_bucket: 0,
            current: vec![ChannelCounts::default(); channels],
            previous: vec![ChannelCounts::default(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.current.len()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Counts for `channel` (numbered from 1) over the live window.
    pub fn counts(&self, channel: usize) -> ChannelCounts {
        self.current[channel - 1].add(self.previous[channel - 1])
    }

    /// Records one slot's outcome on `channel`. Silent slots leave counts alone.
    pub fn record(&mut self, channel: usize, transmitted: bool, ack: bool) -> Result<()> {
        if ack && !transmitted {
            return Err(Error::AckWithoutTransmission { channel });
        }
        if !transmitted {
            return Ok(());
        }
        if channel == 0 || channel > self.current.len() {
            return Err(Error::Shape(format!(
                "channel {channel} outside 1..={}",
                self.current.len()
            )));
        }
        let c = &mut self.current[channel - 1];
        c.transmitted += 1;
        c.succeeded += u64::from(ack);
        Ok(())
    }

    /// Advances the window clock by one slot.
    pub fn end_slot(&mut self) {
        self.slots_in_bucket += 1;
        if self.slots_in_bucket >= self.window {
            self.previous = std::mem::replace(
                &mut self.current,
                vec![ChannelCounts::default(); self.previous.len()],
            );
            self.slots_in_bucket = 0;
        }
    }

    pub fn reset(&mut self) {
        self.current.fill(ChannelCounts::default());
        self.previous.fill(ChannelCounts::default());
        self.slots_in_bucket = 0;
    }

    /// Raw bucket state, used by snapshots.
    pub(crate) fn parts(&self) -> (usize, &[ChannelCounts], &[ChannelCounts]) {
        (self.slots_in_bucket, &self.current, &self.previous)
    }

    pub(crate) fn from_parts(
        window: usize,
        slots_in_bucket: usize,
        current: Vec<ChannelCounts>,
        previous: Vec<ChannelCounts>,
    ) -> Result<Self> {
        if current.len() != previous.len() {
            return Err(Error::Shape("counter buckets differ in length".into()));
        }
        if current
            .iter()
            .chain(&previous)
            .any(|c| c.succeeded > c.transmitted)
        {
            return Err(Error::Shape("more successes than transmissions".into()));
        }
        Ok(LoadCounters {
            window: window.max(1),
            slots_in_bucket,
            current,
            previous,
        })
    }
}

/// Estimated per-channel loads; `None` means nothing was observed yet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadEstimate(pub Vec<Option<usize>>);

impl LoadEstimate {
    pub fn unknown(channels: usize) -> Self {
        LoadEstimate(vec![None; channels])
    }

    pub fn channels(&self) -> usize {
        self.0.len()
    }

    /// Loads with unknown entries replaced by the uniform prior `ceil(N/K)`.
    pub fn resolved(&self, users: usize) -> Vec<usize> {
        let prior = users.div_ceil(self.0.len().max(1));
        self.0.iter().map(|l| l.unwrap_or(prior)).collect()
    }
}

/// Inverts ACK statistics into integer loads for one user.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadEstimator {
    p_transmit: f64,
    users: usize,
    ceil_offset: f64,
}

impl LoadEstimator {
    pub fn new(p_transmit: f64, users: usize) -> Result<Self> {
        Self::with_offset(p_transmit, users, DEFAULT_CEIL_OFFSET)
    }

    pub fn with_offset(p_transmit: f64, users: usize, ceil_offset: f64) -> Result<Self> {
        if !(p_transmit > 0.0 && p_transmit < 1.0) {
            return Err(Error::invalid(
                "p_T",
                format!("load estimation needs 0 < p_T < 1, got {p_transmit}"),
            ));
        }
        if !(0.0..1.0).contains(&ceil_offset) {
            return Err(Error::invalid("ceil_offset", "must lie in [0, 1)"));
        }
        if users == 0 {
            return Err(Error::invalid("N", "must be at least 1"));
        }
        Ok(LoadEstimator {
            p_transmit,
            users,
            ceil_offset,
        })
    }

    pub fn estimate_counts(&self, counts: ChannelCounts) -> Option<usize> {
        if counts.transmitted == 0 {
            return None;
        }
        if counts.succeeded == 0 {
            return Some(self.users);
        }
        let ratio = counts.succeeded as f64 / counts.transmitted as f64;
        let exponent = ratio.ln() / (1.0 - self.p_transmit).ln();
        let extra = (exponent - self.ceil_offset).ceil().max(0.0);
        let load = 1.0 + extra;
        Some((load as usize).clamp(1, self.users))
    }

    pub fn estimate(&self, counters: &LoadCounters, channel: usize) -> Option<usize> {
        self.estimate_counts(counters.counts(channel))
    }

    pub fn estimate_all(&self, counters: &LoadCounters) -> LoadEstimate {
        LoadEstimate(
            (1..=counters.channels())
                .map(|k| self.estimate(counters, k))
                .collect(),
        )
    }
}

/// Load estimate for one channel with the default rounding offset.
pub fn estimate_load(
    counters: &LoadCounters,
    channel: usize,
    p_transmit: f64,
    users: usize,
) -> Result<Option<usize>> {
    Ok(LoadEstimator::new(p_transmit, users)?.estimate(counters, channel))
}

/// Network input: coordinate `k ≥ 1` holds the (estimated) load of channel
/// `k`, coordinate 0 the users left over for "silent".
pub fn estimated_count_vector(estimate: &LoadEstimate, users: usize) -> Vec<usize> {
    let loads = estimate.resolved(users);
    let assigned: usize = loads.iter().sum();
    let mut out = Vec::with_capacity(loads.len() + 1);
    out.push(users.saturating_sub(assigned));
    out.extend(loads);
    out
}
