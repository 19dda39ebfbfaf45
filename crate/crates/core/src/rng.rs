//! Named random streams.
//!
//! A run owns one master seed. Every consumer of randomness (fading, weight
//! initialization, per-agent transmit gating, per-agent exploration, ...) gets
//! its own ChaCha stream keyed by `(seed, stream id)`. Changing how many draws
//! one consumer makes never shifts another consumer's sequence, so a D3RL run
//! and a baseline run with the same seed see the same fading realization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Identifies an independent stream derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Fading,
    Init(usize),
    Gate(usize),
    Explore(usize),
    Policy(usize),
    EvalGate(usize),
    EvalPolicy(usize),
    EvalFading,
    Bound,
}

impl Stream {
    fn id(self) -> u64 {
        let (kind, index) = match self {
            Stream::Fading => (1, 0),
            Stream::Init(i) => (2, i),
            Stream::Gate(i) => (3, i),
            Stream::Explore(i) => (4, i),
            Stream::Policy(i) => (5, i),
            Stream::EvalGate(i) => (6, i),
            Stream::EvalPolicy(i) => (7, i),
            Stream::Bound => (8, 0),
            Stream::EvalFading => (9, 0),
        };
        (kind << 32) | index as u64
    }
}

pub fn stream(seed: u64, which: Stream) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}
