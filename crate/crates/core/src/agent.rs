//! The per-user D3RL policy.
//!
//! Each slot a user runs its selection network on the load vector, keeps the
//! `M` channels with the largest Q-values, and among those picks the one with
//! the smallest load. The ALOHA gate then decides whether it transmits at all.
//! Training targets follow double Q-learning: the selection network picks the
//! next action, the evaluation network scores it.

use std::cmp::Ordering;

use rand::Rng;

use crate::aloha::{draw_transmit, Observation};
use crate::error::{Error, Result};
use crate::fading::RadioConfig;
use crate::load::{LoadCounters, LoadEstimate};
use crate::qnet::{argmax, forward, LstmState, QNetworkParams};
use crate::rng::SimRng;
use crate::snapshot::AgentSnapshot;

/// Orders channel candidates: larger Q first, lower index on ties.
fn q_rank(q: &[f64], a: usize, b: usize) -> Ordering {
    q[b].total_cmp(&q[a]).then(a.cmp(&b))
}

/// Fixed-capacity heap holding the `m` best-ranked channels seen so far.
/// The root is the worst of the kept channels.
struct TopM<'q> {
    q: &'q [f64],
    heap: Vec<usize>,
    capacity: usize,
    comparisons: u64,
}

impl<'q> TopM<'q> {
    fn new(q: &'q [f64], capacity: usize) -> Self {
        TopM {
            q,
            heap: Vec::with_capacity(capacity),
            capacity,
            comparisons: 0,
        }
    }

    /// True when channel `a` ranks worse than channel `b`.
    fn worse(&mut self, a: usize, b: usize) -> bool {
        self.comparisons += 1;
        q_rank(self.q, a, b) == Ordering::Greater
    }

    fn offer(&mut self, channel: usize) {
        if self.heap.len() < self.capacity {
            self.heap.push(channel);
            let mut i = self.heap.len() - 1;
            while i > 0 {
                let parent = (i - 1) / 2;
                if self.worse(self.heap[i], self.heap[parent]) {
                    self.heap.swap(i, parent);
                    i = parent;
                } else {
                    break;
                }
            }
        } else if self.worse(self.heap[0], channel) {
            self.heap[0] = channel;
            let mut i = 0;
            loop {
                let (l, r) = (2 * i + 1, 2 * i + 2);
                let mut worst = i;
                if l < self.heap.len() && self.worse(self.heap[l], self.heap[worst]) {
                    worst = l;
                }
                if r < self.heap.len() && self.worse(self.heap[r], self.heap[worst]) {
                    worst = r;
                }
                if worst == i {
                    break;
                }
                self.heap.swap(i, worst);
                i = worst;
            }
        }
    }
}

/// The `m` channels (numbered from 1) with the largest Q-values, best first,
/// plus the number of Q comparisons spent by the bounded heap.
///
/// `q` is the full output vector; entry 0 (stay silent) never competes.
pub fn top_m_channels(q: &[f64], m: usize) -> Result<(Vec<usize>, u64)> {
    let channels = q.len().saturating_sub(1);
    if m == 0 || m > channels {
        return Err(Error::InvalidConfig(format!(
            "M = {m} must lie in 1..={channels}"
        )));
    }
    let mut top = TopM::new(q, m);
    for k in 1..=channels {
        top.offer(k);
    }
    let comparisons = top.comparisons;
    let mut chosen = top.heap;
    chosen.sort_by(|&a, &b| q_rank(q, a, b));
    Ok((chosen, comparisons))
}

/// Least-loaded channel among the `m` best by Q-value.
///
/// `loads[k-1]` is the (resolved) load of channel `k`. Load ties go to the
/// higher Q-value, then to the lower index.
pub fn select_channel(q: &[f64], loads: &[usize], m: usize) -> Result<usize> {
    Ok(select_channel_counted(q, loads, m)?.0)
}

/// [`select_channel`] that also reports the comparisons made.
pub fn select_channel_counted(q: &[f64], loads: &[usize], m: usize) -> Result<(usize, u64)> {
    if loads.len() + 1 != q.len() {
        return Err(Error::Shape(format!(
            "{} loads for {} channels",
            loads.len(),
            q.len().saturating_sub(1)
        )));
    }
    let (top, mut comparisons) = top_m_channels(q, m)?;
    // `top` is sorted best first, so the first minimum wins ties by Q and index.
    let mut best = top[0];
    for &k in &top[1..] {
        comparisons += 1;
        if loads[k - 1] < loads[best - 1] {
            best = k;
        }
    }
    Ok((best, comparisons))
}

/// `r + γ · q2_next[argmax q1_next]`.
pub fn build_double_q_target(reward: f64, q1_next: &[f64], q2_next: &[f64], gamma: f64) -> f64 {
    reward + gamma * q2_next[argmax(q1_next)]
}

/// Delivered rate in units of the unit-gain rate `B·log2(1 + SNR)`.
pub fn reward_from_observation(obs: &Observation, radio: &RadioConfig) -> f64 {
    if obs.ack {
        obs.realized_rate / radio.reference_rate()
    } else {
        0.0
    }
}

/// Actions, observations and load vectors seen by one user.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AgentHistory {
    pub actions: Vec<usize>,
    pub observations: Vec<Observation>,
    pub loads: Vec<LoadEstimate>,
}

impl AgentHistory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    fn check_aligned(&self) -> Result<()> {
        if self.actions.len() != self.observations.len() || self.actions.len() != self.loads.len() {
            return Err(Error::MisalignedHistory {
                actions: self.actions.len(),
                observations: self.observations.len(),
                loads: self.loads.len(),
            });
        }
        Ok(())
    }

    pub fn clear(&mut self) {
        self.actions.clear();
        self.observations.clear();
        self.loads.clear();
    }
}

/// Result of one call to [`AgentState::act`].
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    /// 0 for silence, otherwise the channel transmitted on.
    pub action: usize,
    /// Channel the selection layer (or exploration) picked, before the gate.
    pub intended: usize,
    pub q: Vec<f64>,
}

/// Everything one user owns.
#[derive(Debug, Clone)]
pub struct AgentState {
    /// Selection network (DQN1).
    pub params1: QNetworkParams,
    /// Evaluation network (DQN2).
    pub params2: QNetworkParams,
    pub lstm_state: LstmState,
    /// Recurrent state of the evaluation network over the same inputs.
    pub eval_state: LstmState,
    pub counters: LoadCounters,
    pub history: AgentHistory,
    pub best_channels: usize,
    pub exploration_epsilon: f64,
    gate_rng: SimRng,
    explore_rng: SimRng,
}

impl AgentState {
    pub fn new(
        params: QNetworkParams,
        best_channels: usize,
        window: usize,
        gate_rng: SimRng,
        explore_rng: SimRng,
    ) -> Result<Self> {
        let channels = params.shape().actions - 1;
        if best_channels == 0 || best_channels > channels {
            return Err(Error::InvalidConfig(format!(
                "M = {best_channels} must lie in 1..={channels}"
            )));
        }
        let hidden = params.shape().hidden;
        Ok(AgentState {
            params2: params.clone(),
            params1: params,
            lstm_state: LstmState::zeros(hidden),
            eval_state: LstmState::zeros(hidden),
            counters: LoadCounters::new(channels, window),
            history: AgentHistory::default(),
            best_channels,
            exploration_epsilon: 0.0,
            gate_rng,
            explore_rng,
        })
    }

    pub fn from_snapshot(
        snapshot: AgentSnapshot,
        best_channels: usize,
        gate_rng: SimRng,
        explore_rng: SimRng,
    ) -> Result<Self> {
        let window = snapshot.counters.window();
        let mut agent = Self::new(
            snapshot.selection,
            best_channels,
            window,
            gate_rng,
            explore_rng,
        )?;
        if snapshot.evaluation.shape() != agent.params1.shape() {
            return Err(Error::Shape(
                "selection and evaluation networks differ".into(),
            ));
        }
        agent.params2 = snapshot.evaluation;
        agent.counters = snapshot.counters;
        Ok(agent)
    }

    pub fn snapshot(&self) -> AgentSnapshot {
        AgentSnapshot {
            selection: self.params1.clone(),
            evaluation: self.params2.clone(),
            counters: self.counters.clone(),
        }
    }

    pub fn channels(&self) -> usize {
        self.params1.shape().actions - 1
    }

    /// Resets both recurrent states (episode boundary).
    pub fn reset_recurrent(&mut self) {
        self.lstm_state.reset();
        self.eval_state.reset();
    }

    /// Runs the selection network, then decides the action: silent with
    /// probability `1 − p_T`, otherwise the least-loaded of the `M` best
    /// channels (or, with probability ε, a uniformly random channel).
    pub fn act(&mut self, input: &[f64], loads: &[usize], p_transmit: f64) -> Result<Decision> {
        let (q, next) = forward(&self.params1, input, &self.lstm_state)?;
        self.lstm_state = next;
        let decision = self.decide(q, loads, p_transmit)?;
        Ok(decision)
    }

    /// Selection and gating on an already computed Q-vector.
    pub fn decide(&mut self, q: Vec<f64>, loads: &[usize], p_transmit: f64) -> Result<Decision> {
        let channels = self.channels();
        let intended = if self.exploration_epsilon > 0.0
            && self.explore_rng.random::<f64>() < self.exploration_epsilon
        {
            self.explore_rng.random_range(1..=channels)
        } else {
            select_channel(&q, loads, self.best_channels)?
        };
        let action = if draw_transmit(&mut self.gate_rng, p_transmit) {
            intended
        } else {
            0
        };
        Ok(Decision {
            action,
            intended,
            q,
        })
    }

    /// Runs the evaluation network on the same input stream.
    pub fn evaluate(&mut self, input: &[f64]) -> Result<Vec<f64>> {
        let (q, next) = forward(&self.params2, input, &self.eval_state)?;
        self.eval_state = next;
        Ok(q)
    }

    /// Appends one slot to the history and feeds the ACK into the load counters.
    pub fn append_history(
        &mut self,
        action: usize,
        obs: Observation,
        loads: LoadEstimate,
    ) -> Result<()> {
        self.history.check_aligned()?;
        self.counters.record(action, action != 0, obs.ack)?;
        self.counters.end_slot();
        self.history.actions.push(action);
        self.history.observations.push(obs);
        self.history.loads.push(loads);
        Ok(())
    }

    pub fn gate_rng(&mut self) -> &mut SimRng {
        &mut self.gate_rng
    }

    pub fn policy_rng(&mut self) -> &mut SimRng {
        &mut self.explore_rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qnet::NetShape;
    use crate::rng::{stream, Stream};

    fn q_with_silent(channels: &[f64]) -> Vec<f64> {
        let mut q = vec![f64::NEG_INFINITY];
        q.extend_from_slice(channels);
        q
    }

    fn agent(k: usize, m: usize, seed: u64) -> AgentState {
        let shape = NetShape::for_channels(k, 4, 3, 3);
        let mut rng = stream(seed, Stream::Init(0));
        let params = QNetworkParams::random(shape, &mut rng).unwrap();
        AgentState::new(
            params,
            m,
            100,
            stream(seed, Stream::Gate(0)),
            stream(seed, Stream::Explore(0)),
        )
        .unwrap()
    }

    #[test]
    fn selection_examples() {
        let q = q_with_silent(&[0.9, 0.5, 0.8]);
        assert_eq!(select_channel(&q, &[5, 1, 2], 2).unwrap(), 3);
        let q = q_with_silent(&[0.1, 0.7, 0.3]);
        assert_eq!(select_channel(&q, &[1, 1, 1], 1).unwrap(), 2);
        let q = q_with_silent(&[0.2, 0.9, 0.4]);
        assert_eq!(select_channel(&q, &[1, 1, 1], 2).unwrap(), 2);
    }

    #[test]
    fn silent_entry_never_selected() {
        let q = vec![100.0, 0.1, 0.2];
        assert_eq!(select_channel(&q, &[1, 1], 1).unwrap(), 2);
    }

    #[test]
    fn q_ties_prefer_lower_index() {
        let q = q_with_silent(&[0.5, 0.5, 0.5]);
        assert_eq!(top_m_channels(&q, 2).unwrap().0, vec![1, 2]);
        assert_eq!(select_channel(&q, &[3, 3, 3], 2).unwrap(), 1);
    }

    #[test]
    fn m_above_k_rejected() {
        let q = q_with_silent(&[0.5, 0.4]);
        assert!(select_channel(&q, &[1, 1], 3).is_err());
        assert!(select_channel(&q, &[1, 1], 0).is_err());
        assert!(select_channel(&q, &[1], 1).is_err());
    }

    #[test]
    fn double_q_examples() {
        assert_eq!(
            build_double_q_target(1.0, &[0.3, 0.1], &[5.0, 2.0], 0.0),
            1.0
        );
        let t = build_double_q_target(1.0, &[0.2, 0.9], &[0.5, 0.3], 0.95);
        assert!((t - 1.285).abs() < 1e-12);
        assert_eq!(
            build_double_q_target(0.0, &[0.4, 0.4], &[0.4, 0.4], 1.0),
            0.4
        );
    }

    #[test]
    fn reward_examples() {
        let radio = RadioConfig {
            snr_db: 0.0,
            bandwidth_hz: 1.0,
            ..RadioConfig::default()
        };
        assert_eq!(reward_from_observation(&Observation::SILENT, &radio), 0.0);
        let unit = Observation {
            ack: true,
            realized_rate: radio.rate(1.0),
        };
        assert_eq!(reward_from_observation(&unit, &radio), 1.0);
        let strong = Observation {
            ack: true,
            realized_rate: radio.rate(3.0),
        };
        assert_eq!(reward_from_observation(&strong, &radio), 2.0);
        let table = RadioConfig::default();
        let obs = Observation {
            ack: true,
            realized_rate: table.rate(1.0),
        };
        assert_eq!(reward_from_observation(&obs, &table), 1.0);
    }

    #[test]
    fn gate_extremes() {
        let mut a = agent(3, 2, 1);
        let input = [0.2; 4];
        for _ in 0..200 {
            assert_eq!(a.act(&input, &[1, 1, 1], 0.0).unwrap().action, 0);
        }
        for _ in 0..200 {
            let d = a.act(&input, &[2, 1, 3], 1.0).unwrap();
            assert_eq!(d.action, select_channel(&d.q, &[2, 1, 3], 2).unwrap());
        }
    }

    #[test]
    fn gate_frequency() {
        let mut a = agent(3, 2, 2);
        let q = q_with_silent(&[0.3, 0.2, 0.1]);
        let n = 100_000;
        let sent = (0..n)
            .filter(|_| a.decide(q.clone(), &[1, 1, 1], 0.5).unwrap().action != 0)
            .count();
        let f = sent as f64 / n as f64;
        assert!((0.49..=0.51).contains(&f), "{f}");
    }

    #[test]
    fn exploration_covers_all_channels() {
        let mut a = agent(3, 1, 3);
        a.exploration_epsilon = 1.0;
        let q = q_with_silent(&[0.9, 0.2, 0.1]);
        let mut seen = [false; 4];
        for _ in 0..200 {
            seen[a.decide(q.clone(), &[1, 1, 1], 1.0).unwrap().action] = true;
        }
        assert_eq!(seen, [false, true, true, true]);
    }

    #[test]
    fn history_grows_one_per_slot() {
        let mut a = agent(2, 1, 4);
        assert!(a.history.is_empty());
        let loads = LoadEstimate(vec![Some(2), None]);
        a.append_history(
            1,
            Observation {
                ack: true,
                realized_rate: 1.0,
            },
            loads.clone(),
        )
        .unwrap();
        assert_eq!(a.history.len(), 1);
        for _ in 0..9 {
            a.append_history(0, Observation::SILENT, loads.clone())
                .unwrap();
        }
        assert_eq!(a.history.len(), 10);
        assert_eq!(a.history.loads[0], loads);
        assert_eq!(a.counters.counts(1).transmitted, 1);
    }

    #[test]
    fn misaligned_history_is_an_error() {
        let mut a = agent(2, 1, 5);
        a.history.actions.push(1);
        let r = a.append_history(0, Observation::SILENT, LoadEstimate::unknown(2));
        assert!(matches!(r, Err(Error::MisalignedHistory { .. })));
    }

    #[test]
    fn ack_on_silence_is_an_error() {
        let mut a = agent(2, 1, 6);
        let obs = Observation {
            ack: true,
            realized_rate: 1.0,
        };
        assert!(a.append_history(0, obs, LoadEstimate::unknown(2)).is_err());
    }
}
