//! Training and evaluation loops.
//!
//! A run is `R` iterations of `E` episodes of `T` slots. In every slot all
//! users build their input, act, the medium resolves collisions, and every
//! user observes its own ACK. After the `E` episodes of an iteration each
//! selection network is trained on its episodes and the evaluation network
//! is synced to it.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;

use crate::agent::{build_double_q_target, reward_from_observation, AgentState};
use crate::aloha::{draw_transmit, step_medium, ActionProfile};
use crate::baselines::{softmax_policy, upper_bound_curve, BoundInputs};
use crate::error::{Error, Result};
use crate::fading::{ChannelGainField, ChannelMode, RadioConfig};
use crate::load::{estimated_count_vector, LoadEstimate, LoadEstimator, DEFAULT_CEIL_OFFSET};
use crate::qnet::{
    backward, forward, optimizer_step, NetShape, QNetworkParams, Sequence, TrainingBatch,
};
use crate::rng::{stream, SimRng, Stream};
use crate::snapshot::AgentSnapshot;

/// Header of the per-slot CSV.
pub const SLOT_HEADER: &str = "run,phase,iteration,episode,slot,user,action,intended,ack,reward";

/// Header of the per-iteration summary CSV.
pub const SUMMARY_HEADER: &str = "run,phase,iteration,slots,mean_reward,channel_utilization,\
collision_rate,max_true_load,min_true_load,max_est_load,min_est_load,discounted_return";

macro_rules! keyword_enum {
    ($(#[$meta:meta])* $name:ident { $($(#[$vmeta:meta])* $variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum $name { $($(#[$vmeta])* $variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(format!(
                        "`{other}` is not one of {}",
                        [$($text),+].join("|")
                    )),
                }
            }
        }
    };
}

keyword_enum!(
    /// How each user picks its channel.
    Policy {
        D3rl => "d3rl",
        Softmax => "softmax",
        Random => "random",
    }
);

keyword_enum!(
    /// Where the load part of the network input comes from.
    Observability {
        /// Each user's own ACK-based estimates.
        Distributed => "distributed",
        /// True per-action counts of the previous slot.
        Genie => "genie",
    }
);

keyword_enum!(
    /// How often random gains are redrawn.
    FadingUpdate {
        Slot => "slot",
        Episode => "episode",
        /// Drawn once per run.
        Static => "static",
    }
);

keyword_enum!(
    Phase {
        Train => "train",
        Eval => "eval",
    }
);

/// Everything that defines a run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub users: usize,
    pub channels: usize,
    pub best_channels: usize,
    pub iterations: usize,
    pub episodes: usize,
    pub slots: usize,
    /// Transmission probability; `None` means `K/N`.
    pub p_transmit: Option<f64>,
    pub gamma: f64,
    pub alpha: f64,
    pub hidden: usize,
    pub value_width: usize,
    pub advantage_width: usize,
    pub radio: RadioConfig,
    pub channel_mode: ChannelMode,
    /// Row-major `N × K` power gains, required in fixed mode.
    pub fixed_gains: Option<Vec<f64>>,
    pub fading_update: FadingUpdate,
    pub observability: Observability,
    pub policy: Policy,
    /// Softmax temperature, annealed linearly over the iterations.
    pub beta_start: f64,
    pub beta_end: f64,
    pub seed: u64,
    /// Seeds for multi-run commands; empty means just `seed`.
    pub seeds: Vec<u64>,
    pub window: usize,
    pub clip: Option<f64>,
    /// Exploration rate at iteration 0 (D3RL only).
    pub epsilon_start: f64,
    /// Fraction of the iterations over which ε decays linearly to 0.
    pub epsilon_decay: f64,
    /// Gradient steps per iteration on the iteration's episodes.
    pub train_steps: usize,
    pub shared_network: bool,
    /// Evaluation length in episodes; `None` means `E`.
    pub eval_episodes: Option<usize>,
    /// Transmission probability during evaluation; `None` means `p_T`.
    pub eval_p_transmit: Option<f64>,
    pub ceil_offset: f64,
    /// Keep per-user slot rows in the metrics record.
    pub record_slots: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            users: 10,
            channels: 5,
            best_channels: 2,
            iterations: 500,
            episodes: 8,
            slots: 20,
            p_transmit: None,
            gamma: 0.95,
            alpha: 0.5,
            hidden: 16,
            value_width: 10,
            advantage_width: 10,
            radio: RadioConfig::default(),
            channel_mode: ChannelMode::Iid,
            fixed_gains: None,
            fading_update: FadingUpdate::Static,
            observability: Observability::Distributed,
            policy: Policy::D3rl,
            beta_start: 1.0,
            beta_end: 20.0,
            seed: 1,
            seeds: Vec::new(),
            window: 100,
            clip: Some(1.0),
            epsilon_start: 0.2,
            epsilon_decay: 0.5,
            train_steps: 1,
            shared_network: false,
            eval_episodes: None,
            eval_p_transmit: None,
            ceil_offset: DEFAULT_CEIL_OFFSET,
            record_slots: true,
        }
    }
}

impl SimConfig {
    /// Full-size setting: 100 users, 50 channels, 10 000 iterations.
    /// Hours of compute on one core.
    pub fn full_scale() -> Self {
        SimConfig {
            users: 100,
            channels: 50,
            best_channels: 2,
            iterations: 10_000,
            episodes: 16,
            slots: 50,
            alpha: 0.05,
            hidden: 100,
            ..SimConfig::default()
        }
    }

    pub fn p_transmit(&self) -> f64 {
        self.p_transmit
            .unwrap_or_else(|| (self.channels as f64 / self.users as f64).min(1.0))
    }

    pub fn eval_p_transmit(&self) -> f64 {
        self.eval_p_transmit.unwrap_or_else(|| self.p_transmit())
    }

    pub fn eval_episodes(&self) -> usize {
        self.eval_episodes.unwrap_or(self.episodes)
    }

    pub fn run_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }

    pub fn shape(&self) -> NetShape {
        NetShape::for_channels(
            self.channels,
            self.hidden,
            self.value_width,
            self.advantage_width,
        )
    }

    /// All checks, including the overloaded regime `N > K`.
    pub fn validate(&self) -> Result<()> {
        if self.users <= self.channels {
            return Err(Error::InvalidConfig(format!(
                "N > K required, got N = {} and K = {}",
                self.users, self.channels
            )));
        }
        self.validate_structure()?;
        if self.observability == Observability::Distributed {
            LoadEstimator::with_offset(self.p_transmit(), self.users, self.ceil_offset)?;
        }
        Ok(())
    }

    /// Checks everything except `N > K`; small enumerable instances with
    /// `N ≤ K` run through this.
    pub fn validate_structure(&self) -> Result<()> {
        let counts = [
            ("N", self.users),
            ("K", self.channels),
            ("M", self.best_channels),
            ("R", self.iterations),
            ("E", self.episodes),
            ("T", self.slots),
            ("hidden", self.hidden),
            ("value_width", self.value_width),
            ("advantage_width", self.advantage_width),
            ("window", self.window),
            ("train_steps", self.train_steps),
        ];
        for (key, value) in counts {
            if value == 0 {
                return Err(Error::invalid(key, "must be at least 1"));
            }
        }
        if self.best_channels > self.channels {
            return Err(Error::InvalidConfig(format!(
                "M <= K required, got M = {} and K = {}",
                self.best_channels, self.channels
            )));
        }
        let probability = |key: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::invalid(key, format!("{v} outside [0, 1]")))
            }
        };
        probability("gamma", self.gamma)?;
        probability("p_T", self.p_transmit())?;
        probability("eval_p_T", self.eval_p_transmit())?;
        probability("epsilon", self.epsilon_start)?;
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0) {
            return Err(Error::invalid("epsilon_decay", "must lie in (0, 1]"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("alpha", "must be positive"));
        }
        if !(self.beta_start >= 0.0 && self.beta_end >= 0.0) {
            return Err(Error::invalid("beta", "temperatures must be >= 0"));
        }
        if let Some(c) = self.clip {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::invalid(
                    "clip",
                    "must be positive (0 disables clipping)",
                ));
            }
        }
        self.radio.validate()?;
        self.channel_mode.validate()?;
        match (&self.channel_mode, &self.fixed_gains) {
            (ChannelMode::Fixed, None) => {
                return Err(Error::invalid(
                    "fixed_gains",
                    "required when channel_mode = fixed",
                ));
            }
            (ChannelMode::Fixed, Some(g)) if g.len() != self.users * self.channels => {
                return Err(Error::invalid(
                    "fixed_gains",
                    format!(
                        "expected N*K = {} values, got {}",
                        self.users * self.channels,
                        g.len()
                    ),
                ));
            }
            _ => {}
        }
        Ok(())
    }

    /// Gains of the first slot: the fixed gains, or the first draw of the
    /// run's fading stream.
    pub fn gain_field(&self) -> Result<ChannelGainField> {
        self.initial_field().map(|(field, _)| field)
    }

    /// Inputs of the throughput bound at the evaluation transmission
    /// probability. Gains that never change during the run (fixed mode, or
    /// static updates) enter the bound as realized.
    pub fn bound_inputs(&self) -> Result<BoundInputs> {
        let constant =
            self.channel_mode == ChannelMode::Fixed || self.fading_update == FadingUpdate::Static;
        let fixed_field = if constant {
            Some(self.gain_field()?)
        } else {
            None
        };
        Ok(BoundInputs {
            users: self.users,
            channels: self.channels,
            p_transmit: self.eval_p_transmit(),
            radio: self.radio,
            fixed_field,
            seed: self.seed,
        })
    }

    fn initial_field(&self) -> Result<(ChannelGainField, SimRng)> {
        let mut rng = stream(self.seed, Stream::Fading);
        let field = match (&self.channel_mode, &self.fixed_gains) {
            (ChannelMode::Fixed, Some(g)) => {
                ChannelGainField::fixed(self.users, self.channels, g.clone())?
            }
            (mode, _) => ChannelGainField::random(self.users, self.channels, *mode, &mut rng)?,
        };
        Ok((field, rng))
    }
}

/// One user in one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotRow {
    pub run: u64,
    pub phase: Phase,
    pub iteration: usize,
    pub episode: usize,
    pub slot: usize,
    pub user: usize,
    /// 0 when silent.
    pub action: usize,
    /// Channel chosen before the transmission gate.
    pub intended: usize,
    pub ack: bool,
    pub reward: f64,
}

/// Totals of one slot over all users.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotStats {
    pub iteration: usize,
    pub episode: usize,
    pub slot: usize,
    pub transmissions: usize,
    pub successes: usize,
    pub reward_sum: f64,
    /// Largest and smallest number of users contending for one channel.
    pub max_true_load: usize,
    pub min_true_load: usize,
    /// Extremes of the load vectors the users acted on.
    pub max_est_load: usize,
    pub min_est_load: usize,
}

impl SlotStats {
    /// Rebuilds the reward and true-load parts from one slot's rows; the
    /// estimated loads are not part of the rows and come back as 0.
    pub fn from_rows(rows: &[SlotRow], channels: usize) -> Self {
        let mut loads = vec![0usize; channels + 1];
        let mut stats = SlotStats {
            iteration: rows.first().map_or(0, |r| r.iteration),
            episode: rows.first().map_or(0, |r| r.episode),
            slot: rows.first().map_or(0, |r| r.slot),
            transmissions: 0,
            successes: 0,
            reward_sum: 0.0,
            max_true_load: 0,
            min_true_load: 0,
            max_est_load: 0,
            min_est_load: 0,
        };
        for r in rows {
            loads[r.intended] += 1;
            stats.transmissions += usize::from(r.action != 0);
            stats.successes += usize::from(r.ack);
            stats.reward_sum += r.reward;
        }
        stats.max_true_load = loads[1..].iter().copied().max().unwrap_or(0);
        stats.min_true_load = loads[1..].iter().copied().min().unwrap_or(0);
        stats
    }
}

/// Aggregates of one iteration (or of a whole evaluation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationSummary {
    pub iteration: usize,
    pub slots: usize,
    /// Average reward per user per slot.
    pub mean_reward: f64,
    /// Fraction of channel-slots carrying a successful packet.
    pub channel_utilization: f64,
    /// Fraction of transmissions that collided.
    pub collision_rate: f64,
    pub max_true_load: f64,
    pub min_true_load: f64,
    pub max_est_load: f64,
    pub min_est_load: f64,
    /// Mean over users and episodes of the discounted episode return.
    pub discounted_return: f64,
}

/// Summary of a group of slots; every field is 0 when `slots` is empty.
pub fn summarize(
    iteration: usize,
    slots: &[SlotStats],
    users: usize,
    channels: usize,
    discounted_return: f64,
) -> IterationSummary {
    let n = slots.len();
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
    let sum_of = |f: &dyn Fn(&SlotStats) -> f64| slots.iter().map(f).sum::<f64>();
    let transmissions = sum_of(&|s| s.transmissions as f64);
    let successes = sum_of(&|s| s.successes as f64);
    IterationSummary {
        iteration,
        slots: n,
        mean_reward: ratio(sum_of(&|s| s.reward_sum), (n * users) as f64),
        channel_utilization: ratio(successes, (n * channels) as f64),
        collision_rate: ratio(transmissions - successes, transmissions),
        max_true_load: ratio(sum_of(&|s| s.max_true_load as f64), n as f64),
        min_true_load: ratio(sum_of(&|s| s.min_true_load as f64), n as f64),
        max_est_load: ratio(sum_of(&|s| s.max_est_load as f64), n as f64),
        min_est_load: ratio(sum_of(&|s| s.min_est_load as f64), n as f64),
        discounted_return,
    }
}

/// Everything measured in one run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub run: u64,
    pub phase: Phase,
    pub users: usize,
    pub channels: usize,
    /// Per-user rows; empty when `record_slots` is off.
    pub rows: Vec<SlotRow>,
    pub slots: Vec<SlotStats>,
    pub summaries: Vec<IterationSummary>,
}

impl MetricsRecord {
    fn new(run: u64, phase: Phase, users: usize, channels: usize) -> Self {
        MetricsRecord {
            run,
            phase,
            users,
            channels,
            rows: Vec::new(),
            slots: Vec::new(),
            summaries: Vec::new(),
        }
    }

    /// Builds a record from rows alone, in row order; slots are delimited by
    /// changes of (iteration, episode, slot).
    pub fn from_rows(
        run: u64,
        phase: Phase,
        users: usize,
        channels: usize,
        rows: Vec<SlotRow>,
    ) -> Self {
        let mut record = MetricsRecord::new(run, phase, users, channels);
        let key = |r: &SlotRow| (r.iteration, r.episode, r.slot);
        let mut start = 0;
        for i in 1..=rows.len() {
            if i == rows.len() || key(&rows[i]) != key(&rows[start]) {
                record
                    .slots
                    .push(SlotStats::from_rows(&rows[start..i], channels));
                start = i;
            }
        }
        record.rows = rows;
        record
    }

    /// Average reward per user per slot over the whole record.
    pub fn mean_reward(&self) -> f64 {
        summarize(0, &self.slots, self.users, self.channels, 0.0).mean_reward
    }

    pub fn write_rows<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{SLOT_HEADER}")?;
        self.write_rows_body(&mut out)
    }

    pub fn write_rows_body<W: Write>(&self, out: &mut W) -> Result<()> {
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.run,
                r.phase,
                r.iteration,
                r.episode,
                r.slot,
                r.user,
                r.action,
                r.intended,
                u8::from(r.ack),
                r.reward
            )?;
        }
        Ok(())
    }

    pub fn write_summaries<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{SUMMARY_HEADER}")?;
        self.write_summaries_body(&mut out)
    }

    pub fn write_summaries_body<W: Write>(&self, out: &mut W) -> Result<()> {
        for s in &self.summaries {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                self.run,
                self.phase,
                s.iteration,
                s.slots,
                s.mean_reward,
                s.channel_utilization,
                s.collision_rate,
                s.max_true_load,
                s.min_true_load,
                s.max_est_load,
                s.min_est_load,
                s.discounted_return
            )?;
        }
        Ok(())
    }
}

/// `Σ_t γ^(t−1) r_t`.
pub fn accumulated_reward(rewards: &[f64], gamma: f64) -> f64 {
    let mut discount = 1.0;
    let mut total = 0.0;
    for r in rewards {
        total += discount * r;
        discount *= gamma;
    }
    total
}

/// Time-averaged maximum channel load against the balanced load `N/K`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceStatistic {
    pub max_load: f64,
    pub reference: f64,
    pub slack: f64,
}

/// Mean over the final quarter of the record's slots of the largest number
/// of users contending for one channel.
pub fn load_balance_statistic(record: &MetricsRecord) -> BalanceStatistic {
    let reference = record.users as f64 / record.channels as f64;
    let n = record.slots.len();
    let tail = &record.slots[n - (n / 4).max(n.min(1))..];
    let max_load = if tail.is_empty() {
        0.0
    } else {
        tail.iter().map(|s| s.max_true_load as f64).sum::<f64>() / tail.len() as f64
    };
    BalanceStatistic {
        max_load,
        reference,
        slack: max_load - reference,
    }
}

/// Throughput bound in reward units (multiples of the unit-gain rate).
pub fn upper_bound_reward(cfg: &SimConfig) -> Result<f64> {
    Ok(upper_bound_curve(&cfg.bound_inputs()?)? / cfg.radio.reference_rate())
}

/// Trained agents and the training metrics.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub snapshots: Vec<AgentSnapshot>,
    pub record: MetricsRecord,
}

/// What happened in one slot, per user.
struct SlotOutcome {
    inputs: Vec<Vec<f64>>,
    q1: Vec<Option<Vec<f64>>>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
}

struct World<'a> {
    cfg: &'a SimConfig,
    phase: Phase,
    agents: Vec<AgentState>,
    field: ChannelGainField,
    fading_rng: SimRng,
    estimator: Option<LoadEstimator>,
    /// True per-action counts of the previous slot (genie input).
    last_counts: Vec<usize>,
    record: MetricsRecord,
    p_transmit: f64,
    beta: f64,
    first_slot: bool,
}

impl<'a> World<'a> {
    fn new(cfg: &'a SimConfig, phase: Phase, agents: Vec<AgentState>) -> Result<Self> {
        let (field, training_rng) = cfg.initial_field()?;
        let fading_rng = match phase {
            Phase::Train => training_rng,
            Phase::Eval => stream(cfg.seed, Stream::EvalFading),
        };
        let estimator = match cfg.observability {
            Observability::Distributed => Some(LoadEstimator::with_offset(
                cfg.p_transmit(),
                cfg.users,
                cfg.ceil_offset,
            )?),
            Observability::Genie => None,
        };
        let (p_transmit, beta) = match phase {
            Phase::Train => (cfg.p_transmit(), cfg.beta_start),
            Phase::Eval => (cfg.eval_p_transmit(), cfg.beta_end),
        };
        Ok(World {
            cfg,
            phase,
            agents,
            field,
            fading_rng,
            estimator,
            last_counts: estimated_count_vector(&LoadEstimate::unknown(cfg.channels), cfg.users),
            record: MetricsRecord::new(cfg.seed, phase, cfg.users, cfg.channels),
            p_transmit,
            beta,
            first_slot: true,
        })
    }

    fn start_episode(&mut self) {
        for agent in &mut self.agents {
            agent.reset_recurrent();
        }
        if self.cfg.fading_update == FadingUpdate::Episode && !self.first_slot {
            self.field.advance(&mut self.fading_rng);
        }
    }

    /// Input vector and load vector of one agent for the coming slot.
    fn observe(&self, user: usize) -> (Vec<f64>, LoadEstimate) {
        let cfg = self.cfg;
        let (counts, estimate) = match &self.estimator {
            Some(estimator) => {
                let estimate = estimator.estimate_all(&self.agents[user].counters);
                (estimated_count_vector(&estimate, cfg.users), estimate)
            }
            None => {
                let estimate =
                    LoadEstimate(self.last_counts[1..].iter().map(|&c| Some(c)).collect());
                (self.last_counts.clone(), estimate)
            }
        };
        let scale = 1.0 / cfg.users as f64;
        (counts.iter().map(|&c| c as f64 * scale).collect(), estimate)
    }

    fn slot(&mut self, iteration: usize, episode: usize, slot: usize) -> Result<SlotOutcome> {
        let cfg = self.cfg;
        if cfg.fading_update == FadingUpdate::Slot && !self.first_slot {
            self.field.advance(&mut self.fading_rng);
        }
        self.first_slot = false;

        let users = cfg.users;
        let mut inputs = Vec::with_capacity(users);
        let mut estimates = Vec::with_capacity(users);
        let mut q1 = Vec::with_capacity(users);
        let mut actions = Vec::with_capacity(users);
        let mut intended = Vec::with_capacity(users);
        let (mut max_est, mut min_est) = (0, usize::MAX);
        for n in 0..users {
            let (input, estimate) = self.observe(n);
            let loads = estimate.resolved(users);
            max_est = max_est.max(loads.iter().copied().max().unwrap_or(0));
            min_est = min_est.min(loads.iter().copied().min().unwrap_or(0));
            let agent = &mut self.agents[n];
            let (action, chosen, q) = match cfg.policy {
                Policy::D3rl => {
                    let d = agent.act(&input, &loads, self.p_transmit)?;
                    (d.action, d.intended, Some(d.q))
                }
                Policy::Softmax => {
                    let (q, next) = forward(&agent.params1, &input, &agent.lstm_state)?;
                    agent.lstm_state = next;
                    // Silence is one of the sampled actions; no separate gate.
                    let action = softmax_policy(&q, self.beta, agent.policy_rng());
                    (action, action, Some(q))
                }
                Policy::Random => {
                    let chosen = agent.policy_rng().random_range(1..=cfg.channels);
                    let action = if draw_transmit(agent.gate_rng(), self.p_transmit) {
                        chosen
                    } else {
                        0
                    };
                    (action, chosen, None)
                }
            };
            inputs.push(input);
            estimates.push(estimate);
            q1.push(q);
            actions.push(action);
            intended.push(chosen);
        }

        let profile = ActionProfile::new(actions.clone(), cfg.channels)?;
        let observations = step_medium(&profile, &self.field, &cfg.radio);
        let rewards: Vec<f64> = observations
            .iter()
            .map(|o| reward_from_observation(o, &cfg.radio))
            .collect();

        let mut rows = Vec::with_capacity(users);
        for (n, estimate) in estimates.into_iter().enumerate() {
            self.agents[n].append_history(actions[n], observations[n], estimate)?;
            rows.push(SlotRow {
                run: cfg.seed,
                phase: self.phase,
                iteration,
                episode,
                slot,
                user: n,
                action: actions[n],
                intended: intended[n],
                ack: observations[n].ack,
                reward: rewards[n],
            });
        }
        let mut stats = SlotStats::from_rows(&rows, cfg.channels);
        stats.max_est_load = max_est;
        stats.min_est_load = min_est;
        self.record.slots.push(stats);
        if cfg.record_slots {
            self.record.rows.extend(rows);
        }
        self.last_counts = profile.action_counts();

        Ok(SlotOutcome {
            inputs,
            q1,
            actions,
            rewards,
        })
    }

    fn finish_iteration(&mut self, iteration: usize, first_slot: usize, returns: &[f64]) {
        let mean_return = if returns.is_empty() {
            0.0
        } else {
            returns.iter().sum::<f64>() / returns.len() as f64
        };
        let summary = summarize(
            iteration,
            &self.record.slots[first_slot..],
            self.cfg.users,
            self.cfg.channels,
            mean_return,
        );
        self.record.summaries.push(summary);
    }
}

fn init_agents(
    cfg: &SimConfig,
    gate: fn(usize) -> Stream,
    policy: fn(usize) -> Stream,
) -> Result<Vec<AgentState>> {
    let shape = cfg.shape();
    let shared = if cfg.shared_network {
        Some(QNetworkParams::random(
            shape,
            &mut stream(cfg.seed, Stream::Init(0)),
        )?)
    } else {
        None
    };
    (0..cfg.users)
        .map(|n| {
            let params = match &shared {
                Some(p) => p.clone(),
                None => QNetworkParams::random(shape, &mut stream(cfg.seed, Stream::Init(n)))?,
            };
            AgentState::new(
                params,
                cfg.best_channels,
                cfg.window,
                stream(cfg.seed, gate(n)),
                stream(cfg.seed, policy(n)),
            )
        })
        .collect()
}

/// Per-agent data of one episode, used to build the training sequence.
#[derive(Default)]
struct EpisodeTrace {
    inputs: Vec<Vec<f64>>,
    q1: Vec<Vec<f64>>,
    q2: Vec<Vec<f64>>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
}

impl EpisodeTrace {
    /// Targets: the selection network's own Q-vector with the taken action's
    /// entry replaced by the double-Q target. `q1`/`q2` hold `T + 1` entries.
    fn into_sequence(self, gamma: f64) -> Sequence {
        let steps = self.actions.len();
        let targets = (0..steps)
            .map(|t| {
                let mut y = self.q1[t].clone();
                y[self.actions[t]] =
                    build_double_q_target(self.rewards[t], &self.q1[t + 1], &self.q2[t + 1], gamma);
                y
            })
            .collect();
        Sequence {
            inputs: self.inputs[..steps].to_vec(),
            targets,
            actions: self.actions,
        }
    }
}

fn train_params(
    cfg: &SimConfig,
    params: &QNetworkParams,
    batch: &TrainingBatch,
) -> Result<QNetworkParams> {
    let mut params = params.clone();
    let count = batch.sequences.len().max(1) as f64;
    for _ in 0..cfg.train_steps {
        let mut grads = backward(&params, batch)?;
        grads.scale(1.0 / count);
        params = optimizer_step(&params, &grads, cfg.alpha, cfg.clip)?;
    }
    Ok(params)
}

/// Runs the full training loop for `cfg.seed`.
pub fn run_training(cfg: &SimConfig) -> Result<TrainOutput> {
    cfg.validate_structure()?;
    let agents = init_agents(cfg, Stream::Gate, Stream::Explore)?;
    let mut world = World::new(cfg, Phase::Train, agents)?;
    let learns = cfg.policy != Policy::Random;
    let users = cfg.users;

    for iteration in 0..cfg.iterations {
        let progress = iteration as f64 / cfg.iterations as f64;
        let epsilon = match cfg.policy {
            Policy::D3rl => cfg.epsilon_start * (1.0 - progress / cfg.epsilon_decay).max(0.0),
            _ => 0.0,
        };
        world.beta = if cfg.iterations > 1 {
            let frac = iteration as f64 / (cfg.iterations - 1) as f64;
            cfg.beta_start + (cfg.beta_end - cfg.beta_start) * frac
        } else {
            cfg.beta_end
        };
        for agent in &mut world.agents {
            agent.exploration_epsilon = epsilon;
            agent.counters.reset();
            agent.history.clear();
        }

        let first_slot = world.record.slots.len();
        let mut batches: Vec<TrainingBatch> = vec![TrainingBatch::default(); users];
        let mut returns = Vec::with_capacity(users * cfg.episodes);
        for episode in 0..cfg.episodes {
            world.start_episode();
            let mut traces: Vec<EpisodeTrace> =
                (0..users).map(|_| EpisodeTrace::default()).collect();
            for t in 0..cfg.slots {
                let outcome = world.slot(iteration, episode, t)?;
                for (n, trace) in traces.iter_mut().enumerate() {
                    if learns {
                        let q2 = world.agents[n].evaluate(&outcome.inputs[n])?;
                        trace.q2.push(q2);
                        trace.q1.push(outcome.q1[n].clone().unwrap_or_default());
                        trace.inputs.push(outcome.inputs[n].clone());
                    }
                    trace.actions.push(outcome.actions[n]);
                    trace.rewards.push(outcome.rewards[n]);
                }
            }
            for (n, mut trace) in traces.into_iter().enumerate() {
                returns.push(accumulated_reward(&trace.rewards, cfg.gamma));
                if !learns {
                    continue;
                }
                // Bootstrap the last slot from the next observation.
                let (input, _) = world.observe(n);
                let agent = &mut world.agents[n];
                let (q1, next) = forward(&agent.params1, &input, &agent.lstm_state)?;
                agent.lstm_state = next;
                trace.q1.push(q1);
                trace.q2.push(agent.evaluate(&input)?);
                trace.inputs.push(input);
                batches[n].sequences.push(trace.into_sequence(cfg.gamma));
            }
        }

        if learns {
            if cfg.shared_network {
                let all = TrainingBatch {
                    sequences: batches.into_iter().flat_map(|b| b.sequences).collect(),
                };
                let params = train_params(cfg, &world.agents[0].params1, &all)?;
                for agent in &mut world.agents {
                    agent.params1 = params.clone();
                    agent.params2 = params.clone();
                }
            } else {
                for (agent, batch) in world.agents.iter_mut().zip(&batches) {
                    agent.params1 = train_params(cfg, &agent.params1, batch)?;
                    agent.params2 = agent.params1.clone();
                }
            }
        }
        world.finish_iteration(iteration, first_slot, &returns);
    }

    let snapshots = world.agents.iter().map(AgentState::snapshot).collect();
    Ok(TrainOutput {
        snapshots,
        record: world.record,
    })
}

/// Runs frozen agents for `eval_episodes × T` slots without exploration.
pub fn run_evaluation(cfg: &SimConfig, snapshots: &[AgentSnapshot]) -> Result<MetricsRecord> {
    cfg.validate_structure()?;
    if snapshots.len() != cfg.users {
        return Err(Error::Shape(format!(
            "{} snapshots for {} users",
            snapshots.len(),
            cfg.users
        )));
    }
    let shape = cfg.shape();
    let mut agents = Vec::with_capacity(cfg.users);
    for (n, snap) in snapshots.iter().enumerate() {
        if snap.selection.shape() != shape || snap.counters.channels() != cfg.channels {
            return Err(Error::Shape(format!(
                "snapshot {n} does not match K = {}, hidden = {}",
                cfg.channels, cfg.hidden
            )));
        }
        let agent = AgentState::from_snapshot(
            snap.clone(),
            cfg.best_channels,
            stream(cfg.seed, Stream::EvalGate(n)),
            stream(cfg.seed, Stream::EvalPolicy(n)),
        )?;
        agents.push(agent);
    }
    let mut world = World::new(cfg, Phase::Eval, agents)?;
    let mut returns = Vec::new();
    for episode in 0..cfg.eval_episodes() {
        world.start_episode();
        let mut rewards = vec![Vec::with_capacity(cfg.slots); cfg.users];
        for t in 0..cfg.slots {
            let outcome = world.slot(0, episode, t)?;
            for (r, v) in rewards.iter_mut().zip(outcome.rewards) {
                r.push(v);
            }
        }
        returns.extend(rewards.iter().map(|r| accumulated_reward(r, cfg.gamma)));
    }
    world.finish_iteration(0, 0, &returns);
    Ok(world.record)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SimConfig {
        SimConfig {
            users: 2,
            channels: 1,
            best_channels: 1,
            iterations: 1,
            episodes: 1,
            slots: 2,
            hidden: 4,
            value_width: 3,
            advantage_width: 3,
            ..SimConfig::default()
        }
    }

    #[test]
    fn row_count_contract() {
        let out = run_training(&tiny()).unwrap();
        assert_eq!(out.record.rows.len(), 4);
        assert_eq!(out.record.slots.len(), 2);
        assert_eq!(out.snapshots.len(), 2);
    }

    #[test]
    fn accumulated_reward_examples() {
        assert_eq!(accumulated_reward(&[5.0, 7.0], 0.0), 5.0);
        assert_eq!(accumulated_reward(&[1.0, 2.0, 3.0], 1.0), 6.0);
        assert!((accumulated_reward(&[1.0, 1.0], 0.95) - 1.95).abs() < 1e-15);
        assert_eq!(accumulated_reward(&[], 0.5), 0.0);
    }

    fn synthetic(users: usize, channels: usize, assign: impl Fn(usize) -> usize) -> MetricsRecord {
        let rows = (0..8)
            .flat_map(|slot| (0..users).map(move |user| (slot, user)))
            .map(|(slot, user)| SlotRow {
                run: 0,
                phase: Phase::Train,
                iteration: 0,
                episode: 0,
                slot,
                user,
                action: assign(user),
                intended: assign(user),
                ack: false,
                reward: 0.0,
            })
            .collect();
        MetricsRecord::from_rows(0, Phase::Train, users, channels, rows)
    }

    #[test]
    fn balance_statistic_examples() {
        let balanced = synthetic(10, 5, |u| 1 + u % 5);
        let b = load_balance_statistic(&balanced);
        assert_eq!((b.max_load, b.reference, b.slack), (2.0, 2.0, 0.0));
        let piled = synthetic(10, 5, |_| 3);
        let b = load_balance_statistic(&piled);
        assert_eq!((b.max_load, b.slack), (10.0, 8.0));
    }

    #[test]
    fn empty_evaluation_is_defined() {
        let cfg = SimConfig {
            eval_episodes: Some(0),
            ..tiny()
        };
        let out = run_training(&cfg).unwrap();
        let record = run_evaluation(&cfg, &out.snapshots).unwrap();
        assert!(record.rows.is_empty());
        assert_eq!(record.summaries.len(), 1);
        assert_eq!(record.summaries[0].mean_reward, 0.0);
        assert_eq!(record.mean_reward(), 0.0);
        assert_eq!(load_balance_statistic(&record).max_load, 0.0);
    }

    #[test]
    fn invalid_config_rejected_before_work() {
        let cfg = SimConfig {
            best_channels: 3,
            ..tiny()
        };
        assert!(run_training(&cfg).is_err());
        assert!(SimConfig {
            users: 5,
            ..SimConfig::default()
        }
        .validate()
        .is_err());
        SimConfig::default().validate().unwrap();
    }

    #[test]
    fn incompatible_snapshots_rejected() {
        let cfg = tiny();
        let out = run_training(&cfg).unwrap();
        let wider = SimConfig {
            hidden: 5,
            ..cfg.clone()
        };
        assert!(run_evaluation(&wider, &out.snapshots).is_err());
        assert!(run_evaluation(&cfg, &out.snapshots[..1]).is_err());
    }

    #[test]
    fn summaries_follow_from_rows() {
        let cfg = SimConfig {
            users: 4,
            channels: 2,
            iterations: 3,
            episodes: 2,
            slots: 5,
            hidden: 4,
            ..SimConfig::default()
        };
        let out = run_training(&cfg).unwrap();
        let rebuilt =
            MetricsRecord::from_rows(cfg.seed, Phase::Train, 4, 2, out.record.rows.clone());
        assert_eq!(rebuilt.slots.len(), out.record.slots.len());
        for (a, b) in rebuilt.slots.iter().zip(&out.record.slots) {
            assert_eq!(
                (
                    a.transmissions,
                    a.successes,
                    a.reward_sum,
                    a.max_true_load,
                    a.min_true_load
                ),
                (
                    b.transmissions,
                    b.successes,
                    b.reward_sum,
                    b.max_true_load,
                    b.min_true_load
                )
            );
        }
    }
}
