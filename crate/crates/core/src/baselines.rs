//! Comparison policies, exhaustive oracles for small games, and the
//! throughput upper bound.

use std::io::Write;

use rand::Rng;

use crate::aloha::{analytic_probabilities, ActionProfile};
use crate::error::{Error, Result};
use crate::fading::{instantaneous_utility, ChannelGainField, ChannelMode, RadioConfig};
use crate::rng::{stream, Stream};

/// Largest number of joint profiles we are willing to enumerate.
pub const MAX_PROFILES: u128 = 1_000_000;

/// Samples used by the Monte-Carlo part of [`upper_bound_curve`].
pub const BOUND_SAMPLES: usize = 100_000;

/// Boltzmann probabilities `∝ exp(β q_a)`.
pub fn softmax_probabilities(q: &[f64], beta: f64) -> Vec<f64> {
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = q.iter().map(|v| (beta * (v - max)).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// Draws an index of `q` with probability `∝ exp(β q_a)`.
pub fn softmax_policy<R: Rng + ?Sized>(q: &[f64], beta: f64, rng: &mut R) -> usize {
    let probs = softmax_probabilities(q, beta);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Uncoordinated ALOHA: silent with probability `1 − p_T`, otherwise a
/// uniformly random channel.
pub fn random_access_policy<R: Rng + ?Sized>(
    channels: usize,
    p_transmit: f64,
    rng: &mut R,
) -> usize {
    if crate::aloha::draw_transmit(rng, p_transmit) {
        rng.random_range(1..=channels)
    } else {
        0
    }
}

/// Every user's utility for every joint profile of a small game.
///
/// Profiles are indexed in mixed radix `K+1`, user 0 most significant, so
/// index order is lexicographic order of the action vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityTable {
    users: usize,
    channels: usize,
    utilities: Vec<Vec<f64>>,
}

fn profile_count(users: usize, channels: usize) -> u128 {
    (channels as u128 + 1).saturating_pow(users as u32)
}

impl UtilityTable {
    pub fn from_field(field: &ChannelGainField, radio: &RadioConfig) -> Result<Self> {
        let (users, channels) = (field.users(), field.channels());
        let count = profile_count(users, channels);
        if count > MAX_PROFILES {
            return Err(Error::TooLarge {
                profiles: count,
                limit: MAX_PROFILES,
            });
        }
        let utilities = (0..count as usize)
            .map(|i| {
                let profile = decode(i, users, channels);
                (0..users)
                    .map(|n| instantaneous_utility(&profile, field, n, radio))
                    .collect()
            })
            .collect();
        Ok(UtilityTable {
            users,
            channels,
            utilities,
        })
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.utilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utilities.is_empty()
    }

    pub fn profile(&self, index: usize) -> ActionProfile {
        decode(index, self.users, self.channels)
    }

    pub fn index_of(&self, profile: &ActionProfile) -> usize {
        profile
            .actions()
            .iter()
            .fold(0, |acc, &a| acc * (self.channels + 1) + a)
    }

    pub fn utilities(&self, profile: &ActionProfile) -> &[f64] {
        &self.utilities[self.index_of(profile)]
    }

    pub fn welfare(&self, profile: &ActionProfile) -> f64 {
        self.utilities(profile).iter().sum()
    }

    /// Writes one row per profile: actions, utilities, welfare, NE flag.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut header: Vec<String> = (0..self.users).map(|n| format!("a{n}")).collect();
        header.extend((0..self.users).map(|n| format!("u{n}")));
        header.push("welfare".into());
        header.push("pure_nash".into());
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.len() {
            let profile = self.profile(i);
            let mut row: Vec<String> = profile.actions().iter().map(|a| a.to_string()).collect();
            row.extend(self.utilities[i].iter().map(|u| u.to_string()));
            row.push(self.welfare(&profile).to_string());
            row.push(u8::from(is_pure_nash(&profile, self)).to_string());
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn decode(mut index: usize, users: usize, channels: usize) -> ActionProfile {
    let mut actions = vec![0; users];
    for slot in actions.iter_mut().rev() {
        *slot = index % (channels + 1);
        index /= channels + 1;
    }
    ActionProfile::new(actions, channels).expect("decoded actions are in range")
}

/// Profile with the largest social welfare; ties go to the lexicographically
/// smallest profile.
pub fn brute_force_optimal(table: &UtilityTable) -> Result<(ActionProfile, f64)> {
    let count = profile_count(table.users, table.channels);
    if count > MAX_PROFILES {
        return Err(Error::TooLarge {
            profiles: count,
            limit: MAX_PROFILES,
        });
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (i, u) in table.utilities.iter().enumerate() {
        let w: f64 = u.iter().sum();
        if w > best.1 {
            best = (i, w);
        }
    }
    Ok((table.profile(best.0), best.1))
}

/// No user can strictly raise its own utility by changing only its action.
pub fn is_pure_nash(profile: &ActionProfile, table: &UtilityTable) -> bool {
    let current = table.utilities(profile);
    (0..table.users).all(|n| {
        (0..=table.channels)
            .filter(|&a| a != profile.action(n))
            .all(|a| table.utilities(&profile.with_action(n, a))[n] <= current[n])
    })
}

/// Expected utilities when user `n` plays action `a` with probability
/// `strategies[n][a]`, independently of the others.
pub fn mixed_strategy_payoff(strategies: &[Vec<f64>], table: &UtilityTable) -> Result<Vec<f64>> {
    if strategies.len() != table.users {
        return Err(Error::Shape(format!(
            "{} strategies for {} users",
            strategies.len(),
            table.users
        )));
    }
    for (user, s) in strategies.iter().enumerate() {
        let sum: f64 = s.iter().sum();
        if s.len() != table.channels + 1 || s.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidStrategy { user, sum });
        }
    }
    let mut payoff = vec![0.0; table.users];
    for (i, u) in table.utilities.iter().enumerate() {
        let profile = table.profile(i);
        let weight: f64 = profile
            .actions()
            .iter()
            .zip(strategies)
            .map(|(&a, s)| s[a])
            .product();
        if weight == 0.0 {
            continue;
        }
        for (p, v) in payoff.iter_mut().zip(u) {
            *p += weight * v;
        }
    }
    Ok(payoff)
}

/// Inputs of [`upper_bound_curve`].
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    pub users: usize,
    pub channels: usize,
    pub p_transmit: f64,
    pub radio: RadioConfig,
    /// `Some(field)` for fixed gains, `None` for Rayleigh statistics.
    pub fixed_field: Option<ChannelGainField>,
    pub seed: u64,
}

/// Average per-user success probability of the most even split of `users`
/// over `channels`, every user transmitting with probability `p_transmit`.
///
/// With `N = qK + r`, `r` channels carry `q+1` users and `K−r` carry `q`.
/// When `K` divides `N` this is `p_T (1−p_T)^(N/K − 1)`.
pub fn balanced_success(users: usize, channels: usize, p_transmit: f64) -> Result<f64> {
    if users == 0 || channels == 0 {
        return Err(Error::InvalidConfig("bound needs N, K >= 1".into()));
    }
    let q = users / channels;
    let r = users % channels;
    let mut total = 0.0;
    if q > 0 {
        total += ((channels - r) * q) as f64 * analytic_probabilities(p_transmit, q)?.success;
    }
    if r > 0 {
        total += (r * (q + 1)) as f64 * analytic_probabilities(p_transmit, q + 1)?.success;
    }
    Ok(total / users as f64)
}

/// Largest total of `Σ_n P_succ(L_n) · rates[n]` over every way to place
/// users on `channels` channels (or keep them silent), where `L_n` is the
/// load on user `n`'s channel and every placed user transmits with
/// probability `p_transmit`.
///
/// Success probabilities fall with load, so an optimal placement gives the
/// lightest channels to the fastest users. A DP over channels in order of
/// non-decreasing load, consuming users fastest first, finds the optimum.
pub fn allocation_bound(rates: &[f64], channels: usize, p_transmit: f64) -> Result<f64> {
    let mut sorted = rates.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let users = sorted.len();
    let mut prefix = vec![0.0; users + 1];
    for (i, r) in sorted.iter().enumerate() {
        prefix[i + 1] = prefix[i] + r;
    }
    let mut success = vec![0.0; users + 1];
    for (l, s) in success.iter_mut().enumerate().skip(1) {
        *s = analytic_probabilities(p_transmit, l)?.success;
    }

    // best[c][i][l]: value of users i.. with c channels left, next load >= l.
    let idx = |c: usize, i: usize, l: usize| (c * (users + 1) + i) * (users + 2) + l;
    let mut best = vec![0.0; (channels + 1) * (users + 1) * (users + 2)];
    for c in 1..=channels {
        for i in (0..users).rev() {
            for l in (1..=users - i).rev() {
                // Either the next channel carries exactly l users, or a larger load.
                let take = success[l] * (prefix[i + l] - prefix[i]) + best[idx(c - 1, i + l, l)];
                best[idx(c, i, l)] = take.max(best[idx(c, i, l + 1)]);
            }
        }
    }
    Ok(if users == 0 {
        0.0
    } else {
        best[idx(channels, 0, 1)]
    })
}

/// Per-user throughput bound in bits/s.
///
/// Each user's rate is at most that of its strongest channel, so
/// [`allocation_bound`] over those best rates, divided by `N`, bounds the
/// average reward. With fixed gains the best rates are exact. For Rayleigh
/// statistics every user gets the expected best rate
/// `E[B log2(1 + SNR · max of K gains)]`, a Monte-Carlo average over
/// [`BOUND_SAMPLES`] draws.
pub fn upper_bound_curve(inputs: &BoundInputs) -> Result<f64> {
    if inputs.users == 0 || inputs.channels == 0 {
        return Err(Error::InvalidConfig("bound needs N, K >= 1".into()));
    }
    let radio = &inputs.radio;
    let rates: Vec<f64> = match &inputs.fixed_field {
        Some(field) => (0..field.users())
            .map(|n| radio.rate(field.user_gains(n).iter().copied().fold(0.0, f64::max)))
            .collect(),
        None => {
            let mut rng = stream(inputs.seed, Stream::Bound);
            let mut field =
                ChannelGainField::random(1, inputs.channels, ChannelMode::Iid, &mut rng)?;
            let mut total = 0.0;
            for _ in 0..BOUND_SAMPLES {
                field.advance(&mut rng);
                let best = field.user_gains(0).iter().copied().fold(0.0, f64::max);
                total += radio.rate(best);
            }
            vec![total / BOUND_SAMPLES as f64; inputs.users]
        }
    };
    Ok(allocation_bound(&rates, inputs.channels, inputs.p_transmit)? / inputs.users as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_radio() -> RadioConfig {
        RadioConfig {
            snr_db: 0.0,
            bandwidth_hz: 1.0,
            ..RadioConfig::default()
        }
    }

    fn two_by_two() -> UtilityTable {
        // snr·|h|² of user 1 = (2, 1), user 2 = (1, 2)
        let field = ChannelGainField::fixed(2, 2, vec![2.0, 1.0, 1.0, 2.0]).unwrap();
        UtilityTable::from_field(&field, &unit_radio()).unwrap()
    }

    fn profile(actions: &[usize], k: usize) -> ActionProfile {
        ActionProfile::new(actions.to_vec(), k).unwrap()
    }

    #[test]
    fn softmax_symmetric_and_uniform() {
        let p = softmax_probabilities(&[1.0, 1.0], 7.0);
        assert_eq!(p, vec![0.5, 0.5]);
        let p = softmax_probabilities(&[0.3, -2.0, 5.0], 0.0);
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        let p = softmax_probabilities(&[1.0, 0.0], 1.0);
        let e = std::f64::consts::E;
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn softmax_sampling_frequency() {
        let mut rng = stream(1, Stream::Policy(0));
        let n = 1_000_000;
        let zeros = (0..n)
            .filter(|_| softmax_policy(&[1.0, 0.0], 1.0, &mut rng) == 0)
            .count();
        let f = zeros as f64 / n as f64;
        assert!((f - 0.731_058_578_6).abs() < 1e-3, "{f}");
    }

    #[test]
    fn random_access_examples() {
        let mut rng = stream(2, Stream::Policy(0));
        assert!((0..100).all(|_| random_access_policy(4, 0.0, &mut rng) == 0));
        assert!((0..100).all(|_| random_access_policy(1, 1.0, &mut rng) == 1));
        let n = 100_000;
        let mut counts = [0usize; 5];
        for _ in 0..n {
            counts[random_access_policy(4, 1.0, &mut rng)] += 1;
        }
        assert_eq!(counts[0], 0);
        for c in &counts[1..] {
            let f = *c as f64 / n as f64;
            assert!((0.24..=0.26).contains(&f), "{f}");
        }
    }

    #[test]
    fn brute_force_two_by_two() {
        let table = two_by_two();
        assert_eq!(table.len(), 9);
        let (best, welfare) = brute_force_optimal(&table).unwrap();
        assert_eq!(best.actions(), &[1, 2]);
        assert!((welfare - 2.0 * 3f64.log2()).abs() < 1e-12);
        assert!((welfare - 3.169_925_001_442_312).abs() < 1e-12);
    }

    #[test]
    fn brute_force_single_user() {
        let field = ChannelGainField::fixed(1, 1, vec![1.0]).unwrap();
        let table = UtilityTable::from_field(&field, &unit_radio()).unwrap();
        let (best, welfare) = brute_force_optimal(&table).unwrap();
        assert_eq!((best.actions(), welfare), (&[1][..], 1.0));
    }

    #[test]
    fn brute_force_single_channel_one_transmitter() {
        let g = 3.0;
        let field = ChannelGainField::fixed(2, 1, vec![g, g]).unwrap();
        let table = UtilityTable::from_field(&field, &unit_radio()).unwrap();
        let (best, welfare) = brute_force_optimal(&table).unwrap();
        assert_eq!(welfare, (1.0f64 + g).log2());
        assert_eq!(best.action_counts()[1], 1);
        // Lexicographically smallest of (0,1) and (1,0).
        assert_eq!(best.actions(), &[0, 1]);
    }

    #[test]
    fn too_large_refused() {
        let field = ChannelGainField::fixed(9, 4, vec![1.0; 36]).unwrap();
        assert!(matches!(
            UtilityTable::from_field(&field, &unit_radio()),
            Err(Error::TooLarge { .. })
        ));
    }

    #[test]
    fn nash_examples() {
        let table = two_by_two();
        assert!(is_pure_nash(&profile(&[1, 2], 2), &table));
        assert!(!is_pure_nash(&profile(&[1, 1], 2), &table));
        let field = ChannelGainField::fixed(1, 3, vec![0.5, 2.0, 1.0]).unwrap();
        let single = UtilityTable::from_field(&field, &unit_radio()).unwrap();
        assert!(is_pure_nash(&profile(&[2], 3), &single));
        assert!(!is_pure_nash(&profile(&[1], 3), &single));
    }

    #[test]
    fn mixed_payoff_examples() {
        let field = ChannelGainField::fixed(1, 1, vec![1.0]).unwrap();
        let single = UtilityTable::from_field(&field, &unit_radio()).unwrap();
        assert_eq!(
            mixed_strategy_payoff(&[vec![0.5, 0.5]], &single).unwrap(),
            vec![0.5]
        );

        let field = ChannelGainField::fixed(2, 1, vec![1.0, 1.0]).unwrap();
        let pair = UtilityTable::from_field(&field, &unit_radio()).unwrap();
        let both_on_one = [vec![0.0, 1.0], vec![0.0, 1.0]];
        assert_eq!(
            mixed_strategy_payoff(&both_on_one, &pair).unwrap(),
            vec![0.0, 0.0]
        );
        let half = [vec![0.0, 1.0], vec![0.5, 0.5]];
        assert_eq!(mixed_strategy_payoff(&half, &pair).unwrap()[0], 0.5);

        let bad = [vec![0.3, 0.3], vec![0.5, 0.5]];
        assert!(matches!(
            mixed_strategy_payoff(&bad, &pair),
            Err(Error::InvalidStrategy { user: 0, .. })
        ));
    }

    #[test]
    fn one_hot_mixed_equals_pure() {
        let table = two_by_two();
        for i in 0..table.len() {
            let p = table.profile(i);
            let strategies: Vec<Vec<f64>> = p
                .actions()
                .iter()
                .map(|&a| (0..3).map(|b| if a == b { 1.0 } else { 0.0 }).collect())
                .collect();
            assert_eq!(
                mixed_strategy_payoff(&strategies, &table).unwrap(),
                table.utilities(&p)
            );
        }
    }

    #[test]
    fn bound_examples() {
        let radio = unit_radio();
        let inputs = |users, channels, p, g: f64| BoundInputs {
            users,
            channels,
            p_transmit: p,
            radio,
            fixed_field: Some(
                ChannelGainField::fixed(users, channels, vec![g; users * channels]).unwrap(),
            ),
            seed: 0,
        };
        assert_eq!(upper_bound_curve(&inputs(1, 1, 1.0, 1.0)).unwrap(), 1.0);
        assert_eq!(upper_bound_curve(&inputs(2, 1, 0.5, 1.0)).unwrap(), 0.25);
    }

    #[test]
    fn balanced_success_uneven_split() {
        // N=10, K=3, p=0.3: loads (4,3,3).
        let p: f64 = 0.3;
        let expected = (6.0 * p * (1.0 - p).powi(2) + 4.0 * p * (1.0 - p).powi(3)) / 10.0;
        assert!((balanced_success(10, 3, p).unwrap() - expected).abs() < 1e-15);
        assert_eq!(balanced_success(10, 5, 0.5).unwrap(), 0.25);
        assert_eq!(balanced_success(2, 3, 0.7).unwrap(), 0.7);
    }

    /// Exhaustive search over every assignment of users to channels or silence.
    fn brute_allocation(rates: &[f64], channels: usize, p: f64) -> f64 {
        let n = rates.len();
        let mut best: f64 = 0.0;
        for code in 0..(channels + 1).pow(n as u32) {
            let actions: Vec<usize> = (0..n)
                .map(|i| code / (channels + 1).pow(i as u32) % (channels + 1))
                .collect();
            let mut loads = vec![0; channels + 1];
            for &a in &actions {
                loads[a] += 1;
            }
            let total: f64 = actions
                .iter()
                .zip(rates)
                .filter(|(&a, _)| a != 0)
                .map(|(&a, r)| r * analytic_probabilities(p, loads[a]).unwrap().success)
                .sum();
            best = best.max(total);
        }
        best
    }

    #[test]
    fn allocation_bound_matches_exhaustive_search() {
        let cases: [(&[f64], usize, f64); 6] = [
            (&[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0], 3, 0.3),
            (&[5.0, 1.0, 1.0, 1.0], 2, 0.5),
            (&[0.2, 3.0, 1.5, 0.7, 2.2], 2, 0.8),
            (&[1.0, 2.0, 3.0], 3, 1.0),
            (&[1.0, 2.0], 1, 0.5),
            (&[4.0, 0.1, 0.1, 0.1, 0.1, 0.1], 3, 0.6),
        ];
        for (rates, k, p) in cases {
            let dp = allocation_bound(rates, k, p).unwrap();
            let brute = brute_allocation(rates, k, p);
            assert!(
                (dp - brute).abs() < 1e-12,
                "{rates:?} K={k} p={p}: {dp} vs {brute}"
            );
        }
    }

    #[test]
    fn allocation_bound_can_beat_the_even_split() {
        // N=10, K=3, p=0.3: silencing one user beats loads (4,3,3).
        let even = 10.0 * balanced_success(10, 3, 0.3).unwrap();
        assert!(allocation_bound(&[1.0; 10], 3, 0.3).unwrap() > even);
        // When the even split is optimal the two agree.
        assert_eq!(
            allocation_bound(&[1.0; 10], 5, 0.5).unwrap(),
            10.0 * balanced_success(10, 5, 0.5).unwrap()
        );
    }

    #[test]
    fn rayleigh_bound_uses_best_channel() {
        let inputs = BoundInputs {
            users: 10,
            channels: 5,
            p_transmit: 0.5,
            radio: RadioConfig::default(),
            fixed_field: None,
            seed: 3,
        };
        let bound = upper_bound_curve(&inputs).unwrap() / RadioConfig::default().reference_rate();
        // 0.25 × E[log2(1+S·max of 5 Exp(1))]/log2(1+S) ≈ 0.25 × 1.10
        assert!((0.26..0.29).contains(&bound), "{bound}");
    }
}
