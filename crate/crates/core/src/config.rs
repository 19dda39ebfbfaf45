//! Flat `key = value` configuration files.
//!
//! One assignment per line, `#` starts a comment, blank lines are ignored.
//! Unknown keys are errors. Keys not mentioned keep their defaults (the
//! desk-scale setting), and command-line overrides are applied after the
//! file. [`to_text`] writes a complete file that parses back to the same
//! configuration.
//!
//! | key | meaning | default |
//! |---|---|---|
//! | `N`, `K`, `M` | users, channels, best channels kept | 10, 5, 2 |
//! | `R`, `E`, `T` | iterations, episodes per iteration, slots per episode | 500, 8, 20 |
//! | `p_T` | transmission probability, `auto` = K/N | auto |
//! | `gamma`, `alpha` | discount, learning rate | 0.95, 0.5 |
//! | `hidden`, `value_width`, `advantage_width` | network sizes | 16, 10, 10 |
//! | `snr_db`, `bandwidth_hz`, `doppler_hz`, `slot_duration_s` | radio | 35, 20e6, 100, 1e-3 |
//! | `channel_mode` | `iid`, `ar1` or `fixed` | iid |
//! | `ar1_coefficient` | AR(1) coefficient, `auto` = exp(−2π f_d T_s) | auto |
//! | `fixed_gains` | comma-separated N·K power gains, row-major | none |
//! | `fading_update` | `slot`, `episode` or `static` | static |
//! | `observability` | `distributed` or `genie` | distributed |
//! | `policy` | `d3rl`, `softmax` or `random` | d3rl |
//! | `beta_start`, `beta_end` | softmax temperature schedule | 1, 20 |
//! | `seed`, `seeds` | master seed, comma-separated seed list | 1, empty |
//! | `window` | load counter window in slots | 100 |
//! | `clip` | gradient norm clip, 0 disables | 1 |
//! | `epsilon`, `epsilon_decay` | initial exploration, decay fraction of R | 0.2, 0.5 |
//! | `train_steps` | gradient steps per iteration | 1 |
//! | `shared_network` | one network trained on all users | false |
//! | `eval_episodes` | evaluation length, `auto` = E | auto |
//! | `eval_p_T` | evaluation transmission probability, `auto` = p_T | auto |
//! | `ceil_offset` | load estimate rounding shift | 0.5 |
//! | `record_slots` | keep per-user slot rows | true |

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::engine::SimConfig;
use crate::error::{Error, Result};
use crate::fading::ChannelMode;

pub const KEYS: &[&str] = &[
    "N",
    "K",
    "M",
    "R",
    "E",
    "T",
    "p_T",
    "gamma",
    "alpha",
    "hidden",
    "value_width",
    "advantage_width",
    "snr_db",
    "bandwidth_hz",
    "doppler_hz",
    "slot_duration_s",
    "channel_mode",
    "ar1_coefficient",
    "fixed_gains",
    "fading_update",
    "observability",
    "policy",
    "beta_start",
    "beta_end",
    "seed",
    "seeds",
    "window",
    "clip",
    "epsilon",
    "epsilon_decay",
    "train_steps",
    "shared_network",
    "eval_episodes",
    "eval_p_T",
    "ceil_offset",
    "record_slots",
];

#[derive(Debug, Clone, Copy, PartialEq)]
enum ModeKind {
    Iid,
    Ar1,
    Fixed,
}

/// Accumulates assignments; the AR(1) coefficient is resolved at the end
/// because its default depends on the radio keys.
struct Builder {
    cfg: SimConfig,
    mode: ModeKind,
    ar1: Option<f64>,
}

impl Builder {
    fn new(cfg: SimConfig) -> Self {
        let (mode, ar1) = match cfg.channel_mode {
            ChannelMode::Iid => (ModeKind::Iid, None),
            ChannelMode::Ar1 { coefficient } => (ModeKind::Ar1, Some(coefficient)),
            ChannelMode::Fixed => (ModeKind::Fixed, None),
        };
        Builder { cfg, mode, ar1 }
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let c = &mut self.cfg;
        match key {
            "N" => c.users = parse(key, value)?,
            "K" => c.channels = parse(key, value)?,
            "M" => c.best_channels = parse(key, value)?,
            "R" => c.iterations = parse(key, value)?,
            "E" => c.episodes = parse(key, value)?,
            "T" => c.slots = parse(key, value)?,
            "p_T" => c.p_transmit = parse_auto(key, value)?,
            "gamma" => c.gamma = parse(key, value)?,
            "alpha" => c.alpha = parse(key, value)?,
            "hidden" => c.hidden = parse(key, value)?,
            "value_width" => c.value_width = parse(key, value)?,
            "advantage_width" => c.advantage_width = parse(key, value)?,
            "snr_db" => c.radio.snr_db = parse(key, value)?,
            "bandwidth_hz" => c.radio.bandwidth_hz = parse(key, value)?,
            "doppler_hz" => c.radio.doppler_hz = parse(key, value)?,
            "slot_duration_s" => c.radio.slot_duration_s = parse(key, value)?,
            "channel_mode" => {
                self.mode = match value {
                    "iid" => ModeKind::Iid,
                    "ar1" => ModeKind::Ar1,
                    "fixed" => ModeKind::Fixed,
                    other => {
                        return Err(Error::invalid(
                            key,
                            format!("`{other}` is not one of iid|ar1|fixed"),
                        ))
                    }
                }
            }
            "ar1_coefficient" => self.ar1 = parse_auto(key, value)?,
            "fixed_gains" => {
                c.fixed_gains = if value == "none" {
                    None
                } else {
                    Some(parse_list(key, value)?)
                }
            }
            "fading_update" => c.fading_update = parse(key, value)?,
            "observability" => c.observability = parse(key, value)?,
            "policy" => c.policy = parse(key, value)?,
            "beta_start" => c.beta_start = parse(key, value)?,
            "beta_end" => c.beta_end = parse(key, value)?,
            "seed" => c.seed = parse(key, value)?,
            "seeds" => c.seeds = parse_list(key, value)?,
            "window" => c.window = parse(key, value)?,
            "clip" => {
                let clip: f64 = parse(key, value)?;
                c.clip = if clip == 0.0 { None } else { Some(clip) };
            }
            "epsilon" => c.epsilon_start = parse(key, value)?,
            "epsilon_decay" => c.epsilon_decay = parse(key, value)?,
            "train_steps" => c.train_steps = parse(key, value)?,
            "shared_network" => c.shared_network = parse(key, value)?,
            "eval_episodes" => c.eval_episodes = parse_auto(key, value)?,
            "eval_p_T" => c.eval_p_transmit = parse_auto(key, value)?,
            "ceil_offset" => c.ceil_offset = parse(key, value)?,
            "record_slots" => c.record_slots = parse(key, value)?,
            other => return Err(Error::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    fn finish(mut self) -> SimConfig {
        self.cfg.channel_mode = match self.mode {
            ModeKind::Iid => ChannelMode::Iid,
            ModeKind::Fixed => ChannelMode::Fixed,
            ModeKind::Ar1 => ChannelMode::Ar1 {
                coefficient: self
                    .ar1
                    .unwrap_or_else(|| self.cfg.radio.default_ar1_coefficient()),
            },
        };
        self.cfg
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| Error::invalid(key, format!("cannot parse `{value}`: {e}")))
}

fn parse_auto<T: FromStr>(key: &str, value: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    if value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

/// Splits `KEY=VALUE` (spaces around `=` allowed).
pub fn split_assignment(text: &str) -> Option<(String, String)> {
    let (key, value) = text.split_once('=')?;
    let key = key.trim();
    if key.is_empty() {
        return None;
    }
    Some((key.to_string(), value.trim().to_string()))
}

/// Parses config text into assignments, without interpreting them.
pub fn parse_assignments(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let pair = split_assignment(line).ok_or_else(|| Error::MalformedLine {
            line: i + 1,
            text: raw.to_string(),
        })?;
        out.push(pair);
    }
    Ok(out)
}

/// Applies assignments on top of `base`. Nothing is validated here; call
/// [`SimConfig::validate`] or [`SimConfig::validate_structure`] afterwards.
pub fn apply_assignments(base: SimConfig, pairs: &[(String, String)]) -> Result<SimConfig> {
    let mut builder = Builder::new(base);
    for (key, value) in pairs {
        builder.set(key, value)?;
    }
    Ok(builder.finish())
}

/// Reads config text, applies overrides, and validates fully.
pub fn parse_config_str(text: &str, overrides: &[(String, String)]) -> Result<SimConfig> {
    let mut pairs = parse_assignments(text)?;
    pairs.extend_from_slice(overrides);
    let cfg = apply_assignments(SimConfig::default(), &pairs)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads a config file, applies overrides, and validates fully.
pub fn parse_config(path: &Path, overrides: &[(String, String)]) -> Result<SimConfig> {
    let text = match std::fs::read_to_string(path) {
        Ok(text) => text,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingConfig(path.to_path_buf()))
        }
        Err(e) => return Err(e.into()),
    };
    parse_config_str(&text, overrides)
}

fn auto<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "auto".to_string(), T::to_string)
}

fn list<T: std::fmt::Display>(values: &[T]) -> String {
    values
        .iter()
        .map(T::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

/// Every key of `cfg`, in [`KEYS`] order.
pub fn to_pairs(cfg: &SimConfig) -> Vec<(&'static str, String)> {
    let (mode, ar1) = match cfg.channel_mode {
        ChannelMode::Iid => ("iid", "auto".to_string()),
        ChannelMode::Ar1 { coefficient } => ("ar1", coefficient.to_string()),
        ChannelMode::Fixed => ("fixed", "auto".to_string()),
    };
    vec![
        ("N", cfg.users.to_string()),
        ("K", cfg.channels.to_string()),
        ("M", cfg.best_channels.to_string()),
        ("R", cfg.iterations.to_string()),
        ("E", cfg.episodes.to_string()),
        ("T", cfg.slots.to_string()),
        ("p_T", auto(&cfg.p_transmit)),
        ("gamma", cfg.gamma.to_string()),
        ("alpha", cfg.alpha.to_string()),
        ("hidden", cfg.hidden.to_string()),
        ("value_width", cfg.value_width.to_string()),
        ("advantage_width", cfg.advantage_width.to_string()),
        ("snr_db", cfg.radio.snr_db.to_string()),
        ("bandwidth_hz", cfg.radio.bandwidth_hz.to_string()),
        ("doppler_hz", cfg.radio.doppler_hz.to_string()),
        ("slot_duration_s", cfg.radio.slot_duration_s.to_string()),
        ("channel_mode", mode.to_string()),
        ("ar1_coefficient", ar1),
        (
            "fixed_gains",
            cfg.fixed_gains.as_deref().map_or("none".into(), list),
        ),
        ("fading_update", cfg.fading_update.to_string()),
        ("observability", cfg.observability.to_string()),
        ("policy", cfg.policy.to_string()),
        ("beta_start", cfg.beta_start.to_string()),
        ("beta_end", cfg.beta_end.to_string()),
        ("seed", cfg.seed.to_string()),
        ("seeds", list(&cfg.seeds)),
        ("window", cfg.window.to_string()),
        ("clip", cfg.clip.unwrap_or(0.0).to_string()),
        ("epsilon", cfg.epsilon_start.to_string()),
        ("epsilon_decay", cfg.epsilon_decay.to_string()),
        ("train_steps", cfg.train_steps.to_string()),
        ("shared_network", cfg.shared_network.to_string()),
        ("eval_episodes", auto(&cfg.eval_episodes)),
        ("eval_p_T", auto(&cfg.eval_p_transmit)),
        ("ceil_offset", cfg.ceil_offset.to_string()),
        ("record_slots", cfg.record_slots.to_string()),
    ]
}

/// A complete config file for `cfg`.
pub fn to_text(cfg: &SimConfig) -> String {
    let mut out = String::new();
    for (key, value) in to_pairs(cfg) {
        let _ = writeln!(out, "{key} = {value}");
    }
    out
}
