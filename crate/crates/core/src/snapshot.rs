//! Text snapshots of networks and agents.
//!
//! Network block:
//!
//! ```text
//! qnet 1
//! shape <inputs> <hidden> <value_width> <advantage_width> <actions>
//! tensor <name> <rows> <cols>
//! <cols values>            (one line per row)
//! ...                      (11 tensors, in TENSOR_NAMES order)
//! end qnet
//! ```
//!
//! Values are written with Rust's shortest round-trip float formatting, so
//! parsing a snapshot reproduces every weight bit for bit.
//!
//! Agent block:
//!
//! ```text
//! agent 1
//! <qnet block for the selection network>
//! <qnet block for the evaluation network>
//! counters <channels> <window> <slots_in_bucket>
//! current <transmitted> <succeeded> ...   (one pair per channel)
//! previous <transmitted> <succeeded> ...
//! end agent
//! ```

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::load::{ChannelCounts, LoadCounters};
use crate::qnet::{Matrix, NetShape, QNetworkParams, TENSOR_NAMES};

/// Network weights and load counters of one trained agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSnapshot {
    pub selection: QNetworkParams,
    pub evaluation: QNetworkParams,
    pub counters: LoadCounters,
}

pub fn write_params(params: &QNetworkParams, out: &mut String) {
    let s = params.shape();
    let _ = writeln!(out, "qnet 1");
    let _ = writeln!(
        out,
        "shape {} {} {} {} {}",
        s.inputs, s.hidden, s.value_width, s.advantage_width, s.actions
    );
    for (t, name) in params.tensors().iter().zip(TENSOR_NAMES) {
        let _ = writeln!(out, "tensor {name} {} {}", t.rows, t.cols);
        for row in t.data.chunks(t.cols.max(1)) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
    }
    let _ = writeln!(out, "end qnet");
}

pub fn params_to_string(params: &QNetworkParams) -> String {
    let mut out = String::new();
    write_params(params, &mut out);
    out
}

pub fn params_from_str(text: &str) -> Result<QNetworkParams> {
    let mut lines = Lines::new(text);
    let params = read_params(&mut lines)?;
    lines.expect_eof()?;
    Ok(params)
}

pub fn agent_to_string(agent: &AgentSnapshot) -> String {
    let mut out = String::from("agent 1\n");
    write_params(&agent.selection, &mut out);
    write_params(&agent.evaluation, &mut out);
    let (slots, current, previous) = agent.counters.parts();
    let _ = writeln!(
        out,
        "counters {} {} {slots}",
        current.len(),
        agent.counters.window()
    );
    for (label, bucket) in [("current", current), ("previous", previous)] {
        let _ = write!(out, "{label}");
        for c in bucket {
            let _ = write!(out, " {} {}", c.transmitted, c.succeeded);
        }
        out.push('\n');
    }
    out.push_str("end agent\n");
    out
}

pub fn agent_from_str(text: &str) -> Result<AgentSnapshot> {
    let mut lines = Lines::new(text);
    lines.expect_words(&["agent", "1"])?;
    let selection = read_params(&mut lines)?;
    let evaluation = read_params(&mut lines)?;
    let header = lines.next_words()?;
    if header.len() != 4 || header[0] != "counters" {
        return Err(lines.error("expected `counters <channels> <window> <slots>`"));
    }
    let channels: usize = lines.parse(header[1])?;
    let window: usize = lines.parse(header[2])?;
    let slots: usize = lines.parse(header[3])?;
    let mut buckets = Vec::new();
    for label in ["current", "previous"] {
        let words = lines.next_words()?;
        if words.first() != Some(&label) || words.len() != 1 + 2 * channels {
            return Err(lines.error(&format!("expected `{label}` with {channels} count pairs")));
        }
        let mut bucket = Vec::with_capacity(channels);
        for pair in words[1..].chunks(2) {
            bucket.push(ChannelCounts {
                transmitted: lines.parse(pair[0])?,
                succeeded: lines.parse(pair[1])?,
            });
        }
        buckets.push(bucket);
    }
    lines.expect_words(&["end", "agent"])?;
    lines.expect_eof()?;
    let previous = buckets.pop().unwrap_or_default();
    let current = buckets.pop().unwrap_or_default();
    let counters = LoadCounters::from_parts(window, slots, current, previous)?;
    Ok(AgentSnapshot {
        selection,
        evaluation,
        counters,
    })
}

fn read_params(lines: &mut Lines<'_>) -> Result<QNetworkParams> {
    lines.expect_words(&["qnet", "1"])?;
    let words = lines.next_words()?;
    if words.len() != 6 || words[0] != "shape" {
        return Err(lines.error("expected `shape` with five sizes"));
    }
    let shape = NetShape {
        inputs: lines.parse(words[1])?,
        hidden: lines.parse(words[2])?,
        value_width: lines.parse(words[3])?,
        advantage_width: lines.parse(words[4])?,
        actions: lines.parse(words[5])?,
    };
    let mut tensors = Vec::with_capacity(TENSOR_NAMES.len());
    for name in TENSOR_NAMES {
        let words = lines.next_words()?;
        if words.len() != 4 || words[0] != "tensor" || words[1] != name {
            return Err(lines.error(&format!("expected `tensor {name} <rows> <cols>`")));
        }
        let rows: usize = lines.parse(words[2])?;
        let cols: usize = lines.parse(words[3])?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let row = lines.next_words()?;
            if row.len() != cols {
                return Err(lines.error(&format!("{name}: expected {cols} values")));
            }
            for w in row {
                data.push(lines.parse::<f64>(w)?);
            }
        }
        tensors.push(Matrix { rows, cols, data });
    }
    lines.expect_words(&["end", "qnet"])?;
    QNetworkParams::from_tensors(shape, tensors)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines {
            inner: text.lines().enumerate(),
            line: 0,
        }
    }

    fn error(&self, reason: &str) -> Error {
        Error::Snapshot {
            line: self.line,
            reason: reason.to_string(),
        }
    }

    fn next_words(&mut self) -> Result<Vec<&'a str>> {
        for (i, text) in self.inner.by_ref() {
            self.line = i + 1;
            let words: Vec<&str> = text.split_whitespace().collect();
            if !words.is_empty() {
                return Ok(words);
            }
        }
        Err(self.error("unexpected end of snapshot"))
    }

    fn expect_words(&mut self, expected: &[&str]) -> Result<()> {
        let words = self.next_words()?;
        if words != expected {
            return Err(self.error(&format!("expected `{}`", expected.join(" "))));
        }
        Ok(())
    }

    fn expect_eof(&mut self) -> Result<()> {
        for (i, text) in self.inner.by_ref() {
            if !text.trim().is_empty() {
                self.line = i + 1;
                return Err(self.error("trailing content"));
            }
        }
        Ok(())
    }

    fn parse<T: std::str::FromStr>(&self, word: &str) -> Result<T> {
        word.parse()
            .map_err(|_| self.error(&format!("cannot parse `{word}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn agent_round_trip() {
        let mut rng = stream(9, Stream::Init(0));
        let shape = NetShape::for_channels(3, 4, 2, 3);
        let selection = QNetworkParams::random(shape, &mut rng).unwrap();
        let evaluation = QNetworkParams::random(shape, &mut rng).unwrap();
        let mut counters = LoadCounters::new(3, 10);
        counters.record(2, true, true).unwrap();
        counters.record(3, true, false).unwrap();
        counters.end_slot();
        let agent = AgentSnapshot {
            selection,
            evaluation,
            counters,
        };
        let text = agent_to_string(&agent);
        assert_eq!(agent_from_str(&text).unwrap(), agent);
    }

    #[test]
    fn truncated_snapshot_rejected() {
        let shape = NetShape::for_channels(1, 1, 1, 1);
        let text = params_to_string(&QNetworkParams::zeros(shape).unwrap());
        let cut = &text[..text.len() / 2];
        assert!(matches!(params_from_str(cut), Err(Error::Snapshot { .. })));
    }

    #[test]
    fn wrong_tensor_size_rejected() {
        let shape = NetShape::for_channels(1, 1, 1, 1);
        let text = params_to_string(&QNetworkParams::zeros(shape).unwrap()).replacen(
            "tensor lstm.w_input 4 2",
            "tensor lstm.w_input 4 3",
            1,
        );
        assert!(params_from_str(&text).is_err());
    }
}
