//! Piecewise-constant available bandwidth over time.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Result, SimError};

/// Steps of `(timestamp seconds, bytes per second)`. Each rate holds from its
/// timestamp until the next one; the last rate holds forever and the first
/// one also covers any time before the first timestamp.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelTrace {
    steps: Vec<(f64, f64)>,
}

impl ChannelTrace {
    pub fn new(steps: Vec<(f64, f64)>) -> Result<Self> {
        if steps.is_empty() {
            return Err(SimError::Trace("empty trace".into()));
        }
        for (i, &(t, r)) in steps.iter().enumerate() {
            if !t.is_finite() || r.is_nan() || r < 0.0 {
                return Err(SimError::Trace(format!("step {i}: invalid ({t}, {r})")));
            }
            if i > 0 && t <= steps[i - 1].0 {
                return Err(SimError::Trace(format!("step {i}: timestamps must strictly increase")));
            }
        }
        Ok(Self { steps })
    }

    pub fn constant(rate: f64) -> Result<Self> {
        Self::new(vec![(0.0, rate)])
    }

    pub fn steps(&self) -> &[(f64, f64)] {
        &self.steps
    }

    pub fn start(&self) -> f64 {
        self.steps[0].0
    }

    fn step_index(&self, t: f64) -> usize {
        self.steps.partition_point(|&(ts, _)| ts <= t).saturating_sub(1)
    }

    pub fn rate_at(&self, t: f64) -> f64 {
        self.steps[self.step_index(t)].1
    }

    /// Time at which `bytes` finish transmitting when sending starts at `start`.
    pub fn transmit_end(&self, start: f64, bytes: usize) -> Result<f64> {
        let mut left = bytes as f64;
        let mut t = start;
        let mut i = self.step_index(start);
        loop {
            let rate = self.steps[i].1;
            let until = self.steps.get(i + 1).map_or(f64::INFINITY, |s| s.0);
            if left <= 0.0 {
                return Ok(t);
            }
            if rate > 0.0 {
                let done = t + left / rate;
                if done <= until {
                    return Ok(done);
                }
                left -= (until - t) * rate;
            } else if until.is_infinite() {
                return Err(SimError::Trace(format!("channel stalls at t={t} with {left} bytes pending")));
            }
            t = until;
            i += 1;
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        std::fs::read_to_string(path)?.parse()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (t, r) in &self.steps {
            writeln!(s, "{t} {r}").unwrap();
        }
        s
    }
}

impl FromStr for ChannelTrace {
    type Err = SimError;

    /// One `timestamp_s rate_Bps` pair per line; blank lines and `#`
    /// comments are ignored.
    fn from_str(s: &str) -> Result<Self> {
        let mut steps = Vec::new();
        for (n, line) in s.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let parse = |f: &str| {
                f.parse::<f64>()
                    .map_err(|_| SimError::Trace(format!("line {}: bad number {f:?}", n + 1)))
            };
            match fields[..] {
                [t, r] => steps.push((parse(t)?, parse(r)?)),
                _ => return Err(SimError::Trace(format!("line {}: expected two fields", n + 1))),
            }
        }
        Self::new(steps)
    }
}
