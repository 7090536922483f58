use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const LOG_HEADER: &str = "#step\tphase\tlr\tdiar\tvad\texist\ttotal\theads\tmean_trace\tstatus";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Baseline objective, `α = 0`.
    Base,
    /// Auxiliary attention loss enabled.
    Vad,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Base => "base",
            Phase::Vad => "vad",
        })
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Phase::Base),
            "vad" => Ok(Phase::Vad),
            other => Err(Error::Config(format!("unknown phase `{other}` (base or vad)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepStatus {
    Ok,
    /// Non-finite loss or gradient; parameters untouched.
    Skipped,
}

impl fmt::Display for StepStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StepStatus::Ok => "ok",
            StepStatus::Skipped => "skipped",
        })
    }
}

/// One line of the training log. Loss values are batch means.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub step: u64,
    pub phase: Phase,
    pub lr: f64,
    pub diar: f64,
    pub vad: f64,
    pub exist: f64,
    pub total: f64,
    /// Selected heads per chunk of the batch.
    pub heads: Vec<Vec<usize>>,
    /// Mean trace of the selected heads over the batch.
    pub mean_trace: f64,
    pub status: StepStatus,
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let heads = if self.heads.is_empty() {
            "-".to_string()
        } else {
            self.heads
                .iter()
                .map(|hs| hs.iter().map(usize::to_string).collect::<Vec<_>>().join(","))
                .collect::<Vec<_>>()
                .join(";")
        };
        write!(
            f,
            "{}\t{}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t{}\t{:?}\t{}",
            self.step,
            self.phase,
            self.lr,
            self.diar,
            self.vad,
            self.exist,
            self.total,
            heads,
            self.mean_trace,
            self.status
        )
    }
}

impl FromStr for LogRecord {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let bad = |msg: String| Error::Input(format!("log line `{line}`: {msg}"));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 10 {
            return Err(bad(format!("expected 10 columns, found {}", f.len())));
        }
        let num = |i: usize| -> Result<f64> { f[i].parse().map_err(|e| bad(format!("column {}: {e}", i + 1))) };
        let heads = if f[7] == "-" {
            Vec::new()
        } else {
            f[7].split(';')
                .map(|chunk| {
                    chunk
                        .split(',')
                        .map(|h| h.parse().map_err(|e| bad(format!("heads: {e}"))))
                        .collect::<Result<Vec<usize>>>()
                })
                .collect::<Result<Vec<_>>>()?
        };
        Ok(Self {
            step: f[0].parse().map_err(|e| bad(format!("step: {e}")))?,
            phase: f[1].parse()?,
            lr: num(2)?,
            diar: num(3)?,
            vad: num(4)?,
            exist: num(5)?,
            total: num(6)?,
            heads,
            mean_trace: num(8)?,
            status: match f[9] {
                "ok" => StepStatus::Ok,
                "skipped" => StepStatus::Skipped,
                s => return Err(bad(format!("status `{s}`"))),
            },
        })
    }
}

/// Parses a whole log, skipping `#` lines.
pub fn parse_log(text: &str) -> Result<Vec<LogRecord>> {
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(str::parse)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_round_trip_is_exact() {
        let r = LogRecord {
            step: 17,
            phase: Phase::Vad,
            lr: 1.0 / 3.0,
            diar: 0.1 + 0.2,
            vad: 2.5e-9,
            exist: 0.0,
            total: f64::NAN,
            heads: vec![vec![1, 0], vec![0, 1]],
            mean_trace: 12.75,
            status: StepStatus::Skipped,
        };
        let line = r.to_string();
        assert!(line.contains("\t1,0;0,1\t"));
        let back: LogRecord = line.parse().unwrap();
        assert_eq!(back.lr.to_bits(), r.lr.to_bits());
        assert_eq!(back.diar.to_bits(), r.diar.to_bits());
        assert!(back.total.is_nan());
        assert_eq!(back.heads, r.heads);
        assert_eq!(back.status, StepStatus::Skipped);
        assert_eq!(LOG_HEADER.split('\t').count(), 10);
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!("1\tbase\t0.1".parse::<LogRecord>().is_err());
        assert!("x".parse::<Phase>().is_err());
    }
}
