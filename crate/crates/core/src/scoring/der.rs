//! Diarization error rate on a 10 ms grid.
//!
//! Per scored tick with `r` reference and `h` hypothesis speakers active and
//! `k` correctly mapped pairs: miss `max(r-h, 0)`, false alarm `max(h-r, 0)`,
//! confusion `min(r, h) - k`, speech `r`. Ticks whose centre is within the
//! collar of a reference boundary are not scored.

use std::collections::BTreeSet;

use super::{Segment, SegmentList};
use crate::error::{Error, Result};
use crate::perm::permutations;

pub const DEFAULT_COLLAR: f64 = 0.25;

/// Internal resolution: ticks per second (10 ms).
const TICKS_PER_S: f64 = 100.0;

/// Exhaustive mapping over `max(R, H)!` permutations; beyond this it is refused.
const MAX_SPEAKERS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerOptions {
    /// Seconds excluded on each side of every reference boundary.
    pub collar: f64,
    /// Skip ticks where two or more reference speakers overlap.
    pub ignore_overlap: bool,
}

impl Default for DerOptions {
    fn default() -> Self {
        Self {
            collar: DEFAULT_COLLAR,
            ignore_overlap: false,
        }
    }
}

/// Error times in seconds over the scored region.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DerBreakdown {
    pub miss_s: f64,
    pub fa_s: f64,
    pub conf_s: f64,
    pub t_speech: f64,
}

impl DerBreakdown {
    fn frac(&self, x: f64) -> f64 {
        if self.t_speech > 0.0 {
            x / self.t_speech
        } else if x == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }

    pub fn error_s(&self) -> f64 {
        self.miss_s + self.fa_s + self.conf_s
    }

    pub fn der(&self) -> f64 {
        self.frac(self.error_s())
    }

    pub fn miss(&self) -> f64 {
        self.frac(self.miss_s)
    }

    pub fn fa(&self) -> f64 {
        self.frac(self.fa_s)
    }

    pub fn conf(&self) -> f64 {
        self.frac(self.conf_s)
    }

    pub fn accumulate(&mut self, other: &DerBreakdown) {
        self.miss_s += other.miss_s;
        self.fa_s += other.fa_s;
        self.conf_s += other.conf_s;
        self.t_speech += other.t_speech;
    }
}

fn to_tick(x: f64) -> usize {
    (x * TICKS_PER_S).round().max(0.0) as usize
}

fn raster(segs: &[&Segment], speakers: &[&str], n: usize) -> Vec<Vec<bool>> {
    let mut out = vec![vec![false; n]; speakers.len()];
    for s in segs {
        let row = speakers.iter().position(|n| *n == s.speaker).expect("speaker listed");
        let (a, b) = (to_tick(s.onset), to_tick(s.end()).min(n));
        for v in &mut out[row][a..b] {
            *v = true;
        }
    }
    out
}

/// Scores one recording.
pub fn der_recording(
    reference: &[&Segment],
    hypothesis: &[&Segment],
    opts: DerOptions,
) -> Result<DerBreakdown> {
    if opts.collar < 0.0 || !opts.collar.is_finite() {
        return Err(Error::Config(format!("collar must be >= 0, got {}", opts.collar)));
    }
    let sorted = |segs: &[&Segment]| -> Vec<String> {
        let set: BTreeSet<&str> = segs.iter().map(|s| s.speaker.as_str()).collect();
        set.into_iter().map(String::from).collect()
    };
    let ref_spk = sorted(reference);
    let hyp_spk = sorted(hypothesis);
    if ref_spk.len().max(hyp_spk.len()) > MAX_SPEAKERS {
        return Err(Error::Input(format!(
            "at most {MAX_SPEAKERS} speakers per side are supported, got {} / {}",
            ref_spk.len(),
            hyp_spk.len()
        )));
    }
    let n = reference
        .iter()
        .chain(hypothesis)
        .map(|s| to_tick(s.end()))
        .max()
        .unwrap_or(0);
    let rs: Vec<&str> = ref_spk.iter().map(String::as_str).collect();
    let hs: Vec<&str> = hyp_spk.iter().map(String::as_str).collect();
    let r_act = raster(reference, &rs, n);
    let h_act = raster(hypothesis, &hs, n);

    let mut scored = vec![true; n];
    if opts.collar > 0.0 {
        for s in reference {
            for b in [s.onset, s.end()] {
                let lo = to_tick((b - opts.collar).max(0.0)).saturating_sub(1);
                let hi = (to_tick(b + opts.collar) + 1).min(n);
                for (t, flag) in scored.iter_mut().enumerate().take(hi).skip(lo) {
                    let centre = (t as f64 + 0.5) / TICKS_PER_S;
                    if (centre - b).abs() < opts.collar {
                        *flag = false;
                    }
                }
            }
        }
    }
    if opts.ignore_overlap {
        for (t, flag) in scored.iter_mut().enumerate() {
            if r_act.iter().filter(|row| row[t]).count() >= 2 {
                *flag = false;
            }
        }
    }

    // co-activity of each (ref, hyp) pair over scored ticks
    let k = rs.len().max(hs.len());
    let mut overlap = vec![vec![0usize; k]; k];
    for (i, rrow) in r_act.iter().enumerate() {
        for (j, hrow) in h_act.iter().enumerate() {
            overlap[i][j] = (0..n).filter(|&t| scored[t] && rrow[t] && hrow[t]).count();
        }
    }
    let mut best_map: Vec<usize> = (0..k).collect();
    let mut best = 0;
    for p in permutations(k) {
        let total: usize = (0..k).map(|i| overlap[i][p[i]]).sum();
        if total > best {
            best = total;
            best_map = p;
        }
    }

    let (mut miss, mut fa, mut conf, mut speech) = (0usize, 0usize, 0usize, 0usize);
    for t in 0..n {
        if !scored[t] {
            continue;
        }
        let nr = r_act.iter().filter(|row| row[t]).count();
        let nh = h_act.iter().filter(|row| row[t]).count();
        let correct = (0..rs.len())
            .filter(|&i| best_map[i] < hs.len() && r_act[i][t] && h_act[best_map[i]][t])
            .count();
        miss += nr.saturating_sub(nh);
        fa += nh.saturating_sub(nr);
        conf += nr.min(nh) - correct;
        speech += nr;
    }
    Ok(DerBreakdown {
        miss_s: miss as f64 / TICKS_PER_S,
        fa_s: fa as f64 / TICKS_PER_S,
        conf_s: conf as f64 / TICKS_PER_S,
        t_speech: speech as f64 / TICKS_PER_S,
    })
}

/// Scores every recording of `reference` and pools the times. Each
/// hypothesis recording must also appear in the reference; a reference
/// recording without hypothesis segments is scored as all-miss.
pub fn der(
    reference: &SegmentList,
    hypothesis: &SegmentList,
    opts: DerOptions,
) -> Result<(DerBreakdown, Vec<(String, DerBreakdown)>)> {
    let refs = reference.recordings();
    for rec in hypothesis.recordings() {
        if !refs.contains(&rec) {
            return Err(Error::Input(format!(
                "hypothesis recording `{rec}` has no reference"
            )));
        }
    }
    let mut total = DerBreakdown::default();
    let mut per = Vec::with_capacity(refs.len());
    for rec in refs {
        let r: Vec<&Segment> = reference.for_recording(rec).collect();
        let h: Vec<&Segment> = hypothesis.for_recording(rec).collect();
        let b = der_recording(&r, &h, opts)?;
        total.accumulate(&b);
        per.push((rec.to_string(), b));
    }
    Ok((total, per))
}
