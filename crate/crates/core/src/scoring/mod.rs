//! Segments, RTTM I/O, posterior decoding and diarization error rate.

mod decode;
mod der;
mod report;
mod rttm;

pub use decode::{decode, median_filter};
pub use der::{der, der_recording, DerBreakdown, DerOptions, DEFAULT_COLLAR};
pub use report::{format_report, ScoreRow};
pub use rttm::{read_rttm, rttm_line, write_rttm, parse_rttm};

use crate::numerics::Tensor;

/// Duration of one model frame in seconds.
pub const FRAME_S: f64 = 0.1;

/// One speaker turn.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub recording: String,
    pub onset: f64,
    pub duration: f64,
    pub speaker: String,
}

impl Segment {
    pub fn end(&self) -> f64 {
        self.onset + self.duration
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SegmentList {
    pub entries: Vec<Segment>,
}

impl SegmentList {
    pub fn new(entries: Vec<Segment>) -> Self {
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sort(&mut self) {
        self.entries.sort_by(|a, b| {
            a.recording
                .cmp(&b.recording)
                .then(a.onset.total_cmp(&b.onset))
                .then(a.speaker.cmp(&b.speaker))
        });
    }

    /// Distinct recording ids in first-seen order.
    pub fn recordings(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for s in &self.entries {
            if !out.contains(&s.recording.as_str()) {
                out.push(&s.recording);
            }
        }
        out
    }

    /// Distinct speakers of one recording, sorted.
    pub fn speakers(&self, recording: &str) -> Vec<&str> {
        let mut out: Vec<&str> = self
            .entries
            .iter()
            .filter(|s| s.recording == recording)
            .map(|s| s.speaker.as_str())
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn for_recording(&self, recording: &str) -> impl Iterator<Item = &Segment> {
        let recording = recording.to_string();
        self.entries.iter().filter(move |s| s.recording == recording)
    }

    pub fn extend(&mut self, other: SegmentList) {
        self.entries.extend(other.entries);
    }
}

/// Converts a binary `C × T` activity matrix (rows = speakers, 100 ms
/// frames) into merged segments named by `speakers`.
pub fn segments_from_activity(
    activity: &Tensor,
    recording: &str,
    speakers: &[String],
) -> SegmentList {
    let mut entries = Vec::new();
    for (c, name) in speakers.iter().enumerate().take(activity.rows()) {
        let row = activity.row(c);
        let mut t = 0;
        while t < row.len() {
            if row[t] > 0.5 {
                let start = t;
                while t < row.len() && row[t] > 0.5 {
                    t += 1;
                }
                entries.push(Segment {
                    recording: recording.to_string(),
                    onset: round_cs(start as f64 * FRAME_S),
                    duration: round_cs((t - start) as f64 * FRAME_S),
                    speaker: name.clone(),
                });
            } else {
                t += 1;
            }
        }
    }
    let mut list = SegmentList::new(entries);
    list.sort();
    list
}

/// Rasterizes one recording's segments onto the 100 ms grid; rows follow
/// `speakers`. A frame is active when its centre lies inside a segment.
pub fn activity_from_segments(
    segments: &SegmentList,
    recording: &str,
    speakers: &[String],
    frames: usize,
) -> Tensor {
    let mut out = Tensor::zeros(&[speakers.len(), frames]);
    for s in segments.for_recording(recording) {
        let Some(c) = speakers.iter().position(|n| *n == s.speaker) else {
            continue;
        };
        for t in 0..frames {
            let centre = (t as f64 + 0.5) * FRAME_S;
            if centre >= s.onset && centre < s.end() {
                out.set(c, t, 1.0);
            }
        }
    }
    out
}

/// Rounds to the nearest centisecond, removing the `0.30000000000000004`
/// style noise of frame-index arithmetic.
pub(crate) fn round_cs(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}
