use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Segment, SegmentList};
use crate::error::{Error, Result};

/// Shortest decimal that reads back as `x`, with at least two decimals.
fn fmt_time(x: f64) -> String {
    let two = format!("{x:.2}");
    if two.parse::<f64>().ok() == Some(x) {
        return two;
    }
    let s = format!("{x}");
    match s.split_once('.') {
        Some((_, frac)) if frac.len() >= 2 => s,
        Some(_) => format!("{s}0"),
        None => format!("{s}.00"),
    }
}

pub fn rttm_line(s: &Segment) -> String {
    format!(
        "SPEAKER {} 1 {} {} <NA> <NA> {} <NA> <NA>",
        s.recording,
        fmt_time(s.onset),
        fmt_time(s.duration),
        s.speaker
    )
}

pub fn write_rttm(segments: &SegmentList, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for s in &segments.entries {
        writeln!(f, "{}", rttm_line(s))?;
    }
    f.flush()?;
    Ok(())
}

pub fn parse_rttm(text: &str, origin: &Path) -> Result<SegmentList> {
    let err = |line: usize, msg: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        msg,
    };
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.len() != 10 {
            return Err(err(
                lineno,
                format!("expected 10 fields, found {}: {raw:?}", fields.len()),
            ));
        }
        if fields[0] != "SPEAKER" {
            return Err(err(lineno, format!("unsupported record type {:?}", fields[0])));
        }
        let num = |s: &str, what: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(lineno, format!("bad {what} {s:?}")))
        };
        let onset = num(fields[3], "onset")?;
        let duration = num(fields[4], "duration")?;
        if duration <= 0.0 || onset < 0.0 {
            return Err(err(
                lineno,
                format!("need onset >= 0 and duration > 0, got {onset} / {duration}"),
            ));
        }
        entries.push(Segment {
            recording: fields[1].to_string(),
            onset,
            duration,
            speaker: fields[7].to_string(),
        });
    }
    Ok(SegmentList::new(entries))
}

pub fn read_rttm(path: impl AsRef<Path>) -> Result<SegmentList> {
    let path = path.as_ref();
    parse_rttm(&fs::read_to_string(path)?, path)
}
