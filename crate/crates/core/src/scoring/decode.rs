use super::{segments_from_activity, SegmentList};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Majority filter over a binary row. Positions outside the row count as
/// inactive.
pub fn median_filter(row: &[bool], window: usize) -> Result<Vec<bool>> {
    if window.is_multiple_of(2) {
        return Err(Error::Config(format!("median window must be odd, got {window}")));
    }
    let half = window / 2;
    Ok((0..row.len())
        .map(|t| {
            let active = (t as isize - half as isize..=(t + half) as isize)
                .filter(|&j| j >= 0 && (j as usize) < row.len() && row[j as usize])
                .count();
            active > half
        })
        .collect())
}

/// Thresholds `C × T` posteriors, optionally median-filters each speaker, and
/// merges active runs into segments labelled `spk0`, `spk1`, ….
pub fn decode(
    posteriors: &Tensor,
    threshold: f64,
    median_window: Option<usize>,
    recording: &str,
) -> Result<SegmentList> {
    let (c, t) = (posteriors.rows(), posteriors.cols());
    if t == 0 {
        return Err(Error::Input("cannot decode an empty posterior sequence".into()));
    }
    let mut binary = Tensor::zeros(&[c, t]);
    for s in 0..c {
        let mut row: Vec<bool> = posteriors.row(s).iter().map(|&p| p > threshold).collect();
        if let Some(w) = median_window {
            row = median_filter(&row, w)?;
        }
        for (j, on) in row.into_iter().enumerate() {
            if on {
                binary.set(s, j, 1.0);
            }
        }
    }
    let names: Vec<String> = (0..c).map(|s| format!("spk{s}")).collect();
    Ok(segments_from_activity(&binary, recording, &names))
}
