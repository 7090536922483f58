use std::fmt::Write;

use super::DerBreakdown;

#[derive(Debug, Clone)]
pub struct ScoreRow {
    pub name: String,
    pub breakdown: DerBreakdown,
}

/// Renders DER / Miss / FA / Conf. (percent) as an aligned table, followed by
/// one tab-separated `SCORE` line per row:
///
/// `SCORE <name> <der> <miss> <fa> <conf> <speech_s>` (fractions, not percent).
pub fn format_report(rows: &[ScoreRow]) -> String {
    let width = rows
        .iter()
        .map(|r| r.name.len())
        .chain(std::iter::once("Recording".len()))
        .max()
        .unwrap_or(9);
    let mut out = String::new();
    writeln!(
        out,
        "{:<width$}  {:>7}  {:>7}  {:>7}  {:>7}  {:>10}",
        "Recording", "DER", "Miss", "FA", "Conf.", "Speech(s)"
    )
    .unwrap();
    for r in rows {
        let b = &r.breakdown;
        writeln!(
            out,
            "{:<width$}  {:>7.2}  {:>7.2}  {:>7.2}  {:>7.2}  {:>10.2}",
            r.name,
            100.0 * b.der(),
            100.0 * b.miss(),
            100.0 * b.fa(),
            100.0 * b.conf(),
            b.t_speech
        )
        .unwrap();
    }
    for r in rows {
        let b = &r.breakdown;
        writeln!(
            out,
            "SCORE\t{}\t{}\t{}\t{}\t{}\t{}",
            r.name,
            b.der(),
            b.miss(),
            b.fa(),
            b.conf(),
            b.t_speech
        )
        .unwrap();
    }
    out
}
