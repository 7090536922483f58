//! Synthetic two-speaker conversations with exact labels.
//!
//! Speakers take turns; each turn's onset is pulled back into the previous
//! turn by a shared overlap knob `λ ∈ [0, 1]`, and `λ` is bisected until the
//! measured overlap ratio is within ±5 points of the target. Speaker sources
//! are a harmonic stack around a per-speaker F0 and formant plus low-passed
//! noise, gated per 100 ms frame.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::frontend::{feature_frame_count, Waveform, SAMPLE_RATE};
use crate::numerics::Tensor;
use crate::scoring::{segments_from_activity, write_rttm, SegmentList, FRAME_S};

/// Accepted distance between achieved and target overlap.
pub const OVERLAP_TOLERANCE: f64 = 0.05;

const SAMPLES_PER_FRAME: usize = (SAMPLE_RATE as f64 * FRAME_S) as usize;
const MIN_UTTERANCE_S: f64 = 0.5;
const MAX_PULLBACK: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// Alternating turns, overlap steered toward `target_overlap`.
    Turns,
    /// Both speakers talk for the whole recording.
    AlwaysOn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DialogueConfig {
    pub num_speakers: usize,
    pub duration_s: f64,
    pub target_overlap: f64,
    pub utterance_mean_s: f64,
    pub utterance_std_s: f64,
    pub gap_mean_s: f64,
    pub gap_std_s: f64,
    /// `None` disables additive noise.
    pub noise_snr_db: Option<f64>,
    pub seed: u64,
    pub schedule: Schedule,
}

impl Default for DialogueConfig {
    fn default() -> Self {
        Self {
            num_speakers: 2,
            duration_s: 30.0,
            target_overlap: 0.45,
            utterance_mean_s: 2.5,
            utterance_std_s: 1.0,
            gap_mean_s: 0.6,
            gap_std_s: 0.3,
            noise_snr_db: Some(20.0),
            seed: 0,
            schedule: Schedule::Turns,
        }
    }
}

impl DialogueConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_speakers != 2 {
            return Err(Error::Config(format!(
                "only two-speaker dialogues are supported, got {}",
                self.num_speakers
            )));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::Config(format!("duration_s must be > 0, got {}", self.duration_s)));
        }
        if !(0.0..=1.0).contains(&self.target_overlap) {
            return Err(Error::Config(format!(
                "target_overlap must be in [0, 1], got {}",
                self.target_overlap
            )));
        }
        if self.utterance_mean_s <= 0.0 || self.utterance_std_s < 0.0 {
            return Err(Error::Config("utterance length mean must be > 0, std >= 0".into()));
        }
        if self.gap_mean_s < 0.0 || self.gap_std_s < 0.0 {
            return Err(Error::Config("gap length mean and std must be >= 0".into()));
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        (self.duration_s * SAMPLE_RATE as f64).round() as usize
    }

    pub fn num_frames(&self) -> usize {
        feature_frame_count(self.num_samples())
    }
}

/// Labels of one recording. `activity` is `C × T` binary on the 100 ms grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub recording: String,
    pub speakers: Vec<String>,
    pub activity: Tensor,
    pub segments: SegmentList,
    pub duration_s: f64,
}

impl GroundTruth {
    pub fn from_activity(recording: &str, activity: Tensor, duration_s: f64) -> Self {
        let speakers: Vec<String> = (0..activity.rows()).map(|s| format!("spk{s}")).collect();
        let segments = segments_from_activity(&activity, recording, &speakers);
        Self {
            recording: recording.to_string(),
            speakers,
            activity,
            segments,
            duration_s,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dialogue {
    pub waveform: Waveform,
    pub truth: GroundTruth,
}

/// Fraction of speech frames with two or more active speakers (0 if silent).
pub fn overlap_ratio(activity: &Tensor) -> f64 {
    let (speech, overlap) = speech_and_overlap_frames(activity);
    if speech == 0 {
        0.0
    } else {
        overlap as f64 / speech as f64
    }
}

fn speech_and_overlap_frames(activity: &Tensor) -> (usize, usize) {
    let mut speech = 0;
    let mut overlap = 0;
    for t in 0..activity.cols() {
        let n = (0..activity.rows()).filter(|&c| activity.get(c, t) > 0.5).count();
        speech += usize::from(n >= 1);
        overlap += usize::from(n >= 2);
    }
    (speech, overlap)
}

/// Random draws behind one schedule; independent of the overlap knob.
struct TurnDraws {
    utterances: Vec<f64>,
    gaps: Vec<f64>,
    pullbacks: Vec<f64>,
    first_speaker: usize,
}

impl TurnDraws {
    fn draw(cfg: &DialogueConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let utt = Normal::new(cfg.utterance_mean_s, cfg.utterance_std_s)
            .map_err(|e| Error::Config(format!("utterance distribution: {e}")))?;
        let gap = Normal::new(cfg.gap_mean_s, cfg.gap_std_s)
            .map_err(|e| Error::Config(format!("gap distribution: {e}")))?;
        let first_speaker = rng.random_range(0..2);
        let (mut utterances, mut gaps, mut pullbacks) = (Vec::new(), Vec::new(), Vec::new());
        // enough turns to cover the recording even at the tightest packing
        let mut covered = 0.0;
        while covered < cfg.duration_s {
            let u = utt.sample(rng).max(MIN_UTTERANCE_S);
            let p = rng.random_range(0.5..MAX_PULLBACK);
            utterances.push(u);
            gaps.push(gap.sample(rng).max(0.0));
            pullbacks.push(p);
            covered += (1.0 - p) * u;
        }
        Ok(Self {
            utterances,
            gaps,
            pullbacks,
            first_speaker,
        })
    }

    /// Frame labels for overlap knob `lambda`.
    fn activity(&self, lambda: f64, frames: usize) -> Tensor {
        let mut act = Tensor::zeros(&[2, frames]);
        let horizon = frames as f64 * FRAME_S;
        let mut onset = (1.0 - lambda) * self.gaps[0];
        for k in 0..self.utterances.len() {
            if onset >= horizon {
                break;
            }
            let spk = (self.first_speaker + k) % 2;
            let end = onset + self.utterances[k];
            for t in 0..frames {
                let centre = (t as f64 + 0.5) * FRAME_S;
                if centre >= onset && centre < end {
                    act.set(spk, t, 1.0);
                }
            }
            let next_gap = self.gaps.get(k + 1).copied().unwrap_or(0.0);
            onset = end + (1.0 - lambda) * next_gap - lambda * self.pullbacks[k] * self.utterances[k];
        }
        act
    }
}

fn schedule_activity(cfg: &DialogueConfig, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let frames = cfg.num_frames();
    if cfg.schedule == Schedule::AlwaysOn {
        return Ok(Tensor::full(&[2, frames], 1.0));
    }
    let draws = TurnDraws::draw(cfg, rng)?;
    let at = |l: f64| {
        let a = draws.activity(l, frames);
        let r = overlap_ratio(&a);
        (a, r)
    };
    let (lo_act, lo) = at(0.0);
    let (hi_act, hi) = at(1.0);
    let target = cfg.target_overlap;
    let mut best = if (lo - target).abs() <= (hi - target).abs() {
        (lo_act, lo)
    } else {
        (hi_act, hi)
    };
    let (mut a, mut b) = (0.0, 1.0);
    for _ in 0..40 {
        if (best.1 - target).abs() < 1e-3 {
            break;
        }
        let mid = 0.5 * (a + b);
        let (act, r) = at(mid);
        if (r - target).abs() < (best.1 - target).abs() {
            best = (act, r);
        }
        if r < target {
            a = mid;
        } else {
            b = mid;
        }
    }
    if (best.1 - target).abs() > OVERLAP_TOLERANCE {
        return Err(Error::Config(format!(
            "overlap target {target:.3} unreachable with these turn statistics; achievable range is about [{lo:.3}, {hi:.3}], best {:.3}",
            best.1
        )));
    }
    Ok(best.0)
}

struct Voice {
    f0: f64,
    formant: f64,
    bandwidth: f64,
    noise_pole: f64,
    rate_hz: f64,
    phase: f64,
}

impl Voice {
    fn draw(speaker: usize, rng: &mut ChaCha8Rng) -> Self {
        let (f0, formant) = if speaker == 0 {
            (rng.random_range(95.0..140.0), rng.random_range(500.0..900.0))
        } else {
            (rng.random_range(180.0..250.0), rng.random_range(1500.0..2200.0))
        };
        Self {
            f0,
            formant,
            bandwidth: rng.random_range(300.0..600.0),
            noise_pole: if speaker == 0 { 0.9 } else { 0.3 },
            rate_hz: rng.random_range(3.0..5.0),
            phase: rng.random_range(0.0..2.0 * PI),
        }
    }

    fn render(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let sr = SAMPLE_RATE as f64;
        let harmonics: Vec<(f64, f64)> = (1..)
            .map(|k| k as f64 * self.f0)
            .take_while(|&f| f < 3800.0)
            .map(|f| {
                let w = (-((f - self.formant) / self.bandwidth).powi(2)).exp() + 0.05;
                (f, w)
            })
            .collect();
        let mut lp = 0.0;
        (0..n)
            .map(|i| {
                let t = i as f64 / sr;
                let vib = 1.0 + 0.01 * (2.0 * PI * 5.0 * t).sin();
                let tone: f64 = harmonics
                    .iter()
                    .map(|(f, w)| w * (2.0 * PI * f * vib * t).sin())
                    .sum();
                let white: f64 = rng.random_range(-1.0..1.0);
                lp = self.noise_pole * lp + (1.0 - self.noise_pole) * white;
                let env = 0.65 + 0.35 * (2.0 * PI * self.rate_hz * t + self.phase).sin();
                env * (tone + 0.3 * lp)
            })
            .collect()
    }
}

fn render_mixture(
    cfg: &DialogueConfig,
    activity: &Tensor,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let n = cfg.num_samples();
    let mut mix = vec![0.0; n];
    for spk in 0..2 {
        let voice = Voice::draw(spk, rng);
        let src = voice.render(n, rng);
        let rms = (src.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64).sqrt();
        for (i, (m, s)) in mix.iter_mut().zip(&src).enumerate() {
            let frame = (i / SAMPLES_PER_FRAME).min(activity.cols().saturating_sub(1));
            if activity.cols() > 0 && activity.get(spk, frame) > 0.5 {
                *m += s / rms.max(1e-12);
            }
        }
    }
    let active: Vec<f64> = mix.iter().copied().filter(|v| *v != 0.0).collect();
    let speech_power = if active.is_empty() {
        1.0
    } else {
        active.iter().map(|v| v * v).sum::<f64>() / active.len() as f64
    };
    if let Some(snr) = cfg.noise_snr_db {
        let sigma = (speech_power / 10f64.powf(snr / 10.0)).sqrt();
        let noise = Normal::new(0.0, sigma).map_err(|e| Error::Config(format!("noise: {e}")))?;
        for m in &mut mix {
            *m += noise.sample(rng);
        }
    }
    let peak = mix.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if peak > 0.0 {
        let g = 0.9 / peak;
        for m in &mut mix {
            *m *= g;
        }
    }
    Ok(mix)
}

/// Generates one labelled dialogue.
pub fn simulate(cfg: &DialogueConfig, recording: &str) -> Result<Dialogue> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let activity = schedule_activity(cfg, &mut rng)?;
    let samples = render_mixture(cfg, &activity, &mut rng)?;
    Ok(Dialogue {
        waveform: Waveform::new(samples, SAMPLE_RATE)?,
        truth: GroundTruth::from_activity(recording, activity, cfg.duration_s),
    })
}

/// Feature-space stand-in for [`simulate`]: each frame is the sum of the
/// active speakers' cluster means, an extra marker vector on overlapped
/// frames, and unit-scale Gaussian noise.
pub fn simulate_features(
    cfg: &DialogueConfig,
    dim: usize,
    recording: &str,
) -> Result<(Tensor, GroundTruth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let activity = schedule_activity(cfg, &mut rng)?;
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let draw = |scale: f64, rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..dim).map(|_| scale * unit.sample(rng)).collect()
    };
    let means = [draw(2.0, &mut rng), draw(2.0, &mut rng)];
    let marker = draw(1.0, &mut rng);
    let frames = activity.cols();
    let mut data = Vec::with_capacity(frames * dim);
    for t in 0..frames {
        let on: Vec<usize> = (0..2).filter(|&s| activity.get(s, t) > 0.5).collect();
        let noise = draw(0.3, &mut rng);
        for j in 0..dim {
            let mut v = noise[j];
            for &s in &on {
                v += means[s][j];
            }
            if on.len() == 2 {
                v += marker[j];
            }
            data.push(v);
        }
    }
    Ok((
        Tensor::new(vec![frames, dim], data)?,
        GroundTruth::from_activity(recording, activity, cfg.duration_s),
    ))
}

/// Table-style corpus summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetStats {
    pub num_files: usize,
    pub total_hours: f64,
    /// Percent of speech time with two or more speakers.
    pub overlap_pct: f64,
}

impl DatasetStats {
    pub fn table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{:>8}  {:>14}  {:>11}", "Files", "Duration(h)", "Overlap(%)").unwrap();
        writeln!(
            s,
            "{:>8}  {:>14.4}  {:>11.2}",
            self.num_files, self.total_hours, self.overlap_pct
        )
        .unwrap();
        s
    }
}

pub fn dataset_stats(truths: &[GroundTruth]) -> Result<DatasetStats> {
    if truths.is_empty() {
        return Err(Error::Input("dataset statistics need at least one file".into()));
    }
    let (mut speech, mut overlap, mut seconds) = (0usize, 0usize, 0.0);
    for g in truths {
        let (s, o) = speech_and_overlap_frames(&g.activity);
        speech += s;
        overlap += o;
        seconds += g.duration_s;
    }
    Ok(DatasetStats {
        num_files: truths.len(),
        total_hours: seconds / 3600.0,
        overlap_pct: if speech == 0 {
            0.0
        } else {
            100.0 * overlap as f64 / speech as f64
        },
    })
}

/// One manifest row. Paths are stored relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub recording: String,
    pub audio: PathBuf,
    pub rttm: PathBuf,
    pub duration_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory that relative paths resolve against.
    pub root: PathBuf,
}

const MANIFEST_HEADER: &str = "#recording\taudio\trttm\tduration_s";

impl Manifest {
    pub fn audio_path(&self, e: &ManifestEntry) -> PathBuf {
        self.root.join(&e.audio)
    }

    pub fn rttm_path(&self, e: &ManifestEntry) -> PathBuf {
        self.root.join(&e.rttm)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = String::from(MANIFEST_HEADER);
        s.push('\n');
        for e in &self.entries {
            writeln!(
                s,
                "{}\t{}\t{}\t{}",
                e.recording,
                e.audio.display(),
                e.rttm.display(),
                e.duration_s
            )
            .unwrap();
        }
        fs::write(path, s)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(err(i + 1, format!("expected 4 tab-separated fields, got {}", f.len())));
            }
            let duration_s = f[3]
                .parse()
                .map_err(|e| err(i + 1, format!("bad duration {:?}: {e}", f[3])))?;
            entries.push(ManifestEntry {
                recording: f[0].to_string(),
                audio: PathBuf::from(f[1]),
                rttm: PathBuf::from(f[2]),
                duration_s,
            });
        }
        Ok(Self {
            entries,
            root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }
}

/// Per-file seed derived from the corpus seed (splitmix64 finalizer).
pub fn file_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Writes `num_files` dialogues as WAV + RTTM plus `manifest.tsv` into
/// `out_dir`, and returns the manifest and corpus statistics.
pub fn write_dataset(
    cfg: &DialogueConfig,
    num_files: usize,
    out_dir: impl AsRef<Path>,
) -> Result<(Manifest, DatasetStats)> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;
    let mut manifest = Manifest {
        entries: Vec::with_capacity(num_files),
        root: out_dir.to_path_buf(),
    };
    let mut truths = Vec::with_capacity(num_files);
    for i in 0..num_files {
        let rec = format!("rec{i:04}");
        let file_cfg = DialogueConfig {
            seed: file_seed(cfg.seed, i as u64),
            ..cfg.clone()
        };
        let d = simulate(&file_cfg, &rec)?;
        let audio = PathBuf::from(format!("{rec}.wav"));
        let rttm = PathBuf::from(format!("{rec}.rttm"));
        d.waveform.write_wav(out_dir.join(&audio))?;
        write_rttm(&d.truth.segments, out_dir.join(&rttm))?;
        manifest.entries.push(ManifestEntry {
            recording: rec,
            audio,
            rttm,
            duration_s: d.waveform.duration_s(),
        });
        truths.push(d.truth);
    }
    manifest.write(out_dir.join("manifest.tsv"))?;
    let stats = dataset_stats(&truths)?;
    Ok((manifest, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlap_ratio_hand_count() {
        let a = Tensor::from_rows(&[vec![1.0, 1.0, 0.0], vec![0.0, 1.0, 1.0]]);
        assert!((overlap_ratio(&a) - 1.0 / 3.0).abs() < 1e-15);
        let single = Tensor::from_rows(&[vec![1.0, 1.0, 0.0], vec![0.0; 3]]);
        assert_eq!(overlap_ratio(&single), 0.0);
        assert_eq!(overlap_ratio(&Tensor::zeros(&[2, 5])), 0.0);
    }

    #[test]
    fn zero_target_gives_disjoint_turns() {
        let cfg = DialogueConfig {
            target_overlap: 0.0,
            duration_s: 20.0,
            seed: 3,
            ..Default::default()
        };
        let d = simulate(&cfg, "r").unwrap();
        assert_eq!(overlap_ratio(&d.truth.activity), 0.0);
    }

    #[test]
    fn always_on_gives_full_overlap() {
        let cfg = DialogueConfig {
            schedule: Schedule::AlwaysOn,
            target_overlap: 1.0,
            duration_s: 5.0,
            ..Default::default()
        };
        let d = simulate(&cfg, "r").unwrap();
        assert_eq!(overlap_ratio(&d.truth.activity), 1.0);
    }

    #[test]
    fn sixty_seconds_at_048() {
        let cfg = DialogueConfig {
            duration_s: 60.0,
            target_overlap: 0.48,
            seed: 7,
            ..Default::default()
        };
        let d = simulate(&cfg, "r").unwrap();
        let r = overlap_ratio(&d.truth.activity);
        assert!((0.43..=0.53).contains(&r), "{r}");
    }

    #[test]
    fn unreachable_target_reports_range() {
        let cfg = DialogueConfig {
            target_overlap: 0.99,
            duration_s: 20.0,
            ..Default::default()
        };
        match simulate(&cfg, "r") {
            Err(Error::Config(msg)) => assert!(msg.contains("achievable range"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let bad = [
            DialogueConfig {
                num_speakers: 3,
                ..Default::default()
            },
            DialogueConfig {
                duration_s: 0.0,
                ..Default::default()
            },
            DialogueConfig {
                target_overlap: 1.5,
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn stats_hand_arithmetic() {
        // 60 s file: 400 speech frames (40 s), 100 overlapped (10 s)
        let mut a = Tensor::zeros(&[2, 600]);
        for t in 0..250 {
            a.set(0, t, 1.0);
        }
        for t in 150..400 {
            a.set(1, t, 1.0);
        }
        let g = GroundTruth::from_activity("r", a, 60.0);
        let s = dataset_stats(std::slice::from_ref(&g)).unwrap();
        assert_eq!(s.num_files, 1);
        assert!((s.total_hours - 60.0 / 3600.0).abs() < 1e-12);
        assert!((s.overlap_pct - 25.0).abs() < 1e-12);

        let twice = dataset_stats(&[g.clone(), g]).unwrap();
        assert_eq!(twice.num_files, 2);
        assert!((twice.overlap_pct - 25.0).abs() < 1e-12);

        let silent = GroundTruth::from_activity("s", Tensor::zeros(&[2, 10]), 1.0);
        assert_eq!(dataset_stats(&[silent]).unwrap().overlap_pct, 0.0);
        assert!(dataset_stats(&[]).is_err());
    }
}
