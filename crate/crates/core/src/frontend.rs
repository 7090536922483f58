//! 8 kHz waveform → spliced, subsampled log-mel features.
//!
//! 25 ms Hann windows every 10 ms, 256-point FFT magnitude, 23 HTK mel
//! triangles over 0–4000 Hz, natural log with a `1e-10` floor, ±7 frame
//! splicing (replicated edges) and stride-10 subsampling: 345 dims per
//! 100 ms frame.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const SAMPLE_RATE: u32 = 8000;
pub const WIN_LEN: usize = 200;
pub const HOP: usize = 80;
pub const FFT_SIZE: usize = 256;
pub const N_MELS: usize = 23;
pub const CONTEXT: usize = 7;
pub const SUBSAMPLE: usize = 10;
pub const LOG_FLOOR: f64 = 1e-10;
pub const FEAT_DIM: usize = N_MELS * (2 * CONTEXT + 1);
pub const FRAME_SHIFT_MS: u32 = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        let w = Self {
            samples,
            sample_rate,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate != SAMPLE_RATE {
            return Err(Error::Input(format!(
                "sample rate must be {SAMPLE_RATE} Hz, got {}",
                self.sample_rate
            )));
        }
        if let Some(i) = self.samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Input(format!("non-finite sample at index {i}")));
        }
        Ok(())
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Reads 16-bit PCM mono.
    pub fn read_wav(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = hound::WavReader::open(path.as_ref())?;
        let spec = reader.spec();
        if spec.channels != 1
            || spec.bits_per_sample != 16
            || spec.sample_format != hound::SampleFormat::Int
        {
            return Err(Error::Input(format!(
                "{}: expected 16-bit PCM mono, got {spec:?}",
                path.as_ref().display()
            )));
        }
        let samples = reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::new(samples, spec.sample_rate)
    }

    /// Writes 16-bit PCM mono; samples are clipped to [-1, 1).
    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec)?;
        for &s in &self.samples {
            w.write_sample(quantize_i16(s))?;
        }
        w.finalize()?;
        Ok(())
    }

    /// The waveform as it reads back from a 16-bit file.
    pub fn quantized(&self) -> Self {
        Self {
            samples: self
                .samples
                .iter()
                .map(|&s| quantize_i16(s) as f64 / 32768.0)
                .collect(),
            sample_rate: self.sample_rate,
        }
    }
}

fn quantize_i16(s: f64) -> i16 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Model input: `T × 345` rows at 100 ms.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub frames: Tensor,
    pub frame_shift_ms: u32,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut c = Container::new("features");
        c.set_meta("dims", format!("{}x{}", self.len(), self.dim()));
        c.set_meta("dtype", "f64le");
        c.set_meta("frame_shift_ms", self.frame_shift_ms);
        c.push_tensor("features", self.frames.clone());
        c.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let c = Container::load(path.as_ref())?;
        if c.kind() != Some("features") {
            return Err(Error::Input(format!(
                "{} is not a feature file (kind {:?})",
                path.as_ref().display(),
                c.kind()
            )));
        }
        let frame_shift_ms = c
            .require_meta("frame_shift_ms")?
            .parse()
            .map_err(|e| Error::Input(format!("bad frame_shift_ms: {e}")))?;
        Ok(Self {
            frames: c.require_tensor("features")?.clone(),
            frame_shift_ms,
        })
    }
}

/// Number of 10 ms frames for `n` samples (0 when shorter than one window).
pub fn raw_frame_count(n: usize) -> usize {
    if n < WIN_LEN {
        0
    } else {
        (n - WIN_LEN) / HOP + 1
    }
}

/// Number of 100 ms output frames for `n` samples.
pub fn feature_frame_count(n: usize) -> usize {
    raw_frame_count(n).div_ceil(SUBSAMPLE)
}

/// Frequency of HTK mel value `m`.
pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

/// `N_MELS × (FFT_SIZE/2 + 1)` triangular weights, evaluated at the FFT bin
/// centre frequencies.
pub fn mel_filterbank() -> Tensor {
    let n_bins = FFT_SIZE / 2 + 1;
    let nyquist = SAMPLE_RATE as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..N_MELS + 2)
        .map(|i| mel_to_hz(top * i as f64 / (N_MELS + 1) as f64))
        .collect();
    let mut fb = Tensor::zeros(&[N_MELS, n_bins]);
    for m in 0..N_MELS {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * SAMPLE_RATE as f64 / FFT_SIZE as f64;
            let w = if f > lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f < hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            fb.set(m, k, w);
        }
    }
    fb
}

/// Periodic Hann window of `WIN_LEN` samples.
pub fn hann_window() -> Vec<f64> {
    (0..WIN_LEN)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / WIN_LEN as f64).cos())
        .collect()
}

/// Reusable log-mel extractor; owns the FFT plan and filterbank.
pub struct LogMel {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    filterbank: Tensor,
}

impl Default for LogMel {
    fn default() -> Self {
        Self::new()
    }
}

impl LogMel {
    pub fn new() -> Self {
        Self {
            fft: FftPlanner::new().plan_fft_forward(FFT_SIZE),
            window: hann_window(),
            filterbank: mel_filterbank(),
        }
    }

    /// `T_raw × 23` log-mel frames.
    pub fn compute(&self, w: &Waveform) -> Result<Tensor> {
        w.validate()?;
        let n_frames = raw_frame_count(w.samples.len());
        if n_frames == 0 {
            return Err(Error::Input(format!(
                "waveform has {} samples, need at least {WIN_LEN}",
                w.samples.len()
            )));
        }
        let n_bins = FFT_SIZE / 2 + 1;
        let mut out = Vec::with_capacity(n_frames * N_MELS);
        let mut buf = vec![Complex::new(0.0, 0.0); FFT_SIZE];
        let mut mag = vec![0.0; n_bins];
        for t in 0..n_frames {
            let frame = &w.samples[t * HOP..t * HOP + WIN_LEN];
            for (i, slot) in buf.iter_mut().enumerate() {
                let v = if i < WIN_LEN { frame[i] * self.window[i] } else { 0.0 };
                *slot = Complex::new(v, 0.0);
            }
            self.fft.process(&mut buf);
            for (m, c) in mag.iter_mut().zip(&buf) {
                *m = c.norm();
            }
            for m in 0..N_MELS {
                let e: f64 = self
                    .filterbank
                    .row(m)
                    .iter()
                    .zip(&mag)
                    .map(|(w, x)| w * x)
                    .sum();
                out.push(e.max(LOG_FLOOR).ln());
            }
        }
        Tensor::new(vec![n_frames, N_MELS], out)
    }
}

pub fn logmel(w: &Waveform) -> Result<Tensor> {
    LogMel::new().compute(w)
}

/// Concatenates frames `t-context ..= t+context`, replicating the edge frames.
pub fn splice(frames: &Tensor, context: usize) -> Tensor {
    let (t_raw, d) = (frames.rows(), frames.cols());
    let width = 2 * context + 1;
    let mut out = Vec::with_capacity(t_raw * d * width);
    for t in 0..t_raw {
        for off in 0..width {
            let src = (t + off).saturating_sub(context).min(t_raw - 1);
            out.extend_from_slice(frames.row(src));
        }
    }
    Tensor::new(vec![t_raw, d * width], out).expect("splice shape")
}

/// Keeps rows `0, factor, 2·factor, …`.
pub fn subsample(spliced: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(Error::Config("subsample factor must be >= 1".into()));
    }
    let rows: Vec<Tensor> = (0..spliced.rows())
        .step_by(factor)
        .map(|r| spliced.slice_rows(r, 1))
        .collect::<Result<_>>()?;
    let refs: Vec<&Tensor> = rows.iter().collect();
    if refs.is_empty() {
        return Ok(Tensor::zeros(&[0, spliced.cols()]));
    }
    Tensor::concat_rows(&refs)
}

/// Marks output frames whose 100 ms span holds only exact zeros.
pub fn silent_frames(w: &Waveform, frames: usize) -> Vec<bool> {
    let span = w.sample_rate as usize * FRAME_SHIFT_MS as usize / 1000;
    (0..frames)
        .map(|t| {
            let lo = (t * span).min(w.samples.len());
            let hi = ((t + 1) * span).min(w.samples.len());
            w.samples[lo..hi].iter().all(|&x| x == 0.0)
        })
        .collect()
}

/// Full pipeline.
pub fn extract(w: &Waveform) -> Result<FeatureSequence> {
    extract_with(&LogMel::new(), w)
}

pub fn extract_with(lm: &LogMel, w: &Waveform) -> Result<FeatureSequence> {
    let raw = lm.compute(w)?;
    let frames = subsample(&splice(&raw, CONTEXT), SUBSAMPLE)?;
    Ok(FeatureSequence {
        frames,
        frame_shift_ms: FRAME_SHIFT_MS,
    })
}
