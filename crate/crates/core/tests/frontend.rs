use std::f64::consts::PI;

use eend_core::frontend::{
    extract, feature_frame_count, logmel, raw_frame_count, FeatureSequence, Waveform,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Straight DFT magnitude of one Hann-windowed 200-sample frame, zero padded
/// to 256, followed by a from-scratch HTK triangle bank.
fn oracle_logmel_frame(frame: &[f64]) -> Vec<f64> {
    let n_fft = 256;
    let mut x = vec![0.0; n_fft];
    for (i, v) in frame.iter().enumerate() {
        x[i] = v * (0.5 - 0.5 * (2.0 * PI * i as f64 / 200.0).cos());
    }
    let mags: Vec<f64> = (0..=n_fft / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, v) in x.iter().enumerate() {
                let ang = -2.0 * PI * (k * n) as f64 / n_fft as f64;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            (re * re + im * im).sqrt()
        })
        .collect();
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let inv = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let step = mel(4000.0) / 24.0;
    (0..23)
        .map(|m| {
            let (lo, c, hi) = (
                inv(step * m as f64),
                inv(step * (m + 1) as f64),
                inv(step * (m + 2) as f64),
            );
            let e: f64 = mags
                .iter()
                .enumerate()
                .map(|(k, a)| {
                    let f = k as f64 * 8000.0 / 256.0;
                    let w = if f > lo && f <= c {
                        (f - lo) / (c - lo)
                    } else if f > c && f < hi {
                        (hi - f) / (hi - c)
                    } else {
                        0.0
                    };
                    w * a
                })
                .sum();
            e.max(1e-10).ln()
        })
        .collect()
}

#[test]
fn tone_matches_dft_oracle_and_peaks_near_1khz() {
    let samples: Vec<f64> = (0..1600)
        .map(|n| 0.5 * (2.0 * PI * 1000.0 * n as f64 / 8000.0).sin())
        .collect();
    let w = Waveform::new(samples.clone(), 8000).unwrap();
    let raw = logmel(&w).unwrap();
    for t in [0, 5, 17] {
        let oracle = oracle_logmel_frame(&samples[t * 80..t * 80 + 200]);
        for (a, b) in raw.row(t).iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9, "frame {t}: {a} vs {b}");
        }
    }
    let row = raw.row(3);
    let peak = (0..23).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
    // filters whose support contains 1000 Hz
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let step = mel(4000.0) / 24.0;
    let centre_idx = (mel(1000.0) / step).round() as usize - 1;
    assert!(peak.abs_diff(centre_idx) <= 1, "peak filter {peak}, expected ~{centre_idx}");
}

#[test]
fn pipeline_shape_law_random_lengths() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let n = rng.random_range(200..40_000);
        let w = Waveform::new(vec![0.01; n], 8000).unwrap();
        let f = extract(&w).unwrap();
        let expect = ((n - 200) / 80 + 1).div_ceil(10);
        assert_eq!(f.frames.shape(), &[expect, 345], "n = {n}");
        assert_eq!(feature_frame_count(n), expect);
    }
    assert_eq!(raw_frame_count(8000), 98);
    assert_eq!(feature_frame_count(8000), 10);
}

#[test]
fn deterministic_and_feature_file_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let samples: Vec<f64> = (0..5000).map(|_| rng.random_range(-0.5..0.5)).collect();
    let w = Waveform::new(samples, 8000).unwrap();
    let a = extract(&w).unwrap();
    let b = extract(&w).unwrap();
    assert_eq!(a, b);

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("f.feats");
    a.save(&p).unwrap();
    let back = FeatureSequence::load(&p).unwrap();
    assert_eq!(back, a);
    assert!(a
        .frames
        .data()
        .iter()
        .zip(back.frames.data())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn splice_then_centre_projection_recovers_frames() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let samples: Vec<f64> = (0..4000).map(|_| rng.random_range(-0.3..0.3)).collect();
    let w = Waveform::new(samples, 8000).unwrap();
    let raw = logmel(&w).unwrap();
    let spliced = eend_core::frontend::splice(&raw, 7);
    for t in 0..raw.rows() {
        assert_eq!(&spliced.row(t)[7 * 23..8 * 23], raw.row(t));
    }
}

#[test]
fn wav_round_trip_matches_quantized() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.wav");
    let w = Waveform::new((0..900).map(|n| (n as f64 * 0.01).sin() * 0.7).collect(), 8000).unwrap();
    w.write_wav(&p).unwrap();
    let back = Waveform::read_wav(&p).unwrap();
    assert_eq!(back, w.quantized());
}

#[test]
fn silent_frames_follow_exact_zeros() {
    let mut samples = vec![0.0; 8000];
    samples[850] = 0.25;
    let w = Waveform::new(samples, 8000).unwrap();
    let silent = eend_core::frontend::silent_frames(&w, 10);
    let expect: Vec<bool> = (0..10).map(|t| t != 1).collect();
    assert_eq!(silent, expect);
    // frames past the end of the signal count as silent
    assert!(eend_core::frontend::silent_frames(&w, 12)[11]);
}
