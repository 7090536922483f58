//! Scalar-loop oracles shared by the integration suites.
#![allow(dead_code)]

use eend_core::model::{Model, ModelConfig};
use eend_core::numerics::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn scalar_bce(y: f64, p: f64) -> f64 {
    let p = p.clamp(1e-7, 1.0 - 1e-7);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Every reference-row permutation by explicit loops (C = 2).
pub fn pit_oracle(y: &[Vec<f64>], p: &[Vec<f64>]) -> f64 {
    let t = y[0].len();
    let mut best = f64::INFINITY;
    for phi in [[0usize, 1], [1, 0]] {
        let mut s = 0.0;
        for c in 0..2 {
            for k in 0..t {
                s += scalar_bce(y[phi[c]][k], p[c][k]);
            }
        }
        best = best.min(s / (2 * t) as f64);
    }
    best
}

pub fn random_binary(rng: &mut ChaCha8Rng, c: usize, t: usize) -> Vec<Vec<f64>> {
    (0..c)
        .map(|_| (0..t).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn maps(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for rest in maps(k - 1) {
        for pos in 0..=rest.len() {
            let mut p = rest.clone();
            p.insert(pos, k - 1);
            out.push(p);
        }
    }
    out
}

/// Per-frame DER with no collar. `r` and `h` are speaker × frame rasters.
pub fn der_frame_oracle(r: &[Vec<bool>], h: &[Vec<bool>]) -> f64 {
    let frames = r.iter().chain(h).map(Vec::len).max().unwrap_or(0);
    let at = |m: &[Vec<bool>], s: usize, t: usize| s < m.len() && t < m[s].len() && m[s][t];
    let k = r.len().max(h.len());
    let mut best = 0usize;
    for p in maps(k) {
        let mut hit = 0;
        for t in 0..frames {
            for (i, &j) in p.iter().enumerate() {
                if at(r, i, t) && at(h, j, t) {
                    hit += 1;
                }
            }
        }
        best = best.max(hit);
    }
    let mut worst = 0usize;
    let mut speech = 0usize;
    for t in 0..frames {
        let nr = (0..r.len()).filter(|&s| at(r, s, t)).count();
        let nh = (0..h.len()).filter(|&s| at(h, s, t)).count();
        worst += nr.max(nh);
        speech += nr;
    }
    (worst - best) as f64 / speech as f64
}

pub fn small_config() -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        d_model: 8,
        n_heads: 2,
        ff_dim: 16,
        input_dim: 345,
        n_speakers: 2,
        chunk_len: 500,
        positional_encoding: false,
    }
}

/// T = 6 instance with fixed two-speaker labels.
pub fn grad_fixture(seed: u64) -> (Model, Tensor, Tensor) {
    let model = Model::new(small_config(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let x = Tensor::new(vec![6, 345], (0..6 * 345).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let labels = Tensor::from_rows(&[
        vec![1.0, 1.0, 1.0, 0.0, 0.0, 1.0],
        vec![0.0, 0.0, 1.0, 1.0, 1.0, 0.0],
    ]);
    (model, x, labels)
}

/// Frontend output length from the window arithmetic, written out long-hand.
pub fn shape_oracle(samples: usize) -> (usize, usize) {
    let raw = if samples < 200 { 0 } else { (samples - 200) / 80 + 1 };
    let t = raw / 10 + usize::from(raw % 10 != 0);
    (raw, t)
}
