//! Browser bindings for three small views onto `eend-core`:
//! a dialogue simulator, the Noam schedule, and an attention head lab.
//!
//! Everything below the `wasm_bindgen` wrappers is plain Rust and is
//! tested natively.

use eend_core::frontend::SAMPLE_RATE;
use eend_core::losses::{select_heads_by_trace, target_mask};
use eend_core::model::{Model, ModelConfig};
use eend_core::numerics::{Eval, Tensor};
use eend_core::simulate::{overlap_ratio, simulate, simulate_features, DialogueConfig};
use eend_core::train::{noam_lr, LabeledRecording, Phase, TrainConfig, Trainer};
use eend_core::{Error, Result};
use wasm_bindgen::prelude::*;

/// One simulated dialogue: per-frame speaker activity and a loudness trace.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct DialogueView {
    frames: usize,
    activity: Vec<u8>,
    envelope: Vec<f64>,
    overlap: f64,
}

#[wasm_bindgen]
impl DialogueView {
    pub fn frames(&self) -> usize {
        self.frames
    }

    /// `2 × frames`, row-major, 0 or 1.
    pub fn activity(&self) -> Vec<u8> {
        self.activity.clone()
    }

    /// RMS of the mixture per 100 ms frame.
    pub fn envelope(&self) -> Vec<f64> {
        self.envelope.clone()
    }

    /// Fraction of speech time with both speakers talking.
    pub fn overlap(&self) -> f64 {
        self.overlap
    }
}

pub fn dialogue_view(duration_s: f64, target_overlap: f64, seed: u64) -> Result<DialogueView> {
    let cfg = DialogueConfig {
        duration_s,
        target_overlap,
        seed,
        ..DialogueConfig::default()
    };
    let d = simulate(&cfg, "demo")?;
    let act = &d.truth.activity;
    let frames = act.cols();
    let span = SAMPLE_RATE as usize / 10;
    let envelope = (0..frames)
        .map(|t| {
            let n = d.waveform.samples.len();
            let s = &d.waveform.samples[(t * span).min(n)..((t + 1) * span).min(n)];
            if s.is_empty() {
                0.0
            } else {
                (s.iter().map(|x| x * x).sum::<f64>() / s.len() as f64).sqrt()
            }
        })
        .collect();
    Ok(DialogueView {
        frames,
        activity: act.data().iter().map(|&v| (v > 0.5) as u8).collect(),
        envelope,
        overlap: overlap_ratio(act),
    })
}

/// Learning rate for steps `1..=steps`.
pub fn noam_curve(d_model: usize, warmup: u64, steps: u64) -> Result<Vec<f64>> {
    (1..=steps).map(|s| noam_lr(s, d_model, warmup)).collect()
}

const LAB_FRAMES: usize = 40;
const LAB_DIM: usize = 345;

/// A tiny two-layer model trained in place on one feature-space dialogue,
/// so the effect of the auxiliary loss on the heads can be watched.
#[wasm_bindgen]
pub struct AttentionLab {
    trainer: Trainer,
    labels: Tensor,
    features: Tensor,
}

impl AttentionLab {
    pub fn create(seed: u64, alpha: f64, lr: f64) -> Result<Self> {
        let dialogue = DialogueConfig {
            duration_s: LAB_FRAMES as f64 / 10.0,
            target_overlap: 0.3,
            utterance_mean_s: 1.2,
            utterance_std_s: 0.4,
            gap_mean_s: 0.3,
            gap_std_s: 0.1,
            seed,
            ..DialogueConfig::default()
        };
        let (features, truth) = simulate_features(&dialogue, LAB_DIM, "lab")?;
        let rec = LabeledRecording {
            name: "lab".into(),
            features: features.clone(),
            labels: truth.activity.clone(),
        };
        let model = Model::new(
            ModelConfig {
                n_layers: 2,
                d_model: 16,
                n_heads: 4,
                ff_dim: 32,
                input_dim: LAB_DIM,
                n_speakers: 2,
                chunk_len: LAB_FRAMES,
                positional_encoding: false,
            },
            seed,
        )?;
        let cfg = TrainConfig {
            batch_size: 1,
            // unused: the lab calls `step` directly
            epochs_phase1: 1,
            epochs_phase2: 1,
            alpha,
            seed,
            fixed_lr: Some(lr),
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(model, cfg, rec.chunks(LAB_FRAMES)?)?;
        trainer.enter_phase(Phase::Vad)?;
        Ok(Self {
            trainer,
            labels: truth.activity,
            features,
        })
    }

    /// Runs `n` optimizer steps and returns the last total loss.
    pub fn train(&mut self, n: usize) -> Result<f64> {
        let mut last = f64::NAN;
        for _ in 0..n {
            last = self.trainer.step(Phase::Vad)?.total;
        }
        Ok(last)
    }

    pub fn heads(&self, layer: usize) -> Result<Vec<Tensor>> {
        let n = self.trainer.model.config.n_layers;
        if layer == 0 || layer > n {
            return Err(Error::Config(format!("layer {layer} outside 1..={n}")));
        }
        let out = self.trainer.model.forward(&mut Eval, &self.features, true)?;
        Ok(out.attention[layer - 1].iter().map(|w| (**w).clone()).collect())
    }
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
impl AttentionLab {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, alpha: f64, lr: f64) -> std::result::Result<AttentionLab, JsError> {
        Self::create(seed.into(), alpha, lr).map_err(js)
    }

    pub fn frames(&self) -> usize {
        LAB_FRAMES
    }

    pub fn n_heads(&self) -> usize {
        self.trainer.model.config.n_heads
    }

    pub fn step_count(&self) -> u32 {
        u32::try_from(self.trainer.state.step).unwrap_or(u32::MAX)
    }

    pub fn set_alpha(&mut self, alpha: f64) {
        self.trainer.cfg.alpha = alpha;
    }

    #[wasm_bindgen(js_name = train)]
    pub fn train_js(&mut self, n: usize) -> std::result::Result<f64, JsError> {
        self.train(n).map_err(js)
    }

    /// Head `head` of `layer` (1-based) as a row-major `frames × frames` array.
    pub fn attention(&self, layer: usize, head: usize) -> std::result::Result<Vec<f64>, JsError> {
        let heads = self.heads(layer).map_err(js)?;
        heads
            .get(head)
            .map(|w| w.data().to_vec())
            .ok_or_else(|| JsError::new(&format!("no head {head}")))
    }

    pub fn traces(&self, layer: usize) -> std::result::Result<Vec<f64>, JsError> {
        let heads = self.heads(layer).map_err(js)?;
        Ok(heads
            .iter()
            .map(|w| (0..w.rows()).map(|i| w.get(i, i)).sum())
            .collect())
    }

    /// Heads the auxiliary loss would supervise, highest trace first.
    pub fn selected(&self, layer: usize) -> std::result::Result<Vec<usize>, JsError> {
        let heads = self.heads(layer).map_err(js)?;
        let picked = select_heads_by_trace(&heads, self.labels.rows()).map_err(js)?;
        Ok(picked.into_iter().map(|p| p.0).collect())
    }

    /// Target mask of speaker `speaker`, row-major `frames × frames`.
    pub fn mask(&self, speaker: usize) -> std::result::Result<Vec<f64>, JsError> {
        if speaker >= self.labels.rows() {
            return Err(JsError::new(&format!("no speaker {speaker}")));
        }
        Ok(target_mask(self.labels.row(speaker)).map_err(js)?.data().to_vec())
    }
}

#[wasm_bindgen(js_name = simulateDialogue)]
pub fn simulate_dialogue_js(duration_s: f64, target_overlap: f64, seed: u32) -> std::result::Result<DialogueView, JsError> {
    dialogue_view(duration_s, target_overlap, seed.into()).map_err(js)
}

#[wasm_bindgen(js_name = noamCurve)]
pub fn noam_curve_js(d_model: usize, warmup: u32, steps: u32) -> std::result::Result<Vec<f64>, JsError> {
    noam_curve(d_model, warmup.into(), steps.into()).map_err(js)
}
