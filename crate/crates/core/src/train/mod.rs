//! Two-phase training: baseline objective first, then the attention
//! auxiliary loss on top. Adam with the Noam schedule; one global step
//! counter across both phases.

mod log;
mod optim;

pub use log::{parse_log, LogRecord, Phase, StepStatus, LOG_HEADER};
pub use optim::{clip_global_norm, noam_lr, Adam, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::container::Container;
use crate::error::{Error, Result};
use crate::frontend::{extract, Waveform};
use crate::losses::{model_loss, LossConfig, ALPHA_DEFAULT, BETA_DEFAULT};
use crate::model::Model;
use crate::numerics::{Eval, Ops, Tape, Tensor, Var};
use crate::scoring::{activity_from_segments, read_rttm, SegmentList};
use crate::simulate::{file_seed, Manifest};

pub const TRAIN_STATE_KIND: &str = "train_state";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs_phase1: usize,
    pub epochs_phase2: usize,
    pub warmup_steps: u64,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    /// Constant learning rate for the auxiliary phase instead of the schedule.
    pub fixed_lr: Option<f64>,
    pub clip_norm: f64,
    /// Write a checkpoint every this many steps.
    pub checkpoint_every: Option<u64>,
    /// 1-based layer for head selection; the last layer when unset.
    pub head_layer: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            epochs_phase1: 20,
            epochs_phase2: 10,
            warmup_steps: 200,
            alpha: ALPHA_DEFAULT,
            beta: BETA_DEFAULT,
            seed: 0,
            fixed_lr: None,
            clip_norm: 5.0,
            checkpoint_every: None,
            head_layer: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("batch_size", self.batch_size as u64),
            ("epochs_phase1", self.epochs_phase1 as u64),
            ("epochs_phase2", self.epochs_phase2 as u64),
            ("warmup_steps", self.warmup_steps),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config("alpha and beta must be >= 0".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be > 0".into()));
        }
        if let Some(lr) = self.fixed_lr {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("fixed_lr must be > 0, got {lr}")));
            }
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::Config("checkpoint_every must be >= 1".into()));
        }
        Ok(())
    }

    pub fn epochs(&self, phase: Phase) -> usize {
        match phase {
            Phase::Base => self.epochs_phase1,
            Phase::Vad => self.epochs_phase2,
        }
    }

    fn loss(&self, phase: Phase) -> LossConfig {
        LossConfig {
            alpha: match phase {
                Phase::Base => 0.0,
                Phase::Vad => self.alpha,
            },
            beta: self.beta,
            head_layer: self.head_layer,
        }
    }
}

/// Features and frame labels of one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRecording {
    pub name: String,
    /// `T × input_dim`.
    pub features: Tensor,
    /// `C × T`.
    pub labels: Tensor,
}

/// A training window of at most `chunk_len` frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub recording: String,
    pub start: usize,
    pub features: Tensor,
    pub labels: Tensor,
}

impl LabeledRecording {
    pub fn chunks(&self, chunk_len: usize) -> Result<Vec<Chunk>> {
        let t = self.features.rows();
        if chunk_len == 0 {
            return Err(Error::Config("chunk_len must be >= 1".into()));
        }
        if self.labels.cols() != t {
            return Err(Error::dim(
                "chunks",
                format!("{} feature frames vs {} label frames", t, self.labels.cols()),
            ));
        }
        let labels_t = self.labels.transpose()?;
        (0..t)
            .step_by(chunk_len)
            .map(|start| {
                let len = chunk_len.min(t - start);
                Ok(Chunk {
                    recording: self.name.clone(),
                    start,
                    features: self.features.slice_rows(start, len)?,
                    labels: labels_t.slice_rows(start, len)?.transpose()?,
                })
            })
            .collect()
    }
}

/// `C × frames` labels with rows for the recording's speakers in sorted
/// order, padded with silent rows up to `n_speakers`.
pub fn frame_labels(segments: &SegmentList, recording: &str, n_speakers: usize, frames: usize) -> Result<Tensor> {
    let mut speakers: Vec<String> = segments.speakers(recording).into_iter().map(String::from).collect();
    if speakers.len() > n_speakers {
        return Err(Error::Input(format!(
            "recording `{recording}` has {} speakers, the model handles {n_speakers}",
            speakers.len()
        )));
    }
    while speakers.len() < n_speakers {
        speakers.push(String::new());
    }
    Ok(activity_from_segments(segments, recording, &speakers, frames))
}

/// Reads every manifest entry through the frontend.
pub fn load_manifest(manifest: &Manifest, n_speakers: usize) -> Result<Vec<LabeledRecording>> {
    if manifest.entries.is_empty() {
        return Err(Error::Input("manifest has no entries".into()));
    }
    manifest
        .entries
        .iter()
        .map(|e| {
            let wav = Waveform::read_wav(manifest.audio_path(e))?;
            let features = extract(&wav)?.frames;
            let segs = read_rttm(manifest.rttm_path(e))?;
            let labels = frame_labels(&segs, &e.recording, n_speakers, features.rows())?;
            Ok(LabeledRecording {
                name: e.recording.clone(),
                features,
                labels,
            })
        })
        .collect()
}

/// Optimizer progress; together with the config and data it determines
/// every later step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Steps taken so far, over both phases.
    pub step: u64,
    pub phase: Phase,
    /// Value of `step` when the current phase began.
    pub phase_start: u64,
    pub adam: Adam,
    pub max_lr: f64,
    pub skipped: u64,
    consecutive_skips: u64,
}

impl TrainState {
    pub fn new(model: &Model) -> Self {
        Self {
            step: 0,
            phase: Phase::Base,
            phase_start: 0,
            adam: Adam::new(&model.params),
            max_lr: 0.0,
            skipped: 0,
            consecutive_skips: 0,
        }
    }
}

/// Receives log records (and checkpoint requests) while training runs.
pub trait TrainSink {
    fn record(&mut self, rec: &LogRecord) -> Result<()>;

    fn checkpoint(&mut self, _trainer: &Trainer) -> Result<()> {
        Ok(())
    }
}

impl TrainSink for Vec<LogRecord> {
    fn record(&mut self, rec: &LogRecord) -> Result<()> {
        self.push(rec.clone());
        Ok(())
    }
}

/// Mean losses over a set of chunks with fixed weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub diar: f64,
    pub vad: f64,
    pub exist: f64,
    pub total: f64,
    pub mean_trace: f64,
}

pub fn evaluate(model: &Model, chunks: &[Chunk], loss: &LossConfig) -> Result<EvalSummary> {
    if chunks.is_empty() {
        return Err(Error::Input("nothing to evaluate".into()));
    }
    let mut s = EvalSummary {
        diar: 0.0,
        vad: 0.0,
        exist: 0.0,
        total: 0.0,
        mean_trace: 0.0,
    };
    for ch in chunks {
        let (_, bd) = model_loss(&mut Eval, model, &model.params, &ch.features, &ch.labels, loss)?;
        s.diar += bd.diar;
        s.vad += bd.vad;
        s.exist += bd.exist;
        s.total += bd.total;
        s.mean_trace += bd.selected_heads.iter().map(|h| h.1).sum::<f64>() / bd.selected_heads.len() as f64;
    }
    let n = chunks.len() as f64;
    Ok(EvalSummary {
        diar: s.diar / n,
        vad: s.vad / n,
        exist: s.exist / n,
        total: s.total / n,
        mean_trace: s.mean_trace / n,
    })
}

pub struct Trainer {
    pub model: Model,
    pub state: TrainState,
    pub cfg: TrainConfig,
    chunks: Vec<Chunk>,
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig, chunks: Vec<Chunk>) -> Result<Self> {
        let state = TrainState::new(&model);
        Self::with_state(model, state, cfg, chunks)
    }

    pub fn with_state(model: Model, state: TrainState, cfg: TrainConfig, chunks: Vec<Chunk>) -> Result<Self> {
        cfg.validate()?;
        if chunks.is_empty() {
            return Err(Error::Input("no training chunks".into()));
        }
        let c = model.config.n_speakers;
        for ch in &chunks {
            if ch.features.cols() != model.config.input_dim || ch.labels.rows() != c {
                return Err(Error::dim(
                    "trainer",
                    format!(
                        "chunk of {} features x {} speakers, model expects {} x {c}",
                        ch.features.cols(),
                        ch.labels.rows(),
                        model.config.input_dim
                    ),
                ));
            }
        }
        if state.adam.m.len() != model.params.len() {
            return Err(Error::Input("optimizer state does not match the model".into()));
        }
        Ok(Self {
            model,
            state,
            cfg,
            chunks,
        })
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn batches_per_epoch(&self) -> u64 {
        self.chunks.len().div_ceil(self.cfg.batch_size) as u64
    }

    /// Chunk indices used by step `done + 1`. Each epoch's order is a
    /// shuffle seeded by `(seed, epoch)`.
    pub fn batch_for(&self, done: u64) -> Vec<usize> {
        let bpe = self.batches_per_epoch();
        let (epoch, b) = (done / bpe, (done % bpe) as usize);
        let mut order: Vec<usize> = (0..self.chunks.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(file_seed(self.cfg.seed, epoch)));
        let bs = self.cfg.batch_size;
        order[b * bs..((b + 1) * bs).min(order.len())].to_vec()
    }

    fn learning_rate(&self, phase: Phase, step: u64) -> Result<f64> {
        match (phase, self.cfg.fixed_lr) {
            (Phase::Vad, Some(lr)) => Ok(lr),
            _ => noam_lr(step, self.model.config.d_model, self.cfg.warmup_steps),
        }
    }

    /// One optimizer step on the next batch.
    pub fn step(&mut self, phase: Phase) -> Result<LogRecord> {
        let step = self.state.step + 1;
        let lr = self.learning_rate(phase, step)?;
        let loss_cfg = self.cfg.loss(phase);
        let batch = self.batch_for(self.state.step);
        let mut tape = Tape::new();
        let mut sum: Option<Var> = None;
        let (mut diar, mut vad, mut exist, mut total, mut trace) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let mut heads = Vec::with_capacity(batch.len());
        let mut failed = false;
        for &i in &batch {
            let ch = &self.chunks[i];
            match model_loss(&mut tape, &self.model, &self.model.params, &ch.features, &ch.labels, &loss_cfg) {
                Ok((l, bd)) => {
                    sum = Some(match sum {
                        None => l,
                        Some(acc) => tape.add(&acc, &l)?,
                    });
                    diar += bd.diar;
                    vad += bd.vad;
                    exist += bd.exist;
                    total += bd.total;
                    trace += bd.selected_heads.iter().map(|h| h.1).sum::<f64>() / bd.selected_heads.len() as f64;
                    heads.push(bd.selected_heads.iter().map(|h| h.0).collect());
                }
                Err(Error::NonFinite(_)) => {
                    failed = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let n = batch.len() as f64;
        if !failed {
            let mean = tape.scale(&sum.expect("non-empty batch"), 1.0 / n);
            let mut grads = tape.backward(mean)?.param_grads(&self.model.params);
            if grads.iter().all(Tensor::is_finite) {
                clip_global_norm(&mut grads, self.cfg.clip_norm);
                self.state.adam.step(&mut self.model.params, &grads, lr)?;
            } else {
                failed = true;
            }
        }
        self.state.step = step;
        let status = if failed {
            self.state.skipped += 1;
            self.state.consecutive_skips += 1;
            if self.state.consecutive_skips >= self.batches_per_epoch() {
                return Err(Error::NonFinite(format!(
                    "loss or gradient non-finite for {} consecutive steps (a full epoch) up to step {step}",
                    self.state.consecutive_skips
                )));
            }
            StepStatus::Skipped
        } else {
            self.state.consecutive_skips = 0;
            self.state.max_lr = self.state.max_lr.max(lr);
            StepStatus::Ok
        };
        let (diar, vad, exist, total, trace) = if failed {
            (f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN)
        } else {
            (diar / n, vad / n, exist / n, total / n, trace / n)
        };
        Ok(LogRecord {
            step,
            phase,
            lr,
            diar,
            vad,
            exist,
            total,
            heads: if failed { Vec::new() } else { heads },
            mean_trace: trace,
            status,
        })
    }

    /// Step at which `phase` ends.
    pub fn phase_end(&self, phase: Phase) -> u64 {
        self.state.phase_start + self.cfg.epochs(phase) as u64 * self.batches_per_epoch()
    }

    /// Marks the start of `phase` unless the state is already in it.
    pub fn enter_phase(&mut self, phase: Phase) -> Result<()> {
        if self.state.phase != phase {
            if phase == Phase::Base {
                return Err(Error::Config("cannot return to the baseline phase".into()));
            }
            self.state.phase = phase;
            self.state.phase_start = self.state.step;
        }
        Ok(())
    }

    /// Runs (or resumes) `phase` to its end. Entering the auxiliary phase
    /// from a baseline state keeps the optimizer moments and step count.
    pub fn run_phase(&mut self, phase: Phase, sink: &mut dyn TrainSink) -> Result<()> {
        self.enter_phase(phase)?;
        let end = self.phase_end(phase);
        while self.state.step < end {
            let rec = self.step(phase)?;
            sink.record(&rec)?;
            if let Some(every) = self.cfg.checkpoint_every {
                if self.state.step.is_multiple_of(every) {
                    sink.checkpoint(self)?;
                }
            }
        }
        Ok(())
    }

    /// Model, optimizer moments and counters in one container.
    pub fn state_container(&self) -> Container {
        let mut c = self.model.to_container();
        c.set_meta("kind", TRAIN_STATE_KIND);
        c.set_meta("step", self.state.step);
        c.set_meta("phase", self.state.phase);
        c.set_meta("phase_start", self.state.phase_start);
        c.set_meta("adam_t", self.state.adam.t);
        c.set_meta("max_lr", format!("{:?}", self.state.max_lr));
        c.set_meta("skipped", self.state.skipped);
        c.set_meta("consecutive_skips", self.state.consecutive_skips);
        c.set_meta("train_seed", self.cfg.seed);
        for (k, (name, _)) in self.model.params.iter().enumerate() {
            c.push_tensor(format!("adam.m/{name}"), self.state.adam.m[k].clone());
            c.push_tensor(format!("adam.v/{name}"), self.state.adam.v[k].clone());
        }
        c
    }

    pub fn save_state(&self, path: impl AsRef<Path>) -> Result<()> {
        self.state_container().save(path)
    }

    /// Restores a saved state. The training seed must match `cfg.seed`,
    /// otherwise the batch order would silently change.
    pub fn resume(path: impl AsRef<Path>, cfg: TrainConfig, chunks: Vec<Chunk>) -> Result<Self> {
        let c = Container::load(path)?;
        if c.kind() != Some(TRAIN_STATE_KIND) {
            return Err(Error::Input(format!("expected a {TRAIN_STATE_KIND} container, found {:?}", c.kind())));
        }
        let meta = |k: &str| -> Result<&str> { c.require_meta(k) };
        let num = |k: &str| -> Result<u64> {
            meta(k)?
                .parse()
                .map_err(|_| Error::Input(format!("train state field `{k}` is not an integer")))
        };
        if num("train_seed")? != cfg.seed {
            return Err(Error::Config(format!(
                "train state was produced with seed {}, config has {}",
                num("train_seed")?,
                cfg.seed
            )));
        }
        let mut as_ckpt = c.clone();
        as_ckpt.set_meta("kind", crate::model::CHECKPOINT_KIND);
        let model = Model::from_container(&as_ckpt)?;
        let mut adam = Adam::new(&model.params);
        adam.t = num("adam_t")?;
        for (k, (name, _)) in model.params.iter().enumerate() {
            adam.m[k] = c.require_tensor(&format!("adam.m/{name}"))?.clone();
            adam.v[k] = c.require_tensor(&format!("adam.v/{name}"))?.clone();
        }
        let state = TrainState {
            step: num("step")?,
            phase: meta("phase")?.parse()?,
            phase_start: num("phase_start")?,
            adam,
            max_lr: meta("max_lr")?
                .parse()
                .map_err(|_| Error::Input("train state field `max_lr` is not a number".into()))?,
            skipped: num("skipped")?,
            consecutive_skips: num("consecutive_skips")?,
        };
        Self::with_state(model, state, cfg, chunks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::simulate::{simulate_features, DialogueConfig};

    fn tiny_model(seed: u64) -> Model {
        Model::new(
            ModelConfig {
                n_layers: 1,
                d_model: 8,
                n_heads: 2,
                ff_dim: 16,
                input_dim: 6,
                n_speakers: 2,
                chunk_len: 20,
                positional_encoding: false,
            },
            seed,
        )
        .unwrap()
    }

    fn data() -> Vec<Chunk> {
        (0..3)
            .flat_map(|k| {
                let cfg = DialogueConfig {
                    duration_s: 5.0,
                    target_overlap: 0.2,
                    seed: k,
                    ..DialogueConfig::default()
                };
                let (x, truth) = simulate_features(&cfg, 6, &format!("r{k}")).unwrap();
                LabeledRecording {
                    name: format!("r{k}"),
                    features: x,
                    labels: truth.activity,
                }
                .chunks(20)
                .unwrap()
            })
            .collect()
    }

    fn config() -> TrainConfig {
        TrainConfig {
            batch_size: 2,
            epochs_phase1: 2,
            epochs_phase2: 2,
            warmup_steps: 4,
            seed: 9,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn chunks_cover_the_recording() {
        let rec = LabeledRecording {
            name: "r".into(),
            features: Tensor::new(vec![5, 1], vec![0.0, 1.0, 2.0, 3.0, 4.0]).unwrap(),
            labels: Tensor::from_rows(&[vec![1.0, 0.0, 1.0, 0.0, 1.0], vec![0.0; 5]]),
        };
        let ch = rec.chunks(2).unwrap();
        assert_eq!(ch.len(), 3);
        assert_eq!(ch[2].features.data(), &[4.0]);
        assert_eq!(ch[1].labels, Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]));
        assert_eq!(ch[1].start, 2);
    }

    #[test]
    fn batches_partition_each_epoch() {
        let t = Trainer::new(tiny_model(0), config(), data()).unwrap();
        let bpe = t.batches_per_epoch();
        // 3 recordings x 50 frames in windows of 20
        assert_eq!(t.chunks().len(), 9);
        assert_eq!(bpe, 5);
        let mut seen: Vec<usize> = (0..bpe).flat_map(|b| t.batch_for(b)).collect();
        seen.sort();
        assert_eq!(seen, (0..9).collect::<Vec<_>>());
        assert_eq!(t.batch_for(4).len(), 1);
        assert_ne!(t.batch_for(0), t.batch_for(5));
    }

    #[test]
    fn phases_continue_the_step_counter() {
        let mut t = Trainer::new(tiny_model(1), config(), data()).unwrap();
        let mut log: Vec<LogRecord> = Vec::new();
        t.run_phase(Phase::Base, &mut log).unwrap();
        t.run_phase(Phase::Vad, &mut log).unwrap();
        assert_eq!(log.len(), 20);
        assert_eq!(log.iter().map(|r| r.step).collect::<Vec<_>>(), (1..=20).collect::<Vec<_>>());
        assert!(log[..10].iter().all(|r| r.phase == Phase::Base));
        assert!(log[10..].iter().all(|r| r.phase == Phase::Vad && r.heads.iter().all(|h| h.len() == 2)));
        assert!(t.run_phase(Phase::Base, &mut log).is_err());
        assert_eq!(t.state.max_lr, noam_lr(4, 8, 4).unwrap());
        assert_eq!(t.state.skipped, 0);
    }

    #[test]
    fn zero_alpha_phase_two_equals_longer_phase_one() {
        let mut cfg = config();
        cfg.alpha = 0.0;
        let mut a = Trainer::new(tiny_model(2), cfg.clone(), data()).unwrap();
        let mut la: Vec<LogRecord> = Vec::new();
        a.run_phase(Phase::Base, &mut la).unwrap();
        a.run_phase(Phase::Vad, &mut la).unwrap();

        let mut long = cfg.clone();
        long.epochs_phase1 = 4;
        let mut b = Trainer::new(tiny_model(2), long, data()).unwrap();
        let mut lb: Vec<LogRecord> = Vec::new();
        b.run_phase(Phase::Base, &mut lb).unwrap();
        let totals = |l: &[LogRecord]| l.iter().map(|r| r.total.to_bits()).collect::<Vec<_>>();
        assert_eq!(totals(&la), totals(&lb));
        assert_eq!(a.model.params, b.model.params);
    }

    #[test]
    fn fixed_lr_applies_to_the_auxiliary_phase() {
        let mut cfg = config();
        cfg.fixed_lr = Some(1e-5);
        let mut t = Trainer::new(tiny_model(3), cfg, data()).unwrap();
        let mut log: Vec<LogRecord> = Vec::new();
        t.run_phase(Phase::Base, &mut log).unwrap();
        t.run_phase(Phase::Vad, &mut log).unwrap();
        assert!(log[..10].iter().all(|r| r.lr != 1e-5));
        assert!(log[10..].iter().all(|r| r.lr == 1e-5));
    }

    #[test]
    fn resume_mid_epoch_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut full = Trainer::new(tiny_model(4), config(), data()).unwrap();
        let mut lf: Vec<LogRecord> = Vec::new();
        full.run_phase(Phase::Base, &mut lf).unwrap();
        full.run_phase(Phase::Vad, &mut lf).unwrap();

        let mut part = Trainer::new(tiny_model(4), config(), data()).unwrap();
        let mut lp: Vec<LogRecord> = Vec::new();
        part.run_phase(Phase::Base, &mut lp).unwrap();
        part.enter_phase(Phase::Vad).unwrap();
        for _ in 0..2 {
            lp.push(part.step(Phase::Vad).unwrap());
        }
        let path = dir.path().join("state");
        part.save_state(&path).unwrap();
        let mut resumed = Trainer::resume(&path, config(), data()).unwrap();
        assert_eq!(resumed.state, part.state);
        resumed.run_phase(Phase::Vad, &mut lp).unwrap();
        let lines = |l: &[LogRecord]| l.iter().map(|r| r.to_string()).collect::<Vec<_>>();
        assert_eq!(lines(&lf), lines(&lp));
        assert_eq!(resumed.model.params, full.model.params);

        let mut other = config();
        other.seed = 10;
        assert!(Trainer::resume(&path, other, data()).is_err());
    }

    #[test]
    fn invalid_configs() {
        let mut c = config();
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let mut c = config();
        c.alpha = -1.0;
        assert!(c.validate().is_err());
        assert!(Trainer::new(tiny_model(0), config(), Vec::new()).is_err());
    }
}
