//! Flat `key = value` experiment configuration.
//!
//! ```text
//! # comments and blank lines are ignored
//! seed = 7
//! target_overlap = 0.45
//! n_layers = 2
//! fixed_lr = off
//! ```
//!
//! Every key is optional; unknown or repeated keys are errors. `off`
//! disables optional values. `alpha` also takes the presets `prose`
//! (0.008) and `table` (0.08).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::losses::{ALPHA_DEFAULT, ALPHA_TABLE};
use crate::model::ModelConfig;
use crate::scoring::{DerOptions, DEFAULT_COLLAR};
use crate::simulate::{DialogueConfig, Schedule};
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoringConfig {
    pub collar: f64,
    pub ignore_overlap: bool,
    pub threshold: f64,
    pub median_window: Option<usize>,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            collar: DEFAULT_COLLAR,
            ignore_overlap: false,
            threshold: 0.5,
            median_window: None,
        }
    }
}

impl ScoringConfig {
    pub fn der_options(&self) -> DerOptions {
        DerOptions {
            collar: self.collar,
            ignore_overlap: self.ignore_overlap,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Root of every random stream in a run.
    pub seed: u64,
    pub num_files: usize,
    pub dialogue: DialogueConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub scoring: ScoringConfig,
    /// Used by `train` when no manifest is given on the command line.
    pub manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_files: 10,
            dialogue: DialogueConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            scoring: ScoringConfig::default(),
            manifest: None,
            out_dir: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_opt<T: std::str::FromStr>(key: &str, v: &str) -> Result<Option<T>> {
    if v == "off" {
        Ok(None)
    } else {
        parse_num(key, v).map(Some)
    }
}

fn fmt_opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "off".to_string(), T::to_string)
}

impl ExperimentConfig {
    /// Every accepted key, in file order.
    pub const KEYS: &'static [&'static str] = &[
        "seed",
        "num_files",
        "duration_s",
        "target_overlap",
        "utterance_mean_s",
        "utterance_std_s",
        "gap_mean_s",
        "gap_std_s",
        "noise_snr_db",
        "schedule",
        "n_layers",
        "d_model",
        "n_heads",
        "ff_dim",
        "input_dim",
        "n_speakers",
        "chunk_len",
        "positional_encoding",
        "batch_size",
        "epochs_phase1",
        "epochs_phase2",
        "warmup_steps",
        "alpha",
        "beta",
        "fixed_lr",
        "clip_norm",
        "checkpoint_every",
        "head_layer",
        "collar",
        "ignore_overlap",
        "threshold",
        "median_window",
        "manifest",
        "out_dir",
    ];

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let d = &mut self.dialogue;
        let m = &mut self.model;
        let t = &mut self.train;
        let s = &mut self.scoring;
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "num_files" => self.num_files = parse_num(key, v)?,
            "duration_s" => d.duration_s = parse_num(key, v)?,
            "target_overlap" => d.target_overlap = parse_num(key, v)?,
            "utterance_mean_s" => d.utterance_mean_s = parse_num(key, v)?,
            "utterance_std_s" => d.utterance_std_s = parse_num(key, v)?,
            "gap_mean_s" => d.gap_mean_s = parse_num(key, v)?,
            "gap_std_s" => d.gap_std_s = parse_num(key, v)?,
            "noise_snr_db" => d.noise_snr_db = parse_opt(key, v)?,
            "schedule" => {
                d.schedule = match v {
                    "turns" => Schedule::Turns,
                    "always_on" => Schedule::AlwaysOn,
                    _ => return Err(Error::Config(format!("`schedule`: expected turns or always_on, got `{v}`"))),
                }
            }
            "n_layers" => m.n_layers = parse_num(key, v)?,
            "d_model" => m.d_model = parse_num(key, v)?,
            "n_heads" => m.n_heads = parse_num(key, v)?,
            "ff_dim" => m.ff_dim = parse_num(key, v)?,
            "input_dim" => m.input_dim = parse_num(key, v)?,
            "n_speakers" => m.n_speakers = parse_num(key, v)?,
            "chunk_len" => m.chunk_len = parse_num(key, v)?,
            "positional_encoding" => m.positional_encoding = parse_num(key, v)?,
            "batch_size" => t.batch_size = parse_num(key, v)?,
            "epochs_phase1" => t.epochs_phase1 = parse_num(key, v)?,
            "epochs_phase2" => t.epochs_phase2 = parse_num(key, v)?,
            "warmup_steps" => t.warmup_steps = parse_num(key, v)?,
            "alpha" => {
                t.alpha = match v {
                    "prose" => ALPHA_DEFAULT,
                    "table" => ALPHA_TABLE,
                    _ => parse_num(key, v)?,
                }
            }
            "beta" => t.beta = parse_num(key, v)?,
            "fixed_lr" => t.fixed_lr = parse_opt(key, v)?,
            "clip_norm" => t.clip_norm = parse_num(key, v)?,
            "checkpoint_every" => t.checkpoint_every = parse_opt(key, v)?,
            "head_layer" => t.head_layer = parse_opt(key, v)?,
            "collar" => s.collar = parse_num(key, v)?,
            "ignore_overlap" => s.ignore_overlap = parse_num(key, v)?,
            "threshold" => s.threshold = parse_num(key, v)?,
            "median_window" => s.median_window = parse_opt(key, v)?,
            "manifest" => self.manifest = parse_opt(key, v)?,
            "out_dir" => self.out_dir = parse_opt(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let (d, m, t, s) = (&self.dialogue, &self.model, &self.train, &self.scoring);
        Some(match key {
            "seed" => self.seed.to_string(),
            "num_files" => self.num_files.to_string(),
            "duration_s" => d.duration_s.to_string(),
            "target_overlap" => d.target_overlap.to_string(),
            "utterance_mean_s" => d.utterance_mean_s.to_string(),
            "utterance_std_s" => d.utterance_std_s.to_string(),
            "gap_mean_s" => d.gap_mean_s.to_string(),
            "gap_std_s" => d.gap_std_s.to_string(),
            "noise_snr_db" => fmt_opt(&d.noise_snr_db),
            "schedule" => match d.schedule {
                Schedule::Turns => "turns".into(),
                Schedule::AlwaysOn => "always_on".into(),
            },
            "n_layers" => m.n_layers.to_string(),
            "d_model" => m.d_model.to_string(),
            "n_heads" => m.n_heads.to_string(),
            "ff_dim" => m.ff_dim.to_string(),
            "input_dim" => m.input_dim.to_string(),
            "n_speakers" => m.n_speakers.to_string(),
            "chunk_len" => m.chunk_len.to_string(),
            "positional_encoding" => m.positional_encoding.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "epochs_phase1" => t.epochs_phase1.to_string(),
            "epochs_phase2" => t.epochs_phase2.to_string(),
            "warmup_steps" => t.warmup_steps.to_string(),
            "alpha" => t.alpha.to_string(),
            "beta" => t.beta.to_string(),
            "fixed_lr" => fmt_opt(&t.fixed_lr),
            "clip_norm" => t.clip_norm.to_string(),
            "checkpoint_every" => fmt_opt(&t.checkpoint_every),
            "head_layer" => fmt_opt(&t.head_layer),
            "collar" => s.collar.to_string(),
            "ignore_overlap" => s.ignore_overlap.to_string(),
            "threshold" => s.threshold.to_string(),
            "median_window" => fmt_opt(&s.median_window),
            "manifest" => self.manifest.as_ref().map_or("off".into(), |p| p.display().to_string()),
            "out_dir" => self.out_dir.as_ref().map_or("off".into(), |p| p.display().to_string()),
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.dialogue.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        let s = &self.scoring;
        if !(s.collar >= 0.0 && s.collar.is_finite()) {
            return Err(Error::Config(format!("collar must be >= 0, got {}", s.collar)));
        }
        if !(s.threshold > 0.0 && s.threshold < 1.0) {
            return Err(Error::Config(format!("threshold must lie in (0, 1), got {}", s.threshold)));
        }
        if s.median_window.is_some_and(|w| w % 2 == 0) {
            return Err(Error::Config("median_window must be odd".into()));
        }
        if let Some(l) = self.train.head_layer {
            if l == 0 || l > self.model.n_layers {
                return Err(Error::Config(format!("head_layer {l} outside 1..={}", self.model.n_layers)));
            }
        }
        Ok(())
    }

    /// Applies `text` on top of the defaults.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: origin.to_path_buf(),
                line: n + 1,
                msg,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| parse_err("expected `key = value`".into()))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(parse_err(format!("`{k}` given twice")));
            }
            cfg.set(k, v).map_err(|e| parse_err(e.to_string()))?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path)
    }

    /// Every key with its current value; parsing it back gives `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in Self::KEYS {
            writeln!(out, "{k} = {}", self.get(k).expect("listed key")).unwrap();
        }
        out
    }

    /// Dialogue settings with the run seed applied.
    pub fn dialogue_config(&self) -> DialogueConfig {
        DialogueConfig {
            seed: self.seed,
            ..self.dialogue.clone()
        }
    }

    /// Training settings with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = ExperimentConfig::default();
        c.seed = 42;
        c.train.fixed_lr = Some(1e-5);
        c.dialogue.noise_snr_db = None;
        c.model.n_layers = 2;
        c.train.alpha = 0.08;
        c.scoring.median_window = Some(11);
        c.manifest = Some(PathBuf::from("data/manifest.tsv"));
        let back = ExperimentConfig::parse(&c.to_text(), Path::new("x")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn every_key_is_addressable() {
        let c = ExperimentConfig::default();
        for k in ExperimentConfig::KEYS {
            let v = c.get(k).unwrap();
            let mut d = ExperimentConfig::default();
            d.set(k, &v).unwrap();
            assert_eq!(d, c, "{k}");
        }
    }

    #[test]
    fn unknown_and_repeated_keys_fail_with_line_numbers() {
        let err = ExperimentConfig::parse("seed = 1\nlearning_rate = 3\n", Path::new("c.cfg")).unwrap_err();
        assert!(err.to_string().contains(":2") || err.to_string().contains("line 2"), "{err}");
        assert!(err.to_string().contains("learning_rate"));
        assert!(ExperimentConfig::parse("seed = 1\nseed = 2\n", Path::new("c")).is_err());
        assert!(ExperimentConfig::parse("seed 1\n", Path::new("c")).is_err());
        assert!(ExperimentConfig::parse("alpha = lots\n", Path::new("c")).is_err());
    }

    #[test]
    fn comments_and_off_values() {
        let c = ExperimentConfig::parse("# hi\n\nfixed_lr = off\nnoise_snr_db = 15\n", Path::new("c")).unwrap();
        assert_eq!(c.train.fixed_lr, None);
        assert_eq!(c.dialogue.noise_snr_db, Some(15.0));
        let t = ExperimentConfig::parse("alpha = table\n", Path::new("c")).unwrap();
        assert_eq!(t.train.alpha, 0.08);
        let p = ExperimentConfig::parse("alpha = prose\n", Path::new("c")).unwrap();
        assert_eq!(p.train.alpha, 0.008);
    }

    #[test]
    fn validation_catches_cross_section_mistakes() {
        assert!(ExperimentConfig::default().validate().is_ok());
        let mut c = ExperimentConfig::default();
        c.train.head_layer = Some(5);
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.scoring.median_window = Some(4);
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.scoring.threshold = 1.0;
        assert!(c.validate().is_err());
    }
}
