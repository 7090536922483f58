use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use eend_core::config::ExperimentConfig;
use eend_core::container::Container;
use eend_core::frontend::{extract, silent_frames, FeatureSequence, Waveform};
use eend_core::losses::select_heads_by_trace;
use eend_core::model::{chunk_and_stitch, Model};
use eend_core::numerics::Eval;
use eend_core::scoring::{decode, der, format_report, read_rttm, write_rttm, ScoreRow};
use eend_core::simulate::{write_dataset, Manifest};
use eend_core::train::{load_manifest, parse_log, LogRecord, Phase, TrainSink, Trainer, LOG_HEADER};
use eend_core::{Error, Result};

use crate::{InferArgs, InspectArgs, ScoreArgs, SimulateArgs, TrainArgs};

pub const LOG_FILE: &str = "train.log";
pub const STATE_FILE: &str = "train.state";
pub const CONFIG_FILE: &str = "config.txt";
pub const ATTENTION_KIND: &str = "attention";

pub fn simulate(cfg: &mut ExperimentConfig, a: SimulateArgs) -> Result<()> {
    if let Some(n) = a.num_files {
        cfg.num_files = n;
    }
    if let Some(o) = a.target_overlap {
        cfg.dialogue.target_overlap = o;
    }
    if let Some(d) = a.duration_s {
        cfg.dialogue.duration_s = d;
    }
    cfg.validate()?;
    if cfg.num_files == 0 {
        return Err(Error::Config("num_files must be >= 1".into()));
    }
    let (manifest, stats) = write_dataset(&cfg.dialogue_config(), cfg.num_files, &a.out_dir)?;
    fs::write(a.out_dir.join(CONFIG_FILE), cfg.to_text())?;
    print!("{}", stats.table());
    eprintln!(
        "wrote {} recordings to {}",
        manifest.entries.len(),
        a.out_dir.display()
    );
    Ok(())
}

/// Appends log lines and writes periodic checkpoints into the run directory.
struct RunDir {
    dir: PathBuf,
    log: BufWriter<File>,
}

impl RunDir {
    /// Opens the log. On resume, lines past the resumed step are dropped so
    /// the file keeps exactly one line per step.
    fn open(dir: &Path, resumed_at: Option<u64>) -> Result<Self> {
        let path = dir.join(LOG_FILE);
        let kept: Vec<LogRecord> = match resumed_at {
            Some(step) if path.exists() => parse_log(&fs::read_to_string(&path)?)?
                .into_iter()
                .filter(|r| r.step <= step)
                .collect(),
            _ => Vec::new(),
        };
        let mut text = format!("{LOG_HEADER}\n");
        for r in &kept {
            text.push_str(&format!("{r}\n"));
        }
        fs::write(&path, text)?;
        let log = BufWriter::new(OpenOptions::new().append(true).open(&path)?);
        Ok(Self {
            dir: dir.to_path_buf(),
            log,
        })
    }

    fn save(&self, trainer: &Trainer, name: &str) -> Result<()> {
        trainer.model.save(self.dir.join(name))?;
        trainer.save_state(self.dir.join(STATE_FILE))
    }
}

impl TrainSink for RunDir {
    fn record(&mut self, rec: &LogRecord) -> Result<()> {
        writeln!(self.log, "{rec}")?;
        self.log.flush()?;
        Ok(())
    }

    fn checkpoint(&mut self, trainer: &Trainer) -> Result<()> {
        self.save(trainer, &format!("step{:06}.ckpt", trainer.state.step))
    }
}

pub fn train(cfg: &mut ExperimentConfig, a: TrainArgs) -> Result<()> {
    if a.manifest.is_some() {
        cfg.manifest = a.manifest;
    }
    if a.out_dir.is_some() {
        cfg.out_dir = a.out_dir;
    }
    cfg.validate()?;
    let manifest = cfg
        .manifest
        .clone()
        .ok_or_else(|| Error::Config("no manifest (use --manifest or `manifest =`)".into()))?;
    let out_dir = cfg
        .out_dir
        .clone()
        .ok_or_else(|| Error::Config("no output directory (use --out-dir or `out_dir =`)".into()))?;
    if a.phase == crate::PhaseArg::Vad && a.resume.is_none() {
        return Err(Error::Config(
            "--phase vad continues a baseline run; pass its train state with --resume".into(),
        ));
    }

    let recordings = load_manifest(&Manifest::read(&manifest)?, cfg.model.n_speakers)?;
    let mut chunks = Vec::new();
    for r in &recordings {
        chunks.extend(r.chunks(cfg.model.chunk_len)?);
    }
    fs::create_dir_all(&out_dir)?;
    fs::write(out_dir.join(CONFIG_FILE), cfg.to_text())?;

    let tc = cfg.train_config();
    let mut trainer = match &a.resume {
        Some(p) => {
            let t = Trainer::resume(p, tc, chunks)?;
            if t.model.config != cfg.model {
                return Err(Error::Config(format!(
                    "{} was trained with a different model config than the one given",
                    p.display()
                )));
            }
            t
        }
        None => Trainer::new(Model::new(cfg.model.clone(), cfg.seed)?, tc, chunks)?,
    };
    let mut run = RunDir::open(&out_dir, a.resume.as_ref().map(|_| trainer.state.step))?;
    for &phase in a.phase.phases() {
        if phase == Phase::Base && trainer.state.phase == Phase::Vad {
            eprintln!("state is already in the auxiliary phase; skipping the baseline");
            continue;
        }
        trainer.run_phase(phase, &mut run)?;
        let name = match phase {
            Phase::Base => "phase1.ckpt",
            Phase::Vad => "final.ckpt",
        };
        run.save(&trainer, name)?;
        eprintln!("{phase} phase done at step {}, wrote {name}", trainer.state.step);
    }
    println!(
        "steps {}\tskipped {}\tmax_lr {:e}",
        trainer.state.step, trainer.state.skipped, trainer.state.max_lr
    );
    Ok(())
}

/// Features plus, for audio input, the digitally silent output frames.
fn load_input(path: &Path, input_dim: usize) -> Result<(FeatureSequence, Option<Vec<bool>>)> {
    let (feats, silent) = if Container::sniff(path) {
        (FeatureSequence::load(path)?, None)
    } else {
        let wav = Waveform::read_wav(path)?;
        let f = extract(&wav)?;
        let silent = silent_frames(&wav, f.len());
        (f, Some(silent))
    };
    if feats.is_empty() {
        return Err(Error::Input(format!("{}: no feature frames", path.display())));
    }
    if feats.dim() != input_dim {
        return Err(Error::Input(format!(
            "{}: features have {} columns, model expects {input_dim}",
            path.display(),
            feats.dim()
        )));
    }
    Ok((feats, silent))
}

pub fn infer(cfg: &mut ExperimentConfig, a: InferArgs) -> Result<()> {
    if let Some(t) = a.threshold {
        cfg.scoring.threshold = t;
    }
    if a.median_window.is_some() {
        cfg.scoring.median_window = a.median_window;
    }
    cfg.validate()?;
    let model = Model::load(&a.checkpoint)?;
    let (feats, silent) = load_input(&a.input, model.config.input_dim)?;
    let mut y = chunk_and_stitch(&model, &feats.frames)?;
    if let Some(silent) = silent {
        for (t, _) in silent.iter().enumerate().filter(|(_, s)| **s) {
            for c in 0..y.rows() {
                y.set(c, t, 0.0);
            }
        }
    }
    let rec = match a.recording {
        Some(r) => r,
        None => a
            .input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| Error::Input("cannot derive a recording id from the input path".into()))?,
    };
    let segments = decode(&y, cfg.scoring.threshold, cfg.scoring.median_window, &rec)?;
    write_rttm(&segments, &a.out)?;
    eprintln!("{} segments over {} frames", segments.len(), feats.len());
    Ok(())
}

pub fn score(cfg: &mut ExperimentConfig, a: ScoreArgs) -> Result<()> {
    if let Some(c) = a.collar {
        cfg.scoring.collar = c;
    }
    cfg.scoring.ignore_overlap |= a.ignore_overlap;
    cfg.validate()?;
    let reference = read_rttm(&a.reference)?;
    let hyp = read_rttm(&a.hyp)?;
    let (total, per) = der(&reference, &hyp, cfg.scoring.der_options())?;
    let mut rows: Vec<ScoreRow> = per
        .into_iter()
        .map(|(name, breakdown)| ScoreRow { name, breakdown })
        .collect();
    rows.push(ScoreRow {
        name: "ALL".into(),
        breakdown: total,
    });
    print!("{}", format_report(&rows));
    Ok(())
}

pub fn inspect_attention(cfg: &mut ExperimentConfig, a: InspectArgs) -> Result<()> {
    cfg.validate()?;
    let model = Model::load(&a.checkpoint)?;
    let n_layers = model.config.n_layers;
    let layer = a.layer.unwrap_or(n_layers);
    if layer == 0 || layer > n_layers {
        return Err(Error::Config(format!("layer {layer} outside 1..={n_layers}")));
    }
    let (feats, _) = load_input(&a.input, model.config.input_dim)?;
    let t = feats.len().min(model.config.chunk_len);
    if t < feats.len() {
        eprintln!("using the first {t} of {} frames", feats.len());
    }
    let x = feats.frames.slice_rows(0, t)?;
    let out = model.forward(&mut Eval, &x, true)?;
    let heads: Vec<_> = out.attention[layer - 1].iter().map(|w| (**w).clone()).collect();
    let ranked = select_heads_by_trace(&heads, heads.len())?;
    let selected: Vec<usize> = ranked.iter().take(model.config.n_speakers).map(|r| r.0).collect();

    println!("#layer\thead\ttrace\ttrace_per_frame\tselected");
    for (h, w) in heads.iter().enumerate() {
        let trace: f64 = (0..t).map(|i| w.get(i, i)).sum();
        println!(
            "{layer}\t{h}\t{trace:.6}\t{:.6}\t{}",
            trace / t as f64,
            if selected.contains(&h) { "yes" } else { "no" }
        );
    }
    if let Some(path) = a.dump {
        let mut c = Container::new(ATTENTION_KIND);
        c.set_meta("layer", layer);
        c.set_meta("frames", t);
        c.set_meta("n_heads", heads.len());
        for (h, w) in heads.into_iter().enumerate() {
            c.push_tensor(format!("head{h}"), w);
        }
        c.save(&path)?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}
