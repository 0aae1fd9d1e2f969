//! Subcommands: synth, train, eval, analyze, predict, import.
//!
//! Every command that writes a run directory also writes the exact
//! `config.txt` it ran with; passing that file back via `--config`
//! reproduces the outputs.

use std::fs::{self, File};
use std::io::Write;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::dataio::{
    error_distribution, frequency_analysis, generate_clip, import_challenge, read_annotations, read_clip_binary,
    score_pnr, write_annotations, write_clip_binary, ClipAnnotation, EvalReport,
};
use crate::error::{Error, Result};
use crate::model::{evaluate, filter_for_task, train, Example, VideoModel};
use crate::ndcore::{checkpoint, derive_seed};
use crate::tasks::{baseline_center, baseline_fraction, decode_pnr, sample_clip, PnrBaselineConfig, Task};

pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.swv";
pub const TRAIN_LOG_FILE: &str = "train.log";
pub const REPORT_FILE: &str = "report.json";
pub const PREDICTIONS_FILE: &str = "predictions.tsv";
pub const PNR_HISTOGRAM_FILE: &str = "pnr_histogram.tsv";

#[derive(Parser, Debug)]
#[command(name = "swinvid", version, about = "Video Swin / deformable attention toolkit for state-change clips")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset of clips with planted state changes.
    Synth(RunArgs),
    /// Train a model on a dataset and keep the best checkpoint.
    Train(RunArgs),
    /// Score a checkpoint or a fixed-fraction baseline on a dataset.
    Eval(EvalArgs),
    /// Keyframe-position and error histograms.
    Analyze(AnalyzeArgs),
    /// Predict a single clip file.
    Predict(PredictArgs),
    /// Convert challenge-style annotation JSON to JSONL.
    Import(ImportArgs),
}

#[derive(Args, Debug, Default, Clone)]
pub struct RunArgs {
    /// key = value config file; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<String>,
    /// dense or deform.
    #[arg(long)]
    pub attention: Option<String>,
    #[arg(long)]
    pub n_points: Option<usize>,
    #[arg(long)]
    pub input_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Dataset directory produced by `synth`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Any other config key, e.g. `--set num_clips=32`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// `center` or `fraction:F`; evaluates the baseline instead of a model.
    #[arg(long)]
    pub baseline: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    /// Evaluation reports whose per-clip errors to histogram. Repeatable.
    #[arg(long = "report")]
    pub reports: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub bin_width: f64,
    /// Bin width in seconds for error histograms.
    #[arg(long, default_value_t = 0.1)]
    pub error_bin: f64,
}

#[derive(Args, Debug, Clone)]
pub struct PredictArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A clip file in the SWC1 format.
    #[arg(long)]
    pub clip: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct ImportArgs {
    #[arg(long)]
    pub challenge: PathBuf,
    #[arg(long, default_value_t = 30.0)]
    pub fps: f64,
    #[arg(long)]
    pub out: PathBuf,
}

impl RunArgs {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            cfg.apply_text(&text)?;
        }
        let mut set = |k: &str, v: Option<String>| v.map_or(Ok(()), |v| cfg.set(k, &v));
        set("task", self.task.clone())?;
        set("attention", self.attention.clone())?;
        set("n_points", self.n_points.map(|v| v.to_string()))?;
        set("input_size", self.input_size.map(|v| v.to_string()))?;
        set("seed", self.seed.map(|v| v.to_string()))?;
        set("epochs", self.epochs.map(|v| v.to_string()))?;
        set("data_dir", self.data.as_ref().map(|p| p.display().to_string()))?;
        set("out_dir", self.out.as_ref().map(|p| p.display().to_string()))?;
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn clip_path(data_dir: &Path, clip_id: &str) -> PathBuf {
    data_dir.join("clips").join(format!("{clip_id}.swc"))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn require_dir(dir: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    dir.clone()
        .ok_or_else(|| Error::Config(format!("{what} directory not set (use --{what})")))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct ManifestClip {
    clip_id: String,
    file: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest {
    num_clips: usize,
    positive_ratio: f64,
    duration_frames: usize,
    fps: f64,
    pnr_distribution: String,
    height: usize,
    width: usize,
    channels: usize,
    noise_sigma: f64,
    seed: u64,
    annotations_sha256: String,
    clips: Vec<ManifestClip>,
}

pub struct SynthOutcome {
    pub annotations: Vec<ClipAnnotation>,
    /// SHA-256 of the manifest file.
    pub manifest_hash: String,
}

/// Writes `clips/*.swc`, `annotations.jsonl`, `manifest.json` and
/// `config.txt` under the output directory.
pub fn cmd_synth(cfg: &RunConfig) -> Result<SynthOutcome> {
    cfg.validate()?;
    let out = require_dir(&cfg.out_dir, "out")?;
    let spec = &cfg.synth;
    create_dir(&out.join("clips"))?;
    let clips: Vec<(ClipAnnotation, ManifestClip)> = (0..spec.num_clips)
        .into_par_iter()
        .map(|i| {
            let (video, ann) = generate_clip(spec, i)?;
            let path = clip_path(&out, &ann.clip_id);
            write_clip_binary(&path, &video)?;
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let entry = ManifestClip {
                clip_id: ann.clip_id.clone(),
                file: format!("clips/{}.swc", ann.clip_id),
                sha256: sha256_hex(&bytes),
            };
            Ok((ann, entry))
        })
        .collect::<Result<_>>()?;
    let (annotations, entries): (Vec<_>, Vec<_>) = clips.into_iter().unzip();
    let ann_path = out.join(ANNOTATIONS_FILE);
    write_annotations(&ann_path, &annotations)?;
    let ann_bytes = fs::read(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
    let manifest = Manifest {
        num_clips: spec.num_clips,
        positive_ratio: spec.positive_ratio,
        duration_frames: spec.duration_frames,
        fps: spec.fps,
        pnr_distribution: spec.pnr_distribution.to_string(),
        height: spec.height,
        width: spec.width,
        channels: spec.channels,
        noise_sigma: spec.noise_sigma,
        seed: spec.seed,
        annotations_sha256: sha256_hex(&ann_bytes),
        clips: entries,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_file(&out.join(MANIFEST_FILE), &text)?;
    cfg.save(&out.join(CONFIG_FILE))?;
    Ok(SynthOutcome {
        annotations,
        manifest_hash: sha256_hex(text.as_bytes()),
    })
}

/// Reads and uniformly samples the clips of `annotations`.
pub fn load_examples(data_dir: &Path, annotations: &[ClipAnnotation], cfg: &RunConfig) -> Result<Vec<Example>> {
    annotations
        .par_iter()
        .map(|ann| {
            let video = read_clip_binary(&clip_path(data_dir, &ann.clip_id))?;
            if video.shape().first() != Some(&ann.duration_frames) {
                return Err(Error::Validation {
                    clip_id: ann.clip_id.clone(),
                    msg: format!(
                        "clip file has shape {:?}, annotation says {} frames",
                        video.shape(),
                        ann.duration_frames
                    ),
                });
            }
            let sampled = sample_clip(&video, ann.pnr_frame, &cfg.sampler)?;
            Ok(Example {
                annotation: ann.clone(),
                frames: sampled.frames,
            })
        })
        .collect()
}

/// Deterministic shuffle then a validation tail of `val_fraction`.
pub fn split_train_val(examples: Vec<Example>, val_fraction: f64, seed: u64) -> Result<(Vec<Example>, Vec<Example>)> {
    if examples.len() < 2 {
        return Err(Error::contract(format!(
            "need at least 2 clips to split train/validation, have {}",
            examples.len()
        )));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 2)));
    let n_val = ((examples.len() as f64 * val_fraction).round() as usize).clamp(1, examples.len() - 1);
    let mut slots: Vec<Option<Example>> = examples.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| idx.iter().map(|&i| slots[i].take().unwrap()).collect::<Vec<_>>();
    let val = take(&order[order.len() - n_val..]);
    let train = take(&order[..order.len() - n_val]);
    Ok((train, val))
}

pub struct TrainSummary {
    pub best_epoch: usize,
    pub final_train_loss: f64,
    pub best_report: EvalReport,
}

/// Trains on `data_dir`, appending one line per epoch to `train.log` and
/// saving the best validation checkpoint.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let data = require_dir(&cfg.data_dir, "data")?;
    let out = require_dir(&cfg.out_dir, "out")?;
    let annotations = read_annotations(&data.join(ANNOTATIONS_FILE))?;
    let eligible: Vec<ClipAnnotation> = annotations
        .into_iter()
        .filter(|a| cfg.task == Task::Oscc || a.pnr_frame.is_some())
        .collect();
    if eligible.is_empty() {
        return Err(Error::contract(format!("no {} training clips after filtering", cfg.task.as_str())));
    }
    let examples = filter_for_task(load_examples(&data, &eligible, cfg)?, cfg.task);
    let (train_set, val_set) = split_train_val(examples, cfg.val_fraction, cfg.seed)?;

    create_dir(&out)?;
    cfg.save(&out.join(CONFIG_FILE))?;
    let log_path = out.join(TRAIN_LOG_FILE);
    let mut log = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut write_log = |line: &str| writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e));
    write_log(&format!(
        "# task={} attention={} train_clips={} val_clips={}",
        cfg.task.as_str(),
        cfg.swin.attention_kind.as_str(),
        train_set.len(),
        val_set.len()
    ))?;

    let mut model = VideoModel::init(cfg.model_config(), cfg.seed)?;
    let mut log_err = None;
    let outcome = train(&mut model, &train_set, &val_set, &cfg.train_config(), |stats| {
        match write_log(&stats.log_line()) {
            Ok(()) => ControlFlow::Continue(()),
            Err(e) => {
                log_err = Some(e);
                ControlFlow::Break(())
            }
        }
    })?;
    if let Some(e) = log_err {
        return Err(e);
    }
    checkpoint::save(&out.join(CHECKPOINT_FILE), &outcome.best_params)?;
    let best = &outcome.history[outcome.best_epoch - 1];
    write_log(&format!("# best_epoch={}", outcome.best_epoch))?;
    Ok(TrainSummary {
        best_epoch: outcome.best_epoch,
        final_train_loss: outcome.history.last().map_or(f64::NAN, |s| s.train_loss),
        best_report: best.report.clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Baseline {
    Center,
    Fraction(PnrBaselineConfig),
}

impl std::str::FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "center" => Ok(Baseline::Center),
            Some(("fraction", f)) => {
                let f: f64 = f
                    .parse()
                    .map_err(|_| Error::Config(format!("bad baseline fraction {f:?}")))?;
                Ok(Baseline::Fraction(PnrBaselineConfig::new(f)?))
            }
            _ => Err(Error::Config(format!("unknown baseline {s:?}; use center or fraction:F"))),
        }
    }
}

impl Baseline {
    pub fn predict(&self, duration_frames: usize) -> usize {
        match self {
            Baseline::Center => baseline_center(duration_frames),
            Baseline::Fraction(cfg) => baseline_fraction(duration_frames, cfg),
        }
    }
}

fn predictions_tsv(report: &EvalReport) -> String {
    let mut out = String::from("clip_id\tpredicted_frame\tpnr_frame\n");
    for c in &report.per_clip {
        out.push_str(&format!("{}\t{}\t{}\n", c.clip_id, c.prediction, c.ground_truth));
    }
    out
}

/// Scores a checkpoint, or a baseline when one is given, on every clip of
/// the dataset. Writes `report.json`, and `predictions.tsv` for pnr.
pub fn cmd_eval(cfg: &RunConfig, checkpoint_path: Option<&Path>, baseline: Option<Baseline>) -> Result<EvalReport> {
    cfg.validate()?;
    let data = require_dir(&cfg.data_dir, "data")?;
    let out = require_dir(&cfg.out_dir, "out")?;
    let annotations = read_annotations(&data.join(ANNOTATIONS_FILE))?;
    let report = match (baseline, checkpoint_path) {
        (Some(b), _) => {
            if cfg.task != Task::Pnr {
                return Err(Error::Config("baselines predict keyframes; use --task pnr".into()));
            }
            score_pnr(&annotations, |ann| Ok(b.predict(ann.duration_frames)))?
        }
        (None, Some(path)) => {
            let params = checkpoint::load(path)?;
            let model = VideoModel::from_params(cfg.model_config(), &params)?;
            let examples = load_examples(&data, &annotations, cfg)?;
            evaluate(&model, &examples)?
        }
        (None, None) => return Err(Error::Config("eval needs --checkpoint or --baseline".into())),
    };
    report.check_consistency()?;
    create_dir(&out)?;
    cfg.save(&out.join(CONFIG_FILE))?;
    report.write(&out.join(REPORT_FILE))?;
    if report.task == Task::Pnr {
        write_file(&out.join(PREDICTIONS_FILE), predictions_tsv(&report))?;
    }
    Ok(report)
}

pub struct AnalyzeOutcome {
    pub mode_midpoint: f64,
    pub mean_normalized_pnr: f64,
    pub written: Vec<PathBuf>,
}

/// Writes the normalized keyframe histogram and one error histogram per
/// report, each as two tab-separated columns.
pub fn cmd_analyze(
    annotations: &Path,
    reports: &[PathBuf],
    out: &Path,
    bin_width: f64,
    error_bin: f64,
) -> Result<AnalyzeOutcome> {
    let anns = read_annotations(annotations)?;
    let loaded = reports
        .iter()
        .map(|p| EvalReport::read(p).map(|r| (p, r)))
        .collect::<Result<Vec<_>>>()?;
    let freq = frequency_analysis(&anns, bin_width)?;
    create_dir(out)?;
    let mut written = vec![out.join(PNR_HISTOGRAM_FILE)];
    write_file(&written[0], freq.histogram.to_tsv())?;
    for (path, report) in loaded {
        report.check_consistency()?;
        let hist = error_distribution(&report, error_bin)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
        let target = out.join(format!("{stem}_errors.tsv"));
        write_file(&target, hist.to_tsv())?;
        written.push(target);
    }
    Ok(AnalyzeOutcome {
        mode_midpoint: freq.mode_midpoint,
        mean_normalized_pnr: freq.mean,
        written,
    })
}

/// Class index for oscc; `(bin, frame)` for pnr.
pub fn cmd_predict(cfg: &RunConfig, checkpoint_path: &Path, clip: &Path) -> Result<(usize, Option<usize>)> {
    let model = VideoModel::from_params(cfg.model_config(), &checkpoint::load(checkpoint_path)?)?;
    let video = read_clip_binary(clip)?;
    let sampled = sample_clip(&video, None, &cfg.sampler)?;
    let out = model.predict(&sampled.frames)?;
    match cfg.task {
        Task::Oscc => Ok((out, None)),
        Task::Pnr => Ok((out, Some(decode_pnr(out, sampled.duration_frames, cfg.sampler.input_size)?))),
    }
}

pub fn cmd_import(challenge: &Path, fps: f64, out: &Path) -> Result<usize> {
    let text = fs::read_to_string(challenge).map_err(|e| Error::io(challenge, e))?;
    let anns = import_challenge(&text, fps)?;
    write_annotations(out, &anns)?;
    Ok(anns.len())
}

/// Caps rayon's global pool at `SWINVID_THREADS` when set.
pub fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("SWINVID_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("SWINVID_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

/// Runs one command, printing a short summary to stdout.
pub fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Synth(args) => {
            let out = cmd_synth(&args.resolve()?)?;
            let positives = out.annotations.iter().filter(|a| a.state_change).count();
            println!(
                "wrote {} clips ({positives} with a state change), manifest sha256 {}",
                out.annotations.len(),
                out.manifest_hash
            );
        }
        Command::Train(args) => {
            let s = cmd_train(&args.resolve()?)?;
            println!(
                "best epoch {} final train loss {} {}",
                s.best_epoch,
                s.final_train_loss,
                summary(&s.best_report)
            );
        }
        Command::Eval(args) => {
            let baseline = args.baseline.as_deref().map(str::parse).transpose()?;
            let report = cmd_eval(&args.run.resolve()?, args.checkpoint.as_deref(), baseline)?;
            println!("{}", summary(&report));
        }
        Command::Analyze(a) => {
            let out = cmd_analyze(&a.annotations, &a.reports, &a.out, a.bin_width, a.error_bin)?;
            println!(
                "mode bin midpoint {:.3}, mean normalized pnr {:.4}",
                out.mode_midpoint, out.mean_normalized_pnr
            );
            for p in out.written {
                println!("wrote {}", p.display());
            }
        }
        Command::Predict(a) => {
            let cfg = RunArgs {
                config: Some(a.config),
                ..Default::default()
            }
            .resolve()?;
            match cmd_predict(&cfg, &a.checkpoint, &a.clip)? {
                (class, None) => println!("state_change={}", class == 1),
                (bin, Some(frame)) => println!("bin={bin} frame={frame}"),
            }
        }
        Command::Import(a) => {
            let n = cmd_import(&a.challenge, a.fps, &a.out)?;
            println!("imported {n} clips");
        }
    }
    Ok(())
}

fn summary(report: &EvalReport) -> String {
    match (report.accuracy, report.mean_abs_error_seconds) {
        (Some(acc), _) => format!("accuracy {acc:.4} over {} clips", report.per_clip.len()),
        (_, Some(err)) => format!(
            "mean abs error {err:.4} s over {} clips ({} skipped)",
            report.per_clip.len(),
            report.skipped
        ),
        _ => String::new(),
    }
}
