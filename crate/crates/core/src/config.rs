//! Run configuration as plain `key = value` lines. Later assignments win, so
//! command-line overrides are applied after the file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::dataio::{PnrDistribution, SynthSpec};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TrainConfig};
use crate::ndcore::AdamWConfig;
use crate::swin3d::SwinConfig;
use crate::tasks::{SamplerConfig, Task};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub swin: SwinConfig,
    pub sampler: SamplerConfig,
    /// `None` means the task default: 30 for oscc, 20 for pnr.
    pub epochs: Option<usize>,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub seed: u64,
    /// Fraction of clips held out for validation during training.
    pub val_fraction: f64,
    pub synth: SynthSpec,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: Task::Oscc,
            swin: SwinConfig::default(),
            sampler: SamplerConfig::default(),
            epochs: None,
            batch_size: 16,
            optimizer: AdamWConfig::default(),
            seed: 0,
            val_fraction: 0.2,
            synth: SynthSpec::default(),
            data_dir: None,
            out_dir: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn parse_triple(key: &str, value: &str) -> Result<[usize; 3]> {
    parse_list(key, value)?
        .try_into()
        .map_err(|_| Error::Config(format!("{key} needs three comma-separated values")))
}

fn join(values: &[usize]) -> String {
    values.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn path_or_empty(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    pub fn epochs(&self) -> usize {
        self.epochs.unwrap_or(match self.task {
            Task::Oscc => 30,
            Task::Pnr => 20,
        })
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            swin: self.swin.clone(),
            task: self.task,
            input_size: self.sampler.input_size,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs(),
            batch_size: self.batch_size,
            seed: self.seed,
            optimizer: self.optimizer,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "task" => self.task = v.parse()?,
            "attention" => self.swin.attention_kind = v.parse()?,
            "n_points" => self.swin.deform.n_points = parse(key, v)?,
            "offset_scale" => self.swin.deform.offset_scale = parse(key, v)?,
            "patch_size" => self.swin.patch_size = parse_triple(key, v)?,
            "in_chans" => self.swin.in_chans = parse(key, v)?,
            "embed_dim" => self.swin.embed_dim = parse(key, v)?,
            "depths" => self.swin.depths = parse_list(key, v)?,
            "num_heads" => self.swin.num_heads = parse_list(key, v)?,
            "window_size" => self.swin.window_size = parse_triple(key, v)?,
            "mlp_ratio" => self.swin.mlp_ratio = parse(key, v)?,
            "input_size" => self.sampler.input_size = parse(key, v)?,
            "fps" => {
                self.sampler.fps = parse(key, v)?;
                self.synth.fps = self.sampler.fps;
            }
            "epochs" => self.epochs = if v.is_empty() { None } else { Some(parse(key, v)?) },
            "batch_size" => self.batch_size = parse(key, v)?,
            "lr" => self.optimizer.lr = parse(key, v)?,
            "beta1" => self.optimizer.beta1 = parse(key, v)?,
            "beta2" => self.optimizer.beta2 = parse(key, v)?,
            "eps" => self.optimizer.eps = parse(key, v)?,
            "weight_decay" => self.optimizer.weight_decay = parse(key, v)?,
            "seed" => {
                self.seed = parse(key, v)?;
                self.synth.seed = self.seed;
            }
            "val_fraction" => self.val_fraction = parse(key, v)?,
            "num_clips" => self.synth.num_clips = parse(key, v)?,
            "positive_ratio" => self.synth.positive_ratio = parse(key, v)?,
            "duration_frames" => self.synth.duration_frames = parse(key, v)?,
            "pnr_distribution" => self.synth.pnr_distribution = v.parse::<PnrDistribution>()?,
            "height" => self.synth.height = parse(key, v)?,
            "width" => self.synth.width = parse(key, v)?,
            "channels" => {
                self.synth.channels = parse(key, v)?;
                self.swin.in_chans = self.synth.channels;
            }
            "noise_sigma" => self.synth.noise_sigma = parse(key, v)?,
            "data_dir" => self.data_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "out_dir" => self.out_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected key = value, got {line:?}"),
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.swin.validate()?;
        self.sampler.validate()?;
        self.synth.validate()?;
        if self.swin.in_chans != self.synth.channels {
            return Err(Error::Config("in_chans must equal channels".into()));
        }
        if self.batch_size == 0 || self.epochs() == 0 {
            return Err(Error::Config("batch_size and epochs must be >= 1".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!("val_fraction must lie in (0, 1), got {}", self.val_fraction)));
        }
        if !(self.optimizer.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        Ok(())
    }

    /// Every field in a fixed order. Floats print in shortest round-trip form
    /// so reloading gives back identical values.
    pub fn to_text(&self) -> String {
        let s = &self.swin;
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        line("task", self.task.as_str().into());
        line("attention", s.attention_kind.as_str().into());
        line("n_points", s.deform.n_points.to_string());
        line("offset_scale", s.deform.offset_scale.to_string());
        line("patch_size", join(&s.patch_size));
        line("in_chans", s.in_chans.to_string());
        line("embed_dim", s.embed_dim.to_string());
        line("depths", join(&s.depths));
        line("num_heads", join(&s.num_heads));
        line("window_size", join(&s.window_size));
        line("mlp_ratio", s.mlp_ratio.to_string());
        line("input_size", self.sampler.input_size.to_string());
        line("fps", self.sampler.fps.to_string());
        line("epochs", self.epochs().to_string());
        line("batch_size", self.batch_size.to_string());
        line("lr", self.optimizer.lr.to_string());
        line("beta1", self.optimizer.beta1.to_string());
        line("beta2", self.optimizer.beta2.to_string());
        line("eps", self.optimizer.eps.to_string());
        line("weight_decay", self.optimizer.weight_decay.to_string());
        line("seed", self.seed.to_string());
        line("val_fraction", self.val_fraction.to_string());
        line("num_clips", self.synth.num_clips.to_string());
        line("positive_ratio", self.synth.positive_ratio.to_string());
        line("duration_frames", self.synth.duration_frames.to_string());
        line("pnr_distribution", self.synth.pnr_distribution.to_string());
        line("height", self.synth.height.to_string());
        line("width", self.synth.width.to_string());
        line("channels", self.synth.channels.to_string());
        line("noise_sigma", self.synth.noise_sigma.to_string());
        line("data_dir", path_or_empty(&self.data_dir));
        line("out_dir", path_or_empty(&self.out_dir));
        out
    }
}
