//! `key = value` run configuration files.

use std::path::{Path, PathBuf};

use crate::haar::ImageShape;
use crate::predictor::Activation;
use crate::sampler::{SampleConfig, Variant};
use crate::trainer::{DatasetKind, DatasetSpec, LrSchedule, OptimizerKind, TrainConfig};

/// A parse or validation problem, optionally tied to a line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub path: Option<PathBuf>,
    pub line: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (&self.path, self.line) {
            (Some(p), Some(l)) => write!(f, "{}:{l}: {}", p.display(), self.message),
            (Some(p), None) => write!(f, "{}: {}", p.display(), self.message),
            (None, Some(l)) => write!(f, "line {l}: {}", self.message),
            (None, None) => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError {
        path: None,
        line: Some(line),
        message: message.into(),
    }
}

/// How one line of a config file was read.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Line {
    Blank,
    Comment,
    Pair { key: String, value: String },
}

/// Classifies one line. Anything after `#` is a comment.
pub fn classify(line: &str) -> std::result::Result<Line, String> {
    let trimmed = line.trim();
    if trimmed.is_empty() {
        return Ok(Line::Blank);
    }
    if trimmed.starts_with('#') {
        return Ok(Line::Comment);
    }
    let content = trimmed.split('#').next().unwrap_or("").trim();
    let (key, value) = content
        .split_once('=')
        .ok_or_else(|| format!("expected `key = value`, got `{trimmed}`"))?;
    let (key, value) = (key.trim(), value.trim());
    if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return Err(format!("invalid key `{key}`"));
    }
    if value.is_empty() {
        return Err(format!("missing value for `{key}`"));
    }
    Ok(Line::Pair {
        key: key.to_string(),
        value: value.to_string(),
    })
}

/// All `(line number, key, value)` triples in order. Duplicate keys are errors.
pub fn parse_pairs(text: &str) -> std::result::Result<Vec<(usize, String, String)>, ConfigError> {
    let mut out: Vec<(usize, String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        if let Line::Pair { key, value } = classify(raw).map_err(|m| err(n, m))? {
            if let Some((first, _, _)) = out.iter().find(|(_, k, _)| *k == key) {
                return Err(err(n, format!("`{key}` already set on line {first}")));
            }
            out.push((n, key, value));
        }
    }
    Ok(out)
}

/// Everything a subcommand may need.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub sample: SampleConfig,
    pub num_samples: usize,
    pub cond: Option<usize>,
    pub checkpoint: Option<PathBuf>,
    /// Set when the file names the image shape explicitly.
    pub explicit_shape: bool,
    pub curve_points: usize,
    pub sweep_seeds: Vec<u64>,
    pub eval_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let shape = ImageShape::new(1, 2, 2).expect("valid default shape");
        Self {
            train: TrainConfig::new(DatasetSpec::new(DatasetKind::PointMixture, shape)),
            sample: SampleConfig::default(),
            num_samples: 1000,
            cond: None,
            checkpoint: None,
            explicit_shape: false,
            curve_points: 101,
            sweep_seeds: vec![0],
            eval_samples: 500,
        }
    }
}

fn num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> std::result::Result<T, ConfigError> {
    v.parse().map_err(|_| err(line, format!("`{key}`: cannot parse `{v}`")))
}

fn flag(line: usize, key: &str, v: &str) -> std::result::Result<bool, ConfigError> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(err(line, format!("`{key}`: expected true or false, got `{v}`"))),
    }
}

fn list<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> std::result::Result<Vec<T>, ConfigError> {
    v.split(',').map(|p| num(line, key, p.trim())).collect()
}

pub const KEYS: &[&str] = &[
    "dataset",
    "channels",
    "height",
    "width",
    "atom_scale",
    "mixture_weight",
    "texture_noise",
    "class_labels",
    "gamma_low",
    "gamma_high",
    "eps_smooth",
    "omega",
    "lr",
    "batch_size",
    "steps",
    "cond_dropout",
    "seed",
    "ema",
    "ema_decay",
    "optimizer",
    "lr_schedule",
    "beta1",
    "beta2",
    "weight_decay",
    "time_mu",
    "time_sigma",
    "hidden",
    "activation",
    "stop_gradient",
    "t_max",
    "sample_steps",
    "variant",
    "cfg_scale",
    "cfg_interval",
    "timeshift",
    "num_samples",
    "cond",
    "checkpoint",
    "curve_points",
    "sweep_seeds",
    "eval_samples",
];

impl RunConfig {
    pub fn parse(text: &str) -> std::result::Result<Self, ConfigError> {
        let mut c = RunConfig::default();
        let (mut channels, mut height, mut width) = (1usize, 2usize, 2usize);
        let mut shape_line = 0;
        let pairs = parse_pairs(text)?;
        let lines: Vec<(usize, String)> = pairs.iter().map(|(n, k, _)| (*n, k.clone())).collect();
        for (n, key, v) in pairs {
            let v = v.as_str();
            let t = &mut c.train;
            match key.as_str() {
                "dataset" => {
                    t.dataset.kind = DatasetKind::parse(v).ok_or_else(|| err(n, format!("unknown dataset `{v}`")))?;
                }
                "channels" | "height" | "width" => {
                    let x: usize = num(n, &key, v)?;
                    match key.as_str() {
                        "channels" => channels = x,
                        "height" => height = x,
                        _ => width = x,
                    }
                    c.explicit_shape = true;
                    shape_line = n;
                }
                "atom_scale" => t.dataset.atom_scale = num(n, &key, v)?,
                "mixture_weight" => t.dataset.mixture_weight = num(n, &key, v)?,
                "texture_noise" => t.dataset.texture_noise = num(n, &key, v)?,
                "class_labels" => t.dataset.labels = flag(n, &key, v)?,
                "gamma_low" => t.gamma_low = num(n, &key, v)?,
                "gamma_high" => t.gamma_high = num(n, &key, v)?,
                "eps_smooth" => t.eps_smooth = num(n, &key, v)?,
                "omega" => t.omega = num(n, &key, v)?,
                "lr" => t.optimizer.lr = num(n, &key, v)?,
                "batch_size" => t.batch_size = num(n, &key, v)?,
                "steps" => t.steps = num(n, &key, v)?,
                "cond_dropout" => t.cond_dropout = num(n, &key, v)?,
                "seed" => {
                    t.seed = num(n, &key, v)?;
                    c.sample.seed = t.seed;
                }
                "ema" => t.ema = flag(n, &key, v)?,
                "ema_decay" => t.ema_decay = num(n, &key, v)?,
                "optimizer" => {
                    t.optimizer.kind =
                        OptimizerKind::parse(v).ok_or_else(|| err(n, format!("unknown optimizer `{v}`")))?;
                }
                "lr_schedule" => {
                    t.lr_schedule = LrSchedule::parse(v).ok_or_else(|| err(n, format!("unknown lr_schedule `{v}`")))?;
                }
                "beta1" => t.optimizer.beta1 = num(n, &key, v)?,
                "beta2" => t.optimizer.beta2 = num(n, &key, v)?,
                "weight_decay" => t.optimizer.weight_decay = num(n, &key, v)?,
                "time_mu" => t.time_sampler.mu = num(n, &key, v)?,
                "time_sigma" => t.time_sampler.sigma = num(n, &key, v)?,
                "hidden" => t.hidden = list(n, &key, v)?,
                "activation" => {
                    t.activation = Activation::parse(v).ok_or_else(|| err(n, format!("unknown activation `{v}`")))?;
                }
                "stop_gradient" => t.stop_gradient = flag(n, &key, v)?,
                "t_max" => {
                    t.t_max = num(n, &key, v)?;
                    c.sample.t_max = t.t_max;
                }
                "sample_steps" => c.sample.steps = num(n, &key, v)?,
                "variant" => {
                    c.sample.variant = Variant::parse(v).ok_or_else(|| err(n, format!("unknown variant `{v}`")))?;
                }
                "cfg_scale" => c.sample.cfg_scale = num(n, &key, v)?,
                "cfg_interval" => {
                    let iv: Vec<f64> = list(n, &key, v)?;
                    if iv.len() != 2 {
                        return Err(err(n, "`cfg_interval` takes two values `lo, hi`"));
                    }
                    c.sample.cfg_interval = (iv[0], iv[1]);
                }
                "timeshift" => c.sample.timeshift = num(n, &key, v)?,
                "num_samples" => c.num_samples = num(n, &key, v)?,
                "cond" => {
                    c.cond = if v == "none" { None } else { Some(num(n, &key, v)?) };
                }
                "checkpoint" => c.checkpoint = Some(PathBuf::from(v)),
                "curve_points" => c.curve_points = num(n, &key, v)?,
                "sweep_seeds" => c.sweep_seeds = list(n, &key, v)?,
                "eval_samples" => c.eval_samples = num(n, &key, v)?,
                _ => return Err(err(n, format!("unknown key `{key}`"))),
            }
        }
        c.train.dataset.shape = ImageShape::new(channels, height, width).map_err(|e| err(shape_line, e.to_string()))?;
        c.validate(&lines)?;
        Ok(c)
    }

    /// Range checks; a failure is attributed to the line of the key it names.
    fn validate(&self, lines: &[(usize, String)]) -> std::result::Result<(), ConfigError> {
        let problem = self
            .train
            .validate()
            .and_then(|_| self.sample.validate())
            .err()
            .map(|e| e.to_string())
            .or_else(|| (self.curve_points < 2).then(|| "curve_points must be at least 2".to_string()))
            .or_else(|| (self.eval_samples == 0).then(|| "eval_samples must be positive".to_string()))
            .or_else(|| self.sweep_seeds.is_empty().then(|| "sweep_seeds is empty".to_string()));
        let Some(message) = problem else {
            return Ok(());
        };
        let named = |key: &str| {
            message
                .split(|ch: char| !(ch.is_ascii_alphanumeric() || ch == '_'))
                .any(|w| w == key)
        };
        let line = lines.iter().find(|(_, k)| named(k)).map(|(n, _)| *n);
        Err(ConfigError {
            path: None,
            line,
            message,
        })
    }

    /// Reads and parses a file; diagnostics are prefixed with the path.
    pub fn load(path: &Path) -> std::result::Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: Some(path.to_path_buf()),
            line: None,
            message: e.to_string(),
        })?;
        Self::parse(&text).map_err(|e| ConfigError {
            path: Some(path.to_path_buf()),
            ..e
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self.sample.seed = seed;
        self
    }
}
