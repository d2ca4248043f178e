//! Flat `key = value` run configuration.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ctxkernel::context::{Pooling, Variant};
use ctxkernel::metrics::Protocol;

/// A configuration problem; maps to the usage exit code.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMapTag {
    Linear,
    Poly2,
    Hi,
}

impl FromStr for InitMapTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "linear" => Ok(Self::Linear),
            "poly2" => Ok(Self::Poly2),
            "hi" => Ok(Self::Hi),
            _ => Err(format!("unknown initial map `{s}` (expected linear, poly2 or hi)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Test,
}

impl FromStr for SplitTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Self::Train),
            "test" => Ok(Self::Test),
            _ => Err(format!("unknown split `{s}` (expected train or test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub export: Option<PathBuf>,
    pub radius: usize,
    pub init_map: InitMapTag,
    pub hi_levels: usize,
    /// `None`: the largest training feature.
    pub hi_max: Option<f64>,
    pub l2_normalize: bool,
    pub variant: Variant,
    pub depth: usize,
    pub gamma_factor: f64,
    /// Overrides the factor rule when set.
    pub gamma: Option<f64>,
    pub pooling: Pooling,
    pub svm_cost: f64,
    pub svm_costs: Option<Vec<f64>>,
    pub svm_max_iter: usize,
    pub svm_tol: f64,
    pub learning_rate: f64,
    pub decay: f64,
    pub max_alternations: usize,
    pub tolerance: f64,
    pub clip_norm: Option<f64>,
    pub backtracking: Option<usize>,
    pub seed: u64,
    pub threads: Option<usize>,
    pub ensemble: bool,
    pub ensemble_members: usize,
    pub ensemble_neg_ratio: f64,
    pub protocol: Protocol,
    pub top_n: usize,
    pub eval_split: SplitTag,
    pub gradcheck_images: usize,
    pub gradcheck_step: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            output_dir: PathBuf::from("run"),
            checkpoint: None,
            export: None,
            radius: 1,
            init_map: InitMapTag::Linear,
            hi_levels: 16,
            hi_max: None,
            l2_normalize: false,
            variant: Variant::Layerwise,
            depth: 3,
            gamma_factor: 0.9,
            gamma: None,
            pooling: Pooling::Sum,
            svm_cost: 1.0,
            svm_costs: None,
            svm_max_iter: 10_000,
            svm_tol: 1e-9,
            learning_rate: 1e-3,
            decay: 0.98,
            max_alternations: 100,
            tolerance: 1e-4,
            clip_norm: Some(10.0),
            backtracking: Some(8),
            seed: 0,
            threads: None,
            ensemble: false,
            ensemble_members: 10,
            ensemble_neg_ratio: 3.0,
            protocol: Protocol::ImageClef,
            top_n: 5,
            eval_split: SplitTag::Test,
            gradcheck_images: 4,
            gradcheck_step: 1e-5,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| ConfigError(format!("bad value `{value}` for `{key}`: {e}")))
}

/// `none` disables an optional setting.
fn optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    if value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn boolean(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(ConfigError(format!("bad value `{value}` for `{key}`: expected true or false"))),
    }
}

impl RunConfig {
    /// Reads a config file; relative paths in it resolve against its
    /// directory.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut config = Self::default();
        for (number, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ConfigError(format!("{}:{}: expected `key = value`", path.display(), number + 1))
            })?;
            config
                .set(key.trim(), value.trim(), base)
                .map_err(|e| ConfigError(format!("{}:{}: {e}", path.display(), number + 1)))?;
        }
        Ok(config)
    }

    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<(), ConfigError> {
        let path = || base.join(value);
        match key {
            "manifest" => self.manifest = Some(path()),
            "output_dir" => self.output_dir = path(),
            "checkpoint" => self.checkpoint = Some(path()),
            "export" => self.export = Some(path()),
            "radius" => self.radius = parse(key, value)?,
            "init_map" => self.init_map = parse(key, value)?,
            "hi_levels" => self.hi_levels = parse(key, value)?,
            "hi_max" => self.hi_max = optional(key, value)?,
            "l2_normalize" => self.l2_normalize = boolean(key, value)?,
            "variant" => self.variant = parse(key, value)?,
            "depth" => self.depth = parse(key, value)?,
            "gamma_factor" => self.gamma_factor = parse(key, value)?,
            "gamma" => self.gamma = optional(key, value)?,
            "pooling" => self.pooling = parse(key, value)?,
            "svm_cost" => self.svm_cost = parse(key, value)?,
            "svm_costs" => {
                self.svm_costs = if value == "none" {
                    None
                } else {
                    Some(value.split(',').map(|v| parse(key, v.trim())).collect::<Result<_, _>>()?)
                }
            }
            "svm_max_iter" => self.svm_max_iter = parse(key, value)?,
            "svm_tol" => self.svm_tol = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "decay" => self.decay = parse(key, value)?,
            "max_alternations" => self.max_alternations = parse(key, value)?,
            "tolerance" => self.tolerance = parse(key, value)?,
            "clip_norm" => self.clip_norm = optional(key, value)?,
            "backtracking" => self.backtracking = optional(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "threads" => self.threads = optional(key, value)?,
            "ensemble" => self.ensemble = boolean(key, value)?,
            "ensemble_members" => self.ensemble_members = parse(key, value)?,
            "ensemble_neg_ratio" => self.ensemble_neg_ratio = parse(key, value)?,
            "protocol" => self.protocol = parse(key, value)?,
            "top_n" => self.top_n = parse(key, value)?,
            "eval_split" => self.eval_split = parse(key, value)?,
            "gradcheck_images" => self.gradcheck_images = parse(key, value)?,
            "gradcheck_step" => self.gradcheck_step = parse(key, value)?,
            _ => return Err(ConfigError(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn manifest(&self) -> Result<&Path, ConfigError> {
        self.manifest
            .as_deref()
            .ok_or_else(|| ConfigError("no manifest given (set `manifest` or pass --manifest)".into()))
    }

    /// Checkpoint directory: explicit, else the output directory.
    pub fn checkpoint_dir(&self) -> &Path {
        self.checkpoint.as_deref().unwrap_or(&self.output_dir)
    }
}
