//! Checkpoint directories: context export, SVM model, optional ensemble,
//! metadata and the per-alternation log.
//!
//! ```text
//! <dir>/context.txt   context matrices
//! <dir>/model.bin     SVM weights and duals
//! <dir>/ensemble.bin  only when ensembles were trained
//! <dir>/meta.txt      initial-map settings and shapes
//! <dir>/log.txt       one `alt <i> loss <v> dP <v> dW <v>` line per alternation
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::context::{read_context, write_context, ContextParams};
use crate::error::{Error, Result};
use crate::featmap::{InitMapConfig, InitMapKind, RangePolicy};
use crate::svm::{read_ensemble, write_ensemble, EnsembleModel, SvmModel};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ContextParams,
    pub model: SvmModel,
    pub ensemble: Option<EnsembleModel>,
    pub init: InitMapConfig,
    pub seed: u64,
    pub log: Vec<String>,
}

impl Checkpoint {
    fn meta(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "version {CHECKPOINT_VERSION}");
        let _ = writeln!(out, "init_map {}", self.init.kind.name());
        if let InitMapKind::Hi { levels, max_value } = self.init.kind {
            let _ = writeln!(out, "hi_levels {levels}");
            let _ = writeln!(out, "hi_max {max_value:?}");
        }
        let _ = writeln!(out, "l2_normalize {}", self.init.l2_normalize);
        let range = match self.init.range {
            RangePolicy::Strict => "strict",
            RangePolicy::ClipAbove => "clip",
        };
        let _ = writeln!(out, "range {range}");
        let _ = writeln!(out, "concepts {}", self.model.concepts());
        let _ = writeln!(out, "dim {}", self.model.dim());
        let _ = writeln!(out, "seed {}", self.seed);
        out
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_context(&dir.join("context.txt"), &self.params)?;
        self.model.save(&dir.join("model.bin"))?;
        let ensemble_path = dir.join("ensemble.bin");
        match &self.ensemble {
            Some(e) => write_ensemble(&ensemble_path, e)?,
            None if ensemble_path.exists() => fs::remove_file(&ensemble_path)?,
            None => {}
        }
        fs::write(dir.join("meta.txt"), self.meta())?;
        let mut log = self.log.join("\n");
        if !log.is_empty() {
            log.push('\n');
        }
        fs::write(dir.join("log.txt"), log)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::MissingFile(dir.to_path_buf()));
        }
        let meta_path = dir.join("meta.txt");
        let meta = fs::read_to_string(&meta_path).map_err(|_| Error::MissingFile(meta_path.clone()))?;
        let bad = |message: String| Error::Format {
            path: meta_path.clone(),
            message,
        };
        let mut fields = std::collections::HashMap::new();
        for line in meta.lines().filter(|l| !l.trim().is_empty()) {
            let (key, value) = line
                .split_once(' ')
                .ok_or_else(|| bad(format!("malformed line `{line}`")))?;
            fields.insert(key, value.trim());
        }
        let get = |key: &str| fields.get(key).copied().ok_or_else(|| bad(format!("missing `{key}`")));
        let parse_err = |key: &str| bad(format!("bad value for `{key}`"));

        let version: u32 = get("version")?.parse().map_err(|_| parse_err("version"))?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let kind = match get("init_map")? {
            "hi" => InitMapKind::Hi {
                levels: get("hi_levels")?.parse().map_err(|_| parse_err("hi_levels"))?,
                max_value: get("hi_max")?.parse().map_err(|_| parse_err("hi_max"))?,
            },
            other => other.parse()?,
        };
        let range = match get("range")? {
            "strict" => RangePolicy::Strict,
            "clip" => RangePolicy::ClipAbove,
            _ => return Err(parse_err("range")),
        };
        let init = InitMapConfig {
            kind,
            l2_normalize: get("l2_normalize")?.parse().map_err(|_| parse_err("l2_normalize"))?,
            range,
        };
        let seed = get("seed")?.parse().map_err(|_| parse_err("seed"))?;
        let concepts: usize = get("concepts")?.parse().map_err(|_| parse_err("concepts"))?;
        let dim: usize = get("dim")?.parse().map_err(|_| parse_err("dim"))?;

        let params = read_context(&dir.join("context.txt"))?;
        let model = SvmModel::load(&dir.join("model.bin"))?;
        if model.concepts() != concepts || model.dim() != dim {
            return Err(Error::CheckpointMismatch(format!(
                "model is {}x{}, metadata says {concepts}x{dim}",
                model.concepts(),
                model.dim()
            )));
        }
        let ensemble_path = dir.join("ensemble.bin");
        let ensemble = if ensemble_path.exists() {
            Some(read_ensemble(&ensemble_path)?)
        } else {
            None
        };
        let log = match fs::read_to_string(dir.join("log.txt")) {
            Ok(text) => text.lines().map(str::to_string).collect(),
            Err(_) => Vec::new(),
        };
        Ok(Self {
            params,
            model,
            ensemble,
            init,
            seed,
            log,
        })
    }
}
