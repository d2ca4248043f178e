//! Dataset manifests and binary cell-feature files.
//!
//! A manifest is line-oriented text:
//!
//! ```text
//! # comment
//! grid 3 3
//! d0 8
//! concepts sky,sea
//! sample img001 train feats/img001.cknf +-
//! ```
//!
//! Feature paths are resolved against the manifest's directory. Each feature
//! file is the magic `CKNF`, two little-endian `u64` (rows = d0, cols = n),
//! then `rows * cols` little-endian `f64` in column-major order.

use std::fmt;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::GridSpec;

pub const FEATURE_MAGIC: &[u8; 4] = b"CKNF";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (expected train or test)")),
        }
    }
}

/// One image: a `d0 x n` cell-feature matrix and a ±1 label per concept.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub id: String,
    pub split: Split,
    pub features: Array2<f64>,
    pub labels: Vec<i8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub grid: GridSpec,
    pub d0: usize,
    pub concept_names: Vec<String>,
    pub samples: Vec<ImageSample>,
}

impl Dataset {
    pub fn new(grid: GridSpec, d0: usize, concept_names: Vec<String>) -> Self {
        Self {
            grid,
            d0,
            concept_names,
            samples: Vec::new(),
        }
    }

    /// Number of concepts `K`.
    pub fn concepts(&self) -> usize {
        self.concept_names.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Appends a sample after checking it against the dataset shape.
    pub fn push(&mut self, sample: ImageSample) -> Result<()> {
        self.check_sample(&sample)?;
        self.samples.push(sample);
        Ok(())
    }

    fn check_sample(&self, sample: &ImageSample) -> Result<()> {
        let (rows, cols) = sample.features.dim();
        if rows != self.d0 || cols != self.grid.cells() {
            return Err(Error::DimensionMismatch {
                path: PathBuf::from(&sample.id),
                expected_rows: self.d0,
                expected_cols: self.grid.cells(),
                rows,
                cols,
            });
        }
        if sample.labels.len() != self.concepts() {
            return Err(Error::LabelArity {
                context: format!("sample {}", sample.id),
                expected: self.concepts(),
                found: sample.labels.len(),
            });
        }
        if let Some(bad) = sample.labels.iter().find(|&&y| y != 1 && y != -1) {
            return Err(Error::BadValue {
                context: format!("sample {}", sample.id),
                message: format!("label {bad} is not +1 or -1"),
            });
        }
        if sample.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::BadValue {
                context: format!("sample {}", sample.id),
                message: "non-finite feature value".into(),
            });
        }
        Ok(())
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter_map(|(i, s)| (s.split == split).then_some(i))
            .collect()
    }

    /// `len(indices) x K` matrix of ±1 labels as reals.
    pub fn label_matrix(&self, indices: &[usize]) -> Array2<f64> {
        let k = self.concepts();
        Array2::from_shape_fn((indices.len(), k), |(p, c)| {
            f64::from(self.samples[indices[p]].labels[c])
        })
    }

    /// Largest feature value over a split, or 0 for an empty split.
    pub fn max_feature(&self, split: Split) -> f64 {
        self.samples
            .iter()
            .filter(|s| s.split == split)
            .flat_map(|s| s.features.iter().copied())
            .fold(0.0, f64::max)
    }

    /// Writes the manifest plus one feature file per sample into `dir`.
    /// Returns the manifest path.
    pub fn write(&self, dir: &Path, manifest_name: &str) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let mut text = String::new();
        text.push_str(&format!("grid {} {}\n", self.grid.width(), self.grid.height()));
        text.push_str(&format!("d0 {}\n", self.d0));
        text.push_str(&format!("concepts {}\n", self.concept_names.join(",")));
        for sample in &self.samples {
            let file = format!("{}.cknf", sample.id);
            write_features(&dir.join(&file), &sample.features)?;
            let labels: String = sample
                .labels
                .iter()
                .map(|&y| if y > 0 { '+' } else { '-' })
                .collect();
            text.push_str(&format!(
                "sample {} {} {} {}\n",
                sample.id, sample.split, file, labels
            ));
        }
        let path = dir.join(manifest_name);
        fs::write(&path, text)?;
        Ok(path)
    }
}

struct SampleLine {
    line: usize,
    id: String,
    split: Split,
    file: PathBuf,
    labels: Vec<i8>,
}

/// Loads a manifest and every feature file it references, in manifest order.
pub fn load_dataset(manifest: &Path) -> Result<Dataset> {
    let text = match fs::read_to_string(manifest) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Err(Error::MissingFile(manifest.to_path_buf()))
        }
        Err(e) => return Err(e.into()),
    };
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let err = |line: usize, message: String| Error::Manifest {
        path: manifest.to_path_buf(),
        line,
        message,
    };

    let mut grid = None;
    let mut d0 = None;
    let mut concepts: Option<Vec<String>> = None;
    let mut lines = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = content.split_whitespace().collect();
        match tokens[0] {
            "grid" => {
                if tokens.len() != 3 {
                    return Err(err(line_no, "expected `grid W H`".into()));
                }
                let w = parse_usize(tokens[1]).map_err(|m| err(line_no, m))?;
                let h = parse_usize(tokens[2]).map_err(|m| err(line_no, m))?;
                grid = Some(GridSpec::new(w, h).map_err(|e| err(line_no, e.to_string()))?);
            }
            "d0" => {
                if tokens.len() != 2 {
                    return Err(err(line_no, "expected `d0 D`".into()));
                }
                d0 = Some(parse_usize(tokens[1]).map_err(|m| err(line_no, m))?);
            }
            "concepts" => {
                let names: Vec<String> = match tokens.len() {
                    1 => Vec::new(),
                    2 => tokens[1]
                        .split(',')
                        .filter(|s| !s.is_empty())
                        .map(str::to_string)
                        .collect(),
                    _ => return Err(err(line_no, "concept names must be comma-separated without spaces".into())),
                };
                concepts = Some(names);
            }
            "sample" => {
                if tokens.len() != 5 {
                    return Err(err(
                        line_no,
                        "expected `sample <id> <split> <feature_file> <labels>`".into(),
                    ));
                }
                let split = tokens[2].parse().map_err(|m| err(line_no, m))?;
                let labels = tokens[4]
                    .chars()
                    .map(|ch| match ch {
                        '+' => Ok(1),
                        '-' => Ok(-1),
                        other => Err(Error::BadValue {
                            context: format!("{}:{line_no}", manifest.display()),
                            message: format!("label character `{other}` is not + or -"),
                        }),
                    })
                    .collect::<Result<Vec<i8>>>()?;
                lines.push(SampleLine {
                    line: line_no,
                    id: tokens[1].to_string(),
                    split,
                    file: base.join(tokens[3]),
                    labels,
                });
            }
            other => return Err(err(line_no, format!("unknown directive `{other}`"))),
        }
    }

    if !lines.is_empty() && (grid.is_none() || d0.is_none() || concepts.is_none()) {
        return Err(err(
            lines[0].line,
            "samples require `grid`, `d0` and `concepts` headers".into(),
        ));
    }
    let grid = match grid {
        Some(g) => g,
        None => GridSpec::new(1, 1)?,
    };
    let mut dataset = Dataset::new(grid, d0.unwrap_or(0), concepts.unwrap_or_default());

    for line in &lines {
        if line.labels.len() != dataset.concepts() {
            return Err(Error::LabelArity {
                context: format!("{}:{}", manifest.display(), line.line),
                expected: dataset.concepts(),
                found: line.labels.len(),
            });
        }
    }

    let matrices: Vec<Array2<f64>> = lines
        .par_iter()
        .map(|line| {
            let m = read_features(&line.file)?;
            if m.dim() != (dataset.d0, grid.cells()) {
                return Err(Error::DimensionMismatch {
                    path: line.file.clone(),
                    expected_rows: dataset.d0,
                    expected_cols: grid.cells(),
                    rows: m.nrows(),
                    cols: m.ncols(),
                });
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::BadValue {
                    context: line.file.display().to_string(),
                    message: "non-finite feature value".into(),
                });
            }
            Ok(m)
        })
        .collect::<Result<_>>()?;

    for (line, features) in lines.into_iter().zip(matrices) {
        dataset.push(ImageSample {
            id: line.id,
            split: line.split,
            features,
            labels: line.labels,
        })?;
    }
    Ok(dataset)
}

fn parse_usize(token: &str) -> std::result::Result<usize, String> {
    token
        .parse()
        .map_err(|_| format!("`{token}` is not a non-negative integer"))
}

pub fn write_features(path: &Path, features: &Array2<f64>) -> Result<()> {
    let (rows, cols) = features.dim();
    let mut buf = Vec::with_capacity(20 + 8 * rows * cols);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&(rows as u64).to_le_bytes());
    buf.extend_from_slice(&(cols as u64).to_le_bytes());
    for c in 0..cols {
        for r in 0..rows {
            buf.extend_from_slice(&features[[r, c]].to_le_bytes());
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<Array2<f64>> {
    let mut file = match fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Err(Error::MissingFile(path.to_path_buf()))
        }
        Err(e) => return Err(e.into()),
    };
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    let bad = |message: &str| Error::Format {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    if bytes.len() < 20 || &bytes[..4] != FEATURE_MAGIC {
        return Err(bad("missing CKNF header"));
    }
    let rows = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|e| e.checked_mul(8))
        .ok_or_else(|| bad("header dimensions overflow"))?;
    if bytes.len() - 20 != expected {
        return Err(bad(&format!(
            "payload holds {} bytes, header declares {rows}x{cols}",
            bytes.len() - 20
        )));
    }
    let values: Vec<f64> = bytes[20..]
        .chunks_exact(8)
        .map(|ch| f64::from_le_bytes(ch.try_into().unwrap()))
        .collect();
    // column-major payload
    Ok(Array2::from_shape_vec((cols, rows), values)
        .expect("length checked above")
        .reversed_axes()
        .as_standard_layout()
        .to_owned())
}
