//! Multi-label evaluation. Rates are percentages in `[0, 100]`.
//!
//! Scores are `N x K` (samples by concepts); truth uses `+1`/`-1`.

use std::fmt::Write as _;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Protocol {
    /// MF-S, MF-C and mAP.
    #[default]
    ImageClef,
    /// Top-n keyword recall, precision, F and N+.
    Corel,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::ImageClef => "imageclef",
            Protocol::Corel => "corel",
        }
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "imageclef" => Ok(Protocol::ImageClef),
            "corel" => Ok(Protocol::Corel),
            other => Err(Error::InvalidParameter(format!("unknown protocol `{other}`"))),
        }
    }
}

fn check(scores: &Array2<f64>, truth: &Array2<f64>) -> Result<()> {
    if scores.dim() != truth.dim() {
        return Err(Error::ShapeMismatch(format!(
            "scores {:?} vs truth {:?}",
            scores.dim(),
            truth.dim()
        )));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("scores".into()));
    }
    Ok(())
}

/// F1 from confusion counts; two empty sets agree perfectly.
fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        1.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

fn f1_of<'a>(pred: impl Iterator<Item = bool>, truth: impl Iterator<Item = &'a f64>) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (p, &t) in pred.zip(truth) {
        match (p, t > 0.0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    f1(tp, fp, fn_)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// `(MF-S, MF-C)`: mean F1 over samples and over concepts, predicting a
/// concept when its score exceeds `threshold`.
pub fn mf_scores(scores: &Array2<f64>, truth: &Array2<f64>, threshold: f64) -> Result<(f64, f64)> {
    check(scores, truth)?;
    let per_sample = mean(
        scores
            .rows()
            .into_iter()
            .zip(truth.rows())
            .map(|(s, t)| f1_of(s.iter().map(|&v| v > threshold), t.iter())),
    );
    let per_concept = mean(
        scores
            .columns()
            .into_iter()
            .zip(truth.columns())
            .map(|(s, t)| f1_of(s.iter().map(|&v| v > threshold), t.iter())),
    );
    Ok((100.0 * per_sample, 100.0 * per_concept))
}

/// Samples ordered by descending score, ties by lower index.
fn ranking(scores: ArrayView1<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Non-interpolated average precision of one concept, `None` without
/// positives.
pub fn average_precision(scores: ArrayView1<f64>, truth: ArrayView1<f64>) -> Option<f64> {
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &i) in ranking(scores).iter().enumerate() {
        if truth[i] > 0.0 {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    (hits > 0).then(|| total / hits as f64)
}

/// Mean average precision over concepts with at least one positive.
pub fn map_score(scores: &Array2<f64>, truth: &Array2<f64>) -> Result<f64> {
    check(scores, truth)?;
    let mut aps = Vec::with_capacity(scores.ncols());
    for k in 0..scores.ncols() {
        match average_precision(scores.column(k), truth.column(k)) {
            Some(ap) => aps.push(ap),
            None => log::warn!("concept {k} has no positive sample; excluded from mAP"),
        }
    }
    if aps.is_empty() {
        return Err(Error::NoPositives(Some("any concept".into())));
    }
    Ok(100.0 * mean(aps.into_iter()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorelReport {
    pub recall: f64,
    pub precision: f64,
    pub f: f64,
    /// Keywords with non-zero recall.
    pub n_plus: usize,
    /// Keywords entering the recall and precision means.
    pub keywords: usize,
}

/// Annotates every sample with its `top_n` best keywords (ties by lower
/// index) and scores per keyword. With `skip_absent`, keywords missing from
/// the ground truth stay out of the means.
pub fn corel_metrics(
    scores: &Array2<f64>,
    truth: &Array2<f64>,
    top_n: usize,
    skip_absent: bool,
) -> Result<CorelReport> {
    check(scores, truth)?;
    let k = scores.ncols();
    let mut assigned = vec![0usize; k];
    let mut correct = vec![0usize; k];
    for (s, t) in scores.rows().into_iter().zip(truth.rows()) {
        for &c in ranking(s).iter().take(top_n) {
            assigned[c] += 1;
            if t[c] > 0.0 {
                correct[c] += 1;
            }
        }
    }
    let mut recalls = Vec::with_capacity(k);
    let mut precisions = Vec::with_capacity(k);
    let mut n_plus = 0;
    for c in 0..k {
        let present = truth.column(c).iter().filter(|&&v| v > 0.0).count();
        let recall = if present > 0 {
            correct[c] as f64 / present as f64
        } else {
            0.0
        };
        if recall > 0.0 {
            n_plus += 1;
        }
        if present == 0 && skip_absent {
            continue;
        }
        recalls.push(recall);
        precisions.push(if assigned[c] > 0 {
            correct[c] as f64 / assigned[c] as f64
        } else {
            0.0
        });
    }
    let keywords = recalls.len();
    let recall = 100.0 * mean(recalls.into_iter());
    let precision = 100.0 * mean(precisions.into_iter());
    let f = if recall + precision > 0.0 {
        2.0 * recall * precision / (recall + precision)
    } else {
        0.0
    };
    Ok(CorelReport {
        recall,
        precision,
        f,
        n_plus,
        keywords,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricReport {
    ImageClef { mf_s: f64, mf_c: f64, map: f64 },
    Corel(CorelReport),
}

impl MetricReport {
    fn rows(&self) -> Vec<(&'static str, String)> {
        match self {
            MetricReport::ImageClef { mf_s, mf_c, map } => vec![
                ("MF-S", format!("{mf_s:.2}")),
                ("MF-C", format!("{mf_c:.2}")),
                ("mAP", format!("{map:.2}")),
            ],
            MetricReport::Corel(r) => vec![
                ("R", format!("{:.2}", r.recall)),
                ("P", format!("{:.2}", r.precision)),
                ("F", format!("{:.2}", r.f)),
                ("N+", r.n_plus.to_string()),
            ],
        }
    }

    /// Aligned two-column table.
    pub fn to_table(&self) -> String {
        let rows = self.rows();
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (key, value) in rows {
            let _ = writeln!(out, "{key:<width$}  {value:>8}");
        }
        out
    }

    /// `key=value` lines with full precision.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        match self {
            MetricReport::ImageClef { mf_s, mf_c, map } => {
                let _ = writeln!(out, "protocol=imageclef\nmf_s={mf_s}\nmf_c={mf_c}\nmap={map}");
            }
            MetricReport::Corel(r) => {
                let _ = writeln!(
                    out,
                    "protocol=corel\nrecall={}\nprecision={}\nf={}\nn_plus={}\nkeywords={}",
                    r.recall, r.precision, r.f, r.n_plus, r.keywords
                );
            }
        }
        out
    }
}

/// Runs `protocol` on a score matrix.
pub fn evaluate(protocol: Protocol, scores: &Array2<f64>, truth: &Array2<f64>, top_n: usize) -> Result<MetricReport> {
    Ok(match protocol {
        Protocol::ImageClef => {
            let (mf_s, mf_c) = mf_scores(scores, truth, 0.0)?;
            let map = map_score(scores, truth)?;
            MetricReport::ImageClef { mf_s, mf_c, map }
        }
        Protocol::Corel => MetricReport::Corel(corel_metrics(scores, truth, top_n, true)?),
    })
}
