use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::auprc::{auprc, PRCurve};
use crate::decoder::PredictionMap;
use crate::error::{Error, Result};

/// The 14 GFED regions, in label order starting at 1.
pub const GFED_REGIONS: [&str; 14] = [
    "BONA", "TENA", "CEAM", "NHSA", "SHSA", "EURO", "MIDE", "NHAF", "SHAF", "BOAS", "CEAS", "SEAS",
    "EQAS", "AUST",
];

/// Name of the row covering every evaluated cell.
pub const GLOBAL_REGION: &str = "global";

/// Per-cell region labels; 0 means unlabeled, `k` means `GFED_REGIONS[k-1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    labels: Array2<i32>,
}

impl RegionMask {
    pub fn new(labels: Array2<i32>) -> Result<Self> {
        if let Some(bad) = labels
            .iter()
            .find(|&&l| l < 0 || l as usize > GFED_REGIONS.len())
        {
            return Err(Error::InputDomain(format!(
                "region label {bad} out of range"
            )));
        }
        Ok(RegionMask { labels })
    }

    /// Mask with every cell unlabeled.
    pub fn unlabeled(shape: (usize, usize)) -> Self {
        RegionMask {
            labels: Array2::zeros(shape),
        }
    }

    pub fn labels(&self) -> &Array2<i32> {
        &self.labels
    }

    pub fn name(label: i32) -> Option<&'static str> {
        (label >= 1)
            .then(|| GFED_REGIONS.get(label as usize - 1).copied())
            .flatten()
    }

    pub fn window(
        &self,
        rows: std::ops::Range<usize>,
        cols: std::ops::Range<usize>,
    ) -> ArrayView2<'_, i32> {
        self.labels.slice(s![rows, cols])
    }
}

/// AUPRC of one report cell, `None` when there are no positives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionScore {
    pub region: String,
    pub auprc: Option<f64>,
    pub n_pos: usize,
    pub n_total: usize,
}

/// Global AUPRC followed by one entry per GFED region, in label order.
pub fn regional_report(
    scores: &[f64],
    labels: &[bool],
    regions: &[i32],
) -> Result<Vec<RegionScore>> {
    if scores.len() != labels.len() || scores.len() != regions.len() {
        return Err(Error::contract(format!(
            "misaligned inputs: {} scores, {} labels, {} region labels",
            scores.len(),
            labels.len(),
            regions.len()
        )));
    }
    let score_of = |keep: &dyn Fn(usize) -> bool, name: &str| -> Result<RegionScore> {
        let (mut s, mut l) = (Vec::new(), Vec::new());
        for i in (0..scores.len()).filter(|&i| keep(i)) {
            s.push(scores[i]);
            l.push(labels[i]);
        }
        let n_pos = l.iter().filter(|&&v| v).count();
        let value = match auprc(&s, &l) {
            Ok(v) => Some(v),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(RegionScore {
            region: name.to_string(),
            auprc: value,
            n_pos,
            n_total: s.len(),
        })
    };
    let mut out = vec![score_of(&|_| true, GLOBAL_REGION)?];
    for (k, name) in GFED_REGIONS.iter().enumerate() {
        let label = k as i32 + 1;
        out.push(score_of(&|i| regions[i] == label, name)?);
    }
    Ok(out)
}

/// Fixed-width histogram of the valid scores of a map over `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub fn score_histogram(map: &PredictionMap, bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::config("histogram needs at least one bin"));
    }
    let mut counts = vec![0usize; bins];
    for (&s, &v) in map.scores.iter().zip(&map.valid) {
        if v && s.is_finite() {
            let b = ((s.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
            counts[b] += 1;
        }
    }
    Ok(Histogram {
        edges: (0..=bins).map(|i| i as f64 / bins as f64).collect(),
        counts,
    })
}

/// One line of a metric report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub horizon: usize,
    pub region: String,
    pub auprc: Option<f64>,
    pub n_pos: usize,
    pub n_total: usize,
}

impl ReportRow {
    pub fn from_scores(model: &str, horizon: usize, scores: Vec<RegionScore>) -> Vec<ReportRow> {
        scores
            .into_iter()
            .map(|r| ReportRow {
                model: model.to_string(),
                horizon,
                region: r.region,
                auprc: r.auprc,
                n_pos: r.n_pos,
                n_total: r.n_total,
            })
            .collect()
    }
}

pub fn report_tsv(rows: &[ReportRow]) -> String {
    let mut out = String::from("model\thorizon\tregion\tauprc\tn_pos\tn_total\n");
    for r in rows {
        let value = r.auprc.map_or("null".to_string(), |v| format!("{v:.6}"));
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.model, r.horizon, r.region, value, r.n_pos, r.n_total
        );
    }
    out
}

pub fn parse_report_tsv(text: &str) -> Result<Vec<ReportRow>> {
    let bad = |line: usize, what: &str| Error::InputDomain(format!("report line {line}: {what}"));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "model\thorizon\tregion\tauprc\tn_pos\tn_total")) => {}
        _ => return Err(bad(1, "missing header")),
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 6 {
                return Err(bad(i + 1, "expected 6 fields"));
            }
            let num = |s: &str| s.parse::<usize>().map_err(|_| bad(i + 1, "bad count"));
            Ok(ReportRow {
                model: f[0].to_string(),
                horizon: num(f[1])?,
                region: f[2].to_string(),
                auprc: match f[3] {
                    "null" => None,
                    v => Some(v.parse().map_err(|_| bad(i + 1, "bad auprc"))?),
                },
                n_pos: num(f[4])?,
                n_total: num(f[5])?,
            })
        })
        .collect()
}

pub fn write_report(rows: &[ReportRow], path: &Path) -> Result<()> {
    fs::write(path, report_tsv(rows)).map_err(|e| Error::io(path, e))
}

/// Two-column `recall\tprecision` table.
pub fn write_pr_curve(curve: &PRCurve, path: &Path) -> Result<()> {
    let mut out = String::from("recall\tprecision\n");
    for (r, p) in &curve.points {
        let _ = writeln!(out, "{r}\t{p}");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
