use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Precision-recall curve with its average-precision summary.
#[derive(Debug, Clone, PartialEq)]
pub struct PRCurve {
    /// One `(recall, precision)` point per distinct score, highest score
    /// first, so recall is non-decreasing.
    pub points: Vec<(f64, f64)>,
    /// Distinct score thresholds matching `points`.
    pub thresholds: Vec<f64>,
    pub auprc: f64,
}

fn check(scores: &[f64], labels: &[bool]) -> Result<usize> {
    if scores.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::InputDomain(format!("score {i} is not finite")));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::UndefinedMetric(
            "AUPRC is undefined without positive labels".into(),
        ));
    }
    Ok(positives)
}

/// Walks thresholds from the highest score down, calling `f(tp, fp)` once
/// per group of equal scores, after the whole group has entered.
fn sweep(scores: &[f64], labels: &[bool], mut f: impl FnMut(f64, usize, usize)) {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        f(s, tp, fp);
    }
}

/// Average precision: `Σ precision · Δrecall` over descending thresholds,
/// with tied scores entering together.
///
/// ```
/// let ap = televit::evaluation::auprc(&[0.8, 0.6, 0.4], &[true, false, true]).unwrap();
/// assert!((ap - 5.0 / 6.0).abs() < 1e-12);
/// ```
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    Ok(pr_curve(scores, labels)?.auprc)
}

pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<PRCurve> {
    let positives = check(scores, labels)? as f64;
    let mut points = Vec::new();
    let mut thresholds = Vec::new();
    let mut ap = 0.0;
    let mut prev_tp = 0usize;
    sweep(scores, labels, |s, tp, fp| {
        let precision = tp as f64 / (tp + fp) as f64;
        ap += precision * (tp - prev_tp) as f64 / positives;
        prev_tp = tp;
        points.push((tp as f64 / positives, precision));
        thresholds.push(s);
    });
    Ok(PRCurve {
        points,
        thresholds,
        auprc: ap.clamp(0.0, 1.0),
    })
}
