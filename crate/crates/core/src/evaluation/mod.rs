//! Skill metrics: tie-grouped average precision, the week-of-year
//! climatology baseline and per-region reports.

mod auprc;
mod climatology;
mod report;

use ndarray::{ArrayView2, Zip};

pub use auprc::{auprc, pr_curve, PRCurve};
pub use climatology::{build_climatology, predict_climatology, ClimatologyTable};
pub use report::{
    parse_report_tsv, regional_report, report_tsv, score_histogram, write_pr_curve, write_report,
    Histogram, RegionMask, RegionScore, ReportRow, GFED_REGIONS, GLOBAL_REGION,
};

use crate::datacube::{CubeStore, Sample};
use crate::decoder::PredictionMap;
use crate::error::{Error, Result};
use crate::model::TeleVit;
use crate::training::SampleSource;

/// Scores, labels and region labels of every evaluated cell.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalSet {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
    pub regions: Vec<i32>,
}

impl EvalSet {
    /// Appends the valid cells of `map`; `target` is positive where `> 0`.
    pub fn add(
        &mut self,
        map: &PredictionMap,
        target: ArrayView2<'_, f64>,
        regions: ArrayView2<'_, i32>,
    ) -> Result<()> {
        if target.dim() != map.shape() || regions.dim() != map.shape() {
            return Err(Error::contract(
                "prediction, target and region shapes differ",
            ));
        }
        Zip::from(&map.scores)
            .and(&map.valid)
            .and(&target)
            .and(&regions)
            .for_each(|&s, &v, &y, &r| {
                if v {
                    self.scores.push(s);
                    self.labels.push(y > 0.0);
                    self.regions.push(r);
                }
            });
        Ok(())
    }

    pub fn extend(&mut self, other: EvalSet) {
        self.scores.extend(other.scores);
        self.labels.extend(other.labels);
        self.regions.extend(other.regions);
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn auprc(&self) -> Result<f64> {
        auprc(&self.scores, &self.labels)
    }

    pub fn regional(&self) -> Result<Vec<RegionScore>> {
        regional_report(&self.scores, &self.labels, &self.regions)
    }

    pub fn report(&self, model: &str, horizon: usize) -> Result<Vec<ReportRow>> {
        Ok(ReportRow::from_scores(model, horizon, self.regional()?))
    }
}

fn sample_window<'a>(
    regions: &'a RegionMask,
    sample: &Sample,
    patch: usize,
) -> ArrayView2<'a, i32> {
    let (r0, c0) = (sample.index.row * patch, sample.index.col * patch);
    regions.window(r0..r0 + patch, c0..c0 + patch)
}

/// Model forecasts on the land cells of every sample.
pub fn evaluate_model<S: SampleSource + ?Sized>(
    model: &TeleVit,
    samples: &S,
    regions: &RegionMask,
) -> Result<EvalSet> {
    let patch = model.config.local_shape[1];
    let mut set = EvalSet::default();
    for i in 0..samples.len() {
        let s = samples.get(i)?;
        let s = s.as_ref();
        let mut map = model.predict(s.input())?;
        map.valid = s.land.clone();
        set.add(
            &map,
            s.y.index_axis(ndarray::Axis(0), 0),
            sample_window(regions, s, patch),
        )?;
    }
    Ok(set)
}

/// Climatology forecasts for the target step of every sample, on the same
/// cells [`evaluate_model`] scores.
pub fn evaluate_climatology<S: SampleSource + ?Sized>(
    table: &ClimatologyTable,
    cube: &CubeStore,
    samples: &S,
    regions: &RegionMask,
) -> Result<EvalSet> {
    let mut set = EvalSet::default();
    let time = cube.time();
    for i in 0..samples.len() {
        let s = samples.get(i)?;
        let s = s.as_ref();
        let patch = s.land.nrows();
        let (r0, c0) = (s.index.row * patch, s.index.col * patch);
        let t = s.index.t + s.index.horizon;
        if t >= time.len {
            return Err(Error::contract(format!("target step {t} outside the cube")));
        }
        let week = table.week(time.week_of_year(t));
        let map = PredictionMap {
            scores: week
                .slice(ndarray::s![r0..r0 + patch, c0..c0 + patch])
                .to_owned(),
            logits: None,
            valid: s.land.clone(),
        };
        set.add(
            &map,
            s.y.index_axis(ndarray::Axis(0), 0),
            sample_window(regions, s, patch),
        )?;
    }
    Ok(set)
}
