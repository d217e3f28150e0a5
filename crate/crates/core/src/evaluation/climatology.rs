use ndarray::{s, Array2, Array3};

use crate::datacube::{CubeStore, STEPS_PER_YEAR};
use crate::decoder::PredictionMap;
use crate::error::{Error, Result};

/// Per-cell, per-week-of-year burn frequency over a set of years.
#[derive(Debug, Clone, PartialEq)]
pub struct ClimatologyTable {
    /// `lat × lon × 46`, values in `[0, 1]`.
    pub freq: Array3<f64>,
    pub years: Vec<i32>,
}

/// Fraction of `years` in which each cell burned in each week of the year.
pub fn build_climatology(cube: &CubeStore, years: &[i32]) -> Result<ClimatologyTable> {
    if years.is_empty() {
        return Err(Error::config("climatology needs at least one year"));
    }
    let time = cube.time();
    let (h, w) = cube.grid().shape();
    let mut counts = Array3::<f64>::zeros((h, w, STEPS_PER_YEAR));
    let mut seen = Vec::with_capacity(years.len());
    for &year in years {
        if seen.contains(&year) {
            return Err(Error::config(format!("year {year} listed twice")));
        }
        let steps = time.steps_in_years(year, year);
        if steps.len() != STEPS_PER_YEAR {
            return Err(Error::config(format!("year {year} is not in the cube")));
        }
        for t in steps {
            let week = time.week_of_year(t);
            let burned = cube.burned().at(t);
            counts
                .slice_mut(s![.., .., week])
                .zip_mut_with(&burned, |c, &b| {
                    if b > 0.0 {
                        *c += 1.0;
                    }
                });
        }
        seen.push(year);
    }
    seen.sort_unstable();
    counts /= years.len() as f64;
    Ok(ClimatologyTable {
        freq: counts,
        years: seen,
    })
}

impl ClimatologyTable {
    /// Global frequency map for week-of-year `week`.
    pub fn week(&self, week: usize) -> Array2<f64> {
        self.freq
            .slice(s![.., .., week % STEPS_PER_YEAR])
            .to_owned()
    }

    /// Forecast for the cube's time step `t`, valid on land.
    pub fn predict(&self, cube: &CubeStore, t: usize) -> Result<PredictionMap> {
        let (h, w, _) = self.freq.dim();
        if cube.grid().shape() != (h, w) {
            return Err(Error::contract("climatology grid does not match the cube"));
        }
        if t >= cube.time().len {
            return Err(Error::contract(format!("time step {t} outside the cube")));
        }
        Ok(PredictionMap {
            scores: self.week(cube.time().week_of_year(t)),
            logits: None,
            valid: cube.land().clone(),
        })
    }
}

/// Climatology forecast for time step `t`.
pub fn predict_climatology(
    table: &ClimatologyTable,
    cube: &CubeStore,
    t: usize,
) -> Result<PredictionMap> {
    table.predict(cube, t)
}
