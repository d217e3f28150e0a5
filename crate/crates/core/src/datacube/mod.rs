//! Spatiotemporal datacube: grid, time axis, variables and masks, with
//! preprocessing, normalization, sample extraction and the on-disk store.

mod preprocess;
mod sample;
mod stats;
pub mod store;
mod synth;
mod variables;

use chrono::{Datelike, Duration, NaiveDate};
use indexmap::IndexMap;
use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};

use crate::error::{Error, Result};

pub use preprocess::{coarsen_global, coarsen_mask, positional_fields};
pub use sample::{
    build_samples, enumerate_samples, extract_sample, global_input, land_patches, Sample,
    SampleIndex, SampleLayout, Split, SplitYears,
};
pub use stats::{compute_stats, ChannelStats, NormalizationStats};
pub use synth::{make_synthetic_cube, SynthConfig, SYNTH_DRIVERS, SYNTH_INDICES};
pub use variables::{transform_in_place, transform_variable, Role, Transform, VariableSpec};

/// 8-day steps per calendar year.
pub const STEPS_PER_YEAR: usize = 46;

/// Days between consecutive time steps.
pub const STEP_DAYS: i64 = 8;

/// Lead times evaluated by default, in 8-day steps.
pub const DEFAULT_HORIZONS: [usize; 6] = [0, 1, 2, 4, 8, 16];

/// Cell-centre coordinates of a regular lat/lon grid.
///
/// Row `i` of every field corresponds to `lat[i]`, column `j` to `lon[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub lat: Vec<f64>,
    pub lon: Vec<f64>,
}

impl Grid {
    /// Regular grid with latitude descending from the north pole, matching
    /// the layout of the public SeasFire cube.
    pub fn regular(n_lat: usize, n_lon: usize) -> Self {
        let dlat = 180.0 / n_lat as f64;
        let dlon = 360.0 / n_lon as f64;
        Grid {
            lat: (0..n_lat).map(|i| 90.0 - (i as f64 + 0.5) * dlat).collect(),
            lon: (0..n_lon)
                .map(|j| -180.0 + (j as f64 + 0.5) * dlon)
                .collect(),
        }
    }

    pub fn n_lat(&self) -> usize {
        self.lat.len()
    }

    pub fn n_lon(&self) -> usize {
        self.lon.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.lat.len(), self.lon.len())
    }

    fn validate(&self) -> Result<()> {
        if self.lat.is_empty() || self.lon.is_empty() {
            return Err(Error::config("grid has an empty axis"));
        }
        check_even(&self.lon, "longitude")?;
        check_even(&self.lat, "latitude")?;
        if self.lon.iter().any(|&x| !(-180.0..180.0).contains(&x)) {
            return Err(Error::config("longitude outside [-180, 180)"));
        }
        if self.lat.iter().any(|&x| !(-90.0..=90.0).contains(&x)) {
            return Err(Error::config("latitude outside [-90, 90]"));
        }
        Ok(())
    }
}

fn check_even(axis: &[f64], name: &str) -> Result<()> {
    if axis.len() < 3 {
        return Ok(());
    }
    let step = axis[1] - axis[0];
    let tol = 1e-6 * step.abs().max(1e-12);
    for w in axis.windows(2) {
        if ((w[1] - w[0]) - step).abs() > tol.max(1e-4) {
            return Err(Error::config(format!("{name} cells are not evenly spaced")));
        }
    }
    Ok(())
}

/// The calendar side of the cube: 46 eight-day steps per year, starting on
/// 1 January of `start_year`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeAxis {
    pub start_year: i32,
    pub len: usize,
}

impl TimeAxis {
    pub fn new(start_year: i32, len: usize) -> Result<Self> {
        if len == 0 || !len.is_multiple_of(STEPS_PER_YEAR) {
            return Err(Error::config(format!(
                "time length {len} is not a positive multiple of {STEPS_PER_YEAR}"
            )));
        }
        Ok(TimeAxis { start_year, len })
    }

    pub fn n_years(&self) -> usize {
        self.len / STEPS_PER_YEAR
    }

    pub fn year(&self, t: usize) -> i32 {
        self.start_year + (t / STEPS_PER_YEAR) as i32
    }

    /// Ordinal of the step within its calendar year, in `0..46`.
    pub fn week_of_year(&self, t: usize) -> usize {
        t % STEPS_PER_YEAR
    }

    pub fn date(&self, t: usize) -> NaiveDate {
        let jan1 = NaiveDate::from_ymd_opt(self.year(t), 1, 1).expect("valid year");
        jan1 + Duration::days(STEP_DAYS * self.week_of_year(t) as i64)
    }

    /// Step whose 8-day period contains `date`. The last step of a year
    /// absorbs the remaining days up to 31 December.
    pub fn step_of_date(&self, date: NaiveDate) -> Option<usize> {
        let year_offset = date.year() - self.start_year;
        if year_offset < 0 || year_offset as usize >= self.n_years() {
            return None;
        }
        let week = ((date.ordinal0() as i64) / STEP_DAYS).min(STEPS_PER_YEAR as i64 - 1);
        Some(year_offset as usize * STEPS_PER_YEAR + week as usize)
    }

    /// Steps whose year lies in `first..=last`.
    pub fn steps_in_years(&self, first: i32, last: i32) -> std::ops::Range<usize> {
        let clamp = |y: i32| -> usize {
            let off = (y - self.start_year).clamp(0, self.n_years() as i32);
            off as usize * STEPS_PER_YEAR
        };
        clamp(first)..clamp(last + 1)
    }
}

/// A spatial variable that is either time-varying or static.
///
/// Static fields (population density, say) are broadcast over the time
/// axis, which keeps paper-sized grids affordable in memory.
#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Dense(Array3<f32>),
    Static(Array2<f32>),
}

impl Field {
    pub fn at(&self, t: usize) -> ArrayView2<'_, f32> {
        match self {
            Field::Dense(a) => a.index_axis(Axis(0), t),
            Field::Static(a) => a.view(),
        }
    }

    pub fn spatial_shape(&self) -> (usize, usize) {
        match self {
            Field::Dense(a) => (a.shape()[1], a.shape()[2]),
            Field::Static(a) => a.dim(),
        }
    }

    pub fn time_len(&self) -> Option<usize> {
        match self {
            Field::Dense(a) => Some(a.shape()[0]),
            Field::Static(_) => None,
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Field {
        match self {
            Field::Dense(a) => Field::Dense(a.mapv(f)),
            Field::Static(a) => Field::Static(a.mapv(f)),
        }
    }
}

/// Read-only spatiotemporal datacube.
///
/// Driver variables share one `(time, lat, lon)` shape, index series share
/// the time axis, and the land mask and optional region labels share the
/// grid. All of this is checked once at construction.
#[derive(Debug, Clone)]
pub struct CubeStore {
    grid: Grid,
    time: TimeAxis,
    drivers: IndexMap<String, Field>,
    indices: IndexMap<String, Array1<f32>>,
    burned: Field,
    land: Array2<bool>,
    regions: Option<Array2<i32>>,
}

impl CubeStore {
    pub fn new(
        grid: Grid,
        time: TimeAxis,
        drivers: IndexMap<String, Field>,
        indices: IndexMap<String, Array1<f32>>,
        burned: Field,
        land: Array2<bool>,
        regions: Option<Array2<i32>>,
    ) -> Result<Self> {
        grid.validate()?;
        let shape = grid.shape();
        let check_field = |name: &str, f: &Field| -> Result<()> {
            if f.spatial_shape() != shape {
                return Err(Error::config(format!(
                    "variable {name} has spatial shape {:?}, grid is {shape:?}",
                    f.spatial_shape()
                )));
            }
            if let Some(n) = f.time_len() {
                if n != time.len {
                    return Err(Error::config(format!(
                        "variable {name} has {n} time steps, cube has {}",
                        time.len
                    )));
                }
            }
            Ok(())
        };
        for (name, f) in &drivers {
            check_field(name, f)?;
        }
        check_field("burned area", &burned)?;
        for (name, s) in &indices {
            if s.len() != time.len {
                return Err(Error::config(format!(
                    "index {name} has {} time steps, cube has {}",
                    s.len(),
                    time.len
                )));
            }
        }
        if land.dim() != shape {
            return Err(Error::config("land mask shape does not match grid"));
        }
        if let Some(r) = &regions {
            if r.dim() != shape {
                return Err(Error::config("region mask shape does not match grid"));
            }
        }
        Ok(CubeStore {
            grid,
            time,
            drivers,
            indices,
            burned,
            land,
            regions,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn time(&self) -> TimeAxis {
        self.time
    }

    pub fn drivers(&self) -> &IndexMap<String, Field> {
        &self.drivers
    }

    pub fn driver(&self, name: &str) -> Result<&Field> {
        self.drivers
            .get(name)
            .ok_or_else(|| Error::config(format!("driver variable {name} not in cube")))
    }

    pub fn indices(&self) -> &IndexMap<String, Array1<f32>> {
        &self.indices
    }

    pub fn index(&self, name: &str) -> Result<&Array1<f32>> {
        self.indices
            .get(name)
            .ok_or_else(|| Error::config(format!("index variable {name} not in cube")))
    }

    pub fn burned(&self) -> &Field {
        &self.burned
    }

    pub fn land(&self) -> &Array2<bool> {
        &self.land
    }

    pub fn regions(&self) -> Option<&Array2<i32>> {
        self.regions.as_ref()
    }

    /// Replaces the land mask, e.g. to carve out ocean in a test fixture.
    pub fn with_land_mask(mut self, land: Array2<bool>) -> Result<Self> {
        if land.dim() != self.grid.shape() {
            return Err(Error::config("land mask shape does not match grid"));
        }
        self.land = land;
        Ok(self)
    }

    pub fn with_regions(mut self, regions: Array2<i32>) -> Result<Self> {
        if regions.dim() != self.grid.shape() {
            return Err(Error::config("region mask shape does not match grid"));
        }
        self.regions = Some(regions);
        Ok(self)
    }

    pub fn with_burned(mut self, burned: Field) -> Result<Self> {
        if burned.spatial_shape() != self.grid.shape()
            || burned.time_len().is_some_and(|n| n != self.time.len)
        {
            return Err(Error::config("burned-area field shape does not match cube"));
        }
        self.burned = burned;
        Ok(self)
    }

    /// Restricts the cube to the listed drivers and indices, in the given
    /// order, with each variable's transform applied.
    ///
    /// Everything downstream (statistics, sample extraction) works on the
    /// prepared cube and never re-applies transforms.
    pub fn prepare(&self, drivers: &[VariableSpec], indices: &[VariableSpec]) -> Result<Self> {
        let mut out_drivers = IndexMap::new();
        for spec in drivers {
            let field = self.driver(&spec.name)?;
            let transformed = match field {
                Field::Dense(a) => Field::Dense(transform_variable(a.view(), spec)?),
                Field::Static(a) => Field::Static(transform_variable(a.view(), spec)?),
            };
            out_drivers.insert(spec.name.clone(), transformed);
        }
        let mut out_indices = IndexMap::new();
        for spec in indices {
            let series = self.index(&spec.name)?;
            out_indices.insert(spec.name.clone(), transform_variable(series.view(), spec)?);
        }
        Ok(CubeStore {
            grid: self.grid.clone(),
            time: self.time,
            drivers: out_drivers,
            indices: out_indices,
            burned: self.burned.clone(),
            land: self.land.clone(),
            regions: self.regions.clone(),
        })
    }

    /// [`prepare`](Self::prepare) that consumes the cube and transforms in
    /// place, so a full-size cube is never held twice.
    pub fn into_prepared(
        mut self,
        drivers: &[VariableSpec],
        indices: &[VariableSpec],
    ) -> Result<Self> {
        let mut out_drivers = IndexMap::new();
        for spec in drivers {
            let mut field = self.drivers.shift_remove(&spec.name).ok_or_else(|| {
                Error::config(format!("driver variable {} not in cube", spec.name))
            })?;
            match &mut field {
                Field::Dense(a) => transform_in_place(a, spec)?,
                Field::Static(a) => transform_in_place(a, spec)?,
            }
            out_drivers.insert(spec.name.clone(), field);
        }
        let mut out_indices = IndexMap::new();
        for spec in indices {
            let mut series = self.indices.shift_remove(&spec.name).ok_or_else(|| {
                Error::config(format!("index variable {} not in cube", spec.name))
            })?;
            transform_in_place(&mut series, spec)?;
            out_indices.insert(spec.name.clone(), series);
        }
        self.drivers = out_drivers;
        self.indices = out_indices;
        Ok(self)
    }
}
