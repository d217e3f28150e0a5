use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::{s, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use super::preprocess::{coarsen_axis, coarsen_global, positional_fields};
use super::{CubeStore, NormalizationStats};
use crate::error::{Error, Result};

/// How samples are cut out of the cube.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleLayout {
    /// Side of the square local window, in grid cells.
    pub patch_size: usize,
    /// Per-axis coarsening factor for the global view.
    pub coarsen_factor: usize,
    /// Number of index time points per sample.
    pub index_steps: usize,
    /// Spacing of index time points, in 8-day steps (4 steps ~ one month).
    pub index_stride: usize,
    /// Append `[cos lon, sin lon, cos lat, sin lat]` channels.
    pub positional: bool,
}

impl Default for SampleLayout {
    fn default() -> Self {
        SampleLayout {
            patch_size: 80,
            coarsen_factor: 4,
            index_steps: 10,
            index_stride: 4,
            positional: true,
        }
    }
}

impl SampleLayout {
    /// `(rows, cols)` of the local patch grid.
    pub fn patch_grid(&self, cube: &CubeStore) -> Result<(usize, usize)> {
        let (h, w) = cube.grid().shape();
        let p = self.patch_size;
        if p == 0 || h % p != 0 || w % p != 0 {
            return Err(Error::config(format!(
                "grid {h}x{w} is not divisible by patch size {p}"
            )));
        }
        Ok((h / p, w / p))
    }

    /// Channel names of the local and global inputs.
    pub fn channel_names(&self, cube: &CubeStore) -> Vec<String> {
        let mut names: Vec<String> = cube.drivers().keys().cloned().collect();
        if self.positional {
            names.extend(["cos_lon", "sin_lon", "cos_lat", "sin_lat"].map(String::from));
        }
        names
    }

    pub fn n_channels(&self, cube: &CubeStore) -> usize {
        cube.drivers().len() + if self.positional { 4 } else { 0 }
    }

    /// Steps of history the index window needs before `t`.
    pub fn history(&self) -> usize {
        self.index_steps * self.index_stride
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SampleIndex {
    pub t: usize,
    pub row: usize,
    pub col: usize,
    pub horizon: usize,
}

/// One training example, standardized.
///
/// `x_g` is laid out `channels × lon × lat` (360 × 180 for the 1° globe)
/// and shared between samples of the same time step.
#[derive(Debug, Clone)]
pub struct Sample {
    pub x_l: Array3<f64>,
    pub x_g: Arc<Array3<f64>>,
    pub x_i: Array2<f64>,
    /// Binary target, `1 × H × W`.
    pub y: Array3<f64>,
    /// Land cells of the local window.
    pub land: Array2<bool>,
    pub index: SampleIndex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Inclusive year ranges of the three splits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitYears {
    pub train: [i32; 2],
    pub val: [i32; 2],
    pub test: [i32; 2],
}

impl Default for SplitYears {
    fn default() -> Self {
        SplitYears {
            train: [2003, 2017],
            val: [2018, 2018],
            test: [2019, 2019],
        }
    }
}

impl SplitYears {
    pub fn years(&self, split: Split) -> [i32; 2] {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        for r in &all {
            if r[0] > r[1] {
                return Err(Error::config(format!("empty year range {r:?}")));
            }
        }
        for (i, a) in all.iter().enumerate() {
            for b in &all[i + 1..] {
                if a[0] <= b[1] && b[0] <= a[1] {
                    return Err(Error::config(format!(
                        "split year ranges {a:?} and {b:?} overlap"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Patches of the local grid that contain at least one land cell, in
/// row-major order.
pub fn land_patches(cube: &CubeStore, layout: &SampleLayout) -> Result<Vec<(usize, usize)>> {
    let (rows, cols) = layout.patch_grid(cube)?;
    let p = layout.patch_size;
    let land = cube.land();
    let mut out = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let window = land.slice(s![r * p..(r + 1) * p, c * p..(c + 1) * p]);
            if window.iter().any(|&l| l) {
                out.push((r, c));
            }
        }
    }
    Ok(out)
}

/// Sample indices of `split` at lead time `horizon`, ordered by time, then
/// patch row, then patch column.
///
/// A sample belongs to the split of its input time `t`. Steps whose index
/// window would start before the cube, or whose target falls past its end,
/// are skipped and logged.
pub fn enumerate_samples(
    cube: &CubeStore,
    layout: &SampleLayout,
    splits: &SplitYears,
    split: Split,
    horizon: usize,
) -> Result<Vec<SampleIndex>> {
    splits.validate()?;
    let [first, last] = splits.years(split);
    let steps = cube.time().steps_in_years(first, last);
    let patches = land_patches(cube, layout)?;
    let n_time = cube.time().len;
    let mut out = Vec::new();
    let (mut no_history, mut no_target) = (0usize, 0usize);
    for t in steps {
        if t < layout.history() {
            no_history += 1;
            continue;
        }
        if t + horizon >= n_time {
            no_target += 1;
            continue;
        }
        out.extend(patches.iter().map(|&(row, col)| SampleIndex {
            t,
            row,
            col,
            horizon,
        }));
    }
    if no_history + no_target > 0 {
        log::warn!(
            "{split:?} h={horizon}: skipped {no_history} steps whose index window starts \
             before the cube and {no_target} steps whose target lies past its end"
        );
    }
    Ok(out)
}

/// Standardized global view at step `t`, laid out `channels × lon × lat`.
pub fn global_input(
    cube: &CubeStore,
    stats: &NormalizationStats,
    layout: &SampleLayout,
    t: usize,
) -> Result<Array3<f64>> {
    let grid = cube.grid();
    let f = layout.coarsen_factor;
    let (h, w) = grid.shape();
    if f == 0 || h % f != 0 || w % f != 0 {
        return Err(Error::config(format!(
            "grid {h}x{w} is not divisible by coarsening factor {f}"
        )));
    }
    let (hc, wc) = (h / f, w / f);
    let mut out = Array3::zeros((layout.n_channels(cube), wc, hc));
    for (c, field) in cube.drivers().values().enumerate() {
        let coarse = coarsen_global(field.at(t), f)?;
        let st = stats.global[c];
        for ((i, j), v) in coarse.indexed_iter() {
            out[[c, j, i]] = st.apply(*v);
        }
    }
    if layout.positional {
        let base = cube.drivers().len();
        let pos = positional_fields(&coarsen_axis(&grid.lat, f), &coarsen_axis(&grid.lon, f));
        for k in 0..4 {
            let st = stats.global[base + k];
            for ((i, j), v) in pos.index_axis(Axis(0), k).indexed_iter() {
                out[[base + k, j, i]] = (v - st.mean) / st.std;
            }
        }
    }
    Ok(out)
}

fn validate_index(cube: &CubeStore, layout: &SampleLayout, idx: &SampleIndex) -> Result<()> {
    let (rows, cols) = layout.patch_grid(cube)?;
    if idx.row >= rows || idx.col >= cols {
        return Err(Error::contract(format!(
            "patch ({}, {}) outside the {rows}x{cols} patch grid",
            idx.row, idx.col
        )));
    }
    if idx.t < layout.history() {
        return Err(Error::InputDomain(format!(
            "index window for t={} starts {} steps before the cube",
            idx.t,
            layout.history() - idx.t
        )));
    }
    if idx.t + idx.horizon >= cube.time().len {
        return Err(Error::InputDomain(format!(
            "target time {} is past the end of the cube",
            idx.t + idx.horizon
        )));
    }
    Ok(())
}

/// Builds one sample, reusing an already extracted global view.
pub(crate) fn extract_with_global(
    cube: &CubeStore,
    stats: &NormalizationStats,
    layout: &SampleLayout,
    idx: SampleIndex,
    x_g: Arc<Array3<f64>>,
) -> Result<Sample> {
    validate_index(cube, layout, &idx)?;
    let p = layout.patch_size;
    let (r0, c0) = (idx.row * p, idx.col * p);
    let rows = r0..r0 + p;
    let cols = c0..c0 + p;

    let mut x_l = Array3::zeros((layout.n_channels(cube), p, p));
    for (c, field) in cube.drivers().values().enumerate() {
        let st = stats.local[c];
        let window = field.at(idx.t);
        let window = window.slice(s![rows.clone(), cols.clone()]);
        x_l.index_axis_mut(Axis(0), c)
            .zip_mut_with(&window, |o, v| *o = st.apply(*v));
    }
    if layout.positional {
        let base = cube.drivers().len();
        let grid = cube.grid();
        let pos = positional_fields(&grid.lat[rows.clone()], &grid.lon[cols.clone()]);
        for k in 0..4 {
            let st = stats.local[base + k];
            x_l.index_axis_mut(Axis(0), base + k)
                .zip_mut_with(&pos.index_axis(Axis(0), k), |o, v| {
                    *o = (v - st.mean) / st.std
                });
        }
    }

    // Index columns run oldest first: column j holds t - stride * (T - j).
    let steps = layout.index_steps;
    let mut x_i = Array2::zeros((cube.indices().len(), steps));
    for (k, series) in cube.indices().values().enumerate() {
        let st = stats.indices[k];
        for j in 0..steps {
            let tt = idx.t - layout.index_stride * (steps - j);
            x_i[[k, j]] = st.apply(series[tt]);
        }
    }

    let target = cube.burned().at(idx.t + idx.horizon);
    let target = target.slice(s![rows.clone(), cols.clone()]);
    let y = target
        .mapv(|v| if v > 0.0 { 1.0 } else { 0.0 })
        .insert_axis(Axis(0));
    let land = cube.land().slice(s![rows, cols]).to_owned();

    Ok(Sample {
        x_l,
        x_g,
        x_i,
        y,
        land,
        index: idx,
    })
}

/// Extracts and standardizes the sample at `idx`.
pub fn extract_sample(
    cube: &CubeStore,
    stats: &NormalizationStats,
    layout: &SampleLayout,
    idx: SampleIndex,
) -> Result<Sample> {
    stats.check_against(cube, layout)?;
    validate_index(cube, layout, &idx)?;
    let x_g = Arc::new(global_input(cube, stats, layout, idx.t)?);
    extract_with_global(cube, stats, layout, idx, x_g)
}

/// Extracts many samples, computing each time step's global view once.
pub fn build_samples(
    cube: &CubeStore,
    stats: &NormalizationStats,
    layout: &SampleLayout,
    indices: &[SampleIndex],
) -> Result<Vec<Sample>> {
    stats.check_against(cube, layout)?;
    let mut globals: BTreeMap<usize, Arc<Array3<f64>>> = BTreeMap::new();
    indices
        .iter()
        .map(|idx| {
            validate_index(cube, layout, idx)?;
            let x_g = match globals.get(&idx.t) {
                Some(g) => g.clone(),
                None => {
                    let g = Arc::new(global_input(cube, stats, layout, idx.t)?);
                    globals.insert(idx.t, g.clone());
                    g
                }
            };
            extract_with_global(cube, stats, layout, *idx, x_g)
        })
        .collect()
}
