use ndarray::{Array2, Array3, ArrayView2};

use crate::error::{Error, Result};

/// Block-mean downsampling of a `lat × lon` field by `factor` per axis.
///
/// Missing cells (NaN) are ignored; a block with no valid cell stays NaN so
/// that standardization can fill it with the channel mean.
pub fn coarsen_global(field: ArrayView2<'_, f32>, factor: usize) -> Result<Array2<f32>> {
    let (h, w) = field.dim();
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::config(format!(
            "field {h}x{w} is not divisible by coarsening factor {factor}"
        )));
    }
    let mut out = Array2::from_elem((h / factor, w / factor), f32::NAN);
    for ((r, c), cell) in out.indexed_iter_mut() {
        let mut sum = 0.0f64;
        let mut n = 0usize;
        for i in r * factor..(r + 1) * factor {
            for j in c * factor..(c + 1) * factor {
                let v = field[[i, j]];
                if !v.is_nan() {
                    sum += v as f64;
                    n += 1;
                }
            }
        }
        if n > 0 {
            *cell = (sum / n as f64) as f32;
        }
    }
    Ok(out)
}

/// A coarse cell counts as land when any of its fine cells is land.
pub fn coarsen_mask(mask: ArrayView2<'_, bool>, factor: usize) -> Result<Array2<bool>> {
    let (h, w) = mask.dim();
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::config(format!(
            "mask {h}x{w} is not divisible by coarsening factor {factor}"
        )));
    }
    Ok(Array2::from_shape_fn((h / factor, w / factor), |(r, c)| {
        (r * factor..(r + 1) * factor).any(|i| (c * factor..(c + 1) * factor).any(|j| mask[[i, j]]))
    }))
}

/// Block-mean of a coordinate axis, giving the coarse cell centres.
pub(crate) fn coarsen_axis(axis: &[f64], factor: usize) -> Vec<f64> {
    axis.chunks(factor)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

/// Positional channels `[cos lon, sin lon, cos lat, sin lat]` on the grid
/// spanned by `lat_deg` (rows) and `lon_deg` (columns).
pub fn positional_fields(lat_deg: &[f64], lon_deg: &[f64]) -> Array3<f64> {
    let mut out = Array3::zeros((4, lat_deg.len(), lon_deg.len()));
    for (i, lat) in lat_deg.iter().enumerate() {
        let (sin_lat, cos_lat) = lat.to_radians().sin_cos();
        for (j, lon) in lon_deg.iter().enumerate() {
            let (sin_lon, cos_lon) = lon.to_radians().sin_cos();
            out[[0, i, j]] = cos_lon;
            out[[1, i, j]] = sin_lon;
            out[[2, i, j]] = cos_lat;
            out[[3, i, j]] = sin_lat;
        }
    }
    out
}
