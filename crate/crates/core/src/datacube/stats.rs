use std::ops::Range;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::preprocess::{coarsen_axis, coarsen_global, coarsen_mask, positional_fields};
use super::{CubeStore, Field, SampleLayout};
use crate::error::{Error, Result};

/// Standard deviations below this are treated as a constant channel.
pub const MIN_STD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
}

impl ChannelStats {
    /// Clamps degenerate spreads to 1 so standardization stays finite.
    pub fn new(mean: f64, std: f64) -> Self {
        let std = if std.is_finite() && std >= MIN_STD {
            std
        } else {
            1.0
        };
        ChannelStats { mean, std }
    }

    pub fn identity() -> Self {
        ChannelStats {
            mean: 0.0,
            std: 1.0,
        }
    }

    /// Standardized value; missing data maps to 0, the channel mean.
    #[inline]
    pub fn apply(&self, v: f32) -> f64 {
        if v.is_nan() {
            0.0
        } else {
            (v as f64 - self.mean) / self.std
        }
    }
}

/// Per-channel statistics for the three model inputs, computed over the
/// training period after transforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    /// Channel names shared by local and global inputs, positional last.
    pub channels: Vec<String>,
    pub local: Vec<ChannelStats>,
    pub global: Vec<ChannelStats>,
    pub index_names: Vec<String>,
    pub indices: Vec<ChannelStats>,
}

impl NormalizationStats {
    /// Stats that leave every value unchanged.
    pub fn identity(cube: &CubeStore, layout: &SampleLayout) -> Self {
        let channels = layout.channel_names(cube);
        let n = channels.len();
        NormalizationStats {
            channels,
            local: vec![ChannelStats::identity(); n],
            global: vec![ChannelStats::identity(); n],
            index_names: cube.indices().keys().cloned().collect(),
            indices: vec![ChannelStats::identity(); cube.indices().len()],
        }
    }

    pub(crate) fn check_against(&self, cube: &CubeStore, layout: &SampleLayout) -> Result<()> {
        let expected = layout.channel_names(cube);
        if self.channels != expected {
            return Err(Error::config(format!(
                "normalization stats channels {:?} do not match cube channels {:?}",
                self.channels, expected
            )));
        }
        let idx: Vec<_> = cube.indices().keys().cloned().collect();
        if self.index_names != idx {
            return Err(Error::config(
                "normalization stats index variables do not match cube",
            ));
        }
        Ok(())
    }
}

/// Calls its argument once per value of some collection.
type Visitor<'a, T> = dyn Fn(&mut dyn FnMut(T)) + 'a;

/// Two-pass population mean and standard deviation over whatever `visit`
/// feeds in. Deterministic for a deterministic visitor.
fn moments(visit: &Visitor<'_, f64>) -> Option<(f64, f64)> {
    let mut n = 0usize;
    let mut sum = 0.0f64;
    visit(&mut |v| {
        n += 1;
        sum += v;
    });
    if n == 0 {
        return None;
    }
    let mean = sum / n as f64;
    let mut ss = 0.0f64;
    visit(&mut |v| {
        let d = v - mean;
        ss += d * d;
    });
    Some((mean, (ss / n as f64).sqrt()))
}

/// Masked moments with a fallback to every finite cell when the mask leaves
/// nothing (an ocean-only variable under a land mask, for instance).
fn masked_moments(
    slices: &Visitor<'_, ArrayView2<'_, f32>>,
    mask: ArrayView2<'_, bool>,
) -> ChannelStats {
    let masked = moments(&|sink| {
        slices(&mut |a| {
            for (v, m) in a.iter().zip(mask.iter()) {
                if *m && !v.is_nan() {
                    sink(*v as f64);
                }
            }
        })
    });
    let all = || {
        moments(&|sink| {
            slices(&mut |a| {
                for v in a.iter().filter(|v| !v.is_nan()) {
                    sink(*v as f64);
                }
            })
        })
    };
    match masked.or_else(all) {
        Some((m, s)) => ChannelStats::new(m, s),
        None => ChannelStats::identity(),
    }
}

/// Computes normalization statistics over time steps `train`.
///
/// Local and global channels use land cells only (coarse cells with any land
/// for the global view); index channels use every training-period value.
pub fn compute_stats(
    cube: &CubeStore,
    layout: &SampleLayout,
    train: Range<usize>,
) -> Result<NormalizationStats> {
    if train.is_empty() || train.end > cube.time().len {
        return Err(Error::config(format!(
            "training range {train:?} is empty or outside the cube"
        )));
    }
    let grid = cube.grid();
    let factor = layout.coarsen_factor;
    let land = cube.land().view();
    let coarse_land = coarsen_mask(land, factor)?;
    let mut local = Vec::new();
    let mut global = Vec::new();

    for field in cube.drivers().values() {
        let steps: Vec<usize> = match field {
            Field::Dense(_) => train.clone().collect(),
            Field::Static(_) => vec![train.start],
        };
        local.push(masked_moments(
            &|f| {
                for &t in &steps {
                    f(field.at(t));
                }
            },
            land,
        ));
        // Coarsen once per step up front; the two moment passes reuse it.
        let coarse: Vec<_> = steps
            .iter()
            .map(|&t| coarsen_global(field.at(t), factor))
            .collect::<Result<_>>()?;
        global.push(masked_moments(
            &|f| {
                for c in &coarse {
                    f(c.view());
                }
            },
            coarse_land.view(),
        ));
    }

    if layout.positional {
        let fine = positional_fields(&grid.lat, &grid.lon).mapv(|v| v as f32);
        let coarse = positional_fields(
            &coarsen_axis(&grid.lat, factor),
            &coarsen_axis(&grid.lon, factor),
        )
        .mapv(|v| v as f32);
        for ch in 0..4 {
            let f = fine.index_axis(ndarray::Axis(0), ch);
            local.push(masked_moments(&|s| s(f.view()), land));
            let c = coarse.index_axis(ndarray::Axis(0), ch);
            global.push(masked_moments(&|s| s(c.view()), coarse_land.view()));
        }
    }

    let indices = cube
        .indices()
        .values()
        .map(|series| {
            let window = series.slice(ndarray::s![train.clone()]);
            match moments(&|sink| {
                for v in window.iter().filter(|v| !v.is_nan()) {
                    sink(*v as f64);
                }
            }) {
                Some((m, s)) => ChannelStats::new(m, s),
                None => ChannelStats::identity(),
            }
        })
        .collect();

    Ok(NormalizationStats {
        channels: layout.channel_names(cube),
        local,
        global,
        index_names: cube.indices().keys().cloned().collect(),
        indices,
    })
}
