use std::f64::consts::PI;

use indexmap::IndexMap;
use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{CubeStore, Field, Grid, TimeAxis, STEPS_PER_YEAR};
use crate::error::{Error, Result};

/// Driver variables of the synthetic cube, named after their SeasFire
/// counterparts.
pub const SYNTH_DRIVERS: [&str; 10] = [
    "mslp", "tp", "vpd", "sst", "t2m_mean", "ssrd", "swvl1", "lst_day", "ndvi", "pop_dens",
];

pub const SYNTH_INDICES: [&str; 10] = [
    "oci_wp",
    "oci_pna",
    "oci_nao",
    "oci_soi",
    "oci_ao",
    "oci_pdo",
    "oci_ea",
    "oci_epo",
    "oci_nino_34_anom",
    "oci_censo",
];

/// Drivers that are undefined (NaN) over the ocean.
const LAND_ONLY: [&str; 3] = ["swvl1", "lst_day", "ndvi"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub years: usize,
    pub start_year: i32,
    pub n_lat: usize,
    pub n_lon: usize,
    /// Fraction of land cell-steps that burn.
    pub burn_rate: f64,
    pub land_fraction: f64,
    /// Driver whose exceedance of a fixed threshold defines burned area.
    pub fire_driver: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            years: 4,
            start_year: 2001,
            n_lat: 80,
            n_lon: 160,
            burn_rate: 0.03,
            land_fraction: 0.6,
            fire_driver: "vpd".into(),
        }
    }
}

/// Sum of a few random plane waves, periodic in longitude, whose phases
/// drift over time. Evaluated separably per row and column.
struct WaveField {
    waves: Vec<Wave>,
}

struct Wave {
    amp: f64,
    k_lon: f64,
    k_lat: f64,
    phase: f64,
    drift: f64,
}

impl WaveField {
    fn new(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Self {
        let waves = (0..n)
            .map(|_| Wave {
                amp: scale * rng.gen_range(0.5..1.0) / (n as f64).sqrt(),
                k_lon: rng.gen_range(1..=3) as f64,
                k_lat: rng.gen_range(0.5..2.5),
                phase: rng.gen_range(0.0..2.0 * PI),
                drift: rng.gen_range(-0.6..0.6),
            })
            .collect();
        WaveField { waves }
    }

    fn add_to(&self, out: &mut Array2<f64>, grid: &Grid, t: f64) {
        for w in &self.waves {
            let (sin_a, cos_a): (Vec<f64>, Vec<f64>) = grid
                .lon
                .iter()
                .map(|l| (w.k_lon * l.to_radians()).sin_cos())
                .unzip();
            for (i, lat) in grid.lat.iter().enumerate() {
                let (sb, cb) = (w.k_lat * lat.to_radians() + w.phase + w.drift * t).sin_cos();
                for j in 0..grid.lon.len() {
                    out[[i, j]] += w.amp * (cb * cos_a[j] - sb * sin_a[j]);
                }
            }
        }
    }
}

fn seasonal(lat: f64, week: usize) -> f64 {
    // Peaks mid-year in the north, half a year later in the south.
    lat.to_radians().sin() * (2.0 * PI * (week as f64 - 23.0) / STEPS_PER_YEAR as f64).cos()
}

/// Generates a deterministic synthetic cube.
///
/// Drivers are smooth seasonal fields plus drifting large-scale anomalies
/// and cell noise. Burned area is positive exactly where the fire driver
/// exceeds its `(1 - burn_rate)` land quantile, so the target is a known
/// function of one input channel.
pub fn make_synthetic_cube(cfg: &SynthConfig) -> Result<CubeStore> {
    if cfg.years == 0 || cfg.n_lat == 0 || cfg.n_lon == 0 {
        return Err(Error::config("synthetic cube needs non-empty dimensions"));
    }
    if !(0.0..1.0).contains(&cfg.burn_rate) || !(0.0..=1.0).contains(&cfg.land_fraction) {
        return Err(Error::config(
            "burn_rate and land_fraction must lie in [0, 1)",
        ));
    }
    if !SYNTH_DRIVERS.contains(&cfg.fire_driver.as_str()) {
        return Err(Error::config(format!(
            "fire driver {} is not a synthetic driver",
            cfg.fire_driver
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, 0.1).expect("valid normal");
    let grid = Grid::regular(cfg.n_lat, cfg.n_lon);
    let time = TimeAxis::new(cfg.start_year, cfg.years * STEPS_PER_YEAR)?;
    let shape = grid.shape();

    let mut land_field = Array2::zeros(shape);
    WaveField::new(&mut rng, 6, 1.0).add_to(&mut land_field, &grid, 0.0);
    let land_cut = quantile(
        land_field.iter().copied().collect(),
        1.0 - cfg.land_fraction,
    );
    let land = land_field.mapv(|v| v >= land_cut && cfg.land_fraction > 0.0);

    let mut drivers = IndexMap::new();
    for (k, name) in SYNTH_DRIVERS.iter().enumerate() {
        if *name == "pop_dens" {
            let mut f = Array2::zeros(shape);
            WaveField::new(&mut rng, 4, 1.5).add_to(&mut f, &grid, 0.0);
            let pop = Array2::from_shape_fn(shape, |ij| {
                if land[ij] {
                    (20.0 * f[ij].exp()) as f32
                } else {
                    0.0
                }
            });
            drivers.insert(name.to_string(), Field::Static(pop));
            continue;
        }
        let anomaly = WaveField::new(&mut rng, 4, 1.0);
        let offset = k as f64;
        let mut data = Array3::<f32>::zeros((time.len, shape.0, shape.1));
        let mut slice = Array2::<f64>::zeros(shape);
        for t in 0..time.len {
            slice.fill(0.0);
            anomaly.add_to(&mut slice, &grid, t as f64);
            let week = time.week_of_year(t);
            for ((i, j), v) in slice.indexed_iter() {
                let lat = grid.lat[i];
                let base = match *name {
                    "ssrd" => 2.0 * seasonal(lat, week) + lat.to_radians().cos(),
                    _ => 0.8 * seasonal(lat, week) + 0.5 * v,
                };
                let value = base + noise.sample(&mut rng) + offset;
                data[[t, i, j]] = match *name {
                    "tp" => (value - offset).exp() as f32,
                    n if LAND_ONLY.contains(&n) && !land[[i, j]] => f32::NAN,
                    _ => value as f32,
                };
            }
        }
        drivers.insert(name.to_string(), Field::Dense(data));
    }

    let fire = match &drivers[cfg.fire_driver.as_str()] {
        Field::Dense(a) => a.clone(),
        Field::Static(_) => unreachable!("fire driver is time-varying"),
    };
    let land_values: Vec<f64> = fire
        .outer_iter()
        .flat_map(|s| {
            s.indexed_iter()
                .filter(|(ij, v)| land[*ij] && !v.is_nan())
                .map(|(_, v)| *v as f64)
                .collect::<Vec<_>>()
        })
        .collect();
    let threshold = quantile(land_values, 1.0 - cfg.burn_rate);
    let burned = Array3::from_shape_fn(fire.dim(), |(t, i, j)| {
        let v = fire[[t, i, j]] as f64;
        if land[[i, j]] && v > threshold {
            (1.0 + 50.0 * (v - threshold)) as f32
        } else {
            0.0
        }
    });

    let mut indices = IndexMap::new();
    for name in SYNTH_INDICES {
        let phase = rng.gen_range(0.0..2.0 * PI);
        let mut ar = 0.0f64;
        let series = Array1::from_shape_fn(time.len, |t| {
            ar = 0.8 * ar + rng.gen_range(-0.5..0.5);
            let season =
                (2.0 * PI * time.week_of_year(t) as f64 / STEPS_PER_YEAR as f64 + phase).sin();
            (season + ar) as f32
        });
        indices.insert(name.to_string(), series);
    }

    let regions = Array2::from_shape_fn(shape, |(i, j)| {
        if !land[[i, j]] {
            return 0;
        }
        let band = (j * 7 / shape.1) as i32;
        let south = if grid.lat[i] < 0.0 { 7 } else { 0 };
        1 + band + south
    });

    CubeStore::new(
        grid,
        time,
        drivers,
        indices,
        Field::Dense(burned),
        land,
        Some(regions),
    )
}

/// Empirical quantile by nearest rank on a sorted copy.
fn quantile(mut values: Vec<f64>, q: f64) -> f64 {
    if values.is_empty() {
        return f64::INFINITY;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let pos = ((values.len() - 1) as f64 * q.clamp(0.0, 1.0)).round() as usize;
    values[pos]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            seed,
            years: 1,
            n_lat: 16,
            n_lon: 32,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_same_cube() {
        let a = make_synthetic_cube(&small(7)).unwrap();
        let b = make_synthetic_cube(&small(7)).unwrap();
        for ((na, fa), (nb, fb)) in a.drivers().iter().zip(b.drivers()) {
            assert_eq!(na, nb);
            let bits = |f: &Field| match f {
                Field::Dense(a) => a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                Field::Static(a) => a.iter().map(|v| v.to_bits()).collect(),
            };
            assert_eq!(bits(fa), bits(fb), "{na}");
        }
        assert_eq!(a.burned(), b.burned());
        assert_eq!(a.indices(), b.indices());
    }

    #[test]
    fn different_seeds_differ() {
        let a = make_synthetic_cube(&small(1)).unwrap();
        let b = make_synthetic_cube(&small(2)).unwrap();
        assert_ne!(a.driver("vpd").unwrap(), b.driver("vpd").unwrap());
    }

    #[test]
    fn burn_rate_is_on_target() {
        let cfg = SynthConfig {
            burn_rate: 0.03,
            ..small(3)
        };
        let cube = make_synthetic_cube(&cfg).unwrap();
        let Field::Dense(ba) = cube.burned() else {
            panic!("burned area is dense")
        };
        let land_cells = cube.land().iter().filter(|l| **l).count() * ba.shape()[0];
        let burned = ba.iter().filter(|v| **v > 0.0).count();
        let rate = burned as f64 / land_cells as f64;
        assert!((0.01..=0.05).contains(&rate), "burn rate {rate}");
    }

    #[test]
    fn burned_area_is_non_negative_and_on_land() {
        let cube = make_synthetic_cube(&small(4)).unwrap();
        let Field::Dense(ba) = cube.burned() else {
            panic!("burned area is dense")
        };
        for ((_, i, j), v) in ba.indexed_iter() {
            assert!(*v >= 0.0);
            if !cube.land()[[i, j]] {
                assert_eq!(*v, 0.0);
            }
        }
    }
}
