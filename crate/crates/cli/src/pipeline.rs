//! Shared steps of the subcommands: configuration, data loading,
//! checkpoint lookup and provenance.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::Serialize;
use televit::config::RunConfig;
use televit::datacube::store::{list_arrays, open_cube};
use televit::datacube::{compute_stats, enumerate_samples, SampleIndex, Split};
use televit::evaluation::RegionMask;
use televit::training::{fingerprint, Checkpoint, LazySamples};
use televit::{CubeStore, Error, ModelConfig, NormalizationStats, Result};

use crate::ConfigArgs;

pub fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let cfg = RunConfig::load(&args.config, &args.overrides)?;
    log::info!(
        "config {} ({} overrides), variant {}",
        args.config.display(),
        args.overrides.len(),
        cfg.variant_name()
    );
    Ok(cfg)
}

/// The prepared cube with its region labels and identity.
pub struct Data {
    pub cube: CubeStore,
    pub regions: RegionMask,
    pub fingerprint: String,
}

/// Opens and prepares the configured cube.
///
/// The fingerprint covers the store's metadata (the consolidated document
/// when there is one, the array listing otherwise) and the variable
/// selection, not the raw bytes, so it stays cheap on a full-size cube.
pub fn open_data(cfg: &RunConfig) -> Result<Data> {
    cfg.validate_store()?;
    let path = &cfg.data.cube;
    let meta_path = path.join(".zmetadata");
    let meta = if meta_path.exists() {
        std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?
    } else {
        serde_json::to_string(&list_arrays(path)?).expect("listing serializes")
    };
    log::info!("opening cube {}", path.display());
    let raw = open_cube(path, &cfg.data.schema())?;
    let cube = raw.into_prepared(&cfg.data.drivers, &cfg.data.indices)?;
    let regions = match cube.regions() {
        Some(r) => RegionMask::new(r.clone())?,
        None => RegionMask::unlabeled(cube.grid().shape()),
    };
    let d = &cfg.data;
    let fingerprint = fingerprint(&(
        meta,
        &d.drivers,
        &d.indices,
        &d.target,
        &d.land_mask,
        &d.region_mask,
    ));
    let (h, w) = cube.grid().shape();
    log::info!(
        "cube: {h}x{w} grid, {} steps from {}, {} drivers, {} indices",
        cube.time().len,
        cube.time().start_year,
        cube.drivers().len(),
        cube.indices().len()
    );
    Ok(Data {
        cube,
        regions,
        fingerprint,
    })
}

pub fn train_stats(cfg: &RunConfig, cube: &CubeStore) -> Result<NormalizationStats> {
    let [first, last] = cfg.splits.train;
    compute_stats(cube, &cfg.layout, cube.time().steps_in_years(first, last))
}

pub fn model_config(cfg: &RunConfig, cube: &CubeStore) -> Result<ModelConfig> {
    let mut m = ModelConfig::for_cube(
        cube,
        &cfg.layout,
        cfg.tokenizer,
        cfg.encoder,
        cfg.model.use_global,
        cfg.model.use_indices,
    );
    m.shared_decoder = cfg.model.shared_decoder;
    m.validate()?;
    Ok(m)
}

pub fn model_dir(cfg: &RunConfig, horizon: usize) -> PathBuf {
    cfg.output_dir
        .join("models")
        .join(cfg.variant_name())
        .join(format!("h{horizon}"))
}

pub fn checkpoint_path(cfg: &RunConfig, horizon: usize) -> PathBuf {
    model_dir(cfg, horizon).join("best.safetensors")
}

/// Loads the checkpoint for `horizon` and checks that it fits the
/// configured data, layout and variant.
pub fn load_checkpoint(cfg: &RunConfig, data: &Data, horizon: usize) -> Result<Checkpoint> {
    let path = checkpoint_path(cfg, horizon);
    if !path.exists() {
        return Err(Error::config(format!(
            "no checkpoint at {}; run `televit train` first",
            path.display()
        )));
    }
    let ckpt = Checkpoint::load(&path)?;
    let mismatch = |what: &str| {
        Error::config(format!(
            "checkpoint {} was trained with a different {what}",
            path.display()
        ))
    };
    if ckpt.data_fingerprint != data.fingerprint {
        return Err(mismatch("datacube or variable selection"));
    }
    if ckpt.layout.as_ref() != Some(&cfg.layout) {
        return Err(mismatch("sample layout"));
    }
    if ckpt.train_config.horizon != horizon {
        return Err(mismatch("horizon"));
    }
    if ckpt.model.config != model_config(cfg, &data.cube)? {
        return Err(mismatch("model configuration"));
    }
    if ckpt.stats.is_none() {
        return Err(Error::format(
            &path,
            "checkpoint carries no normalization statistics",
        ));
    }
    Ok(ckpt)
}

pub fn split_samples<'a>(
    cfg: &'a RunConfig,
    cube: &'a CubeStore,
    stats: &'a NormalizationStats,
    split: Split,
    horizon: usize,
) -> Result<LazySamples<'a>> {
    let indices = enumerate_samples(cube, &cfg.layout, &cfg.splits, split, horizon)?;
    Ok(LazySamples {
        cube,
        stats,
        layout: &cfg.layout,
        indices,
    })
}

/// Input step containing `date`.
pub fn step_of_date(cube: &CubeStore, date: NaiveDate) -> Result<usize> {
    let time = cube.time();
    time.step_of_date(date).ok_or_else(|| {
        Error::InputDomain(format!(
            "date {date} is outside the cube ({} to {})",
            time.date(0),
            time.date(time.len - 1)
        ))
    })
}

/// Sample indices of every land patch (or the listed ones) at step `t`.
pub fn patch_indices(
    cfg: &RunConfig,
    cube: &CubeStore,
    t: usize,
    horizon: usize,
    patches: &[(usize, usize)],
) -> Result<Vec<SampleIndex>> {
    let (rows, cols) = cfg.layout.patch_grid(cube)?;
    let chosen = if patches.is_empty() {
        televit::datacube::land_patches(cube, &cfg.layout)?
    } else {
        for &(r, c) in patches {
            if r >= rows || c >= cols {
                return Err(Error::InputDomain(format!(
                    "patch ({r}, {c}) outside the {rows}x{cols} patch grid"
                )));
            }
        }
        patches.to_vec()
    };
    Ok(chosen
        .into_iter()
        .map(|(row, col)| SampleIndex {
            t,
            row,
            col,
            horizon,
        })
        .collect())
}

/// Fields every manifest carries.
#[derive(Debug, Serialize)]
pub struct Provenance {
    pub command: String,
    pub version: &'static str,
    pub seed: u64,
    pub variant: &'static str,
    pub data_fingerprint: Option<String>,
    pub config: String,
}

impl Provenance {
    pub fn new(command: &str, cfg: &RunConfig, data: Option<&Data>) -> Self {
        Provenance {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION"),
            seed: cfg.seed,
            variant: cfg.variant_name(),
            data_fingerprint: data.map(|d| d.fingerprint.clone()),
            config: cfg.to_toml(),
        }
    }
}

/// SHA-256 of a file's bytes.
pub fn file_fingerprint(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(bytes)))
}
