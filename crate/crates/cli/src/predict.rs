//! `televit predict`: a full-grid forecast for one input date.

use chrono::NaiveDate;
use ndarray::Array2;
use serde::Serialize;
use televit::datacube::build_samples;
use televit::decoder::assemble_globe;
use televit::{Error, Result};

use crate::output::{write_json, write_npy, StagedDir};
use crate::pipeline::{
    checkpoint_path, file_fingerprint, load_checkpoint, load_config, open_data, patch_indices,
    step_of_date, Provenance,
};
use crate::ConfigArgs;

#[derive(Serialize)]
struct Manifest {
    #[serde(flatten)]
    provenance: Provenance,
    horizon: usize,
    input_step: usize,
    input_date: NaiveDate,
    target_date: NaiveDate,
    checkpoint: String,
    patches: usize,
    shape: (usize, usize),
}

pub fn run(args: &ConfigArgs, date: NaiveDate, horizon: usize) -> Result<()> {
    let cfg = load_config(args)?;
    let data = open_data(&cfg)?;
    let ckpt = load_checkpoint(&cfg, &data, horizon)?;
    let stats = ckpt.stats.as_ref().expect("checked on load");
    let cube = &data.cube;
    let t = step_of_date(cube, date)?;
    let indices = patch_indices(&cfg, cube, t, horizon, &[])?;
    if indices.is_empty() {
        return Err(Error::InputDomain("the cube has no land patches".into()));
    }
    let samples = build_samples(cube, stats, &cfg.layout, &indices)?;
    let maps = samples
        .iter()
        .map(|s| {
            let mut map = ckpt.model.predict(s.input())?;
            map.valid = s.land.clone();
            Ok(((s.index.row, s.index.col), map))
        })
        .collect::<Result<Vec<_>>>()?;
    let grid = cfg.layout.patch_grid(cube)?;
    let globe = assemble_globe(&maps, grid, cfg.layout.patch_size)?;
    let target: Array2<f32> = cube.burned().at(t + horizon).to_owned();

    let time = cube.time();
    let name = format!("{}_h{horizon}_{}", cfg.variant_name(), time.date(t));
    let staged = StagedDir::new(cfg.output_dir.join("predict").join(name))?;
    write_npy(&staged.join("scores.npy"), &globe.scores)?;
    write_npy(&staged.join("valid.npy"), &globe.valid)?;
    write_npy(&staged.join("target.npy"), &target)?;
    write_json(
        &staged.join("manifest.json"),
        &Manifest {
            provenance: Provenance::new("predict", &cfg, Some(&data)),
            horizon,
            input_step: t,
            input_date: time.date(t),
            target_date: time.date(t + horizon),
            checkpoint: file_fingerprint(&checkpoint_path(&cfg, horizon))?,
            patches: maps.len(),
            shape: globe.shape(),
        },
    )?;
    let dir = staged.commit()?;
    log::info!("wrote {}", dir.display());
    Ok(())
}
