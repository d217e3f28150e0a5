//! `televit synth`: write a synthetic cube where the configuration points.

use serde::Serialize;
use televit::datacube::store::{cube_checksum, open_cube, write_cube};
use televit::datacube::{make_synthetic_cube, SynthConfig};
use televit::Result;

use crate::output::{create_dir, write_json, StagedDir};
use crate::pipeline::{load_config, Provenance};
use crate::ConfigArgs;

#[derive(Serialize)]
struct Manifest {
    #[serde(flatten)]
    provenance: Provenance,
    cube: String,
    checksum: String,
    synth: SynthConfig,
}

pub fn run(args: &ConfigArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let synth = cfg.synth_config();
    log::info!(
        "generating {} years of a {}x{} synthetic cube, seed {}",
        synth.years,
        synth.n_lat,
        synth.n_lon,
        synth.seed
    );
    let cube = make_synthetic_cube(&synth)?;

    let staged = StagedDir::new(&cfg.data.cube)?;
    write_cube(&cube, staged.path(), &cfg.data.schema())?;
    open_cube(staged.path(), &cfg.data.schema())?
        .into_prepared(&cfg.data.drivers, &cfg.data.indices)?;
    let checksum = cube_checksum(staged.path())?;
    let path = staged.commit()?;
    log::info!("wrote {} (sha256 {checksum})", path.display());

    let dir = cfg.output_dir.join("synth");
    create_dir(&dir)?;
    write_json(
        &dir.join("manifest.json"),
        &Manifest {
            provenance: Provenance::new("synth", &cfg, None),
            cube: path.display().to_string(),
            checksum,
            synth,
        },
    )
}
