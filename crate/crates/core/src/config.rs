//! Declarative run configuration: one TOML file plus `key=value`
//! overrides, validated before any work starts.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datacube::store::{list_arrays, StoreSchema};
use crate::datacube::{Role, SampleLayout, SplitYears, SynthConfig, Transform, VariableSpec};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::tokenizer::TokenizationSpec;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every random stream of the run derives from it.
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default = "default_horizons")]
    pub horizons: Vec<usize>,
    pub data: DataConfig,
    #[serde(default)]
    pub splits: SplitYears,
    #[serde(default)]
    pub layout: SampleLayout,
    #[serde(default)]
    pub tokenizer: TokenizationSpec,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub model: VariantConfig,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub evaluate: EvaluateSettings,
    #[serde(default)]
    pub inspect: InspectSettings,
    #[serde(default)]
    pub synth: SynthSettings,
}

fn default_horizons() -> Vec<usize> {
    crate::datacube::DEFAULT_HORIZONS.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub cube: PathBuf,
    pub drivers: Vec<VariableSpec>,
    pub indices: Vec<VariableSpec>,
    #[serde(default = "default_target")]
    pub target: String,
    #[serde(default = "default_land_mask")]
    pub land_mask: String,
    #[serde(default = "default_region_mask")]
    pub region_mask: Option<String>,
}

fn default_target() -> String {
    StoreSchema::default().target
}

fn default_land_mask() -> String {
    StoreSchema::default().land_mask
}

fn default_region_mask() -> Option<String> {
    StoreSchema::default().region_mask
}

impl DataConfig {
    pub fn schema(&self) -> StoreSchema {
        StoreSchema {
            drivers: self.drivers.iter().map(|v| v.name.clone()).collect(),
            indices: self.indices.iter().map(|v| v.name.clone()).collect(),
            target: self.target.clone(),
            land_mask: self.land_mask.clone(),
            region_mask: self.region_mask.clone(),
        }
    }

    /// The synthetic generator's variables, all untransformed.
    pub fn synthetic(cube: PathBuf) -> Self {
        DataConfig {
            cube,
            drivers: crate::datacube::SYNTH_DRIVERS
                .iter()
                .map(|n| VariableSpec::driver(*n, Transform::Identity))
                .collect(),
            indices: crate::datacube::SYNTH_INDICES
                .iter()
                .map(|n| VariableSpec::index(*n))
                .collect(),
            target: default_target(),
            land_mask: default_land_mask(),
            region_mask: default_region_mask(),
        }
    }
}

/// Which sources the model sees, and the decoder form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VariantConfig {
    pub use_global: bool,
    pub use_indices: bool,
    pub shared_decoder: bool,
}

impl Default for VariantConfig {
    fn default() -> Self {
        VariantConfig {
            use_global: true,
            use_indices: true,
            shared_decoder: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub epochs: usize,
    pub lr: f64,
    pub warmup_fraction: f64,
    pub batch_size: usize,
    pub mask_ocean_in_loss: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSettings {
            epochs: t.epochs,
            lr: t.lr,
            warmup_fraction: t.warmup_fraction,
            batch_size: t.batch_size,
            mask_ocean_in_loss: t.mask_ocean_in_loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSettings {
    pub histogram_bins: usize,
    /// Also export global PR curves.
    pub pr_curves: bool,
}

impl Default for EvaluateSettings {
    fn default() -> Self {
        EvaluateSettings {
            histogram_bins: 20,
            pr_curves: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InspectSettings {
    /// Integration steps for integrated gradients.
    pub ig_steps: usize,
    /// Rank variables by signed rather than absolute attribution mass.
    pub signed: bool,
    /// Token statistics from raw last-layer attention instead of roll-out.
    pub raw_last_layer: bool,
}

impl Default for InspectSettings {
    fn default() -> Self {
        InspectSettings {
            ig_steps: 128,
            signed: false,
            raw_last_layer: false,
        }
    }
}

/// Synthetic cube shape; the seed is the run's root seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSettings {
    pub years: usize,
    pub start_year: i32,
    pub n_lat: usize,
    pub n_lon: usize,
    pub burn_rate: f64,
    pub land_fraction: f64,
    pub fire_driver: String,
}

impl Default for SynthSettings {
    fn default() -> Self {
        let s = SynthConfig::default();
        SynthSettings {
            years: s.years,
            start_year: s.start_year,
            n_lat: s.n_lat,
            n_lon: s.n_lon,
            burn_rate: s.burn_rate,
            land_fraction: s.land_fraction,
            fire_driver: s.fire_driver,
        }
    }
}

/// Sets `path` (dot-separated) in a TOML table, creating tables on the way.
fn set_path(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts
        .pop()
        .filter(|k| !k.is_empty())
        .ok_or_else(|| Error::config(format!("override key `{path}` is empty")))?;
    let mut cur = table;
    for (depth, key) in parts.iter().enumerate() {
        let entry = cur
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| {
            Error::config(format!(
                "override `{path}`: `{}` is not a table",
                parts[..=depth].join(".")
            ))
        })?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Parses a `key=value` override; the value is read as TOML, falling back
/// to a bare string.
pub fn parse_override(spec: &str) -> Result<(String, toml::Value)> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override `{spec}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

impl RunConfig {
    /// Parses TOML text, applies overrides and validates the result.
    /// Unknown or mistyped keys are reported with their full key path.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::config(format!("invalid TOML: {e}")))?;
        for o in overrides {
            let (key, value) = parse_override(o)?;
            set_path(&mut table, &key, value)?;
        }
        let mut cfg: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(table))
            .map_err(|e| {
                let path = e.path().to_string();
                Error::config(format!("at `{path}`: {}", e.into_inner()))
            })?;
        cfg.data
            .drivers
            .iter_mut()
            .for_each(|v| v.role = Role::Driver);
        cfg.data
            .indices
            .iter_mut()
            .for_each(|v| v.role = Role::Index);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks that do not need the cube.
    pub fn validate(&self) -> Result<()> {
        if self.horizons.is_empty() {
            return Err(Error::config("`horizons` must list at least one lead time"));
        }
        let mut seen = HashSet::new();
        if let Some(h) = self.horizons.iter().find(|h| !seen.insert(**h)) {
            return Err(Error::config(format!("horizon {h} listed twice")));
        }
        let mut names = HashSet::new();
        for v in self.data.drivers.iter().chain(&self.data.indices) {
            if !names.insert(&v.name) {
                return Err(Error::config(format!("variable `{}` listed twice", v.name)));
            }
        }
        if self.data.drivers.is_empty() {
            return Err(Error::config(
                "`data.drivers` must list at least one variable",
            ));
        }
        if self.model.use_indices && self.data.indices.is_empty() {
            return Err(Error::config(
                "`model.use_indices` is set but `data.indices` is empty",
            ));
        }
        self.splits.validate()?;
        self.train_config(self.horizons[0]).validate()?;
        self.encoder.validate()?;
        if self.tokenizer.dim != self.encoder.dim {
            return Err(Error::config(format!(
                "`tokenizer.dim` ({}) must equal `encoder.dim` ({})",
                self.tokenizer.dim, self.encoder.dim
            )));
        }
        if !self
            .layout
            .patch_size
            .is_multiple_of(self.tokenizer.local_patch.max(1))
        {
            return Err(Error::config(format!(
                "`layout.patch_size` {} is not divisible by `tokenizer.local_patch` {}",
                self.layout.patch_size, self.tokenizer.local_patch
            )));
        }
        if self.inspect.ig_steps < 2 {
            return Err(Error::config("`inspect.ig_steps` must be at least 2"));
        }
        if self.evaluate.histogram_bins == 0 {
            return Err(Error::config("`evaluate.histogram_bins` must be positive"));
        }
        Ok(())
    }

    /// Checks that every referenced array exists in the cube directory.
    pub fn validate_store(&self) -> Result<()> {
        let arrays = list_arrays(&self.data.cube)?;
        let present: HashSet<&str> = arrays.iter().map(|(n, _)| n.as_str()).collect();
        let schema = self.data.schema();
        let wanted = schema
            .drivers
            .iter()
            .chain(&schema.indices)
            .chain([&schema.target, &schema.land_mask])
            .chain(schema.region_mask.iter());
        let missing: Vec<&String> = wanted.filter(|n| !present.contains(n.as_str())).collect();
        if !missing.is_empty() {
            return Err(Error::config(format!(
                "variables missing from {}: {}",
                self.data.cube.display(),
                missing
                    .iter()
                    .map(|s| s.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            )));
        }
        Ok(())
    }

    pub fn train_config(&self, horizon: usize) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            lr: t.lr,
            warmup_fraction: t.warmup_fraction,
            batch_size: t.batch_size,
            seed: self.seed,
            horizon,
            use_global: self.model.use_global,
            use_indices: self.model.use_indices,
            mask_ocean_in_loss: t.mask_ocean_in_loss,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        let s = &self.synth;
        SynthConfig {
            seed: self.seed,
            years: s.years,
            start_year: s.start_year,
            n_lat: s.n_lat,
            n_lon: s.n_lon,
            burn_rate: s.burn_rate,
            land_fraction: s.land_fraction,
            fire_driver: s.fire_driver.clone(),
        }
    }

    /// Short identifier of the model variant, e.g. `televit_ig`.
    pub fn variant_name(&self) -> &'static str {
        match (self.model.use_global, self.model.use_indices) {
            (false, false) => "vit",
            (false, true) => "televit_i",
            (true, false) => "televit_g",
            (true, true) => "televit_ig",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
output_dir = "out"
horizons = [0, 16]

[data]
cube = "cube.zarr"
drivers = [{ name = "tp", transform = "log1p" }, { name = "vpd" }]
indices = [{ name = "oci_nao" }]
"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = RunConfig::from_toml(BASE, &[]).unwrap();
        assert_eq!(cfg.horizons, vec![0, 16]);
        assert_eq!(cfg.data.drivers[0].transform, Transform::Log1p);
        assert_eq!(cfg.encoder.depth, 8);
        assert_eq!(cfg.train.epochs, 30);
        assert_eq!(cfg.inspect.ig_steps, 128);
        let round = RunConfig::from_toml(&cfg.to_toml(), &[]).unwrap();
        assert_eq!(round, cfg);
    }

    #[test]
    fn overrides_apply_by_key_path() {
        let cfg = RunConfig::from_toml(
            BASE,
            &[
                "train.lr=0.003".into(),
                "encoder.depth=4".into(),
                "model.use_global=false".into(),
                "output_dir=elsewhere".into(),
                "horizons=[1]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.train.lr, 0.003);
        assert_eq!(cfg.encoder.depth, 4);
        assert!(!cfg.model.use_global);
        assert_eq!(cfg.output_dir, PathBuf::from("elsewhere"));
        assert_eq!(cfg.horizons, vec![1]);
        assert_eq!(cfg.variant_name(), "televit_i");
    }

    #[test]
    fn unknown_keys_report_their_path() {
        let err = RunConfig::from_toml(BASE, &["train.lrr=1".into()]).unwrap_err();
        assert_eq!(err.category(), "config");
        assert!(err.to_string().contains("train"), "{err}");
        assert!(err.to_string().contains("lrr"), "{err}");
        let err = RunConfig::from_toml(BASE, &["encoder.heads=\"x\"".into()]).unwrap_err();
        assert!(err.to_string().contains("encoder.heads"), "{err}");
    }

    #[test]
    fn inconsistent_configs_are_rejected() {
        for o in [
            "tokenizer.dim=64",
            "horizons=[0, 0]",
            "train.warmup_fraction=1.5",
            "inspect.ig_steps=1",
            "layout.patch_size=50",
        ] {
            assert!(RunConfig::from_toml(BASE, &[o.into()]).is_err(), "{o}");
        }
        assert!(parse_override("novalue").is_err());
    }
}
