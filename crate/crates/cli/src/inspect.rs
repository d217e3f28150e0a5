//! `televit inspect`: attention roll-out and integrated gradients.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use ndarray::Array2;
use serde::Serialize;
use televit::datacube::{build_samples, SampleIndex};
use televit::encoder::Mode;
use televit::inspection::{
    integrated_gradients, last_layer_attention, most_important_variable, partition_blocks, rollout,
    token_type_stats, Moments, TokenTypeStats,
};
use televit::{Error, ModelInput, Result};

use crate::output::{create_dir, write_json, write_npy, StagedDir};
use crate::pipeline::{
    checkpoint_path, file_fingerprint, load_checkpoint, load_config, open_data, patch_indices,
    step_of_date, Provenance,
};
use crate::ConfigArgs;

#[derive(Serialize)]
struct MomentSummary {
    n: usize,
    mean: Option<f64>,
    std: Option<f64>,
}

impl From<&Moments> for MomentSummary {
    fn from(m: &Moments) -> Self {
        MomentSummary {
            n: m.n,
            mean: m.mean(),
            std: m.std(),
        }
    }
}

#[derive(Serialize)]
struct TokenSummary {
    local: MomentSummary,
    global: MomentSummary,
    indices: MomentSummary,
}

impl From<&TokenTypeStats> for TokenSummary {
    fn from(s: &TokenTypeStats) -> Self {
        TokenSummary {
            local: (&s.local).into(),
            global: (&s.global).into(),
            indices: (&s.indices).into(),
        }
    }
}

#[derive(Serialize)]
struct BlockSummary {
    shape: (usize, usize),
    mean: Option<f64>,
    row_mass: Option<f64>,
}

#[derive(Serialize)]
struct PatchEntry {
    dir: String,
    sample: SampleIndex,
    f_input: f64,
    f_baseline: f64,
    completeness_gap: f64,
    relative_gap: f64,
    local_map_shape: (usize, usize),
    global_map_shape: Option<(usize, usize)>,
}

#[derive(Serialize)]
struct Manifest {
    #[serde(flatten)]
    provenance: Provenance,
    horizon: usize,
    input_step: usize,
    input_date: NaiveDate,
    model_id: String,
    attention: &'static str,
    ig_steps: usize,
    ig_baseline: &'static str,
    ig_jobs: usize,
    signed_variable_map: bool,
    channels: Vec<String>,
    index_names: Vec<String>,
    max_completeness_gap: f64,
    patches: Vec<PatchEntry>,
}

pub fn run(
    args: &ConfigArgs,
    date: NaiveDate,
    horizon: usize,
    patches: &[(usize, usize)],
    jobs: usize,
) -> Result<()> {
    let cfg = load_config(args)?;
    if jobs == 0 {
        return Err(Error::config("--jobs must be at least 1"));
    }
    let data = open_data(&cfg)?;
    let ckpt = load_checkpoint(&cfg, &data, horizon)?;
    let stats = ckpt.stats.as_ref().expect("checked on load");
    let model = &ckpt.model;
    let cube = &data.cube;
    let t = step_of_date(cube, date)?;
    let indices = patch_indices(&cfg, cube, t, horizon, patches)?;
    if indices.is_empty() {
        return Err(Error::InputDomain("no patches to inspect".into()));
    }
    let samples = build_samples(cube, stats, &cfg.layout, &indices)?;
    let settings = &cfg.inspect;
    let tok = &model.config.tokenizer;

    let time = cube.time();
    let name = format!("{}_h{horizon}_{}", cfg.variant_name(), time.date(t));
    let staged = StagedDir::new(cfg.output_dir.join("inspect").join(name))?;
    let mut total = TokenTypeStats::default();
    let mut entries = Vec::new();
    for s in &samples {
        let (row, col) = (s.index.row, s.index.col);
        log::info!(
            "patch ({row}, {col}): roll-out and {} IG steps",
            settings.ig_steps
        );
        let rel = format!("r{row}_c{col}");
        let dir = staged.join(&rel);
        create_dir(&dir)?;

        let record = model.forward(s.input(), Mode::Eval)?.attention_record();
        let flow = if settings.raw_last_layer {
            last_layer_attention(&record)?
        } else {
            rollout(&record)?
        };
        write_npy(&dir.join("rollout.npy"), &flow.matrix)?;
        let blocks = partition_blocks(flow.matrix.view(), flow.counts)?;
        let block_stats: BTreeMap<&str, BlockSummary> = blocks
            .named()
            .into_iter()
            .map(|(k, b)| {
                let summary = BlockSummary {
                    shape: b.dim(),
                    mean: b.mean(),
                    row_mass: (b.nrows() > 0).then(|| b.sum() / b.nrows() as f64),
                };
                (k, summary)
            })
            .collect();
        write_json(&dir.join("blocks.json"), &block_stats)?;
        let token_stats = token_type_stats(flow.matrix.view(), flow.counts)?;
        write_json(
            &dir.join("token_stats.json"),
            &TokenSummary::from(&token_stats),
        )?;
        total.merge(&token_stats);

        let x = ModelInput::from(s);
        let ig = integrated_gradients(model, &x, settings.ig_steps, jobs)?;
        let a = &ig.attributions;
        write_npy(&dir.join("ig_local.npy"), &a.local)?;
        write_npy(&dir.join("ig_global.npy"), &a.global)?;
        write_npy(&dir.join("ig_indices.npy"), &a.indices)?;
        let to_u64 = |m: Array2<usize>| m.mapv(|v| v as u64);
        let local_map = to_u64(most_important_variable(
            a.local.view(),
            tok.local_patch,
            settings.signed,
        )?);
        write_npy(&dir.join("variable_map_local.npy"), &local_map)?;
        let global_map_shape = if model.config.use_global {
            let global_map = to_u64(most_important_variable(
                a.global.view(),
                tok.global_patch,
                settings.signed,
            )?);
            write_npy(&dir.join("variable_map_global.npy"), &global_map)?;
            Some(global_map.dim())
        } else {
            None
        };
        log::info!(
            "patch ({row}, {col}): F = {:.6}, completeness gap {:.3e}",
            ig.f_input,
            ig.completeness_gap
        );
        entries.push(PatchEntry {
            dir: rel,
            sample: s.index,
            f_input: ig.f_input,
            f_baseline: ig.f_baseline,
            completeness_gap: ig.completeness_gap,
            relative_gap: ig.relative_gap(),
            local_map_shape: local_map.dim(),
            global_map_shape,
        });
    }
    write_json(
        &staged.join("token_stats.json"),
        &TokenSummary::from(&total),
    )?;
    write_json(
        &staged.join("manifest.json"),
        &Manifest {
            provenance: Provenance::new("inspect", &cfg, Some(&data)),
            horizon,
            input_step: t,
            input_date: time.date(t),
            model_id: file_fingerprint(&checkpoint_path(&cfg, horizon))?,
            attention: if settings.raw_last_layer {
                "last_layer"
            } else {
                "rollout"
            },
            ig_steps: settings.ig_steps,
            ig_baseline: "zero",
            ig_jobs: jobs,
            signed_variable_map: settings.signed,
            channels: cfg.layout.channel_names(cube),
            index_names: cube.indices().keys().cloned().collect(),
            max_completeness_gap: entries
                .iter()
                .map(|e| e.completeness_gap)
                .fold(0.0, f64::max),
            patches: entries,
        },
    )?;
    let dir = staged.commit()?;
    log::info!("wrote {}", dir.display());
    Ok(())
}
