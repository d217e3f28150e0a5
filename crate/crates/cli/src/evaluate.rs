//! `televit evaluate`: test-split AUPRC of the trained models and the
//! climatology baseline, globally and per region.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::Serialize;
use televit::datacube::Split;
use televit::evaluation::{
    build_climatology, evaluate_climatology, evaluate_model, pr_curve, score_histogram,
    write_pr_curve, write_report, EvalSet, Histogram, ReportRow, GLOBAL_REGION,
};
use televit::training::LazySamples;
use televit::{Error, NormalizationStats, PredictionMap, Result};

use crate::output::{create_dir, write_json, StagedDir};
use crate::pipeline::{
    checkpoint_path, file_fingerprint, load_checkpoint, load_config, open_data, split_samples,
    Provenance,
};
use crate::ConfigArgs;

const CLIMATOLOGY: &str = "climatology";

#[derive(Serialize)]
struct Manifest {
    #[serde(flatten)]
    provenance: Provenance,
    climatology_only: bool,
    climatology_years: Vec<i32>,
    test_years: [i32; 2],
    /// Global AUPRC per `model_h{horizon}`; null where undefined.
    global_auprc: BTreeMap<String, Option<f64>>,
    /// SHA-256 of each checkpoint evaluated, per horizon.
    checkpoints: BTreeMap<usize, String>,
}

pub fn run(args: &ConfigArgs, climatology_only: bool) -> Result<()> {
    let cfg = load_config(args)?;
    let data = open_data(&cfg)?;
    let [first, last] = cfg.splits.train;
    let years: Vec<i32> = (first..=last).collect();
    let table = build_climatology(&data.cube, &years)?;
    // Labels and land cells do not depend on standardization.
    let raw_stats = NormalizationStats::identity(&data.cube, &cfg.layout);
    let variant = cfg.variant_name();

    let staged = StagedDir::new(cfg.output_dir.join("evaluate"))?;
    let pr_dir = staged.join("pr");
    if cfg.evaluate.pr_curves {
        create_dir(&pr_dir)?;
    }
    let mut rows: Vec<ReportRow> = Vec::new();
    let mut histograms: BTreeMap<String, Histogram> = BTreeMap::new();
    let mut global_auprc = BTreeMap::new();
    let mut checkpoints = BTreeMap::new();

    for &h in &cfg.horizons {
        let mut sets: Vec<(&str, EvalSet)> = Vec::new();
        let clim_samples = split_samples(&cfg, &data.cube, &raw_stats, Split::Test, h)?;
        let indices = clim_samples.indices.clone();
        if indices.is_empty() {
            return Err(Error::config(format!(
                "h={h}: the test split has no samples"
            )));
        }
        sets.push((
            CLIMATOLOGY,
            evaluate_climatology(&table, &data.cube, &clim_samples, &data.regions)?,
        ));
        if !climatology_only {
            let ckpt = load_checkpoint(&cfg, &data, h)?;
            checkpoints.insert(h, file_fingerprint(&checkpoint_path(&cfg, h))?);
            let stats = ckpt.stats.as_ref().expect("checked on load");
            let samples = LazySamples {
                cube: &data.cube,
                stats,
                layout: &cfg.layout,
                indices,
            };
            sets.push((
                variant,
                evaluate_model(&ckpt.model, &samples, &data.regions)?,
            ));
        }
        for (name, set) in sets {
            let report = set.report(name, h)?;
            let global = report
                .iter()
                .find(|r| r.region == GLOBAL_REGION)
                .and_then(|r| r.auprc);
            match global {
                Some(v) => log::info!("h={h} {name}: AUPRC {v:.4} on {} cells", set.len()),
                None => log::warn!("h={h} {name}: no burned cells in the test split"),
            }
            global_auprc.insert(format!("{name}_h{h}"), global);
            rows.extend(report);

            if cfg.evaluate.pr_curves {
                match pr_curve(&set.scores, &set.labels) {
                    Ok(curve) => write_pr_curve(&curve, &pr_dir.join(format!("{name}_h{h}.tsv")))?,
                    Err(Error::UndefinedMetric(_)) => {}
                    Err(e) => return Err(e),
                }
            }
            let n = set.len();
            let map = PredictionMap {
                scores: Array2::from_shape_vec((1, n), set.scores).expect("length matches"),
                logits: None,
                valid: Array2::from_elem((1, n), true),
            };
            histograms.insert(
                format!("{name}_h{h}"),
                score_histogram(&map, cfg.evaluate.histogram_bins)?,
            );
        }
    }

    write_report(&rows, &staged.join("report.tsv"))?;
    write_json(&staged.join("histograms.json"), &histograms)?;
    write_json(
        &staged.join("manifest.json"),
        &Manifest {
            provenance: Provenance::new("evaluate", &cfg, Some(&data)),
            climatology_only,
            climatology_years: table.years.clone(),
            test_years: cfg.splits.test,
            global_auprc,
            checkpoints,
        },
    )?;
    let dir = staged.commit()?;
    log::info!("wrote {}", dir.join("report.tsv").display());
    Ok(())
}
