//! `televit train`: one model per horizon, selected by validation loss.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::time::Instant;

use serde::Serialize;
use televit::config::RunConfig;
use televit::datacube::Split;
use televit::training::{fingerprint, train, Checkpoint, LogRecord};
use televit::{Error, NormalizationStats, Result, TeleVit};

use crate::output::{write_json, StagedDir};
use crate::pipeline::{
    load_config, model_config, model_dir, open_data, split_samples, train_stats, Data, Provenance,
};
use crate::ConfigArgs;

#[derive(Serialize)]
struct Manifest {
    #[serde(flatten)]
    provenance: Provenance,
    horizon: usize,
    stats_fingerprint: String,
    n_train: usize,
    n_val: usize,
    steps: usize,
    best_epoch: usize,
    best_val_loss: f64,
    val_losses: Vec<f64>,
    final_train_loss: f64,
    elapsed_seconds: f64,
}

pub fn run(args: &ConfigArgs, jobs: usize) -> Result<()> {
    let cfg = load_config(args)?;
    if jobs == 0 {
        return Err(Error::config("--jobs must be at least 1"));
    }
    let data = open_data(&cfg)?;
    let stats = train_stats(&cfg, &data.cube)?;
    let horizons = cfg.horizons.clone();
    let jobs = jobs.min(horizons.len());

    let results: Vec<Result<()>> = if jobs == 1 {
        horizons
            .iter()
            .map(|&h| train_horizon(&cfg, &data, &stats, h))
            .collect()
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let mut results: Vec<(usize, Result<()>)> = std::thread::scope(|scope| {
            let workers: Vec<_> = (0..jobs)
                .map(|_| {
                    scope.spawn(|| {
                        let mut done = Vec::new();
                        loop {
                            let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                            let Some(&h) = horizons.get(i) else { break };
                            done.push((i, train_horizon(&cfg, &data, &stats, h)));
                        }
                        done
                    })
                })
                .collect();
            workers
                .into_iter()
                .flat_map(|w| w.join().expect("training worker panicked"))
                .collect()
        });
        results.sort_by_key(|(i, _)| *i);
        results.into_iter().map(|(_, r)| r).collect()
    };
    results.into_iter().collect()
}

fn train_horizon(cfg: &RunConfig, data: &Data, stats: &NormalizationStats, h: usize) -> Result<()> {
    let start = Instant::now();
    let train_cfg = cfg.train_config(h);
    let train_set = split_samples(cfg, &data.cube, stats, Split::Train, h)?;
    let val_set = split_samples(cfg, &data.cube, stats, Split::Val, h)?;
    if train_set.indices.is_empty() || val_set.indices.is_empty() {
        return Err(Error::config(format!(
            "h={h}: the training or validation split has no samples"
        )));
    }
    log::info!(
        "h={h}: {} training and {} validation samples, {} epochs",
        train_set.indices.len(),
        val_set.indices.len(),
        train_cfg.epochs
    );

    let staged = StagedDir::new(model_dir(cfg, h))?;
    let log_path = staged.join("log.jsonl");
    let mut log_file =
        BufWriter::new(File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
    let mut write_err = None;
    let model = TeleVit::new(model_config(cfg, &data.cube)?, cfg.seed)?;
    let outcome = train(
        model,
        &train_set,
        &val_set,
        &train_cfg,
        &mut |rec: &LogRecord| {
            let line = serde_json::to_string(rec).expect("log record serializes");
            if let Err(e) = writeln!(log_file, "{line}") {
                write_err.get_or_insert(e);
            }
            if let Some(v) = rec.val_loss {
                log::info!(
                    "h={h} epoch {}: train {:.5}, val {v:.5}",
                    rec.epoch,
                    rec.loss
                );
            }
        },
    )?;
    if let Some(e) = write_err {
        return Err(Error::io(&log_path, e));
    }
    log_file.flush().map_err(|e| Error::io(&log_path, e))?;
    drop(log_file);

    let stats_fingerprint = fingerprint(stats);
    Checkpoint {
        model: outcome.best,
        train_config: train_cfg,
        epoch: outcome.best_epoch,
        val_loss: outcome.best_val_loss,
        stats: Some(stats.clone()),
        layout: Some(cfg.layout.clone()),
        data_fingerprint: data.fingerprint.clone(),
        stats_fingerprint: stats_fingerprint.clone(),
    }
    .save(&staged.join("best.safetensors"))?;
    write_json(
        &staged.join("manifest.json"),
        &Manifest {
            provenance: Provenance::new("train", cfg, Some(data)),
            horizon: h,
            stats_fingerprint,
            n_train: train_set.indices.len(),
            n_val: val_set.indices.len(),
            steps: outcome.step_losses.len(),
            best_epoch: outcome.best_epoch,
            best_val_loss: outcome.best_val_loss,
            val_losses: outcome.val_losses,
            final_train_loss: outcome.step_losses.last().copied().unwrap_or(f64::NAN),
            elapsed_seconds: start.elapsed().as_secs_f64(),
        },
    )?;
    let dir = staged.commit()?;
    log::info!(
        "h={h}: best epoch {} (val {:.5}), saved to {}",
        outcome.best_epoch,
        outcome.best_val_loss,
        dir.display()
    );
    Ok(())
}
