//! Loss, optimizer, learning-rate schedule and the training loop with
//! best-validation checkpointing.

mod adam;
mod checkpoint;
mod loss;
mod schedule;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use checkpoint::{fingerprint, Checkpoint};
pub use loss::cross_entropy;
pub use schedule::{lr_schedule, CosineSchedule};

use std::borrow::Cow;

use crate::datacube::{
    extract_sample, CubeStore, NormalizationStats, Sample, SampleIndex, SampleLayout,
};
use crate::encoder::Mode;
use crate::error::{Error, Result};
use crate::model::TeleVit;
use crate::nn::{add_scaled, zero_params};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Peak learning rate.
    pub lr: f64,
    pub warmup_fraction: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub horizon: usize,
    pub use_global: bool,
    pub use_indices: bool,
    /// Restrict the loss to land cells instead of every cell of a patch.
    pub mask_ocean_in_loss: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            lr: 1e-4,
            warmup_fraction: 0.05,
            batch_size: 16,
            seed: 0,
            horizon: 0,
            use_global: true,
            use_indices: true,
            mask_ocean_in_loss: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::config("warmup_fraction must lie in [0, 1)"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be positive"));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::config(
                "learning rate must be finite and non-negative",
            ));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n_samples: usize) -> usize {
        n_samples.div_ceil(self.batch_size)
    }
}

/// Random access to a dataset of samples.
pub trait SampleSource: Sync {
    fn len(&self) -> usize;
    fn get(&self, i: usize) -> Result<Cow<'_, Sample>>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SampleSource for [Sample] {
    fn len(&self) -> usize {
        <[Sample]>::len(self)
    }

    fn get(&self, i: usize) -> Result<Cow<'_, Sample>> {
        Ok(Cow::Borrowed(&self[i]))
    }
}

impl SampleSource for Vec<Sample> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn get(&self, i: usize) -> Result<Cow<'_, Sample>> {
        Ok(Cow::Borrowed(&self[i]))
    }
}

/// Samples extracted from the cube on demand, for datasets too large to
/// hold in memory.
pub struct LazySamples<'a> {
    pub cube: &'a CubeStore,
    pub stats: &'a NormalizationStats,
    pub layout: &'a SampleLayout,
    pub indices: Vec<SampleIndex>,
}

impl SampleSource for LazySamples<'_> {
    fn len(&self) -> usize {
        self.indices.len()
    }

    fn get(&self, i: usize) -> Result<Cow<'_, Sample>> {
        extract_sample(self.cube, self.stats, self.layout, self.indices[i]).map(Cow::Owned)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_loss: Option<f64>,
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub best: TeleVit,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Parameters after the last step.
    pub last: TeleVit,
    pub val_losses: Vec<f64>,
    pub step_losses: Vec<f64>,
}

/// 1-based epoch of the first minimum of `val_losses`.
pub fn select_best(val_losses: &[f64]) -> Option<usize> {
    val_losses
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, &v)| match best {
            Some((_, b)) if b <= v => best,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i + 1)
}

/// Loss of one sample and, optionally, its gradients added into `grads`
/// scaled by `scale`.
pub fn sample_loss(
    model: &TeleVit,
    sample: &Sample,
    mask_ocean: bool,
    mode: Mode<'_>,
    grads: Option<(&mut TeleVit, f64)>,
) -> Result<f64> {
    let pass = model.forward(sample.input(), mode)?;
    let mask = mask_ocean.then(|| sample.land.view());
    let (loss, mut d_logits) = cross_entropy(pass.logits.view(), sample.y.view(), mask)?;
    if let Some((g, scale)) = grads {
        d_logits *= scale;
        model.backward(&pass, d_logits.view(), g, false);
    }
    Ok(loss)
}

/// Mean per-sample loss over a dataset, in inference mode.
pub fn evaluate_loss<S: SampleSource + ?Sized>(
    model: &TeleVit,
    samples: &S,
    mask_ocean: bool,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::config("cannot evaluate loss on an empty dataset"));
    }
    let mut total = 0.0;
    for i in 0..samples.len() {
        let s = samples.get(i)?;
        total += sample_loss(model, s.as_ref(), mask_ocean, Mode::Eval, None)?;
    }
    Ok(total / samples.len() as f64)
}

/// Trains `model` with Adam under a warmup + cosine schedule.
///
/// Samples are reshuffled every epoch from the run seed; the validation
/// loss is computed after each epoch and the best epoch's parameters are
/// returned. `log` receives one record per step and one per epoch end.
pub fn train<S: SampleSource + ?Sized, V: SampleSource + ?Sized>(
    mut model: TeleVit,
    train_set: &S,
    val_set: &V,
    cfg: &TrainConfig,
    log: &mut dyn FnMut(&LogRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::config(
            "training and validation sets must be non-empty",
        ));
    }
    if model.config.use_global != cfg.use_global || model.config.use_indices != cfg.use_indices {
        return Err(Error::config(
            "model variant does not match the training config's variant flags",
        ));
    }
    let steps_per_epoch = cfg.steps_per_epoch(train_set.len());
    let schedule = CosineSchedule::new(cfg.lr, cfg.warmup_fraction, cfg.epochs * steps_per_epoch);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut opt = Adam::default();
    let mut grads = model.zeros_like();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0usize;
    let mut best: Option<(TeleVit, usize, f64)> = None;
    let mut val_losses = Vec::with_capacity(cfg.epochs);
    let mut step_losses = Vec::with_capacity(cfg.epochs * steps_per_epoch);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(cfg.batch_size) {
            zero_params(&mut grads);
            let scale = 1.0 / batch.len() as f64;
            let mut loss = 0.0;
            for &i in batch {
                let sample = train_set.get(i)?;
                loss += scale
                    * sample_loss(
                        &model,
                        sample.as_ref(),
                        cfg.mask_ocean_in_loss,
                        Mode::Train(&mut dropout_rng),
                        Some((&mut grads, scale)),
                    )?;
            }
            if !loss.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite training loss at step {step} (epoch {epoch})"
                )));
            }
            let lr = schedule.lr(step);
            opt.step(&mut model, &grads, lr);
            step_losses.push(loss);
            log(&LogRecord {
                step,
                epoch,
                lr,
                loss,
                val_loss: None,
            });
            step += 1;
        }
        let val = evaluate_loss(&model, val_set, cfg.mask_ocean_in_loss)?;
        log(&LogRecord {
            step: step.saturating_sub(1),
            epoch,
            lr: schedule.lr(step.saturating_sub(1)),
            loss: *step_losses.last().unwrap_or(&f64::NAN),
            val_loss: Some(val),
        });
        val_losses.push(val);
        if best.as_ref().is_none_or(|(_, _, b)| val < *b) {
            best = Some((model.clone(), epoch, val));
        }
    }
    let (best_model, best_epoch, best_val_loss) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best: best_model,
        best_epoch,
        best_val_loss,
        last: model,
        val_losses,
        step_losses,
    })
}

/// Sum of squared parameter differences, handy for comparing runs.
pub fn param_distance(a: &TeleVit, b: &TeleVit) -> f64 {
    let mut diff = a.clone();
    add_scaled(&mut diff, b, -1.0);
    let mut total = 0.0;
    crate::nn::Parameters::visit(&diff, "", &mut |_, v| {
        total += v.iter().map(|x| x * x).sum::<f64>()
    });
    total
}
