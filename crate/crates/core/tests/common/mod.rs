#![allow(dead_code)]

use ndarray::{Array, Array3};
use rand::Rng;
use televit::encoder::Mode;
use televit::nn::Parameters;
use televit::training::cross_entropy;
use televit::{EncoderConfig, ModelConfig, ModelInput, TeleVit, TokenizationSpec};

/// 4 local + 2 global + 2 index tokens, D = 8, K = 2, A = 2.
pub fn tiny_config(shared_decoder: bool) -> ModelConfig {
    ModelConfig {
        tokenizer: TokenizationSpec {
            local_patch: 2,
            global_patch: 2,
            index_patch: 1,
            dim: 8,
        },
        encoder: EncoderConfig {
            depth: 2,
            heads: 2,
            dim: 8,
            mlp_dim: 16,
            dropout: 0.0,
        },
        use_global: true,
        use_indices: true,
        shared_decoder,
        local_shape: [2, 4, 4],
        global_shape: [2, 4, 2],
        index_shape: [2, 1],
    }
}

pub fn random_input(cfg: &ModelConfig, rng: &mut impl Rng) -> ModelInput {
    let l = cfg.local_shape;
    let g = cfg.global_shape;
    let i = cfg.index_shape;
    ModelInput {
        local: Array::from_shape_fn((l[0], l[1], l[2]), |_| rng.gen_range(-1.5..1.5)),
        global: Array::from_shape_fn((g[0], g[1], g[2]), |_| rng.gen_range(-1.5..1.5)),
        indices: Array::from_shape_fn((i[0], i[1]), |_| rng.gen_range(-1.5..1.5)),
    }
}

pub fn random_target(cfg: &ModelConfig, rng: &mut impl Rng) -> Array3<f64> {
    let l = cfg.local_shape;
    Array3::from_shape_fn(
        (1, l[1], l[2]),
        |_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 },
    )
}

pub fn loss(model: &TeleVit, x: &ModelInput, y: &Array3<f64>) -> f64 {
    let pass = model.forward(x.view(), Mode::Eval).unwrap();
    cross_entropy(pass.logits.view(), y.view(), None).unwrap().0
}

/// Parameter gradients and input gradient of the loss.
pub fn loss_grads(model: &TeleVit, x: &ModelInput, y: &Array3<f64>) -> (TeleVit, ModelInput) {
    let pass = model.forward(x.view(), Mode::Eval).unwrap();
    let (_, d) = cross_entropy(pass.logits.view(), y.view(), None).unwrap();
    let mut grads = model.zeros_like();
    let dx = model.backward(&pass, d.view(), &mut grads, true).unwrap();
    (grads, dx)
}

pub fn flat_params(model: &TeleVit) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    model.visit("", &mut |name, a| {
        out.extend(
            a.iter()
                .enumerate()
                .map(|(k, v)| (format!("{name}[{k}]"), *v)),
        )
    });
    out
}

pub fn set_flat_param(model: &mut TeleVit, index: usize, value: f64) {
    let mut offset = 0;
    model.visit_mut("", &mut |_, mut a| {
        if index >= offset && index < offset + a.len() {
            *a.iter_mut().nth(index - offset).unwrap() = value;
        }
        offset += a.len();
    });
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

use televit::datacube::{
    build_samples, compute_stats, enumerate_samples, SampleLayout, Split, SplitYears, SynthConfig,
};
use televit::evaluation::{build_climatology, ClimatologyTable, RegionMask};
use televit::{CubeStore, NormalizationStats, Sample};

/// A small synthetic forecasting problem: 32 × 64 grid, five years,
/// 16 × 16 local windows, 4× coarsened global view.
pub struct Fixture {
    pub cube: CubeStore,
    pub layout: SampleLayout,
    pub splits: SplitYears,
    pub stats: NormalizationStats,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub regions: RegionMask,
    pub climatology: ClimatologyTable,
}

pub fn fixture(seed: u64, horizon: usize) -> Fixture {
    let cube = televit::datacube::make_synthetic_cube(&SynthConfig {
        seed,
        years: 5,
        n_lat: 32,
        n_lon: 64,
        ..SynthConfig::default()
    })
    .unwrap();
    let layout = SampleLayout {
        patch_size: 16,
        coarsen_factor: 4,
        index_steps: 10,
        index_stride: 4,
        positional: true,
    };
    let splits = SplitYears {
        train: [2002, 2003],
        val: [2004, 2004],
        test: [2005, 2005],
    };
    let stats = compute_stats(&cube, &layout, cube.time().steps_in_years(2002, 2003)).unwrap();
    let samples = |split| {
        let idx = enumerate_samples(&cube, &layout, &splits, split, horizon).unwrap();
        build_samples(&cube, &stats, &layout, &idx).unwrap()
    };
    let (train, val, test) = (
        samples(Split::Train),
        samples(Split::Val),
        samples(Split::Test),
    );
    let regions = RegionMask::new(cube.regions().unwrap().clone()).unwrap();
    let climatology = build_climatology(&cube, &[2002, 2003]).unwrap();
    Fixture {
        cube,
        layout,
        splits,
        stats,
        train,
        val,
        test,
        regions,
        climatology,
    }
}

/// 16 local, 8 global and 10 index tokens; D = 32, K = 2, A = 4.
pub fn fixture_model_config(f: &Fixture) -> ModelConfig {
    let mut cfg = ModelConfig::for_cube(
        &f.cube,
        &f.layout,
        TokenizationSpec {
            local_patch: 4,
            global_patch: 4,
            index_patch: 10,
            dim: 32,
        },
        EncoderConfig {
            depth: 2,
            heads: 4,
            dim: 32,
            mlp_dim: 64,
            dropout: 0.0,
        },
        true,
        true,
    );
    cfg.shared_decoder = true;
    cfg
}

pub fn fixture_train_config(seed: u64) -> televit::training::TrainConfig {
    televit::training::TrainConfig {
        epochs: 4,
        lr: 3e-3,
        warmup_fraction: 0.05,
        batch_size: 16,
        seed,
        horizon: 0,
        use_global: true,
        use_indices: true,
        mask_ocean_in_loss: true,
    }
}

/// The tiny gradient-check model after `steps` Adam steps on a fixed set
/// of random samples.
pub fn trained_tiny_model(seed: u64, steps: usize) -> (TeleVit, Vec<ModelInput>) {
    use rand::SeedableRng;
    let cfg = tiny_config(true);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<(ModelInput, Array3<f64>)> = (0..8)
        .map(|_| (random_input(&cfg, &mut rng), random_target(&cfg, &mut rng)))
        .collect();
    let mut model = TeleVit::new(cfg, seed).unwrap();
    let mut opt = televit::training::Adam::default();
    for _ in 0..steps {
        let mut grads = model.zeros_like();
        for (x, y) in &data {
            let (g, _) = loss_grads(&model, x, y);
            televit::nn::add_scaled(&mut grads, &g, 1.0 / data.len() as f64);
        }
        opt.step(&mut model, &grads, 1e-2);
    }
    (model, data.into_iter().map(|(x, _)| x).collect())
}

/// Random row-stochastic `K × A × N × N` attention weights.
pub fn random_record(
    rng: &mut impl Rng,
    layers: usize,
    heads: usize,
    counts: televit::tokenizer::SegmentCounts,
) -> televit::AttentionRecord {
    let n = counts.total();
    let mut w = ndarray::Array4::from_shape_fn((layers, heads, n, n), |_| {
        let z: f64 = rng.gen_range(-4.0..4.0);
        z.exp()
    });
    for mut row in w.lanes_mut(ndarray::Axis(3)) {
        let s = row.sum();
        row /= s;
    }
    televit::AttentionRecord { weights: w, counts }
}
