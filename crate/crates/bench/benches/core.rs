use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use ndarray::{Array, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use televit::encoder::EncoderConfig;
use televit::encoder::Mode;
use televit::evaluation::auprc;
use televit::inspection::rollout;
use televit::tokenizer::SegmentCounts;
use televit::training::cross_entropy;
use televit::{AttentionRecord, ModelConfig, ModelInput, TeleVit, TokenizationSpec};

fn small_config() -> ModelConfig {
    ModelConfig {
        tokenizer: TokenizationSpec {
            local_patch: 4,
            global_patch: 4,
            index_patch: 10,
            dim: 32,
        },
        encoder: EncoderConfig {
            depth: 2,
            heads: 4,
            dim: 32,
            mlp_dim: 64,
            dropout: 0.0,
        },
        use_global: true,
        use_indices: true,
        shared_decoder: true,
        local_shape: [14, 16, 16],
        global_shape: [14, 16, 8],
        index_shape: [10, 10],
    }
}

fn input(cfg: &ModelConfig, rng: &mut impl Rng) -> ModelInput {
    let (l, g, i) = (cfg.local_shape, cfg.global_shape, cfg.index_shape);
    ModelInput {
        local: Array::from_shape_fn((l[0], l[1], l[2]), |_| rng.gen_range(-1.0..1.0)),
        global: Array::from_shape_fn((g[0], g[1], g[2]), |_| rng.gen_range(-1.0..1.0)),
        indices: Array::from_shape_fn((i[0], i[1]), |_| rng.gen_range(-1.0..1.0)),
    }
}

fn model(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = small_config();
    let net = TeleVit::new(cfg.clone(), 0).unwrap();
    let x = input(&cfg, &mut rng);
    let y = Array3::from_shape_fn((1, 16, 16), |_| if rng.gen_bool(0.2) { 1.0 } else { 0.0 });

    c.bench_function("forward/small", |b| {
        b.iter(|| net.forward(black_box(x.view()), Mode::Eval).unwrap())
    });
    c.bench_function("forward_backward/small", |b| {
        b.iter_batched(
            || net.zeros_like(),
            |mut grads| {
                let pass = net.forward(x.view(), Mode::Eval).unwrap();
                let (_, d) = cross_entropy(pass.logits.view(), y.view(), None).unwrap();
                net.backward(&pass, d.view(), &mut grads, false);
                grads
            },
            BatchSize::LargeInput,
        )
    });

    let paper = ModelConfig::paper();
    let big = TeleVit::new(paper.clone(), 0).unwrap();
    let xp = input(&paper, &mut rng);
    let mut group = c.benchmark_group("paper");
    group.sample_size(10);
    group.bench_function("forward", |b| {
        b.iter(|| big.forward(black_box(xp.view()), Mode::Eval).unwrap())
    });
    group.finish();
}

fn metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 100_000;
    let scores: Vec<f64> = (0..n)
        .map(|_| (rng.gen::<f64>() * 1000.0).round() / 1000.0)
        .collect();
    let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.05)).collect();
    c.bench_function("auprc/100k", |b| {
        b.iter(|| auprc(black_box(&scores), black_box(&labels)).unwrap())
    });
}

fn inspection(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let counts = SegmentCounts {
        local: 25,
        global: 72,
        indices: 100,
    };
    let n = counts.total();
    let mut weights = Array4::from_shape_fn((8, 8, n, n), |_| rng.gen::<f64>());
    for mut row in weights.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    let record = AttentionRecord { weights, counts };
    c.bench_function("rollout/paper", |b| {
        b.iter(|| rollout(black_box(&record)).unwrap())
    });
}

criterion_group!(benches, model, metrics, inspection);
criterion_main!(benches);
