mod common;

use common::*;
use ndarray::{s, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use televit::inspection::{
    integrated_gradients, most_important_variable, partition_blocks, reassemble_blocks, rollout,
    token_type_stats, Attributable, LinearSurrogate,
};
use televit::tokenizer::SegmentCounts;
use televit::ModelConfig;

fn counts(local: usize, global: usize, indices: usize) -> SegmentCounts {
    SegmentCounts {
        local,
        global,
        indices,
    }
}

/// Layer matrices built and multiplied with explicit loops.
fn rollout_oracle(w: &ndarray::Array4<f64>) -> Array2<f64> {
    let (k, a, n, _) = w.dim();
    let mut r = Array2::<f64>::eye(n);
    for layer in 0..k {
        let mut m = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                let mean: f64 = (0..a).map(|h| w[[layer, h, i, j]]).sum::<f64>() / a as f64;
                m[[i, j]] = mean + if i == j { 1.0 } else { 0.0 };
            }
            let total: f64 = (0..n).map(|j| m[[i, j]]).sum();
            for j in 0..n {
                m[[i, j]] /= total;
            }
        }
        let mut next = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                next[[i, j]] = (0..n).map(|q| m[[i, q]] * r[[q, j]]).sum();
            }
        }
        r = next;
    }
    r
}

#[test]
fn rollout_matches_the_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..25 {
        let c = counts(
            rng.gen_range(1..6),
            rng.gen_range(0..4),
            rng.gen_range(0..4),
        );
        let (k, a) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let rec = random_record(&mut rng, k, a, c);
        let got = rollout(&rec).unwrap().matrix;
        let want = rollout_oracle(&rec.weights);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn rollout_is_row_stochastic_and_non_negative() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let c = counts(
            rng.gen_range(1..10),
            rng.gen_range(0..6),
            rng.gen_range(0..6),
        );
        let (k, a) = (rng.gen_range(1..5), rng.gen_range(1..5));
        let rec = random_record(&mut rng, k, a, c);
        let r = rollout(&rec).unwrap();
        for row in r.matrix.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-5);
            assert!(row.iter().all(|v| *v >= 0.0));
        }
    }
}

#[test]
fn paper_blocks_have_paper_shapes() {
    let c = ModelConfig::paper().counts();
    let m = Array2::from_elem((197, 197), 1.0 / 197.0);
    let b = partition_blocks(m.view(), c).unwrap();
    assert_eq!(b.lg.dim(), (25, 72));
    assert_eq!(b.li.dim(), (25, 100));
    assert_eq!(b.ii.dim(), (100, 100));
    assert_eq!(reassemble_blocks(&b), m);
}

#[test]
fn token_stats_match_a_direct_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let c = counts(4, 3, 2);
    let r = rollout(&random_record(&mut rng, 2, 2, c)).unwrap();
    let stats = token_type_stats(r.matrix.view(), c).unwrap();
    let block = r.matrix.slice(s![0..4, 4..7]);
    let mean = block.sum() / 12.0;
    let var = block.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 12.0;
    assert!((stats.global.mean().unwrap() - mean).abs() < 1e-12);
    assert!((stats.global.std().unwrap() - var.sqrt()).abs() < 1e-9);

    let mut merged = stats;
    merged.merge(&stats);
    assert_eq!(merged.local.n, 32);
    assert!((merged.local.mean().unwrap() - stats.local.mean().unwrap()).abs() < 1e-12);
}

#[test]
fn model_records_feed_rollout() {
    let cfg = tiny_config(true);
    let model = televit::TeleVit::new(cfg.clone(), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_input(&cfg, &mut rng);
    let pass = model
        .forward(x.view(), televit::encoder::Mode::Eval)
        .unwrap();
    let rec = pass.attention_record();
    assert_eq!(rec.weights.dim(), (2, 2, 8, 8));
    let r = rollout(&rec).unwrap();
    assert_eq!(r.counts, cfg.counts());
}

#[test]
fn linear_surrogate_attributions_are_exact() {
    let cfg = tiny_config(true);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_input(&cfg, &mut rng);
    let f = LinearSurrogate {
        weights: random_input(&cfg, &mut rng),
        bias: -0.3,
    };
    for m in [2, 3, 17, 256] {
        let ig = integrated_gradients(&f, &x, m, 1).unwrap();
        for (a, (w, v)) in ig
            .attributions
            .global
            .iter()
            .zip(f.weights.global.iter().zip(&x.global))
        {
            assert!((a - w * v).abs() < 1e-12);
        }
        assert!(ig.completeness_gap < 1e-10);
    }
}

#[test]
fn completeness_gap_is_small_on_a_trained_model() {
    let (model, inputs) = trained_tiny_model(21, 60);
    for x in &inputs[..3] {
        let ig = integrated_gradients(&model, x, 256, 1).unwrap();
        let fine = integrated_gradients(&model, x, 4096, 4).unwrap();
        let span = (ig.f_input - ig.f_baseline).abs();
        assert!(
            ig.completeness_gap <= 0.01 * span,
            "gap {} span {span}",
            ig.completeness_gap
        );
        // The fine integral is the reference for the coarse attributions.
        let diff: f64 = ig
            .attributions
            .local
            .iter()
            .zip(&fine.attributions.local)
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff <= 0.01 * span, "{diff}");
        assert!(fine.completeness_gap <= ig.completeness_gap + 1e-9);
    }
}

#[test]
fn completeness_gap_shrinks_as_steps_double() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = tiny_config(true);
    let mut ratios = Vec::new();
    for seed in 0..10 {
        let model = televit::TeleVit::new(cfg.clone(), 100 + seed).unwrap();
        let x = random_input(&cfg, &mut rng);
        let coarse = integrated_gradients(&model, &x, 8, 1)
            .unwrap()
            .completeness_gap;
        let fine = integrated_gradients(&model, &x, 16, 1)
            .unwrap()
            .completeness_gap;
        ratios.push(fine / coarse.max(1e-300));
    }
    ratios.sort_by(|a, b| a.total_cmp(b));
    let median = 0.5 * (ratios[4] + ratios[5]);
    assert!(median <= 1.0, "{ratios:?}");
}

#[test]
fn ig_jobs_do_not_change_the_result_much() {
    let (model, inputs) = trained_tiny_model(7, 10);
    let a = integrated_gradients(&model, &inputs[0], 64, 1).unwrap();
    let b = integrated_gradients(&model, &inputs[0], 64, 3).unwrap();
    let c = integrated_gradients(&model, &inputs[0], 64, 3).unwrap();
    assert_eq!(b, c);
    for (x, y) in a.attributions.local.iter().zip(&b.attributions.local) {
        assert!((x - y).abs() < 1e-12);
    }
    assert_eq!(a.f_input, model.value(&inputs[0]).unwrap());
}

#[test]
fn variable_map_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let a = Array3::from_shape_fn((5, 6, 9), |_| rng.gen_range(-1.0..1.0));
        for signed in [false, true] {
            let map = most_important_variable(a.view(), 3, signed).unwrap();
            assert_eq!(map.dim(), (2, 3));
            for ((r, c), &best) in map.indexed_iter() {
                let mut top = (usize::MAX, f64::NEG_INFINITY);
                for ch in 0..5 {
                    let mut mass = 0.0;
                    for i in r * 3..r * 3 + 3 {
                        for j in c * 3..c * 3 + 3 {
                            mass += if signed {
                                a[[ch, i, j]]
                            } else {
                                a[[ch, i, j]].abs()
                            };
                        }
                    }
                    if mass > top.1 {
                        top = (ch, mass);
                    }
                }
                assert_eq!(best, top.0);
            }
        }
    }
}
