mod common;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use televit::inspection::Attributable;
use televit::nn::param_count;
use televit::TeleVit;

const EPS: f64 = 1e-5;

fn check_params(shared: bool, seed: u64) {
    let cfg = tiny_config(shared);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = TeleVit::new(cfg.clone(), seed).unwrap();
    let x = random_input(&cfg, &mut rng);
    let y = random_target(&cfg, &mut rng);
    let (grads, _) = loss_grads(&model, &x, &y);
    let analytic = flat_params(&grads);
    let values = flat_params(&model);
    assert_eq!(analytic.len(), param_count(&model));
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let k = rng.gen_range(0..values.len());
        let mut plus = model.clone();
        set_flat_param(&mut plus, k, values[k].1 + EPS);
        let mut minus = model.clone();
        set_flat_param(&mut minus, k, values[k].1 - EPS);
        let numeric = (loss(&plus, &x, &y) - loss(&minus, &x, &y)) / (2.0 * EPS);
        let err = rel_err(analytic[k].1, numeric, 1e-7);
        worst = worst.max(err);
        assert!(
            err <= 1e-3,
            "{}: analytic {} numeric {numeric}",
            values[k].0,
            analytic[k].1
        );
    }
    eprintln!("shared={shared} worst relative error {worst:.2e}");
}

#[test]
fn parameter_gradients_match_finite_differences() {
    check_params(true, 1);
    check_params(false, 2);
}

#[test]
fn every_parameter_receives_gradient() {
    let cfg = tiny_config(true);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let model = TeleVit::new(cfg.clone(), 9).unwrap();
    let (grads, _) = loss_grads(
        &model,
        &random_input(&cfg, &mut rng),
        &random_target(&cfg, &mut rng),
    );
    let mut zero_tensors = Vec::new();
    televit::nn::Parameters::visit(&grads, "", &mut |name, a| {
        if a.iter().all(|v| *v == 0.0) {
            zero_tensors.push(name);
        }
    });
    assert!(zero_tensors.is_empty(), "{zero_tensors:?}");
}

#[test]
fn input_gradients_match_finite_differences() {
    let cfg = tiny_config(true);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = TeleVit::new(cfg.clone(), 3).unwrap();
    let x = random_input(&cfg, &mut rng);
    let (_, grad) = model.value_and_grad(&x).unwrap();
    let f = |x: &televit::ModelInput| model.value(x).unwrap();
    let n_l = x.local.len();
    let n_g = x.global.len();
    for k in 0..n_l + n_g + x.indices.len() {
        let mut plus = x.clone();
        let mut minus = x.clone();
        let (a, p, m) = if k < n_l {
            (
                grad.local.as_slice().unwrap()[k],
                &mut plus.local.as_slice_mut().unwrap()[k],
                &mut minus.local.as_slice_mut().unwrap()[k],
            )
        } else if k < n_l + n_g {
            (
                grad.global.as_slice().unwrap()[k - n_l],
                &mut plus.global.as_slice_mut().unwrap()[k - n_l],
                &mut minus.global.as_slice_mut().unwrap()[k - n_l],
            )
        } else {
            (
                grad.indices.as_slice().unwrap()[k - n_l - n_g],
                &mut plus.indices.as_slice_mut().unwrap()[k - n_l - n_g],
                &mut minus.indices.as_slice_mut().unwrap()[k - n_l - n_g],
            )
        };
        *p += EPS;
        *m -= EPS;
        let numeric = (f(&plus) - f(&minus)) / (2.0 * EPS);
        assert!(
            rel_err(a, numeric, 1e-7) <= 1e-4,
            "input {k}: {a} vs {numeric}"
        );
    }
}

#[test]
fn disabled_sources_get_zero_input_gradient() {
    let mut cfg = tiny_config(true);
    cfg.use_global = false;
    cfg.use_indices = false;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = TeleVit::new(cfg.clone(), 4).unwrap();
    let x = random_input(&cfg, &mut rng);
    let (_, grad) = model.value_and_grad(&x).unwrap();
    assert!(grad.global.iter().all(|v| *v == 0.0));
    assert!(grad.indices.iter().all(|v| *v == 0.0));
    assert!(grad.local.iter().any(|v| *v != 0.0));
}
