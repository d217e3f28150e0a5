//! Dense building blocks with explicit backward passes.
//!
//! Every layer is a plain parameter struct. `forward` returns whatever the
//! backward pass needs, and `backward` accumulates parameter gradients into
//! a same-shaped struct and returns the gradient of its input.

use ndarray::{Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Named access to every trainable tensor of a model component.
///
/// Visiting order is fixed, which is what the optimizer state, checkpoints
/// and gradient accumulation rely on.
pub trait Parameters {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, ArrayViewD<'a, f64>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, ArrayViewMutD<'_, f64>));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Total number of scalar parameters.
pub fn param_count<P: Parameters>(p: &P) -> usize {
    let mut n = 0;
    p.visit("", &mut |_, a| n += a.len());
    n
}

pub fn zero_params<P: Parameters>(p: &mut P) {
    p.visit_mut("", &mut |_, mut a| a.fill(0.0));
}

/// `dst += scale * src`, tensor by tensor.
pub fn add_scaled<P: Parameters>(dst: &mut P, src: &P, scale: f64) {
    let mut views = Vec::new();
    src.visit("", &mut |_, a| views.push(a));
    let mut it = views.into_iter();
    dst.visit_mut("", &mut |name, mut a| {
        let s = it
            .next()
            .unwrap_or_else(|| panic!("parameter {name} missing in source"));
        a.scaled_add(scale, &s);
    });
}

/// Affine map `y = x W + b` applied row-wise; `weight` is `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    /// Uniform fan-in initialization, `U(-1/sqrt(in), 1/sqrt(in))`, zero bias.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Linear {
            weight: Array2::from_shape_fn((fan_in, fan_out), |_| rng.gen_range(-bound..bound)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight);
        y += &self.bias;
        y
    }

    pub fn backward(
        &self,
        x: ArrayView2<'_, f64>,
        dy: ArrayView2<'_, f64>,
        grad: &mut Linear,
    ) -> Array2<f64> {
        grad.weight += &x.t().dot(&dy);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight.t())
    }

    /// Backward pass that skips the input gradient.
    pub fn backward_params(
        &self,
        x: ArrayView2<'_, f64>,
        dy: ArrayView2<'_, f64>,
        grad: &mut Linear,
    ) {
        grad.weight += &x.t().dot(&dy);
        grad.bias += &dy.sum_axis(Axis(0));
    }
}

impl Parameters for Linear {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, ArrayViewD<'a, f64>)) {
        f(join(prefix, "weight"), self.weight.view().into_dyn());
        f(join(prefix, "bias"), self.bias.view().into_dyn());
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, ArrayViewMutD<'_, f64>)) {
        f(join(prefix, "weight"), self.weight.view_mut().into_dyn());
        f(join(prefix, "bias"), self.bias.view_mut().into_dyn());
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        LayerNorm {
            gamma: Array1::zeros(dim),
            beta: Array1::zeros(dim),
        }
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, LayerNormCache) {
        let d = x.ncols() as f64;
        let mut xhat = x.to_owned();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, inv) in xhat.outer_iter_mut().zip(inv_std.iter_mut()) {
            let mean = row.sum() / d;
            row -= mean;
            let var = row.iter().map(|v| v * v).sum::<f64>() / d;
            *inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row *= *inv;
        }
        let mut y = &xhat * &self.gamma;
        y += &self.beta;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(
        &self,
        cache: &LayerNormCache,
        dy: ArrayView2<'_, f64>,
        grad: &mut LayerNorm,
    ) -> Array2<f64> {
        grad.gamma += &(&dy * &cache.xhat).sum_axis(Axis(0));
        grad.beta += &dy.sum_axis(Axis(0));
        let d = dy.ncols() as f64;
        let mut dx = &dy * &self.gamma;
        for ((mut row, xhat), inv) in dx
            .outer_iter_mut()
            .zip(cache.xhat.outer_iter())
            .zip(cache.inv_std.iter())
        {
            let mean_g = row.sum() / d;
            let mean_gx = row.dot(&xhat) / d;
            Zip::from(&mut row)
                .and(&xhat)
                .for_each(|g, &xh| *g = inv * (*g - mean_g - xh * mean_gx));
        }
        dx
    }
}

impl Parameters for LayerNorm {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, ArrayViewD<'a, f64>)) {
        f(join(prefix, "gamma"), self.gamma.view().into_dyn());
        f(join(prefix, "beta"), self.beta.view().into_dyn());
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, ArrayViewMutD<'_, f64>)) {
        f(join(prefix, "gamma"), self.gamma.view_mut().into_dyn());
        f(join(prefix, "beta"), self.beta.view_mut().into_dyn());
    }
}

/// Exact GELU, `x Φ(x)`.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

/// Row-wise softmax, stabilized by subtracting each row's maximum.
pub fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Small Gaussian initialization (σ = 0.02) used for positional tables.
pub fn normal_init(shape: (usize, usize), std: f64, rng: &mut impl Rng) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("valid std");
    Array2::from_shape_fn(shape, |_| dist.sample(rng))
}
