use ndarray::{Array2, Array3, ArrayView3, Zip};

use crate::decoder::positive_scores;
use crate::encoder::Mode;
use crate::error::{Error, Result};
use crate::model::{ModelInput, TeleVit};

/// A scalar function of the model inputs with its input gradient.
pub trait Attributable: Sync {
    fn value_and_grad(&self, x: &ModelInput) -> Result<(f64, ModelInput)>;

    fn value(&self, x: &ModelInput) -> Result<f64> {
        Ok(self.value_and_grad(x)?.0)
    }
}

/// `F(x)`: the sum of the positive-class scores over the local window.
impl Attributable for TeleVit {
    fn value_and_grad(&self, x: &ModelInput) -> Result<(f64, ModelInput)> {
        let pass = self.forward(x.view(), Mode::Eval)?;
        let p = positive_scores(pass.logits.view());
        // d p / d l1 = p (1 - p) = -d p / d l0
        let dp = p.mapv(|v| v * (1.0 - v));
        let mut d_logits = Array3::zeros(pass.logits.raw_dim());
        d_logits.index_axis_mut(ndarray::Axis(0), 0).assign(&-&dp);
        d_logits.index_axis_mut(ndarray::Axis(0), 1).assign(&dp);
        let mut scratch = self.zeros_like();
        let grad = self
            .backward(&pass, d_logits.view(), &mut scratch, true)
            .expect("input gradient requested");
        Ok((p.sum(), grad))
    }
}

/// `F(x) = w · x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSurrogate {
    pub weights: ModelInput,
    pub bias: f64,
}

impl Attributable for LinearSurrogate {
    fn value_and_grad(&self, x: &ModelInput) -> Result<(f64, ModelInput)> {
        let w = &self.weights;
        if w.local.dim() != x.local.dim()
            || w.global.dim() != x.global.dim()
            || w.indices.dim() != x.indices.dim()
        {
            return Err(Error::contract(
                "surrogate weights and input differ in shape",
            ));
        }
        let v = (&w.local * &x.local).sum()
            + (&w.global * &x.global).sum()
            + (&w.indices * &x.indices).sum()
            + self.bias;
        Ok((v, w.clone()))
    }
}

/// Integrated-gradients attributions against the zero baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap {
    pub attributions: ModelInput,
    pub baseline: String,
    pub steps: usize,
    pub f_input: f64,
    pub f_baseline: f64,
    /// `|Σ IG − (F(x) − F(0))|`.
    pub completeness_gap: f64,
}

impl AttributionMap {
    /// Gap as a fraction of `|F(x) − F(0)|`.
    pub fn relative_gap(&self) -> f64 {
        self.completeness_gap / (self.f_input - self.f_baseline).abs()
    }
}

fn accumulate(acc: &mut ModelInput, g: &ModelInput) {
    acc.local += &g.local;
    acc.global += &g.global;
    acc.indices += &g.indices;
}

fn gradient_sum(
    f: &dyn Attributable,
    x: &ModelInput,
    steps: std::ops::Range<usize>,
    m: usize,
) -> Result<ModelInput> {
    let mut acc = x.zeros_like();
    for k in steps {
        let alpha = (k as f64 + 0.5) / m as f64;
        let (_, g) = f.value_and_grad(&x.scaled(alpha))?;
        if !g.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite gradient at alpha = {alpha} (step {} of {m})",
                k + 1
            )));
        }
        accumulate(&mut acc, &g);
    }
    Ok(acc)
}

/// Midpoint-rule integrated gradients with `m` steps,
/// `IG = x ⊙ (1/m) Σ_k ∇F(α_k x)` with `α_k = (k − ½)/m`.
///
/// With `jobs > 1` the steps are split into that many contiguous chunks
/// evaluated on separate threads; the chunk sums are added in chunk order,
/// so a given `jobs` value always gives the same result.
pub fn integrated_gradients(
    f: &dyn Attributable,
    x: &ModelInput,
    m: usize,
    jobs: usize,
) -> Result<AttributionMap> {
    if m < 2 {
        return Err(Error::config("integrated gradients need at least 2 steps"));
    }
    let jobs = jobs.clamp(1, m);
    let bounds: Vec<_> = (0..jobs)
        .map(|j| j * m / jobs..(j + 1) * m / jobs)
        .collect();
    let partials: Vec<Result<ModelInput>> = if jobs == 1 {
        vec![gradient_sum(f, x, 0..m, m)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = bounds
                .iter()
                .map(|r| scope.spawn(move || gradient_sum(f, x, r.clone(), m)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("attribution worker panicked"))
                .collect()
        })
    };
    let mut total = x.zeros_like();
    for p in partials {
        accumulate(&mut total, &p?);
    }
    let scale = 1.0 / m as f64;
    let attributions = ModelInput {
        local: &x.local * &total.local * scale,
        global: &x.global * &total.global * scale,
        indices: &x.indices * &total.indices * scale,
    };
    let f_input = f.value(x)?;
    let f_baseline = f.value(&x.zeros_like())?;
    let completeness_gap = (attributions.sum() - (f_input - f_baseline)).abs();
    Ok(AttributionMap {
        attributions,
        baseline: "zero".to_string(),
        steps: m,
        f_input,
        f_baseline,
        completeness_gap,
    })
}

/// Per patch of side `patch`, the channel with the largest attribution
/// mass: `Σ |IG|` by default, or the signed sum with `signed`. Ties go to
/// the lowest channel index.
pub fn most_important_variable(
    attr: ArrayView3<'_, f64>,
    patch: usize,
    signed: bool,
) -> Result<Array2<usize>> {
    let (c, h, w) = attr.dim();
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::contract(format!(
            "{h}x{w} attributions do not tile into patches of {patch}"
        )));
    }
    if c == 0 {
        return Err(Error::contract("attributions have no channels"));
    }
    let mut out = Array2::zeros((h / patch, w / patch));
    Zip::indexed(&mut out).for_each(|(r, col), best| {
        let mass = |ch: usize| {
            let window = attr.slice(ndarray::s![
                ch,
                r * patch..(r + 1) * patch,
                col * patch..(col + 1) * patch
            ]);
            if signed {
                window.sum()
            } else {
                window.iter().map(|v| v.abs()).sum()
            }
        };
        let mut top = (0, mass(0));
        for ch in 1..c {
            let v = mass(ch);
            if v > top.1 {
                top = (ch, v);
            }
        }
        *best = top.0;
    });
    Ok(out)
}
