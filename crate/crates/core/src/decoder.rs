//! Per-local-token linear decoding and prediction-map assembly.

use std::collections::BTreeMap;

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{join, Linear, Parameters};

pub const NUM_CLASSES: usize = 2;

/// Linear map from a local token to the class logits of its own patch,
/// either one projection shared by all tokens or one per token.
#[derive(Debug, Clone, PartialEq)]
pub enum DecoderParams {
    Shared(Linear),
    PerToken(Vec<Linear>),
}

impl DecoderParams {
    pub fn init(
        dim: usize,
        patch: usize,
        n_local: usize,
        shared: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let out = NUM_CLASSES * patch * patch;
        if shared {
            DecoderParams::Shared(Linear::init(dim, out, rng))
        } else {
            DecoderParams::PerToken((0..n_local).map(|_| Linear::init(dim, out, rng)).collect())
        }
    }

    fn projection(&self, token: usize) -> &Linear {
        match self {
            DecoderParams::Shared(l) => l,
            DecoderParams::PerToken(v) => &v[token],
        }
    }

    fn check(&self, z: ArrayView2<'_, f64>, grid: (usize, usize), patch: usize) -> Result<()> {
        let n = grid.0 * grid.1;
        if z.nrows() != n || n == 0 {
            return Err(Error::contract(format!(
                "decoder needs {n} local tokens, got {}",
                z.nrows()
            )));
        }
        if let DecoderParams::PerToken(v) = self {
            if v.len() != n {
                return Err(Error::contract(format!(
                    "decoder has {} per-token projections for {n} tokens",
                    v.len()
                )));
            }
        }
        let p = self.projection(0);
        if p.in_dim() != z.ncols() || p.out_dim() != NUM_CLASSES * patch * patch {
            return Err(Error::config(
                "decoder projection shape does not match tokens",
            ));
        }
        Ok(())
    }

    /// Decodes the local tokens `z` (`N_l × D`, row-major over `grid`) into
    /// `2 × (rows·P) × (cols·P)` logits. Token `(r, c)` fills rows
    /// `[P·r, P·r + P)` and columns `[P·c, P·c + P)`.
    pub fn decode_logits(
        &self,
        z: ArrayView2<'_, f64>,
        grid: (usize, usize),
        patch: usize,
    ) -> Result<Array3<f64>> {
        self.check(z, grid, patch)?;
        let flat = match self {
            DecoderParams::Shared(l) => l.forward(z),
            DecoderParams::PerToken(v) => {
                let mut out = Array2::zeros((z.nrows(), v[0].out_dim()));
                for (t, l) in v.iter().enumerate() {
                    out.row_mut(t)
                        .assign(&l.forward(z.slice(s![t..t + 1, ..])).row(0));
                }
                out
            }
        };
        Ok(tokens_to_map(flat.view(), grid, patch))
    }

    /// Gradient of the local tokens given the gradient of the logits.
    pub fn backward(
        &self,
        z: ArrayView2<'_, f64>,
        d_logits: ArrayView3<'_, f64>,
        grid: (usize, usize),
        patch: usize,
        grad: &mut DecoderParams,
    ) -> Array2<f64> {
        let d_flat = map_to_tokens(d_logits, grid, patch);
        match (self, grad) {
            (DecoderParams::Shared(l), DecoderParams::Shared(g)) => l.backward(z, d_flat.view(), g),
            (DecoderParams::PerToken(v), DecoderParams::PerToken(gs)) => {
                let mut dz = Array2::zeros(z.raw_dim());
                for (t, (l, g)) in v.iter().zip(gs.iter_mut()).enumerate() {
                    let d =
                        l.backward(z.slice(s![t..t + 1, ..]), d_flat.slice(s![t..t + 1, ..]), g);
                    dz.row_mut(t).assign(&d.row(0));
                }
                dz
            }
            _ => panic!("decoder gradient layout does not match parameters"),
        }
    }
}

impl Parameters for DecoderParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, ArrayViewD<'a, f64>)) {
        match self {
            DecoderParams::Shared(l) => l.visit(prefix, f),
            DecoderParams::PerToken(v) => {
                for (i, l) in v.iter().enumerate() {
                    l.visit(&join(prefix, &i.to_string()), f);
                }
            }
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, ArrayViewMutD<'_, f64>)) {
        match self {
            DecoderParams::Shared(l) => l.visit_mut(prefix, f),
            DecoderParams::PerToken(v) => {
                for (i, l) in v.iter_mut().enumerate() {
                    l.visit_mut(&join(prefix, &i.to_string()), f);
                }
            }
        }
    }
}

/// Reshapes per-token outputs, each flattened class-major then row then
/// column, into a `2 × H × W` map.
fn tokens_to_map(flat: ArrayView2<'_, f64>, grid: (usize, usize), patch: usize) -> Array3<f64> {
    let (rows, cols) = grid;
    let mut out = Array3::zeros((NUM_CLASSES, rows * patch, cols * patch));
    for (t, token) in flat.outer_iter().enumerate() {
        let (r, c) = (t / cols, t % cols);
        let mut block = out.slice_mut(s![
            ..,
            r * patch..(r + 1) * patch,
            c * patch..(c + 1) * patch
        ]);
        for (d, v) in block.iter_mut().zip(token.iter()) {
            *d = *v;
        }
    }
    out
}

fn map_to_tokens(map: ArrayView3<'_, f64>, grid: (usize, usize), patch: usize) -> Array2<f64> {
    let (rows, cols) = grid;
    let mut flat = Array2::zeros((rows * cols, NUM_CLASSES * patch * patch));
    for r in 0..rows {
        for c in 0..cols {
            let block = map.slice(s![
                ..,
                r * patch..(r + 1) * patch,
                c * patch..(c + 1) * patch
            ]);
            for (d, v) in flat.row_mut(r * cols + c).iter_mut().zip(block.iter()) {
                *d = *v;
            }
        }
    }
    flat
}

/// Positive-class probability per cell with its validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMap {
    pub scores: Array2<f64>,
    /// `2 × H × W` logits, when the map came straight from the decoder.
    pub logits: Option<Array3<f64>>,
    pub valid: Array2<bool>,
}

impl PredictionMap {
    /// Softmax of the two-class logits, positive channel.
    pub fn from_logits(logits: Array3<f64>, valid: Option<Array2<bool>>) -> Self {
        let scores = positive_scores(logits.view());
        let valid = valid.unwrap_or_else(|| Array2::from_elem(scores.raw_dim(), true));
        PredictionMap {
            scores,
            logits: Some(logits),
            valid,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.scores.dim()
    }

    /// Scores with cells below `threshold` or outside the mask set to NaN.
    pub fn masked_scores(&self, threshold: f64) -> Array2<f64> {
        let mut out = self.scores.clone();
        out.zip_mut_with(&self.valid, |s, &v| {
            if !v || *s < threshold {
                *s = f64::NAN;
            }
        });
        out
    }
}

/// `softmax(logits)[1]`, computed as a logistic of the logit difference.
pub fn positive_scores(logits: ArrayView3<'_, f64>) -> Array2<f64> {
    let neg = logits.index_axis(Axis(0), 0);
    let pos = logits.index_axis(Axis(0), 1);
    let mut out = Array2::zeros(neg.raw_dim());
    ndarray::Zip::from(&mut out)
        .and(&neg)
        .and(&pos)
        .for_each(|o, &a, &b| *o = 1.0 / (1.0 + (a - b).exp()));
    out
}

/// Decodes local tokens into a prediction map.
pub fn decode(
    z_local: ArrayView2<'_, f64>,
    grid: (usize, usize),
    patch: usize,
    params: &DecoderParams,
) -> Result<PredictionMap> {
    Ok(PredictionMap::from_logits(
        params.decode_logits(z_local, grid, patch)?,
        None,
    ))
}

/// Mosaics per-patch maps onto a `rows × cols` patch grid. Patches that
/// are not supplied (ocean-only ones) get score 0 and are marked invalid.
pub fn assemble_globe(
    patches: &[((usize, usize), PredictionMap)],
    grid: (usize, usize),
    patch: usize,
) -> Result<PredictionMap> {
    let (rows, cols) = grid;
    let mut scores = Array2::zeros((rows * patch, cols * patch));
    let mut valid = Array2::from_elem((rows * patch, cols * patch), false);
    let mut seen = BTreeMap::new();
    for ((r, c), map) in patches {
        if *r >= rows || *c >= cols {
            return Err(Error::contract(format!("patch ({r}, {c}) outside grid")));
        }
        if map.shape() != (patch, patch) {
            return Err(Error::contract(format!(
                "patch ({r}, {c}) has shape {:?}, expected {patch}x{patch}",
                map.shape()
            )));
        }
        if seen.insert((*r, *c), ()).is_some() {
            return Err(Error::contract(format!("duplicate patch ({r}, {c})")));
        }
        let window = s![r * patch..(r + 1) * patch, c * patch..(c + 1) * patch];
        scores.slice_mut(window).assign(&map.scores);
        valid.slice_mut(window).assign(&map.valid);
    }
    Ok(PredictionMap {
        scores,
        logits: None,
        valid,
    })
}

/// Cuts a mosaic back into its patches, row-major.
pub fn disassemble(map: &PredictionMap, patch: usize) -> Vec<((usize, usize), PredictionMap)> {
    let (h, w) = map.shape();
    let mut out = Vec::new();
    for r in 0..h / patch {
        for c in 0..w / patch {
            let window = s![r * patch..(r + 1) * patch, c * patch..(c + 1) * patch];
            out.push((
                (r, c),
                PredictionMap {
                    scores: map.scores.slice(window).to_owned(),
                    logits: None,
                    valid: map.valid.slice(window).to_owned(),
                },
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::normal_init;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_softmax_of_bias() {
        let mut l = Linear::zeros(4, 2 * 3 * 3);
        for (i, b) in l.bias.iter_mut().enumerate() {
            *b = if i < 9 { 0.2 } else { 1.1 };
        }
        let params = DecoderParams::Shared(l);
        let z = Array2::from_elem((4, 4), 0.7);
        let map = decode(z.view(), (2, 2), 3, &params).unwrap();
        let expected = 1.0 / (1.0 + (0.2f64 - 1.1).exp());
        assert_eq!(map.shape(), (6, 6));
        assert!(map.scores.iter().all(|s| (s - expected).abs() < 1e-15));
    }

    #[test]
    fn class_scores_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let logits = Array3::from_shape_fn((2, 4, 4), |_| rng.gen_range(-5.0..5.0));
        let pos = positive_scores(logits.view());
        for ((i, j), p) in pos.indexed_iter() {
            let (a, b) = (logits[[0, i, j]], logits[[1, i, j]]);
            let neg = (a.exp()) / (a.exp() + b.exp());
            assert!((p + neg - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn per_token_decoder_is_local() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for shared in [true, false] {
            let params = DecoderParams::init(5, 2, 4, shared, &mut rng);
            let z = normal_init((4, 5), 1.0, &mut rng);
            let base = params.decode_logits(z.view(), (2, 2), 2).unwrap();
            let mut z2 = z.clone();
            z2.row_mut(3).mapv_inplace(|v| v + 1.0);
            let moved = params.decode_logits(z2.view(), (2, 2), 2).unwrap();
            // Only block (1, 1) may change.
            for ((k, i, j), v) in base.indexed_iter() {
                let inside = i >= 2 && j >= 2;
                let changed = moved[[k, i, j]] != *v;
                assert!(inside || !changed, "cell ({i}, {j}) changed");
            }
        }
    }

    #[test]
    fn missing_tokens_violate_the_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = DecoderParams::init(5, 2, 4, true, &mut rng);
        let z = Array2::zeros((3, 5));
        assert!(matches!(
            params.decode_logits(z.view(), (2, 2), 2),
            Err(Error::Contract(_))
        ));
    }

    fn constant(v: f64) -> PredictionMap {
        PredictionMap {
            scores: Array2::from_elem((2, 2), v),
            logits: None,
            valid: Array2::from_elem((2, 2), true),
        }
    }

    #[test]
    fn mosaic_of_constant_patches() {
        let patches = vec![
            ((0, 0), constant(0.1)),
            ((0, 1), constant(0.2)),
            ((1, 0), constant(0.3)),
            ((1, 1), constant(0.4)),
        ];
        let g = assemble_globe(&patches, (2, 2), 2).unwrap();
        assert_eq!(g.scores[[0, 0]], 0.1);
        assert_eq!(g.scores[[1, 3]], 0.2);
        assert_eq!(g.scores[[3, 0]], 0.3);
        assert_eq!(g.scores[[2, 2]], 0.4);
        for ((_, p), (_, q)) in disassemble(&g, 2).iter().zip(&patches) {
            assert_eq!(p.scores, q.scores);
        }
    }

    #[test]
    fn absent_ocean_patch_is_masked() {
        let patches = vec![((0, 0), constant(0.5))];
        let g = assemble_globe(&patches, (1, 2), 2).unwrap();
        assert!(g.valid.slice(s![.., 2..]).iter().all(|v| !v));
        assert!(g.scores.slice(s![.., 2..]).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn duplicate_patch_is_rejected() {
        let patches = vec![((0, 0), constant(0.5)), ((0, 0), constant(0.6))];
        assert!(matches!(
            assemble_globe(&patches, (1, 2), 2),
            Err(Error::Contract(_))
        ));
    }
}
