//! Asymmetric tokenization of the three inputs and their linear embedding
//! into one heterogeneous token sequence.

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, ArrayViewD, ArrayViewMutD};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{join, normal_init, Linear, Parameters};

/// Patch sizes per source and the shared embedding width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizationSpec {
    /// Side of square local patches.
    pub local_patch: usize,
    /// Side of square global patches.
    pub global_patch: usize,
    /// Length of index slices along time.
    pub index_patch: usize,
    /// Embedding dimension.
    pub dim: usize,
}

impl Default for TokenizationSpec {
    fn default() -> Self {
        TokenizationSpec {
            local_patch: 16,
            global_patch: 30,
            index_patch: 1,
            dim: 768,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Local,
    Global,
    Indices,
}

/// Where a token came from: a spatial patch, or a slice of one index series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenCoord {
    Spatial { row: usize, col: usize },
    Index { index: usize, block: usize },
}

/// Number of tokens in each segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SegmentCounts {
    pub local: usize,
    pub global: usize,
    pub indices: usize,
}

impl SegmentCounts {
    pub fn total(&self) -> usize {
        self.local + self.global + self.indices
    }

    /// Token ranges `[local, global, indices]` in sequence order.
    pub fn ranges(&self) -> [std::ops::Range<usize>; 3] {
        let g = self.local;
        let i = g + self.global;
        [0..g, g..i, i..i + self.indices]
    }
}

/// Flattened patches of one source together with their coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Patches {
    /// `n_tokens × token_len`.
    pub tokens: Array2<f64>,
    pub coords: Vec<TokenCoord>,
    /// Patch grid `(rows, cols)`; for indices `(series, blocks)`.
    pub grid: (usize, usize),
}

/// Embedded token sequence, segments contiguous in the order
/// local, global, indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub embeddings: Array2<f64>,
    pub segments: Vec<Segment>,
    pub coords: Vec<TokenCoord>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn counts(&self) -> SegmentCounts {
        let mut c = SegmentCounts::default();
        for s in &self.segments {
            match s {
                Segment::Local => c.local += 1,
                Segment::Global => c.global += 1,
                Segment::Indices => c.indices += 1,
            }
        }
        c
    }

    pub fn with_embeddings(&self, embeddings: Array2<f64>) -> Self {
        TokenSequence {
            embeddings,
            segments: self.segments.clone(),
            coords: self.coords.clone(),
        }
    }
}

/// Splits a `C × H × W` field into square patches, row-major over the patch
/// grid. Each token is flattened channel-major, then row, then column.
pub fn tokenize_spatial(x: ArrayView3<'_, f64>, patch: usize) -> Result<Patches> {
    let (c, h, w) = x.dim();
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::config(format!(
            "input {h}x{w} is not divisible by patch size {patch}"
        )));
    }
    let (rows, cols) = (h / patch, w / patch);
    let len = c * patch * patch;
    let mut tokens = Array2::zeros((rows * cols, len));
    let mut coords = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for col in 0..cols {
            let block = x.slice(s![
                ..,
                r * patch..(r + 1) * patch,
                col * patch..(col + 1) * patch
            ]);
            let mut dst = tokens.row_mut(r * cols + col);
            for (d, v) in dst.iter_mut().zip(block.iter()) {
                *d = *v;
            }
            coords.push(TokenCoord::Spatial { row: r, col });
        }
    }
    Ok(Patches {
        tokens,
        coords,
        grid: (rows, cols),
    })
}

/// Inverse of [`tokenize_spatial`]: scatters token rows back into a field.
pub fn untokenize_spatial(
    tokens: ArrayView2<'_, f64>,
    shape: (usize, usize, usize),
    patch: usize,
) -> Array3<f64> {
    let (c, h, w) = shape;
    let cols = w / patch;
    let mut out = Array3::zeros((c, h, w));
    for (t, token) in tokens.outer_iter().enumerate() {
        let (r, col) = (t / cols, t % cols);
        let mut block = out.slice_mut(s![
            ..,
            r * patch..(r + 1) * patch,
            col * patch..(col + 1) * patch
        ]);
        for (d, v) in block.iter_mut().zip(token.iter()) {
            *d = *v;
        }
    }
    out
}

/// Local tokens: `(H/P)·(W/P)` patches of length `C·P²`.
pub fn tokenize_local(x_l: ArrayView3<'_, f64>, spec: &TokenizationSpec) -> Result<Patches> {
    tokenize_spatial(x_l, spec.local_patch)
}

/// Global tokens, as [`tokenize_local`] with the global patch size.
pub fn tokenize_global(x_g: ArrayView3<'_, f64>, spec: &TokenizationSpec) -> Result<Patches> {
    tokenize_spatial(x_g, spec.global_patch)
}

/// One token per `(series, time block)`, series-major.
pub fn tokenize_indices(x_i: ArrayView2<'_, f64>, spec: &TokenizationSpec) -> Result<Patches> {
    let (n, t) = x_i.dim();
    let p = spec.index_patch;
    if p == 0 || t % p != 0 {
        return Err(Error::config(format!(
            "index length {t} is not divisible by index patch {p}"
        )));
    }
    let blocks = t / p;
    let mut tokens = Array2::zeros((n * blocks, p));
    let mut coords = Vec::with_capacity(n * blocks);
    for k in 0..n {
        for b in 0..blocks {
            tokens
                .row_mut(k * blocks + b)
                .assign(&x_i.slice(s![k, b * p..(b + 1) * p]));
            coords.push(TokenCoord::Index { index: k, block: b });
        }
    }
    Ok(Patches {
        tokens,
        coords,
        grid: (n, blocks),
    })
}

pub fn untokenize_indices(tokens: ArrayView2<'_, f64>, shape: (usize, usize)) -> Array2<f64> {
    let (n, t) = shape;
    let p = tokens.ncols();
    let blocks = t / p;
    let mut out = Array2::zeros((n, t));
    for (i, token) in tokens.outer_iter().enumerate() {
        let (k, b) = (i / blocks, i % blocks);
        out.slice_mut(s![k, b * p..(b + 1) * p]).assign(&token);
    }
    out
}

/// Token counts implied by input shapes and patch sizes.
pub fn token_counts(
    spec: &TokenizationSpec,
    local_hw: (usize, usize),
    global_hw: Option<(usize, usize)>,
    index_shape: Option<(usize, usize)>,
) -> SegmentCounts {
    let spatial = |(h, w): (usize, usize), p: usize| (h / p) * (w / p);
    SegmentCounts {
        local: spatial(local_hw, spec.local_patch),
        global: global_hw.map_or(0, |hw| spatial(hw, spec.global_patch)),
        indices: index_shape.map_or(0, |(n, t)| n * (t / spec.index_patch)),
    }
}

/// Tokens of one sample, per source. Absent sources are `None`.
#[derive(Debug, Clone)]
pub struct SampleTokens {
    pub local: Patches,
    pub global: Option<Patches>,
    pub indices: Option<Patches>,
}

impl SampleTokens {
    pub fn counts(&self) -> SegmentCounts {
        SegmentCounts {
            local: self.local.tokens.nrows(),
            global: self.global.as_ref().map_or(0, |p| p.tokens.nrows()),
            indices: self.indices.as_ref().map_or(0, |p| p.tokens.nrows()),
        }
    }
}

/// Token gradients of the local source and, when enabled, the global and
/// index sources.
pub type SourceGrads = (Array2<f64>, Option<Array2<f64>>, Option<Array2<f64>>);

/// Per-source linear projections and the shared positional table.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingParams {
    pub local: Linear,
    pub global: Option<Linear>,
    pub indices: Option<Linear>,
    /// `N × D`, one row per token across all segments.
    pub pos: Array2<f64>,
}

impl EmbeddingParams {
    /// `token_lens` are the flattened token lengths per source (`None` for
    /// a disabled source); `counts` sizes the positional table.
    pub fn init(
        token_lens: (usize, Option<usize>, Option<usize>),
        counts: SegmentCounts,
        dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        EmbeddingParams {
            local: Linear::init(token_lens.0, dim, rng),
            global: token_lens.1.map(|n| Linear::init(n, dim, rng)),
            indices: token_lens.2.map(|n| Linear::init(n, dim, rng)),
            pos: normal_init((counts.total(), dim), 0.02, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.pos.ncols()
    }

    /// Projects each source, concatenates and adds positional encodings.
    pub fn embed(&self, tokens: &SampleTokens) -> Result<TokenSequence> {
        let counts = tokens.counts();
        if counts.total() != self.pos.nrows() {
            return Err(Error::config(format!(
                "{} tokens but positional table has {} rows",
                counts.total(),
                self.pos.nrows()
            )));
        }
        let mut out = self.pos.clone();
        let mut segments = Vec::with_capacity(counts.total());
        let mut coords = Vec::with_capacity(counts.total());
        let [rl, rg, ri] = counts.ranges();
        let parts = [
            (Some(&tokens.local), Some(&self.local), rl, Segment::Local),
            (
                tokens.global.as_ref(),
                self.global.as_ref(),
                rg,
                Segment::Global,
            ),
            (
                tokens.indices.as_ref(),
                self.indices.as_ref(),
                ri,
                Segment::Indices,
            ),
        ];
        for (patches, proj, range, seg) in parts {
            match (patches, proj) {
                (Some(p), Some(proj)) => {
                    if p.tokens.ncols() != proj.in_dim() {
                        return Err(Error::config(format!(
                            "{seg:?} tokens have length {}, projection expects {}",
                            p.tokens.ncols(),
                            proj.in_dim()
                        )));
                    }
                    let mut dst = out.slice_mut(s![range, ..]);
                    dst += &proj.forward(p.tokens.view());
                    segments.extend(std::iter::repeat_n(seg, p.tokens.nrows()));
                    coords.extend_from_slice(&p.coords);
                }
                (None, None) => {}
                _ => {
                    return Err(Error::config(format!(
                        "{seg:?} input and projection must be both present or both absent"
                    )))
                }
            }
        }
        Ok(TokenSequence {
            embeddings: out,
            segments,
            coords,
        })
    }

    /// Backward pass of [`embed`](Self::embed). Returns token gradients per
    /// source when `want_input` is set.
    pub fn backward(
        &self,
        tokens: &SampleTokens,
        d_embed: ArrayView2<'_, f64>,
        grad: &mut EmbeddingParams,
        want_input: bool,
    ) -> Option<SourceGrads> {
        grad.pos += &d_embed;
        let [rl, rg, ri] = tokens.counts().ranges();
        let run = |proj: &Linear, g: &mut Linear, x: &Patches, r| {
            let dy = d_embed.slice(s![r, ..]);
            if want_input {
                Some(proj.backward(x.tokens.view(), dy, g))
            } else {
                proj.backward_params(x.tokens.view(), dy, g);
                None
            }
        };
        let dl = run(&self.local, &mut grad.local, &tokens.local, rl);
        let dg = match (&self.global, grad.global.as_mut(), &tokens.global) {
            (Some(p), Some(g), Some(x)) => run(p, g, x, rg),
            _ => None,
        };
        let di = match (&self.indices, grad.indices.as_mut(), &tokens.indices) {
            (Some(p), Some(g), Some(x)) => run(p, g, x, ri),
            _ => None,
        };
        dl.map(|dl| (dl, dg, di))
    }
}

impl Parameters for EmbeddingParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, ArrayViewD<'a, f64>)) {
        self.local.visit(&join(prefix, "local"), f);
        if let Some(g) = &self.global {
            g.visit(&join(prefix, "global"), f);
        }
        if let Some(i) = &self.indices {
            i.visit(&join(prefix, "indices"), f);
        }
        f(join(prefix, "pos"), self.pos.view().into_dyn());
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, ArrayViewMutD<'_, f64>)) {
        self.local.visit_mut(&join(prefix, "local"), f);
        if let Some(g) = &mut self.global {
            g.visit_mut(&join(prefix, "global"), f);
        }
        if let Some(i) = &mut self.indices {
            i.visit_mut(&join(prefix, "indices"), f);
        }
        f(join(prefix, "pos"), self.pos.view_mut().into_dyn());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};
    use proptest::prelude::*;

    fn spec(l: usize, g: usize, i: usize) -> TokenizationSpec {
        TokenizationSpec {
            local_patch: l,
            global_patch: g,
            index_patch: i,
            dim: 8,
        }
    }

    #[test]
    fn paper_local_and_global_token_shapes() {
        let s = TokenizationSpec::default();
        let l = tokenize_local(Array3::zeros((14, 80, 80)).view(), &s).unwrap();
        assert_eq!(l.tokens.dim(), (25, 14 * 16 * 16));
        let g = tokenize_global(Array3::zeros((14, 360, 180)).view(), &s).unwrap();
        assert_eq!(g.tokens.dim(), (72, 12600));
        assert_eq!(g.grid, (12, 6));
        let i = tokenize_indices(Array2::zeros((10, 10)).view(), &s).unwrap();
        assert_eq!(i.tokens.dim(), (100, 1));
    }

    #[test]
    fn unit_patches_are_scalars_in_row_major_order() {
        let x = array![[[1.0, 2.0], [3.0, 4.0]]];
        let p = tokenize_spatial(x.view(), 1).unwrap();
        assert_eq!(p.tokens.column(0).to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(p.coords[2], TokenCoord::Spatial { row: 1, col: 0 });
    }

    #[test]
    fn patch_of_sevens_is_a_constant_token() {
        let mut x = Array3::zeros((3, 4, 4));
        x.slice_mut(s![.., 2..4, 0..2]).fill(7.0);
        let p = tokenize_spatial(x.view(), 2).unwrap();
        assert!(p.tokens.row(2).iter().all(|v| *v == 7.0));
        assert!(p.tokens.row(3).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_global_field_gives_identical_tokens() {
        let x = Array3::from_elem((2, 6, 4), 1.5);
        let p = tokenize_global(x.view(), &spec(1, 2, 1)).unwrap();
        for row in p.tokens.outer_iter() {
            assert_eq!(row, p.tokens.row(0));
        }
    }

    #[test]
    fn index_tokens_are_series_major() {
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        let p = tokenize_indices(x.view(), &spec(1, 1, 1)).unwrap();
        assert_eq!(p.tokens.column(0).to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
        let p5 = tokenize_indices(Array2::zeros((10, 10)).view(), &spec(1, 1, 5)).unwrap();
        assert_eq!(p5.tokens.dim(), (20, 5));
    }

    #[test]
    fn divisibility_is_enforced() {
        assert!(tokenize_spatial(Array3::zeros((1, 5, 4)).view(), 2).is_err());
        assert!(tokenize_indices(Array2::zeros((2, 5)).view(), &spec(1, 1, 2)).is_err());
    }

    proptest! {
        #[test]
        fn token_count_formula(
            pl in 1usize..5, gl in 1usize..4, il in 1usize..4,
            rl in 1usize..5, cl in 1usize..5, rg in 1usize..4, cg in 1usize..4,
            ni in 1usize..4, bi in 1usize..4, ch in 1usize..3,
        ) {
            let s = spec(pl, gl, il);
            let l = tokenize_local(Array3::zeros((ch, rl * pl, cl * pl)).view(), &s).unwrap();
            let g = tokenize_global(Array3::zeros((ch, rg * gl, cg * gl)).view(), &s).unwrap();
            let i = tokenize_indices(Array2::zeros((ni, bi * il)).view(), &s).unwrap();
            let expected = token_counts(&s, (rl * pl, cl * pl), Some((rg * gl, cg * gl)), Some((ni, bi * il)));
            prop_assert_eq!(l.tokens.nrows(), expected.local);
            prop_assert_eq!(g.tokens.nrows(), expected.global);
            prop_assert_eq!(i.tokens.nrows(), expected.indices);
            prop_assert_eq!(expected.local, rl * cl);
            prop_assert_eq!(expected.indices, ni * bi);
            // Every local patch coordinate appears exactly once.
            let mut seen = std::collections::HashSet::new();
            for c in &l.coords {
                prop_assert!(seen.insert(*c));
            }
            prop_assert_eq!(seen.len(), rl * cl);
        }

        #[test]
        fn spatial_tokenization_round_trips(ch in 1usize..3, r in 1usize..4, c in 1usize..4, p in 1usize..4, seed in 0u64..1000) {
            let x = Array3::from_shape_fn((ch, r * p, c * p), |(a, b, d)| ((a * 131 + b * 17 + d) as u64 ^ seed) as f64);
            let t = tokenize_spatial(x.view(), p).unwrap();
            prop_assert_eq!(untokenize_spatial(t.tokens.view(), x.dim(), p), x);
        }
    }
}
