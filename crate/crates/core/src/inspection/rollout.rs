use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::encoder::AttentionRecord;
use crate::error::{Error, Result};
use crate::tokenizer::SegmentCounts;

/// Row-stochastic attention flow over the token sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutMatrix {
    pub matrix: Array2<f64>,
    pub counts: SegmentCounts,
}

fn head_mean_with_residual(record: &AttentionRecord, layer: usize) -> Result<Array2<f64>> {
    let n = record.tokens();
    let mut a = record
        .weights
        .index_axis(Axis(0), layer)
        .mean_axis(Axis(0))
        .ok_or_else(|| Error::contract("attention record has no heads"))?;
    a += &Array2::eye(n);
    for (i, mut row) in a.rows_mut().into_iter().enumerate() {
        let total = row.sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::numeric(format!(
                "row {i} of layer {layer} sums to {total} before normalization"
            )));
        }
        row /= total;
    }
    Ok(a)
}

fn check_record(record: &AttentionRecord) -> Result<()> {
    let sh = record.weights.shape();
    if sh[0] == 0 {
        return Err(Error::contract("attention record has no layers"));
    }
    if sh[2] != sh[3] || sh[2] != record.counts.total() {
        return Err(Error::contract(format!(
            "attention is {}x{} but the segments hold {} tokens",
            sh[2],
            sh[3],
            record.counts.total()
        )));
    }
    Ok(())
}

/// Attention roll-out: per layer, average the heads, add the identity for
/// the residual path and renormalize rows, then chain layers with later
/// layers on the left, `R = Â_K ⋯ Â_1`.
pub fn rollout(record: &AttentionRecord) -> Result<RolloutMatrix> {
    check_record(record)?;
    let mut r = head_mean_with_residual(record, 0)?;
    for layer in 1..record.layers() {
        r = head_mean_with_residual(record, layer)?.dot(&r);
    }
    Ok(RolloutMatrix {
        matrix: r,
        counts: record.counts,
    })
}

/// Head-averaged raw attention of the last layer, without roll-out.
pub fn last_layer_attention(record: &AttentionRecord) -> Result<RolloutMatrix> {
    check_record(record)?;
    let matrix = record
        .weights
        .index_axis(Axis(0), record.layers() - 1)
        .mean_axis(Axis(0))
        .ok_or_else(|| Error::contract("attention record has no heads"))?;
    Ok(RolloutMatrix {
        matrix,
        counts: record.counts,
    })
}

/// The nine token-type blocks of an attention matrix; `lg` holds local
/// queries attending to global keys, and so on.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlocks {
    pub ll: Array2<f64>,
    pub lg: Array2<f64>,
    pub li: Array2<f64>,
    pub gl: Array2<f64>,
    pub gg: Array2<f64>,
    pub gi: Array2<f64>,
    pub il: Array2<f64>,
    pub ig: Array2<f64>,
    pub ii: Array2<f64>,
}

impl AttentionBlocks {
    /// Blocks with their two-letter names, row-major.
    pub fn named(&self) -> [(&'static str, &Array2<f64>); 9] {
        [
            ("ll", &self.ll),
            ("lg", &self.lg),
            ("li", &self.li),
            ("gl", &self.gl),
            ("gg", &self.gg),
            ("gi", &self.gi),
            ("il", &self.il),
            ("ig", &self.ig),
            ("ii", &self.ii),
        ]
    }
}

pub fn partition_blocks(m: ArrayView2<'_, f64>, counts: SegmentCounts) -> Result<AttentionBlocks> {
    let n = counts.total();
    if m.dim() != (n, n) {
        return Err(Error::contract(format!(
            "matrix is {:?} but the segments hold {n} tokens",
            m.dim()
        )));
    }
    let [l, g, i] = counts.ranges();
    let b = |r: &std::ops::Range<usize>, c: &std::ops::Range<usize>| {
        m.slice(s![r.clone(), c.clone()]).to_owned()
    };
    Ok(AttentionBlocks {
        ll: b(&l, &l),
        lg: b(&l, &g),
        li: b(&l, &i),
        gl: b(&g, &l),
        gg: b(&g, &g),
        gi: b(&g, &i),
        il: b(&i, &l),
        ig: b(&i, &g),
        ii: b(&i, &i),
    })
}

pub fn reassemble_blocks(blocks: &AttentionBlocks) -> Array2<f64> {
    let (nl, ng, ni) = (blocks.ll.nrows(), blocks.gg.nrows(), blocks.ii.nrows());
    let n = nl + ng + ni;
    let mut m = Array2::zeros((n, n));
    let bounds = [0..nl, nl..nl + ng, nl + ng..n];
    let grid = [
        [&blocks.ll, &blocks.lg, &blocks.li],
        [&blocks.gl, &blocks.gg, &blocks.gi],
        [&blocks.il, &blocks.ig, &blocks.ii],
    ];
    for (r, row) in grid.iter().enumerate() {
        for (c, block) in row.iter().enumerate() {
            m.slice_mut(s![bounds[r].clone(), bounds[c].clone()])
                .assign(block);
        }
    }
    m
}

/// Running mean/variance of one block's entries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: usize,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Moments {
    pub fn add(&mut self, values: impl IntoIterator<Item = f64>) {
        for v in values {
            self.n += 1;
            self.sum += v;
            self.sum_sq += v * v;
        }
    }

    pub fn merge(&mut self, other: &Moments) {
        self.n += other.n;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn mean(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }

    /// Population standard deviation.
    pub fn std(&self) -> Option<f64> {
        let mean = self.mean()?;
        Some((self.sum_sq / self.n as f64 - mean * mean).max(0.0).sqrt())
    }
}

/// Statistics of the attention local tokens pay to each token type,
/// mergeable across samples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenTypeStats {
    pub local: Moments,
    pub global: Moments,
    pub indices: Moments,
}

impl TokenTypeStats {
    pub fn merge(&mut self, other: &TokenTypeStats) {
        self.local.merge(&other.local);
        self.global.merge(&other.global);
        self.indices.merge(&other.indices);
    }
}

pub fn token_type_stats(m: ArrayView2<'_, f64>, counts: SegmentCounts) -> Result<TokenTypeStats> {
    if counts.local == 0 {
        return Err(Error::contract(
            "token statistics need at least one local token",
        ));
    }
    let b = partition_blocks(m, counts)?;
    let mut stats = TokenTypeStats::default();
    stats.local.add(b.ll.iter().copied());
    stats.global.add(b.lg.iter().copied());
    stats.indices.add(b.li.iter().copied());
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    fn counts(local: usize, global: usize, indices: usize) -> SegmentCounts {
        SegmentCounts {
            local,
            global,
            indices,
        }
    }

    #[test]
    fn identity_attention_rolls_out_to_identity() {
        let mut w = Array4::zeros((3, 2, 4, 4));
        for k in 0..3 {
            for a in 0..2 {
                w.slice_mut(s![k, a, .., ..]).assign(&Array2::eye(4));
            }
        }
        let r = rollout(&AttentionRecord {
            weights: w,
            counts: counts(2, 1, 1),
        })
        .unwrap();
        assert_eq!(r.matrix, Array2::<f64>::eye(4));
    }

    #[test]
    fn uniform_two_token_layer() {
        let r = rollout(&AttentionRecord {
            weights: Array4::from_elem((1, 1, 2, 2), 0.5),
            counts: counts(2, 0, 0),
        })
        .unwrap();
        assert_eq!(r.matrix, ndarray::array![[0.75, 0.25], [0.25, 0.75]]);
    }

    #[test]
    fn zero_row_is_a_numeric_failure() {
        let mut w = Array4::from_elem((1, 1, 2, 2), 0.5);
        w.slice_mut(s![0, 0, 0, ..]).fill(-0.5);
        let err = rollout(&AttentionRecord {
            weights: w,
            counts: counts(2, 0, 0),
        })
        .unwrap_err();
        assert_eq!(err.category(), "numeric");
    }

    #[test]
    fn blocks_round_trip() {
        let m = Array2::from_shape_fn((6, 6), |(i, j)| (i * 6 + j) as f64);
        let c = counts(3, 2, 1);
        let b = partition_blocks(m.view(), c).unwrap();
        assert_eq!(b.lg.dim(), (3, 2));
        assert_eq!(b.li.dim(), (3, 1));
        assert_eq!(reassemble_blocks(&b), m);
        let vit = partition_blocks(m.view(), counts(6, 0, 0)).unwrap();
        assert_eq!(vit.li.len(), 0);
        assert!(partition_blocks(m.view(), counts(3, 2, 2)).is_err());
    }

    #[test]
    fn token_stats_of_simple_matrices() {
        let c = counts(2, 1, 1);
        let s = token_type_stats(Array2::from_elem((4, 4), 0.25).view(), c).unwrap();
        assert_eq!(s.local.mean(), Some(0.25));
        assert_eq!(s.indices.std(), Some(0.0));
        let s = token_type_stats(Array2::<f64>::eye(4).view(), c).unwrap();
        assert_eq!(s.local.mean(), Some(0.5));
        assert_eq!(s.global.mean(), Some(0.0));
        assert_eq!(s.indices.mean(), Some(0.0));
    }
}
