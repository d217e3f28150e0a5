use ndarray::{Array3, ArrayView2, ArrayView3};

use crate::error::{Error, Result};

/// Mean two-class cross-entropy over the cells of a map.
///
/// `logits` is `2 × H × W`, `target` is `1 × H × W` with values in {0, 1}.
/// With a `mask`, only cells where it is true contribute. Returns the loss
/// and its gradient with respect to the logits.
pub fn cross_entropy(
    logits: ArrayView3<'_, f64>,
    target: ArrayView3<'_, f64>,
    mask: Option<ArrayView2<'_, bool>>,
) -> Result<(f64, Array3<f64>)> {
    let (c, h, w) = logits.dim();
    if c != 2 || target.dim() != (1, h, w) {
        return Err(Error::contract(format!(
            "logits {:?} and target {:?} are not 2xHxW and 1xHxW",
            logits.shape(),
            target.shape()
        )));
    }
    if let Some(m) = &mask {
        if m.dim() != (h, w) {
            return Err(Error::contract("loss mask shape does not match target"));
        }
    }
    let mut grad = Array3::zeros((2, h, w));
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..h {
        for j in 0..w {
            let y = target[[0, i, j]];
            if y != 0.0 && y != 1.0 {
                return Err(Error::contract(format!("non-binary target value {y}")));
            }
            if mask.as_ref().is_some_and(|m| !m[[i, j]]) {
                continue;
            }
            let (a, b) = (logits[[0, i, j]], logits[[1, i, j]]);
            let m = a.max(b);
            let lse = m + ((a - m).exp() + (b - m).exp()).ln();
            let label = y as usize;
            total += lse - if label == 1 { b } else { a };
            let p1 = 1.0 / (1.0 + (a - b).exp());
            grad[[0, i, j]] = (1.0 - p1) - (1 - label) as f64;
            grad[[1, i, j]] = p1 - label as f64;
            count += 1;
        }
    }
    if count == 0 {
        return Ok((0.0, grad));
    }
    grad /= count as f64;
    Ok((total / count as f64, grad))
}
