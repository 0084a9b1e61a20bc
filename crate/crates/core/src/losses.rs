//! Training objectives: the prior-distillation loss, its per-class means, the
//! balanced-softmax supervised loss, and their weighted sum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, l2_normalize_rows, l2_normalize_rows_backward, norm2, Tensor};

/// Tolerance on the unit-norm precondition of [`distill_loss`].
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Default weight of the distillation term.
pub const DEFAULT_LAMBDA_F: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DistillLoss {
    /// `2 − 2⟨y, y'⟩` for every row.
    pub per_sample: Vec<f64>,
    /// Batch mean of `per_sample`.
    pub mean: f64,
    /// Gradient of `mean` with respect to the input of the call that produced it.
    pub grad: Tensor,
}

/// Distillation loss between unit-norm projections `y` and frozen unit-norm
/// targets. `grad` is taken with respect to `y`; targets receive none.
pub fn distill_loss(y: &Tensor, targets: &Tensor) -> Result<DistillLoss> {
    if y.shape() != targets.shape() {
        return Err(Error::shape(
            "distill_loss",
            format!("{:?}", y.shape()),
            format!("{:?}", targets.shape()),
        ));
    }
    for (r, row) in y.iter_rows().chain(targets.iter_rows()).enumerate() {
        let n = norm2(row);
        if (n - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::Contract(format!(
                "row {r} of distill_loss input has norm {n}"
            )));
        }
    }
    let b = y.rows();
    let per_sample: Vec<f64> = y
        .iter_rows()
        .zip(targets.iter_rows())
        .map(|(a, t)| 2.0 - 2.0 * dot(a, t))
        .collect();
    let mean = if b == 0 {
        0.0
    } else {
        per_sample.iter().sum::<f64>() / b as f64
    };
    let mut grad = targets.clone();
    grad.scale(-2.0 / b.max(1) as f64);
    Ok(DistillLoss {
        per_sample,
        mean,
        grad,
    })
}

/// [`distill_loss`] on raw projector outputs: rows are normalized first and
/// `grad` is taken with respect to the unnormalized `projection`.
pub fn distill_from_projection(projection: &Tensor, targets: &Tensor) -> Result<DistillLoss> {
    let (y, norms) = l2_normalize_rows(projection)?;
    let mut loss = distill_loss(&y, targets)?;
    loss.grad = l2_normalize_rows_backward(&y, &norms, &loss.grad)?;
    Ok(loss)
}

/// Per-class mean of a per-sample loss; classes with no samples are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClasswiseLoss {
    pub per_class: Vec<Option<f64>>,
    pub counts: Vec<usize>,
}

impl ClasswiseLoss {
    pub fn num_classes(&self) -> usize {
        self.per_class.len()
    }

    pub fn get(&self, class: usize) -> Option<f64> {
        self.per_class.get(class).copied().flatten()
    }

    pub fn present(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.per_class
            .iter()
            .enumerate()
            .filter_map(|(k, v)| v.map(|v| (k, v)))
    }

    /// Count-weighted mean over present classes, i.e. the overall sample mean.
    pub fn weighted_mean(&self) -> Option<f64> {
        let total: usize = self.counts.iter().sum();
        (total > 0).then(|| {
            self.present()
                .map(|(k, v)| v * self.counts[k] as f64)
                .sum::<f64>()
                / total as f64
        })
    }
}

pub fn classwise_mean(
    per_sample: &[f64],
    labels: &[usize],
    num_classes: usize,
) -> Result<ClasswiseLoss> {
    if per_sample.len() != labels.len() {
        return Err(Error::shape(
            "classwise_mean",
            per_sample.len(),
            labels.len(),
        ));
    }
    let mut sums = vec![0.0; num_classes];
    let mut counts = vec![0usize; num_classes];
    for (&l, &label) in per_sample.iter().zip(labels) {
        if label >= num_classes {
            return Err(Error::DataConsistency(format!(
                "label {label} out of range"
            )));
        }
        sums[label] += l;
        counts[label] += 1;
    }
    let per_class = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
        .collect();
    Ok(ClasswiseLoss { per_class, counts })
}

/// Cross-entropy on logits shifted by `log M_k`. Returns the batch-mean loss
/// and its gradient `(softmax(z + log M) − onehot) / B`. Classes with
/// `M_k = 0` get zero probability and zero gradient.
pub fn balanced_softmax_ce(
    logits: &Tensor,
    labels: &[usize],
    class_counts: &[usize],
) -> Result<(f64, Tensor)> {
    let k = class_counts.len();
    if logits.cols() != k {
        return Err(Error::shape("balanced_softmax_ce logits", k, logits.cols()));
    }
    if logits.rows() != labels.len() {
        return Err(Error::shape(
            "balanced_softmax_ce labels",
            logits.rows(),
            labels.len(),
        ));
    }
    let log_counts: Vec<f64> = class_counts
        .iter()
        .map(|&m| {
            if m > 0 {
                (m as f64).ln()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let b = logits.rows();
    let scale = 1.0 / b.max(1) as f64;
    let mut grad = Tensor::zeros(b, k);
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        if label >= k || class_counts[label] == 0 {
            return Err(Error::DataConsistency(format!(
                "label {label} has no samples in the supplied class counts"
            )));
        }
        let row = grad.row_mut(r);
        for ((g, &z), &lm) in row.iter_mut().zip(logits.row(r)).zip(&log_counts) {
            *g = z + lm;
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for g in row.iter_mut() {
            *g = (*g - max).exp();
            sum += *g;
        }
        let log_sum = sum.ln();
        total += log_sum - (logits.get(r, label) + log_counts[label] - max);
        for g in row.iter_mut() {
            *g /= sum;
        }
        row[label] -= 1.0;
        row.iter_mut().for_each(|g| *g *= scale);
    }
    let loss = total * scale;
    if !loss.is_finite() {
        return Err(Error::NumericFault(
            "balanced softmax loss is not finite".into(),
        ));
    }
    Ok((loss, grad))
}

pub fn total_loss(sup: f64, distill: f64, lambda_f: f64) -> f64 {
    sup + lambda_f * distill
}
