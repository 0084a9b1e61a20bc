//! Dense numeric core: matrices, a small feed-forward network with manual
//! gradients, SGD, the cosine learning-rate schedule, and L2 normalization.

mod mlp;
mod tensor;

pub use mlp::{
    backward, backward_with_input, forward, random_normal, sgd_step, sgd_step_in_place, Activation,
    Activations, Gradients, Init, Layer, LayerGrad, MlpParams,
};
pub use tensor::{dot, norm2, Tensor};

use crate::error::{Error, Result};

/// Norms at or below this are treated as degenerate by [`l2_normalize`].
pub const NORM_EPS: f64 = 1e-12;

/// Cosine-annealed learning rate for `round_index` out of `total_rounds`.
pub fn cosine_lr(round_index: usize, total_rounds: usize, lr_max: f64, lr_min: f64) -> Result<f64> {
    if total_rounds == 0 {
        return Err(Error::Config(
            "cosine schedule needs at least one round".into(),
        ));
    }
    if round_index > total_rounds {
        return Err(Error::Config(format!(
            "round index {round_index} exceeds total rounds {total_rounds}"
        )));
    }
    if !(lr_min >= 0.0 && lr_min <= lr_max && lr_max.is_finite()) {
        return Err(Error::Config(format!(
            "need 0 <= lr_min <= lr_max, got lr_min={lr_min}, lr_max={lr_max}"
        )));
    }
    let progress = round_index as f64 / total_rounds as f64;
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * progress).cos()))
}

pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm2(v);
    if !(n > NORM_EPS) {
        return Err(Error::DegenerateEmbedding {
            norm: n,
            eps: NORM_EPS,
        });
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Row-wise L2 normalization. Returns the normalized rows and the original norms.
pub fn l2_normalize_rows(x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = out.row_mut(r);
        let n = norm2(row);
        if !(n > NORM_EPS) {
            return Err(Error::DegenerateEmbedding {
                norm: n,
                eps: NORM_EPS,
            });
        }
        row.iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    Ok((out, norms))
}

/// Back-propagates through row-wise normalization `y = p/‖p‖`:
/// `∂L/∂p = (g − y⟨y, g⟩) / ‖p‖`, the full normalization Jacobian applied to `g`.
pub fn l2_normalize_rows_backward(
    normalized: &Tensor,
    norms: &[f64],
    grad: &Tensor,
) -> Result<Tensor> {
    if normalized.shape() != grad.shape() || norms.len() != normalized.rows() {
        return Err(Error::shape(
            "l2_normalize_rows_backward",
            format!("{:?}", normalized.shape()),
            format!("{:?}", grad.shape()),
        ));
    }
    let mut out = grad.clone();
    for (r, &n) in norms.iter().enumerate() {
        let y = normalized.row(r);
        let proj = dot(y, grad.row(r));
        for (o, &yi) in out.row_mut(r).iter_mut().zip(y) {
            *o = (*o - yi * proj) / n;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints_and_midpoint() {
        assert_eq!(cosine_lr(0, 10, 0.1, 0.0).unwrap(), 0.1);
        assert!((cosine_lr(10, 10, 0.1, 0.01).unwrap() - 0.01).abs() < 1e-15);
        assert!((cosine_lr(5, 10, 0.1, 0.0).unwrap() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn cosine_is_non_increasing() {
        let lrs: Vec<f64> = (0..=37)
            .map(|r| cosine_lr(r, 37, 0.1, 0.001).unwrap())
            .collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn cosine_rejects_zero_rounds() {
        assert!(matches!(cosine_lr(0, 0, 0.1, 0.0), Err(Error::Config(_))));
        assert!(cosine_lr(3, 2, 0.1, 0.0).is_err());
    }

    #[test]
    fn normalize_three_four_five() {
        let v = l2_normalize(&[3.0, 4.0]).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
        assert_eq!(l2_normalize(&[0.0, 1.0]).unwrap(), vec![0.0, 1.0]);
        assert!(matches!(
            l2_normalize(&[0.0, 0.0]),
            Err(Error::DegenerateEmbedding { .. })
        ));
    }

    #[test]
    fn normalize_backward_matches_finite_differences() {
        let p = Tensor::from_rows(&[[0.3, -1.2, 2.0], [1.0, 0.5, -0.25]]).unwrap();
        let g = Tensor::from_rows(&[[0.7, 0.1, -0.4], [-1.0, 2.0, 0.3]]).unwrap();
        // L(p) = Σ g ⊙ normalize(p)
        let loss = |p: &Tensor| {
            let (y, _) = l2_normalize_rows(p).unwrap();
            y.data()
                .iter()
                .zip(g.data())
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        let (y, norms) = l2_normalize_rows(&p).unwrap();
        let analytic = l2_normalize_rows_backward(&y, &norms, &g).unwrap();
        let h = 1e-6;
        for i in 0..p.data().len() {
            let mut plus = p.clone();
            plus.data_mut()[i] += h;
            let mut minus = p.clone();
            minus.data_mut()[i] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            assert!((fd - analytic.data()[i]).abs() < 1e-8, "coordinate {i}");
        }
    }

    proptest::proptest! {
        #[test]
        fn normalized_rows_have_unit_norm(v in proptest::collection::vec(-1e3f64..1e3, 1..16)) {
            proptest::prop_assume!(norm2(&v) > 1e-6);
            let u = l2_normalize(&v).unwrap();
            proptest::prop_assert!((norm2(&u) - 1.0).abs() <= 1e-12);
        }
    }
}
