//! Central finite-difference gradient checks.
//!
//! Coordinates whose ±h perturbation flips a relu on or off are skipped: the
//! loss is not differentiable across the kink and the difference quotient
//! says nothing about the analytic gradient there.

use crate::numerics::{Activation, Activations, MlpParams};

/// Denominator floor of [`relative_error`].
pub const REL_FLOOR: f64 = 1e-6;

/// `|a − b| / max(|a|, |b|, REL_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
    /// Coordinate with the largest relative error, with analytic and numeric values.
    pub worst: Option<(usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Compares `analytic[i]` with `(loss(p + h·eᵢ) − loss(p − h·eᵢ)) / 2h` for each
/// coordinate in `coords`. `pattern` returns the activation pattern at a
/// point; coordinates where it changes are skipped.
pub fn check_gradient<L, P>(
    params: &[f64],
    analytic: &[f64],
    coords: &[usize],
    h: f64,
    loss: L,
    pattern: P,
) -> GradCheckReport
where
    L: Fn(&[f64]) -> f64,
    P: Fn(&[f64]) -> Vec<bool>,
{
    let base = pattern(params);
    let mut report = GradCheckReport {
        checked: 0,
        skipped: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    let mut probe = params.to_vec();
    for &i in coords {
        probe[i] = params[i] + h;
        let plus_pattern = pattern(&probe);
        let plus = loss(&probe);
        probe[i] = params[i] - h;
        let minus_pattern = pattern(&probe);
        let minus = loss(&probe);
        probe[i] = params[i];
        if plus_pattern != base || minus_pattern != base {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * h);
        let err = relative_error(analytic[i], numeric);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((i, analytic[i], numeric));
        }
    }
    report
}

/// On/off state of every relu unit recorded in `acts`, which must come from
/// a forward pass through `params`.
pub fn relu_pattern(params: &MlpParams, acts: &Activations) -> Vec<bool> {
    params
        .layers()
        .iter()
        .zip(acts.layer_outputs())
        .filter(|(layer, _)| layer.activation == Activation::Relu)
        .flat_map(|(_, out)| out.data().iter().map(|&v| v > 0.0))
        .collect()
}
