//! Global-model metrics and the per-round diagnostic series.

use serde::{Deserialize, Serialize};

use crate::client::ClientModel;
use crate::data::{Dataset, ShotGroups};
use crate::error::{Error, Result};
use crate::server::RoundReport;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub head: Option<f64>,
    pub medium: Option<f64>,
    pub tail: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub overall_acc: f64,
    /// Mean of per-class accuracy over classes with at least one test sample.
    pub balanced_acc: f64,
    /// `None` for classes without test samples.
    pub per_class_acc: Vec<Option<f64>>,
    /// Mean per-class accuracy within each shot group.
    pub group_acc: GroupAccuracy,
    /// Mean of the defined group accuracies.
    pub all_avg: f64,
    /// Classes excluded from `balanced_acc` for lack of test samples.
    pub untested_classes: Vec<usize>,
}

/// Argmax of the raw classifier logits; ties go to the lower class index.
pub fn predict(model: &ClientModel, dataset: &Dataset) -> Result<Vec<usize>> {
    let logits = model.logits(dataset.features())?;
    Ok(logits
        .iter_rows()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                })
                .0
        })
        .collect())
}

pub fn evaluate(model: &ClientModel, test: &Dataset, groups: &ShotGroups) -> Result<MetricsReport> {
    let predictions = predict(model, test)?;
    metrics_from_predictions(&predictions, test.labels(), test.num_classes(), groups)
}

pub fn metrics_from_predictions(
    predictions: &[usize],
    labels: &[usize],
    num_classes: usize,
    groups: &ShotGroups,
) -> Result<MetricsReport> {
    if labels.is_empty() {
        return Err(Error::Config("test set is empty".into()));
    }
    if predictions.len() != labels.len() {
        return Err(Error::shape(
            "metrics_from_predictions",
            labels.len(),
            predictions.len(),
        ));
    }
    let mut hits = vec![0usize; num_classes];
    let mut totals = vec![0usize; num_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if l >= num_classes {
            return Err(Error::DataConsistency(format!("label {l} out of range")));
        }
        totals[l] += 1;
        hits[l] += usize::from(p == l);
    }
    let per_class_acc: Vec<Option<f64>> = hits
        .iter()
        .zip(&totals)
        .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
        .collect();
    let untested_classes = (0..num_classes).filter(|&k| totals[k] == 0).collect();
    let tested: Vec<f64> = per_class_acc.iter().flatten().copied().collect();
    let balanced_acc = tested.iter().sum::<f64>() / tested.len() as f64;
    let overall_acc = hits.iter().sum::<usize>() as f64 / labels.len() as f64;

    let group_mean = |classes: &[usize]| {
        let accs: Vec<f64> = classes
            .iter()
            .filter_map(|&k| per_class_acc.get(k).copied().flatten())
            .collect();
        (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
    };
    let group_acc = GroupAccuracy {
        head: group_mean(&groups.head),
        medium: group_mean(&groups.medium),
        tail: group_mean(&groups.tail),
    };
    let defined: Vec<f64> = [group_acc.head, group_acc.medium, group_acc.tail]
        .into_iter()
        .flatten()
        .collect();
    let all_avg = if defined.is_empty() {
        balanced_acc
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    Ok(MetricsReport {
        overall_acc,
        balanced_acc,
        per_class_acc,
        group_acc,
        all_avg,
        untested_classes,
    })
}

/// Slope of the ordinary least-squares line through `(i, ys[i])`.
pub fn least_squares_slope(ys: &[f64]) -> f64 {
    let n = ys.len();
    if n < 2 {
        return 0.0;
    }
    let mean_x = (n - 1) as f64 / 2.0;
    let mean_y = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - mean_x;
        sxy += dx * (y - mean_y);
        sxx += dx * dx;
    }
    sxy / sxx
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. `None` when fewer
/// than two points or either side is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(xs), average_ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Per-round series behind the contribution and rescue-factor plots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `w_k` of each client in the first recorded round.
    pub first_round_w: Vec<Vec<Option<f64>>>,
    /// `[round][client]` aggregation weights.
    pub weights: Vec<Vec<f64>>,
    /// `[round][client]` running mean of the weights up to that round.
    pub contribution: Vec<Vec<f64>>,
    /// `[round][client]` rescue factors.
    pub rf: Vec<Vec<f64>>,
    /// Least-squares slope of each client's rescue factor over rounds.
    pub rf_slope: Vec<f64>,
}

pub fn diagnostics(history: &[RoundReport]) -> Result<Diagnostics> {
    let first = history
        .first()
        .ok_or_else(|| Error::Contract("diagnostics need at least one round".into()))?;
    let clients = first.rf.len();
    let weights: Vec<Vec<f64>> = history.iter().map(|r| r.weights.clone()).collect();
    let rf: Vec<Vec<f64>> = history.iter().map(|r| r.rf.clone()).collect();
    let mut contribution = Vec::with_capacity(history.len());
    let mut running = vec![0.0; clients];
    for (r, w) in weights.iter().enumerate() {
        for (acc, v) in running.iter_mut().zip(w) {
            *acc += v;
        }
        contribution.push(running.iter().map(|s| s / (r + 1) as f64).collect());
    }
    let rf_slope = (0..clients)
        .map(|c| least_squares_slope(&rf.iter().map(|row| row[c]).collect::<Vec<_>>()))
        .collect();
    Ok(Diagnostics {
        first_round_w: first.clients.iter().map(|c| c.w.clone()).collect(),
        weights,
        contribution,
        rf,
        rf_slope,
    })
}
