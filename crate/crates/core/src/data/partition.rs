use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, Rng};

/// Per-client sample indices into a training [`Dataset`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    assignments: Vec<Vec<usize>>,
}

const MAX_DIRICHLET_REDRAWS: usize = 10_000;

impl Partition {
    /// Validates that the lists are nonempty, disjoint, and cover `0..n`.
    pub fn new(mut assignments: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        let mut seen = vec![false; n];
        for (c, idx) in assignments.iter_mut().enumerate() {
            if idx.is_empty() {
                return Err(Error::Config(format!("client {c} has no samples")));
            }
            idx.sort_unstable();
            for &i in idx.iter() {
                if i >= n || std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Contract(format!(
                        "index {i} is out of range or assigned twice"
                    )));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Contract(
                "partition does not cover every sample".into(),
            ));
        }
        Ok(Partition { assignments })
    }

    pub fn num_clients(&self) -> usize {
        self.assignments.len()
    }

    pub fn client(&self, c: usize) -> &[usize] {
        &self.assignments[c]
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.assignments
    }

    /// Class histogram of every client.
    pub fn class_counts(&self, dataset: &Dataset) -> Vec<Vec<usize>> {
        self.assignments
            .iter()
            .map(|idx| {
                let labels: Vec<usize> = idx.iter().map(|&i| dataset.labels()[i]).collect();
                super::count_classes(&labels, dataset.num_classes())
            })
            .collect()
    }
}

fn check_size(dataset: &Dataset, num_clients: usize) -> Result<()> {
    if num_clients == 0 {
        return Err(Error::Config("need at least one client".into()));
    }
    if dataset.len() < num_clients {
        return Err(Error::Config(format!(
            "{} samples cannot fill {num_clients} nonempty clients",
            dataset.len()
        )));
    }
    Ok(())
}

fn class_indices(dataset: &Dataset, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); dataset.num_classes()];
    for (i, &l) in dataset.labels().iter().enumerate() {
        by_class[l].push(i);
    }
    for idx in &mut by_class {
        idx.shuffle(rng);
    }
    by_class
}

/// Splits `total` by `proportions` with largest-remainder rounding; ties go to
/// the lower client index.
fn largest_remainder(total: usize, proportions: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &c in order.iter().take(total.saturating_sub(assigned)) {
        counts[c] += 1;
    }
    counts
}

fn draw_dirichlet(gamma: &Gamma<f64>, num_clients: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..num_clients).map(|_| gamma.sample(rng)).collect();
        let sum: f64 = g.iter().sum();
        // very small concentrations can underflow every component
        if sum > 0.0 && sum.is_finite() {
            return g.into_iter().map(|v| v / sum).collect();
        }
    }
}

/// Non-IID split: each class is divided among clients by proportions drawn
/// from `Dir(alpha·1)`. If some client would end up empty, the proportions of
/// one class at a time (cycling through classes) are redrawn.
pub fn dirichlet_partition(
    dataset: &Dataset,
    num_clients: usize,
    alpha: f64,
    seed: u64,
) -> Result<Partition> {
    check_size(dataset, num_clients)?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!(
            "dirichlet alpha must be positive, got {alpha}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let by_class = class_indices(dataset, &mut rng);
    let gamma =
        Gamma::new(alpha, 1.0).map_err(|e| Error::Config(format!("dirichlet alpha: {e}")))?;
    let k = by_class.len();
    let mut split: Vec<Vec<usize>> = by_class
        .iter()
        .map(|idx| largest_remainder(idx.len(), &draw_dirichlet(&gamma, num_clients, &mut rng)))
        .collect();

    let mut redraws = 0;
    loop {
        let empty = (0..num_clients).any(|c| split.iter().all(|counts| counts[c] == 0));
        if !empty {
            break;
        }
        if redraws == MAX_DIRICHLET_REDRAWS {
            return Err(Error::Config(format!(
                "could not give all {num_clients} clients a sample after {redraws} redraws"
            )));
        }
        let class = redraws % k;
        split[class] = largest_remainder(
            by_class[class].len(),
            &draw_dirichlet(&gamma, num_clients, &mut rng),
        );
        redraws += 1;
    }

    let mut assignments = vec![Vec::new(); num_clients];
    for (idx, counts) in by_class.iter().zip(&split) {
        let mut start = 0;
        for (c, &n) in counts.iter().enumerate() {
            assignments[c].extend_from_slice(&idx[start..start + n]);
            start += n;
        }
    }
    Partition::new(assignments, dataset.len())
}

/// IID split: within each class, shuffled samples are dealt round-robin. The
/// starting client rotates with the running total so client sizes stay even.
pub fn iid_partition(dataset: &Dataset, num_clients: usize, seed: u64) -> Result<Partition> {
    check_size(dataset, num_clients)?;
    let mut rng = rng_from_seed(seed);
    let by_class = class_indices(dataset, &mut rng);
    let mut assignments = vec![Vec::new(); num_clients];
    let mut dealt = 0;
    for idx in by_class {
        for i in idx {
            assignments[dealt % num_clients].push(i);
            dealt += 1;
        }
    }
    Partition::new(assignments, dataset.len())
}
