use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::rng_from_seed;

/// Shape of a synthetic long-tailed Gaussian classification problem.
#[derive(Debug, Clone, PartialEq)]
pub struct LongTailSpec {
    pub num_classes: usize,
    /// Size of the largest class (class 0).
    pub n_max: usize,
    /// Ratio between the largest and the smallest class.
    pub imbalance_ratio: f64,
    pub feature_dim: usize,
    /// Standard deviation of the class means; samples have unit noise.
    pub class_separation: f64,
}

/// `⌈n_max · ratio^(−k/(K−1))⌉` for each class `k`.
pub fn longtail_counts(
    num_classes: usize,
    n_max: usize,
    imbalance_ratio: f64,
) -> Result<Vec<usize>> {
    if num_classes < 2 {
        return Err(Error::Config(format!(
            "need at least 2 classes, got {num_classes}"
        )));
    }
    if n_max < num_classes {
        return Err(Error::Config(format!(
            "n_max ({n_max}) must be at least the class count ({num_classes})"
        )));
    }
    if !(imbalance_ratio >= 1.0 && imbalance_ratio.is_finite()) {
        return Err(Error::Config(format!(
            "imbalance ratio must be >= 1, got {imbalance_ratio}"
        )));
    }
    let last = (num_classes - 1) as f64;
    let counts: Vec<usize> = (0..num_classes)
        .map(|k| {
            let exact = n_max as f64 * imbalance_ratio.powf(-(k as f64) / last);
            // absorb representation error so exact integers do not round up
            (exact - 1e-9).ceil().max(0.0) as usize
        })
        .collect();
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Config(format!("class {k} would have no samples")));
    }
    Ok(counts)
}

/// Draws one Gaussian blob per class: the class mean is sampled once from
/// `N(0, class_separation²·I)`, then each sample adds unit Gaussian noise.
/// Rows are grouped by class in ascending order.
pub fn gen_longtail(spec: &LongTailSpec, seed: u64) -> Result<Dataset> {
    let counts = longtail_counts(spec.num_classes, spec.n_max, spec.imbalance_ratio)?;
    if spec.feature_dim == 0 {
        return Err(Error::Config("feature_dim must be at least 1".into()));
    }
    if !(spec.class_separation > 0.0 && spec.class_separation.is_finite()) {
        return Err(Error::Config("class_separation must be positive".into()));
    }
    let mut rng = rng_from_seed(seed);
    let d = spec.feature_dim;
    let means: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| {
            (0..d)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    spec.class_separation * z
                })
                .collect()
        })
        .collect();
    let n: usize = counts.iter().sum();
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for (k, &m) in counts.iter().enumerate() {
        for _ in 0..m {
            for mu in &means[k] {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(mu + z);
            }
            labels.push(k);
        }
    }
    Dataset::new(Tensor::from_vec(n, d, data)?, labels, spec.num_classes)
}

/// Seeded per-class split; each class sends `⌊test_fraction·M_k⌋` samples to
/// the test set but always keeps at least one for training.
pub fn train_test_split(
    dataset: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Config(format!(
            "test fraction must be in [0, 1), got {test_fraction}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for k in 0..dataset.num_classes() {
        let mut idx: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.labels()[i] == k)
            .collect();
        idx.shuffle(&mut rng);
        let n_test =
            ((idx.len() as f64 * test_fraction).floor() as usize).min(idx.len().saturating_sub(1));
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((dataset.subset(&train), dataset.subset(&test)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(k: usize, n_max: usize, ratio: f64) -> LongTailSpec {
        LongTailSpec {
            num_classes: k,
            n_max,
            imbalance_ratio: ratio,
            feature_dim: 3,
            class_separation: 2.0,
        }
    }

    #[test]
    fn ratio_one_is_balanced() {
        assert_eq!(longtail_counts(5, 40, 1.0).unwrap(), vec![40; 5]);
    }

    #[test]
    fn two_classes_hit_the_ratio() {
        assert_eq!(longtail_counts(2, 100, 100.0).unwrap(), vec![100, 1]);
    }

    #[test]
    fn counts_match_an_independent_recomputation() {
        let got = longtail_counts(10, 500, 100.0).unwrap();
        // 500 · 100^(−k/9) = 500 · 10^(−2k/9)
        let expected: Vec<usize> = (0..10)
            .map(|k| {
                let v = 500.0 * 10f64.powf(-2.0 * k as f64 / 9.0);
                let r = v.round();
                if (v - r).abs() < 1e-6 {
                    r as usize
                } else {
                    v.ceil() as usize
                }
            })
            .collect();
        assert_eq!(got, expected);
        assert_eq!(got[0], 500);
        assert_eq!(got[9], 5);
        assert!(got.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(longtail_counts(1, 10, 2.0).is_err());
        assert!(longtail_counts(4, 3, 2.0).is_err());
        assert!(longtail_counts(4, 30, 0.5).is_err());
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let a = gen_longtail(&spec(4, 50, 10.0), 9).unwrap();
        let b = gen_longtail(&spec(4, 50, 10.0), 9).unwrap();
        let c = gen_longtail(&spec(4, 50, 10.0), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.features(), c.features());
        assert_eq!(
            a.class_counts(),
            longtail_counts(4, 50, 10.0).unwrap().as_slice()
        );
    }

    #[test]
    fn split_keeps_every_sample_once() {
        let d = gen_longtail(&spec(5, 60, 20.0), 1).unwrap();
        let (train, test) = train_test_split(&d, 0.2, 2).unwrap();
        assert_eq!(train.len() + test.len(), d.len());
        for k in 0..5 {
            let m = d.class_counts()[k];
            assert_eq!(
                test.class_counts()[k],
                ((m as f64 * 0.2).floor() as usize).min(m - 1)
            );
            assert!(train.class_counts()[k] >= 1);
        }
    }
}
