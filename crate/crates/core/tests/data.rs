use fedmas::data::{
    dirichlet_partition, gen_longtail, iid_partition, shot_groups, Dataset, LongTailSpec,
};
use fedmas::numerics::Tensor;
use proptest::prelude::*;

fn balanced(per_class: usize, classes: usize) -> Dataset {
    let n = per_class * classes;
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    Dataset::new(Tensor::zeros(n, 1), labels, classes).unwrap()
}

/// Mean over clients of the L1 distance between the client's label
/// distribution and the global one.
fn heterogeneity(ds: &Dataset, alpha: f64, clients: usize, seed: u64) -> f64 {
    let part = dirichlet_partition(ds, clients, alpha, seed).unwrap();
    let n = ds.len() as f64;
    let global: Vec<f64> = ds.class_counts().iter().map(|&c| c as f64 / n).collect();
    let per_client = part.class_counts(ds);
    per_client
        .iter()
        .map(|counts| {
            let m: usize = counts.iter().sum();
            counts
                .iter()
                .zip(&global)
                .map(|(&c, g)| (c as f64 / m as f64 - g).abs())
                .sum::<f64>()
        })
        .sum::<f64>()
        / clients as f64
}

#[test]
fn huge_alpha_reproduces_global_proportions() {
    let ds = balanced(1000, 5);
    for seed in 0..10 {
        let part = dirichlet_partition(&ds, 8, 1e6, seed).unwrap();
        for counts in part.class_counts(&ds) {
            let m: usize = counts.iter().sum();
            for &c in &counts {
                let share = c as f64 / m as f64;
                assert!((share - 0.2).abs() < 0.05, "seed {seed}: share {share}");
            }
        }
    }
}

#[test]
fn smaller_alpha_means_more_heterogeneity() {
    let ds = balanced(400, 10);
    let mean = |alpha: f64| {
        (0..10)
            .map(|s| heterogeneity(&ds, alpha, 8, s))
            .sum::<f64>()
            / 10.0
    };
    let (h01, h05, h100) = (mean(0.1), mean(0.5), mean(100.0));
    assert!(h01 > h05 && h05 > h100, "{h01} {h05} {h100}");
}

#[test]
fn paper_threshold_instance() {
    let g = shot_groups(&[800, 100, 10], 700, 70).unwrap();
    assert_eq!(
        (g.head.as_slice(), g.medium.as_slice(), g.tail.as_slice()),
        (&[0][..], &[1][..], &[2][..])
    );
}

#[test]
fn longtail_classes_are_separable_clusters() {
    let spec = LongTailSpec {
        num_classes: 3,
        n_max: 300,
        imbalance_ratio: 1.0,
        feature_dim: 8,
        class_separation: 4.0,
    };
    let ds = gen_longtail(&spec, 1).unwrap();
    // nearest-class-mean classification is near perfect at this separation
    let d = ds.feature_dim();
    let mut means = vec![vec![0.0; d]; 3];
    for (i, &y) in ds.labels().iter().enumerate() {
        for j in 0..d {
            means[y][j] += ds.features().get(i, j) / 300.0;
        }
    }
    let correct = ds
        .labels()
        .iter()
        .enumerate()
        .filter(|&(i, &y)| {
            let dist = |m: &Vec<f64>| {
                (0..d)
                    .map(|j| (ds.features().get(i, j) - m[j]).powi(2))
                    .sum::<f64>()
            };
            (0..3)
                .min_by(|&a, &b| dist(&means[a]).total_cmp(&dist(&means[b])))
                .unwrap()
                == y
        })
        .count();
    assert!(correct as f64 / ds.len() as f64 > 0.95);
}

proptest! {
    #[test]
    fn iid_counts_are_within_one_of_even(m in proptest::collection::vec(1usize..40, 2..6), c in 1usize..9, seed in 0u64..100) {
        let labels: Vec<usize> = m.iter().enumerate().flat_map(|(k, &n)| std::iter::repeat(k).take(n)).collect();
        let n = labels.len();
        prop_assume!(n >= c);
        let ds = Dataset::new(Tensor::zeros(n, 1), labels, m.len()).unwrap();
        let part = iid_partition(&ds, c, seed).unwrap();
        for counts in part.class_counts(&ds) {
            for (k, &got) in counts.iter().enumerate() {
                let floor = m[k] / c;
                prop_assert!(got == floor || got == floor + 1);
            }
        }
    }

    #[test]
    fn dirichlet_is_deterministic(seed in 0u64..1000, alpha in 0.05f64..10.0) {
        let ds = balanced(30, 4);
        let a = dirichlet_partition(&ds, 5, alpha, seed).unwrap();
        let b = dirichlet_partition(&ds, 5, alpha, seed).unwrap();
        prop_assert_eq!(a, b);
    }
}
