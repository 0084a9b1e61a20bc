//! Synthetic long-tailed datasets, client partitions, and shot groups.

mod generate;
mod io;
mod partition;

pub use generate::{gen_longtail, longtail_counts, train_test_split, LongTailSpec};
pub use io::{read_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use partition::{dirichlet_partition, iid_partition, Partition};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Labeled samples, one per feature row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
    class_counts: Vec<usize>,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::shape(
                "Dataset labels",
                features.rows(),
                labels.len(),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::DataConsistency(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        let class_counts = count_classes(&labels, num_classes);
        Ok(Dataset {
            features,
            labels,
            num_classes,
            class_counts,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Samples per class (`M_k`).
    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    /// The sub-dataset made of the given rows, in order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let labels: Vec<usize> = indices.iter().map(|&i| self.labels[i]).collect();
        Dataset {
            features: self.features.select_rows(indices),
            class_counts: count_classes(&labels, self.num_classes),
            labels,
            num_classes: self.num_classes,
        }
    }
}

pub fn count_classes(labels: &[usize], num_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; num_classes];
    for &l in labels {
        counts[l] += 1;
    }
    counts
}

/// Head / medium / tail split of the classes by sample count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotGroups {
    pub head: Vec<usize>,
    pub medium: Vec<usize>,
    pub tail: Vec<usize>,
    pub hi: usize,
    pub lo: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shot {
    Head,
    Medium,
    Tail,
}

impl ShotGroups {
    pub fn group_of(&self, class: usize) -> Option<Shot> {
        if self.head.contains(&class) {
            Some(Shot::Head)
        } else if self.medium.contains(&class) {
            Some(Shot::Medium)
        } else if self.tail.contains(&class) {
            Some(Shot::Tail)
        } else {
            None
        }
    }
}

/// Head is `count > hi`, tail is `count < lo`, everything else (boundaries
/// included) is medium.
pub fn shot_groups(class_counts: &[usize], hi: usize, lo: usize) -> Result<ShotGroups> {
    if lo >= hi {
        return Err(Error::Config(format!(
            "shot thresholds need lo < hi, got lo={lo}, hi={hi}"
        )));
    }
    let mut groups = ShotGroups {
        head: Vec::new(),
        medium: Vec::new(),
        tail: Vec::new(),
        hi,
        lo,
    };
    for (k, &m) in class_counts.iter().enumerate() {
        if m > hi {
            groups.head.push(k);
        } else if m < lo {
            groups.tail.push(k);
        } else {
            groups.medium.push(k);
        }
    }
    Ok(groups)
}
