//! Multi-domain labeled data and its partitioning across clients.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::numeric::Matrix;
use crate::{ClientId, Label};

mod csv;
mod idx;
mod partition;
mod synthetic;

pub use self::csv::load_csv;
pub use idx::load_idx;
pub use partition::{partition, ClientPlan, DomainAssignment, PartitionPlan};
pub use synthetic::{class_means, default_domains, make_synthetic_domain, DomainSpec, DomainShift};

/// One labeled instance. `index` is its position in the source domain pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: Label,
    pub domain: usize,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub input_dim: usize,
    pub samples: Vec<Sample>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Re-tag every sample with `domain`.
    pub fn with_domain(mut self, domain: usize) -> Self {
        for s in &mut self.samples {
            s.domain = domain;
        }
        self
    }

    pub fn num_classes(&self) -> usize {
        self.samples.iter().map(|s| s.label + 1).max().unwrap_or(0)
    }

    /// Split a mixed-domain dataset into one pool per domain id
    /// (`0..=max_domain`), re-indexing samples within each pool.
    pub fn split_by_domain(self) -> Vec<LabeledDataset> {
        let domains = self.samples.iter().map(|s| s.domain + 1).max().unwrap_or(0);
        let mut pools = vec![
            LabeledDataset {
                input_dim: self.input_dim,
                samples: Vec::new(),
            };
            domains
        ];
        for mut s in self.samples {
            let pool = &mut pools[s.domain].samples;
            s.index = pool.len();
            pool.push(s);
        }
        pools
    }
}

/// A client's private data, already split into train and test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientDataset {
    pub client_id: ClientId,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    /// Training samples per class (`|D_i^k|`).
    pub per_class_counts: BTreeMap<Label, usize>,
}

impl ClientDataset {
    pub fn new(client_id: ClientId, train: Vec<Sample>, test: Vec<Sample>) -> Self {
        let mut per_class_counts = BTreeMap::new();
        for s in &train {
            *per_class_counts.entry(s.label).or_insert(0) += 1;
        }
        ClientDataset {
            client_id,
            train,
            test,
            per_class_counts,
        }
    }

    pub fn classes_present(&self) -> BTreeSet<Label> {
        self.per_class_counts
            .iter()
            .filter(|(_, &n)| n > 0)
            .map(|(&k, _)| k)
            .collect()
    }

    pub fn domains(&self) -> BTreeSet<usize> {
        self.train.iter().map(|s| s.domain).collect()
    }

    pub fn train_len(&self) -> usize {
        self.train.len()
    }
}

/// Stack sample features into a matrix (`input_dim` columns).
pub fn features_matrix<'a, I>(samples: I, input_dim: usize) -> Matrix
where
    I: IntoIterator<Item = &'a Sample>,
{
    let mut data = Vec::new();
    let mut rows = 0;
    for s in samples {
        data.extend_from_slice(&s.features);
        rows += 1;
    }
    Matrix::from_vec(rows, input_dim, data).expect("samples share the input width")
}
