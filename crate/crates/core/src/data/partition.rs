//! n-way / k-shot partitioning with per-client domain assignment.
//!
//! Label skew comes from each client holding only `n` of the global classes;
//! feature skew comes from each client drawing from its own domain(s).

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ClientDataset, LabeledDataset, Sample};
use crate::error::{Error, Result};
use crate::{rng, ClientId, Label};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainAssignment {
    /// Client `i` draws from domain `i mod D`.
    RoundRobin,
    /// Each client's domain is drawn uniformly under the plan seed.
    Random,
}

/// Resolved allocation for one client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientPlan {
    pub classes: Vec<Label>,
    /// Samples per class before the train/test split.
    pub k_shot: usize,
    pub domains: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub clients: Vec<ClientPlan>,
    pub test_fraction: f64,
    pub seed: u64,
}

impl PartitionPlan {
    /// Draw a plan: per client, `n` uniformly from `n_choices`, `k` uniformly
    /// from `k_range` (inclusive), and `n` distinct classes out of
    /// `num_classes`.
    #[allow(clippy::too_many_arguments)]
    pub fn sample(
        num_clients: usize,
        n_choices: &[usize],
        k_range: (usize, usize),
        num_classes: usize,
        num_domains: usize,
        assignment: DomainAssignment,
        test_fraction: f64,
        seed: u64,
    ) -> Result<Self> {
        if num_clients == 0 {
            return Err(Error::config("partition.clients", "need at least one client"));
        }
        if n_choices.is_empty() || n_choices.iter().any(|&n| n == 0 || n > num_classes) {
            return Err(Error::config(
                "partition.n",
                format!("every n must lie in 1..={num_classes}"),
            ));
        }
        if k_range.0 == 0 || k_range.0 > k_range.1 {
            return Err(Error::config("partition.k", "need 1 <= k_min <= k_max"));
        }
        if num_domains == 0 {
            return Err(Error::config("data.num_domains", "need at least one domain"));
        }
        let mut rng = rng::stream(seed, "partition/plan");
        let all: Vec<Label> = (0..num_classes).collect();
        let clients = (0..num_clients)
            .map(|i| {
                let n = *n_choices.choose(&mut rng).unwrap();
                let k = rng.random_range(k_range.0..=k_range.1);
                let mut classes: Vec<Label> = all.choose_multiple(&mut rng, n).copied().collect();
                classes.sort_unstable();
                let domain = match assignment {
                    DomainAssignment::RoundRobin => i % num_domains,
                    DomainAssignment::Random => rng.random_range(0..num_domains),
                };
                ClientPlan {
                    classes,
                    k_shot: k,
                    domains: vec![domain],
                }
            })
            .collect();
        let plan = PartitionPlan {
            clients,
            test_fraction,
            seed,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::config("partition.test_fraction", "must lie in [0, 1)"));
        }
        for (i, c) in self.clients.iter().enumerate() {
            if c.classes.is_empty() || c.domains.is_empty() || c.k_shot == 0 {
                return Err(Error::config(
                    "partition",
                    format!("client {i} needs classes, domains and k >= 1"),
                ));
            }
        }
        Ok(())
    }
}

/// Split `k` samples as evenly as possible over `parts` chunks.
fn chunk_sizes(k: usize, parts: usize) -> impl Iterator<Item = usize> {
    (0..parts).map(move |j| k / parts + usize::from(j < k % parts))
}

/// Allocate samples from the per-domain `pools` (indexed by domain id)
/// according to `plan`. Draws are without replacement and no pool sample is
/// handed to two clients.
pub fn partition(pools: &[LabeledDataset], plan: &PartitionPlan) -> Result<Vec<ClientDataset>> {
    plan.validate()?;

    // Shuffled per-(domain, class) queues, consumed in client order.
    let mut queues: BTreeMap<(usize, Label), Vec<&Sample>> = BTreeMap::new();
    for (d, pool) in pools.iter().enumerate() {
        for s in &pool.samples {
            queues.entry((d, s.label)).or_default().push(s);
        }
    }
    for (&(d, c), queue) in queues.iter_mut() {
        queue.shuffle(&mut rng::stream(plan.seed, &format!("partition/pool/{d}/{c}")));
        // Pop from the back: reverse so the shuffled order is consumed front-first.
        queue.reverse();
    }

    let mut out = Vec::with_capacity(plan.clients.len());
    for (i, cp) in plan.clients.iter().enumerate() {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for &class in &cp.classes {
            for (&domain, take) in cp.domains.iter().zip(chunk_sizes(cp.k_shot, cp.domains.len())) {
                if domain >= pools.len() {
                    return Err(Error::config(
                        "partition.domains",
                        format!("client {i} assigned to missing domain {domain}"),
                    ));
                }
                let queue = queues.entry((domain, class)).or_default();
                if queue.len() < take {
                    return Err(Error::Partition {
                        class,
                        domain,
                        shortfall: take - queue.len(),
                    });
                }
                let n_test = (take as f64 * plan.test_fraction).round() as usize;
                for j in 0..take {
                    let s = queue.pop().unwrap().clone();
                    if j < take - n_test {
                        train.push(s);
                    } else {
                        test.push(s);
                    }
                }
            }
        }
        out.push(ClientDataset::new(ClientId(i as u32), train, test));
    }
    Ok(out)
}
