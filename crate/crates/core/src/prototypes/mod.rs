//! Prototype algebra.
//!
//! A prototype is the mean embedding of one class on one client. The server
//! groups uploaded prototypes by class into [`ClassCluster`]s and derives
//! per-client targets from them: count-weighted global prototypes,
//! unweighted (unbiased) prototypes, or personalized prototypes that blend a
//! client's own centroid with distance-weighted peer centroids.
//!
//! Every aggregation walks cluster members in client-id order, so results do
//! not depend on upload order, bit for bit.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{features_matrix, ClientDataset};
use crate::error::{Error, Result};
use crate::numeric::Model;
use crate::{ClientId, Label};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeEntry {
    pub centroid: Vec<f64>,
    pub count: usize,
}

/// One client's local prototypes, keyed by class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    pub owner: ClientId,
    pub entries: BTreeMap<Label, PrototypeEntry>,
}

impl PrototypeSet {
    pub fn dim(&self) -> Option<usize> {
        self.entries.values().next().map(|e| e.centroid.len())
    }

    /// Scalars needed to transmit the centroids.
    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(|e| e.centroid.len()).sum()
    }
}

/// Wire form of an uploaded prototype set:
/// `{client, round, entries: {class: {centroid, count}}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeDocument {
    pub client: ClientId,
    pub round: usize,
    pub entries: BTreeMap<Label, PrototypeEntry>,
}

impl PrototypeDocument {
    pub fn new(set: &PrototypeSet, round: usize) -> Self {
        PrototypeDocument {
            client: set.owner,
            round,
            entries: set.entries.clone(),
        }
    }

    pub fn into_set(self) -> PrototypeSet {
        PrototypeSet {
            owner: self.client,
            entries: self.entries,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMember {
    pub client: ClientId,
    pub centroid: Vec<f64>,
    pub count: usize,
}

/// All clients' prototypes for a single class, ordered by client id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCluster {
    class: Label,
    members: Vec<ClusterMember>,
}

impl ClassCluster {
    pub fn new(class: Label, mut members: Vec<ClusterMember>) -> Result<Self> {
        members.sort_by_key(|m| m.client);
        if members.windows(2).any(|w| w[0].client == w[1].client) {
            return Err(Error::Protocol(format!(
                "class {class} cluster lists a client twice"
            )));
        }
        if let Some(first) = members.first() {
            let d = first.centroid.len();
            if let Some(bad) = members.iter().find(|m| m.centroid.len() != d) {
                return Err(Error::Dimension(format!(
                    "class {class}: client {} centroid has dimension {}, expected {d}",
                    bad.client,
                    bad.centroid.len()
                )));
            }
        }
        Ok(ClassCluster { class, members })
    }

    pub fn class(&self) -> Label {
        self.class
    }

    pub fn members(&self) -> &[ClusterMember] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn member(&self, client: ClientId) -> Option<&ClusterMember> {
        self.members
            .binary_search_by_key(&client, |m| m.client)
            .ok()
            .map(|i| &self.members[i])
    }

    fn dim(&self) -> usize {
        self.members.first().map_or(0, |m| m.centroid.len())
    }
}

/// Target prototypes sent to one client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonalizedTargets {
    pub owner: ClientId,
    pub entries: BTreeMap<Label, Vec<f64>>,
}

impl PersonalizedTargets {
    pub fn empty(owner: ClientId) -> Self {
        PersonalizedTargets {
            owner,
            entries: BTreeMap::new(),
        }
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }
}

/// How peers are weighted when blending a personalized prototype.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Softmax of `-dist / tau` over peers, `tau` the median peer distance.
    /// Closer peers weigh more.
    #[default]
    Similarity,
    /// `dist_m / sum(dist)`: weight proportional to distance.
    Proportional,
}

impl fmt::Display for WeightMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightMode::Similarity => "similarity",
            WeightMode::Proportional => "proportional",
        })
    }
}

impl FromStr for WeightMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "similarity" => Ok(WeightMode::Similarity),
            "proportional" | "distance" => Ok(WeightMode::Proportional),
            other => Err(format!(
                "unknown weight mode `{other}` (expected similarity or proportional)"
            )),
        }
    }
}

/// Mean embedding per class over the client's training samples.
pub fn compute_local_prototypes(model: &Model, dataset: &ClientDataset) -> Result<PrototypeSet> {
    if dataset.train.is_empty() {
        return Err(Error::Data(format!(
            "client {} has no training samples",
            dataset.client_id
        )));
    }
    let inputs = features_matrix(&dataset.train, model.input_dim());
    let embeddings = model.forward_features(&inputs)?;
    let d = embeddings.cols();
    let mut sums: BTreeMap<Label, (Vec<f64>, usize)> = BTreeMap::new();
    for (s, h) in dataset.train.iter().zip(embeddings.iter_rows()) {
        let (sum, n) = sums.entry(s.label).or_insert_with(|| (vec![0.0; d], 0));
        for (a, b) in sum.iter_mut().zip(h) {
            *a += b;
        }
        *n += 1;
    }
    let entries = sums
        .into_iter()
        .map(|(k, (sum, n))| {
            let centroid = sum.into_iter().map(|v| v / n as f64).collect();
            (k, PrototypeEntry { centroid, count: n })
        })
        .collect();
    Ok(PrototypeSet {
        owner: dataset.client_id,
        entries,
    })
}

/// Squared Euclidean distance.
pub fn l2_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "cannot compare vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Group prototype sets by class.
pub fn cluster_by_class(all_sets: &[PrototypeSet]) -> Result<BTreeMap<Label, ClassCluster>> {
    let dim = all_sets.iter().find_map(PrototypeSet::dim);
    let mut grouped: BTreeMap<Label, Vec<ClusterMember>> = BTreeMap::new();
    for set in all_sets {
        for (&k, e) in &set.entries {
            if Some(e.centroid.len()) != dim {
                return Err(Error::Dimension(format!(
                    "client {} class {k} prototype has dimension {}, expected {}",
                    set.owner,
                    e.centroid.len(),
                    dim.unwrap_or(0)
                )));
            }
            grouped.entry(k).or_default().push(ClusterMember {
                client: set.owner,
                centroid: e.centroid.clone(),
                count: e.count,
            });
        }
    }
    grouped
        .into_iter()
        .map(|(k, members)| Ok((k, ClassCluster::new(k, members)?)))
        .collect()
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Weights client `i` assigns to each of its peers in `cluster`.
///
/// Sums to 1 when peers exist; empty when `i` is the only member. When every
/// distance is zero (or, in similarity mode, the median distance is zero) the
/// weight is spread uniformly over the zero-distance peers.
pub fn peer_weights(
    i: ClientId,
    cluster: &ClassCluster,
    mode: WeightMode,
) -> Result<BTreeMap<ClientId, f64>> {
    let own = cluster.member(i).ok_or_else(|| {
        Error::Protocol(format!(
            "client {i} is not in the class {} cluster",
            cluster.class()
        ))
    })?;
    let peers: Vec<&ClusterMember> = cluster.members().iter().filter(|m| m.client != i).collect();
    if peers.is_empty() {
        return Ok(BTreeMap::new());
    }
    let dists = peers
        .iter()
        .map(|m| l2_distance(&own.centroid, &m.centroid))
        .collect::<Result<Vec<f64>>>()?;

    let uniform_over_zero = || {
        let zeros = dists.iter().filter(|&&d| d == 0.0).count() as f64;
        peers
            .iter()
            .zip(&dists)
            .map(|(m, &d)| (m.client, if d == 0.0 { 1.0 / zeros } else { 0.0 }))
            .collect()
    };

    let weights = match mode {
        WeightMode::Proportional => {
            let total: f64 = dists.iter().sum();
            if total == 0.0 {
                uniform_over_zero()
            } else {
                peers
                    .iter()
                    .zip(&dists)
                    .map(|(m, d)| (m.client, d / total))
                    .collect()
            }
        }
        WeightMode::Similarity => {
            let tau = median(&dists);
            if tau == 0.0 {
                uniform_over_zero()
            } else {
                let nearest = dists.iter().copied().fold(f64::INFINITY, f64::min);
                let raw: Vec<f64> = dists.iter().map(|d| (-(d - nearest) / tau).exp()).collect();
                let total: f64 = raw.iter().sum();
                peers
                    .iter()
                    .zip(raw)
                    .map(|(m, r)| (m.client, r / total))
                    .collect()
            }
        }
    };
    Ok(weights)
}

pub fn validate_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config("alpha", format!("{alpha} is outside [0, 1]")));
    }
    Ok(())
}

/// `alpha·C_i + (1 − alpha)·Σ_m w(i, m)·C_m` for class `k`; the client's own
/// centroid when it is the only holder of `k`.
pub fn personalized_prototype(
    i: ClientId,
    k: Label,
    cluster: &ClassCluster,
    alpha: f64,
    mode: WeightMode,
) -> Result<Vec<f64>> {
    validate_alpha(alpha)?;
    if cluster.class() != k {
        return Err(Error::Protocol(format!(
            "asked for class {k} from the class {} cluster",
            cluster.class()
        )));
    }
    let weights = peer_weights(i, cluster, mode)?;
    let own = &cluster.member(i).expect("checked by peer_weights").centroid;
    if weights.is_empty() || alpha == 1.0 {
        return Ok(own.clone());
    }
    let mut blend = vec![0.0; cluster.dim()];
    for m in cluster.members() {
        if let Some(w) = weights.get(&m.client) {
            for (b, c) in blend.iter_mut().zip(&m.centroid) {
                *b += w * c;
            }
        }
    }
    Ok(own
        .iter()
        .zip(blend)
        .map(|(c, b)| alpha * c + (1.0 - alpha) * b)
        .collect())
}

fn require_members(cluster: &ClassCluster) -> Result<()> {
    if cluster.is_empty() {
        return Err(Error::Protocol(format!(
            "class {} cluster has no members",
            cluster.class()
        )));
    }
    Ok(())
}

/// Count-weighted mean `Σ_i (|D_i^k| / N^k)·C_i^(k)`.
pub fn global_prototype(cluster: &ClassCluster) -> Result<Vec<f64>> {
    require_members(cluster)?;
    let total: usize = cluster.members().iter().map(|m| m.count).sum();
    if total == 0 {
        return Err(Error::Protocol(format!(
            "class {} cluster reports zero samples",
            cluster.class()
        )));
    }
    let mut out = vec![0.0; cluster.dim()];
    for m in cluster.members() {
        let w = m.count as f64 / total as f64;
        for (o, c) in out.iter_mut().zip(&m.centroid) {
            *o += w * c;
        }
    }
    Ok(out)
}

/// Unweighted mean of member centroids.
pub fn unbiased_prototype(cluster: &ClassCluster) -> Result<Vec<f64>> {
    require_members(cluster)?;
    let mut out = vec![0.0; cluster.dim()];
    for m in cluster.members() {
        for (o, c) in out.iter_mut().zip(&m.centroid) {
            *o += c;
        }
    }
    let n = cluster.len() as f64;
    Ok(out.into_iter().map(|v| v / n).collect())
}
