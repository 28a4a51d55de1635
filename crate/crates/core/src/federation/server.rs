use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{LocalUpdateReport, Strategy, Variant};
use crate::error::{Error, Result};
use crate::numeric::Model;
use crate::prototypes::{
    cluster_by_class, global_prototype, personalized_prototype, unbiased_prototype,
    PersonalizedTargets, PrototypeSet,
};
use crate::{ClientId, Label};

/// What the server holds between rounds.
#[derive(Debug, Clone, Default)]
pub struct ServerState {
    pub targets: BTreeMap<ClientId, PersonalizedTargets>,
    /// Only populated under FedAvg.
    pub global_model: Option<Model>,
}

/// Serialized server state after a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerSnapshot {
    pub round: usize,
    pub strategy: Variant,
    pub targets: BTreeMap<ClientId, BTreeMap<Label, Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global_model: Option<Vec<f64>>,
}

impl ServerState {
    pub fn snapshot(&self, round: usize, strategy: Variant) -> ServerSnapshot {
        ServerSnapshot {
            round,
            strategy,
            targets: self
                .targets
                .iter()
                .map(|(&c, t)| (c, t.entries.clone()))
                .collect(),
            global_model: self.global_model.as_ref().map(Model::flat_params),
        }
    }
}

/// Per-client targets from the uploaded prototype sets.
///
/// Each client receives a target for every class it uploaded. Classes held
/// by a single client resolve to that client's own prototype under every
/// prototype strategy.
pub fn aggregate_targets(
    uploads: &[PrototypeSet],
    strategy: &Strategy,
) -> Result<BTreeMap<ClientId, PersonalizedTargets>> {
    if !strategy.variant.uses_prototypes() {
        return Err(Error::Protocol(format!(
            "{} does not aggregate prototypes",
            strategy.variant
        )));
    }
    strategy.validate()?;
    let clusters = cluster_by_class(uploads)?;

    let shared: BTreeMap<Label, Vec<f64>> = match strategy.variant {
        Variant::GlobalProto => clusters
            .iter()
            .map(|(&k, c)| Ok((k, global_prototype(c)?)))
            .collect::<Result<_>>()?,
        Variant::UnbiasedProto => clusters
            .iter()
            .map(|(&k, c)| Ok((k, unbiased_prototype(c)?)))
            .collect::<Result<_>>()?,
        _ => BTreeMap::new(),
    };

    let mut out = BTreeMap::new();
    for set in uploads {
        let mut entries = BTreeMap::new();
        for &k in set.entries.keys() {
            let target = match strategy.variant {
                Variant::Pfpl => personalized_prototype(
                    set.owner,
                    k,
                    &clusters[&k],
                    strategy.alpha,
                    strategy.weight_mode,
                )?,
                _ => shared[&k].clone(),
            };
            entries.insert(k, target);
        }
        out.insert(
            set.owner,
            PersonalizedTargets {
                owner: set.owner,
                entries,
            },
        );
    }
    Ok(out)
}

/// Sample-weighted parameter mean, accumulated in client-id order.
pub fn fedavg(models: &[(ClientId, &Model, usize)]) -> Result<Model> {
    let mut sorted: Vec<&(ClientId, &Model, usize)> = models.iter().collect();
    sorted.sort_by_key(|(id, _, _)| *id);
    let Some((_, first, _)) = sorted.first() else {
        return Err(Error::Protocol("FedAvg needs at least one client".into()));
    };
    let total: usize = sorted.iter().map(|(_, _, n)| n).sum();
    if total == 0 {
        return Err(Error::Protocol("FedAvg clients report zero samples".into()));
    }
    let mut acc = vec![0.0; first.param_count()];
    for (id, model, n) in &sorted {
        let params = model.flat_params();
        if params.len() != acc.len() {
            return Err(Error::Dimension(format!(
                "client {id} model has {} parameters, expected {}",
                params.len(),
                acc.len()
            )));
        }
        let w = *n as f64 / total as f64;
        for (a, p) in acc.iter_mut().zip(params) {
            *a += w * p;
        }
    }
    let mut out = (*first).clone();
    out.set_flat_params(&acc)?;
    Ok(out)
}

/// Federation-level objective: `Σ_i (D_i / N)·(ℓ_S,i + λ·ℓ_R,i)` from the
/// clients' reports, where `D_i` is the client's training-set size.
pub fn objective(reports: &[(usize, &LocalUpdateReport)], lambda: f64) -> f64 {
    let total: usize = reports.iter().map(|(n, _)| n).sum();
    if total == 0 {
        return 0.0;
    }
    let weighted = |f: &dyn Fn(&LocalUpdateReport) -> f64| {
        reports
            .iter()
            .map(|(n, r)| *n as f64 / total as f64 * f(r))
            .sum::<f64>()
    };
    weighted(&|r| r.loss_s) + lambda * weighted(&|r| r.loss_r)
}
