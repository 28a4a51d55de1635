use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::federation::Variant;
use crate::numeric::Model;
use crate::prototypes::PrototypeSet;
use crate::ClientId;

/// Every exchanged scalar is an `f64`.
pub const BYTES_PER_SCALAR: usize = 8;

/// Scalars moved per client in one round.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CommCost {
    pub upload: BTreeMap<ClientId, usize>,
    pub download: BTreeMap<ClientId, usize>,
}

impl CommCost {
    pub fn upload_total(&self) -> usize {
        self.upload.values().sum()
    }

    pub fn download_total(&self) -> usize {
        self.download.values().sum()
    }

    pub fn upload_bytes(&self) -> usize {
        self.upload_total() * BYTES_PER_SCALAR
    }

    pub fn download_bytes(&self) -> usize {
        self.download_total() * BYTES_PER_SCALAR
    }
}

/// Per-round payload for one client per entry of `sets`.
///
/// Prototype strategies upload one `d`-vector per class present and receive
/// a target of the same shape back; FedAvg moves the whole model both ways;
/// local-only training moves nothing.
pub fn comm_cost(variant: Variant, model: &Model, sets: &[PrototypeSet]) -> CommCost {
    let per_client = |set: &PrototypeSet| match variant {
        Variant::LocalOnly => 0,
        Variant::FedAvg => model.param_count(),
        Variant::Pfpl | Variant::GlobalProto | Variant::UnbiasedProto => {
            set.entries.len() * model.embedding_dim()
        }
    };
    let upload: BTreeMap<ClientId, usize> =
        sets.iter().map(|s| (s.owner, per_client(s))).collect();
    CommCost {
        download: upload.clone(),
        upload,
    }
}
