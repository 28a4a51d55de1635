//! Federated training rounds: local updates with the prototype-regularized
//! loss, uploads, server-side aggregation, and the baseline strategies.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prototypes::{validate_alpha, WeightMode};

mod experiment;
mod local;
mod server;

pub use experiment::{
    build_federation, run_experiment, run_experiment_with, run_round, ExperimentResult,
    FederationState, RoundArtifacts, RoundOutcome, Upload,
};
pub use local::{local_update, regularized_objective, ClientState, LocalUpdateReport, Objective};
pub use server::{aggregate_targets, fedavg, objective, ServerSnapshot, ServerState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Personalized prototypes.
    Pfpl,
    /// One count-weighted prototype per class shared by all holders.
    GlobalProto,
    /// One unweighted prototype per class shared by all holders.
    UnbiasedProto,
    /// Sample-weighted parameter averaging.
    FedAvg,
    /// No communication.
    LocalOnly,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Pfpl,
        Variant::GlobalProto,
        Variant::UnbiasedProto,
        Variant::FedAvg,
        Variant::LocalOnly,
    ];

    pub fn uses_prototypes(self) -> bool {
        matches!(
            self,
            Variant::Pfpl | Variant::GlobalProto | Variant::UnbiasedProto
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Pfpl => "pfpl",
            Variant::GlobalProto => "global_proto",
            Variant::UnbiasedProto => "unbiased_proto",
            Variant::FedAvg => "fedavg",
            Variant::LocalOnly => "local_only",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "pfpl" => Ok(Variant::Pfpl),
            "global_proto" | "globalproto" | "fedproto" => Ok(Variant::GlobalProto),
            "unbiased_proto" | "unbiasedproto" => Ok(Variant::UnbiasedProto),
            "fedavg" => Ok(Variant::FedAvg),
            "local_only" | "localonly" | "local" => Ok(Variant::LocalOnly),
            other => Err(format!(
                "unknown strategy `{other}` (expected pfpl, global_proto, unbiased_proto, fedavg or local_only)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub variant: Variant,
    /// Weight on the client's own prototype (PFPL only).
    pub alpha: f64,
    /// Weight of the prototype regularizer (prototype strategies only).
    pub lambda: f64,
    pub weight_mode: WeightMode,
}

impl Strategy {
    pub fn new(variant: Variant) -> Self {
        Strategy {
            variant,
            alpha: 0.5,
            lambda: 1.0,
            weight_mode: WeightMode::Similarity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_alpha(self.alpha)?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda", format!("{} must be a finite value >= 0", self.lambda)));
        }
        Ok(())
    }

    /// Regularizer weight actually applied; baselines ignore `lambda`.
    pub fn effective_lambda(&self) -> f64 {
        if self.variant.uses_prototypes() {
            self.lambda
        } else {
            0.0
        }
    }
}
