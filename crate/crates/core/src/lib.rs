//! Personalized federated prototype learning for clients whose data is skewed
//! in both label distribution and feature distribution.
//!
//! Clients train private split models (feature extractor plus classifier
//! head) and exchange only per-class embedding centroids. The server groups
//! the uploaded centroids by class and sends every client a personalized
//! target per class: a blend of its own centroid and its peers', with peers
//! weighted by how close their centroid lies. Local training then adds a
//! squared-distance pull toward those targets to the usual cross-entropy.
//!
//! Modules, bottom-up:
//! - [`numeric`]: matrices, the MLP, cross-entropy, SGD with momentum.
//! - [`data`]: synthetic multi-domain data, IDX/CSV ingestion, n-way/k-shot
//!   partitioning.
//! - [`prototypes`]: local, global, unbiased and personalized prototypes.
//! - [`federation`]: local updates, server aggregation, full experiments
//!   with the prototype strategies and the FedAvg / local-only baselines.
//! - [`analysis`]: accuracy, communication cost, convergence diagnostics.
//! - [`config`] and [`runner`]: the experiment configuration and the
//!   artifact-writing runner behind the `pfpl` CLI.

use std::fmt;

use serde::{Deserialize, Serialize};

pub mod analysis;
pub mod config;
pub mod data;
pub mod error;
pub mod federation;
pub mod numeric;
pub mod prototypes;
pub mod rng;
pub mod runner;

pub use error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClientId(pub u32);

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Class label, an index into the global class set.
pub type Label = usize;
