use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    aggregate_targets, fedavg, local_update, ClientState, LocalUpdateReport, ServerSnapshot,
    ServerState, Strategy, Variant,
};
use crate::analysis::{
    comm_cost, convergence_diag, evaluate, ClientRoundRecord, CommCost, ConvergenceDiag,
    DiagSettings, RoundReport,
};
use crate::config::{DataSource, ExperimentConfig};
use crate::data::{
    default_domains, features_matrix, load_csv, load_idx, make_synthetic_domain, partition,
    LabeledDataset, PartitionPlan,
};
use crate::error::{Error, Result};
use crate::numeric::{init_model, Model, OptimizerState};
use crate::prototypes::{PersonalizedTargets, PrototypeDocument, PrototypeSet};
use crate::{rng, ClientId};

/// Training inputs per client used to estimate the embedding Lipschitz ratio.
const PROBE_SAMPLES: usize = 32;

/// Clients, server, and the round counter.
#[derive(Debug, Clone)]
pub struct FederationState {
    /// Number of completed communication rounds.
    pub round: usize,
    pub clients: Vec<ClientState>,
    pub server: ServerState,
    pub seed: u64,
    pub plan: PartitionPlan,
}

/// One client's message to the server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Upload {
    Prototypes(PrototypeDocument),
    Parameters {
        client: ClientId,
        round: usize,
        parameters: usize,
    },
}

#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub round: usize,
    pub reports: Vec<LocalUpdateReport>,
    pub uploads: Vec<Upload>,
    pub comm: CommCost,
}

/// Everything persisted for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundArtifacts {
    pub round: usize,
    pub uploads: Vec<Upload>,
    pub server: ServerSnapshot,
    pub report: RoundReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub strategy: Variant,
    pub rounds: Vec<RoundReport>,
    pub final_accuracy: BTreeMap<ClientId, f64>,
    pub final_macro_accuracy: f64,
    /// Scalars summed over all rounds and clients.
    pub upload_total: usize,
    pub download_total: usize,
    pub diagnostics: Option<ConvergenceDiag>,
}

fn load_pools(config: &ExperimentConfig) -> Result<Vec<LabeledDataset>> {
    let pools = match &config.source {
        DataSource::Synthetic => default_domains(
            config.num_domains,
            config.input_dim,
            config.shift,
            config.seed,
        )
        .iter()
        .map(|spec| {
            make_synthetic_domain(spec, config.num_classes, config.seed, config.samples_per_class)
        })
        .collect::<Result<Vec<_>>>()?,
        DataSource::Idx(pairs) => pairs
            .iter()
            .enumerate()
            .map(|(d, (images, labels))| Ok(load_idx(images, labels)?.with_domain(d)))
            .collect::<Result<Vec<_>>>()?,
        DataSource::Csv(path) => load_csv(path)?.split_by_domain(),
    };
    let Some(first) = pools.first() else {
        return Err(Error::Data("no domains loaded".into()));
    };
    if let Some(bad) = pools.iter().find(|p| p.input_dim != first.input_dim) {
        return Err(Error::Dimension(format!(
            "domains disagree on input width: {} vs {}",
            first.input_dim, bad.input_dim
        )));
    }
    Ok(pools)
}

/// Load or generate the domain pools, partition them over the clients, and
/// give every client the same initial model.
pub fn build_federation(config: &ExperimentConfig) -> Result<FederationState> {
    config.validate()?;
    let pools = load_pools(config)?;
    let input_dim = pools[0].input_dim;
    let num_classes = match config.source {
        DataSource::Synthetic => config.num_classes,
        _ => pools.iter().map(LabeledDataset::num_classes).max().unwrap_or(0),
    };
    if num_classes < 2 {
        return Err(Error::Data(format!("need at least 2 classes, found {num_classes}")));
    }
    let plan = PartitionPlan::sample(
        config.clients,
        &config.n_way,
        config.k_shot,
        num_classes,
        pools.len(),
        config.assignment,
        config.test_fraction,
        config.seed,
    )?;
    let datasets = partition(&pools, &plan)?;

    let mut dims = vec![input_dim];
    dims.extend_from_slice(&config.hidden);
    dims.push(config.embedding_dim);
    let model = init_model(&dims, config.embedding_dim, num_classes, config.seed)?;
    let optimizer =
        OptimizerState::new(&model, config.eta, config.momentum, config.weight_decay)?;
    let clients = datasets
        .into_iter()
        .map(|data| ClientState {
            id: data.client_id,
            model: model.clone(),
            optimizer: optimizer.clone(),
            data,
            prototypes: None,
        })
        .collect();
    Ok(FederationState {
        round: 0,
        clients,
        server: ServerState::default(),
        seed: config.seed,
        plan,
    })
}

/// One communication round: local updates in parallel, uploads, and
/// server aggregation. The server only ever sees the uploads.
pub fn run_round(
    state: &mut FederationState,
    strategy: &Strategy,
    local_epochs: usize,
    batch_size: usize,
) -> Result<RoundOutcome> {
    strategy.validate()?;
    let round = state.round + 1;
    let seed = state.seed;
    let server = &state.server;
    let reports = state
        .clients
        .par_iter_mut()
        .map(|client| {
            let targets = server
                .targets
                .get(&client.id)
                .cloned()
                .unwrap_or_else(|| PersonalizedTargets::empty(client.id));
            let mut rng = rng::stream(seed, &format!("shuffle/{}/{round}", client.id));
            local_update(client, &targets, strategy, local_epochs, batch_size, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;

    let sets: Vec<PrototypeSet> = reports.iter().map(|r| r.prototypes.clone()).collect();
    let model = &state.clients[0].model;
    let comm = comm_cost(strategy.variant, model, &sets);

    let uploads: Vec<Upload> = match strategy.variant {
        Variant::Pfpl | Variant::GlobalProto | Variant::UnbiasedProto => {
            let docs: Vec<PrototypeDocument> =
                sets.iter().map(|s| PrototypeDocument::new(s, round)).collect();
            let received: Vec<PrototypeSet> =
                docs.iter().cloned().map(PrototypeDocument::into_set).collect();
            state.server.targets = aggregate_targets(&received, strategy)?;
            docs.into_iter().map(Upload::Prototypes).collect()
        }
        Variant::FedAvg => {
            let weighted: Vec<(ClientId, &Model, usize)> = state
                .clients
                .iter()
                .map(|c| (c.id, &c.model, c.data.train_len()))
                .collect();
            let global = fedavg(&weighted)?;
            for c in &mut state.clients {
                c.model = global.clone();
            }
            let parameters = global.param_count();
            state.server.global_model = Some(global);
            state
                .clients
                .iter()
                .map(|c| Upload::Parameters {
                    client: c.id,
                    round,
                    parameters,
                })
                .collect()
        }
        Variant::LocalOnly => Vec::new(),
    };

    state.round = round;
    Ok(RoundOutcome {
        round,
        reports,
        uploads,
        comm,
    })
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Largest per-sample embedding shift over the feature-parameter shift.
fn embedding_lipschitz(before: &Model, after: &Model, client: &ClientState) -> Result<Option<f64>> {
    let dw = distance(&after.flat_phi_params(), &before.flat_phi_params());
    if dw == 0.0 {
        return Ok(None);
    }
    let probe = features_matrix(
        client.data.train.iter().take(PROBE_SAMPLES),
        before.input_dim(),
    );
    let h0 = before.forward_features(&probe)?;
    let h1 = after.forward_features(&probe)?;
    let shift = h0
        .iter_rows()
        .zip(h1.iter_rows())
        .map(|(a, b)| distance(a, b))
        .fold(0.0, f64::max);
    Ok(Some(shift / dw))
}

fn evaluate_all(state: &FederationState) -> Result<Vec<f64>> {
    state
        .clients
        .par_iter()
        .map(|c| {
            evaluate(&c.model, &c.data.test).map_err(|e| match e {
                Error::Evaluation(m) => Error::Evaluation(format!("client {}: {m}", c.id)),
                other => other,
            })
        })
        .collect()
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    run_experiment_with(config, |_| Ok(()))
}

/// Run the configured experiment, handing each round's artifacts to
/// `observer` as soon as the round completes (round 0 is the initial
/// evaluation).
pub fn run_experiment_with<F>(config: &ExperimentConfig, mut observer: F) -> Result<ExperimentResult>
where
    F: FnMut(&RoundArtifacts) -> Result<()>,
{
    let strategy = config.strategy();
    let mut state = build_federation(config)?;

    let initial = evaluate_all(&state)?;
    let report = RoundReport::new(
        0,
        state
            .clients
            .iter()
            .zip(&initial)
            .map(|(c, &acc)| ClientRoundRecord::evaluation_only(0, c.id, acc))
            .collect(),
    );
    observer(&RoundArtifacts {
        round: 0,
        uploads: Vec::new(),
        server: state.server.snapshot(0, strategy.variant),
        report: report.clone(),
    })?;
    let mut rounds = vec![report];

    for _ in 0..config.rounds {
        let before: Vec<Model> = state.clients.iter().map(|c| c.model.clone()).collect();
        let outcome = run_round(&mut state, &strategy, config.local_epochs, config.batch_size)?;
        let accuracy = evaluate_all(&state)?;
        let mut records = Vec::with_capacity(state.clients.len());
        for (((client, prev), rep), acc) in state
            .clients
            .iter()
            .zip(&before)
            .zip(&outcome.reports)
            .zip(accuracy)
        {
            records.push(ClientRoundRecord {
                round: outcome.round,
                client: client.id,
                accuracy: acc,
                loss_s: Some(rep.loss_s),
                loss_r: Some(rep.loss_r),
                loss_total: Some(rep.loss_total),
                upload_params: outcome.comm.upload.get(&client.id).copied().unwrap_or(0),
                download_params: outcome.comm.download.get(&client.id).copied().unwrap_or(0),
                samples_seen: rep.samples_seen,
                start_loss: Some(rep.start_loss),
                start_grad_norm: Some(rep.start_grad_norm),
                batch_grad_norms: rep.batch_grad_norms.clone(),
                grad_lipschitz: rep.grad_lipschitz,
                embedding_lipschitz: embedding_lipschitz(prev, &client.model, client)?,
            });
        }
        let report = RoundReport::new(outcome.round, records);
        observer(&RoundArtifacts {
            round: outcome.round,
            uploads: outcome.uploads,
            server: state.server.snapshot(outcome.round, strategy.variant),
            report: report.clone(),
        })?;
        rounds.push(report);
    }

    Ok(ExperimentResult::from_rounds(config, rounds))
}

impl ExperimentResult {
    /// Summary of a finished run from its per-round reports.
    pub fn from_rounds(config: &ExperimentConfig, rounds: Vec<RoundReport>) -> Self {
        let strategy = config.strategy();
        let (final_accuracy, final_macro_accuracy) = match rounds.last() {
            Some(last) => (
                last.clients.iter().map(|c| (c.client, c.accuracy)).collect(),
                last.macro_accuracy,
            ),
            None => (BTreeMap::new(), 0.0),
        };
        let upload_total = rounds.iter().map(RoundReport::upload_params).sum();
        let download_total = rounds.iter().map(RoundReport::download_params).sum();
        let diagnostics = convergence_diag(
            &rounds,
            DiagSettings {
                lambda: strategy.effective_lambda(),
                eta: config.eta,
                local_epochs: config.local_epochs,
            },
        );
        ExperimentResult {
            strategy: strategy.variant,
            rounds,
            final_accuracy,
            final_macro_accuracy,
            upload_total,
            download_total,
            diagnostics,
        }
    }
}
