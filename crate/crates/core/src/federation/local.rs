use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Strategy;
use crate::data::{features_matrix, ClientDataset, Sample};
use crate::error::{Error, Result};
use crate::numeric::{cross_entropy, sgd_step, Gradients, Matrix, Model, OptimizerState};
use crate::prototypes::{compute_local_prototypes, PersonalizedTargets, PrototypeSet};
use crate::rng::StreamRng;
use crate::{ClientId, Label};

/// Everything a client keeps private.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: ClientId,
    pub model: Model,
    pub optimizer: OptimizerState,
    pub data: ClientDataset,
    pub prototypes: Option<PrototypeSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalUpdateReport {
    pub client: ClientId,
    /// Sample-weighted means over all local steps.
    pub loss_s: f64,
    pub loss_r: f64,
    pub loss_total: f64,
    pub samples_seen: usize,
    pub prototypes: PrototypeSet,
    /// Full-train-set objective and gradient norm before the first step.
    pub start_loss: f64,
    pub start_grad_norm: f64,
    pub batch_grad_norms: Vec<f64>,
    pub grad_lipschitz: Option<f64>,
}

/// Loss terms and parameter gradient of `ℓ_S + λ·ℓ_R` on one batch.
#[derive(Debug, Clone)]
pub struct Objective {
    pub loss_s: f64,
    /// Mean over the batch of `‖h − target(y)‖²`; samples whose class has no
    /// target contribute zero.
    pub loss_r: f64,
    pub grads: Gradients,
}

impl Objective {
    pub fn total(&self, lambda: f64) -> f64 {
        self.loss_s + lambda * self.loss_r
    }
}

/// Evaluate the prototype-regularized objective and its gradient.
///
/// The regularizer's gradient `2λ(h − t)/B` enters at the embeddings, so it
/// only reaches the feature extractor. With `lambda == 0` the gradient is
/// exactly that of plain cross-entropy.
pub fn regularized_objective(
    model: &Model,
    inputs: &Matrix,
    labels: &[Label],
    targets: &BTreeMap<Label, Vec<f64>>,
    lambda: f64,
) -> Result<Objective> {
    let pass = model.forward(inputs)?;
    let (loss_s, grad_logits) = cross_entropy(&pass.logits, labels)?;
    let batch = labels.len();
    let d = model.embedding_dim();
    let mut grad_h = Matrix::zeros(batch, d);
    let mut reg = 0.0;
    let mut any_target = false;
    for (j, &y) in labels.iter().enumerate() {
        let Some(t) = targets.get(&y) else { continue };
        if t.len() != d {
            return Err(Error::Protocol(format!(
                "target for class {y} has dimension {}, embeddings have {d}",
                t.len()
            )));
        }
        any_target = true;
        let scale = 2.0 * lambda / batch as f64;
        for ((g, h), c) in grad_h.row_mut(j).iter_mut().zip(pass.embeddings.row(j)).zip(t) {
            let diff = h - c;
            reg += diff * diff;
            *g = scale * diff;
        }
    }
    let loss_r = if batch == 0 { 0.0 } else { reg / batch as f64 };
    let extra = (lambda != 0.0 && any_target).then_some(&grad_h);
    let grads = model.backprop(&pass, &grad_logits, extra)?;
    Ok(Objective {
        loss_s,
        loss_r,
        grads,
    })
}

fn full_objective(
    model: &Model,
    train: &[Sample],
    targets: &BTreeMap<Label, Vec<f64>>,
    lambda: f64,
) -> Result<Objective> {
    let inputs = features_matrix(train, model.input_dim());
    let labels: Vec<Label> = train.iter().map(|s| s.label).collect();
    regularized_objective(model, &inputs, &labels, targets, lambda)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Run `local_epochs` passes of minibatch SGD on the client's training set,
/// then recompute its prototypes with the updated model.
///
/// The momentum buffer starts from zero every round.
pub fn local_update(
    client: &mut ClientState,
    targets: &PersonalizedTargets,
    strategy: &Strategy,
    local_epochs: usize,
    batch_size: usize,
    rng: &mut StreamRng,
) -> Result<LocalUpdateReport> {
    if targets.owner != client.id {
        return Err(Error::Protocol(format!(
            "targets for client {} delivered to client {}",
            targets.owner, client.id
        )));
    }
    if batch_size == 0 {
        return Err(Error::config("optim.batch_size", "must be positive"));
    }
    let id = client.id;
    let lambda = strategy.effective_lambda();
    let train = &client.data.train;
    if train.is_empty() {
        return Err(Error::Data(format!("client {id} has no training samples")));
    }
    let p = client.model.input_dim();

    let start = full_objective(&client.model, train, &targets.entries, lambda)?;
    let start_params = client.model.flat_params();

    client.optimizer.reset();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let (mut sum_s, mut sum_r, mut sum_total) = (0.0, 0.0, 0.0);
    let mut samples_seen = 0;
    let mut batch_grad_norms = Vec::new();
    let mut batch_index = 0;
    for _ in 0..local_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch_size) {
            let inputs = features_matrix(chunk.iter().map(|&i| &train[i]), p);
            let labels: Vec<Label> = chunk.iter().map(|&i| train[i].label).collect();
            let obj = regularized_objective(&client.model, &inputs, &labels, &targets.entries, lambda)?;
            let total = obj.total(lambda);
            if !total.is_finite() {
                return Err(Error::Numeric {
                    client: id,
                    batch: Some(batch_index),
                    message: format!("non-finite loss {total}"),
                });
            }
            let n = chunk.len() as f64;
            sum_s += obj.loss_s * n;
            sum_r += obj.loss_r * n;
            sum_total += total * n;
            samples_seen += chunk.len();
            batch_grad_norms.push(obj.grads.l2_norm());
            sgd_step(&mut client.model, &obj.grads, &mut client.optimizer, id).map_err(|e| match e {
                Error::Numeric { client, message, .. } => Error::Numeric {
                    client,
                    batch: Some(batch_index),
                    message,
                },
                other => other,
            })?;
            batch_index += 1;
        }
    }

    let grad_lipschitz = if local_epochs > 0 {
        let end = full_objective(&client.model, train, &targets.entries, lambda)?;
        let dw = distance(&client.model.flat_params(), &start_params);
        (dw > 0.0).then(|| distance(&end.grads.flat(), &start.grads.flat()) / dw)
    } else {
        None
    };

    let prototypes = compute_local_prototypes(&client.model, &client.data)?;
    client.prototypes = Some(prototypes.clone());
    let denom = samples_seen.max(1) as f64;
    Ok(LocalUpdateReport {
        client: id,
        loss_s: sum_s / denom,
        loss_r: sum_r / denom,
        loss_total: sum_total / denom,
        samples_seen,
        prototypes,
        start_loss: start.total(lambda),
        start_grad_norm: start.grads.l2_norm(),
        batch_grad_norms,
        grad_lipschitz,
    })
}
