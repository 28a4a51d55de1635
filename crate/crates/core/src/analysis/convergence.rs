//! Runtime convergence diagnostics.
//!
//! Smoothness and Lipschitz constants of an MLP are not computable exactly,
//! so they are estimated from observed ratios:
//! - `L1` (gradient Lipschitz): `‖∇ℓ(w_end) − ∇ℓ(w_start)‖ / ‖w_end − w_start‖`
//!   across one round of local training.
//! - `L2` (embedding Lipschitz): `max_x ‖f(φ_t, x) − f(φ_{t−1}, x)‖ / ‖φ_t − φ_{t−1}‖`
//!   across consecutive round snapshots.
//!
//! The per-round thresholds derived from them are order-of-magnitude checks
//! only and are never asserted.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::RoundReport;
use crate::ClientId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagSettings {
    pub lambda: f64,
    pub eta: f64,
    pub local_epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundDiag {
    pub round: usize,
    /// `mean_i ‖∇ℓ_i‖² / (L2·E·G)` at the start of the round.
    pub lambda_bound: Option<f64>,
    pub lambda_exceeds_bound: bool,
    /// One-round deviation bound with estimated constants, averaged over clients.
    pub deviation_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceDiag {
    /// Start-of-round gradient norm per client, in round order.
    pub grad_norm_estimates: BTreeMap<ClientId, Vec<f64>>,
    pub sigma_hat: f64,
    pub g_hat: f64,
    pub l1_hat: Option<f64>,
    pub l2_hat: Option<f64>,
    /// Fraction of consecutive training rounds in which a client's mean
    /// total loss went down, pooled over clients.
    pub monotone_fraction: f64,
    pub rounds: Vec<RoundDiag>,
}

fn max_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    values.fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
}

/// Diagnostics over the training rounds in `history`; `None` until at least
/// two training rounds exist.
pub fn convergence_diag(history: &[RoundReport], settings: DiagSettings) -> Option<ConvergenceDiag> {
    let trained: Vec<&RoundReport> = history
        .iter()
        .filter(|r| r.clients.iter().any(|c| c.loss_total.is_some()))
        .collect();
    if trained.len() < 2 {
        return None;
    }

    let mut losses: BTreeMap<ClientId, Vec<f64>> = BTreeMap::new();
    let mut grad_norm_estimates: BTreeMap<ClientId, Vec<f64>> = BTreeMap::new();
    let mut batch_norms = Vec::new();
    for r in &trained {
        for c in &r.clients {
            if let Some(l) = c.loss_total {
                losses.entry(c.client).or_default().push(l);
            }
            if let Some(g) = c.start_grad_norm {
                grad_norm_estimates.entry(c.client).or_default().push(g);
            }
            batch_norms.extend_from_slice(&c.batch_grad_norms);
        }
    }

    let (mut decreases, mut pairs) = (0usize, 0usize);
    for seq in losses.values() {
        for w in seq.windows(2) {
            pairs += 1;
            if w[1] < w[0] {
                decreases += 1;
            }
        }
    }
    let monotone_fraction = if pairs == 0 {
        0.0
    } else {
        decreases as f64 / pairs as f64
    };

    let g_hat = max_of(batch_norms.iter().copied()).unwrap_or(0.0);
    let sigma_hat = if batch_norms.len() < 2 {
        0.0
    } else {
        let n = batch_norms.len() as f64;
        let mean = batch_norms.iter().sum::<f64>() / n;
        (batch_norms.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    let l1_hat = max_of(trained.iter().flat_map(|r| r.clients.iter().filter_map(|c| c.grad_lipschitz)));
    let l2_hat = max_of(
        trained
            .iter()
            .flat_map(|r| r.clients.iter().filter_map(|c| c.embedding_lipschitz)),
    );

    let e = settings.local_epochs as f64;
    let (lambda, eta) = (settings.lambda, settings.eta);
    let rounds = trained
        .iter()
        .map(|r| {
            let n = r.clients.len().max(1) as f64;
            let mean_sq_grad = r
                .clients
                .iter()
                .filter_map(|c| c.start_grad_norm)
                .map(|g| g * g)
                .sum::<f64>()
                / n;
            let lambda_bound = l2_hat
                .filter(|&l2| l2 > 0.0 && g_hat > 0.0)
                .map(|l2| mean_sq_grad / (l2 * e * g_hat));
            let deviation_bound = match (l1_hat, l2_hat) {
                (Some(l1), Some(l2)) => {
                    let per_client: Vec<f64> = r
                        .clients
                        .iter()
                        .filter_map(|c| {
                            let start = c.start_loss?;
                            let descent: f64 = c.batch_grad_norms.iter().map(|g| g * g).sum();
                            Some(
                                start - (eta - l1 * eta * eta / 2.0) * descent
                                    + l1 * e * eta * eta * sigma_hat * sigma_hat / 2.0
                                    + lambda * l2 * eta * e * g_hat,
                            )
                        })
                        .collect();
                    (!per_client.is_empty())
                        .then(|| per_client.iter().sum::<f64>() / per_client.len() as f64)
                }
                _ => None,
            };
            RoundDiag {
                round: r.round,
                lambda_bound,
                lambda_exceeds_bound: lambda_bound.is_some_and(|b| lambda > b),
                deviation_bound,
            }
        })
        .collect();

    Some(ConvergenceDiag {
        grad_norm_estimates,
        sigma_hat,
        g_hat,
        l1_hat,
        l2_hat,
        monotone_fraction,
        rounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::ClientRoundRecord;

    const SETTINGS: DiagSettings = DiagSettings {
        lambda: 1.0,
        eta: 0.01,
        local_epochs: 1,
    };

    fn history(losses: &[f64], norms: &[&[f64]]) -> Vec<RoundReport> {
        losses
            .iter()
            .enumerate()
            .map(|(t, &l)| {
                let mut c = ClientRoundRecord::evaluation_only(t + 1, ClientId(0), 0.5);
                c.loss_total = Some(l);
                c.start_loss = Some(l);
                c.start_grad_norm = Some(1.0);
                c.batch_grad_norms = norms.get(t).map(|n| n.to_vec()).unwrap_or_default();
                c.grad_lipschitz = Some(2.0);
                c.embedding_lipschitz = Some(0.5);
                RoundReport::new(t + 1, vec![c])
            })
            .collect()
    }

    #[test]
    fn constant_loss_never_decreases() {
        let d = convergence_diag(&history(&[1.0, 1.0, 1.0], &[]), SETTINGS).unwrap();
        assert_eq!(d.monotone_fraction, 0.0);
    }

    #[test]
    fn strictly_decreasing_loss() {
        let d = convergence_diag(&history(&[3.0, 2.0, 1.5, 0.1], &[]), SETTINGS).unwrap();
        assert_eq!(d.monotone_fraction, 1.0);
    }

    #[test]
    fn gradient_norm_statistics() {
        let d = convergence_diag(&history(&[2.0, 1.0], &[&[3.0], &[4.0]]), SETTINGS).unwrap();
        assert_eq!(d.g_hat, 4.0);
        assert!((d.sigma_hat - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(d.l1_hat, Some(2.0));
        assert_eq!(d.l2_hat, Some(0.5));
        // 1 / (0.5 · 1 · 4)
        assert_eq!(d.rounds[0].lambda_bound, Some(0.5));
        assert!(d.rounds[0].lambda_exceeds_bound);
        assert!(d.sigma_hat >= 0.0 && d.g_hat >= 0.0);
    }

    #[test]
    fn needs_two_training_rounds() {
        assert!(convergence_diag(&history(&[1.0], &[]), SETTINGS).is_none());
        let eval_only = vec![RoundReport::new(0, vec![ClientRoundRecord::evaluation_only(0, ClientId(0), 0.1)])];
        assert!(convergence_diag(&eval_only, SETTINGS).is_none());
    }
}
