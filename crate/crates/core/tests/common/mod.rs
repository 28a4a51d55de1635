//! Independent reference implementations used as test oracles.

#![allow(dead_code)]

use std::collections::BTreeMap;

use pfpl_core::config::ExperimentConfig;
use pfpl_core::numeric::{init_model, Activation, Matrix, Model};
use pfpl_core::prototypes::ClusterMember;
use pfpl_core::ClientId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// A tiny random model with at most 500 parameters: `p ≤ 4`, one hidden
/// layer of width ≤ 6, `d ≤ 5`, up to 4 classes.
pub fn tiny_model(rng: &mut ChaCha8Rng) -> Model {
    let p = rng.random_range(1..=4);
    let hidden = rng.random_range(1..=6);
    let d = rng.random_range(1..=5);
    let classes = rng.random_range(2..=4);
    let dims: Vec<usize> = if rng.random_bool(0.5) {
        vec![p, hidden, d]
    } else {
        vec![p, d]
    };
    let mut model = init_model(&dims, d, classes, rng.random()).unwrap();
    // Move biases off zero so ReLU kinks are not hit systematically.
    let mut params = model.flat_params();
    for v in &mut params {
        *v += rng.random_range(-0.3..0.3);
    }
    model.set_flat_params(&params).unwrap();
    assert!(model.param_count() <= 500);
    model
}

/// Row-by-row forward pass written with explicit loops.
pub fn naive_dense(x: &[f64], w: &Matrix, b: &[f64], act: Activation) -> Vec<f64> {
    (0..w.rows())
        .map(|o| {
            let mut s = b[o];
            for i in 0..w.cols() {
                s += w[(o, i)] * x[i];
            }
            match act {
                Activation::Relu => s.max(0.0),
                Activation::Identity => s,
            }
        })
        .collect()
}

pub fn naive_embed(model: &Model, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for layer in &model.phi {
        h = naive_dense(&h, &layer.weights, &layer.bias, layer.activation);
    }
    h
}

pub fn naive_logits(model: &Model, h: &[f64]) -> Vec<f64> {
    naive_dense(h, &model.head.weights, &model.head.bias, model.head.activation)
}

/// Mean cross-entropy computed directly from the definition.
pub fn naive_cross_entropy(logits: &[Vec<f64>], labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (z, &y) in logits.iter().zip(labels) {
        let sum: f64 = z.iter().map(|v| v.exp()).sum();
        total += -(z[y].exp() / sum).ln();
    }
    total / labels.len() as f64
}

/// `ℓ_S + λ·ℓ_R` on one batch through the naive forward pass.
pub fn naive_objective(
    model: &Model,
    inputs: &Matrix,
    labels: &[usize],
    targets: &BTreeMap<usize, Vec<f64>>,
    lambda: f64,
) -> f64 {
    let mut logits = Vec::new();
    let mut reg = 0.0;
    for (x, &y) in inputs.iter_rows().zip(labels) {
        let h = naive_embed(model, x);
        if let Some(t) = targets.get(&y) {
            reg += h.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        logits.push(naive_logits(model, &h));
    }
    naive_cross_entropy(&logits, labels) + lambda * reg / labels.len() as f64
}

/// Central finite differences of `f` over every parameter of `model`.
pub fn finite_difference(model: &Model, step: f64, f: impl Fn(&Model) -> f64) -> Vec<f64> {
    let base = model.flat_params();
    let mut probe = model.clone();
    (0..base.len())
        .map(|j| {
            let mut p = base.clone();
            p[j] = base[j] + step;
            probe.set_flat_params(&p).unwrap();
            let up = f(&probe);
            p[j] = base[j] - step;
            probe.set_flat_params(&p).unwrap();
            let down = f(&probe);
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Largest elementwise relative error, with a floor on the denominator so
/// that gradients that are zero analytically do not divide by round-off.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s
}

/// Peer weights written out from the two formulas.
pub fn oracle_weights(own: &[f64], peers: &[&[f64]], proportional: bool) -> Vec<f64> {
    let d: Vec<f64> = peers.iter().map(|p| sq_dist(own, p)).collect();
    if proportional {
        let total: f64 = d.iter().sum();
        if total == 0.0 {
            return vec![1.0 / d.len() as f64; d.len()];
        }
        return d.iter().map(|x| x / total).collect();
    }
    let mut sorted = d.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let tau = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    if tau == 0.0 {
        let zeros = d.iter().filter(|&&x| x == 0.0).count() as f64;
        return d.iter().map(|&x| if x == 0.0 { 1.0 / zeros } else { 0.0 }).collect();
    }
    let raw: Vec<f64> = d.iter().map(|x| (-x / tau).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|r| r / total).collect()
}

/// `α·C_i + (1 − α)·Σ_m w_m·C_m` by explicit loops.
pub fn oracle_personalized(i: usize, members: &[ClusterMember], alpha: f64, proportional: bool) -> Vec<f64> {
    let own = &members[i].centroid;
    let peers: Vec<&[f64]> = members
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, m)| m.centroid.as_slice())
        .collect();
    if peers.is_empty() {
        return own.clone();
    }
    let w = oracle_weights(own, &peers, proportional);
    let mut out = vec![0.0; own.len()];
    for c in 0..own.len() {
        let mut mix = 0.0;
        for (k, p) in peers.iter().enumerate() {
            mix += w[k] * p[c];
        }
        out[c] = alpha * own[c] + (1.0 - alpha) * mix;
    }
    out
}

pub fn oracle_global(members: &[ClusterMember]) -> Vec<f64> {
    let n: usize = members.iter().map(|m| m.count).sum();
    let mut out = vec![0.0; members[0].centroid.len()];
    for m in members {
        for (o, c) in out.iter_mut().zip(&m.centroid) {
            *o += m.count as f64 * c;
        }
    }
    out.iter().map(|v| v / n as f64).collect()
}

pub fn oracle_unbiased(members: &[ClusterMember]) -> Vec<f64> {
    let mut out = vec![0.0; members[0].centroid.len()];
    for m in members {
        for (o, c) in out.iter_mut().zip(&m.centroid) {
            *o += c;
        }
    }
    out.iter().map(|v| v / members.len() as f64).collect()
}

pub fn random_members(rng: &mut ChaCha8Rng, size: usize, d: usize) -> Vec<ClusterMember> {
    let mut ids: Vec<u32> = (0..40).collect();
    rand::seq::SliceRandom::shuffle(ids.as_mut_slice(), rng);
    (0..size)
        .map(|j| ClusterMember {
            client: ClientId(ids[j]),
            centroid: (0..d).map(|_| rng.random_range(-3.0..3.0)).collect(),
            count: rng.random_range(1..50),
        })
        .collect()
}

/// The default desk-scale benchmark with overrides applied.
pub fn benchmark(overrides: &[(&str, &str)]) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    for (k, v) in overrides {
        cfg.set(k, v).unwrap();
    }
    cfg.validate().unwrap();
    cfg
}

/// A fast configuration for behavioural tests.
pub fn small(overrides: &[(&str, &str)]) -> ExperimentConfig {
    let mut all = vec![
        ("rounds", "3"),
        ("partition.clients", "4"),
        ("data.samples_per_class", "60"),
        ("partition.k", "20"),
        ("model.hidden", "16"),
        ("model.embedding_dim", "8"),
    ];
    all.extend_from_slice(overrides);
    benchmark(&all)
}
