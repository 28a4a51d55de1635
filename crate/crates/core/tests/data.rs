mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::*;
use pfpl_core::config::{DataSource, ExperimentConfig};
use pfpl_core::data::{
    default_domains, load_csv, load_idx, make_synthetic_domain, partition, ClientDataset,
    DomainAssignment, LabeledDataset, PartitionPlan,
};
use pfpl_core::federation::{build_federation, run_experiment};
use pfpl_core::Error;

fn default_pools(cfg: &ExperimentConfig) -> Vec<LabeledDataset> {
    default_domains(cfg.num_domains, cfg.input_dim, cfg.shift, cfg.seed)
        .iter()
        .map(|s| make_synthetic_domain(s, cfg.num_classes, cfg.seed, cfg.samples_per_class).unwrap())
        .collect()
}

fn default_partition(seed: u64) -> (PartitionPlan, Vec<ClientDataset>) {
    let cfg = benchmark(&[]);
    let pools = default_pools(&cfg);
    let plan = PartitionPlan::sample(8, &[3], (50, 50), 6, 2, DomainAssignment::RoundRobin, 0.2, seed).unwrap();
    let clients = partition(&pools, &plan).unwrap();
    (plan, clients)
}

#[test]
fn eight_client_scan() {
    let (plan, clients) = default_partition(7);
    assert_eq!(clients.len(), 8);
    for (c, cp) in clients.iter().zip(&plan.clients) {
        let mut train: BTreeMap<usize, usize> = BTreeMap::new();
        let mut test: BTreeMap<usize, usize> = BTreeMap::new();
        let mut domains = BTreeSet::new();
        for s in &c.train {
            *train.entry(s.label).or_default() += 1;
            domains.insert(s.domain);
        }
        for s in &c.test {
            *test.entry(s.label).or_default() += 1;
            domains.insert(s.domain);
        }
        assert_eq!(train.keys().copied().collect::<Vec<_>>(), cp.classes);
        assert!(train.values().all(|&n| n == 40));
        assert!(test.values().all(|&n| n == 10));
        assert_eq!(test.len(), 3);
        assert_eq!(c.per_class_counts, train);
        assert_eq!(domains, cp.domains.iter().copied().collect());
        assert_eq!(c.classes_present().len(), 3);
    }
}

#[test]
fn train_sets_are_disjoint_and_deterministic() {
    let (_, a) = default_partition(3);
    let (_, b) = default_partition(3);
    let mut seen = BTreeSet::new();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.train, y.train);
        assert_eq!(x.test, y.test);
        for s in x.train.iter().chain(&x.test) {
            assert!(seen.insert((s.domain, s.index)), "sample handed out twice");
        }
    }
}

#[test]
fn feature_skew_is_realized() {
    let (_, clients) = default_partition(5);
    let mut checked = 0;
    for a in &clients {
        for b in &clients {
            let (da, db) = (a.domains(), b.domains());
            if da == db || a.client_id >= b.client_id {
                continue;
            }
            for &c in a.classes_present().intersection(&b.classes_present()) {
                let stats = |d: &ClientDataset| {
                    let xs: Vec<&Vec<f64>> = d.train.iter().filter(|s| s.label == c).map(|s| &s.features).collect();
                    let n = xs.len() as f64;
                    let p = xs[0].len();
                    let mean: Vec<f64> = (0..p).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / n).collect();
                    let var: f64 = xs.iter().map(|x| sq_dist(x, &mean)).sum::<f64>() / (n - 1.0);
                    (mean, var, n)
                };
                let (ma, va, na) = stats(a);
                let (mb, vb, nb) = stats(b);
                let diff = sq_dist(&ma, &mb).sqrt();
                let se = (va / na + vb / nb).sqrt();
                assert!(diff > 5.0 * se, "class {c}: |Δmean| {diff} vs SE {se}");
                checked += 1;
            }
        }
    }
    assert!(checked > 0);
}

#[test]
fn varying_n_and_k() {
    let cfg = benchmark(&[]);
    let pools = default_pools(&cfg);
    let plan = PartitionPlan::sample(6, &[3, 4, 5], (20, 40), 6, 2, DomainAssignment::Random, 0.25, 1).unwrap();
    let clients = partition(&pools, &plan).unwrap();
    for (c, cp) in clients.iter().zip(&plan.clients) {
        assert!((3..=5).contains(&cp.classes.len()));
        assert!((20..=40).contains(&cp.k_shot));
        assert_eq!(c.classes_present().into_iter().collect::<Vec<_>>(), cp.classes);
        assert_eq!(c.train.len() + c.test.len(), cp.k_shot * cp.classes.len());
    }
}

#[test]
fn shortfall_is_a_partition_error() {
    let cfg = benchmark(&[("data.samples_per_class", "30")]);
    let pools = default_pools(&cfg);
    let plan = PartitionPlan::sample(8, &[6], (50, 50), 6, 2, DomainAssignment::RoundRobin, 0.2, 0).unwrap();
    assert!(matches!(partition(&pools, &plan), Err(Error::Partition { .. })));
}

fn idx_bytes(images: &[Vec<u8>], rows: u32, cols: u32, labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut img = 0x0803u32.to_be_bytes().to_vec();
    img.extend((images.len() as u32).to_be_bytes());
    img.extend(rows.to_be_bytes());
    img.extend(cols.to_be_bytes());
    for im in images {
        img.extend(im);
    }
    let mut lab = 0x0801u32.to_be_bytes().to_vec();
    lab.extend((labels.len() as u32).to_be_bytes());
    lab.extend(labels);
    (img, lab)
}

#[test]
fn idx_backed_experiment_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(20);
    let mut pairs = Vec::new();
    for d in 0..2 {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for i in 0..120u32 {
            let label = (i % 3) as u8;
            let im: Vec<u8> = (0..4)
                .map(|j| {
                    let base = if j as u8 == label { 200 } else { 30 };
                    let shift = if d == 1 { 40 } else { 0 };
                    (base + shift + rand::Rng::random_range(&mut r, 0..15u32)).min(255) as u8
                })
                .collect();
            images.push(im);
            labels.push(label);
        }
        let (img, lab) = idx_bytes(&images, 2, 2, &labels);
        let ip = dir.path().join(format!("d{d}-images.idx"));
        let lp = dir.path().join(format!("d{d}-labels.idx"));
        std::fs::write(&ip, img).unwrap();
        std::fs::write(&lp, lab).unwrap();
        let loaded = load_idx(&ip, &lp).unwrap();
        assert_eq!(loaded.len(), 120);
        assert_eq!(loaded.input_dim, 4);
        pairs.push((ip, lp));
    }
    let mut cfg = small(&[("partition.n", "2"), ("partition.k", "10")]);
    cfg.source = DataSource::Idx(pairs);
    let state = build_federation(&cfg).unwrap();
    assert_eq!(state.clients[0].model.input_dim(), 4);
    assert_eq!(state.clients[0].model.num_classes(), 3);
    let result = run_experiment(&cfg).unwrap();
    assert_eq!(result.rounds.len(), 4);
}

#[test]
fn csv_backed_experiment_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pool.csv");
    let mut text = String::from("f0,f1,f2,label,domain\n");
    let mut r = rng(21);
    for i in 0..240 {
        let label = i % 3;
        let domain = (i / 3) % 2;
        let f: Vec<f64> = (0..3)
            .map(|j| if j == label { 1.0 } else { 0.0 } + 0.1 * rand::Rng::random_range(&mut r, -1.0..1.0) + domain as f64)
            .collect();
        text += &format!("{},{},{},{label},{domain}\n", f[0], f[1], f[2]);
    }
    std::fs::write(&path, text).unwrap();
    let pool = load_csv(&path).unwrap();
    assert_eq!(pool.len(), 240);
    let mut cfg = small(&[("partition.n", "2"), ("partition.k", "10")]);
    cfg.source = DataSource::Csv(path);
    let result = run_experiment(&cfg).unwrap();
    assert_eq!(result.rounds.len(), 4);
}
