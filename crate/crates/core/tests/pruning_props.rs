mod common;

use std::collections::BTreeSet;

use common::rng;
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::Rng;
use splatclean::evidence::EvidenceLedger;
use splatclean::knn::{knn_brute, knn_mean_distance};
use splatclean::model::{logit, Gaussian, SplatCloud};
use splatclean::pruning::{apply_caps_and_remove, run_pruning_pass, GuardReason, PruneConfig};

/// Flat, textured floor of `side * side` Gaussians on [-1, 1]^2.
fn floor(side: usize) -> SplatCloud {
    let mut cloud = SplatCloud::new(0);
    let step = 2.0 / side as f64;
    for i in 0..side {
        for j in 0..side {
            let p = Vector3::new(i as f64 * step - 1.0, 0.0, j as f64 * step - 1.0);
            let shade = 0.3 + 0.4 * (((i * 37 + j * 91) % 100) as f64 / 100.0);
            let mut g = Gaussian::isotropic(p, step, 0.9, [shade; 3], 0);
            g.log_scales.y = (0.2 * step).ln();
            cloud.gaussians.push(g);
        }
    }
    cloud
}

fn weak(p: Vector3<f64>, scale: f64) -> Gaussian {
    let mut g = Gaussian::isotropic(p, scale, 0.02, [0.5; 3], 0);
    g.importance_logit = logit(0.1);
    g
}

/// Ledger where every Gaussian is old, and the last `weak` entries were never
/// visible.
fn ledger(n: usize, weak: usize) -> EvidenceLedger {
    let mut l = EvidenceLedger::new(n, 0.99).unwrap();
    l.age = vec![1000; n];
    l.visibility = vec![50; n];
    for v in &mut l.visibility[n - weak..] {
        *v = 0;
    }
    l
}

/// Random mix of dense clusters and loose Gaussians with random evidence.
fn random_case(seed: u64) -> (SplatCloud, EvidenceLedger, PruneConfig) {
    let mut r = rng(seed);
    let mut cloud = SplatCloud::new(0);
    let n = r.random_range(40..600);
    for _ in 0..n {
        let spread = if r.random_bool(0.7) { 0.2 } else { 3.0 };
        let p = Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)) * spread;
        let mut g = Gaussian::isotropic(p, r.random_range(0.005..0.1), r.random_range(0.001..0.9), [r.random_range(0.0..1.0); 3], 0);
        g.log_scales.x += r.random_range(-2.0..0.5);
        g.importance_logit = r.random_range(-4.0..2.0);
        cloud.gaussians.push(g);
    }
    let mut l = EvidenceLedger::new(n, 0.99).unwrap();
    for i in 0..n {
        l.age[i] = r.random_range(0..1500);
        l.visibility[i] = r.random_range(0..=l.age[i].min(4));
        l.grad_ema[i] = r.random_range(0.0..1e-3);
    }
    let cfg = PruneConfig {
        cap_local: r.random_range(0.01..1.0),
        cap_global: r.random_range(0.002..0.5),
        grid_res: r.random_range(1..16),
        k: r.random_range(1..20),
        ..Default::default()
    };
    (cloud, l, cfg)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn report_set_algebra_and_caps(seed in any::<u64>()) {
        let (mut cloud, mut l, cfg) = random_case(seed);
        let n = cloud.len();
        let rep = run_pruning_pass(&mut cloud, &mut l, &cfg).unwrap();
        let base: BTreeSet<usize> = rep.base_candidates.iter().copied().collect();
        let guarded: BTreeSet<usize> = rep.guarded.iter().map(|g| g.index).collect();
        let pool: BTreeSet<usize> = rep.prune_pool.iter().copied().collect();
        let removed: BTreeSet<usize> = rep.removed_indices().into_iter().collect();
        prop_assert!(guarded.is_subset(&base));
        prop_assert_eq!(&pool, &base.difference(&guarded).copied().collect());
        prop_assert!(removed.is_subset(&pool));
        prop_assert!(removed.is_disjoint(&guarded));
        prop_assert_eq!(removed.len(), rep.removed.len());
        prop_assert!(rep.removed.len() <= ((cfg.cap_global * n as f64) + 1e-9).floor() as usize);
        for c in &rep.per_cell_counts {
            let cap = ((cfg.cap_local * c.population as f64 + 1e-9).floor() as usize).max(cfg.min_local_quota);
            prop_assert!(c.removed <= cap);
        }
        for e in &rep.removed {
            prop_assert!(e.distance >= rep.isolation_threshold);
        }
        prop_assert_eq!(cloud.len(), n - removed.len());
        prop_assert_eq!(l.len(), cloud.len());
    }

    #[test]
    fn pass_is_deterministic(seed in any::<u64>()) {
        let (cloud, l, cfg) = random_case(seed);
        let (mut c1, mut l1) = (cloud.clone(), l.clone());
        let (mut c2, mut l2) = (cloud, l);
        let a = run_pruning_pass(&mut c1, &mut l1, &cfg).unwrap();
        let b = run_pruning_pass(&mut c2, &mut l2, &cfg).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(c1, c2);
    }

    #[test]
    fn knn_matches_brute_force(seed in any::<u64>(), n in 2usize..400, k in 1usize..20) {
        prop_assume!(n > k);
        let mut r = rng(seed);
        let pts: Vec<Vector3<f64>> = (0..n)
            .map(|_| Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
            .collect();
        let q: Vec<usize> = (0..n).collect();
        prop_assert_eq!(knn_mean_distance(&pts, &q, k).unwrap(), knn_brute(&pts, &q, k).unwrap());
    }
}

#[test]
fn knn_hand_examples() {
    let line: Vec<Vector3<f64>> = (0..3).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
    assert_eq!(knn_brute(&line, &[0, 1, 2], 1).unwrap(), vec![1.0, 1.0, 1.0]);
    assert_eq!(knn_brute(&line, &[0, 1, 2], 2).unwrap(), vec![1.5, 1.0, 1.5]);
    let dup = vec![Vector3::zeros(), Vector3::zeros(), Vector3::new(5.0, 0.0, 0.0)];
    assert_eq!(knn_brute(&dup, &[0], 1).unwrap(), vec![0.0]);
    assert!(knn_brute(&line, &[0], 3).is_err());
}

#[test]
fn dense_cluster_alone_loses_nothing() {
    let mut cloud = floor(60);
    for g in &mut cloud.gaussians {
        g.opacity_logit = logit(0.02);
        g.importance_logit = logit(0.1);
    }
    let n = cloud.len();
    let mut l = ledger(n, n);
    let rep = run_pruning_pass(&mut cloud, &mut l, &PruneConfig::default()).unwrap();
    assert!(rep.isolated.is_empty());
    assert!(rep.removed.is_empty());
    assert_eq!(cloud.len(), n);
}

#[test]
fn ten_planted_outliers_are_removed() {
    let mut cloud = floor(100);
    for k in 0..10 {
        let a = k as f64 / 10.0 * std::f64::consts::TAU;
        cloud.gaussians.push(weak(Vector3::new(0.7 * a.cos(), 0.8, 0.7 * a.sin()), 0.04));
    }
    let n = cloud.len();
    let mut l = ledger(n, 10);
    let rep = run_pruning_pass(&mut cloud, &mut l, &PruneConfig::default()).unwrap();
    assert_eq!(rep.removed_indices().into_iter().collect::<BTreeSet<_>>(), (n - 10..n).collect());
}

#[test]
fn planted_wire_is_kept_as_thin() {
    let mut cloud = floor(100);
    for k in 0..20 {
        let mut g = weak(Vector3::new(-0.5 + k as f64 * 0.05, 0.8, 0.0), 0.03);
        g.log_scales = Vector3::new(0.03f64.ln(), 0.0003f64.ln(), 0.0003f64.ln());
        cloud.gaussians.push(g);
    }
    let n = cloud.len();
    let mut l = ledger(n, 20);
    let rep = run_pruning_pass(&mut cloud, &mut l, &PruneConfig::default()).unwrap();
    assert!(rep.removed.is_empty());
    assert_eq!(rep.guarded.len(), 20);
    assert!(rep.guarded.iter().all(|g| g.reason == GuardReason::Thin));

    // The same wire with guards off is pruned.
    let mut cloud2 = floor(100);
    cloud2.gaussians.extend(cloud.gaussians[n - 20..].iter().cloned());
    let mut l2 = ledger(n, 20);
    let cfg = PruneConfig {
        guards_enabled: false,
        ..Default::default()
    };
    assert!(!run_pruning_pass(&mut cloud2, &mut l2, &cfg).unwrap().removed.is_empty());
}

#[test]
fn strict_floor_on_a_single_cell() {
    // 50 Gaussians in one cell: floor(0.01 * 50) = 0. With the minimum quota
    // set to 0 nothing goes; the default quota of 1 lets one through.
    let mut r = rng(5);
    let mut base = SplatCloud::new(0);
    for _ in 0..50 {
        let p = Vector3::new(r.random_range(0.0..1.0), r.random_range(0.0..1.0), r.random_range(0.0..1.0));
        base.gaussians.push(weak(p, 0.01));
    }
    let pool: Vec<usize> = (0..50).collect();
    let dist = vec![10.0; 50];
    let scores: Vec<f64> = (0..50).map(|i| i as f64 / 50.0).collect();
    for (quota, expect) in [(0usize, 0usize), (1, 1)] {
        let mut c = base.clone();
        let mut l = EvidenceLedger::new(50, 0.99).unwrap();
        let cfg = PruneConfig {
            grid_res: 1,
            cap_global: 1.0,
            min_local_quota: quota,
            ..Default::default()
        };
        let rep = apply_caps_and_remove(&mut c, &mut l, &pool, &dist, &scores, &cfg).unwrap();
        assert_eq!(rep.removed.len(), expect);
        if expect == 1 {
            assert_eq!(rep.removed[0].index, 49, "highest score goes first");
        }
    }
    let mut c = base.clone();
    let mut l = EvidenceLedger::new(50, 0.99).unwrap();
    let rep = apply_caps_and_remove(&mut c, &mut l, &[], &[], &[], &PruneConfig::default()).unwrap();
    assert!(rep.removed.is_empty());
    assert_eq!(c, base);
}
