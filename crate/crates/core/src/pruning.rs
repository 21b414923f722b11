//! Detail-aware floater pruning.
//!
//! A pass runs in three stages: pool Gaussians whose evidence is weak on all
//! four cues, drop candidates protected by a detail guard, then rank the
//! remainder by spatial isolation and weak evidence and remove the top of the
//! ranking under per-cell and per-scene caps.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidence::{keep_mask, retain_by_mask, EvidenceLedger};
use crate::knn::{knn_indices, knn_mean_distance};
use crate::model::{bbox_diagonal, covariance_scales, SplatCloud};

/// Number of heatmap bins per axis.
pub const HEATMAP_BINS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneConfig {
    pub tau_vis: f64,
    pub tau_alpha: f64,
    pub tau_omega: f64,
    pub tau_grad: f64,
    pub k: usize,
    /// Isolation threshold as a fraction of the scene extent.
    pub tau_iso: f64,
    pub cap_local: f64,
    pub cap_global: f64,
    /// Smallest per-cell allowance; a lone Gaussian in a sparse cell could
    /// otherwise never be removed.
    pub min_local_quota: usize,
    pub grid_res: usize,
    /// (isolation, opacity, importance)
    pub score_weights: [f64; 3],
    pub guard_sh_percentile: f64,
    pub guard_variance_percentile: f64,
    pub guard_thin_percentile: f64,
    pub guard_aniso_percentile: f64,
    pub guards_enabled: bool,
    /// Only Gaussians at least this old are eligible.
    pub min_age: u32,
    /// When set, the visibility clause becomes `v / age <= ratio`.
    pub visibility_ratio: Option<f64>,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            tau_vis: 2.0,
            tau_alpha: 0.04,
            tau_omega: 0.35,
            tau_grad: 5e-4,
            k: 16,
            tau_iso: 0.02,
            cap_local: 0.01,
            cap_global: 0.002,
            min_local_quota: 1,
            grid_res: 32,
            score_weights: [0.5, 0.25, 0.25],
            guard_sh_percentile: 70.0,
            guard_variance_percentile: 70.0,
            guard_thin_percentile: 10.0,
            guard_aniso_percentile: 90.0,
            guards_enabled: true,
            min_age: 500,
            visibility_ratio: None,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tau_vis", self.tau_vis),
            ("tau_alpha", self.tau_alpha),
            ("tau_omega", self.tau_omega),
            ("tau_grad", self.tau_grad),
            ("tau_iso", self.tau_iso),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("cap_local", self.cap_local), ("cap_global", self.cap_global)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.grid_res == 0 {
            return Err(Error::Config("grid_res must be at least 1".into()));
        }
        let w = self.score_weights;
        if w.iter().any(|&x| !(x >= 0.0)) || ((w[0] + w[1] + w[2]) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "score_weights must be nonnegative and sum to 1, got {w:?}"
            )));
        }
        for p in [
            self.guard_sh_percentile,
            self.guard_variance_percentile,
            self.guard_thin_percentile,
            self.guard_aniso_percentile,
        ] {
            if !(0.0..=100.0).contains(&p) {
                return Err(Error::Config(format!("guard percentile {p} outside [0, 100]")));
            }
        }
        if let Some(r) = self.visibility_ratio {
            if !(r > 0.0) {
                return Err(Error::Config(format!("visibility_ratio must be positive, got {r}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuardReason {
    Sh,
    Variance,
    Thin,
    Aniso,
    /// Too few non-candidates to set thresholds; everything is kept.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuardThresholds {
    pub sh_energy: f64,
    pub color_variance: f64,
    pub thin: f64,
    pub aniso: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuardEntry {
    pub index: usize,
    pub reason: GuardReason,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Guards {
    pub guarded: Vec<GuardEntry>,
    pub thresholds: Option<GuardThresholds>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovedEntry {
    pub index: usize,
    pub score: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCount {
    pub cell: [usize; 3],
    pub population: usize,
    pub cap: usize,
    pub removed: usize,
}

/// Pool members binned by isolation ratio `d / (tau_iso * extent)` and by
/// importance `sigma(omega)`; `pool[i][j]` counts isolation bin `i`,
/// importance bin `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub isolation_edges: Vec<f64>,
    pub importance_edges: Vec<f64>,
    pub pool: [[u32; HEATMAP_BINS]; HEATMAP_BINS],
    pub removed: [[u32; HEATMAP_BINS]; HEATMAP_BINS],
}

impl Heatmap {
    pub fn new(tau_omega: f64) -> Self {
        Heatmap {
            isolation_edges: vec![0.5, 1.0, 1.5, 2.0],
            importance_edges: (1..HEATMAP_BINS)
                .map(|i| tau_omega * i as f64 / HEATMAP_BINS as f64)
                .collect(),
            pool: [[0; HEATMAP_BINS]; HEATMAP_BINS],
            removed: [[0; HEATMAP_BINS]; HEATMAP_BINS],
        }
    }

    fn bin(edges: &[f64], v: f64) -> usize {
        edges.iter().take_while(|&&e| v >= e).count()
    }

    pub fn record(&mut self, isolation_ratio: f64, importance: f64, removed: bool) {
        let i = Self::bin(&self.isolation_edges, isolation_ratio);
        let j = Self::bin(&self.importance_edges, importance);
        self.pool[i][j] += 1;
        if removed {
            self.removed[i][j] += 1;
        }
    }

    /// Removal rate per bin; `None` where the bin is empty.
    pub fn rates(&self) -> [[Option<f64>; HEATMAP_BINS]; HEATMAP_BINS] {
        let mut out = [[None; HEATMAP_BINS]; HEATMAP_BINS];
        for i in 0..HEATMAP_BINS {
            for j in 0..HEATMAP_BINS {
                if self.pool[i][j] > 0 {
                    out[i][j] = Some(self.removed[i][j] as f64 / self.pool[i][j] as f64);
                }
            }
        }
        out
    }

    pub fn merge(&mut self, other: &Heatmap) {
        for i in 0..HEATMAP_BINS {
            for j in 0..HEATMAP_BINS {
                self.pool[i][j] += other.pool[i][j];
                self.removed[i][j] += other.removed[i][j];
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub gaussians_before: usize,
    pub gaussians_after: usize,
    pub extent: f64,
    pub isolation_threshold: f64,
    /// Set when the evidence was synthesized rather than accumulated in training.
    pub offline_mode: bool,
    pub base_candidates: Vec<usize>,
    pub guarded: Vec<GuardEntry>,
    pub guard_thresholds: Option<GuardThresholds>,
    pub prune_pool: Vec<usize>,
    /// Pool members passing the isolation filter.
    pub isolated: Vec<usize>,
    /// In acceptance order; indices refer to the cloud before removal.
    pub removed: Vec<RemovedEntry>,
    pub global_cap: usize,
    /// Cells with at least one isolated pool member.
    pub per_cell_counts: Vec<CellCount>,
    pub heatmap: Heatmap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneSummary {
    pub gaussians_before: usize,
    pub gaussians_after: usize,
    pub base_candidates: usize,
    pub guarded: usize,
    pub prune_pool: usize,
    pub isolated: usize,
    pub removed: usize,
    pub guard_reasons: BTreeMap<GuardReason, usize>,
    pub global_cap: usize,
    pub global_cap_utilization: f64,
    pub cells_at_cap: usize,
    pub offline_mode: bool,
}

impl PruneReport {
    fn empty(n: usize, extent: f64, cfg: &PruneConfig) -> Self {
        PruneReport {
            gaussians_before: n,
            gaussians_after: n,
            extent,
            isolation_threshold: cfg.tau_iso * extent,
            offline_mode: false,
            base_candidates: Vec::new(),
            guarded: Vec::new(),
            guard_thresholds: None,
            prune_pool: Vec::new(),
            isolated: Vec::new(),
            removed: Vec::new(),
            global_cap: global_cap(n, cfg.cap_global),
            per_cell_counts: Vec::new(),
            heatmap: Heatmap::new(cfg.tau_omega),
        }
    }

    pub fn removed_indices(&self) -> Vec<usize> {
        self.removed.iter().map(|r| r.index).collect()
    }

    pub fn summary(&self) -> PruneSummary {
        let mut reasons = BTreeMap::new();
        for g in &self.guarded {
            *reasons.entry(g.reason).or_insert(0) += 1;
        }
        PruneSummary {
            gaussians_before: self.gaussians_before,
            gaussians_after: self.gaussians_after,
            base_candidates: self.base_candidates.len(),
            guarded: self.guarded.len(),
            prune_pool: self.prune_pool.len(),
            isolated: self.isolated.len(),
            removed: self.removed.len(),
            guard_reasons: reasons,
            global_cap: self.global_cap,
            global_cap_utilization: if self.global_cap > 0 {
                self.removed.len() as f64 / self.global_cap as f64
            } else {
                0.0
            },
            cells_at_cap: self.per_cell_counts.iter().filter(|c| c.removed >= c.cap).count(),
            offline_mode: self.offline_mode,
        }
    }
}

/// `floor(fraction * n)`, robust to products like `0.01 * 300` landing a hair
/// below the integer.
fn floor_fraction(fraction: f64, n: usize) -> usize {
    (fraction * n as f64 + 1e-9).floor().max(0.0) as usize
}

pub fn global_cap(n: usize, cap_global: f64) -> usize {
    floor_fraction(cap_global, n)
}

pub fn local_cap(population: usize, cfg: &PruneConfig) -> usize {
    floor_fraction(cfg.cap_local, population)
        .max(cfg.min_local_quota)
        .min(population)
}

fn check_aligned(cloud: &SplatCloud, ledger: &EvidenceLedger) -> Result<()> {
    if cloud.len() != ledger.len() {
        return Err(Error::Shape(format!(
            "evidence ledger has {} entries for {} Gaussians",
            ledger.len(),
            cloud.len()
        )));
    }
    Ok(())
}

/// Stabilized Gaussians that fall at or below all four evidence thresholds.
pub fn pool_candidates(cloud: &SplatCloud, ledger: &EvidenceLedger, cfg: &PruneConfig) -> Result<Vec<usize>> {
    check_aligned(cloud, ledger)?;
    let gate = ledger.stabilization_gate(cfg.min_age);
    Ok((0..cloud.len())
        .filter(|&i| {
            let g = &cloud.gaussians[i];
            let v = ledger.visibility[i] as f64;
            let vis_ok = match cfg.visibility_ratio {
                Some(r) => v <= r * (ledger.age[i].max(1) as f64),
                None => v <= cfg.tau_vis,
            };
            gate[i]
                && vis_ok
                && g.opacity() <= cfg.tau_alpha
                && g.importance() <= cfg.tau_omega
                && ledger.grad_ema[i] <= cfg.tau_grad
        })
        .collect())
}

/// Linear-interpolation percentile of unsorted data, `p` in [0, 100].
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = (p / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Mean per-channel variance of the base colors of each query's k nearest
/// neighbors.
pub fn neighbor_color_variance(cloud: &SplatCloud, queries: &[usize], k: usize) -> Result<Vec<f64>> {
    let centers = cloud.centers();
    let colors: Vec<[f64; 3]> = cloud.gaussians.iter().map(|g| g.base_color()).collect();
    let nbrs = knn_indices(&centers, queries, k)?;
    Ok(nbrs
        .iter()
        .map(|nb| {
            let n = nb.len() as f64;
            let mut total = 0.0;
            for c in 0..3 {
                let mean = nb.iter().map(|&j| colors[j][c]).sum::<f64>() / n;
                total += nb.iter().map(|&j| (colors[j][c] - mean).powi(2)).sum::<f64>() / n;
            }
            total / 3.0
        })
        .collect())
}

/// Candidates protected by a detail guard, with thresholds taken from the
/// non-candidate population.
pub fn detail_guards(cloud: &SplatCloud, candidates: &[usize], cfg: &PruneConfig) -> Result<Guards> {
    if candidates.is_empty() {
        return Ok(Guards::default());
    }
    let n = cloud.len();
    let keep = keep_mask(n, candidates)?;
    let others: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
    if others.len() < cfg.k || n <= cfg.k {
        log::warn!(
            "only {} non-candidate Gaussians (k = {}); guarding every candidate",
            others.len(),
            cfg.k
        );
        return Ok(Guards {
            guarded: candidates
                .iter()
                .map(|&index| GuardEntry {
                    index,
                    reason: GuardReason::Degenerate,
                })
                .collect(),
            thresholds: None,
        });
    }

    let energy = |i: usize| cloud.gaussians[i].sh_rest_energy();
    let thin = |i: usize| covariance_scales(&cloud.gaussians[i])[0];
    let aniso = |i: usize| {
        let s = covariance_scales(&cloud.gaussians[i]);
        s[2] / s[0]
    };
    let other_var = neighbor_color_variance(cloud, &others, cfg.k)?;
    let th = GuardThresholds {
        sh_energy: percentile(&others.iter().map(|&i| energy(i)).collect::<Vec<_>>(), cfg.guard_sh_percentile),
        color_variance: percentile(&other_var, cfg.guard_variance_percentile),
        thin: percentile(&others.iter().map(|&i| thin(i)).collect::<Vec<_>>(), cfg.guard_thin_percentile),
        aniso: percentile(&others.iter().map(|&i| aniso(i)).collect::<Vec<_>>(), cfg.guard_aniso_percentile),
    };

    let cand_var = neighbor_color_variance(cloud, candidates, cfg.k)?;
    let mut guarded = Vec::new();
    for (ci, &i) in candidates.iter().enumerate() {
        // Energy and variance guards need a strictly positive value, or a
        // population of all-zero statistics would guard everything.
        let e = energy(i);
        let v = cand_var[ci];
        let reason = if e > 0.0 && e >= th.sh_energy {
            Some(GuardReason::Sh)
        } else if v > 0.0 && v >= th.color_variance {
            Some(GuardReason::Variance)
        } else if thin(i) <= th.thin {
            Some(GuardReason::Thin)
        } else if aniso(i) >= th.aniso {
            Some(GuardReason::Aniso)
        } else {
            None
        };
        if let Some(reason) = reason {
            guarded.push(GuardEntry { index: i, reason });
        }
    }
    Ok(Guards {
        guarded,
        thresholds: Some(th),
    })
}

/// Mean distance of each query to its k nearest Gaussians (all Gaussians
/// form the reference set).
pub fn knn_isolation(centers: &[Vector3<f64>], queries: &[usize], k: usize) -> Result<Vec<f64>> {
    knn_mean_distance(centers, queries, k)
}

/// Isolation normalized to [0, 1]: saturates at twice the isolation threshold.
pub fn normalized_isolation(d: f64, extent: f64, cfg: &PruneConfig) -> f64 {
    let denom = cfg.tau_iso * extent;
    if denom > 0.0 {
        (d / denom).min(2.0) / 2.0
    } else {
        0.0
    }
}

/// Higher means more floater-like.
pub fn composite_score(d: f64, alpha: f64, omega_sig: f64, extent: f64, cfg: &PruneConfig) -> f64 {
    let [w_iso, w_a, w_o] = cfg.score_weights;
    w_iso * normalized_isolation(d, extent, cfg)
        + w_a * (1.0 - alpha / cfg.tau_alpha)
        + w_o * (1.0 - omega_sig / cfg.tau_omega)
}

/// Grid cell of every center over the bounding box, `grid_res` cells per axis.
pub fn cell_indices(centers: &[Vector3<f64>], grid_res: usize) -> Vec<[usize; 3]> {
    if centers.is_empty() {
        return Vec::new();
    }
    let mut lo = centers[0];
    let mut hi = centers[0];
    for p in centers {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let span = hi - lo;
    centers
        .iter()
        .map(|p| {
            [0, 1, 2].map(|a| {
                if span[a] > 0.0 {
                    (((p[a] - lo[a]) / span[a] * grid_res as f64).floor() as usize).min(grid_res - 1)
                } else {
                    0
                }
            })
        })
        .collect()
}

/// Isolation filter, ranking and capped removal. `pool`, `distances` and
/// `scores` are aligned. Removes accepted Gaussians from the cloud and ledger.
pub fn apply_caps_and_remove(
    cloud: &mut SplatCloud,
    ledger: &mut EvidenceLedger,
    pool: &[usize],
    distances: &[f64],
    scores: &[f64],
    cfg: &PruneConfig,
) -> Result<PruneReport> {
    check_aligned(cloud, ledger)?;
    if pool.len() != distances.len() || pool.len() != scores.len() {
        return Err(Error::Shape(format!(
            "pool of {} with {} distances and {} scores",
            pool.len(),
            distances.len(),
            scores.len()
        )));
    }
    let n = cloud.len();
    let centers = cloud.centers();
    let extent = bbox_diagonal(&centers);
    let mut report = PruneReport::empty(n, extent, cfg);
    report.prune_pool = pool.to_vec();
    let threshold = report.isolation_threshold;

    let mut ranked: Vec<usize> = (0..pool.len()).filter(|&p| distances[p] >= threshold).collect();
    report.isolated = ranked.iter().map(|&p| pool[p]).collect();
    ranked.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(pool[a].cmp(&pool[b])));

    let cells = cell_indices(&centers, cfg.grid_res);
    let mut population: BTreeMap<[usize; 3], usize> = BTreeMap::new();
    for c in &cells {
        *population.entry(*c).or_insert(0) += 1;
    }
    let mut used: BTreeMap<[usize; 3], usize> = BTreeMap::new();
    for &p in &ranked {
        used.entry(cells[pool[p]]).or_insert(0);
    }
    for &p in &ranked {
        if report.removed.len() >= report.global_cap {
            break;
        }
        let cell = cells[pool[p]];
        let count = used.get_mut(&cell).unwrap();
        if *count < local_cap(population[&cell], cfg) {
            *count += 1;
            report.removed.push(RemovedEntry {
                index: pool[p],
                score: scores[p],
                distance: distances[p],
            });
        }
    }
    report.per_cell_counts = used
        .iter()
        .map(|(&cell, &removed)| CellCount {
            cell,
            population: population[&cell],
            cap: local_cap(population[&cell], cfg),
            removed,
        })
        .collect();

    let removed = report.removed_indices();
    let keep = keep_mask(n, &removed)?;
    for (p, &i) in pool.iter().enumerate() {
        let ratio = if threshold > 0.0 { distances[p] / threshold } else { 0.0 };
        report
            .heatmap
            .record(ratio, cloud.gaussians[i].importance(), !keep[i]);
    }
    retain_by_mask(&mut cloud.gaussians, &keep);
    ledger.remove(&removed)?;
    report.gaussians_after = cloud.len();
    Ok(report)
}

/// One full pruning pass over the cloud.
pub fn run_pruning_pass(cloud: &mut SplatCloud, ledger: &mut EvidenceLedger, cfg: &PruneConfig) -> Result<PruneReport> {
    cfg.validate()?;
    let base = pool_candidates(cloud, ledger, cfg)?;
    let guards = if cfg.guards_enabled {
        detail_guards(cloud, &base, cfg)?
    } else {
        Guards::default()
    };
    let guarded_mask = keep_mask(cloud.len(), &guards.guarded.iter().map(|g| g.index).collect::<Vec<_>>())?;
    let pool: Vec<usize> = base.iter().copied().filter(|&i| guarded_mask[i]).collect();

    let (distances, scores) = if pool.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        let centers = cloud.centers();
        let extent = bbox_diagonal(&centers);
        let d = knn_isolation(&centers, &pool, cfg.k)?;
        let s = pool
            .iter()
            .zip(&d)
            .map(|(&i, &di)| {
                let g = &cloud.gaussians[i];
                composite_score(di, g.opacity(), g.importance(), extent, cfg)
            })
            .collect();
        (d, s)
    };
    let mut report = apply_caps_and_remove(cloud, ledger, &pool, &distances, &scores, cfg)?;
    report.base_candidates = base;
    report.guarded = guards.guarded;
    report.guard_thresholds = guards.thresholds;
    Ok(report)
}
