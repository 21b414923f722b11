//! Compositions used by the command-line tool and the acceptance suite:
//! offline pruning of files without training history, scene evaluation,
//! label breakdowns and the threshold sweep.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bundle::ViewMasks;
use crate::config::{EvalConfig, PruneSection, SweepConfig};
use crate::error::{Error, Result};
use crate::evidence::EvidenceLedger;
use crate::image::Mask;
use crate::metrics::{
    background_consistency, depth_stability, psnr, silhouette_leakage, ssim, MetricsReport, ViewMetrics,
};
use crate::model::{Scene, SplatCloud, View};
use crate::pruning::{run_pruning_pass, PruneReport};
use crate::renderer::{render, visibility_hits};
use crate::synth::Label;
use crate::trainer::{TrainConfig, TrainTrace, Trainer};

/// Evidence for a cloud with no training history: one visibility count per
/// camera with a hit, zero gradient EMA, and an age that clears the
/// stabilization gate.
pub fn offline_ledger(
    cloud: &SplatCloud,
    views: &[View],
    background: [f64; 3],
    threshold: f64,
    min_age: u32,
) -> Result<EvidenceLedger> {
    let mut ledger = EvidenceLedger::new(cloud.len(), 0.99)?;
    for v in views {
        let out = render(cloud, &v.camera, background);
        for (i, hit) in visibility_hits(&out, threshold).into_iter().enumerate() {
            if hit {
                ledger.visibility[i] += 1;
            }
        }
    }
    ledger.age = vec![min_age.max(views.len() as u32); cloud.len()];
    Ok(ledger)
}

/// Prunes `cloud` in place. Without a ledger the evidence is synthesized by
/// [`offline_ledger`] and the report is flagged as offline.
pub fn prune_cloud(
    cloud: &mut SplatCloud,
    ledger: Option<EvidenceLedger>,
    views: &[View],
    background: [f64; 3],
    cfg: &PruneSection,
) -> Result<PruneReport> {
    let offline = ledger.is_none();
    let mut ledger = match ledger {
        Some(l) => {
            if l.len() != cloud.len() {
                return Err(Error::Shape(format!(
                    "evidence sidecar has {} entries for {} Gaussians",
                    l.len(),
                    cloud.len()
                )));
            }
            l
        }
        None => {
            if views.is_empty() {
                return Err(Error::InvalidArgument(
                    "offline pruning needs cameras to measure visibility".into(),
                ));
            }
            log::warn!("no evidence sidecar: offline mode, gradient EMA set to 0 for every Gaussian");
            offline_ledger(cloud, views, background, cfg.visibility_threshold, cfg.prune.min_age)?
        }
    };
    let mut report = run_pruning_pass(cloud, &mut ledger, &cfg.prune)?;
    report.offline_mode = offline;
    Ok(report)
}

/// Removed Gaussians per label; indices without a label count as `None`.
pub fn label_counts(labels: &[Label], indices: impl IntoIterator<Item = usize>) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for i in indices {
        let key = labels
            .get(i)
            .map_or("unlabeled".to_string(), |l| format!("{l:?}").to_lowercase());
        *out.entry(key).or_insert(0) += 1;
    }
    out
}

/// Fraction of labeled floaters among `removed`.
pub fn floater_recall(labels: &[Label], removed: impl IntoIterator<Item = usize>) -> Option<f64> {
    let total = labels.iter().filter(|&&l| l == Label::Floater).count();
    if total == 0 {
        return None;
    }
    let hit = removed
        .into_iter()
        .filter(|&i| labels.get(i) == Some(&Label::Floater))
        .count();
    Some(hit as f64 / total as f64)
}

/// Metrics for every view of `scene` rendered from `cloud`. Photometric
/// scores need a target, leakage needs a foreground mask, and background
/// consistency compares against the target inside the static mask (the
/// foreground mask when no static mask is given).
pub fn evaluate(cloud: &SplatCloud, scene: &Scene, masks: &[ViewMasks], cfg: &EvalConfig) -> Result<MetricsReport> {
    let extent = cloud.extent();
    let jitter = cfg.jitter.resolve(extent);
    let mut rows = Vec::with_capacity(scene.views.len());
    for (vi, v) in scene.views.iter().enumerate() {
        let m = masks.get(vi).cloned().unwrap_or_default();
        let out = render(cloud, &v.camera, scene.background);
        let target = v.target.as_ref();
        let leakage = m
            .foreground
            .as_ref()
            .map(|fg| silhouette_leakage(&out, fg, cfg.leakage_threshold))
            .transpose()?;
        let stability = match depth_stability(cloud, &v.camera, scene.background, &jitter, vi as u64, cfg.depth_tolerance) {
            Ok(s) => Some(s),
            Err(Error::InvalidArgument(msg)) => {
                log::warn!("view {}: {msg}", v.name);
                None
            }
            Err(e) => return Err(e),
        };
        let static_mask: Option<&Mask> = m.static_region.as_ref().or(m.foreground.as_ref());
        let consistency = match (static_mask, target) {
            (Some(sm), Some(t)) if sm.count() > 0 => Some(background_consistency(
                cloud,
                &v.camera,
                scene.background,
                sm,
                t,
                &jitter,
                vi as u64,
            )?),
            _ => None,
        };
        rows.push(ViewMetrics {
            view: v.name.clone(),
            psnr: target.map(|t| psnr(&out.color, t)).transpose()?,
            ssim: target.map(|t| ssim(&out.color, t)).transpose()?,
            silhouette_leakage: leakage,
            depth_stability: stability,
            background_consistency: consistency,
        });
    }
    Ok(MetricsReport::new(rows, jitter, cfg.leakage_threshold))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau_vis: f64,
    pub tau_grad: f64,
    pub floater_recall: Option<f64>,
    pub removed: BTreeMap<String, usize>,
    pub final_count: usize,
    pub heldout_psnr: Option<f64>,
}

/// Trains `scene` once per `(tau_vis, tau_grad)` pair and scores removals
/// against `labels`.
pub fn threshold_sweep(scene: &Scene, labels: &[Label], base: &TrainConfig, sweep: &SweepConfig) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &tv in &sweep.tau_vis {
        for &tg in &sweep.tau_grad {
            let mut cfg = base.clone();
            cfg.prune.tau_vis = tv;
            cfg.prune.tau_grad = tg;
            if let Some(s) = sweep.steps {
                cfg.steps = s;
            }
            let mut t = Trainer::new(scene, cfg)?;
            t.run()?;
            let removed = removed_initial(t.trace(), labels.len());
            log::info!("sweep tau_vis={tv} tau_grad={tg}: removed {}", removed.len());
            rows.push(SweepRow {
                tau_vis: tv,
                tau_grad: tg,
                floater_recall: floater_recall(labels, removed.iter().copied()),
                removed: label_counts(labels, removed),
                final_count: t.cloud().len(),
                heldout_psnr: t.heldout_psnr(),
            });
        }
    }
    Ok(rows)
}

/// Indices into the initial cloud of Gaussians removed during training;
/// spawned Gaussians are reported as `n_initial` and above.
pub fn removed_initial(trace: &TrainTrace, n_initial: usize) -> Vec<usize> {
    trace
        .removed_ids()
        .into_iter()
        .map(|id| (id as usize).min(n_initial))
        .collect()
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut s = format!(
        "{:>7} {:>8} {:>8} {:>8} {:>6} {:>6} {:>8} {:>8}\n",
        "tau_vis", "tau_grad", "recall", "floater", "thin", "glint", "surface", "psnr"
    );
    for r in rows {
        let get = |k: &str| r.removed.get(k).copied().unwrap_or(0);
        s.push_str(&format!(
            "{:>7} {:>8} {:>8} {:>8} {:>6} {:>6} {:>8} {:>8}\n",
            r.tau_vis,
            format!("{:.0e}", r.tau_grad),
            r.floater_recall.map_or("-".into(), |v| format!("{v:.3}")),
            get("floater"),
            get("thin"),
            get("glint"),
            get("surface"),
            r.heldout_psnr.map_or("-".into(), |v| format!("{v:.2}")),
        ));
    }
    s
}
