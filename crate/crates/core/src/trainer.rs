//! Desk-scale optimization loop: photometric loss with an optional depth
//! term, adaptive-moment updates, simplified densification, and periodic
//! pruning passes fed by the evidence ledger.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::depth_reg::{align, default_uncertainty, depth_loss, robust_delta, CurriculumSchedule};
use crate::error::{Error, Result};
use crate::evidence::{keep_mask, retain_by_mask, EvidenceLedger};
use crate::image::Grid;
use crate::loss::photometric_loss;
use crate::metrics::{psnr, COVERAGE_THRESHOLD};
use crate::model::{bbox_diagonal, Gaussian, Scene, SplatCloud};
use crate::optim::Adam;
use crate::ply::save_ply;
use crate::pruning::{run_pruning_pass, PruneConfig, PruneSummary};
use crate::renderer::{render, render_backward, visibility_hits, GradBuffer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    /// Multiplied by the scene extent.
    pub center: f64,
    /// Final center rate (times extent) reached by exponential decay.
    pub center_final: f64,
    pub log_scales: f64,
    pub rotation: f64,
    pub opacity_logit: f64,
    pub sh_dc: f64,
    pub importance_logit: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            center: 1.6e-4,
            center_final: 1.6e-6,
            log_scales: 5e-3,
            rotation: 1e-3,
            opacity_logit: 0.05,
            sh_dc: 2.5e-3,
            importance_logit: 5e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensifyConfig {
    pub every: u64,
    pub start: u64,
    pub stop: u64,
    /// Gradient-EMA level at which a Gaussian is cloned or split.
    pub grad_threshold: f64,
    /// Gaussians with max scale above this fraction of the extent are split.
    pub split_scale_fraction: f64,
    /// At most this fraction of the current count is densified per event.
    pub max_fraction: f64,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        DensifyConfig {
            every: 100,
            start: 200,
            stop: 1500,
            grad_threshold: 2e-3,
            split_scale_fraction: 0.01,
            max_fraction: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    pub seed: u64,
    pub lambda_ssim: f64,
    pub cleanup_every: u64,
    pub cleanup_start: u64,
    pub lr: LearningRates,
    pub depth: CurriculumSchedule,
    pub densify: DensifyConfig,
    pub prune: PruneConfig,
    pub ema_beta: f64,
    pub visibility_threshold: f64,
    /// Held-out PSNR is evaluated every this many steps (and at the end).
    pub eval_every: u64,
    /// When set, every importance logit is reset to this value before training.
    pub importance_init_logit: Option<f64>,
    /// Only update Gaussians that reached at least one pixel of the step's view.
    pub sparse_updates: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 3000,
            seed: 0,
            lambda_ssim: 0.2,
            cleanup_every: 400,
            cleanup_start: 500,
            lr: LearningRates::default(),
            depth: CurriculumSchedule::default(),
            densify: DensifyConfig::default(),
            prune: PruneConfig::default(),
            ema_beta: 0.99,
            visibility_threshold: 0.01,
            eval_every: 100,
            importance_init_logit: None,
            sparse_updates: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cleanup_every == 0 {
            return Err(Error::Config("cleanup_every must be positive".into()));
        }
        if self.eval_every == 0 || self.densify.every == 0 {
            return Err(Error::Config("eval_every and densify.every must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda_ssim) {
            return Err(Error::Config(format!("lambda_ssim {} outside [0, 1]", self.lambda_ssim)));
        }
        self.depth.validate()?;
        self.prune.validate()
    }

    /// Pruning runs at multiples of `cleanup_every` at or after `cleanup_start`.
    pub fn is_cleanup_step(&self, step: u64) -> bool {
        step >= self.cleanup_start && step % self.cleanup_every == 0
    }

    pub fn is_densify_step(&self, step: u64) -> bool {
        let d = &self.densify;
        step >= d.start && step <= d.stop && step % d.every == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub view: usize,
    pub loss: f64,
    pub l1: f64,
    pub ssim: f64,
    pub depth_loss: Option<f64>,
    pub depth_weight: f64,
    pub count: usize,
    pub added: usize,
    pub pruned: usize,
    pub heldout_psnr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanupRecord {
    pub step: u64,
    pub summary: PruneSummary,
    /// Persistent ids of removed Gaussians.
    pub removed_ids: Vec<u64>,
    /// Persistent ids of guarded candidates.
    pub guarded_ids: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainTrace {
    pub initial_count: usize,
    pub steps: Vec<StepRecord>,
    pub cleanups: Vec<CleanupRecord>,
}

impl TrainTrace {
    pub fn removed_ids(&self) -> Vec<u64> {
        self.cleanups.iter().flat_map(|c| c.removed_ids.iter().copied()).collect()
    }

    /// `count_t = count_{t-1} + added_t - pruned_t` for every step.
    pub fn counts_consistent(&self) -> bool {
        let mut prev = self.initial_count;
        for r in &self.steps {
            if r.count + r.pruned != prev + r.added {
                return false;
            }
            prev = r.count;
        }
        true
    }

    pub fn psnr_at(&self, step: u64) -> Option<f64> {
        self.steps.iter().find(|r| r.step == step).and_then(|r| r.heldout_psnr)
    }
}

/// Adam state per parameter group.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OptimizerState {
    pub center: Adam,
    pub log_scales: Adam,
    pub rotation: Adam,
    pub opacity_logit: Adam,
    pub sh_dc: Adam,
    pub importance_logit: Adam,
}

const WIDTHS: [usize; 6] = [3, 3, 4, 1, 3, 1];

impl OptimizerState {
    fn new(n: usize) -> Self {
        OptimizerState {
            center: Adam::new(3 * n),
            log_scales: Adam::new(3 * n),
            rotation: Adam::new(4 * n),
            opacity_logit: Adam::new(n),
            sh_dc: Adam::new(3 * n),
            importance_logit: Adam::new(n),
        }
    }

    fn groups(&mut self) -> [&mut Adam; 6] {
        [
            &mut self.center,
            &mut self.log_scales,
            &mut self.rotation,
            &mut self.opacity_logit,
            &mut self.sh_dc,
            &mut self.importance_logit,
        ]
    }

    fn retain(&mut self, keep: &[bool]) {
        for (g, w) in self.groups().into_iter().zip(WIDTHS) {
            g.retain_rows(keep, w);
        }
    }

    fn grow(&mut self, rows: usize) {
        for (g, w) in self.groups().into_iter().zip(WIDTHS) {
            g.grow_rows(rows, w);
        }
    }
}

/// Full-precision Gaussian record for checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GaussianRecord {
    center: [f64; 3],
    log_scales: [f64; 3],
    rotation: [f64; 4],
    opacity_logit: f64,
    sh: Vec<[f64; 3]>,
    importance_logit: f64,
    normal: [f32; 3],
}

impl From<&Gaussian> for GaussianRecord {
    fn from(g: &Gaussian) -> Self {
        GaussianRecord {
            center: g.center.into(),
            log_scales: g.log_scales.into(),
            rotation: g.rotation,
            opacity_logit: g.opacity_logit,
            sh: g.sh.clone(),
            importance_logit: g.importance_logit,
            normal: g.normal,
        }
    }
}

impl From<GaussianRecord> for Gaussian {
    fn from(r: GaussianRecord) -> Self {
        Gaussian {
            center: r.center.into(),
            log_scales: r.log_scales.into(),
            rotation: r.rotation,
            opacity_logit: r.opacity_logit,
            sh: r.sh,
            importance_logit: r.importance_logit,
            normal: r.normal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointState {
    step: u64,
    sh_degree: usize,
    gaussians: Vec<GaussianRecord>,
    ids: Vec<u64>,
    next_id: u64,
    extent: f64,
    grad_accum: Vec<[f64; 3]>,
    optimizer: OptimizerState,
}

pub struct Trainer<'a> {
    scene: &'a Scene,
    cfg: TrainConfig,
    cloud: SplatCloud,
    ledger: EvidenceLedger,
    /// Persistent identity of each Gaussian; the initial cloud uses 0..N.
    ids: Vec<u64>,
    next_id: u64,
    optimizer: OptimizerState,
    /// Center gradients summed since the last densification event.
    grad_accum: Vec<Vector3<f64>>,
    extent: f64,
    step: u64,
    trace: TrainTrace,
    uncertainty: Vec<Option<Grid>>,
    train_views: Vec<usize>,
}

impl<'a> Trainer<'a> {
    pub fn new(scene: &'a Scene, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        scene.validate()?;
        let train_views: Vec<usize> = scene
            .train_views()
            .filter(|(_, v)| v.target.is_some())
            .map(|(i, _)| i)
            .collect();
        if train_views.is_empty() && cfg.steps > 0 {
            return Err(Error::InvalidArgument("training needs at least one view with a target".into()));
        }
        let mut cloud = scene.cloud.clone();
        if let Some(w) = cfg.importance_init_logit {
            for g in &mut cloud.gaussians {
                g.importance_logit = w;
            }
        }
        let n = cloud.len();
        let extent = bbox_diagonal(&cloud.centers()).max(1e-9);
        let uncertainty = scene
            .views
            .iter()
            .map(|v| match (&v.depth_prior, &v.uncertainty) {
                (Some(_), Some(u)) => Some(u.clone()),
                (Some(d), None) => Some(default_uncertainty(d)),
                _ => None,
            })
            .collect();
        Ok(Trainer {
            scene,
            ledger: EvidenceLedger::new(n, cfg.ema_beta)?,
            ids: (0..n as u64).collect(),
            next_id: n as u64,
            optimizer: OptimizerState::new(n),
            grad_accum: vec![Vector3::zeros(); n],
            extent,
            step: 0,
            trace: TrainTrace {
                initial_count: n,
                ..Default::default()
            },
            cloud,
            cfg,
            uncertainty,
            train_views,
        })
    }

    pub fn cloud(&self) -> &SplatCloud {
        &self.cloud
    }

    pub fn ledger(&self) -> &EvidenceLedger {
        &self.ledger
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn trace(&self) -> &TrainTrace {
        &self.trace
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    pub fn into_parts(self) -> (SplatCloud, EvidenceLedger, TrainTrace) {
        (self.cloud, self.ledger, self.trace)
    }

    /// View trained at `step` (1-based): a seeded shuffle per epoch.
    fn view_for(&self, step: u64) -> usize {
        let n = self.train_views.len() as u64;
        let epoch = (step - 1) / n;
        let mut order = self.train_views.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(epoch);
        order.shuffle(&mut rng);
        order[((step - 1) % n) as usize]
    }

    fn center_lr(&self, step: u64) -> f64 {
        let lr = &self.cfg.lr;
        let t = if self.cfg.steps > 1 {
            ((step - 1) as f64 / (self.cfg.steps - 1) as f64).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (a, b) = (lr.center.max(1e-300), lr.center_final.max(1e-300));
        self.extent * (a.ln() * (1.0 - t) + b.ln() * t).exp()
    }

    pub fn heldout_psnr(&self) -> Option<f64> {
        let vals: Vec<f64> = self
            .scene
            .test_views()
            .filter_map(|(_, v)| {
                let target = v.target.as_ref()?;
                let out = render(&self.cloud, &v.camera, self.scene.background);
                psnr(&out.color, target).ok()
            })
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }

    /// Runs until `cfg.steps`.
    pub fn run(&mut self) -> Result<()> {
        while self.step < self.cfg.steps {
            self.step_once()?;
        }
        Ok(())
    }

    pub fn step_once(&mut self) -> Result<()> {
        let step = self.step + 1;
        let vi = self.view_for(step);
        let view = &self.scene.views[vi];
        let target = view.target.as_ref().expect("train views have targets");
        let out = render(&self.cloud, &view.camera, self.scene.background);
        let photo = photometric_loss(&out.color, target, self.cfg.lambda_ssim)?;

        let lambda = self.cfg.depth.weight(step);
        let mut depth_value = None;
        let mut d_depth = None;
        if let (Some(prior), Some(unc), true) = (&view.depth_prior, &self.uncertainty[vi], lambda > 0.0) {
            let mut w = unc.clone();
            for (i, wv) in w.data.iter_mut().enumerate() {
                if 1.0 - out.final_transmittance.data[i] <= COVERAGE_THRESHOLD {
                    *wv = 0.0;
                }
            }
            if let Some(a) = align(&out.depth, prior, &w)? {
                let delta = robust_delta(&out.depth, prior, &a);
                let (l, mut g) = depth_loss(&out.depth, prior, &w, &a, delta)?;
                let scale = lambda / out.depth.data.len() as f64;
                for v in &mut g.data {
                    *v *= scale;
                }
                depth_value = Some(l * scale);
                d_depth = Some(g);
            }
        }
        let loss = photo.value + depth_value.unwrap_or(0.0);
        let grads = render_backward(&self.cloud, &view.camera, &out, &photo.grad, d_depth.as_ref())?;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::NonFinite(format!(
                "step {step} (view {}): loss {loss}, l1 {}, ssim {}, depth {:?}, {} Gaussians, gradients finite: {}",
                view.name,
                photo.l1,
                photo.ssim,
                depth_value,
                self.cloud.len(),
                grads.is_finite()
            )));
        }
        self.apply_gradients(&grads, &out.contributions, step);

        let hits = visibility_hits(&out, self.cfg.visibility_threshold);
        self.ledger.update(&hits, &grads.center_norms())?;
        for (acc, g) in self.grad_accum.iter_mut().zip(&grads.d_center) {
            *acc += g;
        }

        let mut added = 0;
        if self.cfg.is_densify_step(step) {
            added = self.densify(step)?;
        }
        let mut pruned = 0;
        if self.cfg.is_cleanup_step(step) {
            pruned = self.cleanup(step)?;
        }
        self.step = step;
        let heldout_psnr = if step % self.cfg.eval_every == 0 || step == self.cfg.steps {
            self.heldout_psnr()
        } else {
            None
        };
        self.trace.steps.push(StepRecord {
            step,
            view: vi,
            loss,
            l1: photo.l1,
            ssim: photo.ssim,
            depth_loss: depth_value,
            depth_weight: lambda,
            count: self.cloud.len(),
            added,
            pruned,
            heldout_psnr,
        });
        Ok(())
    }

    fn apply_gradients(&mut self, g: &GradBuffer, contributions: &[f64], step: u64) {
        let n = self.cloud.len();
        let touched: Vec<bool> = contributions.iter().map(|&c| c > 0.0).collect();
        let active = self.cfg.sparse_updates.then_some(touched.as_slice());
        let lr = self.cfg.lr.clone();
        let center_lr = self.center_lr(step);
        let gs = &mut self.cloud.gaussians;
        let opt = &mut self.optimizer;

        let mut p: Vec<f64> = gs.iter().flat_map(|x| x.center.iter().copied().collect::<Vec<_>>()).collect();
        let d: Vec<f64> = g.d_center.iter().flat_map(|v| [v.x, v.y, v.z]).collect();
        opt.center.step_rows(&mut p, &d, center_lr, active);
        for i in 0..n {
            gs[i].center = Vector3::new(p[3 * i], p[3 * i + 1], p[3 * i + 2]);
        }

        let mut p: Vec<f64> = gs.iter().flat_map(|x| [x.log_scales.x, x.log_scales.y, x.log_scales.z]).collect();
        let d: Vec<f64> = g.d_log_scales.iter().flat_map(|v| [v.x, v.y, v.z]).collect();
        opt.log_scales.step_rows(&mut p, &d, lr.log_scales, active);
        for i in 0..n {
            gs[i].log_scales = Vector3::new(p[3 * i], p[3 * i + 1], p[3 * i + 2]);
        }

        let mut p: Vec<f64> = gs.iter().flat_map(|x| x.rotation).collect();
        let d: Vec<f64> = g.d_rotation.iter().flatten().copied().collect();
        opt.rotation.step_rows(&mut p, &d, lr.rotation, active);
        for i in 0..n {
            gs[i].rotation = [p[4 * i], p[4 * i + 1], p[4 * i + 2], p[4 * i + 3]];
            gs[i].normalize_rotation();
        }

        let mut p: Vec<f64> = gs.iter().map(|x| x.opacity_logit).collect();
        opt.opacity_logit.step_rows(&mut p, &g.d_opacity_logit, lr.opacity_logit, active);
        for i in 0..n {
            gs[i].opacity_logit = p[i];
        }

        let mut p: Vec<f64> = gs.iter().flat_map(|x| x.sh[0]).collect();
        let d: Vec<f64> = g.d_sh_dc.iter().flatten().copied().collect();
        opt.sh_dc.step_rows(&mut p, &d, lr.sh_dc, active);
        for i in 0..n {
            gs[i].sh[0] = [p[3 * i], p[3 * i + 1], p[3 * i + 2]];
        }

        let mut p: Vec<f64> = gs.iter().map(|x| x.importance_logit).collect();
        opt.importance_logit.step_rows(&mut p, &g.d_importance_logit, lr.importance_logit, active);
        for i in 0..n {
            gs[i].importance_logit = p[i];
        }
    }

    /// Clone or split Gaussians with a high gradient EMA. Returns the net
    /// number of Gaussians added.
    pub fn densify(&mut self, step: u64) -> Result<usize> {
        let added = densify(
            &mut self.cloud,
            &mut self.ledger,
            &self.grad_accum,
            &self.cfg.densify,
            self.extent,
            self.cfg.seed ^ (step << 20),
            &mut self.ids,
            &mut self.next_id,
            &mut self.optimizer,
        )?;
        self.grad_accum = vec![Vector3::zeros(); self.cloud.len()];
        Ok(added)
    }

    fn cleanup(&mut self, step: u64) -> Result<usize> {
        let report = run_pruning_pass(&mut self.cloud, &mut self.ledger, &self.cfg.prune)?;
        let removed = report.removed_indices();
        let keep = keep_mask(self.ids.len(), &removed)?;
        let record = CleanupRecord {
            step,
            summary: report.summary(),
            removed_ids: removed.iter().map(|&i| self.ids[i]).collect(),
            guarded_ids: report.guarded.iter().map(|g| self.ids[g.index]).collect(),
        };
        retain_by_mask(&mut self.ids, &keep);
        retain_by_mask(&mut self.grad_accum, &keep);
        self.optimizer.retain(&keep);
        log::info!(
            "step {step}: pruning pass removed {} of {} ({} candidates, {} guarded)",
            record.summary.removed,
            record.summary.gaussians_before,
            record.summary.base_candidates,
            record.summary.guarded
        );
        self.trace.cleanups.push(record);
        Ok(removed.len())
    }

    /// Writes `model.ply`, `evidence.bin`, `trace.json` and the
    /// full-precision `state.json` used for resuming.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_ply(&self.cloud, &dir.join("model.ply"))?;
        self.ledger.save(&dir.join("evidence.bin"))?;
        write_json(&dir.join("trace.json"), &self.trace)?;
        let state = CheckpointState {
            step: self.step,
            sh_degree: self.cloud.sh_degree,
            gaussians: self.cloud.gaussians.iter().map(GaussianRecord::from).collect(),
            ids: self.ids.clone(),
            next_id: self.next_id,
            extent: self.extent,
            grad_accum: self.grad_accum.iter().map(|v| [v.x, v.y, v.z]).collect(),
            optimizer: self.optimizer.clone(),
        };
        write_json(&dir.join("state.json"), &state)
    }

    /// Restores a trainer from a checkpoint written by [`Trainer::save_checkpoint`].
    pub fn resume(scene: &'a Scene, cfg: TrainConfig, dir: &Path) -> Result<Self> {
        let mut t = Trainer::new(scene, cfg)?;
        let state: CheckpointState = read_json(&dir.join("state.json"))?;
        t.trace = read_json(&dir.join("trace.json"))?;
        t.ledger = EvidenceLedger::load(&dir.join("evidence.bin"))?;
        t.step = state.step;
        t.cloud = SplatCloud {
            sh_degree: state.sh_degree,
            gaussians: state.gaussians.into_iter().map(Gaussian::from).collect(),
        };
        t.ids = state.ids;
        t.next_id = state.next_id;
        t.extent = state.extent;
        t.grad_accum = state.grad_accum.into_iter().map(Vector3::from).collect();
        t.optimizer = state.optimizer;
        if t.ledger.len() != t.cloud.len() || t.ids.len() != t.cloud.len() {
            return Err(Error::Format(format!("{}: checkpoint parts disagree on Gaussian count", dir.display())));
        }
        Ok(t)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Densification rule shared by the trainer and tests. Gaussians whose
/// gradient EMA reaches the threshold are cloned (small) or split (large),
/// highest EMA first, at most `max_fraction` of the count per event.
#[allow(clippy::too_many_arguments)]
pub fn densify(
    cloud: &mut SplatCloud,
    ledger: &mut EvidenceLedger,
    grad_accum: &[Vector3<f64>],
    cfg: &DensifyConfig,
    extent: f64,
    seed: u64,
    ids: &mut Vec<u64>,
    next_id: &mut u64,
    optimizer: &mut OptimizerState,
) -> Result<usize> {
    let n = cloud.len();
    let mut eligible: Vec<usize> = (0..n).filter(|&i| ledger.grad_ema[i] >= cfg.grad_threshold).collect();
    eligible.sort_by(|&a, &b| ledger.grad_ema[b].total_cmp(&ledger.grad_ema[a]).then(a.cmp(&b)));
    let budget = ((cfg.max_fraction * n as f64).floor() as usize).max(1);
    eligible.truncate(budget);
    eligible.sort_unstable();
    if eligible.is_empty() {
        return Ok(0);
    }

    let bound = cfg.split_scale_fraction * extent;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = Normal::new(0.0, 1.0).unwrap();
    let mut split_parents = Vec::new();
    let mut spawned: Vec<(Gaussian, u64)> = Vec::new();
    for &i in &eligible {
        let g = &cloud.gaussians[i];
        let s = g.scales();
        if s.max() <= bound {
            let mut c = g.clone();
            let dir = -grad_accum.get(i).copied().unwrap_or_else(Vector3::zeros);
            let smin = s.min();
            if dir.norm() > 0.0 {
                c.center += dir.normalize() * 0.5 * smin;
            }
            spawned.push((c, ids[i]));
        } else {
            split_parents.push(i);
            let r = g.rotation_matrix();
            for _ in 0..2 {
                let eps = Vector3::new(std.sample(&mut rng), std.sample(&mut rng), std.sample(&mut rng));
                let mut c = g.clone();
                c.center += r * s.component_mul(&eps);
                c.log_scales -= Vector3::repeat(std::f64::consts::LN_2);
                spawned.push((c, ids[i]));
            }
        }
    }
    let added = spawned.len() - split_parents.len();
    let keep = keep_mask(n, &split_parents)?;
    retain_by_mask(&mut cloud.gaussians, &keep);
    retain_by_mask(ids, &keep);
    ledger.remove(&split_parents)?;
    optimizer.retain(&keep);
    let count = spawned.len();
    for (g, _parent) in spawned {
        cloud.gaussians.push(g);
        ids.push(*next_id);
        *next_id += 1;
    }
    ledger.spawn(count);
    optimizer.grow(count);
    Ok(added)
}

/// Trains `scene` with `cfg`, returning the final cloud, ledger and trace.
pub fn train(scene: &Scene, cfg: &TrainConfig) -> Result<(SplatCloud, EvidenceLedger, TrainTrace)> {
    let mut t = Trainer::new(scene, cfg.clone())?;
    t.run()?;
    Ok(t.into_parts())
}
