use nalgebra::{Matrix3, Vector3};
use splatclean::model::{Camera, Gaussian, Scene, SplatCloud, View};
use splatclean::renderer::render;
use splatclean::synth::{make_box_scene, SynthRecipe};
use splatclean::trainer::{train, TrainConfig, Trainer};

fn small_recipe() -> SynthRecipe {
    SynthRecipe {
        surface_count: 1500,
        wire_count: 1,
        glint_count: 10,
        floater_count: 10,
        camera_count: 4,
        image_size: 24,
        focal: 16.0,
        ..Default::default()
    }
}

fn quiet(steps: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        steps,
        cleanup_start: steps + 1,
        ..Default::default()
    };
    cfg.densify.start = steps + 1;
    cfg.densify.stop = steps + 1;
    cfg
}

#[test]
fn zero_steps_leaves_scene_unchanged() {
    let ls = make_box_scene(&small_recipe()).unwrap();
    let (cloud, ledger, trace) = train(&ls.scene, &quiet(0)).unwrap();
    assert_eq!(cloud, ls.scene.cloud);
    assert!(trace.steps.is_empty());
    assert!(trace.cleanups.is_empty());
    assert_eq!(ledger.len(), cloud.len());
    assert!(ledger.age.iter().all(|&a| a == 0));
}

#[test]
fn single_gaussian_loss_does_not_increase() {
    let cam = Camera::new(30.0, 30.0, 15.5, 15.5, 32, 32, Matrix3::identity(), Vector3::zeros()).unwrap();
    let mut truth = Gaussian::isotropic(Vector3::new(0.0, 0.0, 4.0), 0.6, 0.8, [0.8, 0.3, 0.5], 0);
    truth.importance_logit = 4.0;
    let mut gt = SplatCloud::new(0);
    gt.gaussians.push(truth.clone());
    let bg = [0.0; 3];
    let mut view = View::new("v", cam.clone());
    view.target = Some(render(&gt, &cam, bg).color);

    let mut start = gt.clone();
    start.gaussians[0] = Gaussian::isotropic(truth.center, 0.6, 0.8, [0.4, 0.6, 0.2], 0);
    start.gaussians[0].importance_logit = 4.0;
    let scene = Scene::new(start, vec![view], bg).unwrap();
    let (_, _, trace) = train(&scene, &quiet(100)).unwrap();
    assert_eq!(trace.steps.len(), 100);
    for w in trace.steps.windows(2) {
        assert!(w[1].loss <= w[0].loss + 1e-12, "step {}: {} -> {}", w[1].step, w[0].loss, w[1].loss);
    }
    assert!(trace.steps[99].loss < 0.8 * trace.steps[0].loss);
}

#[test]
fn cleanup_schedule_and_count_identity() {
    let ls = make_box_scene(&small_recipe()).unwrap();
    let cfg = TrainConfig {
        steps: 2000,
        ..Default::default()
    };
    let (cloud, ledger, trace) = train(&ls.scene, &cfg).unwrap();
    let steps: Vec<u64> = trace.cleanups.iter().map(|c| c.step).collect();
    assert_eq!(steps, vec![800, 1200, 1600, 2000]);
    assert!(trace.counts_consistent());
    assert_eq!(trace.steps.last().unwrap().count, cloud.len());
    assert_eq!(ledger.len(), cloud.len());
    let pruned: usize = trace.steps.iter().map(|r| r.pruned).sum();
    assert_eq!(pruned, trace.removed_ids().len());
}

#[test]
fn resume_matches_uninterrupted_run() {
    let ls = make_box_scene(&small_recipe()).unwrap();
    let cfg = TrainConfig {
        steps: 900,
        ..Default::default()
    };
    let (full_cloud, full_ledger, full_trace) = train(&ls.scene, &cfg).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(&ls.scene, cfg.clone()).unwrap();
    while t.step_index() < 450 {
        t.step_once().unwrap();
    }
    t.save_checkpoint(dir.path()).unwrap();
    drop(t);
    let mut t = Trainer::resume(&ls.scene, cfg, dir.path()).unwrap();
    assert_eq!(t.step_index(), 450);
    t.run().unwrap();
    let (cloud, ledger, trace) = t.into_parts();
    assert_eq!(cloud, full_cloud);
    assert_eq!(ledger, full_ledger);
    assert_eq!(trace, full_trace);
}

#[test]
fn invalid_config_is_rejected() {
    let ls = make_box_scene(&small_recipe()).unwrap();
    let cfg = TrainConfig {
        cleanup_every: 0,
        ..Default::default()
    };
    assert!(Trainer::new(&ls.scene, cfg).is_err());
    let cfg = TrainConfig {
        lambda_ssim: 1.5,
        ..Default::default()
    };
    assert!(Trainer::new(&ls.scene, cfg).is_err());
}
