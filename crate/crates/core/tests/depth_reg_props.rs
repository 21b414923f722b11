mod common;

use common::{rel_err, rng};
use proptest::prelude::*;
use rand::Rng;
use splatclean::depth_reg::{align, default_uncertainty, depth_loss, huber, huber_grad, CurriculumSchedule};
use splatclean::image::Grid;

fn grid_from(w: usize, h: usize, f: impl FnMut(usize) -> f64) -> Grid {
    Grid {
        width: w,
        height: h,
        data: (0..w * h).map(f).collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn noiseless_affine_pairs_align_exactly(seed in any::<u64>(), s in 0.1f64..10.0, t in -5.0f64..5.0) {
        let mut r = rng(seed);
        let zh = grid_from(6, 5, |_| r.random_range(0.5..5.0));
        let w = grid_from(6, 5, |_| r.random_range(0.1..1.0));
        let zt = grid_from(6, 5, |i| s * zh.data[i] + t);
        let a = align(&zh, &zt, &w).unwrap().unwrap();
        prop_assert!((a.s - s).abs() < 1e-9 && (a.t - t).abs() < 1e-9);
        let (loss, grad) = depth_loss(&zh, &zt, &w, &a, 1.0).unwrap();
        prop_assert!(loss < 1e-15);
        prop_assert!(grad.data.iter().all(|g| g.abs() < 1e-8));
    }

    /// In the quadratic regime, scaling the prior by c scales the aligned
    /// residuals by c, so the loss scales by c^2.
    #[test]
    fn prior_scaling_scales_residuals(seed in any::<u64>(), c in 0.2f64..5.0) {
        let mut r = rng(seed);
        let zh = grid_from(5, 5, |_| r.random_range(1.0..4.0));
        let zt = grid_from(5, 5, |i| 1.7 * zh.data[i] - 0.3 + r.random_range(-0.05..0.05));
        let w = Grid::filled(5, 5, 1.0);
        let zt_c = grid_from(5, 5, |i| c * zt.data[i]);
        let a = align(&zh, &zt, &w).unwrap().unwrap();
        let ac = align(&zh, &zt_c, &w).unwrap().unwrap();
        for i in 0..25 {
            let r1 = a.s * zh.data[i] + a.t - zt.data[i];
            let rc = ac.s * zh.data[i] + ac.t - zt_c.data[i];
            prop_assert!((rc - c * r1).abs() <= 1e-9 * (1.0 + c));
        }
        let big = 1e6;
        let l1 = depth_loss(&zh, &zt, &w, &a, big).unwrap().0;
        let lc = depth_loss(&zh, &zt_c, &w, &ac, big).unwrap().0;
        prop_assert!(rel_err(lc, c * c * l1) < 1e-6);
    }

    #[test]
    fn depth_loss_gradient_matches_differences(seed in any::<u64>()) {
        let mut r = rng(seed);
        let h = 1e-4;
        let delta = r.random_range(0.2..1.0);
        let s = r.random_range(0.5..2.0);
        let zh = grid_from(4, 4, |_| r.random_range(1.0..5.0));
        let zt = grid_from(4, 4, |i| {
            let mut res: f64 = r.random_range(-2.0..2.0);
            while (res.abs() - delta).abs() < 10.0 * h * s {
                res = r.random_range(-2.0..2.0);
            }
            s * zh.data[i] - res
        });
        let w = grid_from(4, 4, |_| r.random_range(0.0..1.0));
        let mut a = align(&zh, &zt, &w).unwrap().unwrap();
        a.s = s;
        a.t = 0.0;
        let (_, g) = depth_loss(&zh, &zt, &w, &a, delta).unwrap();
        for i in 0..16 {
            let mut p = zh.clone();
            p.data[i] += h;
            let mut m = zh.clone();
            m.data[i] -= h;
            let fd = (depth_loss(&p, &zt, &w, &a, delta).unwrap().0 - depth_loss(&m, &zt, &w, &a, delta).unwrap().0) / (2.0 * h);
            prop_assert!(rel_err(g.data[i], fd) < 1e-4, "pixel {} analytic {} fd {}", i, g.data[i], fd);
        }
    }

    #[test]
    fn huber_is_continuous_at_the_knee(delta in 1e-3f64..10.0) {
        prop_assert_eq!(huber(delta, delta), 0.5 * delta * delta);
        prop_assert_eq!(huber(-delta, delta), huber(delta, delta));
        prop_assert_eq!(huber_grad(delta, delta), delta);
        let eps = delta * 1e-9;
        prop_assert!((huber(delta + eps, delta) - huber(delta, delta)).abs() <= 2.0 * delta * eps);
    }

    #[test]
    fn uncertainty_is_a_weight(seed in any::<u64>()) {
        let mut r = rng(seed);
        let z = grid_from(9, 7, |_| r.random_range(0.0..10.0));
        prop_assert!(default_uncertainty(&z).data.iter().all(|w| (0.0..=1.0).contains(w)));
    }

    #[test]
    fn curriculum_is_monotone_and_continuous(start in 0u64..1000, span in 1u64..5000, lambda in 0.0f64..1.0, step in 0u64..8000) {
        let c = CurriculumSchedule { start_step: start, full_step: start + span, lambda_max: lambda };
        prop_assert_eq!(c.weight(start), 0.0);
        prop_assert_eq!(c.weight(start + span), lambda);
        prop_assert!(c.weight(step) <= c.weight(step + 1));
        prop_assert!((c.weight(step + 1) - c.weight(step)).abs() <= lambda / span as f64 + 1e-15);
    }
}

#[test]
fn step_edge_gets_low_weight() {
    let z = grid_from(16, 8, |i| if i % 16 < 8 { 1.0 } else { 5.0 });
    let w = default_uncertainty(&z);
    for y in 0..8 {
        assert!(w.get(7, y) < 0.05 && w.get(8, y) < 0.05);
        assert_eq!(w.get(2, y), 1.0);
    }
}
