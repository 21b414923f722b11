use nalgebra::Vector3;
use proptest::prelude::*;
use splatclean::model::{covariance_scales, sh_coeff_count, sigmoid, Gaussian, SplatCloud};
use splatclean::ply::{load_ply, payload_offset, save_ply};

fn f32v() -> impl Strategy<Value = f64> {
    (-50.0f32..50.0).prop_map(f64::from)
}

fn gaussian(degree: usize) -> impl Strategy<Value = Gaussian> {
    let n = sh_coeff_count(degree);
    (
        [f32v(), f32v(), f32v()],
        [(-8.0f32..2.0), (-8.0f32..2.0), (-8.0f32..2.0)],
        [f32v(), f32v(), f32v(), f32v()],
        f32v(),
        prop::collection::vec([f32v(), f32v(), f32v()], n),
        f32v(),
        [-1.0f32..1.0, -1.0f32..1.0, -1.0f32..1.0],
    )
        .prop_map(|(c, s, q, o, sh, imp, normal)| Gaussian {
            center: Vector3::from(c),
            log_scales: Vector3::from(s.map(f64::from)),
            rotation: q,
            opacity_logit: o,
            sh,
            importance_logit: imp,
            normal,
        })
}

fn cloud() -> impl Strategy<Value = SplatCloud> {
    (0usize..=3).prop_flat_map(|d| {
        prop::collection::vec(gaussian(d), 0..12).prop_map(move |gaussians| SplatCloud { sh_degree: d, gaussians })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ply_round_trip_is_exact(c in cloud()) {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ply");
        save_ply(&c, &a).unwrap();
        let back = load_ply(&a).unwrap();
        prop_assert_eq!(&back, &c);
        let b = dir.path().join("b.ply");
        save_ply(&back, &b).unwrap();
        let (ba, bb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        prop_assert_eq!(&ba[payload_offset(&ba).unwrap()..], &bb[payload_offset(&bb).unwrap()..]);
    }

    #[test]
    fn covariance_scales_sorted_and_permutation_invariant(s in [-6.0f64..3.0, -6.0f64..3.0, -6.0f64..3.0], perm in 0usize..6) {
        let mut g = Gaussian::isotropic(Vector3::zeros(), 1.0, 0.5, [0.5; 3], 0);
        g.log_scales = Vector3::from(s);
        let base = covariance_scales(&g);
        prop_assert!(base[0] <= base[1] && base[1] <= base[2]);
        let orders = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let o = orders[perm];
        g.log_scales = Vector3::new(s[o[0]], s[o[1]], s[o[2]]);
        prop_assert_eq!(covariance_scales(&g), base);
        let mut expect = s.map(f64::exp);
        expect.sort_by(f64::total_cmp);
        prop_assert_eq!(base, expect);
    }

    #[test]
    fn sigmoid_in_open_interval_and_monotone(a in -30.0f64..30.0, b in -30.0f64..30.0) {
        let (sa, sb) = (sigmoid(a), sigmoid(b));
        prop_assert!(sa > 0.0 && sa < 1.0);
        if a < b {
            prop_assert!(sa <= sb);
        }
    }
}

#[test]
fn covariance_scales_examples() {
    let mut g = Gaussian::isotropic(Vector3::zeros(), 1.0, 0.5, [0.5; 3], 0);
    g.log_scales = Vector3::zeros();
    assert_eq!(covariance_scales(&g), [1.0, 1.0, 1.0]);
    g.log_scales = Vector3::new(0.0, 0.01f64.ln(), 0.0);
    let s = covariance_scales(&g);
    assert!((s[0] - 0.01).abs() < 1e-15);
    assert_eq!(&s[1..], &[1.0, 1.0]);
}

#[test]
fn rest_count_45_is_degree_three() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d3.ply");
    let c = SplatCloud {
        sh_degree: 3,
        gaussians: vec![Gaussian::isotropic(Vector3::new(1.0, 2.0, 3.0), 0.1, 0.5, [0.2, 0.4, 0.6], 3)],
    };
    save_ply(&c, &p).unwrap();
    let text = std::fs::read(&p).unwrap();
    let header = String::from_utf8_lossy(&text[..payload_offset(&text).unwrap()]).to_string();
    assert_eq!(header.matches("property float f_rest_").count(), 45);
    let back = load_ply(&p).unwrap();
    assert_eq!(back.sh_degree, 3);
    assert_eq!(back.gaussians[0].sh.len(), 16);
}
