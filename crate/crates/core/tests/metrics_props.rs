use htt_core::metrics::{
    auc, auc_thresholds, lift_to_3d, mepe_ra, pck_from_errors, root_align, root_aligned_errors, CameraIntrinsics, Point3,
    PoseEstimate,
};
use proptest::prelude::*;

fn point() -> impl Strategy<Value = Point3> {
    (-200.0f64..200.0, -200.0f64..200.0, 100.0f64..900.0).prop_map(|(x, y, z)| [x, y, z])
}

proptest! {
    #[test]
    fn pck_is_monotone_and_auc_bounded(errors in prop::collection::vec(0.0f64..120.0, 1..200), max in 1.0f64..100.0) {
        let curve = pck_from_errors(&errors, &auc_thresholds(max)).unwrap();
        prop_assert!(curve.values.windows(2).all(|w| w[0] <= w[1]));
        let a = auc(&curve).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        let any_positive = errors.iter().any(|&e| e > 0.0);
        prop_assert_eq!(a == 1.0, !any_positive);
    }

    #[test]
    fn zero_errors_give_unit_auc(n in 1usize..50) {
        let a = auc(&pck_from_errors(&vec![0.0; n], &auc_thresholds(20.0)).unwrap()).unwrap();
        prop_assert_eq!(a, 1.0);
    }

    #[test]
    fn root_alignment_only_translates(
        pred in prop::collection::vec(point(), 2..22),
        gt_seed in prop::collection::vec(point(), 22),
        wrist_pick in 0usize..22,
    ) {
        let gt = &gt_seed[..pred.len()];
        let wrist = wrist_pick % pred.len();
        let aligned = root_align(&pred, gt, wrist).unwrap();
        for i in 0..pred.len() {
            for j in 0..pred.len() {
                for c in 0..3 {
                    let before = pred[i][c] - pred[j][c];
                    let after = aligned[i][c] - aligned[j][c];
                    prop_assert!((before - after).abs() <= 1e-9);
                }
            }
        }
        for c in 0..3 {
            prop_assert!((aligned[wrist][c] - gt[wrist][c]).abs() <= 1e-9);
        }
    }

    #[test]
    fn root_aligned_metrics_exclude_the_wrist(
        frames in prop::collection::vec((prop::collection::vec(point(), 5), prop::collection::vec(point(), 5)), 1..10),
        wrist in 0usize..5,
    ) {
        let pred: Vec<Vec<Point3>> = frames.iter().map(|f| f.0.clone()).collect();
        let gt: Vec<Vec<Point3>> = frames.iter().map(|f| f.1.clone()).collect();
        let errors = root_aligned_errors(&pred, &gt, wrist).unwrap();
        prop_assert_eq!(errors.len(), 4 * frames.len());
        let mut manual = Vec::new();
        for (p, g) in pred.iter().zip(&gt) {
            let d: Vec<f64> = (0..3).map(|c| g[wrist][c] - p[wrist][c]).collect();
            for j in (0..5).filter(|&j| j != wrist) {
                let e: f64 = (0..3).map(|c| (p[j][c] + d[c] - g[j][c]).powi(2)).sum();
                manual.push(e.sqrt());
            }
        }
        let mean = manual.iter().sum::<f64>() / manual.len() as f64;
        prop_assert!((mepe_ra(&pred, &gt, wrist).unwrap() - mean).abs() <= 1e-9);
    }

    #[test]
    fn lifting_is_linear_in_depth(
        u in -500.0f64..1500.0,
        v in -500.0f64..1500.0,
        z in 1.0f64..2000.0,
        scale in 0.1f64..10.0,
        fx in 50.0f64..1500.0,
        fy in 50.0f64..1500.0,
    ) {
        let k = CameraIntrinsics::new(fx, fy, 320.0, 240.0).unwrap();
        let lift = |z: f64| lift_to_3d(&PoseEstimate { p2d: vec![[u, v]], depth: vec![z] }, &k).unwrap()[0];
        let (a, b) = (lift(z), lift(scale * z));
        for c in 0..3 {
            prop_assert!((b[c] - scale * a[c]).abs() <= 1e-9 * (1.0 + b[c].abs()));
        }
    }
}
