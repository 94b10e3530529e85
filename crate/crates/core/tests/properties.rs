use effort_core::augment::speed_up;
use effort_core::eval::{laban_descriptors, spearman};
use effort_core::motion::{motion_from_json, motion_to_json, N_JOINTS};
use effort_core::{default_group_map, effort_metrics, EffortMetrics, MotionSequence};
use proptest::prelude::*;

fn motion() -> impl Strategy<Value = MotionSequence> {
    (4usize..24).prop_flat_map(|frames| {
        prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), frames * N_JOINTS)
            .prop_map(|p| MotionSequence::new(20, N_JOINTS, p, None).unwrap())
    })
}

fn metrics(m: &MotionSequence) -> EffortMetrics {
    effort_metrics(m, &default_group_map()).unwrap()
}

fn close(a: &EffortMetrics, b: &EffortMetrics, factor: f64) -> bool {
    a.flat()
        .iter()
        .zip(b.flat())
        .all(|(x, y)| (x * factor - y).abs() <= 1e-9 * (1.0 + y.abs()))
}

fn rotation(yaw: f64, pitch: f64) -> impl Fn([f64; 3]) -> [f64; 3] {
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    move |[x, y, z]| {
        let (x, z) = (cy * x + sy * z, -sy * x + cy * z);
        let (y, z) = (cp * y - sp * z, sp * y + cp * z);
        [x, y, z]
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn metrics_ignore_rigid_motion(m in motion(), offset in prop::array::uniform3(-10.0f64..10.0), yaw in -3.2f64..3.2, pitch in -1.6f64..1.6) {
        let base = metrics(&m);
        let shifted = m.map_positions(|p| [p[0] + offset[0], p[1] + offset[1], p[2] + offset[2]]).unwrap();
        prop_assert!(close(&base, &metrics(&shifted), 1.0));
        let rotated = m.map_positions(rotation(yaw, pitch)).unwrap();
        prop_assert!(close(&base, &metrics(&rotated), 1.0));
    }

    #[test]
    fn metrics_scale_with_the_skeleton(m in motion(), c in 0.01f64..20.0) {
        let scaled = m.map_positions(|p| [c * p[0], c * p[1], c * p[2]]).unwrap();
        prop_assert!(close(&metrics(&m), &metrics(&scaled), c));
    }

    #[test]
    fn metrics_are_non_negative_and_peak_bounds_collective(m in motion()) {
        for [peak, collective] in metrics(&m).rows() {
            prop_assert!(*peak >= 0.0);
            prop_assert!(*peak <= *collective + 1e-12);
            prop_assert!(*collective <= *peak * (m.frames() - 1) as f64 + 1e-12);
        }
    }

    #[test]
    fn dropping_frames_never_lengthens_the_path(m in motion(), k in 1usize..=2) {
        let fast = speed_up(&m, k).unwrap();
        for (a, b) in metrics(&fast).rows().iter().zip(metrics(&m).rows()) {
            prop_assert!(a[1] <= b[1] + 1e-12);
        }
    }

    #[test]
    fn laban_descriptors_ignore_translation(m in motion(), offset in prop::array::uniform3(-5.0f64..5.0)) {
        let a = laban_descriptors(&m).unwrap();
        let shifted = m.map_positions(|p| [p[0] + offset[0], p[1] + offset[1], p[2] + offset[2]]).unwrap();
        let b = laban_descriptors(&shifted).unwrap();
        for (x, y) in [(a.weight, b.weight), (a.time, b.time), (a.flow, b.flow)] {
            prop_assert!(x >= 0.0);
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x));
        }
    }

    #[test]
    fn motion_json_round_trips(m in motion()) {
        prop_assert_eq!(motion_from_json(&motion_to_json(&m)).unwrap(), m);
    }

    #[test]
    fn spearman_depends_only_on_order(
        pairs in prop::collection::btree_map(-100i32..100, -1.0f64..1.0, 3..12),
    ) {
        let x: Vec<f64> = pairs.keys().map(|&k| f64::from(k)).collect();
        let y: Vec<f64> = pairs.values().copied().collect();
        let s = spearman(&x, &y).unwrap();
        prop_assume!(!s.degenerate);
        let warped: Vec<f64> = x.iter().map(|v| (v / 40.0).exp() + v.powi(3)).collect();
        let w = spearman(&warped, &y).unwrap();
        prop_assert_eq!(w.rho, s.rho);
        prop_assert_eq!(w.p_value, s.p_value);
        let t = spearman(&y, &x).unwrap();
        prop_assert!((t.rho - s.rho).abs() <= 1e-12);
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        prop_assert!((spearman(&x, &neg).unwrap().rho + s.rho).abs() <= 1e-12);
        prop_assert!((-1.0..=1.0).contains(&s.rho));
        prop_assert!((0.0..=1.0).contains(&s.p_value));
    }

    #[test]
    fn scaling_touches_only_the_listed_regions(c in 0.0f64..3.0, mask in prop::collection::vec(any::<bool>(), 7)) {
        let base = effort_core::baseline_metrics();
        let regions: Vec<usize> = (0..7).filter(|&g| mask[g]).collect();
        let s = base.scaled(c, Some(&regions)).unwrap();
        for (g, &on) in mask.iter().enumerate() {
            let f = if on { c } else { 1.0 };
            prop_assert_eq!(s.peak(g), base.peak(g) * f);
            prop_assert_eq!(s.collective(g), base.collective(g) * f);
        }
    }
}
