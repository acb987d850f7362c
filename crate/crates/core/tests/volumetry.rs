use ahfx_core::grid::{Mask, Structure};
use ahfx_core::phantom::{build_phantom, PhantomSpec};
use ahfx_core::volumetry::{measure_diameter, measure_volume};
use proptest::prelude::*;

fn ellipsoid(dims: [usize; 3], spacing: [f64; 3], c: [f64; 3], r: [f64; 3]) -> Mask {
    Mask::from_fn(dims, spacing, |i, j, k| {
        let p = [i as f64, j as f64, k as f64];
        (0..3)
            .map(|d| ((p[d] * spacing[d] - c[d]) / r[d]).powi(2))
            .sum::<f64>()
            <= 1.0
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn union_identity(
        a in prop::collection::vec(any::<bool>(), 6 * 5 * 4),
        b in prop::collection::vec(any::<bool>(), 6 * 5 * 4),
    ) {
        let s = [0.7, 1.1, 2.5];
        let a = Mask::from_bits([6, 5, 4], s, a).unwrap();
        let b = Mask::from_bits([6, 5, 4], s, b).unwrap();
        let lhs = measure_volume(&a.union(&b)) + measure_volume(&a.intersection(&b));
        let rhs = measure_volume(&a) + measure_volume(&b);
        prop_assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn volume_scales_with_spacing(
        bits in prop::collection::vec(any::<bool>(), 5 * 5 * 5),
        f in 0.25f64..4.0,
    ) {
        let a = Mask::from_bits([5, 5, 5], [1.0, 2.0, 0.5], bits.clone()).unwrap();
        let b = Mask::from_bits([5, 5, 5], [f, 2.0 * f, 0.5 * f], bits).unwrap();
        let expect = measure_volume(&a) * f * f * f;
        prop_assert!((measure_volume(&b) - expect).abs() <= 1e-9 * expect.max(1.0));
    }

    #[test]
    fn rotation_keeps_volume_and_diameter(
        r in (2.0f64..6.0, 2.0f64..6.0, 2.0f64..6.0),
        axes in (0usize..3, 1usize..3),
    ) {
        let m = ellipsoid([16, 16, 16], [1.0, 1.0, 1.0], [7.5, 7.5, 7.5], [r.0, r.1, r.2]);
        let (a, b) = (axes.0, (axes.0 + axes.1) % 3);
        let rot = m.rotate90(a, b);
        prop_assert_eq!(measure_volume(&rot), measure_volume(&m));
        prop_assert_eq!(measure_diameter(&rot), measure_diameter(&m));
    }
}

#[test]
fn oracle_suite_within_tolerance() {
    let spec = PhantomSpec::oracle_suite();
    let p = build_phantom(&spec).unwrap();
    for t in &p.truths {
        let mask = p
            .labels
            .mask_of(p.label_map.require(t.structure).unwrap())
            .unwrap();
        let v = measure_volume(&mask);
        assert!(
            (v - t.volume_ml).abs() / t.volume_ml <= 0.02,
            "{}: {v}",
            t.structure
        );
        let d = measure_diameter(&mask).unwrap();
        assert!(
            (d - t.diameter_mm).abs() <= 3f64.sqrt(),
            "{}: {d}",
            t.structure
        );
        if t.structure == Structure::RightAtrium {
            assert_eq!(v, t.volume_ml);
        }
    }
}

#[test]
fn refinement_reduces_ellipsoid_error() {
    let err = |spec: &PhantomSpec| {
        let p = build_phantom(spec).unwrap();
        let m = p
            .labels
            .mask_of(p.label_map.require(Structure::Lung).unwrap())
            .unwrap();
        let truth = p.truths[0].volume_ml;
        (measure_volume(&m) - truth).abs() / truth
    };
    let spec = PhantomSpec::oracle_suite();
    assert!(err(&spec.refined()) < err(&spec));
}

#[test]
fn anisotropic_spacing_keeps_box_exact() {
    let spacing = [0.5, 1.0, 2.0];
    let m = Mask::from_fn([40, 30, 20], spacing, |i, j, k| {
        (4..24).contains(&i) && (5..15).contains(&j) && (2..7).contains(&k)
    })
    .unwrap();
    assert_eq!(measure_volume(&m), 20.0 * 10.0 * 5.0 * 1.0 / 1000.0);
}
