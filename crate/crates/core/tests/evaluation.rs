use ahfx_core::evaluation::{auroc, calibrate_threshold, confusion_report, roc_curve, Confusion};
use ahfx_core::table::Sex;
use proptest::prelude::*;

fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    prop::collection::vec((-5.0f64..5.0, any::<bool>()), 4..200)
        .prop_filter("both classes", |v| {
            v.iter().any(|p| p.1) && v.iter().any(|p| !p.1)
        })
        .prop_map(|v| v.into_iter().unzip())
}

proptest! {
    #[test]
    fn monotone_transforms_keep_auroc((s, l) in scored()) {
        let a = auroc(&s, &l).unwrap();
        let t: Vec<f64> = s.iter().map(|x| (2.0 * x).exp() + 3.0).collect();
        prop_assert!((auroc(&t, &l).unwrap() - a).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn negated_scores_complement((s, l) in scored()) {
        let neg: Vec<f64> = s.iter().map(|x| -x).collect();
        let sum = auroc(&s, &l).unwrap() + auroc(&neg, &l).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn roc_runs_from_origin_to_corner((s, l) in scored()) {
        let c = roc_curve(&s, &l).unwrap();
        let (first, last) = (c.points[0], *c.points.last().unwrap());
        prop_assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
        prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        for w in c.points.windows(2) {
            prop_assert!(w[0].fpr <= w[1].fpr && w[0].tpr <= w[1].tpr);
        }
    }

    #[test]
    fn calibrated_threshold_respects_target((s, l) in scored(), target in 0.0f64..0.3) {
        let t = calibrate_threshold(&s, &l, target).unwrap();
        let c = Confusion::from_scores(&s, &l, t);
        prop_assert!(c.fpr().unwrap() <= target);
        // Any lower observed score would exceed the target.
        if let Some(lower) = s.iter().copied().filter(|&x| x < t).reduce(f64::max) {
            prop_assert!(Confusion::from_scores(&s, &l, lower).fpr().unwrap() > target);
        }
    }

    #[test]
    fn intervals_contain_estimates((s, l) in scored(), seed in any::<u64>()) {
        let sex: Vec<Sex> = (0..s.len()).map(|i| if i % 2 == 0 { Sex::F } else { Sex::M }).collect();
        let r = confusion_report(&s, &l, 0.0, Some(&sex), 50, seed).unwrap();
        for g in std::iter::once(&r.overall).chain(r.subgroups.values()) {
            for rate in [g.tpr, g.fnr, g.fpr, g.tnr] {
                if let (Some(v), Some(lo), Some(hi)) = (rate.value, rate.lo, rate.hi) {
                    prop_assert!(lo <= v && v <= hi);
                }
            }
        }
    }
}

#[test]
fn bootstrap_is_seeded() {
    let s: Vec<f64> = (0..300).map(|i| ((i * 37) % 101) as f64 / 101.0).collect();
    let l: Vec<bool> = (0..300).map(|i| i % 7 == 0).collect();
    let a = confusion_report(&s, &l, 0.5, None, 500, 9).unwrap();
    let b = confusion_report(&s, &l, 0.5, None, 500, 9).unwrap();
    assert_eq!(a, b);
    let c = confusion_report(&s, &l, 0.5, None, 500, 10).unwrap();
    assert_ne!(a.overall.tpr.lo, None);
    assert_eq!(a.overall.confusion, c.overall.confusion);
}
