use ahfx_core::boost::{train, train_with, BoostParams, TrainOptions, Validation};
use ahfx_core::table::FeatureTable;
use proptest::prelude::*;

fn table(rows: &[(f64, f64)]) -> FeatureTable {
    let mut t = FeatureTable::new(vec!["a".into(), "b".into()]).unwrap();
    for (i, &(a, b)) in rows.iter().enumerate() {
        t.push_row(format!("r{i}"), vec![Some(a), Some(b)]).unwrap();
    }
    t
}

fn params(depth: usize, rounds: usize) -> BoostParams {
    BoostParams {
        eta: 0.3,
        max_depth: depth,
        lambda: 1.0,
        alpha: 0.0,
        subsample: 1.0,
        n_rounds: rounds,
        early_stopping_rounds: 0,
        ..BoostParams::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn logloss_never_rises(
        rows in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, any::<bool>()), 20..150),
        depth in 1usize..4,
    ) {
        let labels: Vec<bool> = rows.iter().map(|r| r.2).collect();
        let t = table(&rows.iter().map(|r| (r.0, r.1)).collect::<Vec<_>>());
        let h = train_with(&t, &labels, &params(depth, 30), &TrainOptions::default()).unwrap().history;
        for w in h.windows(2) {
            prop_assert!(w[1].train_logloss <= w[0].train_logloss + 1e-12);
        }
    }

    #[test]
    fn trained_trees_respect_depth(
        rows in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, any::<bool>()), 10..80),
        depth in 1usize..4,
    ) {
        let labels: Vec<bool> = rows.iter().map(|r| r.2).collect();
        let t = table(&rows.iter().map(|r| (r.0, r.1)).collect::<Vec<_>>());
        let e = train(&t, &labels, &params(depth, 5)).unwrap();
        prop_assert!(e.trees.iter().all(|tr| tr.depth() <= depth));
        prop_assert!(e.validate().is_ok());
    }
}

#[test]
fn same_seed_same_model_with_subsampling() {
    let rows: Vec<(f64, f64)> = (0..300)
        .map(|i| ((i % 31) as f64, ((i * 17) % 23) as f64))
        .collect();
    let labels: Vec<bool> = rows.iter().map(|r| r.0 + r.1 > 25.0).collect();
    let p = BoostParams {
        subsample: 0.5,
        seed: 3,
        ..params(2, 20)
    };
    let a = train(&table(&rows), &labels, &p).unwrap();
    let b = train(&table(&rows), &labels, &p).unwrap();
    assert_eq!(a, b);
}

#[test]
fn early_stopping_truncates_to_best_round() {
    let rows: Vec<(f64, f64)> = (0..400)
        .map(|i| ((i % 37) as f64, ((i * 13) % 29) as f64))
        .collect();
    let labels: Vec<bool> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| r.0 > 18.0 || i % 9 == 0)
        .collect();
    let (tr, va) = rows.split_at(300);
    let (ltr, lva) = labels.split_at(300);
    let valid = table(va);
    let p = BoostParams {
        n_rounds: 200,
        early_stopping_rounds: 5,
        ..params(3, 200)
    };
    let opts = TrainOptions {
        validation: Some(Validation {
            table: &valid,
            labels: lva,
        }),
        ..TrainOptions::default()
    };
    let out = train_with(&table(tr), ltr, &p, &opts).unwrap();
    assert_eq!(out.ensemble.trees.len(), out.best_rounds);
    assert!(out.best_rounds < 200);
    let best = out
        .history
        .iter()
        .map(|r| r.valid_auroc.unwrap())
        .fold(f64::MIN, f64::max);
    assert_eq!(out.history[out.best_rounds - 1].valid_auroc.unwrap(), best);
}
