use ahfx_core::boost::{train, BoostParams, Ensemble, Node, NodeKind, Tree};
use ahfx_core::shap::Explainer;
use ahfx_core::table::FeatureTable;
use proptest::prelude::*;

/// Flat description of a random tree: per node (is_leaf, feature, threshold,
/// default_left, value, cover). Built depth first so covers add up.
fn grow(
    spec: &[(bool, usize, f64, bool, f64, f64)],
    next: &mut usize,
    nodes: &mut Vec<Node>,
    n_features: usize,
    depth: usize,
) -> f64 {
    let (leaf, f, t, dl, v, c) = spec[*next % spec.len()];
    *next += 1;
    let at = nodes.len();
    if leaf || depth == 0 {
        nodes.push(Node::leaf(v, c));
        return c;
    }
    nodes.push(Node::leaf(0.0, 0.0));
    let left = nodes.len();
    let cl = grow(spec, next, nodes, n_features, depth - 1);
    let right = nodes.len();
    let cr = grow(spec, next, nodes, n_features, depth - 1);
    nodes[at] = Node {
        kind: NodeKind::Split {
            feature: f % n_features,
            threshold: t,
            default_left: dl,
            left,
            right,
            gain: 1.0,
        },
        cover: cl + cr,
    };
    cl + cr
}

fn ensembles() -> impl Strategy<Value = (Ensemble, Vec<Option<f64>>)> {
    (1usize..=12, 1usize..=3, 1usize..=20).prop_flat_map(|(nf, depth, n_trees)| {
        (
            prop::collection::vec(
                (
                    prop::bool::weighted(0.3),
                    0usize..12,
                    -1.0f64..1.0,
                    any::<bool>(),
                    -1.0f64..1.0,
                    0.1f64..5.0,
                ),
                15 * n_trees,
            ),
            prop::collection::vec(prop::option::weighted(0.9, -1.5f64..1.5), nf),
            -1.0f64..1.0,
        )
            .prop_map(move |(spec, x, base)| {
                let mut e = Ensemble::empty((0..nf).map(|j| format!("f{j}")).collect(), base);
                let mut next = 0;
                for _ in 0..n_trees {
                    let mut nodes = Vec::new();
                    grow(&spec, &mut next, &mut nodes, nf, depth);
                    e.trees.push(Tree { nodes });
                }
                (e, x)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matches_brute_force((e, x) in ensembles()) {
        let ex = Explainer::from_covers(&e).unwrap();
        let phi = ex.explain(&x);
        let bf = ex.brute_force(&x).unwrap();
        for (a, b) in phi.values.iter().zip(&bf) {
            prop_assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        }
        let total = phi.expected_value + phi.values.iter().sum::<f64>();
        prop_assert!((total - e.margin(&x)).abs() <= 1e-9);
    }

    #[test]
    fn additive_over_trees((e, x) in ensembles()) {
        let ex = Explainer::from_covers(&e).unwrap();
        let whole = ex.explain(&x).values;
        let mut sum = vec![0.0; whole.len()];
        for t in 0..e.trees.len() {
            for (s, v) in sum.iter_mut().zip(ex.tree_values(t, &x)) {
                *s += v;
            }
        }
        for (a, b) in whole.iter().zip(&sum) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn unused_features_get_zero((e, x) in ensembles()) {
        let ex = Explainer::from_covers(&e).unwrap();
        let used = e.used_features();
        for (j, v) in ex.explain(&x).values.iter().enumerate() {
            if !used[j] {
                prop_assert_eq!(*v, 0.0);
            }
        }
    }
}

#[test]
fn trained_model_explains_itself() {
    let mut t = FeatureTable::new(vec!["a".into(), "b".into(), "noise".into()]).unwrap();
    let mut labels = Vec::new();
    for i in 0..200 {
        let a = (i % 17) as f64 / 17.0;
        let b = (i % 11) as f64 / 11.0;
        let n = ((i * 7919) % 13) as f64;
        labels.push(a + 0.5 * b > 0.7);
        let a = (i % 23 != 0).then_some(a);
        t.push_row(format!("r{i}"), vec![a, Some(b), Some(n)])
            .unwrap();
    }
    let p = BoostParams {
        max_depth: 3,
        alpha: 0.0,
        lambda: 1.0,
        n_rounds: 20,
        early_stopping_rounds: 0,
        ..BoostParams::default()
    };
    let e = train(&t, &labels, &p).unwrap();
    let from_covers = Explainer::from_covers(&e).unwrap();
    let from_rows = Explainer::from_background(&e, &t).unwrap();
    for r in 0..t.n_rows() {
        let x = t.row(r);
        for ex in [&from_covers, &from_rows] {
            let phi = ex.explain(x);
            let total = phi.expected_value + phi.values.iter().sum::<f64>();
            assert!((total - e.margin(x)).abs() < 1e-9);
        }
    }
}
