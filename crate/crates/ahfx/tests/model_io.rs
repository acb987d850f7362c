use ahfx::model_io::{model_from_json, model_to_json};
use ahfx_core::boost::{Ensemble, Node, NodeKind, Tree};
use proptest::prelude::*;

proptest! {
    #[test]
    fn save_then_load_is_identity(
        base in any::<f64>().prop_filter("finite", |v| v.is_finite()),
        stumps in prop::collection::vec(
            (0usize..3, any::<f64>(), any::<bool>(), -1e3f64..1e3, -1e3f64..1e3, 0.0f64..1e6),
            1..10,
        ),
    ) {
        let mut e = Ensemble::empty(vec!["a".into(), "b".into(), "c".into()], base);
        for (feature, threshold, default_left, l, r, cover) in stumps {
            let threshold = if threshold.is_finite() { threshold } else { 0.0 };
            e.trees.push(Tree {
                nodes: vec![
                    Node {
                        kind: NodeKind::Split {
                            feature,
                            threshold,
                            default_left,
                            left: 1,
                            right: 2,
                            gain: cover / 3.0,
                        },
                        cover,
                    },
                    Node::leaf(l, cover / 2.0),
                    Node::leaf(r, cover / 2.0),
                ],
            });
        }
        let back = model_from_json(&model_to_json(&e), "m").unwrap();
        prop_assert_eq!(back, e);
    }
}
