//! JSON model files. Trees are flat node arrays; leaves use `-1` child and
//! feature sentinels. Floats are written with shortest round-trip
//! formatting, so save then load is the identity.

use std::path::Path;

use ahfx_core::boost::{BoostParams, Ensemble, Node, NodeKind, Tree};
use serde::{Deserialize, Serialize};

use crate::error::{read_text, write_file, AppError, AppResult};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRecord {
    feature: i64,
    threshold: f64,
    default_left: bool,
    left: i64,
    right: i64,
    gain: f64,
    value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cover: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeRecord {
    nodes: Vec<NodeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    schema_version: String,
    params: BoostParams,
    base_score: f64,
    feature_names: Vec<String>,
    trees: Vec<TreeRecord>,
}

fn node_record(n: &Node) -> NodeRecord {
    let cover = (!n.cover.is_nan()).then_some(n.cover);
    match n.kind {
        NodeKind::Split {
            feature,
            threshold,
            default_left,
            left,
            right,
            gain,
        } => NodeRecord {
            feature: feature as i64,
            threshold,
            default_left,
            left: left as i64,
            right: right as i64,
            gain,
            value: 0.0,
            cover,
        },
        NodeKind::Leaf { value } => NodeRecord {
            feature: -1,
            threshold: 0.0,
            default_left: false,
            left: -1,
            right: -1,
            gain: 0.0,
            value,
            cover,
        },
    }
}

fn node_from(r: &NodeRecord, tree: usize, idx: usize) -> AppResult<Node> {
    let bad = |m: &str| AppError::invalid(format!("tree {tree}, node {idx}: {m}"));
    let kind = match (r.feature, r.left, r.right) {
        (-1, -1, -1) => NodeKind::Leaf { value: r.value },
        (f, l, rr) if f >= 0 && l >= 0 && rr >= 0 => NodeKind::Split {
            feature: f as usize,
            threshold: r.threshold,
            default_left: r.default_left,
            left: l as usize,
            right: rr as usize,
            gain: r.gain,
        },
        _ => return Err(bad("leaf sentinels must all be -1, split indices all >= 0")),
    };
    Ok(Node {
        kind,
        cover: r.cover.unwrap_or(f64::NAN),
    })
}

pub fn model_to_json(model: &Ensemble) -> String {
    let file = ModelFile {
        schema_version: SCHEMA_VERSION.into(),
        params: model.params.clone(),
        base_score: model.base_score,
        feature_names: model.feature_names.clone(),
        trees: model
            .trees
            .iter()
            .map(|t| TreeRecord {
                nodes: t.nodes.iter().map(node_record).collect(),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("model serializes");
    s.push('\n');
    s
}

pub fn model_from_json(text: &str, origin: &str) -> AppResult<Ensemble> {
    let value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| AppError::invalid(format!("{origin}: malformed model: {e}")))?;
    match value.get("schema_version").and_then(|v| v.as_str()) {
        Some(SCHEMA_VERSION) => {}
        Some(v) => {
            return Err(AppError::invalid(format!(
                "{origin}: unsupported schema_version `{v}` (expected `{SCHEMA_VERSION}`)"
            )))
        }
        None => {
            return Err(AppError::invalid(format!(
                "{origin}: missing schema_version"
            )))
        }
    }
    let file: ModelFile = serde_json::from_value(value)
        .map_err(|e| AppError::invalid(format!("{origin}: malformed model: {e}")))?;
    let mut trees = Vec::with_capacity(file.trees.len());
    for (ti, t) in file.trees.iter().enumerate() {
        let nodes = t
            .nodes
            .iter()
            .enumerate()
            .map(|(ni, n)| node_from(n, ti, ni))
            .collect::<AppResult<Vec<_>>>()
            .map_err(|e| AppError::invalid(format!("{origin}: {e}")))?;
        trees.push(Tree { nodes });
    }
    let model = Ensemble {
        trees,
        base_score: file.base_score,
        feature_names: file.feature_names,
        params: file.params,
    };
    model.validate()?;
    Ok(model)
}

pub fn save_model(model: &Ensemble, path: &Path) -> AppResult<()> {
    write_file(path, model_to_json(model).as_bytes())
}

pub fn load_model(path: &Path) -> AppResult<Ensemble> {
    model_from_json(&read_text(path)?, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stump() -> Ensemble {
        let mut e = Ensemble::empty(vec!["a".into(), "b".into()], 0.0);
        e.trees.push(Tree {
            nodes: vec![
                Node {
                    kind: NodeKind::Split {
                        feature: 1,
                        threshold: 0.1 + 0.2,
                        default_left: true,
                        left: 1,
                        right: 2,
                        gain: 2.0,
                    },
                    cover: 10.0,
                },
                Node::leaf(-1.0 / 3.0, 3.0),
                Node::leaf(2.0, f64::NAN),
            ],
        });
        e
    }

    #[test]
    fn round_trip_is_exact() {
        let m = stump();
        let json = model_to_json(&m);
        let back = model_from_json(&json, "m").unwrap();
        assert_eq!(model_to_json(&back), json);
        assert_eq!(back.trees[0].nodes[1], m.trees[0].nodes[1]);
        assert!(back.trees[0].nodes[2].cover.is_nan());
        assert_eq!(
            back.margin(&[None, Some(0.0)]),
            m.margin(&[None, Some(0.0)])
        );
    }

    #[test]
    fn version_mismatch() {
        let json = model_to_json(&stump())
            .replace("\"schema_version\": \"1\"", "\"schema_version\": \"2\"");
        let e = model_from_json(&json, "m").unwrap_err().to_string();
        assert!(e.contains("schema_version"), "{e}");
    }
}
