use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::stats::sigmoid;

use super::params::BoostParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeKind {
    Split {
        feature: usize,
        threshold: f64,
        /// Missing values go left when set.
        default_left: bool,
        left: usize,
        right: usize,
        gain: f64,
    },
    Leaf {
        value: f64,
    },
}

/// A tree node. `cover` is the hessian mass that reached the node during
/// training; NaN when unknown (e.g. a model loaded without covers).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub kind: NodeKind,
    pub cover: f64,
}

impl Node {
    pub fn leaf(value: f64, cover: f64) -> Self {
        Self {
            kind: NodeKind::Leaf { value },
            cover,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf { .. })
    }
}

/// Flat node array; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Index of the leaf that `x` reaches. `x[f] = None` follows the default
    /// direction; otherwise `x < threshold` goes left.
    pub fn leaf_index(&self, x: &[Option<f64>]) -> usize {
        let mut idx = 0;
        loop {
            match self.nodes[idx].kind {
                NodeKind::Leaf { .. } => return idx,
                NodeKind::Split {
                    feature,
                    threshold,
                    default_left,
                    left,
                    right,
                    ..
                } => {
                    let go_left = match x[feature] {
                        Some(v) => v < threshold,
                        None => default_left,
                    };
                    idx = if go_left { left } else { right };
                }
            }
        }
    }

    pub fn predict(&self, x: &[Option<f64>]) -> f64 {
        match self.nodes[self.leaf_index(x)].kind {
            NodeKind::Leaf { value } => value,
            NodeKind::Split { .. } => unreachable!(),
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i].kind {
                NodeKind::Leaf { .. } => 0,
                NodeKind::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        if self.nodes.is_empty() {
            0
        } else {
            go(self, 0)
        }
    }

    pub fn has_covers(&self) -> bool {
        self.nodes
            .iter()
            .all(|n| n.cover.is_finite() && n.cover >= 0.0)
    }

    /// Structural checks: child indices in range, every non-root node has
    /// exactly one parent and no cycles.
    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::InvalidParam("tree has no nodes".into()));
        }
        let mut parents = alloc::vec![0usize; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            if let NodeKind::Split {
                feature,
                left,
                right,
                threshold,
                ..
            } = node.kind
            {
                if feature >= n_features {
                    return Err(Error::InvalidParam(alloc::format!(
                        "node {i} references feature {feature} of {n_features}"
                    )));
                }
                if !threshold.is_finite() {
                    return Err(Error::InvalidParam(alloc::format!(
                        "node {i} has a non-finite threshold"
                    )));
                }
                for c in [left, right] {
                    if c <= i || c >= self.nodes.len() {
                        return Err(Error::InvalidParam(alloc::format!(
                            "node {i} has invalid child index {c}"
                        )));
                    }
                    parents[c] += 1;
                }
            }
        }
        if parents[0] != 0 || parents[1..].iter().any(|&p| p != 1) {
            return Err(Error::InvalidParam(
                "tree nodes do not form a single tree".into(),
            ));
        }
        Ok(())
    }
}

/// Additive trees in log-odds space.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub trees: Vec<Tree>,
    pub base_score: f64,
    pub feature_names: Vec<String>,
    pub params: BoostParams,
}

impl Ensemble {
    pub fn empty(feature_names: Vec<String>, base_score: f64) -> Self {
        Self {
            trees: Vec::new(),
            base_score,
            feature_names,
            params: BoostParams::default(),
        }
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Log-odds margin for a vector aligned with `feature_names`.
    pub fn margin(&self, x: &[Option<f64>]) -> f64 {
        self.trees
            .iter()
            .fold(self.base_score, |acc, t| acc + t.predict(x))
    }

    pub fn probability(&self, x: &[Option<f64>]) -> f64 {
        sigmoid(self.margin(x))
    }

    /// (margin, probability).
    pub fn predict(&self, x: &[Option<f64>]) -> (f64, f64) {
        let m = self.margin(x);
        (m, sigmoid(m))
    }

    /// Indices of features referenced by at least one split.
    pub fn used_features(&self) -> Vec<bool> {
        let mut used = alloc::vec![false; self.n_features()];
        for t in &self.trees {
            for n in &t.nodes {
                if let NodeKind::Split { feature, .. } = n.kind {
                    used[feature] = true;
                }
            }
        }
        used
    }

    /// Maps a named vector onto the ensemble's feature order. Features that
    /// no tree uses may be absent from `names` (they read as missing); a
    /// used feature that is absent is an error.
    pub fn align(&self, names: &[String], values: &[Option<f64>]) -> Result<Vec<Option<f64>>> {
        let used = self.used_features();
        self.feature_names
            .iter()
            .zip(used)
            .map(|(f, used)| match names.iter().position(|n| n == f) {
                Some(i) => Ok(values[i]),
                None if !used => Ok(None),
                None => Err(Error::UnknownFeature(f.clone())),
            })
            .collect()
    }

    /// Total realized split gain per feature, in `feature_names` order.
    pub fn feature_importance_gain(&self) -> Vec<(String, f64)> {
        let mut gains = alloc::vec![0.0; self.n_features()];
        for t in &self.trees {
            for n in &t.nodes {
                if let NodeKind::Split { feature, gain, .. } = n.kind {
                    gains[feature] += gain;
                }
            }
        }
        self.feature_names.iter().cloned().zip(gains).collect()
    }

    pub fn validate(&self) -> Result<()> {
        for t in &self.trees {
            t.validate(self.n_features())?;
        }
        Ok(())
    }
}
