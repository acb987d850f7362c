//! Exact path-dependent Shapley attributions for tree ensembles.
//!
//! Conditional expectations follow the tree: a split on a feature outside
//! the coalition sends mass to both children in proportion to their covers.
//! Covers come from training (hessian mass) or from counting a background
//! table through the trees.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::boost::{Ensemble, NodeKind, Tree};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::table::FeatureTable;

/// Largest feature count accepted by [`Explainer::brute_force`].
pub const BRUTE_FORCE_MAX_FEATURES: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub expected_value: f64,
    pub values: Vec<f64>,
    pub margin: f64,
}

#[derive(Debug, Clone, Copy)]
struct PathElem {
    feature: Option<usize>,
    zero: f64,
    one: f64,
    weight: f64,
}

fn extend(path: &mut Vec<PathElem>, zero: f64, one: f64, feature: Option<usize>) {
    let l = path.len();
    path.push(PathElem {
        feature,
        zero,
        one,
        weight: if l == 0 { 1.0 } else { 0.0 },
    });
    let denom = (l + 1) as f64;
    for i in (0..l).rev() {
        path[i + 1].weight += one * path[i].weight * (i + 1) as f64 / denom;
        path[i].weight = zero * path[i].weight * (l - i) as f64 / denom;
    }
}

fn unwind(path: &mut Vec<PathElem>, idx: usize) {
    let d = path.len() - 1;
    let PathElem { one, zero, .. } = path[idx];
    let mut next = path[d].weight;
    let denom = (d + 1) as f64;
    for i in (0..d).rev() {
        if one != 0.0 {
            let tmp = path[i].weight;
            path[i].weight = next * denom / ((i + 1) as f64 * one);
            next = tmp - path[i].weight * zero * (d - i) as f64 / denom;
        } else {
            path[i].weight = path[i].weight * denom / (zero * (d - i) as f64);
        }
    }
    for i in idx..d {
        path[i].feature = path[i + 1].feature;
        path[i].zero = path[i + 1].zero;
        path[i].one = path[i + 1].one;
    }
    path.pop();
}

/// Total permutation weight of the path with element `idx` removed.
fn unwound_sum(path: &[PathElem], idx: usize) -> f64 {
    let d = path.len() - 1;
    let PathElem { one, zero, .. } = path[idx];
    let denom = (d + 1) as f64;
    let mut total = 0.0;
    if one != 0.0 {
        let mut next = path[d].weight;
        for i in (0..d).rev() {
            let tmp = next * denom / ((i + 1) as f64 * one);
            total += tmp;
            next = path[i].weight - tmp * zero * (d - i) as f64 / denom;
        }
    } else {
        for i in (0..d).rev() {
            total += path[i].weight * denom / (zero * (d - i) as f64);
        }
    }
    total
}

fn goes_left(kind: &NodeKind, x: &[Option<f64>]) -> bool {
    match *kind {
        NodeKind::Split {
            feature,
            threshold,
            default_left,
            ..
        } => match x[feature] {
            Some(v) => v < threshold,
            None => default_left,
        },
        NodeKind::Leaf { .. } => unreachable!(),
    }
}

fn fraction(part: f64, whole: f64) -> f64 {
    if whole > 0.0 {
        part / whole
    } else {
        0.0
    }
}

struct TreeWalk<'a> {
    tree: &'a Tree,
    covers: &'a [f64],
    x: &'a [Option<f64>],
}

impl TreeWalk<'_> {
    fn recurse(
        &self,
        node: usize,
        mut path: Vec<PathElem>,
        zero: f64,
        one: f64,
        feature: Option<usize>,
        phi: &mut [f64],
    ) {
        extend(&mut path, zero, one, feature);
        match self.tree.nodes[node].kind {
            NodeKind::Leaf { value } => {
                for i in 1..path.len() {
                    let w = unwound_sum(&path, i);
                    let e = path[i];
                    phi[e.feature.expect("only the root element lacks a feature")] +=
                        w * (e.one - e.zero) * value;
                }
            }
            ref kind @ NodeKind::Split {
                feature: split,
                left,
                right,
                ..
            } => {
                let (hot, cold) = if goes_left(kind, self.x) {
                    (left, right)
                } else {
                    (right, left)
                };
                let mut in_zero = 1.0;
                let mut in_one = 1.0;
                if let Some(k) = (1..path.len()).find(|&k| path[k].feature == Some(split)) {
                    in_zero = path[k].zero;
                    in_one = path[k].one;
                    unwind(&mut path, k);
                }
                let cover = self.covers[node];
                let hot_zero = fraction(self.covers[hot], cover) * in_zero;
                let cold_zero = fraction(self.covers[cold], cover) * in_zero;
                // A branch with no mass in either coalition contributes
                // nothing and would divide by zero when unwound.
                if hot_zero != 0.0 || in_one != 0.0 {
                    self.recurse(hot, path.clone(), hot_zero, in_one, Some(split), phi);
                }
                if cold_zero != 0.0 {
                    self.recurse(cold, path, cold_zero, 0.0, Some(split), phi);
                }
            }
        }
    }

    /// E[f(X) | X_S = x_S] under the path-dependent value function.
    fn conditional(&self, node: usize, in_s: &[bool]) -> f64 {
        match self.tree.nodes[node].kind {
            NodeKind::Leaf { value } => value,
            ref kind @ NodeKind::Split {
                feature,
                left,
                right,
                ..
            } => {
                if in_s[feature] {
                    let next = if goes_left(kind, self.x) { left } else { right };
                    self.conditional(next, in_s)
                } else {
                    let c = self.covers[node];
                    let l = fraction(self.covers[left], c);
                    let r = fraction(self.covers[right], c);
                    let mut acc = 0.0;
                    if l != 0.0 {
                        acc += l * self.conditional(left, in_s);
                    }
                    if r != 0.0 {
                        acc += r * self.conditional(right, in_s);
                    }
                    acc
                }
            }
        }
    }
}

/// An ensemble paired with the node covers that weight its expectations.
#[derive(Debug, Clone)]
pub struct Explainer<'a> {
    ensemble: &'a Ensemble,
    covers: Vec<Vec<f64>>,
    expected_value: f64,
}

impl<'a> Explainer<'a> {
    /// Uses the covers recorded at training time.
    pub fn from_covers(ensemble: &'a Ensemble) -> Result<Self> {
        ensemble.validate()?;
        if ensemble.trees.iter().any(|t| !t.has_covers()) {
            return Err(Error::MissingCovers);
        }
        let covers = ensemble
            .trees
            .iter()
            .map(|t| t.nodes.iter().map(|n| n.cover).collect())
            .collect();
        Ok(Self::with_covers(ensemble, covers))
    }

    /// Covers are the number of background rows reaching each node.
    pub fn from_background(ensemble: &'a Ensemble, background: &FeatureTable) -> Result<Self> {
        ensemble.validate()?;
        if background.is_empty() {
            return Err(Error::Empty("background table has no rows".into()));
        }
        let rows: Vec<Vec<Option<f64>>> = (0..background.n_rows())
            .map(|r| ensemble.align(background.names(), background.row(r)))
            .collect::<Result<_>>()?;
        let covers = ensemble
            .trees
            .iter()
            .map(|t| {
                let mut c = vec![0.0; t.nodes.len()];
                for x in &rows {
                    let mut idx = 0;
                    loop {
                        c[idx] += 1.0;
                        match t.nodes[idx].kind {
                            NodeKind::Leaf { .. } => break,
                            ref kind @ NodeKind::Split { left, right, .. } => {
                                idx = if goes_left(kind, x) { left } else { right };
                            }
                        }
                    }
                }
                c
            })
            .collect();
        Ok(Self::with_covers(ensemble, covers))
    }

    fn with_covers(ensemble: &'a Ensemble, covers: Vec<Vec<f64>>) -> Self {
        let none = vec![false; ensemble.n_features()];
        let empty: Vec<Option<f64>> = vec![None; ensemble.n_features()];
        let expected_value =
            ensemble
                .trees
                .iter()
                .zip(&covers)
                .fold(ensemble.base_score, |acc, (tree, c)| {
                    acc + TreeWalk {
                        tree,
                        covers: c,
                        x: &empty,
                    }
                    .conditional(0, &none)
                });
        Self {
            ensemble,
            covers,
            expected_value,
        }
    }

    pub fn ensemble(&self) -> &Ensemble {
        self.ensemble
    }

    /// Cover-weighted mean leaf value summed over trees, plus base score.
    pub fn expected_value(&self) -> f64 {
        self.expected_value
    }

    /// Attributions of one tree alone; its expected value is not included.
    pub fn tree_values(&self, tree: usize, x: &[Option<f64>]) -> Vec<f64> {
        let mut phi = vec![0.0; self.ensemble.n_features()];
        let walk = TreeWalk {
            tree: &self.ensemble.trees[tree],
            covers: &self.covers[tree],
            x,
        };
        walk.recurse(0, Vec::new(), 1.0, 1.0, None, &mut phi);
        phi
    }

    /// `x` is aligned with the ensemble's feature order.
    pub fn explain(&self, x: &[Option<f64>]) -> Explanation {
        let mut phi = vec![0.0; self.ensemble.n_features()];
        for t in 0..self.ensemble.trees.len() {
            for (p, v) in phi.iter_mut().zip(self.tree_values(t, x)) {
                *p += v;
            }
        }
        Explanation {
            expected_value: self.expected_value,
            values: phi,
            margin: self.ensemble.margin(x),
        }
    }

    /// Explains every row of `table`, aligning columns by name.
    pub fn explain_table<E: Executor>(
        &self,
        exec: &E,
        table: &FeatureTable,
    ) -> Result<Vec<Explanation>> {
        let rows: Vec<Vec<Option<f64>>> = (0..table.n_rows())
            .map(|r| self.ensemble.align(table.names(), table.row(r)))
            .collect::<Result<_>>()?;
        Ok(exec.map(rows.len(), |r| self.explain(&rows[r])))
    }

    /// Classic Shapley sum over all coalitions with the same value function.
    pub fn brute_force(&self, x: &[Option<f64>]) -> Result<Vec<f64>> {
        let n = self.ensemble.n_features();
        if n > BRUTE_FORCE_MAX_FEATURES {
            return Err(Error::TooManyFeatures {
                max: BRUTE_FORCE_MAX_FEATURES,
                got: n,
            });
        }
        let value: Vec<f64> = (0..1usize << n)
            .map(|mask| {
                let in_s: Vec<bool> = (0..n).map(|j| mask >> j & 1 == 1).collect();
                self.ensemble
                    .trees
                    .iter()
                    .zip(&self.covers)
                    .map(|(tree, c)| TreeWalk { tree, covers: c, x }.conditional(0, &in_s))
                    .sum()
            })
            .collect();
        // weight[s] = s! (n - s - 1)! / n!
        let mut fact = vec![1.0f64; n + 1];
        for i in 1..=n {
            fact[i] = fact[i - 1] * i as f64;
        }
        let mut phi = vec![0.0; n];
        for (j, p) in phi.iter_mut().enumerate() {
            for mask in 0..1usize << n {
                if mask >> j & 1 == 1 {
                    continue;
                }
                let s = mask.count_ones() as usize;
                let w = fact[s] * fact[n - s - 1] / fact[n];
                *p += w * (value[mask | 1 << j] - value[mask]);
            }
        }
        Ok(phi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeeswarmRow {
    pub scan_id: String,
    pub feature: String,
    pub shap: f64,
    /// `None` marks a missing raw value.
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapSummary {
    /// (feature, mean |φ|), sorted descending; ties keep feature order.
    pub bar: Vec<(String, f64)>,
    pub beeswarm: Vec<BeeswarmRow>,
}

/// Mean absolute attribution per feature plus per-(scan, feature) points.
pub fn shap_summary<E: Executor>(
    exec: &E,
    explainer: &Explainer<'_>,
    table: &FeatureTable,
) -> Result<ShapSummary> {
    if table.is_empty() {
        return Err(Error::Empty("no rows to summarize".into()));
    }
    let ens = explainer.ensemble();
    let explanations = explainer.explain_table(exec, table)?;
    let n = table.n_rows() as f64;
    let mut bar: Vec<(usize, f64)> = (0..ens.n_features())
        .map(|j| {
            (
                j,
                explanations.iter().map(|e| e.values[j].abs()).sum::<f64>() / n,
            )
        })
        .collect();
    bar.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut beeswarm = Vec::with_capacity(bar.len() * table.n_rows());
    for &(j, _) in &bar {
        let name = &ens.feature_names[j];
        let col = table.column_index(name);
        for (r, e) in explanations.iter().enumerate() {
            beeswarm.push(BeeswarmRow {
                scan_id: table.row_ids()[r].clone(),
                feature: name.clone(),
                shap: e.values[j],
                value: col.and_then(|c| table.get(r, c)),
            });
        }
    }
    Ok(ShapSummary {
        bar: bar
            .into_iter()
            .map(|(j, v)| (ens.feature_names[j].clone(), v))
            .collect(),
        beeswarm,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterfallRecord {
    pub feature: String,
    pub shap: f64,
    pub value: Option<f64>,
    /// Cumulative margin after adding this record.
    pub running_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waterfall {
    /// Mean log odds over the cover population.
    pub expected_value: f64,
    pub margin: f64,
    pub probability: f64,
    pub records: Vec<WaterfallRecord>,
}

/// Records ordered by |φ| descending (ties by feature order). Features with
/// zero attribution are omitted. The final running total is set to the
/// margin so the chart closes exactly.
pub fn waterfall(explainer: &Explainer<'_>, x: &[Option<f64>]) -> Waterfall {
    let ens = explainer.ensemble();
    let e = explainer.explain(x);
    let mut order: Vec<usize> = (0..e.values.len())
        .filter(|&j| e.values[j] != 0.0)
        .collect();
    order.sort_by(|&a, &b| {
        e.values[b]
            .abs()
            .total_cmp(&e.values[a].abs())
            .then(a.cmp(&b))
    });
    let mut total = e.expected_value;
    let mut records: Vec<WaterfallRecord> = order
        .iter()
        .map(|&j| {
            total += e.values[j];
            WaterfallRecord {
                feature: ens.feature_names[j].clone(),
                shap: e.values[j],
                value: x[j],
                running_total: total,
            }
        })
        .collect();
    if let Some(last) = records.last_mut() {
        last.running_total = e.margin;
    }
    Waterfall {
        expected_value: e.expected_value,
        margin: e.margin,
        probability: crate::stats::sigmoid(e.margin),
        records,
    }
}
