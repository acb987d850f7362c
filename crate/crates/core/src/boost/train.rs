//! Exact greedy, level-wise tree growth for binary logistic loss.
//!
//! Per round: gradients `g = w·(p − y)` and hessians `h = w·p(1 − p)` at the
//! current margin (`w` is the positive-class weight for positives, 1
//! otherwise), rows Bernoulli-subsampled, then each level of the tree is
//! grown by scanning every feature's pre-sorted present values once for all
//! open nodes. Missing values are tried on both sides of every candidate and
//! the better side becomes the node's default direction.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::evaluation::auroc;
use crate::stats::sigmoid;
use crate::table::FeatureTable;

use super::params::BoostParams;
use super::tree::{Ensemble, Node, NodeKind, Tree};

/// Smallest half-gain a split must realize, on top of `gamma`.
const MIN_SPLIT_GAIN: f64 = 1e-9;
/// Hessian floor, so covers stay strictly positive.
const MIN_HESSIAN: f64 = 1e-16;

/// Held-out rows for early stopping.
#[derive(Debug, Clone, Copy)]
pub struct Validation<'a> {
    pub table: &'a FeatureTable,
    pub labels: &'a [bool],
}

#[derive(Debug, Clone, Copy)]
pub struct TrainOptions<'a> {
    pub validation: Option<Validation<'a>>,
    /// When false, missing values always go right and no direction is
    /// learned.
    pub learn_missing_direction: bool,
}

impl Default for TrainOptions<'_> {
    fn default() -> Self {
        Self {
            validation: None,
            learn_missing_direction: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundRecord {
    /// Weighted mean logloss on the training rows after the round.
    pub train_logloss: f64,
    pub valid_auroc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Training {
    pub ensemble: Ensemble,
    pub history: Vec<RoundRecord>,
    /// Number of trees kept (after early-stopping truncation).
    pub best_rounds: usize,
}

pub fn train(table: &FeatureTable, labels: &[bool], params: &BoostParams) -> Result<Ensemble> {
    Ok(train_with(table, labels, params, &TrainOptions::default())?.ensemble)
}

pub fn train_with(
    table: &FeatureTable,
    labels: &[bool],
    params: &BoostParams,
    opts: &TrainOptions<'_>,
) -> Result<Training> {
    params.validate()?;
    if table.n_features() == 0 {
        return Err(Error::Empty("feature table has no features".into()));
    }
    if table.is_empty() {
        return Err(Error::Empty("feature table has no rows".into()));
    }
    if labels.len() != table.n_rows() {
        return Err(Error::InvalidParam(alloc::format!(
            "{} labels for {} rows",
            labels.len(),
            table.n_rows()
        )));
    }
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let columns = Columns::new(table)?;
    let pos_weight = params.scale_pos_weight.resolve(n_pos, n_neg);
    let weights: Vec<f64> = labels
        .iter()
        .map(|&y| if y { pos_weight } else { 1.0 })
        .collect();

    let validation = match opts.validation {
        Some(v) if params.early_stopping_rounds > 0 => {
            let aligned = (0..v.table.n_rows())
                .map(|r| {
                    table
                        .names()
                        .iter()
                        .map(|n| v.table.value(r, n))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            let has_both = v.labels.iter().any(|&y| y) && v.labels.iter().any(|&y| !y);
            (has_both && v.labels.len() == aligned.len()).then_some((aligned, v.labels))
        }
        _ => None,
    };

    let n = table.n_rows();
    let mut margin = vec![params.base_score; n];
    let mut valid_margin = validation
        .as_ref()
        .map(|(rows, _)| vec![params.base_score; rows.len()]);
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut trees = Vec::with_capacity(params.n_rounds);
    let mut history = Vec::with_capacity(params.n_rounds);
    let mut best: Option<(f64, usize)> = None;

    for round in 0..params.n_rounds {
        for i in 0..n {
            let p = sigmoid(margin[i]);
            let y = if labels[i] { 1.0 } else { 0.0 };
            grad[i] = weights[i] * (p - y);
            hess[i] = (weights[i] * p * (1.0 - p)).max(MIN_HESSIAN);
        }
        let sampled: Vec<usize> = if params.subsample >= 1.0 {
            (0..n).collect()
        } else {
            (0..n)
                .filter(|_| rng.random::<f64>() < params.subsample)
                .collect()
        };
        let builder = TreeBuilder {
            columns: &columns,
            grad: &grad,
            hess: &hess,
            params,
            learn_missing: opts.learn_missing_direction,
        };
        let tree = builder.build(&sampled);
        for (i, m) in margin.iter_mut().enumerate() {
            *m += tree.predict(&columns.row(i));
        }
        let train_logloss = weighted_logloss(&margin, labels, &weights);

        let mut valid_auroc = None;
        if let (Some((rows, vlabels)), Some(vm)) = (&validation, valid_margin.as_mut()) {
            for (m, x) in vm.iter_mut().zip(rows) {
                *m += tree.predict(x);
            }
            let score = auroc(vm, vlabels)?;
            valid_auroc = Some(score);
            match best {
                Some((b, _)) if score <= b => {}
                _ => best = Some((score, round)),
            }
        }
        trees.push(tree);
        history.push(RoundRecord {
            train_logloss,
            valid_auroc,
        });
        if let Some((_, best_round)) = best {
            if round - best_round >= params.early_stopping_rounds {
                break;
            }
        }
    }
    let best_rounds = best.map_or(trees.len(), |(_, r)| r + 1);
    trees.truncate(best_rounds);

    Ok(Training {
        ensemble: Ensemble {
            trees,
            base_score: params.base_score,
            feature_names: table.names().to_vec(),
            params: params.clone(),
        },
        history,
        best_rounds,
    })
}

fn weighted_logloss(margin: &[f64], labels: &[bool], weights: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut wsum = 0.0;
    for ((&m, &y), &w) in margin.iter().zip(labels).zip(weights) {
        // log(1 + e^-m) for positives, log(1 + e^m) for negatives.
        let z = if y { -m } else { m };
        let loss = if z > 0.0 {
            z + libm::log1p(libm::exp(-z))
        } else {
            libm::log1p(libm::exp(z))
        };
        total += w * loss;
        wsum += w;
    }
    total / wsum
}

/// Column-major copy of the table with NaN for missing, plus per-feature
/// present rows sorted by value (ties by row index) and missing rows.
struct Columns {
    n_rows: usize,
    values: Vec<Vec<f64>>,
    sorted: Vec<Vec<usize>>,
    missing: Vec<Vec<usize>>,
}

impl Columns {
    fn new(table: &FeatureTable) -> Result<Self> {
        let n_rows = table.n_rows();
        let mut values = Vec::with_capacity(table.n_features());
        let mut sorted = Vec::with_capacity(table.n_features());
        let mut missing = Vec::with_capacity(table.n_features());
        for f in 0..table.n_features() {
            let mut col = Vec::with_capacity(n_rows);
            let mut present = Vec::new();
            let mut absent = Vec::new();
            for r in 0..n_rows {
                match table.get(r, f) {
                    Some(v) if !v.is_finite() => {
                        return Err(Error::NonFinite {
                            feature: table.names()[f].clone(),
                            row: r,
                        })
                    }
                    Some(v) => {
                        col.push(v);
                        present.push(r);
                    }
                    None => {
                        col.push(f64::NAN);
                        absent.push(r);
                    }
                }
            }
            present.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
            values.push(col);
            sorted.push(present);
            missing.push(absent);
        }
        Ok(Self {
            n_rows,
            values,
            sorted,
            missing,
        })
    }

    fn get(&self, row: usize, feature: usize) -> Option<f64> {
        let v = self.values[feature][row];
        (!v.is_nan()).then_some(v)
    }

    fn row(&self, row: usize) -> Vec<Option<f64>> {
        (0..self.values.len()).map(|f| self.get(row, f)).collect()
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct GradPair {
    g: f64,
    h: f64,
}

impl GradPair {
    fn add(&mut self, g: f64, h: f64) {
        self.g += g;
        self.h += h;
    }

    fn sub(self, o: GradPair) -> GradPair {
        GradPair {
            g: self.g - o.g,
            h: self.h - o.h,
        }
    }

    fn plus(self, o: GradPair) -> GradPair {
        GradPair {
            g: self.g + o.g,
            h: self.h + o.h,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    threshold: f64,
    default_left: bool,
    gain: f64,
}

struct TreeBuilder<'a> {
    columns: &'a Columns,
    grad: &'a [f64],
    hess: &'a [f64],
    params: &'a BoostParams,
    learn_missing: bool,
}

const INACTIVE: usize = usize::MAX;

impl TreeBuilder<'_> {
    fn build(&self, rows: &[usize]) -> Tree {
        let mut node_of = vec![INACTIVE; self.columns.n_rows];
        for &r in rows {
            node_of[r] = 0;
        }
        let mut nodes: Vec<Node> = vec![Node::leaf(0.0, 0.0)];
        let mut frontier: Vec<usize> = vec![0];

        for _depth in 0..self.params.max_depth {
            if frontier.is_empty() {
                break;
            }
            let mut slot_of = vec![INACTIVE; nodes.len()];
            for (s, &node) in frontier.iter().enumerate() {
                slot_of[node] = s;
            }
            let totals = self.node_totals(rows, &node_of, &slot_of, frontier.len());
            for (s, &node) in frontier.iter().enumerate() {
                nodes[node].cover = totals[s].h;
            }
            let best = self.find_splits(&node_of, &slot_of, &totals);

            let mut next = Vec::new();
            let mut child_of_slot = vec![None; frontier.len()];
            for (s, &node) in frontier.iter().enumerate() {
                match best[s] {
                    Some(c) => {
                        let left = nodes.len();
                        let right = left + 1;
                        nodes.push(Node::leaf(0.0, 0.0));
                        nodes.push(Node::leaf(0.0, 0.0));
                        nodes[node].kind = NodeKind::Split {
                            feature: c.feature,
                            threshold: c.threshold,
                            default_left: c.default_left,
                            left,
                            right,
                            gain: c.gain,
                        };
                        child_of_slot[s] = Some((c, left, right));
                        next.push(left);
                        next.push(right);
                    }
                    None => self.finish_leaf(&mut nodes[node], totals[s]),
                }
            }
            for &r in rows {
                let node = node_of[r];
                if node == INACTIVE {
                    continue;
                }
                let s = slot_of[node];
                if s == INACTIVE {
                    continue;
                }
                node_of[r] = match child_of_slot[s] {
                    Some((c, left, right)) => {
                        let go_left = match self.columns.get(r, c.feature) {
                            Some(v) => v < c.threshold,
                            None => c.default_left,
                        };
                        if go_left {
                            left
                        } else {
                            right
                        }
                    }
                    None => INACTIVE,
                };
            }
            frontier = next;
        }

        if !frontier.is_empty() {
            let mut slot_of = vec![INACTIVE; nodes.len()];
            for (s, &node) in frontier.iter().enumerate() {
                slot_of[node] = s;
            }
            let totals = self.node_totals(rows, &node_of, &slot_of, frontier.len());
            for (s, &node) in frontier.iter().enumerate() {
                self.finish_leaf(&mut nodes[node], totals[s]);
            }
        }
        Tree { nodes }
    }

    fn finish_leaf(&self, node: &mut Node, total: GradPair) {
        node.kind = NodeKind::Leaf {
            value: self.params.eta * leaf_weight(total.g, total.h, self.params),
        };
        node.cover = total.h;
    }

    fn node_totals(
        &self,
        rows: &[usize],
        node_of: &[usize],
        slot_of: &[usize],
        n: usize,
    ) -> Vec<GradPair> {
        let mut totals = vec![GradPair::default(); n];
        for &r in rows {
            let node = node_of[r];
            if node != INACTIVE && slot_of[node] != INACTIVE {
                totals[slot_of[node]].add(self.grad[r], self.hess[r]);
            }
        }
        totals
    }

    fn slot(&self, r: usize, node_of: &[usize], slot_of: &[usize]) -> Option<usize> {
        let node = node_of[r];
        if node == INACTIVE {
            return None;
        }
        let s = slot_of[node];
        (s != INACTIVE).then_some(s)
    }

    /// Best split per frontier slot; features ascending, thresholds
    /// ascending, replacing only on strictly greater gain.
    fn find_splits(
        &self,
        node_of: &[usize],
        slot_of: &[usize],
        totals: &[GradPair],
    ) -> Vec<Option<Candidate>> {
        let n_slots = totals.len();
        let p = self.params;
        let parent_score: Vec<f64> = totals.iter().map(|t| node_score(t.g, t.h, p)).collect();
        let mut best: Vec<Option<Candidate>> = vec![None; n_slots];

        for f in 0..self.columns.values.len() {
            let mut miss = vec![GradPair::default(); n_slots];
            let mut n_miss = vec![0usize; n_slots];
            for &r in &self.columns.missing[f] {
                if let Some(s) = self.slot(r, node_of, slot_of) {
                    miss[s].add(self.grad[r], self.hess[r]);
                    n_miss[s] += 1;
                }
            }
            let mut acc = vec![GradPair::default(); n_slots];
            let mut prev: Vec<Option<f64>> = vec![None; n_slots];
            let col = &self.columns.values[f];
            for &r in &self.columns.sorted[f] {
                let Some(s) = self.slot(r, node_of, slot_of) else {
                    continue;
                };
                let v = col[r];
                if let Some(pv) = prev[s] {
                    if v > pv {
                        let threshold = midpoint(pv, v);
                        let present_right = totals[s].sub(miss[s]).sub(acc[s]);
                        let mut directions: [(bool, GradPair, GradPair); 2] = [
                            (false, acc[s], present_right.plus(miss[s])),
                            (true, acc[s].plus(miss[s]), present_right),
                        ];
                        let n_dirs = if self.learn_missing && n_miss[s] > 0 {
                            2
                        } else {
                            1
                        };
                        for &mut (default_left, l, rgt) in &mut directions[..n_dirs] {
                            if l.h < p.min_child_weight || rgt.h < p.min_child_weight {
                                continue;
                            }
                            let gain = 0.5
                                * (node_score(l.g, l.h, p) + node_score(rgt.g, rgt.h, p)
                                    - parent_score[s]);
                            if gain <= MIN_SPLIT_GAIN || gain < p.gamma {
                                continue;
                            }
                            if best[s].is_none_or(|b| gain > b.gain) {
                                best[s] = Some(Candidate {
                                    feature: f,
                                    threshold,
                                    default_left,
                                    gain,
                                });
                            }
                        }
                    }
                }
                acc[s].add(self.grad[r], self.hess[r]);
                prev[s] = Some(v);
            }
        }
        best
    }
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m <= a || m > b {
        b
    } else {
        m
    }
}

/// `sign(g)·max(|g| − alpha, 0)`.
pub fn soft_threshold(g: f64, alpha: f64) -> f64 {
    if g > alpha {
        g - alpha
    } else if g < -alpha {
        g + alpha
    } else {
        0.0
    }
}

/// Newton leaf weight `−T_α(G)/(H + λ)`, clipped to `max_delta_step` when
/// that is positive.
pub fn leaf_weight(g: f64, h: f64, p: &BoostParams) -> f64 {
    let denom = h + p.lambda;
    if denom <= 0.0 {
        return 0.0;
    }
    let w = -soft_threshold(g, p.alpha) / denom;
    if p.max_delta_step > 0.0 {
        w.clamp(-p.max_delta_step, p.max_delta_step)
    } else {
        w
    }
}

/// Twice the objective reduction of the optimal leaf: `T_α(G)²/(H + λ)`
/// without clipping, evaluated at the clipped weight otherwise.
pub fn node_score(g: f64, h: f64, p: &BoostParams) -> f64 {
    let denom = h + p.lambda;
    if denom <= 0.0 {
        return 0.0;
    }
    if p.max_delta_step > 0.0 {
        let w = leaf_weight(g, h, p);
        -(2.0 * g * w + denom * w * w + 2.0 * p.alpha * libm::fabs(w))
    } else {
        let t = soft_threshold(g, p.alpha);
        t * t / denom
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boost::params::ScalePosWeight;
    use alloc::string::ToString;

    fn one_feature(xs: &[f64]) -> FeatureTable {
        let mut t = FeatureTable::new(vec!["x".to_string()]).unwrap();
        for (i, &x) in xs.iter().enumerate() {
            t.push_row(alloc::format!("r{i}"), vec![Some(x)]).unwrap();
        }
        t
    }

    fn plain(depth: usize, rounds: usize) -> BoostParams {
        BoostParams {
            eta: 1.0,
            gamma: 0.0,
            max_depth: depth,
            min_child_weight: 0.0,
            subsample: 1.0,
            lambda: 0.0,
            alpha: 0.0,
            n_rounds: rounds,
            early_stopping_rounds: 0,
            ..BoostParams::default()
        }
    }

    #[test]
    fn four_point_stump() {
        let t = one_feature(&[1.0, 2.0, 3.0, 4.0]);
        let e = train(&t, &[false, false, true, true], &plain(1, 1)).unwrap();
        let tree = &e.trees[0];
        match tree.nodes[0].kind {
            NodeKind::Split {
                threshold,
                gain,
                left,
                right,
                ..
            } => {
                assert_eq!(threshold, 2.5);
                assert_eq!(gain, 2.0);
                assert_eq!(tree.nodes[left].kind, NodeKind::Leaf { value: -2.0 });
                assert_eq!(tree.nodes[right].kind, NodeKind::Leaf { value: 2.0 });
                assert_eq!(tree.nodes[0].cover, 1.0);
                assert_eq!(tree.nodes[left].cover, 0.5);
            }
            other => panic!("expected split, got {other:?}"),
        }
    }

    #[test]
    fn soft_threshold_leaves() {
        let p = BoostParams {
            lambda: 0.0,
            alpha: 4.0,
            max_delta_step: 0.0,
            ..BoostParams::default()
        };
        assert_eq!(leaf_weight(3.0, 1.0, &p), 0.0);
        let p = BoostParams {
            lambda: 1.0,
            alpha: 4.0,
            ..p
        };
        assert!((leaf_weight(-6.0, 2.0, &p) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn max_delta_step_clips() {
        let p = BoostParams {
            lambda: 0.0,
            alpha: 0.0,
            max_delta_step: 0.5,
            ..BoostParams::default()
        };
        assert_eq!(leaf_weight(-10.0, 1.0, &p), 0.5);
        // Score at the clipped weight: −(2·(−10)·0.5 + 1·0.25) = 9.75.
        assert_eq!(node_score(-10.0, 1.0, &p), 9.75);
    }

    #[test]
    fn balanced_weight_on_published_prevalence() {
        // 77 positives in 1000 rows.
        let w = ScalePosWeight::Balanced.resolve(77, 923);
        assert!((w - 11.987).abs() < 1e-3);
    }

    #[test]
    fn missing_values_learn_a_direction() {
        // Missing rows are positives; the learned default must send them to
        // the positive (right) leaf.
        let mut t = FeatureTable::new(vec!["x".to_string()]).unwrap();
        let rows = [
            (Some(1.0), false),
            (Some(2.0), false),
            (Some(3.0), true),
            (None, true),
            (None, true),
        ];
        let labels: Vec<bool> = rows.iter().map(|r| r.1).collect();
        for (i, (x, _)) in rows.iter().enumerate() {
            t.push_row(alloc::format!("r{i}"), vec![*x]).unwrap();
        }
        let e = train(&t, &labels, &plain(1, 1)).unwrap();
        let (m, _) = e.predict(&[None]);
        assert!(m > 0.0);
        let (m_low, _) = e.predict(&[Some(1.0)]);
        assert!(m_low < 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let t = one_feature(&[1.0, 2.0]);
        assert_eq!(
            train(&t, &[true, true], &plain(1, 1)).unwrap_err(),
            Error::SingleClass
        );
        let empty = FeatureTable::new(vec!["x".to_string()]).unwrap();
        assert!(matches!(
            train(&empty, &[], &plain(1, 1)),
            Err(Error::Empty(_))
        ));
        let inf = one_feature(&[1.0, f64::INFINITY]);
        assert!(matches!(
            train(&inf, &[true, false], &plain(1, 1)),
            Err(Error::NonFinite { .. })
        ));
        let bad = BoostParams {
            eta: 0.0,
            ..plain(1, 1)
        };
        assert!(matches!(
            train(&t, &[true, false], &bad),
            Err(Error::InvalidParam(_))
        ));
    }
}
