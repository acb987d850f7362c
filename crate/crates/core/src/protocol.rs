//! The training protocol: subject-level split, label-balanced folds, grid
//! search, forward feature selection, pruning, retuning, and study-level
//! aggregation of scan predictions.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::boost::{
    train_with, BoostParams, Ensemble, ScalePosWeight, TrainOptions, TreeMethod, Validation,
};
use crate::error::{Error, Result};
use crate::evaluation::{auroc, calibrate_threshold, confusion_report, EvalReport};
use crate::exec::{Executor, Sequential};
use crate::table::{CohortManifest, FeatureTable, Sex};
use crate::volumetry::ZReference;

/// Test share implied by the published cohort sizes (1524 of 4672).
pub const PUBLISHED_TEST_FRACTION: f64 = 1524.0 / 4672.0;
pub const DEFAULT_EPSILON: f64 = 1e-4;

const STREAM_SPLIT: u64 = 1;
const STREAM_FOLDS: u64 = 2;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Seeded subject-level partition; `round(n · test_fraction)` subjects go to
/// test, clamped so both sides are non-empty. Both lists come back sorted.
pub fn split_cohort(subjects: &[String], test_fraction: f64, seed: u64) -> Result<CohortSplit> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidParam(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut ids: Vec<String> = subjects
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if ids.len() < 2 {
        return Err(Error::InvalidParam(
            "need at least 2 subjects to split".into(),
        ));
    }
    let n = ids.len();
    let n_test = (libm::round(n as f64 * test_fraction) as usize).clamp(1, n - 1);
    ids.shuffle(&mut stream_rng(seed, STREAM_SPLIT));
    let mut test = ids.split_off(n - n_test);
    ids.sort();
    test.sort();
    Ok(CohortSplit { train: ids, test })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, subject: &str) -> Option<usize> {
        self.fold.get(subject).copied()
    }

    pub fn members(&self, f: usize) -> Vec<&str> {
        self.fold
            .iter()
            .filter(|(_, &v)| v == f)
            .map(|(s, _)| s.as_str())
            .collect()
    }
}

/// Shuffles subjects by seed, deals positives round-robin over the folds,
/// then negatives, continuing the same counter.
pub fn make_folds(subjects: &[(String, bool)], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::InvalidParam(format!(
            "need at least 2 folds, got {k}"
        )));
    }
    let mut sorted: Vec<&(String, bool)> = subjects.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    sorted.dedup_by(|a, b| a.0 == b.0);
    if k > sorted.len() {
        return Err(Error::InvalidParam(format!(
            "{k} folds requested for {} subjects",
            sorted.len()
        )));
    }
    sorted.shuffle(&mut stream_rng(seed, STREAM_FOLDS));
    let mut fold = BTreeMap::new();
    let mut counter = 0;
    for positive in [true, false] {
        for (id, _) in sorted.iter().filter(|s| s.1 == positive) {
            fold.insert(id.clone(), counter % k);
            counter += 1;
        }
    }
    Ok(FoldAssignment { k, fold })
}

/// Mean of scan probabilities, summed in sorted order so the result does not
/// depend on input order, and clamped to the input range.
pub fn aggregate_study(probs: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::Empty("study has no scan predictions".into()));
    }
    let mut sorted = probs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    Ok(mean.clamp(sorted[0], sorted[sorted.len() - 1]))
}

/// Per subject, the study with the latest timestamp. Ties go to the
/// lexicographically greatest study id and produce a warning.
fn latest_per_subject<'a>(
    studies: impl Iterator<Item = (&'a str, &'a str, i64)>,
    subjects: &BTreeSet<&str>,
) -> (BTreeMap<&'a str, &'a str>, Vec<String>) {
    let mut best: BTreeMap<&str, (&str, i64)> = BTreeMap::new();
    let mut ties: BTreeSet<&str> = BTreeSet::new();
    for (study, subject, ts) in studies {
        if !subjects.contains(subject) {
            continue;
        }
        match best.get_mut(subject) {
            None => {
                best.insert(subject, (study, ts));
            }
            Some(cur) => {
                if ts == cur.1 {
                    ties.insert(subject);
                }
                if ts > cur.1 || (ts == cur.1 && study > cur.0) {
                    *cur = (study, ts);
                }
            }
        }
    }
    let warnings = ties
        .iter()
        .map(|s| {
            format!(
                "subject `{s}` has several studies at its latest timestamp; using `{}`",
                best[s].0
            )
        })
        .collect();
    (
        best.into_iter().map(|(s, (st, _))| (s, st)).collect(),
        warnings,
    )
}

/// The latest study of each listed subject, plus tie warnings.
pub fn select_test_studies(
    manifest: &CohortManifest,
    test_subjects: &[String],
) -> (Vec<String>, Vec<String>) {
    let info = manifest.study_info();
    let subjects: BTreeSet<&str> = test_subjects.iter().map(String::as_str).collect();
    let (chosen, warnings) =
        latest_per_subject(info.iter().map(|(st, (su, ts))| (*st, *su, *ts)), &subjects);
    let mut studies: Vec<String> = chosen.values().map(|s| String::from(*s)).collect();
    studies.sort();
    (studies, warnings)
}

/// `selected` minus `drop`; every dropped feature must be selected.
pub fn prune_features(selected: &[String], drop: &[String]) -> Result<Vec<String>> {
    if let Some(d) = drop.iter().find(|d| !selected.contains(d)) {
        return Err(Error::InvalidParam(format!(
            "cannot drop `{d}`: it is not among the selected features"
        )));
    }
    Ok(selected
        .iter()
        .filter(|f| !drop.contains(f))
        .cloned()
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub id: String,
    pub subject: String,
    pub timestamp: i64,
    pub label: bool,
    pub sex: Sex,
    pub age: f64,
}

/// Scan-level features joined with study labels and cohort structure.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: FeatureTable,
    /// Study index of each feature row.
    pub scan_study: Vec<usize>,
    pub studies: Vec<StudyRecord>,
}

impl Dataset {
    /// Joins feature rows (keyed by scan id) to the manifest and study
    /// labels. Scans whose study has no label are dropped; the returned
    /// notices say how many.
    pub fn new(
        manifest: &CohortManifest,
        features: &FeatureTable,
        study_labels: &BTreeMap<String, bool>,
    ) -> Result<(Self, Vec<String>)> {
        features.validate_unique_rows()?;
        let scan_index = manifest.scan_index();
        let info = manifest.study_info();
        let mut study_idx: BTreeMap<&str, usize> = BTreeMap::new();
        let mut studies = Vec::new();
        let mut keep = Vec::new();
        let mut scan_study = Vec::new();
        let mut unlabeled = 0usize;
        for (r, scan) in features.row_ids().iter().enumerate() {
            let &mi = scan_index.get(scan.as_str()).ok_or_else(|| {
                Error::InvalidTable(format!("scan `{scan}` is not in the manifest"))
            })?;
            let m = &manifest.rows()[mi];
            let Some(&label) = study_labels.get(&m.study_id) else {
                unlabeled += 1;
                continue;
            };
            let si = *study_idx.entry(m.study_id.as_str()).or_insert_with(|| {
                studies.push(StudyRecord {
                    id: m.study_id.clone(),
                    subject: m.subject_id.clone(),
                    timestamp: info[m.study_id.as_str()].1,
                    label,
                    sex: m.sex,
                    age: m.age,
                });
                studies.len() - 1
            });
            keep.push(r);
            scan_study.push(si);
        }
        let mut notices = Vec::new();
        if unlabeled > 0 {
            notices.push(format!(
                "{unlabeled} scans dropped: their study has no label"
            ));
        }
        if keep.is_empty() {
            return Err(Error::Empty("no labeled scans".into()));
        }
        Ok((
            Self {
                features: features.select_rows(&keep),
                scan_study,
                studies,
            },
            notices,
        ))
    }

    pub fn n_scans(&self) -> usize {
        self.scan_study.len()
    }

    pub fn scan_label(&self, scan: usize) -> bool {
        self.studies[self.scan_study[scan]].label
    }

    pub fn scan_subject(&self, scan: usize) -> &str {
        &self.studies[self.scan_study[scan]].subject
    }

    /// Sorted subject ids with their subject-level label (any positive study).
    pub fn subject_labels(&self) -> Vec<(String, bool)> {
        let mut m: BTreeMap<&str, bool> = BTreeMap::new();
        for s in &self.studies {
            *m.entry(&s.subject).or_insert(false) |= s.label;
        }
        m.into_iter().map(|(s, l)| (String::from(s), l)).collect()
    }

    pub fn scans_of_subjects(&self, subjects: &BTreeSet<&str>) -> Vec<usize> {
        (0..self.n_scans())
            .filter(|&i| subjects.contains(self.scan_subject(i)))
            .collect()
    }

    fn table(&self, scans: &[usize], features: &[String]) -> Result<FeatureTable> {
        self.features.select_rows(scans).select_columns(features)
    }

    /// Mean scan probability per study, study indices ascending.
    pub fn study_scores(&self, scans: &[usize], probs: &[f64]) -> Result<Vec<(usize, f64)>> {
        let mut by_study: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (&s, &p) in scans.iter().zip(probs) {
            by_study.entry(self.scan_study[s]).or_default().push(p);
        }
        by_study
            .into_iter()
            .map(|(s, ps)| Ok((s, aggregate_study(&ps)?)))
            .collect()
    }

    /// Scan probabilities of `ensemble` on `scans`.
    pub fn predict(&self, ensemble: &Ensemble, scans: &[usize]) -> Result<Vec<f64>> {
        let names = self.features.names();
        scans
            .iter()
            .map(|&s| Ok(ensemble.probability(&ensemble.align(names, self.features.row(s))?)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub fold_aurocs: Vec<f64>,
    pub mean_auroc: f64,
    /// Trees kept per fold after early stopping.
    pub best_rounds: Vec<usize>,
}

/// Mean held-out study-level AUROC over the folds of `train_scans`.
pub fn cv_score<E: Executor>(
    exec: &E,
    ds: &Dataset,
    train_scans: &[usize],
    folds: &FoldAssignment,
    features: &[String],
    params: &BoostParams,
) -> Result<CvOutcome> {
    let results = exec.map(folds.k, |f| -> Result<(f64, usize)> {
        let (held, fit): (Vec<usize>, Vec<usize>) = train_scans
            .iter()
            .partition(|&&s| folds.fold_of(ds.scan_subject(s)) == Some(f));
        let fit_table = ds.table(&fit, features)?;
        let held_table = ds.table(&held, features)?;
        let fit_labels: Vec<bool> = fit.iter().map(|&s| ds.scan_label(s)).collect();
        let held_labels: Vec<bool> = held.iter().map(|&s| ds.scan_label(s)).collect();
        let opts = TrainOptions {
            validation: Some(Validation {
                table: &held_table,
                labels: &held_labels,
            }),
            ..TrainOptions::default()
        };
        let trained = train_with(&fit_table, &fit_labels, params, &opts)?;
        let probs = ds.predict(&trained.ensemble, &held)?;
        let studies = ds.study_scores(&held, &probs)?;
        let scores: Vec<f64> = studies.iter().map(|s| s.1).collect();
        let labels: Vec<bool> = studies.iter().map(|s| ds.studies[s.0].label).collect();
        Ok((auroc(&scores, &labels)?, trained.best_rounds))
    });
    let mut fold_aurocs = Vec::with_capacity(folds.k);
    let mut best_rounds = Vec::with_capacity(folds.k);
    for r in results {
        let (a, b) = r?;
        fold_aurocs.push(a);
        best_rounds.push(b);
    }
    let mean_auroc = fold_aurocs.iter().sum::<f64>() / fold_aurocs.len() as f64;
    Ok(CvOutcome {
        fold_aurocs,
        mean_auroc,
        best_rounds,
    })
}

/// Candidate values per tuned parameter, in listing order. The Cartesian
/// product is enumerated with the last parameter varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub eta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub max_depth: Vec<usize>,
    pub min_child_weight: Vec<f64>,
    pub max_delta_step: Vec<f64>,
    pub subsample: Vec<f64>,
    pub lambda: Vec<f64>,
    pub alpha: Vec<f64>,
    pub tree_method: Vec<TreeMethod>,
    pub scale_pos_weight: Vec<ScalePosWeight>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::published()
    }
}

impl GridSpec {
    /// The published search space: 4·2·3·2·1·2·2·6·1·2 = 2304 points.
    pub fn published() -> Self {
        Self {
            eta: vec![0.05, 0.1, 0.2, 0.3],
            gamma: vec![0.0, 1.0],
            max_depth: vec![1, 2, 3],
            min_child_weight: vec![0.0, 1.0],
            max_delta_step: vec![0.0],
            subsample: vec![0.5, 1.0],
            lambda: vec![0.0, 1.0],
            alpha: vec![0.0, 1.0, 2.0, 3.0, 4.0, 8.0],
            tree_method: vec![TreeMethod::Auto],
            scale_pos_weight: vec![ScalePosWeight::Value(1.0), ScalePosWeight::Balanced],
        }
    }

    /// A single point taken from `p`.
    pub fn single(p: &BoostParams) -> Self {
        Self {
            eta: vec![p.eta],
            gamma: vec![p.gamma],
            max_depth: vec![p.max_depth],
            min_child_weight: vec![p.min_child_weight],
            max_delta_step: vec![p.max_delta_step],
            subsample: vec![p.subsample],
            lambda: vec![p.lambda],
            alpha: vec![p.alpha],
            tree_method: vec![p.tree_method],
            scale_pos_weight: vec![p.scale_pos_weight],
        }
    }

    fn cardinalities(&self) -> [usize; 10] {
        [
            self.eta.len(),
            self.gamma.len(),
            self.max_depth.len(),
            self.min_child_weight.len(),
            self.max_delta_step.len(),
            self.subsample.len(),
            self.lambda.len(),
            self.alpha.len(),
            self.tree_method.len(),
            self.scale_pos_weight.len(),
        ]
    }

    pub fn len(&self) -> usize {
        self.cardinalities().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Combination `index` applied on top of `base`.
    pub fn point(&self, index: usize, base: &BoostParams) -> BoostParams {
        let card = self.cardinalities();
        let mut digits = [0usize; 10];
        let mut rest = index;
        for d in (0..10).rev() {
            digits[d] = rest % card[d];
            rest /= card[d];
        }
        BoostParams {
            eta: self.eta[digits[0]],
            gamma: self.gamma[digits[1]],
            max_depth: self.max_depth[digits[2]],
            min_child_weight: self.min_child_weight[digits[3]],
            max_delta_step: self.max_delta_step[digits[4]],
            subsample: self.subsample[digits[5]],
            lambda: self.lambda[digits[6]],
            alpha: self.alpha[digits[7]],
            tree_method: self.tree_method[digits[8]],
            scale_pos_weight: self.scale_pos_weight[digits[9]],
            ..base.clone()
        }
    }

    pub fn combinations(&self, base: &BoostParams) -> Vec<BoostParams> {
        (0..self.len()).map(|i| self.point(i, base)).collect()
    }

    /// Whether every tuned value of `p` is a candidate.
    pub fn contains(&self, p: &BoostParams) -> bool {
        self.eta.contains(&p.eta)
            && self.gamma.contains(&p.gamma)
            && self.max_depth.contains(&p.max_depth)
            && self.min_child_weight.contains(&p.min_child_weight)
            && self.max_delta_step.contains(&p.max_delta_step)
            && self.subsample.contains(&p.subsample)
            && self.lambda.contains(&p.lambda)
            && self.alpha.contains(&p.alpha)
            && self.tree_method.contains(&p.tree_method)
            && self.scale_pos_weight.contains(&p.scale_pos_weight)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub index: usize,
    pub params: BoostParams,
    pub cv: CvOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best_index: usize,
    pub best_params: BoostParams,
    pub rows: Vec<CvRow>,
}

impl GridResult {
    pub fn best(&self) -> &CvRow {
        &self.rows[self.best_index]
    }
}

/// Exhaustive search; the first combination with the highest mean CV AUROC
/// wins. Combinations run through `exec`.
pub fn grid_search<E: Executor>(
    exec: &E,
    ds: &Dataset,
    train_scans: &[usize],
    folds: &FoldAssignment,
    features: &[String],
    grid: &GridSpec,
    base: &BoostParams,
) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(Error::InvalidParam(
            "grid has an empty parameter list".into(),
        ));
    }
    let outcomes = exec.map(grid.len(), |i| {
        let params = grid.point(i, base);
        cv_score(&Sequential, ds, train_scans, folds, features, &params)
            .map(|cv| CvRow {
                index: i,
                params,
                cv,
            })
            .map_err(|e| Error::GridCombination {
                index: i,
                reason: format!("{e}"),
            })
    });
    let rows = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let mut best_index = 0;
    for r in &rows {
        if r.cv.mean_auroc > rows[best_index].cv.mean_auroc {
            best_index = r.index;
        }
    }
    Ok(GridResult {
        best_index,
        best_params: rows[best_index].params.clone(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub feature: String,
    pub cv_auroc: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Candidates by descending total gain of a model on all of them.
    pub ranking: Vec<(String, f64)>,
    pub trace: Vec<TraceRecord>,
    pub selected: Vec<String>,
    /// CV AUROC of the selected set (0.5 when nothing was accepted).
    pub cv_auroc: f64,
}

/// Greedy forward selection over the gain ranking: a candidate is kept iff
/// it raises mean CV AUROC by more than `epsilon` over the best so far,
/// starting from 0.5.
pub fn forward_select<E: Executor>(
    exec: &E,
    ds: &Dataset,
    train_scans: &[usize],
    folds: &FoldAssignment,
    candidates: &[String],
    params: &BoostParams,
    epsilon: f64,
) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::Empty("no candidate features".into()));
    }
    let table = ds.table(train_scans, candidates)?;
    let labels: Vec<bool> = train_scans.iter().map(|&s| ds.scan_label(s)).collect();
    let full = train_with(&table, &labels, params, &TrainOptions::default())?.ensemble;
    let mut ranking = full.feature_importance_gain();
    // Stable sort keeps the candidate order among equal gains.
    ranking.sort_by(|a, b| b.1.total_cmp(&a.1));

    let mut selected: Vec<String> = Vec::new();
    let mut best = 0.5;
    let mut trace = Vec::with_capacity(ranking.len());
    for (step, (feature, _)) in ranking.iter().enumerate() {
        let mut trial = selected.clone();
        trial.push(feature.clone());
        let cv = cv_score(exec, ds, train_scans, folds, &trial, params)?;
        let accepted = cv.mean_auroc > best + epsilon;
        if accepted {
            best = cv.mean_auroc;
            selected = trial;
        }
        trace.push(TraceRecord {
            step,
            feature: feature.clone(),
            cv_auroc: cv.mean_auroc,
            accepted,
        });
    }
    Ok(Selection {
        ranking,
        trace,
        selected,
        cv_auroc: best,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub test_fraction: f64,
    pub n_folds: usize,
    /// Space for the first tuning pass (all candidate features).
    pub initial_grid: GridSpec,
    /// Space for the retune on the final features.
    pub final_grid: GridSpec,
    pub base_params: BoostParams,
    pub epsilon: f64,
    /// Candidate features; all table columns when empty.
    pub candidates: Vec<String>,
    pub drop_list: Vec<String>,
    pub skip_selection: bool,
    pub target_fpr: f64,
    pub n_boot: usize,
    /// Refit modified Z-scores on the training scans before anything else.
    pub fit_zscores: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            test_fraction: PUBLISHED_TEST_FRACTION,
            n_folds: 3,
            initial_grid: GridSpec::published(),
            final_grid: GridSpec::published(),
            base_params: BoostParams::published_final(),
            epsilon: DEFAULT_EPSILON,
            candidates: Vec::new(),
            drop_list: Vec::new(),
            skip_selection: false,
            target_fpr: 0.05,
            n_boot: 2000,
            fit_zscores: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyScore {
    pub study: String,
    pub subject: String,
    pub label: bool,
    pub probability: f64,
    pub sex: Sex,
    pub age: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub split: CohortSplit,
    pub folds: FoldAssignment,
    pub zreference: Option<ZReference>,
    pub initial: GridResult,
    pub selection: Option<Selection>,
    pub features: Vec<String>,
    pub retune: GridResult,
    pub final_params: BoostParams,
    pub ensemble: Ensemble,
    pub threshold: f64,
    pub train_auroc: f64,
    pub train_scores: Vec<StudyScore>,
    pub test_scores: Vec<StudyScore>,
    pub report: EvalReport,
    pub warnings: Vec<String>,
}

fn study_score_rows(ds: &Dataset, scored: &[(usize, f64)]) -> Vec<StudyScore> {
    scored
        .iter()
        .map(|&(s, p)| {
            let st = &ds.studies[s];
            StudyScore {
                study: st.id.clone(),
                subject: st.subject.clone(),
                label: st.label,
                probability: p,
                sex: st.sex,
                age: st.age,
            }
        })
        .collect()
}

/// Subject split, folds over the training subjects, and the training scans.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub split: CohortSplit,
    pub folds: FoldAssignment,
    pub train_scans: Vec<usize>,
}

/// The partition every protocol stage uses for `(ds, cfg.seed,
/// cfg.test_fraction, cfg.n_folds)`.
pub fn partition(ds: &Dataset, cfg: &PipelineConfig) -> Result<Partition> {
    let subjects = ds.subject_labels();
    let ids: Vec<String> = subjects.iter().map(|s| s.0.clone()).collect();
    let split = split_cohort(&ids, cfg.test_fraction, cfg.seed)?;
    let train_set: BTreeSet<&str> = split.train.iter().map(String::as_str).collect();
    let train_subjects: Vec<(String, bool)> = subjects
        .iter()
        .filter(|s| train_set.contains(s.0.as_str()))
        .cloned()
        .collect();
    let folds = make_folds(&train_subjects, cfg.n_folds, cfg.seed)?;
    let train_scans = ds.scans_of_subjects(&train_set);
    Ok(Partition {
        split,
        folds,
        train_scans,
    })
}

/// Best grid parameters with early stopping replaced by a fixed round
/// count: the rounded mean of the folds' early-stopping rounds.
pub fn final_params(result: &GridResult) -> BoostParams {
    let mut p = result.best_params.clone();
    let rounds = &result.best().cv.best_rounds;
    p.n_rounds =
        (libm::round(rounds.iter().sum::<usize>() as f64 / rounds.len() as f64) as usize).max(1);
    p.early_stopping_rounds = 0;
    p
}

/// Split, fold, tune, select, prune, retune, train, calibrate, evaluate.
///
/// The final model is trained on every training scan without a validation
/// set; its round count is the mean early-stopping round of the retuned
/// combination's folds.
pub fn run_pipeline<E: Executor>(
    exec: &E,
    ds: &Dataset,
    cfg: &PipelineConfig,
) -> Result<PipelineResult> {
    let mut warnings = Vec::new();
    let Partition {
        split,
        folds,
        train_scans,
    } = partition(ds, cfg)?;
    let test_set: BTreeSet<&str> = split.test.iter().map(String::as_str).collect();

    let mut ds_owned;
    let mut ds = ds;
    let mut zreference = None;
    if cfg.fit_zscores {
        let z = ZReference::fit_table(&ds.features, &train_scans)?;
        ds_owned = ds.clone();
        ds_owned.features = z.apply_to_table(&ds.features)?;
        ds = &ds_owned;
        zreference = Some(z);
    }

    let candidates = if cfg.candidates.is_empty() {
        ds.features.names().to_vec()
    } else {
        cfg.candidates.clone()
    };
    let mut base = cfg.base_params.clone();
    base.seed = cfg.seed;

    let initial = grid_search(
        exec,
        ds,
        &train_scans,
        &folds,
        &candidates,
        &cfg.initial_grid,
        &base,
    )?;
    let (selection, selected) = if cfg.skip_selection {
        (None, candidates.clone())
    } else {
        let sel = forward_select(
            exec,
            ds,
            &train_scans,
            &folds,
            &candidates,
            &initial.best_params,
            cfg.epsilon,
        )?;
        let chosen = sel.selected.clone();
        (Some(sel), chosen)
    };
    let features = prune_features(&selected, &cfg.drop_list)?;
    if features.is_empty() {
        return Err(Error::Empty("feature selection kept no features".into()));
    }
    let retune = grid_search(
        exec,
        ds,
        &train_scans,
        &folds,
        &features,
        &cfg.final_grid,
        &base,
    )?;

    let final_params = final_params(&retune);
    let table = ds
        .features
        .select_rows(&train_scans)
        .select_columns(&features)?;
    let labels: Vec<bool> = train_scans.iter().map(|&s| ds.scan_label(s)).collect();
    let ensemble = train_with(&table, &labels, &final_params, &TrainOptions::default())?.ensemble;

    let train_probs = ds.predict(&ensemble, &train_scans)?;
    let train_studies = ds.study_scores(&train_scans, &train_probs)?;
    let tr_scores: Vec<f64> = train_studies.iter().map(|s| s.1).collect();
    let tr_labels: Vec<bool> = train_studies
        .iter()
        .map(|s| ds.studies[s.0].label)
        .collect();
    let threshold = calibrate_threshold(&tr_scores, &tr_labels, cfg.target_fpr)?;
    let train_auroc = auroc(&tr_scores, &tr_labels)?;

    let (latest, tie_warnings) = latest_per_subject(
        ds.studies
            .iter()
            .map(|s| (s.id.as_str(), s.subject.as_str(), s.timestamp)),
        &test_set,
    );
    warnings.extend(tie_warnings);
    let latest: BTreeSet<&str> = latest.values().copied().collect();
    let test_scans: Vec<usize> = (0..ds.n_scans())
        .filter(|&i| latest.contains(ds.studies[ds.scan_study[i]].id.as_str()))
        .collect();
    let test_probs = ds.predict(&ensemble, &test_scans)?;
    let test_studies = ds.study_scores(&test_scans, &test_probs)?;
    let te_scores: Vec<f64> = test_studies.iter().map(|s| s.1).collect();
    let te_labels: Vec<bool> = test_studies.iter().map(|s| ds.studies[s.0].label).collect();
    let te_sex: Vec<Sex> = test_studies.iter().map(|s| ds.studies[s.0].sex).collect();
    let report = confusion_report(
        &te_scores,
        &te_labels,
        threshold,
        Some(&te_sex),
        cfg.n_boot,
        cfg.seed,
    )?;

    Ok(PipelineResult {
        split,
        folds,
        zreference,
        initial,
        selection,
        features,
        retune,
        final_params,
        ensemble,
        threshold,
        train_auroc,
        train_scores: study_score_rows(ds, &train_studies),
        test_scores: study_score_rows(ds, &test_studies),
        report,
        warnings,
    })
}
