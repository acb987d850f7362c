//! ROC analysis, FPR-calibrated thresholds, confusion reports with
//! percentile-bootstrap intervals, and cohort summaries.
//!
//! Classification is `score >= threshold` throughout.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{quantile_sorted, round_to};
use crate::table::Sex;

fn class_counts(labels: &[bool]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&y| y).count();
    (pos, labels.len() - pos)
}

fn check_lengths(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidParam(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::InvalidParam(format!("score {i} is NaN")));
    }
    Ok(())
}

/// Mann-Whitney AUROC: the fraction of (positive, negative) pairs ordered
/// correctly, ties counting one half. Computed from mid-ranks.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let (n_pos, n_neg) = class_counts(labels);
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the positive rank sum, kept integral: a tie block spanning
    // ranks i+1..=j has mid-rank (i + 1 + j) / 2.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let pos_in_block = order[i..j].iter().filter(|&&k| labels[k]).count() as u128;
        twice_rank_sum += pos_in_block * (i as u128 + 1 + j as u128);
        i = j;
    }
    let np = n_pos as u128;
    let twice_u = twice_rank_sum - np * (np + 1);
    Ok(twice_u as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Positive iff `score >= threshold`; `+inf` for the origin.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

/// ROC curve from sweeping every distinct score from high to low, starting
/// at (0, 0) with threshold `+inf` and ending at (1, 1).
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    check_lengths(scores, labels)?;
    let (n_pos, n_neg) = class_counts(labels);
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
        });
    }
    Ok(RocCurve { points })
}

pub fn roc_and_auroc(scores: &[f64], labels: &[bool]) -> Result<(RocCurve, f64)> {
    Ok((roc_curve(scores, labels)?, auroc(scores, labels)?))
}

/// Smallest candidate threshold (observed scores and `+inf`) whose false
/// positive rate on the calibration data is at most `target_fpr`.
pub fn calibrate_threshold(scores: &[f64], labels: &[bool], target_fpr: f64) -> Result<f64> {
    check_lengths(scores, labels)?;
    let (_, n_neg) = class_counts(labels);
    if n_neg == 0 {
        return Err(Error::Empty(
            "calibration needs at least one negative".into(),
        ));
    }
    let mut neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter_map(|(&s, &y)| (!y).then_some(s))
        .collect();
    neg.sort_by(f64::total_cmp);
    let mut candidates: Vec<f64> = scores.to_vec();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    for t in candidates {
        // Negatives scoring >= t.
        let fp = neg.len() - neg.partition_point(|&s| s < t);
        if fp as f64 / n_neg as f64 <= target_fpr {
            return Ok(t);
        }
    }
    Ok(f64::INFINITY)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn from_scores(scores: &[f64], labels: &[bool], threshold: f64) -> Self {
        let mut c = Confusion::default();
        for (&s, &y) in scores.iter().zip(labels) {
            match (s >= threshold, y) {
                (true, true) => c.tp += 1,
                (false, true) => c.fn_ += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.fp + self.tn
    }

    fn ratio(num: u64, den: u64) -> Option<f64> {
        (den > 0).then(|| num as f64 / den as f64)
    }

    pub fn tpr(&self) -> Option<f64> {
        Self::ratio(self.tp, self.tp + self.fn_)
    }

    pub fn fnr(&self) -> Option<f64> {
        Self::ratio(self.fn_, self.tp + self.fn_)
    }

    pub fn fpr(&self) -> Option<f64> {
        Self::ratio(self.fp, self.fp + self.tn)
    }

    pub fn tnr(&self) -> Option<f64> {
        Self::ratio(self.tn, self.fp + self.tn)
    }

    pub fn prevalence(&self) -> Option<f64> {
        Self::ratio(self.tp + self.fn_, self.total())
    }

    pub fn predicted_prevalence(&self) -> Option<f64> {
        Self::ratio(self.tp + self.fp, self.total())
    }
}

/// A rate with its 95% percentile-bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateCi {
    pub value: Option<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub confusion: Confusion,
    pub tpr: RateCi,
    pub fnr: RateCi,
    pub fpr: RateCi,
    pub tnr: RateCi,
    pub prevalence: Option<f64>,
    pub predicted_prevalence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auroc: Option<f64>,
    pub threshold: f64,
    pub n_boot: usize,
    pub seed: u64,
    pub overall: GroupReport,
    pub subgroups: BTreeMap<Sex, GroupReport>,
    pub notices: Vec<String>,
}

/// Seed of bootstrap replica `replica` for group stream `group`.
fn replica_rng(seed: u64, group: u64, replica: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ group.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(replica);
    rng
}

fn group_report(
    scores: &[f64],
    labels: &[bool],
    t: f64,
    n_boot: usize,
    seed: u64,
    group: u64,
) -> GroupReport {
    let confusion = Confusion::from_scores(scores, labels, t);
    let predicted: Vec<bool> = scores.iter().map(|&s| s >= t).collect();
    let n = scores.len();
    let mut samples: [Vec<f64>; 4] = Default::default();
    for b in 0..n_boot {
        let mut rng = replica_rng(seed, group, b as u64);
        let mut c = Confusion::default();
        for _ in 0..n {
            let i = rng.random_range(0..n);
            match (predicted[i], labels[i]) {
                (true, true) => c.tp += 1,
                (false, true) => c.fn_ += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
            }
        }
        for (k, v) in [c.tpr(), c.fnr(), c.fpr(), c.tnr()].into_iter().enumerate() {
            if let Some(v) = v {
                samples[k].push(v);
            }
        }
    }
    let point = [
        confusion.tpr(),
        confusion.fnr(),
        confusion.fpr(),
        confusion.tnr(),
    ];
    let mut cis = point.iter().zip(samples.iter_mut()).map(|(&value, s)| {
        s.sort_by(f64::total_cmp);
        match value {
            Some(v) if !s.is_empty() => RateCi {
                value,
                // Percentile bounds can miss the estimate for skewed
                // replicate distributions; widen to contain it.
                lo: Some(quantile_sorted(s, 0.025).min(v)),
                hi: Some(quantile_sorted(s, 0.975).max(v)),
            },
            _ => RateCi {
                value,
                lo: None,
                hi: None,
            },
        }
    });
    GroupReport {
        confusion,
        tpr: cis.next().unwrap(),
        fnr: cis.next().unwrap(),
        fpr: cis.next().unwrap(),
        tnr: cis.next().unwrap(),
        prevalence: confusion.prevalence(),
        predicted_prevalence: confusion.predicted_prevalence(),
    }
}

/// Counts, rates and bootstrap intervals overall and per sex. Studies are the
/// resampling unit: each entry of `scores` is one study.
pub fn confusion_report(
    scores: &[f64],
    labels: &[bool],
    threshold: f64,
    sex: Option<&[Sex]>,
    n_boot: usize,
    seed: u64,
) -> Result<EvalReport> {
    check_lengths(scores, labels)?;
    if scores.is_empty() {
        return Err(Error::Empty("no scores to evaluate".into()));
    }
    let mut notices = Vec::new();
    let auroc = match auroc(scores, labels) {
        Ok(a) => Some(a),
        Err(_) => {
            notices.push("AUROC undefined: only one class present".into());
            None
        }
    };
    let overall = group_report(scores, labels, threshold, n_boot, seed, 0);
    let mut subgroups = BTreeMap::new();
    if let Some(sex) = sex {
        if sex.len() != scores.len() {
            return Err(Error::InvalidParam(format!(
                "{} sex entries for {} scores",
                sex.len(),
                scores.len()
            )));
        }
        for (g, group) in [Sex::F, Sex::M].into_iter().enumerate() {
            let idx: Vec<usize> = (0..scores.len()).filter(|&i| sex[i] == group).collect();
            if idx.is_empty() {
                notices.push(format!("subgroup {group} is empty and omitted"));
                continue;
            }
            let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
            let l: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
            subgroups.insert(
                group,
                group_report(&s, &l, threshold, n_boot, seed, g as u64 + 1),
            );
        }
    }
    Ok(EvalReport {
        auroc,
        threshold,
        n_boot,
        seed,
        overall,
        subgroups,
        notices,
    })
}

fn fmt2(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{:.2}", round_to(v, 2)),
        None => "NA".into(),
    }
}

fn fmt_ci(r: &RateCi) -> String {
    match (r.lo, r.hi) {
        (Some(lo), Some(hi)) => {
            format!("{} ({}-{})", fmt2(r.value), fmt2(Some(lo)), fmt2(Some(hi)))
        }
        _ => fmt2(r.value),
    }
}

/// Plain-text table: per group, condition rows with predicted counts, rates
/// with intervals, prevalence and predicted prevalence.
pub fn render_report(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "Test set classifications using threshold = {}",
        report.threshold
    );
    if let Some(a) = report.auroc {
        let _ = writeln!(out, "AUROC = {:.4}", a);
    }
    let _ = writeln!(
        out,
        "{:<8}{:<11}{:>6}{:>7}{:>7}  {:<20}{:<20}Prevalence",
        "Group", "Condition", "P+", "P-", "Total", "TPR / FPR", "FNR / TNR"
    );
    let mut groups: Vec<(&str, &GroupReport)> = vec![("All", &report.overall)];
    for (sex, g) in &report.subgroups {
        groups.push((if *sex == Sex::F { "Female" } else { "Male" }, g));
    }
    for (name, g) in groups {
        let c = &g.confusion;
        let _ = writeln!(
            out,
            "{:<8}{:<11}{:>6}{:>7}{:>7}  {:<20}{:<20}{}",
            name,
            "C+",
            c.tp,
            c.fn_,
            c.tp + c.fn_,
            fmt_ci(&g.tpr),
            fmt_ci(&g.fnr),
            fmt2(g.prevalence)
        );
        let _ = writeln!(
            out,
            "{:<8}{:<11}{:>6}{:>7}{:>7}  {:<20}{:<20}",
            "",
            "C-",
            c.fp,
            c.tn,
            c.fp + c.tn,
            fmt_ci(&g.fpr),
            fmt_ci(&g.tnr)
        );
        let _ = writeln!(
            out,
            "{:<8}{:<11}{:>6}{:>7}{:>7}  {:<40}{}",
            "",
            "Total",
            c.tp + c.fp,
            c.fn_ + c.tn,
            c.total(),
            "Predicted prevalence",
            fmt2(g.predicted_prevalence)
        );
    }
    for n in &report.notices {
        let _ = writeln!(out, "note: {n}");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointOfInterest {
    pub label: String,
    pub threshold: f64,
    /// Rates of `threshold` on the test data.
    pub fpr: f64,
    pub tpr: f64,
}

/// The four annotated operating points: train-FPR-0.05 threshold, test
/// TNR 0.90, closest test point to (0, 1) by Euclidean distance, and test
/// TPR 0.90.
pub fn roc_points_of_interest(
    train_scores: &[f64],
    train_labels: &[bool],
    test_scores: &[f64],
    test_labels: &[bool],
) -> Result<Vec<PointOfInterest>> {
    let curve = roc_curve(test_scores, test_labels)?;
    let at = |label: &str, t: f64| {
        let c = Confusion::from_scores(test_scores, test_labels, t);
        PointOfInterest {
            label: label.into(),
            threshold: t,
            fpr: c.fpr().unwrap_or(0.0),
            tpr: c.tpr().unwrap_or(0.0),
        }
    };
    let train_t = calibrate_threshold(train_scores, train_labels, 0.05)?;
    let tnr_t = calibrate_threshold(test_scores, test_labels, 0.10)?;
    let closest = curve
        .points
        .iter()
        .fold(None::<(f64, &RocPoint)>, |best, p| {
            let d = libm::sqrt(p.fpr * p.fpr + (1.0 - p.tpr) * (1.0 - p.tpr));
            match best {
                Some((bd, _)) if bd <= d => best,
                _ => Some((d, p)),
            }
        })
        .map(|(_, p)| *p)
        .expect("curve has points");
    let tpr_point = curve
        .points
        .iter()
        .find(|p| p.tpr >= 0.90)
        .copied()
        .expect("curve ends at tpr 1");
    Ok(vec![
        at("train_fpr_0.05", train_t),
        at("test_tnr_0.90", tnr_t),
        PointOfInterest {
            label: "test_closest_to_perfect".into(),
            threshold: closest.threshold,
            fpr: closest.fpr,
            tpr: closest.tpr,
        },
        PointOfInterest {
            label: "test_tpr_0.90".into(),
            threshold: tpr_point.threshold,
            fpr: tpr_point.fpr,
            tpr: tpr_point.tpr,
        },
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

/// One subject as it enters the cohort summary.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub split: Split,
    pub sex: Sex,
    pub age: f64,
    pub positive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub group: String,
    pub size: usize,
    pub age_min: f64,
    pub age_max: f64,
    pub age_mean: f64,
    pub prevalence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub rows: Vec<SummaryRow>,
    pub notices: Vec<String>,
}

/// Per split (Train, Test, All) and sex (Male, Female, Total): size, age
/// range and mean, prevalence. Empty splits are omitted with a notice.
pub fn cohort_summary(subjects: &[SubjectRecord]) -> CohortSummary {
    let mut rows = Vec::new();
    let mut notices = Vec::new();
    let splits: [(&str, Option<Split>); 3] = [
        ("Train", Some(Split::Train)),
        ("Test", Some(Split::Test)),
        ("All", None),
    ];
    for (dataset, split) in splits {
        let in_split: Vec<&SubjectRecord> = subjects
            .iter()
            .filter(|s| split.is_none_or(|sp| s.split == sp))
            .collect();
        if in_split.is_empty() {
            notices.push(format!("split {dataset} is empty and omitted"));
            continue;
        }
        for (group, sex) in [
            ("Male", Some(Sex::M)),
            ("Female", Some(Sex::F)),
            ("Total", None),
        ] {
            let g: Vec<&&SubjectRecord> = in_split
                .iter()
                .filter(|s| sex.is_none_or(|x| s.sex == x))
                .collect();
            if g.is_empty() {
                notices.push(format!("group {dataset}/{group} is empty and omitted"));
                continue;
            }
            let ages: Vec<f64> = g.iter().map(|s| s.age).collect();
            let pos = g.iter().filter(|s| s.positive).count();
            rows.push(SummaryRow {
                dataset: dataset.into(),
                group: group.into(),
                size: g.len(),
                age_min: ages.iter().copied().fold(f64::INFINITY, f64::min),
                age_max: ages.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                age_mean: crate::stats::mean(&ages).expect("non-empty"),
                prevalence: pos as f64 / g.len() as f64,
            });
        }
    }
    CohortSummary { rows, notices }
}

pub fn render_summary(summary: &CohortSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<9}{:<8}{:>6}  {:<9}{:>7}  Prevalence",
        "Dataset", "Group", "Size", "Age range", "Mean"
    );
    let mut last = "";
    for r in &summary.rows {
        let name = if r.dataset == last {
            ""
        } else {
            r.dataset.as_str()
        };
        last = &r.dataset;
        let _ = writeln!(
            out,
            "{:<9}{:<8}{:>6}  {:<9}{:>7.2}  {:.3}",
            name,
            r.group,
            r.size,
            format!("{}-{}", r.age_min, r.age_max),
            round_to(r.age_mean, 2),
            round_to(r.prevalence, 3)
        );
    }
    for n in &summary.notices {
        let _ = writeln!(out, "note: {n}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// O(n²) pair count: the definition of the Mann-Whitney AUROC.
    fn pairwise_auroc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] && !labels[j] {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn auroc_worked_example() {
        let s = [0.1, 0.4, 0.35, 0.8];
        let l = [false, false, true, true];
        assert_eq!(auroc(&s, &l).unwrap(), 0.75);
        assert_eq!(pairwise_auroc(&s, &l), 0.75);
    }

    #[test]
    fn auroc_extremes() {
        assert_eq!(auroc(&[0.0, 1.0], &[false, true]).unwrap(), 1.0);
        assert_eq!(
            auroc(&[0.3; 6], &[true, false, true, false, false, true]).unwrap(),
            0.5
        );
        assert_eq!(
            auroc(&[0.3, 0.4], &[true, true]).unwrap_err(),
            Error::SingleClass
        );
    }

    #[test]
    fn auroc_matches_pairwise_with_ties() {
        let s = [0.1, 0.2, 0.2, 0.2, 0.5, 0.5, 0.9, 0.0];
        let l = [false, true, false, true, false, true, true, false];
        assert!((auroc(&s, &l).unwrap() - pairwise_auroc(&s, &l)).abs() < 1e-15);
    }

    #[test]
    fn calibration_examples() {
        let neg: Vec<f64> = (1..=20).map(|i| i as f64 / 100.0).collect();
        let labels = vec![false; 20];
        let t = calibrate_threshold(&neg, &labels, 0.05).unwrap();
        assert_eq!(t, 0.20);
        assert_eq!(Confusion::from_scores(&neg, &labels, t).fpr(), Some(0.05));

        let s = [0.0, 0.0, 0.0, 0.7, 0.9];
        let l = [false, false, false, true, true];
        let t = calibrate_threshold(&s, &l, 0.05).unwrap();
        assert_eq!(t, 0.7);
        assert_eq!(calibrate_threshold(&s, &l, 1.0).unwrap(), 0.0);

        assert!(calibrate_threshold(&[0.5], &[true], 0.05).is_err());
    }

    #[test]
    fn calibration_can_land_on_infinity() {
        let t = calibrate_threshold(&[0.5, 0.5], &[false, false], 0.0).unwrap();
        assert_eq!(t, f64::INFINITY);
    }

    #[test]
    fn roc_curve_shape() {
        let c = roc_curve(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert_eq!(c.points.first().map(|p| (p.fpr, p.tpr)), Some((0.0, 0.0)));
        assert_eq!(c.points.last().map(|p| (p.fpr, p.tpr)), Some((1.0, 1.0)));
        assert_eq!(c.points.len(), 5);
    }

    fn counts_to_data(tp: usize, fn_: usize, fp: usize, tn: usize) -> (Vec<f64>, Vec<bool>) {
        let mut s = Vec::new();
        let mut l = Vec::new();
        for (n, score, label) in [
            (tp, 1.0, true),
            (fn_, 0.0, true),
            (fp, 1.0, false),
            (tn, 0.0, false),
        ] {
            s.extend(core::iter::repeat_n(score, n));
            l.extend(core::iter::repeat_n(label, n));
        }
        (s, l)
    }

    #[test]
    fn published_all_block_rates() {
        let (s, l) = counts_to_data(63, 62, 64, 1335);
        let r = confusion_report(&s, &l, 0.5, None, 200, 7).unwrap();
        let g = &r.overall;
        assert_eq!(fmt2(g.tpr.value), "0.50");
        assert_eq!(fmt2(g.fnr.value), "0.50");
        assert_eq!(fmt2(g.fpr.value), "0.05");
        assert_eq!(fmt2(g.tnr.value), "0.95");
        assert_eq!(fmt2(g.predicted_prevalence), "0.08");
        for ci in [g.tpr, g.fnr, g.fpr, g.tnr] {
            assert!(ci.lo.unwrap() <= ci.value.unwrap() && ci.value.unwrap() <= ci.hi.unwrap());
        }
    }

    #[test]
    fn everything_positive_at_negative_infinity() {
        let (s, l) = counts_to_data(3, 2, 4, 5);
        let c = Confusion::from_scores(&s, &l, f64::NEG_INFINITY);
        assert_eq!((c.tpr(), c.fpr()), (Some(1.0), Some(1.0)));
    }

    #[test]
    fn empty_subgroup_is_noted() {
        let (s, l) = counts_to_data(3, 2, 4, 5);
        let sex = vec![Sex::F; s.len()];
        let r = confusion_report(&s, &l, 0.5, Some(&sex), 50, 1).unwrap();
        assert!(r.subgroups.contains_key(&Sex::F));
        assert!(!r.subgroups.contains_key(&Sex::M));
        assert_eq!(r.notices.len(), 1);
    }

    #[test]
    fn cohort_summary_single_subject() {
        let s = cohort_summary(&[SubjectRecord {
            split: Split::Train,
            sex: Sex::M,
            age: 64.0,
            positive: true,
        }]);
        let total = s
            .rows
            .iter()
            .find(|r| r.dataset == "Train" && r.group == "Total")
            .unwrap();
        assert_eq!(
            (total.age_min, total.age_max, total.age_mean, total.size),
            (64.0, 64.0, 64.0, 1)
        );
        assert!(s.notices.iter().any(|n| n.contains("Test")));
    }
}
