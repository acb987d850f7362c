//! Rule-based extraction of heart failure findings from Danish radiology
//! reports, and study labels derived from them.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ahfx_core::exec::Executor;
use fancy_regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{read_text, AppError, AppResult};

/// The shipped rule file.
pub const DEFAULT_RULES: &str = include_str!("../rules/default_rules.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Congestion,
    Edema,
    HeartFailure,
    Decompensation,
    PleuralEffusion,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Congestion,
        Category::Edema,
        Category::HeartFailure,
        Category::Decompensation,
        Category::PleuralEffusion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Congestion => "congestion",
            Category::Edema => "edema",
            Category::HeartFailure => "heart_failure",
            Category::Decompensation => "decompensation",
            Category::PleuralEffusion => "pleural_effusion",
        }
    }

    /// Whether a surviving positive finding makes the study positive.
    pub fn decides_label(self) -> bool {
        self != Category::PleuralEffusion
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Category::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown category `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Negative,
    Positive,
}

impl Polarity {
    pub fn name(self) -> &'static str {
        match self {
            Polarity::Negative => "negative",
            Polarity::Positive => "positive",
        }
    }
}

impl FromStr for Polarity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "positive" => Ok(Polarity::Positive),
            "negative" => Ok(Polarity::Negative),
            other => Err(format!("unknown polarity `{other}`")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Rule {
    pub category: Category,
    pub polarity: Polarity,
    pub pattern: String,
    pub case_insensitive: bool,
    regex: Regex,
}

#[derive(Debug, Clone)]
pub struct RuleSet {
    pub rules: Vec<Rule>,
}

impl RuleSet {
    /// Parses a `category,polarity,pattern,flags` CSV. `flags` may contain
    /// `i` for case-insensitive matching.
    pub fn parse_csv(text: &str, origin: &str) -> AppResult<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(text.as_bytes());
        let mut rules = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 1;
            let rec = rec.map_err(|e| AppError::invalid(format!("{origin}: {e}")))?;
            let field = |k: usize| rec.get(k).unwrap_or("").trim();
            let bad = |m: String| AppError::invalid(format!("{origin}: rule {row}: {m}"));
            let category: Category = field(0).parse().map_err(bad)?;
            let polarity: Polarity = field(1).parse().map_err(bad)?;
            let pattern = rec.get(2).unwrap_or("").to_string();
            let case_insensitive = field(3).contains('i');
            // The inline flag reaches lookaround bodies too, which the
            // builder option does not.
            let source = if case_insensitive {
                format!("(?i){pattern}")
            } else {
                pattern.clone()
            };
            let regex = Regex::new(&source).map_err(|e| {
                AppError::invalid(format!(
                    "{origin}: rule {row} ({category}/{}): pattern does not compile: {e}",
                    polarity.name()
                ))
            })?;
            rules.push(Rule {
                category,
                polarity,
                pattern,
                case_insensitive,
                regex,
            });
        }
        if rules.is_empty() {
            return Err(AppError::invalid(format!("{origin}: no rules")));
        }
        for c in Category::ALL {
            let has = |p| rules.iter().any(|r| r.category == c && r.polarity == p);
            if has(Polarity::Negative) && !has(Polarity::Positive) {
                return Err(AppError::invalid(format!(
                    "{origin}: category {c} has no positive rule"
                )));
            }
        }
        Ok(Self { rules })
    }

    pub fn default_rules() -> Self {
        Self::parse_csv(DEFAULT_RULES, "default rules").expect("shipped rules compile")
    }

    pub fn load(path: &Path) -> AppResult<Self> {
        Self::parse_csv(&read_text(path)?, &path.display().to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub category: Category,
    pub polarity: Polarity,
    /// Byte offsets into the report text.
    pub start: usize,
    pub end: usize,
    pub text: String,
}

/// All rule matches, minus positives lying inside a negative match of the
/// same category. Ordered by start offset, negatives first, then rule order.
pub fn extract_findings(text: &str, rules: &RuleSet) -> Vec<Finding> {
    let mut all: Vec<(usize, Finding)> = Vec::new();
    for (ri, rule) in rules.rules.iter().enumerate() {
        for m in rule.regex.find_iter(text) {
            // Backtrack-limit failures are treated as no further match.
            let Ok(m) = m else { break };
            all.push((
                ri,
                Finding {
                    category: rule.category,
                    polarity: rule.polarity,
                    start: m.start(),
                    end: m.end(),
                    text: m.as_str().to_string(),
                },
            ));
        }
    }
    let negatives: Vec<(Category, usize, usize)> = all
        .iter()
        .filter(|(_, f)| f.polarity == Polarity::Negative)
        .map(|(_, f)| (f.category, f.start, f.end))
        .collect();
    all.retain(|(_, f)| {
        f.polarity == Polarity::Negative
            || !negatives
                .iter()
                .any(|&(c, s, e)| c == f.category && s <= f.start && f.end <= e)
    });
    all.sort_by_key(|(ri, f)| (f.start, f.polarity, *ri));
    all.into_iter().map(|(_, f)| f).collect()
}

/// Positive iff some surviving positive finding is in a label-deciding
/// category.
pub fn resolve_study_label(findings: &[Finding]) -> bool {
    findings
        .iter()
        .any(|f| f.polarity == Polarity::Positive && f.category.decides_label())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub study_id: String,
    #[serde(default)]
    pub subject_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyLabel {
    pub study_id: String,
    pub subject_id: String,
    pub positive: bool,
    /// Set when an override replaced the mined label.
    pub overridden: bool,
    pub findings: Vec<Finding>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinedCorpus {
    /// Sorted by study id.
    pub labels: Vec<StudyLabel>,
    /// Number of reports with at least one finding of each
    /// (category, polarity).
    pub summary: BTreeMap<(Category, Polarity), usize>,
}

impl MinedCorpus {
    pub fn n_positive(&self) -> usize {
        self.labels.iter().filter(|l| l.positive).count()
    }
}

/// JSON lines, one `{study_id, subject_id, text}` object per line.
pub fn parse_reports(text: &str, origin: &str) -> AppResult<Vec<Report>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| AppError::invalid(format!("{origin}: line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn mine_corpus<E: Executor>(
    exec: &E,
    reports: &[Report],
    rules: &RuleSet,
    overrides: Option<&BTreeMap<String, bool>>,
) -> AppResult<MinedCorpus> {
    let mut order: Vec<usize> = (0..reports.len()).collect();
    order.sort_by(|&a, &b| reports[a].study_id.cmp(&reports[b].study_id));
    for w in order.windows(2) {
        if reports[w[0]].study_id == reports[w[1]].study_id {
            return Err(AppError::invalid(format!(
                "duplicate study_id `{}` in report corpus",
                reports[w[0]].study_id
            )));
        }
    }
    let findings = exec.map(order.len(), |i| {
        extract_findings(&reports[order[i]].text, rules)
    });
    let mut summary: BTreeMap<(Category, Polarity), usize> = Category::ALL
        .into_iter()
        .flat_map(|c| [(c, Polarity::Positive), (c, Polarity::Negative)])
        .map(|k| (k, 0))
        .collect();
    let mut labels = Vec::with_capacity(order.len());
    for (&ri, f) in order.iter().zip(findings) {
        let mut seen: Vec<(Category, Polarity)> =
            f.iter().map(|x| (x.category, x.polarity)).collect();
        seen.sort();
        seen.dedup();
        for k in seen {
            *summary.entry(k).or_default() += 1;
        }
        let r = &reports[ri];
        let mined = resolve_study_label(&f);
        let forced = overrides.and_then(|o| o.get(&r.study_id)).copied();
        labels.push(StudyLabel {
            study_id: r.study_id.clone(),
            subject_id: r.subject_id.clone(),
            positive: forced.unwrap_or(mined),
            overridden: forced.is_some_and(|v| v != mined),
            findings: f,
        });
    }
    Ok(MinedCorpus { labels, summary })
}
