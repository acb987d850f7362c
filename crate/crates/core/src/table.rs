//! Feature tables and the cohort manifest.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rectangular table of named real features; rows keyed by scan id.
///
/// `None` is a missing cell and is never conflated with any number.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureTable {
    names: Vec<String>,
    row_ids: Vec<String>,
    cells: Vec<Option<f64>>,
}

impl FeatureTable {
    pub fn new(names: Vec<String>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidTable(format!(
                    "duplicate feature name `{name}`"
                )));
            }
        }
        Ok(Self {
            names,
            row_ids: Vec::new(),
            cells: Vec::new(),
        })
    }

    pub fn push_row(&mut self, id: impl Into<String>, row: Vec<Option<f64>>) -> Result<()> {
        let id = id.into();
        if row.len() != self.names.len() {
            return Err(Error::InvalidTable(format!(
                "row `{id}` has {} cells, expected {}",
                row.len(),
                self.names.len()
            )));
        }
        self.row_ids.push(id);
        self.cells.extend(row);
        Ok(())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_ids.is_empty()
    }

    pub fn row(&self, r: usize) -> &[Option<f64>] {
        let w = self.names.len();
        &self.cells[r * w..(r + 1) * w]
    }

    pub fn get(&self, r: usize, c: usize) -> Option<f64> {
        self.cells[r * self.names.len() + c]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn row_index(&self, id: &str) -> Option<usize> {
        self.row_ids.iter().position(|r| r == id)
    }

    /// Checks that row ids are unique; names the first duplicate.
    pub fn validate_unique_rows(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for id in &self.row_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidTable(format!("duplicate row id `{id}`")));
            }
        }
        Ok(())
    }

    /// Value of `name` in row `r` as a named lookup; for callers holding
    /// vectors keyed by feature names.
    pub fn value(&self, r: usize, name: &str) -> Result<Option<f64>> {
        let c = self
            .column_index(name)
            .ok_or_else(|| Error::UnknownFeature(name.to_string()))?;
        Ok(self.get(r, c))
    }

    /// Sub-table restricted to `names` (in that order).
    pub fn select_columns(&self, names: &[String]) -> Result<FeatureTable> {
        let idx = names
            .iter()
            .map(|n| {
                self.column_index(n)
                    .ok_or_else(|| Error::UnknownFeature(n.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = FeatureTable::new(names.to_vec())?;
        for r in 0..self.n_rows() {
            let row = idx.iter().map(|&c| self.get(r, c)).collect();
            out.push_row(self.row_ids[r].clone(), row)?;
        }
        Ok(out)
    }

    /// Sub-table restricted to rows `rows` (in that order).
    pub fn select_rows(&self, rows: &[usize]) -> FeatureTable {
        let mut out = FeatureTable::new(self.names.clone()).expect("names already unique");
        for &r in rows {
            out.row_ids.push(self.row_ids[r].clone());
            out.cells.extend_from_slice(self.row(r));
        }
        out
    }

    /// Appends rows from `other`, which must have identical columns.
    pub fn extend(&mut self, other: &FeatureTable) -> Result<()> {
        if other.names != self.names {
            return Err(Error::InvalidTable("column mismatch on append".into()));
        }
        self.row_ids.extend(other.row_ids.iter().cloned());
        self.cells.extend_from_slice(&other.cells);
        Ok(())
    }

    /// Count of missing cells.
    pub fn missing_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_none()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sex {
    F,
    M,
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sex::F => "F",
            Sex::M => "M",
        })
    }
}

impl FromStr for Sex {
    type Err = String;

    fn from_str(s: &str) -> core::result::Result<Self, String> {
        match s {
            "F" => Ok(Sex::F),
            "M" => Ok(Sex::M),
            other => Err(format!("sex must be F or M, got `{other}`")),
        }
    }
}

/// One scan of the cohort. `timestamp` is seconds since the Unix epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub subject_id: String,
    pub study_id: String,
    pub scan_id: String,
    pub timestamp: i64,
    pub sex: Sex,
    pub age: f64,
    pub contrast: bool,
    pub volume_path: String,
    pub mask_path: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CohortManifest {
    rows: Vec<ManifestRow>,
}

impl CohortManifest {
    /// Validates and wraps rows; errors name the first offending row
    /// (1-based, excluding the header).
    pub fn new(rows: Vec<ManifestRow>) -> Result<Self> {
        let mut scans = BTreeSet::new();
        let mut study_subject: BTreeMap<&str, &str> = BTreeMap::new();
        for (i, row) in rows.iter().enumerate() {
            let row_no = i + 1;
            let bad = |reason: String| Error::InvalidManifest {
                row: row_no,
                reason,
            };
            if row.subject_id.is_empty() || row.study_id.is_empty() || row.scan_id.is_empty() {
                return Err(bad(
                    "subject_id, study_id and scan_id must be non-empty".into()
                ));
            }
            if !(row.age.is_finite() && row.age >= 0.0) {
                return Err(bad(format!("invalid age {}", row.age)));
            }
            if !scans.insert(row.scan_id.as_str()) {
                return Err(bad(format!("duplicate scan_id `{}`", row.scan_id)));
            }
            match study_subject.get(row.study_id.as_str()) {
                Some(&subject) if subject != row.subject_id => {
                    return Err(bad(format!(
                        "study `{}` belongs to subjects `{subject}` and `{}`",
                        row.study_id, row.subject_id
                    )));
                }
                _ => {
                    study_subject.insert(&row.study_id, &row.subject_id);
                }
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[ManifestRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Distinct subject ids, sorted.
    pub fn subjects(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.rows.iter().map(|r| r.subject_id.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    /// Distinct study ids, sorted.
    pub fn studies(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.rows.iter().map(|r| r.study_id.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn row_by_scan(&self, scan_id: &str) -> Option<&ManifestRow> {
        self.rows.iter().find(|r| r.scan_id == scan_id)
    }

    /// scan id -> row index.
    pub fn scan_index(&self) -> BTreeMap<&str, usize> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| (r.scan_id.as_str(), i))
            .collect()
    }

    /// study id -> (subject id, acquisition timestamp of its earliest scan).
    pub fn study_info(&self) -> BTreeMap<&str, (&str, i64)> {
        let mut out: BTreeMap<&str, (&str, i64)> = BTreeMap::new();
        for r in &self.rows {
            out.entry(&r.study_id)
                .and_modify(|e| e.1 = e.1.min(r.timestamp))
                .or_insert((&r.subject_id, r.timestamp));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn row(subject: &str, study: &str, scan: &str) -> ManifestRow {
        ManifestRow {
            subject_id: subject.into(),
            study_id: study.into(),
            scan_id: scan.into(),
            timestamp: 0,
            sex: Sex::F,
            age: 70.0,
            contrast: true,
            volume_path: String::new(),
            mask_path: String::new(),
        }
    }

    #[test]
    fn duplicate_scan_is_rejected_with_row_number() {
        let err = CohortManifest::new(vec![row("a", "s1", "x"), row("a", "s1", "x")]).unwrap_err();
        assert_eq!(
            err,
            Error::InvalidManifest {
                row: 2,
                reason: "duplicate scan_id `x`".into()
            }
        );
    }

    #[test]
    fn study_shared_by_two_subjects_is_rejected() {
        assert!(CohortManifest::new(vec![row("a", "s1", "x"), row("b", "s1", "y")]).is_err());
    }

    #[test]
    fn three_rows_two_studies_one_subject() {
        let m = CohortManifest::new(vec![
            row("a", "s1", "x"),
            row("a", "s1", "y"),
            row("a", "s2", "z"),
        ])
        .unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.studies().len(), 2);
        assert_eq!(m.subjects().len(), 1);
    }

    #[test]
    fn table_is_rectangular_and_selects() {
        let mut t = FeatureTable::new(vec!["a".into(), "b".into()]).unwrap();
        t.push_row("r1", vec![Some(1.0), None]).unwrap();
        assert!(t.push_row("r2", vec![Some(1.0)]).is_err());
        let s = t.select_columns(&["b".into()]).unwrap();
        assert_eq!(s.get(0, 0), None);
        assert!(t.select_columns(&["zzz".into()]).is_err());
        assert!(FeatureTable::new(vec!["a".into(), "a".into()]).is_err());
    }
}
