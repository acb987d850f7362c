//! CSV readers and writers: manifest, feature tables, study labels, scores.
//!
//! Every file has a header row; missing feature cells are empty strings.
//! Reported row numbers are 1-based and exclude the header.

use std::collections::BTreeMap;
use std::path::Path;

use ahfx_core::table::{CohortManifest, FeatureTable, ManifestRow, Sex};
use chrono::{DateTime, NaiveDateTime};

use crate::error::{read_text, write_file, AppError, AppResult};

pub const MANIFEST_COLUMNS: [&str; 9] = [
    "subject_id",
    "study_id",
    "scan_id",
    "timestamp",
    "sex",
    "age",
    "contrast",
    "volume_path",
    "mask_path",
];

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes())
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Vec<u8> {
    w.into_inner().expect("writing to memory cannot fail")
}

fn csv_err(path: &Path, e: csv::Error) -> AppError {
    AppError::invalid(format!("{}: {e}", path.display()))
}

/// Seconds since the epoch from `YYYY-MM-DDTHH:MM:SS` (UTC) or RFC 3339.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT)
        .map(|t| t.and_utc().timestamp())
        .ok()
        .or_else(|| DateTime::parse_from_rfc3339(s).map(|t| t.timestamp()).ok())
}

pub fn format_timestamp(ts: i64) -> String {
    DateTime::from_timestamp(ts, 0)
        .map(|t| t.format(TIMESTAMP_FORMAT).to_string())
        .unwrap_or_else(|| ts.to_string())
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Some(true),
        "0" | "false" | "no" => Some(false),
        _ => None,
    }
}

pub fn parse_manifest(text: &str, origin: &Path) -> AppResult<CohortManifest> {
    let mut rdr = reader(text);
    let headers = rdr.headers().map_err(|e| csv_err(origin, e))?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            AppError::invalid(format!("{}: missing column `{name}`", origin.display()))
        })
    };
    let idx: Vec<usize> = MANIFEST_COLUMNS
        .iter()
        .map(|c| col(c))
        .collect::<AppResult<_>>()?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row_no = i + 1;
        let rec = rec.map_err(|e| csv_err(origin, e))?;
        let bad = |reason: String| {
            AppError::from(ahfx_core::Error::InvalidManifest {
                row: row_no,
                reason,
            })
        };
        let f = |k: usize| rec.get(idx[k]).unwrap_or("").trim();
        let timestamp = parse_timestamp(f(3))
            .ok_or_else(|| bad(format!("unparseable timestamp `{}`", f(3))))?;
        let sex: Sex = f(4).parse().map_err(bad)?;
        let age: f64 = f(5)
            .parse()
            .map_err(|_| bad(format!("unparseable age `{}`", f(5))))?;
        let contrast =
            parse_bool(f(6)).ok_or_else(|| bad(format!("unparseable contrast flag `{}`", f(6))))?;
        rows.push(ManifestRow {
            subject_id: f(0).into(),
            study_id: f(1).into(),
            scan_id: f(2).into(),
            timestamp,
            sex,
            age,
            contrast,
            volume_path: f(7).into(),
            mask_path: f(8).into(),
        });
    }
    Ok(CohortManifest::new(rows)?)
}

pub fn read_manifest(path: &Path) -> AppResult<CohortManifest> {
    parse_manifest(&read_text(path)?, path)
}

pub fn manifest_to_csv(m: &CohortManifest) -> Vec<u8> {
    let mut w = writer();
    w.write_record(MANIFEST_COLUMNS).expect("in-memory write");
    for r in m.rows() {
        w.write_record([
            r.subject_id.clone(),
            r.study_id.clone(),
            r.scan_id.clone(),
            format_timestamp(r.timestamp),
            r.sex.to_string(),
            r.age.to_string(),
            r.contrast.to_string(),
            r.volume_path.clone(),
            r.mask_path.clone(),
        ])
        .expect("in-memory write");
    }
    finish(w)
}

pub fn write_manifest(m: &CohortManifest, path: &Path) -> AppResult<()> {
    write_file(path, &manifest_to_csv(m))
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        format!("{v}").to_lowercase()
    }
}

pub fn parse_features(text: &str, origin: &Path) -> AppResult<FeatureTable> {
    let mut rdr = reader(text);
    let headers = rdr.headers().map_err(|e| csv_err(origin, e))?.clone();
    if headers.get(0) != Some("scan_id") {
        return Err(AppError::invalid(format!(
            "{}: first column must be `scan_id`",
            origin.display()
        )));
    }
    let names: Vec<String> = headers.iter().skip(1).map(String::from).collect();
    let mut table = FeatureTable::new(names.clone())?;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(origin, e))?;
        let mut cells = Vec::with_capacity(names.len());
        for (c, name) in names.iter().enumerate() {
            let s = rec.get(c + 1).unwrap_or("").trim();
            if s.is_empty() {
                cells.push(None);
                continue;
            }
            let v: f64 = s.parse().map_err(|_| {
                AppError::invalid(format!(
                    "{}: row {}: feature `{name}` has unparseable value `{s}`",
                    origin.display(),
                    i + 1
                ))
            })?;
            if !v.is_finite() {
                return Err(ahfx_core::Error::NonFinite {
                    feature: name.clone(),
                    row: i + 1,
                }
                .into());
            }
            cells.push(Some(v));
        }
        table.push_row(rec.get(0).unwrap_or("").trim(), cells)?;
    }
    table.validate_unique_rows()?;
    Ok(table)
}

pub fn read_features(path: &Path) -> AppResult<FeatureTable> {
    parse_features(&read_text(path)?, path)
}

pub fn features_to_csv(t: &FeatureTable) -> Vec<u8> {
    let mut w = writer();
    let mut header = vec!["scan_id".to_string()];
    header.extend(t.names().iter().cloned());
    w.write_record(&header).expect("in-memory write");
    for r in 0..t.n_rows() {
        let mut rec = vec![t.row_ids()[r].clone()];
        rec.extend(t.row(r).iter().map(|c| c.map(fmt_f64).unwrap_or_default()));
        w.write_record(&rec).expect("in-memory write");
    }
    finish(w)
}

pub fn write_features(t: &FeatureTable, path: &Path) -> AppResult<()> {
    write_file(path, &features_to_csv(t))
}

fn parse_label(s: &str) -> Option<bool> {
    match s.trim() {
        "AHF_positive" => Some(true),
        "AHF_negative" => Some(false),
        other => parse_bool(other),
    }
}

/// `study_id,label`; label is 1/0, true/false or AHF_positive/AHF_negative.
pub fn read_labels(path: &Path) -> AppResult<BTreeMap<String, bool>> {
    let text = read_text(path)?;
    let mut rdr = reader(&text);
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let id = headers.iter().position(|h| h == "study_id").unwrap_or(0);
    let lab = headers
        .iter()
        .position(|h| h == "label")
        .ok_or_else(|| AppError::invalid(format!("{}: missing column `label`", path.display())))?;
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let key = rec.get(id).unwrap_or("").trim().to_string();
        let raw = rec.get(lab).unwrap_or("");
        let v = parse_label(raw).ok_or_else(|| {
            AppError::invalid(format!(
                "{}: row {}: invalid label `{raw}`",
                path.display(),
                i + 1
            ))
        })?;
        if out.insert(key.clone(), v).is_some() {
            return Err(AppError::invalid(format!(
                "{}: row {}: duplicate study_id `{key}`",
                path.display(),
                i + 1
            )));
        }
    }
    Ok(out)
}

pub fn labels_to_csv(labels: &BTreeMap<String, bool>) -> Vec<u8> {
    let mut w = writer();
    w.write_record(["study_id", "label"])
        .expect("in-memory write");
    for (k, &v) in labels {
        w.write_record([k.as_str(), if v { "1" } else { "0" }])
            .expect("in-memory write");
    }
    finish(w)
}

/// Score file: an id column (first column) and a `probability` or `score`
/// column. Returns rows in file order.
pub fn read_scores(path: &Path) -> AppResult<Vec<(String, f64)>> {
    let text = read_text(path)?;
    let mut rdr = reader(&text);
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let col = headers
        .iter()
        .position(|h| h == "probability" || h == "score")
        .ok_or_else(|| {
            AppError::invalid(format!("{}: missing column `probability`", path.display()))
        })?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let raw = rec.get(col).unwrap_or("").trim();
        let v: f64 = raw
            .parse()
            .ok()
            .filter(|v: &f64| !v.is_nan())
            .ok_or_else(|| {
                AppError::invalid(format!(
                    "{}: row {}: invalid score `{raw}`",
                    path.display(),
                    i + 1
                ))
            })?;
        out.push((rec.get(0).unwrap_or("").trim().to_string(), v));
    }
    Ok(out)
}

/// Generic CSV from a header and string rows.
pub fn table_to_csv<S: AsRef<str>>(header: &[&str], rows: &[Vec<S>]) -> Vec<u8> {
    let mut w = writer();
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r.iter().map(|s| s.as_ref()))
            .expect("in-memory write");
    }
    finish(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str =
        "subject_id,study_id,scan_id,timestamp,sex,age,contrast,volume_path,mask_path\n";

    #[test]
    fn manifest_round_trip() {
        let text = format!(
            "{HEADER}p1,st1,a,2019-03-01T10:00:00,F,71,true,v/a,m/a\n\
             p1,st1,b,2019-03-01T10:05:00,F,71,false,v/b,m/b\n\
             p1,st2,c,2021-06-01T08:00:00,F,73,1,v/c,m/c\n"
        );
        let m = parse_manifest(&text, Path::new("m.csv")).unwrap();
        assert_eq!((m.len(), m.studies().len(), m.subjects().len()), (3, 2, 1));
        let again = parse_manifest(
            std::str::from_utf8(&manifest_to_csv(&m)).unwrap(),
            Path::new("x"),
        )
        .unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn manifest_errors_name_the_row() {
        let dup = format!(
            "{HEADER}p1,s1,a,2019-03-01T10:00:00,F,71,1,,\np1,s1,a,2019-03-01T10:00:00,F,71,1,,\n"
        );
        let e = parse_manifest(&dup, Path::new("m"))
            .unwrap_err()
            .to_string();
        assert!(e.contains("row 2") && e.contains("duplicate"), "{e}");
        let sex = format!("{HEADER}p1,s1,a,2019-03-01T10:00:00,X,71,1,,\n");
        let e = parse_manifest(&sex, Path::new("m"))
            .unwrap_err()
            .to_string();
        assert!(e.contains("row 1") && e.contains("`X`"), "{e}");
        let ts = format!("{HEADER}p1,s1,a,yesterday,F,71,1,,\n");
        assert!(parse_manifest(&ts, Path::new("m"))
            .unwrap_err()
            .to_string()
            .contains("timestamp"));
    }

    #[test]
    fn features_keep_missing_distinct_from_zero() {
        let text = "scan_id,a,b\ns1,0,\ns2,1.5,-2\n";
        let t = parse_features(text, Path::new("f")).unwrap();
        assert_eq!(t.row(0), &[Some(0.0), None]);
        assert_eq!(
            std::str::from_utf8(&features_to_csv(&t)).unwrap(),
            "scan_id,a,b\ns1,0,\ns2,1.5,-2\n"
        );
        assert!(parse_features("scan_id,a\ns1,inf\n", Path::new("f")).is_err());
    }

    #[test]
    fn float_formatting_round_trips() {
        for v in [0.1 + 0.2, 1e-300, -2.603, 1.0 / 3.0] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }
}
