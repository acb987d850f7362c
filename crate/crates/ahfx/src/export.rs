//! Plot-ready exports: SHAP bar and beeswarm CSV, waterfall JSON, ROC and
//! CV tables, PGM projections, and the run manifest.

use std::path::{Path, PathBuf};

use ahfx_core::evaluation::RocCurve;
use ahfx_core::protocol::GridResult;
use ahfx_core::shap::{ShapSummary, Waterfall};
use ahfx_core::volumetry::Projection;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::csv_io::{fmt_f64, table_to_csv};
use crate::error::{read_file, write_file, AppResult};

pub fn bar_csv(summary: &ShapSummary) -> Vec<u8> {
    let rows: Vec<Vec<String>> = summary
        .bar
        .iter()
        .map(|(f, v)| vec![f.clone(), fmt_f64(*v)])
        .collect();
    table_to_csv(&["feature", "mean_abs_shap"], &rows)
}

/// One row per (scan, feature). Missing raw values leave `value` empty and
/// set `missing` to 1.
pub fn beeswarm_csv(summary: &ShapSummary) -> Vec<u8> {
    let rows: Vec<Vec<String>> = summary
        .beeswarm
        .iter()
        .map(|r| {
            vec![
                r.scan_id.clone(),
                r.feature.clone(),
                fmt_f64(r.shap),
                r.value.map(fmt_f64).unwrap_or_default(),
                if r.value.is_none() { "1" } else { "0" }.to_string(),
            ]
        })
        .collect();
    table_to_csv(&["scan_id", "feature", "shap", "value", "missing"], &rows)
}

#[derive(Serialize)]
struct WaterfallFile<'a> {
    scan_id: &'a str,
    /// The chart's starting bar.
    mean_log_odds: f64,
    #[serde(flatten)]
    waterfall: &'a Waterfall,
}

pub fn waterfall_json(scan_id: &str, w: &Waterfall) -> Vec<u8> {
    let file = WaterfallFile {
        scan_id,
        mean_log_odds: w.expected_value,
        waterfall: w,
    };
    let mut s = serde_json::to_string_pretty(&file).expect("waterfall serializes");
    s.push('\n');
    s.into_bytes()
}

pub fn roc_csv(curve: &RocCurve) -> Vec<u8> {
    let rows: Vec<Vec<String>> = curve
        .points
        .iter()
        .map(|p| vec![fmt_f64(p.threshold), fmt_f64(p.fpr), fmt_f64(p.tpr)])
        .collect();
    table_to_csv(&["threshold", "fpr", "tpr"], &rows)
}

/// One row per combination and fold, then a `mean` row per combination.
pub fn cv_table_csv(result: &GridResult) -> Vec<u8> {
    let header = [
        "index",
        "eta",
        "gamma",
        "max_depth",
        "min_child_weight",
        "max_delta_step",
        "subsample",
        "lambda",
        "alpha",
        "tree_method",
        "scale_pos_weight",
        "fold",
        "auroc",
        "best_rounds",
    ];
    let mut rows = Vec::new();
    for r in &result.rows {
        let p = &r.params;
        let prefix = vec![
            r.index.to_string(),
            fmt_f64(p.eta),
            fmt_f64(p.gamma),
            p.max_depth.to_string(),
            fmt_f64(p.min_child_weight),
            fmt_f64(p.max_delta_step),
            fmt_f64(p.subsample),
            fmt_f64(p.lambda),
            fmt_f64(p.alpha),
            serde_json::to_value(p.tree_method)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default(),
            p.scale_pos_weight.to_string(),
        ];
        for (f, (a, n)) in r.cv.fold_aurocs.iter().zip(&r.cv.best_rounds).enumerate() {
            let mut row = prefix.clone();
            row.extend([f.to_string(), fmt_f64(*a), n.to_string()]);
            rows.push(row);
        }
        let mut row = prefix;
        row.extend(["mean".to_string(), fmt_f64(r.cv.mean_auroc), String::new()]);
        rows.push(row);
    }
    table_to_csv(&header, &rows)
}

/// Binary PGM (P5), 8-bit.
pub fn pgm(p: &Projection) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", p.width, p.height).into_bytes();
    out.extend_from_slice(&p.pixels);
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

/// Audit record written by every subcommand. Paths are recorded as given;
/// no timestamps, so identical runs produce identical manifests.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    /// Command-specific record (protocol settings, chosen parameters,
    /// selection trace, drop list, ...).
    pub details: serde_json::Value,
}

/// Collects output files as they are written, for the run manifest.
#[derive(Debug)]
pub struct OutputDir {
    pub root: PathBuf,
    written: Vec<FileHash>,
}

impl OutputDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            written: Vec::new(),
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> AppResult<PathBuf> {
        let path = self.path(name);
        write_file(&path, bytes)?;
        self.written.retain(|f| f.path != name);
        self.written.push(FileHash {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> AppResult<PathBuf> {
        let mut s = serde_json::to_string_pretty(value).expect("value serializes");
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    pub fn written(&self) -> &[FileHash] {
        &self.written
    }

    /// Writes `run_manifest.json` describing this run.
    pub fn finish(
        &mut self,
        command: &str,
        seed: u64,
        inputs: &[PathBuf],
        details: serde_json::Value,
    ) -> AppResult<PathBuf> {
        let inputs = inputs
            .iter()
            .map(|p| hash_file(p))
            .collect::<AppResult<Vec<_>>>()?;
        let mut outputs = self.written.clone();
        outputs.sort_by(|a, b| a.path.cmp(&b.path));
        let m = RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            inputs,
            outputs,
            details,
        };
        let mut s = serde_json::to_string_pretty(&m).expect("manifest serializes");
        s.push('\n');
        let path = self.path("run_manifest.json");
        write_file(&path, s.as_bytes())?;
        Ok(path)
    }
}

pub fn hash_file(path: &Path) -> AppResult<FileHash> {
    Ok(FileHash {
        path: path.display().to_string(),
        sha256: sha256_hex(&read_file(path)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_header() {
        let p = Projection {
            width: 2,
            height: 1,
            pixels: vec![0, 255],
        };
        assert_eq!(pgm(&p), b"P5\n2 1\n255\n\x00\xff".to_vec());
    }

    #[test]
    fn sha_of_empty() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
