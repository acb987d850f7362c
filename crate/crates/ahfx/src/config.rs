//! TOML run configuration. Command-line flags override file values.

use std::path::{Path, PathBuf};

use ahfx_core::boost::BoostParams;
use ahfx_core::protocol::{GridSpec, PipelineConfig};
use serde::Deserialize;

use crate::error::{read_text, AppError, AppResult};

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub manifest: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub reports: Option<PathBuf>,
    pub rules: Option<PathBuf>,
    pub overrides: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolKnobs {
    pub k: Option<usize>,
    pub test_fraction: Option<f64>,
    pub target_fpr: Option<f64>,
    pub epsilon: Option<f64>,
    pub n_boot: Option<usize>,
    pub drop_list: Option<Vec<String>>,
    pub candidates: Option<Vec<String>>,
    pub skip_selection: Option<bool>,
    pub fit_zscores: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub paths: Paths,
    pub protocol: ProtocolKnobs,
    /// Unlisted parameters keep their published search space.
    pub initial_grid: Option<GridSpec>,
    pub final_grid: Option<GridSpec>,
    /// Non-tuned booster settings (rounds, early stopping, base score).
    pub params: Option<BoostParams>,
}

impl RunConfig {
    /// Parses a config file. Relative paths are resolved against the file's
    /// directory, and `seed` is required.
    pub fn parse(text: &str, origin: &Path) -> AppResult<Self> {
        let mut cfg: RunConfig = toml::from_str(text)
            .map_err(|e| AppError::invalid(format!("{}: {e}", origin.display())))?;
        if cfg.seed.is_none() {
            return Err(AppError::invalid(format!(
                "{}: `seed` is required",
                origin.display()
            )));
        }
        let base = origin.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.paths.manifest,
            &mut cfg.paths.features,
            &mut cfg.paths.labels,
            &mut cfg.paths.reports,
            &mut cfg.paths.rules,
            &mut cfg.paths.overrides,
            &mut cfg.paths.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> AppResult<Self> {
        Self::parse(&read_text(path)?, path)
    }

    /// Protocol settings with every unset knob at its default.
    pub fn pipeline_config(&self, seed: u64) -> PipelineConfig {
        let d = PipelineConfig::default();
        let p = &self.protocol;
        PipelineConfig {
            seed,
            test_fraction: p.test_fraction.unwrap_or(d.test_fraction),
            n_folds: p.k.unwrap_or(d.n_folds),
            initial_grid: self.initial_grid.clone().unwrap_or(d.initial_grid),
            final_grid: self.final_grid.clone().unwrap_or(d.final_grid),
            base_params: self.params.clone().unwrap_or(d.base_params),
            epsilon: p.epsilon.unwrap_or(d.epsilon),
            candidates: p.candidates.clone().unwrap_or(d.candidates),
            drop_list: p.drop_list.clone().unwrap_or(d.drop_list),
            skip_selection: p.skip_selection.unwrap_or(d.skip_selection),
            target_fpr: p.target_fpr.unwrap_or(d.target_fpr),
            n_boot: p.n_boot.unwrap_or(d.n_boot),
            fit_zscores: p.fit_zscores.unwrap_or(d.fit_zscores),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_and_defaults() {
        let text = r#"
seed = 7
[paths]
manifest = "data/manifest.csv"
[protocol]
k = 5
drop_list = ["mean_lung_tissue"]
[final_grid]
eta = [0.2]
max_depth = [1]
"#;
        let cfg = RunConfig::parse(text, Path::new("/exp/run.toml")).unwrap();
        assert_eq!(
            cfg.paths.manifest.as_deref(),
            Some(Path::new("/exp/data/manifest.csv"))
        );
        let p = cfg.pipeline_config(cfg.seed.unwrap());
        assert_eq!((p.seed, p.n_folds), (7, 5));
        assert_eq!(p.final_grid.len(), 2304 / 12);
        assert_eq!(p.initial_grid.len(), 2304);
        assert_eq!(p.drop_list, vec!["mean_lung_tissue".to_string()]);
    }

    #[test]
    fn seed_is_required() {
        let e = RunConfig::parse("[protocol]\nk = 3\n", Path::new("r.toml")).unwrap_err();
        assert!(e.to_string().contains("seed"));
        assert!(RunConfig::parse("seed = 1\nbogus = 2\n", Path::new("r.toml")).is_err());
    }
}
