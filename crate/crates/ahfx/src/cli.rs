//! The `ahfx` command line. Each subcommand reads its inputs, writes its
//! artifacts under the output directory, and finishes with
//! `run_manifest.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use ahfx_core::boost::{train_with, BoostParams, Ensemble, TrainOptions};
use ahfx_core::evaluation::{
    calibrate_threshold, cohort_summary, confusion_report, render_report, render_summary,
    roc_and_auroc, roc_points_of_interest, Split, SubjectRecord,
};
use ahfx_core::exec::Executor;
use ahfx_core::grid::LabelMap;
use ahfx_core::phantom::{bayes_auroc, build_phantom, generate_cohort, CohortGenSpec, PhantomSpec};
use ahfx_core::protocol::{
    aggregate_study, final_params, forward_select, grid_search, partition, prune_features,
    run_pipeline, CohortSplit, Dataset, PipelineConfig, PipelineResult, Selection, StudyScore,
};
use ahfx_core::shap::{shap_summary, waterfall, Explainer};
use ahfx_core::table::{CohortManifest, FeatureTable, ManifestRow};
use ahfx_core::volumetry::{
    build_feature_vector, derive_structures, feature_names, measure, render_projection, Region,
    ScanMeta, ZReference, VOLUME_REGIONS,
};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::de::DeserializeOwned;
use serde_json::json;

use crate::config::RunConfig;
use crate::csv_io::{
    features_to_csv, fmt_f64, labels_to_csv, manifest_to_csv, read_features, read_labels,
    read_manifest, read_scores, table_to_csv,
};
use crate::error::{read_text, AppError, AppResult};
use crate::export::{bar_csv, beeswarm_csv, cv_table_csv, pgm, roc_csv, waterfall_json, OutputDir};
use crate::miner::{mine_corpus, parse_reports, Category, Polarity, RuleSet};
use crate::model_io::{load_model, model_to_json};
use crate::parallel::Rayon;
use crate::volume_io::{encode_volume, read_volume};

/// Exit code for usage errors and unknown subcommands.
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(
    name = "ahfx",
    version,
    about = "Explainable acute heart failure detection from chest CT measurements"
)]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = one per CPU). Never changes results.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mine study labels from radiology reports.
    MineLabels(MineArgs),
    /// Measure volumes, densities and diameters for every manifest scan.
    Measure(MeasureArgs),
    /// Fit modified Z-score references on the training scans.
    Zstats(DataArgs),
    /// Grid search with grouped cross-validation.
    Tune(TuneArgs),
    /// Forward feature selection followed by pruning.
    SelectFeatures(SelectArgs),
    /// Train a model, or run the whole protocol with --full-protocol.
    Train(TrainArgs),
    /// Scan and study probabilities from a model.
    Predict(PredictArgs),
    /// SHAP summaries and waterfalls.
    Explain(ExplainArgs),
    /// Confusion report at a fixed threshold.
    Evaluate(EvaluateArgs),
    /// Smallest threshold with train FPR at most the target.
    CalibrateThreshold(CalibrateArgs),
    /// Analytic phantoms and synthetic cohorts.
    Phantom(PhantomArgs),
    /// Cohort summary per split and sex.
    Summary(SummaryArgs),
}

#[derive(Debug, Args)]
pub struct MineArgs {
    /// JSON-lines corpus: {study_id, subject_id, text} per line.
    #[arg(long)]
    pub reports: Option<PathBuf>,
    /// Rule CSV; the shipped rules when omitted.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// CSV of manual corrections (study_id,label).
    #[arg(long)]
    pub overrides: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MeasureArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Label map JSON (structure name to code); the standard map when omitted.
    #[arg(long)]
    pub label_map: Option<PathBuf>,
    /// Z reference JSON from `zstats`; Z features stay empty without one.
    #[arg(long)]
    pub zref: Option<PathBuf>,
    /// Also write PGM projections of every region along every axis.
    #[arg(long)]
    pub projections: bool,
}

#[derive(Debug, Args, Clone)]
pub struct DataArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Which configured grid to search.
    #[arg(long, value_parser = ["initial", "final"], default_value = "initial")]
    pub grid: String,
    /// Feature names, one per line; every candidate when omitted.
    #[arg(long)]
    pub feature_list: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Booster parameters JSON (e.g. `best_params.json` from `tune`).
    #[arg(long)]
    pub params: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub feature_list: Option<PathBuf>,
    /// Split, tune, select, prune, retune, train, calibrate and evaluate.
    #[arg(long)]
    pub full_protocol: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// With a manifest, scan probabilities are also averaged per study.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Explain a single scan.
    #[arg(long)]
    pub scan: Option<String>,
    /// Write the scan's waterfall JSON.
    #[arg(long, requires = "scan")]
    pub waterfall: bool,
    /// Feature table whose rows define the expected value; the model's
    /// training covers when omitted.
    #[arg(long)]
    pub background: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Study scores (study_id, probability).
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    pub threshold: f64,
    /// Manifest providing sex for the subgroup blocks.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Training scores, to annotate the train-FPR point of the ROC curve.
    #[arg(long)]
    pub train_scores: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub target_fpr: Option<f64>,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct PhantomArgs {
    /// Geometric phantom spec JSON.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Synthetic cohort spec JSON.
    #[arg(long)]
    pub cohort: Option<PathBuf>,
    /// Write the built-in oracle suite phantom.
    #[arg(long)]
    pub oracle_suite: bool,
}

#[derive(Debug, Args)]
pub struct SummaryArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Split JSON written by `tune` or `train`; recomputed from the seed
    /// when omitted.
    #[arg(long)]
    pub split: Option<PathBuf>,
}

/// Parses `argv` and runs the subcommand; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

struct Ctx {
    cfg: RunConfig,
    seed: u64,
    exec: Rayon,
    out: OutputDir,
    inputs: Vec<PathBuf>,
}

impl Ctx {
    fn pipeline(&self) -> PipelineConfig {
        self.cfg.pipeline_config(self.seed)
    }

    /// Flag value, else config value, else an error naming the flag. The
    /// file must exist; it is recorded as an input of the run.
    fn input(
        &mut self,
        flag: Option<&PathBuf>,
        from_cfg: Option<&PathBuf>,
        name: &str,
    ) -> AppResult<PathBuf> {
        let p = flag
            .or(from_cfg)
            .cloned()
            .ok_or_else(|| AppError::invalid(format!("missing --{name} (or its config entry)")))?;
        self.track(&p)?;
        Ok(p)
    }

    fn track(&mut self, p: &Path) -> AppResult<()> {
        if !p.exists() {
            return Err(AppError::io(
                p,
                std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
            ));
        }
        if !self.inputs.iter().any(|q| q == p) {
            self.inputs.push(p.to_path_buf());
        }
        Ok(())
    }

    fn finish(&mut self, command: &str, details: serde_json::Value) -> AppResult<()> {
        let path = self.out.finish(command, self.seed, &self.inputs, details)?;
        info!("wrote {}", path.display());
        Ok(())
    }
}

fn execute(cli: &Cli) -> AppResult<()> {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = cli.seed.or(cfg.seed).unwrap_or(0);
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.paths.out.clone())
        .unwrap_or_else(|| PathBuf::from("ahfx_out"));
    let mut ctx = Ctx {
        cfg,
        seed,
        exec: Rayon::new(cli.threads)?,
        out: OutputDir::new(out),
        inputs: Vec::new(),
    };
    if let Some(c) = &cli.config {
        ctx.track(c)?;
    }
    info!("{} worker threads, seed {seed}", ctx.exec.threads());
    match &cli.command {
        Command::MineLabels(a) => mine_labels(&mut ctx, a),
        Command::Measure(a) => measure_cmd(&mut ctx, a),
        Command::Zstats(a) => zstats(&mut ctx, a),
        Command::Tune(a) => tune(&mut ctx, a),
        Command::SelectFeatures(a) => select_features(&mut ctx, a),
        Command::Train(a) => train_cmd(&mut ctx, a),
        Command::Predict(a) => predict(&mut ctx, a),
        Command::Explain(a) => explain(&mut ctx, a),
        Command::Evaluate(a) => evaluate(&mut ctx, a),
        Command::CalibrateThreshold(a) => calibrate(&mut ctx, a),
        Command::Phantom(a) => phantom(&mut ctx, a),
        Command::Summary(a) => summary(&mut ctx, a),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> AppResult<T> {
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| AppError::invalid(format!("{}: {e}", path.display())))
}

fn read_list(path: &Path) -> AppResult<Vec<String>> {
    Ok(read_text(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

fn list_text(items: &[String]) -> String {
    items.iter().map(|s| format!("{s}\n")).collect()
}

fn label_name(v: bool) -> &'static str {
    if v {
        "AHF_positive"
    } else {
        "AHF_negative"
    }
}

fn mine_labels(ctx: &mut Ctx, a: &MineArgs) -> AppResult<()> {
    let reports_path = ctx.input(
        a.reports.as_ref(),
        ctx.cfg.paths.reports.clone().as_ref(),
        "reports",
    )?;
    let rules = match a.rules.clone().or_else(|| ctx.cfg.paths.rules.clone()) {
        Some(p) => {
            ctx.track(&p)?;
            RuleSet::load(&p)?
        }
        None => RuleSet::default_rules(),
    };
    let overrides = match a
        .overrides
        .clone()
        .or_else(|| ctx.cfg.paths.overrides.clone())
    {
        Some(p) => {
            ctx.track(&p)?;
            Some(read_labels(&p)?)
        }
        None => None,
    };
    let reports = parse_reports(
        &read_text(&reports_path)?,
        &reports_path.display().to_string(),
    )?;
    let mined = mine_corpus(&ctx.exec, &reports, &rules, overrides.as_ref())?;

    let label_rows: Vec<Vec<String>> = mined
        .labels
        .iter()
        .map(|l| {
            vec![
                l.study_id.clone(),
                l.subject_id.clone(),
                label_name(l.positive).to_string(),
                l.findings.len().to_string(),
                if l.overridden { "1" } else { "0" }.to_string(),
            ]
        })
        .collect();
    ctx.out.write(
        "labels.csv",
        &table_to_csv(
            &[
                "study_id",
                "subject_id",
                "label",
                "n_findings",
                "overridden",
            ],
            &label_rows,
        ),
    )?;
    let finding_rows: Vec<Vec<String>> = mined
        .labels
        .iter()
        .flat_map(|l| {
            l.findings.iter().map(|f| {
                vec![
                    l.study_id.clone(),
                    f.category.name().to_string(),
                    f.polarity.name().to_string(),
                    f.start.to_string(),
                    f.end.to_string(),
                    f.text.clone(),
                ]
            })
        })
        .collect();
    ctx.out.write(
        "findings.csv",
        &table_to_csv(
            &["study_id", "category", "polarity", "start", "end", "text"],
            &finding_rows,
        ),
    )?;
    let summary_rows: Vec<Vec<String>> = Category::ALL
        .iter()
        .flat_map(|&c| [Polarity::Positive, Polarity::Negative].map(|p| (c, p)))
        .map(|(c, p)| {
            vec![
                c.name().to_string(),
                p.name().to_string(),
                mined.summary[&(c, p)].to_string(),
            ]
        })
        .collect();
    ctx.out.write(
        "summary.csv",
        &table_to_csv(&["category", "polarity", "reports"], &summary_rows),
    )?;
    let n_pos = mined.n_positive();
    info!("{} studies, {n_pos} positive", mined.labels.len());
    ctx.finish(
        "mine-labels",
        json!({
            "studies": mined.labels.len(),
            "positive": n_pos,
            "rules": rules.rules.len(),
            "overrides": overrides.map(|o| o.len()).unwrap_or(0),
        }),
    )
}

/// Resolves a manifest path column against the manifest's directory.
fn resolve(manifest: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest.parent().unwrap_or(Path::new("")).join(p)
    }
}

#[derive(serde::Serialize)]
struct ScanMeasurements {
    scan_id: String,
    volumes_ml: BTreeMap<String, f64>,
    missing: Vec<String>,
    diameters_mm: BTreeMap<String, Option<f64>>,
}

fn measure_cmd(ctx: &mut Ctx, a: &MeasureArgs) -> AppResult<()> {
    let manifest_path = ctx.input(
        a.manifest.as_ref(),
        ctx.cfg.paths.manifest.clone().as_ref(),
        "manifest",
    )?;
    let manifest = read_manifest(&manifest_path)?;
    let map = match &a.label_map {
        Some(p) => {
            ctx.track(p)?;
            read_json::<LabelMap>(p)?
        }
        None => LabelMap::standard(),
    };
    let zref = match &a.zref {
        Some(p) => {
            ctx.track(p)?;
            Some(read_json::<ZReference>(p)?)
        }
        None => None,
    };
    for r in manifest.rows() {
        for p in [&r.volume_path, &r.mask_path] {
            ctx.track(&resolve(&manifest_path, &format!("{p}.hdr.json")))?;
            ctx.track(&resolve(&manifest_path, &format!("{p}.raw")))?;
        }
    }
    let rows = manifest.rows();
    let results = ctx.exec.map(rows.len(), |i| -> AppResult<_> {
        let r = &rows[i];
        let ct = read_volume(&resolve(&manifest_path, &r.volume_path))?;
        let labels = read_volume(&resolve(&manifest_path, &r.mask_path))?;
        if !ct.same_geometry(&labels) {
            return Err(AppError::invalid(format!(
                "scan `{}`: CT and mask geometry differ",
                r.scan_id
            )));
        }
        let structures = derive_structures(&labels, &map)
            .map_err(|e| AppError::invalid(format!("scan `{}`: {e}", r.scan_id)))?;
        let m = measure(&ct, &structures)?;
        let meta = ScanMeta {
            age: r.age,
            sex: r.sex,
            contrast: r.contrast,
        };
        let fv = build_feature_vector(&m, zref.as_ref(), &meta);
        let projections = if a.projections {
            let mut v = Vec::new();
            for (region, mask) in region_masks(&structures) {
                for axis in 0..3 {
                    v.push((
                        format!(
                            "{}/{}_{}.pgm",
                            r.scan_id,
                            region.name(),
                            ["x", "y", "z"][axis]
                        ),
                        pgm(&render_projection(mask, axis)),
                    ));
                }
            }
            v
        } else {
            Vec::new()
        };
        let record = ScanMeasurements {
            scan_id: r.scan_id.clone(),
            volumes_ml: m
                .volumes
                .iter()
                .map(|(k, v)| (k.name().to_string(), v.volume_ml))
                .collect(),
            missing: m
                .volumes
                .iter()
                .filter(|(_, v)| v.missing)
                .map(|(k, _)| k.name().to_string())
                .collect(),
            diameters_mm: m
                .diameters
                .iter()
                .map(|(k, v)| (k.name().to_string(), *v))
                .collect(),
        };
        Ok((fv, record, projections))
    });
    let mut table = FeatureTable::new(feature_names())?;
    let mut records = Vec::new();
    for (r, res) in rows.iter().zip(results) {
        let (fv, record, projections) = res?;
        table.push_row(r.scan_id.clone(), fv.values)?;
        records.push(record);
        for (name, bytes) in projections {
            ctx.out.write(&format!("projections/{name}"), &bytes)?;
        }
    }
    ctx.out.write("features.csv", &features_to_csv(&table))?;
    ctx.out.write_json("measurements.json", &records)?;
    info!("measured {} scans", rows.len());
    ctx.finish(
        "measure",
        json!({ "scans": rows.len(), "zref": a.zref.is_some(), "projections": a.projections }),
    )
}

fn region_masks(
    s: &ahfx_core::volumetry::DerivedStructureSet,
) -> Vec<(Region, &ahfx_core::grid::Mask)> {
    let mut v: Vec<(Region, &ahfx_core::grid::Mask)> =
        s.base.iter().map(|(k, m)| (Region::Base(*k), m)).collect();
    for r in [
        Region::TotalLung,
        Region::LungTissue,
        Region::LungBoundary,
        Region::TotalHeart,
    ] {
        v.push((r, s.mask(r)));
    }
    v
}

fn load_dataset(ctx: &mut Ctx, a: &DataArgs) -> AppResult<Dataset> {
    let paths = ctx.cfg.paths.clone();
    let m = ctx.input(a.manifest.as_ref(), paths.manifest.as_ref(), "manifest")?;
    let f = ctx.input(a.features.as_ref(), paths.features.as_ref(), "features")?;
    let l = ctx.input(a.labels.as_ref(), paths.labels.as_ref(), "labels")?;
    let manifest = read_manifest(&m)?;
    let features = read_features(&f)?;
    let labels = read_labels(&l)?;
    let (ds, notices) = Dataset::new(&manifest, &features, &labels)?;
    for n in notices {
        warn!("{n}");
    }
    Ok(ds)
}

fn zstats(ctx: &mut Ctx, a: &DataArgs) -> AppResult<()> {
    let ds = load_dataset(ctx, a)?;
    let part = partition(&ds, &ctx.pipeline())?;
    let z = ZReference::fit_table(&ds.features, &part.train_scans)?;
    for (name, e) in &z.entries {
        if e.degenerate {
            warn!("`{name}` has MAD 0 on the training scans; its Z feature will be missing");
        }
    }
    let applied = z.apply_to_table(&ds.features)?;
    ctx.out.write_json("zref.json", &z)?;
    ctx.out
        .write("features_z.csv", &features_to_csv(&applied))?;
    ctx.out.write_json("split.json", &part.split)?;
    ctx.finish(
        "zstats",
        json!({ "train_scans": part.train_scans.len(), "volumes": VOLUME_REGIONS.len(), "entries": z.entries.len() }),
    )
}

fn candidates(ctx: &mut Ctx, ds: &Dataset, list: Option<&PathBuf>) -> AppResult<Vec<String>> {
    if let Some(p) = list {
        ctx.track(p)?;
        return read_list(p);
    }
    let c = ctx.pipeline().candidates;
    Ok(if c.is_empty() {
        ds.features.names().to_vec()
    } else {
        c
    })
}

fn base_params(ctx: &mut Ctx, path: Option<&PathBuf>) -> AppResult<BoostParams> {
    let mut p = match path {
        Some(p) => {
            ctx.track(p)?;
            read_json::<BoostParams>(p)?
        }
        None => ctx.pipeline().base_params,
    };
    p.seed = ctx.seed;
    p.validate()?;
    Ok(p)
}

fn tune(ctx: &mut Ctx, a: &TuneArgs) -> AppResult<()> {
    let ds = load_dataset(ctx, &a.data)?;
    let cfg = ctx.pipeline();
    let part = partition(&ds, &cfg)?;
    let features = candidates(ctx, &ds, a.feature_list.as_ref())?;
    let grid = if a.grid == "final" {
        &cfg.final_grid
    } else {
        &cfg.initial_grid
    };
    let base = base_params(ctx, None)?;
    info!("{} combinations x {} folds", grid.len(), cfg.n_folds);
    let result = grid_search(
        &ctx.exec,
        &ds,
        &part.train_scans,
        &part.folds,
        &features,
        grid,
        &base,
    )?;
    let best = final_params(&result);
    ctx.out.write("cv_table.csv", &cv_table_csv(&result))?;
    ctx.out.write_json("best_params.json", &best)?;
    ctx.out.write_json("split.json", &part.split)?;
    ctx.out.write_json("folds.json", &part.folds)?;
    info!(
        "best combination {} with CV AUROC {:.4}",
        result.best_index,
        result.best().cv.mean_auroc
    );
    ctx.finish(
        "tune",
        json!({
            "grid": grid,
            "k": cfg.n_folds,
            "test_fraction": cfg.test_fraction,
            "features": features,
            "best_index": result.best_index,
            "best_cv_auroc": result.best().cv.mean_auroc,
            "chosen_params": best,
        }),
    )
}

fn trace_csv(sel: &Selection) -> Vec<u8> {
    let rows: Vec<Vec<String>> = sel
        .trace
        .iter()
        .map(|t| {
            vec![
                t.step.to_string(),
                t.feature.clone(),
                fmt_f64(t.cv_auroc),
                if t.accepted { "1" } else { "0" }.to_string(),
            ]
        })
        .collect();
    table_to_csv(&["step", "feature", "cv_auroc", "accepted"], &rows)
}

fn select_features(ctx: &mut Ctx, a: &SelectArgs) -> AppResult<()> {
    let ds = load_dataset(ctx, &a.data)?;
    let cfg = ctx.pipeline();
    let part = partition(&ds, &cfg)?;
    let features = candidates(ctx, &ds, None)?;
    let params = base_params(ctx, a.params.as_ref())?;
    let sel = forward_select(
        &ctx.exec,
        &ds,
        &part.train_scans,
        &part.folds,
        &features,
        &params,
        cfg.epsilon,
    )?;
    let pruned = prune_features(&sel.selected, &cfg.drop_list)?;
    ctx.out.write("selection_trace.csv", &trace_csv(&sel))?;
    ctx.out.write_json("selection.json", &sel)?;
    ctx.out
        .write("selected_features.txt", list_text(&pruned).as_bytes())?;
    info!(
        "selected {} features, {} after pruning",
        sel.selected.len(),
        pruned.len()
    );
    ctx.finish(
        "select-features",
        json!({
            "params": params,
            "epsilon": cfg.epsilon,
            "selection_trace": sel.trace,
            "drop_list": cfg.drop_list,
            "features": pruned,
        }),
    )
}

fn score_rows(scores: &[StudyScore]) -> Vec<u8> {
    let rows: Vec<Vec<String>> = scores
        .iter()
        .map(|s| {
            vec![
                s.study.clone(),
                s.subject.clone(),
                if s.label { "1" } else { "0" }.to_string(),
                s.sex.to_string(),
                fmt_f64(s.age),
                fmt_f64(s.probability),
            ]
        })
        .collect();
    table_to_csv(
        &[
            "study_id",
            "subject_id",
            "label",
            "sex",
            "age",
            "probability",
        ],
        &rows,
    )
}

fn train_cmd(ctx: &mut Ctx, a: &TrainArgs) -> AppResult<()> {
    let ds = load_dataset(ctx, &a.data)?;
    if a.full_protocol {
        let cfg = ctx.pipeline();
        let res = run_pipeline(&ctx.exec, &ds, &cfg)?;
        return write_pipeline(ctx, &cfg, &res);
    }
    let cfg = ctx.pipeline();
    let part = partition(&ds, &cfg)?;
    let features = candidates(ctx, &ds, a.feature_list.as_ref())?;
    let params = base_params(ctx, a.params.as_ref())?;
    let table = ds
        .features
        .select_rows(&part.train_scans)
        .select_columns(&features)?;
    let labels: Vec<bool> = part.train_scans.iter().map(|&s| ds.scan_label(s)).collect();
    let model = train_with(&table, &labels, &params, &TrainOptions::default())?.ensemble;
    let probs = ds.predict(&model, &part.train_scans)?;
    let studies = ds.study_scores(&part.train_scans, &probs)?;
    let scores: Vec<f64> = studies.iter().map(|s| s.1).collect();
    let study_labels: Vec<bool> = studies.iter().map(|s| ds.studies[s.0].label).collect();
    let threshold = calibrate_threshold(&scores, &study_labels, cfg.target_fpr)?;
    ctx.out
        .write("model.json", model_to_json(&model).as_bytes())?;
    ctx.out.write_json(
        "threshold.json",
        &json!({ "threshold": threshold, "target_fpr": cfg.target_fpr }),
    )?;
    ctx.out.write_json("split.json", &part.split)?;
    ctx.finish(
        "train",
        json!({ "params": params, "features": features, "threshold": threshold }),
    )
}

fn write_pipeline(ctx: &mut Ctx, cfg: &PipelineConfig, res: &PipelineResult) -> AppResult<()> {
    for w in &res.warnings {
        warn!("{w}");
    }
    let out = &mut ctx.out;
    out.write("model.json", model_to_json(&res.ensemble).as_bytes())?;
    out.write_json("split.json", &res.split)?;
    out.write_json("folds.json", &res.folds)?;
    out.write("cv_initial.csv", &cv_table_csv(&res.initial))?;
    out.write("cv_final.csv", &cv_table_csv(&res.retune))?;
    if let Some(sel) = &res.selection {
        out.write("selection_trace.csv", &trace_csv(sel))?;
        out.write_json("selection.json", sel)?;
    }
    if let Some(z) = &res.zreference {
        out.write_json("zref.json", z)?;
    }
    out.write("final_features.txt", list_text(&res.features).as_bytes())?;
    out.write_json(
        "threshold.json",
        &json!({ "threshold": res.threshold, "target_fpr": cfg.target_fpr, "train_auroc": res.train_auroc }),
    )?;
    out.write("train_scores.csv", &score_rows(&res.train_scores))?;
    out.write("test_scores.csv", &score_rows(&res.test_scores))?;
    out.write_json("eval_report.json", &res.report)?;
    out.write("eval_report.txt", render_report(&res.report).as_bytes())?;
    let te: Vec<f64> = res.test_scores.iter().map(|s| s.probability).collect();
    let tl: Vec<bool> = res.test_scores.iter().map(|s| s.label).collect();
    if let Ok((curve, _)) = roc_and_auroc(&te, &tl) {
        out.write("roc_test.csv", &roc_csv(&curve))?;
    }
    println!("{}", render_report(&res.report));
    info!(
        "train AUROC {:.4}, test AUROC {}",
        res.train_auroc,
        res.report
            .auroc
            .map(|a| format!("{a:.4}"))
            .unwrap_or_else(|| "n/a".into())
    );
    let details = json!({
        "test_fraction": cfg.test_fraction,
        "k": cfg.n_folds,
        "epsilon": cfg.epsilon,
        "target_fpr": cfg.target_fpr,
        "n_boot": cfg.n_boot,
        "initial_grid": cfg.initial_grid,
        "final_grid": cfg.final_grid,
        "initial_params": res.initial.best_params,
        "chosen_params": res.final_params,
        "selection_trace": res.selection.as_ref().map(|s| &s.trace),
        "drop_list": cfg.drop_list,
        "features": res.features,
        "threshold": res.threshold,
        "warnings": res.warnings,
    });
    ctx.finish("train --full-protocol", details)
}

fn predict(ctx: &mut Ctx, a: &PredictArgs) -> AppResult<()> {
    ctx.track(&a.model)?;
    let model = load_model(&a.model)?;
    let fpath = ctx.input(
        a.features.as_ref(),
        ctx.cfg.paths.features.clone().as_ref(),
        "features",
    )?;
    let table = read_features(&fpath)?;
    let preds = ctx.exec.map(table.n_rows(), |r| -> AppResult<(f64, f64)> {
        Ok(model.predict(&model.align(table.names(), table.row(r))?))
    });
    let preds = preds.into_iter().collect::<AppResult<Vec<_>>>()?;
    let rows: Vec<Vec<String>> = table
        .row_ids()
        .iter()
        .zip(&preds)
        .map(|(id, (m, p))| vec![id.clone(), fmt_f64(*m), fmt_f64(*p)])
        .collect();
    ctx.out.write(
        "scan_predictions.csv",
        &table_to_csv(&["scan_id", "margin", "probability"], &rows),
    )?;
    if let Some(mp) = a
        .manifest
        .clone()
        .or_else(|| ctx.cfg.paths.manifest.clone())
    {
        ctx.track(&mp)?;
        let manifest = read_manifest(&mp)?;
        let mut by_study: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for (id, (_, p)) in table.row_ids().iter().zip(&preds) {
            let row = manifest
                .row_by_scan(id)
                .ok_or_else(|| AppError::invalid(format!("scan `{id}` is not in the manifest")))?;
            by_study.entry(&row.study_id).or_default().push(*p);
        }
        let rows = by_study
            .into_iter()
            .map(|(s, ps)| Ok(vec![s.to_string(), fmt_f64(aggregate_study(&ps)?)]))
            .collect::<AppResult<Vec<_>>>()?;
        ctx.out.write(
            "study_predictions.csv",
            &table_to_csv(&["study_id", "probability"], &rows),
        )?;
    }
    ctx.finish("predict", json!({ "scans": table.n_rows() }))
}

fn explain(ctx: &mut Ctx, a: &ExplainArgs) -> AppResult<()> {
    ctx.track(&a.model)?;
    let model = load_model(&a.model)?;
    let fpath = ctx.input(
        a.features.as_ref(),
        ctx.cfg.paths.features.clone().as_ref(),
        "features",
    )?;
    let table = read_features(&fpath)?;
    let aligned = align_table(&model, &table)?;
    let background = match &a.background {
        Some(p) => {
            ctx.track(p)?;
            Some(align_table(&model, &read_features(p)?)?)
        }
        None => None,
    };
    let explainer = match &background {
        Some(bg) => Explainer::from_background(&model, bg)?,
        None => Explainer::from_covers(&model)?,
    };
    if let Some(scan) = &a.scan {
        let r = aligned.row_index(scan).ok_or_else(|| {
            AppError::invalid(format!("scan `{scan}` is not in {}", fpath.display()))
        })?;
        let x = aligned.row(r);
        let e = explainer.explain(x);
        let rows: Vec<Vec<String>> = model
            .feature_names
            .iter()
            .zip(&e.values)
            .zip(x)
            .map(|((f, v), raw)| vec![f.clone(), fmt_f64(*v), raw.map(fmt_f64).unwrap_or_default()])
            .collect();
        ctx.out.write(
            &format!("shap_{scan}.csv"),
            &table_to_csv(&["feature", "shap", "value"], &rows),
        )?;
        if a.waterfall {
            let w = waterfall(&explainer, x);
            ctx.out
                .write(&format!("waterfall_{scan}.json"), &waterfall_json(scan, &w))?;
            println!(
                "margin {} probability {}",
                fmt_f64(w.margin),
                fmt_f64(w.probability)
            );
        }
        return ctx.finish(
            "explain",
            json!({ "scan": scan, "expected_value": e.expected_value, "margin": e.margin }),
        );
    }
    let summary = shap_summary(&ctx.exec, &explainer, &aligned)?;
    ctx.out.write("shap_bar.csv", &bar_csv(&summary))?;
    ctx.out
        .write("shap_beeswarm.csv", &beeswarm_csv(&summary))?;
    ctx.finish(
        "explain",
        json!({ "scans": aligned.n_rows(), "expected_value": explainer.expected_value(), "background": a.background.is_some() }),
    )
}

/// `table` with columns in the model's feature order; features the model
/// never uses may be absent and read as missing.
fn align_table(model: &Ensemble, table: &FeatureTable) -> AppResult<FeatureTable> {
    let mut out = FeatureTable::new(model.feature_names.clone())?;
    for r in 0..table.n_rows() {
        out.push_row(
            table.row_ids()[r].clone(),
            model.align(table.names(), table.row(r))?,
        )?;
    }
    Ok(out)
}

/// Scores joined to labels by id, in score-file order. Unlabeled ids are
/// skipped with a warning.
fn join_scores(
    scores: &[(String, f64)],
    labels: &BTreeMap<String, bool>,
) -> AppResult<(Vec<String>, Vec<f64>, Vec<bool>)> {
    let mut ids = Vec::new();
    let mut s = Vec::new();
    let mut l = Vec::new();
    let mut seen = BTreeSet::new();
    let mut skipped = 0;
    for (id, v) in scores {
        if !seen.insert(id.as_str()) {
            return Err(AppError::invalid(format!("duplicate score id `{id}`")));
        }
        match labels.get(id) {
            Some(&lab) => {
                ids.push(id.clone());
                s.push(*v);
                l.push(lab);
            }
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        warn!("{skipped} scored ids have no label and were skipped");
    }
    Ok((ids, s, l))
}

fn evaluate(ctx: &mut Ctx, a: &EvaluateArgs) -> AppResult<()> {
    ctx.track(&a.scores)?;
    let lpath = ctx.input(
        a.labels.as_ref(),
        ctx.cfg.paths.labels.clone().as_ref(),
        "labels",
    )?;
    let labels = read_labels(&lpath)?;
    let (ids, scores, labs) = join_scores(&read_scores(&a.scores)?, &labels)?;
    let sex = match a
        .manifest
        .clone()
        .or_else(|| ctx.cfg.paths.manifest.clone())
    {
        Some(mp) => {
            ctx.track(&mp)?;
            let manifest = read_manifest(&mp)?;
            let by_study: BTreeMap<&str, _> = manifest
                .rows()
                .iter()
                .map(|r| (r.study_id.as_str(), r.sex))
                .collect();
            Some(
                ids.iter()
                    .map(|id| {
                        by_study.get(id.as_str()).copied().ok_or_else(|| {
                            AppError::invalid(format!("study `{id}` is not in the manifest"))
                        })
                    })
                    .collect::<AppResult<Vec<_>>>()?,
            )
        }
        None => None,
    };
    let cfg = ctx.pipeline();
    let report = confusion_report(
        &scores,
        &labs,
        a.threshold,
        sex.as_deref(),
        cfg.n_boot,
        ctx.seed,
    )?;
    let text = render_report(&report);
    println!("{text}");
    ctx.out.write_json("eval_report.json", &report)?;
    ctx.out.write("eval_report.txt", text.as_bytes())?;
    if let Ok((curve, _)) = roc_and_auroc(&scores, &labs) {
        ctx.out.write("roc.csv", &roc_csv(&curve))?;
    }
    if let Some(tp) = &a.train_scores {
        ctx.track(tp)?;
        let (_, ts, tl) = join_scores(&read_scores(tp)?, &labels)?;
        let poi = roc_points_of_interest(&ts, &tl, &scores, &labs)?;
        ctx.out.write_json("roc_points.json", &poi)?;
    }
    ctx.finish(
        "evaluate",
        json!({ "threshold": a.threshold, "studies": ids.len() }),
    )
}

fn calibrate(ctx: &mut Ctx, a: &CalibrateArgs) -> AppResult<()> {
    ctx.track(&a.scores)?;
    let lpath = ctx.input(
        a.labels.as_ref(),
        ctx.cfg.paths.labels.clone().as_ref(),
        "labels",
    )?;
    let (_, scores, labs) = join_scores(&read_scores(&a.scores)?, &read_labels(&lpath)?)?;
    let target = a.target_fpr.unwrap_or(ctx.pipeline().target_fpr);
    let t = calibrate_threshold(&scores, &labs, target)?;
    println!("{}", fmt_f64(t));
    ctx.out.write_json(
        "threshold.json",
        &json!({ "threshold": t, "target_fpr": target }),
    )?;
    ctx.finish(
        "calibrate-threshold",
        json!({ "threshold": t, "target_fpr": target }),
    )
}

fn phantom(ctx: &mut Ctx, a: &PhantomArgs) -> AppResult<()> {
    if let Some(p) = &a.cohort {
        ctx.track(p)?;
        let mut spec: CohortGenSpec = read_json(p)?;
        spec.seed = ctx.seed;
        let cohort = generate_cohort(&spec)?;
        let bayes = bayes_auroc(&spec)?;
        ctx.out
            .write("manifest.csv", &manifest_to_csv(&cohort.manifest))?;
        ctx.out
            .write("features.csv", &features_to_csv(&cohort.features))?;
        ctx.out
            .write("labels.csv", &labels_to_csv(&cohort.study_labels))?;
        ctx.out
            .write_json("bayes.json", &json!({ "bayes_auroc": bayes }))?;
        info!(
            "{} subjects, Bayes AUROC {bayes:.4}",
            cohort.subject_labels.len()
        );
        return ctx.finish(
            "phantom --cohort",
            json!({ "spec": spec, "bayes_auroc": bayes }),
        );
    }
    let spec = match &a.spec {
        Some(p) => {
            ctx.track(p)?;
            read_json::<PhantomSpec>(p)?
        }
        None => PhantomSpec::oracle_suite(),
    };
    let ph = build_phantom(&spec)?;
    for (name, grid) in [("ct", &ph.intensity), ("mask", &ph.labels)] {
        let (header, payload) = encode_volume(grid);
        ctx.out.write(&format!("{name}.hdr.json"), &header)?;
        ctx.out.write(&format!("{name}.raw"), &payload)?;
    }
    let manifest = CohortManifest::new(vec![ManifestRow {
        subject_id: "phantom".into(),
        study_id: "phantom-1".into(),
        scan_id: "phantom-1-1".into(),
        timestamp: 0,
        sex: ahfx_core::table::Sex::F,
        age: 0.0,
        contrast: true,
        volume_path: "ct".into(),
        mask_path: "mask".into(),
    }])?;
    ctx.out.write("manifest.csv", &manifest_to_csv(&manifest))?;
    ctx.out.write_json("label_map.json", &ph.label_map)?;
    ctx.out.write_json("truths.json", &ph.truths)?;
    ctx.out.write_json("spec.json", &spec)?;
    info!(
        "phantom {:?} voxels, {} structures",
        spec.dims,
        ph.truths.len()
    );
    ctx.finish("phantom --spec", json!({ "structures": ph.truths.len() }))
}

fn summary(ctx: &mut Ctx, a: &SummaryArgs) -> AppResult<()> {
    let paths = ctx.cfg.paths.clone();
    let mp = ctx.input(a.manifest.as_ref(), paths.manifest.as_ref(), "manifest")?;
    let lp = ctx.input(a.labels.as_ref(), paths.labels.as_ref(), "labels")?;
    let manifest = read_manifest(&mp)?;
    let labels = read_labels(&lp)?;
    // Subject label: any positive labeled study; age and sex of its latest
    // labeled study.
    let mut subj: BTreeMap<&str, (bool, i64, &ManifestRow)> = BTreeMap::new();
    for r in manifest.rows() {
        let Some(&lab) = labels.get(&r.study_id) else {
            continue;
        };
        subj.entry(&r.subject_id)
            .and_modify(|e| {
                e.0 |= lab;
                if r.timestamp > e.1 {
                    e.1 = r.timestamp;
                    e.2 = r;
                }
            })
            .or_insert((lab, r.timestamp, r));
    }
    let split: CohortSplit = match &a.split {
        Some(p) => {
            ctx.track(p)?;
            read_json(p)?
        }
        None => {
            let ids: Vec<String> = subj.keys().map(|s| s.to_string()).collect();
            ahfx_core::protocol::split_cohort(&ids, ctx.pipeline().test_fraction, ctx.seed)?
        }
    };
    let test: BTreeSet<&str> = split.test.iter().map(String::as_str).collect();
    let train: BTreeSet<&str> = split.train.iter().map(String::as_str).collect();
    let records: Vec<SubjectRecord> = subj
        .iter()
        .filter_map(|(s, (pos, _, r))| {
            let split = if test.contains(s) {
                Split::Test
            } else if train.contains(s) {
                Split::Train
            } else {
                return None;
            };
            Some(SubjectRecord {
                split,
                sex: r.sex,
                age: r.age,
                positive: *pos,
            })
        })
        .collect();
    let s = cohort_summary(&records);
    for n in &s.notices {
        warn!("{n}");
    }
    let text = render_summary(&s);
    println!("{text}");
    ctx.out.write("summary.txt", text.as_bytes())?;
    ctx.out.write_json("summary.json", &s)?;
    ctx.finish("summary", json!({ "subjects": records.len() }))
}
