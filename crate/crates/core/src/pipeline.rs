//! Stage orchestration: configuration, the ingest/train/explain/cluster/
//! spatial/report stages, and the run manifest.
//!
//! Every stage reads its inputs from the output directory of earlier stages,
//! so any stage can be re-run on its own. Each output file carries the tool
//! version and global seed in a `#` comment line (CSV) or a `meta` object
//! (JSON).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::cluster::{self, KMeansConfig};
use crate::data::{self, CountyRecord, FeatureMatrix, SourceSchema};
use crate::error::{Error, Result};
use crate::eval::{self, CvResult, ComparisonTable, Learner, ModelSpec};
use crate::linear::LassoConfig;
use crate::profile::{self, ProfileRow};
use crate::rng::derive_seed;
use crate::shap;
use crate::spatial;
use crate::synth::{self, SynthConfig};
use crate::trees::{fit_gbt, ForestConfig, GbtModel, TrainConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const TOOL: &str = "silentrisk";

/// Number of dependence tables written by the explain stage.
pub const DEPENDENCE_FEATURES: usize = 4;

pub mod files {
    pub const COUNTIES: &str = "counties.csv";
    pub const SUPPRESSED: &str = "suppressed.csv";
    pub const REFERENCE_RATE: &str = "reference_rate.json";
    pub const JOIN_REPORT: &str = "join_report.json";
    pub const SUPPRESSED_PROFILE: &str = "suppressed_profile.csv";

    pub const COMPARISON_CSV: &str = "model_comparison.csv";
    pub const COMPARISON_JSON: &str = "model_comparison.json";
    pub const MODEL: &str = "model.json";
    pub const CV_PREDICTIONS: &str = "cv_predictions.csv";

    pub const IMPORTANCE: &str = "importance.json";
    pub const BEESWARM: &str = "beeswarm.csv";
    pub const PHI: &str = "phi.csv";
    pub const DEPENDENCE_PREFIX: &str = "dependence_";

    pub const CLUSTER_SUMMARY: &str = "cluster_summary.json";
    pub const CLUSTER_PROFILE: &str = "cluster_profile.csv";
    pub const CLUSTER_ASSIGNMENTS: &str = "cluster_assignments.csv";
    pub const QUADRANTS: &str = "quadrants.csv";
    pub const QUADRANT_COMPARISON: &str = "quadrant_comparison.csv";
    pub const SILENT_RISK_CSV: &str = "silent_risk.csv";
    pub const SILENT_RISK_JSON: &str = "silent_risk.json";
    pub const DESERT_CONTRAST: &str = "desert_contrast.json";

    pub const MORAN_GLOBAL: &str = "moran_global.json";
    pub const LISA_CSV: &str = "lisa.csv";
    pub const LISA_GEOJSON: &str = "lisa.geojson";

    pub const REPORT: &str = "report.json";
    pub const MANIFEST: &str = "manifest.json";
    pub const CONFIG: &str = "config.toml";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Train,
    Explain,
    Cluster,
    Spatial,
    Report,
}

impl Stage {
    pub const ANALYSIS: [Stage; 5] = [Stage::Ingest, Stage::Train, Stage::Explain, Stage::Cluster, Stage::Spatial];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Train => "train",
            Stage::Explain => "explain",
            Stage::Cluster => "cluster",
            Stage::Spatial => "spatial",
            Stage::Report => "report",
        }
    }

    /// Fixed-name outputs; explain also writes the dependence tables.
    pub fn outputs(self) -> &'static [&'static str] {
        use files::*;
        match self {
            Stage::Ingest => &[COUNTIES, SUPPRESSED, REFERENCE_RATE, JOIN_REPORT, SUPPRESSED_PROFILE],
            Stage::Train => &[COMPARISON_CSV, COMPARISON_JSON, MODEL, CV_PREDICTIONS],
            Stage::Explain => &[IMPORTANCE, BEESWARM, PHI],
            Stage::Cluster => &[
                CLUSTER_SUMMARY,
                CLUSTER_PROFILE,
                CLUSTER_ASSIGNMENTS,
                QUADRANTS,
                QUADRANT_COMPARISON,
                SILENT_RISK_CSV,
                SILENT_RISK_JSON,
                DESERT_CONTRAST,
            ],
            Stage::Spatial => &[MORAN_GLOBAL, LISA_CSV, LISA_GEOJSON],
            Stage::Report => &[REPORT],
        }
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("results")
}

/// All choices of one run. Loaded from a flat TOML file; command-line flags
/// overwrite fields afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mortality: Option<PathBuf>,
    pub svi: Option<PathBuf>,
    pub places: Option<PathBuf>,
    pub ahrf: Option<PathBuf>,
    pub adjacency: Option<PathBuf>,
    pub centroids: Option<PathBuf>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,

    pub seed: u64,
    pub folds: usize,

    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_child_weight: f64,
    pub reg_lambda: f64,
    pub gamma: f64,
    pub subsample: f64,
    pub colsample: f64,

    pub forest_trees: usize,
    pub forest_max_depth: usize,

    pub k_min: usize,
    pub k_max: usize,
    pub kmeans_restarts: usize,

    pub burden_percentile: f64,
    /// Mortality split rule; only "median" is defined.
    pub smr_rule: String,

    pub permutations: usize,
    pub alpha: f64,
    pub top_n: usize,
    pub beeswarm_features: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let f = ForestConfig::default();
        RunConfig {
            mortality: None,
            svi: None,
            places: None,
            ahrf: None,
            adjacency: None,
            centroids: None,
            out_dir: default_out_dir(),
            seed: 42,
            folds: 5,
            n_rounds: t.n_rounds,
            learning_rate: t.learning_rate,
            max_depth: t.max_depth,
            min_child_weight: t.min_child_weight,
            reg_lambda: t.reg_lambda,
            gamma: t.gamma,
            subsample: t.subsample,
            colsample: t.colsample,
            forest_trees: f.n_trees,
            forest_max_depth: f.max_depth,
            k_min: 2,
            k_max: 8,
            kmeans_restarts: KMeansConfig::default().restarts,
            burden_percentile: 60.0,
            smr_rule: "median".into(),
            permutations: 999,
            alpha: 0.05,
            top_n: 20,
            beeswarm_features: 10,
        }
    }
}

impl RunConfig {
    /// Parses TOML text; relative paths resolve against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for p in [
            &mut cfg.mortality,
            &mut cfg.svi,
            &mut cfg.places,
            &mut cfg.ahrf,
            &mut cfg.adjacency,
            &mut cfg.centroids,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::InputFile {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.folds < 2 {
            return bad(format!("folds must be at least 2, got {}", self.folds));
        }
        if self.k_min < 2 || self.k_max < self.k_min {
            return bad(format!("invalid k range {}..={}", self.k_min, self.k_max));
        }
        if !(0.0..=100.0).contains(&self.burden_percentile) {
            return bad(format!("burden_percentile {} outside [0, 100]", self.burden_percentile));
        }
        if self.smr_rule != "median" {
            return bad(format!("unknown smr_rule {:?}; only \"median\" is supported", self.smr_rule));
        }
        if self.permutations == 0 {
            return bad("permutations must be positive".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha {} outside (0, 1)", self.alpha));
        }
        if self.forest_trees == 0 || self.kmeans_restarts == 0 {
            return bad("forest_trees and kmeans_restarts must be positive".into());
        }
        self.train_config().validate()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            n_rounds: self.n_rounds,
            learning_rate: self.learning_rate,
            max_depth: self.max_depth,
            min_child_weight: self.min_child_weight,
            reg_lambda: self.reg_lambda,
            gamma: self.gamma,
            subsample: self.subsample,
            colsample: self.colsample,
            seed: derive_seed(self.seed, "train", 1),
        }
    }

    pub fn families(&self) -> Vec<ModelSpec> {
        vec![
            ModelSpec::Gbt(self.train_config()),
            ModelSpec::RandomForest(ForestConfig {
                n_trees: self.forest_trees,
                max_depth: self.forest_max_depth,
                seed: derive_seed(self.seed, "train", 2),
                ..Default::default()
            }),
            ModelSpec::Linear,
            ModelSpec::Lasso(LassoConfig {
                seed: derive_seed(self.seed, "train", 3),
                ..Default::default()
            }),
        ]
    }

    fn input(&self, slot: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
        let path = slot.clone().ok_or_else(|| Error::Config(format!("no path configured for the {name} file")))?;
        if !path.is_file() {
            return Err(Error::InputFile {
                source: std::io::Error::new(std::io::ErrorKind::NotFound, format!("{name} file not found")),
                path,
            });
        }
        Ok(path)
    }

    /// Settings without file locations, as echoed into the manifest.
    pub fn echo(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(m) = &mut v {
            for key in ["mortality", "svi", "places", "ahrf", "adjacency", "centroids", "out_dir"] {
                m.remove(key);
            }
        }
        v
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn header(&self, stage: Stage) -> Vec<String> {
        vec![format!("{TOOL} {VERSION} stage={} seed={}", stage.as_str(), self.seed)]
    }

    fn meta(&self, stage: Stage) -> Value {
        json!({"tool": TOOL, "version": VERSION, "stage": stage.as_str(), "seed": self.seed})
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Pretty JSON with a leading `meta` object.
fn write_json<T: Serialize>(path: &Path, meta: Value, body: &T) -> Result<()> {
    let mut doc = Map::new();
    doc.insert("meta".into(), meta);
    match serde_json::to_value(body)? {
        Value::Object(m) => doc.extend(m),
        other => {
            doc.insert("data".into(), other);
        }
    }
    let mut text = serde_json::to_string_pretty(&Value::Object(doc))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::MissingStageOutput(path))
    }
}

fn read_json(path: PathBuf) -> Result<Value> {
    let path = require(path)?;
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Observed, imputed, scored counties written by the ingest stage.
pub fn load_counties(cfg: &RunConfig) -> Result<Vec<CountyRecord>> {
    let path = require(cfg.out(files::COUNTIES))?;
    data::read_records_csv(File::open(&path)?, &path.display().to_string())
}

/// Optional comparison tables: too-small groups leave a note instead of
/// failing the stage.
fn soft_profile(rows: Result<Vec<ProfileRow>>, what: &str) -> Result<std::result::Result<Vec<ProfileRow>, String>> {
    match rows {
        Ok(r) => Ok(Ok(r)),
        Err(e @ (Error::EmptyGroup(_) | Error::InvalidArgument(_))) => {
            warn!("{what} not available: {e}");
            Ok(Err(e.to_string()))
        }
        Err(e) => Err(e),
    }
}

fn write_soft_profile(path: &Path, rows: std::result::Result<Vec<ProfileRow>, String>, header: &[String], full: bool) -> Result<()> {
    match rows {
        Ok(rows) => profile::write_profile_csv(create(path)?, &rows, header, full),
        Err(reason) => {
            let mut out = create(path)?;
            for line in header {
                writeln!(out, "# {line}")?;
            }
            writeln!(out, "# unavailable: {reason}")?;
            out.flush()?;
            Ok(())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub join: data::JoinReport,
    pub reference_rate: data::ReferenceRate,
    pub expected_deaths_total: f64,
    pub analyzed: usize,
}

pub fn run_ingest(cfg: &RunConfig) -> Result<IngestSummary> {
    ingest(cfg).map_err(|e| e.in_stage("ingest"))
}

fn ingest(cfg: &RunConfig) -> Result<IngestSummary> {
    let paths = [
        (cfg.input(&cfg.mortality, "mortality")?, SourceSchema::Mortality),
        (cfg.input(&cfg.svi, "svi")?, SourceSchema::Svi),
        (cfg.input(&cfg.places, "places")?, SourceSchema::Places),
        (cfg.input(&cfg.ahrf, "ahrf")?, SourceSchema::Ahrf),
    ];
    let tables = paths
        .par_iter()
        .map(|(p, s)| data::load_source(p, *s))
        .collect::<Result<Vec<_>>>()?;
    let (records, join) = data::merge_by_fips(&tables[0], &[&tables[1], &tables[2], &tables[3]])?;
    info!("ingest: {} counties, {} observed, {} suppressed", join.records, join.observed, join.suppressed);

    let rate = data::compute_reference_rate(&records)?;
    let (mut observed, suppressed): (Vec<CountyRecord>, Vec<CountyRecord>) = records.into_iter().partition(|r| !r.suppressed);
    data::assign_smr(&mut observed, &rate)?;
    let expected_total: f64 = observed.iter().map(|r| data::expected_deaths(r.population, &rate)).sum();

    // compare the groups on raw values, before imputation
    let everyone: Vec<CountyRecord> = observed.iter().chain(&suppressed).cloned().collect();
    let supp_profile = soft_profile(data::suppressed_profile(&everyone), "observed/suppressed profile")?;

    data::impute_records(&mut observed)?;
    data::assign_burden_scores(&mut observed)?;

    std::fs::create_dir_all(&cfg.out_dir)?;
    let header = cfg.header(Stage::Ingest);
    data::write_records_csv(create(&cfg.out(files::COUNTIES))?, &observed, &header)?;
    data::write_records_csv(create(&cfg.out(files::SUPPRESSED))?, &suppressed, &header)?;
    write_soft_profile(&cfg.out(files::SUPPRESSED_PROFILE), supp_profile, &header, false)?;
    let summary = IngestSummary {
        join,
        reference_rate: rate,
        expected_deaths_total: expected_total,
        analyzed: observed.len(),
    };
    write_json(
        &cfg.out(files::REFERENCE_RATE),
        cfg.meta(Stage::Ingest),
        &json!({
            "rate_per_100k": rate.rate_per_100k,
            "deaths": rate.deaths,
            "population": rate.population,
            "counties": rate.counties,
            "expected_deaths_total": expected_total,
        }),
    )?;
    write_json(&cfg.out(files::JOIN_REPORT), cfg.meta(Stage::Ingest), &summary.join)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub comparison: ComparisonTable,
    pub model: GbtModel,
}

pub fn run_train(cfg: &RunConfig) -> Result<TrainSummary> {
    train(cfg).map_err(|e| e.in_stage("train"))
}

fn train(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let records = load_counties(cfg)?;
    let matrix = FeatureMatrix::from_records(&records)?;
    let plan = eval::make_folds(matrix.n_rows(), cfg.folds, derive_seed(cfg.seed, "train", 0))?;
    let families = cfg.families();
    let results: Vec<CvResult> = families
        .par_iter()
        .map(|f| eval::cross_validate(&matrix, f, &plan))
        .collect::<Result<_>>()?;
    let mut rows: Vec<eval::MetricReport> = results.iter().map(|r| r.report.clone()).collect();
    rows.sort_by(|a, b| b.r2.total_cmp(&a.r2));
    let comparison = ComparisonTable {
        folds: plan.k,
        seed: cfg.seed,
        rows,
    };
    let model = fit_gbt(&matrix, &cfg.train_config())?;

    let header = cfg.header(Stage::Train);
    eval::write_comparison_csv(create(&cfg.out(files::COMPARISON_CSV))?, &comparison, &header)?;
    write_json(&cfg.out(files::COMPARISON_JSON), cfg.meta(Stage::Train), &comparison)?;
    let mut model_doc: Value = serde_json::from_str(&model.to_json()?)?;
    if let Value::Object(m) = &mut model_doc {
        m.insert("meta".into(), cfg.meta(Stage::Train));
    }
    std::fs::write(cfg.out(files::MODEL), serde_json::to_string_pretty(&model_doc)? + "\n")?;

    let mut out = create(&cfg.out(files::CV_PREDICTIONS))?;
    for line in &header {
        writeln!(out, "# {line}")?;
    }
    writeln!(out, "# folds={} fold_seed={}", plan.k, plan.seed)?;
    let mut w = csv::Writer::from_writer(out);
    let mut head = vec!["fips".to_string(), "fold".into(), "smr".into()];
    head.extend(families.iter().map(|f| f.name()));
    w.write_record(&head)?;
    for i in 0..matrix.n_rows() {
        let mut row = vec![matrix.row_fips[i].to_string(), plan.assignments[i].to_string(), matrix.outcome[i].to_string()];
        row.extend(results.iter().map(|r| r.predictions[i].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    info!(
        "train: best family {} (pooled R2 {:.3})",
        comparison.rows[0].model, comparison.rows[0].r2
    );
    Ok(TrainSummary { comparison, model })
}

pub fn run_explain(cfg: &RunConfig) -> Result<shap::ImportanceRanking> {
    explain(cfg).map_err(|e| e.in_stage("explain"))
}

/// File name of the `rank`-th (1-based) dependence table.
pub fn dependence_file(rank: usize, feature: &str) -> String {
    format!("{}{rank}_{feature}.csv", files::DEPENDENCE_PREFIX)
}

fn explain(cfg: &RunConfig) -> Result<shap::ImportanceRanking> {
    let model_path = require(cfg.out(files::MODEL))?;
    let model = GbtModel::from_json(&std::fs::read_to_string(model_path)?)?;
    let records = load_counties(cfg)?;
    let matrix = FeatureMatrix::from_records(&records)?;
    let result = shap::tree_shap(&model, &matrix)?;
    let ranking = shap::global_importance(&result);

    let header = cfg.header(Stage::Explain);
    write_json(
        &cfg.out(files::IMPORTANCE),
        cfg.meta(Stage::Explain),
        &json!({
            "expectation": ranking.expectation,
            "base_value": result.base_value,
            "n_rows": matrix.n_rows(),
            "features": ranking.entries,
        }),
    )?;
    let bees = shap::beeswarm_export(&result, &matrix, cfg.beeswarm_features)?;
    shap::write_attribution_csv(create(&cfg.out(files::BEESWARM))?, &bees, &header)?;
    shap::write_phi_csv(create(&cfg.out(files::PHI))?, &result, &header)?;
    // stale tables from an earlier run would otherwise linger in the manifest
    for entry in std::fs::read_dir(&cfg.out_dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if name.starts_with(files::DEPENDENCE_PREFIX) {
            std::fs::remove_file(cfg.out(&name))?;
        }
    }
    for (rank, feature) in ranking.top(DEPENDENCE_FEATURES).into_iter().enumerate() {
        let rows = shap::dependence_export(&result, &matrix, feature)?;
        shap::write_attribution_csv(create(&cfg.out(&dependence_file(rank + 1, feature)))?, &rows, &header)?;
    }
    info!("explain: top features {:?}", ranking.top(DEPENDENCE_FEATURES));
    Ok(ranking)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub k: usize,
    pub silhouette: f64,
    pub inertia: f64,
    pub sizes: Vec<usize>,
    pub silhouette_by_k: Vec<(usize, f64)>,
    pub quadrant_thresholds: cluster::QuadrantThresholds,
    pub quadrant_counts: cluster::QuadrantCounts,
}

pub fn run_cluster(cfg: &RunConfig) -> Result<ClusterSummary> {
    cluster_stage(cfg).map_err(|e| e.in_stage("cluster"))
}

fn cluster_stage(cfg: &RunConfig) -> Result<ClusterSummary> {
    cfg.validate()?;
    let records = load_counties(cfg)?;
    let matrix = FeatureMatrix::from_records(&records)?;
    let kcfg = KMeansConfig {
        restarts: cfg.kmeans_restarts,
        ..Default::default()
    };
    let (model, scores) = cluster::select_k(&matrix, cfg.k_min..=cfg.k_max, derive_seed(cfg.seed, "cluster", 0), &kcfg)?;
    let quadrants = cluster::classify_quadrants(&records, cfg.burden_percentile)?;
    let silent = cluster::silent_risk_table(&records, &quadrants, cfg.top_n);

    let header = cfg.header(Stage::Cluster);
    let meta = || cfg.meta(Stage::Cluster);
    let profile = soft_profile(cluster::profile_clusters(&records, &model.assignments), "cluster profile")?;
    write_soft_profile(&cfg.out(files::CLUSTER_PROFILE), profile, &header, true)?;
    cluster::write_assignments_csv(create(&cfg.out(files::CLUSTER_ASSIGNMENTS))?, &matrix.row_fips, &model, &header)?;
    cluster::write_quadrants_csv(create(&cfg.out(files::QUADRANTS))?, &quadrants, &header)?;
    let comparison = soft_profile(cluster::quadrant_comparison(&records, &quadrants), "quadrant comparison")?;
    write_soft_profile(&cfg.out(files::QUADRANT_COMPARISON), comparison, &header, false)?;
    cluster::write_silent_risk_csv(create(&cfg.out(files::SILENT_RISK_CSV))?, &silent, &header)?;
    write_json(&cfg.out(files::SILENT_RISK_JSON), meta(), &silent)?;
    let desert = match cluster::treatment_desert_contrast(&records) {
        Ok(c) => serde_json::to_value(c)?,
        Err(e @ (Error::EmptyGroup(_) | Error::InvalidArgument(_))) => {
            warn!("treatment-desert contrast not available: {e}");
            json!({"note": e.to_string()})
        }
        Err(e) => return Err(e),
    };
    write_json(&cfg.out(files::DESERT_CONTRAST), meta(), &desert)?;
    let summary = ClusterSummary {
        k: model.k,
        silhouette: model.silhouette,
        inertia: model.inertia,
        sizes: model.sizes(),
        silhouette_by_k: scores,
        quadrant_thresholds: quadrants.thresholds,
        quadrant_counts: quadrants.counts,
    };
    write_json(&cfg.out(files::CLUSTER_SUMMARY), meta(), &summary)?;
    info!("cluster: k={} silhouette={:.3}; {} silent-risk counties", model.k, model.silhouette, silent.group_size);
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialSummary {
    pub global: spatial::MoranSummary,
    pub weights: spatial::WeightsReport,
    pub lisa: spatial::LisaResult,
    pub geojson_skipped: usize,
}

pub fn run_spatial(cfg: &RunConfig) -> Result<SpatialSummary> {
    spatial_stage(cfg).map_err(|e| e.in_stage("spatial"))
}

fn spatial_stage(cfg: &RunConfig) -> Result<SpatialSummary> {
    cfg.validate()?;
    let adjacency = cfg.input(&cfg.adjacency, "adjacency")?;
    let records = load_counties(cfg)?;
    let universe: Vec<data::Fips> = records.iter().map(|r| r.fips.clone()).collect();
    let values: Vec<f64> = records
        .iter()
        .map(|r| r.smr.ok_or_else(|| Error::InvalidArgument(format!("county {} has no SMR", r.fips))))
        .collect::<Result<_>>()?;
    let pairs = spatial::read_adjacency(File::open(&adjacency)?, &adjacency.display().to_string())?;
    let (weights, report) = spatial::build_weights(&pairs, &universe)?;
    let (global, _) = spatial::global_permutation_test(&values, &weights, cfg.permutations, derive_seed(cfg.seed, "spatial", 0))?;
    let lisa = spatial::local_moran(&values, &weights, cfg.permutations, cfg.alpha, derive_seed(cfg.seed, "spatial", 1))?;

    let centroids = match &cfg.centroids {
        Some(_) => {
            let path = cfg.input(&cfg.centroids, "centroids")?;
            spatial::read_centroids(File::open(&path)?, &path.display().to_string())?
        }
        None => {
            warn!("no centroids file configured; the LISA map document will be empty");
            BTreeMap::new()
        }
    };
    let (mut geo, skipped) = spatial::lisa_geojson(&lisa, &centroids);
    if skipped > 0 {
        warn!("{skipped} counties have no centroid and are missing from the map document");
    }
    if let Value::Object(m) = &mut geo {
        m.insert("meta".into(), cfg.meta(Stage::Spatial));
    }

    let header = cfg.header(Stage::Spatial);
    write_json(
        &cfg.out(files::MORAN_GLOBAL),
        cfg.meta(Stage::Spatial),
        &json!({
            "variable": "smr",
            "global": global,
            "weights": report,
            "lisa_alpha": cfg.alpha,
            "lisa_significant": lisa.significant,
            "hotspots": lisa.significant.hh,
            "coldspots": lisa.significant.ll,
        }),
    )?;
    spatial::write_lisa_csv(create(&cfg.out(files::LISA_CSV))?, &lisa, &header)?;
    std::fs::write(cfg.out(files::LISA_GEOJSON), serde_json::to_string_pretty(&geo)? + "\n")?;
    info!(
        "spatial: I={:.4} p_sim={} hotspots={} coldspots={}",
        global.i, global.p_sim, lisa.significant.hh, lisa.significant.ll
    );
    Ok(SpatialSummary {
        global,
        weights: report,
        lisa,
        geojson_skipped: skipped,
    })
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    std::io::copy(&mut File::open(path)?, &mut hasher)?;
    Ok(hex::encode(hasher.finalize()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestCounts {
    pub counties_ingested: usize,
    pub suppressed: usize,
    pub analyzed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    /// From `SOURCE_DATE_EPOCH` when set, so reruns stay byte-identical.
    pub timestamp: Option<u64>,
    pub config: Value,
    pub inputs: BTreeMap<String, String>,
    pub stages: BTreeMap<String, BTreeMap<String, String>>,
    pub counts: ManifestCounts,
}

/// Output files of `stage` currently present in the output directory.
fn stage_files(cfg: &RunConfig, stage: Stage) -> Result<Vec<String>> {
    let mut names: Vec<String> = Vec::new();
    for name in stage.outputs() {
        require(cfg.out(name))?;
        names.push(name.to_string());
    }
    if stage == Stage::Explain {
        let mut deps: Vec<String> = std::fs::read_dir(&cfg.out_dir)?
            .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
            .collect::<std::io::Result<_>>()?;
        deps.retain(|n| n.starts_with(files::DEPENDENCE_PREFIX));
        if deps.is_empty() {
            return Err(Error::MissingStageOutput(cfg.out(&dependence_file(1, "*"))));
        }
        deps.sort();
        names.extend(deps);
    }
    Ok(names)
}

pub fn run_report(cfg: &RunConfig) -> Result<RunManifest> {
    report(cfg).map_err(|e| e.in_stage("report"))
}

fn report(cfg: &RunConfig) -> Result<RunManifest> {
    let mut stages = BTreeMap::new();
    for stage in Stage::ANALYSIS {
        let mut digests = BTreeMap::new();
        for name in stage_files(cfg, stage)? {
            digests.insert(name.clone(), sha256_file(&cfg.out(&name))?);
        }
        stages.insert(stage.as_str().to_string(), digests);
    }
    let join = read_json(cfg.out(files::JOIN_REPORT))?;
    let comparison = read_json(cfg.out(files::COMPARISON_JSON))?;
    let importance = read_json(cfg.out(files::IMPORTANCE))?;
    let clusters = read_json(cfg.out(files::CLUSTER_SUMMARY))?;
    let silent = read_json(cfg.out(files::SILENT_RISK_JSON))?;
    let desert = read_json(cfg.out(files::DESERT_CONTRAST))?;
    let moran = read_json(cfg.out(files::MORAN_GLOBAL))?;
    let rate = read_json(cfg.out(files::REFERENCE_RATE))?;
    let strip = |mut v: Value| {
        if let Value::Object(m) = &mut v {
            m.remove("meta");
        }
        v
    };
    let counts = ManifestCounts {
        counties_ingested: join["records"].as_u64().unwrap_or(0) as usize,
        suppressed: join["suppressed"].as_u64().unwrap_or(0) as usize,
        analyzed: load_counties(cfg)?.len(),
    };
    let body = json!({
        "counts": counts,
        "reference_rate": strip(rate),
        "join": strip(join),
        "model_comparison": strip(comparison),
        "importance": strip(importance),
        "clusters": strip(clusters),
        "silent_risk": strip(silent),
        "treatment_desert": strip(desert),
        "spatial": strip(moran),
    });
    write_json(&cfg.out(files::REPORT), cfg.meta(Stage::Report), &body)?;
    stages.insert(
        Stage::Report.as_str().to_string(),
        BTreeMap::from([(files::REPORT.to_string(), sha256_file(&cfg.out(files::REPORT))?)]),
    );

    let mut inputs = BTreeMap::new();
    for (name, slot) in [
        ("mortality", &cfg.mortality),
        ("svi", &cfg.svi),
        ("places", &cfg.places),
        ("ahrf", &cfg.ahrf),
        ("adjacency", &cfg.adjacency),
        ("centroids", &cfg.centroids),
    ] {
        if let Some(p) = slot.as_ref().filter(|p| p.is_file()) {
            inputs.insert(name.to_string(), sha256_file(p)?);
        }
    }
    let manifest = RunManifest {
        tool: TOOL.into(),
        version: VERSION.into(),
        seed: cfg.seed,
        timestamp: std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.trim().parse().ok()),
        config: cfg.echo(),
        inputs,
        stages,
        counts,
    };
    std::fs::write(cfg.out(files::MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

/// Runs every analysis stage and the report in order.
pub fn run_all(cfg: &RunConfig) -> Result<RunManifest> {
    run_ingest(cfg)?;
    run_train(cfg)?;
    run_explain(cfg)?;
    run_cluster(cfg)?;
    run_spatial(cfg)?;
    run_report(cfg)
}

/// Generates a synthetic input set in `dir` together with a `config.toml`
/// that points at it (outputs under `dir/results`).
pub fn run_synth(synth_cfg: &SynthConfig, dir: &Path) -> Result<(synth::SynthFiles, RunConfig)> {
    let data = synth::generate(synth_cfg)?;
    let header = vec![format!(
        "{TOOL} {VERSION} stage=synth seed={} scenario={} n={}",
        synth_cfg.seed, synth_cfg.scenario, synth_cfg.n
    )];
    let files = synth::write_synth(&data, dir, &header)?;
    let rel = |p: &Path| p.file_name().map(PathBuf::from).unwrap_or_default();
    let cfg = RunConfig {
        mortality: Some(rel(&files.mortality)),
        svi: Some(rel(&files.svi)),
        places: Some(rel(&files.places)),
        ahrf: Some(rel(&files.ahrf)),
        adjacency: Some(rel(&files.adjacency)),
        centroids: Some(rel(&files.centroids)),
        seed: synth_cfg.seed,
        ..Default::default()
    };
    let text = toml::to_string(&cfg).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(dir.join(files::CONFIG), format!("# {}\n{text}", header[0]))?;
    let resolved = RunConfig::from_toml(&text, dir)?;
    Ok((files, resolved))
}
