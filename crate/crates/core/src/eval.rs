//! K-fold cross-validation and the regression metric suite.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::linear::{fit_lasso, fit_linear, LassoConfig};
use crate::rng::stream_rng;
use crate::stats;
use crate::trees::{fit_gbt, fit_random_forest, ForestConfig, Regressor, TrainConfig};

/// Half-width of the "acceptable prediction" band, in SMR units.
pub const BAND: f64 = 0.25;
/// Outcome threshold for a high-risk county.
pub const HIGH_RISK_SMR: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n: usize,
    pub k: usize,
    pub assignments: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    /// (training rows, held-out rows), both ascending.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.n).partition(|&i| self.assignments[i] != fold)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &a in &self.assignments {
            s[a] += 1;
        }
        s
    }
}

/// Seeded shuffle, then round-robin assignment.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(Error::InvalidArgument(format!("{n} rows cannot fill {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, 0));
    let mut assignments = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        assignments[row] = pos % k;
    }
    Ok(FoldPlan { n, k, assignments, seed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model: String,
    pub n: usize,
    pub r2: f64,
    pub rmse: f64,
    pub mae: f64,
    pub mape: f64,
    /// `None` when a vector is constant and the correlation is undefined.
    pub spearman: Option<f64>,
    pub pearson: Option<f64>,
    /// `None` when no county exceeds the high-risk threshold.
    pub high_risk_recall: Option<f64>,
    pub within_band_frac: f64,
    pub fold_r2: Vec<f64>,
    pub fold_rmse: Vec<f64>,
    pub r2_mean: f64,
    pub r2_sd: f64,
    pub rmse_mean: f64,
    pub rmse_sd: f64,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn r2(y: &[f64], yhat: &[f64]) -> Result<f64> {
    let my = stats::mean(y);
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::ZeroOutcomeVariance);
    }
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> f64 {
    (y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64).sqrt()
}

/// Fraction of counties with y above 1.0 whose prediction ranks in the top
/// ⌈n/2⌉. Predicted ties keep row order.
pub fn high_risk_recall(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_lengths(y, yhat)?;
    let positives = y.iter().filter(|v| **v > HIGH_RISK_SMR).count();
    if positives == 0 {
        return Err(Error::NoHighRisk(HIGH_RISK_SMR));
    }
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| yhat[b].total_cmp(&yhat[a]));
    let top = y.len().div_ceil(2);
    let hits = order[..top].iter().filter(|&&i| y[i] > HIGH_RISK_SMR).count();
    Ok(hits as f64 / positives as f64)
}

fn check_lengths(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::InvalidArgument(format!("{} outcomes but {} predictions", y.len(), yhat.len())));
    }
    if y.len() < 2 {
        return Err(Error::InvalidArgument("metrics need at least two rows".into()));
    }
    if y.iter().chain(yhat).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("metric input".into()));
    }
    Ok(())
}

/// Pooled metrics. Per-fold fields are filled with the single pooled R² and
/// RMSE; [`cross_validate`] replaces them with fold values.
pub fn metric_suite(y: &[f64], yhat: &[f64]) -> Result<MetricReport> {
    check_lengths(y, yhat)?;
    if let Some(i) = y.iter().position(|v| *v == 0.0) {
        return Err(Error::ZeroOutcome(i));
    }
    let n = y.len();
    let r2 = r2(y, yhat)?;
    let rmse = rmse(y, yhat);
    let abs: Vec<f64> = y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).collect();
    let mae = stats::mean(&abs);
    let mape = 100.0 * y.iter().zip(&abs).map(|(a, e)| e / a.abs()).sum::<f64>() / n as f64;
    let within = abs.iter().filter(|e| **e <= BAND).count() as f64 / n as f64;
    let recall = match high_risk_recall(y, yhat) {
        Ok(r) => Some(r),
        Err(Error::NoHighRisk(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricReport {
        model: String::new(),
        n,
        r2,
        rmse,
        mae,
        mape,
        spearman: finite(stats::spearman(y, yhat)),
        pearson: finite(stats::pearson(y, yhat)),
        high_risk_recall: recall,
        within_band_frac: within,
        fold_r2: vec![r2],
        fold_rmse: vec![rmse],
        r2_mean: r2,
        r2_sd: 0.0,
        rmse_mean: rmse,
        rmse_sd: 0.0,
    })
}

/// A model family that can be trained on a matrix.
pub trait Learner: Sync {
    fn name(&self) -> String;
    fn fit(&self, matrix: &FeatureMatrix) -> Result<Box<dyn Regressor + Send>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelSpec {
    Gbt(TrainConfig),
    RandomForest(ForestConfig),
    Linear,
    Lasso(LassoConfig),
}

impl Learner for ModelSpec {
    fn name(&self) -> String {
        match self {
            ModelSpec::Gbt(_) => "GBT",
            ModelSpec::RandomForest(_) => "Random Forest",
            ModelSpec::Linear => "Linear Regression",
            ModelSpec::Lasso(_) => "LASSO",
        }
        .to_string()
    }

    fn fit(&self, matrix: &FeatureMatrix) -> Result<Box<dyn Regressor + Send>> {
        Ok(match self {
            ModelSpec::Gbt(c) => Box::new(fit_gbt(matrix, c)?),
            ModelSpec::RandomForest(c) => Box::new(fit_random_forest(matrix, c)?),
            ModelSpec::Linear => Box::new(fit_linear(matrix)?),
            ModelSpec::Lasso(c) => Box::new(fit_lasso(matrix, c)?),
        })
    }
}

/// The four families with the default configurations and a shared seed.
pub fn default_families(seed: u64) -> Vec<ModelSpec> {
    vec![
        ModelSpec::Gbt(TrainConfig { seed, ..Default::default() }),
        ModelSpec::RandomForest(ForestConfig { seed, ..Default::default() }),
        ModelSpec::Linear,
        ModelSpec::Lasso(LassoConfig { seed, ..Default::default() }),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub report: MetricReport,
    /// One out-of-fold prediction per row, in row order.
    pub predictions: Vec<f64>,
}

pub fn cross_validate(matrix: &FeatureMatrix, learner: &dyn Learner, plan: &FoldPlan) -> Result<CvResult> {
    if plan.n != matrix.n_rows() {
        return Err(Error::InvalidArgument(format!("fold plan covers {} rows, matrix has {}", plan.n, matrix.n_rows())));
    }
    let folds: Vec<(Vec<usize>, Vec<f64>)> = (0..plan.k)
        .into_par_iter()
        .map(|fold| {
            let (train, test) = plan.split(fold);
            let wrap = |e| Error::Fold {
                fold,
                source: Box::new(e),
            };
            let model = learner.fit(&matrix.select_rows(&train)).map_err(wrap)?;
            let pred = model.predict(&matrix.select_rows(&test)).map_err(wrap)?;
            Ok((test, pred))
        })
        .collect::<Result<_>>()?;

    let mut predictions = vec![f64::NAN; plan.n];
    let mut fold_r2 = Vec::with_capacity(plan.k);
    let mut fold_rmse = Vec::with_capacity(plan.k);
    for (fold, (test, pred)) in folds.iter().enumerate() {
        let y: Vec<f64> = test.iter().map(|&i| matrix.outcome[i]).collect();
        fold_r2.push(r2(&y, pred).map_err(|e| Error::Fold {
            fold,
            source: Box::new(e),
        })?);
        fold_rmse.push(rmse(&y, pred));
        for (&i, &p) in test.iter().zip(pred) {
            predictions[i] = p;
        }
    }
    let mut report = metric_suite(&matrix.outcome, &predictions)?;
    report.model = learner.name();
    report.r2_mean = stats::mean(&fold_r2);
    report.r2_sd = stats::sd(&fold_r2);
    report.rmse_mean = stats::mean(&fold_rmse);
    report.rmse_sd = stats::sd(&fold_rmse);
    report.fold_r2 = fold_r2;
    report.fold_rmse = fold_rmse;
    Ok(CvResult { report, predictions })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub folds: usize,
    pub seed: u64,
    /// Sorted by pooled R², best first.
    pub rows: Vec<MetricReport>,
}

/// Every family sees the same folds. Families run in parallel.
pub fn compare_models(matrix: &FeatureMatrix, families: &[ModelSpec], plan: &FoldPlan) -> Result<ComparisonTable> {
    let mut rows: Vec<MetricReport> = families
        .par_iter()
        .map(|f| cross_validate(matrix, f, plan).map(|r| r.report))
        .collect::<Result<_>>()?;
    rows.sort_by(|a, b| b.r2.total_cmp(&a.r2));
    Ok(ComparisonTable {
        folds: plan.k,
        seed: plan.seed,
        rows,
    })
}

pub fn write_comparison_csv<W: Write>(out: W, table: &ComparisonTable, header: &[String]) -> Result<()> {
    let mut out = out;
    for line in header {
        writeln!(out, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "model",
        "r2_mean",
        "r2_sd",
        "rmse_mean",
        "rmse_sd",
        "mae",
        "r2_pooled",
        "rmse_pooled",
        "mape",
        "spearman",
        "pearson",
        "high_risk_recall",
        "within_band_frac",
    ])?;
    let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
    for r in &table.rows {
        w.write_record([
            r.model.clone(),
            format!("{:.6}", r.r2_mean),
            format!("{:.6}", r.r2_sd),
            format!("{:.6}", r.rmse_mean),
            format!("{:.6}", r.rmse_sd),
            format!("{:.6}", r.mae),
            format!("{:.6}", r.r2),
            format!("{:.6}", r.rmse),
            format!("{:.6}", r.mape),
            opt(r.spearman),
            opt(r.pearson),
            opt(r.high_risk_recall),
            format!("{:.6}", r.within_band_frac),
        ])?;
    }
    w.flush()?;
    Ok(())
}
