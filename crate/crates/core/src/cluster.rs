//! K-means risk clusters, cluster profiles, the treatment-desert contrast and
//! the four-quadrant burden/mortality classification.

use std::fmt;
use std::io::Write;

use log::warn;
use ndarray::{Array2, ArrayView1, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    CountyRecord, FeatureMatrix, Fips, DEPRESSION, POVERTY, PREDICTORS, RURAL, SMOKING, TREATMENT_DESERT, UNINSURED,
};
use crate::error::{Error, Result};
use crate::profile::{binary_row, continuous_row, ProfileRow};
use crate::rng::stream_rng;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub max_iter: usize,
    pub restarts: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            max_iter: 300,
            restarts: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    /// Centroids in standardized coordinates.
    pub centroids: Array2<f64>,
    pub assignments: Vec<usize>,
    pub silhouette: f64,
    /// Within-cluster sum of squares in standardized coordinates.
    pub inertia: f64,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub feature_names: Vec<String>,
}

impl ClusterModel {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &a in &self.assignments {
            s[a] += 1;
        }
        s
    }
}

/// Z-scores with sample SD. Constant columns become zero.
pub fn standardize(matrix: &FeatureMatrix) -> Result<(Array2<f64>, Vec<f64>, Vec<f64>)> {
    let mut means = Vec::with_capacity(matrix.n_cols());
    let mut sds = Vec::with_capacity(matrix.n_cols());
    let mut z = matrix.values.clone();
    for (j, mut col) in z.axis_iter_mut(Axis(1)).enumerate() {
        let v = col.to_vec();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("column {}", matrix.column_names[j])));
        }
        let (m, s) = (stats::mean(&v), stats::sd(&v));
        col.mapv_inplace(|x| if s > 0.0 { (x - m) / s } else { 0.0 });
        means.push(m);
        sds.push(s);
    }
    if sds.iter().all(|s| !(*s > 0.0)) {
        return Err(Error::ZeroVariance);
    }
    Ok((z, means, sds))
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.outer_iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Distance-proportional seeding.
fn seed_centroids<R: Rng>(z: &Array2<f64>, k: usize, rng: &mut R) -> Array2<f64> {
    let n = z.nrows();
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(z.row(i), z.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(z.row(i), z.row(next)));
        }
    }
    z.select(Axis(0), &chosen)
}

pub(crate) struct LloydRun {
    pub centroids: Array2<f64>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Objective after every assignment step.
    pub history: Vec<f64>,
}

pub(crate) fn lloyd(z: &Array2<f64>, mut centroids: Array2<f64>, max_iter: usize) -> LloydRun {
    let n = z.nrows();
    let k = centroids.nrows();
    let mut assignments = vec![usize::MAX; n];
    let mut history = Vec::new();
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        let mut inertia = 0.0;
        for i in 0..n {
            let (c, d) = nearest(z.row(i), &centroids);
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
            inertia += d;
        }
        history.push(inertia);
        if !changed {
            break;
        }
        // empty clusters take the point farthest from its own centroid
        let mut counts = vec![0usize; k];
        for &a in &assignments {
            counts[a] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| counts[assignments[i]] > 1)
                .map(|i| (i, sq_dist(z.row(i), centroids.row(assignments[i]))))
                .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                    Some((_, bd)) if bd >= d => best,
                    _ => Some((i, d)),
                });
            if let Some((i, _)) = far {
                counts[assignments[i]] -= 1;
                assignments[i] = c;
                counts[c] = 1;
                centroids.row_mut(c).assign(&z.row(i));
            }
        }
        let mut sums = Array2::<f64>::zeros(centroids.raw_dim());
        for (i, &a) in assignments.iter().enumerate() {
            let mut row = sums.row_mut(a);
            row += &z.row(i);
        }
        for c in 0..k {
            if counts[c] > 0 {
                let mean = &sums.row(c) / counts[c] as f64;
                centroids.row_mut(c).assign(&mean);
            }
        }
    }
    let inertia = (0..n).map(|i| sq_dist(z.row(i), centroids.row(assignments[i]))).sum();
    LloydRun {
        centroids,
        assignments,
        inertia,
        history,
    }
}

/// Lloyd's algorithm from distance-proportional seeds, best of several
/// restarts by within-cluster sum of squares, on z-scored columns.
/// Clusters are relabeled by ascending mean outcome.
pub fn kmeans(matrix: &FeatureMatrix, k: usize, seed: u64, config: &KMeansConfig) -> Result<ClusterModel> {
    if k < 2 {
        return Err(Error::SingleCluster);
    }
    let n = matrix.n_rows();
    if n <= k {
        return Err(Error::TooFewCounties { needed: k + 1, found: n });
    }
    let (z, means, sds) = standardize(matrix)?;
    let runs: Vec<LloydRun> = (0..config.restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, r as u64);
            lloyd(&z, seed_centroids(&z, k, &mut rng), config.max_iter)
        })
        .collect();
    let mut best = 0;
    for r in 1..runs.len() {
        if runs[r].inertia < runs[best].inertia {
            best = r;
        }
    }
    let run = runs.into_iter().nth(best).expect("at least one restart");
    log::debug!("k-means k={k}: restart {best} won after {} assignment passes", run.history.len());

    let mut occupied = vec![false; k];
    for &a in &run.assignments {
        occupied[a] = true;
    }
    if occupied.iter().any(|o| !o) {
        warn!("k-means left a cluster empty (k={k}); data has fewer distinct points than clusters");
        return Err(Error::ZeroVariance);
    }

    let mut outcome_mean = vec![0.0; k];
    let mut count = vec![0usize; k];
    for (i, &a) in run.assignments.iter().enumerate() {
        outcome_mean[a] += matrix.outcome[i];
        count[a] += 1;
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| (outcome_mean[a] / count[a] as f64).total_cmp(&(outcome_mean[b] / count[b] as f64)));
    let mut relabel = vec![0; k];
    for (new, &old) in order.iter().enumerate() {
        relabel[old] = new;
    }
    let assignments: Vec<usize> = run.assignments.iter().map(|a| relabel[*a]).collect();
    let centroids = run.centroids.select(Axis(0), &order);
    let silhouette = silhouette_score(&z, &assignments)?;
    Ok(ClusterModel {
        k,
        centroids,
        assignments,
        silhouette,
        inertia: run.inertia,
        means,
        sds,
        feature_names: matrix.column_names.clone(),
    })
}

/// Per-point silhouette values in Euclidean distance. Singletons score 0.
pub fn silhouette_values(points: &Array2<f64>, assignments: &[usize]) -> Result<Vec<f64>> {
    let k = assignments.iter().copied().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &a in assignments {
        sizes[a] += 1;
    }
    if sizes.iter().filter(|s| **s > 0).count() < 2 {
        return Err(Error::SingleCluster);
    }
    let n = points.nrows();
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let own = assignments[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for j in 0..n {
                if j != i {
                    sums[assignments[j]] += sq_dist(points.row(i), points.row(j)).sqrt();
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 {
                (b - a) / m
            } else {
                0.0
            }
        })
        .collect())
}

pub fn silhouette_score(points: &Array2<f64>, assignments: &[usize]) -> Result<f64> {
    Ok(stats::mean(&silhouette_values(points, assignments)?))
}

/// Fits every k in the range and keeps the highest silhouette; ties go to
/// the smaller k.
pub fn select_k(
    matrix: &FeatureMatrix,
    ks: std::ops::RangeInclusive<usize>,
    seed: u64,
    config: &KMeansConfig,
) -> Result<(ClusterModel, Vec<(usize, f64)>)> {
    let ks: Vec<usize> = ks.collect();
    let models: Vec<ClusterModel> = ks
        .par_iter()
        .map(|&k| kmeans(matrix, k, seed, config))
        .collect::<Result<_>>()?;
    let scores = models.iter().map(|m| (m.k, m.silhouette)).collect();
    let mut best = 0;
    for i in 1..models.len() {
        if models[i].silhouette > models[best].silhouette {
            best = i;
        }
    }
    let model = models.into_iter().nth(best).ok_or_else(|| Error::InvalidArgument("empty k range".into()))?;
    Ok((model, scores))
}

/// Continuous predictors profiled alongside SMR; the two structural flags
/// are profiled as counts.
pub fn profile_variables() -> Vec<usize> {
    (0..PREDICTORS.len()).filter(|&j| j != TREATMENT_DESERT && j != RURAL).collect()
}

/// Rows for SMR, each continuous predictor, then the desert and rural flags,
/// comparing the given groups.
pub fn profile_groups(labels: &[&str], groups: &[Vec<&CountyRecord>]) -> Result<Vec<ProfileRow>> {
    let mut rows = Vec::new();
    let smr: Vec<Vec<f64>> = groups.iter().map(|g| g.iter().filter_map(|r| r.smr).collect()).collect();
    rows.push(continuous_row("smr", labels, &smr)?);
    for j in profile_variables() {
        let samples: Vec<Vec<f64>> = groups.iter().map(|g| g.iter().filter_map(|r| r.predictors[j]).collect()).collect();
        rows.push(continuous_row(PREDICTORS[j], labels, &samples)?);
    }
    let desert: Vec<Vec<bool>> = groups.iter().map(|g| g.iter().map(|r| r.treatment_desert).collect()).collect();
    rows.push(binary_row("treatment_desert", labels, &desert)?);
    let rural: Vec<Vec<bool>> = groups.iter().map(|g| g.iter().map(|r| r.rural).collect()).collect();
    rows.push(binary_row("rural", labels, &rural)?);
    Ok(rows)
}

/// Table of county characteristics by cluster; `assignments[i]` belongs to
/// `records[i]`.
pub fn profile_clusters(records: &[CountyRecord], assignments: &[usize]) -> Result<Vec<ProfileRow>> {
    if records.len() != assignments.len() {
        return Err(Error::InvalidArgument("one assignment per record required".into()));
    }
    let k = assignments.iter().copied().max().map_or(0, |m| m + 1);
    let names: Vec<String> = (0..k).map(|c| format!("cluster_{c}")).collect();
    let labels: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut groups = vec![Vec::new(); k];
    for (r, &a) in records.iter().zip(assignments) {
        groups[a].push(r);
    }
    profile_groups(&labels, &groups)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesertContrast {
    pub n_desert: usize,
    pub n_other: usize,
    pub mean_desert: f64,
    pub mean_other: f64,
    pub difference: f64,
    pub percent_penalty: f64,
    pub t: f64,
    pub df: f64,
    pub p: f64,
    pub stars: String,
}

/// SMR of counties with no psychiatrists against all others.
pub fn treatment_desert_contrast(records: &[CountyRecord]) -> Result<DesertContrast> {
    let (desert, other): (Vec<&CountyRecord>, Vec<&CountyRecord>) =
        records.iter().filter(|r| r.smr.is_some()).partition(|r| r.treatment_desert);
    if desert.is_empty() {
        return Err(Error::EmptyGroup("treatment desert".into()));
    }
    if other.is_empty() {
        return Err(Error::EmptyGroup("non-desert".into()));
    }
    let a: Vec<f64> = desert.iter().filter_map(|r| r.smr).collect();
    let b: Vec<f64> = other.iter().filter_map(|r| r.smr).collect();
    let test = stats::welch_t_test(&a, &b)?;
    let (ma, mb) = (stats::mean(&a), stats::mean(&b));
    Ok(DesertContrast {
        n_desert: a.len(),
        n_other: b.len(),
        mean_desert: ma,
        mean_other: mb,
        difference: ma - mb,
        percent_penalty: 100.0 * (ma - mb) / mb,
        t: test.t,
        df: test.df,
        p: test.p,
        stars: stats::stars(test.p).into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadrantLabel {
    Crisis,
    SilentRisk,
    ModerateRisk,
    LowerRisk,
}

impl QuadrantLabel {
    pub const ALL: [QuadrantLabel; 4] = [
        QuadrantLabel::Crisis,
        QuadrantLabel::SilentRisk,
        QuadrantLabel::ModerateRisk,
        QuadrantLabel::LowerRisk,
    ];

    pub fn classify(burden: f64, smr: f64, t: &QuadrantThresholds) -> Self {
        match (burden >= t.burden, smr >= t.smr) {
            (true, true) => QuadrantLabel::Crisis,
            (true, false) => QuadrantLabel::SilentRisk,
            (false, true) => QuadrantLabel::ModerateRisk,
            (false, false) => QuadrantLabel::LowerRisk,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            QuadrantLabel::Crisis => "crisis",
            QuadrantLabel::SilentRisk => "silent_risk",
            QuadrantLabel::ModerateRisk => "moderate_risk",
            QuadrantLabel::LowerRisk => "lower_risk",
        }
    }

    pub fn high_burden(self) -> bool {
        matches!(self, QuadrantLabel::Crisis | QuadrantLabel::SilentRisk)
    }
}

impl fmt::Display for QuadrantLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadrantThresholds {
    pub smr: f64,
    pub burden: f64,
    pub burden_percentile: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadrantAssignment {
    pub fips: Fips,
    pub county_name: String,
    pub burden_score: f64,
    pub smr: f64,
    pub label: QuadrantLabel,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadrantCounts {
    pub crisis: usize,
    pub silent_risk: usize,
    pub moderate_risk: usize,
    pub lower_risk: usize,
}

impl QuadrantCounts {
    pub fn get(&self, label: QuadrantLabel) -> usize {
        match label {
            QuadrantLabel::Crisis => self.crisis,
            QuadrantLabel::SilentRisk => self.silent_risk,
            QuadrantLabel::ModerateRisk => self.moderate_risk,
            QuadrantLabel::LowerRisk => self.lower_risk,
        }
    }

    pub fn total(&self) -> usize {
        self.crisis + self.silent_risk + self.moderate_risk + self.lower_risk
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadrantResult {
    pub thresholds: QuadrantThresholds,
    pub assignments: Vec<QuadrantAssignment>,
    pub counts: QuadrantCounts,
}

/// Mortality threshold at the median SMR, burden threshold at the given
/// percentile (midpoint plotting positions); values at a threshold count as
/// high.
pub fn classify_quadrants(records: &[CountyRecord], burden_percentile: f64) -> Result<QuadrantResult> {
    if !(0.0..=100.0).contains(&burden_percentile) {
        return Err(Error::InvalidArgument(format!("burden percentile {burden_percentile} outside [0, 100]")));
    }
    let mut smr = Vec::with_capacity(records.len());
    let mut burden = Vec::with_capacity(records.len());
    for r in records {
        match (r.smr, r.burden_score) {
            (Some(s), Some(b)) => {
                smr.push(s);
                burden.push(b);
            }
            _ => {
                return Err(Error::InvalidArgument(format!("county {} lacks an SMR or burden score", r.fips)));
            }
        }
    }
    let thresholds = QuadrantThresholds {
        smr: stats::median(&smr).ok_or(Error::EmptyMatrix)?,
        burden: stats::hazen_quantile(&burden, burden_percentile / 100.0).ok_or(Error::EmptyMatrix)?,
        burden_percentile,
    };
    let mut counts = QuadrantCounts::default();
    let assignments = records
        .iter()
        .zip(smr.iter().zip(&burden))
        .map(|(r, (&s, &b))| {
            let label = QuadrantLabel::classify(b, s, &thresholds);
            match label {
                QuadrantLabel::Crisis => counts.crisis += 1,
                QuadrantLabel::SilentRisk => counts.silent_risk += 1,
                QuadrantLabel::ModerateRisk => counts.moderate_risk += 1,
                QuadrantLabel::LowerRisk => counts.lower_risk += 1,
            }
            QuadrantAssignment {
                fips: r.fips.clone(),
                county_name: r.name.clone(),
                burden_score: b,
                smr: s,
                label,
            }
        })
        .collect();
    Ok(QuadrantResult {
        thresholds,
        assignments,
        counts,
    })
}

/// Silent-risk against lower-risk counties on every profiled indicator.
pub fn quadrant_comparison(records: &[CountyRecord], quadrants: &QuadrantResult) -> Result<Vec<ProfileRow>> {
    let pick = |label| {
        records
            .iter()
            .zip(&quadrants.assignments)
            .filter(|(_, a)| a.label == label)
            .map(|(r, _)| r)
            .collect::<Vec<_>>()
    };
    let groups = vec![pick(QuadrantLabel::SilentRisk), pick(QuadrantLabel::LowerRisk)];
    profile_groups(&["silent_risk", "lower_risk"], &groups)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilentRiskRow {
    pub rank: usize,
    pub fips: Fips,
    pub county_name: String,
    pub smr: f64,
    pub poverty_rate: Option<f64>,
    pub uninsured_rate: Option<f64>,
    pub depression: Option<f64>,
    pub smoking: Option<f64>,
    pub treatment_desert: bool,
    pub rural: bool,
    pub burden_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilentRiskTable {
    pub thresholds: QuadrantThresholds,
    pub group_size: usize,
    pub rows: Vec<SilentRiskRow>,
    pub note: Option<String>,
}

/// Silent-risk counties by descending burden (FIPS breaks ties), at most
/// `top_n` rows.
pub fn silent_risk_table(records: &[CountyRecord], quadrants: &QuadrantResult, top_n: usize) -> SilentRiskTable {
    let mut group: Vec<(&CountyRecord, &QuadrantAssignment)> = records
        .iter()
        .zip(&quadrants.assignments)
        .filter(|(_, a)| a.label == QuadrantLabel::SilentRisk)
        .collect();
    group.sort_by(|a, b| b.1.burden_score.total_cmp(&a.1.burden_score).then_with(|| a.1.fips.cmp(&b.1.fips)));
    let group_size = group.len();
    let rows = group
        .into_iter()
        .take(top_n)
        .enumerate()
        .map(|(i, (r, a))| SilentRiskRow {
            rank: i + 1,
            fips: r.fips.clone(),
            county_name: r.name.clone(),
            smr: a.smr,
            poverty_rate: r.predictors[POVERTY],
            uninsured_rate: r.predictors[UNINSURED],
            depression: r.predictors[DEPRESSION],
            smoking: r.predictors[SMOKING],
            treatment_desert: r.treatment_desert,
            rural: r.rural,
            burden_score: a.burden_score,
        })
        .collect();
    SilentRiskTable {
        thresholds: quadrants.thresholds,
        group_size,
        rows,
        note: (group_size == 0).then(|| "no county met the silent-risk definition".to_string()),
    }
}

fn comment_lines<W: Write>(out: &mut W, header: &[String]) -> Result<()> {
    for line in header {
        writeln!(out, "# {line}")?;
    }
    Ok(())
}

pub fn write_quadrants_csv<W: Write>(mut out: W, q: &QuadrantResult, header: &[String]) -> Result<()> {
    comment_lines(&mut out, header)?;
    writeln!(
        out,
        "# smr_threshold={} burden_threshold={} burden_percentile={}",
        q.thresholds.smr, q.thresholds.burden, q.thresholds.burden_percentile
    )?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["fips", "county_name", "burden_score", "smr", "label"])?;
    for a in &q.assignments {
        w.write_record([
            a.fips.to_string(),
            a.county_name.clone(),
            a.burden_score.to_string(),
            a.smr.to_string(),
            a.label.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_silent_risk_csv<W: Write>(mut out: W, t: &SilentRiskTable, header: &[String]) -> Result<()> {
    comment_lines(&mut out, header)?;
    if let Some(note) = &t.note {
        writeln!(out, "# {note}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "rank",
        "fips",
        "county_name",
        "smr",
        "poverty_rate",
        "uninsured_rate",
        "depression",
        "smoking",
        "treatment_desert",
        "rural",
        "burden_score",
    ])?;
    let opt = |v: Option<f64>| v.map(|v| format!("{v:.1}")).unwrap_or_default();
    let yes_no = |b: bool| if b { "Yes" } else { "No" }.to_string();
    for r in &t.rows {
        w.write_record([
            r.rank.to_string(),
            r.fips.to_string(),
            r.county_name.clone(),
            format!("{:.3}", r.smr),
            opt(r.poverty_rate),
            opt(r.uninsured_rate),
            opt(r.depression),
            opt(r.smoking),
            yes_no(r.treatment_desert),
            yes_no(r.rural),
            format!("{:.3}", r.burden_score),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_assignments_csv<W: Write>(mut out: W, fips: &[Fips], model: &ClusterModel, header: &[String]) -> Result<()> {
    comment_lines(&mut out, header)?;
    writeln!(out, "# k={} silhouette={} inertia={}", model.k, model.silhouette, model.inertia)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["fips", "cluster"])?;
    for (f, a) in fips.iter().zip(&model.assignments) {
        w.write_record([f.to_string(), a.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
