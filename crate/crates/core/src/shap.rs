//! Exact path-dependent TreeSHAP over a boosted ensemble, with importance
//! ranking and the per-county tables behind summary and dependence plots.
//!
//! Background expectations come from node cover, so a feature outside the
//! coalition sends the row down both children weighted by the fraction of
//! training weight that went each way.

use std::io::Write;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureMatrix, Fips};
use crate::error::{Error, Result};
use crate::trees::{check_columns, GbtModel, RegressionTree};

pub const EXPECTATION_KIND: &str = "tree_path_dependent";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapResult {
    pub base_value: f64,
    /// Rows follow the explained matrix, columns follow `feature_names`.
    pub phi: Array2<f64>,
    pub feature_names: Vec<String>,
    pub row_fips: Vec<Fips>,
}

#[derive(Debug, Clone, Copy)]
struct PathElement {
    feature: usize,
    zero_fraction: f64,
    one_fraction: f64,
    weight: f64,
}

fn extend(path: &mut Vec<PathElement>, zero_fraction: f64, one_fraction: f64, feature: usize) {
    let depth = path.len();
    path.push(PathElement {
        feature,
        zero_fraction,
        one_fraction,
        weight: if depth == 0 { 1.0 } else { 0.0 },
    });
    let d1 = (depth + 1) as f64;
    for i in (0..depth).rev() {
        path[i + 1].weight += one_fraction * path[i].weight * (i + 1) as f64 / d1;
        path[i].weight = zero_fraction * path[i].weight * (depth - i) as f64 / d1;
    }
}

fn unwind(path: &mut Vec<PathElement>, index: usize) {
    let depth = path.len() - 1;
    let PathElement {
        one_fraction,
        zero_fraction,
        ..
    } = path[index];
    let d1 = (depth + 1) as f64;
    let mut next = path[depth].weight;
    for i in (0..depth).rev() {
        if one_fraction != 0.0 {
            let tmp = path[i].weight;
            path[i].weight = next * d1 / ((i + 1) as f64 * one_fraction);
            next = tmp - path[i].weight * zero_fraction * (depth - i) as f64 / d1;
        } else {
            path[i].weight = path[i].weight * d1 / (zero_fraction * (depth - i) as f64);
        }
    }
    for i in index..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
    path.pop();
}

fn unwound_sum(path: &[PathElement], index: usize) -> f64 {
    let depth = path.len() - 1;
    let PathElement {
        one_fraction,
        zero_fraction,
        ..
    } = path[index];
    let d1 = (depth + 1) as f64;
    let mut total = 0.0;
    if one_fraction != 0.0 {
        let mut next = path[depth].weight;
        for i in (0..depth).rev() {
            let tmp = next / ((i + 1) as f64 * one_fraction);
            total += tmp;
            next = path[i].weight - tmp * zero_fraction * (depth - i) as f64;
        }
    } else {
        for i in (0..depth).rev() {
            total += path[i].weight / (zero_fraction * (depth - i) as f64);
        }
    }
    total * d1
}

/// Sentinel feature for the root element of the path.
const NO_FEATURE: usize = usize::MAX;

fn recurse(
    tree: &RegressionTree,
    row: &[f64],
    phi: &mut [f64],
    node: usize,
    mut path: Vec<PathElement>,
    zero_fraction: f64,
    one_fraction: f64,
    feature: usize,
) {
    extend(&mut path, zero_fraction, one_fraction, feature);
    let n = &tree.nodes[node];
    let Some(split) = &n.split else {
        for i in 1..path.len() {
            let w = unwound_sum(&path, i);
            let e = path[i];
            phi[e.feature] += w * (e.one_fraction - e.zero_fraction) * n.value;
        }
        return;
    };
    let v = row[split.feature];
    let goes_left = if v.is_nan() { split.default_left } else { v < split.threshold };
    let (hot, cold) = if goes_left { (split.left, split.right) } else { (split.right, split.left) };
    let hot_zero = tree.nodes[hot].cover / n.cover;
    let cold_zero = tree.nodes[cold].cover / n.cover;
    let (mut in_zero, mut in_one) = (1.0, 1.0);
    if let Some(k) = (1..path.len()).find(|&k| path[k].feature == split.feature) {
        in_zero = path[k].zero_fraction;
        in_one = path[k].one_fraction;
        unwind(&mut path, k);
    }
    recurse(tree, row, phi, hot, path.clone(), hot_zero * in_zero, in_one, split.feature);
    recurse(tree, row, phi, cold, path, cold_zero * in_zero, 0.0, split.feature);
}

fn check_cover(tree: &RegressionTree) -> Result<()> {
    for (i, n) in tree.nodes.iter().enumerate() {
        if n.split.is_some() && !(n.cover > 0.0) {
            return Err(Error::MalformedModel(format!("internal node {i} has cover {}", n.cover)));
        }
    }
    Ok(())
}

/// Attributions of one tree for one row, added into `phi`.
pub fn tree_shap_single(tree: &RegressionTree, row: &[f64], phi: &mut [f64]) {
    recurse(tree, row, phi, 0, Vec::with_capacity(tree.depth() + 2), 1.0, 1.0, NO_FEATURE);
}

/// Cover-weighted mean output of a tree.
pub fn tree_expectation(tree: &RegressionTree) -> f64 {
    fn go(t: &RegressionTree, i: usize) -> f64 {
        let n = &t.nodes[i];
        match &n.split {
            None => n.value,
            Some(s) => (t.nodes[s.left].cover * go(t, s.left) + t.nodes[s.right].cover * go(t, s.right)) / n.cover,
        }
    }
    go(tree, 0)
}

pub fn tree_shap(model: &GbtModel, rows: &FeatureMatrix) -> Result<ShapResult> {
    check_columns(&model.feature_names, &rows.column_names)?;
    for t in &model.trees {
        t.validate(model.feature_names.len())?;
        check_cover(t)?;
    }
    let p = rows.n_cols();
    let mut base_value = model.base_score;
    for t in &model.trees {
        base_value += tree_expectation(t);
    }
    let per_row: Vec<Vec<f64>> = (0..rows.n_rows())
        .into_par_iter()
        .map(|i| {
            let row = rows.values.row(i).to_vec();
            let mut phi = vec![0.0; p];
            for t in &model.trees {
                tree_shap_single(t, &row, &mut phi);
            }
            phi
        })
        .collect();
    let phi = Array2::from_shape_vec((rows.n_rows(), p), per_row.into_iter().flatten().collect())
        .expect("one attribution per cell");
    Ok(ShapResult {
        base_value,
        phi,
        feature_names: rows.column_names.clone(),
        row_fips: rows.row_fips.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Importance {
    pub feature: String,
    pub mean_abs_phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRanking {
    pub expectation: String,
    pub entries: Vec<Importance>,
}

impl ImportanceRanking {
    pub fn top(&self, k: usize) -> Vec<&str> {
        self.entries.iter().take(k).map(|e| e.feature.as_str()).collect()
    }
}

/// Mean |phi| per feature, largest first; ties keep column order.
pub fn global_importance(shap: &ShapResult) -> ImportanceRanking {
    let n = shap.phi.nrows().max(1) as f64;
    let mut entries: Vec<Importance> = shap
        .feature_names
        .iter()
        .enumerate()
        .map(|(j, f)| Importance {
            feature: f.clone(),
            mean_abs_phi: shap.phi.column(j).iter().map(|v| v.abs()).sum::<f64>() / n,
        })
        .collect();
    entries.sort_by(|a, b| b.mean_abs_phi.total_cmp(&a.mean_abs_phi));
    ImportanceRanking {
        expectation: EXPECTATION_KIND.into(),
        entries,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionRow {
    pub feature: String,
    pub value: f64,
    /// Min-max scaled value; beeswarm tables only.
    pub normalized: Option<f64>,
    pub phi: f64,
    pub fips: Fips,
}

fn check_rows(shap: &ShapResult, matrix: &FeatureMatrix) -> Result<()> {
    check_columns(&shap.feature_names, &matrix.column_names)?;
    if shap.row_fips != matrix.row_fips {
        return Err(Error::InvalidArgument("attribution rows do not match the matrix rows".into()));
    }
    Ok(())
}

/// One row per county for `feature`, ascending by feature value.
pub fn dependence_export(shap: &ShapResult, matrix: &FeatureMatrix, feature: &str) -> Result<Vec<AttributionRow>> {
    check_rows(shap, matrix)?;
    let j = matrix.column_index(feature)?;
    let mut rows: Vec<AttributionRow> = (0..matrix.n_rows())
        .map(|i| AttributionRow {
            feature: feature.to_string(),
            value: matrix.values[[i, j]],
            normalized: None,
            phi: shap.phi[[i, j]],
            fips: matrix.row_fips[i].clone(),
        })
        .collect();
    rows.sort_by(|a, b| a.value.total_cmp(&b.value));
    Ok(rows)
}

/// Per-county attributions for the `top_k` most important features, in
/// importance order, with the feature value min-max scaled to [0, 1]
/// (constant features map to 0.5).
pub fn beeswarm_export(shap: &ShapResult, matrix: &FeatureMatrix, top_k: usize) -> Result<Vec<AttributionRow>> {
    check_rows(shap, matrix)?;
    let ranking = global_importance(shap);
    let mut out = Vec::new();
    for name in ranking.top(top_k) {
        let j = matrix.column_index(name)?;
        let col = matrix.values.column(j);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for i in 0..matrix.n_rows() {
            let v = col[i];
            out.push(AttributionRow {
                feature: name.to_string(),
                value: v,
                normalized: Some(if hi > lo { (v - lo) / (hi - lo) } else { 0.5 }),
                phi: shap.phi[[i, j]],
                fips: matrix.row_fips[i].clone(),
            });
        }
    }
    Ok(out)
}

pub fn write_attribution_csv<W: Write>(out: W, rows: &[AttributionRow], header: &[String]) -> Result<()> {
    let mut out = out;
    for line in header {
        writeln!(out, "# {line}")?;
    }
    let with_norm = rows.iter().any(|r| r.normalized.is_some());
    let mut w = csv::Writer::from_writer(out);
    if with_norm {
        w.write_record(["feature", "value", "normalized_value", "phi", "fips"])?;
    } else {
        w.write_record(["feature", "value", "phi", "fips"])?;
    }
    for r in rows {
        let mut rec = vec![r.feature.clone(), r.value.to_string()];
        if with_norm {
            rec.push(r.normalized.map(|v| v.to_string()).unwrap_or_default());
        }
        rec.push(r.phi.to_string());
        rec.push(r.fips.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Full attribution matrix: fips, then one phi column per feature.
pub fn write_phi_csv<W: Write>(out: W, shap: &ShapResult, header: &[String]) -> Result<()> {
    let mut out = out;
    for line in header {
        writeln!(out, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    let mut head = vec!["fips".to_string()];
    head.extend(shap.feature_names.iter().cloned());
    w.write_record(&head)?;
    for (i, fips) in shap.row_fips.iter().enumerate() {
        let mut rec = vec![fips.to_string()];
        rec.extend(shap.phi.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
