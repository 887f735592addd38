//! Regression trees grown by exact greedy split search, the gradient-boosted
//! ensemble built from them, and a bagged random forest.
//!
//! Boosting uses the squared-error objective, so every row has gradient
//! `prediction - target` and unit hessian. A node with gradient sum `G` and
//! hessian sum `H` gets leaf value `-lr * G / (H + lambda)`; a split is scored
//! by
//!
//! ```text
//! gain = 0.5 * (G_L^2 / (H_L + lambda) + G_R^2 / (H_R + lambda) - G^2 / (H + lambda)) - gamma
//! ```
//!
//! The forest reuses the same grower with gradient `-y`, `lambda = gamma = 0`
//! and unit learning rate, which turns the gain into plain variance reduction
//! and the leaf into the node mean.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::rng::stream_rng;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_child_weight: f64,
    pub reg_lambda: f64,
    pub gamma: f64,
    pub subsample: f64,
    pub colsample: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_rounds: 500,
            learning_rate: 0.05,
            max_depth: 4,
            min_child_weight: 1.0,
            reg_lambda: 1.0,
            gamma: 0.0,
            subsample: 0.8,
            colsample: 0.8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("train config: {what}")));
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must be in (0, 1]");
        }
        if self.max_depth < 1 {
            return bad("max_depth must be at least 1");
        }
        if !(self.min_child_weight >= 0.0 && self.reg_lambda >= 0.0 && self.gamma >= 0.0) {
            return bad("min_child_weight, reg_lambda and gamma must be non-negative");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0 && self.colsample > 0.0 && self.colsample <= 1.0) {
            return bad("subsample and colsample must be in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
    /// Direction for a missing value. Imputation happens upstream, so this
    /// is always left for trained models.
    pub default_left: bool,
    pub gain: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub split: Option<Split>,
    /// Leaf output; zero on internal nodes.
    pub value: f64,
    /// Sum of hessians (training weight) reaching the node.
    pub cover: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    /// Root at index 0.
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn leaf(value: f64, cover: f64) -> Self {
        RegressionTree {
            nodes: vec![TreeNode {
                split: None,
                value,
                cover,
            }],
        }
    }

    /// Index of the leaf reached by `row`. Values below the threshold go left.
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut i = 0;
        while let Some(s) = &self.nodes[i].split {
            let v = row[s.feature];
            i = if v.is_nan() {
                if s.default_left {
                    s.left
                } else {
                    s.right
                }
            } else if v < s.threshold {
                s.left
            } else {
                s.right
            };
        }
        i
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.nodes[self.leaf_index(row)].value
    }

    pub fn depth(&self) -> usize {
        fn go(t: &RegressionTree, i: usize) -> usize {
            match &t.nodes[i].split {
                None => 0,
                Some(s) => 1 + go(t, s.left).max(go(t, s.right)),
            }
        }
        go(self, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.split.is_none()).count()
    }

    /// Structural checks: children in range, every non-root node reached
    /// exactly once, finite values.
    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::MalformedModel("tree has no nodes".into()));
        }
        let mut parents = vec![0usize; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            if !n.value.is_finite() || !n.cover.is_finite() {
                return Err(Error::MalformedModel(format!("node {i} has a non-finite value")));
            }
            if let Some(s) = &n.split {
                if s.feature >= n_features || s.left >= self.nodes.len() || s.right >= self.nodes.len() {
                    return Err(Error::MalformedModel(format!("node {i} points out of range")));
                }
                if s.left <= i || s.right <= i || s.left == s.right {
                    return Err(Error::MalformedModel(format!("node {i} has invalid children")));
                }
                parents[s.left] += 1;
                parents[s.right] += 1;
            }
        }
        if parents[0] != 0 || parents[1..].iter().any(|&p| p != 1) {
            return Err(Error::MalformedModel("nodes do not form a tree".into()));
        }
        Ok(())
    }
}

/// Anything that maps a feature row to a prediction.
pub trait Regressor: Sync {
    fn feature_names(&self) -> &[String];
    fn predict_row(&self, row: &[f64]) -> f64;

    fn predict(&self, rows: &FeatureMatrix) -> Result<Vec<f64>> {
        check_columns(self.feature_names(), &rows.column_names)?;
        Ok(rows
            .values
            .rows()
            .into_iter()
            .map(|r| match r.as_slice() {
                Some(s) => self.predict_row(s),
                None => self.predict_row(&r.to_vec()),
            })
            .collect())
    }
}

pub(crate) fn check_columns(expected: &[String], found: &[String]) -> Result<()> {
    if expected != found {
        return Err(Error::ColumnMismatch {
            expected: expected.to_vec(),
            found: found.to_vec(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub base_score: f64,
    pub trees: Vec<RegressionTree>,
    pub config: TrainConfig,
    pub feature_names: Vec<String>,
}

impl Regressor for GbtModel {
    fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    fn predict_row(&self, row: &[f64]) -> f64 {
        let mut out = self.base_score;
        for t in &self.trees {
            out += t.predict_row(row);
        }
        out
    }
}

pub fn predict(model: &GbtModel, rows: &FeatureMatrix) -> Result<Vec<f64>> {
    model.predict(rows)
}

pub(crate) fn validate_training(matrix: &FeatureMatrix) -> Result<()> {
    if matrix.n_rows() == 0 || matrix.n_cols() == 0 {
        return Err(Error::EmptyMatrix);
    }
    if matrix.n_rows() < 2 {
        return Err(Error::InvalidArgument("need at least two training rows".into()));
    }
    if matrix.has_missing() {
        return Err(Error::InvalidArgument("training matrix has missing cells; impute first".into()));
    }
    if matrix.outcome.iter().any(|y| !y.is_finite()) {
        return Err(Error::NonFinite("outcome".into()));
    }
    if matrix.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature values".into()));
    }
    Ok(())
}

/// Column-major copy of the features with every column presorted by value.
pub(crate) struct Columns {
    pub values: Vec<Vec<f64>>,
    pub sorted: Vec<Vec<u32>>,
}

impl Columns {
    pub fn new(matrix: &FeatureMatrix) -> Self {
        let values: Vec<Vec<f64>> = (0..matrix.n_cols()).map(|j| matrix.values.column(j).to_vec()).collect();
        let sorted = values
            .par_iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..col.len() as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Columns { values, sorted }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GrowParams {
    pub max_depth: usize,
    pub min_child_weight: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub learning_rate: f64,
    /// Features sampled afresh at every node (random forest).
    pub per_node_features: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Node sizes (rows × features) below this are scanned sequentially.
const PARALLEL_SCAN_MIN: usize = 8192;

struct Grower<'a> {
    cols: &'a Columns,
    grad: &'a [f64],
    weight: &'a [f64],
    params: GrowParams,
    nodes: Vec<TreeNode>,
}

impl Grower<'_> {
    fn sums(&self, rows: &[u32]) -> (f64, f64) {
        let mut g = 0.0;
        let mut h = 0.0;
        for &r in rows {
            let w = self.weight[r as usize];
            g += w * self.grad[r as usize];
            h += w;
        }
        (g, h)
    }

    fn scan(&self, feature: usize, rows: &[u32], g: f64, h: f64) -> Option<Candidate> {
        let p = &self.params;
        let col = &self.cols.values[feature];
        let parent = g * g / (h + p.lambda);
        let (mut gl, mut hl) = (0.0, 0.0);
        let mut best: Option<Candidate> = None;
        for k in 0..rows.len() - 1 {
            let r = rows[k] as usize;
            let w = self.weight[r];
            gl += w * self.grad[r];
            hl += w;
            let (v, next) = (col[r], col[rows[k + 1] as usize]);
            if !(v < next) {
                continue;
            }
            let hr = h - hl;
            if hl < p.min_child_weight || hr < p.min_child_weight {
                continue;
            }
            let gr = g - gl;
            let gain = 0.5 * (gl * gl / (hl + p.lambda) + gr * gr / (hr + p.lambda) - parent) - p.gamma;
            if gain > best.map_or(0.0, |b| b.gain) {
                let mut threshold = 0.5 * (v + next);
                if !(v < threshold && threshold <= next) {
                    threshold = next;
                }
                best = Some(Candidate {
                    feature,
                    threshold,
                    gain,
                });
            }
        }
        best
    }

    fn best_split(&self, features: &[usize], lists: &[Vec<u32>], g: f64, h: f64) -> Option<Candidate> {
        let n = lists[0].len();
        let scan_one = |(k, &f): (usize, &usize)| self.scan(f, &lists[k], g, h);
        let found: Vec<Option<Candidate>> = if n * features.len() >= PARALLEL_SCAN_MIN {
            features.par_iter().enumerate().map(scan_one).collect()
        } else {
            features.iter().enumerate().map(scan_one).collect()
        };
        // strict improvement keeps the lowest feature index on ties
        let mut best: Option<Candidate> = None;
        for c in found.into_iter().flatten() {
            if best.is_none_or(|b| c.gain > b.gain) {
                best = Some(c);
            }
        }
        best
    }

    /// `features[k]` is the feature whose sorted row list is `lists[k]`.
    fn grow(&mut self, features: &[usize], lists: Vec<Vec<u32>>, depth: usize, rng: &mut Option<&mut ChaCha8Rng>) -> usize {
        let (g, h) = self.sums(&lists[0]);
        let id = self.nodes.len();
        self.nodes.push(TreeNode {
            split: None,
            value: -self.params.learning_rate * g / (h + self.params.lambda),
            cover: h,
        });
        if depth >= self.params.max_depth || lists[0].len() < 2 {
            return id;
        }

        let (cand_features, cand_lists): (Vec<usize>, Vec<&Vec<u32>>) = match (self.params.per_node_features, rng.as_deref_mut()) {
            (Some(m), Some(rng)) if m < features.len() => {
                let mut pick: Vec<usize> = rand::seq::index::sample(rng, features.len(), m).into_vec();
                pick.sort_unstable();
                pick.iter().map(|&k| (features[k], &lists[k])).unzip()
            }
            _ => features.iter().copied().zip(lists.iter()).unzip(),
        };
        let owned: Vec<Vec<u32>>;
        let scan_lists: &[Vec<u32>] = if cand_lists.len() == lists.len() {
            &lists
        } else {
            owned = cand_lists.into_iter().cloned().collect();
            &owned
        };
        let Some(best) = self.best_split(&cand_features, scan_lists, g, h) else {
            return id;
        };

        let split_col = &self.cols.values[best.feature];
        let mut left_lists = Vec::with_capacity(lists.len());
        let mut right_lists = Vec::with_capacity(lists.len());
        for list in lists {
            let (l, r): (Vec<u32>, Vec<u32>) = list.into_iter().partition(|&row| split_col[row as usize] < best.threshold);
            left_lists.push(l);
            right_lists.push(r);
        }
        let left = self.grow(features, left_lists, depth + 1, rng);
        let right = self.grow(features, right_lists, depth + 1, rng);
        let node = &mut self.nodes[id];
        node.value = 0.0;
        node.split = Some(Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
            default_left: true,
            gain: best.gain,
        });
        id
    }
}

/// Grows one tree over the rows with positive `weight`, restricted to
/// `features` (ascending).
pub(crate) fn grow_tree(
    cols: &Columns,
    grad: &[f64],
    weight: &[f64],
    features: &[usize],
    params: GrowParams,
    mut rng: Option<&mut ChaCha8Rng>,
) -> RegressionTree {
    let lists: Vec<Vec<u32>> = features
        .iter()
        .map(|&f| cols.sorted[f].iter().copied().filter(|&r| weight[r as usize] > 0.0).collect())
        .collect();
    let mut grower = Grower {
        cols,
        grad,
        weight,
        params,
        nodes: Vec::new(),
    };
    grower.grow(features, lists, 0, &mut rng);
    RegressionTree { nodes: grower.nodes }
}

fn sample_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).round() as usize).clamp(1, n)
}

/// Sum in ascending order of value, so the result does not depend on row order.
fn order_free_mean(ys: &[f64]) -> f64 {
    let mut v = ys.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

/// Gradient boosting with squared-error loss and exact greedy splits.
pub fn fit_gbt(matrix: &FeatureMatrix, config: &TrainConfig) -> Result<GbtModel> {
    config.validate()?;
    validate_training(matrix)?;
    let n = matrix.n_rows();
    let p = matrix.n_cols();
    let cols = Columns::new(matrix);
    let y = &matrix.outcome;
    let base_score = order_free_mean(y);
    let mut pred = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut weight = vec![1.0; n];
    let params = GrowParams {
        max_depth: config.max_depth,
        min_child_weight: config.min_child_weight,
        lambda: config.reg_lambda,
        gamma: config.gamma,
        learning_rate: config.learning_rate,
        per_node_features: None,
    };
    let all_features: Vec<usize> = (0..p).collect();
    let mut trees = Vec::with_capacity(config.n_rounds);
    for round in 0..config.n_rounds {
        let mut rng = stream_rng(config.seed, round as u64);
        if config.subsample < 1.0 {
            weight.fill(0.0);
            for i in rand::seq::index::sample(&mut rng, n, sample_count(config.subsample, n)) {
                weight[i] = 1.0;
            }
        }
        let features = if config.colsample < 1.0 {
            let mut f = rand::seq::index::sample(&mut rng, p, sample_count(config.colsample, p)).into_vec();
            f.sort_unstable();
            f
        } else {
            all_features.clone()
        };
        for i in 0..n {
            grad[i] = pred[i] - y[i];
        }
        let tree = grow_tree(&cols, &grad, &weight, &features, params, None);
        for (i, pr) in pred.iter_mut().enumerate() {
            let row: Vec<f64> = (0..p).map(|j| cols.values[j][i]).collect();
            *pr += tree.predict_row(&row);
        }
        trees.push(tree);
    }
    Ok(GbtModel {
        base_score,
        trees,
        config: *config,
        feature_names: matrix.column_names.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Features tried per node; `None` means a third of the columns.
    pub mtry: Option<usize>,
    pub bootstrap: bool,
    pub min_node_weight: f64,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 300,
            max_depth: 12,
            mtry: None,
            bootstrap: true,
            min_node_weight: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<RegressionTree>,
    pub config: ForestConfig,
    pub feature_names: Vec<String>,
}

impl Regressor for ForestModel {
    fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    fn predict_row(&self, row: &[f64]) -> f64 {
        let mut sum = 0.0;
        for t in &self.trees {
            sum += t.predict_row(row);
        }
        sum / self.trees.len() as f64
    }
}

/// Bagged variance-reduction trees; prediction is the mean over trees.
pub fn fit_random_forest(matrix: &FeatureMatrix, config: &ForestConfig) -> Result<ForestModel> {
    validate_training(matrix)?;
    if config.n_trees == 0 || config.max_depth == 0 {
        return Err(Error::InvalidArgument("forest needs at least one tree of depth >= 1".into()));
    }
    let n = matrix.n_rows();
    let p = matrix.n_cols();
    let mtry = config.mtry.unwrap_or((p / 3).max(1)).clamp(1, p);
    let cols = Columns::new(matrix);
    let grad: Vec<f64> = matrix.outcome.iter().map(|y| -y).collect();
    let params = GrowParams {
        max_depth: config.max_depth,
        min_child_weight: config.min_node_weight,
        lambda: 0.0,
        gamma: 0.0,
        learning_rate: 1.0,
        per_node_features: Some(mtry),
    };
    let features: Vec<usize> = (0..p).collect();
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(config.seed, t as u64);
            let mut weight = vec![0.0; n];
            if config.bootstrap {
                for _ in 0..n {
                    weight[rng.gen_range(0..n)] += 1.0;
                }
            } else {
                weight.fill(1.0);
            }
            grow_tree(&cols, &grad, &weight, &features, params, Some(&mut rng))
        })
        .collect();
    Ok(ForestModel {
        trees,
        config: *config,
        feature_names: matrix.column_names.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FlatTree {
    feature: Vec<i64>,
    threshold: Vec<f64>,
    left: Vec<i64>,
    right: Vec<i64>,
    default_left: Vec<bool>,
    gain: Vec<f64>,
    value: Vec<f64>,
    cover: Vec<f64>,
}

impl From<&RegressionTree> for FlatTree {
    fn from(t: &RegressionTree) -> Self {
        let mut f = FlatTree {
            feature: Vec::new(),
            threshold: Vec::new(),
            left: Vec::new(),
            right: Vec::new(),
            default_left: Vec::new(),
            gain: Vec::new(),
            value: Vec::new(),
            cover: Vec::new(),
        };
        for n in &t.nodes {
            match &n.split {
                Some(s) => {
                    f.feature.push(s.feature as i64);
                    f.threshold.push(s.threshold);
                    f.left.push(s.left as i64);
                    f.right.push(s.right as i64);
                    f.default_left.push(s.default_left);
                    f.gain.push(s.gain);
                }
                None => {
                    f.feature.push(-1);
                    f.threshold.push(0.0);
                    f.left.push(-1);
                    f.right.push(-1);
                    f.default_left.push(true);
                    f.gain.push(0.0);
                }
            }
            f.value.push(n.value);
            f.cover.push(n.cover);
        }
        f
    }
}

impl FlatTree {
    fn into_tree(self) -> Result<RegressionTree> {
        let n = self.value.len();
        let lens = [
            self.feature.len(),
            self.threshold.len(),
            self.left.len(),
            self.right.len(),
            self.default_left.len(),
            self.gain.len(),
            self.cover.len(),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(Error::MalformedModel("node arrays differ in length".into()));
        }
        let nodes = (0..n)
            .map(|i| {
                let split = if self.feature[i] < 0 {
                    None
                } else {
                    if self.left[i] < 0 || self.right[i] < 0 {
                        return Err(Error::MalformedModel(format!("node {i} is missing a child")));
                    }
                    Some(Split {
                        feature: self.feature[i] as usize,
                        threshold: self.threshold[i],
                        left: self.left[i] as usize,
                        right: self.right[i] as usize,
                        default_left: self.default_left[i],
                        gain: self.gain[i],
                    })
                };
                Ok(TreeNode {
                    split,
                    value: self.value[i],
                    cover: self.cover[i],
                })
            })
            .collect::<Result<_>>()?;
        Ok(RegressionTree { nodes })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelDocument {
    format_version: u32,
    kind: String,
    base_score: f64,
    config: TrainConfig,
    feature_names: Vec<String>,
    trees: Vec<FlatTree>,
}

impl GbtModel {
    /// Self-describing JSON document with flat per-tree node arrays.
    pub fn to_json(&self) -> Result<String> {
        let doc = ModelDocument {
            format_version: MODEL_FORMAT_VERSION,
            kind: "gradient_boosted_trees".into(),
            base_score: self.base_score,
            config: self.config,
            feature_names: self.feature_names.clone(),
            trees: self.trees.iter().map(FlatTree::from).collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::FormatVersion(doc.format_version));
        }
        let trees = doc.trees.into_iter().map(FlatTree::into_tree).collect::<Result<Vec<_>>>()?;
        for t in &trees {
            t.validate(doc.feature_names.len())?;
        }
        Ok(GbtModel {
            base_score: doc.base_score,
            trees,
            config: doc.config,
            feature_names: doc.feature_names,
        })
    }
}
