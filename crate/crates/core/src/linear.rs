//! Ordinary least squares and LASSO baselines.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::eval::make_folds;
use crate::trees::{validate_training, Regressor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    /// Original-scale coefficients, one per column.
    pub coefficients: Vec<f64>,
    /// Column means and SDs seen at fit time.
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub feature_names: Vec<String>,
    /// Penalty used by a LASSO fit; `None` for OLS.
    pub lambda: Option<f64>,
}

impl Regressor for LinearModel {
    fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(row).map(|(b, x)| b * x).sum::<f64>()
    }
}

fn column_stats(matrix: &FeatureMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = matrix.n_rows() as f64;
    let means: Vec<f64> = matrix.values.columns().into_iter().map(|c| c.sum() / n).collect();
    let sds = matrix
        .values
        .columns()
        .into_iter()
        .zip(&means)
        .map(|(c, m)| (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    (means, sds)
}

/// Least squares with an intercept, solved by QR of the centered design.
/// Columns whose QR pivot collapses (linear dependence on earlier columns or
/// on the intercept) are reported by name.
pub fn fit_linear(matrix: &FeatureMatrix) -> Result<LinearModel> {
    validate_training(matrix)?;
    let n = matrix.n_rows();
    let p = matrix.n_cols();
    let (means, sds) = column_stats(matrix);
    let y_mean = matrix.outcome.iter().sum::<f64>() / n as f64;

    if n <= p {
        return Err(Error::SingularDesign(matrix.column_names[n.saturating_sub(1)..].to_vec()));
    }
    let mut x = DMatrix::<f64>::zeros(n, p);
    let mut norms = vec![0.0; p];
    for j in 0..p {
        for i in 0..n {
            x[(i, j)] = matrix.values[[i, j]] - means[j];
        }
        norms[j] = x.column(j).norm();
        if norms[j] > 0.0 {
            x.column_mut(j).scale_mut(1.0 / norms[j]);
        }
    }
    let y = DVector::from_iterator(n, matrix.outcome.iter().map(|v| v - y_mean));
    let qr = x.qr();
    let r = qr.r();
    let collinear: Vec<String> = (0..p)
        .filter(|&j| norms[j] == 0.0 || r[(j, j)].abs() < 1e-10)
        .map(|j| matrix.column_names[j].clone())
        .collect();
    if !collinear.is_empty() {
        return Err(Error::SingularDesign(collinear));
    }
    let qty = qr.q().transpose() * y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::SingularDesign(matrix.column_names.clone()))?;
    let coefficients: Vec<f64> = (0..p).map(|j| beta[j] / norms[j]).collect();
    let intercept = y_mean - coefficients.iter().zip(&means).map(|(b, m)| b * m).sum::<f64>();
    if !intercept.is_finite() || coefficients.iter().any(|b| !b.is_finite()) {
        return Err(Error::NonFinite("least-squares coefficients".into()));
    }
    Ok(LinearModel {
        intercept,
        coefficients,
        means,
        sds,
        feature_names: matrix.column_names.clone(),
        lambda: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoConfig {
    /// Explicit penalty grid; empty means the default logarithmic grid.
    pub lambda_grid: Vec<f64>,
    pub inner_folds: usize,
    pub seed: u64,
}

impl Default for LassoConfig {
    fn default() -> Self {
        LassoConfig {
            lambda_grid: Vec::new(),
            inner_folds: 5,
            seed: 0,
        }
    }
}

pub const LASSO_GRID_POINTS: usize = 50;
pub const LASSO_TOLERANCE: f64 = 1e-7;
const LASSO_MAX_SWEEPS: usize = 100_000;

/// Standardized problem: `z` is column-major with unit population SD,
/// `y` is centered.
struct Standardized {
    z: Vec<Vec<f64>>,
    y: Vec<f64>,
    y_mean: f64,
    means: Vec<f64>,
    sds: Vec<f64>,
    /// Columns kept after dropping zero-variance ones.
    kept: Vec<usize>,
}

fn standardize(matrix: &FeatureMatrix, warn_dropped: bool) -> Standardized {
    let n = matrix.n_rows();
    let (means, sds) = column_stats(matrix);
    let mut kept = Vec::new();
    let mut z = Vec::new();
    for j in 0..matrix.n_cols() {
        if sds[j] > 0.0 {
            kept.push(j);
            z.push((0..n).map(|i| (matrix.values[[i, j]] - means[j]) / sds[j]).collect());
        } else if warn_dropped {
            warn!("LASSO: dropping zero-variance column {}", matrix.column_names[j]);
        }
    }
    let y_mean = matrix.outcome.iter().sum::<f64>() / n as f64;
    let y = matrix.outcome.iter().map(|v| v - y_mean).collect();
    Standardized {
        z,
        y,
        y_mean,
        means,
        sds,
        kept,
    }
}

fn soft_threshold(rho: f64, lambda: f64) -> f64 {
    if rho > lambda {
        rho - lambda
    } else if rho < -lambda {
        rho + lambda
    } else {
        0.0
    }
}

/// Cyclic coordinate descent on (1/2n)‖y − Zβ‖² + λ‖β‖₁, warm-started from
/// `beta`.
fn coordinate_descent(s: &Standardized, lambda: f64, beta: &mut [f64]) {
    let n = s.y.len() as f64;
    let mut resid: Vec<f64> = s.y.clone();
    for (j, zj) in s.z.iter().enumerate() {
        if beta[j] != 0.0 {
            for (r, z) in resid.iter_mut().zip(zj) {
                *r -= z * beta[j];
            }
        }
    }
    for _ in 0..LASSO_MAX_SWEEPS {
        let mut max_delta: f64 = 0.0;
        for (j, zj) in s.z.iter().enumerate() {
            let rho = zj.iter().zip(&resid).map(|(z, r)| z * r).sum::<f64>() / n + beta[j];
            let new = soft_threshold(rho, lambda);
            let delta = new - beta[j];
            if delta != 0.0 {
                for (r, z) in resid.iter_mut().zip(zj) {
                    *r -= z * delta;
                }
                beta[j] = new;
            }
            max_delta = max_delta.max(delta.abs());
        }
        if max_delta < LASSO_TOLERANCE {
            return;
        }
    }
    warn!("LASSO coordinate descent hit the sweep limit at lambda={lambda}");
}

fn lambda_max(s: &Standardized) -> f64 {
    let n = s.y.len() as f64;
    s.z.iter()
        .map(|zj| (zj.iter().zip(&s.y).map(|(z, y)| z * y).sum::<f64>() / n).abs())
        .fold(0.0, f64::max)
}

/// Default grid: logarithmic from λ_max down to λ_max × 1e-4, descending.
pub fn default_lambda_grid(lambda_max: f64) -> Vec<f64> {
    if lambda_max <= 0.0 {
        return vec![0.0];
    }
    let (hi, lo) = (lambda_max.ln(), (lambda_max * 1e-4).ln());
    (0..LASSO_GRID_POINTS)
        .map(|k| (hi + (lo - hi) * k as f64 / (LASSO_GRID_POINTS - 1) as f64).exp())
        .collect()
}

fn to_model(s: &Standardized, beta: &[f64], matrix: &FeatureMatrix, lambda: f64) -> LinearModel {
    let mut coefficients = vec![0.0; matrix.n_cols()];
    for (k, &j) in s.kept.iter().enumerate() {
        coefficients[j] = beta[k] / s.sds[j];
    }
    let intercept = s.y_mean - coefficients.iter().zip(&s.means).map(|(b, m)| b * m).sum::<f64>();
    LinearModel {
        intercept,
        coefficients,
        means: s.means.clone(),
        sds: s.sds.clone(),
        feature_names: matrix.column_names.clone(),
        lambda: Some(lambda),
    }
}

/// LASSO at one fixed penalty on the standardized scale.
pub fn fit_lasso_fixed(matrix: &FeatureMatrix, lambda: f64) -> Result<LinearModel> {
    validate_training(matrix)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be finite and non-negative, got {lambda}")));
    }
    let s = standardize(matrix, true);
    let mut beta = vec![0.0; s.kept.len()];
    coordinate_descent(&s, lambda, &mut beta);
    Ok(to_model(&s, &beta, matrix, lambda))
}

/// LASSO with the penalty chosen by inner cross-validated RMSE. Ties keep
/// the larger penalty.
pub fn fit_lasso(matrix: &FeatureMatrix, config: &LassoConfig) -> Result<LinearModel> {
    validate_training(matrix)?;
    let s = standardize(matrix, true);
    let mut grid = if config.lambda_grid.is_empty() {
        default_lambda_grid(lambda_max(&s))
    } else {
        config.lambda_grid.clone()
    };
    if grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
        return Err(Error::InvalidArgument("lambda grid must be finite and non-negative".into()));
    }
    grid.sort_by(|a, b| b.total_cmp(a));
    grid.dedup();

    let chosen = if grid.len() == 1 {
        grid[0]
    } else {
        let plan = make_folds(matrix.n_rows(), config.inner_folds, config.seed)?;
        let mut sq_err = vec![0.0; grid.len()];
        for fold in 0..plan.k {
            let (train, test) = plan.split(fold);
            let tm = matrix.select_rows(&train);
            let vm = matrix.select_rows(&test);
            let ts = standardize(&tm, false);
            let mut beta = vec![0.0; ts.kept.len()];
            for (g, &lambda) in grid.iter().enumerate() {
                coordinate_descent(&ts, lambda, &mut beta);
                let model = to_model(&ts, &beta, &tm, lambda);
                for (row, y) in vm.values.rows().into_iter().zip(&vm.outcome) {
                    let e = model.predict_row(&row.to_vec()) - y;
                    sq_err[g] += e * e;
                }
            }
        }
        let mut best = 0;
        for g in 1..grid.len() {
            if sq_err[g] < sq_err[best] {
                best = g;
            }
        }
        grid[best]
    };
    let mut beta = vec![0.0; s.kept.len()];
    coordinate_descent(&s, chosen, &mut beta);
    Ok(to_model(&s, &beta, matrix, chosen))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn matrix(n: usize, p: usize, f: impl Fn(usize, usize) -> f64, y: impl Fn(&[f64]) -> f64) -> FeatureMatrix {
        let mut vals = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n {
            let row: Vec<f64> = (0..p).map(|j| f(i, j)).collect();
            ys.push(y(&row));
            vals.extend(row);
        }
        let names = (0..p).map(|j| format!("x{j}")).collect();
        FeatureMatrix::from_rows(names, Array2::from_shape_vec((n, p), vals).unwrap(), ys).unwrap()
    }

    fn random(seed: u64, n: usize, p: usize) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cells: Vec<f64> = (0..n * p).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
        let noise: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
        let mut m = matrix(n, p, |i, j| cells[i * p + j], |_| 0.0);
        for i in 0..n {
            let row = m.values.row(i);
            m.outcome[i] = 1.0 + row.iter().enumerate().map(|(j, x)| (j as f64 - 1.0) * x).sum::<f64>() + noise[i];
        }
        m
    }

    /// Normal equations [1 X]ᵀ[1 X] b = [1 X]ᵀ y by Gauss-Jordan elimination.
    fn normal_equation_oracle(m: &FeatureMatrix) -> Vec<f64> {
        let n = m.n_rows();
        let q = m.n_cols() + 1;
        let design = |i: usize, j: usize| if j == 0 { 1.0 } else { m.values[[i, j - 1]] };
        let mut a = vec![vec![0.0; q + 1]; q];
        for r in 0..q {
            for c in 0..q {
                a[r][c] = (0..n).map(|i| design(i, r) * design(i, c)).sum();
            }
            a[r][q] = (0..n).map(|i| design(i, r) * m.outcome[i]).sum();
        }
        for col in 0..q {
            let piv = (col..q).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
            a.swap(col, piv);
            for r in 0..q {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    for c in col..=q {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
        (0..q).map(|r| a[r][q] / a[r][r]).collect()
    }

    #[test]
    fn exact_line_is_recovered() {
        let m = matrix(10, 1, |i, _| i as f64 * 0.7, |r| 2.0 * r[0] + 1.0);
        let fit = fit_linear(&m).unwrap();
        assert!((fit.intercept - 1.0).abs() < 1e-10);
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn orthogonal_outcome_gives_zero_slopes() {
        // x symmetric around its mean, y even in x: no linear association
        let xs = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let m = matrix(5, 1, |i, _| xs[i], |r| r[0] * r[0]);
        let fit = fit_linear(&m).unwrap();
        assert!(fit.coefficients[0].abs() < 1e-12);
        assert!((fit.intercept - 2.0).abs() < 1e-12);
    }

    #[test]
    fn matches_normal_equation_oracle() {
        let m = random(1, 20, 3);
        let fit = fit_linear(&m).unwrap();
        let oracle = normal_equation_oracle(&m);
        assert!((fit.intercept - oracle[0]).abs() < 1e-8);
        for j in 0..3 {
            assert!((fit.coefficients[j] - oracle[j + 1]).abs() < 1e-8);
        }
    }

    #[test]
    fn collinear_columns_are_named() {
        let base = |i: usize, j: usize| ((i * (j + 3)) % 7) as f64;
        let m = matrix(12, 3, |i, j| if j == 2 { base(i, 0) + 2.0 * base(i, 1) } else { base(i, j) }, |r| r[0]);
        match fit_linear(&m) {
            Err(Error::SingularDesign(cols)) => assert!(cols.contains(&"x2".to_string()), "{cols:?}"),
            other => panic!("{other:?}"),
        }
        let constant = matrix(12, 2, |i, j| if j == 1 { 3.0 } else { i as f64 }, |r| r[0]);
        assert_eq!(fit_linear(&constant).unwrap_err().to_string(), Error::SingularDesign(vec!["x1".into()]).to_string());
    }

    #[test]
    fn large_lambda_zeroes_everything() {
        let m = random(2, 40, 4);
        let fit = fit_lasso_fixed(&m, 1e6).unwrap();
        assert!(fit.coefficients.iter().all(|b| *b == 0.0));
        let mean = m.outcome.iter().sum::<f64>() / 40.0;
        assert!((fit.intercept - mean).abs() < 1e-12);
        let cv = fit_lasso(&m, &LassoConfig { lambda_grid: vec![1e6], ..Default::default() }).unwrap();
        assert_eq!(cv, fit);
    }

    #[test]
    fn zero_lambda_matches_ols() {
        let m = random(3, 60, 4);
        let ols = fit_linear(&m).unwrap();
        let l = fit_lasso_fixed(&m, 0.0).unwrap();
        assert!((ols.intercept - l.intercept).abs() < 1e-6);
        for (a, b) in ols.coefficients.iter().zip(&l.coefficients) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn two_feature_hand_iteration() {
        // Hand iteration of the same soft-threshold sweep written out
        // independently: standardized columns, residual recomputed from scratch.
        let m = random(4, 30, 2);
        let lambda = 0.2;
        let n = 30.0;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let cols: Vec<Vec<f64>> = (0..2).map(|j| m.values.column(j).to_vec()).collect();
        let z: Vec<Vec<f64>> = cols
            .iter()
            .map(|c| {
                let mu = mean(c);
                let sd = (c.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n).sqrt();
                c.iter().map(|v| (v - mu) / sd).collect()
            })
            .collect();
        let yc: Vec<f64> = m.outcome.iter().map(|v| v - mean(&m.outcome)).collect();
        let mut b = [0.0f64; 2];
        for _ in 0..10_000 {
            let old = b;
            for j in 0..2 {
                let k = 1 - j;
                let rho: f64 = (0..30).map(|i| z[j][i] * (yc[i] - z[k][i] * b[k])).sum::<f64>() / n;
                b[j] = rho.signum() * (rho.abs() - lambda).max(0.0);
            }
            if (b[0] - old[0]).abs().max((b[1] - old[1]).abs()) < 1e-12 {
                break;
            }
        }
        let fit = fit_lasso_fixed(&m, lambda).unwrap();
        for j in 0..2 {
            let sd = fit.sds[j];
            assert!((fit.coefficients[j] * sd - b[j]).abs() < 1e-6, "{j}: {} vs {}", fit.coefficients[j] * sd, b[j]);
        }
    }

    #[test]
    fn kkt_holds_at_selected_lambda() {
        let m = random(5, 80, 6);
        let fit = fit_lasso(&m, &LassoConfig { seed: 3, ..Default::default() }).unwrap();
        let lambda = fit.lambda.unwrap();
        let n = 80.0;
        let resid: Vec<f64> = (0..80).map(|i| m.outcome[i] - fit.predict_row(&m.values.row(i).to_vec())).collect();
        for j in 0..6 {
            let grad = (0..80).map(|i| (m.values[[i, j]] - fit.means[j]) / fit.sds[j] * resid[i]).sum::<f64>() / n;
            if fit.coefficients[j] == 0.0 {
                assert!(grad.abs() <= lambda + 1e-5, "{j}: {grad} > {lambda}");
            } else {
                assert!((grad.abs() - lambda).abs() <= 1e-5);
            }
        }
        // the noisy irrelevant column x1 carries weight 0 in the generator
        assert!(fit.coefficients[1].abs() < 0.2);
    }

    #[test]
    fn zero_variance_column_is_dropped() {
        let m = matrix(20, 2, |i, j| if j == 1 { 5.0 } else { i as f64 }, |r| 3.0 * r[0]);
        let fit = fit_lasso_fixed(&m, 0.0).unwrap();
        assert_eq!(fit.coefficients[1], 0.0);
        assert!((fit.coefficients[0] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn default_grid_shape() {
        let g = default_lambda_grid(2.0);
        assert_eq!(g.len(), 50);
        assert!((g[0] - 2.0).abs() < 1e-12 && (g[49] - 2e-4).abs() < 1e-15);
        assert!(g.windows(2).all(|w| w[0] > w[1]));
    }
}
