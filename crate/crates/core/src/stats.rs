//! Descriptive statistics, rank transforms and the two-group tests used by
//! the profiling tables.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (n - 1 denominator).
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn sd(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

/// Median; even counts take the mean of the two central order statistics.
pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Quantile using midpoint (Hazen) plotting positions `(i - 0.5) / n` with
/// linear interpolation, clamped to the sample range.
pub fn hazen_quantile(xs: &[f64], q: f64) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let pos = q * n - 0.5;
    if pos <= 0.0 {
        return Some(v[0]);
    }
    let lo = pos.floor() as usize;
    if lo + 1 >= v.len() {
        return Some(v[v.len() - 1]);
    }
    let frac = pos - lo as f64;
    Some(v[lo] + frac * (v[lo + 1] - v[lo]))
}

/// Average ranks, 1-based; tied values share the mean of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && xs[order[j]] == xs[order[i]] {
            j += 1;
        }
        // positions i+1 ..= j share the mean rank
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Percentile rank of every value within the sample: the fraction of values
/// at or below it, with ties sharing the midpoint of their positions.
///
/// A unique maximum scores exactly 1 and the median of an odd sample scores
/// `(n + 1) / 2n`.
pub fn percentile_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len() as f64;
    average_ranks(xs).into_iter().map(|r| r / n).collect()
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let mx = mean(x);
    let my = mean(y);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
    /// Both samples had zero variance; `t` and `p` follow the convention
    /// (equal means: t = 0, p = 1; otherwise t = +-inf, p = 0).
    pub degenerate: bool,
}

/// Two-sided Welch t-test with Satterthwaite degrees of freedom.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "Welch test needs at least two values per sample (got {} and {})",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Welch test sample".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (variance(a), variance(b));
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    if se2 == 0.0 {
        let equal = ma == mb;
        return Ok(WelchTest {
            t: if equal { 0.0 } else { (ma - mb).signum() * f64::INFINITY },
            df: na + nb - 2.0,
            p: if equal { 1.0 } else { 0.0 },
            degenerate: true,
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    Ok(WelchTest {
        t,
        df,
        p: student_two_sided(t, df),
        degenerate: false,
    })
}

/// Two-sided tail probability of Student's t.
pub fn student_two_sided(t: f64, df: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.cdf(-t.abs())).min(1.0)
}

/// Two-sided normal tail probability.
pub fn normal_two_sided(z: f64) -> f64 {
    let dist = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * dist.cdf(-z.abs())).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProportionTest {
    pub z: f64,
    pub p: f64,
}

/// Pooled two-proportion z-test (normal approximation).
pub fn two_proportion_z_test(x1: usize, n1: usize, x2: usize, n2: usize) -> Result<ProportionTest> {
    if n1 == 0 || n2 == 0 {
        return Err(Error::EmptyGroup("two-proportion test sample".into()));
    }
    let (p1, p2) = (x1 as f64 / n1 as f64, x2 as f64 / n2 as f64);
    let pooled = (x1 + x2) as f64 / (n1 + n2) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
    if se == 0.0 {
        return Ok(ProportionTest { z: 0.0, p: 1.0 });
    }
    let z = (p1 - p2) / se;
    Ok(ProportionTest {
        z,
        p: normal_two_sided(z),
    })
}

/// Significance stars at the 0.001 / 0.01 / 0.05 cut points.
pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        "ns"
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsTest {
    pub d: f64,
    pub p: f64,
}

/// One-sample Kolmogorov-Smirnov test against Uniform(0, 1), asymptotic p.
pub fn ks_uniform(samples: &[f64]) -> KsTest {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let x = x.clamp(0.0, 1.0);
        d = d.max((i + 1) as f64 / n - x).max(x - i as f64 / n);
    }
    let sqrt_n = n.sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    KsTest {
        d,
        p: kolmogorov_tail(lambda),
    }
}

fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if (k as i64) % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn median_rules() {
        assert_eq!(median(&[1.0, 2.0, 4.0]), Some(2.0));
        assert_eq!(median(&[1.0, 3.0]), Some(2.0));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn ranks_share_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
        let pr = percentile_ranks(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(pr[4], 1.0);
        assert_abs_diff_eq!(pr[2], 0.6, epsilon = 1e-15);
    }

    #[test]
    fn hazen_interpolates() {
        let xs = [0.1, 0.2, 0.8, 0.9];
        // positions .125 .375 .625 .875; 0.6 lies 90% of the way from 0.2 to 0.8
        assert_abs_diff_eq!(hazen_quantile(&xs, 0.6).unwrap(), 0.74, epsilon = 1e-12);
        assert_eq!(hazen_quantile(&xs, 0.01).unwrap(), 0.1);
        assert_eq!(hazen_quantile(&xs, 0.99).unwrap(), 0.9);
        assert_eq!(hazen_quantile(&[3.0, 3.0, 3.0], 0.6).unwrap(), 3.0);
    }

    #[test]
    fn welch_reference_values() {
        // reference: scipy.stats.ttest_ind(equal_var=False)
        let w = welch_t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_abs_diff_eq!(w.t, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w.df, 8.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w.p, 0.346_593_507_087_334_16, epsilon = 1e-10);
        // t-distribution tail itself, scipy 2*t.sf(1.5811, 8)
        assert_abs_diff_eq!(student_two_sided(1.5811, 8.0), 0.152_511_118_771_271_7, epsilon = 1e-10);
    }

    #[test]
    fn welch_unequal_sizes_against_hand_formula() {
        let a = [1.0, 4.0, 2.0, 8.0];
        let b = [3.0, 3.5, 2.5, 9.0, 10.0, 11.0];
        let w = welch_t_test(&a, &b).unwrap();
        let (va, vb) = (variance(&a) / 4.0, variance(&b) / 6.0);
        let t = (mean(&a) - mean(&b)) / (va + vb).sqrt();
        let df = (va + vb).powi(2) / (va * va / 3.0 + vb * vb / 5.0);
        assert_abs_diff_eq!(w.t, t, epsilon = 1e-14);
        assert_abs_diff_eq!(w.df, df, epsilon = 1e-12);
    }

    #[test]
    fn welch_degenerate_cases() {
        let w = welch_t_test(&[2.0, 2.0], &[2.0, 2.0, 2.0]).unwrap();
        assert!(w.degenerate);
        assert_eq!((w.t, w.p), (0.0, 1.0));
        let same = welch_t_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((same.t, same.p), (0.0, 1.0));
        assert!(welch_t_test(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn welch_planted_shift_is_highly_significant() {
        // means 10 vs 20, sd 1, n = 50 each
        let a: Vec<f64> = (0..50).map(|i| 10.0 + if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let b: Vec<f64> = a.iter().map(|v| v + 10.0).collect();
        assert!(welch_t_test(&a, &b).unwrap().p < 0.001);
    }

    #[test]
    fn proportion_test() {
        let same = two_proportion_z_test(10, 50, 10, 50).unwrap();
        assert_eq!(same.p, 1.0);
        let diff = two_proportion_z_test(45, 50, 5, 50).unwrap();
        assert!(diff.p < 0.001);
        // hand: pooled .5, se = sqrt(.25 * .04) = .1, z = .8/.1 = 8
        assert_abs_diff_eq!(diff.z, 8.0, epsilon = 1e-12);
    }

    #[test]
    fn star_cut_points() {
        assert_eq!(stars(0.0005), "***");
        assert_eq!(stars(0.001), "**");
        assert_eq!(stars(0.01), "*");
        assert_eq!(stars(0.05), "ns");
    }

    #[test]
    fn ks_detects_non_uniform() {
        let uniform: Vec<f64> = (0..200).map(|i| (i as f64 + 0.5) / 200.0).collect();
        assert!(ks_uniform(&uniform).p > 0.99);
        let skewed: Vec<f64> = uniform.iter().map(|u| u * u).collect();
        assert!(ks_uniform(&skewed).p < 0.01);
    }

    proptest! {
        #[test]
        fn welch_symmetric_under_swap_and_shift(
            a in prop::collection::vec(-50.0f64..50.0, 2..20),
            b in prop::collection::vec(-50.0f64..50.0, 2..20),
            shift in -100.0f64..100.0,
        ) {
            let w = welch_t_test(&a, &b).unwrap();
            let s = welch_t_test(&b, &a).unwrap();
            prop_assert!((w.p - s.p).abs() < 1e-12);
            let a2: Vec<f64> = a.iter().map(|v| v + shift).collect();
            let b2: Vec<f64> = b.iter().map(|v| v + shift).collect();
            let t = welch_t_test(&a2, &b2).unwrap();
            prop_assert!((w.p - t.p).abs() < 1e-6);
        }
    }
}
