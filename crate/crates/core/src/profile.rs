//! Group comparison tables: mean ± SD (or n (%)) per group with Welch or
//! two-proportion p-values and significance stars.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub label: String,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    /// Binary rows only.
    pub count: Option<usize>,
    pub percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub p: f64,
    pub stars: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub variable: String,
    pub binary: bool,
    pub full: GroupSummary,
    pub groups: Vec<GroupSummary>,
    /// Every pair of groups, in (0,1), (0,2), ..., (1,2), ... order.
    pub comparisons: Vec<Comparison>,
}

fn summarize(label: &str, xs: &[f64]) -> GroupSummary {
    GroupSummary {
        label: label.to_string(),
        n: xs.len(),
        mean: stats::mean(xs),
        sd: stats::sd(xs),
        count: None,
        percent: None,
    }
}

fn summarize_binary(label: &str, xs: &[bool]) -> GroupSummary {
    let count = xs.iter().filter(|b| **b).count();
    let as_f: Vec<f64> = xs.iter().map(|b| if *b { 1.0 } else { 0.0 }).collect();
    GroupSummary {
        count: Some(count),
        percent: Some(100.0 * count as f64 / xs.len().max(1) as f64),
        ..summarize(label, &as_f)
    }
}

fn pairs(k: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..k).flat_map(move |a| (a + 1..k).map(move |b| (a, b)))
}

pub fn continuous_row(variable: &str, labels: &[&str], samples: &[Vec<f64>]) -> Result<ProfileRow> {
    if let Some(i) = samples.iter().position(Vec::is_empty) {
        return Err(Error::EmptyGroup(labels[i].to_string()));
    }
    let all: Vec<f64> = samples.iter().flatten().copied().collect();
    let mut comparisons = Vec::new();
    for (a, b) in pairs(samples.len()) {
        let p = stats::welch_t_test(&samples[a], &samples[b])?.p;
        comparisons.push(Comparison {
            a: labels[a].to_string(),
            b: labels[b].to_string(),
            p,
            stars: stats::stars(p).to_string(),
        });
    }
    Ok(ProfileRow {
        variable: variable.to_string(),
        binary: false,
        full: summarize("full", &all),
        groups: labels.iter().zip(samples).map(|(l, s)| summarize(l, s)).collect(),
        comparisons,
    })
}

pub fn binary_row(variable: &str, labels: &[&str], samples: &[Vec<bool>]) -> Result<ProfileRow> {
    if let Some(i) = samples.iter().position(Vec::is_empty) {
        return Err(Error::EmptyGroup(labels[i].to_string()));
    }
    let all: Vec<bool> = samples.iter().flatten().copied().collect();
    let mut comparisons = Vec::new();
    for (a, b) in pairs(samples.len()) {
        let count = |s: &[bool]| s.iter().filter(|v| **v).count();
        let p = stats::two_proportion_z_test(count(&samples[a]), samples[a].len(), count(&samples[b]), samples[b].len())?.p;
        comparisons.push(Comparison {
            a: labels[a].to_string(),
            b: labels[b].to_string(),
            p,
            stars: stats::stars(p).to_string(),
        });
    }
    Ok(ProfileRow {
        variable: variable.to_string(),
        binary: true,
        full: summarize_binary("full", &all),
        groups: labels.iter().zip(samples).map(|(l, s)| summarize_binary(l, s)).collect(),
        comparisons,
    })
}

fn cell(g: &GroupSummary) -> String {
    match (g.count, g.percent) {
        (Some(c), Some(p)) => format!("{c} ({p:.1}%)"),
        _ => format!("{:.2} ± {:.2}", g.mean, g.sd),
    }
}

/// Table layout: variable, full sample, one column per group, then p and
/// stars for every group pair.
pub fn write_profile_csv<W: Write>(out: W, rows: &[ProfileRow], header: &[String], include_full: bool) -> Result<()> {
    let mut out = out;
    for line in header {
        writeln!(out, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    if let Some(first) = rows.first() {
        let mut head = vec!["variable".to_string()];
        if include_full {
            head.push("full_sample".into());
        }
        head.extend(first.groups.iter().map(|g| format!("{} (n={})", g.label, g.n)));
        for c in &first.comparisons {
            head.push(format!("p_{}_vs_{}", c.a, c.b));
            head.push(format!("sig_{}_vs_{}", c.a, c.b));
        }
        w.write_record(&head)?;
    }
    for row in rows {
        let mut rec = vec![row.variable.clone()];
        if include_full {
            rec.push(cell(&row.full));
        }
        rec.extend(row.groups.iter().map(cell));
        for c in &row.comparisons {
            rec.push(format!("{:.4}", c.p));
            rec.push(c.stars.clone());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
