//! Acceptance suite. Runs each criterion, prints one PASS/FAIL line per
//! criterion, and exits non-zero if any criterion fails.
//!
//! Criterion 12 needs the real extracts: point `SILENTRISK_REAL_CONFIG` at a
//! run configuration for them, otherwise it is reported as SKIP.

#![allow(clippy::needless_range_loop)]

use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::Value;

use silentrisk_core::cluster::{self, KMeansConfig, QuadrantLabel};
use silentrisk_core::data::{self, CountyRecord, FeatureMatrix, Fips, N_PREDICTORS};
use silentrisk_core::eval;
use silentrisk_core::pipeline::{self, files, RunConfig};
use silentrisk_core::shap;
use silentrisk_core::spatial::{self, SpatialWeights};
use silentrisk_core::stats;
use silentrisk_core::synth::{Scenario, SynthConfig};
use silentrisk_core::trees::{fit_gbt, GbtModel, RegressionTree, Regressor, TrainConfig};

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn within_budget(v: Verdict, elapsed: Duration, budget: Duration) -> Verdict {
    match v {
        Verdict::Pass(d) if elapsed > budget => {
            Verdict::Fail(format!("{d}; took {:.1}s, budget {:.0}s", elapsed.as_secs_f64(), budget.as_secs_f64()))
        }
        other => other,
    }
}

fn matrix(values: Array2<f64>) -> FeatureMatrix {
    let names = (0..values.ncols()).map(|j| format!("x{j}")).collect();
    let y = vec![0.0; values.nrows()];
    FeatureMatrix::from_rows(names, values, y).unwrap()
}

fn random_training_set(rng: &mut ChaCha8Rng, n: usize, p: usize) -> FeatureMatrix {
    let x: Array2<f64> = Array2::from_shape_fn((n, p), |_| rng.gen_range(-2.0..2.0));
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let r = x.row(i);
            let gate = if r[1 % p] > 0.3 { 1.0 } else { -0.5 };
            (r[0] * 1.5).sin() + gate * r[p - 1] + 0.1 * rng.gen::<f64>()
        })
        .collect();
    let names = (0..p).map(|j| format!("x{j}")).collect();
    FeatureMatrix::from_rows(names, x, y).unwrap()
}

fn c1_additivity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    for m in 0..10 {
        let train = random_training_set(&mut rng, 300, 25);
        let cfg = TrainConfig {
            n_rounds: 200,
            max_depth: 1 + m % 6,
            learning_rate: 0.1,
            seed: m as u64,
            ..Default::default()
        };
        let model = fit_gbt(&train, &cfg).unwrap();
        let rows = matrix(Array2::from_shape_fn((100, 25), |_| rng.gen_range(-2.5..2.5)));
        let s = shap::tree_shap(&model, &rows).unwrap();
        let pred = model.predict(&rows).unwrap();
        for i in 0..100 {
            let total = s.base_value + s.phi.row(i).sum();
            worst = worst.max((total - pred[i]).abs());
            pairs += 1;
        }
    }
    check(worst <= 1e-8, format!("{pairs} pairs, max |base + sum(phi) - f(x)| = {worst:.2e}"))
}

/// Path-dependent conditional expectation of one tree given the features in
/// `known` (bit set).
fn cond_expectation(tree: &RegressionTree, node: usize, x: &[f64], known: u32) -> f64 {
    let n = &tree.nodes[node];
    match &n.split {
        None => n.value,
        Some(s) => {
            if known & (1 << s.feature) != 0 {
                let next = if x[s.feature] < s.threshold { s.left } else { s.right };
                cond_expectation(tree, next, x, known)
            } else {
                let (l, r) = (&tree.nodes[s.left], &tree.nodes[s.right]);
                (l.cover * cond_expectation(tree, s.left, x, known) + r.cover * cond_expectation(tree, s.right, x, known)) / n.cover
            }
        }
    }
}

fn brute_force_shapley(model: &GbtModel, x: &[f64]) -> Vec<f64> {
    let p = x.len();
    let v = |set: u32| model.base_score + model.trees.iter().map(|t| cond_expectation(t, 0, x, set)).sum::<f64>();
    let fact = |k: usize| (1..=k).map(|i| i as f64).product::<f64>();
    let mut phi = vec![0.0; p];
    for (i, slot) in phi.iter_mut().enumerate() {
        for set in 0u32..(1 << p) {
            if set & (1 << i) != 0 {
                continue;
            }
            let s = set.count_ones() as usize;
            let w = fact(s) * fact(p - s - 1) / fact(p);
            *slot += w * (v(set | (1 << i)) - v(set));
        }
    }
    phi
}

fn c2_brute_force() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    for m in 0..100 {
        let p = rng.gen_range(2..=8);
        let train = random_training_set(&mut rng, 60, p);
        let cfg = TrainConfig {
            n_rounds: rng.gen_range(1..=6),
            max_depth: rng.gen_range(1..=3),
            learning_rate: 0.5,
            subsample: 1.0,
            colsample: 1.0,
            seed: m,
            ..Default::default()
        };
        let model = fit_gbt(&train, &cfg).unwrap();
        let rows = matrix(Array2::from_shape_fn((3, p), |_| rng.gen_range(-2.5..2.5)));
        let s = shap::tree_shap(&model, &rows).unwrap();
        for i in 0..3 {
            let oracle = brute_force_shapley(&model, rows.values.row(i).as_slice().unwrap());
            for (a, b) in s.phi.row(i).iter().zip(&oracle) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    check(worst <= 1e-8, format!("100 models, max |phi - subset oracle| = {worst:.2e}"))
}

fn fips(i: usize) -> Fips {
    Fips::parse(&(1001 + i).to_string()).unwrap()
}

fn naive_moran(values: &[f64], adj: &[Vec<bool>]) -> f64 {
    let n_all = values.len();
    let deg: Vec<usize> = adj.iter().map(|r| r.iter().filter(|b| **b).count()).collect();
    let used: Vec<usize> = (0..n_all).filter(|&i| deg[i] > 0).collect();
    let n = used.len() as f64;
    let mean = used.iter().map(|&i| values[i]).sum::<f64>() / n;
    let (mut num, mut s0, mut den) = (0.0, 0.0, 0.0);
    for &i in &used {
        den += (values[i] - mean).powi(2);
        for &j in &used {
            if adj[i][j] {
                let w = 1.0 / deg[i] as f64;
                num += w * (values[i] - mean) * (values[j] - mean);
                s0 += w;
            }
        }
    }
    n / s0 * num / den
}

fn c3_moran_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.gen_range(5..=50);
        let density = rng.gen_range(0.05..0.4);
        let mut adj = vec![vec![false; n]; n];
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen_bool(density) || j == i + 1 && i < 3 {
                    adj[i][j] = true;
                    adj[j][i] = true;
                    pairs.push((fips(i), fips(j)));
                }
            }
        }
        let universe: Vec<Fips> = (0..n).map(fips).collect();
        let (w, _) = spatial::build_weights(&pairs, &universe).unwrap();
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let got = spatial::morans_i(&values, &w).unwrap();
        worst = worst.max((got - naive_moran(&values, &adj)).abs());
    }
    let cycle = SpatialWeights::from_edges((0..4).map(fips).collect(), &[(0, 1), (1, 2), (2, 3), (3, 0)]);
    let i_cycle = spatial::morans_i(&[1.0, -1.0, 1.0, -1.0], &cycle).unwrap();
    check(
        worst <= 1e-12 && i_cycle == -1.0,
        format!("50 graphs, max |I - double sum| = {worst:.2e}; alternating 4-cycle I = {i_cycle}"),
    )
}

fn synth_run(dir: &Path, n: usize, seed: u64, scenario: Scenario) -> RunConfig {
    let (_, cfg) = pipeline::run_synth(&SynthConfig::new(n, seed, scenario), dir).unwrap();
    cfg
}

/// Kolmogorov distance of the sample from Uniform(0, 1).
fn ks_distance(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| ((i + 1) as f64 / n - x).max(x - i as f64 / n))
        .fold(0.0, f64::max)
}

fn c4_calibration() -> Verdict {
    let mut p = Vec::new();
    for seed in 0..200 {
        let dir = tempfile::tempdir().unwrap();
        let cfg = synth_run(dir.path(), 100, seed, Scenario::Null);
        pipeline::run_ingest(&cfg).unwrap();
        p.push(pipeline::run_spatial(&cfg).unwrap().global.p_sim);
    }
    // p_sim is one-sided in the direction of the observed deviation, so its
    // two-sided counterpart min(1, 2p) is the uniform quantity under the null.
    let two_sided: Vec<f64> = p.iter().map(|x| (2.0 * x).min(1.0)).collect();
    let d = ks_distance(&two_sided);
    let critical = 1.6276 / (two_sided.len() as f64).sqrt();
    check(d < critical, format!("200 seeds, KS D = {d:.4} vs critical {critical:.4} at alpha 0.01"))
}

fn c5_clustered() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_run(dir.path(), 225, 5, Scenario::Clustered);
    pipeline::run_ingest(&cfg).unwrap();
    let s = pipeline::run_spatial(&cfg).unwrap();
    check(
        s.global.i > 0.3 && s.global.p_sim == 0.001,
        format!("15x15 grid, I = {:.4}, p_sim = {} over {} counties", s.global.i, s.global.p_sim, s.global.n_used),
    )
}

fn r2_of(table: &eval::ComparisonTable, name: &str) -> f64 {
    table.rows.iter().find(|r| r.model == name).unwrap().r2
}

fn c6_model_ordering() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let threshold = synth_run(&dir.path().join("threshold"), 1000, 6, Scenario::Threshold);
    pipeline::run_ingest(&threshold).unwrap();
    let t = pipeline::run_train(&threshold).unwrap().comparison;
    let linear = synth_run(&dir.path().join("linear"), 1000, 6, Scenario::Linear);
    pipeline::run_ingest(&linear).unwrap();
    let l = pipeline::run_train(&linear).unwrap().comparison;

    let (gbt_t, lin_t) = (r2_of(&t, "GBT"), r2_of(&t, "Linear Regression"));
    let (gbt_l, lin_l, lasso_l) = (r2_of(&l, "GBT"), r2_of(&l, "Linear Regression"), r2_of(&l, "LASSO"));
    let ok = t.rows[0].model == "GBT" && gbt_t >= lin_t + 0.10 && lin_l >= gbt_l - 0.02 && lasso_l >= gbt_l - 0.02;
    check(
        ok,
        format!(
            "threshold: first={} GBT R2 {gbt_t:.3} vs linear {lin_t:.3}; linear scenario: GBT {gbt_l:.3}, linear {lin_l:.3}, LASSO {lasso_l:.3}",
            t.rows[0].model
        ),
    )
}

fn c7_metric_fixtures() -> Verdict {
    let mut failures = Vec::new();
    let perfect = eval::metric_suite(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
    if !(perfect.r2 == 1.0 && perfect.rmse == 0.0 && perfect.mae == 0.0 && perfect.mape == 0.0) {
        failures.push("perfect fit".to_string());
    }
    let inv = eval::metric_suite(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0]).unwrap();
    if inv.spearman != Some(-1.0) {
        failures.push(format!("inversion spearman {:?}", inv.spearman));
    }
    let mape = eval::metric_suite(&[1.0, 2.0], &[2.0, 4.0]).unwrap().mape;
    if (mape - 100.0).abs() > 1e-12 {
        failures.push(format!("mape {mape}"));
    }
    let recall = eval::high_risk_recall(&[2.0, 1.5, 0.5, 0.4], &[0.1, 0.2, 0.9, 0.8]).unwrap();
    if recall != 0.0 {
        failures.push(format!("inverted recall {recall}"));
    }
    let a = [1.0, 2.0, 3.0, 4.0, 5.0];
    let b = [2.0, 3.0, 4.0, 5.0, 6.0];
    let welch = stats::welch_t_test(&a, &b).unwrap();
    let welch_ok = (welch.t - -1.5811).abs() <= 1e-3 && (welch.p - 0.1525).abs() <= 1e-3;
    if !welch_ok {
        // independent hand formula for the same samples
        let hand_t = (3.0 - 4.0) / (2.5f64 / 5.0 + 2.5 / 5.0).sqrt();
        failures.push(format!(
            "Welch fixture expects t=-1.5811 p=0.1525, computed t={:.4} df={:.1} p={:.4} (hand formula t={hand_t:.4})",
            welch.t, welch.df, welch.p
        ));
    }
    let detail = if failures.is_empty() {
        "perfect fit, inversion, MAPE 100%, inverted recall, Welch all match".to_string()
    } else {
        failures.join("; ")
    };
    check(failures.is_empty(), detail)
}

fn record(i: usize, smr: f64, burden: f64) -> CountyRecord {
    CountyRecord {
        fips: fips(i),
        name: format!("County {i}"),
        population: 100_000,
        deaths: Some(20),
        smr: Some(smr),
        predictors: vec![Some(1.0); N_PREDICTORS],
        suppressed: false,
        treatment_desert: false,
        rural: false,
        burden_score: Some(burden),
    }
}

/// Hazen plotting-position quantile, written out independently.
fn hazen(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (q * v.len() as f64 + 0.5).clamp(1.0, v.len() as f64);
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo >= v.len() {
        v[v.len() - 1]
    } else {
        v[lo - 1] + frac * (v[lo] - v[lo - 1])
    }
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn c8_quadrants() -> Verdict {
    let fixture: Vec<CountyRecord> = [(1.5, 0.8), (0.5, 0.9), (1.2, 0.2), (0.8, 0.4)]
        .iter()
        .enumerate()
        .map(|(i, &(s, b))| record(i, s, b))
        .collect();
    let q = cluster::classify_quadrants(&fixture, 60.0).unwrap();
    let one_each = QuadrantLabel::ALL.iter().all(|&l| q.counts.get(l) == 1);
    let labels_ok = q.assignments.iter().map(|a| a.label).collect::<Vec<_>>()
        == [QuadrantLabel::Crisis, QuadrantLabel::SilentRisk, QuadrantLabel::ModerateRisk, QuadrantLabel::LowerRisk];

    let mut datasets = 0;
    let mut partition_ok = true;
    let mut thresholds_ok = true;
    for (k, sc) in Scenario::ALL.into_iter().enumerate() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = synth_run(dir.path(), 120 + 7 * k, k as u64, sc);
        pipeline::run_ingest(&cfg).unwrap();
        let records = pipeline::load_counties(&cfg).unwrap();
        let q = cluster::classify_quadrants(&records, 60.0).unwrap();
        partition_ok &= q.counts.total() == records.len();
        let smr: Vec<f64> = records.iter().map(|r| r.smr.unwrap()).collect();
        let burden: Vec<f64> = records.iter().map(|r| r.burden_score.unwrap()).collect();
        thresholds_ok &= (q.thresholds.smr - median(&smr)).abs() < 1e-12 && (q.thresholds.burden - hazen(&burden, 0.6)).abs() < 1e-12;
        datasets += 1;
    }
    check(
        one_each && labels_ok && partition_ok && thresholds_ok,
        format!(
            "4-county fixture one per quadrant: {}; counts sum to n on {datasets} datasets: {partition_ok}; median SMR / 60th burden thresholds: {thresholds_ok}",
            one_each && labels_ok
        ),
    )
}

fn blobs(rng: &mut ChaCha8Rng, k: usize, per: usize, p: usize, separation: f64) -> (FeatureMatrix, Vec<usize>) {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut labels = Vec::new();
    let x = Array2::from_shape_fn((k * per, p), |(i, j)| {
        let c = i / per;
        let center = if j % k == c { separation } else { 0.0 };
        center + normal.sample(rng)
    });
    for c in 0..k {
        labels.extend(std::iter::repeat_n(c, per));
    }
    (matrix(x), labels)
}

/// True when `got` equals `want` up to a relabeling.
fn same_partition(got: &[usize], want: &[usize]) -> bool {
    let mut map = std::collections::HashMap::new();
    got.iter().zip(want).all(|(g, w)| *map.entry(*g).or_insert(*w) == *w)
        && map.values().collect::<std::collections::HashSet<_>>().len() == map.len()
}

fn c9_kmeans() -> Verdict {
    let cfg = KMeansConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    // centers 20 SD apart along the diagonal of the plane
    let normal = Normal::new(0.0, 1.0).unwrap();
    let offset = 20.0 / 2f64.sqrt();
    let truth: Vec<usize> = (0..120).map(|i| i / 60).collect();
    let m = matrix(Array2::from_shape_fn((120, 2), |(i, _)| offset * truth[i] as f64 + normal.sample(&mut rng)));
    let model = cluster::kmeans(&m, 2, 1, &cfg).unwrap();
    let exact = same_partition(&model.assignments, &truth);
    let mut picks = [0usize; 2];
    for seed in 0..10 {
        for (slot, k) in [2usize, 3].into_iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed * 10 + k as u64);
            let (m, _) = blobs(&mut rng, k, 40, 6, 8.0);
            let (best, _) = cluster::select_k(&m, 2..=8, seed, &cfg).unwrap();
            picks[slot] += usize::from(best.k == k);
        }
    }
    check(
        exact && model.silhouette > 0.9 && picks == [10, 10],
        format!(
            "two blobs recovered exactly: {exact}, silhouette {:.3}; select_k picked k=2 in {}/10, k=3 in {}/10",
            model.silhouette, picks[0], picks[1]
        ),
    )
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

fn c10_smr_conservation() -> Verdict {
    let mut worst: f64 = 0.0;
    for (k, sc) in Scenario::ALL.into_iter().enumerate() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = synth_run(dir.path(), 150, 40 + k as u64, sc);
        pipeline::run_ingest(&cfg).unwrap();
        let rate: Value = serde_json::from_str(&std::fs::read_to_string(cfg.out(files::REFERENCE_RATE)).unwrap()).unwrap();
        let r = rate["rate_per_100k"].as_f64().unwrap();
        let records = pipeline::load_counties(&cfg).unwrap();
        let expected: f64 = records.iter().map(|c| c.population as f64 * r / 100_000.0).sum();
        let deaths: f64 = records.iter().map(|c| c.deaths.unwrap() as f64).sum();
        worst = worst.max((expected - deaths).abs() / deaths);
    }

    // planted rate: 2391 deaths over 10,000,000 people in 20 observed counties
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut mortality = String::from("fips,county_name,deaths,population\n");
    let mut svi = format!("fips,{}\n", data::SVI_COLUMNS.join(","));
    let mut places = format!("fips,{}\n", data::PLACES_COLUMNS.join(","));
    let mut ahrf = String::from("fips,psychiatrists_per_100k,primary_care_per_100k,rural\n");
    for i in 0..25 {
        let f = fips(i);
        if i < 20 {
            let deaths = if i == 0 { 2391 - 19 * 119 } else { 119 };
            mortality.push_str(&format!("{f},C{i},{deaths},500000\n"));
        } else {
            mortality.push_str(&format!("{f},C{i},Suppressed,20000\n"));
        }
        let v = |j: usize| format!("{}", (i * 7 + j * 3) % 17 + 1);
        svi.push_str(&format!("{f},{}\n", (0..12).map(|j| if j == 5 { "0.5".to_string() } else { v(j) }).collect::<Vec<_>>().join(",")));
        places.push_str(&format!("{f},{}\n", (0..9).map(v).collect::<Vec<_>>().join(",")));
        ahrf.push_str(&format!("{f},{},{},{}\n", i % 3, 50 + i, i % 2));
    }
    write(&d.join("mortality.csv"), &mortality);
    write(&d.join("svi.csv"), &svi);
    write(&d.join("places.csv"), &places);
    write(&d.join("ahrf.csv"), &ahrf);
    let cfg = RunConfig::from_toml(
        "mortality = \"mortality.csv\"\nsvi = \"svi.csv\"\nplaces = \"places.csv\"\nahrf = \"ahrf.csv\"\n",
        d,
    )
    .unwrap();
    let s = pipeline::run_ingest(&cfg).unwrap();
    let rate_doc: Value = serde_json::from_str(&std::fs::read_to_string(cfg.out(files::REFERENCE_RATE)).unwrap()).unwrap();
    let planted = s.reference_rate.rate_per_100k == 23.91 && rate_doc["rate_per_100k"].as_f64() == Some(23.91);
    let split = s.join.observed == 20 && s.join.suppressed == 5;
    check(
        worst <= 1e-9 && planted && split,
        format!(
            "max relative |sum expected - sum deaths| = {worst:.2e} over 4 datasets; planted rate reads back as {} ({} observed / {} suppressed)",
            s.reference_rate.rate_per_100k, s.join.observed, s.join.suppressed
        ),
    )
}

fn full_run(dir: &Path, threads: usize) -> Vec<u8> {
    let cfg = synth_run(dir, 300, 11, Scenario::Threshold);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| pipeline::run_all(&cfg)).unwrap();
    std::fs::read(cfg.out(files::MANIFEST)).unwrap()
}

fn c11_determinism() -> Verdict {
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    let a = full_run(dirs[0].path(), 8);
    let b = full_run(dirs[1].path(), 8);
    let c = full_run(dirs[2].path(), 1);
    check(
        a == b && a == c,
        format!("manifest identical across reruns: {}, across 1 vs 8 threads: {}", a == b, a == c),
    )
}

fn c12_real_data() -> Verdict {
    let Ok(path) = std::env::var("SILENTRISK_REAL_CONFIG") else {
        return Verdict::Skip("set SILENTRISK_REAL_CONFIG to a run configuration for the real extracts".into());
    };
    let mut cfg = RunConfig::load(Path::new(&path)).unwrap();
    let out = tempfile::tempdir().unwrap();
    cfg.out_dir = out.path().to_path_buf();
    let manifest = pipeline::run_all(&cfg).unwrap();
    let read = |name: &str| -> Value { serde_json::from_str(&std::fs::read_to_string(cfg.out(name)).unwrap()).unwrap() };
    let desert = read(files::DESERT_CONTRAST);
    let comparison = read(files::COMPARISON_JSON);
    let gbt = comparison["rows"].as_array().unwrap().iter().find(|r| r["model"] == "GBT").unwrap().clone();
    let moran = read(files::MORAN_GLOBAL);
    let importance = read(files::IMPORTANCE);
    let top: Vec<&str> = importance["features"].as_array().unwrap().iter().take(5).map(|e| e["feature"].as_str().unwrap()).collect();

    let num = |v: &Value| v.as_f64().unwrap_or(f64::NAN);
    let near = |x: f64, target: f64, tol: f64| (x - target).abs() <= tol;
    let hh = num(&moran["hotspots"]);
    let ll = num(&moran["coldspots"]);
    let mut failures = Vec::new();
    let split = (manifest.counts.counties_ingested - manifest.counts.suppressed, manifest.counts.suppressed);
    if split != (975, 1368) {
        failures.push(format!("observed/suppressed {}/{}", split.0, split.1));
    }
    if !(near(num(&desert["mean_desert"]), 1.786, 0.01) && near(num(&desert["mean_other"]), 1.170, 0.01)) {
        failures.push(format!("desert means {} vs {}", desert["mean_desert"], desert["mean_other"]));
    }
    if !(near(num(&gbt["spearman"]), 0.670, 0.05) && near(num(&gbt["r2"]), 0.457, 0.05)) {
        failures.push(format!("GBT spearman {} r2 {}", gbt["spearman"], gbt["r2"]));
    }
    if !near(num(&moran["global"]["i"]), 0.5053, 0.05) {
        failures.push(format!("Moran I {}", moran["global"]["i"]));
    }
    if !(near(hh, 75.0, 0.15 * 75.0) && near(ll, 136.0, 0.15 * 136.0)) {
        failures.push(format!("HH/LL {hh}/{ll}"));
    }
    let top_ok = top.first() == Some(&"disability_rate") && ["high_blood_pressure", "smoking", "no_vehicle"].iter().all(|f| top.contains(f));
    if !top_ok {
        failures.push(format!("top SHAP features {top:?}"));
    }
    let detail = if failures.is_empty() {
        "all real-data checks within tolerance".to_string()
    } else {
        failures.join("; ")
    };
    check(failures.is_empty(), detail)
}

type Criterion = (u32, &'static str, fn() -> Verdict, Option<u64>);

fn main() {
    let _ = env_logger_off();
    let criteria: Vec<Criterion> = vec![
        (1, "TreeSHAP additivity", c1_additivity, Some(10)),
        (2, "TreeSHAP brute-force equivalence", c2_brute_force, Some(30)),
        (3, "Moran's I oracle equivalence", c3_moran_oracle, None),
        (4, "permutation calibration", c4_calibration, Some(120)),
        (5, "clustered-scenario detection", c5_clustered, None),
        (6, "model ordering", c6_model_ordering, Some(60)),
        (7, "metric fixtures", c7_metric_fixtures, None),
        (8, "quadrant partition", c8_quadrants, None),
        (9, "k-means recovery", c9_kmeans, None),
        (10, "SMR conservation", c10_smr_conservation, None),
        (11, "determinism", c11_determinism, None),
        (12, "real-data checks", c12_real_data, None),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, name, run, budget) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| f == &id.to_string()) {
            continue;
        }
        let start = Instant::now();
        let verdict = match std::panic::catch_unwind(run) {
            Ok(v) => v,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Verdict::Fail(format!("panicked: {msg}"))
            }
        };
        let elapsed = start.elapsed();
        let verdict = match budget {
            Some(secs) => within_budget(verdict, elapsed, Duration::from_secs(secs)),
            None => verdict,
        };
        let (tag, detail) = match verdict {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Verdict::Skip(d) => ("SKIP", d),
        };
        println!("criterion {id:>2} {tag} {name}: {detail} [{:.1}s]", elapsed.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

/// Keeps pipeline warnings out of the criterion lines.
fn env_logger_off() -> Option<()> {
    log::set_max_level(log::LevelFilter::Off);
    Some(())
}
