//! Synthetic county inputs with planted structure.
//!
//! Counties sit on a square grid (row-major, queen contiguity). Each county
//! gets a planted relative risk; observed deaths are the rounded expectation
//! `population × base_rate × risk`, so the downstream SMR tracks the planted
//! risk up to rounding and the pooled-rate rescaling.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{self, Fips, AHRF_COLUMNS, DISABILITY, PLACES_COLUMNS, PREDICTORS, SMOKING, SVI_COLUMNS};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng};

pub const MIN_COUNTIES: usize = 20;
pub const BASE_RATE_PER_100K: f64 = 24.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Linear,
    Threshold,
    Clustered,
    Null,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::Linear, Scenario::Threshold, Scenario::Clustered, Scenario::Null];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Linear => "linear",
            Scenario::Threshold => "threshold",
            Scenario::Clustered => "clustered",
            Scenario::Null => "null",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scenario {s:?} (linear, threshold, clustered, null)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub seed: u64,
    pub scenario: Scenario,
    /// Share of counties whose deaths are withheld.
    pub suppressed_fraction: f64,
    /// Share of SVI and PLACES cells left blank.
    pub missing_fraction: f64,
}

impl SynthConfig {
    pub fn new(n: usize, seed: u64, scenario: Scenario) -> Self {
        SynthConfig {
            n,
            seed,
            scenario,
            suppressed_fraction: 0.25,
            missing_fraction: 0.01,
        }
    }
}

/// Mean and SD of each predictor before clipping at zero (and at 100 for
/// percentages); the last four columns are drawn separately.
const PREDICTOR_SHAPE: [(f64, f64); 21] = [
    (15.0, 5.0),  // poverty_rate
    (5.0, 1.5),   // unemployment_rate
    (25.0, 5.0),  // housing_burden
    (12.0, 4.0),  // no_hs_diploma
    (9.0, 3.5),   // uninsured_rate
    (0.5, 0.25),  // svi_percentile
    (19.0, 4.0),  // age_65_plus
    (15.0, 4.0),  // disability_rate
    (8.0, 2.5),   // single_parent_hh
    (20.0, 12.0), // minority_pop
    (12.0, 7.0),  // mobile_homes
    (6.0, 2.5),   // no_vehicle
    (21.0, 3.0),  // depression
    (18.0, 4.0),  // smoking
    (34.0, 4.0),  // obesity
    (16.0, 2.5),  // poor_mental_health
    (36.0, 3.0),  // poor_sleep
    (25.0, 5.0),  // physical_inactivity
    (17.0, 2.5),  // binge_drinking
    (11.0, 2.5),  // diabetes
    (33.0, 4.0),  // high_blood_pressure
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdParams {
    pub disability_cut: f64,
    pub smoking_cut: f64,
    pub disability_effect: f64,
    pub smoking_effect: f64,
    pub interaction_effect: f64,
    pub baseline: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    pub intercept: f64,
    /// Per-predictor coefficient on the standardized predictor.
    pub coefficients: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteredParams {
    pub smoothing_passes: usize,
    pub log_risk_sd: f64,
}

/// Everything needed to check downstream results against the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub scenario: Scenario,
    pub n: usize,
    pub seed: u64,
    pub grid_side: usize,
    pub base_rate_per_100k: f64,
    pub suppressed_fraction: f64,
    pub missing_fraction: f64,
    pub noise_sd: f64,
    pub threshold: Option<ThresholdParams>,
    pub linear: Option<LinearParams>,
    pub clustered: Option<ClusteredParams>,
    pub suppressed: Vec<Fips>,
    /// Planted relative risk per county, in row order.
    pub risk: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MortalityRow {
    pub fips: Fips,
    pub name: String,
    pub deaths: Option<u64>,
    pub population: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub mortality: Vec<MortalityRow>,
    /// Full 25-wide predictor rows; each source file writes its own columns.
    pub predictors: Vec<Vec<Option<f64>>>,
    pub adjacency: Vec<(Fips, Fips)>,
    pub centroids: Vec<(Fips, f64, f64)>,
    pub params: SynthParams,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthFiles {
    pub mortality: PathBuf,
    pub svi: PathBuf,
    pub places: PathBuf,
    pub ahrf: PathBuf,
    pub adjacency: PathBuf,
    pub centroids: PathBuf,
    pub params: PathBuf,
}

impl SynthFiles {
    pub fn in_dir(dir: &Path) -> Self {
        SynthFiles {
            mortality: dir.join("mortality.csv"),
            svi: dir.join("svi.csv"),
            places: dir.join("places.csv"),
            ahrf: dir.join("ahrf.csv"),
            adjacency: dir.join("adjacency.csv"),
            centroids: dir.join("centroids.csv"),
            params: dir.join("synth_params.json"),
        }
    }
}

fn county_fips(i: usize) -> Fips {
    // 500 odd county codes per state, states from 01
    let code = format!("{:02}{:03}", 1 + i / 500, 1 + 2 * (i % 500));
    Fips::parse(&code).expect("generated FIPS is valid")
}

/// Queen-contiguity pairs (a < b) among the first `n` cells of a grid.
pub fn grid_pairs(n: usize, side: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..n {
        let (r, c) = ((i / side) as i64, (i % side) as i64);
        for (dr, dc) in [(0, 1), (1, -1), (1, 0), (1, 1)] {
            let (nr, nc) = (r + dr, c + dc);
            if nc < 0 || nc >= side as i64 {
                continue;
            }
            let j = (nr * side as i64 + nc) as usize;
            if j < n {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

fn standardize(col: &[f64]) -> Vec<f64> {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    col.iter().map(|v| if sd > 0.0 { (v - mean) / sd } else { 0.0 }).collect()
}

fn quantile_cut(col: &[f64], q: f64) -> f64 {
    let mut s = col.to_vec();
    s.sort_by(f64::total_cmp);
    s[((s.len() - 1) as f64 * q).round() as usize]
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    let n = cfg.n;
    if n < MIN_COUNTIES {
        return Err(Error::InvalidArgument(format!("synthetic data needs n >= {MIN_COUNTIES}, got {n}")));
    }
    if !(0.0..1.0).contains(&cfg.suppressed_fraction) || !(0.0..1.0).contains(&cfg.missing_fraction) {
        return Err(Error::InvalidArgument("suppressed and missing fractions must lie in [0, 1)".into()));
    }
    let side = (n as f64).sqrt().ceil() as usize;
    let seed = derive_seed(cfg.seed, "synth", 0);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    // Predictors: independent per column so every scenario shares one layout.
    let mut rng = stream_rng(seed, 0);
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(PREDICTORS.len());
    for (j, &(mean, sd)) in PREDICTOR_SHAPE.iter().enumerate() {
        let upper = if j == data::SVI_PERCENTILE { 1.0 } else { 100.0 };
        columns.push((0..n).map(|_| (mean + sd * std_normal.sample(&mut rng)).clamp(0.0, upper)).collect());
    }
    let psych_density = LogNormal::new(2.0, 0.8).expect("valid lognormal");
    let psychiatrists: Vec<f64> = (0..n)
        .map(|_| if rng.gen_bool(0.35) { 0.0 } else { (psych_density.sample(&mut rng) * 10.0f64).round() / 10.0 })
        .collect();
    let primary: Vec<f64> = (0..n).map(|_| (60.0 + 20.0 * std_normal.sample(&mut rng)).max(5.0)).collect();
    let rural: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
    let desert: Vec<f64> = psychiatrists.iter().map(|&p| if p == 0.0 { 1.0 } else { 0.0 }).collect();
    columns.extend([psychiatrists, primary, desert, rural]);

    let mut rng = stream_rng(seed, 1);
    let mut params = SynthParams {
        scenario: cfg.scenario,
        n,
        seed: cfg.seed,
        grid_side: side,
        base_rate_per_100k: BASE_RATE_PER_100K,
        suppressed_fraction: cfg.suppressed_fraction,
        missing_fraction: cfg.missing_fraction,
        noise_sd: 0.0,
        threshold: None,
        linear: None,
        clustered: None,
        suppressed: Vec::new(),
        risk: Vec::new(),
    };
    let risk: Vec<f64> = match cfg.scenario {
        Scenario::Threshold => {
            let p = ThresholdParams {
                disability_cut: quantile_cut(&columns[DISABILITY], 0.6),
                smoking_cut: quantile_cut(&columns[SMOKING], 0.5),
                disability_effect: 0.3,
                smoking_effect: 0.2,
                interaction_effect: 1.2,
                baseline: 0.6,
            };
            params.noise_sd = 0.05;
            let r = (0..n)
                .map(|i| {
                    let d = columns[DISABILITY][i] > p.disability_cut;
                    let s = columns[SMOKING][i] > p.smoking_cut;
                    let mut v = p.baseline;
                    if d {
                        v += p.disability_effect;
                    }
                    if s {
                        v += p.smoking_effect;
                    }
                    if d && s {
                        v += p.interaction_effect;
                    }
                    v * (params.noise_sd * std_normal.sample(&mut rng)).exp()
                })
                .collect();
            params.threshold = Some(p);
            r
        }
        Scenario::Linear => {
            let weights = [
                (data::POVERTY, 0.12),
                (DISABILITY, 0.18),
                (SMOKING, 0.15),
                (data::NO_VEHICLE, 0.08),
                (data::DEPRESSION, 0.1),
                (data::UNINSURED, -0.06),
            ];
            params.noise_sd = 0.03;
            let z: Vec<Vec<f64>> = weights.iter().map(|&(j, _)| standardize(&columns[j])).collect();
            let r = (0..n)
                .map(|i| {
                    let lin: f64 = weights.iter().zip(&z).map(|(&(_, b), zj)| b * zj[i]).sum();
                    (1.0 + lin + params.noise_sd * std_normal.sample(&mut rng)).max(0.05)
                })
                .collect();
            params.linear = Some(LinearParams {
                intercept: 1.0,
                coefficients: weights.iter().map(|&(j, b)| (PREDICTORS[j].to_string(), b)).collect(),
            });
            r
        }
        Scenario::Clustered => {
            let p = ClusteredParams {
                smoothing_passes: 3,
                log_risk_sd: 0.35,
            };
            let mut neighbors = vec![Vec::new(); n];
            for (a, b) in grid_pairs(n, side) {
                neighbors[a].push(b);
                neighbors[b].push(a);
            }
            let mut field: Vec<f64> = (0..n).map(|_| std_normal.sample(&mut rng)).collect();
            for _ in 0..p.smoothing_passes {
                field = (0..n)
                    .map(|i| {
                        let s: f64 = neighbors[i].iter().map(|&j| field[j]).sum::<f64>() + field[i];
                        s / (neighbors[i].len() + 1) as f64
                    })
                    .collect();
            }
            let field = standardize(&field);
            // tie the field to a few predictors so models see spatial structure
            for (j, scale) in [(DISABILITY, 3.0), (data::POVERTY, 3.0), (SMOKING, 2.0)] {
                for (v, f) in columns[j].iter_mut().zip(&field) {
                    *v = (*v + scale * f).max(0.0);
                }
            }
            params.noise_sd = 0.02;
            let r = field
                .iter()
                .map(|f| (p.log_risk_sd * f + params.noise_sd * std_normal.sample(&mut rng)).exp())
                .collect();
            params.clustered = Some(p);
            r
        }
        Scenario::Null => {
            params.noise_sd = 0.3;
            (0..n).map(|_| (params.noise_sd * std_normal.sample(&mut rng)).exp()).collect()
        }
    };

    // Suppression: a fixed count of counties, small populations and no deaths.
    let mut rng = stream_rng(seed, 2);
    let n_suppressed = (cfg.suppressed_fraction * n as f64).round() as usize;
    let mut suppressed = vec![false; n];
    for i in sample(&mut rng, n, n_suppressed) {
        suppressed[i] = true;
    }
    let mut mortality = Vec::with_capacity(n);
    for i in 0..n {
        let fips = county_fips(i);
        let name = format!("Synthetic County {}", i + 1);
        let row = if suppressed[i] {
            MortalityRow {
                fips,
                name,
                deaths: None,
                population: rng.gen_range(2_000..20_000),
            }
        } else {
            let population: u64 = rng.gen_range(200_000..2_000_000);
            let expected = population as f64 * BASE_RATE_PER_100K / 100_000.0 * risk[i];
            MortalityRow {
                fips,
                name,
                deaths: Some(expected.round().max(10.0) as u64),
                population,
            }
        };
        mortality.push(row);
    }

    let mut rng = stream_rng(seed, 3);
    let predictors: Vec<Vec<Option<f64>>> = (0..n)
        .map(|i| {
            (0..PREDICTORS.len())
                .map(|j| {
                    let maskable = j < SVI_COLUMNS.len() + PLACES_COLUMNS.len() && j != DISABILITY && j != SMOKING;
                    let blank = maskable && cfg.missing_fraction > 0.0 && rng.gen_bool(cfg.missing_fraction);
                    (!blank).then(|| (columns[j][i] * 1e4).round() / 1e4)
                })
                .collect()
        })
        .collect();

    let adjacency = grid_pairs(n, side).into_iter().map(|(a, b)| (county_fips(a), county_fips(b))).collect();
    let centroids = (0..n)
        .map(|i| (county_fips(i), -100.0 + 0.5 * (i % side) as f64, 45.0 - 0.5 * (i / side) as f64))
        .collect();

    params.suppressed = (0..n).filter(|&i| suppressed[i]).map(county_fips).collect();
    params.risk = risk;
    Ok(SynthData {
        mortality,
        predictors,
        adjacency,
        centroids,
        params,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_table(path: &Path, header: &[String], columns: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    for line in header {
        std::io::Write::write_all(&mut file, format!("# {line}\n").as_bytes())?;
    }
    let mut w = csv::Writer::from_writer(file);
    w.write_record(columns)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

fn source_rows<'a>(data: &'a SynthData, names: &'a [&'a str]) -> impl Iterator<Item = Vec<String>> + 'a {
    let idx: Vec<usize> = names.iter().map(|c| data::predictor_index(c).expect("source column is a predictor")).collect();
    data.mortality.iter().zip(&data.predictors).map(move |(m, p)| {
        let mut row = vec![m.fips.to_string()];
        row.extend(idx.iter().map(|&j| cell(p[j])));
        row
    })
}

/// Writes the six input files plus the parameter document into `dir`.
pub fn write_synth(data: &SynthData, dir: &Path, header: &[String]) -> Result<SynthFiles> {
    std::fs::create_dir_all(dir)?;
    let files = SynthFiles::in_dir(dir);
    write_table(
        &files.mortality,
        header,
        &["fips", "county_name", "deaths", "population"],
        data.mortality.iter().map(|m| {
            vec![
                m.fips.to_string(),
                m.name.clone(),
                m.deaths.map_or_else(|| "Suppressed".to_string(), |d| d.to_string()),
                m.population.to_string(),
            ]
        }),
    )?;
    for (path, names) in [
        (&files.svi, &SVI_COLUMNS[..]),
        (&files.places, &PLACES_COLUMNS[..]),
        (&files.ahrf, &AHRF_COLUMNS[..]),
    ] {
        let mut cols = vec!["fips"];
        cols.extend_from_slice(names);
        write_table(path, header, &cols, source_rows(data, names))?;
    }
    write_table(
        &files.adjacency,
        header,
        &["fips_a", "fips_b"],
        data.adjacency.iter().map(|(a, b)| vec![a.to_string(), b.to_string()]),
    )?;
    write_table(
        &files.centroids,
        header,
        &["fips", "lon", "lat"],
        data.centroids.iter().map(|(f, lon, lat)| vec![f.to_string(), lon.to_string(), lat.to_string()]),
    )?;
    let mut doc = serde_json::to_vec_pretty(&data.params)?;
    doc.push(b'\n');
    std::fs::write(&files.params, doc)?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_small_n() {
        assert!(matches!(generate(&SynthConfig::new(19, 0, Scenario::Null)), Err(Error::InvalidArgument(_))));
        assert!(generate(&SynthConfig::new(20, 0, Scenario::Null)).is_ok());
    }

    #[test]
    fn twenty_counties_five_suppressed() {
        let d = generate(&SynthConfig::new(20, 3, Scenario::Threshold)).unwrap();
        assert_eq!(d.mortality.iter().filter(|m| m.deaths.is_none()).count(), 5);
        assert_eq!(d.params.suppressed.len(), 5);
        assert!(d.mortality.iter().all(|m| m.deaths.is_none_or(|x| x >= 10)));
    }

    #[test]
    fn deterministic_per_seed() {
        for sc in Scenario::ALL {
            let a = generate(&SynthConfig::new(50, 9, sc)).unwrap();
            assert_eq!(a, generate(&SynthConfig::new(50, 9, sc)).unwrap());
            assert_ne!(a.params.risk, generate(&SynthConfig::new(50, 10, sc)).unwrap().params.risk);
        }
    }

    #[test]
    fn grid_is_queen_contiguous() {
        // 3x3 grid: center touches all 8, corners touch 3
        let pairs = grid_pairs(9, 3);
        let degree = |i: usize| pairs.iter().filter(|(a, b)| *a == i || *b == i).count();
        assert_eq!(degree(4), 8);
        assert_eq!(degree(0), 3);
        assert_eq!(degree(1), 5);
        assert_eq!(pairs.len(), 20);
    }

    #[test]
    fn desert_flag_matches_psychiatrists() {
        let d = generate(&SynthConfig::new(100, 1, Scenario::Null)).unwrap();
        for p in &d.predictors {
            assert_eq!(p[data::TREATMENT_DESERT], Some(if p[data::PSYCHIATRISTS] == Some(0.0) { 1.0 } else { 0.0 }));
        }
    }

    #[test]
    fn scenario_names_parse() {
        for sc in Scenario::ALL {
            assert_eq!(sc.as_str().parse::<Scenario>().unwrap(), sc);
        }
        assert!("bogus".parse::<Scenario>().is_err());
    }

    #[test]
    fn files_load_through_ingest_readers() {
        let d = generate(&SynthConfig::new(30, 2, Scenario::Clustered)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_synth(&d, dir.path(), &["seed=2".to_string()]).unwrap();
        let m = data::load_source(&files.mortality, data::SourceSchema::Mortality).unwrap();
        assert_eq!(m.fragments.len(), 30);
        assert_eq!(m.fragments.iter().filter(|f| f.suppressed).count(), d.params.suppressed.len());
        let svi = data::load_source(&files.svi, data::SourceSchema::Svi).unwrap();
        assert_eq!(svi.fragments[0].predictors[DISABILITY], d.predictors[0][DISABILITY]);
        let adj = crate::spatial::read_adjacency(std::fs::File::open(&files.adjacency).unwrap(), "adjacency").unwrap();
        assert_eq!(adj.len(), d.adjacency.len());
    }
}
