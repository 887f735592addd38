//! County ingestion: the four source tables, the FIPS join, standardized
//! mortality ratios, median imputation and the structural burden score.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use log::warn;
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::{self, ProfileRow};
use crate::stats;

/// Five-digit state + county code.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Fips(String);

impl Fips {
    /// Trims, checks for 1-5 decimal digits and left-pads with zeros.
    pub fn parse(raw: &str) -> Result<Self> {
        let s = raw.trim();
        if !s.chars().all(|c| c.is_ascii_digit()) {
            return Err(Error::NonNumericFips(raw.to_string()));
        }
        if s.is_empty() || s.len() > 5 {
            return Err(Error::FipsLength(raw.to_string()));
        }
        Ok(Fips(format!("{s:0>5}")))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Two-digit state prefix.
    pub fn state(&self) -> &str {
        &self.0[..2]
    }
}

impl fmt::Display for Fips {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for Fips {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Fips::parse(&s)
    }
}

impl From<Fips> for String {
    fn from(f: Fips) -> String {
        f.0
    }
}

/// Predictor columns, in model order.
pub const PREDICTORS: [&str; 25] = [
    "poverty_rate",
    "unemployment_rate",
    "housing_burden",
    "no_hs_diploma",
    "uninsured_rate",
    "svi_percentile",
    "age_65_plus",
    "disability_rate",
    "single_parent_hh",
    "minority_pop",
    "mobile_homes",
    "no_vehicle",
    "depression",
    "smoking",
    "obesity",
    "poor_mental_health",
    "poor_sleep",
    "physical_inactivity",
    "binge_drinking",
    "diabetes",
    "high_blood_pressure",
    "psychiatrists_per_100k",
    "primary_care_per_100k",
    "treatment_desert",
    "rural",
];

pub const N_PREDICTORS: usize = PREDICTORS.len();

pub const SVI_COLUMNS: [&str; 12] = [
    "poverty_rate",
    "unemployment_rate",
    "housing_burden",
    "no_hs_diploma",
    "uninsured_rate",
    "svi_percentile",
    "age_65_plus",
    "disability_rate",
    "single_parent_hh",
    "minority_pop",
    "mobile_homes",
    "no_vehicle",
];

pub const PLACES_COLUMNS: [&str; 9] = [
    "depression",
    "smoking",
    "obesity",
    "poor_mental_health",
    "poor_sleep",
    "physical_inactivity",
    "binge_drinking",
    "diabetes",
    "high_blood_pressure",
];

pub const AHRF_COLUMNS: [&str; 3] = ["psychiatrists_per_100k", "primary_care_per_100k", "rural"];

pub const MORTALITY_COLUMNS: [&str; 3] = ["county_name", "deaths", "population"];

pub fn predictor_index(name: &str) -> Option<usize> {
    PREDICTORS.iter().position(|p| *p == name)
}

const fn idx(name: &str) -> usize {
    let mut i = 0;
    while i < PREDICTORS.len() {
        if const_eq(PREDICTORS[i], name) {
            return i;
        }
        i += 1;
    }
    panic!("unknown predictor");
}

const fn const_eq(a: &str, b: &str) -> bool {
    let (a, b) = (a.as_bytes(), b.as_bytes());
    if a.len() != b.len() {
        return false;
    }
    let mut i = 0;
    while i < a.len() {
        if a[i] != b[i] {
            return false;
        }
        i += 1;
    }
    true
}

pub const POVERTY: usize = idx("poverty_rate");
pub const UNINSURED: usize = idx("uninsured_rate");
pub const NO_HS_DIPLOMA: usize = idx("no_hs_diploma");
pub const SVI_PERCENTILE: usize = idx("svi_percentile");
pub const DISABILITY: usize = idx("disability_rate");
pub const MINORITY: usize = idx("minority_pop");
pub const NO_VEHICLE: usize = idx("no_vehicle");
pub const DEPRESSION: usize = idx("depression");
pub const SMOKING: usize = idx("smoking");
pub const PSYCHIATRISTS: usize = idx("psychiatrists_per_100k");
pub const TREATMENT_DESERT: usize = idx("treatment_desert");
pub const RURAL: usize = idx("rural");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceSchema {
    Mortality,
    Svi,
    Places,
    Ahrf,
}

impl SourceSchema {
    pub fn required_columns(self) -> &'static [&'static str] {
        match self {
            SourceSchema::Mortality => &MORTALITY_COLUMNS,
            SourceSchema::Svi => &SVI_COLUMNS,
            SourceSchema::Places => &PLACES_COLUMNS,
            SourceSchema::Ahrf => &AHRF_COLUMNS,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SourceSchema::Mortality => "mortality",
            SourceSchema::Svi => "svi",
            SourceSchema::Places => "places",
            SourceSchema::Ahrf => "ahrf",
        }
    }
}

/// One row of one source file.
#[derive(Debug, Clone, PartialEq)]
pub struct Fragment {
    pub fips: Fips,
    pub county_name: Option<String>,
    pub population: Option<u64>,
    pub deaths: Option<u64>,
    pub suppressed: bool,
    /// Full-width predictor row; only this source's columns can be `Some`.
    pub predictors: Vec<Option<f64>>,
}

#[derive(Debug, Clone)]
pub struct SourceTable {
    pub schema: SourceSchema,
    pub fragments: Vec<Fragment>,
}

pub fn load_source(path: &Path, schema: SourceSchema) -> Result<SourceTable> {
    let file = std::fs::File::open(path).map_err(|source| Error::InputFile {
        path: path.to_path_buf(),
        source,
    })?;
    read_source(file, schema, &path.display().to_string())
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("na") || c.eq_ignore_ascii_case("nan")
}

fn is_suppressed_marker(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("suppressed")
}

fn truthy(cell: &str) -> bool {
    matches!(cell.trim().to_ascii_lowercase().as_str(), "1" | "true" | "yes" | "y")
}

/// Parses one source table from CSV. `label` names the file in errors.
pub fn read_source<R: Read>(reader: R, schema: SourceSchema, label: &str) -> Result<SourceTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let fips_col = col("fips").ok_or_else(|| Error::SchemaMismatch {
        file: label.to_string(),
        column: "fips".into(),
    })?;
    let mut cols = Vec::new();
    for name in schema.required_columns() {
        let c = col(name).ok_or_else(|| Error::SchemaMismatch {
            file: label.to_string(),
            column: name.to_string(),
        })?;
        cols.push((*name, c));
    }
    let sentinel = if schema == SourceSchema::Mortality {
        col("suppressed")
    } else {
        None
    };

    let mut seen = HashSet::new();
    let mut fragments = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let fips = Fips::parse(rec.get(fips_col).unwrap_or(""))?;
        if !seen.insert(fips.clone()) {
            return Err(Error::DuplicateFips {
                file: label.to_string(),
                fips: fips.to_string(),
                row,
            });
        }
        let number = |column: &str, cell: &str| -> Result<f64> {
            cell.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::ParseNumber {
                    file: label.to_string(),
                    row,
                    column: column.to_string(),
                    value: cell.to_string(),
                })
        };
        let count = |column: &str, cell: &str| -> Result<u64> {
            let v = number(column, cell)?;
            if v < 0.0 || v.fract() != 0.0 {
                return Err(Error::ParseNumber {
                    file: label.to_string(),
                    row,
                    column: column.to_string(),
                    value: cell.to_string(),
                });
            }
            Ok(v as u64)
        };

        let mut frag = Fragment {
            fips,
            county_name: None,
            population: None,
            deaths: None,
            suppressed: false,
            predictors: vec![None; N_PREDICTORS],
        };
        match schema {
            SourceSchema::Mortality => {
                let cell = |name: &str| {
                    let c = cols.iter().find(|(n, _)| *n == name).map(|(_, c)| *c).unwrap();
                    rec.get(c).unwrap_or("")
                };
                frag.county_name = Some(cell("county_name").to_string());
                let pop = count("population", cell("population"))?;
                if pop == 0 {
                    return Err(Error::ParseNumber {
                        file: label.to_string(),
                        row,
                        column: "population".into(),
                        value: "0".into(),
                    });
                }
                frag.population = Some(pop);
                let flagged = sentinel.is_some_and(|c| truthy(rec.get(c).unwrap_or("")));
                let deaths_cell = cell("deaths");
                if flagged || is_suppressed_marker(deaths_cell) {
                    frag.suppressed = true;
                } else {
                    frag.deaths = Some(count("deaths", deaths_cell)?);
                }
            }
            _ => {
                for (name, c) in &cols {
                    let cell = rec.get(*c).unwrap_or("");
                    if is_missing(cell) {
                        continue;
                    }
                    let v = number(name, cell)?;
                    frag.predictors[predictor_index(name).unwrap()] = Some(v);
                }
            }
        }
        fragments.push(frag);
    }
    Ok(SourceTable { schema, fragments })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountyRecord {
    pub fips: Fips,
    pub name: String,
    pub population: u64,
    pub deaths: Option<u64>,
    pub smr: Option<f64>,
    pub predictors: Vec<Option<f64>>,
    pub suppressed: bool,
    pub treatment_desert: bool,
    pub rural: bool,
    pub burden_score: Option<f64>,
}

impl CountyRecord {
    pub fn predictor(&self, index: usize) -> Option<f64> {
        self.predictors[index]
    }

    /// Re-derives the desert and rural flags (and the desert predictor) from
    /// the psychiatrist density and rural cells.
    pub fn refresh_flags(&mut self) {
        let psych = self.predictors[PSYCHIATRISTS];
        self.treatment_desert = psych == Some(0.0);
        self.predictors[TREATMENT_DESERT] = psych.map(|p| if p == 0.0 { 1.0 } else { 0.0 });
        self.rural = self.predictors[RURAL].is_some_and(|r| r >= 0.5);
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceJoin {
    pub rows: usize,
    pub matched: usize,
    pub unmatched: usize,
    pub extra_rows_dropped: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JoinReport {
    pub mortality_rows: usize,
    pub records: usize,
    pub observed: usize,
    pub suppressed: usize,
    pub sources: BTreeMap<String, SourceJoin>,
}

/// Inner join on the mortality FIPS set, left-joining the predictor tables.
pub fn merge_by_fips(
    mortality: &SourceTable,
    predictor_tables: &[&SourceTable],
) -> Result<(Vec<CountyRecord>, JoinReport)> {
    if mortality.schema != SourceSchema::Mortality {
        return Err(Error::InvalidArgument("first table must be the mortality table".into()));
    }
    let keys: HashSet<&Fips> = mortality.fragments.iter().map(|f| &f.fips).collect();
    let mut report = JoinReport {
        mortality_rows: mortality.fragments.len(),
        ..Default::default()
    };
    let mut lookups: Vec<HashMap<&Fips, &Fragment>> = Vec::new();
    let mut any_match = false;
    for table in predictor_tables {
        let map: HashMap<&Fips, &Fragment> = table.fragments.iter().map(|f| (&f.fips, f)).collect();
        let matched = map.keys().filter(|k| keys.contains(*k)).count();
        any_match |= matched > 0;
        report.sources.insert(
            table.schema.name().to_string(),
            SourceJoin {
                rows: table.fragments.len(),
                matched,
                unmatched: keys.len() - matched,
                extra_rows_dropped: table.fragments.len() - matched,
            },
        );
        lookups.push(map);
    }
    if !any_match {
        return Err(Error::EmptyJoin);
    }

    let records: Vec<CountyRecord> = mortality
        .fragments
        .iter()
        .map(|m| {
            let mut predictors = vec![None; N_PREDICTORS];
            for map in &lookups {
                if let Some(frag) = map.get(&m.fips) {
                    for (slot, v) in predictors.iter_mut().zip(&frag.predictors) {
                        if v.is_some() {
                            *slot = *v;
                        }
                    }
                }
            }
            let mut rec = CountyRecord {
                fips: m.fips.clone(),
                name: m.county_name.clone().unwrap_or_default(),
                population: m.population.unwrap_or(0),
                deaths: m.deaths,
                smr: None,
                predictors,
                suppressed: m.deaths.is_none(),
                treatment_desert: false,
                rural: false,
                burden_score: None,
            };
            rec.refresh_flags();
            rec
        })
        .collect();
    report.records = records.len();
    report.suppressed = records.iter().filter(|r| r.suppressed).count();
    report.observed = report.records - report.suppressed;
    Ok((records, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRate {
    pub rate_per_100k: f64,
    pub deaths: u64,
    pub population: u64,
    pub counties: usize,
}

/// Pools deaths and population over the non-suppressed records.
pub fn compute_reference_rate(records: &[CountyRecord]) -> Result<ReferenceRate> {
    let (mut deaths, mut population, mut counties) = (0u64, 0u64, 0usize);
    for r in records.iter().filter(|r| !r.suppressed) {
        if let Some(d) = r.deaths {
            deaths += d;
            population += r.population;
            counties += 1;
        }
    }
    if counties == 0 || population == 0 {
        return Err(Error::NoObservedRecords);
    }
    let rate = 100_000.0 * deaths as f64 / population as f64;
    if rate == 0.0 {
        warn!("ZeroRate: pooled reference rate is zero over {counties} counties");
    }
    Ok(ReferenceRate {
        rate_per_100k: rate,
        deaths,
        population,
        counties,
    })
}

pub fn expected_deaths(population: u64, rate: &ReferenceRate) -> f64 {
    population as f64 * rate.rate_per_100k / 100_000.0
}

/// Observed over expected deaths.
pub fn compute_smr(deaths: u64, population: u64, rate: &ReferenceRate) -> Result<f64> {
    let expected = expected_deaths(population, rate);
    if expected <= 0.0 {
        return Err(Error::ZeroExpected {
            population: population as f64,
            rate: rate.rate_per_100k,
        });
    }
    Ok(deaths as f64 / expected)
}

/// Fills `smr` on every record with observed deaths.
pub fn assign_smr(records: &mut [CountyRecord], rate: &ReferenceRate) -> Result<()> {
    for r in records.iter_mut() {
        r.smr = match r.deaths {
            Some(d) => Some(compute_smr(d, r.population, rate)?),
            None => None,
        };
    }
    Ok(())
}

/// Dense predictor table with its outcome; missing cells hold NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub column_names: Vec<String>,
    pub values: Array2<f64>,
    pub missing_mask: Array2<bool>,
    pub outcome: Vec<f64>,
    pub row_fips: Vec<Fips>,
}

impl FeatureMatrix {
    /// Builds a complete matrix; fips default to `00001`, `00002`, ...
    pub fn from_rows(column_names: Vec<String>, values: Array2<f64>, outcome: Vec<f64>) -> Result<Self> {
        if values.ncols() != column_names.len() || values.nrows() != outcome.len() {
            return Err(Error::InvalidArgument("matrix shape does not match names/outcome".into()));
        }
        let n = values.nrows();
        let missing_mask = values.mapv(f64::is_nan);
        let row_fips = (1..=n).map(|i| Fips(format!("{:05}", i % 100_000))).collect();
        Ok(FeatureMatrix {
            column_names,
            values,
            missing_mask,
            outcome,
            row_fips,
        })
    }

    /// Rows of every record with an SMR; outcome is the SMR.
    pub fn from_records(records: &[CountyRecord]) -> Result<Self> {
        let rows: Vec<&CountyRecord> = records.iter().filter(|r| r.smr.is_some()).collect();
        if rows.is_empty() {
            return Err(Error::EmptyMatrix);
        }
        let mut values = Array2::from_elem((rows.len(), N_PREDICTORS), f64::NAN);
        for (i, r) in rows.iter().enumerate() {
            for (j, v) in r.predictors.iter().enumerate() {
                if let Some(v) = v {
                    values[[i, j]] = *v;
                }
            }
        }
        Ok(FeatureMatrix {
            column_names: PREDICTORS.iter().map(|s| s.to_string()).collect(),
            missing_mask: values.mapv(f64::is_nan),
            values,
            outcome: rows.iter().map(|r| r.smr.unwrap()).collect(),
            row_fips: rows.iter().map(|r| r.fips.clone()).collect(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn has_missing(&self) -> bool {
        self.missing_mask.iter().any(|m| *m)
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.column_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownFeature(name.to_string()))
    }

    /// Row subset, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let values = self.values.select(ndarray::Axis(0), rows);
        FeatureMatrix {
            column_names: self.column_names.clone(),
            missing_mask: self.missing_mask.select(ndarray::Axis(0), rows),
            values,
            outcome: rows.iter().map(|&i| self.outcome[i]).collect(),
            row_fips: rows.iter().map(|&i| self.row_fips[i].clone()).collect(),
        }
    }
}

/// Median of the non-missing cells of every column.
pub fn column_medians(matrix: &FeatureMatrix) -> Result<Vec<f64>> {
    (0..matrix.n_cols())
        .into_par_iter()
        .map(|j| {
            let present: Vec<f64> = matrix
                .values
                .column(j)
                .iter()
                .zip(matrix.missing_mask.column(j))
                .filter(|(_, m)| !**m)
                .map(|(v, _)| *v)
                .collect();
            stats::median(&present).ok_or_else(|| Error::FullyMissingColumn(matrix.column_names[j].clone()))
        })
        .collect()
}

/// Replaces every missing cell with its column median.
pub fn impute_medians(matrix: &FeatureMatrix) -> Result<FeatureMatrix> {
    let medians = column_medians(matrix)?;
    let mut out = matrix.clone();
    for ((i, j), m) in matrix.missing_mask.indexed_iter() {
        if *m {
            out.values[[i, j]] = medians[j];
        }
    }
    out.missing_mask.fill(false);
    Ok(out)
}

/// Median-imputes predictor cells in place over `records` and refreshes the
/// derived flags. Returns the medians used.
pub fn impute_records(records: &mut [CountyRecord]) -> Result<Vec<f64>> {
    let mut medians = Vec::with_capacity(N_PREDICTORS);
    for j in 0..N_PREDICTORS {
        let present: Vec<f64> = records.iter().filter_map(|r| r.predictors[j]).collect();
        medians.push(stats::median(&present).ok_or_else(|| Error::FullyMissingColumn(PREDICTORS[j].to_string()))?);
    }
    for r in records.iter_mut() {
        for (slot, m) in r.predictors.iter_mut().zip(&medians) {
            if slot.is_none() {
                *slot = Some(*m);
            }
        }
        r.refresh_flags();
    }
    Ok(medians)
}

/// Indicators of the structural burden score; the last one is inverted.
pub const BURDEN_INDICATORS: [usize; 7] = [
    POVERTY,
    DISABILITY,
    SMOKING,
    NO_VEHICLE,
    SVI_PERCENTILE,
    UNINSURED,
    PSYCHIATRISTS,
];

/// Sorted reference columns for percentile ranking of burden indicators.
#[derive(Debug, Clone)]
pub struct BurdenRanker {
    columns: Vec<Vec<f64>>,
}

impl BurdenRanker {
    pub fn fit(records: &[CountyRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyGroup("burden reference set".into()));
        }
        let mut columns = Vec::with_capacity(BURDEN_INDICATORS.len());
        for &j in &BURDEN_INDICATORS {
            let mut col = Vec::with_capacity(records.len());
            for r in records {
                col.push(r.predictors[j].ok_or_else(|| Error::FullyMissingColumn(PREDICTORS[j].to_string()))?);
            }
            col.sort_by(f64::total_cmp);
            columns.push(col);
        }
        Ok(BurdenRanker { columns })
    }

    /// Fraction of the reference set at or below `value`, ties sharing the
    /// midpoint of their positions. `descending` ranks from the top instead.
    fn rank(col: &[f64], value: f64, descending: bool) -> f64 {
        let n = col.len() as f64;
        let less = col.partition_point(|v| *v < value);
        let leq = col.partition_point(|v| *v <= value);
        let equal = (leq - less) as f64;
        let below = if descending { col.len() - leq } else { less } as f64;
        (below + (equal + 1.0) / 2.0).min(n) / n
    }

    pub fn score(&self, record: &CountyRecord) -> Result<f64> {
        let last = BURDEN_INDICATORS.len() - 1;
        let mut total = 0.0;
        for (k, &j) in BURDEN_INDICATORS.iter().enumerate() {
            let v = record.predictors[j].ok_or_else(|| Error::FullyMissingColumn(PREDICTORS[j].to_string()))?;
            total += Self::rank(&self.columns[k], v, k == last);
        }
        Ok(total / BURDEN_INDICATORS.len() as f64)
    }
}

/// Burden score of one record against a fitted reference set.
pub fn compute_burden_score(record: &CountyRecord, ranker: &BurdenRanker) -> Result<f64> {
    ranker.score(record)
}

/// Scores every record against the set itself and stores the result.
pub fn assign_burden_scores(records: &mut [CountyRecord]) -> Result<()> {
    let ranker = BurdenRanker::fit(records)?;
    for r in records.iter_mut() {
        r.burden_score = Some(ranker.score(r)?);
    }
    Ok(())
}

/// Observed-vs-suppressed comparison on the key indicators.
pub fn suppressed_profile(records: &[CountyRecord]) -> Result<Vec<ProfileRow>> {
    let observed: Vec<&CountyRecord> = records.iter().filter(|r| !r.suppressed).collect();
    let suppressed: Vec<&CountyRecord> = records.iter().filter(|r| r.suppressed).collect();
    if observed.is_empty() {
        return Err(Error::EmptyGroup("observed".into()));
    }
    if suppressed.is_empty() {
        return Err(Error::EmptyGroup("suppressed".into()));
    }
    let groups = [observed, suppressed];
    let labels = ["observed", "suppressed"];
    let mut rows = Vec::new();
    for (label, j) in [
        ("poverty_rate", POVERTY),
        ("uninsured_rate", UNINSURED),
        ("no_hs_diploma", NO_HS_DIPLOMA),
        ("minority_pop", MINORITY),
        ("svi_percentile", SVI_PERCENTILE),
    ] {
        let samples: Vec<Vec<f64>> = groups
            .iter()
            .map(|g| g.iter().filter_map(|r| r.predictors[j]).collect())
            .collect();
        rows.push(profile::continuous_row(label, &labels, &samples)?);
    }
    let pops: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| g.iter().map(|r| r.population as f64).collect())
        .collect();
    rows.push(profile::continuous_row("population", &labels, &pops)?);
    let rural: Vec<Vec<bool>> = groups.iter().map(|g| g.iter().map(|r| r.rural).collect()).collect();
    rows.push(profile::binary_row("rural", &labels, &rural)?);
    let desert: Vec<Vec<bool>> = groups
        .iter()
        .map(|g| {
            g.iter()
                .filter(|r| r.predictors[PSYCHIATRISTS].is_some())
                .map(|r| r.treatment_desert)
                .collect()
        })
        .collect();
    rows.push(profile::binary_row("treatment_desert", &labels, &desert)?);
    Ok(rows)
}

const RECORD_COLUMNS: [&str; 9] = [
    "fips",
    "county_name",
    "population",
    "deaths",
    "smr",
    "suppressed",
    "is_treatment_desert",
    "is_rural",
    "burden_score",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Flattened record table; one row per county. `header` lines are written
/// first as `#` comments.
pub fn write_records_csv<W: Write>(out: W, records: &[CountyRecord], header: &[String]) -> Result<()> {
    let mut out = out;
    for line in header {
        writeln!(out, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    let mut head: Vec<&str> = RECORD_COLUMNS.to_vec();
    head.extend(PREDICTORS);
    w.write_record(&head)?;
    for r in records {
        let mut row = vec![
            r.fips.to_string(),
            r.name.clone(),
            r.population.to_string(),
            opt(r.deaths),
            opt(r.smr),
            (r.suppressed as u8).to_string(),
            (r.treatment_desert as u8).to_string(),
            (r.rural as u8).to_string(),
            opt(r.burden_score),
        ];
        row.extend(r.predictors.iter().map(|v| opt(*v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_csv<R: Read>(reader: R, label: &str) -> Result<Vec<CountyRecord>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut pos = HashMap::new();
    for name in RECORD_COLUMNS.iter().chain(PREDICTORS.iter()) {
        let c = headers.iter().position(|h| h == *name).ok_or_else(|| Error::SchemaMismatch {
            file: label.to_string(),
            column: name.to_string(),
        })?;
        pos.insert(*name, c);
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let cell = |name: &str| rec.get(pos[name]).unwrap_or("");
        let num = |name: &str| -> Result<Option<f64>> {
            let c = cell(name);
            if c.is_empty() {
                return Ok(None);
            }
            c.parse::<f64>().map(Some).map_err(|_| Error::ParseNumber {
                file: label.to_string(),
                row,
                column: name.to_string(),
                value: c.to_string(),
            })
        };
        out.push(CountyRecord {
            fips: Fips::parse(cell("fips"))?,
            name: cell("county_name").to_string(),
            population: num("population")?.unwrap_or(0.0) as u64,
            deaths: num("deaths")?.map(|d| d as u64),
            smr: num("smr")?,
            predictors: PREDICTORS.iter().map(|p| num(p)).collect::<Result<_>>()?,
            suppressed: cell("suppressed") == "1",
            treatment_desert: cell("is_treatment_desert") == "1",
            rural: cell("is_rural") == "1",
            burden_score: num("burden_score")?,
        });
    }
    Ok(out)
}
