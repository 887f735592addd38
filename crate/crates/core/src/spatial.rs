//! Contiguity weights, global Moran's I with permutation inference, and
//! local Moran (LISA) clusters.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::data::Fips;
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialWeights {
    pub ids: Vec<Fips>,
    /// Per county: (neighbor index, weight), neighbor indices ascending.
    pub neighbors: Vec<Vec<(usize, f64)>>,
    pub row_standardized: bool,
}

impl SpatialWeights {
    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn is_isolated(&self, i: usize) -> bool {
        self.neighbors[i].is_empty()
    }

    pub fn isolated(&self) -> Vec<Fips> {
        (0..self.n()).filter(|&i| self.is_isolated(i)).map(|i| self.ids[i].clone()).collect()
    }

    pub fn s0(&self) -> f64 {
        self.neighbors.iter().flatten().map(|(_, w)| w).sum()
    }

    /// Binary weights from an undirected edge list over `n` nodes, then row
    /// standardized. Edges must be valid and free of self-loops.
    pub fn from_edges(ids: Vec<Fips>, edges: &[(usize, usize)]) -> Self {
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); ids.len()];
        for &(a, b) in edges {
            adj[a].insert(b);
            adj[b].insert(a);
        }
        let neighbors = adj
            .into_iter()
            .map(|set| {
                let w = 1.0 / set.len() as f64;
                set.into_iter().map(|j| (j, w)).collect()
            })
            .collect();
        SpatialWeights {
            ids,
            neighbors,
            row_standardized: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightsReport {
    pub pairs_read: usize,
    pub pairs_dropped_missing: usize,
    pub duplicate_pairs: usize,
    pub edges: usize,
    pub isolated: Vec<Fips>,
}

/// Queen-contiguity weights over `universe` from an undirected pair list.
/// Pairs touching counties outside the universe are dropped; repeated pairs
/// (in either orientation) are merged.
pub fn build_weights(pairs: &[(Fips, Fips)], universe: &[Fips]) -> Result<(SpatialWeights, WeightsReport)> {
    let index: HashMap<&Fips, usize> = universe.iter().enumerate().map(|(i, f)| (f, i)).collect();
    let mut report = WeightsReport {
        pairs_read: pairs.len(),
        ..Default::default()
    };
    let mut edges = BTreeSet::new();
    for (a, b) in pairs {
        if a == b {
            return Err(Error::SelfPair {
                file: "adjacency".into(),
                fips: a.to_string(),
            });
        }
        let (Some(&i), Some(&j)) = (index.get(a), index.get(b)) else {
            report.pairs_dropped_missing += 1;
            continue;
        };
        if !edges.insert((i.min(j), i.max(j))) {
            report.duplicate_pairs += 1;
        }
    }
    if report.duplicate_pairs > 0 {
        warn!("adjacency: merged {} duplicate pairs", report.duplicate_pairs);
    }
    if report.pairs_dropped_missing > 0 {
        log::info!("adjacency: dropped {} pairs outside the analysed counties", report.pairs_dropped_missing);
    }
    let edges: Vec<(usize, usize)> = edges.into_iter().collect();
    report.edges = edges.len();
    let w = SpatialWeights::from_edges(universe.to_vec(), &edges);
    report.isolated = w.isolated();
    if !report.isolated.is_empty() {
        warn!("{} counties have no neighbors and are excluded from Moran statistics", report.isolated.len());
    }
    Ok((w, report))
}

/// Connected part of the graph in compact form: values are re-indexed to
/// the non-isolated counties, `nbr[i]` holds (compact neighbor, weight).
struct Compact {
    used: Vec<usize>,
    nbr: Vec<Vec<(usize, f64)>>,
    s0: f64,
}

fn compact(values: &[f64], w: &SpatialWeights) -> Result<Compact> {
    if values.len() != w.n() {
        return Err(Error::InvalidArgument(format!("{} values for {} counties", values.len(), w.n())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spatial values".into()));
    }
    let used: Vec<usize> = (0..w.n()).filter(|&i| !w.is_isolated(i)).collect();
    if used.len() < 3 {
        return Err(Error::TooFewCounties {
            needed: 3,
            found: used.len(),
        });
    }
    let mut pos = vec![usize::MAX; w.n()];
    for (k, &i) in used.iter().enumerate() {
        pos[i] = k;
    }
    let nbr: Vec<Vec<(usize, f64)>> = used.iter().map(|&i| w.neighbors[i].iter().map(|&(j, wt)| (pos[j], wt)).collect()).collect();
    let s0 = nbr.iter().flatten().map(|(_, wt)| wt).sum();
    Ok(Compact { used, nbr, s0 })
}

fn centered(values: &[f64], used: &[usize]) -> Result<(Vec<f64>, f64)> {
    let x: Vec<f64> = used.iter().map(|&i| values[i]).collect();
    let m = stats::mean(&x);
    let z: Vec<f64> = x.iter().map(|v| v - m).collect();
    let ss: f64 = z.iter().map(|v| v * v).sum();
    // relative test so tiny rounding residue of a constant vector counts as zero
    let scale = x.iter().map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    if ss <= (1e-12 * scale).powi(2) * x.len() as f64 {
        return Err(Error::ZeroVariance);
    }
    Ok((z, ss))
}

fn cross_product(z: &[f64], nbr: &[Vec<(usize, f64)>]) -> f64 {
    let mut total = 0.0;
    for (i, row) in nbr.iter().enumerate() {
        let mut lag = 0.0;
        for &(j, w) in row {
            lag += w * z[j];
        }
        total += z[i] * lag;
    }
    total
}

/// Global Moran's I over the non-isolated counties.
pub fn morans_i(values: &[f64], w: &SpatialWeights) -> Result<f64> {
    let c = compact(values, w)?;
    let (z, ss) = centered(values, &c.used)?;
    Ok(c.used.len() as f64 / c.s0 * cross_product(&z, &c.nbr) / ss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoranSummary {
    pub i: f64,
    pub expected: f64,
    /// Permutation z: (I − mean of permuted I) / SD of permuted I.
    pub z_sim: f64,
    pub p_sim: f64,
    pub n_perm: usize,
    pub n_used: usize,
    pub n_isolated: usize,
    pub perm_mean: f64,
    pub perm_sd: f64,
    pub seed: u64,
}

/// Pseudo p-value in the direction of the observed statistic relative to
/// its permutation expectation.
fn folded_p(observed: f64, expected: f64, draws: &[f64]) -> f64 {
    let extreme = if observed >= expected {
        draws.iter().filter(|d| **d >= observed).count()
    } else {
        draws.iter().filter(|d| **d <= observed).count()
    };
    (1 + extreme) as f64 / (draws.len() + 1) as f64
}

/// Moran's I with `n_perm` random relabelings of the values; replicate `r`
/// draws from its own RNG stream.
pub fn global_permutation_test(values: &[f64], w: &SpatialWeights, n_perm: usize, seed: u64) -> Result<(MoranSummary, Vec<f64>)> {
    if n_perm == 0 {
        return Err(Error::InvalidArgument("need at least one permutation".into()));
    }
    let c = compact(values, w)?;
    let (z, ss) = centered(values, &c.used)?;
    let n = c.used.len();
    let scale = n as f64 / c.s0 / ss;
    let observed = scale * cross_product(&z, &c.nbr);
    let draws: Vec<f64> = (0..n_perm)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, r as u64);
            let mut zp = z.clone();
            zp.shuffle(&mut rng);
            scale * cross_product(&zp, &c.nbr)
        })
        .collect();
    let expected = -1.0 / (n as f64 - 1.0);
    let perm_mean = stats::mean(&draws);
    let perm_sd = if draws.len() > 1 { stats::sd(&draws) } else { 0.0 };
    Ok((
        MoranSummary {
            i: observed,
            expected,
            z_sim: if perm_sd > 0.0 { (observed - perm_mean) / perm_sd } else { 0.0 },
            p_sim: folded_p(observed, expected, &draws),
            n_perm,
            n_used: n,
            n_isolated: w.n() - n,
            perm_mean,
            perm_sd,
            seed,
        },
        draws,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LisaQuadrant {
    HH,
    HL,
    LH,
    LL,
}

impl LisaQuadrant {
    fn from_signs(z: f64, lag: f64) -> Self {
        match (z > 0.0, lag > 0.0) {
            (true, true) => LisaQuadrant::HH,
            (true, false) => LisaQuadrant::HL,
            (false, true) => LisaQuadrant::LH,
            (false, false) => LisaQuadrant::LL,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LisaQuadrant::HH => "HH",
            LisaQuadrant::HL => "HL",
            LisaQuadrant::LH => "LH",
            LisaQuadrant::LL => "LL",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LisaCounty {
    pub fips: Fips,
    pub local_i: f64,
    pub z: f64,
    pub lag: f64,
    pub quadrant: LisaQuadrant,
    pub p_sim: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LisaCounts {
    pub hh: usize,
    pub hl: usize,
    pub lh: usize,
    pub ll: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LisaResult {
    pub alpha: f64,
    pub n_perm: usize,
    pub seed: u64,
    /// Non-isolated counties, in weights order.
    pub counties: Vec<LisaCounty>,
    pub excluded: Vec<Fips>,
    /// Significant counties per quadrant; `hh` are hotspots, `ll` coldspots.
    pub significant: LisaCounts,
}

/// Local Moran with conditional permutation: county `i` keeps its value and
/// its neighbors are filled by a draw without replacement from the other
/// counties. County `i` uses RNG stream `i`.
pub fn local_moran(values: &[f64], w: &SpatialWeights, n_perm: usize, alpha: f64, seed: u64) -> Result<LisaResult> {
    if n_perm == 0 {
        return Err(Error::InvalidArgument("need at least one permutation".into()));
    }
    let c = compact(values, w)?;
    let (z, ss) = centered(values, &c.used)?;
    let n = c.used.len();
    let m2 = ss / n as f64;
    let counties: Vec<LisaCounty> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row = &c.nbr[i];
            let lag: f64 = row.iter().map(|&(j, wt)| wt * z[j]).sum();
            let local = z[i] / m2 * lag;
            let wsum: f64 = row.iter().map(|(_, wt)| wt).sum();
            let expected = -wsum * z[i] * z[i] / (m2 * (n as f64 - 1.0));
            let mut rng = stream_rng(seed, c.used[i] as u64);
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let k = row.len();
            let draws: Vec<f64> = (0..n_perm)
                .map(|_| {
                    // partial Fisher-Yates: the first k slots are a uniform draw
                    let mut sum = 0.0;
                    for (slot, &(_, wt)) in row.iter().enumerate() {
                        let pick = rng.gen_range(slot..others.len());
                        others.swap(slot, pick);
                        sum += wt * z[others[slot]];
                    }
                    debug_assert!(k <= others.len());
                    z[i] / m2 * sum
                })
                .collect();
            let p_sim = folded_p(local, expected, &draws);
            LisaCounty {
                fips: w.ids[c.used[i]].clone(),
                local_i: local,
                z: z[i],
                lag,
                quadrant: LisaQuadrant::from_signs(z[i], lag),
                p_sim,
                significant: p_sim < alpha,
            }
        })
        .collect();
    let mut significant = LisaCounts::default();
    for county in counties.iter().filter(|c| c.significant) {
        match county.quadrant {
            LisaQuadrant::HH => significant.hh += 1,
            LisaQuadrant::HL => significant.hl += 1,
            LisaQuadrant::LH => significant.lh += 1,
            LisaQuadrant::LL => significant.ll += 1,
        }
    }
    Ok(LisaResult {
        alpha,
        n_perm,
        seed,
        counties,
        excluded: w.isolated(),
        significant,
    })
}

/// Point features at county centroids; counties without a centroid are
/// skipped and counted.
pub fn lisa_geojson(result: &LisaResult, centroids: &BTreeMap<Fips, (f64, f64)>) -> (Value, usize) {
    let mut skipped = 0;
    let mut features = Vec::new();
    for c in &result.counties {
        let Some(&(lon, lat)) = centroids.get(&c.fips) else {
            skipped += 1;
            continue;
        };
        features.push(json!({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [lon, lat]},
            "properties": {
                "fips": c.fips.as_str(),
                "local_i": c.local_i,
                "quadrant": c.quadrant.as_str(),
                "p_sim": c.p_sim,
                "significant": c.significant,
            }
        }));
    }
    (json!({"type": "FeatureCollection", "features": features}), skipped)
}

pub fn write_lisa_csv<W: std::io::Write>(mut out: W, result: &LisaResult, header: &[String]) -> Result<()> {
    for line in header {
        writeln!(out, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["fips", "local_i", "quadrant", "p_sim", "significant"])?;
    for c in &result.counties {
        w.write_record([
            c.fips.to_string(),
            c.local_i.to_string(),
            c.quadrant.as_str().to_string(),
            c.p_sim.to_string(),
            c.significant.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Adjacency CSV with columns `fips_a,fips_b`.
pub fn read_adjacency<R: Read>(reader: R, label: &str) -> Result<Vec<(Fips, Fips)>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::SchemaMismatch {
            file: label.to_string(),
            column: name.to_string(),
        })
    };
    let (a, b) = (col("fips_a")?, col("fips_b")?);
    let mut pairs = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let fa = Fips::parse(rec.get(a).unwrap_or(""))?;
        let fb = Fips::parse(rec.get(b).unwrap_or(""))?;
        if fa == fb {
            return Err(Error::SelfPair {
                file: label.to_string(),
                fips: fa.to_string(),
            });
        }
        pairs.push((fa, fb));
    }
    Ok(pairs)
}

/// Centroid CSV with columns `fips,lon,lat`.
pub fn read_centroids<R: Read>(reader: R, label: &str) -> Result<BTreeMap<Fips, (f64, f64)>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::SchemaMismatch {
            file: label.to_string(),
            column: name.to_string(),
        })
    };
    let (f, lon, lat) = (col("fips")?, col("lon")?, col("lat")?);
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec.position().map_or(0, |p| p.line() as usize);
        let num = |c: usize, name: &str| {
            let cell = rec.get(c).unwrap_or("");
            cell.parse::<f64>().map_err(|_| Error::ParseNumber {
                file: label.to_string(),
                row,
                column: name.to_string(),
                value: cell.to_string(),
            })
        };
        out.insert(Fips::parse(rec.get(f).unwrap_or(""))?, (num(lon, "lon")?, num(lat, "lat")?));
    }
    Ok(out)
}
