//! Fixtures shared by the kernel benchmarks.

use ndarray::Array2;
use silentrisk_core::data::{FeatureMatrix, PREDICTORS};
use silentrisk_core::spatial::SpatialWeights;
use silentrisk_core::synth::{self, Scenario, SynthConfig};

/// Predictor matrix of a threshold-scenario synthetic set with the planted
/// risk as outcome. Blank cells are filled with zero.
pub fn threshold_matrix(n: usize, seed: u64) -> FeatureMatrix {
    let data = synth::generate(&SynthConfig::new(n, seed, Scenario::Threshold)).expect("n >= 20");
    let p = PREDICTORS.len();
    let values = Array2::from_shape_fn((n, p), |(i, j)| data.predictors[i][j].unwrap_or(0.0));
    let names = PREDICTORS.iter().map(|s| s.to_string()).collect();
    FeatureMatrix::from_rows(names, values, data.params.risk).expect("finite synthetic matrix")
}

/// Queen-contiguity weights of a `side × side` grid and a spatially smooth
/// value per cell.
pub fn grid_field(side: usize, seed: u64) -> (SpatialWeights, Vec<f64>) {
    let n = side * side;
    let data = synth::generate(&SynthConfig::new(n, seed, Scenario::Clustered)).expect("n >= 20");
    let ids = data.mortality.iter().map(|m| m.fips.clone()).collect();
    (SpatialWeights::from_edges(ids, &synth::grid_pairs(n, side)), data.params.risk)
}
