//! Shared inputs for the criterion benches.

use scc_core::dataset::{ClusterSpec, SyntheticDataset};
use scc_core::matrix::Matrix;
use scc_core::netcore::MlpModel;

/// A clean cluster dataset with `n` samples split evenly over `classes`.
pub fn clusters(n: usize, classes: usize, dim: usize, seed: u64) -> SyntheticDataset {
    ClusterSpec::new(classes, dim, 1.0, seed)
        .generate(n / classes)
        .expect("valid cluster spec")
}

/// Hidden features of a freshly initialized model, as the k-NN graph sees
/// them after stage one.
pub fn features(ds: &SyntheticDataset, hidden: usize, seed: u64) -> (MlpModel, Matrix) {
    let model = MlpModel::init(ds.dimension, hidden, ds.num_classes, seed).expect("valid shape");
    let rows = ds
        .samples
        .iter()
        .map(|s| model.hidden_features(&s.features).expect("dimension matches"))
        .map(|mut h| {
            // keep every row nonzero so cosine similarity is defined
            h.push(1.0);
            h
        })
        .collect();
    (model, Matrix::from_rows(rows).expect("rectangular"))
}

/// Per-sample predictions of `model`.
pub fn predictions(ds: &SyntheticDataset, model: &MlpModel) -> Matrix {
    let rows = ds
        .samples
        .iter()
        .map(|s| model.predict(&s.features).expect("dimension matches").probs)
        .collect();
    Matrix::from_rows(rows).expect("rectangular")
}

/// Deterministic confidences and 0/1 targets for metric benches.
pub fn confidences(n: usize) -> (Vec<f64>, Vec<f64>) {
    let c: Vec<f64> = (0..n).map(|i| (i as f64 * 0.618_033_988_75).fract()).collect();
    let v = c.iter().enumerate().map(|(i, ci)| if (i % 7) as f64 / 7.0 < *ci { 1.0 } else { 0.0 }).collect();
    (v, c)
}
