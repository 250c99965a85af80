//! Cosine k-NN graphs over hidden features and one-hop smoothing of self
//! labels, `P_hat = D^-1/2 (lambda I + A) D^-1/2 P` with
//! `D(i, i) = lambda + sum_j A(i, j)`.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::matrix::{Matrix, PredictionMatrix};
use crate::trainer::StageOneArtifacts;
use crate::util::{self, fmt_f64};

pub const DEFAULT_K: usize = 10;
pub const DEFAULT_LAMBDA: f64 = 0.5;

/// Undirected weighted graph stored as sorted adjacency lists.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnGraph {
    pub n: usize,
    pub k: usize,
    pub lambda: f64,
    /// `adjacency[i]` lists `(j, A(i, j))` by increasing `j`, never `i`.
    pub adjacency: Vec<Vec<(usize, f64)>>,
    /// `lambda + sum_j A(i, j)`.
    pub degree: Vec<f64>,
}

impl KnnGraph {
    /// Builds a graph from undirected edges `(i, j, w)`. Each pair may be
    /// listed once in either orientation; weights must lie in `[0, 1]`.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)], lambda: f64) -> Result<Self> {
        let mut map: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for &(i, j, w) in edges {
            if i >= n || j >= n {
                return Err(Error::invalid(format!("edge ({i}, {j}) outside a graph of {n} nodes")));
            }
            if i == j {
                return Err(Error::invalid(format!("self loop at node {i}")));
            }
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::invalid(format!("edge weight {w} outside [0, 1]")));
            }
            if map.insert((i.min(j), i.max(j)), w).is_some() {
                return Err(Error::invalid(format!("duplicate edge ({i}, {j})")));
            }
        }
        let mut adjacency = vec![Vec::new(); n];
        for (&(i, j), &w) in &map {
            adjacency[i].push((j, w));
            adjacency[j].push((i, w));
        }
        for row in &mut adjacency {
            row.sort_by_key(|e| e.0);
        }
        Self::from_adjacency(n, 0, adjacency, lambda)
    }

    fn from_adjacency(n: usize, k: usize, adjacency: Vec<Vec<(usize, f64)>>, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be a non-negative number, got {lambda}")));
        }
        let degree = adjacency
            .iter()
            .map(|row| lambda + row.iter().map(|e| e.1).sum::<f64>())
            .collect();
        Ok(Self {
            n,
            k,
            lambda,
            adjacency,
            degree,
        })
    }

    pub fn with_lambda(self, lambda: f64) -> Result<Self> {
        Self::from_adjacency(self.n, self.k, self.adjacency, lambda)
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn is_isolated(&self, i: usize) -> bool {
        self.adjacency[i].iter().all(|e| e.1 == 0.0)
    }

    /// Edges `(src, dst, weight)` with `src < dst`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.num_edges());
        for (i, row) in self.adjacency.iter().enumerate() {
            out.extend(row.iter().filter(|e| e.0 > i).map(|&(j, w)| (i, j, w)));
        }
        out
    }

    /// `src,dst,weight` rows with `src < dst`.
    pub fn write_edges(&self, path: &Path) -> Result<()> {
        let mut out = String::from("src,dst,weight\n");
        for (i, j, w) in self.edges() {
            out.push_str(&format!("{i},{j},{}\n", fmt_f64(w)));
        }
        util::write_atomic(path, &out)
    }
}

fn unit_rows(features: &Matrix) -> Result<Vec<Vec<f64>>> {
    features
        .iter_rows()
        .enumerate()
        .map(|(i, row)| {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::ZeroNormFeature(i));
            }
            Ok(row.iter().map(|v| v / norm).collect())
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Exact cosine k-NN graph with union symmetrization. Each node selects its
/// `k` most similar other nodes (ties to the lower index); an edge is kept
/// if either endpoint selected it, weighted by the cosine similarity with
/// negatives clamped to zero. Uses `DEFAULT_LAMBDA` for the degrees.
pub fn build_knn(features: &Matrix, k: usize) -> Result<KnnGraph> {
    let n = features.rows();
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("k must satisfy 1 <= k < N, got k = {k}, N = {n}")));
    }
    let unit = unit_rows(features)?;
    let selected: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut cand: Vec<(f64, usize)> = (0..n).filter(|&j| j != i).map(|j| (dot(&unit[i], &unit[j]), j)).collect();
            cand.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            cand.truncate(k);
            cand.into_iter().map(|(_, j)| j).collect()
        })
        .collect();
    let mut pairs: Vec<(usize, usize)> = selected
        .iter()
        .enumerate()
        .flat_map(|(i, js)| js.iter().map(move |&j| (i.min(j), i.max(j))))
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    let mut adjacency = vec![Vec::new(); n];
    for (i, j) in pairs {
        let w = dot(&unit[i], &unit[j]).clamp(0.0, 1.0);
        adjacency[i].push((j, w));
        adjacency[j].push((i, w));
    }
    for row in &mut adjacency {
        row.sort_by_key(|e| e.0);
    }
    KnnGraph::from_adjacency(n, k, adjacency, DEFAULT_LAMBDA)
}

/// One-hop smoothing of `p` over the graph. A row with zero degree (an
/// isolated node at `lambda = 0`) is copied unchanged.
pub fn gba_smooth(graph: &KnnGraph, p: &PredictionMatrix) -> Result<PredictionMatrix> {
    check_dim(graph.n, p.rows())?;
    if let Some(v) = p.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!("prediction {v} outside [0, 1]")));
    }
    let cols = p.cols();
    let rows: Vec<Vec<f64>> = (0..graph.n)
        .into_par_iter()
        .map(|i| {
            let d_i = graph.degree[i];
            if d_i == 0.0 {
                return p.row(i).to_vec();
            }
            let self_w = graph.lambda / d_i;
            let mut out: Vec<f64> = p.row(i).iter().map(|v| self_w * v).collect();
            for &(j, a) in &graph.adjacency[i] {
                let w = a / (d_i * graph.degree[j]).sqrt();
                for (o, v) in out.iter_mut().zip(p.row(j)) {
                    *o += w * v;
                }
            }
            out
        })
        .collect();
    if cols == 0 {
        return Ok(Matrix::zeros(graph.n, 0));
    }
    Matrix::from_rows(rows)
}

/// Smooths self labels over a k-NN graph of the stage-one features and
/// re-reads confidences at the web labels, clamped to `[0, 1]`.
pub fn smooth_artifacts(
    artifacts: &StageOneArtifacts,
    web_labels: &[usize],
    k: usize,
    lambda: f64,
) -> Result<StageOneArtifacts> {
    let (out, _) = smooth_artifacts_with_graph(artifacts, web_labels, k, lambda)?;
    Ok(out)
}

/// As `smooth_artifacts`, also returning the graph.
pub fn smooth_artifacts_with_graph(
    artifacts: &StageOneArtifacts,
    web_labels: &[usize],
    k: usize,
    lambda: f64,
) -> Result<(StageOneArtifacts, KnnGraph)> {
    let n = artifacts.self_labels.rows();
    check_dim(n, artifacts.features.rows())?;
    check_dim(n, web_labels.len())?;
    if artifacts.features.cols() == 0 {
        return Err(Error::invalid("artifacts carry no features"));
    }
    let graph = build_knn(&artifacts.features, k)?.with_lambda(lambda)?;
    let p_hat = gba_smooth(&graph, &artifacts.self_labels)?;
    let scc = web_labels
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            if w >= p_hat.cols() {
                return Err(Error::invalid(format!("web label {w} of sample {i} outside {} classes", p_hat.cols())));
            }
            Ok(p_hat.get(i, w).clamp(0.0, 1.0))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok((
        StageOneArtifacts {
            model_theta0: artifacts.model_theta0.clone(),
            self_labels: p_hat,
            features: artifacts.features.clone(),
            scc,
        },
        graph,
    ))
}
