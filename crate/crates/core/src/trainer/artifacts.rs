//! Stage-one outputs consumed by stage two, and their on-disk layout.

use std::path::{Path, PathBuf};

use crate::dataset::SyntheticDataset;
use crate::error::{check_dim, Error, Result};
use crate::matrix::{Matrix, PredictionMatrix};
use crate::netcore::{Checkpoint, MlpModel};
use crate::util::{self, fmt_f64, parse_field};

pub const CHECKPOINT_FILE: &str = "theta0.ckpt";

#[derive(Debug, Clone, PartialEq)]
pub struct StageOneArtifacts {
    /// Initialization for stage two.
    pub model_theta0: MlpModel,
    /// N×C self labels.
    pub self_labels: PredictionMatrix,
    /// N×h hidden features used to build the k-NN graph.
    pub features: Matrix,
    /// Per-sample confidence in its web label.
    pub scc: Vec<f64>,
}

impl StageOneArtifacts {
    /// Checks shapes against the dataset the artifacts are used with.
    pub fn check_against(&self, ds: &SyntheticDataset) -> Result<()> {
        let n = ds.len();
        check_dim(n, self.self_labels.rows())?;
        check_dim(ds.num_classes, self.self_labels.cols())?;
        check_dim(n, self.features.rows())?;
        check_dim(n, self.scc.len())?;
        check_dim(ds.dimension, self.model_theta0.input_dim)?;
        check_dim(ds.num_classes, self.model_theta0.num_classes)
    }

    pub fn file_names(suffix: &str) -> [String; 3] {
        [
            format!("self_labels{suffix}.csv"),
            format!("features{suffix}.csv"),
            format!("scc{suffix}.csv"),
        ]
    }

    /// Writes the checkpoint and the three CSVs into `dir`. The CSV names
    /// carry `suffix` (empty, or `_gba` for smoothed artifacts).
    pub fn save(&self, dir: &Path, suffix: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Checkpoint {
            regularizer: "stage_one".into(),
            members: vec![self.model_theta0.clone()],
        }
        .save(&dir.join(CHECKPOINT_FILE))?;
        let [p, f, c] = Self::file_names(suffix).map(|n| dir.join(n));
        self.self_labels.save_csv(&p, "p")?;
        self.features.save_csv(&f, "h")?;
        save_scc(&self.scc, &c)
    }

    pub fn load(dir: &Path, suffix: &str) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::invalid(format!("artifacts directory {} does not exist", dir.display())));
        }
        let ck = Checkpoint::load(&dir.join(CHECKPOINT_FILE))?;
        let model_theta0 = ck
            .members
            .into_iter()
            .next()
            .ok_or_else(|| Error::invalid("artifact checkpoint holds no model"))?;
        let [p, f, c] = Self::file_names(suffix).map(|n| dir.join(n));
        Ok(Self {
            model_theta0,
            self_labels: Matrix::load_csv(&p)?,
            features: Matrix::load_csv(&f)?,
            scc: load_scc(&c)?,
        })
    }
}

pub fn scc_path(dir: &Path, suffix: &str) -> PathBuf {
    dir.join(format!("scc{suffix}.csv"))
}

/// `id,c` rows in sample order.
pub fn save_scc(scc: &[f64], path: &Path) -> Result<()> {
    let mut out = String::from("id,c\n");
    for (i, c) in scc.iter().enumerate() {
        out.push_str(&format!("{i},{}\n", fmt_f64(*c)));
    }
    util::write_atomic(path, &out)
}

pub fn load_scc(path: &Path) -> Result<Vec<f64>> {
    let text = util::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "id,c" => {}
        _ => return Err(Error::schema(path, 1, "expected header `id,c`")),
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (id, c) = line
            .split_once(',')
            .ok_or_else(|| Error::schema(path, idx + 1, "expected two fields"))?;
        let id: usize = parse_field(path, idx + 1, id, "id")?;
        if id != out.len() {
            return Err(Error::schema(path, idx + 1, format!("expected id {}, found {id}", out.len())));
        }
        out.push(parse_field(path, idx + 1, c, "confidence")?);
    }
    Ok(out)
}
