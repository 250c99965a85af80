//! Synthetic stand-ins for webly crawled data: Gaussian class clusters,
//! controlled web-label corruption, verification subsets and CSV persistence.
//!
//! Feature values are rounded to `f32` precision at generation time so the
//! nine-significant-digit CSV form round-trips bit-exactly.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::util::{self, parse_field, stream_rng, Stream};

/// Distance scale of class centers from the origin when not overridden.
pub const DEFAULT_SEPARATION: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub id: usize,
    pub features: Vec<f64>,
    pub web_label: usize,
    /// Ground truth. Never read by training code.
    pub true_label: usize,
}

impl LabeledSample {
    pub fn is_clean(&self) -> bool {
        self.web_label == self.true_label
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseModel {
    /// Any wrong class, equiprobably.
    Uniform,
    /// Each class is confused with one fixed other class.
    ClassConditional,
    /// The label of the nearest sample belonging to another class.
    Neighborhood,
}

impl NoiseModel {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseModel::Uniform => "uniform",
            NoiseModel::ClassConditional => "class_conditional",
            NoiseModel::Neighborhood => "neighborhood",
        }
    }
}

impl fmt::Display for NoiseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoiseModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().replace('-', "_").as_str() {
            "uniform" => Ok(NoiseModel::Uniform),
            "class_conditional" => Ok(NoiseModel::ClassConditional),
            "neighborhood" => Ok(NoiseModel::Neighborhood),
            other => Err(Error::invalid(format!("unknown noise model {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub samples: Vec<LabeledSample>,
    pub num_classes: usize,
    pub dimension: usize,
    pub noise_rate: f64,
    pub noise_model: Option<NoiseModel>,
    pub rng_seed: u64,
    /// Exact number of samples whose web label differs from the true label.
    pub flipped: usize,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn web_labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.web_label).collect()
    }

    pub fn true_labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.true_label).collect()
    }

    /// Number of samples per web label.
    pub fn web_label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            counts[s.web_label] += 1;
        }
        counts
    }

    pub fn count_flipped(&self) -> usize {
        self.samples.iter().filter(|s| !s.is_clean()).count()
    }

    /// Checks the per-sample invariants (dimension, label range, dense ids).
    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            if s.id != i {
                return Err(Error::invalid(format!("sample at position {i} has id {}", s.id)));
            }
            if s.features.len() != self.dimension {
                return Err(Error::DimensionMismatch {
                    expected: self.dimension,
                    actual: s.features.len(),
                });
            }
            if s.web_label >= self.num_classes || s.true_label >= self.num_classes {
                return Err(Error::invalid(format!("sample {i} has a label outside [0, {})", self.num_classes)));
            }
        }
        Ok(())
    }
}

/// Gaussian cluster layout. Centers depend only on `(num_classes,
/// dimension, separation, seed)`, so train and test splits drawn from the
/// same spec share them.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSpec {
    pub num_classes: usize,
    pub dimension: usize,
    pub spread: f64,
    pub separation: f64,
    pub seed: u64,
}

impl ClusterSpec {
    pub fn new(num_classes: usize, dimension: usize, spread: f64, seed: u64) -> Self {
        Self {
            num_classes,
            dimension,
            spread,
            separation: DEFAULT_SEPARATION,
            seed,
        }
    }

    pub fn with_separation(mut self, separation: f64) -> Self {
        self.separation = separation;
        self
    }

    fn check(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::invalid("need at least 2 classes"));
        }
        if self.dimension < 2 {
            return Err(Error::invalid("dimension must be at least 2"));
        }
        if !(self.spread >= 0.0) || !self.spread.is_finite() {
            return Err(Error::invalid("spread must be a non-negative finite number"));
        }
        if !(self.separation > 0.0) || !self.separation.is_finite() {
            return Err(Error::invalid("separation must be positive"));
        }
        Ok(())
    }

    /// Class centers: `separation` times the rows of a seeded random
    /// orthonormal basis. Classes beyond `dimension` get random unit
    /// directions.
    pub fn centers(&self) -> Vec<Vec<f64>> {
        let d = self.dimension;
        let mut rng = stream_rng(self.seed, Stream::Centers);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
        while basis.len() < d {
            let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= dot * y;
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-8 {
                v.iter_mut().for_each(|x| *x /= norm);
                basis.push(v);
            }
        }
        (0..self.num_classes)
            .map(|c| {
                let dir = if c < d {
                    basis[c].clone()
                } else {
                    let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                    v.into_iter().map(|x| x / norm).collect()
                };
                dir.into_iter().map(|x| x * self.separation).collect()
            })
            .collect()
    }

    fn draw(&self, per_class: usize, stream: Stream) -> Result<SyntheticDataset> {
        self.check()?;
        if per_class == 0 {
            return Err(Error::invalid("per_class must be at least 1"));
        }
        let centers = self.centers();
        let mut rng = stream_rng(self.seed, stream);
        let mut samples = Vec::with_capacity(self.num_classes * per_class);
        for (class, center) in centers.iter().enumerate() {
            for _ in 0..per_class {
                let features = center
                    .iter()
                    .map(|m| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        (m + self.spread * z) as f32 as f64
                    })
                    .collect();
                samples.push(LabeledSample {
                    id: samples.len(),
                    features,
                    web_label: class,
                    true_label: class,
                });
            }
        }
        Ok(SyntheticDataset {
            samples,
            num_classes: self.num_classes,
            dimension: self.dimension,
            noise_rate: 0.0,
            noise_model: None,
            rng_seed: self.seed,
            flipped: 0,
        })
    }

    /// Training split with clean labels; corrupt it with [`inject_noise`].
    pub fn generate(&self, per_class: usize) -> Result<SyntheticDataset> {
        self.draw(per_class, Stream::TrainSamples)
    }

    /// Held-out clean split sharing the training centers.
    pub fn generate_test(&self, per_class: usize) -> Result<SyntheticDataset> {
        self.draw(per_class, Stream::TestSamples)
    }
}

/// `num_classes * per_class` samples around seeded centers at the default
/// separation. Labels are clean.
pub fn generate_clusters(
    num_classes: usize,
    per_class: usize,
    dimension: usize,
    spread: f64,
    seed: u64,
) -> Result<SyntheticDataset> {
    ClusterSpec::new(num_classes, dimension, spread, seed).generate(per_class)
}

/// Corrupts the web labels of exactly `round(rate * N)` samples.
///
/// Unselected samples keep their web label; true labels and features are
/// never touched.
pub fn inject_noise(
    ds: &SyntheticDataset,
    model: NoiseModel,
    rate: f64,
    seed: u64,
) -> Result<SyntheticDataset> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("noise rate must lie in [0, 1), got {rate}")));
    }
    let mut out = ds.clone();
    out.noise_rate = rate;
    out.noise_model = Some(model);
    out.rng_seed = seed;
    let n = ds.len();
    let n_flip = (rate * n as f64).round() as usize;
    if n_flip == 0 {
        out.flipped = out.count_flipped();
        return Ok(out);
    }
    let c = ds.num_classes;
    let mut rng = stream_rng(seed, Stream::Noise);
    let mut chosen = index::sample(&mut rng, n, n_flip).into_vec();
    chosen.sort_unstable();

    match model {
        NoiseModel::Uniform => {
            for &i in &chosen {
                let truth = ds.samples[i].true_label;
                // draw from the C-1 wrong classes
                let mut label = rng.random_range(0..c - 1);
                if label >= truth {
                    label += 1;
                }
                out.samples[i].web_label = label;
            }
        }
        NoiseModel::ClassConditional => {
            let mut order: Vec<usize> = (0..c).collect();
            order.shuffle(&mut rng);
            let mut target = vec![0; c];
            for k in 0..c {
                target[order[k]] = order[(k + 1) % c];
            }
            for &i in &chosen {
                out.samples[i].web_label = target[ds.samples[i].true_label];
            }
        }
        NoiseModel::Neighborhood => {
            for &i in &chosen {
                let s = &ds.samples[i];
                let nearest = ds
                    .samples
                    .iter()
                    .filter(|o| o.true_label != s.true_label)
                    .map(|o| (squared_distance(&s.features, &o.features), o))
                    .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.id.cmp(&b.1.id)))
                    .map(|(_, o)| o)
                    .expect("at least two classes are present");
                out.samples[i].web_label = nearest.true_label;
            }
        }
    }
    out.flipped = out.count_flipped();
    Ok(out)
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerificationEntry {
    pub id: usize,
    /// Whether the web label of sample `id` is correct.
    pub v: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VerificationSet {
    pub entries: Vec<VerificationEntry>,
}

impl VerificationSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.id).collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.entries.iter().map(|e| if e.v { 1.0 } else { 0.0 }).collect()
    }

    /// Picks the confidences of the verified samples out of a per-sample vector.
    pub fn gather(&self, per_sample: &[f64]) -> Result<Vec<f64>> {
        self.entries
            .iter()
            .map(|e| {
                per_sample.get(e.id).copied().ok_or_else(|| {
                    Error::invalid(format!("verification id {} outside confidence vector of length {}", e.id, per_sample.len()))
                })
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::from("id,v\n");
        for e in &self.entries {
            out.push_str(&format!("{},{}\n", e.id, u8::from(e.v)));
        }
        util::write_atomic(path, &out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = util::read_to_string(path)?;
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("id,v") {
            return Err(Error::schema(path, 1, "expected header `id,v`"));
        }
        let mut entries = Vec::new();
        for (idx, line) in lines.enumerate() {
            let lineno = idx + 2;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 2 {
                return Err(Error::schema(path, lineno, format!("expected 2 columns, found {}", fields.len())));
            }
            let id = parse_field(path, lineno, fields[0], "id")?;
            let v = match fields[1].trim() {
                "0" => false,
                "1" => true,
                other => return Err(Error::schema(path, lineno, format!("v must be 0 or 1, got {other:?}"))),
            };
            entries.push(VerificationEntry { id, v });
        }
        Ok(Self { entries })
    }
}

/// Samples `per_class` entries per web-label class without replacement,
/// mirroring annotators checking a fixed number of crawled images per query.
pub fn build_verification_set(
    ds: &SyntheticDataset,
    per_class: usize,
    seed: u64,
) -> Result<VerificationSet> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes];
    for s in &ds.samples {
        by_class[s.web_label].push(s.id);
    }
    let mut rng = stream_rng(seed, Stream::Verification);
    let mut entries = Vec::with_capacity(per_class * ds.num_classes);
    for (class, members) in by_class.iter().enumerate() {
        if members.len() < per_class {
            return Err(Error::InsufficientSamples {
                class,
                available: members.len(),
                requested: per_class,
            });
        }
        let mut picked: Vec<usize> = index::sample(&mut rng, members.len(), per_class)
            .into_iter()
            .map(|k| members[k])
            .collect();
        picked.sort_unstable();
        entries.extend(picked.into_iter().map(|id| VerificationEntry {
            id,
            v: ds.samples[id].is_clean(),
        }));
    }
    Ok(VerificationSet { entries })
}

/// Writes `id,true_label,web_label,f0,...` with nine significant digits.
pub fn save(ds: &SyntheticDataset, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(ds.len() * (ds.dimension * 16 + 16));
    out.push_str("id,true_label,web_label");
    for j in 0..ds.dimension {
        out.push_str(&format!(",f{j}"));
    }
    out.push('\n');
    for s in &ds.samples {
        out.push_str(&format!("{},{},{}", s.id, s.true_label, s.web_label));
        for x in &s.features {
            out.push_str(&format!(",{:.8e}", *x as f32));
        }
        out.push('\n');
    }
    util::write_atomic(path, &out)
}

/// Loads a dataset CSV. The class count is inferred as one past the largest
/// label seen; noise metadata is reconstructed from the labels.
pub fn load(path: &Path) -> Result<SyntheticDataset> {
    let text = util::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::schema(path, 1, "empty file"))?
        .split(',')
        .map(str::trim)
        .collect();
    if header.len() < 4 || header[..3] != ["id", "true_label", "web_label"] {
        return Err(Error::schema(path, 1, "expected header `id,true_label,web_label,f0,...`"));
    }
    let dimension = header.len() - 3;
    for (j, name) in header[3..].iter().enumerate() {
        if *name != format!("f{j}") {
            return Err(Error::schema(path, 1, format!("column {} should be f{j}, found {name:?}", j + 3)));
        }
    }
    let mut samples = Vec::new();
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() {
            return Err(Error::schema(
                path,
                lineno,
                format!("expected {} columns, found {}", header.len(), fields.len()),
            ));
        }
        let id: usize = parse_field(path, lineno, fields[0], "id")?;
        if id != samples.len() {
            return Err(Error::schema(path, lineno, format!("ids must be dense and ordered; expected {}, found {id}", samples.len())));
        }
        let true_label = parse_field(path, lineno, fields[1], "true_label")?;
        let web_label = parse_field(path, lineno, fields[2], "web_label")?;
        let features = fields[3..]
            .iter()
            .map(|f| parse_field::<f32>(path, lineno, f, "feature").map(f64::from))
            .collect::<Result<Vec<_>>>()?;
        samples.push(LabeledSample {
            id,
            features,
            web_label,
            true_label,
        });
    }
    if samples.is_empty() {
        return Err(Error::schema(path, 2, "no samples"));
    }
    let num_classes = samples
        .iter()
        .map(|s| s.web_label.max(s.true_label))
        .max()
        .unwrap_or(0)
        + 1;
    let mut ds = SyntheticDataset {
        samples,
        num_classes,
        dimension,
        noise_rate: 0.0,
        noise_model: None,
        rng_seed: 0,
        flipped: 0,
    };
    ds.flipped = ds.count_flipped();
    ds.noise_rate = ds.flipped as f64 / ds.len() as f64;
    Ok(ds)
}
