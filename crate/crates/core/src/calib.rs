//! Confidence quality against verified web labels, classifier accuracy and
//! the second-stage accuracy (SAV) harness.
//!
//! Bin `m` of `M` holds confidences in `((m - 1) / M, m / M]`; a confidence
//! of exactly zero goes to the first bin.

use std::path::Path;

use crate::dataset::SyntheticDataset;
use crate::error::{check_dim, Error, Result};
use crate::netcore::Classifier;
use crate::trainer::{finetune_with_confidence, StageOneArtifacts, TrainConfig};
use crate::util::{self, fmt_f64, parse_field};

pub const DEFAULT_METRIC_BINS: usize = 100;
pub const DEFAULT_DIAGRAM_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReliabilityBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Mean confidence, 0 for an empty bin.
    pub conf: f64,
    /// Fraction of correct web labels, 0 for an empty bin.
    pub rel: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub m_bins: usize,
    pub bins: Vec<ReliabilityBin>,
    pub mse: f64,
    pub ece: f64,
    pub oce: f64,
    pub n: usize,
}

fn check_inputs(v: &[f64], c: &[f64]) -> Result<()> {
    check_dim(v.len(), c.len())?;
    if v.is_empty() {
        return Err(Error::invalid("calibration needs at least one sample"));
    }
    if let Some(x) = v.iter().find(|x| **x != 0.0 && **x != 1.0) {
        return Err(Error::invalid(format!("verification target {x} is not 0 or 1")));
    }
    if let Some(x) = c.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::invalid(format!("confidence {x} outside [0, 1]")));
    }
    Ok(())
}

/// Zero-based bin of confidence `c` among `m` bins.
pub fn bin_index(c: f64, m: usize) -> usize {
    if c <= 0.0 {
        return 0;
    }
    let mf = m as f64;
    let mut k = ((c * mf).ceil() as usize).clamp(1, m);
    // settle rounding at the edges against the interval definition
    while k > 1 && c <= (k - 1) as f64 / mf {
        k -= 1;
    }
    while k < m && c > k as f64 / mf {
        k += 1;
    }
    k - 1
}

pub fn mse(v: &[f64], c: &[f64]) -> Result<f64> {
    check_inputs(v, c)?;
    Ok(v.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / v.len() as f64)
}

/// Reliability bins plus all three scalar metrics.
pub fn calibration_report(v: &[f64], c: &[f64], m: usize) -> Result<CalibrationReport> {
    check_inputs(v, c)?;
    if m == 0 {
        return Err(Error::invalid("number of bins must be positive"));
    }
    let mut count = vec![0usize; m];
    let mut conf_sum = vec![0.0; m];
    let mut rel_sum = vec![0.0; m];
    for (vi, ci) in v.iter().zip(c) {
        let b = bin_index(*ci, m);
        count[b] += 1;
        conf_sum[b] += ci;
        rel_sum[b] += vi;
    }
    let n = v.len();
    let mf = m as f64;
    let bins: Vec<ReliabilityBin> = (0..m)
        .map(|b| {
            let (conf, rel) = if count[b] == 0 {
                (0.0, 0.0)
            } else {
                (conf_sum[b] / count[b] as f64, rel_sum[b] / count[b] as f64)
            };
            ReliabilityBin {
                lo: b as f64 / mf,
                hi: (b + 1) as f64 / mf,
                count: count[b],
                conf,
                rel,
            }
        })
        .collect();
    let (ece, oce) = gaps_from_bins(&bins, n);
    Ok(CalibrationReport {
        m_bins: m,
        bins,
        mse: mse(v, c)?,
        ece,
        oce,
        n,
    })
}

/// ECE and OCE of a list of bins over `n` samples.
pub fn gaps_from_bins(bins: &[ReliabilityBin], n: usize) -> (f64, f64) {
    let mut ece = 0.0;
    let mut oce = 0.0;
    for b in bins.iter().filter(|b| b.count > 0) {
        let w = b.count as f64 / n as f64;
        ece += w * (b.rel - b.conf).abs();
        oce += w * b.conf * (b.conf - b.rel).max(0.0);
    }
    (ece, oce)
}

pub fn ece(v: &[f64], c: &[f64], m: usize) -> Result<(f64, CalibrationReport)> {
    let report = calibration_report(v, c, m)?;
    Ok((report.ece, report))
}

pub fn oce(v: &[f64], c: &[f64], m: usize) -> Result<f64> {
    Ok(calibration_report(v, c, m)?.oce)
}

pub fn emit_reliability_csv(report: &CalibrationReport, path: &Path) -> Result<()> {
    let mut out = String::from("bin_lo,bin_hi,count,conf,rel\n");
    for b in &report.bins {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_f64(b.lo),
            fmt_f64(b.hi),
            b.count,
            fmt_f64(b.conf),
            fmt_f64(b.rel)
        ));
    }
    util::write_atomic(path, &out)
}

pub fn read_reliability_csv(path: &Path) -> Result<Vec<ReliabilityBin>> {
    let text = util::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "bin_lo,bin_hi,count,conf,rel" => {}
        _ => return Err(Error::schema(path, 1, "expected header `bin_lo,bin_hi,count,conf,rel`")),
    }
    let mut bins = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::schema(path, idx + 1, format!("expected 5 fields, found {}", f.len())));
        }
        bins.push(ReliabilityBin {
            lo: parse_field(path, idx + 1, f[0], "bin_lo")?,
            hi: parse_field(path, idx + 1, f[1], "bin_hi")?,
            count: parse_field(path, idx + 1, f[2], "count")?,
            conf: parse_field(path, idx + 1, f[3], "conf")?,
            rel: parse_field(path, idx + 1, f[4], "rel")?,
        });
    }
    Ok(bins)
}

/// Spearman rank correlation with average ranks for ties. `None` when
/// either side is constant or fewer than two points are given.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let rx = ranks(x);
    let ry = ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman correlation between bin index and reliability over the
/// nonempty bins of a report.
pub fn reliability_trend(report: &CalibrationReport) -> Option<f64> {
    let (idx, rel): (Vec<f64>, Vec<f64>) = report
        .bins
        .iter()
        .enumerate()
        .filter(|(_, b)| b.count > 0)
        .map(|(i, b)| (i as f64, b.rel))
        .unzip();
    spearman(&idx, &rel)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accuracy {
    pub top1: f64,
    pub top5: f64,
}

/// Position of `label` when classes are sorted by decreasing probability,
/// ties going to the lower class index.
pub fn rank_of(probs: &[f64], label: usize) -> usize {
    let p = probs[label];
    probs
        .iter()
        .enumerate()
        .filter(|&(j, &q)| q > p || (q == p && j < label))
        .count()
}

/// Top-1 and top-5 agreement with the true labels.
pub fn accuracy<M: Classifier + ?Sized>(model: &M, test: &SyntheticDataset) -> Result<Accuracy> {
    if test.is_empty() {
        return Err(Error::invalid("accuracy needs a non-empty test split"));
    }
    let (mut top1, mut top5) = (0usize, 0usize);
    for s in &test.samples {
        let probs = model.class_probs(&s.features)?;
        check_dim(test.num_classes, probs.len())?;
        let r = rank_of(&probs, s.true_label);
        top1 += usize::from(r == 0);
        top5 += usize::from(r < 5);
    }
    let n = test.len() as f64;
    Ok(Accuracy {
        top1: top1 as f64 / n,
        top5: top5 as f64 / n,
    })
}

/// Finetunes from vanilla artifacts with their self labels but with the
/// confidences replaced by `confidence`, and scores the result on `test`.
pub fn sav_harness(
    ds: &SyntheticDataset,
    vanilla: &StageOneArtifacts,
    confidence: &[f64],
    config: &TrainConfig,
    test: &SyntheticDataset,
) -> Result<Accuracy> {
    check_dim(ds.len(), confidence.len())?;
    let (model, _) = finetune_with_confidence(ds, vanilla, confidence, config, None)?;
    accuracy(&model, test)
}

/// One row of the per-provider metrics summary.
#[derive(Debug, Clone, PartialEq)]
pub struct ProviderMetrics {
    pub provider: String,
    pub mse: f64,
    pub ece: f64,
    pub oce: f64,
    pub sav_top1: Option<f64>,
}

impl ProviderMetrics {
    pub fn from_report(provider: &str, report: &CalibrationReport, sav_top1: Option<f64>) -> Self {
        Self {
            provider: provider.to_string(),
            mse: report.mse,
            ece: report.ece,
            oce: report.oce,
            sav_top1,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.mse, self.ece, self.oce].iter().all(|v| v.is_finite()) && self.sav_top1.is_none_or(f64::is_finite)
    }
}

/// `provider,mse,ece,oce,sav_top1`; a missing SAV score is written as `nan`.
pub fn write_metrics_summary(rows: &[ProviderMetrics], path: &Path) -> Result<()> {
    let mut out = String::from("provider,mse,ece,oce,sav_top1\n");
    for r in rows {
        let sav = r.sav_top1.map_or_else(|| "nan".to_string(), fmt_f64);
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.provider,
            fmt_f64(r.mse),
            fmt_f64(r.ece),
            fmt_f64(r.oce),
            sav
        ));
    }
    util::write_atomic(path, &out)
}

pub fn read_metrics_summary(path: &Path) -> Result<Vec<ProviderMetrics>> {
    let text = util::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "provider,mse,ece,oce,sav_top1" => {}
        _ => return Err(Error::schema(path, 1, "expected header `provider,mse,ece,oce,sav_top1`")),
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::schema(path, idx + 1, format!("expected 5 fields, found {}", f.len())));
        }
        let sav: f64 = parse_field(path, idx + 1, f[4], "sav_top1")?;
        rows.push(ProviderMetrics {
            provider: f[0].to_string(),
            mse: parse_field(path, idx + 1, f[1], "mse")?,
            ece: parse_field(path, idx + 1, f[2], "ece")?,
            oce: parse_field(path, idx + 1, f[3], "oce")?,
            sav_top1: (!sav.is_nan()).then_some(sav),
        });
    }
    Ok(rows)
}
