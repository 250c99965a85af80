use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use scc_core::calib::{self, calibration_report, emit_reliability_csv, sav_harness, ProviderMetrics};
use scc_core::config::KvConfig;
use scc_core::dataset::{self, SyntheticDataset, VerificationSet};
use scc_core::graph::{self, DEFAULT_K, DEFAULT_LAMBDA};
use scc_core::netcore::Checkpoint;
use scc_core::pipeline::{
    self, constant_sweep, run_pipeline, write_accuracy_csv, write_sweep_csv, PipelineConfig, Scenario, GBA_SUFFIX,
};
use scc_core::trainer::artifacts::{load_scc, scc_path};
use scc_core::trainer::{
    extract, finetune, finetune_constant, pretrain, save_log, EpochLog, Pretrained, StageOneArtifacts, TrainConfig,
};

/// What a command produced, for the manifest and the exit status.
#[derive(Debug)]
pub struct Outcome {
    pub config: KvConfig,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: u64,
    pub finite: bool,
    pub out_dir: PathBuf,
}

/// Keys every command accepts besides its own.
const PATH_KEYS: [&str; 1] = ["out"];

fn check_keys(kv: &KvConfig, groups: &[&[&str]]) -> Result<()> {
    let known: Vec<&str> = groups.iter().flat_map(|g| g.iter().copied()).chain(PATH_KEYS).collect();
    kv.check_known(&known)?;
    Ok(())
}

fn without(kv: &KvConfig, drop: &[&str]) -> KvConfig {
    let mut out = KvConfig::new();
    for (k, v) in kv.iter().filter(|(k, _)| !drop.contains(k)) {
        out.set(k, v);
    }
    out
}

fn path_key(kv: &KvConfig, key: &str) -> Result<PathBuf> {
    kv.get_raw(key)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .ok_or_else(|| anyhow!("missing required `--{}`", key.replace('_', "-")))
}

fn list_key(kv: &KvConfig, key: &str) -> Vec<String> {
    kv.get_raw(key)
        .map(|v| v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect())
        .unwrap_or_default()
}

fn existing_dir(kv: &KvConfig, key: &str) -> Result<PathBuf> {
    let dir = path_key(kv, key)?;
    if !dir.is_dir() {
        bail!("{} directory {} does not exist", key.replace('_', " "), dir.display());
    }
    Ok(dir)
}

fn out_dir(kv: &KvConfig) -> Result<PathBuf> {
    let dir = path_key(kv, "out")?;
    std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    Ok(dir)
}

fn load_train(data: &Path) -> Result<SyntheticDataset> {
    Ok(dataset::load(&data.join("train.csv"))?)
}

/// The clean test split, when the data directory has one.
fn load_test(data: &Path) -> Result<Option<SyntheticDataset>> {
    let path = data.join("test.csv");
    if path.exists() {
        Ok(Some(dataset::load(&path)?))
    } else {
        Ok(None)
    }
}

fn log_is_finite(log: &[EpochLog]) -> bool {
    log.iter()
        .all(|r| r.train_loss.is_finite() && r.clean_test_acc.is_none_or(f64::is_finite))
}

fn with_paths(mut resolved: KvConfig, kv: &KvConfig, keys: &[&str]) -> KvConfig {
    for k in keys {
        if let Some(v) = kv.get_raw(k) {
            resolved.set(k, v);
        }
    }
    resolved
}

pub fn cmd_generate(kv: &KvConfig) -> Result<Outcome> {
    check_keys(kv, &[&Scenario::KEYS])?;
    let out = path_key(kv, "out")?;
    if !out.is_dir() {
        bail!("output directory {} does not exist", out.display());
    }
    let mut scenario = Scenario::default();
    scenario.apply(kv)?;
    let splits = scenario.generate()?;
    splits.save(&out)?;
    let mut resolved = KvConfig::new();
    scenario.to_kv(&mut resolved);
    println!(
        "generated {} training samples ({} flipped), {} test, {} verified",
        splits.train.len(),
        splits.train.count_flipped(),
        splits.test.len(),
        splits.verification.len()
    );
    Ok(Outcome {
        config: with_paths(resolved, kv, &["out"]),
        inputs: vec![],
        outputs: ["train.csv", "test.csv", "verification.csv"].map(|f| out.join(f)).to_vec(),
        seed: scenario.seed,
        finite: true,
        out_dir: out,
    })
}

pub fn cmd_pretrain(kv: &KvConfig) -> Result<Outcome> {
    check_keys(kv, &[&TrainConfig::KEYS, &["data"]])?;
    let data = existing_dir(kv, "data")?;
    let out = out_dir(kv)?;
    let mut config = TrainConfig::pretrain();
    config.apply(kv, "")?;
    let train = load_train(&data)?;
    let test = load_test(&data)?;
    let (model, log) = pretrain(&train, &config, test.as_ref())?;
    let ckpt = out.join("pretrain.ckpt");
    let log_path = out.join("pretrain_log.csv");
    model.save(&ckpt)?;
    save_log(&log, &log_path)?;
    let mut finite = log_is_finite(&log);
    if let Some(test) = &test {
        let acc = calib::accuracy(&model, test)?;
        finite &= acc.top1.is_finite();
        println!("{} stage one: top-1 {:.4}, top-5 {:.4}", config.regularizer, acc.top1, acc.top5);
    }
    let mut resolved = KvConfig::new();
    config.to_kv("", &mut resolved);
    Ok(Outcome {
        config: with_paths(resolved, kv, &["out", "data"]),
        inputs: vec![data.join("train.csv")],
        outputs: vec![ckpt, log_path],
        seed: config.seed,
        finite,
        out_dir: out,
    })
}

pub fn cmd_extract(kv: &KvConfig) -> Result<Outcome> {
    check_keys(kv, &[&TrainConfig::KEYS, &["data", "checkpoint", "gba", "k", "lambda"]])?;
    let data = existing_dir(kv, "data")?;
    let ckpt = path_key(kv, "checkpoint")?;
    let out = out_dir(kv)?;
    let mut config = TrainConfig::pretrain();
    config.apply(kv, "")?;
    let model = Pretrained::load(&ckpt).with_context(|| format!("cannot load checkpoint {}", ckpt.display()))?;
    config.regularizer = model.regularizer;
    let train = load_train(&data)?;
    let artifacts = extract(&train, &model, &config)?;
    artifacts.save(&out, "")?;
    let mut outputs: Vec<PathBuf> = StageOneArtifacts::file_names("").iter().map(|f| out.join(f)).collect();
    outputs.push(out.join(scc_core::trainer::artifacts::CHECKPOINT_FILE));
    let mut finite = artifacts.scc.iter().all(|c| c.is_finite());

    let gba = kv.get_bool("gba")?.unwrap_or(false);
    let k = kv.get("k")?.unwrap_or(DEFAULT_K);
    let lambda = kv.get("lambda")?.unwrap_or(DEFAULT_LAMBDA);
    if gba {
        let (smoothed, g) = graph::smooth_artifacts_with_graph(&artifacts, &train.web_labels(), k, lambda)?;
        smoothed.save(&out, GBA_SUFFIX)?;
        g.write_edges(&out.join("graph.csv"))?;
        finite &= smoothed.scc.iter().all(|c| c.is_finite());
        outputs.extend(StageOneArtifacts::file_names(GBA_SUFFIX).iter().map(|f| out.join(f)));
        outputs.push(out.join("graph.csv"));
        println!("smoothed over {} edges (k = {k}, lambda = {lambda})", g.num_edges());
    }
    let mean = artifacts.scc.iter().sum::<f64>() / artifacts.scc.len() as f64;
    println!("extracted {} self labels, mean confidence {mean:.4}", artifacts.scc.len());

    let mut resolved = KvConfig::new();
    config.to_kv("", &mut resolved);
    resolved.set("gba", gba);
    resolved.set("k", k);
    resolved.set("lambda", lambda);
    Ok(Outcome {
        config: with_paths(resolved, kv, &["out", "data", "checkpoint"]),
        inputs: vec![data.join("train.csv"), ckpt],
        outputs,
        seed: config.seed,
        finite,
        out_dir: out,
    })
}

pub fn cmd_finetune(kv: &KvConfig) -> Result<Outcome> {
    check_keys(
        kv,
        &[&TrainConfig::KEYS, &["data", "artifacts", "gba", "constant_c", "sweep_c"]],
    )?;
    let data = existing_dir(kv, "data")?;
    let artifacts_dir = existing_dir(kv, "artifacts")?;
    let out = out_dir(kv)?;
    let mut config = TrainConfig::finetune();
    config.apply(kv, "")?;
    let gba = kv.get_bool("gba")?.unwrap_or(false);
    let constant: Option<f64> = kv.get("constant_c")?;
    let sweep = kv.get_bool("sweep_c")?.unwrap_or(false);
    let suffix = if gba { GBA_SUFFIX } else { "" };

    let train = load_train(&data)?;
    let test = load_test(&data)?;
    let artifacts = StageOneArtifacts::load(&artifacts_dir, suffix)?;
    let (model, log) = match constant {
        Some(c) => finetune_constant(&train, &artifacts, c, &config, test.as_ref())?,
        None => finetune(&train, &artifacts, &config, test.as_ref())?,
    };
    let ckpt = out.join("finetune.ckpt");
    let log_path = out.join("finetune_log.csv");
    Checkpoint {
        regularizer: config.regularizer.to_string(),
        members: vec![model.clone()],
    }
    .save(&ckpt)?;
    save_log(&log, &log_path)?;
    let mut outputs = vec![ckpt, log_path];
    let mut finite = log_is_finite(&log);
    if let Some(test) = &test {
        let acc = calib::accuracy(&model, test)?;
        finite &= acc.top1.is_finite() && acc.top5.is_finite();
        let path = out.join("accuracy.csv");
        write_accuracy_csv(&[("finetune".to_string(), acc)], &path)?;
        outputs.push(path);
        println!("finetuned: top-1 {:.4}, top-5 {:.4}", acc.top1, acc.top5);
    }
    if sweep {
        let test = test
            .as_ref()
            .ok_or_else(|| anyhow!("--sweep-c needs test.csv in {}", data.display()))?;
        let rows = constant_sweep(&train, &artifacts, &config, test)?;
        finite &= rows.iter().all(|(_, a)| a.top1.is_finite() && a.top5.is_finite());
        let path = out.join("constant_sweep.csv");
        write_sweep_csv(&rows, &path)?;
        outputs.push(path);
    }

    let mut resolved = KvConfig::new();
    config.to_kv("", &mut resolved);
    resolved.set("gba", gba);
    resolved.set("sweep_c", sweep);
    if let Some(c) = constant {
        resolved.set("constant_c", c);
    }
    Ok(Outcome {
        config: with_paths(resolved, kv, &["out", "data", "artifacts"]),
        inputs: vec![data.join("train.csv"), artifacts_dir],
        outputs,
        seed: config.seed,
        finite,
        out_dir: out,
    })
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|ch| ch.is_ascii_alphanumeric() || "-_.".contains(ch))
}

/// `NAME=PATH` pairs plus artifact directories, in that order.
fn collect_providers(kv: &KvConfig) -> Result<Vec<(String, PathBuf)>> {
    let mut out: Vec<(String, PathBuf)> = Vec::new();
    for spec in list_key(kv, "scc") {
        let (name, path) = spec
            .split_once('=')
            .ok_or_else(|| anyhow!("--scc expects NAME=PATH, got {spec:?}"))?;
        out.push((name.trim().to_string(), PathBuf::from(path.trim())));
    }
    for dir in list_key(kv, "artifacts").into_iter().map(PathBuf::from) {
        let base = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| anyhow!("cannot name provider for {}", dir.display()))?;
        if !dir.is_dir() {
            bail!("artifacts directory {} does not exist", dir.display());
        }
        out.push((base.clone(), scc_path(&dir, "")));
        let smoothed = scc_path(&dir, GBA_SUFFIX);
        if smoothed.exists() {
            out.push((format!("{base}{GBA_SUFFIX}"), smoothed));
        }
    }
    if out.is_empty() {
        bail!("no confidence providers given; pass --scc NAME=PATH or --artifacts DIR");
    }
    for (i, (name, _)) in out.iter().enumerate() {
        if !valid_name(name) {
            bail!("provider name {name:?} may only hold letters, digits, '-', '_' and '.'");
        }
        if out[..i].iter().any(|(n, _)| n == name) {
            bail!("provider name {name:?} given twice");
        }
    }
    Ok(out)
}

pub fn cmd_evaluate(kv: &KvConfig) -> Result<Outcome> {
    check_keys(
        kv,
        &[
            &TrainConfig::KEYS,
            &["data", "scc", "artifacts", "sav_artifacts", "metric_bins", "diagram_bins"],
        ],
    )?;
    let data = existing_dir(kv, "data")?;
    let out = out_dir(kv)?;
    let metric_bins = kv.get("metric_bins")?.unwrap_or(calib::DEFAULT_METRIC_BINS);
    let diagram_bins = kv.get("diagram_bins")?.unwrap_or(calib::DEFAULT_DIAGRAM_BINS);
    if metric_bins == 0 || diagram_bins == 0 {
        bail!("bin counts must be positive");
    }
    let mut config = TrainConfig::finetune();
    config.apply(kv, "")?;
    let verification_path = data.join("verification.csv");
    let verification = VerificationSet::load(&verification_path)?;
    let providers = collect_providers(kv)?;

    let sav = match kv.get_raw("sav_artifacts") {
        Some(dir) => {
            let dir = PathBuf::from(dir);
            let train = load_train(&data)?;
            let test = load_test(&data)?.ok_or_else(|| anyhow!("second-stage scores need test.csv"))?;
            let vanilla = StageOneArtifacts::load(&dir, "")?;
            Some((train, test, vanilla))
        }
        None => None,
    };

    let v = verification.targets();
    let mut rows = Vec::new();
    let mut outputs = Vec::new();
    let mut inputs = vec![verification_path];
    for (name, path) in &providers {
        let scc = load_scc(path)?;
        let c = verification.gather(&scc)?;
        let report = calibration_report(&v, &c, metric_bins)?;
        let diagram = calibration_report(&v, &c, diagram_bins)?;
        let rel = out.join(format!("reliability_{name}.csv"));
        emit_reliability_csv(&diagram, &rel)?;
        outputs.push(rel);
        inputs.push(path.clone());
        let sav_top1 = match &sav {
            Some((train, test, vanilla)) => Some(sav_harness(train, vanilla, &scc, &config, test)?.top1),
            None => None,
        };
        let row = ProviderMetrics::from_report(name, &report, sav_top1);
        println!("{name}: mse {:.4}, ece {:.4}, oce {:.4}", row.mse, row.ece, row.oce);
        rows.push(row);
    }
    let summary = out.join("metrics.csv");
    calib::write_metrics_summary(&rows, &summary)?;
    outputs.push(summary);

    let mut resolved = KvConfig::new();
    resolved.set("metric_bins", metric_bins);
    resolved.set("diagram_bins", diagram_bins);
    if sav.is_some() {
        config.to_kv("", &mut resolved);
    }
    Ok(Outcome {
        config: with_paths(resolved, kv, &["out", "data", "scc", "artifacts", "sav_artifacts"]),
        inputs,
        outputs,
        seed: config.seed,
        finite: rows.iter().all(ProviderMetrics::is_finite),
        out_dir: out,
    })
}

pub fn cmd_pipeline(kv: &KvConfig) -> Result<Outcome> {
    let known = pipeline::known_keys();
    let known: Vec<&str> = known.iter().map(String::as_str).collect();
    check_keys(kv, &[&known])?;
    let out = path_key(kv, "out")?;
    let mut config = PipelineConfig::default();
    config.apply(&without(kv, &PATH_KEYS))?;
    let report = run_pipeline(&config, &out)?;
    for (name, a) in &report.stage_one {
        println!("stage one {name}: top-1 {:.4}", a.top1);
    }
    println!("finetuned: top-1 {:.4}", report.finetuned.top1);
    if let Some(a) = &report.consistency {
        println!("consistency baseline: top-1 {:.4}", a.top1);
    }
    for m in &report.metrics {
        println!("{}: mse {:.4}, ece {:.4}, oce {:.4}", m.provider, m.mse, m.ece, m.oce);
    }
    let mut outputs: Vec<PathBuf> = ["metrics.csv", "accuracy.csv", "finetune.ckpt", "finetune_log.csv"]
        .iter()
        .map(|f| out.join(f))
        .collect();
    if config.sweep_c {
        outputs.push(out.join("constant_sweep.csv"));
    }
    Ok(Outcome {
        config: with_paths(config.to_kv(), kv, &["out"]),
        inputs: vec![],
        outputs,
        seed: config.scenario.seed,
        finite: report.is_finite(),
        out_dir: out,
    })
}
