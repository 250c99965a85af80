//! End-to-end runs: synthesize a noisy scenario, pretrain one model per
//! confidence provider, extract and optionally smooth confidences, finetune,
//! and score confidences and classifiers.

use std::path::Path;

use crate::calib::{
    self, accuracy, calibration_report, emit_reliability_csv, sav_harness, write_metrics_summary, Accuracy,
    CalibrationReport, ProviderMetrics, DEFAULT_DIAGRAM_BINS, DEFAULT_METRIC_BINS,
};
use crate::config::KvConfig;
use crate::dataset::{
    self, build_verification_set, inject_noise, ClusterSpec, NoiseModel, SyntheticDataset, VerificationSet,
    DEFAULT_SEPARATION,
};
use crate::error::{Error, Result};
use crate::graph::{self, DEFAULT_K, DEFAULT_LAMBDA};
use crate::trainer::{
    extract, finetune, finetune_constant, pretrain, save_log, train_consistency_baseline, ConsistencyConfig,
    Regularizer, StageOneArtifacts, TrainConfig,
};
use crate::util::{self, fmt_f64};

pub const GBA_SUFFIX: &str = "_gba";

/// Synthetic data: cluster geometry, corruption and split sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub num_classes: usize,
    pub per_class: usize,
    pub dimension: usize,
    pub spread: f64,
    pub separation: f64,
    pub noise_rate: f64,
    pub noise_model: NoiseModel,
    pub test_per_class: usize,
    pub verify_per_class: usize,
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            num_classes: 5,
            per_class: 400,
            dimension: 16,
            spread: 1.0,
            separation: DEFAULT_SEPARATION,
            noise_rate: 0.4,
            noise_model: NoiseModel::Uniform,
            test_per_class: 200,
            verify_per_class: 100,
            seed: 1,
        }
    }
}

/// Noisy training split, clean test split and verification subset.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: SyntheticDataset,
    pub test: SyntheticDataset,
    pub verification: VerificationSet,
}

impl Scenario {
    pub const KEYS: [&'static str; 10] = [
        "classes",
        "per_class",
        "dim",
        "spread",
        "separation",
        "noise",
        "noise_model",
        "test_per_class",
        "verify_per_class",
        "seed",
    ];

    pub fn cluster_spec(&self) -> ClusterSpec {
        ClusterSpec::new(self.num_classes, self.dimension, self.spread, self.seed).with_separation(self.separation)
    }

    pub fn generate(&self) -> Result<Splits> {
        let spec = self.cluster_spec();
        let clean = spec.generate(self.per_class)?;
        let train = inject_noise(&clean, self.noise_model, self.noise_rate, self.seed)?;
        let test = spec.generate_test(self.test_per_class)?;
        let verification = build_verification_set(&train, self.verify_per_class, self.seed)?;
        Ok(Splits {
            train,
            test,
            verification,
        })
    }

    pub fn apply(&mut self, kv: &KvConfig) -> Result<()> {
        macro_rules! take {
            ($key:literal, $field:ident) => {
                if let Some(v) = kv.get($key)? {
                    self.$field = v;
                }
            };
        }
        take!("classes", num_classes);
        take!("per_class", per_class);
        take!("dim", dimension);
        take!("spread", spread);
        take!("separation", separation);
        take!("noise", noise_rate);
        take!("noise_model", noise_model);
        take!("test_per_class", test_per_class);
        take!("verify_per_class", verify_per_class);
        take!("seed", seed);
        Ok(())
    }

    pub fn to_kv(&self, kv: &mut KvConfig) {
        kv.set("classes", self.num_classes);
        kv.set("per_class", self.per_class);
        kv.set("dim", self.dimension);
        kv.set("spread", self.spread);
        kv.set("separation", self.separation);
        kv.set("noise", self.noise_rate);
        kv.set("noise_model", self.noise_model);
        kv.set("test_per_class", self.test_per_class);
        kv.set("verify_per_class", self.verify_per_class);
        kv.set("seed", self.seed);
    }
}

impl Splits {
    pub fn save(&self, dir: &Path) -> Result<()> {
        dataset::save(&self.train, &dir.join("train.csv"))?;
        dataset::save(&self.test, &dir.join("test.csv"))?;
        self.verification.save(&dir.join("verification.csv"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Self {
            train: dataset::load(&dir.join("train.csv"))?,
            test: dataset::load(&dir.join("test.csv"))?,
            verification: VerificationSet::load(&dir.join("verification.csv"))?,
        })
    }
}

/// Everything one `pipeline` run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub scenario: Scenario,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    /// Stage-one regularizers scored as confidence providers. Vanilla is
    /// always trained since stage two starts from it.
    pub providers: Vec<Regularizer>,
    /// Smooth the vanilla artifacts and finetune on the smoothed ones.
    pub gba: bool,
    pub k: usize,
    pub lambda: f64,
    pub metric_bins: usize,
    pub diagram_bins: usize,
    /// Finetune once per provider to score it by second-stage accuracy.
    pub sav: bool,
    pub consistency: Option<ConsistencyConfig>,
    pub sweep_c: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::default(),
            pretrain: TrainConfig::pretrain(),
            finetune: TrainConfig::finetune(),
            providers: vec![Regularizer::Vanilla],
            gba: false,
            k: DEFAULT_K,
            lambda: DEFAULT_LAMBDA,
            metric_bins: DEFAULT_METRIC_BINS,
            diagram_bins: DEFAULT_DIAGRAM_BINS,
            sav: true,
            consistency: None,
            sweep_c: false,
        }
    }
}

pub const PIPELINE_KEYS: [&str; 11] = [
    "providers",
    "gba",
    "k",
    "lambda",
    "metric_bins",
    "diagram_bins",
    "sav",
    "consistency",
    "consistency_weight",
    "consistency_sigma",
    "sweep_c",
];

/// Every key a run config may set: scenario keys, pipeline keys, and
/// training keys either bare (both stages) or prefixed with `pretrain.` or
/// `finetune.`.
pub fn known_keys() -> Vec<String> {
    let mut keys: Vec<String> = Scenario::KEYS.iter().chain(PIPELINE_KEYS.iter()).map(|s| s.to_string()).collect();
    for k in TrainConfig::KEYS {
        keys.push(k.to_string());
        keys.push(format!("pretrain.{k}"));
        keys.push(format!("finetune.{k}"));
    }
    keys.sort();
    keys.dedup();
    keys
}

pub fn parse_providers(s: &str) -> Result<Vec<Regularizer>> {
    let mut out = Vec::new();
    for name in s.split(',').map(str::trim).filter(|n| !n.is_empty()) {
        let r: Regularizer = name.parse()?;
        if !out.contains(&r) {
            out.push(r);
        }
    }
    if out.is_empty() {
        return Err(Error::Config("provider list is empty".into()));
    }
    Ok(out)
}

impl PipelineConfig {
    /// Reads overrides from `kv`. `seed` seeds the data and both stages;
    /// stage-prefixed keys are applied last.
    pub fn apply(&mut self, kv: &KvConfig) -> Result<()> {
        let known = known_keys();
        let known: Vec<&str> = known.iter().map(String::as_str).collect();
        kv.check_known(&known)?;
        self.scenario.apply(kv)?;
        self.pretrain.apply(kv, "")?;
        self.finetune.apply(kv, "")?;
        self.pretrain.apply(kv, "pretrain.")?;
        self.finetune.apply(kv, "finetune.")?;
        if let Some(p) = kv.get_raw("providers") {
            self.providers = parse_providers(p)?;
        }
        if let Some(v) = kv.get_bool("gba")? {
            self.gba = v;
        }
        if let Some(v) = kv.get("k")? {
            self.k = v;
        }
        if let Some(v) = kv.get("lambda")? {
            self.lambda = v;
        }
        if let Some(v) = kv.get("metric_bins")? {
            self.metric_bins = v;
        }
        if let Some(v) = kv.get("diagram_bins")? {
            self.diagram_bins = v;
        }
        if let Some(v) = kv.get_bool("sav")? {
            self.sav = v;
        }
        let mut cons = self.consistency.unwrap_or_default();
        let mut use_cons = self.consistency.is_some();
        if let Some(v) = kv.get_bool("consistency")? {
            use_cons = v;
        }
        if let Some(v) = kv.get("consistency_weight")? {
            cons.weight = v;
        }
        if let Some(v) = kv.get("consistency_sigma")? {
            cons.sigma = v;
        }
        self.consistency = use_cons.then_some(cons);
        if let Some(v) = kv.get_bool("sweep_c")? {
            self.sweep_c = v;
        }
        Ok(())
    }

    /// Fully resolved settings, suitable for replaying the run.
    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        self.scenario.to_kv(&mut kv);
        self.pretrain.to_kv("pretrain.", &mut kv);
        self.finetune.to_kv("finetune.", &mut kv);
        let names: Vec<&str> = self.providers.iter().map(|r| r.as_str()).collect();
        kv.set("providers", names.join(","));
        kv.set("gba", self.gba);
        kv.set("k", self.k);
        kv.set("lambda", self.lambda);
        kv.set("metric_bins", self.metric_bins);
        kv.set("diagram_bins", self.diagram_bins);
        kv.set("sav", self.sav);
        kv.set("consistency", self.consistency.is_some());
        let cons = self.consistency.unwrap_or_default();
        kv.set("consistency_weight", cons.weight);
        kv.set("consistency_sigma", cons.sigma);
        kv.set("sweep_c", self.sweep_c);
        kv
    }

    pub fn validate(&self) -> Result<()> {
        self.pretrain.validate()?;
        self.finetune.validate()?;
        if self.metric_bins == 0 || self.diagram_bins == 0 {
            return Err(Error::Config("bin counts must be positive".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config("lambda must be non-negative".into()));
        }
        Ok(())
    }
}

/// A named per-sample confidence vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Provider {
    pub name: String,
    pub scc: Vec<f64>,
}

/// Scores each provider on the verification set.
pub fn evaluate_providers(
    providers: &[Provider],
    verification: &VerificationSet,
    m: usize,
) -> Result<Vec<(String, CalibrationReport)>> {
    let v = verification.targets();
    providers
        .iter()
        .map(|p| Ok((p.name.clone(), calibration_report(&v, &verification.gather(&p.scc)?, m)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub metrics: Vec<ProviderMetrics>,
    /// Clean-test accuracy of each stage-one model.
    pub stage_one: Vec<(String, Accuracy)>,
    pub finetuned: Accuracy,
    pub consistency: Option<Accuracy>,
    pub sweep: Vec<(f64, Accuracy)>,
    /// Spearman trend of the vanilla reliability diagram.
    pub vanilla_trend: Option<f64>,
}

impl PipelineReport {
    pub fn is_finite(&self) -> bool {
        let acc_ok = |a: &Accuracy| a.top1.is_finite() && a.top5.is_finite();
        self.metrics.iter().all(ProviderMetrics::is_finite)
            && self.stage_one.iter().all(|(_, a)| acc_ok(a))
            && acc_ok(&self.finetuned)
            && self.consistency.as_ref().is_none_or(acc_ok)
            && self.sweep.iter().all(|(_, a)| acc_ok(a))
    }
}

pub fn write_accuracy_csv(rows: &[(String, Accuracy)], path: &Path) -> Result<()> {
    let mut out = String::from("model,top1,top5\n");
    for (name, a) in rows {
        out.push_str(&format!("{name},{},{}\n", fmt_f64(a.top1), fmt_f64(a.top5)));
    }
    util::write_atomic(path, &out)
}

pub fn write_sweep_csv(rows: &[(f64, Accuracy)], path: &Path) -> Result<()> {
    let mut out = String::from("c,top1,top5\n");
    for (c, a) in rows {
        out.push_str(&format!("{c:.1},{},{}\n", fmt_f64(a.top1), fmt_f64(a.top5)));
    }
    util::write_atomic(path, &out)
}

/// `c = 0.0, 0.1, ..., 1.0`.
pub fn sweep_values() -> Vec<f64> {
    (0..=10).map(|i| f64::from(i) / 10.0).collect()
}

/// Finetunes with every constant confidence of [`sweep_values`].
pub fn constant_sweep(
    ds: &SyntheticDataset,
    artifacts: &StageOneArtifacts,
    config: &TrainConfig,
    test: &SyntheticDataset,
) -> Result<Vec<(f64, Accuracy)>> {
    sweep_values()
        .into_iter()
        .map(|c| {
            let (m, _) = finetune_constant(ds, artifacts, c, config, None)?;
            Ok((c, accuracy(&m, test)?))
        })
        .collect()
}

fn provider_dir(out: &Path, r: Regularizer) -> std::path::PathBuf {
    out.join("providers").join(r.as_str())
}

/// Runs the whole pipeline and writes every output under `out`:
///
/// - `data/`: train, test and verification CSVs
/// - `providers/<name>/`: stage-one checkpoint, log and artifacts
/// - `finetune.ckpt`, `finetune_log.csv`
/// - `metrics.csv`, `reliability_<provider>.csv`, `accuracy.csv`
/// - `constant_sweep.csv` when sweeping
pub fn run_pipeline(config: &PipelineConfig, out: &Path) -> Result<PipelineReport> {
    config.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let splits = config.scenario.generate()?;
    let data_dir = out.join("data");
    std::fs::create_dir_all(&data_dir).map_err(|e| Error::io(&data_dir, e))?;
    splits.save(&data_dir)?;
    let Splits {
        train,
        test,
        verification,
    } = &splits;

    let mut regs = vec![Regularizer::Vanilla];
    regs.extend(config.providers.iter().copied().filter(|r| *r != Regularizer::Vanilla));

    let mut providers: Vec<Provider> = Vec::new();
    let mut stage_one = Vec::new();
    let mut vanilla: Option<StageOneArtifacts> = None;
    let mut smoothed: Option<StageOneArtifacts> = None;
    for r in regs {
        let cfg = config.pretrain.clone().with_regularizer(r);
        let (model, log) = pretrain(train, &cfg, Some(test))?;
        let dir = provider_dir(out, r);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        model.save(&dir.join("pretrain.ckpt"))?;
        save_log(&log, &dir.join("pretrain_log.csv"))?;
        stage_one.push((r.to_string(), accuracy(&model, test)?));
        let artifacts = extract(train, &model, &cfg)?;
        artifacts.save(&dir, "")?;
        if config.providers.contains(&r) {
            providers.push(Provider {
                name: r.to_string(),
                scc: artifacts.scc.clone(),
            });
        }
        if r == Regularizer::Vanilla {
            if config.gba {
                let (s, g) =
                    graph::smooth_artifacts_with_graph(&artifacts, &train.web_labels(), config.k, config.lambda)?;
                s.save(&dir, GBA_SUFFIX)?;
                g.write_edges(&dir.join("graph.csv"))?;
                providers.push(Provider {
                    name: format!("{r}{GBA_SUFFIX}"),
                    scc: s.scc.clone(),
                });
                smoothed = Some(s);
            }
            vanilla = Some(artifacts);
        }
    }
    let vanilla = vanilla.expect("vanilla is always trained");

    let mut metrics = Vec::new();
    let mut vanilla_trend = None;
    for p in &providers {
        let v = verification.targets();
        let c = verification.gather(&p.scc)?;
        let report = calibration_report(&v, &c, config.metric_bins)?;
        let diagram = calibration_report(&v, &c, config.diagram_bins)?;
        emit_reliability_csv(&diagram, &out.join(format!("reliability_{}.csv", p.name)))?;
        if p.name == Regularizer::Vanilla.as_str() {
            vanilla_trend = calib::reliability_trend(&diagram);
        }
        let sav = if config.sav {
            Some(sav_harness(train, &vanilla, &p.scc, &config.finetune, test)?.top1)
        } else {
            None
        };
        metrics.push(ProviderMetrics::from_report(&p.name, &report, sav));
    }
    write_metrics_summary(&metrics, &out.join("metrics.csv"))?;

    let source = smoothed.as_ref().unwrap_or(&vanilla);
    let (model, log) = finetune(train, source, &config.finetune, Some(test))?;
    crate::netcore::Checkpoint {
        regularizer: config.finetune.regularizer.to_string(),
        members: vec![model.clone()],
    }
    .save(&out.join("finetune.ckpt"))?;
    save_log(&log, &out.join("finetune_log.csv"))?;
    let finetuned = accuracy(&model, test)?;

    let mut acc_rows = stage_one.iter().map(|(n, a)| (format!("stage_one_{n}"), *a)).collect::<Vec<_>>();
    acc_rows.push(("finetune".into(), finetuned));
    let consistency = match config.consistency {
        Some(cc) => {
            let (m, log) = train_consistency_baseline(train, &config.pretrain, cc, Some(test))?;
            save_log(&log, &out.join("consistency_log.csv"))?;
            let a = accuracy(&m, test)?;
            acc_rows.push(("consistency".into(), a));
            Some(a)
        }
        None => None,
    };
    write_accuracy_csv(&acc_rows, &out.join("accuracy.csv"))?;

    let sweep = if config.sweep_c {
        let rows = constant_sweep(train, source, &config.finetune, test)?;
        write_sweep_csv(&rows, &out.join("constant_sweep.csv"))?;
        rows
    } else {
        Vec::new()
    };

    Ok(PipelineReport {
        metrics,
        stage_one,
        finetuned,
        consistency,
        sweep,
        vanilla_trend,
    })
}
