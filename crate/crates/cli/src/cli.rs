use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use scc_core::config::KvConfig;

#[derive(Debug, Parser)]
#[command(name = "scc-lab", version, about = "Two-stage learning from noisy web labels with self-contained confidence")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a noisy training split, a clean test split and a verification subset.
    Generate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        scenario: ScenarioFlags,
    },
    /// Train stage-one model(s) on the web labels.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlag,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Read self labels, confidences and features off a stage-one checkpoint.
    Extract {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlag,
        /// Stage-one checkpoint written by `pretrain`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        gba: GbaFlags,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Finetune from stage-one artifacts with per-sample or constant confidence.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlag,
        /// Artifacts directory written by `extract`.
        #[arg(long)]
        artifacts: Option<PathBuf>,
        /// Use the smoothed (`_gba`) artifacts.
        #[arg(long)]
        gba: bool,
        /// Use the same confidence for every sample.
        #[arg(long, value_name = "C")]
        constant_c: Option<f64>,
        /// Also finetune with c = 0.0, 0.1, ..., 1.0 and write `constant_sweep.csv`.
        #[arg(long)]
        sweep_c: bool,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Score confidence providers against the verification set.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlag,
        /// A provider as `NAME=PATH` to an `id,c` file; repeatable.
        #[arg(long = "scc", value_name = "NAME=PATH")]
        scc: Vec<String>,
        /// An artifacts directory; adds its `scc.csv` and, when present, `scc_gba.csv`.
        #[arg(long = "artifacts", value_name = "DIR")]
        artifacts: Vec<PathBuf>,
        /// Vanilla artifacts to finetune from for second-stage accuracy scores.
        #[arg(long, value_name = "DIR")]
        sav_artifacts: Option<PathBuf>,
        #[command(flatten)]
        bins: BinFlags,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Generate, pretrain, extract, optionally smooth, finetune and evaluate.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        scenario: ScenarioFlags,
        #[command(flatten)]
        train: TrainFlags,
        #[command(flatten)]
        gba: GbaFlags,
        #[command(flatten)]
        bins: BinFlags,
        /// Comma-separated stage-one regularizers to score.
        #[arg(long)]
        providers: Option<String>,
        /// Skip the per-provider second-stage accuracy runs.
        #[arg(long)]
        no_sav: bool,
        /// Also train the single-stage consistency baseline.
        #[arg(long)]
        consistency: bool,
        #[arg(long)]
        sweep_c: bool,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// `key = value` file; flags override its values.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Any config key as `KEY=VALUE`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct DataFlag {
    /// Directory holding `train.csv`, `test.csv` and `verification.csv`.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScenarioFlags {
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub spread: Option<f64>,
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    /// uniform, class-conditional or neighborhood.
    #[arg(long)]
    pub noise_model: Option<String>,
    #[arg(long)]
    pub test_per_class: Option<usize>,
    #[arg(long)]
    pub verify_per_class: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    /// vanilla, label-smoothing, entropy, mc-dropout, mixup or ensemble.
    #[arg(long)]
    pub reg: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub mixup_alpha: Option<f64>,
    #[arg(long)]
    pub ensemble_size: Option<usize>,
    #[arg(long)]
    pub dropout_rate: Option<f64>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub mc_samples: Option<usize>,
    #[arg(long)]
    pub no_class_reweighting: bool,
}

#[derive(Debug, Args)]
pub struct GbaFlags {
    /// Smooth self labels over a k-NN graph of the stage-one features.
    #[arg(long)]
    pub gba: bool,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BinFlags {
    /// Bins for the scalar metrics.
    #[arg(long)]
    pub bins: Option<usize>,
    /// Bins for the reliability CSVs.
    #[arg(long)]
    pub diagram_bins: Option<usize>,
}

fn put<T: ToString>(kv: &mut KvConfig, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        kv.set(key, v.to_string());
    }
}

impl Common {
    pub fn to_kv(&self, kv: &mut KvConfig) -> anyhow::Result<()> {
        for pair in &self.set {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| anyhow::anyhow!("--set expects KEY=VALUE, got {pair:?}"))?;
            kv.set(k.trim(), v.trim());
        }
        put(kv, "seed", &self.seed);
        put(kv, "out", &self.out.as_ref().map(|p| p.display().to_string()));
        Ok(())
    }
}

impl DataFlag {
    pub fn to_kv(&self, kv: &mut KvConfig) {
        put(kv, "data", &self.data.as_ref().map(|p| p.display().to_string()));
    }
}

impl ScenarioFlags {
    pub fn to_kv(&self, kv: &mut KvConfig) {
        put(kv, "classes", &self.classes);
        put(kv, "per_class", &self.per_class);
        put(kv, "dim", &self.dim);
        put(kv, "spread", &self.spread);
        put(kv, "separation", &self.separation);
        put(kv, "noise", &self.noise);
        put(kv, "noise_model", &self.noise_model);
        put(kv, "test_per_class", &self.test_per_class);
        put(kv, "verify_per_class", &self.verify_per_class);
    }
}

impl TrainFlags {
    /// Bare training keys, which reach every stage the command runs.
    pub fn to_kv(&self, kv: &mut KvConfig) {
        put(kv, "regularizer", &self.reg);
        put(kv, "epochs", &self.epochs);
        put(kv, "batch_size", &self.batch_size);
        put(kv, "initial_lr", &self.lr);
        put(kv, "warmup_epochs", &self.warmup_epochs);
        put(kv, "momentum", &self.momentum);
        put(kv, "weight_decay", &self.weight_decay);
        put(kv, "mixup_alpha", &self.mixup_alpha);
        put(kv, "ensemble_size", &self.ensemble_size);
        put(kv, "dropout_rate", &self.dropout_rate);
        put(kv, "hidden_dim", &self.hidden_dim);
        put(kv, "mc_samples", &self.mc_samples);
        if self.no_class_reweighting {
            kv.set("class_reweighting", false);
        }
    }
}

impl GbaFlags {
    pub fn to_kv(&self, kv: &mut KvConfig) {
        if self.gba {
            kv.set("gba", true);
        }
        put(kv, "k", &self.k);
        put(kv, "lambda", &self.lambda);
    }
}

impl BinFlags {
    pub fn to_kv(&self, kv: &mut KvConfig) {
        put(kv, "metric_bins", &self.bins);
        put(kv, "diagram_bins", &self.diagram_bins);
    }
}
