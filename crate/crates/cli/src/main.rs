//! `scc-lab`: generate data, train both stages and score confidences.

mod cli;
mod commands;
mod manifest;

use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Parser;
use scc_core::config::KvConfig;

use cli::{Cli, Command, Common};
use commands::Outcome;
use manifest::RunManifest;

const THREADS_VAR: &str = "SCC_LAB_THREADS";

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .with_context(|| format!("{THREADS_VAR} must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

/// Config file values first, then command-line flags on top.
fn resolve(common: &Common, flags: impl FnOnce(&mut KvConfig)) -> Result<KvConfig> {
    let mut kv = match &common.config {
        Some(path) => KvConfig::load(path)?.settings(),
        None => KvConfig::new(),
    };
    let mut overrides = KvConfig::new();
    common.to_kv(&mut overrides)?;
    flags(&mut overrides);
    kv.merge(&overrides);
    Ok(kv)
}

fn dispatch(command: &Command) -> Result<(&'static str, Outcome)> {
    Ok(match command {
        Command::Generate { common, scenario } => {
            let kv = resolve(common, |kv| scenario.to_kv(kv))?;
            ("generate", commands::cmd_generate(&kv)?)
        }
        Command::Pretrain { common, data, train } => {
            let kv = resolve(common, |kv| {
                data.to_kv(kv);
                train.to_kv(kv);
            })?;
            ("pretrain", commands::cmd_pretrain(&kv)?)
        }
        Command::Extract {
            common,
            data,
            checkpoint,
            gba,
            train,
        } => {
            let kv = resolve(common, |kv| {
                data.to_kv(kv);
                if let Some(p) = checkpoint {
                    kv.set("checkpoint", p.display());
                }
                gba.to_kv(kv);
                train.to_kv(kv);
            })?;
            ("extract", commands::cmd_extract(&kv)?)
        }
        Command::Finetune {
            common,
            data,
            artifacts,
            gba,
            constant_c,
            sweep_c,
            train,
        } => {
            let kv = resolve(common, |kv| {
                data.to_kv(kv);
                if let Some(p) = artifacts {
                    kv.set("artifacts", p.display());
                }
                if *gba {
                    kv.set("gba", true);
                }
                if let Some(c) = constant_c {
                    kv.set("constant_c", c);
                }
                if *sweep_c {
                    kv.set("sweep_c", true);
                }
                train.to_kv(kv);
            })?;
            ("finetune", commands::cmd_finetune(&kv)?)
        }
        Command::Evaluate {
            common,
            data,
            scc,
            artifacts,
            sav_artifacts,
            bins,
            train,
        } => {
            let kv = resolve(common, |kv| {
                data.to_kv(kv);
                if !scc.is_empty() {
                    kv.set("scc", scc.join(","));
                }
                if !artifacts.is_empty() {
                    let dirs: Vec<String> = artifacts.iter().map(|p| p.display().to_string()).collect();
                    kv.set("artifacts", dirs.join(","));
                }
                if let Some(p) = sav_artifacts {
                    kv.set("sav_artifacts", p.display());
                }
                bins.to_kv(kv);
                train.to_kv(kv);
            })?;
            ("evaluate", commands::cmd_evaluate(&kv)?)
        }
        Command::Pipeline {
            common,
            scenario,
            train,
            gba,
            bins,
            providers,
            no_sav,
            consistency,
            sweep_c,
        } => {
            let kv = resolve(common, |kv| {
                scenario.to_kv(kv);
                train.to_kv(kv);
                gba.to_kv(kv);
                bins.to_kv(kv);
                if let Some(p) = providers {
                    kv.set("providers", p);
                }
                if *no_sav {
                    kv.set("sav", false);
                }
                if *consistency {
                    kv.set("consistency", true);
                }
                if *sweep_c {
                    kv.set("sweep_c", true);
                }
            })?;
            ("pipeline", commands::cmd_pipeline(&kv)?)
        }
    })
}

fn run(cli: &Cli) -> Result<()> {
    init_threads()?;
    let started = Instant::now();
    let (name, outcome) = dispatch(&cli.command)?;
    if !outcome.finite {
        bail!("{name} produced non-finite values; no manifest written");
    }
    RunManifest {
        command: name.to_string(),
        config: outcome.config,
        inputs: outcome.inputs,
        outputs: outcome.outputs,
        seed: outcome.seed,
        duration: started.elapsed(),
    }
    .write(&outcome.out_dir)?;
    Ok(())
}

fn one_line(msg: &str) -> String {
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.render().to_string();
            let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            eprintln!("scc-lab: {}", one_line(first.trim_start_matches("error: ")));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("scc-lab: {}", one_line(&format!("{e:#}")));
            ExitCode::FAILURE
        }
    }
}
