use std::path::{Path, PathBuf};
use std::time::Duration;

use scc_core::config::KvConfig;
use scc_core::util::write_atomic;

pub const MANIFEST_FILE: &str = "manifest.txt";

/// Record of one finished command. Its text form is itself a config file:
/// metadata lives under `manifest.*` keys, which config loading ignores, so
/// `--config manifest.txt` replays the run.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub command: String,
    pub config: KvConfig,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: u64,
    pub duration: Duration,
}

fn join(paths: &[PathBuf]) -> String {
    paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",")
}

impl RunManifest {
    pub fn to_kv(&self) -> KvConfig {
        let mut kv = self.config.settings();
        kv.set("manifest.command", &self.command);
        kv.set("manifest.version", env!("CARGO_PKG_VERSION"));
        kv.set("manifest.seed", self.seed);
        kv.set("manifest.duration_secs", format!("{:.3}", self.duration.as_secs_f64()));
        kv.set("manifest.inputs", join(&self.inputs));
        kv.set("manifest.outputs", join(&self.outputs));
        kv
    }

    pub fn write(&self, dir: &Path) -> scc_core::Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        write_atomic(&path, &self.to_kv().to_text())?;
        Ok(path)
    }
}
