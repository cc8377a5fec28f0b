use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use ragaxai::model::{Hyperparams, Readout, Variant};
use ragaxai::xai_slime::SlimeConfig;

/// Everything a run depends on. Loaded from `--config` and then
/// overridden by command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub variant: Variant,
    pub readout: Readout,
    pub hyperparams: Hyperparams,
    pub slime: SlimeConfig,
    pub seed: u64,
    /// Worker threads for extract and explain; 0 uses every CPU.
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            cache_dir: None,
            checkpoint: None,
            annotations: None,
            out_dir: PathBuf::from("out"),
            variant: Variant::Cn2LstmT,
            readout: Readout::Mean,
            hyperparams: Hyperparams::default(),
            slime: SlimeConfig::default(),
            seed: 0,
            jobs: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Propagate the global seed into every seeded component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.hyperparams.seed = seed;
        self.slime.seed = seed;
        self
    }

    pub fn jobs(&self) -> usize {
        if self.jobs > 0 {
            self.jobs
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    }

    pub fn require<'a>(&self, field: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
        field
            .as_deref()
            .with_context(|| format!("missing {flag} (flag or config field)"))
    }

    /// One-line provenance record for text and CSV outputs.
    pub fn header(&self) -> String {
        format!(
            "# ragaxai {} seed={} config={}",
            env!("CARGO_PKG_VERSION"),
            self.seed,
            serde_json::to_string(self).expect("config serializes")
        )
    }

    /// Provenance record embedded in JSON outputs.
    pub fn provenance(&self) -> serde_json::Value {
        serde_json::json!({
            "version": env!("CARGO_PKG_VERSION"),
            "seed": self.seed,
            "config": self,
        })
    }
}
