use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rectlab::analysis::AnalysisConfig;
use rectlab::measure::{generate, DiscreteMeasure, GenSpec};
use rectlab::stopping::{ConstructConfig, StopParams};
use rectlab::transport::TransportConfig;

use crate::CliError;

/// Where the measure comes from: a file in the `x y w` format or a generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum MeasureSource {
    File(PathBuf),
    Generate(GenSpec),
}

impl MeasureSource {
    /// Relative file paths resolve against `base`.
    pub fn load(&self, base: &Path) -> Result<DiscreteMeasure, CliError> {
        match self {
            MeasureSource::File(p) => read_measure(&base.join(p)),
            MeasureSource::Generate(spec) => generate(spec).map_err(|e| CliError::input(format!("measure generator: {e}"))),
        }
    }
}

pub fn read_measure(path: &Path) -> Result<DiscreteMeasure, CliError> {
    let f = std::fs::File::open(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    DiscreteMeasure::read_from(std::io::BufReader::new(f)).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// One experiment. Every block except `measure` may be omitted; missing keys take their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub measure: MeasureSource,
    /// Odd kernel order, copied into `stop.k` and `analysis.k`.
    #[serde(default = "default_k")]
    pub k: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub stop: StopParams,
    #[serde(default)]
    pub construct: ConstructConfig,
    #[serde(default)]
    pub transport: TransportConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

fn default_k() -> u32 {
    3
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::input(format!("config: {e}")))?;
        cfg.stop.k = cfg.k;
        cfg.analysis.k = cfg.k;
        cfg.stop.validate().map_err(|e| CliError::input(format!("config [stop]: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// SHA-256 of the canonical serialization, so formatting and key order do not matter.
    pub fn hash(&self) -> String {
        let canon = toml::to_string(self).expect("config serializes");
        hex(&Sha256::digest(canon.as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
