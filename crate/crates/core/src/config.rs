//! The declarative run configuration read by the command-line tool.
//!
//! A single TOML document carries every stage's settings:
//!
//! ```toml
//! schema_version = 1
//! seeds = [0, 1, 2]
//!
//! [output]
//! dir = "runs/default"
//!
//! [encoder]
//! dim = 16
//! steps = 4000
//!
//! [[ablations]]
//! collapse = "centralize"
//! train_modality = "visual"
//! noise = { kind = "cosine", alpha = 0.2 }
//! ```
//!
//! Unknown keys are rejected and the whole document is validated before any
//! stage runs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::experiment::{
    default_ablations, Ablation, BenchConfig, CollapseKind, EncoderConfig, EvalSection, GridConfig,
};
use crate::bench::policy::PolicyConfig;
use crate::corrupt::{Noise, DEFAULT_ALPHA};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("modgap-out"),
        }
    }
}

/// Defaults for the `collapse` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollapseConfig {
    pub kind: CollapseKind,
    pub k: usize,
}

impl Default for CollapseConfig {
    fn default() -> Self {
        Self {
            kind: CollapseKind::Centralize,
            k: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Cosine,
    Gaussian,
}

/// Defaults for the `corrupt` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorruptSection {
    pub kind: NoiseKind,
    pub alpha: f64,
    pub std: f64,
    pub seed: u64,
}

impl Default for CorruptSection {
    fn default() -> Self {
        Self {
            kind: NoiseKind::Cosine,
            alpha: DEFAULT_ALPHA,
            std: 0.1,
            seed: 0,
        }
    }
}

impl CorruptSection {
    pub fn noise(&self) -> Noise {
        match self.kind {
            NoiseKind::Cosine => Noise::Cosine { alpha: self.alpha },
            NoiseKind::Gaussian => Noise::Gaussian { std: self.std },
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Seed for standalone encoder training.
    #[serde(default)]
    pub seed: u64,
    /// Seeds of the transfer benchmark.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default = "default_ablations")]
    pub ablations: Vec<Ablation>,
    #[serde(default)]
    pub collapse: CollapseConfig,
    #[serde(default)]
    pub corrupt: CorruptSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let b = BenchConfig::default();
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            seeds: b.seeds,
            threads: b.threads,
            output: OutputConfig::default(),
            grid: b.grid,
            encoder: b.encoder,
            policy: b.policy,
            eval: b.eval,
            ablations: b.ablations,
            collapse: CollapseConfig::default(),
            corrupt: CorruptSection::default(),
        }
    }
}

impl RunConfig {
    /// Parses and validates.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn bench(&self) -> BenchConfig {
        BenchConfig {
            seeds: self.seeds.clone(),
            threads: self.threads,
            grid: self.grid.clone(),
            encoder: self.encoder.clone(),
            policy: self.policy.clone(),
            eval: self.eval.clone(),
            ablations: self.ablations.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.bench().validate()?;
        if self.collapse.kind == CollapseKind::Delete && self.collapse.k < 1 {
            return Err(Error::Config("collapse.k must be at least 1".into()));
        }
        self.corrupt
            .noise()
            .validate()
            .map_err(|e| Error::Config(format!("corrupt: {e}")))
    }
}
