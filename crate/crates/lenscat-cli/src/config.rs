//! Experiment configuration: CLI flags resolved into a serializable record.
//!
//! The config round-trips through JSON and carries everything that can
//! influence results; its hash is embedded in CSV headers so fixtures can
//! be traced back to the exact run. Worker count and output destination
//! are excluded from the hash; they must never change the bytes produced.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Scatter,
    Sojourn,
    Compare,
    Check,
    Pullback,
}

impl std::fmt::Display for CommandKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            CommandKind::Scatter => "scatter",
            CommandKind::Sojourn => "sojourn",
            CommandKind::Compare => "compare",
            CommandKind::Check => "check",
            CommandKind::Pullback => "pullback",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub command: CommandKind,
    pub metric: String,
    #[serde(default)]
    pub metric2: Option<String>,
    #[serde(default)]
    pub diffeo: Option<String>,
    #[serde(default)]
    pub f: Option<String>,
    pub rays: usize,
    pub seed: u64,
    pub tol: f64,
    /// Truncation parameter for the sojourn limit; `None` means `1e4 x R`.
    #[serde(default)]
    pub s_max: Option<f64>,
    /// Arc-length budget; `None` means `50 x R`.
    #[serde(default)]
    pub l_max: Option<f64>,
    /// 0 = library default thread count.
    pub workers: usize,
    #[serde(default)]
    pub out: Option<String>,
    pub format: OutputFormat,
    pub strict: bool,
    /// Tabulation grid for `pullback` (time and per-axis space nodes).
    pub grid_time: usize,
    pub grid_space: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.rays < 1 {
            return Err("--rays must be at least 1".into());
        }
        if !(self.tol > 0.0) {
            return Err("--tol must be positive".into());
        }
        if let Some(s) = self.s_max {
            if !(s > 0.0) {
                return Err("--smax must be positive".into());
            }
        }
        if let Some(l) = self.l_max {
            if !(l > 0.0) {
                return Err("--lmax must be positive".into());
            }
        }
        if self.grid_time < 4 || self.grid_space < 4 {
            return Err("--grid-time and --grid-space must be at least 4".into());
        }
        match self.command {
            CommandKind::Compare => {
                if self.metric2.is_none() && self.diffeo.is_none() {
                    return Err("compare needs --metric2 or --diffeo".into());
                }
            }
            CommandKind::Pullback if self.diffeo.is_none() => {
                return Err("pullback needs --diffeo".into());
            }
            _ => {}
        }
        Ok(())
    }

    /// Hash over the result-relevant fields (everything except `out` and
    /// `workers`).
    pub fn result_hash(&self) -> String {
        let mut hashed = self.clone();
        hashed.out = None;
        hashed.workers = 0;
        let canonical =
            serde_json::to_string(&hashed).expect("config serializes to JSON");
        let digest = Sha256::digest(canonical.as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        hex[..16].to_string()
    }
}
