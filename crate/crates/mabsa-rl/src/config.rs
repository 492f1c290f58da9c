//! Run configuration: a single TOML file with defaults for every field,
//! CLI-flag overrides on top, and a manifest written into each run
//! directory before execution.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{ModelConfig, Profile};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::trainer::{CloneConfig, EvalState, RLConfig};

/// Where event decompositions come from at train/eval time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecompositionSource {
    /// Call the configured LLM endpoint (cache-backed).
    Llm,
    /// Read a precomputed cache file; missing entries are errors.
    Cache,
    /// Deterministic offline sentence splitting.
    Fallback,
}

/// The three harness configurations reported by the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
#[clap(rename_all = "lowercase")]
pub enum Ablation {
    /// Plain supervised agent: no event augmentation, no RL.
    Agent,
    /// Event-augmented supervised training, no RL.
    Events,
    /// Event-augmented supervised training followed by REINFORCE.
    Rl,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::Agent, Ablation::Events, Ablation::Rl];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Agent => "agent",
            Ablation::Events => "events",
            Ablation::Rl => "rl",
        }
    }

    /// Restrict the config to this configuration's documented flags.
    pub fn apply(self, cfg: &mut RunConfig) {
        match self {
            Ablation::Agent => {
                cfg.clone.events_enabled = false;
                cfg.rl_enabled = false;
            }
            Ablation::Events => {
                cfg.clone.events_enabled = true;
                cfg.rl_enabled = false;
            }
            Ablation::Rl => {
                cfg.clone.events_enabled = true;
                cfg.rl_enabled = true;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Directory holding the normalized JSONL splits and images.
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub profile: Profile,
    pub decomposition: DecompositionSource,
    /// Decomposition cache file (defaults to `<data_dir>/decompositions.jsonl`).
    pub cache_path: Option<PathBuf>,
    pub seed: u64,
    /// Whether the reinforcement phase runs after clone learning.
    pub rl_enabled: bool,
    /// Explicit model section; when absent the profile's defaults are used.
    pub model: Option<ModelConfig>,
    pub clone: CloneConfig,
    pub rl: RLConfig,
    pub env: EnvConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: PathBuf::from("data/synthetic"),
            out_dir: PathBuf::from("runs/latest"),
            profile: Profile::Toy,
            decomposition: DecompositionSource::Fallback,
            cache_path: None,
            seed: 42,
            rl_enabled: true,
            model: None,
            clone: CloneConfig::default(),
            rl: RLConfig::default(),
            env: EnvConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// The model architecture implied by the profile plus any explicit
    /// `[model]` section.
    pub fn resolved_model(&self) -> ModelConfig {
        match &self.model {
            Some(m) => m.clone(),
            None => match self.profile {
                Profile::Toy => ModelConfig::toy(),
                Profile::Paper => ModelConfig::paper(),
            },
        }
    }

    /// Freeze the profile-derived model into the config (for manifests and
    /// config diffs).
    pub fn resolve(&self) -> RunConfig {
        let mut out = self.clone();
        out.model = Some(self.resolved_model());
        out
    }

    pub fn cache_path(&self) -> PathBuf {
        self.cache_path
            .clone()
            .unwrap_or_else(|| self.data_dir.join("decompositions.jsonl"))
    }

    /// Inference reads predictions from the final event-augmented state when
    /// events are enabled, otherwise from the raw text.
    pub fn eval_state(&self) -> EvalState {
        if self.clone.events_enabled {
            EvalState::Final
        } else {
            EvalState::Original
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// CLI-flag overrides; every field wins over the config file when set.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub profile: Option<Profile>,
    pub ablation: Option<Ablation>,
    pub fallback: bool,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(d) = &self.data_dir {
            cfg.data_dir = d.clone();
        }
        if let Some(d) = &self.out_dir {
            cfg.out_dir = d.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(p) = self.profile {
            cfg.profile = p;
            cfg.model = None;
        }
        if self.fallback {
            cfg.decomposition = DecompositionSource::Fallback;
        }
        if let Some(a) = self.ablation {
            a.apply(cfg);
        }
    }
}

/// Manifest describing one run directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    /// Fully resolved configuration, model section included.
    pub config: RunConfig,
    pub seed: u64,
    pub cache_sha256: Option<String>,
    pub checkpoints: Vec<PathBuf>,
    pub created_unix: u64,
}

pub const MANIFEST_FILE: &str = "run.json";

impl RunManifest {
    pub fn new(config: &RunConfig, cache_sha256: Option<String>) -> RunManifest {
        RunManifest {
            config: config.resolve(),
            seed: config.seed,
            cache_sha256,
            checkpoints: Vec::new(),
            created_unix: std::time::SystemTime::now()
                .duration_since(std::time::SystemTime::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    /// Write (or rewrite) the manifest in the run directory.
    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let path = out_dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Dotted paths of every leaf field on which two configs differ.
pub fn config_diff(a: &RunConfig, b: &RunConfig) -> Vec<String> {
    let va = serde_json::to_value(a.resolve()).expect("config serializes");
    let vb = serde_json::to_value(b.resolve()).expect("config serializes");
    let mut out = Vec::new();
    walk_diff("", &va, &vb, &mut out);
    out.sort();
    out
}

fn walk_diff(prefix: &str, a: &serde_json::Value, b: &serde_json::Value, out: &mut Vec<String>) {
    use serde_json::Value;
    match (a, b) {
        (Value::Object(ma), Value::Object(mb)) => {
            let keys: BTreeSet<&String> = ma.keys().chain(mb.keys()).collect();
            for key in keys {
                let path = if prefix.is_empty() {
                    key.clone()
                } else {
                    format!("{prefix}.{key}")
                };
                let null = Value::Null;
                walk_diff(
                    &path,
                    ma.get(key).unwrap_or(&null),
                    mb.get(key).unwrap_or(&null),
                    out,
                );
            }
        }
        _ => {
            if a != b {
                out.push(prefix.to_string());
            }
        }
    }
}
