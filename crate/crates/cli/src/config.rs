//! Layered configuration: command-line flag, then config file, then
//! built-in default.

use std::fs;
use std::path::{Path, PathBuf};

use ale_core::{BackendKind, EditConfig, EditType, EosStrategy};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const CONFIG_ENV: &str = "ALE_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    #[default]
    Mock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    #[default]
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub backend: BackendKind,
    pub encoder: EncoderKind,
    pub scorer: ScorerKind,
    pub segmenter_endpoint: Option<String>,
    pub masks: Option<PathBuf>,
    pub out: PathBuf,
    pub edit: EditConfig,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::default(),
            encoder: EncoderKind::default(),
            scorer: ScorerKind::default(),
            segmenter_endpoint: None,
            masks: None,
            out: PathBuf::from("ale-out"),
            edit: EditConfig::default(),
        }
    }
}

/// Values given on the command line; `None` defers to the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub backend: Option<BackendKind>,
    pub segmenter_endpoint: Option<String>,
    pub masks: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub steps: Option<usize>,
    pub schedule: Option<f64>,
    pub edit_type: Option<EditType>,
    pub eos_strategy: Option<EosStrategy>,
    pub dilation: Option<f64>,
    pub seed: Option<u64>,
    pub debug: bool,
}

impl CliConfig {
    /// Reads a TOML config. A JSON file is also accepted, either as a bare
    /// config or as an edit sidecar, whose recorded config is used.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let bad = |e: &dyn std::fmt::Display| CliError::Validation(format!("invalid config {}: {e}", path.display()));
        if path.extension().and_then(|e| e.to_str()) == Some("json") {
            let mut value: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(&e))?;
            if let Some(recorded) = value.get_mut("config").map(serde_json::Value::take) {
                value = recorded;
            }
            serde_json::from_value(value).map_err(|e| bad(&e))
        } else {
            toml::from_str(&text).map_err(|e| bad(&e))
        }
    }

    /// Explicit path first, then `ALE_CONFIG`, then defaults.
    pub fn discover(explicit: Option<&Path>) -> Result<Self, CliError> {
        match explicit {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
                _ => Ok(Self::default()),
            },
        }
    }

    pub fn apply(mut self, o: &Overrides) -> Self {
        if let Some(v) = o.backend {
            self.backend = v;
        }
        if let Some(v) = &o.segmenter_endpoint {
            self.segmenter_endpoint = Some(v.clone());
        }
        if let Some(v) = &o.masks {
            self.masks = Some(v.clone());
        }
        if let Some(v) = &o.out {
            self.out = v.clone();
        }
        let e = &mut self.edit;
        if let Some(v) = o.steps {
            e.num_steps = v;
        }
        if let Some(v) = o.schedule {
            e.schedule_fraction = Some(v);
        }
        if let Some(v) = o.edit_type {
            e.edit_type = Some(v);
        }
        if let Some(v) = o.eos_strategy {
            e.eos_strategy = v;
        }
        if let Some(v) = o.dilation {
            e.dilation_ratio = v;
        }
        if let Some(v) = o.seed {
            e.seed = v;
        }
        e.debug |= o.debug;
        self
    }

    /// The parts of the config that determine the output.
    pub fn recorded(&self) -> RecordedConfig {
        RecordedConfig {
            backend: self.backend,
            encoder: self.encoder,
            edit: EditConfig {
                debug: false,
                ..self.edit.clone()
            },
        }
    }
}

/// Output-determining subset of [`CliConfig`], stored in sidecars. It
/// deserializes as a [`CliConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedConfig {
    pub backend: BackendKind,
    pub encoder: EncoderKind,
    pub edit: EditConfig,
}
