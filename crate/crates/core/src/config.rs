use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::mask::MAX_DILATION_RATIO;
use crate::prompt::EosStrategy;
use crate::sampler::{NoiseCoupling, MAX_STEPS};
use crate::seed::hex_digest;

pub const DEFAULT_STEPS: usize = 15;
pub const DEFAULT_DILATION_RATIO: f64 = 0.01;
/// Injection fraction when neither an edit type nor an explicit fraction is
/// given.
pub const FALLBACK_SCHEDULE_FRACTION: f64 = 1.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown edit type `{0}` (expected color, object, material, color+object or object+material)")]
    UnknownEditType(String),
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EditType {
    #[serde(rename = "color")]
    Color,
    #[serde(rename = "object")]
    Object,
    #[serde(rename = "material")]
    Material,
    #[serde(rename = "color+object")]
    ColorObject,
    #[serde(rename = "object+material")]
    ObjectMaterial,
}

impl EditType {
    pub const ALL: [EditType; 5] = [
        EditType::Color,
        EditType::Object,
        EditType::Material,
        EditType::ColorObject,
        EditType::ObjectMaterial,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EditType::Color => "color",
            EditType::Object => "object",
            EditType::Material => "material",
            EditType::ColorObject => "color+object",
            EditType::ObjectMaterial => "object+material",
        }
    }

    /// Fraction of early steps that receive source self-attention Q/K.
    pub fn default_schedule_fraction(&self) -> f64 {
        match self {
            EditType::Color => 1.0,
            EditType::Material => 0.6,
            EditType::Object | EditType::ColorObject | EditType::ObjectMaterial => 0.5,
        }
    }

    pub fn changes_object(&self) -> bool {
        matches!(self, EditType::Object | EditType::ColorObject | EditType::ObjectMaterial)
    }

    pub fn uses_color(&self) -> bool {
        matches!(self, EditType::Color | EditType::ColorObject)
    }

    pub fn uses_material(&self) -> bool {
        matches!(self, EditType::Material | EditType::ObjectMaterial)
    }
}

impl fmt::Display for EditType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EditType {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s.trim().to_ascii_lowercase().replace(['_', '-', ' '], "+");
        match norm.as_str() {
            "color" => Ok(EditType::Color),
            "object" => Ok(EditType::Object),
            "material" => Ok(EditType::Material),
            "color+object" | "object+color" => Ok(EditType::ColorObject),
            "object+material" | "material+object" => Ok(EditType::ObjectMaterial),
            _ => Err(ConfigError::UnknownEditType(s.to_string())),
        }
    }
}

/// Parameters of one edit. Every field has a default so partial config
/// files deserialize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditConfig {
    pub num_steps: usize,
    pub edit_type: Option<EditType>,
    /// Overrides the edit type's default fraction.
    pub schedule_fraction: Option<f64>,
    pub dilation_ratio: f64,
    pub eos_strategy: EosStrategy,
    pub guidance_scale: f32,
    pub seed: u64,
    pub noise_coupling: NoiseCoupling,
    pub region_blend: bool,
    pub background_blend: bool,
    pub debug: bool,
}

impl Default for EditConfig {
    fn default() -> Self {
        Self {
            num_steps: DEFAULT_STEPS,
            edit_type: None,
            schedule_fraction: None,
            dilation_ratio: DEFAULT_DILATION_RATIO,
            eos_strategy: EosStrategy::default(),
            guidance_scale: 1.0,
            seed: 0,
            noise_coupling: NoiseCoupling::default(),
            region_blend: true,
            background_blend: true,
            debug: false,
        }
    }
}

impl EditConfig {
    pub fn for_edit_type(edit_type: EditType) -> Self {
        Self {
            edit_type: Some(edit_type),
            ..Self::default()
        }
    }

    pub fn resolved_schedule_fraction(&self) -> f64 {
        self.schedule_fraction
            .or(self.edit_type.map(|t| t.default_schedule_fraction()))
            .unwrap_or(FALLBACK_SCHEDULE_FRACTION)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.num_steps == 0 || self.num_steps > MAX_STEPS {
            return Err(ConfigError::Invalid {
                field: "num_steps",
                reason: format!("{} is outside 1..={MAX_STEPS}", self.num_steps),
            });
        }
        if let Some(f) = self.schedule_fraction {
            if !(0.0..=1.0).contains(&f) {
                return Err(ConfigError::Invalid {
                    field: "schedule_fraction",
                    reason: format!("{f} is outside [0, 1]"),
                });
            }
        }
        if !(0.0..=MAX_DILATION_RATIO).contains(&self.dilation_ratio) {
            return Err(ConfigError::Invalid {
                field: "dilation_ratio",
                reason: format!("{} is outside [0, {MAX_DILATION_RATIO}]", self.dilation_ratio),
            });
        }
        if !self.guidance_scale.is_finite() || self.guidance_scale <= 0.0 {
            return Err(ConfigError::Invalid {
                field: "guidance_scale",
                reason: format!("{} must be positive and finite", self.guidance_scale),
            });
        }
        Ok(())
    }

    /// Digest of the canonical JSON form; excludes `debug`, which does not
    /// affect outputs.
    pub fn config_hash(&self) -> String {
        let mut canon = self.clone();
        canon.debug = false;
        let json = serde_json::to_vec(&canon).expect("config serializes");
        hex_digest(&json)
    }
}
