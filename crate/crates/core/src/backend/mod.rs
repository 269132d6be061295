//! Diffusion backend contract and the desk-scale implementations.
//!
//! A backend declares its latent shape and attention resolutions, converts
//! images to and from latents, and runs one denoiser forward pass that
//! returns a consistency-denoised prediction `ẑ₀`. Two hook points are
//! honoured inside `forward`: cross-attention may be replaced by the region
//! blend, and self-attention queries/keys may be substituted by the source
//! branch's.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionError, InjectionSchedule, QkPair};
use crate::mask::RegionMasks;
use crate::prompt::EmbeddingMatrix;
use crate::tensor::{Image, Latent, LatentShape, Resolution};

pub mod golden;
pub mod probe;
pub mod similarity;
pub mod toy;

pub use probe::ProbeBackend;
pub use similarity::{synthetic_patch, MockSimilarity};
pub use toy::{ToyBackend, ToyBackendConfig};

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("backend shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error("invalid parameter file: {0}")]
    Params(String),
    #[error("backend `{0}` is not available in this build")]
    Unavailable(String),
    #[error("invalid backend config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Toy,
    Real,
}

impl FromStr for BackendKind {
    type Err = BackendError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "toy" => Ok(BackendKind::Toy),
            "real" => Ok(BackendKind::Real),
            other => Err(BackendError::Config(format!("unknown backend kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for BackendKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BackendKind::Toy => "toy",
            BackendKind::Real => "real",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Source,
    Target,
}

/// Value side of cross-attention.
#[derive(Debug, Clone, Copy)]
pub enum CrossValues<'a> {
    /// Standard attention with `V = W_v(E)`.
    Plain(&'a EmbeddingMatrix),
    /// Region-guided blend of per-object values and the base values.
    RegionBlend {
        objects: &'a [EmbeddingMatrix],
        base: &'a EmbeddingMatrix,
        masks: &'a BTreeMap<Resolution, RegionMasks>,
    },
}

/// Text conditioning of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Conditioning<'a> {
    /// Keys always come from the plain encoding of the base prompt.
    pub keys: &'a EmbeddingMatrix,
    pub values: CrossValues<'a>,
    /// Null-prompt embedding for guidance; only used when
    /// `guidance_scale != 1`. That pass always uses standard attention.
    pub unconditional: Option<&'a EmbeddingMatrix>,
    pub guidance_scale: f32,
}

impl<'a> Conditioning<'a> {
    pub fn plain(embedding: &'a EmbeddingMatrix) -> Self {
        Self {
            keys: embedding,
            values: CrossValues::Plain(embedding),
            unconditional: None,
            guidance_scale: 1.0,
        }
    }
}

/// Source queries/keys offered to the target branch.
#[derive(Debug, Clone, Copy)]
pub struct Injection<'a> {
    pub source: &'a [QkPair],
    pub schedule: &'a InjectionSchedule,
}

#[derive(Debug, Clone, Copy)]
pub struct Controls<'a> {
    pub branch: Branch,
    pub injection: Option<Injection<'a>>,
}

impl Controls<'_> {
    pub fn source() -> Self {
        Self {
            branch: Branch::Source,
            injection: None,
        }
    }
}

/// Instrumentation of the hook points hit during one forward pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HookLog {
    pub self_attention_calls: usize,
    pub injected_layers: usize,
    pub cross_attention_calls: usize,
    pub region_blend_calls: usize,
    /// Query/key pair each self-attention layer actually used.
    pub used_qk: Vec<QkPair>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub denoised: Latent,
    /// The pass's own self-attention queries/keys, one per layer, before
    /// any injection.
    pub self_attention: Vec<QkPair>,
    pub hooks: HookLog,
}

pub trait DiffusionBackend {
    fn latent_shape(&self) -> LatentShape;
    fn attention_resolutions(&self) -> Vec<Resolution>;
    fn image_resolution(&self) -> Resolution;
    fn encode_image(&self, image: &Image) -> Result<Latent, BackendError>;
    fn decode_latent(&self, latent: &Latent) -> Result<Image, BackendError>;
    fn forward(
        &self,
        z: &Latent,
        step: usize,
        cond: &Conditioning<'_>,
        controls: &Controls<'_>,
    ) -> Result<ForwardOutput, BackendError>;
}

/// Summary of [`check_conformance`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConformanceReport {
    pub layers: usize,
    pub injection_honoured: bool,
}

/// Adapter conformance checks: declared shapes are honoured, each hook
/// fires once per block per pass, and injected queries/keys are used
/// verbatim.
pub fn check_conformance(
    backend: &dyn DiffusionBackend,
    embedding: &EmbeddingMatrix,
) -> Result<ConformanceReport, String> {
    let shape = backend.latent_shape();
    let image_res = backend.image_resolution();
    let image = Image::from_fn(image_res.width, image_res.height, |c, y, x| {
        ((c * 7 + y * 3 + x) % 11) as f32 / 10.0
    });
    let z = backend.encode_image(&image).map_err(|e| e.to_string())?;
    if z.shape() != shape {
        return Err(format!("encode produced {:?}, declared {:?}", z.shape(), shape));
    }
    let decoded = backend.decode_latent(&z).map_err(|e| e.to_string())?;
    if decoded.resolution() != image_res {
        return Err(format!("decode produced {}, declared {image_res}", decoded.resolution()));
    }
    let layers = backend.attention_resolutions().len();
    let cond = Conditioning::plain(embedding);
    let src = backend
        .forward(&z, 0, &cond, &Controls::source())
        .map_err(|e| e.to_string())?;
    if src.denoised.shape() != shape {
        return Err("forward output shape differs from latent shape".into());
    }
    let hooks = &src.hooks;
    if hooks.self_attention_calls != layers || hooks.cross_attention_calls != layers {
        return Err(format!(
            "expected {layers} self/cross hook calls, got {}/{}",
            hooks.self_attention_calls, hooks.cross_attention_calls
        ));
    }
    if src.self_attention.len() != layers {
        return Err(format!("captured {} q/k pairs for {layers} layers", src.self_attention.len()));
    }

    let schedule = crate::attention::resolve_schedule(1.0, 1).map_err(|e| e.to_string())?;
    let mut perturbed = z.clone();
    perturbed.as_mut_slice().iter_mut().for_each(|v| *v = -*v + 0.5);
    let controls = Controls {
        branch: Branch::Target,
        injection: Some(Injection {
            source: &src.self_attention,
            schedule: &schedule,
        }),
    };
    let tgt = backend
        .forward(&perturbed, 0, &cond, &controls)
        .map_err(|e| e.to_string())?;
    let injection_honoured = tgt.hooks.injected_layers == layers && tgt.hooks.used_qk == src.self_attention;
    if !injection_honoured {
        return Err("self-attention did not use the injected queries/keys".into());
    }
    Ok(ConformanceReport {
        layers,
        injection_honoured,
    })
}

/// Builds the backend named by `backend.kind`.
pub fn backend_for_kind(kind: BackendKind) -> Result<Box<dyn DiffusionBackend + Send + Sync>, BackendError> {
    match kind {
        BackendKind::Toy => Ok(Box::new(ToyBackend::from_golden()?)),
        BackendKind::Real => Err(BackendError::Unavailable(
            "real (requires the model integration package and weights)".into(),
        )),
    }
}
