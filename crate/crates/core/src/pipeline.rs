//! End-to-end edit: prompts, embeddings, masks, dual-branch sampling with
//! injection and background blending, decode.

use serde::{Deserialize, Serialize};

use crate::attention::{resolve_schedule, AttentionError, InjectionSchedule};
use crate::backend::{
    BackendError, Branch, Conditioning, Controls, CrossValues, DiffusionBackend, Injection,
};
use crate::config::{ConfigError, EditConfig};
use crate::mask::{acquire_masks, prepare_masks, FallbackSignal, MaskError, MaskOutcome, MaskProvenance, MaskProvider, MaskSet};
use crate::prompt::{
    build_base_prompt, encode_object_restricted, validate_pairs, ObjectPromptPair, OreSet, PromptError, PromptSide,
    TextEncoder,
};
use crate::sampler::{
    background_blend, sample_noise, source_step, target_step, virtual_inversion_clean, DualBranchState, NoiseCoupling,
    NoiseSchedule, SamplerError,
};
use crate::seed::{derive_seed, rng_from_seed};
use crate::tensor::{Image, Latent, Resolution};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

impl PipelineError {
    /// Errors caused by the request itself rather than by the run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            PipelineError::Config(_)
                | PipelineError::Prompt(_)
                | PipelineError::Mask(MaskError::MissingMaskFile { .. })
                | PipelineError::Mask(MaskError::CountMismatch { .. })
                | PipelineError::Mask(MaskError::MaskShape { .. })
                | PipelineError::Mask(MaskError::InvalidDilation(_))
        )
    }
}

#[derive(Debug, Clone)]
pub struct EditRequest {
    pub image: Image,
    pub pairs: Vec<ObjectPromptPair>,
    pub config: EditConfig,
    /// Attribute-free prompts, one per object, for the `ets` strategy.
    pub stripped_prompts: Option<Vec<String>>,
}

/// Control decisions of one sampler step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step: usize,
    pub timestep: usize,
    pub alpha: f64,
    pub next_alpha: f64,
    pub injected: bool,
    pub region_blend: bool,
    pub background_blend: bool,
    /// Max abs difference between the clean latent recovered from the
    /// source branch and `z0_src`; computed in debug mode only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inversion_error: Option<f32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z_src: Option<Latent>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z_tgt: Option<Latent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditTrace {
    pub seed: u64,
    pub config_hash: String,
    pub base_prompt_source: String,
    pub base_prompt_target: String,
    pub schedule: InjectionSchedule,
    pub mask_provenance: MaskProvenance,
    pub dilation_radius_px: usize,
    pub fallback: Option<FallbackSignal>,
    pub source_forward_passes: usize,
    pub target_forward_passes: usize,
    pub steps: Vec<StepTrace>,
}

impl EditTrace {
    pub fn is_fallback(&self) -> bool {
        self.fallback.is_some()
    }
}

#[derive(Debug, Clone)]
pub struct EditOutput {
    pub image: Image,
    /// Source image resampled to the backend's image resolution; the
    /// reference for background metrics.
    pub source_image: Image,
    pub z0_src: Latent,
    pub final_source: Latent,
    pub final_target: Latent,
    /// Prepared masks, `None` on the fallback path.
    pub masks: Option<MaskSet>,
    pub ore_target: OreSet,
    pub trace: EditTrace,
}

pub fn run_edit(
    request: &EditRequest,
    backend: &dyn DiffusionBackend,
    encoder: &dyn TextEncoder,
    masks: &mut dyn MaskProvider,
) -> Result<EditOutput, PipelineError> {
    let cfg = &request.config;
    cfg.validate()?;
    validate_pairs(&request.pairs)?;

    let source_prompts: Vec<String> = request.pairs.iter().map(|p| p.source.clone()).collect();
    let base_src = build_base_prompt(&request.pairs, PromptSide::Source, encoder)?;
    let src_embedding = encoder.encode(&base_src.text)?;
    let ore_tgt = encode_object_restricted(
        &request.pairs,
        PromptSide::Target,
        encoder,
        cfg.eos_strategy,
        request.stripped_prompts.as_deref(),
    )?;
    let uncond = if cfg.guidance_scale != 1.0 {
        Some(encoder.encode("")?)
    } else {
        None
    };

    let latent_shape = backend.latent_shape();
    let latent_res = latent_shape.resolution();
    let image_res = backend.image_resolution();
    let mut levels: Vec<Resolution> = backend.attention_resolutions();
    levels.extend([latent_res, image_res]);
    levels.sort();
    levels.dedup();

    let outcome = acquire_masks(&request.image, &source_prompts, masks)?;
    let (prepared, fallback) = match outcome {
        MaskOutcome::Masks(set) => (Some(prepare_masks(&set, cfg.dilation_ratio, &levels)?), None),
        MaskOutcome::Fallback(signal) => (None, Some(signal)),
    };
    let provenance = prepared.as_ref().map_or(MaskProvenance::FallbackNone, |m| m.provenance);

    let source_image = request.image.resized(image_res);
    let z0_src = backend.encode_image(&source_image)?;
    let noise_schedule = NoiseSchedule::latent_consistency(cfg.num_steps)?;
    let injection_schedule = resolve_schedule(cfg.resolved_schedule_fraction(), cfg.num_steps)?;

    let src_cond = Conditioning {
        keys: &src_embedding,
        values: CrossValues::Plain(&src_embedding),
        unconditional: uncond.as_ref(),
        guidance_scale: cfg.guidance_scale,
    };
    let region_blend = cfg.region_blend && prepared.is_some();
    let tgt_values = match (&prepared, region_blend) {
        (Some(m), true) => CrossValues::RegionBlend {
            objects: &ore_tgt.per_object,
            base: &ore_tgt.base,
            masks: &m.pyramid,
        },
        _ => CrossValues::Plain(&ore_tgt.base),
    };
    let tgt_cond = Conditioning {
        keys: &ore_tgt.base_plain,
        values: tgt_values,
        unconditional: uncond.as_ref(),
        guidance_scale: cfg.guidance_scale,
    };
    let blend_mask = match (&prepared, cfg.background_blend) {
        (Some(m), true) => Some(
            &m.level(latent_res)
                .ok_or_else(|| BackendError::Shape(format!("no mask level at latent resolution {latent_res}")))?
                .background,
        ),
        _ => None,
    };

    let mut rng = rng_from_seed(derive_seed(cfg.seed, "sampler-noise"));
    let mut target_rng = rng_from_seed(derive_seed(cfg.seed, "target-noise"));
    let initial = sample_noise(&mut rng, latent_shape);
    let mut state = DualBranchState::new(z0_src.clone(), initial)?;
    let mut steps = Vec::with_capacity(cfg.num_steps);
    let (mut src_passes, mut tgt_passes) = (0, 0);

    for n in 0..cfg.num_steps {
        state.step_index = n;
        let fresh = sample_noise(&mut rng, latent_shape);
        let fresh_tgt = match cfg.noise_coupling {
            NoiseCoupling::Shared => None,
            NoiseCoupling::Independent => Some(sample_noise(&mut target_rng, latent_shape)),
        };

        let src_out = backend.forward(&state.z_src, n, &src_cond, &Controls::source())?;
        src_passes += 1;
        let src_update = source_step(&state, &noise_schedule, &fresh)?;

        let controls = Controls {
            branch: Branch::Target,
            injection: Some(Injection {
                source: &src_out.self_attention,
                schedule: &injection_schedule,
            }),
        };
        let tgt_out = backend.forward(&state.z_tgt, n, &tgt_cond, &controls)?;
        tgt_passes += 1;
        let mut z_tgt_next = target_step(
            &state,
            &noise_schedule,
            &tgt_out.denoised,
            &src_out.denoised,
            fresh_tgt.as_ref().unwrap_or(&fresh),
        )?;
        if let Some(bg) = blend_mask {
            z_tgt_next = background_blend(&src_update.next, &z_tgt_next, bg)?;
        }

        let alpha = noise_schedule.alpha(n);
        let inversion_error = cfg
            .debug
            .then(|| virtual_inversion_clean(&state.z_src, &state.z0_src, alpha).max_abs_diff(&state.z0_src));
        steps.push(StepTrace {
            step: n,
            timestep: noise_schedule.timesteps()[n],
            alpha,
            next_alpha: noise_schedule.next_alpha(n),
            injected: tgt_out.hooks.injected_layers > 0,
            region_blend,
            background_blend: blend_mask.is_some(),
            inversion_error,
            z_src: cfg.debug.then(|| state.z_src.clone()),
            z_tgt: cfg.debug.then(|| state.z_tgt.clone()),
        });

        state.z_src = src_update.next;
        state.z_tgt = z_tgt_next;
        if cfg.debug {
            state.fresh_noise.push(fresh);
        }
    }

    let image = backend.decode_latent(&state.z_tgt)?;
    let trace = EditTrace {
        seed: cfg.seed,
        config_hash: cfg.config_hash(),
        base_prompt_source: base_src.text,
        base_prompt_target: ore_tgt.base_prompt.clone(),
        schedule: injection_schedule,
        mask_provenance: provenance,
        dilation_radius_px: prepared.as_ref().map_or(0, |m| m.dilation_radius_px),
        fallback,
        source_forward_passes: src_passes,
        target_forward_passes: tgt_passes,
        steps,
    };
    Ok(EditOutput {
        image,
        source_image,
        z0_src,
        final_source: state.z_src,
        final_target: state.z_tgt,
        masks: prepared,
        ore_target: ore_tgt,
        trace,
    })
}
