//! Attribute-leakage-free multi-object image editing.
//!
//! The crate covers the whole edit path (object-restricted prompt
//! embeddings, mask preparation, region-guided cross-attention, dual-branch
//! consistency sampling with background blending), the leakage metrics and
//! the benchmark harness. A small deterministic backend, text encoder and
//! similarity scorer make every piece testable without model weights.

pub mod attention;
pub mod backend;
pub mod bench;
pub mod config;
pub mod mask;
pub mod metrics;
pub mod pipeline;
pub mod prompt;
pub mod sampler;
pub mod seed;
pub mod tensor;

pub use attention::{
    attention_map, inject_self_attention, resolve_schedule, rgb_cam_blend, standard_attention, AttentionContext,
    AttentionError, InjectionSchedule, QkPair,
};
pub use backend::{
    backend_for_kind, check_conformance, BackendError, BackendKind, Branch, Conditioning, Controls, CrossValues,
    DiffusionBackend, ForwardOutput, HookLog, Injection, MockSimilarity, ProbeBackend, ToyBackend, ToyBackendConfig,
};
pub use bench::{
    aggregate, generate_scenarios, load_reports, render_prompt, run_benchmark, AleEditor, Aggregate,
    AttributeDictionaries, BenchError, GridFilter, Manifest, RunOptions, RunSummary, Scenario, ScenarioEditor,
};
pub use config::{ConfigError, EditConfig, EditType};
pub use mask::{
    acquire_masks, dilate_mask, prepare_masks, FallbackSignal, FileMaskProvider, Mask, MaskError, MaskOutcome,
    MaskProvenance, MaskProvider, MaskSet, PathMaskProvider, RegionMasks, SegmenterClient, SegmenterTransport,
    StaticMaskProvider,
};
pub use metrics::{
    background_preservation, editing_performance, tels, tils, BackgroundScores, LeakageReport, MetricsError,
    SimilarityScorer,
};
pub use pipeline::{run_edit, EditOutput, EditRequest, EditTrace, PipelineError, StepTrace};
pub use prompt::{
    build_base_prompt, encode_object_restricted, EmbeddingMatrix, EosStrategy, MockEncoder, MockEncoderConfig,
    ObjectPromptPair, OreSet, PromptError, PromptSide, TextEncoder,
};
pub use sampler::{
    background_blend, source_step, target_step, DualBranchState, NoiseCoupling, NoiseSchedule, SamplerError,
};
pub use tensor::{Image, Latent, LatentShape, Matrix, Resolution};
