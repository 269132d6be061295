//! `ale edit`: one multi-object edit with its metadata sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use ale_core::seed::hex_digest;
use ale_core::{
    backend_for_kind, run_edit, BackendError, EditRequest, EditTrace, FileMaskProvider, Image, MaskProvenance, MaskProvider,
    MockEncoder, ObjectPromptPair, PipelineError, SegmenterClient,
};
use serde::{Deserialize, Serialize};

use crate::config::{CliConfig, RecordedConfig};
use crate::segmenter::HttpSegmenter;
use crate::CliError;

/// Everything needed to reproduce an output, minus wall-clock data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub image: String,
    pub image_sha256: String,
    pub output: String,
    pub output_sha256: String,
    pub pairs: Vec<ObjectPromptPair>,
    pub seed: u64,
    pub config_hash: String,
    pub config: RecordedConfig,
    pub schedule_fraction: f64,
    pub active_steps: usize,
    pub mask_provenance: MaskProvenance,
    pub dilation_radius_px: usize,
    pub fallback: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct EditPaths {
    pub image: PathBuf,
    pub sidecar: PathBuf,
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct EditOutcome {
    pub paths: EditPaths,
    pub sidecar: Sidecar,
}

#[derive(Serialize)]
struct TraceFile<'a> {
    #[serde(flatten)]
    trace: &'a EditTrace,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_source: Option<&'a [f32]>,
}

fn parse_pairs(specs: &[String]) -> Result<Vec<ObjectPromptPair>, CliError> {
    if specs.is_empty() {
        return Err(CliError::Validation("at least one --pair \"source->target\" is required".into()));
    }
    specs
        .iter()
        .enumerate()
        .map(|(i, s)| ObjectPromptPair::parse(i + 1, s).map_err(|e| CliError::Validation(e.to_string())))
        .collect()
}

fn mask_provider(cfg: &CliConfig, stem: &str, n: usize) -> Result<Box<dyn MaskProvider>, CliError> {
    if let Some(dir) = &cfg.masks {
        let provider = FileMaskProvider::new(dir, stem);
        let missing: Vec<String> = (1..=n)
            .map(|i| provider.path_for(i))
            .filter(|p| !p.exists())
            .map(|p| p.display().to_string())
            .collect();
        if !missing.is_empty() && cfg.segmenter_endpoint.is_none() {
            return Err(CliError::Validation(format!(
                "missing mask file(s): {}. Provide one PNG per --pair as <masks>/{stem}_obj<i>.png, or pass --segmenter-endpoint",
                missing.join(", ")
            )));
        }
        if missing.is_empty() {
            return Ok(Box::new(provider));
        }
    }
    match &cfg.segmenter_endpoint {
        Some(url) => Ok(Box::new(SegmenterClient::new(HttpSegmenter::new(url.clone())))),
        None => Err(CliError::Validation(format!(
            "no masks: pass --masks <dir> containing {stem}_obj1.png.. or --segmenter-endpoint <url>"
        ))),
    }
}

fn classify(e: PipelineError) -> CliError {
    if e.is_validation() {
        CliError::Validation(e.to_string())
    } else {
        CliError::Failure(e.to_string())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Failure(format!("cannot write {}: {e}", path.display())))
}

/// Runs the edit described by `cfg` and writes the image, the sidecar and,
/// in debug mode, the step trace into `cfg.out`.
pub fn run(
    cfg: &CliConfig,
    image_path: &Path,
    pair_specs: &[String],
    stripped: Option<Vec<String>>,
) -> Result<EditOutcome, CliError> {
    let pairs = parse_pairs(pair_specs)?;
    cfg.edit.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    let image_bytes = fs::read(image_path)
        .map_err(|e| CliError::Validation(format!("cannot read image {}: {e}", image_path.display())))?;
    let image = Image::open(image_path)
        .map_err(|e| CliError::Validation(format!("cannot decode image {}: {e}", image_path.display())))?;
    let stem = image_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| CliError::Validation(format!("bad image file name {}", image_path.display())))?
        .to_string();
    let mut provider = mask_provider(cfg, &stem, pairs.len())?;
    let backend = backend_for_kind(cfg.backend).map_err(|e| match e {
        BackendError::Unavailable(_) | BackendError::Config(_) => CliError::Validation(e.to_string()),
        other => CliError::Failure(other.to_string()),
    })?;
    let encoder = MockEncoder::default();

    let request = EditRequest {
        image: image.clone(),
        pairs: pairs.clone(),
        config: cfg.edit.clone(),
        stripped_prompts: stripped,
    };
    let out = run_edit(&request, backend.as_ref(), &encoder, provider.as_mut()).map_err(classify)?;

    fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::Failure(format!("cannot create {}: {e}", cfg.out.display())))?;
    let edited = out.image.resized(image.resolution());
    let out_image = cfg.out.join(format!("{stem}_edited.png"));
    edited
        .save_png(&out_image)
        .map_err(|e| CliError::Failure(format!("cannot write {}: {e}", out_image.display())))?;
    let out_bytes = fs::read(&out_image).map_err(|e| CliError::Failure(e.to_string()))?;

    let mut warnings = Vec::new();
    if let Some(f) = &out.trace.fallback {
        warnings.push(format!(
            "fallback: {}; edited without region masks or background blending",
            f.reason
        ));
    }
    let sidecar = Sidecar {
        image: file_name(image_path),
        image_sha256: hex_digest(&image_bytes),
        output: file_name(&out_image),
        output_sha256: hex_digest(&out_bytes),
        pairs,
        seed: cfg.edit.seed,
        config_hash: out.trace.config_hash.clone(),
        config: cfg.recorded(),
        schedule_fraction: cfg.edit.resolved_schedule_fraction(),
        active_steps: out.trace.schedule.len(),
        mask_provenance: out.trace.mask_provenance,
        dilation_radius_px: out.trace.dilation_radius_px,
        fallback: out.trace.is_fallback(),
        warnings,
    };
    let sidecar_path = cfg.out.join(format!("{stem}_edited.json"));
    write_file(&sidecar_path, &pretty(&sidecar))?;

    let trace = if cfg.edit.debug {
        let path = cfg.out.join(format!("{stem}_trace.json"));
        let file = TraceFile {
            trace: &out.trace,
            final_source: Some(out.final_source.as_slice()),
        };
        write_file(&path, &pretty(&file))?;
        Some(path)
    } else {
        None
    };
    Ok(EditOutcome {
        paths: EditPaths {
            image: out_image,
            sidecar: sidecar_path,
            trace,
        },
        sidecar,
    })
}

fn pretty<T: Serialize>(v: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(v).expect("serializable");
    bytes.push(b'\n');
    bytes
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}
