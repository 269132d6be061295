//! `ale bench generate | run | report`.

use std::path::{Path, PathBuf};

use ale_core::bench::{format_tables, load_scenarios, save_scenarios};
use ale_core::metrics::MetricAdapters;
use ale_core::{
    aggregate, backend_for_kind, generate_scenarios, load_reports, AleEditor, AttributeDictionaries, EditType,
    GridFilter, Manifest, MockEncoder, MockSimilarity, RunOptions, RunSummary,
};

use crate::config::CliConfig;
use crate::CliError;

#[derive(Debug, Clone, Default)]
pub struct GenerateArgs {
    pub manifest: PathBuf,
    pub dictionaries: Option<PathBuf>,
    pub seed: u64,
    pub out: PathBuf,
    pub images: Vec<String>,
    pub edit_types: Vec<EditType>,
    pub ks: Vec<usize>,
}

/// Writes the scenario list and returns how many scenarios it holds.
pub fn generate(args: &GenerateArgs) -> Result<usize, CliError> {
    let manifest = Manifest::load(&args.manifest)?;
    let dicts = match &args.dictionaries {
        Some(p) => AttributeDictionaries::load(p)?,
        None => AttributeDictionaries::default(),
    };
    let non_empty = |v: &[String]| (!v.is_empty()).then(|| v.to_vec());
    let filter = GridFilter {
        images: non_empty(&args.images),
        edit_types: (!args.edit_types.is_empty()).then(|| args.edit_types.clone()),
        ks: (!args.ks.is_empty()).then(|| args.ks.clone()),
    };
    let scenarios = generate_scenarios(&manifest, &dicts, args.seed, &filter)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::Bench(format!("{}: {e}", parent.display())))?;
    }
    save_scenarios(&args.out, &scenarios)?;
    Ok(scenarios.len())
}

#[derive(Debug, Clone)]
pub struct RunArgs {
    pub manifest: PathBuf,
    pub scenarios: PathBuf,
    pub out: PathBuf,
    pub workers: usize,
    pub resume: bool,
}

pub fn run(cfg: &CliConfig, args: &RunArgs) -> Result<RunSummary, CliError> {
    cfg.edit.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    let manifest = Manifest::load(&args.manifest)?;
    let scenarios = load_scenarios(&args.scenarios)?;
    let backend = backend_for_kind(cfg.backend).map_err(|e| CliError::Validation(e.to_string()))?;
    let encoder = MockEncoder::default();
    let editor = AleEditor {
        backend: backend.as_ref(),
        encoder: &encoder,
        base_config: cfg.edit.clone(),
    };
    let summary = ale_core::run_benchmark(
        &scenarios,
        &manifest,
        &editor,
        &MockSimilarity,
        &MetricAdapters::default(),
        &args.out,
        &RunOptions {
            workers: args.workers,
            resume: args.resume,
        },
    )?;
    Ok(summary)
}

pub fn summary_line(s: &RunSummary) -> String {
    format!(
        "{} scenarios: {} edited, {} resumed, {} failed",
        s.total,
        s.edited,
        s.skipped,
        s.failures.len()
    )
}

/// Per-type and per-K tables of every report under `out`.
pub fn report(out: &Path) -> Result<String, CliError> {
    let reports = load_reports(out)?;
    if reports.is_empty() {
        return Err(CliError::Bench(format!("no reports found in {}", out.display())));
    }
    Ok(format_tables(&aggregate(&reports)))
}
