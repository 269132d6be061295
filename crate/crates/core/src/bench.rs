//! Benchmark scenario generation, execution and aggregation.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backend::DiffusionBackend;
use crate::config::{EditConfig, EditType};
use crate::mask::{downsample_pyramid, load_mask_png, MaskProvenance, MaskSet, PathMaskProvider, RawMask, RegionMasks};
use crate::metrics::{evaluate, EvalInput, LeakageReport, MetricAdapters, ScenarioMeta, SimilarityScorer};
use crate::pipeline::{run_edit, EditRequest};
use crate::prompt::{join_prompts, ObjectPromptPair, TextEncoder};
use crate::seed::{derive_seed, rng_from_seed};
use crate::tensor::Image;

pub const INSTANCES_PER_CELL: usize = 10;
pub const OBJECT_COUNTS: [usize; 3] = [1, 2, 3];
const MAX_DRAWS_PER_INSTANCE: usize = 200;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("template for {edit_type} needs a {field}")]
    MissingAttribute { edit_type: EditType, field: &'static str },
    #[error("invalid dictionaries: {0}")]
    Dictionary(String),
    #[error("cannot draw {needed} distinct instances for {cell}; the dictionaries are too small")]
    InsufficientAttributes { cell: String, needed: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestObject {
    pub name: String,
    /// Existing color, never sampled as a target color.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub material: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestImage {
    pub id: String,
    #[serde(default)]
    pub path: PathBuf,
    pub objects: Vec<ManifestObject>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub images: Vec<ManifestImage>,
}

fn parse_by_extension<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T, BenchError> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let parsed = match ext.as_str() {
        "yaml" | "yml" => serde_yaml::from_str(text).map_err(|e| e.to_string()),
        _ => serde_json::from_str(text).map_err(|e| e.to_string()),
    };
    parsed.map_err(|message| BenchError::Parse {
        path: path.to_path_buf(),
        message,
    })
}

impl Manifest {
    /// Reads a JSON or YAML manifest; relative image and mask paths are
    /// resolved against the manifest's directory.
    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut manifest: Manifest = parse_by_extension(path, &text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for img in &mut manifest.images {
            if img.path.is_relative() && !img.path.as_os_str().is_empty() {
                img.path = base.join(&img.path);
            }
            for obj in &mut img.objects {
                if let Some(m) = obj.mask.as_mut().filter(|m| m.is_relative()) {
                    *m = base.join(&*m);
                }
            }
        }
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let mut ids = BTreeSet::new();
        for img in &self.images {
            if img.id.trim().is_empty() {
                return Err(BenchError::Manifest("image with empty id".into()));
            }
            if !ids.insert(img.id.as_str()) {
                return Err(BenchError::Manifest(format!("duplicate image id `{}`", img.id)));
            }
            if img.objects.iter().any(|o| o.name.trim().is_empty()) {
                return Err(BenchError::Manifest(format!("image `{}` has an unnamed object", img.id)));
            }
        }
        Ok(())
    }

    pub fn image(&self, id: &str) -> Option<&ManifestImage> {
        self.images.iter().find(|i| i.id == id)
    }
}

/// Target instances for templates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeDictionaries {
    pub colors: Vec<String>,
    pub objects: Vec<String>,
    pub materials: Vec<String>,
}

fn owned(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl Default for AttributeDictionaries {
    fn default() -> Self {
        Self {
            colors: owned(&[
                "red", "orange", "yellow", "green", "blue", "purple", "pink", "brown", "black", "white", "gray",
                "gold", "silver", "cyan",
            ]),
            objects: owned(&[
                "apple", "ball", "basket", "bench", "bicycle", "bird", "boat", "book", "bottle", "bowl", "bus",
                "cake", "car", "cat", "chair", "clock", "cup", "dog", "duck", "flower", "guitar", "hat", "horse",
                "lamp", "owl", "pumpkin", "rabbit", "teapot", "tiger", "umbrella", "vase", "wolf",
            ]),
            materials: owned(&[
                "gold", "silver", "wood", "glass", "marble", "stone", "paper", "plastic", "copper", "ice", "clay",
                "bronze", "leather", "wool",
            ]),
        }
    }
}

impl AttributeDictionaries {
    pub fn validate(&self) -> Result<(), BenchError> {
        for (name, list) in [("colors", &self.colors), ("objects", &self.objects), ("materials", &self.materials)] {
            if list.is_empty() {
                return Err(BenchError::Dictionary(format!("{name} is empty")));
            }
            let mut seen = BTreeSet::new();
            for e in list {
                if e.trim().is_empty() {
                    return Err(BenchError::Dictionary(format!("{name} has an empty entry")));
                }
                if !seen.insert(e.as_str()) {
                    return Err(BenchError::Dictionary(format!("{name} repeats `{e}`")));
                }
            }
        }
        Ok(())
    }

    /// JSON or YAML object with `colors`, `objects` and `materials` lists.
    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let dicts: Self = parse_by_extension(path, &text)?;
        dicts.validate()?;
        Ok(dicts)
    }

    /// Three plain-text lists, one entry per line; blank lines and `#`
    /// comments are skipped.
    pub fn load_text_lists(colors: &Path, objects: &Path, materials: &Path) -> Result<Self, BenchError> {
        let read = |p: &Path| -> Result<Vec<String>, BenchError> {
            Ok(fs::read_to_string(p)
                .map_err(io_err(p))?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_string)
                .collect())
        };
        let dicts = Self {
            colors: read(colors)?,
            objects: read(objects)?,
            materials: read(materials)?,
        };
        dicts.validate()?;
        Ok(dicts)
    }
}

/// Attributes a template may consume.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetAttributes {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub material: Option<String>,
}

pub fn render_prompt(edit_type: EditType, source_object: &str, attrs: &TargetAttributes) -> Result<String, BenchError> {
    let need = |v: &Option<String>, field: &'static str| {
        v.clone().ok_or(BenchError::MissingAttribute { edit_type, field })
    };
    Ok(match edit_type {
        EditType::Color => format!("{}-colored {source_object}", need(&attrs.color, "color")?),
        EditType::Object => need(&attrs.object, "object")?,
        EditType::Material => format!("{source_object} made of {}", need(&attrs.material, "material")?),
        EditType::ColorObject => format!("{}-colored {}", need(&attrs.color, "color")?, need(&attrs.object, "object")?),
        EditType::ObjectMaterial => {
            format!("{} made of {}", need(&attrs.object, "object")?, need(&attrs.material, "material")?)
        }
    })
}

/// `a`/`an` by first letter.
pub fn with_article(phrase: &str) -> String {
    let vowel = phrase
        .chars()
        .next()
        .is_some_and(|c| matches!(c.to_ascii_lowercase(), 'a' | 'e' | 'i' | 'o' | 'u'));
    format!("{} {phrase}", if vowel { "an" } else { "a" })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioObject {
    /// Index into the image's object list.
    pub object_index: usize,
    pub source: String,
    pub target: String,
    pub attributes: TargetAttributes,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub scenario_id: String,
    pub image_id: String,
    pub edit_type: EditType,
    pub k: usize,
    pub instance_index: usize,
    pub objects: Vec<ScenarioObject>,
    pub seed: u64,
}

impl Scenario {
    /// Prompt pairs as sent to the encoder, with articles.
    pub fn encoder_pairs(&self) -> Vec<ObjectPromptPair> {
        self.objects
            .iter()
            .enumerate()
            .map(|(i, o)| {
                ObjectPromptPair::new(i + 1, with_article(&o.source), with_article(&o.target))
                    .expect("scenario prompts are non-empty")
            })
            .collect()
    }

    pub fn target_prompts(&self) -> Vec<String> {
        self.encoder_pairs().into_iter().map(|p| p.target).collect()
    }
}

pub fn scenario_id(image_id: &str, edit_type: EditType, k: usize, instance: usize) -> String {
    format!("{image_id}__{}__k{k}__{instance:02}", edit_type.as_str().replace('+', "-"))
}

/// Restricts generation to part of the grid.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GridFilter {
    pub images: Option<Vec<String>>,
    pub edit_types: Option<Vec<EditType>>,
    pub ks: Option<Vec<usize>>,
}

impl GridFilter {
    fn keeps(&self, image: &str, t: EditType, k: usize) -> bool {
        self.images.as_ref().map_or(true, |v| v.iter().any(|i| i == image))
            && self.edit_types.as_ref().map_or(true, |v| v.contains(&t))
            && self.ks.as_ref().map_or(true, |v| v.contains(&k))
    }
}

fn sample_attributes(
    rng: &mut impl Rng,
    edit_type: EditType,
    chosen: &[&ManifestObject],
    dicts: &AttributeDictionaries,
) -> Option<Vec<TargetAttributes>> {
    let mut used_colors = BTreeSet::new();
    let mut used_objects = BTreeSet::new();
    let mut used_materials = BTreeSet::new();
    chosen
        .iter()
        .map(|obj| {
            let mut attrs = TargetAttributes::default();
            if edit_type.uses_color() {
                let pool: Vec<&String> = dicts
                    .colors
                    .iter()
                    .filter(|c| Some(*c) != obj.color.as_ref() && !used_colors.contains(*c))
                    .collect();
                let c = (*pool.choose(rng)?).clone();
                used_colors.insert(c.clone());
                attrs.color = Some(c);
            }
            if edit_type.changes_object() {
                let pool: Vec<&String> = dicts
                    .objects
                    .iter()
                    .filter(|o| **o != obj.name && !used_objects.contains(*o))
                    .collect();
                let o = (*pool.choose(rng)?).clone();
                used_objects.insert(o.clone());
                attrs.object = Some(o);
            }
            if edit_type.uses_material() {
                let pool: Vec<&String> = dicts
                    .materials
                    .iter()
                    .filter(|m| Some(*m) != obj.material.as_ref() && !used_materials.contains(*m))
                    .collect();
                let m = (*pool.choose(rng)?).clone();
                used_materials.insert(m.clone());
                attrs.material = Some(m);
            }
            Some(attrs)
        })
        .collect()
}

/// One cell of the grid: `INSTANCES_PER_CELL` distinct instances for an
/// (image, edit type, K) triple. Each cell draws from its own seed, so
/// filtering the grid does not change the cells that remain.
fn generate_cell(
    image: &ManifestImage,
    edit_type: EditType,
    k: usize,
    dicts: &AttributeDictionaries,
    seed: u64,
) -> Result<Vec<Scenario>, BenchError> {
    let cell = format!("{}/{}/k{k}", image.id, edit_type);
    let mut rng = rng_from_seed(derive_seed(seed, &format!("cell/{cell}")));
    let mut seen: BTreeSet<Vec<(usize, String)>> = BTreeSet::new();
    let mut out = Vec::with_capacity(INSTANCES_PER_CELL);
    let mut draws = 0;
    while out.len() < INSTANCES_PER_CELL {
        draws += 1;
        if draws > MAX_DRAWS_PER_INSTANCE * INSTANCES_PER_CELL {
            return Err(BenchError::InsufficientAttributes {
                cell,
                needed: INSTANCES_PER_CELL,
            });
        }
        let mut indices: Vec<usize> = rand::seq::index::sample(&mut rng, image.objects.len(), k).into_vec();
        indices.sort_unstable();
        let chosen: Vec<&ManifestObject> = indices.iter().map(|&i| &image.objects[i]).collect();
        let Some(attrs) = sample_attributes(&mut rng, edit_type, &chosen, dicts) else {
            continue;
        };
        let objects: Vec<ScenarioObject> = indices
            .iter()
            .zip(attrs)
            .map(|(&i, a)| {
                let source = image.objects[i].name.clone();
                let target = render_prompt(edit_type, &source, &a)?;
                Ok(ScenarioObject {
                    object_index: i,
                    source,
                    target,
                    attributes: a,
                })
            })
            .collect::<Result<_, BenchError>>()?;
        let key: Vec<(usize, String)> = objects.iter().map(|o| (o.object_index, o.target.clone())).collect();
        if !seen.insert(key) {
            continue;
        }
        let instance = out.len() + 1;
        let id = scenario_id(&image.id, edit_type, k, instance);
        out.push(Scenario {
            seed: derive_seed(seed, &id),
            scenario_id: id,
            image_id: image.id.clone(),
            edit_type,
            k,
            instance_index: instance,
            objects,
        });
    }
    Ok(out)
}

/// Every (image, edit type, K) cell of the grid with
/// [`INSTANCES_PER_CELL`] instances each, in manifest order.
pub fn generate_scenarios(
    manifest: &Manifest,
    dicts: &AttributeDictionaries,
    seed: u64,
    filter: &GridFilter,
) -> Result<Vec<Scenario>, BenchError> {
    manifest.validate()?;
    dicts.validate()?;
    let mut out = Vec::new();
    for image in &manifest.images {
        for edit_type in EditType::ALL {
            for k in OBJECT_COUNTS {
                if !filter.keeps(&image.id, edit_type, k) {
                    continue;
                }
                if image.objects.len() < k {
                    return Err(BenchError::Manifest(format!(
                        "image `{}` declares {} objects, {k} needed",
                        image.id,
                        image.objects.len()
                    )));
                }
                out.extend(generate_cell(image, edit_type, k, dicts, seed)?);
            }
        }
    }
    Ok(out)
}

pub fn save_scenarios(path: &Path, scenarios: &[Scenario]) -> Result<(), BenchError> {
    let json = serde_json::to_vec_pretty(scenarios).expect("scenarios serialize");
    fs::write(path, json).map_err(io_err(path))
}

pub fn load_scenarios(path: &Path) -> Result<Vec<Scenario>, BenchError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| BenchError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// What an editor hands back for scoring.
#[derive(Debug, Clone)]
pub struct EditedScenario {
    pub edited: Image,
    /// Source at the edited image's resolution.
    pub source: Image,
    /// Undilated object masks and background at the edited resolution.
    pub regions: RegionMasks,
    pub fallback: bool,
}

/// Anything that can edit a benchmark scenario.
pub trait ScenarioEditor: Sync {
    fn name(&self) -> &str;
    fn edit(&self, scenario: &Scenario, image: &ManifestImage) -> Result<EditedScenario, String>;
}

/// Runs the full editing pipeline on a scenario.
pub struct AleEditor<'a> {
    pub backend: &'a (dyn DiffusionBackend + Sync),
    pub encoder: &'a (dyn TextEncoder + Sync),
    pub base_config: EditConfig,
}

impl ScenarioEditor for AleEditor<'_> {
    fn name(&self) -> &str {
        "ale"
    }

    fn edit(&self, scenario: &Scenario, image: &ManifestImage) -> Result<EditedScenario, String> {
        let source = Image::open(&image.path).map_err(|e| format!("{}: {e}", image.path.display()))?;
        let paths = scenario
            .objects
            .iter()
            .map(|o| {
                image.objects[o.object_index]
                    .mask
                    .clone()
                    .ok_or_else(|| format!("object `{}` of `{}` has no mask", o.source, image.id))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let raw = paths
            .iter()
            .map(|p| load_mask_png(p).map(|mask| RawMask { mask, confidence: None }))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let request = EditRequest {
            image: source,
            pairs: scenario.encoder_pairs(),
            config: EditConfig {
                seed: scenario.seed,
                edit_type: Some(scenario.edit_type),
                ..self.base_config.clone()
            },
            stripped_prompts: None,
        };
        let mut provider = PathMaskProvider { paths };
        let out = run_edit(&request, self.backend, self.encoder, &mut provider).map_err(|e| e.to_string())?;
        let res = out.image.resolution();
        let set = MaskSet::new(raw, MaskProvenance::File);
        let regions = downsample_pyramid(&set, &[res])
            .remove(&res)
            .expect("requested level");
        Ok(EditedScenario {
            edited: out.image,
            source: out.source_image,
            regions,
            fallback: out.trace.is_fallback(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub workers: usize,
    pub resume: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            resume: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub scenario_id: String,
    pub error: String,
}

/// Mean of each metric over one group; `None` where no report had it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMeans {
    pub group: String,
    pub n: usize,
    pub tels: Option<f64>,
    pub tils: Option<f64>,
    pub editing_performance: Option<f64>,
    pub structure_distance: Option<f64>,
    pub psnr: Option<f64>,
    pub lpips: Option<f64>,
    pub mse: Option<f64>,
    pub ssim: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub overall: GroupMeans,
    pub by_edit_type: Vec<GroupMeans>,
    pub by_k: Vec<GroupMeans>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub total: usize,
    pub skipped: usize,
    pub edited: usize,
    pub failures: Vec<FailureRecord>,
    pub aggregate: Aggregate,
}

fn mean_of(reports: &[&LeakageReport], f: impl Fn(&LeakageReport) -> Option<f64>) -> Option<f64> {
    let vals: Vec<f64> = reports.iter().filter_map(|r| f(r)).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

fn group_means(group: String, reports: &[&LeakageReport]) -> GroupMeans {
    GroupMeans {
        group,
        n: reports.len(),
        tels: mean_of(reports, |r| r.tels),
        tils: mean_of(reports, |r| r.tils),
        editing_performance: mean_of(reports, |r| Some(r.editing_performance)),
        structure_distance: mean_of(reports, |r| r.structure_distance),
        psnr: mean_of(reports, |r| r.psnr),
        lpips: mean_of(reports, |r| r.lpips),
        mse: mean_of(reports, |r| r.mse),
        ssim: mean_of(reports, |r| r.ssim),
    }
}

/// Grouped means. Reports are sorted by scenario id first so the result
/// does not depend on completion order.
pub fn aggregate(reports: &[LeakageReport]) -> Aggregate {
    let mut sorted: Vec<&LeakageReport> = reports.iter().collect();
    sorted.sort_by(|a, b| a.scenario.scenario_id.cmp(&b.scenario.scenario_id));
    let mut by_type: BTreeMap<EditType, Vec<&LeakageReport>> = BTreeMap::new();
    let mut by_k: BTreeMap<usize, Vec<&LeakageReport>> = BTreeMap::new();
    for r in &sorted {
        if let Some(t) = r.scenario.edit_type {
            by_type.entry(t).or_default().push(r);
        }
        by_k.entry(r.scenario.k).or_default().push(r);
    }
    Aggregate {
        overall: group_means("all".into(), &sorted),
        by_edit_type: by_type
            .into_iter()
            .map(|(t, rs)| group_means(format!("type={t}"), &rs))
            .collect(),
        by_k: by_k.into_iter().map(|(k, rs)| group_means(format!("k={k}"), &rs)).collect(),
    }
}

impl Aggregate {
    pub fn rows(&self) -> impl Iterator<Item = &GroupMeans> {
        std::iter::once(&self.overall).chain(&self.by_edit_type).chain(&self.by_k)
    }
}

pub const AGGREGATE_COLUMNS: [&str; 10] = [
    "group",
    "n",
    "tels",
    "tils",
    "editing_performance",
    "structure_distance",
    "psnr",
    "lpips",
    "mse",
    "ssim",
];

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.6}"))
}

pub fn write_aggregate_csv(path: &Path, agg: &Aggregate) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(AGGREGATE_COLUMNS)?;
    for g in agg.rows() {
        w.write_record([
            g.group.clone(),
            g.n.to_string(),
            cell(g.tels),
            cell(g.tils),
            cell(g.editing_performance),
            cell(g.structure_distance),
            cell(g.psnr),
            cell(g.lpips),
            cell(g.mse),
            cell(g.ssim),
        ])?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_failures_csv(path: &Path, failures: &[FailureRecord]) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["scenario_id", "error"])?;
    for f in failures {
        w.write_record([&f.scenario_id, &f.error])?;
    }
    w.flush().map_err(io_err(path))
}

pub fn report_path(out_dir: &Path, scenario_id: &str) -> PathBuf {
    out_dir.join("reports").join(format!("{scenario_id}.json"))
}

fn read_valid_report(path: &Path, scenario_id: &str) -> Option<LeakageReport> {
    let text = fs::read_to_string(path).ok()?;
    let report: LeakageReport = serde_json::from_str(&text).ok()?;
    (report.scenario.scenario_id == scenario_id && report.is_valid()).then_some(report)
}

/// Every parseable report under `<dir>/reports`, sorted by scenario id.
pub fn load_reports(out_dir: &Path) -> Result<Vec<LeakageReport>, BenchError> {
    let dir = out_dir.join("reports");
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut reports = Vec::new();
    for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
        let path = entry.map_err(io_err(&dir))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let report: LeakageReport = serde_json::from_str(&text).map_err(|e| BenchError::Parse {
            path: path.clone(),
            message: e.to_string(),
        })?;
        reports.push(report);
    }
    reports.sort_by(|a, b| a.scenario.scenario_id.cmp(&b.scenario.scenario_id));
    Ok(reports)
}

fn score_scenario(
    scenario: &Scenario,
    manifest: &Manifest,
    editor: &dyn ScenarioEditor,
    scorer: &(dyn SimilarityScorer + Sync),
    adapters: &MetricAdapters<'_>,
) -> Result<LeakageReport, String> {
    let image = manifest
        .image(&scenario.image_id)
        .ok_or_else(|| format!("image `{}` is not in the manifest", scenario.image_id))?;
    let edited = editor.edit(scenario, image)?;
    let targets = scenario.target_prompts();
    let joined = join_prompts(targets.iter().map(String::as_str));
    let meta = ScenarioMeta {
        scenario_id: scenario.scenario_id.clone(),
        image_id: scenario.image_id.clone(),
        edit_type: Some(scenario.edit_type),
        k: scenario.k,
        seed: scenario.seed,
    };
    evaluate(
        &EvalInput {
            edited: &edited.edited,
            source: &edited.source,
            regions: &edited.regions,
            targets: &targets,
            joined_target: &joined,
            fallback: edited.fallback,
        },
        meta,
        scorer,
        adapters,
    )
    .map_err(|e| e.to_string())
}

/// Edits and scores every scenario, persisting one report per scenario.
///
/// Scenarios with an existing valid report are skipped when resuming.
/// Failures are recorded and excluded from the means. Workers pull
/// scenarios from a shared counter; the calling thread is the only writer.
pub fn run_benchmark(
    scenarios: &[Scenario],
    manifest: &Manifest,
    editor: &dyn ScenarioEditor,
    scorer: &(dyn SimilarityScorer + Sync),
    adapters: &MetricAdapters<'_>,
    out_dir: &Path,
    options: &RunOptions,
) -> Result<RunSummary, BenchError> {
    let reports_dir = out_dir.join("reports");
    fs::create_dir_all(&reports_dir).map_err(io_err(&reports_dir))?;

    let mut done: BTreeMap<String, LeakageReport> = BTreeMap::new();
    let mut pending: Vec<&Scenario> = Vec::new();
    for s in scenarios {
        let existing = options
            .resume
            .then(|| read_valid_report(&report_path(out_dir, &s.scenario_id), &s.scenario_id))
            .flatten();
        match existing {
            Some(r) => {
                done.insert(s.scenario_id.clone(), r);
            }
            None => pending.push(s),
        }
    }
    let skipped = done.len();

    let next = AtomicUsize::new(0);
    let workers = options.workers.max(1).min(pending.len().max(1));
    let (tx, rx) = mpsc::channel::<(usize, Result<LeakageReport, String>)>();
    let mut failures = Vec::new();
    let mut edited = 0;
    let mut write_error = None;
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, pending) = (&next, &pending);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(s) = pending.get(i) else { break };
                let result = score_scenario(s, manifest, editor, scorer, adapters);
                if tx.send((i, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (i, result) in rx {
            let s = pending[i];
            match result {
                Ok(report) => {
                    let path = report_path(out_dir, &s.scenario_id);
                    let json = serde_json::to_vec_pretty(&report).expect("report serializes");
                    if let Err(e) = fs::write(&path, json) {
                        write_error.get_or_insert(BenchError::Io { path, source: e });
                        continue;
                    }
                    edited += 1;
                    done.insert(s.scenario_id.clone(), report);
                }
                Err(error) => failures.push(FailureRecord {
                    scenario_id: s.scenario_id.clone(),
                    error,
                }),
            }
        }
    });
    if let Some(e) = write_error {
        return Err(e);
    }
    failures.sort_by(|a, b| a.scenario_id.cmp(&b.scenario_id));

    let reports: Vec<LeakageReport> = done.into_values().collect();
    let agg = aggregate(&reports);
    write_aggregate_csv(&out_dir.join("aggregate.csv"), &agg)?;
    write_failures_csv(&out_dir.join("failures.csv"), &failures)?;
    Ok(RunSummary {
        total: scenarios.len(),
        skipped,
        edited,
        failures,
        aggregate: agg,
    })
}

/// Per-type and per-K tables of the aggregate.
pub fn format_tables(agg: &Aggregate) -> String {
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
    let table = |title: &str, rows: &[&GroupMeans]| {
        let mut s = format!(
            "{title}\n{:<24} {:>5} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
            "group", "n", "TELS", "TILS", "EditPerf", "PSNR", "SSIM", "MSE"
        );
        for g in rows {
            s.push_str(&format!(
                "{:<24} {:>5} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
                g.group,
                g.n,
                fmt(g.tels),
                fmt(g.tils),
                fmt(g.editing_performance),
                fmt(g.psnr),
                fmt(g.ssim.map(|v| v * 100.0)),
                fmt(g.mse.map(|v| v * 1e4)),
            ));
        }
        s
    };
    let mut by_type: Vec<&GroupMeans> = agg.by_edit_type.iter().collect();
    by_type.push(&agg.overall);
    let mut by_k: Vec<&GroupMeans> = agg.by_k.iter().collect();
    by_k.push(&agg.overall);
    format!(
        "{}\n{}\n(SSIM ×10², MSE ×10⁴)\n",
        table("By edit type", &by_type),
        table("By number of edited objects", &by_k)
    )
}
