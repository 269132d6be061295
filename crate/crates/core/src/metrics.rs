//! Leakage scores and background-preservation metrics.
//!
//! Region scoring zero-masks the image (`x ⊙ m`) rather than cropping, and
//! all similarity scores are on a 0–100 scale.

use serde::{Deserialize, Serialize};

use crate::config::EditType;
use crate::mask::{Mask, RegionMasks};
use crate::tensor::Image;

/// PSNR reported for identical backgrounds.
pub const PSNR_CAP: f64 = 99.0;
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("background mask is empty")]
    EmptyBackground,
    #[error("no target prompts")]
    NoObjects,
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Image–text similarity on a 0–100 scale.
pub trait SimilarityScorer {
    fn name(&self) -> &str;
    fn score(&self, region: &Image, text: &str) -> f64;
}

/// Returns the same score for every input.
#[derive(Debug, Clone, Copy)]
pub struct ConstantScorer(pub f64);

impl SimilarityScorer for ConstantScorer {
    fn name(&self) -> &str {
        "constant"
    }

    fn score(&self, _region: &Image, _text: &str) -> f64 {
        self.0
    }
}

/// Learned perceptual distance between two images over the background.
pub trait PerceptualDistance {
    fn distance(&self, edited: &Image, source: &Image, background: &Mask) -> f64;
}

/// Structure distance between source and edited images.
pub trait StructureDistance {
    fn distance(&self, edited: &Image, source: &Image) -> f64;
}

/// Optional metric adapters; absent adapters yield absent scores.
#[derive(Default)]
pub struct MetricAdapters<'a> {
    pub lpips: Option<&'a (dyn PerceptualDistance + Sync)>,
    pub structure: Option<&'a (dyn StructureDistance + Sync)>,
}

fn check_mask(img: &Image, mask: &Mask) -> Result<(), MetricsError> {
    if img.resolution() != mask.resolution() {
        return Err(MetricsError::Shape(format!("image {} vs mask {}", img.resolution(), mask.resolution())));
    }
    Ok(())
}

/// Mean over targets of the score of the background-masked image.
pub fn tels(
    edited: &Image,
    regions: &RegionMasks,
    targets: &[String],
    scorer: &dyn SimilarityScorer,
) -> Result<f64, MetricsError> {
    if targets.is_empty() {
        return Err(MetricsError::NoObjects);
    }
    check_mask(edited, &regions.background)?;
    if regions.background.is_empty() {
        return Err(MetricsError::EmptyBackground);
    }
    let bg = edited.masked(&regions.background.weights());
    let sum: f64 = targets.iter().map(|t| scorer.score(&bg, t)).sum();
    Ok(sum / targets.len() as f64)
}

/// Mean over ordered pairs `i ≠ j` of the score of object `j`'s region
/// against target `i`. Absent for a single object.
pub fn tils(
    edited: &Image,
    regions: &RegionMasks,
    targets: &[String],
    scorer: &dyn SimilarityScorer,
) -> Result<Option<f64>, MetricsError> {
    let k = targets.len();
    if k == 0 {
        return Err(MetricsError::NoObjects);
    }
    if regions.objects.len() != k {
        return Err(MetricsError::Shape(format!("{} masks for {k} targets", regions.objects.len())));
    }
    if k == 1 {
        return Ok(None);
    }
    let mut sum = 0.0;
    for (j, mask) in regions.objects.iter().enumerate() {
        check_mask(edited, mask)?;
        let region = edited.masked(&mask.weights());
        for (i, t) in targets.iter().enumerate() {
            if i != j {
                sum += scorer.score(&region, t);
            }
        }
    }
    Ok(Some(sum / (k * (k - 1)) as f64))
}

pub fn editing_performance(edited: &Image, joined_target: &str, scorer: &dyn SimilarityScorer) -> f64 {
    scorer.score(edited, joined_target)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundScores {
    pub psnr: f64,
    pub ssim: f64,
    pub mse: f64,
}

/// PSNR, SSIM and MSE over background pixels, for images in `[0, 1]`.
pub fn background_preservation(edited: &Image, source: &Image, background: &Mask) -> Result<BackgroundScores, MetricsError> {
    if edited.resolution() != source.resolution() {
        return Err(MetricsError::Shape(format!("edited {} vs source {}", edited.resolution(), source.resolution())));
    }
    check_mask(edited, background)?;
    let count = background.count();
    if count == 0 {
        return Err(MetricsError::EmptyBackground);
    }
    let mut sq = 0.0;
    for c in 0..Image::CHANNELS {
        let (a, b) = (edited.plane(c), source.plane(c));
        for p in (0..a.len()).filter(|&p| background.at(p)) {
            let d = f64::from(a[p]) - f64::from(b[p]);
            sq += d * d;
        }
    }
    let mse = sq / (count * Image::CHANNELS) as f64;
    let psnr = if mse == 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    };
    Ok(BackgroundScores {
        psnr,
        ssim: masked_ssim(edited, source, background),
        mse,
    })
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let g: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// SSIM with Gaussian-weighted local statistics that only draw on
/// background pixels, averaged over background pixels and channels.
fn masked_ssim(a: &Image, b: &Image, mask: &Mask) -> f64 {
    let g = gaussian_window();
    let r = (SSIM_WINDOW / 2) as isize;
    let (w, h) = (a.width() as isize, a.height() as isize);
    let mut total = 0.0;
    let mut n = 0usize;
    for c in 0..Image::CHANNELS {
        let (pa, pb) = (a.plane(c), b.plane(c));
        for y in 0..h {
            for x in 0..w {
                if !mask.at((y * w + x) as usize) {
                    continue;
                }
                let (mut sw, mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in -r..=r {
                    let yy = y + dy;
                    if yy < 0 || yy >= h {
                        continue;
                    }
                    for dx in -r..=r {
                        let xx = x + dx;
                        if xx < 0 || xx >= w {
                            continue;
                        }
                        let p = (yy * w + xx) as usize;
                        if !mask.at(p) {
                            continue;
                        }
                        let wt = g[(dy + r) as usize] * g[(dx + r) as usize];
                        let (va, vb) = (f64::from(pa[p]), f64::from(pb[p]));
                        sw += wt;
                        sa += wt * va;
                        sb += wt * vb;
                        saa += wt * va * va;
                        sbb += wt * vb * vb;
                        sab += wt * va * vb;
                    }
                }
                let (ma, mb) = (sa / sw, sb / sw);
                let va = saa / sw - ma * ma;
                let vb = sbb / sw - mb * mb;
                let cov = sab / sw - ma * mb;
                total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
                n += 1;
            }
        }
    }
    total / n as f64
}

/// Identifies the edit a report belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMeta {
    pub scenario_id: String,
    pub image_id: String,
    pub edit_type: Option<EditType>,
    pub k: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub scenario: ScenarioMeta,
    /// Absent when the background is empty.
    pub tels: Option<f64>,
    /// Absent for a single object.
    pub tils: Option<f64>,
    pub editing_performance: f64,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub mse: Option<f64>,
    pub lpips: Option<f64>,
    pub structure_distance: Option<f64>,
    pub fallback: bool,
}

impl LeakageReport {
    pub fn is_valid(&self) -> bool {
        let finite = |v: Option<f64>| v.map_or(true, f64::is_finite);
        self.editing_performance.is_finite()
            && [self.tels, self.tils, self.psnr, self.ssim, self.mse, self.lpips, self.structure_distance]
                .into_iter()
                .all(finite)
            && (self.tils.is_none() == (self.scenario.k == 1) || self.scenario.k == 0)
    }
}

/// Inputs to [`evaluate`].
pub struct EvalInput<'a> {
    pub edited: &'a Image,
    pub source: &'a Image,
    /// Object masks and background at the edited image's resolution.
    pub regions: &'a RegionMasks,
    pub targets: &'a [String],
    pub joined_target: &'a str,
    pub fallback: bool,
}

pub fn evaluate(
    input: &EvalInput<'_>,
    meta: ScenarioMeta,
    scorer: &dyn SimilarityScorer,
    adapters: &MetricAdapters<'_>,
) -> Result<LeakageReport, MetricsError> {
    let tels = match tels(input.edited, input.regions, input.targets, scorer) {
        Ok(v) => Some(v),
        Err(MetricsError::EmptyBackground) => None,
        Err(e) => return Err(e),
    };
    let tils = tils(input.edited, input.regions, input.targets, scorer)?;
    let bg = match background_preservation(input.edited, input.source, &input.regions.background) {
        Ok(v) => Some(v),
        Err(MetricsError::EmptyBackground) => None,
        Err(e) => return Err(e),
    };
    Ok(LeakageReport {
        scenario: meta,
        tels,
        tils,
        editing_performance: editing_performance(input.edited, input.joined_target, scorer),
        psnr: bg.map(|b| b.psnr),
        ssim: bg.map(|b| b.ssim),
        mse: bg.map(|b| b.mse),
        lpips: adapters
            .lpips
            .map(|a| a.distance(input.edited, input.source, &input.regions.background)),
        structure_distance: adapters.structure.map(|a| a.distance(input.edited, input.source)),
        fallback: input.fallback,
    })
}
