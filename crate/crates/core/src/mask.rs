//! Object and background masks: acquisition, dilation, overlap resolution
//! and per-resolution pyramids.
//!
//! At every resolution the object masks and the background form a
//! partition: each pixel belongs to exactly one of them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::tensor::{Image, Resolution};

/// Largest accepted dilation ratio.
pub const MAX_DILATION_RATIO: f64 = 0.25;

#[derive(Debug, thiserror::Error)]
pub enum MaskError {
    #[error("mask {index} is {got}, expected {expected}")]
    MaskShape {
        index: usize,
        expected: Resolution,
        got: Resolution,
    },
    #[error("mask file for object {index} not found: {path}")]
    MissingMaskFile { index: usize, path: PathBuf },
    #[error("failed to read mask {path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("segmenter unavailable: {0}")]
    SegmenterUnavailable(String),
    #[error("provider returned {got} masks for {expected} objects")]
    CountMismatch { expected: usize, got: usize },
    #[error("dilation ratio {0} outside [0, {MAX_DILATION_RATIO}]")]
    InvalidDilation(f64),
}

/// Binary mask, `1` = foreground.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn empty(resolution: Resolution) -> Self {
        Self {
            width: resolution.width,
            height: resolution.height,
            data: vec![0; resolution.pixels()],
        }
    }

    pub fn full(resolution: Resolution) -> Self {
        Self {
            width: resolution.width,
            height: resolution.height,
            data: vec![1; resolution.pixels()],
        }
    }

    pub fn from_fn(resolution: Resolution, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::empty(resolution);
        for y in 0..resolution.height {
            for x in 0..resolution.width {
                m.data[y * resolution.width + x] = u8::from(f(y, x));
            }
        }
        m
    }

    /// Any nonzero value counts as foreground.
    pub fn from_values(resolution: Resolution, values: &[u8]) -> Option<Self> {
        (values.len() == resolution.pixels()).then(|| Self {
            width: resolution.width,
            height: resolution.height,
            data: values.iter().map(|&v| u8::from(v != 0)).collect(),
        })
    }

    pub fn from_gray(img: &image::GrayImage) -> Self {
        let (w, h) = img.dimensions();
        Self::from_values(Resolution::new(h as usize, w as usize), img.as_raw()).expect("gray buffer matches dimensions")
    }

    pub fn save_png(&self, path: &Path) -> image::ImageResult<()> {
        self.to_gray().save_with_format(path, image::ImageFormat::Png)
    }

    pub fn to_gray(&self) -> image::GrayImage {
        image::GrayImage::from_raw(
            self.width as u32,
            self.height as u32,
            self.data.iter().map(|&v| v * 255).collect(),
        )
        .expect("mask buffer matches dimensions")
    }

    pub fn resolution(&self) -> Resolution {
        Resolution::new(self.height, self.width)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn at(&self, p: usize) -> bool {
        self.data[p] != 0
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = u8::from(v);
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn complement(&self) -> Mask {
        Mask {
            data: self.data.iter().map(|&v| 1 - v).collect(),
            ..*self
        }
    }

    /// `self ⊇ other`.
    pub fn contains(&self, other: &Mask) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| a >= b)
    }

    /// Mask as `f32` weights, one per pixel.
    pub fn weights(&self) -> Vec<f32> {
        self.data.iter().map(|&v| f32::from(v)).collect()
    }
}

/// Object masks and background at one resolution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionMasks {
    pub objects: Vec<Mask>,
    pub background: Mask,
}

impl RegionMasks {
    pub fn resolution(&self) -> Resolution {
        self.background.resolution()
    }

    /// Region index of pixel `p`: `Some(i)` for object `i`, `None` for
    /// background. Returns `Err(p)` if the masks do not partition `p`.
    pub fn label(&self, p: usize) -> Result<Option<usize>, usize> {
        let mut found = None;
        let mut hits = usize::from(self.background.at(p));
        for (i, m) in self.objects.iter().enumerate() {
            if m.at(p) {
                hits += 1;
                found = Some(i);
            }
        }
        if hits == 1 {
            Ok(found)
        } else {
            Err(p)
        }
    }

    /// First pixel violating the partition property, if any.
    pub fn partition_violation(&self) -> Option<usize> {
        let res = self.resolution();
        if self.objects.iter().any(|m| m.resolution() != res) {
            return Some(0);
        }
        (0..res.pixels()).find(|&p| self.label(p).is_err())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskProvenance {
    File,
    Segmenter,
    FallbackNone,
}

/// Masks for one edit at image resolution plus downsampled copies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSet {
    pub object_masks: Vec<Mask>,
    pub background: Mask,
    pub confidences: Vec<Option<f32>>,
    pub pyramid: BTreeMap<Resolution, RegionMasks>,
    pub dilation_radius_px: usize,
    pub provenance: MaskProvenance,
}

impl MaskSet {
    /// Resolves overlaps and derives the background. No dilation, empty
    /// pyramid.
    pub fn new(raw: Vec<RawMask>, provenance: MaskProvenance) -> Self {
        let confidences: Vec<Option<f32>> = raw.iter().map(|r| r.confidence).collect();
        let masks: Vec<Mask> = raw.into_iter().map(|r| r.mask).collect();
        let object_masks = disjointify(&masks, &confidences);
        let background = build_background_mask(&object_masks);
        Self {
            object_masks,
            background,
            confidences,
            pyramid: BTreeMap::new(),
            dilation_radius_px: 0,
            provenance,
        }
    }

    pub fn num_objects(&self) -> usize {
        self.object_masks.len()
    }

    pub fn resolution(&self) -> Resolution {
        self.background.resolution()
    }

    pub fn full_resolution(&self) -> RegionMasks {
        RegionMasks {
            objects: self.object_masks.clone(),
            background: self.background.clone(),
        }
    }

    pub fn level(&self, res: Resolution) -> Option<&RegionMasks> {
        self.pyramid.get(&res)
    }
}

/// Dilates every object mask at image resolution, re-resolves overlaps,
/// recomputes the background and fills the pyramid.
pub fn prepare_masks(set: &MaskSet, dilation_ratio: f64, resolutions: &[Resolution]) -> Result<MaskSet, MaskError> {
    if !(0.0..=MAX_DILATION_RATIO).contains(&dilation_ratio) {
        return Err(MaskError::InvalidDilation(dilation_ratio));
    }
    let dilated: Vec<Mask> = set.object_masks.iter().map(|m| dilate_mask(m, dilation_ratio)).collect();
    let object_masks = disjointify(&dilated, &set.confidences);
    let background = build_background_mask(&object_masks);
    let mut out = MaskSet {
        object_masks,
        background,
        confidences: set.confidences.clone(),
        pyramid: BTreeMap::new(),
        dilation_radius_px: dilation_radius(dilation_ratio, set.resolution()),
        provenance: set.provenance,
    };
    out.pyramid = downsample_pyramid(&out, resolutions);
    Ok(out)
}

/// Square-element radius for a dilation ratio: `⌊ratio · min(H, W)⌋`.
pub fn dilation_radius(ratio: f64, res: Resolution) -> usize {
    let side = res.height.min(res.width) as f64;
    (ratio * side + 1e-9).floor().max(0.0) as usize
}

/// Binary dilation with a square structuring element of radius
/// `dilation_radius(ratio, ..)`, clipped at the borders.
pub fn dilate_mask(mask: &Mask, ratio: f64) -> Mask {
    let r = dilation_radius(ratio.clamp(0.0, MAX_DILATION_RATIO), mask.resolution());
    dilate_square(mask, r)
}

/// Separable max filter: a square element is the product of two 1-D
/// windows.
pub fn dilate_square(mask: &Mask, radius: usize) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let (h, w) = (mask.height, mask.width);
    let mut horizontal = vec![0u8; h * w];
    for y in 0..h {
        let row = &mask.data[y * w..(y + 1) * w];
        let out = &mut horizontal[y * w..(y + 1) * w];
        window_max(row, radius, out);
    }
    let mut data = vec![0u8; h * w];
    let mut column = vec![0u8; h];
    let mut column_out = vec![0u8; h];
    for x in 0..w {
        for y in 0..h {
            column[y] = horizontal[y * w + x];
        }
        window_max(&column, radius, &mut column_out);
        for y in 0..h {
            data[y * w + x] = column_out[y];
        }
    }
    Mask { width: w, height: h, data }
}

/// `out[i] = max(line[i-r ..= i+r])` for binary lines, via prefix counts.
fn window_max(line: &[u8], radius: usize, out: &mut [u8]) {
    let n = line.len();
    let mut prefix = vec![0usize; n + 1];
    for (i, &v) in line.iter().enumerate() {
        prefix[i + 1] = prefix[i] + usize::from(v);
    }
    for (i, o) in out.iter_mut().enumerate() {
        let lo = i.saturating_sub(radius);
        let hi = (i + radius + 1).min(n);
        *o = u8::from(prefix[hi] > prefix[lo]);
    }
}

/// `1 − ⋃ masks`.
pub fn build_background_mask(object_masks: &[Mask]) -> Mask {
    let first = object_masks.first().expect("at least one object mask");
    let mut union = Mask::empty(first.resolution());
    for m in object_masks {
        assert_eq!(m.resolution(), first.resolution(), "object masks differ in shape");
        union.data.iter_mut().zip(&m.data).for_each(|(u, &v)| *u |= v);
    }
    union.complement()
}

/// Resolves overlaps: a pixel claimed by several masks goes to the one with
/// the highest confidence; ties and missing confidences go to the lowest
/// index.
pub fn disjointify(masks: &[Mask], confidences: &[Option<f32>]) -> Vec<Mask> {
    let Some(first) = masks.first() else {
        return Vec::new();
    };
    let res = first.resolution();
    let mut out: Vec<Mask> = masks.iter().map(|_| Mask::empty(res)).collect();
    let conf = |i: usize| confidences.get(i).copied().flatten().unwrap_or(f32::NEG_INFINITY);
    for p in 0..res.pixels() {
        let mut winner: Option<usize> = None;
        for (i, m) in masks.iter().enumerate() {
            if m.at(p) && winner.map_or(true, |w| conf(i) > conf(w)) {
                winner = Some(i);
            }
        }
        if let Some(w) = winner {
            out[w].data[p] = 1;
        }
    }
    out
}

/// Per-axis area weights mapping `src` cells onto `dst` cells:
/// `weights[o]` lists `(source index, covered fraction of o)`.
pub(crate) fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let (lo, hi) = (o as f64 * scale, (o + 1) as f64 * scale);
            let mut cells = Vec::new();
            let mut i = lo.floor() as usize;
            while (i as f64) < hi && i < src {
                let overlap = (hi.min((i + 1) as f64) - lo.max(i as f64)).max(0.0);
                if overlap > 0.0 {
                    cells.push((i, overlap / scale));
                }
                i += 1;
            }
            cells
        })
        .collect()
}

/// Area-averaged coverage of `mask` at `res`, values in `[0, 1]`.
pub fn area_coverage(mask: &Mask, res: Resolution) -> Vec<f64> {
    let rows = area_weights(mask.height, res.height);
    let cols = area_weights(mask.width, res.width);
    let mut out = vec![0.0; res.pixels()];
    for (oy, wy) in rows.iter().enumerate() {
        for (ox, wx) in cols.iter().enumerate() {
            let mut acc = 0.0;
            for &(sy, fy) in wy {
                for &(sx, fx) in wx {
                    if mask.get(sy, sx) {
                        acc += fy * fx;
                    }
                }
            }
            out[oy * res.width + ox] = acc;
        }
    }
    out
}

/// Area-averages each object mask to `res`, thresholds at 0.5.
pub fn downsample_mask(mask: &Mask, res: Resolution) -> Mask {
    if mask.resolution() == res {
        return mask.clone();
    }
    let cov = area_coverage(mask, res);
    Mask {
        width: res.width,
        height: res.height,
        data: cov.iter().map(|&c| u8::from(c >= 0.5 - 1e-12)).collect(),
    }
}

/// Builds the partition at each requested resolution.
pub fn downsample_pyramid(set: &MaskSet, resolutions: &[Resolution]) -> BTreeMap<Resolution, RegionMasks> {
    resolutions
        .iter()
        .map(|&res| {
            let down: Vec<Mask> = set.object_masks.iter().map(|m| downsample_mask(m, res)).collect();
            let objects = disjointify(&down, &set.confidences);
            let background = build_background_mask(&objects);
            (res, RegionMasks { objects, background })
        })
        .collect()
}

/// One mask from a provider, with the segmenter's confidence if known.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMask {
    pub mask: Mask,
    pub confidence: Option<f32>,
}

/// Tells the pipeline to edit without region masking and background
/// blending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FallbackSignal {
    pub failed_objects: Vec<usize>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MaskOutcome {
    Masks(MaskSet),
    Fallback(FallbackSignal),
}

impl MaskOutcome {
    pub fn provenance(&self) -> MaskProvenance {
        match self {
            MaskOutcome::Masks(set) => set.provenance,
            MaskOutcome::Fallback(_) => MaskProvenance::FallbackNone,
        }
    }
}

/// Source of per-object masks.
pub trait MaskProvider {
    fn provenance(&self) -> MaskProvenance;

    /// One mask per prompt, in prompt order. An empty mask means the object
    /// could not be segmented; transport failures are errors.
    fn masks(&mut self, image: &Image, prompts: &[String]) -> Result<Vec<RawMask>, MaskError>;
}

/// Loads masks for every object and resolves overlaps, or signals fallback
/// if any object came back empty.
pub fn acquire_masks(
    image: &Image,
    source_prompts: &[String],
    provider: &mut dyn MaskProvider,
) -> Result<MaskOutcome, MaskError> {
    let raw = provider.masks(image, source_prompts)?;
    if raw.len() != source_prompts.len() {
        return Err(MaskError::CountMismatch {
            expected: source_prompts.len(),
            got: raw.len(),
        });
    }
    let expected = image.resolution();
    for (i, r) in raw.iter().enumerate() {
        if r.mask.resolution() != expected {
            return Err(MaskError::MaskShape {
                index: i + 1,
                expected,
                got: r.mask.resolution(),
            });
        }
    }
    let failed: Vec<usize> = raw
        .iter()
        .enumerate()
        .filter(|(_, r)| r.mask.is_empty())
        .map(|(i, _)| i + 1)
        .collect();
    if !failed.is_empty() {
        let names: Vec<&str> = failed.iter().map(|&i| source_prompts[i - 1].as_str()).collect();
        return Ok(MaskOutcome::Fallback(FallbackSignal {
            reason: format!("segmentation returned an empty mask for {names:?}"),
            failed_objects: failed,
        }));
    }
    Ok(MaskOutcome::Masks(MaskSet::new(raw, provider.provenance())))
}

/// Masks from `<dir>/<scenario_id>_obj<i>.png`, `i` starting at 1.
#[derive(Debug, Clone)]
pub struct FileMaskProvider {
    dir: PathBuf,
    scenario_id: String,
}

impl FileMaskProvider {
    pub fn new(dir: impl Into<PathBuf>, scenario_id: impl Into<String>) -> Self {
        Self {
            dir: dir.into(),
            scenario_id: scenario_id.into(),
        }
    }

    pub fn path_for(&self, index: usize) -> PathBuf {
        self.dir.join(format!("{}_obj{index}.png", self.scenario_id))
    }
}

pub fn load_mask_png(path: &Path) -> Result<Mask, MaskError> {
    let img = image::open(path).map_err(|source| MaskError::Decode {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(Mask::from_gray(&img.to_luma8()))
}

/// Decodes an in-memory PNG into a mask; any nonzero luma is foreground.
pub fn decode_mask_png(bytes: &[u8]) -> image::ImageResult<Mask> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?;
    Ok(Mask::from_gray(&img.to_luma8()))
}

impl MaskProvider for FileMaskProvider {
    fn provenance(&self) -> MaskProvenance {
        MaskProvenance::File
    }

    fn masks(&mut self, _image: &Image, prompts: &[String]) -> Result<Vec<RawMask>, MaskError> {
        (1..=prompts.len())
            .map(|i| {
                let path = self.path_for(i);
                if !path.exists() {
                    return Err(MaskError::MissingMaskFile { index: i, path });
                }
                Ok(RawMask {
                    mask: load_mask_png(&path)?,
                    confidence: None,
                })
            })
            .collect()
    }
}

/// Masks from an explicit list of files, in object order.
#[derive(Debug, Clone)]
pub struct PathMaskProvider {
    pub paths: Vec<PathBuf>,
}

impl MaskProvider for PathMaskProvider {
    fn provenance(&self) -> MaskProvenance {
        MaskProvenance::File
    }

    fn masks(&mut self, _image: &Image, prompts: &[String]) -> Result<Vec<RawMask>, MaskError> {
        if self.paths.len() != prompts.len() {
            return Err(MaskError::CountMismatch {
                expected: prompts.len(),
                got: self.paths.len(),
            });
        }
        self.paths
            .iter()
            .enumerate()
            .map(|(i, path)| {
                if !path.exists() {
                    return Err(MaskError::MissingMaskFile {
                        index: i + 1,
                        path: path.clone(),
                    });
                }
                Ok(RawMask {
                    mask: load_mask_png(path)?,
                    confidence: None,
                })
            })
            .collect()
    }
}

/// Masks already in memory.
#[derive(Debug, Clone)]
pub struct StaticMaskProvider {
    pub masks: Vec<RawMask>,
    pub provenance: MaskProvenance,
}

impl StaticMaskProvider {
    pub fn new(masks: Vec<Mask>) -> Self {
        Self {
            masks: masks.into_iter().map(|mask| RawMask { mask, confidence: None }).collect(),
            provenance: MaskProvenance::File,
        }
    }
}

impl MaskProvider for StaticMaskProvider {
    fn provenance(&self) -> MaskProvenance {
        self.provenance
    }

    fn masks(&mut self, _image: &Image, _prompts: &[String]) -> Result<Vec<RawMask>, MaskError> {
        Ok(self.masks.clone())
    }
}

/// Reply from a text-prompted segmentation service.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentResponse {
    pub mask: Mask,
    pub confidence: f32,
}

/// Transport to a segmentation service: `(image bytes, phrase) → mask`.
/// Errors are transport failures, not segmentation failures.
pub trait SegmenterTransport {
    fn segment(&mut self, image_png: &[u8], phrase: &str) -> Result<SegmentResponse, String>;
}

/// Provider that queries a segmentation service once per object prompt.
pub struct SegmenterClient<T: SegmenterTransport> {
    transport: T,
}

impl<T: SegmenterTransport> SegmenterClient<T> {
    pub fn new(transport: T) -> Self {
        Self { transport }
    }
}

pub fn encode_png(image: &Image) -> Vec<u8> {
    let mut bytes = Vec::new();
    image
        .to_rgb8()
        .write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .expect("in-memory png encoding");
    bytes
}

impl<T: SegmenterTransport> MaskProvider for SegmenterClient<T> {
    fn provenance(&self) -> MaskProvenance {
        MaskProvenance::Segmenter
    }

    fn masks(&mut self, image: &Image, prompts: &[String]) -> Result<Vec<RawMask>, MaskError> {
        let png = encode_png(image);
        prompts
            .iter()
            .map(|phrase| {
                let resp = self
                    .transport
                    .segment(&png, phrase)
                    .map_err(MaskError::SegmenterUnavailable)?;
                Ok(RawMask {
                    mask: resp.mask,
                    confidence: Some(resp.confidence.clamp(0.0, 1.0)),
                })
            })
            .collect()
    }
}
