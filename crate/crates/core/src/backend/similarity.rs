//! Deterministic stand-in for an image–text similarity model.
//!
//! An image region is summarised by the mean and spread of its visible
//! (non-black) pixels per channel. A phrase maps to the same feature space:
//! known color words give the mean, other words hash to a color and a
//! texture amplitude. The score is `50 * (1 + cos)` between the centered
//! feature vectors, so it lies in `[0, 100]`.

use crate::metrics::SimilarityScorer;
use crate::seed::stable_hash;
use crate::tensor::Image;

const NEUTRAL_MEAN: f64 = 0.5;
const NEUTRAL_SPREAD: f64 = 0.08;
const STOPWORDS: &[&str] = &["a", "an", "the", "and", "of", "made", "colored", "photo", "with"];

const PALETTE: &[(&str, [f64; 3])] = &[
    ("red", [0.9, 0.1, 0.1]),
    ("green", [0.1, 0.8, 0.2]),
    ("blue", [0.1, 0.2, 0.9]),
    ("yellow", [0.9, 0.85, 0.1]),
    ("orange", [0.9, 0.55, 0.1]),
    ("purple", [0.55, 0.15, 0.75]),
    ("pink", [0.9, 0.5, 0.7]),
    ("brown", [0.5, 0.3, 0.15]),
    ("black", [0.1, 0.1, 0.1]),
    ("white", [0.9, 0.9, 0.9]),
    ("gray", [0.5, 0.5, 0.5]),
    ("grey", [0.5, 0.5, 0.5]),
    ("gold", [0.85, 0.7, 0.2]),
    ("silver", [0.75, 0.75, 0.8]),
    ("cyan", [0.1, 0.85, 0.9]),
];

#[derive(Debug, Clone, Copy, Default)]
pub struct MockSimilarity;

fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty() && !STOPWORDS.contains(w))
        .map(str::to_string)
        .collect()
}

fn hashed_unit(word: &str, salt: &str) -> [f64; 3] {
    let h = stable_hash(&[b"mock-similarity", salt.as_bytes(), word.as_bytes()]);
    let f = |shift: u32| ((h >> shift) & 0xFFFF) as f64 / 65535.0;
    [f(0), f(16), f(32)]
}

/// Target mean color and per-channel spread described by `text`.
pub fn text_appearance(text: &str) -> ([f64; 3], [f64; 3]) {
    let ws = words(text);
    let colors: Vec<[f64; 3]> = ws
        .iter()
        .filter_map(|w| PALETTE.iter().find(|(name, _)| name == w).map(|(_, c)| *c))
        .collect();
    let others: Vec<&String> = ws
        .iter()
        .filter(|w| !PALETTE.iter().any(|(name, _)| name == w))
        .collect();
    let mean_of = |vs: &[[f64; 3]]| {
        let mut m = [0.0; 3];
        for v in vs {
            for c in 0..3 {
                m[c] += v[c] / vs.len() as f64;
            }
        }
        m
    };
    let mean = if !colors.is_empty() {
        mean_of(&colors)
    } else if !others.is_empty() {
        let hashed: Vec<[f64; 3]> = others.iter().map(|w| hashed_unit(w, "color")).collect();
        let m = mean_of(&hashed);
        [0.15 + 0.7 * m[0], 0.15 + 0.7 * m[1], 0.15 + 0.7 * m[2]]
    } else {
        [NEUTRAL_MEAN; 3]
    };
    let spread = if others.is_empty() {
        [NEUTRAL_SPREAD; 3]
    } else {
        let hashed: Vec<[f64; 3]> = others.iter().map(|w| hashed_unit(w, "texture")).collect();
        let m = mean_of(&hashed);
        [0.02 + 0.08 * m[0], 0.02 + 0.08 * m[1], 0.02 + 0.08 * m[2]]
    };
    (mean, spread)
}

fn text_features(text: &str) -> [f64; 6] {
    let (mean, spread) = text_appearance(text);
    [
        mean[0] - NEUTRAL_MEAN,
        mean[1] - NEUTRAL_MEAN,
        mean[2] - NEUTRAL_MEAN,
        spread[0] - NEUTRAL_SPREAD,
        spread[1] - NEUTRAL_SPREAD,
        spread[2] - NEUTRAL_SPREAD,
    ]
}

/// Features of the visible pixels, or `None` when the region is all black.
fn image_features(img: &Image) -> Option<[f64; 6]> {
    let n = img.width() * img.height();
    let visible: Vec<usize> = (0..n)
        .filter(|&p| (0..3).any(|c| img.plane(c)[p] != 0.0))
        .collect();
    if visible.is_empty() {
        return None;
    }
    let mut f = [0.0; 6];
    for c in 0..3 {
        let plane = img.plane(c);
        let mean = visible.iter().map(|&p| plane[p] as f64).sum::<f64>() / visible.len() as f64;
        let var = visible
            .iter()
            .map(|&p| (plane[p] as f64 - mean).powi(2))
            .sum::<f64>()
            / visible.len() as f64;
        f[c] = mean - NEUTRAL_MEAN;
        f[3 + c] = var.sqrt() - NEUTRAL_SPREAD;
    }
    Some(f)
}

impl SimilarityScorer for MockSimilarity {
    fn name(&self) -> &str {
        "mock"
    }

    fn score(&self, region: &Image, text: &str) -> f64 {
        let Some(a) = image_features(region) else {
            return 0.0;
        };
        let b = text_features(text);
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return 50.0;
        }
        (50.0 * (1.0 + dot / (na * nb))).clamp(0.0, 100.0)
    }
}

/// A patch whose appearance matches `text` exactly under [`MockSimilarity`]:
/// the described mean color with a checkerboard of the described spread.
pub fn synthetic_patch(text: &str, width: usize, height: usize) -> Image {
    let (mean, spread) = text_appearance(text);
    Image::from_fn(width, height, |c, y, x| {
        let sign = if (x + y) % 2 == 0 { 1.0 } else { -1.0 };
        ((mean[c] + sign * spread[c]) as f32).clamp(0.0, 1.0)
    })
}
