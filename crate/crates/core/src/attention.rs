//! Region-guided cross-attention blending (RGB-CAM) and scheduled
//! self-attention query/key injection.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::mask::RegionMasks;
use crate::tensor::{row_times, Matrix, Resolution};

/// Row-sum tolerance for attention maps.
pub const STOCHASTIC_TOL: f32 = 1e-5;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum AttentionError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("masks do not partition the pixels (first violation at pixel {pixel})")]
    Partition { pixel: usize },
    #[error("attention row {row} is not a probability distribution (sum {sum})")]
    NotStochastic { row: usize, sum: f32 },
    #[error("injection fraction {0} outside [0, 1]")]
    FractionRange(f64),
    #[error("schedule needs at least one step")]
    NoSteps,
}

/// Queries and keys of one self-attention layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QkPair {
    pub q: Matrix,
    pub k: Matrix,
}

impl QkPair {
    pub fn shape(&self) -> ((usize, usize), (usize, usize)) {
        (self.q.shape(), self.k.shape())
    }
}

/// `softmax(Q Kᵀ / √d)` over the key axis.
pub fn attention_map(q: &Matrix, k: &Matrix) -> Matrix {
    let mut scores = q.matmul_transposed(k);
    scores.scale(1.0 / (q.cols().max(1) as f32).sqrt());
    scores.softmax_rows();
    scores
}

/// Inputs of one RGB-CAM evaluation at a single attention layer.
#[derive(Debug, Clone, Copy)]
pub struct AttentionContext<'a> {
    /// Base cross-attention map `M`, `P × L`.
    pub map: &'a Matrix,
    /// `V_i = W_v(E'_i)`, each `L × d_v`.
    pub values: &'a [Matrix],
    /// `V_base = W_v(E'_base)`.
    pub base_values: &'a Matrix,
    /// Object masks and background at this layer's resolution.
    pub masks: &'a RegionMasks,
    pub resolution: Resolution,
}

impl AttentionContext<'_> {
    fn validate(&self) -> Result<(), AttentionError> {
        let p = self.resolution.pixels();
        let (rows, tokens) = self.map.shape();
        if rows != p {
            return Err(AttentionError::Shape(format!(
                "attention map has {rows} rows for {} pixels",
                self.resolution
            )));
        }
        if self.values.is_empty() {
            return Err(AttentionError::Shape("no object value matrices".into()));
        }
        if self.values.len() != self.masks.objects.len() {
            return Err(AttentionError::Shape(format!(
                "{} value matrices for {} object masks",
                self.values.len(),
                self.masks.objects.len()
            )));
        }
        let dv = self.base_values.cols();
        for v in self.values.iter().chain(std::iter::once(self.base_values)) {
            if v.rows() != tokens || v.cols() != dv {
                return Err(AttentionError::Shape(format!(
                    "value matrix {:?} does not match {tokens} tokens x {dv}",
                    v.shape()
                )));
            }
        }
        if self.masks.resolution() != self.resolution {
            return Err(AttentionError::Shape(format!(
                "masks at {} for layer at {}",
                self.masks.resolution(),
                self.resolution
            )));
        }
        if let Some(pixel) = self.masks.partition_violation() {
            return Err(AttentionError::Partition { pixel });
        }
        for r in 0..rows {
            let row = self.map.row(r);
            let sum: f32 = row.iter().sum();
            if row.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(AttentionError::NotStochastic { row: r, sum });
            }
        }
        Ok(())
    }
}

/// `A = Σᵢ (M ⊙ mᵢ) Vᵢ + (M ⊙ m_back) V_base`.
///
/// The masks partition the pixels, so every row of `A` is `M[p,:] · V` for
/// the single value matrix owning pixel `p`; the masked terms of the other
/// regions are exactly zero and are skipped.
pub fn rgb_cam_blend(ctx: &AttentionContext<'_>) -> Result<Matrix, AttentionError> {
    ctx.validate()?;
    let p = ctx.resolution.pixels();
    let mut out = Matrix::zeros(p, ctx.base_values.cols());
    for px in 0..p {
        let label = ctx.masks.label(px).map_err(|pixel| AttentionError::Partition { pixel })?;
        let values = label.map_or(ctx.base_values, |i| &ctx.values[i]);
        out.set_row(px, &row_times(ctx.map.row(px), values));
    }
    Ok(out)
}

/// Plain cross-attention output `M · V`.
pub fn standard_attention(map: &Matrix, values: &Matrix) -> Matrix {
    map.matmul(values)
}

/// Denoising steps (0 = noisiest) during which source queries/keys replace
/// the target branch's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionSchedule {
    pub fraction: f64,
    pub total_steps: usize,
    pub active_steps: BTreeSet<usize>,
}

impl InjectionSchedule {
    pub fn is_active(&self, step: usize) -> bool {
        self.active_steps.contains(&step)
    }

    pub fn len(&self) -> usize {
        self.active_steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active_steps.is_empty()
    }
}

/// Maps a fraction onto the earliest `⌈fraction · N⌉` steps.
pub fn resolve_schedule(fraction: f64, total_steps: usize) -> Result<InjectionSchedule, AttentionError> {
    if !(0.0..=1.0).contains(&fraction) || fraction.is_nan() {
        return Err(AttentionError::FractionRange(fraction));
    }
    if total_steps == 0 {
        return Err(AttentionError::NoSteps);
    }
    // Guard against products like 0.7 * 10 = 7.000000000000001.
    let active = ((fraction * total_steps as f64) - 1e-9).ceil().max(0.0) as usize;
    Ok(InjectionSchedule {
        fraction,
        total_steps,
        active_steps: (0..active.min(total_steps)).collect(),
    })
}

/// Picks the source pair while `step` is scheduled, the target's own pair
/// otherwise. Values are never injected.
pub fn inject_self_attention<'a>(
    source: &'a QkPair,
    target: &'a QkPair,
    step: usize,
    schedule: &InjectionSchedule,
) -> Result<&'a QkPair, AttentionError> {
    if source.shape() != target.shape() {
        return Err(AttentionError::Shape(format!(
            "source q/k {:?} vs target q/k {:?}",
            source.shape(),
            target.shape()
        )));
    }
    Ok(if schedule.is_active(step) { source } else { target })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{build_background_mask, Mask};
    use crate::seed::rng_from_seed;
    use rand::Rng;

    fn random_matrix(rng: &mut impl Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn random_map(rng: &mut impl Rng, p: usize, l: usize) -> Matrix {
        let mut m = Matrix::from_fn(p, l, |_, _| rng.gen_range(-3.0..3.0));
        m.softmax_rows();
        m
    }

    fn regions(objects: Vec<Mask>) -> RegionMasks {
        let background = build_background_mask(&objects);
        RegionMasks { objects, background }
    }

    /// Literal masked-sum formula, elementwise.
    fn oracle(map: &Matrix, values: &[Matrix], base: &Matrix, masks: &RegionMasks) -> Matrix {
        let (p, l) = map.shape();
        let dv = base.cols();
        Matrix::from_fn(p, dv, |px, j| {
            let mut acc = 0.0f64;
            let weighted = |m: &Mask, v: &Matrix| -> f64 {
                let w = f64::from(u8::from(m.at(px)));
                (0..l).map(|t| w * f64::from(map.get(px, t)) * f64::from(v.get(t, j))).sum()
            };
            for (m, v) in masks.objects.iter().zip(values) {
                acc += weighted(m, v);
            }
            acc += weighted(&masks.background, base);
            acc as f32
        })
    }

    #[test]
    fn two_object_partition_matches_oracle() {
        let mut rng = rng_from_seed(5);
        let res = Resolution::square(4);
        let (l, dv) = (7, 3);
        let map = random_map(&mut rng, 16, l);
        let values = vec![random_matrix(&mut rng, l, dv), random_matrix(&mut rng, l, dv)];
        let base = random_matrix(&mut rng, l, dv);
        let masks = regions(vec![
            Mask::from_fn(res, |y, x| y < 2 && x < 2),
            Mask::from_fn(res, |y, _| y == 3),
        ]);
        let ctx = AttentionContext { map: &map, values: &values, base_values: &base, masks: &masks, resolution: res };
        let out = rgb_cam_blend(&ctx).unwrap();
        assert!(out.max_abs_diff(&oracle(&map, &values, &base, &masks)) < 1e-6);
    }

    #[test]
    fn full_single_mask_is_standard_attention() {
        let mut rng = rng_from_seed(9);
        let res = Resolution::square(3);
        let map = random_map(&mut rng, 9, 5);
        let values = vec![random_matrix(&mut rng, 5, 4)];
        let base = random_matrix(&mut rng, 5, 4);
        let masks = regions(vec![Mask::full(res)]);
        let ctx = AttentionContext { map: &map, values: &values, base_values: &base, masks: &masks, resolution: res };
        assert_eq!(rgb_cam_blend(&ctx).unwrap(), standard_attention(&map, &values[0]));
    }

    #[test]
    fn equal_values_make_masking_a_no_op() {
        let mut rng = rng_from_seed(10);
        let res = Resolution::square(4);
        let map = random_map(&mut rng, 16, 6);
        let base = random_matrix(&mut rng, 6, 2);
        let values = vec![base.clone(), base.clone()];
        let masks = regions(vec![Mask::from_fn(res, |y, _| y < 2), Mask::from_fn(res, |y, x| y >= 2 && x < 1)]);
        let ctx = AttentionContext { map: &map, values: &values, base_values: &base, masks: &masks, resolution: res };
        assert_eq!(rgb_cam_blend(&ctx).unwrap(), standard_attention(&map, &base));
    }

    #[test]
    fn overlapping_masks_are_rejected() {
        let mut rng = rng_from_seed(1);
        let res = Resolution::square(2);
        let map = random_map(&mut rng, 4, 3);
        let v = random_matrix(&mut rng, 3, 2);
        let values = vec![v.clone(), v.clone()];
        let objects = vec![Mask::full(res), Mask::full(res)];
        let masks = RegionMasks { background: Mask::empty(res), objects };
        let ctx = AttentionContext { map: &map, values: &values, base_values: &v, masks: &masks, resolution: res };
        assert_eq!(rgb_cam_blend(&ctx), Err(AttentionError::Partition { pixel: 0 }));
    }

    #[test]
    fn shape_and_distribution_checks() {
        let mut rng = rng_from_seed(2);
        let res = Resolution::square(2);
        let map = random_map(&mut rng, 4, 3);
        let good = random_matrix(&mut rng, 3, 2);
        let bad = random_matrix(&mut rng, 4, 2);
        let masks = regions(vec![Mask::full(res)]);
        let values = vec![bad];
        let ctx = AttentionContext { map: &map, values: &values, base_values: &good, masks: &masks, resolution: res };
        assert!(matches!(rgb_cam_blend(&ctx), Err(AttentionError::Shape(_))));

        let unnormalized = Matrix::from_fn(4, 3, |_, _| 0.5);
        let values = vec![good.clone()];
        let ctx = AttentionContext { map: &unnormalized, values: &values, base_values: &good, masks: &masks, resolution: res };
        assert!(matches!(rgb_cam_blend(&ctx), Err(AttentionError::NotStochastic { row: 0, .. })));
    }

    #[test]
    fn schedule_counts() {
        assert_eq!(resolve_schedule(1.0, 15).unwrap().len(), 15);
        assert!(resolve_schedule(0.0, 15).unwrap().is_empty());
        let s = resolve_schedule(0.6, 15).unwrap();
        assert_eq!(s.active_steps, (0..9).collect());
        let s = resolve_schedule(0.5, 15).unwrap();
        assert_eq!(s.active_steps, (0..8).collect());
        assert_eq!(resolve_schedule(0.7, 10).unwrap().len(), 7);
        assert_eq!(resolve_schedule(0.01, 15).unwrap().len(), 1);
        assert!(matches!(resolve_schedule(1.5, 15), Err(AttentionError::FractionRange(_))));
        assert!(matches!(resolve_schedule(0.5, 0), Err(AttentionError::NoSteps)));
    }

    #[test]
    fn schedule_matches_enumeration() {
        for n in 1..=20usize {
            for k in 0..=20 {
                let f = k as f64 / 20.0;
                let s = resolve_schedule(f, n).unwrap();
                let expected: BTreeSet<usize> = (0..n).filter(|&step| (step as f64) < f * n as f64 - 1e-9).collect();
                assert_eq!(s.active_steps, expected, "fraction {f} steps {n}");
            }
        }
    }

    #[test]
    fn injection_picks_by_schedule() {
        let mut rng = rng_from_seed(4);
        let src = QkPair { q: random_matrix(&mut rng, 4, 3), k: random_matrix(&mut rng, 4, 3) };
        let tgt = QkPair { q: random_matrix(&mut rng, 4, 3), k: random_matrix(&mut rng, 4, 3) };
        let always = resolve_schedule(1.0, 15).unwrap();
        let never = resolve_schedule(0.0, 15).unwrap();
        let half = resolve_schedule(0.5, 15).unwrap();
        for step in 0..15 {
            assert_eq!(inject_self_attention(&src, &tgt, step, &always).unwrap(), &src);
            assert_eq!(inject_self_attention(&src, &tgt, step, &never).unwrap(), &tgt);
            let expected = if step < 8 { &src } else { &tgt };
            assert_eq!(inject_self_attention(&src, &tgt, step, &half).unwrap(), expected);
        }
        let wrong = QkPair { q: random_matrix(&mut rng, 2, 3), k: random_matrix(&mut rng, 4, 3) };
        assert!(inject_self_attention(&src, &wrong, 0, &always).is_err());
    }

    #[test]
    fn attention_map_rows_are_distributions() {
        let mut rng = rng_from_seed(8);
        let m = attention_map(&random_matrix(&mut rng, 6, 4), &random_matrix(&mut rng, 9, 4));
        for r in 0..6 {
            let s: f32 = m.row(r).iter().sum();
            assert!((s - 1.0).abs() < STOCHASTIC_TOL);
        }
    }
}
