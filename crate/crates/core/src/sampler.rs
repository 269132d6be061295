//! Dual-branch consistency sampling with virtual inversion.
//!
//! The source branch never needs an inversion pass: its noisy latent at
//! every step is tied to the known clean latent `z0_src` in closed form,
//!
//! ```text
//! z_src = √ᾱ · z0_src + √(1 − ᾱ) · ε
//! ```
//!
//! and the target branch is anchored to the same clean latent plus the
//! backend's prediction difference, sharing the fresh noise of each step.
//!
//! Latents are stored as `f32` and the sampler updates are evaluated in
//! `f64` and rounded once. The recovery of `z0_src` from the source branch
//! is evaluated in exact rational arithmetic, since `f64` cancellation
//! leaves a residue wherever `z0_src` is zero or tiny.

use num_rational::BigRational;
use num_traits::ToPrimitive;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::mask::Mask;
use crate::tensor::{Latent, LatentShape};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("ᾱ = {alpha} at non-terminal step {step}")]
    Schedule { step: usize, alpha: f64 },
    #[error("invalid noise schedule: {0}")]
    InvalidSchedule(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Cumulative noise levels `ᾱ_n` for sampler steps `n = 0..N` (0 is the
/// noisiest). The level after the last step is 1 (clean).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    alphas: Vec<f64>,
    timesteps: Vec<usize>,
}

/// Training-time parameters of the latent-consistency schedule.
const TRAIN_STEPS: usize = 1000;
const ORIGIN_STEPS: usize = 50;
const BETA_START: f64 = 0.00085;
const BETA_END: f64 = 0.012;

/// Largest step count the latent-consistency schedule supports.
pub const MAX_STEPS: usize = ORIGIN_STEPS;

impl NoiseSchedule {
    /// Scaled-linear betas over 1000 training steps, subsampled with the
    /// latent-consistency skipping rule over 50 origin steps.
    pub fn latent_consistency(num_steps: usize) -> Result<Self, SamplerError> {
        if num_steps == 0 || num_steps > ORIGIN_STEPS {
            return Err(SamplerError::InvalidSchedule(format!(
                "steps must be in 1..={ORIGIN_STEPS}, got {num_steps}"
            )));
        }
        let (s0, s1) = (BETA_START.sqrt(), BETA_END.sqrt());
        let mut cumprod = Vec::with_capacity(TRAIN_STEPS);
        let mut acc = 1.0f64;
        for i in 0..TRAIN_STEPS {
            let b = s0 + (s1 - s0) * i as f64 / (TRAIN_STEPS - 1) as f64;
            acc *= 1.0 - b * b;
            cumprod.push(acc);
        }
        let c = TRAIN_STEPS / ORIGIN_STEPS;
        let origin: Vec<usize> = (1..=ORIGIN_STEPS).map(|i| i * c - 1).collect();
        let skip = ORIGIN_STEPS / num_steps;
        let timesteps: Vec<usize> = origin.iter().rev().step_by(skip).take(num_steps).copied().collect();
        let alphas = timesteps.iter().map(|&t| cumprod[t]).collect();
        Ok(Self { alphas, timesteps })
    }

    /// Explicit levels, e.g. for hand-checked toy schedules.
    pub fn from_alphas(alphas: Vec<f64>) -> Result<Self, SamplerError> {
        if alphas.is_empty() {
            return Err(SamplerError::InvalidSchedule("empty schedule".into()));
        }
        if let Some(bad) = alphas.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
            return Err(SamplerError::InvalidSchedule(format!("ᾱ {bad} outside (0, 1]")));
        }
        let timesteps = (0..alphas.len()).rev().collect();
        Ok(Self { alphas, timesteps })
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    pub fn alpha(&self, step: usize) -> f64 {
        self.alphas[step]
    }

    /// Level the step moves to; 1 after the final step.
    pub fn next_alpha(&self, step: usize) -> f64 {
        self.alphas.get(step + 1).copied().unwrap_or(1.0)
    }

    pub fn is_terminal(&self, step: usize) -> bool {
        step + 1 >= self.alphas.len()
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// Training timestep each sampler step corresponds to.
    pub fn timesteps(&self) -> &[usize] {
        &self.timesteps
    }
}

/// Whether both branches draw the same fresh noise each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseCoupling {
    #[default]
    Shared,
    /// Target draws its own noise; breaks the coupling (negative control).
    Independent,
}

/// Sampler state between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct DualBranchState {
    pub z_src: Latent,
    pub z_tgt: Latent,
    pub z0_src: Latent,
    pub step_index: usize,
    /// Fresh noise drawn at each completed step.
    pub fresh_noise: Vec<Latent>,
}

impl DualBranchState {
    /// Both branches start from the same initial noise.
    pub fn new(z0_src: Latent, initial_noise: Latent) -> Result<Self, SamplerError> {
        if z0_src.shape() != initial_noise.shape() {
            return Err(SamplerError::Shape(format!(
                "clean latent {:?} vs noise {:?}",
                z0_src.shape(),
                initial_noise.shape()
            )));
        }
        Ok(Self {
            z_tgt: initial_noise.clone(),
            z_src: initial_noise,
            z0_src,
            step_index: 0,
            fresh_noise: Vec::new(),
        })
    }
}

/// Standard normal latent.
pub fn sample_noise(rng: &mut impl Rng, shape: LatentShape) -> Latent {
    let data = (0..shape.len()).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    Latent::from_vec(shape, data).expect("length matches shape")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceUpdate {
    pub next: Latent,
    /// `ε̂ = (z_src − √ᾱ z0_src) / √(1 − ᾱ)`.
    pub consistent_noise: Latent,
}

fn check_same(a: &Latent, b: &Latent, what: &str) -> Result<(), SamplerError> {
    if a.shape() != b.shape() {
        return Err(SamplerError::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn map2(a: &Latent, b: &Latent, f: impl Fn(f64, f64) -> f64) -> Latent {
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| f(f64::from(x), f64::from(y)) as f32)
        .collect();
    Latent::from_vec(a.shape(), data).expect("same shape")
}

/// Closed-form consistent noise of the current source latent.
pub fn consistent_noise(z_src: &Latent, z0_src: &Latent, alpha: f64) -> Latent {
    let (a, b) = (alpha.sqrt(), (1.0 - alpha).sqrt());
    map2(z_src, z0_src, |z, z0| (z - a * z0) / b)
}

/// Clean latent recovered from a noisy latent and its noise:
/// `(z − √(1 − ᾱ) ε) / √ᾱ`.
pub fn recover_clean(z: &Latent, noise: &Latent, alpha: f64) -> Latent {
    let (a, b) = (alpha.sqrt(), (1.0 - alpha).sqrt());
    map2(z, noise, |z, e| (z - b * e) / a)
}

/// Clean latent recovered from the source branch through its consistent
/// noise, `(z − √(1 − ᾱ) ε̂) / √ᾱ` with `ε̂ = (z − √ᾱ z0) / √(1 − ᾱ)`.
///
/// The `f64` coefficients and `f32` inputs are taken as exact rationals,
/// the formula is evaluated without intermediate rounding and the result
/// is rounded to `f32` once.
pub fn virtual_inversion_clean(z_src: &Latent, z0_src: &Latent, alpha: f64) -> Latent {
    if alpha >= 1.0 {
        return z_src.clone();
    }
    let exact = |v: f64| BigRational::from_float(v).expect("finite value");
    let (a, b) = (exact(alpha.sqrt()), exact((1.0 - alpha).sqrt()));
    let data = z_src
        .as_slice()
        .iter()
        .zip(z0_src.as_slice())
        .map(|(&z, &z0)| {
            let (z, z0) = (exact(f64::from(z)), exact(f64::from(z0)));
            let eps = (&z - &a * &z0) / &b;
            let clean = (&z - &b * &eps) / &a;
            clean.to_f64().expect("finite result") as f32
        })
        .collect();
    Latent::from_vec(z_src.shape(), data).expect("same shape")
}

/// Source-branch update: re-noises the known clean latent to the next
/// level with `fresh`.
pub fn source_step(state: &DualBranchState, schedule: &NoiseSchedule, fresh: &Latent) -> Result<SourceUpdate, SamplerError> {
    let n = state.step_index;
    check_same(&state.z_src, &state.z0_src, "source latent")?;
    check_same(fresh, &state.z0_src, "fresh noise")?;
    let alpha = schedule.alpha(n);
    if alpha >= 1.0 && !schedule.is_terminal(n) {
        return Err(SamplerError::Schedule { step: n, alpha });
    }
    let consistent = if alpha >= 1.0 {
        Latent::zeros(state.z0_src.shape())
    } else {
        consistent_noise(&state.z_src, &state.z0_src, alpha)
    };
    Ok(SourceUpdate {
        next: renoise(&state.z0_src, fresh, schedule.next_alpha(n)),
        consistent_noise: consistent,
    })
}

fn renoise(clean: &Latent, noise: &Latent, next_alpha: f64) -> Latent {
    if next_alpha >= 1.0 {
        return clean.clone();
    }
    let (a, b) = (next_alpha.sqrt(), (1.0 - next_alpha).sqrt());
    map2(clean, noise, |c, e| a * c + b * e)
}

/// Target-branch update:
/// `√ᾱ' · (z0_src + (ẑ₀ᵗᵍᵗ − ẑ₀ˢʳᶜ)) + √(1 − ᾱ') · ε_fresh`.
pub fn target_step(
    state: &DualBranchState,
    schedule: &NoiseSchedule,
    denoised_tgt: &Latent,
    denoised_src: &Latent,
    fresh: &Latent,
) -> Result<Latent, SamplerError> {
    check_same(denoised_tgt, &state.z0_src, "target prediction")?;
    check_same(denoised_src, &state.z0_src, "source prediction")?;
    check_same(fresh, &state.z0_src, "fresh noise")?;
    let n = state.step_index;
    let alpha = schedule.alpha(n);
    if alpha >= 1.0 && !schedule.is_terminal(n) {
        return Err(SamplerError::Schedule { step: n, alpha });
    }
    let anchor: Vec<f64> = state
        .z0_src
        .as_slice()
        .iter()
        .zip(denoised_tgt.as_slice().iter().zip(denoised_src.as_slice()))
        .map(|(&z0, (&t, &s))| f64::from(z0) + (f64::from(t) - f64::from(s)))
        .collect();
    let next_alpha = schedule.next_alpha(n);
    let data = if next_alpha >= 1.0 {
        anchor.iter().map(|&v| v as f32).collect()
    } else {
        let (a, b) = (next_alpha.sqrt(), (1.0 - next_alpha).sqrt());
        anchor
            .iter()
            .zip(fresh.as_slice())
            .map(|(&c, &e)| (a * c + b * f64::from(e)) as f32)
            .collect()
    };
    Ok(Latent::from_vec(state.z0_src.shape(), data).expect("same shape"))
}

/// `m_back ⊙ z_src + (1 − m_back) ⊙ z_tgt`, per latent pixel across all
/// channels.
pub fn background_blend(z_src: &Latent, z_tgt: &Latent, background: &Mask) -> Result<Latent, SamplerError> {
    check_same(z_src, z_tgt, "background blend")?;
    let shape = z_src.shape();
    if background.resolution() != shape.resolution() {
        return Err(SamplerError::Shape(format!(
            "background mask {} vs latent {}",
            background.resolution(),
            shape.resolution()
        )));
    }
    let n = shape.height * shape.width;
    let data = (0..shape.len())
        .map(|i| {
            if background.at(i % n) {
                z_src.as_slice()[i]
            } else {
                z_tgt.as_slice()[i]
            }
        })
        .collect();
    Ok(Latent::from_vec(shape, data).expect("same shape"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use crate::tensor::Resolution;

    fn shape() -> LatentShape {
        LatentShape::new(1, 2, 2)
    }

    #[test]
    fn latent_consistency_schedule_shape() {
        let s = NoiseSchedule::latent_consistency(15).unwrap();
        assert_eq!(s.len(), 15);
        assert_eq!(s.timesteps()[0], 999);
        assert_eq!(s.timesteps()[1], 939);
        assert_eq!(*s.timesteps().last().unwrap(), 159);
        assert!(s.alphas().windows(2).all(|w| w[0] < w[1]));
        assert_eq!(s.next_alpha(14), 1.0);
        assert!(NoiseSchedule::latent_consistency(0).is_err());
        assert!(NoiseSchedule::latent_consistency(51).is_err());
    }

    #[test]
    fn single_step_returns_clean_latent() {
        let mut rng = rng_from_seed(1);
        let z0 = sample_noise(&mut rng, shape());
        let state = DualBranchState::new(z0.clone(), sample_noise(&mut rng, shape())).unwrap();
        let sched = NoiseSchedule::from_alphas(vec![0.3]).unwrap();
        let fresh = sample_noise(&mut rng, shape());
        assert!(source_step(&state, &sched, &fresh).unwrap().next.bit_eq(&z0));
    }

    #[test]
    fn clean_alpha_before_the_end_is_rejected() {
        let mut rng = rng_from_seed(1);
        let z0 = sample_noise(&mut rng, shape());
        let state = DualBranchState::new(z0.clone(), z0.clone()).unwrap();
        let sched = NoiseSchedule::from_alphas(vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            source_step(&state, &sched, &z0),
            Err(SamplerError::Schedule { step: 0, .. })
        ));
    }

    #[test]
    fn four_step_trajectory_matches_scalar_recomputation() {
        let mut rng = rng_from_seed(42);
        let z0 = sample_noise(&mut rng, shape());
        let zt = sample_noise(&mut rng, shape());
        let alphas = vec![0.1, 0.35, 0.6, 0.85];
        let sched = NoiseSchedule::from_alphas(alphas.clone()).unwrap();
        let noises: Vec<Latent> = (0..4).map(|_| sample_noise(&mut rng, shape())).collect();

        let mut state = DualBranchState::new(z0.clone(), zt.clone()).unwrap();
        let mut got = Vec::new();
        for noise in &noises {
            let up = source_step(&state, &sched, noise).unwrap();
            got.push(up.next.clone());
            state.z_src = up.next;
            state.step_index += 1;
        }

        // Scalar re-implementation, one element at a time.
        for i in 0..4 {
            let c = f64::from(z0.as_slice()[i]);
            for (n, noise) in noises.iter().enumerate() {
                let next = alphas.get(n + 1).copied().unwrap_or(1.0);
                let expected = if next == 1.0 {
                    c
                } else {
                    next.sqrt() * c + (1.0 - next).sqrt() * f64::from(noise.as_slice()[i])
                };
                let actual = f64::from(got[n].as_slice()[i]);
                assert!((actual - expected).abs() < 1e-6, "step {n} elem {i}: {actual} vs {expected}");
            }
        }
        assert!(got[3].bit_eq(&z0));
    }

    #[test]
    fn consistent_noise_recovers_clean_latent() {
        let mut rng = rng_from_seed(7);
        let s = LatentShape::new(4, 8, 8);
        let z0 = sample_noise(&mut rng, s);
        let sched = NoiseSchedule::latent_consistency(15).unwrap();
        for n in 0..sched.len() {
            let z = renoise(&z0, &sample_noise(&mut rng, s), sched.alpha(n));
            assert!(virtual_inversion_clean(&z, &z0, sched.alpha(n)).bit_eq(&z0), "step {n}");
            let eps = consistent_noise(&z, &z0, sched.alpha(n));
            assert!(recover_clean(&z, &eps, sched.alpha(n)).max_abs_diff(&z0) < 1e-4);
        }
    }

    #[test]
    fn recovery_is_exact_for_zero_and_tiny_clean_values() {
        let s = LatentShape::new(1, 1, 6);
        let z0 = Latent::from_vec(s, vec![0.0, -0.0, 1e-9, -3e-30, f32::MIN_POSITIVE, 0.5]).unwrap();
        let noise = Latent::from_vec(s, vec![0.7, -1.3, 2.1, 0.01, -0.4, 1.0]).unwrap();
        let sched = NoiseSchedule::latent_consistency(15).unwrap();
        for n in 0..sched.len() {
            let z = renoise(&z0, &noise, sched.alpha(n));
            let clean = virtual_inversion_clean(&z, &z0, sched.alpha(n));
            assert_eq!(clean.max_abs_diff(&z0), 0.0, "step {n}");
        }
    }

    #[test]
    fn zero_correction_reproduces_source_update() {
        let mut rng = rng_from_seed(3);
        let s = LatentShape::new(2, 3, 3);
        let z0 = sample_noise(&mut rng, s);
        let state = DualBranchState::new(z0.clone(), sample_noise(&mut rng, s)).unwrap();
        let sched = NoiseSchedule::latent_consistency(4).unwrap();
        let fresh = sample_noise(&mut rng, s);
        let pred = sample_noise(&mut rng, s);
        let src = source_step(&state, &sched, &fresh).unwrap();
        let tgt = target_step(&state, &sched, &pred, &pred, &fresh).unwrap();
        assert!(tgt.bit_eq(&src.next));
    }

    #[test]
    fn constant_offset_shifts_by_scaled_constant() {
        let mut rng = rng_from_seed(5);
        let s = LatentShape::new(1, 2, 2);
        let z0 = sample_noise(&mut rng, s);
        let state = DualBranchState::new(z0.clone(), sample_noise(&mut rng, s)).unwrap();
        let sched = NoiseSchedule::latent_consistency(4).unwrap();
        let fresh = sample_noise(&mut rng, s);
        let pred = sample_noise(&mut rng, s);
        let shifted = Latent::from_vec(s, pred.as_slice().iter().map(|v| v + 0.25).collect()).unwrap();
        let src = source_step(&state, &sched, &fresh).unwrap();
        let tgt = target_step(&state, &sched, &shifted, &pred, &fresh).unwrap();
        let expected = sched.next_alpha(0).sqrt() * 0.25;
        for (t, s) in tgt.as_slice().iter().zip(src.next.as_slice()) {
            assert!((f64::from(t - s) - expected).abs() < 1e-5);
        }
    }

    #[test]
    fn blend_extremes_and_oracle() {
        let mut rng = rng_from_seed(9);
        let s = LatentShape::new(3, 4, 4);
        let a = sample_noise(&mut rng, s);
        let b = sample_noise(&mut rng, s);
        let res = Resolution::square(4);
        assert!(background_blend(&a, &b, &Mask::empty(res)).unwrap().bit_eq(&b));
        assert!(background_blend(&a, &b, &Mask::full(res)).unwrap().bit_eq(&a));
        let half = Mask::from_fn(res, |_, x| x < 2);
        let out = background_blend(&a, &b, &half).unwrap();
        for c in 0..3 {
            for y in 0..4 {
                for x in 0..4 {
                    let expected = if x < 2 { a.get(c, y, x) } else { b.get(c, y, x) };
                    assert_eq!(out.get(c, y, x).to_bits(), expected.to_bits());
                }
            }
        }
        assert!(background_blend(&a, &b, &Mask::full(Resolution::square(2))).is_err());
    }
}
