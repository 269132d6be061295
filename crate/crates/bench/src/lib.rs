//! Shared fixtures for the criterion benchmarks.

use ale_core::seed::rng_from_seed;
use ale_core::{DiffusionBackend, Image, Mask, Matrix, ObjectPromptPair, RegionMasks, Resolution, ToyBackend};
use rand::Rng;

/// Row-stochastic `rows × cols` matrix.
pub fn stochastic(seed: u64, rows: usize, cols: usize) -> Matrix {
    let mut rng = rng_from_seed(seed);
    let mut m = Matrix::from_fn(rows, cols, |_, _| rng.gen_range(0.01f32..1.0));
    for r in 0..rows {
        let sum: f32 = m.row(r).iter().sum();
        let row: Vec<f32> = m.row(r).iter().map(|v| v / sum).collect();
        m.set_row(r, &row);
    }
    m
}

pub fn dense(seed: u64, rows: usize, cols: usize) -> Matrix {
    let mut rng = rng_from_seed(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0f32..1.0))
}

/// `k` vertical stripes of objects over a background.
pub fn striped_regions(res: Resolution, k: usize) -> RegionMasks {
    let stripe = res.width / (2 * k + 1);
    let objects: Vec<Mask> = (0..k)
        .map(|i| Mask::from_fn(res, |_, x| x / stripe == 2 * i + 1))
        .collect();
    let background = Mask::from_fn(res, |y, x| !objects.iter().any(|m| m.get(y, x)));
    RegionMasks { objects, background }
}

/// Toy backend, a textured source image and two object masks.
pub fn edit_fixture() -> (ToyBackend, Image, Vec<ObjectPromptPair>, Vec<Mask>) {
    let backend = ToyBackend::from_golden().expect("shipped parameters load");
    let res = backend.image_resolution();
    let image = Image::from_fn(res.width, res.height, |c, y, x| ((x * 3 + y * 7 + c * 11) % 29) as f32 / 28.0);
    let pairs = vec![
        ObjectPromptPair::parse(1, "a wolf->a cat").expect("valid pair"),
        ObjectPromptPair::parse(2, "a chair->a red chair").expect("valid pair"),
    ];
    let masks = vec![
        Mask::from_fn(res, |y, x| y < res.height / 2 && x < res.width / 2),
        Mask::from_fn(res, |y, x| y > res.height / 2 && x > res.width / 3),
    ];
    (backend, image, pairs, masks)
}
