//! Small dense containers used by the editing kernels.
//!
//! Everything here is plain row-major `f32` storage with fixed summation
//! order, so results are bit-reproducible across runs and threads.

use serde::{Deserialize, Serialize};

/// Spatial resolution `height × width`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Resolution {
    pub height: usize,
    pub width: usize,
}

impl Resolution {
    pub const fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub const fn square(side: usize) -> Self {
        Self::new(side, side)
    }

    pub const fn pixels(&self) -> usize {
        self.height * self.width
    }
}

impl std::fmt::Display for Resolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

/// Row-major `rows × cols` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Returns `None` when `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Option<Self> {
        (data.len() == rows * cols).then_some(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Option<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return None;
        }
        Some(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f32) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn set_row(&mut self, i: usize, values: &[f32]) {
        self.row_mut(i).copy_from_slice(values);
    }

    /// `self · other`. Panics on inner-dimension mismatch.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul inner dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            row_times_into(self.row(i), other, out.row_mut(i));
        }
        out
    }

    /// `self · otherᵀ`. Panics on width mismatch.
    pub fn matmul_transposed(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_transposed width mismatch");
        Matrix::from_fn(self.rows, other.rows, |i, j| dot(self.row(i), other.row(j)))
    }

    pub fn scale(&mut self, s: f32) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += *b);
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.shape(), other.shape());
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Matrix { data, ..*self }
    }

    /// Numerically stable softmax applied independently to every row.
    pub fn softmax_rows(&mut self) {
        let cols = self.cols;
        for row in self.data.chunks_mut(cols.max(1)) {
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f32;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f32 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

/// Sequential dot product, left to right.
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0f32, |acc, (x, y)| acc + x * y)
}

/// `row · m` with a fixed accumulation order (over `k` ascending).
pub fn row_times(row: &[f32], m: &Matrix) -> Vec<f32> {
    let mut out = vec![0.0; m.cols];
    row_times_into(row, m, &mut out);
    out
}

fn row_times_into(row: &[f32], m: &Matrix, out: &mut [f32]) {
    debug_assert_eq!(row.len(), m.rows);
    out.iter_mut().for_each(|v| *v = 0.0);
    for (k, &a) in row.iter().enumerate() {
        for (o, &b) in out.iter_mut().zip(m.row(k)) {
            *o += a * b;
        }
    }
}

/// Channel-major latent tensor `channels × height × width`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

/// Shape of a [`Latent`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl LatentShape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub const fn resolution(&self) -> Resolution {
        Resolution::new(self.height, self.width)
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Latent {
    pub fn zeros(shape: LatentShape) -> Self {
        Self {
            channels: shape.channels,
            height: shape.height,
            width: shape.width,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn from_vec(shape: LatentShape, data: Vec<f32>) -> Option<Self> {
        (data.len() == shape.len()).then_some(Self {
            channels: shape.channels,
            height: shape.height,
            width: shape.width,
            data,
        })
    }

    pub fn shape(&self) -> LatentShape {
        LatentShape::new(self.channels, self.height, self.width)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Values of every channel at flat pixel index `p`.
    pub fn pixel(&self, p: usize) -> Vec<f32> {
        let n = self.pixels();
        (0..self.channels).map(|c| self.data[c * n + p]).collect()
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    /// Pixels as rows: a `(height·width) × channels` matrix.
    pub fn to_pixel_matrix(&self) -> Matrix {
        let n = self.pixels();
        Matrix::from_fn(n, self.channels, |p, c| self.data[c * n + p])
    }

    pub fn from_pixel_matrix(shape: LatentShape, m: &Matrix) -> Option<Self> {
        if m.rows() != shape.height * shape.width || m.cols() != shape.channels {
            return None;
        }
        let n = m.rows();
        let mut data = vec![0.0; shape.len()];
        for p in 0..n {
            for c in 0..shape.channels {
                data[c * n + p] = m.get(p, c);
            }
        }
        Latent::from_vec(shape, data)
    }

    pub fn max_abs_diff(&self, other: &Latent) -> f32 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    /// Bitwise equality, distinguishing `-0.0` from `0.0`.
    pub fn bit_eq(&self, other: &Latent) -> bool {
        self.shape() == other.shape()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Planar RGB image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; Self::CHANNELS * width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut img = Self::zeros(width, height);
        for c in 0..Self::CHANNELS {
            for y in 0..height {
                for x in 0..width {
                    img.set(c, y, x, f(c, y, x));
                }
            }
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> Resolution {
        Resolution::new(self.height, self.width)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let (w, h) = img.dimensions();
        Self::from_fn(w as usize, h as usize, |c, y, x| {
            f32::from(img.get_pixel(x as u32, y as u32)[c]) / 255.0
        })
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        image::RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let px = |c| (self.get(c, y as usize, x as usize).clamp(0.0, 1.0) * 255.0).round() as u8;
            image::Rgb([px(0), px(1), px(2)])
        })
    }

    pub fn open(path: &std::path::Path) -> image::ImageResult<Self> {
        Ok(Self::from_rgb8(&image::open(path)?.to_rgb8()))
    }

    pub fn save_png(&self, path: &std::path::Path) -> image::ImageResult<()> {
        self.to_rgb8().save_with_format(path, image::ImageFormat::Png)
    }

    /// Box resampling: each output pixel averages the input pixels whose
    /// integer footprint it covers (at least one).
    pub fn resized(&self, res: Resolution) -> Image {
        if self.resolution() == res {
            return self.clone();
        }
        let span = |o: usize, src: usize, dst: usize| {
            let start = o * src / dst;
            let end = ((o + 1) * src / dst).max(start + 1).min(src);
            start..end
        };
        Image::from_fn(res.width, res.height, |c, y, x| {
            let ys = span(y, self.height, res.height);
            let xs = span(x, self.width, res.width);
            let n = (ys.len() * xs.len()) as f32;
            let mut sum = 0f32;
            for sy in ys {
                for sx in xs.clone() {
                    sum += self.get(c, sy, sx);
                }
            }
            sum / n
        })
    }

    /// `self ⊙ weights`, with `weights` one value per pixel.
    pub fn masked(&self, weights: &[f32]) -> Image {
        let n = self.width * self.height;
        assert_eq!(weights.len(), n, "mask size");
        let mut out = self.clone();
        for plane in out.data.chunks_mut(n) {
            for (v, w) in plane.iter_mut().zip(weights) {
                *v *= w;
            }
        }
        out
    }
}
