//! Toy backend parameters and their binary file format.
//!
//! Layout (little endian): magic `ALET`, `u32` version, `u64` seed, six
//! `u32` shape fields (channels, height, width, embed width, max length,
//! hidden width), `u32` image scale, `u32` resolution count followed by
//! `(height, width)` pairs, `u32` tensor count, then each tensor as
//! `u32 rows, u32 cols, f32 data[rows * cols]`.

use rand::Rng;

use super::BackendError;
use crate::seed::{derive_seed, rng_from_seed};
use crate::tensor::{LatentShape, Matrix, Resolution};

pub const MAGIC: &[u8; 4] = b"ALET";
pub const VERSION: u32 = 1;
pub const DEFAULT_SEED: u64 = 0x5EED_0A1E;

const LAYER_TENSORS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyBackendConfig {
    pub seed: u64,
    pub latent: LatentShape,
    pub attention_resolutions: Vec<Resolution>,
    pub embed_width: usize,
    pub max_len: usize,
    pub hidden: usize,
    /// Image pixels per latent pixel along each axis.
    pub image_scale: usize,
}

impl Default for ToyBackendConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            latent: LatentShape::new(4, 16, 16),
            attention_resolutions: vec![Resolution::square(16), Resolution::square(8)],
            embed_width: 32,
            max_len: 77,
            hidden: 16,
            image_scale: 8,
        }
    }
}

impl ToyBackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        let lat = self.latent.resolution();
        if self.latent.channels == 0 || lat.pixels() == 0 || self.hidden == 0 || self.embed_width == 0 {
            return Err(BackendError::Config("zero-sized dimension".into()));
        }
        if self.image_scale == 0 {
            return Err(BackendError::Config("image scale must be positive".into()));
        }
        if self.attention_resolutions.is_empty() {
            return Err(BackendError::Config("at least one attention resolution is required".into()));
        }
        for r in &self.attention_resolutions {
            if r.pixels() == 0 || lat.height % r.height != 0 || lat.width % r.width != 0 {
                return Err(BackendError::Config(format!(
                    "attention resolution {r} does not divide latent resolution {lat}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub sa_q: Matrix,
    pub sa_k: Matrix,
    pub sa_v: Matrix,
    pub sa_o: Matrix,
    pub ca_q: Matrix,
    pub ca_k: Matrix,
    pub ca_v: Matrix,
    pub ca_o: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyParams {
    pub config: ToyBackendConfig,
    pub w_in: Matrix,
    pub b_in: Matrix,
    pub t_freq: Matrix,
    pub t_amp: Matrix,
    pub layers: Vec<LayerParams>,
    pub w_out: Matrix,
}

fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, gain: f32) -> Matrix {
    let scale = gain / (rows as f32).sqrt();
    Matrix::from_fn(rows, cols, |_, _| (rng.gen::<f32>() * 2.0 - 1.0) * scale)
}

impl ToyParams {
    pub fn generate(config: ToyBackendConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let mut rng = rng_from_seed(derive_seed(config.seed, "toy-backend-params"));
        let (c, h, d) = (config.latent.channels, config.hidden, config.embed_width);
        let w_in = uniform(&mut rng, c, h, 1.0);
        let b_in = uniform(&mut rng, 1, h, 0.1);
        let t_freq = Matrix::from_fn(1, h, |_, _| 0.05 + rng.gen::<f32>() * 0.5);
        let t_amp = uniform(&mut rng, 1, h, 0.2);
        let layers = config
            .attention_resolutions
            .iter()
            .map(|_| LayerParams {
                sa_q: uniform(&mut rng, h, h, 2.0),
                sa_k: uniform(&mut rng, h, h, 2.0),
                sa_v: uniform(&mut rng, h, h, 1.0),
                sa_o: uniform(&mut rng, h, h, 0.5),
                ca_q: uniform(&mut rng, h, h, 2.0),
                ca_k: uniform(&mut rng, d, h, 2.0),
                ca_v: uniform(&mut rng, d, h, 1.0),
                ca_o: uniform(&mut rng, h, h, 1.0),
            })
            .collect();
        let w_out = uniform(&mut rng, h, c, 0.5);
        Ok(Self {
            config,
            w_in,
            b_in,
            t_freq,
            t_amp,
            layers,
            w_out,
        })
    }

    fn tensors(&self) -> Vec<&Matrix> {
        let mut out = vec![&self.w_in, &self.b_in, &self.t_freq, &self.t_amp];
        for l in &self.layers {
            out.extend([&l.sa_q, &l.sa_k, &l.sa_v, &l.sa_o, &l.ca_q, &l.ca_k, &l.ca_v, &l.ca_o]);
        }
        out.push(&self.w_out);
        out
    }

    fn expected_shapes(config: &ToyBackendConfig) -> Vec<(usize, usize)> {
        let (c, h, d) = (config.latent.channels, config.hidden, config.embed_width);
        let mut shapes = vec![(c, h), (1, h), (1, h), (1, h)];
        for _ in &config.attention_resolutions {
            shapes.extend([(h, h), (h, h), (h, h), (h, h), (h, h), (d, h), (d, h), (h, h)]);
        }
        shapes.push((h, c));
        shapes
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let cfg = &self.config;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&cfg.seed.to_le_bytes());
        for v in [
            cfg.latent.channels,
            cfg.latent.height,
            cfg.latent.width,
            cfg.embed_width,
            cfg.max_len,
            cfg.hidden,
            cfg.image_scale,
            cfg.attention_resolutions.len(),
        ] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for r in &cfg.attention_resolutions {
            out.extend_from_slice(&(r.height as u32).to_le_bytes());
            out.extend_from_slice(&(r.width as u32).to_le_bytes());
        }
        let tensors = self.tensors();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for t in tensors {
            out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
            for v in t.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BackendError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(BackendError::Params("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(BackendError::Params(format!("unsupported version {version}")));
        }
        let seed = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let channels = r.usize()?;
        let height = r.usize()?;
        let width = r.usize()?;
        let embed_width = r.usize()?;
        let max_len = r.usize()?;
        let hidden = r.usize()?;
        let image_scale = r.usize()?;
        let n_res = r.usize()?;
        let mut attention_resolutions = Vec::with_capacity(n_res.min(64));
        for _ in 0..n_res {
            let h = r.usize()?;
            let w = r.usize()?;
            attention_resolutions.push(Resolution::new(h, w));
        }
        let config = ToyBackendConfig {
            seed,
            latent: LatentShape::new(channels, height, width),
            attention_resolutions,
            embed_width,
            max_len,
            hidden,
            image_scale,
        };
        config.validate()?;
        let shapes = Self::expected_shapes(&config);
        let n = r.usize()?;
        if n != shapes.len() {
            return Err(BackendError::Params(format!("expected {} tensors, found {n}", shapes.len())));
        }
        let mut tensors = Vec::with_capacity(n);
        for (i, &(er, ec)) in shapes.iter().enumerate() {
            let rows = r.usize()?;
            let cols = r.usize()?;
            if (rows, cols) != (er, ec) {
                return Err(BackendError::Params(format!(
                    "tensor {i} is {rows}x{cols}, expected {er}x{ec}"
                )));
            }
            let raw = r.take(rows * cols * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            tensors.push(Matrix::from_vec(rows, cols, data).expect("shape checked"));
        }
        if r.pos != bytes.len() {
            return Err(BackendError::Params("trailing bytes".into()));
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("count checked");
        let w_in = next();
        let b_in = next();
        let t_freq = next();
        let t_amp = next();
        let layers = (0..n_res)
            .map(|_| {
                let mut l: Vec<Matrix> = (0..LAYER_TENSORS).map(|_| next()).collect();
                let ca_o = l.pop().expect("8");
                let ca_v = l.pop().expect("8");
                let ca_k = l.pop().expect("8");
                let ca_q = l.pop().expect("8");
                let sa_o = l.pop().expect("8");
                let sa_v = l.pop().expect("8");
                let sa_k = l.pop().expect("8");
                let sa_q = l.pop().expect("8");
                LayerParams {
                    sa_q,
                    sa_k,
                    sa_v,
                    sa_o,
                    ca_q,
                    ca_k,
                    ca_v,
                    ca_o,
                }
            })
            .collect();
        let w_out = next();
        Ok(Self {
            config,
            w_in,
            b_in,
            t_freq,
            t_amp,
            layers,
            w_out,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], BackendError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| BackendError::Params(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, BackendError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn usize(&mut self) -> Result<usize, BackendError> {
        self.u32().map(|v| v as usize)
    }
}
