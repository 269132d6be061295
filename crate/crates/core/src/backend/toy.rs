//! Small deterministic attention denoiser used for tests and benchmarks.
//!
//! Each attention resolution gets one block that reads the shared input
//! projection at its own scale: self-attention (with the injection hook),
//! then cross-attention (plain or region blend), then a residual that is
//! upsampled back to latent resolution. The denoised prediction is a
//! bounded per-pixel readout of the summed features, so every pixel's
//! output depends on text values only through its own cross-attention rows.

use super::golden::{ToyBackendConfig as Config, ToyParams};
use super::{
    BackendError, Conditioning, Controls, CrossValues, DiffusionBackend, ForwardOutput, HookLog, Injection,
};
use crate::attention::{attention_map, inject_self_attention, rgb_cam_blend, standard_attention, AttentionContext, QkPair};
use crate::prompt::EmbeddingMatrix;
use crate::tensor::{Image, Latent, LatentShape, Matrix, Resolution};

pub use super::golden::ToyBackendConfig;

pub static GOLDEN_PARAMS: &[u8] = include_bytes!("../../assets/toy_params.bin");

const OUTPUT_RANGE: f32 = 1.5;

#[derive(Debug, Clone)]
pub struct ToyBackend {
    params: ToyParams,
}

impl ToyBackend {
    /// Loads the parameter file shipped with the crate.
    pub fn from_golden() -> Result<Self, BackendError> {
        Ok(Self {
            params: ToyParams::from_bytes(GOLDEN_PARAMS)?,
        })
    }

    pub fn generate(config: Config) -> Result<Self, BackendError> {
        Ok(Self {
            params: ToyParams::generate(config)?,
        })
    }

    pub fn from_params(params: ToyParams) -> Result<Self, BackendError> {
        params.config.validate()?;
        Ok(Self { params })
    }

    pub fn config(&self) -> &Config {
        &self.params.config
    }

    pub fn params(&self) -> &ToyParams {
        &self.params
    }

    fn check_embedding(&self, e: &EmbeddingMatrix, what: &str) -> Result<(), BackendError> {
        let cfg = &self.params.config;
        if e.rows.cols() != cfg.embed_width {
            return Err(BackendError::Shape(format!(
                "{what} embedding width {} != {}",
                e.rows.cols(),
                cfg.embed_width
            )));
        }
        Ok(())
    }

    fn input_features(&self, z: &Latent, step: usize) -> Matrix {
        let p = &self.params;
        let mut h0 = z.to_pixel_matrix().matmul(&p.w_in);
        let t = (step + 1) as f32;
        let bias: Vec<f32> = (0..p.config.hidden)
            .map(|j| p.b_in.get(0, j) + p.t_amp.get(0, j) * (t * p.t_freq.get(0, j)).sin())
            .collect();
        for r in 0..h0.rows() {
            for (v, b) in h0.row_mut(r).iter_mut().zip(&bias) {
                *v += b;
            }
        }
        h0
    }

    fn predict(
        &self,
        z: &Latent,
        step: usize,
        keys: &EmbeddingMatrix,
        values: CrossValues<'_>,
        injection: Option<&Injection<'_>>,
        hooks: &mut HookLog,
    ) -> Result<(Latent, Vec<QkPair>), BackendError> {
        let p = &self.params;
        let cfg = &p.config;
        let latent_res = cfg.latent.resolution();
        let h0 = self.input_features(z, step);
        let mut h = h0.clone();
        let mut captured = Vec::with_capacity(p.layers.len());

        for (l, (layer, &res)) in p.layers.iter().zip(&cfg.attention_resolutions).enumerate() {
            let x = downsample_average(&h0, latent_res, res);
            let own = QkPair {
                q: x.matmul(&layer.sa_q),
                k: x.matmul(&layer.sa_k),
            };
            hooks.self_attention_calls += 1;
            let qk = match injection {
                Some(inj) => {
                    let src = inj.source.get(l).ok_or_else(|| {
                        BackendError::Shape(format!("no injected q/k for layer {l} ({} given)", inj.source.len()))
                    })?;
                    let chosen = inject_self_attention(src, &own, step, inj.schedule)?;
                    if inj.schedule.is_active(step) {
                        hooks.injected_layers += 1;
                    }
                    chosen
                }
                None => &own,
            };
            let sa = standard_attention(&attention_map(&qk.q, &qk.k), &x.matmul(&layer.sa_v)).matmul(&layer.sa_o);
            hooks.used_qk.push(qk.clone());
            let mut x1 = x.clone();
            x1.add_assign(&sa);

            hooks.cross_attention_calls += 1;
            let map = attention_map(&x1.matmul(&layer.ca_q), &keys.rows.matmul(&layer.ca_k));
            let cross = match values {
                CrossValues::Plain(e) => standard_attention(&map, &e.rows.matmul(&layer.ca_v)),
                CrossValues::RegionBlend { objects, base, masks } => {
                    hooks.region_blend_calls += 1;
                    let level = masks
                        .get(&res)
                        .ok_or_else(|| BackendError::Shape(format!("no mask level at {res}")))?;
                    let object_values: Vec<Matrix> = objects.iter().map(|e| e.rows.matmul(&layer.ca_v)).collect();
                    let base_values = base.rows.matmul(&layer.ca_v);
                    rgb_cam_blend(&AttentionContext {
                        map: &map,
                        values: &object_values,
                        base_values: &base_values,
                        masks: level,
                        resolution: res,
                    })?
                }
            };
            let mut delta = sa;
            delta.add_assign(&cross.matmul(&layer.ca_o));
            h.add_assign(&upsample_nearest(&delta, res, latent_res));
            captured.push(own);
        }

        let mut out = h.matmul(&p.w_out);
        for r in 0..out.rows() {
            for v in out.row_mut(r) {
                *v = OUTPUT_RANGE * v.tanh();
            }
        }
        let denoised = Latent::from_pixel_matrix(cfg.latent, &out).expect("readout has latent shape");
        Ok((denoised, captured))
    }
}

/// Block average of a pixel-major feature matrix.
pub fn downsample_average(m: &Matrix, from: Resolution, to: Resolution) -> Matrix {
    if from == to {
        return m.clone();
    }
    let (fy, fx) = (from.height / to.height, from.width / to.width);
    let inv = 1.0 / (fy * fx) as f32;
    let mut out = Matrix::zeros(to.pixels(), m.cols());
    for ty in 0..to.height {
        for tx in 0..to.width {
            let row = out.row_mut(ty * to.width + tx);
            for dy in 0..fy {
                for dx in 0..fx {
                    let src = m.row((ty * fy + dy) * from.width + tx * fx + dx);
                    for (o, s) in row.iter_mut().zip(src) {
                        *o += s;
                    }
                }
            }
            row.iter_mut().for_each(|v| *v *= inv);
        }
    }
    out
}

pub fn upsample_nearest(m: &Matrix, from: Resolution, to: Resolution) -> Matrix {
    if from == to {
        return m.clone();
    }
    let (fy, fx) = (to.height / from.height, to.width / from.width);
    Matrix::from_fn(to.pixels(), m.cols(), |p, j| {
        let (y, x) = (p / to.width, p % to.width);
        m.get((y / fy) * from.width + x / fx, j)
    })
}

impl DiffusionBackend for ToyBackend {
    fn latent_shape(&self) -> LatentShape {
        self.params.config.latent
    }

    fn attention_resolutions(&self) -> Vec<Resolution> {
        self.params.config.attention_resolutions.clone()
    }

    fn image_resolution(&self) -> Resolution {
        let cfg = &self.params.config;
        Resolution::new(cfg.latent.height * cfg.image_scale, cfg.latent.width * cfg.image_scale)
    }

    /// Area average onto the latent grid, mapped to `[-1, 1]`. Channels past
    /// the third carry the mean intensity.
    fn encode_image(&self, image: &Image) -> Result<Latent, BackendError> {
        let shape = self.params.config.latent;
        let (ih, iw) = (image.height(), image.width());
        if ih < shape.height || iw < shape.width {
            return Err(BackendError::Shape(format!(
                "image {} is smaller than latent grid {}",
                image.resolution(),
                shape.resolution()
            )));
        }
        let mut data = Vec::with_capacity(shape.len());
        let mut rgb = vec![0f32; 3 * shape.height * shape.width];
        for (c, plane) in rgb.chunks_mut(shape.height * shape.width).enumerate() {
            for ly in 0..shape.height {
                let (y0, y1) = (ly * ih / shape.height, (ly + 1) * ih / shape.height);
                for lx in 0..shape.width {
                    let (x0, x1) = (lx * iw / shape.width, (lx + 1) * iw / shape.width);
                    let mut sum = 0f32;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            sum += image.get(c, y, x);
                        }
                    }
                    plane[ly * shape.width + lx] = sum / ((y1 - y0) * (x1 - x0)) as f32;
                }
            }
        }
        let n = shape.height * shape.width;
        for c in 0..shape.channels {
            for p in 0..n {
                let v = if c < 3 {
                    rgb[c * n + p]
                } else {
                    (rgb[p] + rgb[n + p] + rgb[2 * n + p]) / 3.0
                };
                data.push(2.0 * v - 1.0);
            }
        }
        Ok(Latent::from_vec(shape, data).expect("sized above"))
    }

    fn decode_latent(&self, latent: &Latent) -> Result<Image, BackendError> {
        let shape = self.params.config.latent;
        if latent.shape() != shape {
            return Err(BackendError::Shape(format!("latent {:?} != {:?}", latent.shape(), shape)));
        }
        let s = self.params.config.image_scale;
        let res = self.image_resolution();
        Ok(Image::from_fn(res.width, res.height, |c, y, x| {
            let ch = c.min(shape.channels - 1);
            ((latent.get(ch, y / s, x / s) + 1.0) * 0.5).clamp(0.0, 1.0)
        }))
    }

    fn forward(
        &self,
        z: &Latent,
        step: usize,
        cond: &Conditioning<'_>,
        controls: &Controls<'_>,
    ) -> Result<ForwardOutput, BackendError> {
        let shape = self.params.config.latent;
        if z.shape() != shape {
            return Err(BackendError::Shape(format!("latent {:?} != {:?}", z.shape(), shape)));
        }
        self.check_embedding(cond.keys, "key")?;
        match cond.values {
            CrossValues::Plain(e) => self.check_embedding(e, "value")?,
            CrossValues::RegionBlend { objects, base, .. } => {
                self.check_embedding(base, "base value")?;
                for e in objects {
                    self.check_embedding(e, "object value")?;
                }
            }
        }
        let mut hooks = HookLog::default();
        let injection = controls.injection.as_ref();
        let (mut denoised, captured) = self.predict(z, step, cond.keys, cond.values, injection, &mut hooks)?;
        if let (Some(uncond), true) = (cond.unconditional, cond.guidance_scale != 1.0) {
            self.check_embedding(uncond, "unconditional")?;
            let mut uncond_hooks = HookLog::default();
            let (u, _) = self.predict(z, step, uncond, CrossValues::Plain(uncond), injection, &mut uncond_hooks)?;
            let g = cond.guidance_scale;
            for (d, u) in denoised.as_mut_slice().iter_mut().zip(u.as_slice()) {
                *d = u + g * (*d - u);
            }
            hooks.self_attention_calls += uncond_hooks.self_attention_calls;
            hooks.injected_layers += uncond_hooks.injected_layers;
            hooks.cross_attention_calls += uncond_hooks.cross_attention_calls;
        }
        Ok(ForwardOutput {
            denoised,
            self_attention: captured,
            hooks,
        })
    }
}
