//! Analytic backends for sampler tests.
//!
//! The prediction is `scale * z + offset`, with `offset` added only on the
//! target branch. Image conversion and shapes come from the wrapped toy
//! backend so the probes run through the full pipeline unchanged.

use super::{BackendError, Branch, Conditioning, Controls, DiffusionBackend, ForwardOutput, HookLog, ToyBackend};
use crate::tensor::{Image, Latent, LatentShape, Resolution};

#[derive(Debug, Clone)]
pub struct ProbeBackend {
    inner: ToyBackend,
    pub scale: f32,
    pub target_offset: f32,
}

impl ProbeBackend {
    /// Same affine prediction on both branches.
    pub fn identity(inner: ToyBackend, scale: f32) -> Self {
        Self {
            inner,
            scale,
            target_offset: 0.0,
        }
    }

    /// Input-independent prediction whose target branch is the source
    /// prediction plus `offset`.
    pub fn constant_offset(inner: ToyBackend, offset: f32) -> Self {
        Self {
            inner,
            scale: 0.0,
            target_offset: offset,
        }
    }
}

impl DiffusionBackend for ProbeBackend {
    fn latent_shape(&self) -> LatentShape {
        self.inner.latent_shape()
    }

    fn attention_resolutions(&self) -> Vec<Resolution> {
        self.inner.attention_resolutions()
    }

    fn image_resolution(&self) -> Resolution {
        self.inner.image_resolution()
    }

    fn encode_image(&self, image: &Image) -> Result<Latent, BackendError> {
        self.inner.encode_image(image)
    }

    fn decode_latent(&self, latent: &Latent) -> Result<Image, BackendError> {
        self.inner.decode_latent(latent)
    }

    fn forward(
        &self,
        z: &Latent,
        _step: usize,
        _cond: &Conditioning<'_>,
        controls: &Controls<'_>,
    ) -> Result<ForwardOutput, BackendError> {
        if z.shape() != self.latent_shape() {
            return Err(BackendError::Shape(format!("latent {:?}", z.shape())));
        }
        let offset = match controls.branch {
            Branch::Source => 0.0,
            Branch::Target => self.target_offset,
        };
        let mut denoised = z.clone();
        denoised
            .as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = self.scale * *v + offset);
        Ok(ForwardOutput {
            denoised,
            self_attention: Vec::new(),
            hooks: HookLog::default(),
        })
    }
}
