//! HTTP transport for a text-prompted segmentation service.
//!
//! Request: `POST <endpoint>` with `{"image_png": <base64>, "phrase": <str>}`.
//! Reply: `{"mask_png": <base64>, "confidence": <float>}`. Any non-zero
//! pixel of the returned mask is foreground.

use std::time::Duration;

use ale_core::mask::{decode_mask_png, SegmentResponse};
use ale_core::SegmenterTransport;
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

#[derive(Serialize)]
struct Request<'a> {
    image_png: String,
    phrase: &'a str,
}

#[derive(Deserialize)]
struct Reply {
    mask_png: String,
    #[serde(default = "full_confidence")]
    confidence: f32,
}

fn full_confidence() -> f32 {
    1.0
}

pub struct HttpSegmenter {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpSegmenter {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(60)).build(),
        }
    }
}

impl SegmenterTransport for HttpSegmenter {
    fn segment(&mut self, image_png: &[u8], phrase: &str) -> Result<SegmentResponse, String> {
        let body = Request {
            image_png: STANDARD.encode(image_png),
            phrase,
        };
        let reply: Reply = self
            .agent
            .post(&self.endpoint)
            .send_json(&body)
            .map_err(|e| format!("{}: {e}", self.endpoint))?
            .into_json()
            .map_err(|e| format!("{}: malformed reply: {e}", self.endpoint))?;
        let bytes = STANDARD
            .decode(reply.mask_png.as_bytes())
            .map_err(|e| format!("mask is not base64: {e}"))?;
        let mask = decode_mask_png(&bytes).map_err(|e| format!("mask is not a png: {e}"))?;
        Ok(SegmentResponse {
            mask,
            confidence: reply.confidence,
        })
    }
}
