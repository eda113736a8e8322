//! JSON bodies of the HTTP protocol.
//!
//! | route            | request               | response                |
//! |------------------|-----------------------|-------------------------|
//! | `POST /generate` | [`GenerateBody`]      | [`GeneratedBody`]       |
//! | `POST /depth`    | [`ImageBody`]         | [`DepthBody`]           |
//! | `POST /caption`  | [`ImageBody`]         | [`CaptionBody`]         |
//! | `GET /describe`  | -                     | [`super::BackendDescriptor`] |
//!
//! Images travel as base64 RGB8 PNG, depth as base64 16-bit gray PNG with a
//! declared `depth_scale`, masks as base64 8-bit gray PNG (255 = keep).
//! Failures answer with [`ErrorBody`] and a 4xx/5xx status.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::dataio::codec;
use crate::error::{Error, Result};
use crate::raster::{DepthMap, ImageBuffer};

use super::{GenerationMode, GenerationRequest, GenerationResponse, DEFAULT_DEPTH_SCALE};

pub mod codes {
    pub const INVALID_REQUEST: &str = "invalid_request";
    pub const UNSUPPORTED_MODE: &str = "unsupported_mode";
    pub const PAYLOAD_TOO_LARGE: &str = "payload_too_large";
    pub const QUEUE_FULL: &str = "queue_full";
    pub const NOT_FOUND: &str = "not_found";
    pub const INTERNAL: &str = "internal";
}

fn default_depth_scale() -> f64 {
    DEFAULT_DEPTH_SCALE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateBody {
    pub mode: GenerationMode,
    pub prompt: String,
    pub strength: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<String>,
    #[serde(default = "default_depth_scale")]
    pub depth_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedBody {
    pub image: String,
    pub backend_id: String,
    pub seed_used: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageBody {
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthBody {
    pub depth: String,
    #[serde(default = "default_depth_scale")]
    pub depth_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionBody {
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

impl ErrorBody {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            error: ErrorDetail {
                code: code.to_string(),
                message: message.into(),
            },
        }
    }
}

fn b64(bytes: Vec<u8>) -> String {
    STANDARD.encode(bytes)
}

fn unb64(field: &str, text: &str) -> Result<Vec<u8>> {
    STANDARD
        .decode(text)
        .map_err(|e| Error::invalid(format!("{field}: invalid base64: {e}")))
}

pub fn encode_image(img: &ImageBuffer) -> Result<String> {
    Ok(b64(codec::encode_image_png(img)?))
}

pub fn decode_image(field: &str, text: &str) -> Result<ImageBuffer> {
    codec::decode_image_png(&unb64(field, text)?).map_err(|e| e.context(field.to_string()))
}

pub fn encode_depth(depth: &DepthMap, scale: f64) -> Result<String> {
    Ok(b64(codec::encode_depth_png(depth, scale)?))
}

pub fn decode_depth(field: &str, text: &str, scale: f64) -> Result<DepthMap> {
    codec::decode_depth_png(&unb64(field, text)?, scale).map_err(|e| e.context(field.to_string()))
}

impl GenerateBody {
    pub fn from_request(req: &GenerationRequest, depth_scale: f64) -> Result<Self> {
        Ok(Self {
            mode: req.mode,
            prompt: req.prompt.clone(),
            strength: req.strength,
            seed: req.seed,
            depth: req.depth.as_ref().map(|d| encode_depth(d, depth_scale)).transpose()?,
            depth_scale,
            init_image: req.init_image.as_ref().map(encode_image).transpose()?,
            mask: req
                .mask
                .as_ref()
                .map(|m| codec::encode_mask_png(m).map(b64))
                .transpose()?,
        })
    }

    pub fn into_request(self) -> Result<GenerationRequest> {
        let depth = self
            .depth
            .as_deref()
            .map(|d| decode_depth("depth", d, self.depth_scale))
            .transpose()?;
        let init_image = self.init_image.as_deref().map(|s| decode_image("init_image", s)).transpose()?;
        let mask = self
            .mask
            .as_deref()
            .map(|s| unb64("mask", s).and_then(|b| codec::decode_mask_png(&b)))
            .transpose()?;
        let req = GenerationRequest {
            mode: self.mode,
            prompt: self.prompt,
            depth,
            init_image,
            mask,
            strength: self.strength,
            seed: self.seed,
        };
        req.validate()?;
        Ok(req)
    }
}

impl GeneratedBody {
    pub fn from_response(resp: &GenerationResponse) -> Result<Self> {
        Ok(Self {
            image: encode_image(&resp.image)?,
            backend_id: resp.backend_id.clone(),
            seed_used: resp.seed_used,
        })
    }

    pub fn into_response(self) -> Result<GenerationResponse> {
        Ok(GenerationResponse {
            image: decode_image("image", &self.image).map_err(|e| Error::MalformedResponse(e.to_string()))?,
            backend_id: self.backend_id,
            seed_used: self.seed_used,
        })
    }
}
