//! Contracts for the model-dependent capabilities (image generation, monocular
//! depth, captioning), the deterministic mocks used for testing, and the HTTP
//! wire protocol spoken by remote backends.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BlurredMask, DepthMap, ImageBuffer};

pub mod mock;
pub mod remote;
pub mod server;
pub mod wire;

pub use mock::{ConstantCaption, ConstantDepth, FillNearest, HashNoise, ManifestCaption, OracleDepth};
pub use remote::{RemoteClient, RemoteConfig};

/// Units per meter used for 16-bit depth transport unless stated otherwise.
pub const DEFAULT_DEPTH_SCALE: f64 = 4000.0;

/// Largest per-pixel deviation allowed on kept pixels of an outpaint result.
pub const MASK_PRESERVATION_TOL: f32 = 1.0 / 255.0 + 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    DepthToImage,
    ImageToImage,
    Outpaint,
}

impl GenerationMode {
    pub const ALL: [GenerationMode; 3] = [Self::DepthToImage, Self::ImageToImage, Self::Outpaint];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::DepthToImage => "depth_to_image",
            Self::ImageToImage => "image_to_image",
            Self::Outpaint => "outpaint",
        }
    }
}

impl fmt::Display for GenerationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub mode: GenerationMode,
    pub prompt: String,
    pub depth: Option<DepthMap>,
    pub init_image: Option<ImageBuffer>,
    /// Weights in `[0, 1]`; 1 marks known content to keep.
    pub mask: Option<BlurredMask>,
    pub strength: f64,
    pub seed: u64,
}

impl GenerationRequest {
    pub fn depth_to_image(prompt: impl Into<String>, depth: DepthMap, strength: f64, seed: u64) -> Self {
        Self {
            mode: GenerationMode::DepthToImage,
            prompt: prompt.into(),
            depth: Some(depth),
            init_image: None,
            mask: None,
            strength,
            seed,
        }
    }

    pub fn outpaint(prompt: impl Into<String>, init: ImageBuffer, mask: BlurredMask, strength: f64, seed: u64) -> Self {
        Self {
            mode: GenerationMode::Outpaint,
            prompt: prompt.into(),
            depth: None,
            init_image: Some(init),
            mask: Some(mask),
            strength,
            seed,
        }
    }

    /// Size every conditioning input shares; `None` if nothing is attached.
    pub fn conditioning_dims(&self) -> Option<(usize, usize)> {
        self.init_image
            .as_ref()
            .map(ImageBuffer::dims)
            .or_else(|| self.depth.as_ref().map(DepthMap::dims))
            .or_else(|| self.mask.as_ref().map(BlurredMask::dims))
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.strength) {
            return Err(Error::invalid(format!("strength {} outside [0, 1]", self.strength)));
        }
        match self.mode {
            GenerationMode::DepthToImage => {
                if self.depth.is_none() {
                    return Err(Error::invalid("depth_to_image requires a depth map"));
                }
                if self.prompt.trim().is_empty() {
                    return Err(Error::invalid("depth_to_image requires a prompt"));
                }
            }
            GenerationMode::ImageToImage => {
                if self.init_image.is_none() {
                    return Err(Error::invalid("image_to_image requires an init image"));
                }
            }
            GenerationMode::Outpaint => {
                if self.init_image.is_none() || self.mask.is_none() {
                    return Err(Error::invalid("outpaint requires an init image and a mask"));
                }
            }
        }
        let dims = self.conditioning_dims();
        let mismatched = self.depth.as_ref().is_some_and(|d| Some(d.dims()) != dims)
            || self.mask.as_ref().is_some_and(|m| Some(m.dims()) != dims);
        if mismatched {
            return Err(Error::invalid("conditioning inputs differ in size"));
        }
        Ok(())
    }

    /// The request as it looks after a trip over the wire: 8-bit image and
    /// mask, depth on the `1/scale` grid.
    pub fn quantized(&self, depth_scale: f64) -> Self {
        Self {
            mode: self.mode,
            prompt: self.prompt.clone(),
            depth: self.depth.as_ref().map(|d| d.quantized(depth_scale)),
            init_image: self.init_image.as_ref().map(ImageBuffer::quantized),
            mask: self.mask.as_ref().map(BlurredMask::quantized),
            strength: self.strength,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResponse {
    pub image: ImageBuffer,
    pub backend_id: String,
    pub seed_used: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub capabilities: Vec<GenerationMode>,
    pub deterministic: bool,
}

impl BackendDescriptor {
    pub fn supports(&self, mode: GenerationMode) -> bool {
        self.capabilities.contains(&mode)
    }
}

pub trait ImageGenerator: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;

    /// Implementations may assume the request already passed
    /// [`GenerationRequest::validate`]; use [`generate_checked`] to call one.
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse>;
}

pub trait DepthEstimator: Send + Sync {
    fn name(&self) -> String;
    fn estimate_depth(&self, img: &ImageBuffer) -> Result<DepthMap>;
}

pub trait Captioner: Send + Sync {
    fn name(&self) -> String;
    fn caption(&self, img: &ImageBuffer) -> Result<String>;
}

/// The three capabilities a pipeline run needs.
#[derive(Clone)]
pub struct Backends {
    pub generator: Arc<dyn ImageGenerator>,
    pub depth: Arc<dyn DepthEstimator>,
    pub captioner: Arc<dyn Captioner>,
}

impl Backends {
    pub fn new(
        generator: impl ImageGenerator + 'static,
        depth: impl DepthEstimator + 'static,
        captioner: impl Captioner + 'static,
    ) -> Self {
        Self {
            generator: Arc::new(generator),
            depth: Arc::new(depth),
            captioner: Arc::new(captioner),
        }
    }

    /// Validated depth estimate; non-positive or mis-sized maps are rejected.
    pub fn estimate_depth(&self, img: &ImageBuffer) -> Result<DepthMap> {
        let d = self.depth.estimate_depth(img)?;
        check_depth_response(img, &d)?;
        Ok(d)
    }

    pub fn caption(&self, img: &ImageBuffer) -> Result<String> {
        let c = self.captioner.caption(img)?;
        if c.trim().is_empty() {
            return Err(Error::ProtocolViolation(format!("{} returned an empty caption", self.captioner.name())));
        }
        Ok(c)
    }
}

impl fmt::Debug for Backends {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Backends")
            .field("generator", &self.generator.descriptor().name)
            .field("depth", &self.depth.name())
            .field("captioner", &self.captioner.name())
            .finish()
    }
}

pub(crate) fn check_depth_response(img: &ImageBuffer, d: &DepthMap) -> Result<()> {
    if d.dims() != img.dims() {
        return Err(Error::MalformedResponse(format!(
            "depth map is {:?} for an image of {:?}",
            d.dims(),
            img.dims()
        )));
    }
    if !d.all_valid() {
        return Err(Error::ProtocolViolation("depth estimate contains non-positive values".into()));
    }
    Ok(())
}

/// Checks a response against the request it answers.
pub fn validate_response(req: &GenerationRequest, resp: &GenerationResponse) -> Result<()> {
    if let Some(dims) = req.conditioning_dims() {
        if resp.image.dims() != dims {
            return Err(Error::MalformedResponse(format!(
                "response image is {:?}, request conditioning is {:?}",
                resp.image.dims(),
                dims
            )));
        }
    }
    if req.mode == GenerationMode::Outpaint {
        let (init, mask) = (req.init_image.as_ref().unwrap(), req.mask.as_ref().unwrap());
        for idx in 0..init.len() {
            if mask.get_index(idx) < 1.0 {
                continue;
            }
            let (a, b) = (init.pixel(idx), resp.image.pixel(idx));
            if (0..3).any(|c| (a[c] - b[c]).abs() > MASK_PRESERVATION_TOL) {
                return Err(Error::ProtocolViolation(format!(
                    "outpaint changed kept pixel {idx}: {a:?} -> {b:?}"
                )));
            }
        }
    }
    Ok(())
}

/// Validates the request, checks capability, calls the backend and validates
/// its response.
pub fn generate_checked(generator: &dyn ImageGenerator, req: &GenerationRequest) -> Result<GenerationResponse> {
    req.validate()?;
    let desc = generator.descriptor();
    if !desc.supports(req.mode) {
        return Err(Error::Capability {
            backend: desc.name,
            mode: req.mode.to_string(),
        });
    }
    let resp = generator.generate(req)?;
    validate_response(req, &resp)?;
    Ok(resp)
}

/// Hex SHA-256 of an image's size and 8-bit content.
pub fn image_digest(img: &ImageBuffer) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update((img.width() as u64).to_le_bytes());
    h.update((img.height() as u64).to_le_bytes());
    h.update(img.to_rgb8());
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_invariants() {
        let d = DepthMap::constant(4, 4, 2.0);
        assert!(GenerationRequest::depth_to_image("room", d.clone(), 1.0, 0).validate().is_ok());
        assert!(GenerationRequest::depth_to_image("  ", d.clone(), 1.0, 0).validate().is_err());
        assert!(GenerationRequest::depth_to_image("room", d.clone(), 1.5, 0).validate().is_err());
        let mut r = GenerationRequest::outpaint("x", ImageBuffer::new(4, 4), BlurredMask::constant(4, 4, 1.0), 0.5, 1);
        assert!(r.validate().is_ok());
        r.mask = Some(BlurredMask::constant(4, 3, 1.0));
        assert!(r.validate().is_err());
        r.mask = None;
        assert!(r.validate().is_err());
        r.mode = GenerationMode::ImageToImage;
        assert!(r.validate().is_ok());
        r.init_image = None;
        assert!(r.validate().is_err());
    }

    #[test]
    fn outpaint_response_must_keep_known_pixels() {
        let init = ImageBuffer::filled(2, 1, [0.5; 3]);
        let mask = BlurredMask::from_values(2, 1, vec![1.0, 0.0]).unwrap();
        let req = GenerationRequest::outpaint("x", init, mask, 0.75, 0);
        let ok = GenerationResponse {
            image: ImageBuffer::from_fn(2, 1, |x, _| if x == 0 { [0.5; 3] } else { [0.9; 3] }),
            backend_id: "t".into(),
            seed_used: 0,
        };
        assert!(validate_response(&req, &ok).is_ok());
        let bad = GenerationResponse {
            image: ImageBuffer::filled(2, 1, [0.9; 3]),
            ..ok.clone()
        };
        assert!(matches!(validate_response(&req, &bad), Err(Error::ProtocolViolation(_))));
        let wrong_size = GenerationResponse {
            image: ImageBuffer::new(3, 1),
            ..ok
        };
        assert!(matches!(validate_response(&req, &wrong_size), Err(Error::MalformedResponse(_))));
    }
}
