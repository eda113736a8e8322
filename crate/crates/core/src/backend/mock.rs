//! Deterministic stand-ins for the model backends.
//!
//! Generators quantize the request exactly as the wire protocol would before
//! computing anything, and quantize their output to 8 bits, so an in-process
//! mock and the same mock behind the HTTP server give identical bytes.

use std::collections::HashMap;
use std::sync::RwLock;

use crate::error::{Error, Result};
use crate::raster::{DepthMap, ImageBuffer};

use super::{
    image_digest, BackendDescriptor, Captioner, DepthEstimator, GenerationMode, GenerationRequest,
    GenerationResponse, ImageGenerator, DEFAULT_DEPTH_SCALE,
};

/// Caption returned by [`ManifestCaption`] for images it does not know.
pub const FALLBACK_CAPTION: &str = "an indoor scene";

#[inline]
pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(text: &str) -> u64 {
    text.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Counter-based noise color for pixel `(x, y)`; 8-bit levels.
pub fn hash_color(seed: u64, x: usize, y: usize) -> [f32; 3] {
    let h = splitmix64(seed ^ splitmix64(((y as u64) << 32) | x as u64));
    [0, 8, 16].map(|s| ((h >> s) & 0xff) as f32 / 255.0)
}

/// Flat shading of a depth map tinted by the prompt: nearer is brighter.
fn depth_shade(depth: &DepthMap, prompt: &str) -> ImageBuffer {
    let h = fnv1a(prompt);
    let tint = [0, 8, 16].map(|s| 0.55 + 0.45 * ((h >> s) & 0xff) as f32 / 255.0);
    ImageBuffer::from_fn(depth.width(), depth.height(), |x, y| {
        let level = depth.get(x, y).map_or(0.5, |d| 1.0 / (1.0 + 0.25 * d));
        tint.map(|t| t * level)
    })
}

/// Fills every pixel where `known` is false with the color of the nearest
/// known pixel by 4-connected breadth-first distance. Equidistant sources are
/// broken toward the smaller row, then the smaller column. Returns `None` when
/// nothing is known.
pub fn fill_nearest(img: &ImageBuffer, known: &[bool]) -> Option<ImageBuffer> {
    let (w, h) = img.dims();
    let n = w * h;
    debug_assert_eq!(known.len(), n);
    const UNSET: u32 = u32::MAX;
    let mut source = vec![UNSET; n];
    let mut frontier: Vec<usize> = (0..n).filter(|&i| known[i]).collect();
    if frontier.is_empty() {
        return None;
    }
    for &i in &frontier {
        source[i] = i as u32;
    }
    // layer index each pixel was reached in; lets a later, smaller source
    // replace a tentative assignment made within the same layer
    let mut layer = vec![u32::MAX; n];
    let mut depth = 0u32;
    while !frontier.is_empty() {
        depth += 1;
        let mut next = Vec::new();
        for &p in &frontier {
            let (x, y) = (p % w, p / w);
            let src = source[p];
            let mut visit = |q: usize| {
                if source[q] == UNSET {
                    source[q] = src;
                    layer[q] = depth;
                    next.push(q);
                } else if layer[q] == depth && src < source[q] {
                    source[q] = src;
                }
            };
            if y > 0 {
                visit(p - w);
            }
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y + 1 < h {
                visit(p + w);
            }
        }
        frontier = next;
    }
    let mut out = img.clone();
    for (i, &s) in source.iter().enumerate() {
        if !known[i] {
            out.set_pixel(i, img.pixel(s as usize));
        }
    }
    Some(out)
}

fn known_pixels(req: &GenerationRequest, n: usize) -> Vec<bool> {
    match &req.mask {
        Some(m) => m.values().iter().map(|w| *w > 0.0).collect(),
        None => vec![true; n],
    }
}

fn lerp(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [0, 1, 2].map(|c| a[c] * (1.0 - t) + b[c] * t)
}

/// Shared shape of both generator mocks; they differ only in how unknown
/// content is invented.
fn mock_generate(
    name: &str,
    req: &GenerationRequest,
    invent: impl Fn(&GenerationRequest, (usize, usize)) -> ImageBuffer,
    fill: impl Fn(&GenerationRequest, &ImageBuffer, &[bool]) -> ImageBuffer,
) -> Result<GenerationResponse> {
    let req = req.quantized(DEFAULT_DEPTH_SCALE);
    let dims = req
        .conditioning_dims()
        .ok_or_else(|| Error::invalid("request carries no conditioning"))?;
    let image = match req.mode {
        GenerationMode::DepthToImage => invent(&req, dims),
        GenerationMode::ImageToImage => {
            let init = req.init_image.as_ref().unwrap();
            let known = known_pixels(&req, init.len());
            let filled = fill(&req, init, &known);
            let base = invent(&req, dims);
            let s = req.strength as f32;
            ImageBuffer::from_fn(dims.0, dims.1, |x, y| lerp(filled.get(x, y), base.get(x, y), s))
        }
        GenerationMode::Outpaint => {
            let init = req.init_image.as_ref().unwrap();
            let mask = req.mask.as_ref().unwrap();
            let known = known_pixels(&req, init.len());
            let filled = fill(&req, init, &known);
            ImageBuffer::from_fn(dims.0, dims.1, |x, y| {
                lerp(filled.get(x, y), init.get(x, y), mask.get(x, y))
            })
        }
    };
    Ok(GenerationResponse {
        image: image.quantized(),
        backend_id: name.to_string(),
        seed_used: req.seed,
    })
}

/// Plausible-looking mock: holes take the nearest known color; content with
/// no source at all is a depth shading tinted by the prompt.
#[derive(Debug, Clone, Copy, Default)]
pub struct FillNearest;

impl FillNearest {
    pub const NAME: &'static str = "fill-nearest";

    fn invent(req: &GenerationRequest, dims: (usize, usize)) -> ImageBuffer {
        match &req.depth {
            Some(d) => depth_shade(d, &req.prompt),
            None => req.init_image.clone().unwrap_or_else(|| ImageBuffer::filled(dims.0, dims.1, [0.5; 3])),
        }
    }
}

impl ImageGenerator for FillNearest {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            name: Self::NAME.into(),
            capabilities: GenerationMode::ALL.to_vec(),
            deterministic: true,
        }
    }

    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse> {
        mock_generate(Self::NAME, req, Self::invent, |r, init, known| {
            fill_nearest(init, known).unwrap_or_else(|| Self::invent(r, init.dims()))
        })
    }
}

/// Adversarial mock: every invented pixel is seeded hash noise.
#[derive(Debug, Clone, Copy, Default)]
pub struct HashNoise;

impl HashNoise {
    pub const NAME: &'static str = "hash-noise";

    fn noise(req: &GenerationRequest, dims: (usize, usize)) -> ImageBuffer {
        ImageBuffer::from_fn(dims.0, dims.1, |x, y| hash_color(req.seed, x, y))
    }
}

impl ImageGenerator for HashNoise {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            name: Self::NAME.into(),
            capabilities: GenerationMode::ALL.to_vec(),
            deterministic: true,
        }
    }

    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse> {
        mock_generate(Self::NAME, req, Self::noise, |r, init, known| {
            ImageBuffer::from_fn(init.width(), init.height(), |x, y| {
                if known[y * init.width() + x] {
                    init.get(x, y)
                } else {
                    hash_color(r.seed, x, y)
                }
            })
        })
    }
}

/// Depth oracle: returns maps registered for exact image contents.
#[derive(Debug, Default)]
pub struct OracleDepth {
    maps: RwLock<HashMap<String, DepthMap>>,
    fallback: Option<f32>,
}

impl OracleDepth {
    pub fn new() -> Self {
        Self::default()
    }

    /// Unregistered images get a constant map instead of an error.
    pub fn with_fallback(depth: f32) -> Self {
        Self {
            maps: RwLock::default(),
            fallback: Some(depth),
        }
    }

    pub fn register(&self, img: &ImageBuffer, depth: DepthMap) {
        self.maps.write().unwrap().insert(image_digest(img), depth);
    }
}

impl DepthEstimator for OracleDepth {
    fn name(&self) -> String {
        "oracle-depth".into()
    }

    fn estimate_depth(&self, img: &ImageBuffer) -> Result<DepthMap> {
        if let Some(d) = self.maps.read().unwrap().get(&image_digest(img)) {
            return Ok(d.clone());
        }
        match self.fallback {
            Some(d) => Ok(DepthMap::constant(img.width(), img.height(), d)),
            None => Err(Error::NotFound("no depth registered for this image".into())),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantDepth(pub f32);

impl DepthEstimator for ConstantDepth {
    fn name(&self) -> String {
        format!("constant-depth={}", self.0)
    }

    fn estimate_depth(&self, img: &ImageBuffer) -> Result<DepthMap> {
        Ok(DepthMap::constant(img.width(), img.height(), self.0))
    }
}

/// Captions looked up by image content, as listed in a scene manifest.
#[derive(Debug, Default)]
pub struct ManifestCaption {
    captions: RwLock<HashMap<String, String>>,
}

impl ManifestCaption {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&self, img: &ImageBuffer, caption: impl Into<String>) {
        self.captions.write().unwrap().insert(image_digest(img), caption.into());
    }

    pub fn len(&self) -> usize {
        self.captions.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Captioner for ManifestCaption {
    fn name(&self) -> String {
        "manifest-caption".into()
    }

    fn caption(&self, img: &ImageBuffer) -> Result<String> {
        Ok(self
            .captions
            .read()
            .unwrap()
            .get(&image_digest(img))
            .cloned()
            .unwrap_or_else(|| FALLBACK_CAPTION.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct ConstantCaption(pub String);

impl Captioner for ConstantCaption {
    fn name(&self) -> String {
        "constant-caption".into()
    }

    fn caption(&self, _img: &ImageBuffer) -> Result<String> {
        Ok(self.0.clone())
    }
}
