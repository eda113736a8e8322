//! Depth-based forward warp between trajectory viewpoints.
//!
//! Source pixels with valid depth are lifted to 3D, moved into the target
//! camera by a [`RelativePose`] and splatted onto the nearest target pixel.
//! Collisions are resolved by a z-buffer; unreached pixels stay invalid and
//! black. There is no hole filling here.

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{unproject_unchecked, Intrinsics, Point3, RelativePose};
use crate::raster::{DepthMap, ImageBuffer, Mask};

/// Splats closer than this are treated as equal depth; the earlier one stays.
pub const Z_TIE_TOLERANCE: f64 = 1e-6;

/// Warped color plus the mask of pixels that received data.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceImage {
    pub color: ImageBuffer,
    pub validity: Mask,
    /// Depth of the winning splat, when the producer knows it.
    pub depth: Option<DepthMap>,
}

impl GuidanceImage {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            color: ImageBuffer::new(width, height),
            validity: Mask::full(width, height, false),
            depth: None,
        }
    }

    /// Fully valid guidance carrying `img` unchanged.
    pub fn from_image(img: ImageBuffer) -> Self {
        let (w, h) = img.dims();
        Self {
            color: img,
            validity: Mask::full(w, h, true),
            depth: None,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.color.dims()
    }

    pub fn valid_count(&self) -> usize {
        self.validity.count()
    }
}

/// Fraction of pixels that received projected data.
pub fn overlap_fraction(g: &GuidanceImage) -> f64 {
    g.validity.fraction()
}

/// Target pixel index and depth for one source point, or `None` when it lands
/// behind the camera or outside the image.
#[inline]
fn splat_target(p: &Point3, k: &Intrinsics, width: usize, height: usize) -> Option<(usize, f64)> {
    if !(p.z > 0.0) {
        return None;
    }
    let u = (k.fx * p.x / p.z + k.cx).round();
    let v = (k.fy * p.y / p.z + k.cy).round();
    if !(u >= 0.0 && v >= 0.0 && u < width as f64 && v < height as f64) {
        return None;
    }
    Some((v as usize * width + u as usize, p.z))
}

struct ZBuffer {
    width: usize,
    height: usize,
    depth: Vec<f64>,
    color: ImageBuffer,
}

impl ZBuffer {
    fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            depth: vec![f64::INFINITY; width * height],
            color: ImageBuffer::new(width, height),
        }
    }

    #[inline]
    fn write(&mut self, idx: usize, z: f64, c: [f32; 3]) {
        let cur = self.depth[idx];
        if cur.is_infinite() || z < cur - Z_TIE_TOLERANCE {
            self.depth[idx] = z;
            self.color.set_pixel(idx, c);
        }
    }

    fn finish(self) -> GuidanceImage {
        let bits: Vec<bool> = self.depth.iter().map(|d| d.is_finite()).collect();
        let depth = DepthMap::from_values(
            self.width,
            self.height,
            self.depth
                .iter()
                .map(|d| if d.is_finite() { *d as f32 } else { 0.0 })
                .collect(),
        )
        .expect("z-buffer dimensions are consistent");
        GuidanceImage {
            color: self.color,
            validity: Mask::from_vec(self.width, self.height, bits).expect("same dims"),
            depth: Some(depth),
        }
    }
}

/// Z-buffered nearest-pixel rasterization of colored camera-frame points.
/// Points behind the camera or off-image are dropped.
pub fn rasterize_splats(points: &[(Point3, [f32; 3])], k: &Intrinsics, width: usize, height: usize) -> GuidanceImage {
    let mut zb = ZBuffer::new(width, height);
    for (p, c) in points {
        if let Some((idx, z)) = splat_target(p, k, width, height) {
            zb.write(idx, z, *c);
        }
    }
    zb.finish()
}

pub fn forward_warp(src: &ImageBuffer, src_depth: &DepthMap, k: &Intrinsics, rel: &RelativePose) -> Result<GuidanceImage> {
    forward_warp_with(src, src_depth, k, rel, Exec::default())
}

/// Projection runs under `exec`; the z-buffer is then resolved in row-major
/// source order so the result does not depend on scheduling.
pub fn forward_warp_with(
    src: &ImageBuffer,
    src_depth: &DepthMap,
    k: &Intrinsics,
    rel: &RelativePose,
    exec: Exec,
) -> Result<GuidanceImage> {
    if src.dims() != src_depth.dims() {
        return Err(Error::invalid(format!(
            "image {:?} and depth {:?} differ in size",
            src.dims(),
            src_depth.dims()
        )));
    }
    if src.dims() != k.dims() {
        return Err(Error::invalid(format!(
            "intrinsics are for {:?} but image is {:?}",
            k.dims(),
            src.dims()
        )));
    }
    let (width, height) = src.dims();
    let rel = rel.to_canonical();

    let rows: Vec<Vec<(usize, f64)>> = exec.map_indices(height, |y| {
        let mut row = vec![(usize::MAX, 0.0); width];
        for (x, slot) in row.iter_mut().enumerate() {
            let Some(d) = src_depth.get(x, y) else { continue };
            let p = unproject_unchecked(x as f64, y as f64, d as f64, k);
            if let Some(hit) = splat_target(&rel.apply(&p), k, width, height) {
                *slot = hit;
            }
        }
        row
    });

    let mut zb = ZBuffer::new(width, height);
    for (y, row) in rows.iter().enumerate() {
        for (x, &(idx, z)) in row.iter().enumerate() {
            if idx != usize::MAX {
                zb.write(idx, z, src.get(x, y));
            }
        }
    }
    Ok(zb.finish())
}
