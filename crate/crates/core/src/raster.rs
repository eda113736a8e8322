//! Raster containers shared by every stage: RGB images, metric depth maps and
//! the binary / soft masks that travel with guidance images.
//!
//! Pixel `(x, y)` has its center at continuous coordinate `(u, v) = (x, y)`.

use crate::error::{Error, Result};

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!("empty raster {width}x{height}")));
    }
    Ok(())
}

/// Quantizes a unit-range value to the nearest 8-bit level.
#[inline]
pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[inline]
pub fn from_u8(v: u8) -> f32 {
    v as f32 / 255.0
}

/// RGB image with channel values in `[0, 1]`, row-major, interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, color: [f32; 3]) -> Self {
        Self::from_fn(width, height, |_, _| color)
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                let c = f(x, y);
                data.extend(c.iter().map(|v| v.clamp(0.0, 1.0)));
            }
        }
        Self { width, height, data }
    }

    /// Wraps raw interleaved data, rejecting out-of-range or non-finite values.
    pub fn from_raw(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height * 3 {
            return Err(Error::invalid(format!(
                "expected {} samples for {width}x{height} RGB, got {}",
                width * height * 3,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("channel value {bad} outside [0, 1]")));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        check_dims(width, height)?;
        if bytes.len() != width * height * 3 {
            return Err(Error::invalid("RGB8 byte count does not match dimensions"));
        }
        Ok(Self {
            width,
            height,
            data: bytes.iter().copied().map(from_u8).collect(),
        })
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().copied().map(to_u8).collect()
    }

    /// Snaps every channel onto the 8-bit grid used by PNG transport.
    pub fn quantized(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| from_u8(to_u8(v))).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn pixel(&self, idx: usize) -> [f32; 3] {
        let i = idx * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: [f32; 3]) {
        self.set_pixel(y * self.width + x, c);
    }

    #[inline]
    pub fn set_pixel(&mut self, idx: usize, c: [f32; 3]) {
        let i = idx * 3;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    /// Bilinear sample at continuous coordinates. `None` outside
    /// `[0, w-1] x [0, h-1]`.
    pub fn sample_bilinear(&self, u: f64, v: f64) -> Option<[f32; 3]> {
        let max_u = (self.width - 1) as f64;
        let max_v = (self.height - 1) as f64;
        if !(0.0..=max_u).contains(&u) || !(0.0..=max_v).contains(&v) {
            return None;
        }
        let x0 = (u.floor() as usize).min(self.width - 1);
        let y0 = (v.floor() as usize).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = (u - x0 as f64) as f32;
        let fy = (v - y0 as f64) as f32;
        let (a, b, c, d) = (self.get(x0, y0), self.get(x1, y0), self.get(x0, y1), self.get(x1, y1));
        let mut out = [0.0f32; 3];
        for ch in 0..3 {
            let top = a[ch] + (b[ch] - a[ch]) * fx;
            let bot = c[ch] + (d[ch] - c[ch]) * fx;
            out[ch] = (top + (bot - top) * fy).clamp(0.0, 1.0);
        }
        Some(out)
    }

    /// Mean absolute per-channel difference over pixels where `mask` holds.
    /// Returns `None` when the mask selects nothing.
    pub fn masked_mae(&self, other: &ImageBuffer, mask: &Mask) -> Option<f64> {
        debug_assert_eq!(self.dims(), other.dims());
        let mut sum = 0.0f64;
        let mut count = 0usize;
        for idx in 0..self.len() {
            if !mask.get_index(idx) {
                continue;
            }
            let (a, b) = (self.pixel(idx), other.pixel(idx));
            for ch in 0..3 {
                sum += (a[ch] - b[ch]).abs() as f64;
            }
            count += 1;
        }
        (count > 0).then(|| sum / (3 * count) as f64)
    }

    pub fn mae(&self, other: &ImageBuffer) -> f64 {
        self.masked_mae(other, &Mask::full(self.width, self.height, true))
            .unwrap_or(0.0)
    }
}

/// Per-pixel metric z-depth with an explicit validity plane.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f32>,
    valid: Vec<bool>,
}

impl DepthMap {
    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    pub fn constant(width: usize, height: usize, depth: f32) -> Self {
        Self::from_values(width, height, vec![depth; width * height])
            .expect("constant depth map has matching length")
    }

    /// Pixels whose value is finite and positive are valid; everything else is
    /// stored as invalid with value 0.
    pub fn from_values(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        check_dims(width, height)?;
        if values.len() != width * height {
            return Err(Error::invalid("depth value count does not match dimensions"));
        }
        let valid: Vec<bool> = values.iter().map(|d| d.is_finite() && *d > 0.0).collect();
        let values = values
            .into_iter()
            .zip(&valid)
            .map(|(d, &ok)| if ok { d } else { 0.0 })
            .collect();
        Ok(Self {
            width,
            height,
            values,
            valid,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Option<f32>) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y).unwrap_or(0.0));
            }
        }
        Self::from_values(width, height, values).expect("dimensions are consistent")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f32> {
        self.get_index(y * self.width + x)
    }

    #[inline]
    pub fn get_index(&self, idx: usize) -> Option<f32> {
        self.valid[idx].then(|| self.values[idx])
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn all_valid(&self) -> bool {
        self.valid.iter().all(|v| *v)
    }

    /// Rounds depths to `1/scale` m steps, matching 16-bit transport. Depths
    /// that would round to zero or beyond `u16::MAX` units are clamped.
    pub fn quantized(&self, scale: f64) -> Self {
        let values = self
            .values
            .iter()
            .zip(&self.valid)
            .map(|(&d, &ok)| {
                if ok {
                    let units = (d as f64 * scale).round().clamp(1.0, u16::MAX as f64);
                    (units / scale) as f32
                } else {
                    0.0
                }
            })
            .collect();
        Self {
            width: self.width,
            height: self.height,
            values,
            valid: self.valid.clone(),
        }
    }
}

/// Binary per-pixel mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn full(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            bits: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::invalid("mask length does not match dimensions"));
        }
        Ok(Self { width, height, bits })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn get_index(&self, idx: usize) -> bool {
        self.bits[idx]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.bits.len() as f64
    }

    pub fn not(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    pub fn and(&self, other: &Mask) -> Self {
        Self {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect(),
        }
    }

    pub fn to_weights(&self) -> BlurredMask {
        BlurredMask {
            width: self.width,
            height: self.height,
            values: self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }
}

/// Soft mask with weights in `[0, 1]`; 1 marks known content to keep.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurredMask {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl BlurredMask {
    pub fn from_values(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        check_dims(width, height)?;
        if values.len() != width * height {
            return Err(Error::invalid("mask length does not match dimensions"));
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("mask weight {bad} outside [0, 1]")));
        }
        Ok(Self { width, height, values })
    }

    pub fn constant(width: usize, height: usize, w: f32) -> Self {
        Self {
            width,
            height,
            values: vec![w.clamp(0.0, 1.0); width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn get_index(&self, idx: usize) -> f32 {
        self.values[idx]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn quantized(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|&w| from_u8(to_u8(w))).collect(),
        }
    }

    /// Pixels with any positive weight.
    pub fn support(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            bits: self.values.iter().map(|w| *w > 0.0).collect(),
        }
    }

    /// Keeps weights only where `mask` holds; zero elsewhere.
    pub fn restricted_to(&self, mask: &Mask) -> Self {
        Self {
            width: self.width,
            height: self.height,
            values: self
                .values
                .iter()
                .zip(mask.bits())
                .map(|(&w, &m)| if m { w } else { 0.0 })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_hits_pixel_centers_and_rejects_outside() {
        let img = ImageBuffer::from_fn(4, 3, |x, y| [x as f32 / 3.0, y as f32 / 2.0, 0.5]);
        assert_eq!(img.sample_bilinear(2.0, 1.0), Some(img.get(2, 1)));
        let mid = img.sample_bilinear(1.5, 0.0).unwrap();
        assert!((mid[0] - 0.5).abs() < 1e-6);
        assert!(img.sample_bilinear(3.0, 2.0).is_some());
        assert!(img.sample_bilinear(3.0001, 0.0).is_none());
        assert!(img.sample_bilinear(-0.0001, 0.0).is_none());
    }

    #[test]
    fn depth_validity_follows_sign_and_finiteness() {
        let d = DepthMap::from_values(2, 2, vec![1.0, 0.0, -2.0, f32::NAN]).unwrap();
        assert_eq!(d.get(0, 0), Some(1.0));
        assert_eq!(d.valid_count(), 1);
        assert_eq!(d.values()[3], 0.0);
    }

    #[test]
    fn image_rejects_out_of_range() {
        assert!(ImageBuffer::from_raw(1, 1, vec![0.0, 1.2, 0.0]).is_err());
        assert!(ImageBuffer::from_raw(1, 1, vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn depth_quantization_rounds_to_scale() {
        let d = DepthMap::constant(1, 1, 2.00013);
        assert_eq!(d.quantized(4000.0).get(0, 0), Some((8001.0f64 / 4000.0) as f32));
    }
}
