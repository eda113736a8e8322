//! PNG codecs for images (RGB 8-bit), depth (16-bit gray, `scale` units per
//! meter, 0 = invalid) and soft masks (8-bit gray, 255 = keep).

use std::io::Cursor;

use image::{DynamicImage, ImageBuffer as Raster, ImageFormat, Luma, Rgb};

use crate::error::{Error, Result};
use crate::raster::{from_u8, to_u8, BlurredMask, DepthMap, ImageBuffer};

fn encode(img: DynamicImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

fn decode(bytes: &[u8]) -> Result<DynamicImage> {
    Ok(image::load_from_memory_with_format(bytes, ImageFormat::Png)?)
}

pub fn encode_image_png(img: &ImageBuffer) -> Result<Vec<u8>> {
    let raster = Raster::<Rgb<u8>, _>::from_raw(img.width() as u32, img.height() as u32, img.to_rgb8())
        .ok_or_else(|| Error::invalid("image buffer size mismatch"))?;
    encode(DynamicImage::ImageRgb8(raster))
}

/// Decodes any 8-bit PNG into RGB; alpha is dropped and gray is expanded.
pub fn decode_image_png(bytes: &[u8]) -> Result<ImageBuffer> {
    let img = decode(bytes)?;
    let rgb = match img {
        DynamicImage::ImageRgb8(rgb) => rgb,
        DynamicImage::ImageRgba8(_) | DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) => img.to_rgb8(),
        other => {
            return Err(Error::invalid(format!(
                "expected an 8-bit image, found {:?}",
                other.color()
            )))
        }
    };
    let (w, h) = rgb.dimensions();
    ImageBuffer::from_rgb8(w as usize, h as usize, rgb.as_raw())
}

pub fn depth_to_units(depth: &DepthMap, scale: f64) -> Vec<u16> {
    depth
        .values()
        .iter()
        .zip(depth.validity())
        .map(|(&d, &ok)| {
            if ok {
                (d as f64 * scale).round().clamp(1.0, u16::MAX as f64) as u16
            } else {
                0
            }
        })
        .collect()
}

pub fn depth_from_units(width: usize, height: usize, units: &[u16], scale: f64) -> Result<DepthMap> {
    DepthMap::from_values(
        width,
        height,
        units
            .iter()
            .map(|&u| if u == 0 { 0.0 } else { (u as f64 / scale) as f32 })
            .collect(),
    )
}

pub fn encode_depth_png(depth: &DepthMap, scale: f64) -> Result<Vec<u8>> {
    check_scale(scale)?;
    let raster = Raster::<Luma<u16>, _>::from_raw(depth.width() as u32, depth.height() as u32, depth_to_units(depth, scale))
        .ok_or_else(|| Error::invalid("depth buffer size mismatch"))?;
    encode(DynamicImage::ImageLuma16(raster))
}

/// Requires a 16-bit grayscale PNG.
pub fn decode_depth_png(bytes: &[u8], scale: f64) -> Result<DepthMap> {
    check_scale(scale)?;
    match decode(bytes)? {
        DynamicImage::ImageLuma16(gray) => {
            let (w, h) = gray.dimensions();
            depth_from_units(w as usize, h as usize, gray.as_raw(), scale)
        }
        other => Err(Error::invalid(format!(
            "depth must be 16-bit grayscale, found {:?}",
            other.color()
        ))),
    }
}

pub fn encode_mask_png(mask: &BlurredMask) -> Result<Vec<u8>> {
    let raster = Raster::<Luma<u8>, _>::from_raw(
        mask.width() as u32,
        mask.height() as u32,
        mask.values().iter().copied().map(to_u8).collect(),
    )
    .ok_or_else(|| Error::invalid("mask buffer size mismatch"))?;
    encode(DynamicImage::ImageLuma8(raster))
}

pub fn decode_mask_png(bytes: &[u8]) -> Result<BlurredMask> {
    match decode(bytes)? {
        DynamicImage::ImageLuma8(gray) => {
            let (w, h) = gray.dimensions();
            BlurredMask::from_values(w as usize, h as usize, gray.as_raw().iter().copied().map(from_u8).collect())
        }
        other => Err(Error::invalid(format!(
            "mask must be 8-bit grayscale, found {:?}",
            other.color()
        ))),
    }
}

fn check_scale(scale: f64) -> Result<()> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::invalid(format!("depth scale must be positive, got {scale}")));
    }
    Ok(())
}
