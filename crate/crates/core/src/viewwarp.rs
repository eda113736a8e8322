//! Rotation-only warps between perspectives that share a camera center, plus
//! the mask algebra used to turn several warped neighbors into one outpainting
//! condition.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{check_rotation, Intrinsics, Rotation};
use crate::raster::{BlurredMask, ImageBuffer, Mask};
use crate::trajwarp::GuidanceImage;

/// Blur sigma used when none is configured: 1% of the image width.
pub fn default_blur_sigma(width: usize) -> f64 {
    width as f64 * 0.01
}

pub fn rotation_warp(src: &ImageBuffer, k: &Intrinsics, r_view: &Rotation, r_extrinsic: &Rotation) -> Result<GuidanceImage> {
    rotation_warp_with(src, k, r_view, r_extrinsic, Exec::default())
}

/// Warps `src` into the perspective reached by rotating its rays with
/// `r_view * r_extrinsic`.
///
/// Each target pixel's ray is rotated back into the source and bilinearly
/// sampled; rays that leave the source frustum are invalid.
pub fn rotation_warp_with(
    src: &ImageBuffer,
    k: &Intrinsics,
    r_view: &Rotation,
    r_extrinsic: &Rotation,
    exec: Exec,
) -> Result<GuidanceImage> {
    check_rotation(r_view)?;
    check_rotation(r_extrinsic)?;
    if src.dims() != k.dims() {
        return Err(Error::invalid(format!(
            "intrinsics are for {:?} but image is {:?}",
            k.dims(),
            src.dims()
        )));
    }
    let (width, height) = src.dims();
    let back = (r_view * r_extrinsic).transpose();

    let mut samples: Vec<Option<[f32; 3]>> = vec![None; width * height];
    exec.for_rows(&mut samples, width, |y, row| {
        let ry = (y as f64 - k.cy) / k.fy;
        for (x, out) in row.iter_mut().enumerate() {
            let ray = Vector3::new((x as f64 - k.cx) / k.fx, ry, 1.0);
            let s = back * ray;
            if s.z <= 0.0 {
                continue;
            }
            let u = k.fx * s.x / s.z + k.cx;
            let v = k.fy * s.y / s.z + k.cy;
            *out = src.sample_bilinear(u, v);
        }
    });

    let mut color = ImageBuffer::new(width, height);
    let mut bits = Vec::with_capacity(width * height);
    for (idx, s) in samples.into_iter().enumerate() {
        match s {
            Some(c) => {
                color.set_pixel(idx, c);
                bits.push(true);
            }
            None => bits.push(false),
        }
    }
    Ok(GuidanceImage {
        color,
        validity: Mask::from_vec(width, height, bits)?,
        depth: None,
    })
}

/// One where the guidance received data, zero elsewhere.
pub fn binarize_mask(g: &GuidanceImage) -> Mask {
    g.validity.clone()
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).floor() as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k.into_iter().map(|v| v as f32).collect()
}

pub fn blur_mask(m: &Mask, sigma: f64) -> Result<BlurredMask> {
    blur_mask_with(m, sigma, Exec::default())
}

/// Separable Gaussian blur with a kernel truncated at `floor(3 sigma)` and
/// clamp-to-edge borders, so weights never spread past a 3-sigma band.
pub fn blur_mask_with(m: &Mask, sigma: f64, exec: Exec) -> Result<BlurredMask> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("blur sigma must be non-negative, got {sigma}")));
    }
    let (w, h) = m.dims();
    let input: Vec<f32> = m.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    if sigma == 0.0 {
        return BlurredMask::from_values(w, h, input);
    }
    let kernel = gaussian_kernel(sigma);
    let r = kernel.len() / 2;

    let mut horiz = vec![0.0f32; w * h];
    exec.for_rows(&mut horiz, w, |y, row| {
        let src = &input[y * w..(y + 1) * w];
        for (x, out) in row.iter_mut().enumerate() {
            let mut acc = 0.0f32;
            for (i, kv) in kernel.iter().enumerate() {
                let sx = (x as isize + i as isize - r as isize).clamp(0, w as isize - 1) as usize;
                acc += kv * src[sx];
            }
            *out = acc;
        }
    });

    let mut out = vec![0.0f32; w * h];
    exec.for_rows(&mut out, w, |y, row| {
        for (x, o) in row.iter_mut().enumerate() {
            let mut acc = 0.0f32;
            for (i, kv) in kernel.iter().enumerate() {
                let sy = (y as isize + i as isize - r as isize).clamp(0, h as isize - 1) as usize;
                acc += kv * horiz[sy * w + x];
            }
            *o = acc.clamp(0.0, 1.0);
        }
    });
    BlurredMask::from_values(w, h, out)
}

/// Blurred known-region weights kept inside the known region only: hole pixels
/// stay at 0 and the known side ramps up from the boundary.
pub fn feather_known(known: &Mask, sigma: f64) -> Result<BlurredMask> {
    Ok(blur_mask(known, sigma)?.restricted_to(known))
}

/// Normalized weighted sum of several guidance images.
///
/// Merged color is `sum(g_k * v_k) / max(1, sum(v_k))`; the returned mask
/// marks pixels no input covers.
pub fn merge_guidance(items: &[GuidanceImage]) -> Result<(GuidanceImage, Mask)> {
    let first = items
        .first()
        .ok_or_else(|| Error::invalid("cannot merge an empty list of guidance images"))?;
    let (w, h) = first.dims();
    if let Some(bad) = items.iter().find(|g| g.dims() != (w, h) || g.validity.dims() != (w, h)) {
        return Err(Error::invalid(format!(
            "guidance size {:?} differs from {:?}",
            bad.dims(),
            (w, h)
        )));
    }
    let mut color = ImageBuffer::new(w, h);
    let mut holes = Vec::with_capacity(w * h);
    let mut bits = Vec::with_capacity(w * h);
    for idx in 0..w * h {
        let mut acc = [0.0f32; 3];
        let mut weight = 0u32;
        for g in items.iter().filter(|g| g.validity.get_index(idx)) {
            let c = g.color.pixel(idx);
            for ch in 0..3 {
                acc[ch] += c[ch];
            }
            weight += 1;
        }
        let norm = weight.max(1) as f32;
        color.set_pixel(idx, acc.map(|v| (v / norm).clamp(0.0, 1.0)));
        holes.push(weight == 0);
        bits.push(weight > 0);
    }
    Ok((
        GuidanceImage {
            color,
            validity: Mask::from_vec(w, h, bits)?,
            depth: None,
        },
        Mask::from_vec(w, h, holes)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::yaw;

    fn k512() -> Intrinsics {
        Intrinsics::from_fov(512, 512, 60.0).unwrap()
    }

    #[test]
    fn identity_rotation_is_identity() {
        let k = Intrinsics::from_fov(64, 48, 60.0).unwrap();
        let src = ImageBuffer::from_fn(64, 48, |x, y| [x as f32 / 63.0, y as f32 / 47.0, 0.5]);
        let g = rotation_warp(&src, &k, &Rotation::identity(), &Rotation::identity()).unwrap();
        assert_eq!(g.color, src);
        assert_eq!(g.validity.count(), 64 * 48);
    }

    #[test]
    fn yaw_30_keeps_exactly_the_overlapping_half() {
        let k = k512();
        let src = ImageBuffer::filled(512, 512, [0.5; 3]);
        // Target looks 30° to the right of the source.
        let g = rotation_warp(&src, &k, &yaw(30.0).transpose(), &Rotation::identity()).unwrap();
        for y in 0..512 {
            for x in 256..512 {
                assert!(!g.validity.get(x, y), "({x},{y}) should be outside the source frustum");
            }
        }
        for x in 0..256 {
            assert!(g.validity.get(x, 256), "({x},256) lies inside the overlap");
        }
        assert!(g.validity.get(0, 0));
    }

    #[test]
    fn yaw_180_has_no_overlap() {
        let k = Intrinsics::from_fov(64, 64, 60.0).unwrap();
        let src = ImageBuffer::filled(64, 64, [0.5; 3]);
        let g = rotation_warp(&src, &k, &yaw(180.0), &Rotation::identity()).unwrap();
        assert_eq!(g.validity.count(), 0);
        assert_eq!(binarize_mask(&g).count(), 0);
    }

    #[test]
    fn non_orthonormal_rotation_rejected() {
        let k = Intrinsics::from_fov(8, 8, 60.0).unwrap();
        let src = ImageBuffer::new(8, 8);
        let bad = Rotation::identity() * 1.01;
        assert!(rotation_warp(&src, &k, &bad, &Rotation::identity()).is_err());
    }

    #[test]
    fn blur_identity_cases() {
        let m = Mask::from_fn(32, 32, |x, y| (x + y) % 3 == 0);
        assert_eq!(blur_mask(&m, 0.0).unwrap(), m.to_weights());
        let ones = Mask::full(32, 32, true);
        assert!(blur_mask(&ones, 3.5).unwrap().values().iter().all(|v| (*v - 1.0).abs() < 1e-6));
        assert!(blur_mask(&m, -1.0).is_err());
    }

    #[test]
    fn blur_keeps_deep_interior_and_stays_in_band() {
        let m = Mask::from_fn(64, 64, |x, y| (16..48).contains(&x) && (16..48).contains(&y));
        let sigma = 2.5;
        let b = blur_mask(&m, sigma).unwrap();
        let band = (3.0 * sigma) as isize;
        for y in 0..64isize {
            for x in 0..64isize {
                let dx = (16 - x).max(x - 47).max(0);
                let dy = (16 - y).max(y - 47).max(0);
                let v = b.get(x as usize, y as usize);
                if dx.max(dy) > band {
                    assert_eq!(v, 0.0, "({x},{y}) is outside the dilation band");
                }
                let inner = (x - 16).min(47 - x).min(y - 16).min(47 - y);
                if inner as f64 > 3.0 * sigma {
                    assert!(v >= 1.0 - 1e-3);
                }
            }
        }
    }

    #[test]
    fn feathering_never_leaks_into_holes() {
        let m = Mask::from_fn(32, 32, |x, _| x < 16);
        let f = feather_known(&m, 2.0).unwrap();
        for y in 0..32 {
            for x in 16..32 {
                assert_eq!(f.get(x, y), 0.0);
            }
            assert!(f.get(15, y) > 0.5 && f.get(15, y) < 1.0);
            assert!(f.get(0, y) > 0.999);
        }
    }

    #[test]
    fn merge_rules() {
        // warps leave invalid pixels black, so one item merges to itself
        let a = GuidanceImage {
            color: ImageBuffer::from_fn(2, 1, |x, _| if x == 0 { [0.2, 0.4, 0.6] } else { [0.0; 3] }),
            validity: Mask::from_vec(2, 1, vec![true, false]).unwrap(),
            depth: None,
        };
        let (m, holes) = merge_guidance(std::slice::from_ref(&a)).unwrap();
        assert_eq!(m.color, a.color);
        assert_eq!(m.validity, a.validity);
        assert_eq!(holes.bits(), &[false, true]);

        let b = GuidanceImage {
            color: ImageBuffer::filled(2, 1, [0.6, 0.0, 0.2]),
            validity: Mask::from_vec(2, 1, vec![true, true]).unwrap(),
            depth: None,
        };
        let (m, holes) = merge_guidance(&[a, b]).unwrap();
        let c = m.color.get(0, 0);
        assert!((c[0] - 0.4).abs() < 1e-6 && (c[1] - 0.2).abs() < 1e-6 && (c[2] - 0.4).abs() < 1e-6);
        assert_eq!(m.color.get(1, 0), [0.6, 0.0, 0.2]);
        assert_eq!(holes.count(), 0);

        assert!(merge_guidance(&[]).is_err());
        let small = GuidanceImage::empty(1, 1);
        assert!(merge_guidance(&[GuidanceImage::empty(2, 1), small]).is_err());
    }
}
