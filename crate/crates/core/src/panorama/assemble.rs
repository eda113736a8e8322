use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{Intrinsics, Rotation};
use crate::raster::ImageBuffer;

use super::grid::{grid_rotation, ViewGrid};

/// Viewpoint-frame direction of equirectangular pixel `(x, y)`.
///
/// Longitude runs from -180° at the left edge to +180° at the right, 0° being
/// the heading-0 perspective and positive longitudes clockwise. Latitude runs
/// from +90° (top) to -90° (bottom).
pub fn equirect_direction(x: usize, y: usize, width: usize, height: usize) -> Vector3<f64> {
    let lon = ((x as f64 + 0.5) / width as f64 * 2.0 - 1.0) * std::f64::consts::PI;
    let lat = (0.5 - (y as f64 + 0.5) / height as f64) * std::f64::consts::PI;
    let (sl, cl) = lat.sin_cos();
    Vector3::new(cl * lon.sin(), -sl, cl * lon.cos())
}

pub fn assemble_equirect(
    views: &[ImageBuffer],
    k: &Intrinsics,
    grid: &ViewGrid,
    out_width: usize,
    out_height: usize,
) -> Result<ImageBuffer> {
    assemble_equirect_with(views, k, grid, out_width, out_height, Exec::default())
}

/// Blends every perspective covering a direction, weighting each sample by
/// the product of its normalized distances to the four image edges.
/// Directions no perspective covers stay black.
pub fn assemble_equirect_with(
    views: &[ImageBuffer],
    k: &Intrinsics,
    grid: &ViewGrid,
    out_width: usize,
    out_height: usize,
    exec: Exec,
) -> Result<ImageBuffer> {
    if views.len() != grid.len() {
        return Err(Error::invalid(format!("expected {} views, got {}", grid.len(), views.len())));
    }
    if let Some(v) = views.iter().find(|v| v.dims() != k.dims()) {
        return Err(Error::invalid(format!(
            "view size {:?} does not match intrinsics {:?}",
            v.dims(),
            k.dims()
        )));
    }
    if out_width == 0 || out_height == 0 {
        return Err(Error::invalid("panorama size must be positive"));
    }
    let inverse: Vec<Rotation> = (0..grid.len())
        .map(|i| grid_rotation(i, grid).map(|r| r.transpose()))
        .collect::<Result<_>>()?;
    let (w1, h1) = ((k.width - 1).max(1) as f64, (k.height - 1).max(1) as f64);

    let mut out = ImageBuffer::new(out_width, out_height);
    exec.for_rows(out.data_mut(), out_width * 3, |y, row| {
        for x in 0..out_width {
            let d = equirect_direction(x, y, out_width, out_height);
            let mut acc = [0.0f64; 3];
            let mut wsum = 0.0f64;
            for (view, inv) in views.iter().zip(&inverse) {
                let s = inv * d;
                if s.z <= 0.0 {
                    continue;
                }
                let u = k.fx * s.x / s.z + k.cx;
                let v = k.fy * s.y / s.z + k.cy;
                let Some(c) = view.sample_bilinear(u, v) else { continue };
                let w = (u / w1) * ((w1 - u) / w1) * (v / h1) * ((h1 - v) / h1);
                if w <= 0.0 {
                    continue;
                }
                for ch in 0..3 {
                    acc[ch] += w * c[ch] as f64;
                }
                wsum += w;
            }
            if wsum > 0.0 {
                for ch in 0..3 {
                    row[x * 3 + ch] = (acc[ch] / wsum).clamp(0.0, 1.0) as f32;
                }
            }
        }
    });
    Ok(out)
}
