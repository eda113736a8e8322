use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{Intrinsics, RelativePose, Rotation};
use crate::raster::{DepthMap, ImageBuffer};
use crate::trajwarp::forward_warp;
use crate::viewwarp::rotation_warp_with;

use super::grid::{grid_rotation, ViewGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeamEdge {
    pub a: usize,
    pub b: usize,
    /// Error of `b` warped into `a`.
    pub b_into_a: f64,
    /// Error of `a` warped into `b`.
    pub a_into_b: f64,
    /// Larger of the two directed errors.
    pub error: f64,
    /// Fraction of `a`'s pixels covered by `b`.
    pub overlap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeamReport {
    pub edges: Vec<SeamEdge>,
    pub max: f64,
    pub mean: f64,
}

impl SeamReport {
    pub fn edges_above(&self, threshold: f64) -> impl Iterator<Item = &SeamEdge> {
        self.edges.iter().filter(move |e| e.error > threshold)
    }
}

fn check_views(views: &[ImageBuffer], k: &Intrinsics, grid: &ViewGrid) -> Result<()> {
    if views.len() != grid.len() {
        return Err(Error::invalid(format!("expected {} views, got {}", grid.len(), views.len())));
    }
    if views.iter().any(|v| v.dims() != k.dims()) {
        return Err(Error::invalid("view size does not match intrinsics"));
    }
    Ok(())
}

fn directed(views: &[ImageBuffer], k: &Intrinsics, grid: &ViewGrid, i: usize, j: usize, exec: Exec) -> Result<(f64, f64)> {
    let r_ji = grid_rotation(i, grid)?.transpose() * grid_rotation(j, grid)?;
    let g = rotation_warp_with(&views[j], k, &r_ji, &Rotation::identity(), exec)?;
    let mae = g.color.masked_mae(&views[i], &g.validity).unwrap_or(0.0);
    Ok((mae, g.validity.fraction()))
}

/// Masked mean absolute error of perspective `j` rotated into `i`, compared
/// with `i`. Zero when the two do not overlap.
pub fn directed_seam_error(views: &[ImageBuffer], k: &Intrinsics, grid: &ViewGrid, i: usize, j: usize) -> Result<f64> {
    check_views(views, k, grid)?;
    grid.check_index(i)?;
    grid.check_index(j)?;
    Ok(directed(views, k, grid, i, j, Exec::default())?.0)
}

pub fn seam_error(views: &[ImageBuffer], k: &Intrinsics, grid: &ViewGrid) -> Result<SeamReport> {
    seam_error_with(views, k, grid, Exec::default())
}

/// Photometric disagreement across every adjacent pair of the grid,
/// including the wraparound pair of each row.
pub fn seam_error_with(views: &[ImageBuffer], k: &Intrinsics, grid: &ViewGrid, exec: Exec) -> Result<SeamReport> {
    check_views(views, k, grid)?;
    let pairs = grid.edges();
    let results = exec.map_indices(pairs.len(), |e| {
        let (a, b) = pairs[e];
        let (b_into_a, overlap) = directed(views, k, grid, a, b, Exec::Sequential)?;
        let (a_into_b, _) = directed(views, k, grid, b, a, Exec::Sequential)?;
        Ok(SeamEdge {
            a,
            b,
            b_into_a,
            a_into_b,
            error: b_into_a.max(a_into_b),
            overlap,
        })
    });
    let edges: Vec<SeamEdge> = results.into_iter().collect::<Result<_>>()?;
    let max = edges.iter().map(|e| e.error).fold(0.0, f64::max);
    let mean = if edges.is_empty() {
        0.0
    } else {
        edges.iter().map(|e| e.error).sum::<f64>() / edges.len() as f64
    };
    Ok(SeamReport { edges, max, mean })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub mae: f64,
    pub valid_fraction: f64,
}

/// Forward-warps `prev` into the next camera and compares with `next` on the
/// pixels the warp reached.
pub fn trajectory_consistency(
    prev: &ImageBuffer,
    prev_depth: &DepthMap,
    next: &ImageBuffer,
    k: &Intrinsics,
    rel: &RelativePose,
) -> Result<ConsistencyReport> {
    if next.dims() != prev.dims() {
        return Err(Error::invalid("previous and next images differ in size"));
    }
    let g = forward_warp(prev, prev_depth, k, rel)?;
    Ok(ConsistencyReport {
        mae: g.color.masked_mae(next, &g.validity).unwrap_or(0.0),
        valid_fraction: g.validity.fraction(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_views_have_zero_seam_error() {
        let k = Intrinsics::from_fov(24, 24, 60.0).unwrap();
        let grid = ViewGrid::default();
        let views = vec![ImageBuffer::filled(24, 24, [0.3, 0.6, 0.9]); 36];
        let report = seam_error(&views, &k, &grid).unwrap();
        assert_eq!(report.edges.len(), 60);
        assert_eq!(report.max, 0.0);
        assert!(report.edges.iter().all(|e| e.overlap > 0.0));
    }

    #[test]
    fn identity_consistency() {
        let k = Intrinsics::from_fov(16, 16, 60.0).unwrap();
        let img = ImageBuffer::from_fn(16, 16, |x, y| [x as f32 / 15.0, y as f32 / 15.0, 0.25]);
        let d = DepthMap::constant(16, 16, 2.0);
        let r = trajectory_consistency(&img, &d, &img, &k, &RelativePose::identity()).unwrap();
        assert_eq!(r.mae, 0.0);
        assert_eq!(r.valid_fraction, 1.0);

        let inverted = ImageBuffer::from_fn(16, 16, |x, y| img.get(x, y).map(|c| 1.0 - c));
        let r = trajectory_consistency(&img, &d, &inverted, &k, &RelativePose::identity()).unwrap();
        let expect: f64 = img.data().iter().map(|&c| (2.0 * c as f64 - 1.0).abs()).sum::<f64>() / img.data().len() as f64;
        assert!((r.mae - expect).abs() < 1e-6);
    }
}
