//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use wcgen_core::dataio::{synth_scene, SyntheticScene, SyntheticSceneSpec};
use wcgen_core::geometry::{yaw_pitch_roll, Intrinsics, Point3, RelativePose, TranslationConvention};
use wcgen_core::panorama::{neighbor_set, traversal_queue, ViewGrid};
use wcgen_core::pipeline::Trajectory;
use wcgen_core::{DepthMap, ImageBuffer};

pub const LEVEL: f64 = 1.0 / 255.0;

/// Demo room with `count` viewpoints at `width` pixels.
pub fn room(width: usize, count: usize, seed: u64) -> SyntheticScene {
    synth_scene(&SyntheticSceneSpec::demo(width, count).unwrap(), seed).unwrap()
}

/// Trajectory through every viewpoint of `scene`, in order.
pub fn walk(scene: &SyntheticScene, id: &str) -> Trajectory {
    let ids = scene.viewpoints.iter().map(|v| v.id.clone()).collect();
    let pos: Vec<Point3> = scene.viewpoints.iter().map(|v| v.position).collect();
    Trajectory::from_positions(id, &scene.spec.scene_id, ids, &pos, &scene.spec.grid, None).unwrap()
}

/// Small deterministic generator for test fixtures.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        self.0 >> 11
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * (self.next_u64() as f64 / (1u64 << 53) as f64)
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }
}

/// Source view of a far backdrop plane with a nearer tilted plane covering
/// a rectangle, plus a random relative pose that shifts one against the
/// other. Every pixel's color encodes its linear index.
pub struct TwoPlaneScene {
    pub k: Intrinsics,
    pub color: ImageBuffer,
    pub depth: DepthMap,
    pub rel: RelativePose,
}

pub fn index_color(idx: usize) -> [f32; 3] {
    [(idx & 0xff) as f32 / 255.0, ((idx >> 8) & 0xff) as f32 / 255.0, 0.0]
}

pub fn color_index(c: [f32; 3]) -> usize {
    (c[0] * 255.0).round() as usize | ((c[1] * 255.0).round() as usize) << 8
}

/// Depth along the pixel ray `(x', y', 1)` to the plane `n . X = c`.
fn plane_depth(n: [f64; 3], c: f64, xn: f64, yn: f64) -> f64 {
    c / (n[0] * xn + n[1] * yn + n[2])
}

pub fn two_plane_scene(seed: u64, size: usize) -> TwoPlaneScene {
    let mut rng = Lcg(seed.wrapping_mul(0x9e37_79b9) ^ 0x5eed);
    let k = Intrinsics::from_fov(size, size, 60.0).unwrap();
    let far = ([rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), 1.0], rng.uniform(4.0, 6.0));
    let near = ([rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), 1.0], rng.uniform(1.2, 2.2));
    let (x0, y0) = (rng.below(size / 2), rng.below(size / 2));
    let (x1, y1) = (x0 + size / 4 + rng.below(size / 4), y0 + size / 4 + rng.below(size / 4));
    let mut depth = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (xn, yn) = ((x as f64 - k.cx) / k.fx, (y as f64 - k.cy) / k.fy);
            let in_near = (x0..x1).contains(&x) && (y0..y1).contains(&y);
            let (n, c) = if in_near { near } else { far };
            depth.push(plane_depth(n, c, xn, yn) as f32);
        }
    }
    let depth = DepthMap::from_values(size, size, depth).unwrap();
    let color = ImageBuffer::from_fn(size, size, |x, y| index_color(y * size + x));
    let r = yaw_pitch_roll(rng.uniform(-12.0, 12.0), rng.uniform(-8.0, 8.0), rng.uniform(-3.0, 3.0));
    let t = Point3::new(rng.uniform(-0.6, 0.6), rng.uniform(-0.3, 0.3), rng.uniform(-0.4, 0.4));
    let rel = RelativePose::new(r, t, TranslationConvention::RotateThenAdd).unwrap();
    TwoPlaneScene { k, color, depth, rel }
}

/// Per-target-pixel answer of the brute-force oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Winner {
    pub source: usize,
    pub depth: f64,
    /// Number of source splats landing on this pixel.
    pub candidates: usize,
}

/// For every target pixel, scans every source pixel, keeps those whose
/// transformed point rounds onto it, and picks the nearest; depths within
/// `tie` of the nearest go to the lowest source index.
pub fn brute_force_splat(s: &TwoPlaneScene, tie: f64) -> Vec<Option<Winner>> {
    let (w, h) = s.k.dims();
    let k = &s.k;
    let landed: Vec<Option<(usize, f64)>> = (0..w * h)
        .map(|i| {
            let z = s.depth.get_index(i)? as f64;
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            let p = Point3::new((x - k.cx) / k.fx * z, (y - k.cy) / k.fy * z, z);
            let q = s.rel.rotation() * p + s.rel.translation();
            if q.z <= 0.0 {
                return None;
            }
            let (u, v) = ((k.fx * q.x / q.z + k.cx).round(), (k.fy * q.y / q.z + k.cy).round());
            (u >= 0.0 && v >= 0.0 && u < w as f64 && v < h as f64).then(|| (v as usize * w + u as usize, q.z))
        })
        .collect();
    (0..w * h)
        .map(|target| {
            let hits: Vec<(usize, f64)> = landed
                .iter()
                .enumerate()
                .filter_map(|(src, l)| l.filter(|(t, _)| *t == target).map(|(_, z)| (src, z)))
                .collect();
            let zmin = hits.iter().map(|h| h.1).fold(f64::INFINITY, f64::min);
            hits.iter().find(|h| h.1 <= zmin + tie).map(|&(source, depth)| Winner {
                source,
                depth,
                candidates: hits.len(),
            })
        })
        .collect()
}

/// Replays the outpainting order and returns each step's neighbor set.
pub fn replay_neighbors(r: usize, grid: &ViewGrid) -> Vec<(usize, Vec<usize>)> {
    let mut generated = BTreeSet::from([r]);
    let mut out = Vec::new();
    for i in traversal_queue(r, grid).unwrap().order {
        let s = neighbor_set(i, &generated, r, grid).unwrap();
        out.push((i, s.members));
        generated.insert(i);
    }
    out
}
