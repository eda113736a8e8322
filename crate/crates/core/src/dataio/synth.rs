//! Axis-aligned textured rooms rendered by exact ray casting. They give every
//! geometric test a ground truth: depth is the analytic hit distance and any
//! perspective or panorama can be rendered directly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::mock::splitmix64;
use crate::error::{Error, Result};
use crate::geometry::{camera_to_world_axes, Intrinsics, Point3, Rotation};
use crate::panorama::{equirect_direction, ViewGrid};
use crate::pipeline::{view_pose, Viewpoint};
use crate::raster::{DepthMap, ImageBuffer};

use super::codec;
use super::manifest::{save_scene, SceneManifest, ViewpointManifest};

/// Room faces; the box spans `[0, dims]` on every axis, z up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Face {
    WestWall,
    EastWall,
    SouthWall,
    NorthWall,
    Floor,
    Ceiling,
}

impl Face {
    pub const ALL: [Face; 6] = [
        Face::WestWall,
        Face::EastWall,
        Face::SouthWall,
        Face::NorthWall,
        Face::Floor,
        Face::Ceiling,
    ];

    fn of(axis: usize, positive: bool) -> Face {
        Face::ALL[axis * 2 + positive as usize]
    }

    /// In-plane coordinates of a point on this face.
    fn plane_coords(self, q: &Point3) -> (f64, f64) {
        match self {
            Face::WestWall | Face::EastWall => (q.y, q.z),
            Face::SouthWall | Face::NorthWall => (q.x, q.z),
            Face::Floor | Face::Ceiling => (q.x, q.y),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureKind {
    /// Soft checkerboard: the product of two sines, so no hard edges.
    Checker,
    /// Linear ramp along the first in-plane axis.
    Gradient,
    /// Sum of two sinusoids with seeded phases.
    Waves,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WallTexture {
    pub kind: TextureKind,
    /// Checker cell size, wave period or ramp length, in meters.
    pub scale: f64,
    /// Peak deviation from the base color.
    pub contrast: f64,
    pub seed: u64,
}

fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Texture with its seed-derived colors and phases resolved.
#[derive(Debug, Clone, Copy)]
struct Shader {
    tex: WallTexture,
    base: [f64; 3],
    tint: [f64; 3],
    phase: [f64; 2],
}

impl Shader {
    fn new(tex: WallTexture, scene_seed: u64) -> Self {
        let mut h = splitmix64(tex.seed ^ splitmix64(scene_seed));
        let mut next = || {
            h = splitmix64(h);
            unit(h)
        };
        let base = [0; 3].map(|_| 0.3 + 0.4 * next());
        let tint = [0; 3].map(|_| 2.0 * next() - 1.0);
        let phase = [0; 2].map(|_| next() * std::f64::consts::TAU);
        Self { tex, base, tint, phase }
    }

    fn color(&self, s: f64, t: f64) -> [f32; 3] {
        use std::f64::consts::{PI, TAU};
        let l = self.tex.scale;
        let p = match self.tex.kind {
            TextureKind::Checker => (PI * s / l + self.phase[0]).sin() * (PI * t / l + self.phase[1]).sin(),
            TextureKind::Gradient => ((s / l).fract() * 2.0 - 1.0).abs() * 2.0 - 1.0,
            TextureKind::Waves => {
                0.5 * (TAU * s / l + self.phase[0]).sin() + 0.5 * (TAU * t / (1.37 * l) + self.phase[1]).sin()
            }
        };
        [0, 1, 2].map(|c| (self.base[c] + self.tex.contrast * p * self.tint[c]).clamp(0.0, 1.0) as f32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticViewpoint {
    pub id: String,
    pub position: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    pub scene_id: String,
    /// Room extent along x, y, z in meters.
    pub room: [f64; 3],
    /// One texture per face, in [`Face::ALL`] order.
    pub textures: [WallTexture; 6],
    pub viewpoints: Vec<SyntheticViewpoint>,
    #[serde(default)]
    pub grid: ViewGrid,
    #[serde(default)]
    pub intrinsics: Intrinsics,
}

impl SyntheticSceneSpec {
    /// A 6 × 5 × 3 m room with low-contrast textures and `count` viewpoints
    /// 0.3 m apart along a diagonal walk, rendered at `width` pixels square.
    pub fn demo(width: usize, count: usize) -> Result<Self> {
        let tex = |kind, scale, seed| WallTexture {
            kind,
            scale,
            contrast: 0.12,
            seed,
        };
        Ok(Self {
            scene_id: "synthetic-room".into(),
            room: [6.0, 5.0, 3.0],
            textures: [
                tex(TextureKind::Waves, 1.3, 1),
                tex(TextureKind::Checker, 0.9, 2),
                tex(TextureKind::Waves, 1.7, 3),
                tex(TextureKind::Gradient, 2.5, 4),
                tex(TextureKind::Checker, 1.1, 5),
                tex(TextureKind::Waves, 2.1, 6),
            ],
            viewpoints: (0..count)
                .map(|i| SyntheticViewpoint {
                    id: format!("vp{i:02}"),
                    position: [1.6 + 0.3 * i as f64, 1.4 + 0.2 * i as f64, 1.5],
                })
                .collect(),
            grid: ViewGrid::default(),
            intrinsics: Intrinsics::from_fov(width, width, 60.0)?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.room.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::invalid(format!("room dimensions must be positive, got {:?}", self.room)));
        }
        if self.textures.iter().any(|t| !(t.scale.is_finite() && t.scale > 0.0) || !t.contrast.is_finite()) {
            return Err(Error::invalid("texture scales must be positive and contrasts finite"));
        }
        self.grid.validate()?;
        self.intrinsics.validate()?;
        let mut ids = std::collections::BTreeSet::new();
        for vp in &self.viewpoints {
            let inside = vp.position.iter().zip(&self.room).all(|(p, d)| *p > 0.0 && p < d);
            if !inside {
                return Err(Error::invalid(format!("viewpoint {:?} is not strictly inside the room", vp.id)));
            }
            if !ids.insert(vp.id.as_str()) {
                return Err(Error::invalid(format!("duplicate viewpoint id {:?}", vp.id)));
            }
        }
        Ok(())
    }
}

/// The room as a renderable object.
#[derive(Debug, Clone)]
pub struct SyntheticRoom {
    dims: Point3,
    shaders: [Shader; 6],
}

impl SyntheticRoom {
    pub fn new(room: [f64; 3], textures: &[WallTexture; 6], seed: u64) -> Self {
        Self {
            dims: Point3::from(room),
            shaders: textures.map(|t| Shader::new(t, seed)),
        }
    }

    /// First wall hit by `origin + t * dir` for `t > 0`: the face and `t`.
    /// `origin` must lie inside the room and `dir` must be non-zero.
    pub fn intersect(&self, origin: &Point3, dir: &Point3) -> (Face, f64) {
        let mut best = (Face::Floor, f64::INFINITY);
        for a in 0..3 {
            if dir[a] == 0.0 {
                continue;
            }
            let positive = dir[a] > 0.0;
            let wall = if positive { self.dims[a] } else { 0.0 };
            let t = (wall - origin[a]) / dir[a];
            if t < best.1 {
                best = (Face::of(a, positive), t);
            }
        }
        best
    }

    /// Color seen along `dir` and the ray parameter of the hit.
    pub fn trace(&self, origin: &Point3, dir: &Point3) -> ([f32; 3], f64) {
        let (face, t) = self.intersect(origin, dir);
        let q = origin + dir * t;
        let (s, u) = face.plane_coords(&q);
        (self.shaders[face as usize].color(s, u), t)
    }

    /// Perspective render with z-depth; `rotation` maps camera to world axes.
    pub fn render_view(&self, origin: &Point3, rotation: &Rotation, k: &Intrinsics) -> (ImageBuffer, DepthMap) {
        let (w, h) = k.dims();
        let mut img = ImageBuffer::new(w, h);
        let mut depth = vec![0.0f32; w * h];
        for y in 0..h {
            for x in 0..w {
                // camera ray with unit z, so the ray parameter is the z-depth
                let ray = Point3::new((x as f64 - k.cx) / k.fx, (y as f64 - k.cy) / k.fy, 1.0);
                let (c, t) = self.trace(origin, &(rotation * ray));
                img.set(x, y, c);
                depth[y * w + x] = t as f32;
            }
        }
        (img, DepthMap::from_values(w, h, depth).expect("positive depth inside the room"))
    }

    /// Equirectangular render in the grid's frame (longitude 0 = heading 0).
    pub fn render_equirect(&self, origin: &Point3, width: usize, height: usize) -> ImageBuffer {
        let b = camera_to_world_axes();
        ImageBuffer::from_fn(width, height, |x, y| self.trace(origin, &(b * equirect_direction(x, y, width, height))).0)
    }
}

/// Rendered synthetic scene, kept in memory.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub spec: SyntheticSceneSpec,
    pub seed: u64,
    pub room: SyntheticRoom,
    /// Views are quantized to 8 bits so they equal what a reload returns;
    /// depth is the exact hit distance.
    pub viewpoints: Vec<Viewpoint>,
}

impl SyntheticScene {
    pub fn viewpoint(&self, id: &str) -> Option<&Viewpoint> {
        self.viewpoints.iter().find(|v| v.id == id)
    }

    pub fn by_id(&self) -> std::collections::BTreeMap<String, Viewpoint> {
        self.viewpoints.iter().map(|v| (v.id.clone(), v.clone())).collect()
    }
}

pub fn synth_scene(spec: &SyntheticSceneSpec, seed: u64) -> Result<SyntheticScene> {
    spec.validate()?;
    let room = SyntheticRoom::new(spec.room, &spec.textures, seed);
    let k = spec.intrinsics;
    let viewpoints = spec
        .viewpoints
        .iter()
        .map(|sv| {
            let pos = Point3::from(sv.position);
            let mut views = Vec::with_capacity(spec.grid.len());
            let mut depths = Vec::with_capacity(spec.grid.len());
            for i in 0..spec.grid.len() {
                let pose = view_pose(&pos, i, &spec.grid)?;
                let (img, d) = room.render_view(&pos, pose.rotation(), &k);
                views.push(img.quantized());
                depths.push(d);
            }
            Viewpoint::new(sv.id.clone(), pos, views, depths, spec.grid, k)
        })
        .collect::<Result<_>>()?;
    Ok(SyntheticScene {
        spec: spec.clone(),
        seed,
        room,
        viewpoints,
    })
}

fn view_caption(grid: &ViewGrid, i: usize) -> String {
    let heading = grid.column(i) as f64 * grid.heading_step;
    let elevation = grid.elevations[grid.row(i)];
    format!("a synthetic room seen at heading {heading} degrees, elevation {elevation} degrees")
}

/// Writes PNGs and a scene manifest into `dir`; returns the manifest path.
pub fn write_synthetic_scene(scene: &SyntheticScene, dir: impl AsRef<Path>, depth_scale: f64) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let grid = scene.spec.grid;
    let mut viewpoints = Vec::new();
    for vp in &scene.viewpoints {
        let sub = dir.join(&vp.id);
        std::fs::create_dir_all(&sub)?;
        let mut views = Vec::new();
        let mut depths = Vec::new();
        for i in 0..grid.len() {
            let (v, d) = (format!("{}/view_{i}.png", vp.id), format!("{}/depth_{i}.png", vp.id));
            std::fs::write(dir.join(&v), codec::encode_image_png(&vp.views[i])?)?;
            std::fs::write(dir.join(&d), codec::encode_depth_png(&vp.depths[i], depth_scale)?)?;
            views.push(v);
            depths.push(d);
        }
        viewpoints.push(ViewpointManifest {
            id: vp.id.clone(),
            position: vp.position.into(),
            views,
            depths,
            captions: (0..grid.len()).map(|i| view_caption(&grid, i)).collect(),
        });
    }
    let manifest = SceneManifest {
        scene_id: scene.spec.scene_id.clone(),
        intrinsics: scene.spec.intrinsics,
        grid,
        depth_scale,
        viewpoints,
    };
    let path = dir.join("scene.json");
    save_scene(&manifest, &path)?;
    Ok(path)
}
