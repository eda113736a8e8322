//! Scene and trajectory manifests. Paths inside a manifest are relative to
//! the manifest's directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::DEFAULT_DEPTH_SCALE;
use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Point3, RelativePose, Rotation, TranslationConvention};
use crate::panorama::ViewGrid;
use crate::pipeline::Viewpoint;

use super::codec;

fn default_depth_scale() -> f64 {
    DEFAULT_DEPTH_SCALE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewpointManifest {
    pub id: String,
    /// Meters, z up.
    pub position: [f64; 3],
    pub views: Vec<String>,
    pub depths: Vec<String>,
    /// Optional per-view captions, consumed by the manifest caption mock.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub captions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub scene_id: String,
    pub intrinsics: Intrinsics,
    #[serde(default)]
    pub grid: ViewGrid,
    #[serde(default = "default_depth_scale")]
    pub depth_scale: f64,
    pub viewpoints: Vec<ViewpointManifest>,
}

impl SceneManifest {
    /// Structural checks that need no file access.
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        self.grid.validate()?;
        if !(self.depth_scale.is_finite() && self.depth_scale > 0.0) {
            return Err(Error::invalid(format!("depth_scale must be positive, got {}", self.depth_scale)));
        }
        let n = self.grid.len();
        let mut seen = BTreeSet::new();
        for vp in &self.viewpoints {
            if !seen.insert(vp.id.as_str()) {
                return Err(Error::invalid(format!("duplicate viewpoint id {:?}", vp.id)));
            }
            if vp.position.iter().any(|c| !c.is_finite()) {
                return Err(Error::invalid(format!("viewpoint {:?} has a non-finite position", vp.id)));
            }
            if vp.views.len() != n || vp.depths.len() != n {
                return Err(Error::invalid(format!(
                    "viewpoint {:?} lists {} views and {} depths, grid needs {n}",
                    vp.id,
                    vp.views.len(),
                    vp.depths.len()
                )));
            }
            if !vp.captions.is_empty() && vp.captions.len() != n {
                return Err(Error::invalid(format!("viewpoint {:?} has {} captions, expected {n}", vp.id, vp.captions.len())));
            }
        }
        Ok(())
    }

    pub fn viewpoint(&self, id: &str) -> Option<&ViewpointManifest> {
        self.viewpoints.iter().find(|v| v.id == id)
    }

    pub fn positions(&self) -> BTreeMap<String, Point3> {
        self.viewpoints
            .iter()
            .map(|v| (v.id.clone(), Point3::from(v.position)))
            .collect()
    }
}

/// A validated manifest plus the directory its paths resolve against.
/// Viewpoint images are decoded on demand.
#[derive(Debug, Clone)]
pub struct Scene {
    pub manifest: SceneManifest,
    root: PathBuf,
}

impl Scene {
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn load_viewpoint(&self, id: &str) -> Result<Viewpoint> {
        let m = &self.manifest;
        let vm = m
            .viewpoint(id)
            .ok_or_else(|| Error::NotFound(format!("viewpoint {id:?} in scene {:?}", m.scene_id)))?;
        let dims = m.intrinsics.dims();
        let mut views = Vec::with_capacity(vm.views.len());
        let mut depths = Vec::with_capacity(vm.depths.len());
        for (v, d) in vm.views.iter().zip(&vm.depths) {
            let (vp, dp) = (self.resolve(v), self.resolve(d));
            let img = codec::decode_image_png(&read(&vp)?).map_err(|e| Error::load(&vp, e.to_string()))?;
            let depth = codec::decode_depth_png(&read(&dp)?, m.depth_scale).map_err(|e| Error::load(&dp, e.to_string()))?;
            if img.dims() != dims {
                return Err(Error::load(&vp, format!("image is {:?}, intrinsics say {dims:?}", img.dims())));
            }
            if depth.dims() != dims {
                return Err(Error::load(&dp, format!("depth is {:?}, intrinsics say {dims:?}", depth.dims())));
            }
            views.push(img);
            depths.push(depth);
        }
        Viewpoint::new(vm.id.clone(), Point3::from(vm.position), views, depths, m.grid, m.intrinsics)
    }

    /// Loads each distinct id once.
    pub fn load_viewpoints<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<BTreeMap<String, Viewpoint>> {
        let mut out = BTreeMap::new();
        for id in ids {
            if !out.contains_key(id) {
                out.insert(id.to_string(), self.load_viewpoint(id)?);
            }
        }
        Ok(out)
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::load(path, e.to_string()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::load(path, format!("malformed JSON: {e}")))
}

/// Reads and validates a scene manifest; every referenced file must exist.
pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    let manifest: SceneManifest = read_json(path)?;
    manifest.validate().map_err(|e| Error::load(path, e.to_string()))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    for vp in &manifest.viewpoints {
        for f in vp.views.iter().chain(&vp.depths) {
            let p = root.join(f);
            if !p.is_file() {
                return Err(Error::load(&p, format!("referenced by viewpoint {:?} but missing", vp.id)));
            }
        }
    }
    Ok(Scene { manifest, root })
}

pub fn save_scene(manifest: &SceneManifest, path: impl AsRef<Path>) -> Result<()> {
    manifest.validate()?;
    write_json(path.as_ref(), manifest)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativePoseSpec {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub convention: TranslationConvention,
}

impl RelativePoseSpec {
    pub fn to_pose(&self) -> Result<RelativePose> {
        let r = Rotation::from_fn(|i, j| self.rotation[i][j]);
        RelativePose::new(r, Point3::from(self.translation), self.convention)
    }

    pub fn from_pose(p: &RelativePose) -> Self {
        let r = p.rotation();
        Self {
            rotation: std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)])),
            translation: (*p.translation()).into(),
            convention: p.convention(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryManifest {
    pub trajectory_id: String,
    pub scene_id: String,
    pub viewpoints: Vec<String>,
    /// Overrides the bearing-derived reference index per step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_indices: Option<Vec<usize>>,
    /// Explicit transforms between consecutive reference cameras; checked
    /// against the viewpoint positions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative_poses: Option<Vec<RelativePoseSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TrajectoryFile {
    One(TrajectoryManifest),
    Many(Vec<TrajectoryManifest>),
    Wrapped { trajectories: Vec<TrajectoryManifest> },
}

/// Reads a trajectory file holding one manifest, an array of them, or
/// `{"trajectories": [...]}`.
pub fn load_trajectories(path: impl AsRef<Path>) -> Result<Vec<TrajectoryManifest>> {
    let path = path.as_ref();
    let list = match read_json::<TrajectoryFile>(path)? {
        TrajectoryFile::One(t) => vec![t],
        TrajectoryFile::Many(v) | TrajectoryFile::Wrapped { trajectories: v } => v,
    };
    let mut ids = BTreeSet::new();
    for t in &list {
        if t.viewpoints.len() < 2 {
            return Err(Error::load(path, format!("trajectory {:?} has fewer than 2 viewpoints", t.trajectory_id)));
        }
        if !ids.insert(t.trajectory_id.as_str()) {
            return Err(Error::load(path, format!("duplicate trajectory id {:?}", t.trajectory_id)));
        }
    }
    Ok(list)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{DepthMap, ImageBuffer};

    fn minimal(dir: &Path) -> PathBuf {
        let grid = ViewGrid::with_views_per_row(1).unwrap();
        let k = Intrinsics::from_fov(4, 3, 60.0).unwrap();
        let mut views = Vec::new();
        let mut depths = Vec::new();
        for i in 0..grid.len() {
            let img = ImageBuffer::filled(4, 3, [i as f32 / 3.0, 0.5, 0.25]);
            let d = DepthMap::from_fn(4, 3, |x, y| (x + y > 0).then_some(2.0));
            let (v, dp) = (format!("v{i}.png"), format!("d{i}.png"));
            fs::write(dir.join(&v), codec::encode_image_png(&img).unwrap()).unwrap();
            fs::write(dir.join(&dp), codec::encode_depth_png(&d, 4000.0).unwrap()).unwrap();
            views.push(v);
            depths.push(dp);
        }
        let m = SceneManifest {
            scene_id: "s".into(),
            intrinsics: k,
            grid,
            depth_scale: 4000.0,
            viewpoints: vec![ViewpointManifest {
                id: "a".into(),
                position: [0.0, 0.0, 1.5],
                views,
                depths,
                captions: vec![],
            }],
        };
        let path = dir.join("scene.json");
        save_scene(&m, &path).unwrap();
        path
    }

    #[test]
    fn round_trip_and_lazy_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = minimal(dir.path());
        let scene = load_scene(&path).unwrap();
        let again = dir.path().join("again.json");
        save_scene(&scene.manifest, &again).unwrap();
        assert_eq!(load_scene(&again).unwrap().manifest, scene.manifest);
        assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
        let vp = scene.load_viewpoint("a").unwrap();
        assert_eq!(vp.depths[0].get(1, 1), Some(2.0));
        assert_eq!(vp.depths[0].get(0, 0), None);
        assert!(matches!(scene.load_viewpoint("zz"), Err(Error::NotFound(_))));
    }

    #[test]
    fn load_errors_are_typed() {
        let dir = tempfile::tempdir().unwrap();
        let path = minimal(dir.path());
        fs::remove_file(dir.path().join("d1.png")).unwrap();
        assert!(matches!(load_scene(&path), Err(Error::Load { .. })));
        fs::write(&path, "{ not json").unwrap();
        assert!(matches!(load_scene(&path), Err(Error::Load { .. })));
        assert!(matches!(load_scene(dir.path().join("nope.json")), Err(Error::Load { .. })));
    }

    #[test]
    fn eight_bit_depth_is_rejected_at_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = minimal(dir.path());
        let img = ImageBuffer::filled(4, 3, [0.5; 3]);
        fs::write(dir.path().join("d0.png"), codec::encode_image_png(&img).unwrap()).unwrap();
        let scene = load_scene(&path).unwrap();
        assert!(matches!(scene.load_viewpoint("a"), Err(Error::Load { .. })));
    }

    #[test]
    fn trajectory_file_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let one = r#"{"trajectory_id":"t","scene_id":"s","viewpoints":["a","b"]}"#;
        let p = dir.path().join("t.json");
        fs::write(&p, one).unwrap();
        assert_eq!(load_trajectories(&p).unwrap().len(), 1);
        fs::write(&p, format!("[{one}]")).unwrap();
        assert_eq!(load_trajectories(&p).unwrap().len(), 1);
        fs::write(&p, format!(r#"{{"trajectories":[{one}]}}"#)).unwrap();
        assert_eq!(load_trajectories(&p).unwrap()[0].viewpoints, ["a", "b"]);
        fs::write(&p, r#"{"trajectory_id":"t","scene_id":"s","viewpoints":["a"]}"#).unwrap();
        assert!(load_trajectories(&p).is_err());
    }
}
