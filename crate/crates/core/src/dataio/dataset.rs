//! Output dataset layout:
//!
//! ```text
//! <out>/<trajectory>/generation.json
//! <out>/<trajectory>/<viewpoint>/view_<i>.png
//! <out>/<trajectory>/guidance/step_<t>.png       forward-warped guidance
//! <out>/<trajectory>/guidance/step_<t>_mask.png  its validity
//! ```
//!
//! `generation.json` carries provenance, the config snapshot and a SHA-256
//! for every other file. It has no timestamps, so rewriting a run produces
//! identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::Intrinsics;
use crate::panorama::ViewGrid;
use crate::pipeline::{GeneratedTrajectory, PipelineConfig, StepRecord, ViewRecord};
use crate::raster::ImageBuffer;

use super::codec;
use super::manifest::write_json;

pub use crate::pipeline::{CallCounts, RunStatus};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "generation.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEntry {
    #[serde(flatten)]
    pub record: StepRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guidance: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guidance_mask: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewEntry {
    pub file: String,
    #[serde(flatten)]
    pub record: ViewRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewpointEntry {
    pub id: String,
    pub reference_index: usize,
    pub views: Vec<ViewEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationManifest {
    pub schema_version: u32,
    pub trajectory_id: String,
    pub scene_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    pub status: RunStatus,
    pub config: PipelineConfig,
    pub intrinsics: Intrinsics,
    pub grid: ViewGrid,
    pub calls: CallCounts,
    pub steps: Vec<StepEntry>,
    pub viewpoints: Vec<ViewpointEntry>,
    /// Path relative to the trajectory directory → hex SHA-256.
    pub checksums: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` unless the file already holds exactly them.
fn put(dir: &Path, rel: &str, bytes: &[u8], sums: &mut BTreeMap<String, String>) -> Result<()> {
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    if fs::read(&path).ok().as_deref() != Some(bytes) {
        fs::write(&path, bytes)?;
    }
    sums.insert(rel.to_string(), sha256_hex(bytes));
    Ok(())
}

/// Writes one trajectory under `out_dir` and returns the path of its
/// `generation.json`. Partial runs are written too; their status says so.
pub fn write_dataset(gen: &GeneratedTrajectory, out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = out_dir.as_ref().join(&gen.trajectory_id);
    fs::create_dir_all(&dir)?;
    let mut checksums = BTreeMap::new();

    let mut steps = Vec::with_capacity(gen.steps.len());
    for s in &gen.steps {
        let mut entry = StepEntry {
            record: s.clone(),
            guidance: None,
            guidance_mask: None,
        };
        entry.record.guidance = None;
        if let Some(g) = &s.guidance {
            let (img, mask) = (format!("guidance/step_{}.png", s.t), format!("guidance/step_{}_mask.png", s.t));
            put(&dir, &img, &codec::encode_image_png(&g.color)?, &mut checksums)?;
            put(&dir, &mask, &codec::encode_mask_png(&g.validity.to_weights())?, &mut checksums)?;
            entry.guidance = Some(img);
            entry.guidance_mask = Some(mask);
        }
        steps.push(entry);
    }

    let mut viewpoints = Vec::with_capacity(gen.viewpoints.len());
    for vp in &gen.viewpoints {
        let mut views = Vec::new();
        for (i, (img, rec)) in vp.views.iter().zip(&vp.records).enumerate() {
            let (Some(img), Some(rec)) = (img, rec) else { continue };
            let file = format!("{}/view_{i}.png", vp.id);
            put(&dir, &file, &codec::encode_image_png(img)?, &mut checksums)?;
            views.push(ViewEntry {
                file,
                record: rec.clone(),
            });
        }
        viewpoints.push(ViewpointEntry {
            id: vp.id.clone(),
            reference_index: vp.reference_index,
            views,
        });
    }

    let manifest = GenerationManifest {
        schema_version: SCHEMA_VERSION,
        trajectory_id: gen.trajectory_id.clone(),
        scene_id: gen.scene_id.clone(),
        instruction: gen.instruction.clone(),
        status: gen.status.clone(),
        config: gen.config.clone(),
        intrinsics: gen.intrinsics,
        grid: gen.grid,
        calls: gen.calls,
        steps,
        viewpoints,
        checksums,
    };
    let path = dir.join(MANIFEST_NAME);
    write_json(&path, &manifest)?;
    Ok(path)
}

fn read_manifest(path: &Path) -> Result<GenerationManifest> {
    let bytes = fs::read(path).map_err(|e| Error::load(path, e.to_string()))?;
    let m: GenerationManifest =
        serde_json::from_slice(&bytes).map_err(|e| Error::load(path, format!("malformed JSON: {e}")))?;
    if m.schema_version != SCHEMA_VERSION {
        return Err(Error::load(path, format!("unsupported schema_version {}", m.schema_version)));
    }
    Ok(m)
}

/// Recomputes every checksum listed in a `generation.json`.
pub fn verify_dataset(manifest_path: impl AsRef<Path>) -> Result<GenerationManifest> {
    let path = manifest_path.as_ref();
    let m = read_manifest(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    for (rel, expected) in &m.checksums {
        let file = dir.join(rel);
        let bytes = fs::read(&file).map_err(|e| Error::load(&file, e.to_string()))?;
        let found = sha256_hex(&bytes);
        if &found != expected {
            return Err(Error::Checksum {
                path: file,
                expected: expected.clone(),
                found,
            });
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetViewpoint {
    pub id: String,
    pub reference_index: usize,
    /// Indexed by perspective; `None` where a partial run stopped.
    pub views: Vec<Option<ImageBuffer>>,
}

impl DatasetViewpoint {
    pub fn complete_views(&self) -> Option<Vec<ImageBuffer>> {
        self.views.iter().cloned().collect()
    }
}

/// Verifies and decodes a written trajectory.
pub fn read_dataset(manifest_path: impl AsRef<Path>) -> Result<(GenerationManifest, Vec<DatasetViewpoint>)> {
    let path = manifest_path.as_ref();
    let m = verify_dataset(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let n = m.grid.len();
    let mut out = Vec::with_capacity(m.viewpoints.len());
    for vp in &m.viewpoints {
        let mut views = vec![None; n];
        for v in &vp.views {
            if v.record.index >= n {
                return Err(Error::load(path, format!("view index {} outside the grid", v.record.index)));
            }
            let file = dir.join(&v.file);
            let bytes = fs::read(&file).map_err(|e| Error::load(&file, e.to_string()))?;
            let img = codec::decode_image_png(&bytes).map_err(|e| Error::load(&file, e.to_string()))?;
            views[v.record.index] = Some(img);
        }
        out.push(DatasetViewpoint {
            id: vp.id.clone(),
            reference_index: vp.reference_index,
            views,
        });
    }
    Ok((m, out))
}
