//! Manifests, codecs, dataset layout and the synthetic-room renderer.

pub mod codec;
mod dataset;
mod manifest;
mod synth;

pub use dataset::{
    read_dataset, verify_dataset, write_dataset, CallCounts, DatasetViewpoint, GenerationManifest, RunStatus, StepEntry,
    ViewEntry, ViewpointEntry, MANIFEST_NAME, SCHEMA_VERSION,
};
pub use manifest::{
    load_scene, load_trajectories, save_scene, RelativePoseSpec, Scene, SceneManifest, TrajectoryManifest,
    ViewpointManifest,
};
pub use synth::{
    synth_scene, write_synthetic_scene, Face, SyntheticRoom, SyntheticScene, SyntheticSceneSpec, SyntheticViewpoint,
    TextureKind, WallTexture,
};
