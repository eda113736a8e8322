//! Two-stage generation along a trajectory.
//!
//! Stage 1 walks the trajectory and produces one reference perspective per
//! viewpoint: the first from depth alone, every later one from the previous
//! reference forward-warped into the new camera. Stage 2 grows each reference
//! into the full ring of perspectives by outpainting rotation-warped
//! neighbors in traversal order.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use log::{debug, info};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{generate_checked, Backends, GenerationMode, GenerationRequest, GenerationResponse};
use crate::dataio::{SceneManifest, TrajectoryManifest};
use crate::error::{Error, Result, ResultExt};
use crate::geometry::{camera_to_world_axes, Intrinsics, Point3, Pose, RelativePose, Rotation};
use crate::panorama::{grid_rotation, neighbor_set, traversal_queue, ViewGrid};
use crate::raster::{DepthMap, ImageBuffer};
use crate::trajwarp::{forward_warp, overlap_fraction, GuidanceImage};
use crate::viewwarp::{default_blur_sigma, feather_known, merge_guidance, rotation_warp};

/// Horizontal distance below which no bearing is defined.
pub const MIN_BEARING_DISTANCE: f64 = 0.01;

/// Explicit relative poses must agree with the positions this closely.
pub const POSE_TOLERANCE: f64 = 1e-6;

/// One panoramic observation: `grid.len()` perspectives with depth.
#[derive(Debug, Clone, PartialEq)]
pub struct Viewpoint {
    pub id: String,
    pub position: Point3,
    pub views: Vec<ImageBuffer>,
    pub depths: Vec<DepthMap>,
    pub grid: ViewGrid,
    pub intrinsics: Intrinsics,
}

impl Viewpoint {
    pub fn new(
        id: impl Into<String>,
        position: Point3,
        views: Vec<ImageBuffer>,
        depths: Vec<DepthMap>,
        grid: ViewGrid,
        intrinsics: Intrinsics,
    ) -> Result<Self> {
        let vp = Self {
            id: id.into(),
            position,
            views,
            depths,
            grid,
            intrinsics,
        };
        vp.validate()?;
        Ok(vp)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.intrinsics.validate()?;
        let n = self.grid.len();
        if self.views.len() != n || self.depths.len() != n {
            return Err(Error::invalid(format!(
                "viewpoint {:?} has {} views and {} depths, grid needs {n}",
                self.id,
                self.views.len(),
                self.depths.len()
            )));
        }
        if self.position.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid(format!("viewpoint {:?} has a non-finite position", self.id)));
        }
        let dims = self.intrinsics.dims();
        if self.views.iter().any(|v| v.dims() != dims) || self.depths.iter().any(|d| d.dims() != dims) {
            return Err(Error::invalid(format!("viewpoint {:?} has images not sized {dims:?}", self.id)));
        }
        Ok(())
    }

    /// World pose of perspective `i`.
    pub fn view_pose(&self, i: usize) -> Result<Pose> {
        view_pose(&self.position, i, &self.grid)
    }
}

pub fn view_pose(position: &Point3, i: usize, grid: &ViewGrid) -> Result<Pose> {
    Pose::new(camera_to_world_axes() * grid_rotation(i, grid)?, *position)
}

/// Horizontal-row perspective facing from `pos` toward `next`.
pub fn select_reference_index(pos: &Point3, next: &Point3, grid: &ViewGrid) -> Result<usize> {
    grid.validate()?;
    let (dx, dy) = (next.x - pos.x, next.y - pos.y);
    let dist = dx.hypot(dy);
    if dist < MIN_BEARING_DISTANCE {
        return Err(Error::DegenerateBearing(dist));
    }
    let bearing = dx.atan2(dy).to_degrees().rem_euclid(360.0);
    let nh = grid.views_per_row;
    let col = ((bearing / grid.heading_step + 0.5).floor() as i64).rem_euclid(nh as i64) as usize;
    Ok(nh + col)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: String,
    pub scene_id: String,
    pub viewpoint_ids: Vec<String>,
    pub reference_indices: Vec<usize>,
    /// `relative_poses[t - 1]` maps camera points of reference `t - 1` into
    /// reference `t`.
    pub relative_poses: Vec<RelativePose>,
    pub instruction: Option<String>,
}

impl Trajectory {
    /// Derives reference indices from bearings (the last viewpoint keeps the
    /// previous step's bearing) and relative poses from positions.
    pub fn from_positions(
        id: impl Into<String>,
        scene_id: impl Into<String>,
        viewpoint_ids: Vec<String>,
        positions: &[Point3],
        grid: &ViewGrid,
        reference_override: Option<Vec<usize>>,
    ) -> Result<Self> {
        let l = viewpoint_ids.len();
        if l < 2 {
            return Err(Error::invalid("a trajectory needs at least 2 viewpoints"));
        }
        if positions.len() != l {
            return Err(Error::invalid("one position per viewpoint is required"));
        }
        let reference_indices = match reference_override {
            Some(r) => {
                if r.len() != l {
                    return Err(Error::invalid(format!("{} reference indices for {l} viewpoints", r.len())));
                }
                r
            }
            None => (0..l)
                .map(|t| {
                    let (a, b) = if t + 1 < l { (t, t + 1) } else { (t - 1, t) };
                    select_reference_index(&positions[a], &positions[b], grid)
                        .map_err(|e| e.context(format!("bearing from {:?} to {:?}", viewpoint_ids[a], viewpoint_ids[b])))
                })
                .collect::<Result<_>>()?,
        };
        for &r in &reference_indices {
            grid.check_index(r)?;
        }
        let relative_poses = (1..l)
            .map(|t| {
                let from = view_pose(&positions[t - 1], reference_indices[t - 1], grid)?;
                let to = view_pose(&positions[t], reference_indices[t], grid)?;
                Ok(RelativePose::between(&from, &to))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            id: id.into(),
            scene_id: scene_id.into(),
            viewpoint_ids,
            reference_indices,
            relative_poses,
            instruction: None,
        })
    }

    /// Resolves a manifest against its scene. Explicit relative poses are
    /// kept in their declared convention after checking them against the
    /// positions.
    pub fn from_manifest(m: &TrajectoryManifest, scene: &SceneManifest) -> Result<Self> {
        if m.scene_id != scene.scene_id {
            return Err(Error::invalid(format!(
                "trajectory {:?} belongs to scene {:?}, not {:?}",
                m.trajectory_id, m.scene_id, scene.scene_id
            )));
        }
        let positions = m
            .viewpoints
            .iter()
            .map(|id| {
                scene
                    .viewpoint(id)
                    .map(|v| Point3::from(v.position))
                    .ok_or_else(|| Error::NotFound(format!("viewpoint {id:?} in scene {:?}", scene.scene_id)))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut traj = Self::from_positions(
            &m.trajectory_id,
            &m.scene_id,
            m.viewpoints.clone(),
            &positions,
            &scene.grid,
            m.reference_indices.clone(),
        )?;
        traj.instruction = m.instruction.clone();
        if let Some(specs) = &m.relative_poses {
            if specs.len() != traj.relative_poses.len() {
                return Err(Error::invalid(format!(
                    "{} relative poses for {} transitions",
                    specs.len(),
                    traj.relative_poses.len()
                )));
            }
            for (t, spec) in specs.iter().enumerate() {
                let given = spec.to_pose()?;
                check_pose_agrees(&given, &traj.relative_poses[t]).context(|| format!("relative pose {}", t + 1))?;
                traj.relative_poses[t] = given;
            }
        }
        Ok(traj)
    }

    pub fn len(&self) -> usize {
        self.viewpoint_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.viewpoint_ids.is_empty()
    }
}

fn check_pose_agrees(given: &RelativePose, expected: &RelativePose) -> Result<()> {
    let (g, e) = (given.to_canonical(), expected.to_canonical());
    let dr = (g.rotation() - e.rotation()).abs().max();
    let dt = (g.translation() - e.translation()).norm();
    if dr > POSE_TOLERANCE || dt > POSE_TOLERANCE {
        return Err(Error::invalid(format!(
            "disagrees with viewpoint positions (rotation {dr:.2e}, translation {dt:.2e} m)"
        )));
    }
    Ok(())
}

/// Which depth the forward warp lifts the previous reference with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarpDepth {
    /// Monocular estimate of the generated previous reference.
    #[default]
    Estimated,
    /// The dataset depth of the previous reference perspective.
    Dataset,
}

/// Depth conditioning for forward-module generations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionDepth {
    /// Dataset depth when it has any valid pixel, otherwise an estimate.
    #[default]
    Auto,
    Dataset,
    Estimated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub strength_initial: f64,
    pub strength_forward: f64,
    pub strength_outpaint: f64,
    /// Below this warped coverage the forward module starts from depth alone.
    pub min_overlap: f64,
    /// Mask feathering sigma in pixels; 1% of the width when unset.
    pub blur_sigma: Option<f64>,
    pub warp_depth: WarpDepth,
    pub condition_depth: ConditionDepth,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            strength_initial: 1.0,
            strength_forward: 0.6,
            strength_outpaint: 0.75,
            min_overlap: 0.05,
            blur_sigma: None,
            warp_depth: WarpDepth::default(),
            condition_depth: ConditionDepth::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("strength_initial", self.strength_initial),
            ("strength_forward", self.strength_forward),
            ("strength_outpaint", self.strength_outpaint),
            ("min_overlap", self.min_overlap),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if let Some(s) = self.blur_sigma {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::invalid(format!("blur_sigma must be non-negative, got {s}")));
            }
        }
        Ok(())
    }

    pub fn blur_sigma_for(&self, width: usize) -> f64 {
        self.blur_sigma.unwrap_or_else(|| default_blur_sigma(width))
    }
}

/// Per-image seed: independent across viewpoints and perspectives, fixed by
/// the run seed.
pub fn derive_seed(run_seed: u64, viewpoint_id: &str, index: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(run_seed.to_le_bytes());
    h.update((viewpoint_id.len() as u64).to_le_bytes());
    h.update(viewpoint_id.as_bytes());
    h.update((index as u64).to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthOrigin {
    Dataset,
    Estimated,
}

/// Everything needed to reissue the request that produced one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub index: usize,
    pub mode: GenerationMode,
    pub prompt: String,
    pub strength: f64,
    pub seed: u64,
    pub seed_used: u64,
    pub backend_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<DepthOrigin>,
    /// Perspectives whose warps formed the outpainting guidance.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub neighbors: Vec<usize>,
    /// Share of pixels the guidance already covered.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub known_fraction: Option<f64>,
}

impl ViewRecord {
    fn new(index: usize, req: &GenerationRequest, resp: &GenerationResponse) -> Self {
        Self {
            index,
            mode: req.mode,
            prompt: req.prompt.clone(),
            strength: req.strength,
            seed: req.seed,
            seed_used: resp.seed_used,
            backend_id: resp.backend_id.clone(),
            depth: None,
            neighbors: Vec::new(),
            known_fraction: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Initial,
    Forward,
    Replenish,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Initial => "initial",
            Stage::Forward => "forward",
            Stage::Replenish => "replenish",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based position along the trajectory.
    pub t: usize,
    pub viewpoint_id: String,
    pub reference_index: usize,
    pub stage: Stage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlap: Option<f64>,
    pub fallback: bool,
    /// Forward-warped previous reference, when one was computed.
    #[serde(skip)]
    pub guidance: Option<GuidanceImage>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallCounts {
    pub depth_to_image: usize,
    pub image_to_image: usize,
    pub outpaint: usize,
    pub estimate_depth: usize,
    pub caption: usize,
}

impl CallCounts {
    fn record(&mut self, mode: GenerationMode) {
        match mode {
            GenerationMode::DepthToImage => self.depth_to_image += 1,
            GenerationMode::ImageToImage => self.image_to_image += 1,
            GenerationMode::Outpaint => self.outpaint += 1,
        }
    }

    pub fn generations(&self) -> usize {
        self.depth_to_image + self.image_to_image + self.outpaint
    }
}

impl std::ops::AddAssign for CallCounts {
    fn add_assign(&mut self, o: Self) {
        self.depth_to_image += o.depth_to_image;
        self.image_to_image += o.image_to_image;
        self.outpaint += o.outpaint;
        self.estimate_depth += o.estimate_depth;
        self.caption += o.caption;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedViewpoint {
    pub id: String,
    pub reference_index: usize,
    #[serde(skip)]
    pub views: Vec<Option<ImageBuffer>>,
    pub records: Vec<Option<ViewRecord>>,
}

impl GeneratedViewpoint {
    fn new(id: &str, reference_index: usize, n: usize) -> Self {
        Self {
            id: id.to_string(),
            reference_index,
            views: vec![None; n],
            records: vec![None; n],
        }
    }

    pub fn is_complete(&self) -> bool {
        self.views.iter().all(Option::is_some)
    }

    /// All views, if every one was generated.
    pub fn complete_views(&self) -> Option<Vec<ImageBuffer>> {
        self.views.iter().cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Partial { t: usize, stage: Stage, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedTrajectory {
    pub trajectory_id: String,
    pub scene_id: String,
    pub instruction: Option<String>,
    pub intrinsics: Intrinsics,
    pub grid: ViewGrid,
    pub config: PipelineConfig,
    pub steps: Vec<StepRecord>,
    /// In trajectory order.
    pub viewpoints: Vec<GeneratedViewpoint>,
    pub calls: CallCounts,
    pub status: RunStatus,
}

impl GeneratedTrajectory {
    pub fn is_complete(&self) -> bool {
        self.status == RunStatus::Complete
    }

    pub fn fallbacks(&self) -> usize {
        self.steps.iter().filter(|s| s.fallback).count()
    }
}

/// A run that stopped early. `partial` is absent when validation failed
/// before anything was generated.
#[derive(Debug, thiserror::Error)]
#[error("trajectory {trajectory_id}: {error}")]
pub struct PipelineFailure {
    pub trajectory_id: String,
    #[source]
    pub error: Error,
    pub partial: Option<Box<GeneratedTrajectory>>,
}

/// Backend access with call accounting.
struct Ctx<'a> {
    backends: &'a Backends,
    cfg: &'a PipelineConfig,
    calls: CallCounts,
}

impl<'a> Ctx<'a> {
    fn new(backends: &'a Backends, cfg: &'a PipelineConfig) -> Self {
        Self {
            backends,
            cfg,
            calls: CallCounts::default(),
        }
    }

    fn caption(&mut self, img: &ImageBuffer) -> Result<String> {
        self.calls.caption += 1;
        self.backends.caption(img).context(|| "caption")
    }

    fn estimate_depth(&mut self, img: &ImageBuffer) -> Result<DepthMap> {
        self.calls.estimate_depth += 1;
        self.backends.estimate_depth(img).context(|| "depth estimate")
    }

    fn generate(&mut self, req: &GenerationRequest) -> Result<GenerationResponse> {
        self.calls.record(req.mode);
        generate_checked(self.backends.generator.as_ref(), req).context(|| format!("{} generation", req.mode))
    }
}

pub struct ModuleOutput {
    pub image: ImageBuffer,
    pub record: ViewRecord,
}

pub struct ForwardOutput {
    pub image: ImageBuffer,
    pub record: ViewRecord,
    pub guidance: GuidanceImage,
    pub overlap: f64,
    pub fallback: bool,
}

fn dataset_depth(vp: &Viewpoint, i: usize) -> Result<&DepthMap> {
    let d = &vp.depths[i];
    if d.valid_count() == 0 {
        return Err(Error::invalid(format!("viewpoint {:?} perspective {i} has no valid depth", vp.id)));
    }
    Ok(d)
}

fn initial(vp: &Viewpoint, r: usize, ctx: &mut Ctx) -> Result<ModuleOutput> {
    vp.grid.check_index(r)?;
    let depth = dataset_depth(vp, r)?.clone();
    let prompt = ctx.caption(&vp.views[r])?;
    let req = GenerationRequest::depth_to_image(prompt, depth, ctx.cfg.strength_initial, derive_seed(ctx.cfg.seed, &vp.id, r));
    let resp = ctx.generate(&req)?;
    let mut record = ViewRecord::new(r, &req, &resp);
    record.depth = Some(DepthOrigin::Dataset);
    Ok(ModuleOutput { image: resp.image, record })
}

/// Reference perspective `r` of the first viewpoint, generated from its
/// dataset depth and the caption of its real view.
pub fn initial_module(vp: &Viewpoint, r: usize, backends: &Backends, cfg: &PipelineConfig) -> Result<ModuleOutput> {
    initial(vp, r, &mut Ctx::new(backends, cfg))
}

fn forward(
    prev_y: &ImageBuffer,
    prev_dataset_depth: Option<&DepthMap>,
    vp: &Viewpoint,
    r: usize,
    rel: &RelativePose,
    ctx: &mut Ctx,
) -> Result<ForwardOutput> {
    vp.grid.check_index(r)?;
    let warp_depth = match (ctx.cfg.warp_depth, prev_dataset_depth) {
        (WarpDepth::Dataset, Some(d)) => d.clone(),
        (WarpDepth::Dataset, None) => return Err(Error::invalid("dataset warp depth requested but not supplied")),
        (WarpDepth::Estimated, _) => ctx.estimate_depth(prev_y)?,
    };
    let guidance = forward_warp(prev_y, &warp_depth, &vp.intrinsics, rel).context(|| "forward warp")?;
    let overlap = overlap_fraction(&guidance);
    if overlap < ctx.cfg.min_overlap {
        debug!("viewpoint {}: overlap {overlap:.4} below {}, starting from depth", vp.id, ctx.cfg.min_overlap);
        let out = initial(vp, r, ctx)?;
        return Ok(ForwardOutput {
            image: out.image,
            record: out.record,
            guidance,
            overlap,
            fallback: true,
        });
    }
    let (depth, origin) = match ctx.cfg.condition_depth {
        ConditionDepth::Dataset => (dataset_depth(vp, r)?.clone(), DepthOrigin::Dataset),
        ConditionDepth::Estimated => (ctx.estimate_depth(&vp.views[r])?, DepthOrigin::Estimated),
        ConditionDepth::Auto => match dataset_depth(vp, r) {
            Ok(d) => (d.clone(), DepthOrigin::Dataset),
            Err(_) => (ctx.estimate_depth(&vp.views[r])?, DepthOrigin::Estimated),
        },
    };
    let prompt = ctx.caption(&vp.views[r])?;
    let req = GenerationRequest {
        mode: GenerationMode::ImageToImage,
        prompt,
        depth: Some(depth),
        init_image: Some(guidance.color.clone()),
        mask: Some(guidance.validity.to_weights()),
        strength: ctx.cfg.strength_forward,
        seed: derive_seed(ctx.cfg.seed, &vp.id, r),
    };
    let resp = ctx.generate(&req)?;
    let mut record = ViewRecord::new(r, &req, &resp);
    record.depth = Some(origin);
    record.known_fraction = Some(overlap);
    Ok(ForwardOutput {
        image: resp.image,
        record,
        guidance,
        overlap,
        fallback: false,
    })
}

/// Reference perspective `r` of `vp`, conditioned on the previous reference
/// warped through `rel`. Falls back to [`initial_module`] when the warp
/// covers less than `cfg.min_overlap` of the frame.
///
/// `prev_dataset_depth` is only read when `cfg.warp_depth` is `Dataset`.
pub fn forward_module(
    prev_y: &ImageBuffer,
    prev_dataset_depth: Option<&DepthMap>,
    vp: &Viewpoint,
    r: usize,
    rel: &RelativePose,
    backends: &Backends,
    cfg: &PipelineConfig,
) -> Result<ForwardOutput> {
    forward(prev_y, prev_dataset_depth, vp, r, rel, &mut Ctx::new(backends, cfg))
}

/// Rotation taking perspective `j`'s camera rays to perspective `i`'s.
pub fn rotation_between(j: usize, i: usize, grid: &ViewGrid) -> Result<Rotation> {
    Ok(grid_rotation(i, grid)?.transpose() * grid_rotation(j, grid)?)
}

/// Fills every missing slot of `out` in traversal order. Stops at the first
/// error, leaving earlier results in place.
fn replenish(vp: &Viewpoint, out: &mut GeneratedViewpoint, ctx: &mut Ctx) -> Result<()> {
    let (grid, k) = (&vp.grid, &vp.intrinsics);
    let r = out.reference_index;
    if out.views[r].is_none() {
        return Err(Error::InvalidState(format!("viewpoint {:?} has no reference image", vp.id)));
    }
    let sigma = ctx.cfg.blur_sigma_for(k.width);
    let mut generated = BTreeSet::from([r]);
    for i in traversal_queue(r, grid)?.order {
        let step = |ctx: &mut Ctx| -> Result<(ImageBuffer, ViewRecord)> {
            let s = neighbor_set(i, &generated, r, grid)?;
            let warps = s
                .members
                .iter()
                .map(|&j| {
                    let src = out.views[j].as_ref().expect("generated neighbor");
                    rotation_warp(src, k, &rotation_between(j, i, grid)?, &Rotation::identity())
                })
                .collect::<Result<Vec<_>>>()?;
            let (merged, holes) = merge_guidance(&warps)?;
            let known = holes.not();
            let mask = feather_known(&known, sigma)?;
            let prompt = ctx.caption(&vp.views[i])?;
            let req = GenerationRequest::outpaint(
                prompt,
                merged.color,
                mask,
                ctx.cfg.strength_outpaint,
                derive_seed(ctx.cfg.seed, &vp.id, i),
            );
            let resp = ctx.generate(&req)?;
            let mut record = ViewRecord::new(i, &req, &resp);
            record.neighbors = s.members;
            record.known_fraction = Some(known.fraction());
            Ok((resp.image, record))
        };
        let (img, record) = step(ctx).context(|| format!("viewpoint {:?} perspective {i}", vp.id))?;
        out.views[i] = Some(img);
        out.records[i] = Some(record);
        generated.insert(i);
    }
    Ok(())
}

/// Outpaints every perspective of `vp` around the reference `y_ref` at `r`.
/// The returned views include `y_ref` itself at index `r`; the records vector
/// has no entry there.
pub fn replenish_module(
    vp: &Viewpoint,
    r: usize,
    y_ref: &ImageBuffer,
    backends: &Backends,
    cfg: &PipelineConfig,
) -> Result<(Vec<ImageBuffer>, Vec<Option<ViewRecord>>)> {
    vp.grid.check_index(r)?;
    if y_ref.dims() != vp.intrinsics.dims() {
        return Err(Error::invalid("reference image size differs from the viewpoint's"));
    }
    let mut out = GeneratedViewpoint::new(&vp.id, r, vp.grid.len());
    out.views[r] = Some(y_ref.clone());
    replenish(vp, &mut out, &mut Ctx::new(backends, cfg))?;
    let views = out.views.into_iter().map(|v| v.expect("every view generated")).collect();
    Ok((views, out.records))
}

/// Everything checked before the first backend call.
fn validate_run<'s>(
    traj: &Trajectory,
    scene: &'s BTreeMap<String, Viewpoint>,
    cfg: &PipelineConfig,
) -> Result<Vec<&'s Viewpoint>> {
    cfg.validate()?;
    let l = traj.viewpoint_ids.len();
    if l < 2 {
        return Err(Error::invalid("a trajectory needs at least 2 viewpoints"));
    }
    let vps = traj
        .viewpoint_ids
        .iter()
        .map(|id| scene.get(id).ok_or_else(|| Error::NotFound(format!("viewpoint {id:?}"))))
        .collect::<Result<Vec<_>>>()?;
    let mut seen = BTreeSet::new();
    if let Some(dup) = traj.viewpoint_ids.iter().find(|id| !seen.insert(id.as_str())) {
        return Err(Error::invalid(format!("viewpoint {dup:?} appears twice in the trajectory")));
    }
    if traj.reference_indices.len() != l || traj.relative_poses.len() != l - 1 {
        return Err(Error::invalid(format!(
            "{} reference indices and {} relative poses for {l} viewpoints",
            traj.reference_indices.len(),
            traj.relative_poses.len()
        )));
    }
    let (grid, k) = (vps[0].grid, vps[0].intrinsics);
    for vp in &vps {
        vp.validate()?;
        if vp.grid != grid || vp.intrinsics != k {
            return Err(Error::invalid(format!("viewpoint {:?} has a different grid or camera", vp.id)));
        }
    }
    for &r in &traj.reference_indices {
        grid.check_index(r)?;
    }
    Ok(vps)
}

/// Runs both stages for one trajectory. Trajectory-level checks happen
/// before any backend call; a later failure returns everything produced so
/// far, labeled partial.
pub fn run_trajectory(
    traj: &Trajectory,
    scene: &BTreeMap<String, Viewpoint>,
    backends: &Backends,
    cfg: &PipelineConfig,
) -> std::result::Result<GeneratedTrajectory, PipelineFailure> {
    let fail = |error: Error, partial: Option<GeneratedTrajectory>| PipelineFailure {
        trajectory_id: traj.id.clone(),
        error,
        partial: partial.map(Box::new),
    };
    let vps = validate_run(traj, scene, cfg).map_err(|e| fail(e, None))?;
    let (grid, k) = (vps[0].grid, vps[0].intrinsics);
    let mut gen = GeneratedTrajectory {
        trajectory_id: traj.id.clone(),
        scene_id: traj.scene_id.clone(),
        instruction: traj.instruction.clone(),
        intrinsics: k,
        grid,
        config: cfg.clone(),
        steps: Vec::new(),
        viewpoints: vps
            .iter()
            .zip(&traj.reference_indices)
            .map(|(vp, &r)| GeneratedViewpoint::new(&vp.id, r, grid.len()))
            .collect(),
        calls: CallCounts::default(),
        status: RunStatus::Complete,
    };
    let mut ctx = Ctx::new(backends, cfg);
    let outcome = run_stages(traj, &vps, &mut gen, &mut ctx);
    gen.calls = ctx.calls;
    match outcome {
        Ok(()) => {
            info!(
                "trajectory {}: {} viewpoints, {} fallback(s), {} generations",
                traj.id,
                vps.len(),
                gen.fallbacks(),
                gen.calls.generations()
            );
            Ok(gen)
        }
        Err((t, stage, error)) => {
            let error = error.context(format!("step {t} ({stage})"));
            gen.status = RunStatus::Partial {
                t,
                stage,
                message: error.to_string(),
            };
            Err(fail(error, Some(gen)))
        }
    }
}

fn run_stages(
    traj: &Trajectory,
    vps: &[&Viewpoint],
    gen: &mut GeneratedTrajectory,
    ctx: &mut Ctx,
) -> std::result::Result<(), (usize, Stage, Error)> {
    for (idx, vp) in vps.iter().enumerate() {
        let t = idx + 1;
        let r = traj.reference_indices[idx];
        let (image, record, step) = if idx == 0 {
            let out = initial(vp, r, ctx).map_err(|e| (t, Stage::Initial, e))?;
            let step = StepRecord {
                t,
                viewpoint_id: vp.id.clone(),
                reference_index: r,
                stage: Stage::Initial,
                overlap: None,
                fallback: false,
                guidance: None,
            };
            (out.image, out.record, step)
        } else {
            let prev_r = traj.reference_indices[idx - 1];
            let prev_y = gen.viewpoints[idx - 1].views[prev_r].as_ref().expect("previous reference");
            let prev_depth = &vps[idx - 1].depths[prev_r];
            let out = forward(prev_y, Some(prev_depth), vp, r, &traj.relative_poses[idx - 1], ctx)
                .map_err(|e| (t, Stage::Forward, e))?;
            let step = StepRecord {
                t,
                viewpoint_id: vp.id.clone(),
                reference_index: r,
                stage: Stage::Forward,
                overlap: Some(out.overlap),
                fallback: out.fallback,
                guidance: Some(out.guidance),
            };
            (out.image, out.record, step)
        };
        gen.viewpoints[idx].views[r] = Some(image);
        gen.viewpoints[idx].records[r] = Some(record);
        gen.steps.push(step);
    }
    for (idx, vp) in vps.iter().enumerate() {
        replenish(vp, &mut gen.viewpoints[idx], ctx).map_err(|e| (idx + 1, Stage::Replenish, e))?;
    }
    Ok(())
}

/// One entry of [`run_trajectories`].
#[derive(Debug)]
pub struct RunOutcome {
    pub result: std::result::Result<GeneratedTrajectory, PipelineFailure>,
    /// Wall time of this trajectory alone.
    pub elapsed: Duration,
}

/// Runs independent trajectories on up to `workers` threads. Results keep
/// the input order and do not depend on the worker count.
pub fn run_trajectories(
    trajs: &[Trajectory],
    scene: &BTreeMap<String, Viewpoint>,
    backends: &Backends,
    cfg: &PipelineConfig,
    workers: usize,
) -> Result<Vec<RunOutcome>> {
    let run = |t: &Trajectory| {
        let start = Instant::now();
        let result = run_trajectory(t, scene, backends, cfg);
        RunOutcome {
            result,
            elapsed: start.elapsed(),
        }
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if workers > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| Error::InvalidState(format!("thread pool: {e}")))?;
            return Ok(pool.install(|| trajs.par_iter().map(run).collect()));
        }
    }
    let _ = workers;
    Ok(trajs.iter().map(run).collect())
}
