//! Consistency report over a generated dataset or a scene's ground truth.
//! All errors are in 8-bit levels (1.0 = 1/255).

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use wcgen_core::dataio::{codec, load_scene, load_trajectories, read_dataset, MANIFEST_NAME};
use wcgen_core::panorama::{seam_error, trajectory_consistency, SeamReport};
use wcgen_core::pipeline::Trajectory;
use wcgen_core::{ImageBuffer, Intrinsics};

use crate::{emit, CmdResult, Failure, EXIT_THRESHOLD};

#[derive(Args, Debug)]
pub struct ValidateArgs {
    /// A `generation.json` or the trajectory directory holding it.
    #[arg(long, conflicts_with = "scene", required_unless_present = "scene")]
    pub dataset: Option<PathBuf>,
    /// Validate a scene's own views instead of generated ones.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// With --scene: also check consistency along these trajectories.
    #[arg(long, requires = "scene")]
    pub traj: Option<PathBuf>,
    /// TOML file, or inline `key=value` pairs separated by commas, with
    /// `seam_max`, `consistency_max` (levels) and `min_coverage` (fraction).
    #[arg(long)]
    pub thresholds: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub seam_max: Option<f64>,
    pub consistency_max: Option<f64>,
    pub min_coverage: Option<f64>,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            seam_max: Some(10.0),
            consistency_max: None,
            min_coverage: None,
        }
    }
}

impl Thresholds {
    fn parse(arg: Option<&str>) -> Result<Self, Failure> {
        let Some(arg) = arg else { return Ok(Self::default()) };
        let text = if Path::new(arg).is_file() {
            std::fs::read_to_string(arg).map_err(|e| Failure::usage(format!("{arg}: {e}")))?
        } else {
            arg.replace(',', "\n")
        };
        toml::from_str(&text).map_err(|e| Failure::usage(format!("thresholds: {e}")))
    }
}

#[derive(Serialize)]
struct EdgeReport {
    a: usize,
    b: usize,
    error: f64,
    overlap: f64,
}

#[derive(Serialize)]
struct ViewpointReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    trajectory: Option<String>,
    id: String,
    seam_max: f64,
    seam_mean: f64,
    edges: Vec<EdgeReport>,
}

#[derive(Serialize)]
struct StepReport {
    trajectory: String,
    t: usize,
    viewpoint_id: String,
    mae: f64,
    coverage: f64,
}

#[derive(Serialize)]
struct Report {
    source: String,
    thresholds: Thresholds,
    viewpoints: Vec<ViewpointReport>,
    consistency: Vec<StepReport>,
    /// Viewpoints skipped because a partial run left them incomplete.
    incomplete: Vec<String>,
    violations: Vec<String>,
    pass: bool,
}

fn levels(v: f64) -> f64 {
    (v * 255.0 * 1e4).round() / 1e4
}

fn seam_report(trajectory: Option<&str>, id: &str, views: &[ImageBuffer], k: &Intrinsics, grid: &wcgen_core::panorama::ViewGrid) -> Result<ViewpointReport, Failure> {
    let r: SeamReport = seam_error(views, k, grid)?;
    let mean = r.edges.iter().map(|e| e.error).sum::<f64>() / r.edges.len().max(1) as f64;
    Ok(ViewpointReport {
        trajectory: trajectory.map(str::to_string),
        id: id.to_string(),
        seam_max: levels(r.max),
        seam_mean: levels(mean),
        edges: r
            .edges
            .iter()
            .map(|e| EdgeReport {
                a: e.a,
                b: e.b,
                error: levels(e.error),
                overlap: e.overlap,
            })
            .collect(),
    })
}

fn from_dataset(path: &Path, report: &mut Report) -> Result<(), Failure> {
    let manifest_path = if path.is_dir() { path.join(MANIFEST_NAME) } else { path.to_path_buf() };
    let (m, vps) = read_dataset(&manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    for vp in &vps {
        match vp.complete_views() {
            Some(views) => report
                .viewpoints
                .push(seam_report(Some(&m.trajectory_id), &vp.id, &views, &m.intrinsics, &m.grid)?),
            None => report.incomplete.push(vp.id.clone()),
        }
    }
    for step in &m.steps {
        let (Some(g), Some(mask)) = (&step.guidance, &step.guidance_mask) else { continue };
        let Some(vp) = vps.iter().find(|v| v.id == step.record.viewpoint_id) else { continue };
        let Some(Some(y)) = vp.views.get(step.record.reference_index) else { continue };
        let read = |rel: &str| std::fs::read(dir.join(rel)).map_err(|e| Failure::usage(format!("{rel}: {e}")));
        let guidance = codec::decode_image_png(&read(g)?)?;
        let valid = codec::decode_mask_png(&read(mask)?)?.support();
        report.consistency.push(StepReport {
            trajectory: m.trajectory_id.clone(),
            t: step.record.t,
            viewpoint_id: vp.id.clone(),
            mae: levels(guidance.masked_mae(y, &valid).unwrap_or(0.0)),
            coverage: valid.fraction(),
        });
    }
    Ok(())
}

fn from_scene(scene_path: &Path, traj_path: Option<&Path>, report: &mut Report) -> Result<(), Failure> {
    let scene = load_scene(scene_path)?;
    let m = &scene.manifest;
    let ids: Vec<&str> = m.viewpoints.iter().map(|v| v.id.as_str()).collect();
    let vps = scene.load_viewpoints(ids)?;
    for vp in vps.values() {
        report.viewpoints.push(seam_report(None, &vp.id, &vp.views, &m.intrinsics, &m.grid)?);
    }
    let Some(tp) = traj_path else { return Ok(()) };
    for tm in load_trajectories(tp)? {
        let traj = Trajectory::from_manifest(&tm, m)?;
        for t in 1..traj.len() {
            let (a, b) = (&vps[&traj.viewpoint_ids[t - 1]], &vps[&traj.viewpoint_ids[t]]);
            let (ra, rb) = (traj.reference_indices[t - 1], traj.reference_indices[t]);
            let c = trajectory_consistency(&a.views[ra], &a.depths[ra], &b.views[rb], &m.intrinsics, &traj.relative_poses[t - 1])?;
            report.consistency.push(StepReport {
                trajectory: traj.id.clone(),
                t: t + 1,
                viewpoint_id: b.id.clone(),
                mae: levels(c.mae),
                coverage: c.valid_fraction,
            });
        }
    }
    Ok(())
}

pub fn run(a: ValidateArgs) -> CmdResult {
    let thresholds = Thresholds::parse(a.thresholds.as_deref())?;
    let source = a.dataset.as_ref().or(a.scene.as_ref()).expect("clap requires one").display().to_string();
    let mut report = Report {
        source,
        thresholds: thresholds.clone(),
        viewpoints: Vec::new(),
        consistency: Vec::new(),
        incomplete: Vec::new(),
        violations: Vec::new(),
        pass: true,
    };
    match (&a.dataset, &a.scene) {
        (Some(d), _) => from_dataset(d, &mut report)?,
        (None, Some(s)) => from_scene(s, a.traj.as_deref(), &mut report)?,
        (None, None) => return Err(Failure::usage("pass --dataset or --scene")),
    }
    if report.viewpoints.is_empty() && report.consistency.is_empty() {
        return Err(Failure::usage(format!("{}: nothing to validate", report.source)));
    }

    for vp in &report.viewpoints {
        if let Some(max) = thresholds.seam_max {
            for e in vp.edges.iter().filter(|e| e.error > max) {
                report
                    .violations
                    .push(format!("viewpoint {} edge {}-{}: seam {} > {max}", vp.id, e.a, e.b, e.error));
            }
        }
    }
    for s in &report.consistency {
        if let Some(max) = thresholds.consistency_max {
            if s.mae > max {
                report
                    .violations
                    .push(format!("{} step {} ({}): consistency {} > {max}", s.trajectory, s.t, s.viewpoint_id, s.mae));
            }
        }
        if let Some(min) = thresholds.min_coverage {
            if s.coverage < min {
                report
                    .violations
                    .push(format!("{} step {} ({}): coverage {:.4} < {min}", s.trajectory, s.t, s.viewpoint_id, s.coverage));
            }
        }
    }
    report.pass = report.violations.is_empty();
    emit(&report);
    if report.pass {
        Ok(())
    } else {
        Err(Failure::new(EXIT_THRESHOLD, format!("{} threshold violation(s)", report.violations.len())))
    }
}
