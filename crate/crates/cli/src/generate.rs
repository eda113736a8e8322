use log::{info, warn};
use serde::Serialize;
use wcgen_core::dataio::{load_scene, load_trajectories, write_dataset};
use wcgen_core::pipeline::{run_trajectories, PipelineConfig, RunStatus, Trajectory, Viewpoint};

use crate::backends::{self, BackendSpec};
use crate::{emit, CmdResult, Failure, GenerateArgs, EXIT_PARTIAL, EXIT_UNREACHABLE};

#[derive(Serialize)]
struct Summary<'a> {
    trajectory: &'a str,
    viewpoints: usize,
    fallbacks: usize,
    status: &'a str,
    wall_time_s: f64,
    manifest: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

/// Config file first, then individual flags on top.
pub fn config(a: &GenerateArgs) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
            toml::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(v) = a.min_overlap {
        cfg.min_overlap = v;
    }
    if let Some(v) = a.strength_forward {
        cfg.strength_forward = v;
    }
    if let Some(v) = a.blur_sigma {
        cfg.blur_sigma = Some(v);
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(a: GenerateArgs) -> CmdResult {
    if a.workers == 0 {
        return Err(Failure::usage("--workers must be at least 1"));
    }
    let spec = BackendSpec::resolve(a.backend.as_deref())?;
    let cfg = config(&a)?;
    let scene = load_scene(&a.scene)?;
    let manifests = load_trajectories(&a.traj)?;
    let trajs = manifests
        .iter()
        .map(|m| Trajectory::from_manifest(m, &scene.manifest))
        .collect::<wcgen_core::Result<Vec<_>>>()?;
    let vps = scene.load_viewpoints(trajs.iter().flat_map(|t| t.viewpoint_ids.iter().map(String::as_str)))?;
    let refs: Vec<&Viewpoint> = vps.values().collect();
    let b = backends::build(&spec, Some(&scene), &refs)?;
    info!("{} trajectories on {:?} with {} worker(s)", trajs.len(), b, a.workers);

    let results = run_trajectories(&trajs, &vps, &b, &cfg, a.workers)?;

    let (mut partial, mut unreachable) = (0, 0);
    for (traj, outcome) in trajs.iter().zip(results) {
        let (gen, error) = match outcome.result {
            Ok(g) => (Some(g), None),
            Err(f) => {
                if f.error.root().is_transport() {
                    unreachable += 1;
                }
                partial += 1;
                warn!("{f}");
                (f.partial.map(|p| *p), Some(f.error.to_string()))
            }
        };
        let manifest = match &gen {
            Some(g) => Some(write_dataset(g, &a.out)?.display().to_string()),
            None => None,
        };
        emit(&Summary {
            trajectory: &traj.id,
            viewpoints: traj.len(),
            fallbacks: gen.as_ref().map_or(0, |g| g.fallbacks()),
            status: match gen.as_ref().map(|g| &g.status) {
                Some(RunStatus::Complete) => "complete",
                Some(RunStatus::Partial { .. }) => "partial",
                None => "failed",
            },
            wall_time_s: outcome.elapsed.as_secs_f64(),
            manifest,
            error,
        });
    }
    match (unreachable, partial) {
        (0, 0) => Ok(()),
        (0, n) => Err(Failure::new(EXIT_PARTIAL, format!("{n} trajectory run(s) did not complete"))),
        (n, _) => Err(Failure::new(EXIT_UNREACHABLE, format!("backend unreachable during {n} run(s)"))),
    }
}
