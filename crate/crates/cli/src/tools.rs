//! The smaller commands: warp, synth, assemble, serve-mock.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use wcgen_core::backend::server::{MockServer, ServerConfig};
use wcgen_core::dataio::{
    codec, load_scene, read_dataset, synth_scene, write_synthetic_scene, SyntheticSceneSpec, TrajectoryManifest,
    MANIFEST_NAME,
};
use wcgen_core::geometry::{yaw_pitch_roll, Point3};
use wcgen_core::panorama::assemble_equirect;
use wcgen_core::pipeline::Viewpoint;
use wcgen_core::trajwarp::{forward_warp, overlap_fraction};
use wcgen_core::viewwarp::rotation_warp;
use wcgen_core::{ImageBuffer, Intrinsics, RelativePose, TranslationConvention};

use crate::backends::{self, BackendSpec};
use crate::{emit, CmdResult, Failure};

fn read_file(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Failure::usage(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn parse_vec3(s: &str) -> Result<Point3, Failure> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::usage(format!("translation {s:?}: {e}")))?;
    match v[..] {
        [x, y, z] => Ok(Point3::new(x, y, z)),
        _ => Err(Failure::usage(format!("translation {s:?}: expected x,y,z"))),
    }
}

#[derive(Args, Debug)]
pub struct WarpArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// 16-bit depth PNG; selects the forward (point-cloud) warp.
    #[arg(long)]
    pub depth: Option<PathBuf>,
    #[arg(long, default_value_t = 4000.0)]
    pub depth_scale: f64,
    /// Vertical field of view in degrees.
    #[arg(long, default_value_t = 60.0)]
    pub fov: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub yaw: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub pitch: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub roll: f64,
    /// `x,y,z` in meters, added after the rotation.
    #[arg(long, allow_hyphen_values = true)]
    pub translation: Option<String>,
    /// JSON relative pose (`rotation`, `translation`, `convention`);
    /// replaces the angle and translation flags.
    #[arg(long, conflicts_with_all = ["yaw", "pitch", "roll", "translation"])]
    pub pose: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct WarpReport {
    mode: &'static str,
    width: usize,
    height: usize,
    overlap: f64,
    guidance: String,
    mask: String,
}

pub fn warp(a: WarpArgs) -> CmdResult {
    let img = codec::decode_image_png(&read_file(&a.image)?)?;
    let (w, h) = img.dims();
    let k = Intrinsics::from_fov(w, h, a.fov)?;
    let rel = match &a.pose {
        Some(p) => {
            let spec: wcgen_core::dataio::RelativePoseSpec = serde_json::from_slice(&read_file(p)?)
                .map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?;
            spec.to_pose()?
        }
        None => {
            let t = a.translation.as_deref().map(parse_vec3).transpose()?.unwrap_or_else(Point3::zeros);
            RelativePose::new(yaw_pitch_roll(a.yaw, a.pitch, a.roll), t, TranslationConvention::RotateThenAdd)?
        }
    };
    let (mode, g) = match &a.depth {
        Some(dp) => {
            let depth = codec::decode_depth_png(&read_file(dp)?, a.depth_scale)?;
            ("forward", forward_warp(&img, &depth, &k, &rel)?)
        }
        None => {
            let canon = rel.to_canonical();
            if canon.translation().norm() > 0.0 {
                return Err(Failure::usage("a translated warp needs --depth"));
            }
            ("rotation", rotation_warp(&img, &k, canon.rotation(), &wcgen_core::geometry::yaw(0.0))?)
        }
    };
    let (gp, mp) = (a.out.join("guidance.png"), a.out.join("mask.png"));
    write_file(&gp, &codec::encode_image_png(&g.color)?)?;
    write_file(&mp, &codec::encode_mask_png(&g.validity.to_weights())?)?;
    emit(&WarpReport {
        mode,
        width: w,
        height: h,
        overlap: overlap_fraction(&g),
        guidance: gp.display().to_string(),
        mask: mp.display().to_string(),
    });
    Ok(())
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// JSON scene spec; the built-in demo room when absent.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 5)]
    pub viewpoints: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4000.0)]
    pub depth_scale: f64,
}

pub fn synth(a: SynthArgs) -> CmdResult {
    let spec = match &a.spec {
        Some(p) => serde_json::from_slice(&read_file(p)?).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?,
        None => SyntheticSceneSpec::demo(a.width, a.viewpoints)?,
    };
    let scene = synth_scene(&spec, a.seed)?;
    let scene_path = write_synthetic_scene(&scene, &a.out, a.depth_scale)?;
    let walk = TrajectoryManifest {
        trajectory_id: "walk".into(),
        scene_id: spec.scene_id.clone(),
        viewpoints: spec.viewpoints.iter().map(|v| v.id.clone()).collect(),
        reference_indices: None,
        relative_poses: None,
        instruction: None,
    };
    let traj_path = a.out.join("trajectories.json");
    if walk.viewpoints.len() >= 2 {
        let mut text = serde_json::to_string_pretty(&[walk]).expect("serializable");
        text.push('\n');
        write_file(&traj_path, text.as_bytes())?;
    }
    emit(&serde_json::json!({
        "scene": scene_path.display().to_string(),
        "trajectories": (spec.viewpoints.len() >= 2).then(|| traj_path.display().to_string()),
        "viewpoints": spec.viewpoints.len(),
    }));
    Ok(())
}

#[derive(Args, Debug)]
pub struct AssembleArgs {
    #[arg(long, conflicts_with = "dataset", required_unless_present = "dataset")]
    pub scene: Option<PathBuf>,
    /// A `generation.json` or its trajectory directory.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1024)]
    pub width: usize,
    /// Defaults to half the width.
    #[arg(long)]
    pub height: Option<usize>,
}

pub fn assemble(a: AssembleArgs) -> CmdResult {
    let (w, h) = (a.width, a.height.unwrap_or(a.width / 2));
    let mut jobs: Vec<(String, Vec<ImageBuffer>, Intrinsics, wcgen_core::panorama::ViewGrid)> = Vec::new();
    if let Some(sp) = &a.scene {
        let scene = load_scene(sp)?;
        let m = &scene.manifest;
        for vm in &m.viewpoints {
            let vp: Viewpoint = scene.load_viewpoint(&vm.id)?;
            jobs.push((vp.id, vp.views, m.intrinsics, m.grid));
        }
    } else if let Some(dp) = &a.dataset {
        let path = if dp.is_dir() { dp.join(MANIFEST_NAME) } else { dp.clone() };
        let (m, vps) = read_dataset(&path)?;
        for vp in vps {
            match vp.complete_views() {
                Some(views) => jobs.push((vp.id, views, m.intrinsics, m.grid)),
                None => log::warn!("viewpoint {} is incomplete; skipped", vp.id),
            }
        }
    }
    if jobs.is_empty() {
        return Err(Failure::usage("no complete viewpoint to assemble"));
    }
    for (id, views, k, grid) in jobs {
        let pano = assemble_equirect(&views, &k, &grid, w, h)?;
        let file = a.out.join(format!("{id}_equirect.png"));
        write_file(&file, &codec::encode_image_png(&pano)?)?;
        emit(&serde_json::json!({"viewpoint": id, "panorama": file.display().to_string(), "width": w, "height": h}));
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    /// `mock:<name>`.
    #[arg(long, default_value = "mock:fill-nearest")]
    pub backend: String,
    #[arg(long, default_value = "127.0.0.1:8700")]
    pub addr: SocketAddr,
    /// Scene whose depths and captions the mock estimator and captioner know.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub max_jobs: usize,
    #[arg(long, default_value_t = 64 * 1024 * 1024)]
    pub max_body_bytes: usize,
}

pub fn serve_mock(a: ServeArgs) -> CmdResult {
    let BackendSpec::Mock(name) = BackendSpec::resolve(Some(&a.backend))? else {
        return Err(Failure::usage("serve-mock hosts mocks only; use --backend mock:<name>"));
    };
    let (scene, vps) = match &a.scene {
        Some(p) => {
            let s = load_scene(p)?;
            let ids: Vec<String> = s.manifest.viewpoints.iter().map(|v| v.id.clone()).collect();
            let vps = s.load_viewpoints(ids.iter().map(String::as_str))?;
            (Some(s), vps)
        }
        None => (None, Default::default()),
    };
    let refs: Vec<&Viewpoint> = vps.values().collect();
    let b = backends::mock_backends(&name, scene.as_ref(), &refs)?;
    let config = ServerConfig {
        max_body_bytes: a.max_body_bytes,
        max_jobs: a.max_jobs,
    };
    let server = MockServer::spawn(b, a.addr, config).map_err(|e| Failure::usage(format!("bind {}: {e}", a.addr)))?;
    emit(&serde_json::json!({"url": server.url(), "backend": format!("mock:{name}")}));
    loop {
        std::thread::park();
    }
}
