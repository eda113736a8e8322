mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use common::{room, walk, LEVEL};
use wcgen_core::backend::{
    image_digest, BackendDescriptor, Backends, ConstantCaption, FillNearest, GenerationMode, GenerationRequest,
    GenerationResponse, ImageGenerator, OracleDepth,
};
use wcgen_core::dataio::{read_dataset, verify_dataset, write_dataset};
use wcgen_core::geometry::{yaw, Point3};
use wcgen_core::panorama::{seam_error, trajectory_consistency, ViewGrid};
use wcgen_core::pipeline::{
    forward_module, initial_module, replenish_module, run_trajectory, PipelineConfig, RunStatus, Stage, Trajectory,
    Viewpoint, WarpDepth,
};
use wcgen_core::{DepthMap, Error, ImageBuffer, RelativePose, Result, TranslationConvention};

const CAPTION: &str = "a bright synthetic room";

fn backends() -> Backends {
    Backends::new(FillNearest, OracleDepth::with_fallback(2.0), ConstantCaption(CAPTION.into()))
}

fn cfg() -> PipelineConfig {
    PipelineConfig {
        seed: 7,
        ..Default::default()
    }
}

fn max_abs(a: &ImageBuffer, b: &ImageBuffer) -> f32 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

/// Independent model of the fill-nearest depth shading: FNV-1a of the prompt
/// picks a tint per channel, brightness falls off as 1 / (1 + d / 4).
fn shade_oracle(depth: &DepthMap, prompt: &str) -> ImageBuffer {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in prompt.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    let tint: Vec<f64> = (0..3).map(|c| 0.55 + 0.45 * ((h >> (8 * c)) & 0xff) as f64 / 255.0).collect();
    ImageBuffer::from_fn(depth.width(), depth.height(), |x, y| {
        let d = (depth.get(x, y).unwrap() as f64 * 4000.0).round() / 4000.0;
        let l = 1.0 / (1.0 + 0.25 * d);
        [0, 1, 2].map(|c| (tint[c] * l) as f32)
    })
}

#[test]
fn initial_module_matches_the_shading_oracle() {
    let scene = room(32, 1, 5);
    let vp = &scene.viewpoints[0];
    let out = initial_module(vp, 14, &backends(), &cfg()).unwrap();
    let want = shade_oracle(&vp.depths[14], CAPTION);
    assert!(max_abs(&out.image, &want) <= LEVEL as f32 + 1e-6);
    assert_eq!(out.record.mode, GenerationMode::DepthToImage);
    assert_eq!(out.record.prompt, CAPTION);
    assert_eq!(out.record.seed, wcgen_core::pipeline::derive_seed(7, &vp.id, 14));
    // frozen so regressions in the mock or the quantization show up
    assert_eq!(
        image_digest(&out.image),
        "b58d870605c743612b3888d2519577632a47f66b30d23592dbaf5eff81048d6f"
    );
}

#[test]
fn initial_module_needs_dataset_depth() {
    let scene = room(16, 1, 5);
    let mut vp = scene.viewpoints[0].clone();
    vp.depths[3] = DepthMap::invalid(16, 16);
    assert!(matches!(initial_module(&vp, 3, &backends(), &cfg()), Err(Error::InvalidArgument(_))));
}

#[test]
fn forward_identity_at_zero_strength_returns_the_input() {
    let scene = room(48, 1, 2);
    let vp = &scene.viewpoints[0];
    let c = PipelineConfig {
        strength_forward: 0.0,
        warp_depth: WarpDepth::Dataset,
        ..cfg()
    };
    let out = forward_module(&vp.views[13], Some(&vp.depths[13]), vp, 13, &RelativePose::identity(), &backends(), &c)
        .unwrap();
    assert!(!out.fallback);
    assert_eq!(out.overlap, 1.0);
    assert!(max_abs(&out.image, &vp.views[13]) <= LEVEL as f32);
    assert_eq!(out.record.mode, GenerationMode::ImageToImage);
    assert_eq!(out.record.known_fraction, Some(1.0));
}

#[test]
fn zero_overlap_falls_back_to_depth_generation() {
    let scene = room(32, 1, 2);
    let vp = &scene.viewpoints[0];
    let away = RelativePose::new(yaw(180.0), Point3::new(0.0, 0.0, -5.0), TranslationConvention::RotateThenAdd).unwrap();
    let c = PipelineConfig {
        warp_depth: WarpDepth::Dataset,
        ..cfg()
    };
    let out = forward_module(&vp.views[12], Some(&vp.depths[12]), vp, 12, &away, &backends(), &c).unwrap();
    assert_eq!(out.overlap, 0.0);
    assert!(out.fallback);
    assert_eq!(out.record.mode, GenerationMode::DepthToImage);
    let initial = initial_module(vp, 12, &backends(), &c).unwrap();
    assert_eq!(out.image, initial.image);

    let never = PipelineConfig { min_overlap: 0.0, ..c };
    let out = forward_module(&vp.views[12], Some(&vp.depths[12]), vp, 12, &away, &backends(), &never).unwrap();
    assert!(!out.fallback);
    assert_eq!(out.record.mode, GenerationMode::ImageToImage);
}

#[test]
fn replenished_views_are_seam_consistent() {
    let scene = room(64, 1, 8);
    let vp = &scene.viewpoints[0];
    let ideal = seam_error(&vp.views, &vp.intrinsics, &vp.grid).unwrap().max;
    let (views, records) = replenish_module(vp, 13, &vp.views[13], &backends(), &cfg()).unwrap();
    assert_eq!(views[13], vp.views[13]);
    assert!(records[13].is_none());
    assert_eq!(records.iter().flatten().count(), 35);
    assert!(records.iter().flatten().all(|r| r.mode == GenerationMode::Outpaint && !r.neighbors.is_empty()));
    let rep = seam_error(&views, &vp.intrinsics, &vp.grid).unwrap();
    let mean = rep.edges.iter().map(|e| e.error).sum::<f64>() / rep.edges.len() as f64;
    assert!(mean <= ideal + 2.0 * LEVEL, "mean {:.2}/255 vs ideal {:.2}/255", mean * 255.0, ideal * 255.0);
    // the first companions invent their holes from one neighbor; later views
    // average that with real content, so single edges may sit above the mean
    // but never look like a corrupted view
    assert!(rep.max <= 10.0 * LEVEL, "max {:.2}/255", rep.max * 255.0);
}

#[test]
fn fully_known_guidance_is_kept() {
    // every perspective looks the same way, so each warp covers the frame
    let grid = ViewGrid {
        views_per_row: 4,
        elevations: [0.0; 3],
        heading_step: 0.0,
    };
    let k = wcgen_core::Intrinsics::from_fov(24, 24, 60.0).unwrap();
    let img = ImageBuffer::from_fn(24, 24, |x, y| [x as f32 / 23.0, y as f32 / 23.0, 0.5]).quantized();
    let vp = Viewpoint::new(
        "flat",
        Point3::zeros(),
        vec![img.clone(); 12],
        vec![DepthMap::constant(24, 24, 3.0); 12],
        grid,
        k,
    )
    .unwrap();
    let (views, records) = replenish_module(&vp, 5, &img, &backends(), &cfg()).unwrap();
    for (v, r) in views.iter().zip(&records) {
        assert!(max_abs(v, &img) <= LEVEL as f32);
        if let Some(r) = r {
            assert_eq!(r.known_fraction, Some(1.0));
        }
    }
}

#[test]
fn identical_runs_give_identical_datasets() {
    let scene = room(32, 2, 4);
    let traj = walk(&scene, "pair");
    let vps = scene.by_id();
    let a = run_trajectory(&traj, &vps, &backends(), &cfg()).unwrap();
    let b = run_trajectory(&traj, &vps, &backends(), &cfg()).unwrap();
    assert_eq!(a, b);
    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ma, mb) = (write_dataset(&a, da.path()).unwrap(), write_dataset(&b, db.path()).unwrap());
    assert_eq!(std::fs::read(ma).unwrap(), std::fs::read(mb).unwrap());
    let c = run_trajectory(&traj, &vps, &backends(), &PipelineConfig { seed: 8, ..cfg() }).unwrap();
    assert_ne!(c.viewpoints[0].records[1], a.viewpoints[0].records[1]);
}

#[test]
fn five_viewpoint_call_accounting() {
    let scene = room(24, 5, 4);
    let traj = walk(&scene, "five");
    let gen = run_trajectory(&traj, &scene.by_id(), &backends(), &cfg()).unwrap();
    assert!(gen.is_complete());
    assert_eq!(gen.fallbacks(), 0);
    let c = gen.calls;
    assert_eq!((c.depth_to_image, c.image_to_image, c.outpaint), (1, 4, 175));
    assert_eq!(c.estimate_depth, 4);
    assert_eq!(c.caption, 180);
    assert_eq!(gen.steps.len(), 5);
    assert_eq!(gen.steps[0].stage, Stage::Initial);
    assert!(gen.steps[1..].iter().all(|s| s.stage == Stage::Forward && s.guidance.is_some()));
    assert!(gen.viewpoints.iter().all(|v| v.is_complete()));
}

/// Counts calls and fails from call `fail_at` on.
struct Counting {
    calls: Arc<AtomicUsize>,
    fail_at: usize,
}

impl ImageGenerator for Counting {
    fn descriptor(&self) -> BackendDescriptor {
        FillNearest.descriptor()
    }

    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse> {
        if self.calls.fetch_add(1, Ordering::SeqCst) >= self.fail_at {
            return Err(Error::Remote {
                status: 400,
                code: "invalid_request".into(),
                message: "scripted failure".into(),
            });
        }
        FillNearest.generate(req)
    }
}

fn counting(fail_at: usize) -> (Backends, Arc<AtomicUsize>) {
    let calls = Arc::new(AtomicUsize::new(0));
    let g = Counting {
        calls: calls.clone(),
        fail_at,
    };
    (Backends::new(g, OracleDepth::with_fallback(2.0), ConstantCaption(CAPTION.into())), calls)
}

#[test]
fn unknown_viewpoint_fails_before_any_call() {
    let scene = room(16, 2, 1);
    let mut traj = walk(&scene, "lost");
    traj.viewpoint_ids[1] = "nowhere".into();
    let (b, calls) = counting(usize::MAX);
    let err = run_trajectory(&traj, &scene.by_id(), &b, &cfg()).unwrap_err();
    assert!(matches!(err.error, Error::NotFound(_)));
    assert!(err.partial.is_none());
    assert_eq!(calls.load(Ordering::SeqCst), 0);
}

#[test]
fn failures_keep_the_partial_run() {
    let scene = room(16, 3, 1);
    let traj = walk(&scene, "broken");
    // initial + 2 forward + 10 outpaints, then the 11th outpaint fails
    let (b, _) = counting(13);
    let err = run_trajectory(&traj, &scene.by_id(), &b, &cfg()).unwrap_err();
    assert!(err.to_string().contains("step 1 (replenish)"), "{err}");
    let partial = err.partial.unwrap();
    match &partial.status {
        RunStatus::Partial { t, stage, .. } => assert_eq!((*t, *stage), (1, Stage::Replenish)),
        s => panic!("{s:?}"),
    }
    assert_eq!(partial.viewpoints[0].views.iter().flatten().count(), 11);
    assert!(partial.viewpoints[1..].iter().all(|v| v.views.iter().flatten().count() == 1));
    assert_eq!(partial.calls.generations(), 14);

    let (b, _) = counting(1);
    let err = run_trajectory(&traj, &scene.by_id(), &b, &cfg()).unwrap_err();
    assert!(matches!(err.partial.unwrap().status, RunStatus::Partial { t: 2, stage: Stage::Forward, .. }));
}

#[test]
fn stage_one_references_agree_along_the_walk() {
    let scene = room(48, 4, 6);
    let traj = walk(&scene, "coherent");
    let c = PipelineConfig {
        strength_forward: 0.0,
        warp_depth: WarpDepth::Dataset,
        ..cfg()
    };
    let gen = run_trajectory(&traj, &scene.by_id(), &backends(), &c).unwrap();
    for t in 1..traj.len() {
        let (pr, r) = (traj.reference_indices[t - 1], traj.reference_indices[t]);
        let prev = gen.viewpoints[t - 1].views[pr].as_ref().unwrap();
        let next = gen.viewpoints[t].views[r].as_ref().unwrap();
        let depth = &scene.viewpoints[t - 1].depths[pr];
        let rep = trajectory_consistency(prev, depth, next, &scene.spec.intrinsics, &traj.relative_poses[t - 1]).unwrap();
        assert!(rep.mae <= 3.0 * LEVEL, "step {t}: {:.2}/255", rep.mae * 255.0);
        assert!(rep.valid_fraction > 0.5);
    }
}

#[test]
fn datasets_round_trip_and_detect_tampering() {
    let scene = room(24, 2, 9);
    let traj = walk(&scene, "stored");
    let gen = run_trajectory(&traj, &scene.by_id(), &backends(), &cfg()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(&gen, dir.path()).unwrap();
    let (m, vps) = read_dataset(&manifest).unwrap();
    assert_eq!(m.status, RunStatus::Complete);
    assert_eq!(m.calls, gen.calls);
    for (read, made) in vps.iter().zip(&gen.viewpoints) {
        assert_eq!(read.reference_index, made.reference_index);
        assert_eq!(read.complete_views().unwrap(), made.complete_views().unwrap());
    }
    // rewriting is a no-op on the bytes
    let before = std::fs::read(&manifest).unwrap();
    write_dataset(&gen, dir.path()).unwrap();
    assert_eq!(std::fs::read(&manifest).unwrap(), before);

    let victim = manifest.parent().unwrap().join(&m.viewpoints[1].views[4].file);
    let mut bytes = std::fs::read(&victim).unwrap();
    let n = bytes.len();
    bytes[n - 20] ^= 0x40;
    std::fs::write(&victim, bytes).unwrap();
    assert!(matches!(verify_dataset(&manifest), Err(Error::Checksum { .. })));
}

#[test]
fn explicit_reference_and_pose_overrides() {
    let scene = room(16, 2, 1);
    let ids: Vec<String> = scene.viewpoints.iter().map(|v| v.id.clone()).collect();
    let pos: Vec<Point3> = scene.viewpoints.iter().map(|v| v.position).collect();
    let t = Trajectory::from_positions("o", "s", ids.clone(), &pos, &scene.spec.grid, Some(vec![3, 4])).unwrap();
    assert_eq!(t.reference_indices, vec![3, 4]);
    assert!(Trajectory::from_positions("o", "s", ids, &pos, &scene.spec.grid, Some(vec![3])).is_err());
}
