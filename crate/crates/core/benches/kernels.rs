//! Sequential vs. parallel execution of the per-pixel kernels.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use wcgen_core::dataio::{synth_scene, SyntheticSceneSpec};
use wcgen_core::exec::Exec;
use wcgen_core::geometry::{yaw, RelativePose};
use wcgen_core::panorama::{assemble_equirect_with, grid_rotation, seam_error_with};
use wcgen_core::trajwarp::forward_warp_with;
use wcgen_core::viewwarp::{binarize_mask, blur_mask_with, rotation_warp_with};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn kernels(c: &mut Criterion) {
    let spec = SyntheticSceneSpec::demo(256, 1).unwrap();
    let scene = synth_scene(&spec, 0).unwrap();
    let vp = &scene.viewpoints[0];
    let k = spec.intrinsics;
    let rel = RelativePose::between(&vp.view_pose(12).unwrap(), &vp.view_pose(13).unwrap());
    let r = grid_rotation(13, &spec.grid).unwrap().transpose() * grid_rotation(12, &spec.grid).unwrap();
    let warped = rotation_warp_with(&vp.views[12], &k, &r, &yaw(0.0), Exec::Sequential).unwrap();
    let mask = binarize_mask(&warped);

    let mut g = c.benchmark_group("kernels");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::new("forward_warp", name), &exec, |b, &e| {
            b.iter(|| forward_warp_with(black_box(&vp.views[12]), &vp.depths[12], &k, &rel, e).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("rotation_warp", name), &exec, |b, &e| {
            b.iter(|| rotation_warp_with(black_box(&vp.views[12]), &k, &r, &yaw(0.0), e).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("blur_mask", name), &exec, |b, &e| {
            b.iter(|| blur_mask_with(black_box(&mask), 2.56, e).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("assemble_equirect", name), &exec, |b, &e| {
            b.iter(|| assemble_equirect_with(black_box(&vp.views), &k, &spec.grid, 512, 256, e).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("seam_error", name), &exec, |b, &e| {
            b.iter(|| seam_error_with(black_box(&vp.views), &k, &spec.grid, e).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
