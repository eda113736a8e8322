use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use wcgen_core::geometry::{
    camera_to_world, is_rotation, pixel_to_sphere, project, rotate_direction, unproject, yaw, yaw_pitch_roll,
    Intrinsics, PixelCoord, Point3, Pose, RelativePose, TranslationConvention,
};
use wcgen_core::panorama::{grid_rotation, ViewGrid};
use wcgen_core::viewwarp::rotation_warp;
use wcgen_core::ImageBuffer;

fn intrinsics() -> impl Strategy<Value = Intrinsics> {
    (16usize..2048, 16usize..2048, 20.0f64..120.0).prop_map(|(w, h, fov)| Intrinsics::from_fov(w, h, fov).unwrap())
}

fn rotation() -> impl Strategy<Value = nalgebra::Matrix3<f64>> {
    (-180.0f64..180.0, -89.0f64..89.0, -180.0f64..180.0).prop_map(|(a, b, c)| yaw_pitch_roll(a, b, c))
}

fn vec3(r: f64) -> impl Strategy<Value = Point3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Point3::new(x, y, z))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn project_inverts_unproject(k in intrinsics(), fu in 0.0f64..1.0, fv in 0.0f64..1.0, d in 0.05f64..80.0) {
        let p = PixelCoord::new(fu * k.width as f64, fv * k.height as f64);
        let (q, z) = project(&unproject(p, d, &k).unwrap(), &k).unwrap();
        prop_assert!((q.u - p.u).abs() < 1e-9 && (q.v - p.v).abs() < 1e-9);
        prop_assert!((z - d).abs() < 1e-9);
    }

    #[test]
    fn relative_pose_conventions_agree(r in rotation(), t in vec3(5.0), p in vec3(10.0)) {
        let after_translate = RelativePose::new(r, t, TranslationConvention::RotateAfterTranslate).unwrap();
        let canon = after_translate.to_canonical();
        prop_assert!((after_translate.apply(&p) - canon.apply(&p)).norm() < 1e-9);
        prop_assert!((canon.to_translate_first().apply(&p) - after_translate.apply(&p)).norm() < 1e-9);
        let back = after_translate.inverse().apply(&after_translate.apply(&p));
        prop_assert!((back - p).norm() < 1e-9);
    }

    #[test]
    fn between_maps_camera_frames(ra in rotation(), rb in rotation(), ta in vec3(5.0), tb in vec3(5.0), x in vec3(20.0)) {
        let (a, b) = (Pose::new(ra, ta).unwrap(), Pose::new(rb, tb).unwrap());
        let rel = RelativePose::between(&a, &b);
        let via = rel.apply(&a.world_to_camera(&x));
        prop_assert!((via - b.world_to_camera(&x)).norm() < 1e-9);
        prop_assert!((camera_to_world(&a.world_to_camera(&x), &a) - x).norm() < 1e-9);
    }

    #[test]
    fn directions_stay_unit(k in intrinsics(), fu in 0.0f64..1.0, fv in 0.0f64..1.0, r in rotation()) {
        let d = pixel_to_sphere(PixelCoord::new(fu * k.width as f64, fv * k.height as f64), &k);
        let e = rotate_direction(&d, &r, &yaw(0.0)).unwrap();
        prop_assert!((e.as_vector().norm() - 1.0).abs() < 1e-12);
        prop_assert!((e.as_vector().dot(&(r * d.as_vector())) - 1.0).abs() < 1e-12);
    }
}

#[test]
fn grid_rotations_are_orthonormal() {
    let g = ViewGrid::default();
    for i in 0..g.len() {
        assert!(is_rotation(&grid_rotation(i, &g).unwrap(), 1e-12));
    }
}

#[test]
fn spec_examples() {
    let k = Intrinsics::default();
    let p = unproject(PixelCoord::new(256.0, 256.0), 2.0, &k).unwrap();
    assert_abs_diff_eq!(p, Point3::new(0.0, 0.0, 2.0), epsilon = 1e-12);
    let after_translate = RelativePose::new(
        nalgebra::Matrix3::identity(),
        Point3::new(0.0, 0.0, -1.0),
        TranslationConvention::RotateAfterTranslate,
    )
    .unwrap();
    assert_abs_diff_eq!(after_translate.apply(&Point3::new(0.0, 0.0, 3.0)), Point3::new(0.0, 0.0, 2.0), epsilon = 1e-12);
    assert!(project(&Point3::new(0.0, 0.0, -1.0), &k).is_err());
}

/// Rotating a smooth image out and back only loses bilinear resampling
/// accuracy on the region valid in both directions.
#[test]
fn rotation_warp_round_trip_on_smooth_content() {
    let k = Intrinsics::from_fov(256, 256, 60.0).unwrap();
    let src = ImageBuffer::from_fn(256, 256, |x, y| {
        let (u, v) = (x as f32 / 255.0, y as f32 / 255.0);
        [0.5 + 0.3 * (6.0 * u).sin(), 0.5 + 0.3 * (5.0 * v).cos(), 0.4 + 0.2 * (4.0 * (u + v)).sin()]
    });
    for (a, b, c) in [(20.0, 0.0, 0.0), (-35.0, 10.0, 0.0), (12.0, -15.0, 5.0)] {
        let r = yaw_pitch_roll(a, b, c);
        let there = rotation_warp(&src, &k, &r, &yaw(0.0)).unwrap();
        let back = rotation_warp(&there.color, &k, &r.transpose(), &yaw(0.0)).unwrap();
        let round = rotation_warp(&ImageBuffer::from_fn(256, 256, |x, y| {
            if there.validity.get(x, y) { [1.0; 3] } else { [0.0; 3] }
        }), &k, &r.transpose(), &yaw(0.0))
        .unwrap();
        // doubly valid: the return trip sampled only fully valid source pixels
        let both = wcgen_core::Mask::from_fn(256, 256, |x, y| back.validity.get(x, y) && round.color.get(x, y)[0] >= 1.0);
        assert!(both.fraction() > 0.3);
        let mae = back.color.masked_mae(&src, &both).unwrap();
        assert!(mae <= 2.0 / 255.0, "rotation ({a}, {b}, {c}): {:.3}/255", mae * 255.0);
    }
}
