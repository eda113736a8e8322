use proptest::prelude::*;

use wcgen_core::trajwarp::GuidanceImage;
use wcgen_core::viewwarp::{blur_mask, feather_known, merge_guidance};
use wcgen_core::{ImageBuffer, Mask};

fn guidance(w: usize, h: usize, colors: Vec<[f32; 3]>, bits: Vec<bool>) -> GuidanceImage {
    let color = ImageBuffer::from_fn(w, h, |x, y| if bits[y * w + x] { colors[y * w + x] } else { [0.0; 3] });
    GuidanceImage {
        color,
        validity: Mask::from_vec(w, h, bits).unwrap(),
        depth: None,
    }
}

fn case(max: usize) -> impl Strategy<Value = (usize, usize, Vec<[f32; 3]>, Vec<[f32; 3]>, Vec<u8>)> {
    (1..max, 1..max).prop_flat_map(|(w, h)| {
        let n = w * h;
        let level = (0u8..=255).prop_map(|v| v as f32 / 255.0);
        let color = [level.clone(), level.clone(), level].prop_map(|c| c);
        (
            Just(w),
            Just(h),
            prop::collection::vec(color.clone(), n),
            prop::collection::vec(color, n),
            // per pixel: 0 none, 1 only a, 2 only b, 3 both
            prop::collection::vec(0u8..4, n),
        )
    })
}

proptest! {
    #[test]
    fn single_input_is_identity((w, h, ca, _cb, sel) in case(12)) {
        let a = guidance(w, h, ca, sel.iter().map(|s| s & 1 == 1).collect());
        let (m, holes) = merge_guidance(std::slice::from_ref(&a)).unwrap();
        prop_assert_eq!(&m.color, &a.color);
        prop_assert_eq!(&m.validity, &a.validity);
        prop_assert_eq!(holes, a.validity.not());
    }

    #[test]
    fn disjoint_union_and_overlap_mean((w, h, ca, cb, sel) in case(12)) {
        let a = guidance(w, h, ca.clone(), sel.iter().map(|s| s & 1 == 1).collect());
        let b = guidance(w, h, cb.clone(), sel.iter().map(|s| s & 2 == 2).collect());
        let (m, holes) = merge_guidance(&[a, b]).unwrap();
        for i in 0..w * h {
            let got = m.color.pixel(i);
            match sel[i] {
                0 => { prop_assert!(holes.get_index(i)); prop_assert_eq!(got, [0.0; 3]); }
                1 => prop_assert_eq!(got, ca[i]),
                2 => prop_assert_eq!(got, cb[i]),
                _ => for c in 0..3 {
                    prop_assert!((got[c] - (ca[i][c] + cb[i][c]) / 2.0).abs() <= 1.0 / 255.0);
                },
            }
            prop_assert_eq!(holes.get_index(i), sel[i] == 0);
        }
    }

    #[test]
    fn merged_colors_stay_in_the_input_hull((w, h, ca, cb, sel) in case(10)) {
        let a = guidance(w, h, ca.clone(), sel.iter().map(|s| s & 1 == 1).collect());
        let b = guidance(w, h, cb.clone(), sel.iter().map(|s| s & 2 == 2).collect());
        let (m, _) = merge_guidance(&[a, b]).unwrap();
        for i in (0..w * h).filter(|&i| sel[i] == 3) {
            for c in 0..3 {
                let (lo, hi) = (ca[i][c].min(cb[i][c]), ca[i][c].max(cb[i][c]));
                prop_assert!(m.color.pixel(i)[c] >= lo - 1e-6 && m.color.pixel(i)[c] <= hi + 1e-6);
            }
        }
    }

    #[test]
    fn blur_support_stays_within_three_sigma(bits in prop::collection::vec(any::<bool>(), 24 * 24), sigma in 0.3f64..3.0) {
        let m = Mask::from_vec(24, 24, bits).unwrap();
        let b = blur_mask(&m, sigma).unwrap();
        let r = (3.0 * sigma).floor() as isize;
        for y in 0..24isize {
            for x in 0..24isize {
                if b.get(x as usize, y as usize) > 0.0 {
                    let near = (-r..=r).any(|dy| (-r..=r).any(|dx| {
                        let (sx, sy) = (x + dx, y + dy);
                        (0..24).contains(&sx) && (0..24).contains(&sy) && m.get(sx as usize, sy as usize)
                    }));
                    prop_assert!(near, "weight at ({x},{y}) beyond the 3 sigma band");
                }
            }
        }
        let f = feather_known(&m, sigma).unwrap();
        for (i, &k) in m.bits().iter().enumerate() {
            prop_assert_eq!(f.values()[i] > 0.0, k);
        }
    }
}

#[test]
fn merge_errors() {
    assert!(merge_guidance(&[]).is_err());
    let a = GuidanceImage::empty(3, 3);
    let b = GuidanceImage::empty(3, 4);
    assert!(merge_guidance(&[a, b]).is_err());
}

#[test]
fn blur_examples() {
    let m = Mask::from_fn(64, 8, |x, _| x < 32);
    assert_eq!(blur_mask(&m, 0.0).unwrap().support(), m);
    let ones = blur_mask(&Mask::full(16, 16, true), 2.5).unwrap();
    assert!(ones.values().iter().all(|&v| (v - 1.0).abs() < 1e-6));
    // the edge sits between pixels 31 and 32: the Gaussian CDF gives 0.5 there
    let b = blur_mask(&m, 4.0).unwrap();
    let edge = (b.get(31, 4) + b.get(32, 4)) / 2.0;
    assert!((edge - 0.5).abs() < 0.02, "{edge}");
}
