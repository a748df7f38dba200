#[path = "support/oracles.rs"]
mod oracles;

use facecheck_core::geometry::{
    align_and_crop, apply_mask, build_mask, BinaryMask, CropSpec, LandmarkSet, MaskSpec, MaskType, Point,
};
use facecheck_core::image::FaceImage;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GRID: usize = 32;

fn landmarks_in(lo: f64, hi: f64) -> impl Strategy<Value = LandmarkSet> {
    prop::collection::vec((lo..hi, lo..hi), 68)
        .prop_map(|v| v.into_iter().map(|(x, y)| Point::new(x, y)).collect::<Vec<_>>())
        .prop_filter_map("eye centers must differ", |pts| LandmarkSet::new(&pts).ok())
}

fn integer_landmarks() -> impl Strategy<Value = LandmarkSet> {
    prop::collection::vec((0i32..GRID as i32, 0i32..GRID as i32), 68)
        .prop_map(|v| v.into_iter().map(|(x, y)| Point::new(x as f64, y as f64)).collect::<Vec<_>>())
        .prop_filter_map("eye centers must differ", |pts| LandmarkSet::new(&pts).ok())
}

fn grid_of(mask: &BinaryMask) -> Vec<bool> {
    let (h, w) = mask.dims();
    (0..h).flat_map(|r| (0..w).map(move |c| (r, c))).map(|(r, c)| mask.get(r, c)).collect()
}

#[test]
fn rasterization_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..200 {
        let lms = oracles::random_landmarks(&mut rng, GRID);
        for mask_type in MaskType::ALL {
            for k in [1, 5, 13] {
                let spec = MaskSpec::new(mask_type, k);
                let got = build_mask(&spec, &lms, (GRID, GRID)).unwrap();
                let want = oracles::mask_membership(&spec, &lms, GRID, GRID);
                assert_eq!(grid_of(&got), want, "{mask_type} k={k}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pointwise_masks_grow_with_radius(lms in landmarks_in(-4.0, 36.0)) {
        for mask_type in [MaskType::UniteMask, MaskType::InnerMask] {
            let mut prev = build_mask(&MaskSpec::new(mask_type, 1), &lms, (GRID, GRID)).unwrap();
            for k in 2..=21 {
                let next = build_mask(&MaskSpec::new(mask_type, k), &lms, (GRID, GRID)).unwrap();
                prop_assert!(prev.is_subset_of(&next), "{mask_type} k={k}");
                prev = next;
            }
        }
    }

    /// Landmarks sit on pixel centers here, so each one's nearest pixel
    /// center is itself.
    #[test]
    fn hull_masks_cover_their_landmarks(lms in integer_landmarks()) {
        for mask_type in [MaskType::EyeMask, MaskType::HullMask] {
            let mask = build_mask(&MaskSpec::new(mask_type, 1), &lms, (GRID, GRID)).unwrap();
            for p in oracles::subset_points(mask_type, &lms) {
                prop_assert!(mask.get(p.y as usize, p.x as usize), "{mask_type} misses ({}, {})", p.x, p.y);
            }
        }
    }

    #[test]
    fn hull_masks_match_ray_casting(lms in landmarks_in(-2.0, 34.0)) {
        for mask_type in [MaskType::EyeMask, MaskType::HullMask] {
            let spec = MaskSpec::new(mask_type, 1);
            let got = build_mask(&spec, &lms, (GRID, GRID)).unwrap();
            prop_assert_eq!(grid_of(&got), oracles::mask_membership(&spec, &lms, GRID, GRID));
        }
    }

    #[test]
    fn applying_a_mask_twice_equals_once(
        lms in landmarks_in(0.0, 32.0),
        k in 1u32..16,
        pixels in prop::collection::vec(0.0f32..=255.0, GRID * GRID * 3),
    ) {
        let img = FaceImage::from_raw(GRID, GRID, pixels).unwrap();
        for mask_type in MaskType::ALL {
            let mask = build_mask(&MaskSpec::new(mask_type, k), &lms, (GRID, GRID)).unwrap();
            let once = apply_mask(&img, &mask).unwrap();
            let twice = apply_mask(&once, &mask).unwrap();
            prop_assert_eq!(once.data(), twice.data());
        }
    }

    #[test]
    fn crop_round_trip_and_canonical_eyes(
        lms in landmarks_in(10.0, 190.0),
        ratio in 0.1f64..0.45,
    ) {
        let (l, r) = lms.eye_centers();
        prop_assume!(l.dist(r) > 5.0);
        let spec = CropSpec::new(ratio, 64).unwrap();
        let img = FaceImage::filled(200, 200, 100.0);
        let aligned = align_and_crop(&img, &lms, &spec).unwrap();
        let back = aligned.transform.inverse();
        for (p, q) in lms.points().iter().zip(aligned.landmarks.points()) {
            let b = back.apply(*q);
            prop_assert!(b.dist(*p) <= 1e-6, "{:?} -> {:?}", p, b);
        }
        let (cl, cr) = aligned.landmarks.eye_centers();
        prop_assert!((cl.dist(cr) - ratio * 64.0).abs() <= 0.5);
        prop_assert!((cr.y - cl.y).atan2(cr.x - cl.x).abs().to_degrees() <= 0.5);
        let mid = Point::new(0.5 * (cl.x + cr.x), 0.5 * (cl.y + cr.y));
        prop_assert!(mid.dist(spec.canonical_midpoint()) <= 1e-9);
    }
}
