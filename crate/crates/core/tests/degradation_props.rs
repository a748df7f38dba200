use facecheck_core::degradation::{degrade, substitute_external, DegradationSpec};
use facecheck_core::image::FaceImage;
use proptest::prelude::*;

fn image() -> impl Strategy<Value = FaceImage> {
    (8usize..40, 8usize..40).prop_flat_map(|(w, h)| {
        prop::collection::vec(0.0f32..=255.0, w * h * 3).prop_map(move |d| FaceImage::from_raw(w, h, d).unwrap())
    })
}

fn spec() -> impl Strategy<Value = DegradationSpec> {
    prop_oneof![
        Just(DegradationSpec::None),
        (1u8..=100).prop_map(DegradationSpec::Jpeg),
        (2usize..8).prop_map(DegradationSpec::Downsample),
        (0.1f64..40.0, any::<u64>()).prop_map(|(sigma, seed)| DegradationSpec::GaussianNoise { sigma, seed }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dims_clamp_and_determinism(img in image(), spec in spec()) {
        let a = degrade(&img, &spec).unwrap();
        let b = degrade(&img, &spec).unwrap();
        prop_assert_eq!(a.dims(), img.dims());
        prop_assert!(a.data().iter().all(|v| (0.0..=255.0).contains(v)));
        prop_assert_eq!(a.data(), b.data());
    }

    #[test]
    fn noise_seed_matters(img in image(), seed in any::<u64>()) {
        let a = degrade(&img, &DegradationSpec::GaussianNoise { sigma: 5.0, seed }).unwrap();
        let b = degrade(&img, &DegradationSpec::GaussianNoise { sigma: 5.0, seed: seed.wrapping_add(1) }).unwrap();
        prop_assert_ne!(a.data(), b.data());
    }

    #[test]
    fn external_frames_must_match_dims(img in image()) {
        let (w, h) = (img.width(), img.height());
        prop_assert!(substitute_external(&img, FaceImage::new(w, h)).is_ok());
        prop_assert!(substitute_external(&img, FaceImage::new(w + 1, h)).is_err());
        prop_assert!(degrade(&img, &DegradationSpec::ExternalFrames("c40".into())).is_err());
    }
}
