use facecheck_core::corpus::{generate_synthetic_corpus, training_samples, SynthFaceConfig};
use facecheck_core::embedding::{train, Embedder, EmbeddingModel, LossConfig, ModelConfig, TrainSample, TrainSchedule};
use facecheck_core::geometry::Preprocess;
use facecheck_core::image::FaceImage;

/// Softmax accuracy of the finished model over the training set: argmax of
/// the cosine to each class weight, embeddings in inference mode.
fn final_accuracy(model: &EmbeddingModel, samples: &[TrainSample]) -> f64 {
    let d = model.config().embed_dim;
    let classes: Vec<&[f32]> = model.net.proj.chunks(d).collect();
    let hits = samples
        .iter()
        .filter(|s| {
            let e = model.embed_face(&FaceImage::from_rgb8(&s.image), &s.landmarks).unwrap();
            let cos = |w: &[f32]| {
                let norm = w.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
                w.iter().zip(e.as_slice()).map(|(&a, b)| a as f64 * b).sum::<f64>() / norm
            };
            let best = (0..classes.len()).max_by(|&a, &b| cos(classes[a]).total_cmp(&cos(classes[b]))).unwrap();
            best == s.class
        })
        .count();
    hits as f64 / samples.len() as f64
}

/// The desk preset on the default 200-identity corpus. Takes about two
/// minutes optimized.
#[test]
fn desk_preset_fits_the_training_identities() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_synthetic_corpus(&SynthFaceConfig::default(), dir.path()).unwrap();
    let samples = training_samples(&manifest).unwrap();
    let n = manifest.identity_classes().len();
    assert_eq!(n, 200);
    let model = EmbeddingModel::new(&ModelConfig::desk(n), Preprocess::default(), LossConfig::default(), 1).unwrap();
    let schedule = TrainSchedule::desk();
    let out = train(model, &samples, &schedule).unwrap();

    assert_eq!(out.log.len(), 10);
    // the loss climbs while the margin ramps up; compare from full margin on
    let full_margin = out.log[schedule.margin_warmup_epochs].mean_loss;
    assert!(out.log.last().unwrap().mean_loss < full_margin, "{:?}", out.log);
    assert_eq!(out.fake_samples_read, 0);
    let acc = final_accuracy(&out.model, &samples);
    println!("last-epoch running accuracy {:.4}, final model accuracy {acc:.4}", out.log.last().unwrap().train_accuracy);
    assert!(acc > 0.90, "final training accuracy {acc}");
}
