use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use facecheck_core::corpus::{
    build_reference_pool, generate_synthetic_corpus, sample_frames, training_samples, Label, Manifest, PoseJitter,
    Role, SynthFaceConfig,
};
use facecheck_core::degradation::{degrade, DegradationSpec};
use facecheck_core::embedding::{train, Embedder, EmbeddingModel, LossConfig, ModelConfig, TrainSchedule};
use facecheck_core::evaluation::{
    accuracy_at_threshold, calibrate_threshold, derive_seed, occlusion_saliency, roc_csv, roc_svg, EvalConfig,
    Evaluator, ScoredFrame, SCORE_ORIENTATION,
};
use facecheck_core::geometry::{align_and_crop, build_mask, CropSpec, LandmarkSet, MaskSpec, Preprocess};
use facecheck_core::image::FaceImage;
use facecheck_core::verification::{verify, Strategy, VerificationConfig};
use serde_json::{json, Value};

use crate::{
    CalibrateArgs, Cli, Command, DegradeArgs, DegradeKind, EvaluateArgs, MaskPreviewArgs, ModelInfoArgs,
    PreprocessArgs, SaliencyArgs, SampleFramesArgs, SelectionArgs, StrategyArg, SynthGenArgs, TrainArgs,
    ValidateArgs, VerifyArgs,
};

pub fn run(cli: &Cli) -> Result<()> {
    let seed = cli.seed;
    match &cli.command {
        Command::SynthGen(a) => synth_gen(a, seed),
        Command::Train(a) => train_cmd(a, seed),
        Command::Verify(a) => verify_cmd(a, seed),
        Command::Evaluate(a) => evaluate(a, seed),
        Command::Degrade(a) => degrade_cmd(a, seed),
        Command::MaskPreview(a) => mask_preview(a),
        Command::Saliency(a) => saliency(a),
        Command::CalibrateThreshold(a) => calibrate(a, seed),
        Command::SampleFrames(a) => sample(a, seed),
        Command::ModelInfo(a) => model_info(a),
        Command::Validate(a) => validate(a),
    }
}

fn print(v: &Value) {
    use std::io::Write;
    // a closed pipe (`| head`) is not an error worth a panic
    let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(v).expect("json value serializes"));
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load_manifest(path: &Path) -> Result<Manifest> {
    Ok(Manifest::load(path)?)
}

fn load_model(path: &Path) -> Result<EmbeddingModel> {
    Ok(EmbeddingModel::load(path)?)
}

fn preprocess(a: &PreprocessArgs) -> Result<Preprocess> {
    let p = Preprocess {
        crop: CropSpec::new(a.ratio, a.crop_size)?,
        mask: MaskSpec::new(a.mask.into(), a.radius),
    };
    p.validate()?;
    Ok(p)
}

fn strategy(s: &SelectionArgs, seed: u64) -> Strategy {
    match s.strategy {
        StrategyArg::Random => Strategy::Random(seed),
        StrategyArg::Nearest => Strategy::Nearest,
        StrategyArg::Farthest => Strategy::Farthest,
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn synth_gen(a: &SynthGenArgs, seed: u64) -> Result<()> {
    let pose_jitter = if a.no_jitter {
        PoseJitter::none()
    } else {
        PoseJitter {
            rotation_deg: a.rotation,
            translation_px: a.translation,
            ..PoseJitter::default()
        }
    };
    let cfg = SynthFaceConfig {
        n_identities: a.identities,
        images_per_identity: a.images_per_identity,
        frames_per_video: a.frames_per_video,
        pose_jitter,
        fake_fidelity: a.fidelity,
        image_size: a.image_size,
        rng_seed: seed,
        ..SynthFaceConfig::default()
    };
    let m = generate_synthetic_corpus(&cfg, &a.out)?;
    let count = |l: Label| m.entries.iter().filter(|e| e.label == l).count();
    print(&json!({
        "manifest": path_str(&a.out.join("manifest.jsonl")),
        "entries": m.entries.len(),
        "real": count(Label::Real),
        "fake": count(Label::Fake),
        "identities": a.identities,
        "seed": seed,
    }));
    Ok(())
}

fn train_cmd(a: &TrainArgs, seed: u64) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    // refuses fake-labeled train entries before any pixel is read
    let samples = training_samples(&manifest)?;
    let n_classes = manifest.identity_classes().len();
    let config = ModelConfig {
        input_size: a.preprocess.crop_size,
        embed_dim: a.embed_dim,
        ..ModelConfig::desk(n_classes)
    };
    let loss = LossConfig {
        scale: a.scale,
        margin: a.margin,
    };
    let model = EmbeddingModel::new(&config, preprocess(&a.preprocess)?, loss, seed)?;
    let schedule = TrainSchedule {
        epochs: a.epochs,
        batch_size: a.batch_size,
        base_lr: a.lr,
        lr_drop_epochs: a.lr_drops.clone(),
        margin_warmup_epochs: a.margin_warmup,
        rng_seed: seed,
        ..TrainSchedule::desk()
    };
    let outcome = train(model, &samples, &schedule)?;
    outcome.model.save(&a.out)?;
    let mut log_path = a.out.clone().into_os_string();
    log_path.push(".log.csv");
    let log_path = PathBuf::from(log_path);
    write(&log_path, &outcome.log_csv())?;
    let last = outcome.log.last().expect("at least one epoch");
    print(&json!({
        "model": path_str(&a.out),
        "log": path_str(&log_path),
        "samples": samples.len(),
        "classes": n_classes,
        "epochs": a.epochs,
        "final_loss": last.mean_loss,
        "final_train_accuracy": last.train_accuracy,
        "fake_samples_read": outcome.fake_samples_read,
        "preprocess": outcome.model.preprocess.fingerprint(),
        "seed": seed,
    }));
    Ok(())
}

fn verify_cmd(a: &VerifyArgs, seed: u64) -> Result<()> {
    let model = load_model(&a.model)?;
    let manifest = load_manifest(&a.refs_manifest)?;
    let identity = match &a.identity {
        Some(i) => i.clone(),
        None => {
            let mut ids: Vec<&str> = manifest
                .entries
                .iter()
                .filter(|e| e.role == Role::ReferenceCandidate)
                .map(|e| e.identity.as_str())
                .collect();
            ids.sort_unstable();
            ids.dedup();
            match ids.as_slice() {
                [one] => one.to_string(),
                [] => bail!("{} has no reference candidates", a.refs_manifest.display()),
                _ => bail!("{} holds {} identities; pass --identity", a.refs_manifest.display(), ids.len()),
            }
        }
    };
    let suspect_video = a.suspect_video.clone().unwrap_or_default();
    let pool = build_reference_pool(
        &manifest,
        &identity,
        &suspect_video,
        a.selection.pool_size,
        derive_seed(seed, "pool", &path_str(&a.suspect)),
        strategy(&a.selection, seed),
        a.selection.ref_count,
    )?;
    let image = FaceImage::load(&a.suspect)?;
    let landmarks = LandmarkSet::load(&a.landmarks)?;
    let cfg = VerificationConfig::new(a.tau, model.preprocess)?;
    let r = verify(&model, (&image, &landmarks), &pool, &cfg)?;
    print(&json!({
        "distance": r.distance,
        "decision": r.decision,
        "references": r.chosen_reference_ids,
        "identity": identity,
        "tau": a.tau,
        "strategy": strategy(&a.selection, seed).to_string(),
        "seed": seed,
        "score_orientation": SCORE_ORIENTATION,
    }));
    Ok(())
}

fn eval_config(sel: &SelectionArgs, split: facecheck_core::corpus::Split, seed: u64) -> EvalConfig {
    EvalConfig {
        split,
        strategy: strategy(sel, seed),
        ref_count: sel.ref_count,
        pool_size: sel.pool_size,
        seed,
        ..EvalConfig::default()
    }
}

fn evaluate(a: &EvaluateArgs, seed: u64) -> Result<()> {
    let model = load_model(&a.model)?;
    let manifest = load_manifest(&a.manifest)?;
    let cfg = EvalConfig {
        degradation: a.degrade.clone(),
        frames_per_class: a.frames_per_class,
        external_root: a.external_root.clone(),
        ..eval_config(&a.selection, a.split, seed)
    };
    cfg.validate()?;
    let outcome = Evaluator::new(&manifest, &model)?.run(&cfg)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    write(&a.out.join("roc.csv"), &roc_csv(&outcome.roc))?;
    write(&a.out.join("roc.svg"), &roc_svg(&outcome.roc, &format!("{} split", a.split)))?;
    let mut scores = String::new();
    for (f, refs) in outcome.frames.iter().zip(&outcome.references) {
        let line = json!({
            "frame_id": f.frame_id,
            "identity": f.identity,
            "video_id": f.video_id,
            "label": f.label,
            "score": f.score,
            "references": refs,
        });
        scores.push_str(&line.to_string());
        scores.push('\n');
    }
    write(&a.out.join("scores.jsonl"), &scores)?;

    let mut report = json!({
        "auc": outcome.roc.auc,
        "n_real": outcome.roc.n_real,
        "n_fake": outcome.roc.n_fake,
        "curve_csv_path": "roc.csv",
        "score_orientation": SCORE_ORIENTATION,
        "seed": seed,
        "config_echo": {
            "model": path_str(&a.model),
            "manifest": path_str(&a.manifest),
            "split": a.split.to_string(),
            "strategy": cfg.strategy.name(),
            "ref_count": cfg.ref_count,
            "pool_size": cfg.pool_size,
            "degrade": cfg.degradation.to_string(),
            "frames_per_class": cfg.frames_per_class,
            "preprocess": model.preprocess.fingerprint(),
        },
    });
    if let Some(tau) = a.tau {
        let acc = accuracy_at_threshold(&outcome.frames, tau)?;
        report["tau"] = json!(tau);
        report["accuracy"] = json!({"overall": acc.overall, "per_video": acc.per_video});
    }
    let text = serde_json::to_string_pretty(&report)? + "\n";
    write(&a.out.join("report.json"), &text)?;
    print(&report);
    Ok(())
}

fn degradation(a: &DegradeArgs, seed: u64) -> Result<DegradationSpec> {
    let spec = match a.kind {
        DegradeKind::None => DegradationSpec::None,
        DegradeKind::Jpeg => DegradationSpec::Jpeg(a.quality),
        DegradeKind::Resize => DegradationSpec::Downsample(a.factor),
        DegradeKind::Noise => DegradationSpec::GaussianNoise { sigma: a.sigma, seed },
    };
    spec.validate()?;
    Ok(spec)
}

fn degrade_cmd(a: &DegradeArgs, seed: u64) -> Result<()> {
    let spec = degradation(a, seed)?;
    if let Some(input) = &a.input {
        let img = FaceImage::load(input)?;
        degrade(&img, &spec)?.save_png(&a.out)?;
        print(&json!({"in": path_str(input), "out": path_str(&a.out), "degradation": spec.to_string(), "seed": seed}));
        return Ok(());
    }
    let manifest_path = a.manifest.as_ref().expect("clap requires --in or --manifest");
    let manifest = load_manifest(manifest_path)?;
    for e in &manifest.entries {
        let img = manifest.load_image(e)?;
        let frame_spec = spec.with_seed(derive_seed(seed, "noise", &e.frame_id));
        let out = a.out.join(&e.image_path);
        if let Some(dir) = out.parent() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        degrade(&img, &frame_spec)?.save_png(&out)?;
        let lms = a.out.join(&e.landmarks_path);
        if let Some(dir) = lms.parent() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        fs::copy(manifest.resolve(&e.landmarks_path), &lms)
            .with_context(|| format!("copying landmarks to {}", lms.display()))?;
    }
    let degraded = Manifest::new(&a.out, manifest.entries.clone());
    degraded.save(&a.out.join("manifest.jsonl"))?;
    print(&json!({
        "manifest": path_str(&a.out.join("manifest.jsonl")),
        "frames": manifest.entries.len(),
        "degradation": spec.to_string(),
        "seed": seed,
    }));
    Ok(())
}

fn mask_preview(a: &MaskPreviewArgs) -> Result<()> {
    let pre = preprocess(&a.preprocess)?;
    let image = FaceImage::load(&a.image)?;
    let landmarks = LandmarkSet::load(&a.landmarks)?;
    let (masked, crop_landmarks) = pre.run(&image, &landmarks)?;
    masked.save_png(&a.out)?;
    if let Some(path) = &a.mask_out {
        let mask = build_mask(&pre.mask, &crop_landmarks, masked.dims())?;
        mask.to_gray8()
            .save(path)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    print(&json!({"out": path_str(&a.out), "preprocess": pre.fingerprint()}));
    Ok(())
}

fn saliency(a: &SaliencyArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let image = FaceImage::load(&a.image)?;
    let landmarks = LandmarkSet::load(&a.landmarks)?;
    let reference = match (&a.reference, &a.reference_landmarks) {
        (Some(img), Some(lms)) => Some(model.embed_face(&FaceImage::load(img)?, &LandmarkSet::load(lms)?)?),
        _ => None,
    };
    let map = occlusion_saliency(&model, &image, &landmarks, reference.as_ref(), a.patch, a.stride, a.fill)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write(&a.out.join("saliency.csv"), &map.to_csv())?;
    write(&a.out.join("saliency.svg"), &map.to_svg(model.preprocess.crop.output_size))?;
    // the unmasked crop the grid refers to
    let crop = align_and_crop(&image, &landmarks, &model.preprocess.crop)?;
    crop.image.save_png(&a.out.join("crop.png"))?;
    let (r, c) = map.argmax();
    print(&json!({
        "rows": map.rows,
        "cols": map.cols,
        "patch": map.patch,
        "stride": map.stride,
        "argmax": [r, c],
        "max": map.get(r, c),
        "reference_distance": map.reference_distance,
        "csv": path_str(&a.out.join("saliency.csv")),
        "svg": path_str(&a.out.join("saliency.svg")),
    }));
    Ok(())
}

fn calibrate(a: &CalibrateArgs, seed: u64) -> Result<()> {
    let model = load_model(&a.model)?;
    let manifest = load_manifest(&a.manifest)?;
    let cfg = eval_config(&a.selection, a.split, seed);
    let outcome = Evaluator::new(&manifest, &model)?.run(&cfg)?;
    let tau = calibrate_threshold(&outcome.frames)?;
    let rate = |label: Label| {
        let of: Vec<&ScoredFrame> = outcome.frames.iter().filter(|f| f.label == label).collect();
        of.iter().filter(|f| f.score > tau).count() as f64 / of.len() as f64
    };
    print(&json!({
        "tau": tau,
        "youden_j": rate(Label::Fake) - rate(Label::Real),
        "auc": outcome.roc.auc,
        "n_real": outcome.roc.n_real,
        "n_fake": outcome.roc.n_fake,
        "split": a.split.to_string(),
        "seed": seed,
        "score_orientation": SCORE_ORIENTATION,
    }));
    Ok(())
}

fn sample(a: &SampleFramesArgs, seed: u64) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let picked = sample_frames(&manifest, a.split, a.per_class, seed)?;
    let mut counts: BTreeMap<String, BTreeMap<&str, usize>> = BTreeMap::new();
    for e in &picked {
        let label = match e.label {
            Label::Real => "real",
            Label::Fake => "fake",
        };
        *counts.entry(e.identity.clone()).or_default().entry(label).or_default() += 1;
    }
    let subset = Manifest::new(manifest.root.clone(), picked.into_iter().cloned().collect());
    subset.save(&a.out)?;
    print(&json!({
        "out": path_str(&a.out),
        "frames": subset.entries.len(),
        "per_identity": counts,
        "seed": seed,
    }));
    Ok(())
}

fn model_info(a: &ModelInfoArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let cfg = model.config();
    let params: usize = model.net.params().iter().map(|t| t.len()).sum();
    print(&json!({
        "input_size": cfg.input_size,
        "embed_dim": cfg.embed_dim,
        "conv_widths": cfg.conv_widths,
        "n_classes": cfg.n_classes,
        "parameters": params,
        "preprocess": model.preprocess.fingerprint(),
        "loss": {"scale": model.loss.scale, "margin": model.loss.margin},
    }));
    Ok(())
}

fn validate(a: &ValidateArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    manifest.validate()?;
    let mut audited = 0usize;
    if let Some(path) = &a.scores {
        let video_of: HashMap<&str, &str> = manifest
            .entries
            .iter()
            .map(|e| (e.frame_id.as_str(), e.video_id.as_str()))
            .collect();
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let v: Value = serde_json::from_str(line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
            let video = v["video_id"].as_str().unwrap_or_default();
            for r in v["references"].as_array().into_iter().flatten() {
                let r = r.as_str().unwrap_or_default();
                match video_of.get(r) {
                    None => bail!("{}:{}: unknown reference frame {r}", path.display(), i + 1),
                    Some(rv) if *rv == video => {
                        return Err(facecheck_core::Error::SameVideoReference {
                            candidate: r.to_string(),
                            video: video.to_string(),
                        }
                        .into())
                    }
                    _ => {}
                }
            }
            audited += 1;
        }
    }
    print(&json!({"manifest": path_str(&a.manifest), "entries": manifest.entries.len(), "audited_scores": audited, "ok": true}));
    Ok(())
}
