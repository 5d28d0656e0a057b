//! The full pipeline run: train the vessel segmenter, clean the grading
//! images, train both expert classifiers (raw and cleaned pathway), fit the
//! fusion head on held-out predictions, evaluate on the test split, and
//! write one run manifest that records everything needed to reproduce or
//! serve the run.
//!
//! Heavy stages are memoized through [`StageCache`], keyed by a content
//! hash of their inputs plus the relevant configuration subsections.
//! Re-running an unchanged configuration replays the cached artifacts and
//! reproduces the manifest metrics exactly; changing any input or config
//! knob invalidates exactly the stages that depend on it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fundus_nn::Checkpoint;

use crate::classifier::{
    build_classifier, prediction_from_scores, preprocess_for_classifier, train_classifier,
    Classifier, ClassifierSpec, ClfTrainConfig,
};
use crate::cleaner::clean_image;
use crate::dataio::{
    derive_seed, load_aptos, load_manifest, load_vessel_dataset_with, make_split, save_manifest,
    vessel_layout, RunManifest, MANIFEST_SCHEMA_VERSION,
};
use crate::error::{CoreResult, PipelineError};
use crate::fusion::{
    build_fusion, decision_table, fuse_predict, train_fusion, FusionNet, FusionSpec,
    FusionTrainLog,
};
use crate::imgio::{load_rgb, save_mask_png, save_rgb_png};
use crate::metrics::{full_report, MetricsReport};
use crate::pipeline::cache::{
    hash_bytes, hash_file, hash_images, hash_vessel_pairs, CacheKey, StageCache,
};
use crate::pipeline::config::{parse_config, PipelineConfig};
use crate::preprocess::extract_patches;
use crate::segnet::{predict_mask, train_segnet, SegNet, SegNetworkSpec};
use crate::types::{FundusImage, OrdinalPrediction, SourceDataset};

/// JSON-serializable result of a single-image prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionOutput {
    /// Grade from the raw-image expert.
    pub grade_e1: u8,
    /// Grade from the cleaned-image expert.
    pub grade_e2: u8,
    /// Fused final grade (0..=4).
    pub final_grade: u8,
    /// Softmax probabilities over the five grades.
    pub probabilities: Vec<f32>,
    /// Where the cleaned image was written.
    pub cleaned_image_path: String,
    /// Where the predicted vessel mask was written.
    pub mask_path: String,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CoreResult<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| PipelineError::Data(format!("cannot serialize {}: {e}", path.display())))?;
    std::fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CoreResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| PipelineError::Data(format!("cannot parse {}: {e}", path.display())))
}

fn copy_into(src: &Path, dst: &Path) -> CoreResult<()> {
    std::fs::copy(src, dst)
        .map(|_| ())
        .map_err(|e| PipelineError::io(dst, e))
}

/// Rebuild a segmentation model from a checkpoint file and its spec.
pub fn load_segnet_from(path: &Path, spec: &SegNetworkSpec) -> CoreResult<SegNet> {
    let ckpt = Checkpoint::load(path)?;
    let mut model = SegNet::new(spec, 0)?;
    ckpt.apply_to(&mut model)?;
    Ok(model)
}

/// Rebuild a classifier from a checkpoint file and its spec.
pub fn load_classifier_from(path: &Path, spec: &ClassifierSpec) -> CoreResult<Classifier> {
    let ckpt = Checkpoint::load(path)?;
    let mut model = build_classifier(spec, 0)?;
    ckpt.apply_to(&mut model)?;
    Ok(model)
}

/// Rebuild a fusion network from a checkpoint file and its spec.
pub fn load_fusion_from(path: &Path, spec: &FusionSpec) -> CoreResult<FusionNet> {
    let ckpt = Checkpoint::load(path)?;
    let mut model = build_fusion(spec, 0)?;
    ckpt.apply_to(&mut model)?;
    Ok(model)
}

/// A fresh, unique run directory name under `root`: timestamp plus a config
/// digest, suffixed if the second resolution collides.
fn fresh_run_id(root: &Path, config_digest: &str) -> String {
    let ts = chrono::Utc::now().format("%Y%m%d-%H%M%S");
    let base = format!("run-{ts}-{}", &config_digest[..8]);
    let mut id = base.clone();
    let mut n = 1;
    while root.join(&id).exists() {
        id = format!("{base}-{n}");
        n += 1;
    }
    id
}

/// Train one expert classifier through the cache. Returns the cache entry
/// directory and whether it was a hit.
fn classifier_stage(
    cache: &StageCache,
    stage: &'static str,
    train_set: &[FundusImage],
    spec: &ClassifierSpec,
    cfg: &ClfTrainConfig,
    init_seed: u64,
) -> CoreResult<(PathBuf, bool)> {
    let key = CacheKey::new()
        .part("images", hash_images(train_set))
        .part("init-seed", init_seed.to_string())
        .config("classifier", spec)?
        .config("train", cfg)?;
    cache
        .materialize(stage, &key, |dir| {
            let mut model = build_classifier(spec, init_seed)?;
            let (ckpt, log) = train_classifier(&mut model, train_set, cfg)?;
            ckpt.save(&dir.join("classifier.ckpt"))?;
            write_json(&dir.join("train_log.json"), &log)
        })
        .map_err(|e| e.with_stage(stage))
}

/// Execute the whole pipeline described by `cfg` and return the manifest.
///
/// Stage order: load vessel data → train segmentation → load grading data
/// and split → clean every grading image → train the raw-image expert (E1)
/// and the cleaned-image expert (E2) on the train split → train the fusion
/// head on the validation split's expert predictions → evaluate the fused
/// system on the test split. Each heavy stage is cached; cache hits are
/// recorded in the manifest's `warnings` as notes.
///
/// The global `seed` fans out to every stage via `derive_seed`, so two runs
/// of the same config are bit-identical, and stage seeds never collide.
pub fn run_pipeline(cfg: &PipelineConfig) -> CoreResult<RunManifest> {
    cfg.validate()?;
    let data = &cfg.data;
    let vessel_root = data.vessel_root.as_deref().ok_or_else(|| {
        PipelineError::Config("data.vessel_root is required to run the pipeline".into())
    })?;
    let grading_root = data.grading_root.as_deref().ok_or_else(|| {
        PipelineError::Config("data.grading_root is required to run the pipeline".into())
    })?;
    let grading_labels = data.grading_labels.as_deref().ok_or_else(|| {
        PipelineError::Config("data.grading_labels is required to run the pipeline".into())
    })?;

    let seed = cfg.seed();
    let config_toml = cfg.to_toml()?;
    let output_root = cfg.output_root();
    let run_id = fresh_run_id(&output_root, &hash_bytes(config_toml.as_bytes()));
    let run_dir = output_root.join(&run_id);
    let ckpt_dir = run_dir.join("checkpoints");
    let log_dir = run_dir.join("logs");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| PipelineError::io(&ckpt_dir, e))?;
    std::fs::create_dir_all(&log_dir).map_err(|e| PipelineError::io(&log_dir, e))?;
    let cache = StageCache::open(&cfg.cache_root())?;
    let mut warnings: Vec<String> = Vec::new();

    // ---- Inputs: vessel pairs, grading images, split. All cheap relative
    // to training, and doing them first means bad splits fail before any
    // model is fitted.
    let layout = vessel_layout(data.vessel_dataset, data.stare_annotator.as_deref())
        .map_err(|e| e.with_stage("train-seg"))?;
    let pairs = load_vessel_dataset_with(vessel_root, layout.as_ref())
        .map_err(|e| e.with_stage("train-seg"))?;

    let images =
        load_aptos(grading_root, grading_labels).map_err(|e| e.with_stage("load-grading"))?;
    let split = make_split(&images, &data.split, derive_seed(seed, "split"))
        .map_err(|e| e.with_stage("split"))?;
    if split.val_ids.is_empty() {
        return Err(PipelineError::Data(
            "the split has an empty validation set, but fusion training needs held-out \
             predictions; raise data.split val_fraction"
                .into(),
        )
        .with_stage("train-fusion"));
    }
    if split.test_ids.is_empty() {
        return Err(PipelineError::Data(
            "the split has an empty test set; raise data.split test_fraction/test_size".into(),
        )
        .with_stage("evaluate"));
    }

    // ---- Stage: segmentation training.
    let mut seg_cfg = cfg.seg_train.clone();
    seg_cfg.seed = derive_seed(seed, "train-seg");
    let seg_key = CacheKey::new()
        .part("pairs", hash_vessel_pairs(&pairs))
        .part(
            "patches-per-image",
            cfg.preprocess.patches_per_image.to_string(),
        )
        .part("patch-seed", derive_seed(seed, "train-seg-patches").to_string())
        .part("init-seed", derive_seed(seed, "train-seg-init").to_string())
        .config("segnet", &cfg.segnet)?
        .config("train", &seg_cfg)?;
    let (seg_entry, seg_hit) = cache
        .materialize("train-seg", &seg_key, |dir| {
            let patches = extract_patches(
                &pairs,
                cfg.preprocess.patches_per_image,
                derive_seed(seed, "train-seg-patches"),
            )?;
            let mut model = SegNet::new(&cfg.segnet, derive_seed(seed, "train-seg-init"))?;
            let (ckpt, log) = train_segnet(&mut model, &patches, &seg_cfg)?;
            ckpt.save(&dir.join("segnet.ckpt"))?;
            write_json(&dir.join("train_log.json"), &log)
        })
        .map_err(|e| e.with_stage("train-seg"))?;
    if seg_hit {
        warnings.push("train-seg: cache hit, reused stored checkpoint".into());
    }
    copy_into(&seg_entry.join("segnet.ckpt"), &ckpt_dir.join("segnet.ckpt"))?;
    copy_into(
        &seg_entry.join("train_log.json"),
        &log_dir.join("train-seg.json"),
    )?;
    let seg_ckpt_hash = hash_file(&seg_entry.join("segnet.ckpt"))?;

    // ---- Stage: vessel removal over the whole grading set.
    let images_hash = hash_images(&images);
    let clean_key = CacheKey::new()
        .part("images", images_hash)
        .part("segnet-ckpt", seg_ckpt_hash)
        .part("threshold", format!("{}", cfg.predict.seg_threshold))
        .config("cleaner", &cfg.cleaner)?;
    let (clean_entry, clean_hit) = cache
        .materialize("clean", &clean_key, |dir| {
            let mut seg = load_segnet_from(&seg_entry.join("segnet.ckpt"), &cfg.segnet)?;
            for image in &images {
                let mask = predict_mask(&mut seg, image, cfg.predict.seg_threshold)?;
                let cleaned = clean_image(image, &mask, &cfg.cleaner)?;
                save_mask_png(&dir.join(format!("{}_mask.png", image.id)), &mask.pixels)?;
                save_rgb_png(
                    &dir.join(format!("{}_cleaned.png", image.id)),
                    &cleaned.pixels,
                )?;
            }
            Ok(())
        })
        .map_err(|e| e.with_stage("clean"))?;
    if clean_hit {
        warnings.push("clean: cache hit, reused stored masks and cleaned images".into());
    }
    let cleaned_images: Vec<FundusImage> = images
        .iter()
        .map(|image| {
            let px = load_rgb(&clean_entry.join(format!("{}_cleaned.png", image.id)))?;
            FundusImage::new(image.id.clone(), px, image.source, image.grade)
        })
        .collect::<CoreResult<_>>()
        .map_err(|e| e.with_stage("clean"))?;

    // ---- Classifier preprocessing (crop, enhance, resize). Cheap enough
    // to recompute every run; caching starts again at the training stages.
    let crop = cfg.preprocess.crop_threshold_opt();
    let graham = cfg.preprocess.graham_opt();
    let input_size = cfg.classifier.input_size;
    let prep = |set: &[FundusImage], stage: &'static str| -> CoreResult<Vec<FundusImage>> {
        set.iter()
            .map(|im| preprocess_for_classifier(im, crop, &graham, input_size))
            .collect::<CoreResult<Vec<_>>>()
            .map_err(|e| e.with_stage(stage))
    };
    let prep_original = prep(&images, "preprocess-original")?;
    let prep_cleaned = prep(&cleaned_images, "preprocess-cleaned")?;

    let index: BTreeMap<&str, usize> = images
        .iter()
        .enumerate()
        .map(|(i, im)| (im.id.as_str(), i))
        .collect();
    let pick = |ids: &[String], set: &[FundusImage]| -> CoreResult<Vec<FundusImage>> {
        ids.iter()
            .map(|id| {
                index.get(id.as_str()).map(|&i| set[i].clone()).ok_or_else(|| {
                    PipelineError::Data(format!("split references unknown image id '{id}'"))
                })
            })
            .collect()
    };

    // ---- Stages: the two expert classifiers, trained on the train split.
    let train_original = pick(&split.train_ids, &prep_original)?;
    let train_cleaned = pick(&split.train_ids, &prep_cleaned)?;
    let mut clf_cfg_e1 = cfg.clf_train.clone();
    clf_cfg_e1.seed = derive_seed(seed, "train-clf-original");
    let (clf_o_entry, clf_o_hit) = classifier_stage(
        &cache,
        "train-clf-original",
        &train_original,
        &cfg.classifier,
        &clf_cfg_e1,
        derive_seed(seed, "train-clf-original-init"),
    )?;
    if clf_o_hit {
        warnings.push("train-clf-original: cache hit, reused stored checkpoint".into());
    }
    let mut clf_cfg_e2 = cfg.clf_train.clone();
    clf_cfg_e2.seed = derive_seed(seed, "train-clf-cleaned");
    let (clf_c_entry, clf_c_hit) = classifier_stage(
        &cache,
        "train-clf-cleaned",
        &train_cleaned,
        &cfg.classifier,
        &clf_cfg_e2,
        derive_seed(seed, "train-clf-cleaned-init"),
    )?;
    if clf_c_hit {
        warnings.push("train-clf-cleaned: cache hit, reused stored checkpoint".into());
    }
    copy_into(
        &clf_o_entry.join("classifier.ckpt"),
        &ckpt_dir.join("clf_original.ckpt"),
    )?;
    copy_into(
        &clf_o_entry.join("train_log.json"),
        &log_dir.join("train-clf-original.json"),
    )?;
    copy_into(
        &clf_c_entry.join("classifier.ckpt"),
        &ckpt_dir.join("clf_cleaned.ckpt"),
    )?;
    copy_into(
        &clf_c_entry.join("train_log.json"),
        &log_dir.join("train-clf-cleaned.json"),
    )?;
    let clf_o_hash = hash_file(&ckpt_dir.join("clf_original.ckpt"))?;
    let clf_c_hash = hash_file(&ckpt_dir.join("clf_cleaned.ckpt"))?;

    // ---- Stage: fusion, trained on the validation split's predictions so
    // it never sees data the experts were fitted on.
    let val_original = pick(&split.val_ids, &prep_original)?;
    let val_cleaned = pick(&split.val_ids, &prep_cleaned)?;
    let mut fus_cfg = cfg.fusion_train.clone();
    fus_cfg.seed = derive_seed(seed, "train-fusion");
    let fusion_key = CacheKey::new()
        .part("clf-original", clf_o_hash.clone())
        .part("clf-cleaned", clf_c_hash.clone())
        .part("val-original", hash_images(&val_original))
        .part("val-cleaned", hash_images(&val_cleaned))
        .part("init-seed", derive_seed(seed, "train-fusion-init").to_string())
        .config("fusion", &cfg.fusion)?
        .config("train", &fus_cfg)?;
    let (fusion_entry, fusion_hit) = cache
        .materialize("train-fusion", &fusion_key, |dir| {
            let mut c1 =
                load_classifier_from(&clf_o_entry.join("classifier.ckpt"), &cfg.classifier)?;
            let mut c2 =
                load_classifier_from(&clf_c_entry.join("classifier.ckpt"), &cfg.classifier)?;
            let mut fusion_pairs: Vec<(OrdinalPrediction, OrdinalPrediction, u8)> =
                Vec::with_capacity(val_original.len());
            for (o, c) in val_original.iter().zip(&val_cleaned) {
                let grade = o.grade.ok_or_else(|| {
                    PipelineError::Data(format!("validation image '{}' has no grade", o.id))
                })?;
                let p1 = prediction_from_scores(c1.score_image(o)?);
                let p2 = prediction_from_scores(c2.score_image(c)?);
                fusion_pairs.push((p1, p2, grade));
            }
            let mut fusion =
                build_fusion(&cfg.fusion, derive_seed(seed, "train-fusion-init"))?;
            let (ckpt, log) = train_fusion(&mut fusion, &fusion_pairs, &fus_cfg)?;
            ckpt.save(&dir.join("fusion.ckpt"))?;
            write_json(&dir.join("train_log.json"), &log)
        })
        .map_err(|e| e.with_stage("train-fusion"))?;
    if fusion_hit {
        warnings.push("train-fusion: cache hit, reused stored checkpoint".into());
    }
    copy_into(
        &fusion_entry.join("fusion.ckpt"),
        &ckpt_dir.join("fusion.ckpt"),
    )?;
    copy_into(
        &fusion_entry.join("train_log.json"),
        &log_dir.join("train-fusion.json"),
    )?;
    let fusion_log: FusionTrainLog = read_json(&fusion_entry.join("train_log.json"))
        .map_err(|e| e.with_stage("train-fusion"))?;
    warnings.extend(fusion_log.warnings.iter().cloned());
    let fusion_hash = hash_file(&ckpt_dir.join("fusion.ckpt"))?;

    // ---- Stage: evaluate the fused system on the test split.
    let test_original = pick(&split.test_ids, &prep_original)?;
    let test_cleaned = pick(&split.test_ids, &prep_cleaned)?;
    let eval_key = CacheKey::new()
        .part("clf-original", clf_o_hash)
        .part("clf-cleaned", clf_c_hash)
        .part("fusion-ckpt", fusion_hash)
        .part("test-original", hash_images(&test_original))
        .part("test-cleaned", hash_images(&test_cleaned))
        .config("fusion", &cfg.fusion)?;
    let (eval_entry, eval_hit) = cache
        .materialize("evaluate", &eval_key, |dir| {
            let mut c1 =
                load_classifier_from(&clf_o_entry.join("classifier.ckpt"), &cfg.classifier)?;
            let mut c2 =
                load_classifier_from(&clf_c_entry.join("classifier.ckpt"), &cfg.classifier)?;
            let mut fusion =
                load_fusion_from(&fusion_entry.join("fusion.ckpt"), &cfg.fusion)?;
            let mut truth = Vec::with_capacity(test_original.len());
            let mut pred = Vec::with_capacity(test_original.len());
            let mut pos_scores = Vec::with_capacity(test_original.len());
            let mut csv =
                String::from("id,truth,grade_e1,grade_e2,final_grade,p0,p1,p2,p3,p4\n");
            for (o, c) in test_original.iter().zip(&test_cleaned) {
                let grade = o.grade.ok_or_else(|| {
                    PipelineError::Data(format!("test image '{}' has no grade", o.id))
                })?;
                let p1 = prediction_from_scores(c1.score_image(o)?);
                let p2 = prediction_from_scores(c2.score_image(c)?);
                let (final_grade, probs) = fuse_predict(&mut fusion, &p1, &p2)?;
                truth.push(grade);
                pred.push(final_grade);
                // Referable-DR score: total probability of grades 2..=4.
                pos_scores.push(f64::from(probs[2]) + f64::from(probs[3]) + f64::from(probs[4]));
                csv.push_str(&format!(
                    "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                    o.id, grade, p1.grade, p2.grade, final_grade, probs[0], probs[1], probs[2],
                    probs[3], probs[4]
                ));
            }
            let report = full_report(&truth, &pred, Some(&pos_scores))?;
            write_json(&dir.join("metrics.json"), &report)?;
            let csv_path = dir.join("predictions.csv");
            std::fs::write(&csv_path, csv).map_err(|e| PipelineError::io(&csv_path, e))
        })
        .map_err(|e| e.with_stage("evaluate"))?;
    if eval_hit {
        warnings.push("evaluate: cache hit, reused stored metrics".into());
    }
    copy_into(&eval_entry.join("metrics.json"), &run_dir.join("metrics.json"))?;
    copy_into(
        &eval_entry.join("predictions.csv"),
        &run_dir.join("predictions.csv"),
    )?;
    let metrics: MetricsReport =
        read_json(&eval_entry.join("metrics.json")).map_err(|e| e.with_stage("evaluate"))?;

    // ---- Decision table and manifest.
    let mut fusion = load_fusion_from(&ckpt_dir.join("fusion.ckpt"), &cfg.fusion)
        .map_err(|e| e.with_stage("train-fusion"))?;
    let table = decision_table(&mut fusion)?;

    let manifest = RunManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        run_id,
        config_snapshot: config_toml,
        seed,
        split,
        checkpoint_path: ckpt_dir.display().to_string(),
        metrics,
        created_at: RunManifest::now_timestamp(),
        warnings,
        decision_table: Some(table),
    };
    save_manifest(&manifest, &run_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Find the checkpoint directory recorded in a manifest, falling back to
/// the `checkpoints/` directory next to the manifest file itself (covers
/// manifests written with a relative `output_root` and runs that have been
/// moved wholesale).
fn resolve_checkpoint_dir(manifest_path: &Path, stored: &str) -> CoreResult<PathBuf> {
    let stored_path = PathBuf::from(stored);
    if stored_path.is_dir() {
        return Ok(stored_path);
    }
    if let Some(parent) = manifest_path.parent() {
        let sibling = parent.join("checkpoints");
        if sibling.is_dir() {
            return Ok(sibling);
        }
    }
    Err(PipelineError::Data(format!(
        "checkpoint directory '{stored}' not found (also looked next to the manifest)"
    )))
}

/// Grade a single image with the models recorded in a run manifest.
///
/// Writes the predicted vessel mask and the cleaned image into `out_dir`
/// (`<stem>_mask.png`, `<stem>_cleaned.png`) and returns the prediction.
/// Repeated invocations on the same inputs produce identical output.
pub fn predict_one(
    image_path: &Path,
    manifest_path: &Path,
    out_dir: &Path,
) -> CoreResult<PredictionOutput> {
    let manifest = load_manifest(manifest_path)?;
    let cfg = parse_config(&manifest.config_snapshot)
        .map_err(|e| e.with_stage("manifest-config"))?;
    let ckpts = resolve_checkpoint_dir(manifest_path, &manifest.checkpoint_path)?;

    let mut seg = load_segnet_from(&ckpts.join("segnet.ckpt"), &cfg.segnet)
        .map_err(|e| e.with_stage("load-models"))?;
    let mut c1 = load_classifier_from(&ckpts.join("clf_original.ckpt"), &cfg.classifier)
        .map_err(|e| e.with_stage("load-models"))?;
    let mut c2 = load_classifier_from(&ckpts.join("clf_cleaned.ckpt"), &cfg.classifier)
        .map_err(|e| e.with_stage("load-models"))?;
    let mut fusion = load_fusion_from(&ckpts.join("fusion.ckpt"), &cfg.fusion)
        .map_err(|e| e.with_stage("load-models"))?;

    let px = load_rgb(image_path)?;
    let id = image_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image")
        .to_string();
    let image = FundusImage::new(id.clone(), px, SourceDataset::External, None)?;

    std::fs::create_dir_all(out_dir).map_err(|e| PipelineError::io(out_dir, e))?;
    let mask = predict_mask(&mut seg, &image, cfg.predict.seg_threshold)
        .map_err(|e| e.with_stage("segment"))?;
    let cleaned =
        clean_image(&image, &mask, &cfg.cleaner).map_err(|e| e.with_stage("clean"))?;
    let mask_path = out_dir.join(format!("{id}_mask.png"));
    save_mask_png(&mask_path, &mask.pixels)?;
    let cleaned_path = out_dir.join(format!("{id}_cleaned.png"));
    save_rgb_png(&cleaned_path, &cleaned.pixels)?;

    let crop = cfg.preprocess.crop_threshold_opt();
    let graham = cfg.preprocess.graham_opt();
    let in1 = preprocess_for_classifier(&image, crop, &graham, cfg.classifier.input_size)
        .map_err(|e| e.with_stage("preprocess-original"))?;
    let in2 = preprocess_for_classifier(&cleaned, crop, &graham, cfg.classifier.input_size)
        .map_err(|e| e.with_stage("preprocess-cleaned"))?;
    let p1 = prediction_from_scores(
        c1.score_image(&in1)
            .map_err(|e| e.with_stage("classify-original"))?,
    );
    let p2 = prediction_from_scores(
        c2.score_image(&in2)
            .map_err(|e| e.with_stage("classify-cleaned"))?,
    );
    let (final_grade, probs) = fuse_predict(&mut fusion, &p1, &p2)?;

    Ok(PredictionOutput {
        grade_e1: p1.grade,
        grade_e2: p2.grade,
        final_grade,
        probabilities: probs.to_vec(),
        cleaned_image_path: cleaned_path.display().to_string(),
        mask_path: mask_path.display().to_string(),
    })
}
