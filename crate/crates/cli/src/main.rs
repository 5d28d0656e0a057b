//! `fundus` — command-line driver for the DR severity pipeline.
//!
//! Subcommands mirror the pipeline stages (prep, train-seg, eval-seg,
//! segment, clean, train-clf, train-fusion, evaluate, predict) plus `run`,
//! which executes the whole pipeline from one TOML config and writes a run
//! manifest. Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 training failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use fundus_core::classifier::{
    build_classifier, prediction_from_grade, preprocess_for_classifier, train_classifier,
};
use fundus_core::cleaner::clean_image;
use fundus_core::dataio::{
    derive_seed, find_image_file, list_rasters, load_aptos, load_vessel_dataset_with,
    vessel_layout,
};
use fundus_core::error::{CoreResult, PipelineError};
use fundus_core::fusion::{build_fusion, decision_table, train_fusion};
use fundus_core::imgio::{load_mask_binarized, load_rgb, save_mask_png, save_rgb_png};
use fundus_core::metrics::full_report;
use fundus_core::pipeline::{
    load_config, load_segnet_from, predict_one, run_pipeline, PipelineConfig,
};
use fundus_core::preprocess::extract_patches;
use fundus_core::segnet::{kfold_evaluate, predict_mask, train_segnet, SegNet};
use fundus_core::types::{FundusImage, OrdinalPrediction, SourceDataset, VesselMask};

#[derive(Parser)]
#[command(
    name = "fundus",
    version,
    about = "Diabetic-retinopathy severity pipeline: vessel segmentation, \
             vessel-removal cleaning, dual ordinal classifiers, decision fusion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ClfPath {
    /// Train on preprocessed original images (expert E1).
    Original,
    /// Train on vessel-removed images (expert E2); needs --seg-checkpoint.
    Cleaned,
}

#[derive(Subcommand)]
enum Command {
    /// Preprocess the configured datasets into an output directory
    Prep {
        /// Pipeline TOML config (defaults apply if omitted)
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the vessel segmentation network
    TrainSeg {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (default: <output_root>/train-seg-<timestamp>)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// K-fold cross-validated segmentation evaluation
    EvalSeg {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Where to write reports.json (default: print to stdout only)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict vessel masks for every raster in a directory
    Segment {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Trained segmentation checkpoint
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory of input images
        #[arg(long = "in")]
        input: PathBuf,
        /// Directory for predicted mask PNGs
        #[arg(long)]
        out: PathBuf,
    },
    /// Produce cleaned images from images plus vessel masks
    Clean {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory of input images
        #[arg(long = "in")]
        input: PathBuf,
        /// Directory of masks (same file stem as each image)
        #[arg(long)]
        masks: PathBuf,
        /// Directory for cleaned PNGs
        #[arg(long)]
        out: PathBuf,
        /// Compare outputs pixel-for-pixel against this golden directory
        #[arg(long)]
        golden_check: Option<PathBuf>,
    },
    /// Train one expert classifier (original or cleaned pathway)
    TrainClf {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Which pathway to train
        #[arg(long, value_enum)]
        path: ClfPath,
        /// Segmentation checkpoint, required for --path cleaned
        #[arg(long)]
        seg_checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the fusion network from an expert-prediction CSV
    /// (columns: grade_e1,grade_e2,truth)
    TrainFusion {
        #[arg(long)]
        config: Option<PathBuf>,
        /// CSV of expert grades and ground truth
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also export the 5x5 decision table as CSV
        #[arg(long)]
        table_out: Option<PathBuf>,
    },
    /// Score a prediction CSV against a truth CSV (schema: id,grade)
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Grade one image with the models of a finished run
    Predict {
        /// Image to grade
        #[arg(long)]
        image: PathBuf,
        /// Run manifest (manifest.json of a `fundus run`)
        #[arg(long)]
        manifest: PathBuf,
        /// Where to write the mask and cleaned image (default: .)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Execute the full pipeline from a config file
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn dispatch(command: Command) -> CoreResult<()> {
    match command {
        Command::Prep { config, out } => cmd_prep(&load_cfg(config.as_deref())?, &out),
        Command::TrainSeg { config, out } => cmd_train_seg(&load_cfg(config.as_deref())?, out),
        Command::EvalSeg { config, out } => cmd_eval_seg(&load_cfg(config.as_deref())?, out),
        Command::Segment {
            config,
            checkpoint,
            input,
            out,
        } => cmd_segment(&load_cfg(config.as_deref())?, &checkpoint, &input, &out),
        Command::Clean {
            config,
            input,
            masks,
            out,
            golden_check,
        } => cmd_clean(
            &load_cfg(config.as_deref())?,
            &input,
            &masks,
            &out,
            golden_check.as_deref(),
        ),
        Command::TrainClf {
            config,
            path,
            seg_checkpoint,
            out,
        } => cmd_train_clf(
            &load_cfg(config.as_deref())?,
            path,
            seg_checkpoint.as_deref(),
            out,
        ),
        Command::TrainFusion {
            config,
            pairs,
            out,
            table_out,
        } => cmd_train_fusion(
            &load_cfg(config.as_deref())?,
            &pairs,
            out,
            table_out.as_deref(),
        ),
        Command::Evaluate { pred, truth } => cmd_evaluate(&pred, &truth),
        Command::Predict {
            image,
            manifest,
            out,
        } => cmd_predict(&image, &manifest, out),
        Command::Run { config } => cmd_run(&load_cfg(config.as_deref())?),
    }
}

fn load_cfg(path: Option<&Path>) -> CoreResult<PipelineConfig> {
    match path {
        Some(p) => load_config(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn ensure_dir(dir: &Path) -> CoreResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))
}

/// Resolve an output directory: the explicit one, or a timestamped
/// directory under the config's output root.
fn out_dir(cfg: &PipelineConfig, out: Option<PathBuf>, tag: &str) -> CoreResult<PathBuf> {
    let dir = out.unwrap_or_else(|| {
        let ts = chrono::Utc::now().format("%Y%m%d-%H%M%S");
        cfg.output_root().join(format!("{tag}-{ts}"))
    });
    ensure_dir(&dir)?;
    Ok(dir)
}

fn write_json_file<T: serde::Serialize>(path: &Path, value: &T) -> CoreResult<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| PipelineError::Data(format!("cannot serialize {}: {e}", path.display())))?;
    std::fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}

fn print_json<T: serde::Serialize>(value: &T) -> CoreResult<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| PipelineError::Data(format!("cannot serialize output: {e}")))?;
    println!("{text}");
    Ok(())
}

fn vessel_pairs(cfg: &PipelineConfig) -> CoreResult<Vec<(FundusImage, VesselMask)>> {
    let root = cfg.data.vessel_root.as_deref().ok_or_else(|| {
        PipelineError::Config("data.vessel_root must be set in the config file".into())
    })?;
    let layout = vessel_layout(cfg.data.vessel_dataset, cfg.data.stare_annotator.as_deref())?;
    load_vessel_dataset_with(root, layout.as_ref())
}

fn grading_images(cfg: &PipelineConfig) -> CoreResult<Vec<FundusImage>> {
    let root = cfg.data.grading_root.as_deref().ok_or_else(|| {
        PipelineError::Config("data.grading_root must be set in the config file".into())
    })?;
    let labels = cfg.data.grading_labels.as_deref().ok_or_else(|| {
        PipelineError::Config("data.grading_labels must be set in the config file".into())
    })?;
    load_aptos(root, labels)
}

/// Load a directory of rasters as ungraded images, ids from file stems.
fn load_image_dir(dir: &Path) -> CoreResult<Vec<FundusImage>> {
    let files = list_rasters(dir)?;
    if files.is_empty() {
        return Err(PipelineError::Data(format!(
            "no raster images found in {}",
            dir.display()
        )));
    }
    files
        .iter()
        .map(|path| {
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("image")
                .to_string();
            let px = load_rgb(path)?;
            FundusImage::new(id, px, SourceDataset::External, None)
        })
        .collect()
}

fn cmd_prep(cfg: &PipelineConfig, out: &Path) -> CoreResult<()> {
    cfg.validate()?;
    ensure_dir(out)?;
    let seed = cfg.seed();
    let mut summary = serde_json::Map::new();

    let mut did_anything = false;
    if cfg.data.vessel_root.is_some() {
        let pairs = vessel_pairs(cfg)?;
        let patches = extract_patches(
            &pairs,
            cfg.preprocess.patches_per_image,
            derive_seed(seed, "train-seg-patches"),
        )?;
        let patch_dir = out.join("patches");
        ensure_dir(&patch_dir)?;
        let mut index = Vec::with_capacity(patches.len());
        for (i, origin) in patches.origins.iter().enumerate() {
            save_rgb_png(&patch_dir.join(format!("patch_{i:04}.png")), &patches.patches[i])?;
            save_mask_png(
                &patch_dir.join(format!("patch_{i:04}_mask.png")),
                &patches.mask_patches[i],
            )?;
            index.push(serde_json::json!({
                "patch": format!("patch_{i:04}.png"),
                "mask": format!("patch_{i:04}_mask.png"),
                "image_id": origin.0,
                "top": origin.1,
                "left": origin.2,
            }));
        }
        write_json_file(&out.join("patch_index.json"), &index)?;
        summary.insert("patches".into(), serde_json::json!(patches.len()));
        did_anything = true;
    }

    if cfg.data.grading_root.is_some() {
        let images = grading_images(cfg)?;
        let processed_dir = out.join("processed");
        ensure_dir(&processed_dir)?;
        let crop = cfg.preprocess.crop_threshold_opt();
        let graham = cfg.preprocess.graham_opt();
        let mut grades = BTreeMap::new();
        for image in &images {
            let prepped =
                preprocess_for_classifier(image, crop, &graham, cfg.classifier.input_size)?;
            save_rgb_png(&processed_dir.join(format!("{}.png", image.id)), &prepped.pixels)?;
            grades.insert(image.id.clone(), image.grade);
        }
        write_json_file(&out.join("grades.json"), &grades)?;
        summary.insert("processed_images".into(), serde_json::json!(images.len()));
        did_anything = true;
    }

    if !did_anything {
        return Err(PipelineError::Config(
            "nothing to prepare: set data.vessel_root and/or data.grading_root in the config"
                .into(),
        ));
    }
    summary.insert("out".into(), serde_json::json!(out.display().to_string()));
    print_json(&serde_json::Value::Object(summary))
}

fn cmd_train_seg(cfg: &PipelineConfig, out: Option<PathBuf>) -> CoreResult<()> {
    cfg.validate()?;
    let seed = cfg.seed();
    let pairs = vessel_pairs(cfg)?;
    let patches = extract_patches(
        &pairs,
        cfg.preprocess.patches_per_image,
        derive_seed(seed, "train-seg-patches"),
    )?;
    let mut seg_cfg = cfg.seg_train.clone();
    seg_cfg.seed = derive_seed(seed, "train-seg");
    let mut model = SegNet::new(&cfg.segnet, derive_seed(seed, "train-seg-init"))?;
    let (ckpt, log) = train_segnet(&mut model, &patches, &seg_cfg)?;
    let dir = out_dir(cfg, out, "train-seg")?;
    let ckpt_path = dir.join("segnet.ckpt");
    ckpt.save(&ckpt_path)?;
    write_json_file(&dir.join("train_log.json"), &log)?;
    print_json(&serde_json::json!({
        "checkpoint": ckpt_path.display().to_string(),
        "best_epoch": log.best_epoch,
        "best_val_loss": log.best_val_loss,
        "epochs_run": log.epochs.len(),
        "stopped_early": log.stopped_early,
    }))
}

fn cmd_eval_seg(cfg: &PipelineConfig, out: Option<PathBuf>) -> CoreResult<()> {
    cfg.validate()?;
    let seed = cfg.seed();
    let pairs = vessel_pairs(cfg)?;
    let patches = extract_patches(
        &pairs,
        cfg.preprocess.patches_per_image,
        derive_seed(seed, "train-seg-patches"),
    )?;
    let mut seg_cfg = cfg.seg_train.clone();
    seg_cfg.seed = derive_seed(seed, "train-seg");
    let (folds, average) = kfold_evaluate(&patches, &cfg.segnet, &seg_cfg)?;
    let report = serde_json::json!({ "folds": folds, "average": average });
    if let Some(dir) = out {
        ensure_dir(&dir)?;
        write_json_file(&dir.join("reports.json"), &report)?;
    }
    print_json(&report)
}

fn cmd_segment(
    cfg: &PipelineConfig,
    checkpoint: &Path,
    input: &Path,
    out: &Path,
) -> CoreResult<()> {
    cfg.validate()?;
    let mut model = load_segnet_from(checkpoint, &cfg.segnet)?;
    let images = load_image_dir(input)?;
    ensure_dir(out)?;
    for image in &images {
        let mask = predict_mask(&mut model, image, cfg.predict.seg_threshold)?;
        save_mask_png(&out.join(format!("{}.png", image.id)), &mask.pixels)?;
    }
    print_json(&serde_json::json!({
        "segmented": images.len(),
        "out": out.display().to_string(),
    }))
}

fn cmd_clean(
    cfg: &PipelineConfig,
    input: &Path,
    masks: &Path,
    out: &Path,
    golden: Option<&Path>,
) -> CoreResult<()> {
    cfg.validate()?;
    let images = load_image_dir(input)?;
    ensure_dir(out)?;
    let mut golden_checked = 0usize;
    for image in &images {
        let mask_path = find_image_file(masks, &image.id).ok_or_else(|| {
            PipelineError::Data(format!(
                "no mask for image '{}' in {}",
                image.id,
                masks.display()
            ))
        })?;
        let mask = VesselMask::new(image.id.clone(), load_mask_binarized(&mask_path)?)?;
        let cleaned = clean_image(image, &mask, &cfg.cleaner)?;
        let out_path = out.join(format!("{}.png", image.id));
        save_rgb_png(&out_path, &cleaned.pixels)?;
        if let Some(golden_dir) = golden {
            let golden_path = find_image_file(golden_dir, &image.id).ok_or_else(|| {
                PipelineError::Data(format!(
                    "golden check: no reference for '{}' in {}",
                    image.id,
                    golden_dir.display()
                ))
            })?;
            let reference = load_rgb(&golden_path)?;
            if reference != cleaned.pixels {
                return Err(PipelineError::Data(format!(
                    "golden check failed: cleaned '{}' differs from {}",
                    image.id,
                    golden_path.display()
                )));
            }
            golden_checked += 1;
        }
    }
    print_json(&serde_json::json!({
        "cleaned": images.len(),
        "golden_checked": golden_checked,
        "out": out.display().to_string(),
    }))
}

fn cmd_train_clf(
    cfg: &PipelineConfig,
    path: ClfPath,
    seg_checkpoint: Option<&Path>,
    out: Option<PathBuf>,
) -> CoreResult<()> {
    cfg.validate()?;
    let seed = cfg.seed();
    let images = grading_images(cfg)?;

    let (tag, inputs) = match path {
        ClfPath::Original => ("original", images),
        ClfPath::Cleaned => {
            let ckpt = seg_checkpoint.ok_or_else(|| {
                PipelineError::Config(
                    "--seg-checkpoint is required with --path cleaned".into(),
                )
            })?;
            let mut seg = load_segnet_from(ckpt, &cfg.segnet)?;
            let cleaned = images
                .iter()
                .map(|image| {
                    let mask = predict_mask(&mut seg, image, cfg.predict.seg_threshold)?;
                    clean_image(image, &mask, &cfg.cleaner)
                })
                .collect::<CoreResult<Vec<_>>>()?;
            ("cleaned", cleaned)
        }
    };

    let crop = cfg.preprocess.crop_threshold_opt();
    let graham = cfg.preprocess.graham_opt();
    let prepped = inputs
        .iter()
        .map(|im| preprocess_for_classifier(im, crop, &graham, cfg.classifier.input_size))
        .collect::<CoreResult<Vec<_>>>()?;

    let mut clf_cfg = cfg.clf_train.clone();
    clf_cfg.seed = derive_seed(seed, &format!("train-clf-{tag}"));
    let mut model = build_classifier(
        &cfg.classifier,
        derive_seed(seed, &format!("train-clf-{tag}-init")),
    )?;
    let (ckpt, log) = train_classifier(&mut model, &prepped, &clf_cfg)?;
    let dir = out_dir(cfg, out, &format!("train-clf-{tag}"))?;
    let ckpt_path = dir.join(format!("clf_{tag}.ckpt"));
    ckpt.save(&ckpt_path)?;
    write_json_file(&dir.join("train_log.json"), &log)?;
    print_json(&serde_json::json!({
        "checkpoint": ckpt_path.display().to_string(),
        "pathway": tag,
        "best_epoch": log.best_epoch,
        "best_val_loss": log.best_val_loss,
        "epochs_run": log.epochs.len(),
    }))
}

/// Read the expert-grade CSV for fusion training:
/// header grade_e1,grade_e2,truth (an id column is allowed and ignored).
fn read_fusion_pairs(
    path: &Path,
) -> CoreResult<Vec<(OrdinalPrediction, OrdinalPrediction, u8)>> {
    let file = std::fs::File::open(path).map_err(|e| PipelineError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| PipelineError::Data(format!("cannot read CSV header: {e}")))?
        .clone();
    let col = |name: &str| -> CoreResult<usize> {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| {
            PipelineError::Data(format!(
                "fusion CSV needs columns grade_e1,grade_e2,truth; found: {}",
                headers.iter().collect::<Vec<_>>().join(",")
            ))
        })
    };
    let (c1, c2, ct) = (col("grade_e1")?, col("grade_e2")?, col("truth")?);
    let parse_grade = |s: &str, row: usize, what: &str| -> CoreResult<u8> {
        let g: u8 = s.trim().parse().map_err(|_| {
            PipelineError::Data(format!("row {row}: {what} '{s}' is not a grade"))
        })?;
        if g > 4 {
            return Err(PipelineError::Data(format!(
                "row {row}: {what} {g} is outside 0..=4"
            )));
        }
        Ok(g)
    };
    let mut pairs = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| PipelineError::Data(format!("row {}: {e}", i + 2)))?;
        let row = i + 2;
        let g1 = parse_grade(&record[c1], row, "grade_e1")?;
        let g2 = parse_grade(&record[c2], row, "grade_e2")?;
        let truth = parse_grade(&record[ct], row, "truth")?;
        pairs.push((prediction_from_grade(g1)?, prediction_from_grade(g2)?, truth));
    }
    Ok(pairs)
}

fn cmd_train_fusion(
    cfg: &PipelineConfig,
    pairs_csv: &Path,
    out: Option<PathBuf>,
    table_out: Option<&Path>,
) -> CoreResult<()> {
    cfg.validate()?;
    let seed = cfg.seed();
    let pairs = read_fusion_pairs(pairs_csv)?;
    let mut fus_cfg = cfg.fusion_train.clone();
    fus_cfg.seed = derive_seed(seed, "train-fusion");
    let mut model = build_fusion(&cfg.fusion, derive_seed(seed, "train-fusion-init"))?;
    let (ckpt, log) = train_fusion(&mut model, &pairs, &fus_cfg)?;
    let dir = out_dir(cfg, out, "train-fusion")?;
    let ckpt_path = dir.join("fusion.ckpt");
    ckpt.save(&ckpt_path)?;
    write_json_file(&dir.join("train_log.json"), &log)?;
    let table = decision_table(&mut model)?;
    if let Some(table_path) = table_out {
        let mut csv = String::from("g1\\g2,0,1,2,3,4\n");
        for (g1, row) in table.iter().enumerate() {
            csv.push_str(&format!(
                "{g1},{}\n",
                row.iter()
                    .map(|g| g.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            ));
        }
        std::fs::write(table_path, csv).map_err(|e| PipelineError::io(table_path, e))?;
    }
    print_json(&serde_json::json!({
        "checkpoint": ckpt_path.display().to_string(),
        "best_val_loss": log.best_val_loss,
        "winning_restart": log.winning_restart,
        "warnings": log.warnings,
        "decision_table": table,
    }))
}

/// Read an `id,grade` CSV into an id-keyed map.
fn read_grade_csv(path: &Path) -> CoreResult<BTreeMap<String, u8>> {
    let file = std::fs::File::open(path).map_err(|e| PipelineError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| PipelineError::Data(format!("cannot read CSV header: {e}")))?
        .clone();
    let col = |name: &str| -> CoreResult<usize> {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| {
            PipelineError::Data(format!(
                "CSV {} needs columns id,grade; found: {}",
                path.display(),
                headers.iter().collect::<Vec<_>>().join(",")
            ))
        })
    };
    let (ci, cg) = (col("id")?, col("grade")?);
    let mut map = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| PipelineError::Data(format!("row {}: {e}", i + 2)))?;
        let id = record[ci].trim().to_string();
        let grade: u8 = record[cg].trim().parse().map_err(|_| {
            PipelineError::Data(format!("row {}: grade '{}' is not a number", i + 2, &record[cg]))
        })?;
        if grade > 4 {
            return Err(PipelineError::Data(format!(
                "row {}: grade {grade} is outside 0..=4",
                i + 2
            )));
        }
        if map.insert(id.clone(), grade).is_some() {
            return Err(PipelineError::Data(format!("duplicate id '{id}'")));
        }
    }
    if map.is_empty() {
        return Err(PipelineError::Data(format!(
            "{} contains no rows",
            path.display()
        )));
    }
    Ok(map)
}

fn cmd_evaluate(pred_csv: &Path, truth_csv: &Path) -> CoreResult<()> {
    let pred = read_grade_csv(pred_csv)?;
    let truth = read_grade_csv(truth_csv)?;
    let mut t = Vec::with_capacity(pred.len());
    let mut p = Vec::with_capacity(pred.len());
    for (id, &grade) in &pred {
        let truth_grade = truth.get(id).ok_or_else(|| {
            PipelineError::Data(format!("prediction id '{id}' has no truth row"))
        })?;
        p.push(grade);
        t.push(*truth_grade);
    }
    let report = full_report(&t, &p, None)?;
    print_json(&report)
}

fn cmd_predict(image: &Path, manifest: &Path, out: Option<PathBuf>) -> CoreResult<()> {
    let out = out.unwrap_or_else(|| PathBuf::from("."));
    let prediction = predict_one(image, manifest, &out)?;
    print_json(&prediction)
}

fn cmd_run(cfg: &PipelineConfig) -> CoreResult<()> {
    let manifest = run_pipeline(cfg)?;
    let manifest_path = cfg
        .output_root()
        .join(&manifest.run_id)
        .join("manifest.json");
    print_json(&serde_json::json!({
        "run_id": manifest.run_id,
        "manifest": manifest_path.display().to_string(),
        "checkpoints": manifest.checkpoint_path,
        "metrics": manifest.metrics,
        "decision_table": manifest.decision_table,
        "warnings": manifest.warnings,
    }))
}
