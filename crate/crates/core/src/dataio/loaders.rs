//! Dataset loaders. Vessel datasets (DRIVE, STARE, CHASE_DB1, or any
//! external collection) share one on-disk convention — `images/` plus
//! `masks/` under a root — and differ only in how a mask file is named
//! for an image and how many pairs the dataset must contain. Those
//! differences live behind the [`VesselLayout`] trait so new datasets
//! plug in without touching the loading loop.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use crate::error::{CoreResult, PipelineError};
use crate::imgio::{load_mask_binarized, load_rgb};
use crate::types::{FundusImage, SourceDataset, VesselMask};

/// File extensions accepted as raster images, tried in this order when
/// resolving an id to a file.
pub const RASTER_EXTS: &[&str] = &[
    "png", "jpg", "jpeg", "tif", "tiff", "gif", "ppm", "pgm", "bmp",
];

fn is_raster(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| {
            let lower = e.to_ascii_lowercase();
            RASTER_EXTS.contains(&lower.as_str())
        })
        .unwrap_or(false)
}

/// Naming and cardinality rules for one vessel dataset family.
pub trait VesselLayout: Send + Sync {
    /// Which dataset this layout describes.
    fn dataset(&self) -> SourceDataset;
    /// Exact number of image/mask pairs the dataset must contain, if fixed.
    fn expected_count(&self) -> Option<usize>;
    /// Stem (filename without the final extension) of the mask file that
    /// annotates the image with the given stem.
    fn mask_stem(&self, image_stem: &str) -> String;
}

struct DriveLayout;
impl VesselLayout for DriveLayout {
    fn dataset(&self) -> SourceDataset {
        SourceDataset::Drive
    }
    fn expected_count(&self) -> Option<usize> {
        Some(40)
    }
    fn mask_stem(&self, image_stem: &str) -> String {
        // 21_training.tif is annotated by 21_training_manual1.gif.
        format!("{image_stem}_manual1")
    }
}

struct StareLayout {
    annotator: String,
}
impl VesselLayout for StareLayout {
    fn dataset(&self) -> SourceDataset {
        SourceDataset::Stare
    }
    fn expected_count(&self) -> Option<usize> {
        Some(20)
    }
    fn mask_stem(&self, image_stem: &str) -> String {
        // im0001.ppm is annotated by im0001.ah.ppm (annotator infix).
        format!("{image_stem}.{}", self.annotator)
    }
}

struct ChaseLayout;
impl VesselLayout for ChaseLayout {
    fn dataset(&self) -> SourceDataset {
        SourceDataset::ChaseDb1
    }
    fn expected_count(&self) -> Option<usize> {
        Some(28)
    }
    fn mask_stem(&self, image_stem: &str) -> String {
        // Image_01L.jpg is annotated by Image_01L_1stHO.png.
        format!("{image_stem}_1stHO")
    }
}

struct ExternalLayout;
impl VesselLayout for ExternalLayout {
    fn dataset(&self) -> SourceDataset {
        SourceDataset::External
    }
    fn expected_count(&self) -> Option<usize> {
        None
    }
    fn mask_stem(&self, image_stem: &str) -> String {
        image_stem.to_string()
    }
}

/// Default STARE annotator infix (Hoover's "ah" labeling).
pub const DEFAULT_STARE_ANNOTATOR: &str = "ah";

/// Look up the layout for a vessel dataset. `stare_annotator` picks the
/// STARE ground-truth labeling ("ah" or "vk"); other datasets ignore it.
pub fn vessel_layout(
    dataset: SourceDataset,
    stare_annotator: Option<&str>,
) -> CoreResult<Box<dyn VesselLayout>> {
    match dataset {
        SourceDataset::Drive => Ok(Box::new(DriveLayout)),
        SourceDataset::Stare => Ok(Box::new(StareLayout {
            annotator: stare_annotator.unwrap_or(DEFAULT_STARE_ANNOTATOR).to_string(),
        })),
        SourceDataset::ChaseDb1 => Ok(Box::new(ChaseLayout)),
        SourceDataset::External => Ok(Box::new(ExternalLayout)),
        SourceDataset::Aptos => Err(PipelineError::Config(
            "APTOS is a grading dataset, not a vessel dataset; use load_aptos".into(),
        )),
    }
}

/// All raster files directly inside `dir`, sorted by path.
pub fn list_rasters(dir: &Path) -> CoreResult<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| PipelineError::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| PipelineError::io(dir, e))?;
        let path = entry.path();
        if path.is_file() && is_raster(&path) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string()
}

/// Load every image/mask pair of a vessel dataset rooted at `root`
/// (layout: `root/images/*`, `root/masks/*`). Masks are binarized
/// (any nonzero annotator pixel becomes 1) and checked against the image
/// dimensions; for DRIVE/STARE/CHASE_DB1 the pair count must match the
/// published dataset size.
pub fn load_vessel_dataset(
    root: &Path,
    dataset: SourceDataset,
) -> CoreResult<Vec<(FundusImage, VesselMask)>> {
    load_vessel_dataset_with(root, vessel_layout(dataset, None)?.as_ref())
}

/// As [`load_vessel_dataset`], with an explicit layout (e.g. a STARE
/// layout bound to the "vk" annotator).
pub fn load_vessel_dataset_with(
    root: &Path,
    layout: &dyn VesselLayout,
) -> CoreResult<Vec<(FundusImage, VesselMask)>> {
    let images_dir = root.join("images");
    let masks_dir = root.join("masks");
    let image_files = list_rasters(&images_dir)?;
    if image_files.is_empty() {
        return Err(PipelineError::Data(format!(
            "no images found in {}",
            images_dir.display()
        )));
    }
    let mask_index: BTreeMap<String, PathBuf> = list_rasters(&masks_dir)?
        .into_iter()
        .map(|p| (stem_of(&p), p))
        .collect();

    let mut pairs = Vec::with_capacity(image_files.len());
    for path in &image_files {
        let id = stem_of(path);
        let pixels = load_rgb(path)?;
        let want_stem = layout.mask_stem(&id);
        let mask_path = mask_index.get(&want_stem).ok_or_else(|| {
            PipelineError::Data(format!(
                "missing mask for image '{id}': expected a file with stem '{want_stem}' in {}",
                masks_dir.display()
            ))
        })?;
        let mask_pixels = load_mask_binarized(mask_path)?;
        let (ih, iw) = (pixels.shape()[0], pixels.shape()[1]);
        let (mh, mw) = (mask_pixels.shape()[0], mask_pixels.shape()[1]);
        if (ih, iw) != (mh, mw) {
            return Err(PipelineError::Data(format!(
                "mask for image '{id}' is {mh}x{mw} but the image is {ih}x{iw}"
            )));
        }
        let image = FundusImage::new(id.clone(), pixels, layout.dataset(), None)?;
        let mask = VesselMask::new(id, mask_pixels)?;
        pairs.push((image, mask));
    }

    if let Some(expected) = layout.expected_count() {
        if pairs.len() != expected {
            return Err(PipelineError::Data(format!(
                "{} must contain exactly {expected} image/mask pairs, found {} under {}",
                layout.dataset().as_str(),
                pairs.len(),
                root.display()
            )));
        }
    }
    Ok(pairs)
}

/// Find the image file for an id under `root`, trying the accepted raster
/// extensions in order.
pub fn find_image_file(root: &Path, id: &str) -> Option<PathBuf> {
    RASTER_EXTS
        .iter()
        .map(|ext| root.join(format!("{id}.{ext}")))
        .find(|p| p.is_file())
}

/// Load the APTOS-style grading dataset: a directory of images plus a
/// labels CSV with header `id_code,diagnosis`. Every CSV row must have an
/// image file and a diagnosis in 0..=4.
pub fn load_aptos(root: &Path, labels_csv: &Path) -> CoreResult<Vec<FundusImage>> {
    let file = File::open(labels_csv).map_err(|e| PipelineError::io(labels_csv, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| PipelineError::Data(format!("cannot read CSV header: {e}")))?
        .clone();
    let col = |name: &str| -> CoreResult<usize> {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| {
            PipelineError::Data(format!(
                "labels CSV must have columns id_code,diagnosis; found: {}",
                headers.iter().collect::<Vec<_>>().join(",")
            ))
        })
    };
    let id_col = col("id_code")?;
    let diag_col = col("diagnosis")?;

    let mut images = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            PipelineError::Data(format!("labels CSV row {}: {e}", row_idx + 2))
        })?;
        let id = record
            .get(id_col)
            .unwrap_or_default()
            .trim()
            .to_string();
        if id.is_empty() {
            return Err(PipelineError::Data(format!(
                "labels CSV row {}: empty id_code",
                row_idx + 2
            )));
        }
        let raw = record.get(diag_col).unwrap_or_default().trim();
        let grade: u8 = raw.parse().map_err(|_| {
            PipelineError::Data(format!(
                "diagnosis '{raw}' for id '{id}' is not a DR grade in 0..=4"
            ))
        })?;
        if grade > 4 {
            return Err(PipelineError::Data(format!(
                "diagnosis '{raw}' for id '{id}' is not a DR grade in 0..=4"
            )));
        }
        let path = find_image_file(root, &id).ok_or_else(|| {
            PipelineError::Data(format!(
                "no image file for id '{id}' under {}",
                root.display()
            ))
        })?;
        let pixels = load_rgb(&path)?;
        images.push(FundusImage::new(id, pixels, SourceDataset::Aptos, Some(grade))?);
    }
    Ok(images)
}
