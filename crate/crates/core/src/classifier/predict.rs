//! Dual-pathway inference: one classifier reads the preprocessed original
//! (E1), the other reads the vessel-removed, re-preprocessed image (E2).

use serde::{Deserialize, Serialize};

use super::model::Classifier;
use super::ordinal::prediction_from_scores;
use crate::cleaner::{clean_image, CleanConfig};
use crate::error::CoreResult;
use crate::preprocess::{
    auto_crop, graham_enhance_with, resize_image, GrahamOptions, DEFAULT_CROP_THRESHOLD,
};
use crate::segnet::{predict_mask, SegNet};
use crate::types::{FundusImage, OrdinalPrediction};

/// Shared preprocessing applied before either classifier sees an image:
/// optional auto-crop, optional channel enhancement, then a resize to the
/// classifier's input resolution.
pub fn preprocess_for_classifier(
    image: &FundusImage,
    crop_threshold: Option<u8>,
    graham: &Option<GrahamOptions>,
    size: (usize, usize),
) -> CoreResult<FundusImage> {
    let cropped = match crop_threshold {
        Some(t) => auto_crop(image, t)?,
        None => image.clone(),
    };
    let enhanced = match graham {
        Some(opts) => graham_enhance_with(&cropped, opts)?,
        None => cropped,
    };
    resize_image(&enhanced, size)
}

/// Options for the paired E1/E2 prediction path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairPredictOptions {
    /// Vessel-probability threshold for the segmentation mask.
    pub seg_threshold: f64,
    /// Vessel-removal settings applied between segmentation and E2.
    pub clean: CleanConfig,
    /// Auto-crop intensity threshold; `None` skips cropping.
    pub crop_threshold: Option<u8>,
    /// Channel enhancement settings; `None` skips enhancement.
    pub graham: Option<GrahamOptions>,
}

impl Default for PairPredictOptions {
    fn default() -> Self {
        PairPredictOptions {
            seg_threshold: 0.5,
            clean: CleanConfig::default(),
            crop_threshold: Some(DEFAULT_CROP_THRESHOLD),
            graham: Some(GrahamOptions::default()),
        }
    }
}

/// Run the full dual-pathway inference for one image:
/// segment -> clean -> preprocess both variants -> score with each
/// classifier. Returns `(E1, E2)` predictions. Errors carry the failing
/// stage name as a prefix.
pub fn predict_pair(
    clf_original: &mut Classifier,
    clf_cleaned: &mut Classifier,
    seg: &mut SegNet,
    image: &FundusImage,
    opts: &PairPredictOptions,
) -> CoreResult<(OrdinalPrediction, OrdinalPrediction)> {
    let mask = predict_mask(seg, image, opts.seg_threshold)
        .map_err(|e| e.with_stage("segment"))?;
    let cleaned =
        clean_image(image, &mask, &opts.clean).map_err(|e| e.with_stage("clean"))?;

    let size_e1 = clf_original.spec().input_size;
    let size_e2 = clf_cleaned.spec().input_size;
    let input_e1 = preprocess_for_classifier(image, opts.crop_threshold, &opts.graham, size_e1)
        .map_err(|e| e.with_stage("preprocess-original"))?;
    let input_e2 = preprocess_for_classifier(&cleaned, opts.crop_threshold, &opts.graham, size_e2)
        .map_err(|e| e.with_stage("preprocess-cleaned"))?;

    let scores_e1 = clf_original
        .score_image(&input_e1)
        .map_err(|e| e.with_stage("classify-original"))?;
    let scores_e2 = clf_cleaned
        .score_image(&input_e2)
        .map_err(|e| e.with_stage("classify-cleaned"))?;
    Ok((
        prediction_from_scores(scores_e1),
        prediction_from_scores(scores_e2),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::model::{build_classifier, ClassifierSpec};
    use crate::classifier::ordinal::{decode_ordinal, DECODE_THRESHOLD};
    use crate::segnet::{SegNet, SegNetworkSpec};
    use crate::synth::synth_graded_image;

    fn tiny_seg() -> SegNet {
        SegNet::new(&SegNetworkSpec::tiny(1, 4), 11).unwrap()
    }

    fn tiny_opts() -> PairPredictOptions {
        PairPredictOptions {
            // Keep the smoke path fast: no crop, no enhancement.
            crop_threshold: None,
            graham: None,
            ..PairPredictOptions::default()
        }
    }

    #[test]
    fn all_zero_mask_makes_both_pathways_agree_for_identical_classifiers() {
        let spec = ClassifierSpec::tiny(32);
        // Same seed => bit-identical weights.
        let mut c1 = build_classifier(&spec, 77).unwrap();
        let mut c2 = build_classifier(&spec, 77).unwrap();
        let mut seg = tiny_seg();
        let image = synth_graded_image("agree", 64, 64, 2, 5).unwrap();
        // A threshold this close to 1 cannot be met by any sigmoid output
        // that fits in f64 rounding, so the mask is all zero and cleaning
        // is the identity.
        let opts = PairPredictOptions {
            seg_threshold: 1.0 - 1e-9,
            ..tiny_opts()
        };
        let (e1, e2) = predict_pair(&mut c1, &mut c2, &mut seg, &image, &opts).unwrap();
        assert_eq!(e1.grade, e2.grade);
        for k in 0..5 {
            assert!(
                (e1.scores[k] - e2.scores[k]).abs() <= 1e-6,
                "score {k} diverged: {} vs {}",
                e1.scores[k],
                e2.scores[k]
            );
        }
    }

    #[test]
    fn predictions_are_total_and_consistent_over_synthetic_images() {
        let spec = ClassifierSpec::tiny(32);
        let mut c1 = build_classifier(&spec, 1).unwrap();
        let mut c2 = build_classifier(&spec, 2).unwrap();
        let mut seg = tiny_seg();
        let opts = tiny_opts();
        for g in 0..5u8 {
            let image = synth_graded_image(&format!("tot{g}"), 48, 48, g, 60 + u64::from(g))
                .unwrap();
            let (e1, e2) = predict_pair(&mut c1, &mut c2, &mut seg, &image, &opts).unwrap();
            for p in [&e1, &e2] {
                assert!(p.grade <= 4);
                assert_eq!(p.grade, decode_ordinal(&p.scores, DECODE_THRESHOLD));
                for &s in &p.scores {
                    assert!((0.0..=1.0).contains(&s));
                }
            }
        }
    }

    #[test]
    fn stage_name_prefixes_propagated_errors() {
        let spec = ClassifierSpec::tiny(32);
        let mut c1 = build_classifier(&spec, 1).unwrap();
        let mut c2 = build_classifier(&spec, 2).unwrap();
        let mut seg = tiny_seg();
        let image = synth_graded_image("stagederr", 48, 48, 1, 9).unwrap();
        let opts = PairPredictOptions {
            clean: CleanConfig {
                filter_sizes: vec![],
                ..CleanConfig::default()
            },
            ..tiny_opts()
        };
        let err = predict_pair(&mut c1, &mut c2, &mut seg, &image, &opts)
            .err()
            .unwrap();
        assert!(err.to_string().contains("clean:"), "{err}");

        let opts = PairPredictOptions {
            seg_threshold: 1.5,
            ..tiny_opts()
        };
        let err = predict_pair(&mut c1, &mut c2, &mut seg, &image, &opts)
            .err()
            .unwrap();
        assert!(err.to_string().contains("segment:"), "{err}");
    }
}
