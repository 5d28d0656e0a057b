//! Classifier training: BCE on cumulative ordinal targets, on-the-fly
//! augmentation, plateau learning-rate reduction, and early stopping.

use fundus_nn::loss::bce_with_logits;
use fundus_nn::{Adam, Checkpoint, Model};
use ndarray::{Array2, ArrayD, Axis, IxDyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::Classifier;
use super::ordinal::{decode_ordinal, encode_ordinal, DECODE_THRESHOLD, NUM_GRADES};
use crate::dataio::derive_seed;
use crate::error::{CoreResult, PipelineError};
use crate::metrics::quadratic_weighted_kappa;
use crate::preprocess::{apply_augment, resize_rgb, AugmentationPolicy, Augmenter};
use crate::types::FundusImage;

/// Hyper-parameters for classifier training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClfTrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Consecutive non-improving validation epochs tolerated before stopping.
    pub early_stopping_patience: usize,
    /// Consecutive non-improving validation epochs before the learning rate
    /// is multiplied by `lr_reduce_factor`.
    pub lr_reduce_patience: usize,
    pub lr_reduce_factor: f64,
    /// Fraction of the images held out for validation.
    pub val_fraction: f64,
    /// Apply seeded on-the-fly augmentation to training images.
    pub augment: bool,
    /// L2 weight decay.
    pub weight_decay: f64,
    /// Optional hard cap on optimizer steps (smoke runs).
    pub max_steps: Option<usize>,
    /// Optional target: stop once training-set accuracy reaches it.
    pub target_train_accuracy: Option<f64>,
    pub seed: u64,
}

impl Default for ClfTrainConfig {
    fn default() -> Self {
        ClfTrainConfig {
            learning_rate: 5e-5,
            epochs: 100,
            batch_size: 4,
            early_stopping_patience: 12,
            lr_reduce_patience: 4,
            lr_reduce_factor: 0.5,
            val_fraction: 0.15,
            augment: true,
            weight_decay: 1e-5,
            max_steps: None,
            target_train_accuracy: None,
            seed: 42,
        }
    }
}

impl ClfTrainConfig {
    pub fn validate(&self) -> CoreResult<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(PipelineError::Config(format!(
                "learning_rate must be a positive finite number, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(PipelineError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(PipelineError::Config("batch_size must be >= 1".into()));
        }
        if self.lr_reduce_patience == 0 {
            return Err(PipelineError::Config(
                "lr_reduce_patience must be >= 1".into(),
            ));
        }
        if !(self.lr_reduce_factor > 0.0 && self.lr_reduce_factor <= 1.0) {
            return Err(PipelineError::Config(format!(
                "lr_reduce_factor must be in (0,1], got {}",
                self.lr_reduce_factor
            )));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(PipelineError::Config(format!(
                "val_fraction must be in [0,1), got {}",
                self.val_fraction
            )));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(PipelineError::Config(format!(
                "weight_decay must be a finite non-negative number, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// One epoch of the classifier training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClfEpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Quadratic weighted kappa on the validation split; `None` without one.
    pub val_qwk: Option<f64>,
    /// Learning rate in effect during this epoch.
    pub learning_rate: f64,
    /// Training-set accuracy, evaluated only when a target is configured.
    pub train_accuracy: Option<f64>,
}

/// Classifier training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClfTrainingLog {
    pub epochs: Vec<ClfEpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub total_steps: usize,
    pub stopped_early: bool,
    pub target_reached: bool,
    /// Learning-rate reduction events as (epoch, new_lr).
    pub lr_reductions: Vec<(usize, f64)>,
}

/// Tensorize one image at the classifier's input resolution.
fn to_input(image_px: &ndarray::Array3<u8>, size: (usize, usize)) -> CoreResult<ArrayD<f32>> {
    let (th, tw) = size;
    let (h, w, _) = image_px.dim();
    let resized;
    let px = if (h, w) == (th, tw) {
        image_px
    } else {
        resized = resize_rgb(image_px, th, tw)?;
        &resized
    };
    Ok(ArrayD::from_shape_fn(IxDyn(&[3, th, tw]), |ix| {
        f32::from(px[[ix[1], ix[2], ix[0]]]) / 255.0
    }))
}

fn stack(tensors: &[ArrayD<f32>]) -> ArrayD<f32> {
    let views: Vec<_> = tensors.iter().map(|t| t.view().insert_axis(Axis(0))).collect();
    ndarray::concatenate(Axis(0), &views).expect("homogeneous shapes")
}

/// Mean BCE loss and decoded predictions over `indices`, evaluation mode.
fn evaluate(
    model: &mut Classifier,
    inputs: &[ArrayD<f32>],
    targets: &Array2<f32>,
    grades: &[u8],
    indices: &[usize],
    batch_size: usize,
) -> CoreResult<(f64, Vec<u8>, Vec<u8>)> {
    let mut total = 0.0;
    let mut batches = 0usize;
    let mut pred = Vec::with_capacity(indices.len());
    let mut truth = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(batch_size) {
        let xs: Vec<ArrayD<f32>> = chunk.iter().map(|&i| inputs[i].clone()).collect();
        let logits = model.forward_logits(stack(&xs), false)?;
        let tgt: Vec<ArrayD<f32>> = chunk
            .iter()
            .map(|&i| targets.row(i).to_owned().into_dyn())
            .collect();
        let (loss, _) = bce_with_logits(&logits, &stack(&tgt));
        total += loss;
        batches += 1;
        let scores = fundus_nn::sigmoid(&logits);
        for (b, &i) in chunk.iter().enumerate() {
            let mut s = [0.0f32; NUM_GRADES];
            for (k, slot) in s.iter_mut().enumerate() {
                *slot = scores[[b, k]];
            }
            pred.push(decode_ordinal(&s, DECODE_THRESHOLD));
            truth.push(grades[i]);
        }
    }
    Ok((total / batches.max(1) as f64, truth, pred))
}

/// Train a classifier on graded images. Targets are the cumulative ordinal
/// encodings; training images are augmented on the fly when enabled;
/// validation images never are. Returns the best-validation checkpoint and
/// the log.
pub fn train_classifier(
    model: &mut Classifier,
    images: &[FundusImage],
    cfg: &ClfTrainConfig,
) -> CoreResult<(Checkpoint, ClfTrainingLog)> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(PipelineError::Data(
            "classifier training requires at least one graded image".into(),
        ));
    }
    let mut grades = Vec::with_capacity(images.len());
    for img in images {
        match img.grade {
            Some(g) => grades.push(g),
            None => {
                return Err(PipelineError::Data(format!(
                    "image '{}' has no grade; classifier training needs labeled data",
                    img.id
                )))
            }
        }
    }
    let size = model.spec().input_size;

    // Deterministic validation split.
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "clf-val-split"));
    order.shuffle(&mut rng);
    let n_val = if cfg.val_fraction > 0.0 && order.len() >= 2 {
        (((order.len() as f64) * cfg.val_fraction).round() as usize).clamp(1, order.len() - 1)
    } else {
        0
    };
    let (val_idx, train_idx) = order.split_at(n_val);
    let val_idx = val_idx.to_vec();
    let mut train_idx = train_idx.to_vec();

    // Targets and un-augmented inputs (validation always uses these; the
    // training loop uses them too when augmentation is off).
    let mut targets = Array2::<f32>::zeros((images.len(), NUM_GRADES));
    for (i, &g) in grades.iter().enumerate() {
        let enc = encode_ordinal(g)?;
        for k in 0..NUM_GRADES {
            targets[[i, k]] = enc[k];
        }
    }
    let base_inputs: Vec<ArrayD<f32>> = images
        .iter()
        .map(|img| to_input(&img.pixels, size))
        .collect::<CoreResult<_>>()?;

    let mut augmenter = if cfg.augment {
        Some(Augmenter::new(AugmentationPolicy::standard(derive_seed(
            cfg.seed,
            "clf-augment",
        )))?)
    } else {
        None
    };

    let mut adam = Adam::new(cfg.learning_rate, cfg.weight_decay);
    let mut lr = cfg.learning_rate;
    let meta = serde_json::json!({ "kind": "classifier", "spec": model.spec() });

    let mut log = ClfTrainingLog {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        total_steps: 0,
        stopped_early: false,
        target_reached: false,
        lr_reductions: Vec::new(),
    };
    let mut best: Option<Checkpoint> = None;
    let mut es_bad = 0usize;
    let mut plateau_bad = 0usize;

    'epochs: for epoch in 1..=cfg.epochs {
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("clf-epoch:{epoch}")));
        train_idx.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut epoch_batches = 0usize;
        for chunk in train_idx.chunks(cfg.batch_size) {
            if let Some(cap) = cfg.max_steps {
                if log.total_steps >= cap {
                    break;
                }
            }
            let mut xs: Vec<ArrayD<f32>> = Vec::with_capacity(chunk.len());
            for &i in chunk {
                if let Some(aug) = augmenter.as_mut() {
                    let params = aug.sample();
                    let px = apply_augment(&images[i].pixels, &params);
                    xs.push(to_input(&px, size)?);
                } else {
                    xs.push(base_inputs[i].clone());
                }
            }
            let tgt: Vec<ArrayD<f32>> = chunk
                .iter()
                .map(|&i| targets.row(i).to_owned().into_dyn())
                .collect();
            let logits = model.forward_logits(stack(&xs), true)?;
            let (loss, dlogits) = bce_with_logits(&logits, &stack(&tgt));
            if !loss.is_finite() {
                return Err(PipelineError::Train(format!(
                    "training diverged: non-finite loss at epoch {epoch}, step {}",
                    log.total_steps + 1
                )));
            }
            model.zero_grads();
            model.backward(dlogits);
            adam.step(&mut model.params_mut());
            log.total_steps += 1;
            epoch_loss += loss;
            epoch_batches += 1;
        }
        if epoch_batches == 0 {
            break 'epochs;
        }
        let train_loss = epoch_loss / epoch_batches as f64;

        let (val_loss, val_qwk) = if val_idx.is_empty() {
            (train_loss, None)
        } else {
            let (loss, truth, pred) =
                evaluate(model, &base_inputs, &targets, &grades, &val_idx, cfg.batch_size)?;
            let qwk = quadratic_weighted_kappa(&truth, &pred)?;
            (loss, Some(qwk))
        };
        if !val_loss.is_finite() {
            return Err(PipelineError::Train(format!(
                "training diverged: non-finite validation loss at epoch {epoch}"
            )));
        }

        let train_accuracy = if cfg.target_train_accuracy.is_some() {
            let (_, truth, pred) = evaluate(
                model,
                &base_inputs,
                &targets,
                &grades,
                &train_idx,
                cfg.batch_size,
            )?;
            let correct = truth.iter().zip(&pred).filter(|(t, p)| t == p).count();
            Some(correct as f64 / truth.len().max(1) as f64)
        } else {
            None
        };

        log.epochs.push(ClfEpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_qwk,
            learning_rate: lr,
            train_accuracy,
        });

        if val_loss < log.best_val_loss {
            log.best_val_loss = val_loss;
            log.best_epoch = epoch;
            best = Some(Checkpoint::from_model(meta.clone(), model));
            es_bad = 0;
            plateau_bad = 0;
        } else {
            es_bad += 1;
            plateau_bad += 1;
            if es_bad > cfg.early_stopping_patience {
                log.stopped_early = true;
                break 'epochs;
            }
            if plateau_bad >= cfg.lr_reduce_patience {
                lr *= cfg.lr_reduce_factor;
                adam.set_lr(lr);
                log.lr_reductions.push((epoch, lr));
                plateau_bad = 0;
            }
        }

        if let (Some(target), Some(acc)) = (cfg.target_train_accuracy, train_accuracy) {
            if acc >= target {
                log.target_reached = true;
                break 'epochs;
            }
        }
        if let Some(cap) = cfg.max_steps {
            if log.total_steps >= cap {
                break 'epochs;
            }
        }
    }

    let best = best.unwrap_or_else(|| Checkpoint::from_model(meta, model));
    Ok((best, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::model::{build_classifier, ClassifierSpec};
    use crate::synth::synth_graded_image;

    /// Balanced graded fixture: `per_grade` images per grade, 64x64.
    fn graded_images(per_grade: usize) -> Vec<FundusImage> {
        let mut out = Vec::new();
        for g in 0..NUM_GRADES as u8 {
            for k in 0..per_grade {
                out.push(
                    synth_graded_image(&format!("g{g}_{k}"), 64, 64, g, 900 + k as u64).unwrap(),
                );
            }
        }
        out
    }

    fn smoke_cfg() -> ClfTrainConfig {
        ClfTrainConfig {
            learning_rate: 2e-3,
            epochs: 60,
            batch_size: 4,
            val_fraction: 0.0,
            augment: false,
            weight_decay: 0.0,
            seed: 7,
            ..ClfTrainConfig::default()
        }
    }

    #[test]
    fn overfits_eight_images_to_full_accuracy_within_300_steps() {
        let spec = ClassifierSpec::tiny(32);
        let mut model = build_classifier(&spec, 1).unwrap();
        let mut images = graded_images(2);
        images.truncate(8);
        let cfg = ClfTrainConfig {
            max_steps: Some(300),
            target_train_accuracy: Some(1.0),
            ..smoke_cfg()
        };
        let (_, log) = train_classifier(&mut model, &images, &cfg).unwrap();
        assert!(
            log.target_reached,
            "expected 100% training accuracy within 300 steps; last epochs: {:?}",
            log.epochs.iter().rev().take(3).collect::<Vec<_>>()
        );
        assert!(log.total_steps <= 300);
    }

    #[test]
    fn early_stopping_respects_patience() {
        let spec = ClassifierSpec::tiny(32);
        let mut model = build_classifier(&spec, 2).unwrap();
        let images = graded_images(2);
        // Learning rate too small to change f32 weights: every epoch after
        // the first is non-improving.
        let cfg = ClfTrainConfig {
            learning_rate: 1e-30,
            epochs: 50,
            early_stopping_patience: 2,
            lr_reduce_patience: 10,
            val_fraction: 0.2,
            augment: false,
            weight_decay: 0.0,
            seed: 3,
            ..ClfTrainConfig::default()
        };
        let (_, log) = train_classifier(&mut model, &images, &cfg).unwrap();
        assert!(log.stopped_early);
        // Epoch 1 improves; epochs 2-4 do not; stop after patience+1 = 3 bad.
        assert_eq!(log.epochs.len(), 4);
        assert_eq!(log.best_epoch, 1);
    }

    #[test]
    fn plateau_reduces_the_learning_rate_by_the_factor() {
        let spec = ClassifierSpec::tiny(32);
        let mut model = build_classifier(&spec, 2).unwrap();
        let images = graded_images(2);
        let cfg = ClfTrainConfig {
            learning_rate: 1e-30,
            epochs: 6,
            early_stopping_patience: 10,
            lr_reduce_patience: 2,
            lr_reduce_factor: 0.5,
            val_fraction: 0.2,
            augment: false,
            weight_decay: 0.0,
            seed: 3,
            ..ClfTrainConfig::default()
        };
        let (_, log) = train_classifier(&mut model, &images, &cfg).unwrap();
        // Epoch 1 improves (vs infinity); epochs 2,3 plateau -> reduction
        // after epoch 3; epoch 4 runs at half the rate.
        assert_eq!(log.lr_reductions.first(), Some(&(3, 0.5e-30)));
        assert!((log.epochs[0].learning_rate - 1e-30).abs() < 1e-42);
        assert!((log.epochs[3].learning_rate - 0.5e-30).abs() < 1e-42);
    }

    #[test]
    fn ungraded_image_is_a_data_error_naming_it() {
        let spec = ClassifierSpec::tiny(32);
        let mut model = build_classifier(&spec, 2).unwrap();
        let mut images = graded_images(1);
        images[2].grade = None;
        let err = train_classifier(&mut model, &images, &smoke_cfg())
            .err()
            .unwrap();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("g2_0"), "{err}");
    }

    #[test]
    fn empty_training_set_is_a_data_error() {
        let spec = ClassifierSpec::tiny(32);
        let mut model = build_classifier(&spec, 2).unwrap();
        let err = train_classifier(&mut model, &[], &smoke_cfg()).err().unwrap();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn same_seed_training_is_bit_deterministic_with_augmentation() {
        let images = graded_images(1);
        let cfg = ClfTrainConfig {
            epochs: 2,
            augment: true,
            val_fraction: 0.2,
            learning_rate: 1e-3,
            seed: 9,
            ..ClfTrainConfig::default()
        };
        let spec = ClassifierSpec::tiny(32);
        let mut m1 = build_classifier(&spec, 5).unwrap();
        let (_, log1) = train_classifier(&mut m1, &images, &cfg).unwrap();
        let mut m2 = build_classifier(&spec, 5).unwrap();
        let (_, log2) = train_classifier(&mut m2, &images, &cfg).unwrap();
        assert_eq!(log1, log2);
    }

    #[test]
    fn validation_log_records_loss_and_qwk() {
        let spec = ClassifierSpec::tiny(32);
        let mut model = build_classifier(&spec, 6).unwrap();
        let images = graded_images(2);
        let cfg = ClfTrainConfig {
            epochs: 2,
            val_fraction: 0.3,
            augment: false,
            learning_rate: 1e-3,
            seed: 1,
            ..ClfTrainConfig::default()
        };
        let (_, log) = train_classifier(&mut model, &images, &cfg).unwrap();
        for rec in &log.epochs {
            assert!(rec.val_loss.is_finite());
            let qwk = rec.val_qwk.expect("validation split present");
            assert!((-1.0..=1.0).contains(&qwk));
        }
    }
}
