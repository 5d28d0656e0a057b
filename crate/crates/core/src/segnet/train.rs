//! Training and cross-validated evaluation of the segmentation network.

use fundus_nn::loss::tversky_loss;
use fundus_nn::{Adam, Checkpoint, Model};
use ndarray::{Array2, ArrayD, Axis, IxDyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{SegNet, SegNetworkSpec};
use crate::dataio::derive_seed;
use crate::error::{CoreResult, PipelineError};
use crate::metrics::{average_reports, seg_report, MetricsReport};
use crate::preprocess::PatchSet;

/// Hyper-parameters for segmentation training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegTrainConfig {
    pub learning_rate: f64,
    /// False-positive weight of the Tversky loss.
    pub tversky_alpha: f64,
    /// False-negative weight of the Tversky loss.
    pub tversky_beta: f64,
    pub tversky_epsilon: f64,
    /// Maximum number of epochs.
    pub epochs: usize,
    /// Number of consecutive non-improving validation epochs tolerated
    /// before stopping; 0 stops after the first non-improving epoch.
    pub early_stopping_patience: usize,
    /// Number of cross-validation folds for `kfold_evaluate`.
    pub kfold_k: usize,
    pub batch_size: usize,
    /// Fraction of the training patches held out for validation.
    pub val_fraction: f64,
    /// Optional hard cap on optimizer steps (smoke runs); `None` = no cap.
    pub max_steps: Option<usize>,
    /// Optional target: stop once the epoch training loss drops below it.
    pub target_train_loss: Option<f64>,
    pub seed: u64,
}

impl Default for SegTrainConfig {
    fn default() -> Self {
        SegTrainConfig {
            learning_rate: 1e-4,
            tversky_alpha: 0.3,
            tversky_beta: 0.7,
            tversky_epsilon: 1e-6,
            epochs: 150,
            early_stopping_patience: 10,
            kfold_k: 6,
            batch_size: 8,
            val_fraction: 0.1,
            max_steps: None,
            target_train_loss: None,
            seed: 42,
        }
    }
}

impl SegTrainConfig {
    pub fn validate(&self) -> CoreResult<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(PipelineError::Config(format!(
                "learning_rate must be a positive finite number, got {}",
                self.learning_rate
            )));
        }
        if self.tversky_alpha < 0.0 || self.tversky_beta < 0.0 {
            return Err(PipelineError::Config(
                "tversky_alpha and tversky_beta must be >= 0".into(),
            ));
        }
        if self.tversky_alpha == 0.0 && self.tversky_beta == 0.0 {
            return Err(PipelineError::Config(
                "tversky_alpha and tversky_beta must not both be 0".into(),
            ));
        }
        if !(self.tversky_epsilon > 0.0) {
            return Err(PipelineError::Config(
                "tversky_epsilon must be > 0".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(PipelineError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(PipelineError::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(PipelineError::Config(format!(
                "val_fraction must be in [0,1), got {}",
                self.val_fraction
            )));
        }
        if self.kfold_k < 2 {
            return Err(PipelineError::Config(format!(
                "kfold_k must be >= 2, got {}",
                self.kfold_k
            )));
        }
        Ok(())
    }
}

/// One epoch of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Per-run training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch with the best validation loss.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub total_steps: usize,
    pub stopped_early: bool,
    /// Set when `target_train_loss` was reached.
    pub target_reached: bool,
}

/// Convert a `[h,w,3]` u8 patch to a `[3,h,w]` f32 tensor in `[0,1]`.
fn patch_to_tensor(patch: &ndarray::Array3<u8>) -> ArrayD<f32> {
    let (h, w, _) = patch.dim();
    ArrayD::from_shape_fn(IxDyn(&[3, h, w]), |ix| {
        f32::from(patch[[ix[1], ix[2], ix[0]]]) / 255.0
    })
}

/// Convert a `[h,w]` binary mask to a `[1,h,w]` f32 tensor.
fn mask_to_tensor(mask: &Array2<u8>) -> ArrayD<f32> {
    let (h, w) = mask.dim();
    ArrayD::from_shape_fn(IxDyn(&[1, h, w]), |ix| f32::from(mask[[ix[1], ix[2]]]))
}

fn stack_batch(tensors: &[ArrayD<f32>]) -> ArrayD<f32> {
    let views: Vec<_> = tensors.iter().map(|t| t.view().insert_axis(Axis(0))).collect();
    ndarray::concatenate(Axis(0), &views).expect("homogeneous batch shapes")
}

/// Mean Tversky loss of the model over `indices`, without training side
/// effects (dropout off, no gradients).
fn eval_loss(
    model: &mut SegNet,
    patches: &PatchSet,
    indices: &[usize],
    cfg: &SegTrainConfig,
) -> CoreResult<f64> {
    let mut total = 0.0;
    let mut batches = 0usize;
    for chunk in indices.chunks(cfg.batch_size) {
        let xs: Vec<ArrayD<f32>> = chunk
            .iter()
            .map(|&i| patch_to_tensor(&patches.patches[i]))
            .collect();
        let ys: Vec<ArrayD<f32>> = chunk
            .iter()
            .map(|&i| mask_to_tensor(&patches.mask_patches[i]))
            .collect();
        let pred = model.forward_batch(stack_batch(&xs), false)?;
        let (loss, _) = tversky_loss(
            &pred,
            &stack_batch(&ys),
            cfg.tversky_alpha,
            cfg.tversky_beta,
            cfg.tversky_epsilon,
        );
        total += loss;
        batches += 1;
    }
    Ok(total / batches.max(1) as f64)
}

/// Train on the given patch indices; used by both `train_segnet` (all
/// patches) and `kfold_evaluate` (per-fold subsets).
fn train_on_indices(
    model: &mut SegNet,
    patches: &PatchSet,
    indices: &[usize],
    cfg: &SegTrainConfig,
) -> CoreResult<(Checkpoint, TrainingLog)> {
    cfg.validate()?;
    if indices.is_empty() {
        return Err(PipelineError::Data(
            "segmentation training requires at least one patch".into(),
        ));
    }

    // Validation split: a deterministic shuffle of the provided indices.
    let mut order: Vec<usize> = indices.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "seg-val-split"));
    order.shuffle(&mut rng);
    let n_val = if cfg.val_fraction > 0.0 && order.len() >= 2 {
        (((order.len() as f64) * cfg.val_fraction).round() as usize).clamp(1, order.len() - 1)
    } else {
        0
    };
    let (val_idx, train_idx) = order.split_at(n_val);
    let val_idx = val_idx.to_vec();
    let mut train_idx = train_idx.to_vec();

    let mut adam = Adam::new(cfg.learning_rate, model.spec().l2_coefficient);
    let meta = serde_json::json!({ "kind": "segnet", "spec": model.spec() });

    let mut log = TrainingLog {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        total_steps: 0,
        stopped_early: false,
        target_reached: false,
    };
    let mut best: Option<Checkpoint> = None;
    let mut bad_epochs = 0usize;

    'epochs: for epoch in 1..=cfg.epochs {
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("seg-epoch:{epoch}")));
        train_idx.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut epoch_batches = 0usize;
        for chunk in train_idx.chunks(cfg.batch_size) {
            if let Some(cap) = cfg.max_steps {
                if log.total_steps >= cap {
                    break;
                }
            }
            let xs: Vec<ArrayD<f32>> = chunk
                .iter()
                .map(|&i| patch_to_tensor(&patches.patches[i]))
                .collect();
            let ys: Vec<ArrayD<f32>> = chunk
                .iter()
                .map(|&i| mask_to_tensor(&patches.mask_patches[i]))
                .collect();
            let pred = model.forward_batch(stack_batch(&xs), true)?;
            let (loss, grad) = tversky_loss(
                &pred,
                &stack_batch(&ys),
                cfg.tversky_alpha,
                cfg.tversky_beta,
                cfg.tversky_epsilon,
            );
            if !loss.is_finite() {
                return Err(PipelineError::Train(format!(
                    "training diverged: non-finite loss at epoch {epoch}, step {}",
                    log.total_steps + 1
                )));
            }
            model.zero_grads();
            model.backward_batch(grad);
            adam.step(&mut model.params_mut());
            log.total_steps += 1;
            epoch_loss += loss;
            epoch_batches += 1;
        }
        if epoch_batches == 0 {
            // Step cap exhausted before this epoch ran any batch.
            break 'epochs;
        }
        let train_loss = epoch_loss / epoch_batches as f64;

        let val_loss = if val_idx.is_empty() {
            train_loss
        } else {
            eval_loss(model, patches, &val_idx, cfg)?
        };
        if !val_loss.is_finite() {
            return Err(PipelineError::Train(format!(
                "training diverged: non-finite validation loss at epoch {epoch}"
            )));
        }
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });

        if val_loss < log.best_val_loss {
            log.best_val_loss = val_loss;
            log.best_epoch = epoch;
            best = Some(Checkpoint::from_model(meta.clone(), model));
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs > cfg.early_stopping_patience {
                log.stopped_early = true;
                break 'epochs;
            }
        }

        if let Some(target) = cfg.target_train_loss {
            if train_loss < target {
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

/// Train the model on all patches of `patches`, holding out
/// `cfg.val_fraction` of them for early stopping. Returns the checkpoint of
/// the best validation epoch together with the training log.
pub fn train_segnet(
    model: &mut SegNet,
    patches: &PatchSet,
    cfg: &SegTrainConfig,
) -> CoreResult<(Checkpoint, TrainingLog)> {
    let indices: Vec<usize> = (0..patches.len()).collect();
    train_on_indices(model, patches, &indices, cfg)
}

/// K-fold cross-validated evaluation: the patches are partitioned into
/// `cfg.kfold_k` folds; each fold trains a fresh model on the other K-1 and
/// is scored on the held-out fold at threshold 0.5. Returns the per-fold
/// reports and their average.
pub fn kfold_evaluate(
    patches: &PatchSet,
    spec: &SegNetworkSpec,
    cfg: &SegTrainConfig,
) -> CoreResult<(Vec<MetricsReport>, MetricsReport)> {
    cfg.validate()?;
    spec.validate()?;
    let n = patches.len();
    let k = cfg.kfold_k;
    if k > n {
        return Err(PipelineError::Data(format!(
            "kfold_k = {k} exceeds the number of patches ({n})"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "seg-kfold"));
    order.shuffle(&mut rng);

    // First n % k folds take one extra patch; folds partition the set.
    let base = n / k;
    let extra = n % k;
    let mut folds: Vec<Vec<usize>> = Vec::with_capacity(k);
    let mut cursor = 0usize;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(order[cursor..cursor + size].to_vec());
        cursor += size;
    }

    let mut reports = Vec::with_capacity(k);
    for (f, test_idx) in folds.iter().enumerate() {
        let train_idx: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, fold)| fold.iter().copied())
            .collect();

        let fold_seed = derive_seed(cfg.seed, &format!("seg-fold:{f}"));
        let mut model = SegNet::new(spec, fold_seed)?;
        let fold_cfg = SegTrainConfig {
            seed: fold_seed,
            ..cfg.clone()
        };
        let (best, _log) = train_on_indices(&mut model, patches, &train_idx, &fold_cfg)?;
        best.apply_to(&mut model)?;

        // Score the held-out fold.
        let mut truth: Vec<u8> = Vec::new();
        let mut pred: Vec<u8> = Vec::new();
        let mut scores: Vec<f64> = Vec::new();
        for chunk in test_idx.chunks(fold_cfg.batch_size) {
            let xs: Vec<ArrayD<f32>> = chunk
                .iter()
                .map(|&i| patch_to_tensor(&patches.patches[i]))
                .collect();
            let probs = model.forward_batch(stack_batch(&xs), false)?;
            for (b, &i) in chunk.iter().enumerate() {
                let mask = &patches.mask_patches[i];
                let plane = probs.index_axis(Axis(0), b);
                let plane = plane.index_axis(Axis(0), 0);
                for ((r, c), &t) in mask.indexed_iter() {
                    let p = plane[[r, c]];
                    truth.push(t);
                    pred.push(u8::from(p >= 0.5));
                    scores.push(f64::from(p));
                }
            }
        }
        reports.push(seg_report(&truth, &pred, Some(&scores))?);
    }

    let average = average_reports(&reports)?;
    Ok((reports, average))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    /// A tiny patch set of `n` 32x32 patches: a bright disk on a dark field,
    /// the mask marking the disk. Deterministic, trivially learnable.
    fn tiny_patches(n: usize) -> PatchSet {
        let mut patches = Vec::new();
        let mut masks = Vec::new();
        let mut origins = Vec::new();
        for t in 0..n {
            let cx = 8.0 + (t % 4) as f64 * 5.0;
            let cy = 8.0 + (t / 4) as f64 * 5.0;
            let mut img = Array3::<u8>::from_elem((32, 32, 3), 30);
            let mut mask = Array2::<u8>::zeros((32, 32));
            for r in 0..32 {
                for c in 0..32 {
                    let d = ((r as f64 - cy).powi(2) + (c as f64 - cx).powi(2)).sqrt();
                    if d <= 6.0 {
                        img[[r, c, 0]] = 220;
                        img[[r, c, 1]] = 200;
                        img[[r, c, 2]] = 190;
                        mask[[r, c]] = 1;
                    }
                }
            }
            patches.push(img);
            masks.push(mask);
            origins.push((format!("t{t}"), 0, 0));
        }
        PatchSet {
            patches,
            mask_patches: masks,
            origins,
            seed: 0,
        }
    }

    fn fast_cfg() -> SegTrainConfig {
        SegTrainConfig {
            learning_rate: 3e-3,
            epochs: 3,
            early_stopping_patience: 10,
            batch_size: 4,
            val_fraction: 0.25,
            seed: 11,
            ..SegTrainConfig::default()
        }
    }

    #[test]
    fn training_reduces_the_loss_and_logs_every_epoch() {
        let spec = SegNetworkSpec::tiny(1, 4);
        let mut model = SegNet::new(&spec, 1).unwrap();
        let patches = tiny_patches(8);
        let cfg = SegTrainConfig {
            epochs: 12,
            ..fast_cfg()
        };
        let (ckpt, log) = train_segnet(&mut model, &patches, &cfg).unwrap();
        assert_eq!(log.epochs.len(), log.epochs.last().unwrap().epoch);
        let first = log.epochs.first().unwrap().train_loss;
        let last = log.epochs.last().unwrap().train_loss;
        assert!(
            last < first,
            "loss should decrease on a learnable fixture: {first} -> {last}"
        );
        assert!(ckpt.param_count > 0);
        assert!(log.best_epoch > 0);
        assert!(log.best_val_loss.is_finite());
    }

    #[test]
    fn same_seed_runs_produce_identical_loss_curves() {
        let spec = SegNetworkSpec::tiny(1, 4);
        let patches = tiny_patches(6);
        let cfg = fast_cfg();

        let mut m1 = SegNet::new(&spec, 2).unwrap();
        let (_, log1) = train_segnet(&mut m1, &patches, &cfg).unwrap();
        let mut m2 = SegNet::new(&spec, 2).unwrap();
        let (_, log2) = train_segnet(&mut m2, &patches, &cfg).unwrap();
        assert_eq!(log1, log2, "bit-identical training given the same seed");
    }

    #[test]
    fn patience_zero_stops_after_the_first_non_improving_epoch() {
        let spec = SegNetworkSpec::tiny(1, 2);
        let mut model = SegNet::new(&spec, 3).unwrap();
        let patches = tiny_patches(4);
        // A learning rate this small leaves f32 weights bit-unchanged, so
        // epoch 2 cannot improve on epoch 1.
        let cfg = SegTrainConfig {
            learning_rate: 1e-30,
            epochs: 50,
            early_stopping_patience: 0,
            val_fraction: 0.25,
            batch_size: 4,
            seed: 5,
            ..SegTrainConfig::default()
        };
        let (_, log) = train_segnet(&mut model, &patches, &cfg).unwrap();
        assert!(log.stopped_early);
        assert_eq!(log.epochs.len(), 2, "best at epoch 1, stop after epoch 2");
        assert_eq!(log.best_epoch, 1);
    }

    #[test]
    fn empty_patchset_is_a_data_error() {
        let spec = SegNetworkSpec::tiny(1, 2);
        let mut model = SegNet::new(&spec, 3).unwrap();
        let patches = PatchSet {
            patches: vec![],
            mask_patches: vec![],
            origins: vec![],
            seed: 0,
        };
        let err = train_segnet(&mut model, &patches, &fast_cfg()).err().unwrap();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn invalid_tversky_weights_are_config_errors() {
        let cfg = SegTrainConfig {
            tversky_alpha: 0.0,
            tversky_beta: 0.0,
            ..SegTrainConfig::default()
        };
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
        let cfg = SegTrainConfig {
            tversky_alpha: -0.1,
            ..SegTrainConfig::default()
        };
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn max_steps_caps_the_optimizer_steps() {
        let spec = SegNetworkSpec::tiny(1, 2);
        let mut model = SegNet::new(&spec, 3).unwrap();
        let patches = tiny_patches(8);
        let cfg = SegTrainConfig {
            max_steps: Some(3),
            epochs: 50,
            ..fast_cfg()
        };
        let (_, log) = train_segnet(&mut model, &patches, &cfg).unwrap();
        assert_eq!(log.total_steps, 3);
    }

    #[test]
    fn kfold_partitions_and_averages() {
        let spec = SegNetworkSpec::tiny(1, 2);
        let patches = tiny_patches(7);
        let cfg = SegTrainConfig {
            kfold_k: 3,
            epochs: 1,
            max_steps: Some(1),
            val_fraction: 0.0,
            ..fast_cfg()
        };
        let (reports, avg) = kfold_evaluate(&patches, &spec, &cfg).unwrap();
        assert_eq!(reports.len(), 3);
        let total: u64 = reports.iter().map(|r| r.n).sum();
        assert_eq!(total, 7 * 32 * 32, "folds cover every patch exactly once");
        // Fold sizes 3,2,2 in patches.
        let sizes: Vec<u64> = reports.iter().map(|r| r.n / (32 * 32)).collect();
        let mut sorted = sizes.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![2, 2, 3]);
        // The averaged report is the arithmetic mean of fold scalars.
        let mean_f1: f64 = reports.iter().map(|r| r.f1).sum::<f64>() / 3.0;
        assert!((avg.f1 - mean_f1).abs() < 1e-9 + 1e-6);
        assert_eq!(avg.n, total);
    }

    #[test]
    fn kfold_with_more_folds_than_patches_is_a_data_error() {
        let spec = SegNetworkSpec::tiny(1, 2);
        let patches = tiny_patches(3);
        let cfg = SegTrainConfig {
            kfold_k: 5,
            ..fast_cfg()
        };
        let err = kfold_evaluate(&patches, &spec, &cfg).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
