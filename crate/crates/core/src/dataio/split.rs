//! Deterministic dataset splitting: random fractions, grade-balanced
//! holdouts, and K-fold partitions. A split is a pure function of the id
//! set, the strategy, and the seed — input ordering never matters.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreResult, PipelineError};
use crate::types::FundusImage;

/// Number of DR grades.
pub const NUM_GRADES: usize = 5;

/// Derive a stream-specific seed from the global seed and a purpose tag,
/// so independent consumers (split, augmentation, init, ...) never share
/// an RNG stream.
pub fn derive_seed(global_seed: u64, tag: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(global_seed.to_le_bytes());
    hasher.update(tag.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 yields 32 bytes"))
}

/// How to carve train/val/test out of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SplitStrategy {
    /// Shuffle, then cut off `test_fraction` and `val_fraction` of the ids.
    Random { test_fraction: f64, val_fraction: f64 },
    /// Test set holds exactly `test_size / 5` images of every grade;
    /// `val_fraction` of the remainder becomes validation.
    StratifiedBalanced { test_size: usize, val_fraction: f64 },
    /// Partition into `k` near-equal folds; fold `fold_index` is the test
    /// set and the rest train. Validation is carved later, inside the fold.
    Kfold { fold_index: usize, k: usize },
}

/// Id-level train/val/test assignment plus the recipe that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub seed: u64,
    pub strategy: SplitStrategy,
}

impl DatasetSplit {
    pub fn total(&self) -> usize {
        self.train_ids.len() + self.val_ids.len() + self.test_ids.len()
    }
}

fn check_fraction(name: &str, f: f64) -> CoreResult<()> {
    if !(0.0..1.0).contains(&f) {
        return Err(PipelineError::Config(format!(
            "{name} must lie in [0, 1), got {f}"
        )));
    }
    Ok(())
}

/// Split a list of (id, grade) pairs. Ids are sorted before the seeded
/// shuffle, so the result depends only on the id set, not its order.
pub fn make_split_ids(
    items: &[(String, Option<u8>)],
    strategy: &SplitStrategy,
    seed: u64,
) -> CoreResult<DatasetSplit> {
    if items.is_empty() {
        return Err(PipelineError::Data("cannot split an empty dataset".into()));
    }
    {
        let mut sorted: Vec<&String> = items.iter().map(|(id, _)| id).collect();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            let dup = sorted
                .windows(2)
                .find(|w| w[0] == w[1])
                .map(|w| w[0].clone())
                .unwrap_or_default();
            return Err(PipelineError::Data(format!(
                "duplicate image id in split input: '{dup}'"
            )));
        }
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| items[a].0.cmp(&items[b].0));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "split"));
    order.shuffle(&mut rng);

    let id_at = |i: usize| items[i].0.clone();
    let (train_ids, val_ids, test_ids) = match strategy {
        SplitStrategy::Random {
            test_fraction,
            val_fraction,
        } => {
            check_fraction("test_fraction", *test_fraction)?;
            check_fraction("val_fraction", *val_fraction)?;
            if test_fraction + val_fraction >= 1.0 {
                return Err(PipelineError::Config(format!(
                    "test_fraction + val_fraction must stay below 1, got {}",
                    test_fraction + val_fraction
                )));
            }
            let n = order.len();
            let n_test = (n as f64 * test_fraction).round() as usize;
            let n_val = (n as f64 * val_fraction).round() as usize;
            let test: Vec<String> = order[..n_test].iter().map(|&i| id_at(i)).collect();
            let val: Vec<String> = order[n_test..n_test + n_val]
                .iter()
                .map(|&i| id_at(i))
                .collect();
            let train: Vec<String> = order[n_test + n_val..].iter().map(|&i| id_at(i)).collect();
            (train, val, test)
        }
        SplitStrategy::StratifiedBalanced {
            test_size,
            val_fraction,
        } => {
            check_fraction("val_fraction", *val_fraction)?;
            if *test_size == 0 || test_size % NUM_GRADES != 0 {
                return Err(PipelineError::Config(format!(
                    "test_size must be a positive multiple of {NUM_GRADES}, got {test_size}"
                )));
            }
            let per_grade = test_size / NUM_GRADES;
            let mut counts = [0usize; NUM_GRADES];
            for &i in &order {
                match items[i].1 {
                    Some(g) if (g as usize) < NUM_GRADES => counts[g as usize] += 1,
                    Some(g) => {
                        return Err(PipelineError::Data(format!(
                            "grade {g} out of range for id '{}'",
                            items[i].0
                        )))
                    }
                    None => {
                        return Err(PipelineError::Data(format!(
                            "balanced split needs graded images, but '{}' has no grade",
                            items[i].0
                        )))
                    }
                }
            }
            for (g, &c) in counts.iter().enumerate() {
                if c < per_grade {
                    return Err(PipelineError::Data(format!(
                        "grade {g} has only {c} images, need {per_grade} for a balanced test set"
                    )));
                }
            }
            let mut taken = [0usize; NUM_GRADES];
            let mut test = Vec::with_capacity(*test_size);
            let mut rest = Vec::new();
            for &i in &order {
                let g = items[i].1.unwrap() as usize;
                if taken[g] < per_grade {
                    taken[g] += 1;
                    test.push(id_at(i));
                } else {
                    rest.push(id_at(i));
                }
            }
            let n_val = (rest.len() as f64 * val_fraction).round() as usize;
            let val: Vec<String> = rest[..n_val].to_vec();
            let train: Vec<String> = rest[n_val..].to_vec();
            (train, val, test)
        }
        SplitStrategy::Kfold { fold_index, k } => {
            if *k < 2 {
                return Err(PipelineError::Config(format!(
                    "k-fold needs k >= 2, got {k}"
                )));
            }
            if fold_index >= k {
                return Err(PipelineError::Config(format!(
                    "fold_index {fold_index} out of range for k={k}"
                )));
            }
            if order.len() < *k {
                return Err(PipelineError::Data(format!(
                    "cannot make {k} folds out of {} items",
                    order.len()
                )));
            }
            let n = order.len();
            let base = n / k;
            let extra = n % k;
            let mut start = 0usize;
            let mut test = Vec::new();
            let mut train = Vec::new();
            for fold in 0..*k {
                let len = base + usize::from(fold < extra);
                let chunk = &order[start..start + len];
                if fold == *fold_index {
                    test.extend(chunk.iter().map(|&i| id_at(i)));
                } else {
                    train.extend(chunk.iter().map(|&i| id_at(i)));
                }
                start += len;
            }
            (train, Vec::new(), test)
        }
    };
    Ok(DatasetSplit {
        train_ids,
        val_ids,
        test_ids,
        seed,
        strategy: strategy.clone(),
    })
}

/// Split loaded images by id (grades travel along for stratification).
pub fn make_split(
    images: &[FundusImage],
    strategy: &SplitStrategy,
    seed: u64,
) -> CoreResult<DatasetSplit> {
    let items: Vec<(String, Option<u8>)> = images
        .iter()
        .map(|im| (im.id.clone(), im.grade))
        .collect();
    make_split_ids(&items, strategy, seed)
}
