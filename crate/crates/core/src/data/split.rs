//! Labeled/unlabeled/test splitting with a controlled mismatch ratio.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::substream;

use super::dataset::{Dataset, OpenSetSplit};

/// Split parameters. `mismatch_ratio` is the fraction of the unlabeled pool
/// that is OOD; the OOD sample count is `round(unlabeled_size * ratio)` with
/// ties rounded half away from zero.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SplitConfig {
    pub num_id_classes: usize,
    pub labels_per_class: usize,
    pub unlabeled_size: usize,
    pub mismatch_ratio: f64,
    pub seed: u64,
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_id_classes < 2 {
            return Err(Error::Config("num_id_classes must be >= 2".into()));
        }
        if self.labels_per_class == 0 {
            return Err(Error::Config("labels_per_class must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.mismatch_ratio) {
            return Err(Error::Config("mismatch_ratio must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Exact OOD count for the unlabeled pool (half away from zero).
pub fn ood_count(unlabeled_size: usize, mismatch_ratio: f64) -> usize {
    (unlabeled_size as f64 * mismatch_ratio).round() as usize
}

/// Partitions `dataset` into disjoint labeled / unlabeled / test pools.
///
/// Any label `>= num_id_classes` is treated as OOD and relabeled to the
/// sentinel `num_id_classes` (MNIST digits 6-9 with six ID classes, or the
/// generator's sentinel, which is already in that form). The labeled pool
/// draws `labels_per_class` samples per ID class; the unlabeled pool mixes
/// ID and OOD at the requested ratio; everything left over becomes the test
/// pool. Deterministic per `cfg.seed`.
pub fn split_open_set(dataset: &Dataset, cfg: &SplitConfig) -> Result<OpenSetSplit> {
    cfg.validate()?;
    let k = cfg.num_id_classes;
    let mut rng = substream(cfg.seed, "data.split");

    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut ood_pool: Vec<usize> = Vec::new();
    for (i, &label) in dataset.labels.iter().enumerate() {
        if label < k {
            per_class[label].push(i);
        } else {
            ood_pool.push(i);
        }
    }
    for class_pool in per_class.iter_mut() {
        class_pool.shuffle(&mut rng);
    }
    ood_pool.shuffle(&mut rng);

    // Labeled quota.
    let mut labeled_idx = Vec::with_capacity(k * cfg.labels_per_class);
    let mut id_remainder: Vec<usize> = Vec::new();
    for (c, class_pool) in per_class.iter().enumerate() {
        if class_pool.len() < cfg.labels_per_class {
            return Err(Error::Config(format!(
                "class {c} has {} samples, need labels_per_class = {}",
                class_pool.len(),
                cfg.labels_per_class
            )));
        }
        labeled_idx.extend(&class_pool[..cfg.labels_per_class]);
        id_remainder.extend(&class_pool[cfg.labels_per_class..]);
    }
    id_remainder.shuffle(&mut rng);

    // Unlabeled pool with the exact OOD count.
    let n_ood = ood_count(cfg.unlabeled_size, cfg.mismatch_ratio);
    let n_id = cfg.unlabeled_size - n_ood.min(cfg.unlabeled_size);
    if n_ood > ood_pool.len() {
        return Err(Error::Config(format!(
            "unlabeled pool needs {n_ood} OOD samples, only {} available",
            ood_pool.len()
        )));
    }
    if n_id > id_remainder.len() {
        return Err(Error::Config(format!(
            "unlabeled pool needs {n_id} ID samples, only {} available after the labeled quota",
            id_remainder.len()
        )));
    }
    let mut unlabeled_idx: Vec<usize> = id_remainder[..n_id]
        .iter()
        .chain(&ood_pool[..n_ood])
        .copied()
        .collect();
    unlabeled_idx.shuffle(&mut rng);

    // Everything else is test.
    let test_idx: Vec<usize> = id_remainder[n_id..]
        .iter()
        .chain(&ood_pool[n_ood..])
        .copied()
        .collect();

    let relabel = |ds: Dataset| -> Dataset {
        let labels = ds.labels.iter().map(|&l| l.min(k)).collect();
        Dataset {
            features: ds.features,
            labels,
        }
    };

    Ok(OpenSetSplit {
        labeled: relabel(dataset.subset(&labeled_idx)),
        unlabeled: relabel(dataset.subset(&unlabeled_idx)),
        test: relabel(dataset.subset(&test_idx)),
    })
}
