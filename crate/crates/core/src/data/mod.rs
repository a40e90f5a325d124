//! Datasets: synthetic open-set benchmarks, IDX ingestion, open-set
//! splitting, vector augmentation and batch iteration.

mod augment;
mod batch;
mod dataset;
mod idx;
mod split;
mod synthetic;

pub use augment::{augment_strong, augment_weak, AugmentConfig};
pub use batch::{EpochSampler, PairedBatcher};
pub use dataset::{Dataset, OpenSetSplit, Role};
pub use idx::load_idx;
pub use split::{ood_count, split_open_set, SplitConfig};
pub use synthetic::{make_synthetic_openset, random_tensor};

pub(crate) use batch::SamplerState;
