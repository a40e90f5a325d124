//! SCOMatch: open-set SSL with an OOD memory queue, curriculum OOD
//! threshold and simultaneous close-set / open-set self-training on a single
//! `(K+1)`-way head.

mod losses;
mod pseudo;
mod queue;
mod threshold;
mod trainer;

pub use losses::{
    aux_supervised_loss, close_set_loss, open_set_loss, supervised_id_loss, supervised_ood_loss,
};
pub use pseudo::{msp_score, pseudo_label, select_enqueue, PseudoLabelBatch};
pub use queue::{OodMemoryQueue, QueueEntry};
pub use threshold::ThresholdController;
pub use trainer::{
    IterationReport, LabeledBatch, ScoMatchConfig, ScoMatchTrainer, UnlabeledBatch,
};
