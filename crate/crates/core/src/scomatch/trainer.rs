//! The SCOMatch training iteration.
//!
//! Per iteration, in order: augment the batches, score the weak unlabeled
//! view with the current student, push the lowest-MSP candidates into the
//! OOD memory queue, compute the `(K+1)`-class supervision losses (labeled
//! ID data plus a queue sample), the open-set and close-set self-training
//! losses, take one SGD step on the combined objective, recompute the
//! curriculum OOD threshold and advance the EMA teacher.

use crate::data::{augment_strong, augment_weak, AugmentConfig};
use crate::diffcore::{ema_update, softmax_rows, Network, SgdConfig, SgdOptimizer, Tensor2};
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

use super::losses::{
    aux_supervised_loss, close_set_loss, open_set_loss, supervised_id_loss, supervised_ood_loss,
};
use super::pseudo::{pseudo_label, select_enqueue};
use super::queue::OodMemoryQueue;
use super::threshold::ThresholdController;

/// A labeled batch: features plus trusted ID labels in `0..K`.
#[derive(Debug, Clone)]
pub struct LabeledBatch {
    pub features: Tensor2,
    pub labels: Vec<usize>,
}

/// An unlabeled batch: features plus optional hidden ground truth
/// (sentinel-coded), used only for diagnostics.
#[derive(Debug, Clone)]
pub struct UnlabeledBatch {
    pub features: Tensor2,
    pub truth: Option<Vec<usize>>,
}

/// Everything one training iteration reports. Loss terms are the values of
/// their definitions (before the self-training weight); `None` marks a term
/// that was skipped or disabled this iteration.
#[derive(Debug, Clone)]
pub struct IterationReport {
    pub iteration: u64,
    pub loss_sup_id: f64,
    pub loss_sup_ood: Option<f64>,
    pub loss_open: Option<f64>,
    pub loss_close: Option<f64>,
    pub loss_aux_sup: Option<f64>,
    pub loss_total: f64,
    pub tau_ood: Option<f64>,
    pub accepted_id: usize,
    pub accepted_ood: usize,
    pub queue_len: usize,
    pub queue_purity: Option<f64>,
    pub pseudo_correct: Option<usize>,
    pub pseudo_wrong: Option<usize>,
}

/// SCOMatch hyperparameters and structure toggles.
///
/// The toggles exist for the ablation grid: `dual_head` moves the close-set
/// task onto a separate `K`-way head; `use_open_loss` / `use_close_loss`
/// drop one self-training term; `open_weak_term` drops the weak view inside
/// the open-set term. `ood_class_enabled = false` disables the OOD class
/// outright — no queue, no OOD supervision, `K`-way softmaxes everywhere —
/// which together with `use_open_loss = false` reproduces FixMatch exactly.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScoMatchConfig {
    pub num_id_classes: usize,
    pub batch_size: usize,
    pub mu: usize,
    pub tau: f64,
    pub tau_min: f64,
    pub lambda: f64,
    pub ema_alpha: f64,
    pub queue_capacity: usize,
    pub enqueue_per_iter: usize,
    pub queue_warmup_min: usize,
    pub cpl_decay: f64,
    pub ood_class_enabled: bool,
    pub use_open_loss: bool,
    pub use_close_loss: bool,
    pub open_weak_term: bool,
    pub dual_head: bool,
}

impl ScoMatchConfig {
    /// Defaults for `k` ID classes: queue capacity `8k`, one enqueue per
    /// iteration, warm-up at one queue-capacity-or-batch worth of entries.
    pub fn for_classes(k: usize) -> Self {
        let batch_size = 64;
        let queue_capacity = 8 * k;
        ScoMatchConfig {
            num_id_classes: k,
            batch_size,
            mu: 7,
            tau: 0.95,
            tau_min: 0.5,
            lambda: 1.0,
            ema_alpha: 0.999,
            queue_capacity,
            enqueue_per_iter: 1,
            queue_warmup_min: batch_size.min(queue_capacity),
            cpl_decay: 0.999,
            ood_class_enabled: true,
            use_open_loss: true,
            use_close_loss: true,
            open_weak_term: true,
            dual_head: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_id_classes < 2 {
            return Err(Error::Config("num_id_classes must be >= 2".into()));
        }
        if self.batch_size == 0 || self.mu == 0 {
            return Err(Error::Config("batch_size and mu must be > 0".into()));
        }
        if !(0.0 < self.tau_min && self.tau_min < self.tau && self.tau < 1.0) {
            return Err(Error::Config("need 0 < tau_min < tau < 1".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.ema_alpha) {
            return Err(Error::Config("ema_alpha must be in [0, 1)".into()));
        }
        if self.queue_capacity == 0 {
            return Err(Error::Config("queue_capacity must be > 0".into()));
        }
        if self.enqueue_per_iter == 0 || self.enqueue_per_iter > self.batch_size * self.mu {
            return Err(Error::Config(
                "enqueue_per_iter must be in 1..=mu*batch_size".into(),
            ));
        }
        if self.queue_warmup_min == 0 || self.queue_warmup_min > self.queue_capacity {
            return Err(Error::Config(
                "queue_warmup_min must be in 1..=queue_capacity".into(),
            ));
        }
        if !(0.0 < self.cpl_decay && self.cpl_decay <= 1.0) {
            return Err(Error::Config("cpl_decay must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Owned training state: student, EMA teacher, optimizer, queue, threshold
/// controller and the named RNG streams. Exclusively owned by one driver; the
/// teacher is a parameter snapshot safe to evaluate at any iteration
/// boundary.
#[derive(Debug, Clone)]
pub struct ScoMatchTrainer {
    cfg: ScoMatchConfig,
    augment: AugmentConfig,
    student: Network,
    teacher: Network,
    optimizer: SgdOptimizer,
    queue: OodMemoryQueue,
    ctrl: ThresholdController,
    iteration: u64,
    rng_aug_labeled: Stream,
    rng_aug_unlabeled: Stream,
    rng_queue: Stream,
}

impl ScoMatchTrainer {
    pub fn new(
        cfg: ScoMatchConfig,
        sgd: SgdConfig,
        augment: AugmentConfig,
        input_dim: usize,
        hidden: &[usize],
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        augment.validate()?;
        let mut init = substream(seed, "model.init");
        // The head always carries the OOD slot; when the OOD class is
        // disabled the extra row simply never receives gradient.
        let student = Network::new(
            input_dim,
            hidden,
            cfg.num_id_classes,
            true,
            cfg.dual_head,
            &mut init,
        )?;
        let teacher = student.clone();
        let optimizer = SgdOptimizer::new(sgd, &student)?;
        let queue = OodMemoryQueue::new(cfg.queue_capacity)?;
        let ctrl = ThresholdController::new(cfg.tau, cfg.tau_min, cfg.cpl_decay)?;
        Ok(ScoMatchTrainer {
            cfg,
            augment,
            student,
            teacher,
            optimizer,
            queue,
            ctrl,
            iteration: 0,
            rng_aug_labeled: substream(seed, "augment.labeled"),
            rng_aug_unlabeled: substream(seed, "augment.unlabeled"),
            rng_queue: substream(seed, "queue"),
        })
    }

    pub fn config(&self) -> &ScoMatchConfig {
        &self.cfg
    }

    pub fn student(&self) -> &Network {
        &self.student
    }

    pub fn teacher(&self) -> &Network {
        &self.teacher
    }

    pub fn queue(&self) -> &OodMemoryQueue {
        &self.queue
    }

    pub fn controller(&self) -> &ThresholdController {
        &self.ctrl
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Number of classes the softmaxes run over this configuration.
    fn active_cols(&self) -> usize {
        if self.cfg.ood_class_enabled {
            self.cfg.num_id_classes + 1
        } else {
            self.cfg.num_id_classes
        }
    }

    pub fn train_iteration(
        &mut self,
        x: &LabeledBatch,
        u: &UnlabeledBatch,
    ) -> Result<IterationReport> {
        let cfg = &self.cfg;
        let k = cfg.num_id_classes;
        if x.features.rows() != cfg.batch_size {
            return Err(Error::Shape(format!(
                "labeled batch of {} rows, expected {}",
                x.features.rows(),
                cfg.batch_size
            )));
        }
        if u.features.rows() != cfg.batch_size * cfg.mu {
            return Err(Error::Shape(format!(
                "unlabeled batch of {} rows, expected {}",
                u.features.rows(),
                cfg.batch_size * cfg.mu
            )));
        }
        if let Some(bad) = x.labels.iter().find(|&&l| l >= k) {
            return Err(Error::Shape(format!(
                "labeled batch contains non-ID label {bad}"
            )));
        }
        let active = self.active_cols();

        // Augmented views, in a fixed stream order shared by all trainers.
        let x_w = augment_weak(&x.features, &self.augment, &mut self.rng_aug_labeled);
        let u_w = augment_weak(&u.features, &self.augment, &mut self.rng_aug_unlabeled);
        let u_s = augment_strong(&u.features, &self.augment, &mut self.rng_aug_unlabeled);

        // Weak-view probabilities from the current student drive both the
        // queue update and pseudo-labeling.
        let probs = softmax_rows(&self.student.infer_main(&u_w)?, active)?;

        if cfg.ood_class_enabled {
            for i in select_enqueue(&probs, k, cfg.enqueue_per_iter) {
                let truth = u.truth.as_ref().map(|t| t[i] >= k);
                // Raw (un-augmented) features are what the queue stores.
                self.queue.push(u.features.row(i).to_vec(), truth);
            }
        }

        let pseudo = pseudo_label(probs, k, &mut self.ctrl);

        self.student.zero_grads();
        let loss_sup_id = supervised_id_loss(&mut self.student, &x_w, &x.labels, active, 1.0)?;

        let loss_sup_ood = if cfg.ood_class_enabled && self.queue.len() >= cfg.queue_warmup_min {
            let ood_batch = self.queue.sample(cfg.batch_size, &mut self.rng_queue)?;
            Some(supervised_ood_loss(&mut self.student, &ood_batch, k, 1.0)?)
        } else {
            None
        };

        let loss_open = if cfg.use_open_loss {
            Some(open_set_loss(
                &mut self.student,
                &pseudo,
                &u_w,
                &u_s,
                active,
                cfg.open_weak_term,
                cfg.lambda,
            )?)
        } else {
            None
        };

        let loss_close = if cfg.use_close_loss {
            Some(close_set_loss(
                &mut self.student,
                &pseudo,
                &u_s,
                k,
                cfg.dual_head,
                cfg.lambda,
            )?)
        } else {
            None
        };

        let loss_aux_sup = if cfg.dual_head {
            Some(aux_supervised_loss(
                &mut self.student,
                &x_w,
                &x.labels,
                1.0,
            )?)
        } else {
            None
        };

        let loss_total = loss_sup_id
            + loss_sup_ood.unwrap_or(0.0)
            + cfg.lambda * (loss_open.unwrap_or(0.0) + loss_close.unwrap_or(0.0))
            + loss_aux_sup.unwrap_or(0.0);
        if !loss_total.is_finite() {
            return Err(Error::NonFinite(format!(
                "total loss at iteration {}",
                self.iteration
            )));
        }

        self.optimizer.step(&mut self.student);

        let tau_ood = if cfg.ood_class_enabled {
            Some(self.ctrl.cpl_update())
        } else {
            None
        };

        ema_update(&mut self.teacher, &self.student, cfg.ema_alpha)?;
        self.iteration += 1;

        let (accepted_id, accepted_ood) = pseudo
            .accepted
            .iter()
            .zip(&pseudo.hard)
            .filter(|(&a, _)| a)
            .fold((0, 0), |(id, ood), (_, &h)| {
                if h == k {
                    (id, ood + 1)
                } else {
                    (id + 1, ood)
                }
            });
        let (pseudo_correct, pseudo_wrong) = match &u.truth {
            Some(truth) => {
                let (c, w) = pseudo.tally_against(truth, k);
                (Some(c), Some(w))
            }
            None => (None, None),
        };

        Ok(IterationReport {
            iteration: self.iteration,
            loss_sup_id,
            loss_sup_ood,
            loss_open,
            loss_close,
            loss_aux_sup,
            loss_total,
            tau_ood,
            accepted_id,
            accepted_ood,
            queue_len: self.queue.len(),
            queue_purity: self.queue.purity(),
            pseudo_correct,
            pseudo_wrong,
        })
    }

    pub(crate) fn parts_mut(
        &mut self,
    ) -> (
        &mut Network,
        &mut Network,
        &mut SgdOptimizer,
        &mut OodMemoryQueue,
        &mut ThresholdController,
        &mut u64,
        [&mut Stream; 3],
    ) {
        (
            &mut self.student,
            &mut self.teacher,
            &mut self.optimizer,
            &mut self.queue,
            &mut self.ctrl,
            &mut self.iteration,
            [
                &mut self.rng_aug_labeled,
                &mut self.rng_aug_unlabeled,
                &mut self.rng_queue,
            ],
        )
    }

    pub(crate) fn optimizer_ref(&self) -> &SgdOptimizer {
        &self.optimizer
    }

    pub(crate) fn rng_states(&self) -> [crate::rng::StreamState; 3] {
        [
            crate::rng::StreamState::capture(&self.rng_aug_labeled),
            crate::rng::StreamState::capture(&self.rng_aug_unlabeled),
            crate::rng::StreamState::capture(&self.rng_queue),
        ]
    }
}
