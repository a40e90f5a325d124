//! FixMatch and supervised-only reference trainers.
//!
//! Both share the training core, augmentation contracts and batch shapes
//! with SCOMatch, so metric differences between runs are attributable to the
//! algorithm alone. FixMatch uses a plain `K`-way head: its pseudo-labeling
//! has a single fixed threshold and its self-training trains strong views
//! only.

use crate::data::{augment_strong, augment_weak, AugmentConfig};
use crate::diffcore::{
    ema_update, softmax_cross_entropy_sum, softmax_rows, Network, SgdConfig, SgdOptimizer,
    Tensor2,
};
use crate::error::{Error, Result};
use crate::rng::{substream, Stream, StreamState};
use crate::scomatch::{
    supervised_id_loss, IterationReport, LabeledBatch, PseudoLabelBatch, UnlabeledBatch,
};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FixMatchConfig {
    pub num_id_classes: usize,
    pub batch_size: usize,
    pub mu: usize,
    pub tau: f64,
    pub lambda: f64,
    pub ema_alpha: f64,
}

impl FixMatchConfig {
    pub fn for_classes(k: usize) -> Self {
        FixMatchConfig {
            num_id_classes: k,
            batch_size: 64,
            mu: 7,
            tau: 0.95,
            lambda: 1.0,
            ema_alpha: 0.999,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_id_classes < 2 {
            return Err(Error::Config("num_id_classes must be >= 2".into()));
        }
        if self.batch_size == 0 || self.mu == 0 {
            return Err(Error::Config("batch_size and mu must be > 0".into()));
        }
        if !(0.0 < self.tau && self.tau < 1.0) {
            return Err(Error::Config("tau must be in (0, 1)".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.ema_alpha) {
            return Err(Error::Config("ema_alpha must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// FixMatch pseudo-labeling: `K`-way softmax of the weak view, hard argmax,
/// accepted when confidence strictly exceeds `tau`.
pub fn fixmatch_pseudo_label(probs: Tensor2, tau: f64) -> PseudoLabelBatch {
    let n = probs.rows();
    let mut hard = Vec::with_capacity(n);
    let mut accepted = Vec::with_capacity(n);
    for i in 0..n {
        let row = probs.row(i);
        let mut arg = 0;
        for (c, &p) in row.iter().enumerate() {
            if p > row[arg] {
                arg = c;
            }
        }
        hard.push(arg);
        accepted.push(row[arg] > tau);
    }
    PseudoLabelBatch {
        probs,
        hard,
        accepted,
        threshold_used: vec![tau; n],
    }
}

/// Consistency term: cross-entropy of accepted pseudo-labels on the strong
/// view, normalized by the unlabeled batch size. Returns the loss and the
/// number of accepted samples.
pub fn fixmatch_unsupervised_loss(
    net: &mut Network,
    pseudo: &PseudoLabelBatch,
    u_strong: &Tensor2,
    grad_coef: f64,
) -> Result<(f64, usize)> {
    let k = net.num_classes();
    let n = pseudo.len();
    if u_strong.rows() != n {
        return Err(Error::Shape(format!(
            "fixmatch unsupervised loss: {} pseudo-labels for {} rows",
            n,
            u_strong.rows()
        )));
    }
    let mask = pseudo.accept_mask();
    let denom = n as f64;
    let logits = net.forward_main(u_strong)?;
    let ce = softmax_cross_entropy_sum(&logits, &pseudo.hard, &mask, k)?;
    let mut grad = ce.grad;
    let scale = grad_coef / denom;
    for g in grad.data_mut() {
        *g *= scale;
    }
    net.backward_main(&grad)?;
    Ok((ce.loss / denom, pseudo.accepted_count()))
}

#[derive(Debug, Clone)]
pub struct FixMatchTrainer {
    cfg: FixMatchConfig,
    augment: AugmentConfig,
    student: Network,
    teacher: Network,
    optimizer: SgdOptimizer,
    iteration: u64,
    rng_aug_labeled: Stream,
    rng_aug_unlabeled: Stream,
}

impl FixMatchTrainer {
    pub fn new(
        cfg: FixMatchConfig,
        sgd: SgdConfig,
        augment: AugmentConfig,
        input_dim: usize,
        hidden: &[usize],
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        augment.validate()?;
        let mut init = substream(seed, "model.init");
        let student = Network::new(
            input_dim,
            hidden,
            cfg.num_id_classes,
            false,
            false,
            &mut init,
        )?;
        let teacher = student.clone();
        let optimizer = SgdOptimizer::new(sgd, &student)?;
        Ok(FixMatchTrainer {
            cfg,
            augment,
            student,
            teacher,
            optimizer,
            iteration: 0,
            rng_aug_labeled: substream(seed, "augment.labeled"),
            rng_aug_unlabeled: substream(seed, "augment.unlabeled"),
        })
    }

    pub fn config(&self) -> &FixMatchConfig {
        &self.cfg
    }

    pub fn student(&self) -> &Network {
        &self.student
    }

    pub fn teacher(&self) -> &Network {
        &self.teacher
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn train_iteration(
        &mut self,
        x: &LabeledBatch,
        u: &UnlabeledBatch,
    ) -> Result<IterationReport> {
        let cfg = &self.cfg;
        let k = cfg.num_id_classes;
        if x.features.rows() != cfg.batch_size || u.features.rows() != cfg.batch_size * cfg.mu {
            return Err(Error::Shape("batch sizes do not match the config".into()));
        }
        let x_w = augment_weak(&x.features, &self.augment, &mut self.rng_aug_labeled);
        let u_w = augment_weak(&u.features, &self.augment, &mut self.rng_aug_unlabeled);
        let u_s = augment_strong(&u.features, &self.augment, &mut self.rng_aug_unlabeled);

        let probs = softmax_rows(&self.student.infer_main(&u_w)?, k)?;
        let pseudo = fixmatch_pseudo_label(probs, cfg.tau);

        self.student.zero_grads();
        let loss_sup = supervised_id_loss(&mut self.student, &x_w, &x.labels, k, 1.0)?;
        let (loss_unsup, accepted) =
            fixmatch_unsupervised_loss(&mut self.student, &pseudo, &u_s, cfg.lambda)?;

        let loss_total = loss_sup + cfg.lambda * loss_unsup;
        if !loss_total.is_finite() {
            return Err(Error::NonFinite(format!(
                "total loss at iteration {}",
                self.iteration
            )));
        }
        self.optimizer.step(&mut self.student);
        ema_update(&mut self.teacher, &self.student, cfg.ema_alpha)?;
        self.iteration += 1;

        let (pseudo_correct, pseudo_wrong) = match &u.truth {
            Some(truth) => {
                let (c, w) = pseudo.tally_against(truth, k);
                (Some(c), Some(w))
            }
            None => (None, None),
        };

        Ok(IterationReport {
            iteration: self.iteration,
            loss_sup_id: loss_sup,
            loss_sup_ood: None,
            loss_open: None,
            loss_close: Some(loss_unsup),
            loss_aux_sup: None,
            loss_total,
            tau_ood: None,
            accepted_id: accepted,
            accepted_ood: 0,
            queue_len: 0,
            queue_purity: None,
            pseudo_correct,
            pseudo_wrong,
        })
    }

    pub(crate) fn parts_mut(
        &mut self,
    ) -> (&mut Network, &mut Network, &mut SgdOptimizer, &mut u64, [&mut Stream; 2]) {
        (
            &mut self.student,
            &mut self.teacher,
            &mut self.optimizer,
            &mut self.iteration,
            [&mut self.rng_aug_labeled, &mut self.rng_aug_unlabeled],
        )
    }

    pub(crate) fn optimizer_ref(&self) -> &SgdOptimizer {
        &self.optimizer
    }

    pub(crate) fn rng_states(&self) -> [StreamState; 2] {
        [
            StreamState::capture(&self.rng_aug_labeled),
            StreamState::capture(&self.rng_aug_unlabeled),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SupervisedConfig {
    pub num_id_classes: usize,
    pub batch_size: usize,
    pub ema_alpha: f64,
}

impl SupervisedConfig {
    pub fn for_classes(k: usize) -> Self {
        SupervisedConfig {
            num_id_classes: k,
            batch_size: 64,
            ema_alpha: 0.999,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_id_classes < 2 || self.batch_size == 0 {
            return Err(Error::Config("bad supervised config".into()));
        }
        if !(0.0..1.0).contains(&self.ema_alpha) {
            return Err(Error::Config("ema_alpha must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Lower-bound reference: labeled cross-entropy only.
#[derive(Debug, Clone)]
pub struct SupervisedTrainer {
    cfg: SupervisedConfig,
    augment: AugmentConfig,
    student: Network,
    teacher: Network,
    optimizer: SgdOptimizer,
    iteration: u64,
    rng_aug_labeled: Stream,
}

impl SupervisedTrainer {
    pub fn new(
        cfg: SupervisedConfig,
        sgd: SgdConfig,
        augment: AugmentConfig,
        input_dim: usize,
        hidden: &[usize],
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        augment.validate()?;
        let mut init = substream(seed, "model.init");
        let student = Network::new(
            input_dim,
            hidden,
            cfg.num_id_classes,
            false,
            false,
            &mut init,
        )?;
        let teacher = student.clone();
        let optimizer = SgdOptimizer::new(sgd, &student)?;
        Ok(SupervisedTrainer {
            cfg,
            augment,
            student,
            teacher,
            optimizer,
            iteration: 0,
            rng_aug_labeled: substream(seed, "augment.labeled"),
        })
    }

    pub fn config(&self) -> &SupervisedConfig {
        &self.cfg
    }

    pub fn student(&self) -> &Network {
        &self.student
    }

    pub fn teacher(&self) -> &Network {
        &self.teacher
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn train_iteration(&mut self, x: &LabeledBatch) -> Result<IterationReport> {
        let k = self.cfg.num_id_classes;
        if x.features.rows() != self.cfg.batch_size {
            return Err(Error::Shape("batch size does not match the config".into()));
        }
        let x_w = augment_weak(&x.features, &self.augment, &mut self.rng_aug_labeled);
        self.student.zero_grads();
        let loss_sup = supervised_id_loss(&mut self.student, &x_w, &x.labels, k, 1.0)?;
        if !loss_sup.is_finite() {
            return Err(Error::NonFinite(format!(
                "supervised loss at iteration {}",
                self.iteration
            )));
        }
        self.optimizer.step(&mut self.student);
        ema_update(&mut self.teacher, &self.student, self.cfg.ema_alpha)?;
        self.iteration += 1;
        Ok(IterationReport {
            iteration: self.iteration,
            loss_sup_id: loss_sup,
            loss_sup_ood: None,
            loss_open: None,
            loss_close: None,
            loss_aux_sup: None,
            loss_total: loss_sup,
            tau_ood: None,
            accepted_id: 0,
            accepted_ood: 0,
            queue_len: 0,
            queue_purity: None,
            pseudo_correct: None,
            pseudo_wrong: None,
        })
    }

    pub(crate) fn parts_mut(
        &mut self,
    ) -> (&mut Network, &mut Network, &mut SgdOptimizer, &mut u64, [&mut Stream; 1]) {
        (
            &mut self.student,
            &mut self.teacher,
            &mut self.optimizer,
            &mut self.iteration,
            [&mut self.rng_aug_labeled],
        )
    }

    pub(crate) fn optimizer_ref(&self) -> &SgdOptimizer {
        &self.optimizer
    }

    pub(crate) fn rng_states(&self) -> [StreamState; 1] {
        [StreamState::capture(&self.rng_aug_labeled)]
    }
}
