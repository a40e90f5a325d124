//! MSP scoring, enqueue selection and dual-threshold pseudo-labeling.

use crate::diffcore::Tensor2;

use super::threshold::ThresholdController;

/// Maximum softmax probability over the first `k` (ID) entries of a
/// probability vector; the OOD entry, when present, is excluded. Low values
/// mark likely OOD samples.
pub fn msp_score(probs: &[f64], k: usize) -> f64 {
    probs[..k].iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// Indices of the `k_m` rows of `probs` with the smallest MSP, ties broken
/// toward the lower row index. The result is ordered by ascending
/// `(msp, index)`. Single pass over the batch keeping the current best set.
pub fn select_enqueue(probs: &Tensor2, k: usize, k_m: usize) -> Vec<usize> {
    let k_m = k_m.min(probs.rows());
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k_m + 1);
    for i in 0..probs.rows() {
        let s = msp_score(probs.row(i), k);
        if best.len() == k_m {
            let &(worst_s, worst_i) = best.last().unwrap();
            if (s, i) >= (worst_s, worst_i) {
                continue;
            }
        }
        let at = best.partition_point(|&(bs, bi)| (bs, bi) < (s, i));
        best.insert(at, (s, i));
        best.truncate(k_m);
    }
    best.into_iter().map(|(_, i)| i).collect()
}

/// Pseudo-labels for one weak-view batch.
#[derive(Debug, Clone)]
pub struct PseudoLabelBatch {
    /// Softmax over the active classes (K+1, or K when the OOD class is
    /// disabled) of the weak view.
    pub probs: Tensor2,
    /// Argmax class per sample, ties toward the lowest index.
    pub hard: Vec<usize>,
    /// Whether the sample cleared its class's threshold.
    pub accepted: Vec<bool>,
    /// The threshold each sample was compared against.
    pub threshold_used: Vec<f64>,
}

impl PseudoLabelBatch {
    pub fn len(&self) -> usize {
        self.hard.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hard.is_empty()
    }

    pub fn accepted_count(&self) -> usize {
        self.accepted.iter().filter(|&&a| a).count()
    }

    /// 0/1 acceptance mask as weights.
    pub fn accept_mask(&self) -> Vec<f64> {
        self.accepted.iter().map(|&a| f64::from(a)).collect()
    }

    /// Accepted pseudo-labels tallied against hidden truth: ID classes are
    /// compared by class, OOD against the sentinel `k`.
    pub fn tally_against(&self, truth: &[usize], k: usize) -> (usize, usize) {
        let mut correct = 0;
        let mut wrong = 0;
        for i in 0..self.len() {
            if !self.accepted[i] {
                continue;
            }
            if self.hard[i] == truth[i].min(k) {
                correct += 1;
            } else {
                wrong += 1;
            }
        }
        (correct, wrong)
    }
}

/// Labels each row of `probs` (softmax over `k` ID classes plus an optional
/// trailing OOD column) and applies the dual thresholds: `tau` for ID
/// predictions, the controller's current `tau_ood` for OOD predictions.
/// Also feeds the curriculum counters: both counters tally confidence above
/// the *fixed* `tau`, per class group.
pub fn pseudo_label(
    probs: Tensor2,
    k: usize,
    ctrl: &mut ThresholdController,
) -> PseudoLabelBatch {
    let n = probs.rows();
    let mut hard = Vec::with_capacity(n);
    let mut accepted = Vec::with_capacity(n);
    let mut threshold_used = Vec::with_capacity(n);
    let mut confident_ood = 0;
    let mut confident_id = 0;
    for i in 0..n {
        let row = probs.row(i);
        let mut arg = 0;
        for (c, &p) in row.iter().enumerate() {
            if p > row[arg] {
                arg = c;
            }
        }
        let conf = row[arg];
        let is_ood = arg == k;
        let thr = if is_ood { ctrl.tau_ood() } else { ctrl.tau() };
        hard.push(arg);
        accepted.push(conf > thr);
        threshold_used.push(thr);
        if conf > ctrl.tau() {
            if is_ood {
                confident_ood += 1;
            } else {
                confident_id += 1;
            }
        }
    }
    ctrl.record(confident_ood, confident_id);
    PseudoLabelBatch {
        probs,
        hard,
        accepted,
        threshold_used,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn msp_ignores_the_ood_entry() {
        assert_eq!(msp_score(&[0.1, 0.5, 0.2, 0.2], 3), 0.5);
        assert_eq!(msp_score(&[0.25, 0.25, 0.25, 0.25], 3), 0.25);
        assert_eq!(msp_score(&[0.05, 0.05, 0.05, 0.85], 3), 0.05);
    }

    fn probs_from_msp(msps: &[f64]) -> Tensor2 {
        // Two ID classes; first column carries the MSP, rest fills up.
        let rows: Vec<Vec<f64>> = msps
            .iter()
            .map(|&m| vec![m, 0.0, 1.0 - m])
            .collect();
        Tensor2::from_rows(&rows).unwrap()
    }

    #[test]
    fn select_enqueue_picks_minimum() {
        let p = probs_from_msp(&[0.9, 0.3, 0.7]);
        assert_eq!(select_enqueue(&p, 2, 1), vec![1]);
    }

    #[test]
    fn select_enqueue_full_batch_sorts_ascending() {
        let p = probs_from_msp(&[0.9, 0.3, 0.7]);
        assert_eq!(select_enqueue(&p, 2, 3), vec![1, 2, 0]);
    }

    #[test]
    fn select_enqueue_breaks_ties_to_lower_index() {
        let p = probs_from_msp(&[0.4, 0.4]);
        assert_eq!(select_enqueue(&p, 2, 1), vec![0]);
    }

    fn ctrl() -> ThresholdController {
        ThresholdController::new(0.95, 0.35, 1.0).unwrap()
    }

    #[test]
    fn confident_id_prediction_is_accepted() {
        let probs = Tensor2::from_vec(1, 4, vec![0.96, 0.02, 0.01, 0.01]).unwrap();
        let mut c = ctrl();
        let out = pseudo_label(probs, 3, &mut c);
        assert_eq!(out.hard, vec![0]);
        assert_eq!(out.accepted, vec![true]);
        assert_eq!(out.threshold_used, vec![0.95]);
    }

    #[test]
    fn ood_prediction_gated_by_tau_ood() {
        // tau_ood = 0.5 via controlled counters: ratio below bounds clamps to
        // tau_min = 0.35... craft instead by restoring a known controller.
        let probs = Tensor2::from_vec(1, 4, vec![0.2, 0.2, 0.2, 0.4]).unwrap();
        let mut c = ThresholdController::restore(0.95, 0.35, 0.5, 0.0, 0.0, 1.0).unwrap();
        let out = pseudo_label(probs.clone(), 3, &mut c);
        assert_eq!(out.hard, vec![3]);
        assert_eq!(out.accepted, vec![false]); // 0.4 < 0.5

        let mut c2 = ThresholdController::restore(0.95, 0.35, 0.35, 0.0, 0.0, 1.0).unwrap();
        let out2 = pseudo_label(probs, 3, &mut c2);
        assert_eq!(out2.accepted, vec![true]); // 0.4 > 0.35
    }

    #[test]
    fn counters_use_fixed_tau_not_tau_ood() {
        // OOD prediction at 0.96 confidence: counted for count_ood because it
        // clears tau, independent of tau_ood.
        let probs =
            Tensor2::from_vec(2, 3, vec![0.02, 0.02, 0.96, 0.97, 0.02, 0.01]).unwrap();
        let mut c = ctrl();
        pseudo_label(probs, 2, &mut c);
        assert_eq!(c.counts(), (1.0, 1.0));
    }

    #[test]
    fn argmax_ties_go_to_lowest_class() {
        let probs = Tensor2::from_vec(1, 3, vec![0.4, 0.4, 0.2]).unwrap();
        let mut c = ctrl();
        let out = pseudo_label(probs, 2, &mut c);
        assert_eq!(out.hard, vec![0]);
    }

    #[test]
    fn tally_compares_ood_to_sentinel() {
        let probs = Tensor2::from_vec(2, 3, vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        let batch = PseudoLabelBatch {
            probs,
            hard: vec![2, 0],
            accepted: vec![true, true],
            threshold_used: vec![0.5, 0.95],
        };
        // Truth: first sample is OOD (sentinel 2), second is class 1.
        let (correct, wrong) = batch.tally_against(&[2, 1], 2);
        assert_eq!((correct, wrong), (1, 1));
    }
}
