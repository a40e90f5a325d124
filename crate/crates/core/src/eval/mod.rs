//! Evaluation: close-set / open-set accuracy, AUC and training diagnostics.
//!
//! All functions take an immutable parameter snapshot (normally the EMA
//! teacher) and never mutate it. The OOD score used for AUC is the
//! `(K+1)`-th class probability when the model trains one, and the classic
//! `1 - max ID softmax` probability otherwise (plain `K`-way baselines).

use crate::data::Dataset;
use crate::diffcore::{softmax_rows, Network, Tensor2};
use crate::error::{Error, Result};

/// One evaluation snapshot. Serializes to one CSV row via the harness.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub close_acc: f64,
    pub open_acc: f64,
    pub auc: f64,
    /// `(K+1) x (K+1)` counts, rows = truth, cols = prediction.
    pub confusion: Vec<Vec<usize>>,
    pub queue_purity: Option<f64>,
    pub pseudo_correct: usize,
    pub pseudo_wrong: usize,
}

fn argmax(row: &[f64]) -> usize {
    let mut arg = 0;
    for (c, &v) in row.iter().enumerate() {
        if v > row[arg] {
            arg = c;
        }
    }
    arg
}

/// Accuracy over ID test rows using the close-set view: argmax over the
/// first `K` outputs of the close head (the auxiliary head when present, the
/// full head for a plain `K`-way model).
pub fn close_set_accuracy(net: &Network, test: &Dataset, k: usize) -> Result<f64> {
    let id_rows: Vec<usize> = (0..test.len()).filter(|&i| test.labels[i] < k).collect();
    if id_rows.is_empty() {
        return Err(Error::UndefinedMetric(
            "close-set accuracy needs at least one ID test sample".into(),
        ));
    }
    let feats = test.features.gather_rows(&id_rows);
    let logits = net.infer_close(&feats)?;
    let correct = id_rows
        .iter()
        .enumerate()
        .filter(|&(r, &orig)| argmax(&logits.row(r)[..k]) == test.labels[orig])
        .count();
    Ok(correct as f64 / id_rows.len() as f64)
}

/// Accuracy over the whole test set with OOD truth mapped to the sentinel
/// `k`. The prediction is the argmax over every head output; a `K`-way model
/// can never predict the sentinel, so its OOD rows always count as wrong.
pub fn open_set_accuracy(net: &Network, test: &Dataset, k: usize) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::UndefinedMetric("empty test set".into()));
    }
    let logits = net.infer_main(&test.features)?;
    let correct = (0..test.len())
        .filter(|&i| argmax(logits.row(i)) == test.labels[i].min(k))
        .count();
    Ok(correct as f64 / test.len() as f64)
}

/// Per-sample OOD scores (higher = more OOD-like). `ood_head_active` says
/// whether the trailing head column was actually trained as the OOD class;
/// models without one fall back to `1 - MSP`.
pub fn ood_scores(net: &Network, features: &Tensor2, ood_head_active: bool) -> Result<Vec<f64>> {
    let k = net.num_classes();
    let logits = net.infer_main(features)?;
    if ood_head_active {
        let Some(ood_col) = net.ood_class() else {
            return Err(Error::Config(
                "OOD scores requested from a head without an OOD column".into(),
            ));
        };
        let probs = softmax_rows(&logits, k + 1)?;
        Ok((0..probs.rows()).map(|r| probs.get(r, ood_col)).collect())
    } else {
        let probs = softmax_rows(&logits, k)?;
        Ok((0..probs.rows())
            .map(|r| {
                1.0 - probs
                    .row(r)
                    .iter()
                    .cloned()
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect())
    }
}

/// Mann-Whitney AUC: the probability that a random OOD sample scores above a
/// random ID sample, ties counted half. Midrank computation, `O(n log n)`.
pub fn auc_ood(scores: &[f64], is_ood: &[bool]) -> Result<f64> {
    if scores.len() != is_ood.len() {
        return Err(Error::Shape(format!(
            "{} scores vs {} flags",
            scores.len(),
            is_ood.len()
        )));
    }
    let n_ood = is_ood.iter().filter(|&&o| o).count();
    let n_id = scores.len() - n_ood;
    if n_ood == 0 || n_id == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs at least one ID and one OOD sample".into(),
        ));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("AUC scores contain NaN".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Midranks over tied groups (1-based ranks).
    let mut rank_sum_ood = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if is_ood[idx] {
                rank_sum_ood += midrank;
            }
        }
        i = j + 1;
    }
    let n_ood_f = n_ood as f64;
    Ok((rank_sum_ood - n_ood_f * (n_ood_f + 1.0) / 2.0) / (n_ood_f * n_id as f64))
}

/// `(K+1) x (K+1)` confusion counts on the main head; rows are truth
/// (sentinel-coded), columns are predictions.
pub fn confusion_matrix(net: &Network, test: &Dataset, k: usize) -> Result<Vec<Vec<usize>>> {
    let logits = net.infer_main(&test.features)?;
    let mut m = vec![vec![0usize; k + 1]; k + 1];
    for i in 0..test.len() {
        let truth = test.labels[i].min(k);
        let pred = argmax(logits.row(i)).min(k);
        m[truth][pred] += 1;
    }
    Ok(m)
}

/// Full evaluation of a model snapshot on a test set. `queue_purity` and the
/// windowed pseudo counts come from training-side diagnostics and are
/// folded in by the caller.
pub fn evaluate(
    net: &Network,
    test: &Dataset,
    k: usize,
    ood_head_active: bool,
    queue_purity: Option<f64>,
    pseudo_correct: usize,
    pseudo_wrong: usize,
) -> Result<MetricsReport> {
    let close_acc = close_set_accuracy(net, test, k)?;
    let open_acc = open_set_accuracy(net, test, k)?;
    let scores = ood_scores(net, &test.features, ood_head_active)?;
    let flags: Vec<bool> = test.labels.iter().map(|&l| l >= k).collect();
    let auc = auc_ood(&scores, &flags)?;
    let confusion = confusion_matrix(net, test, k)?;
    Ok(MetricsReport {
        close_acc,
        open_acc,
        auc,
        confusion,
        queue_purity,
        pseudo_correct,
        pseudo_wrong,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::DenseLayer;

    /// A "lookup table" model: identity head over one-hot features.
    fn identity_net(width: usize, k: usize) -> Network {
        let mut w = Tensor2::zeros(width, width);
        for i in 0..width {
            w.set(i, i, 1.0);
        }
        let head = DenseLayer::from_parts(w, vec![0.0; width]).unwrap();
        Network::from_parts(k, Vec::new(), head, None)
    }

    fn onehot_dataset(labels: &[usize], width: usize) -> Dataset {
        let mut feats = Tensor2::zeros(labels.len(), width);
        for (i, &l) in labels.iter().enumerate() {
            feats.set(i, l, 4.0);
        }
        Dataset::new(feats, labels.to_vec()).unwrap()
    }

    #[test]
    fn lookup_table_model_scores_perfectly() {
        let net = identity_net(4, 3);
        let test = onehot_dataset(&[0, 1, 2, 3, 3], 4);
        assert_eq!(close_set_accuracy(&net, &test, 3).unwrap(), 1.0);
        assert_eq!(open_set_accuracy(&net, &test, 3).unwrap(), 1.0);
    }

    #[test]
    fn constant_predictor_hits_one_over_k_on_balanced_ids() {
        // Head picks class 0 regardless of input.
        let mut w = Tensor2::zeros(3, 2);
        w.set(0, 0, 0.0);
        let head = DenseLayer::from_parts(w, vec![1.0, 0.0, 0.0]).unwrap();
        let net = Network::from_parts(2, Vec::new(), head, None);
        let test = onehot_dataset(&[0, 1], 2);
        assert_eq!(close_set_accuracy(&net, &test, 2).unwrap(), 0.5);
    }

    #[test]
    fn close_accuracy_undefined_without_id_rows() {
        let net = identity_net(3, 2);
        let test = onehot_dataset(&[2, 2], 3);
        assert!(matches!(
            close_set_accuracy(&net, &test, 2),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn perfect_id_predictor_on_half_ood_test_scores_half() {
        // K-way model (never predicts the sentinel), test 50% OOD.
        let net = identity_net(2, 2);
        let mut feats = Tensor2::zeros(4, 2);
        feats.set(0, 0, 3.0);
        feats.set(1, 1, 3.0);
        feats.set(2, 0, 3.0);
        feats.set(3, 1, 3.0);
        let test = Dataset::new(feats, vec![0, 1, 2, 2]).unwrap();
        assert_eq!(open_set_accuracy(&net, &test, 2).unwrap(), 0.5);
    }

    #[test]
    fn auc_perfect_separation() {
        let scores = [0.1, 0.2, 0.8, 0.9];
        let flags = [false, false, true, true];
        assert_eq!(auc_ood(&scores, &flags).unwrap(), 1.0);
    }

    #[test]
    fn auc_all_ties_is_half() {
        let scores = [0.5; 6];
        let flags = [true, false, true, false, true, false];
        assert_eq!(auc_ood(&scores, &flags).unwrap(), 0.5);
    }

    #[test]
    fn auc_hand_counted_pairs() {
        // Pairs (ID 0.1, 0.6) x (OOD 0.4, 0.7): OOD above ID in 3 of 4 pairs.
        let scores = [0.1, 0.6, 0.4, 0.7];
        let flags = [false, false, true, true];
        assert_eq!(auc_ood(&scores, &flags).unwrap(), 0.75);
    }

    #[test]
    fn auc_single_class_is_undefined() {
        assert!(matches!(
            auc_ood(&[0.1, 0.2], &[true, true]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn confusion_rows_sum_to_class_counts() {
        let net = identity_net(3, 2);
        let test = onehot_dataset(&[0, 0, 1, 2, 2, 2], 3);
        let m = confusion_matrix(&net, &test, 2).unwrap();
        let row_sums: Vec<usize> = m.iter().map(|r| r.iter().sum()).collect();
        assert_eq!(row_sums, vec![2, 1, 3]);
    }
}
