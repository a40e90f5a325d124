//! Supervision and self-training loss terms.
//!
//! Every function forwards its batch through the student, accumulates
//! `grad_coef * dL/dtheta` into the network's gradient buffers and returns
//! the loss value as defined (unweighted). One optimizer step after all
//! terms is therefore the gradient of the combined objective.
//!
//! `active_cols` selects the softmax range: `K+1` for the open-set view,
//! `K` for the close-set view or when the OOD class is disabled entirely.

use crate::diffcore::{softmax_cross_entropy, softmax_cross_entropy_sum, Network, Tensor2};
use crate::error::{Error, Result};

use super::pseudo::PseudoLabelBatch;

fn scale_and_backprop(net: &mut Network, mut grad: Tensor2, coef: f64, aux: bool) -> Result<()> {
    if coef != 1.0 {
        for g in grad.data_mut() {
            *g *= coef;
        }
    }
    if aux {
        net.backward_aux(&grad)?;
    } else {
        net.backward_main(&grad)?;
    }
    Ok(())
}

/// Mean cross-entropy of the main head on (weakly augmented) labeled data.
/// This is both the labeled supervision term of the `(K+1)`-class task and
/// the plain SSL supervised loss, depending on `active_cols`.
pub fn supervised_id_loss(
    net: &mut Network,
    x_weak: &Tensor2,
    labels: &[usize],
    active_cols: usize,
    grad_coef: f64,
) -> Result<f64> {
    let logits = net.forward_main(x_weak)?;
    let ce = softmax_cross_entropy(&logits, labels, &vec![1.0; labels.len()], active_cols)?;
    scale_and_backprop(net, ce.grad, grad_coef, false)?;
    Ok(ce.loss)
}

/// Mean cross-entropy of queue samples against the OOD sentinel class `k`,
/// over the full `K+1` softmax.
pub fn supervised_ood_loss(
    net: &mut Network,
    ood_batch: &Tensor2,
    k: usize,
    grad_coef: f64,
) -> Result<f64> {
    let targets = vec![k; ood_batch.rows()];
    let logits = net.forward_main(ood_batch)?;
    let ce = softmax_cross_entropy(&logits, &targets, &vec![1.0; targets.len()], k + 1)?;
    scale_and_backprop(net, ce.grad, grad_coef, false)?;
    Ok(ce.loss)
}

/// Mean cross-entropy of labeled data on the auxiliary `K`-way head
/// (dual-head ablation only).
pub fn aux_supervised_loss(
    net: &mut Network,
    x_weak: &Tensor2,
    labels: &[usize],
    grad_coef: f64,
) -> Result<f64> {
    let k = net.num_classes();
    let logits = net.forward_aux(x_weak)?;
    let ce = softmax_cross_entropy(&logits, labels, &vec![1.0; labels.len()], k)?;
    scale_and_backprop(net, ce.grad, grad_coef, true)?;
    Ok(ce.loss)
}

/// Open-set self-training: accepted pseudo-labels trained on both the weak
/// and the strong view over the full active softmax, normalized by
/// `2 * mu * B` regardless of how many samples were accepted.
///
/// With `include_weak = false` the weak-view term is dropped but the
/// normalization keeps its `2 mu B` denominator (a term is removed, not
/// renormalized).
pub fn open_set_loss(
    net: &mut Network,
    pseudo: &PseudoLabelBatch,
    u_weak: &Tensor2,
    u_strong: &Tensor2,
    active_cols: usize,
    include_weak: bool,
    grad_coef: f64,
) -> Result<f64> {
    let n = pseudo.len();
    if u_weak.rows() != n || u_strong.rows() != n {
        return Err(Error::Shape(format!(
            "open-set loss: {} pseudo-labels for {}/{} view rows",
            n,
            u_weak.rows(),
            u_strong.rows()
        )));
    }
    let mask = pseudo.accept_mask();
    let denom = 2.0 * n as f64;
    let mut loss_sum = 0.0;
    if include_weak {
        let logits = net.forward_main(u_weak)?;
        let ce = softmax_cross_entropy_sum(&logits, &pseudo.hard, &mask, active_cols)?;
        loss_sum += ce.loss;
        scale_and_backprop(net, ce.grad, grad_coef / denom, false)?;
    }
    let logits = net.forward_main(u_strong)?;
    let ce = softmax_cross_entropy_sum(&logits, &pseudo.hard, &mask, active_cols)?;
    loss_sum += ce.loss;
    scale_and_backprop(net, ce.grad, grad_coef / denom, false)?;
    Ok(loss_sum / denom)
}

/// Close-set self-training: accepted *ID* pseudo-labels trained on the
/// strong view over the first `K` classes only, normalized by `mu * B`.
/// Gradients reach only the first `K` head rows (or the auxiliary head in
/// the dual-head ablation) plus the backbone.
pub fn close_set_loss(
    net: &mut Network,
    pseudo: &PseudoLabelBatch,
    u_strong: &Tensor2,
    k: usize,
    on_aux_head: bool,
    grad_coef: f64,
) -> Result<f64> {
    let n = pseudo.len();
    if u_strong.rows() != n {
        return Err(Error::Shape(format!(
            "close-set loss: {} pseudo-labels for {} strong rows",
            n,
            u_strong.rows()
        )));
    }
    let mask: Vec<f64> = (0..n)
        .map(|i| f64::from(pseudo.accepted[i] && pseudo.hard[i] < k))
        .collect();
    let denom = n as f64;
    let logits = if on_aux_head {
        net.forward_aux(u_strong)?
    } else {
        net.forward_main(u_strong)?
    };
    let ce = softmax_cross_entropy_sum(&logits, &pseudo.hard, &mask, k)?;
    scale_and_backprop(net, ce.grad, grad_coef / denom, on_aux_head)?;
    Ok(ce.loss / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::softmax_rows;
    use crate::rng::substream;
    use crate::scomatch::pseudo::pseudo_label;
    use crate::scomatch::threshold::ThresholdController;

    const K: usize = 3;

    fn tiny_net(seed: u64) -> Network {
        let mut rng = substream(seed, "model.init");
        Network::new(4, &[6], K, true, false, &mut rng).unwrap()
    }

    fn batch(rows: usize, seed: u64) -> Tensor2 {
        crate::data::random_tensor(rows, 4, -1.0, 1.0, &mut substream(seed, "x"))
    }

    #[test]
    fn uniform_model_supervised_losses_cost_ln_k_plus_one() {
        // Zero all parameters: logits are uniformly zero, so each CE term is
        // ln(K+1).
        let mut net = tiny_net(0);
        let zeros = vec![0.0; net.param_count()];
        net.load_params(&zeros).unwrap();
        net.zero_grads();
        let x = batch(5, 1);
        let id = supervised_id_loss(&mut net, &x, &[0, 1, 2, 0, 1], K + 1, 1.0).unwrap();
        let ood = supervised_ood_loss(&mut net, &x, K, 1.0).unwrap();
        let expect = ((K + 1) as f64).ln();
        assert!((id - expect).abs() < 1e-12);
        assert!((ood - expect).abs() < 1e-12);
    }

    fn pseudo_from(net: &Network, u_weak: &Tensor2, tau_ood: f64) -> PseudoLabelBatch {
        let mut ctrl = ThresholdController::restore(0.95, 0.4, tau_ood, 0.0, 0.0, 1.0).unwrap();
        let probs = softmax_rows(&net.infer_main(u_weak).unwrap(), K + 1).unwrap();
        pseudo_label(probs, K, &mut ctrl)
    }

    #[test]
    fn open_loss_zero_when_nothing_accepted() {
        let mut net = tiny_net(2);
        let u = batch(4, 3);
        let mut pseudo = pseudo_from(&net, &u, 0.95);
        pseudo.accepted = vec![false; 4];
        net.zero_grads();
        let loss = open_set_loss(&mut net, &pseudo, &u, &u, K + 1, true, 1.0).unwrap();
        assert_eq!(loss, 0.0);
        assert!(net.flatten_grads().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn open_loss_hand_normalization() {
        // One accepted of muB = 2, uniform (zero) model output on both views:
        // L = 2 ln(K+1) / (2 * 2).
        let mut net = tiny_net(4);
        let zeros = vec![0.0; net.param_count()];
        net.load_params(&zeros).unwrap();
        let u = batch(2, 5);
        let pseudo = PseudoLabelBatch {
            probs: softmax_rows(&net.infer_main(&u).unwrap(), K + 1).unwrap(),
            hard: vec![1, 2],
            accepted: vec![true, false],
            threshold_used: vec![0.95, 0.95],
        };
        net.zero_grads();
        let loss = open_set_loss(&mut net, &pseudo, &u, &u, K + 1, true, 1.0).unwrap();
        let expect = 2.0 * ((K + 1) as f64).ln() / 4.0;
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    fn close_loss_filters_ood_pseudo_labels() {
        let mut net = tiny_net(6);
        let u = batch(3, 7);
        let pseudo = PseudoLabelBatch {
            probs: softmax_rows(&net.infer_main(&u).unwrap(), K + 1).unwrap(),
            hard: vec![K, K, K],
            accepted: vec![true, true, true],
            threshold_used: vec![0.5; 3],
        };
        net.zero_grads();
        let loss = close_set_loss(&mut net, &pseudo, &u, K, false, 1.0).unwrap();
        assert_eq!(loss, 0.0);
        assert!(net.flatten_grads().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn close_loss_hand_normalization() {
        // Single accepted ID sample, uniform renormalized K-way output,
        // muB = 4: loss = ln(K) / 4.
        let mut net = tiny_net(8);
        let zeros = vec![0.0; net.param_count()];
        net.load_params(&zeros).unwrap();
        let u = batch(4, 9);
        let pseudo = PseudoLabelBatch {
            probs: softmax_rows(&net.infer_main(&u).unwrap(), K + 1).unwrap(),
            hard: vec![0, K, K, K],
            accepted: vec![true, false, false, false],
            threshold_used: vec![0.95; 4],
        };
        net.zero_grads();
        let loss = close_set_loss(&mut net, &pseudo, &u, K, false, 1.0).unwrap();
        assert!((loss - (K as f64).ln() / 4.0).abs() < 1e-12);
    }

    #[test]
    fn close_loss_leaves_ood_head_row_untouched() {
        let mut net = tiny_net(10);
        let u = batch(5, 11);
        let pseudo = pseudo_from(&net, &u, 0.4);
        // Force everything accepted as ID to get gradients flowing.
        let pseudo = PseudoLabelBatch {
            accepted: vec![true; 5],
            hard: pseudo.hard.iter().map(|&h| h.min(K - 1)).collect(),
            ..pseudo
        };
        net.zero_grads();
        close_set_loss(&mut net, &pseudo, &u, K, false, 1.0).unwrap();
        let head_grads = net.head().grad_weights();
        assert!(head_grads.row(K).iter().all(|&g| g == 0.0));
        assert!(net.head().grad_bias()[K] == 0.0);
        assert!(head_grads.row(0).iter().any(|&g| g != 0.0));
    }
}
