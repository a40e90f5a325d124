//! Fused softmax + cross-entropy with masking and a restrictable class range.
//!
//! All softmaxes are computed over the first `active_cols` columns of the
//! logits with per-row max subtraction. Restricting `active_cols` is how the
//! close-set view of a wider head is trained: the returned gradient always has
//! the full logit width, with zeros in the inactive columns, so it can be fed
//! straight into the head's backward pass.

use crate::error::{Error, Result};

use super::tensor::Tensor2;

/// Loss value and the gradient with respect to the logits.
#[derive(Debug, Clone)]
pub struct CeOutput {
    pub loss: f64,
    pub grad: Tensor2,
}

/// Row-wise softmax over the first `active_cols` columns.
///
/// The result has `active_cols` columns; each row sums to 1.
pub fn softmax_rows(logits: &Tensor2, active_cols: usize) -> Result<Tensor2> {
    check_active(logits, active_cols)?;
    let mut out = Tensor2::zeros(logits.rows(), active_cols);
    for r in 0..logits.rows() {
        let row = &logits.row(r)[..active_cols];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let dst = out.row_mut(r);
        let mut sum = 0.0;
        for (d, &z) in dst.iter_mut().zip(row) {
            *d = (z - max).exp();
            sum += *d;
        }
        for d in dst.iter_mut() {
            *d /= sum;
        }
    }
    Ok(out)
}

/// Masked-mean cross-entropy: `sum_i mask_i * ce_i / sum_i mask_i`.
///
/// An all-zero mask means no sample contributes; the loss and gradient are
/// zero by convention. The gradient is `(softmax - onehot) * mask / sum(mask)`
/// in the active columns and zero elsewhere.
pub fn softmax_cross_entropy(
    logits: &Tensor2,
    targets: &[usize],
    mask: &[f64],
    active_cols: usize,
) -> Result<CeOutput> {
    let (loss_sum, mut grad, mask_sum) = ce_accumulate(logits, targets, mask, active_cols)?;
    if mask_sum == 0.0 {
        return Ok(CeOutput {
            loss: 0.0,
            grad: Tensor2::zeros(logits.rows(), logits.cols()),
        });
    }
    for g in grad.data_mut() {
        *g /= mask_sum;
    }
    Ok(CeOutput {
        loss: loss_sum / mask_sum,
        grad,
    })
}

/// Masked-sum cross-entropy: `sum_i mask_i * ce_i`, gradient unnormalized.
/// Callers divide by their own denominator (e.g. a fixed batch size).
pub fn softmax_cross_entropy_sum(
    logits: &Tensor2,
    targets: &[usize],
    mask: &[f64],
    active_cols: usize,
) -> Result<CeOutput> {
    let (loss, grad, _) = ce_accumulate(logits, targets, mask, active_cols)?;
    Ok(CeOutput { loss, grad })
}

fn ce_accumulate(
    logits: &Tensor2,
    targets: &[usize],
    mask: &[f64],
    active_cols: usize,
) -> Result<(f64, Tensor2, f64)> {
    check_active(logits, active_cols)?;
    if targets.len() != logits.rows() || mask.len() != logits.rows() {
        return Err(Error::Shape(format!(
            "cross-entropy: {} rows vs {} targets / {} mask entries",
            logits.rows(),
            targets.len(),
            mask.len()
        )));
    }
    let mut grad = Tensor2::zeros(logits.rows(), logits.cols());
    let mut loss_sum = 0.0;
    let mut mask_sum = 0.0;
    for r in 0..logits.rows() {
        let m = mask[r];
        if m == 0.0 {
            continue;
        }
        let t = targets[r];
        if t >= active_cols {
            return Err(Error::Shape(format!(
                "cross-entropy: target {t} out of range for {active_cols} classes"
            )));
        }
        let row = &logits.row(r)[..active_cols];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum_exp = 0.0;
        for &z in row {
            sum_exp += (z - max).exp();
        }
        let log_z = max + sum_exp.ln();
        loss_sum += m * (log_z - row[t]);
        mask_sum += m;
        let grow = grad.row_mut(r);
        for (c, &z) in row.iter().enumerate() {
            let p = (z - max).exp() / sum_exp;
            grow[c] = m * (p - if c == t { 1.0 } else { 0.0 });
        }
    }
    Ok((loss_sum, grad, mask_sum))
}

fn check_active(logits: &Tensor2, active_cols: usize) -> Result<()> {
    if active_cols == 0 || active_cols > logits.cols() {
        return Err(Error::Shape(format!(
            "active_cols {active_cols} out of range for {} logit columns",
            logits.cols()
        )));
    }
    Ok(())
}
