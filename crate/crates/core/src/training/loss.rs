use crate::error::{Error, Result};
use crate::tensor::Mat;

/// `0.5 x^2` below unit magnitude, `|x| - 0.5` from there on.
pub fn huber(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

fn huber_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

fn check_shapes(pred: &Mat, target: &Mat, mask: &[bool]) -> Result<()> {
    if pred.shape() != target.shape() || mask.len() != pred.rows() * pred.cols() {
        return Err(Error::invalid(format!(
            "prediction {:?}, target {:?} and mask of {} cells disagree",
            pred.shape(),
            target.shape(),
            mask.len()
        )));
    }
    Ok(())
}

/// Sum of the Huber loss over masked cells, the number of masked cells, and
/// the gradient of the sum with respect to `pred`.
pub fn huber_sum_and_grad(pred: &Mat, target: &Mat, mask: &[bool]) -> Result<(f64, usize, Mat)> {
    check_shapes(pred, target, mask)?;
    let mut grad = Mat::zeros(pred.rows(), pred.cols());
    let mut sum = 0.0;
    let mut count = 0;
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let x = pred.as_slice()[i] - target.as_slice()[i];
        sum += huber(x);
        grad.as_mut_slice()[i] = huber_grad(x);
        count += 1;
    }
    Ok((sum, count, grad))
}

/// Mean Huber loss over the cells flagged in `mask`.
pub fn huber_loss(pred: &Mat, target: &Mat, mask: &[bool]) -> Result<f64> {
    check_shapes(pred, target, mask)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        sum += huber(pred.as_slice()[i] - target.as_slice()[i]);
        count += 1;
    }
    if count == 0 {
        return Err(Error::invalid("target mask selects no cells"));
    }
    Ok(sum / count as f64)
}

/// Softmax cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy(logits: &[f64], class: usize) -> Result<(f64, Vec<f64>)> {
    if class >= logits.len() {
        return Err(Error::invalid(format!("class {class} out of range for {} logits", logits.len())));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let log_z = max + z.ln();
    let grad = logits
        .iter()
        .enumerate()
        .map(|(i, l)| (l - log_z).exp() - if i == class { 1.0 } else { 0.0 })
        .collect();
    Ok((log_z - logits[class], grad))
}

/// Mean sigmoid binary cross-entropy over tags and its gradient.
pub fn binary_cross_entropy(logits: &[f64], tags: &[bool]) -> Result<(f64, Vec<f64>)> {
    if logits.len() != tags.len() || logits.is_empty() {
        return Err(Error::invalid(format!("{} logits for {} tags", logits.len(), tags.len())));
    }
    let k = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &t) in logits.iter().zip(tags) {
        let y = if t { 1.0 } else { 0.0 };
        loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        let sigmoid = if z >= 0.0 { 1.0 / (1.0 + (-z).exp()) } else { z.exp() / (1.0 + z.exp()) };
        grad.push((sigmoid - y) / k);
    }
    Ok((loss / k, grad))
}
