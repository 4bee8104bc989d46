use super::loss::{huber_loss, huber_sum_and_grad};
use crate::error::{Error, Result};
use crate::model::{encode, encode_backward, reconstruction_backward, reconstruction_forward, ModelConfig, ModelParams};
use crate::tensor::Mat;

/// Agreement between analytic and finite-difference gradients for one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorGradCheck {
    pub name: String,
    pub n_checked: usize,
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    pub max_abs_grad: f64,
}

fn masked_loss(cfg: &ModelConfig, params: &ModelParams, input: &Mat, target: &Mat, mask: &[bool]) -> Result<f64> {
    let acts = encode(input, cfg, params, None, None)?;
    let (out, _) = reconstruction_forward(acts.last(), params);
    huber_loss(&out, target, mask)
}

/// Gradient of the mean masked Huber reconstruction loss, dropout disabled.
pub fn reconstruction_gradients(
    cfg: &ModelConfig,
    params: &ModelParams,
    input: &Mat,
    target: &Mat,
    mask: &[bool],
) -> Result<(f64, ModelParams)> {
    let acts = encode(input, cfg, params, None, None)?;
    let (out, cache) = reconstruction_forward(acts.last(), params);
    let (sum, count, mut d_out) = huber_sum_and_grad(&out, target, mask)?;
    if count == 0 {
        return Err(Error::invalid("target mask selects no cells"));
    }
    d_out.scale(1.0 / count as f64);
    let mut grads = params.zeros_like();
    let d_top = reconstruction_backward(params, acts.last(), &cache, &d_out, &mut grads);
    encode_backward(input, cfg, params, &acts, &d_top, &mut grads);
    Ok((sum / count as f64, grads))
}

/// Compares analytic gradients with central differences of step `h` for every
/// element of every tensor.
pub fn reconstruction_gradient_check(
    cfg: &ModelConfig,
    params: &ModelParams,
    input: &Mat,
    target: &Mat,
    mask: &[bool],
    h: f64,
    floor: f64,
) -> Result<Vec<TensorGradCheck>> {
    let (_, grads) = reconstruction_gradients(cfg, params, input, target, mask)?;
    let mut work = params.clone();
    let originals: Vec<&[f64]> = params.tensors().into_iter().map(|t| t.data).collect();
    let mut out = Vec::new();
    for (ti, g) in grads.tensors().into_iter().enumerate() {
        let mut max_rel_error: f64 = 0.0;
        for (j, &analytic) in g.data.iter().enumerate() {
            let orig = originals[ti][j];
            work.tensors_mut()[ti].data[j] = orig + h;
            let plus = masked_loss(cfg, &work, input, target, mask)?;
            work.tensors_mut()[ti].data[j] = orig - h;
            let minus = masked_loss(cfg, &work, input, target, mask)?;
            work.tensors_mut()[ti].data[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
            max_rel_error = max_rel_error.max(err);
        }
        out.push(TensorGradCheck {
            name: g.name,
            n_checked: g.data.len(),
            max_rel_error,
            max_abs_grad: g.data.iter().fold(0.0, |a, v| a.max(v.abs())),
        });
    }
    Ok(out)
}
