use super::encoder::Dropout;
use super::layers::{apply_mask_in_place, gelu_backward, gelu_mat, LayerNormCache};
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::tensor::Mat;

#[derive(Debug, Clone)]
pub struct ReconstructionCache {
    pre: Mat,
    norm: LayerNormCache,
    normed_out: Mat,
}

/// Maps encoder output `N x hidden_dim` back to `N x input_dim` frames.
pub fn reconstruction_forward(h: &Mat, params: &ModelParams) -> (Mat, ReconstructionCache) {
    let head = &params.reconstruction;
    let pre = head.dense.forward(h);
    let act = gelu_mat(&pre);
    let (normed_out, norm) = head.norm.forward(&act);
    let out = head.out.forward(&normed_out);
    (out, ReconstructionCache { pre, norm, normed_out })
}

pub fn reconstruction_head(h: &Mat, params: &ModelParams) -> Mat {
    reconstruction_forward(h, params).0
}

/// Returns `dL/dH^L` given `dL/d(reconstruction)`.
pub fn reconstruction_backward(
    params: &ModelParams,
    h: &Mat,
    cache: &ReconstructionCache,
    d_out: &Mat,
    grads: &mut ModelParams,
) -> Mat {
    let head = &params.reconstruction;
    let g = &mut grads.reconstruction;
    let d_normed = head.out.backward(&cache.normed_out, d_out, &mut g.out);
    let d_act = head.norm.backward(&cache.norm, &d_normed, &mut g.norm);
    let d_pre = gelu_backward(&cache.pre, &d_act);
    head.dense.backward(h, &d_pre, &mut g.dense)
}

#[derive(Debug, Clone)]
pub struct TaskHeadCache {
    pooled: Vec<f64>,
    mask: Option<Vec<f64>>,
    valid: Vec<bool>,
    n_valid: usize,
}

/// Rows of `h` that are not padding.
fn valid_rows(n: usize, pad_mask: Option<&[bool]>) -> Vec<bool> {
    match pad_mask {
        Some(m) => m.iter().map(|&p| !p).collect(),
        None => vec![true; n],
    }
}

/// Mean over unpadded frames.
pub fn mean_pool(h: &Mat, pad_mask: Option<&[bool]>) -> Result<Vec<f64>> {
    let valid = valid_rows(h.rows(), pad_mask);
    if valid.len() != h.rows() {
        return Err(Error::invalid("pad mask length differs from sequence length"));
    }
    let n_valid = valid.iter().filter(|&&v| v).count();
    if n_valid == 0 {
        return Err(Error::invalid("cannot pool a sequence with no unpadded frames"));
    }
    let mut pooled = vec![0.0; h.cols()];
    for (r, _) in valid.iter().enumerate().filter(|(_, &v)| v) {
        pooled.iter_mut().zip(h.row(r)).for_each(|(p, x)| *p += x);
    }
    pooled.iter_mut().for_each(|p| *p /= n_valid as f64);
    Ok(pooled)
}

/// Mean-pool, optional dropout, then the task linear layer. Returns logits.
pub fn task_head_forward(
    h: &Mat,
    params: &ModelParams,
    pad_mask: Option<&[bool]>,
    dropout: Option<&mut Dropout<'_>>,
) -> Result<(Vec<f64>, TaskHeadCache)> {
    let head = params
        .task_head
        .as_ref()
        .ok_or_else(|| Error::invalid("model has no task head"))?;
    let mut pooled = mean_pool(h, pad_mask)?;
    let mask = dropout.and_then(|d| d.mask(pooled.len()));
    if let Some(m) = &mask {
        apply_mask_in_place(&mut pooled, m);
    }
    let logits = head.linear.forward(&Mat::from_vec(1, pooled.len(), pooled.clone())).into_vec();
    let valid = valid_rows(h.rows(), pad_mask);
    let n_valid = valid.iter().filter(|&&v| v).count();
    Ok((logits, TaskHeadCache { pooled, mask, valid, n_valid }))
}

pub fn task_head(h: &Mat, params: &ModelParams, pad_mask: Option<&[bool]>) -> Result<Vec<f64>> {
    Ok(task_head_forward(h, params, pad_mask, None)?.0)
}

/// Returns `dL/dH^L` given `dL/dlogits`.
pub fn task_head_backward(
    params: &ModelParams,
    cache: &TaskHeadCache,
    d_logits: &[f64],
    grads: &mut ModelParams,
) -> Mat {
    let head = params.task_head.as_ref().expect("forward succeeded with a head");
    let g = &mut grads.task_head.as_mut().expect("gradient has a task head").linear;
    let pooled = Mat::from_vec(1, cache.pooled.len(), cache.pooled.clone());
    let dy = Mat::from_vec(1, d_logits.len(), d_logits.to_vec());
    let mut d_pooled = head.linear.backward(&pooled, &dy, g).into_vec();
    if let Some(m) = &cache.mask {
        apply_mask_in_place(&mut d_pooled, m);
    }
    let n = cache.valid.len();
    let mut dh = Mat::zeros(n, d_pooled.len());
    for (r, _) in cache.valid.iter().enumerate().filter(|(_, &v)| v) {
        for (o, dp) in dh.row_mut(r).iter_mut().zip(&d_pooled) {
            *o = dp / cache.n_valid as f64;
        }
    }
    dh
}
