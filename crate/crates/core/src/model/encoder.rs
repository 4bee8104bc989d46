//! Post-norm transformer encoder with sinusoidal positions, plus its
//! hand-derived backward pass.

use rand::RngCore;

use super::config::ModelConfig;
use super::layers::{
    apply_mask_in_place, dropout_mask, gelu_backward, gelu_mat, softmax_rows, LayerNormCache,
};
use super::params::{EncoderLayer, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::{matmul, Mat, Trans};

/// Dropout rate plus the random stream that draws its masks.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut dyn RngCore,
}

impl Dropout<'_> {
    pub(crate) fn mask(&mut self, len: usize) -> Option<Vec<f64>> {
        (self.rate > 0.0).then(|| dropout_mask(len, self.rate, &mut *self.rng))
    }
}

/// `PE[pos, 2i] = sin(pos / 10000^(2i/d))`, `PE[pos, 2i+1] = cos(pos / 10000^(2i/d))`.
pub fn positional_encoding(n_positions: usize, dim: usize) -> Result<Mat> {
    if dim % 2 != 0 {
        return Err(Error::config(format!("positional encoding needs an even width, got {dim}")));
    }
    let mut pe = Mat::zeros(n_positions, dim);
    for i in 0..dim / 2 {
        let rate = 10000f64.powf(2.0 * i as f64 / dim as f64);
        for pos in 0..n_positions {
            let angle = pos as f64 / rate;
            pe[(pos, 2 * i)] = angle.sin();
            pe[(pos, 2 * i + 1)] = angle.cos();
        }
    }
    Ok(pe)
}

/// Projects `N x input_dim` frames to the hidden width and adds positions.
pub fn embed(frames: &Mat, cfg: &ModelConfig, params: &ModelParams) -> Result<Mat> {
    let n = frames.rows();
    if n > cfg.max_positions {
        return Err(Error::SequenceTooLong { len: n, max: cfg.max_positions });
    }
    if frames.cols() != params.input_dim() {
        return Err(Error::invalid(format!(
            "frames have {} channels, model expects {}",
            frames.cols(),
            params.input_dim()
        )));
    }
    let mut h = params.input_projection.forward(frames);
    h.add_assign(&positional_encoding(n, cfg.hidden_dim)?);
    Ok(h)
}

#[derive(Debug, Clone)]
struct LayerCache {
    q: Mat,
    k: Mat,
    v: Mat,
    probs: Vec<Mat>,
    prob_masks: Vec<Option<Vec<f64>>>,
    context: Mat,
    attn_norm: LayerNormCache,
    y1: Mat,
    ffn_pre: Mat,
    ffn_act: Mat,
    ffn_mask: Option<Vec<f64>>,
    ffn_norm: LayerNormCache,
}

/// Hidden states `H^0 ..= H^L` and everything backward needs.
#[derive(Debug, Clone)]
pub struct EncoderActivations {
    pub hidden: Vec<Mat>,
    pad_mask: Option<Vec<bool>>,
    caches: Vec<LayerCache>,
}

impl EncoderActivations {
    pub fn last(&self) -> &Mat {
        self.hidden.last().expect("H^0 is always present")
    }

    /// Post-softmax attention weights (`N x N`) of one head, before dropout.
    pub fn attention_weights(&self, layer: usize, head: usize) -> &Mat {
        &self.caches[layer].probs[head]
    }

    pub fn pad_mask(&self) -> Option<&[bool]> {
        self.pad_mask.as_deref()
    }
}

/// Runs every encoder block over `x` (`N x hidden_dim`). Positions flagged in
/// `pad_mask` are removed from every query's attention.
pub fn encoder_forward(
    x: &Mat,
    cfg: &ModelConfig,
    params: &ModelParams,
    pad_mask: Option<&[bool]>,
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<EncoderActivations> {
    let n = x.rows();
    if let Some(m) = pad_mask {
        if m.len() != n {
            return Err(Error::invalid("pad mask length differs from sequence length"));
        }
        if n > 0 && m.iter().all(|&p| p) {
            return Err(Error::invalid("every position is padded"));
        }
    }
    let mut hidden = vec![x.clone()];
    let mut caches = Vec::with_capacity(params.layers.len());
    for (li, layer) in params.layers.iter().enumerate() {
        let (out, cache) = layer_forward(layer, hidden.last().unwrap(), cfg, pad_mask, dropout.as_deref_mut());
        if !out.is_finite() {
            return Err(Error::Numerical {
                tensor: format!("layers.{li}.output"),
                detail: "non-finite activation".into(),
            });
        }
        hidden.push(out);
        caches.push(cache);
    }
    Ok(EncoderActivations { hidden, pad_mask: pad_mask.map(<[bool]>::to_vec), caches })
}

fn layer_forward(
    layer: &EncoderLayer,
    x: &Mat,
    cfg: &ModelConfig,
    pad_mask: Option<&[bool]>,
    mut dropout: Option<&mut Dropout<'_>>,
) -> (Mat, LayerCache) {
    let n = x.rows();
    let d = cfg.head_dim();
    let scale = 1.0 / (d as f64).sqrt();
    let q = layer.query.forward(x);
    let k = layer.key.forward(x);
    let v = layer.value.forward(x);

    let mut context = Mat::zeros(n, cfg.hidden_dim);
    let mut probs = Vec::with_capacity(cfg.n_heads);
    let mut prob_masks = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let qh = q.slice_cols(h * d, d);
        let kh = k.slice_cols(h * d, d);
        let vh = v.slice_cols(h * d, d);
        let mut s = matmul(&qh, Trans::No, &kh, Trans::Yes);
        s.scale(scale);
        if let Some(m) = pad_mask {
            for r in 0..n {
                for (c, &padded) in m.iter().enumerate() {
                    if padded {
                        s[(r, c)] = f64::NEG_INFINITY;
                    }
                }
            }
        }
        softmax_rows(&mut s);
        let mask = dropout.as_deref_mut().and_then(|dr| dr.mask(n * n));
        let oh = match &mask {
            Some(mk) => {
                let mut dropped = s.clone();
                apply_mask_in_place(dropped.as_mut_slice(), mk);
                matmul(&dropped, Trans::No, &vh, Trans::No)
            }
            None => matmul(&s, Trans::No, &vh, Trans::No),
        };
        context.set_cols(h * d, &oh);
        probs.push(s);
        prob_masks.push(mask);
    }

    let mut z1 = layer.attn_out.forward(&context);
    z1.add_assign(x);
    let (y1, attn_norm) = layer.attn_norm.forward(&z1);

    let ffn_pre = layer.ffn_in.forward(&y1);
    let ffn_act = gelu_mat(&ffn_pre);
    let mut f = layer.ffn_out.forward(&ffn_act);
    let ffn_mask = dropout.as_deref_mut().and_then(|dr| dr.mask(f.as_slice().len()));
    if let Some(mk) = &ffn_mask {
        apply_mask_in_place(f.as_mut_slice(), mk);
    }
    f.add_assign(&y1);
    let (y2, ffn_norm) = layer.ffn_norm.forward(&f);

    let cache = LayerCache { q, k, v, probs, prob_masks, context, attn_norm, y1: y1.clone(), ffn_pre, ffn_act, ffn_mask, ffn_norm };
    (y2, cache)
}

/// Backpropagates `d_top = dL/dH^L` through every block, accumulating into
/// `grads`. Returns `dL/dH^0`.
pub fn encoder_backward(
    cfg: &ModelConfig,
    params: &ModelParams,
    acts: &EncoderActivations,
    d_top: &Mat,
    grads: &mut ModelParams,
) -> Mat {
    let mut dy = d_top.clone();
    for li in (0..params.layers.len()).rev() {
        dy = layer_backward(
            &params.layers[li],
            &acts.hidden[li],
            &acts.caches[li],
            cfg,
            &dy,
            &mut grads.layers[li],
        );
    }
    dy
}

fn layer_backward(
    layer: &EncoderLayer,
    x: &Mat,
    c: &LayerCache,
    cfg: &ModelConfig,
    dy2: &Mat,
    g: &mut EncoderLayer,
) -> Mat {
    let n = x.rows();
    let d = cfg.head_dim();
    let scale = 1.0 / (d as f64).sqrt();

    // Feed-forward sublayer.
    let dz2 = layer.ffn_norm.backward(&c.ffn_norm, dy2, &mut g.ffn_norm);
    let mut df = dz2.clone();
    if let Some(mk) = &c.ffn_mask {
        apply_mask_in_place(df.as_mut_slice(), mk);
    }
    let dact = layer.ffn_out.backward(&c.ffn_act, &df, &mut g.ffn_out);
    let dpre = gelu_backward(&c.ffn_pre, &dact);
    let mut dy1 = layer.ffn_in.backward(&c.y1, &dpre, &mut g.ffn_in);
    dy1.add_assign(&dz2);

    // Attention sublayer.
    let dz1 = layer.attn_norm.backward(&c.attn_norm, &dy1, &mut g.attn_norm);
    let dcontext = layer.attn_out.backward(&c.context, &dz1, &mut g.attn_out);
    let mut dq = Mat::zeros(n, cfg.hidden_dim);
    let mut dk = Mat::zeros(n, cfg.hidden_dim);
    let mut dv = Mat::zeros(n, cfg.hidden_dim);
    for h in 0..cfg.n_heads {
        let qh = c.q.slice_cols(h * d, d);
        let kh = c.k.slice_cols(h * d, d);
        let vh = c.v.slice_cols(h * d, d);
        let doh = dcontext.slice_cols(h * d, d);
        let p = &c.probs[h];
        let p_used = match &c.prob_masks[h] {
            Some(mk) => {
                let mut m = p.clone();
                apply_mask_in_place(m.as_mut_slice(), mk);
                m
            }
            None => p.clone(),
        };
        dv.set_cols(h * d, &matmul(&p_used, Trans::Yes, &doh, Trans::No));
        let mut dp = matmul(&doh, Trans::No, &vh, Trans::Yes);
        if let Some(mk) = &c.prob_masks[h] {
            apply_mask_in_place(dp.as_mut_slice(), mk);
        }
        // Softmax backward: dS = P * (dP - rowsum(dP * P)).
        let mut ds = Mat::zeros(n, n);
        for r in 0..n {
            let pr = p.row(r);
            let dpr = dp.row(r);
            let dot: f64 = pr.iter().zip(dpr).map(|(a, b)| a * b).sum();
            for (o, (pv, dpv)) in ds.row_mut(r).iter_mut().zip(pr.iter().zip(dpr)) {
                *o = pv * (dpv - dot);
            }
        }
        ds.scale(scale);
        dq.set_cols(h * d, &matmul(&ds, Trans::No, &kh, Trans::No));
        dk.set_cols(h * d, &matmul(&ds, Trans::Yes, &qh, Trans::No));
    }
    let mut dx = dz1;
    dx.add_assign(&layer.query.backward(x, &dq, &mut g.query));
    dx.add_assign(&layer.key.backward(x, &dk, &mut g.key));
    dx.add_assign(&layer.value.backward(x, &dv, &mut g.value));
    dx
}
