use super::FeatureConfig;
use crate::error::{Error, Result};
use crate::tensor::{matmul, Mat, Trans};

/// Orthonormal DCT-II basis restricted to the first `n_out` coefficients,
/// shaped `n_in x n_out` so that `x * basis` transforms row vectors.
pub fn dct_ii_ortho(n_in: usize, n_out: usize) -> Mat {
    let n = n_in as f64;
    Mat::from_fn(n_in, n_out, |i, k| {
        let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        scale * (std::f64::consts::PI * k as f64 * (2.0 * i as f64 + 1.0) / (2.0 * n)).cos()
    })
}

/// Per-column local linear-regression slope over `width` frames.
///
/// Interior frames use the centered window. Near the edges the window is
/// shifted to stay inside the sequence, and sequences shorter than `width`
/// regress over all frames, so a linear ramp yields its exact slope everywhere.
/// A single frame has slope zero.
pub fn delta(x: &Mat, width: usize) -> Mat {
    let n = x.rows();
    let mut out = Mat::zeros(n, x.cols());
    if n < 2 {
        return out;
    }
    let w = width.min(n);
    let half = w / 2;
    for t in 0..n {
        let start = t.saturating_sub(half).min(n - w);
        let mean_t = start as f64 + (w as f64 - 1.0) / 2.0;
        let denom: f64 = (start..start + w).map(|s| (s as f64 - mean_t).powi(2)).sum();
        let row = out.row_mut(t);
        for s in start..start + w {
            let coef = (s as f64 - mean_t) / denom;
            for (o, v) in row.iter_mut().zip(x.row(s)) {
                *o += coef * v;
            }
        }
    }
    out
}

/// First `n_mfcc` DCT coefficients of the log-mel frames, followed by their
/// deltas: output columns are `[mfcc | delta]`.
pub fn mfcc_with_delta(log_mel: &Mat, cfg: &FeatureConfig) -> Result<Mat> {
    if log_mel.rows() < 1 {
        return Err(Error::invalid("MFCC needs at least one frame"));
    }
    if cfg.n_mfcc > log_mel.cols() {
        return Err(Error::invalid("more MFCCs requested than mel bands available"));
    }
    let basis = dct_ii_ortho(log_mel.cols(), cfg.n_mfcc);
    let mfcc = matmul(log_mel, Trans::No, &basis, Trans::No);
    let d = delta(&mfcc, cfg.delta_width);
    let mut out = Mat::zeros(log_mel.rows(), 2 * cfg.n_mfcc);
    out.set_cols(0, &mfcc);
    out.set_cols(cfg.n_mfcc, &d);
    Ok(out)
}
