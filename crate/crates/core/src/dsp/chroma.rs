use super::FeatureConfig;
use crate::error::{Error, Result};
use crate::tensor::Mat;

/// Pitch class (0 = C, 9 = A) of the equal-tempered pitch nearest `hz`,
/// with A4 = 440 Hz.
pub fn pitch_class_of(hz: f64) -> usize {
    let midi = (69.0 + 12.0 * (hz / 440.0).log2()).round() as i64;
    midi.rem_euclid(12) as usize
}

/// Folds STFT power into 12 pitch classes, then scales each frame so its
/// largest class is 1. Silent frames stay zero. The DC bin is ignored.
pub fn chromagram(mag: &Mat, cfg: &FeatureConfig) -> Result<Mat> {
    if mag.cols() != cfg.n_fft_bins() {
        return Err(Error::invalid(format!(
            "magnitude has {} bins, expected {}",
            mag.cols(),
            cfg.n_fft_bins()
        )));
    }
    let bin_hz = cfg.sample_rate as f64 / cfg.window_len as f64;
    let classes: Vec<usize> = (0..mag.cols()).map(|k| pitch_class_of(k as f64 * bin_hz)).collect();
    let mut out = Mat::zeros(mag.rows(), 12);
    for t in 0..mag.rows() {
        let row = out.row_mut(t);
        for (k, m) in mag.row(t).iter().enumerate().skip(1) {
            row[classes[k]] += m * m;
        }
        let peak = row.iter().cloned().fold(0.0, f64::max);
        if peak > 0.0 {
            row.iter_mut().for_each(|x| *x /= peak);
        }
    }
    Ok(out)
}
