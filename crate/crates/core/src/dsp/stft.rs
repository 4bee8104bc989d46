use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{AudioClip, FeatureConfig};
use crate::error::{Error, Result};
use crate::tensor::Mat;

/// Frame count of a centered STFT over `n_samples` samples.
pub fn n_frames_for(n_samples: usize, hop_len: usize) -> usize {
    1 + n_samples / hop_len
}

/// Mirror index `i` (which may lie outside the signal) back into `0..len`,
/// reflecting about the end samples without repeating them.
pub(crate) fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= len as isize {
        j = period - j;
    }
    j as usize
}

/// Magnitude STFT with centered, reflect-padded frames. Row `t` is the frame
/// centered on sample `t * hop_len`; column `k` is frequency `k * sr / window_len`.
pub fn stft_magnitude(clip: &AudioClip, cfg: &FeatureConfig) -> Result<Mat> {
    if clip.samples.is_empty() {
        return Err(Error::invalid("empty audio clip"));
    }
    if !cfg.window_len.is_power_of_two() {
        return Err(Error::config("window_len must be a power of two"));
    }
    let n_fft = cfg.window_len;
    let half = (n_fft / 2) as isize;
    let len = clip.samples.len();
    let n_frames = n_frames_for(len, cfg.hop_len);
    let n_bins = cfg.n_fft_bins();
    let window = cfg.window_fn.periodic(n_fft);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);

    let mut out = Mat::zeros(n_frames, n_bins);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for t in 0..n_frames {
        let origin = (t * cfg.hop_len) as isize - half;
        for (n, slot) in buf.iter_mut().enumerate() {
            let idx = origin + n as isize;
            let s = if idx >= 0 && (idx as usize) < len {
                clip.samples[idx as usize]
            } else {
                clip.samples[reflect_index(idx, len)]
            };
            *slot = Complex::new(s as f64 * window[n], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (o, c) in out.row_mut(t).iter_mut().zip(&buf[..n_bins]) {
            *o = c.norm();
        }
    }
    Ok(out)
}
