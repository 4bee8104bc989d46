use super::FeatureConfig;
use crate::error::{Error, Result};
use crate::tensor::{matmul, Mat, Trans};

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Center frequency of every band, in Hz.
pub fn mel_band_centers(cfg: &FeatureConfig) -> Vec<f64> {
    let edges = band_edges(cfg);
    edges[1..=cfg.n_mels].to_vec()
}

fn band_edges(cfg: &FeatureConfig) -> Vec<f64> {
    let top = hz_to_mel(cfg.sample_rate as f64 / 2.0);
    (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (cfg.n_mels + 1) as f64))
        .collect()
}

/// Triangular filterbank, `n_fft_bins x n_mels`, spanning 0 Hz to Nyquist.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    weights: Mat,
}

impl MelFilterbank {
    pub fn new(cfg: &FeatureConfig) -> Self {
        let edges = band_edges(cfg);
        let n_bins = cfg.n_fft_bins();
        let bin_hz = cfg.sample_rate as f64 / cfg.window_len as f64;
        let weights = Mat::from_fn(n_bins, cfg.n_mels, |k, m| {
            let f = k as f64 * bin_hz;
            let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let up = (f - lo) / (c - lo);
            let down = (hi - f) / (hi - c);
            up.min(down).max(0.0)
        });
        MelFilterbank { weights }
    }

    pub fn weights(&self) -> &Mat {
        &self.weights
    }

    /// Applies the bank to the power (squared magnitude) spectrum.
    pub fn apply(&self, mag: &Mat) -> Result<Mat> {
        if mag.cols() != self.weights.rows() {
            return Err(Error::invalid(format!(
                "magnitude has {} bins, filterbank expects {}",
                mag.cols(),
                self.weights.rows()
            )));
        }
        let mut power = mag.clone();
        power.as_mut_slice().iter_mut().for_each(|x| *x *= *x);
        Ok(matmul(&power, Trans::No, &self.weights, Trans::No))
    }
}

pub fn mel_spectrogram(mag: &Mat, cfg: &FeatureConfig) -> Result<Mat> {
    MelFilterbank::new(cfg).apply(mag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::test_signals::sine;
    use crate::dsp::{stft_magnitude, SAMPLE_RATE};

    fn argmax(row: &[f64]) -> usize {
        row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0
    }

    #[test]
    fn mel_scale_round_trips() {
        for hz in [0.0, 100.0, 440.0, 8000.0, 22_050.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn zero_magnitude_gives_zero_mel() {
        let cfg = FeatureConfig::default();
        let mel = mel_spectrogram(&Mat::zeros(3, 1025), &cfg).unwrap();
        assert_eq!(mel.shape(), (3, 128));
        assert!(mel.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_bin_impulse_touches_at_most_two_adjacent_bands() {
        let cfg = FeatureConfig::default();
        let bank = MelFilterbank::new(&cfg);
        for k in 0..1025 {
            let mut mag = Mat::zeros(1, 1025);
            mag[(0, k)] = 1.0;
            let mel = bank.apply(&mag).unwrap();
            let nz: Vec<usize> = (0..128).filter(|&m| mel[(0, m)] > 0.0).collect();
            assert!(nz.len() <= 2, "bin {k}: {nz:?}");
            if nz.len() == 2 {
                assert_eq!(nz[1], nz[0] + 1);
            }
            assert!(mel.as_slice().iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn sine_peaks_in_band_nearest_its_frequency() {
        let cfg = FeatureConfig::default();
        let centers = mel_band_centers(&cfg);
        let nearest = |f: f64| {
            (0..centers.len())
                .min_by(|&a, &b| (centers[a] - f).abs().total_cmp(&(centers[b] - f).abs()))
                .unwrap()
        };
        let mag = stft_magnitude(&sine(440.0, 0.5, SAMPLE_RATE), &cfg).unwrap();
        let mel = mel_spectrogram(&mag, &cfg).unwrap();
        assert_eq!(argmax(mel.row(5)), nearest(440.0));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let cfg = FeatureConfig::default();
        assert!(matches!(mel_spectrogram(&Mat::zeros(2, 10), &cfg), Err(Error::InvalidInput(_))));
    }
}
