use super::{AudioClip, FeatureConfig};
use crate::error::{Error, Result};
use crate::tensor::Mat;

/// Center frequency of CQT bin `k`.
pub fn cqt_bin_frequency(cfg: &FeatureConfig, k: usize) -> f64 {
    cfg.cqt_fmin * 2f64.powf(k as f64 / cfg.cqt_bins_per_octave as f64)
}

struct Atom {
    /// Offset of the atom's first tap relative to the frame center.
    lead: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

/// Frame-synchronous constant-Q filterbank: one windowed complex sinusoid per
/// bin, evaluated at every hop-grid frame center. Atom length is
/// `ceil(Q * sr / f_k)` with `Q = 1 / (2^(1/bins_per_octave) - 1)`, and each
/// window is normalized to unit sum.
pub struct CqtKernel {
    atoms: Vec<Atom>,
    hop_len: usize,
    max_lead: usize,
}

impl CqtKernel {
    pub fn new(cfg: &FeatureConfig) -> Result<Self> {
        let sr = cfg.sample_rate as f64;
        let top = cqt_bin_frequency(cfg, cfg.n_cqt_bins - 1);
        if top >= sr / 2.0 {
            return Err(Error::config(format!(
                "highest CQT bin at {top:.1} Hz is at or above Nyquist ({:.1} Hz)",
                sr / 2.0
            )));
        }
        let q = 1.0 / (2f64.powf(1.0 / cfg.cqt_bins_per_octave as f64) - 1.0);
        let atoms: Vec<Atom> = (0..cfg.n_cqt_bins)
            .map(|k| {
                let f = cqt_bin_frequency(cfg, k);
                let len = (q * sr / f).ceil() as usize;
                let w = cfg.window_fn.symmetric(len);
                let norm: f64 = w.iter().sum();
                let lead = len / 2;
                let (cos, sin) = (0..len)
                    .map(|n| {
                        let ph = -2.0 * std::f64::consts::PI * f * (n as f64 - lead as f64) / sr;
                        (w[n] / norm * ph.cos(), w[n] / norm * ph.sin())
                    })
                    .unzip();
                Atom { lead, cos, sin }
            })
            .collect();
        let max_lead = atoms.iter().map(|a| a.lead.max(a.cos.len() - a.lead)).max().unwrap_or(0);
        Ok(CqtKernel { atoms, hop_len: cfg.hop_len, max_lead })
    }

    pub fn n_bins(&self) -> usize {
        self.atoms.len()
    }

    /// Magnitudes, `n_frames x n_bins`, on the same frame grid as the STFT.
    pub fn apply(&self, clip: &AudioClip) -> Result<Mat> {
        if clip.samples.is_empty() {
            return Err(Error::invalid("empty audio clip"));
        }
        let n_frames = super::n_frames_for(clip.samples.len(), self.hop_len);
        // Zero-pad so every atom fits around every frame center.
        let pad = self.max_lead + 1;
        let mut padded = vec![0.0f64; clip.samples.len() + 2 * pad];
        for (d, s) in padded[pad..].iter_mut().zip(&clip.samples) {
            *d = *s as f64;
        }
        let mut out = Mat::zeros(n_frames, self.atoms.len());
        for t in 0..n_frames {
            let center = pad + t * self.hop_len;
            let row = out.row_mut(t);
            for (k, atom) in self.atoms.iter().enumerate() {
                let seg = &padded[center - atom.lead..center - atom.lead + atom.cos.len()];
                let re = dot(seg, &atom.cos);
                let im = dot(seg, &atom.sin);
                row[k] = (re * re + im * im).sqrt();
            }
        }
        Ok(out)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let chunks = a.len() / 8;
    for (ca, cb) in a.chunks_exact(8).zip(b.chunks_exact(8)) {
        for i in 0..8 {
            acc[i] += ca[i] * cb[i];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    acc.iter().sum::<f64>() + tail
}

pub fn cqt_spectrogram(clip: &AudioClip, cfg: &FeatureConfig) -> Result<Mat> {
    CqtKernel::new(cfg)?.apply(clip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::test_signals::sine;
    use crate::dsp::SAMPLE_RATE;

    fn argmax(row: &[f64]) -> usize {
        row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0
    }

    fn expected_bin(f: f64) -> usize {
        (24.0 * (f / 32.703).log2()).round() as usize
    }

    #[test]
    fn bin_frequency_formula() {
        let cfg = FeatureConfig::default();
        assert!((cqt_bin_frequency(&cfg, 24) - 65.406).abs() < 1e-9);
        assert_eq!(expected_bin(440.0), 90);
        assert_eq!(expected_bin(65.41), 24);
    }

    #[test]
    fn silence_is_zero() {
        let cfg = FeatureConfig::default();
        let clip = AudioClip::new(vec![0.0; 8192], SAMPLE_RATE);
        let c = cqt_spectrogram(&clip, &cfg).unwrap();
        assert_eq!(c.shape(), (9, 144));
        assert!(c.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn sines_peak_at_their_bins() {
        let cfg = FeatureConfig::default();
        let kernel = CqtKernel::new(&cfg).unwrap();
        for (f, bin) in [(65.41, 24), (440.0, 90)] {
            let c = kernel.apply(&sine(f, 3.0, SAMPLE_RATE)).unwrap();
            // Frames far enough from the edges that the longest atom is fully inside.
            for t in 40..c.rows() - 40 {
                assert_eq!(argmax(c.row(t)), bin, "{f} Hz frame {t}");
            }
        }
    }

    #[test]
    fn frame_grid_matches_stft() {
        let cfg = FeatureConfig::default();
        let c = cqt_spectrogram(&AudioClip::new(vec![0.1; 5000], SAMPLE_RATE), &cfg).unwrap();
        assert_eq!(c.rows(), 1 + 5000 / 1024);
    }

    #[test]
    fn above_nyquist_is_a_config_error() {
        let cfg = FeatureConfig { cqt_bins_per_octave: 12, ..FeatureConfig::default() };
        assert!(matches!(CqtKernel::new(&cfg), Err(Error::Config(_))));
    }
}
