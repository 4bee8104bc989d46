//! Audio front end: PCM clips in, 324-channel normalized frame sequences out.
//!
//! Channel order is fixed (see [`CHANNEL_LAYOUT`]): chroma, MFCC, MFCC delta,
//! log-mel and log-CQT.

mod cache;
mod chroma;
mod cqt;
mod mel;
mod mfcc;
mod normalize;
mod stft;
mod wav;

pub use cache::{read_feature_cache, write_feature_cache, FEATURE_CACHE_MAGIC, FEATURE_CACHE_VERSION};
pub use chroma::{chromagram, pitch_class_of};
pub use cqt::{cqt_bin_frequency, cqt_spectrogram, CqtKernel};
pub use mel::{hz_to_mel, mel_band_centers, mel_spectrogram, mel_to_hz, MelFilterbank};
pub use mfcc::{delta, dct_ii_ortho, mfcc_with_delta};
pub use normalize::{cmvn, log_compress, CMVN_STD_FLOOR};
pub use stft::{n_frames_for, stft_magnitude};
pub use wav::{read_wav, write_wav};

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Mat;

pub const SAMPLE_RATE: u32 = 44_100;
/// Width of one feature frame.
pub const N_CHANNELS: usize = 324;
/// Longest sequence the encoder accepts.
pub const MAX_FRAMES: usize = 1600;

/// Named contiguous channel range inside a frame vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelGroup {
    pub name: &'static str,
    pub start: usize,
    pub len: usize,
}

impl ChannelGroup {
    pub fn end(&self) -> usize {
        self.start + self.len
    }
}

pub const CHROMA: ChannelGroup = ChannelGroup { name: "chroma", start: 0, len: 12 };
pub const MFCC: ChannelGroup = ChannelGroup { name: "mfcc", start: 12, len: 20 };
pub const MFCC_DELTA: ChannelGroup = ChannelGroup { name: "mfcc_delta", start: 32, len: 20 };
pub const MEL: ChannelGroup = ChannelGroup { name: "mel", start: 52, len: 128 };
pub const CQT: ChannelGroup = ChannelGroup { name: "cqt", start: 180, len: 144 };

pub const CHANNEL_LAYOUT: [ChannelGroup; 5] = [CHROMA, MFCC, MFCC_DELTA, MEL, CQT];

/// Mono PCM audio with amplitudes in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        AudioClip { samples, sample_rate }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Linear-interpolation resampling. Adequate for analysis, not for listening.
    pub fn resampled(&self, target_rate: u32) -> AudioClip {
        if self.sample_rate == target_rate || self.samples.is_empty() {
            return AudioClip::new(self.samples.clone(), target_rate);
        }
        let ratio = self.sample_rate as f64 / target_rate as f64;
        let out_len = ((self.samples.len() as f64) / ratio).floor().max(1.0) as usize;
        let last = self.samples.len() - 1;
        let samples = (0..out_len)
            .map(|i| {
                let pos = i as f64 * ratio;
                let i0 = (pos.floor() as usize).min(last);
                let i1 = (i0 + 1).min(last);
                let frac = pos - i0 as f64;
                (self.samples[i0] as f64 * (1.0 - frac) + self.samples[i1] as f64 * frac) as f32
            })
            .collect();
        AudioClip::new(samples, target_rate)
    }

    /// Splits a clip longer than `max_s` into consecutive pieces whose lengths
    /// are drawn uniformly from `[min_s, max_s]`. A trailing remnant shorter
    /// than `min_s` is dropped. Clips no longer than `max_s` come back whole.
    pub fn crop_segments<R: Rng + ?Sized>(&self, min_s: f64, max_s: f64, rng: &mut R) -> Vec<AudioClip> {
        if self.duration_s() <= max_s {
            return vec![self.clone()];
        }
        let sr = self.sample_rate as f64;
        let mut out = Vec::new();
        let mut start = 0usize;
        loop {
            let len = (rng.random_range(min_s..=max_s) * sr).round() as usize;
            let remaining = self.samples.len() - start;
            if remaining < (min_s * sr).round() as usize {
                break;
            }
            let take = len.min(remaining);
            out.push(AudioClip::new(self.samples[start..start + take].to_vec(), self.sample_rate));
            start += take;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowFn {
    Hamming,
    Hann,
}

impl WindowFn {
    /// Periodic window of length `n` (suited to FFT analysis).
    pub fn periodic(self, n: usize) -> Vec<f64> {
        self.build(n, n as f64)
    }

    /// Symmetric window of length `n`.
    pub fn symmetric(self, n: usize) -> Vec<f64> {
        self.build(n, (n.max(2) - 1) as f64)
    }

    fn build(self, n: usize, denom: f64) -> Vec<f64> {
        let (a0, a1) = match self {
            WindowFn::Hamming => (0.54, 0.46),
            WindowFn::Hann => (0.5, 0.5),
        };
        if n == 1 {
            return vec![1.0];
        }
        (0..n)
            .map(|i| a0 - a1 * (2.0 * std::f64::consts::PI * i as f64 / denom).cos())
            .collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            WindowFn::Hamming => "hamming",
            WindowFn::Hann => "hann",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "hamming" => Some(WindowFn::Hamming),
            "hann" => Some(WindowFn::Hann),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub window_len: usize,
    pub hop_len: usize,
    pub window_fn: WindowFn,
    pub n_mels: usize,
    pub n_cqt_bins: usize,
    pub cqt_bins_per_octave: usize,
    pub cqt_fmin: f64,
    pub n_mfcc: usize,
    pub delta_width: usize,
    pub epsilon: f64,
    pub max_frames: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            sample_rate: SAMPLE_RATE,
            window_len: 2048,
            hop_len: 1024,
            window_fn: WindowFn::Hamming,
            n_mels: 128,
            n_cqt_bins: 144,
            cqt_bins_per_octave: 24,
            cqt_fmin: 32.703,
            n_mfcc: 20,
            delta_width: 9,
            epsilon: 1e-6,
            max_frames: MAX_FRAMES,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::config("sample_rate must be positive"));
        }
        if !self.window_len.is_power_of_two() {
            return Err(Error::config(format!("window_len {} is not a power of two", self.window_len)));
        }
        if self.hop_len == 0 || self.hop_len > self.window_len {
            return Err(Error::config("hop_len must be in 1..=window_len"));
        }
        if self.delta_width < 3 || self.delta_width % 2 == 0 {
            return Err(Error::config("delta_width must be odd and at least 3"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon must be positive"));
        }
        if self.n_mels == 0 || self.n_mfcc == 0 || self.n_mfcc > self.n_mels {
            return Err(Error::config("need 0 < n_mfcc <= n_mels"));
        }
        if self.n_cqt_bins == 0 || self.cqt_bins_per_octave == 0 || !(self.cqt_fmin > 0.0) {
            return Err(Error::config("CQT bin count, resolution and fmin must be positive"));
        }
        if self.max_frames == 0 {
            return Err(Error::config("max_frames must be positive"));
        }
        Ok(())
    }

    /// Frame width produced by this configuration.
    pub fn n_channels(&self) -> usize {
        12 + 2 * self.n_mfcc + self.n_mels + self.n_cqt_bins
    }

    pub fn n_fft_bins(&self) -> usize {
        self.window_len / 2 + 1
    }
}

/// `n_frames x 324` feature matrix, row-major `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    n_frames: usize,
    data: Vec<f32>,
}

impl FrameSequence {
    pub fn new(n_frames: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != n_frames * N_CHANNELS {
            return Err(Error::invalid(format!(
                "frame data has {} values, expected {} x {}",
                data.len(),
                n_frames,
                N_CHANNELS
            )));
        }
        Ok(FrameSequence { n_frames, data })
    }

    pub fn zeros(n_frames: usize) -> Self {
        FrameSequence { n_frames, data: vec![0.0; n_frames * N_CHANNELS] }
    }

    pub fn from_mat(m: &Mat) -> Result<Self> {
        if m.cols() != N_CHANNELS {
            return Err(Error::invalid(format!("expected {} channels, got {}", N_CHANNELS, m.cols())));
        }
        Ok(FrameSequence {
            n_frames: m.rows(),
            data: m.as_slice().iter().map(|&x| x as f32).collect(),
        })
    }

    pub fn to_mat(&self) -> Mat {
        Mat::from_vec(
            self.n_frames,
            N_CHANNELS,
            self.data.iter().map(|&x| x as f64).collect(),
        )
    }

    #[inline]
    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    #[inline]
    pub fn n_channels(&self) -> usize {
        N_CHANNELS
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn frame(&self, i: usize) -> &[f32] {
        &self.data[i * N_CHANNELS..(i + 1) * N_CHANNELS]
    }

    #[inline]
    pub fn frame_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * N_CHANNELS..(i + 1) * N_CHANNELS]
    }

    /// Frames `start..start + len` as a new sequence.
    pub fn window(&self, start: usize, len: usize) -> FrameSequence {
        FrameSequence {
            n_frames: len,
            data: self.data[start * N_CHANNELS..(start + len) * N_CHANNELS].to_vec(),
        }
    }

    pub fn truncated(mut self, max_frames: usize) -> FrameSequence {
        if self.n_frames > max_frames {
            self.n_frames = max_frames;
            self.data.truncate(max_frames * N_CHANNELS);
        }
        self
    }
}

/// Precomputed analysis state (window, mel bank, CQT atoms, DCT basis) for one
/// [`FeatureConfig`]. Build once and reuse across clips.
pub struct FeatureExtractor {
    cfg: FeatureConfig,
    mel: MelFilterbank,
    cqt: CqtKernel,
}

impl FeatureExtractor {
    pub fn new(cfg: FeatureConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.n_channels() != N_CHANNELS {
            return Err(Error::config(format!(
                "feature configuration yields {} channels, the frame layout requires {}",
                cfg.n_channels(),
                N_CHANNELS
            )));
        }
        let mel = MelFilterbank::new(&cfg);
        let cqt = CqtKernel::new(&cfg)?;
        Ok(FeatureExtractor { cfg, mel, cqt })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn extract(&self, clip: &AudioClip) -> Result<FrameSequence> {
        let cfg = &self.cfg;
        if clip.sample_rate != cfg.sample_rate {
            return Err(Error::invalid(format!(
                "clip sample rate {} differs from configured {}",
                clip.sample_rate, cfg.sample_rate
            )));
        }
        let mag = stft_magnitude(clip, cfg)?;
        let n = mag.rows();
        let chroma = chromagram(&mag, cfg)?;
        let log_mel = log_compress(&self.mel.apply(&mag)?, cfg.epsilon)?;
        let mut cqt = self.cqt.apply(clip)?;
        if cqt.rows() != n {
            return Err(Error::invalid("CQT and STFT frame counts disagree"));
        }
        cqt = log_compress(&cqt, cfg.epsilon)?;
        let mfcc = mfcc_with_delta(&log_mel, cfg)?;

        let keep = n.min(cfg.max_frames);
        let mut all = Mat::zeros(keep, N_CHANNELS);
        all.set_cols(CHROMA.start, &chroma.slice_rows(0, keep));
        all.set_cols(MFCC.start, &mfcc.slice_rows(0, keep));
        all.set_cols(MEL.start, &log_mel.slice_rows(0, keep));
        all.set_cols(CQT.start, &cqt.slice_rows(0, keep));
        FrameSequence::from_mat(&cmvn(&all))
    }
}

/// Full pipeline for a single clip. Prefer [`FeatureExtractor`] when
/// processing many clips with one configuration.
pub fn extract_features(clip: &AudioClip, cfg: &FeatureConfig) -> Result<FrameSequence> {
    FeatureExtractor::new(cfg.clone())?.extract(clip)
}
