//! Seeded synthetic corpora: sine chords drawn from a class-specific
//! pitch-class set over class-specific band-limited noise.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mam_core::dsp::{write_wav, AudioClip, SAMPLE_RATE};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::manifest::{Entry, Manifest, Split};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub clips_per_class: usize,
    pub min_s: f64,
    pub max_s: f64,
    pub seed: u64,
    pub sample_rate: u32,
    /// Give clips one to two tags instead of a single genre.
    pub multi_label: bool,
    /// Noise gain relative to a single chord note.
    pub noise_level: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_classes: 3,
            clips_per_class: 20,
            min_s: 10.0,
            max_s: 35.0,
            seed: 0,
            sample_rate: SAMPLE_RATE,
            multi_label: false,
            noise_level: 0.15,
        }
    }
}

/// Spectral signature of one synthetic class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProfile {
    /// Major-seventh chord tones on a root that steps around the circle of
    /// fifths with the class index.
    pub pitch_classes: [u8; 4],
    pub noise_center_hz: f64,
    pub noise_q: f64,
}

pub fn class_profile(class: usize, n_classes: usize) -> ClassProfile {
    let root = ((class * 7) % 12) as u8;
    let pitch_classes = [0u8, 4, 7, 11].map(|i| (root + i) % 12);
    // Noise centres spread log-uniformly over 300 Hz .. 8 kHz.
    let t = if n_classes > 1 { class as f64 / (n_classes - 1) as f64 } else { 0.5 };
    let noise_center_hz = 300.0 * (8000.0f64 / 300.0).powf(t);
    ClassProfile { pitch_classes, noise_center_hz, noise_q: 3.0 }
}

pub fn class_name(class: usize) -> String {
    format!("synth{class}")
}

fn midi_hz(midi: f64) -> f64 {
    440.0 * 2f64.powf((midi - 69.0) / 12.0)
}

/// Two-pole resonant band-pass (constant peak gain).
struct BandPass {
    b0: f64,
    a1: f64,
    a2: f64,
    x1: f64,
    x2: f64,
    y1: f64,
    y2: f64,
}

impl BandPass {
    fn new(center_hz: f64, q: f64, sr: f64) -> Self {
        let w = 2.0 * PI * center_hz / sr;
        let alpha = w.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        BandPass { b0: alpha / a0, a1: -2.0 * w.cos() / a0, a2: (1.0 - alpha) / a0, x1: 0.0, x2: 0.0, y1: 0.0, y2: 0.0 }
    }

    fn process(&mut self, x: f64) -> f64 {
        let y = self.b0 * (x - self.x2) - self.a1 * self.y1 - self.a2 * self.y2;
        self.x2 = self.x1;
        self.x1 = x;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Renders a clip mixing the given class profiles.
pub fn render_clip<R: Rng + ?Sized>(profiles: &[ClassProfile], duration_s: f64, sample_rate: u32, noise_level: f64, rng: &mut R) -> Vec<f32> {
    let sr = sample_rate as f64;
    let n = (duration_s * sr).round() as usize;
    let mut out = vec![0.0f64; n];
    let pitch_set: Vec<u8> = {
        let mut v: Vec<u8> = profiles.iter().flat_map(|p| p.pitch_classes).collect();
        v.sort_unstable();
        v.dedup();
        v
    };

    let mut start = 0usize;
    while start < n {
        let seg_len = ((rng.random_range(0.4..1.2) * sr) as usize).min(n - start);
        let chord = index::sample(rng, pitch_set.len(), 3.min(pitch_set.len()));
        for pi in chord.iter() {
            let octave = rng.random_range(3..=5) as f64;
            let f0 = midi_hz(12.0 * (octave + 1.0) + pitch_set[pi] as f64);
            let amp = rng.random_range(0.2..0.4);
            let tau = rng.random_range(0.3..1.0) * sr;
            let attack = 0.01 * sr;
            for k in 1..=3 {
                let f = f0 * k as f64;
                if f > 0.45 * sr {
                    break;
                }
                // Phasor recurrence instead of a sin() per sample.
                let (dc, ds) = ((2.0 * PI * f / sr).cos(), (2.0 * PI * f / sr).sin());
                let phase = rng.random_range(0.0..2.0 * PI);
                let (mut c, mut s) = (phase.cos(), phase.sin());
                let a = amp / k as f64;
                for (t, o) in out[start..start + seg_len].iter_mut().enumerate() {
                    let t = t as f64;
                    let env = (t / attack).min(1.0) * (-t / tau).exp();
                    *o += a * env * s;
                    let nc = c * dc - s * ds;
                    s = s * dc + c * ds;
                    c = nc;
                }
            }
        }
        start += seg_len;
    }

    for p in profiles {
        let mut filter = BandPass::new(p.noise_center_hz, p.noise_q, sr);
        let mut gain = noise_level;
        let mut target = noise_level;
        for (i, o) in out.iter_mut().enumerate() {
            if i % (sr as usize / 2) == 0 {
                target = noise_level * rng.random_range(0.5..1.5);
            }
            gain += (target - gain) * 1e-3;
            let w: f64 = rng.sample(StandardNormal);
            *o += gain * filter.process(w);
        }
    }

    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 0.0 { 0.8 / peak } else { 0.0 };
    out.into_iter().map(|v| (v * scale) as f32).collect()
}

/// Writes `audio/*.wav` and `manifest.tsv` under `out_dir`. Every clip gets
/// split `train`; ten-fold evaluation and validation carving work from that.
pub fn generate(cfg: &SynthConfig, out_dir: &Path) -> Result<Manifest> {
    if cfg.n_classes == 0 || cfg.clips_per_class == 0 {
        bail!("need at least one class and one clip per class");
    }
    if !(cfg.min_s > 0.0 && cfg.min_s <= cfg.max_s) {
        bail!("need 0 < min_s <= max_s");
    }
    let audio_dir = out_dir.join("audio");
    std::fs::create_dir_all(&audio_dir).with_context(|| format!("creating {}", audio_dir.display()))?;
    let profiles: Vec<ClassProfile> = (0..cfg.n_classes).map(|c| class_profile(c, cfg.n_classes)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut entries = Vec::new();
    for i in 0..cfg.n_classes * cfg.clips_per_class {
        let primary = i % cfg.n_classes;
        let mut classes = vec![primary];
        if cfg.multi_label && cfg.n_classes > 1 && rng.random_bool(0.4) {
            let other = (primary + rng.random_range(1..cfg.n_classes)) % cfg.n_classes;
            classes.push(other);
            classes.sort_unstable();
        }
        let duration = if cfg.max_s > cfg.min_s { rng.random_range(cfg.min_s..=cfg.max_s) } else { cfg.min_s };
        let mixed: Vec<ClassProfile> = classes.iter().map(|&c| profiles[c].clone()).collect();
        let samples = render_clip(&mixed, duration, cfg.sample_rate, cfg.noise_level, &mut rng);
        let clip_id = format!("clip{i:04}");
        let rel = PathBuf::from("audio").join(format!("{clip_id}.wav"));
        write_wav(&out_dir.join(&rel), &AudioClip::new(samples, cfg.sample_rate))?;
        entries.push(Entry {
            clip_id,
            path: rel,
            split: Split::Train,
            labels: classes.into_iter().map(class_name).collect(),
            duration_s: (duration * 1000.0).round() / 1000.0,
        });
    }
    let vocab = (0..cfg.n_classes).map(class_name).collect();
    let manifest = Manifest::new(vocab, entries, out_dir.to_path_buf())?;
    manifest.save(&out_dir.join("manifest.tsv"))?;
    Ok(manifest)
}
