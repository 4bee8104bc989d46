use std::f64::consts::PI;

use criterion::{criterion_group, criterion_main, Criterion};
use mam_core::dsp::{cqt_spectrogram, stft_magnitude, AudioClip, FeatureConfig, FeatureExtractor};

fn chirp(seconds: f64, sr: u32) -> AudioClip {
    let n = (seconds * sr as f64) as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sr as f64;
            (0.5 * (2.0 * PI * (220.0 * t + 40.0 * t * t)).sin()) as f32
        })
        .collect();
    AudioClip::new(samples, sr)
}

fn bench(c: &mut Criterion) {
    let cfg = FeatureConfig::default();
    let clip = chirp(5.0, cfg.sample_rate);
    let mut g = c.benchmark_group("features_5s");
    g.sample_size(10);
    g.bench_function("stft", |b| b.iter(|| stft_magnitude(&clip, &cfg).unwrap()));
    g.bench_function("cqt", |b| b.iter(|| cqt_spectrogram(&clip, &cfg).unwrap()));
    let extractor = FeatureExtractor::new(cfg.clone()).unwrap();
    g.bench_function("extract", |b| b.iter(|| extractor.extract(&clip).unwrap()));
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
