use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mam_core::dsp::N_CHANNELS;
use mam_core::model::{encode, encode_backward, ModelConfig, ModelParams};
use mam_core::tensor::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bench(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut g = c.benchmark_group("encoder");
    g.sample_size(10);
    for (name, cfg, n) in [("tiny", ModelConfig::new(2, 32, 4), 64), ("base", ModelConfig::base(), 128)] {
        let params = ModelParams::init(&cfg, &mut rng).unwrap();
        let x = Mat::from_fn(n, N_CHANNELS, |_, _| rng.random_range(-1.0..1.0));
        g.bench_function(BenchmarkId::new("forward", name), |b| {
            b.iter(|| encode(&x, &cfg, &params, None, None).unwrap())
        });
        let acts = encode(&x, &cfg, &params, None, None).unwrap();
        let d_top = Mat::from_fn(n, cfg.hidden_dim, |_, _| 1e-3);
        g.bench_function(BenchmarkId::new("backward", name), |b| {
            b.iter(|| {
                let mut grads = params.zeros_like();
                encode_backward(&x, &cfg, &params, &acts, &d_top, &mut grads);
                grads
            })
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
