use criterion::{criterion_group, criterion_main, Criterion};
use mam_core::dsp::FrameSequence;
use mam_core::masking::{apply_mask, sample_plan, CcmConfig, CfmConfig, Objective};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bench(c: &mut Criterion) {
    let (cfm, ccm) = (CfmConfig::default(), CcmConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    c.bench_function("sample_plan_1000", |b| {
        b.iter(|| sample_plan(1000, Objective::Both, &cfm, &ccm, &mut rng).unwrap())
    });
    let seq = FrameSequence::zeros(1000);
    let plan = sample_plan(1000, Objective::Both, &cfm, &ccm, &mut rng).unwrap();
    c.bench_function("apply_mask_1000", |b| b.iter(|| apply_mask(&seq, &plan, &mut rng).unwrap()));
}

criterion_group!(benches, bench);
criterion_main!(benches);
