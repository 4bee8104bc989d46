use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::optim::adam_update;
use super::*;
use crate::dsp::{FrameSequence, N_CHANNELS};
use crate::masking::{apply_mask, sample_plan, CcmConfig, CfmConfig, MaskPlan, Objective};
use crate::model::{encode, reconstruction_head, ModelConfig, ModelParams, TaskKind};
use crate::tensor::Mat;

fn constant_diff(x: f64, rows: usize, cols: usize) -> (Mat, Mat) {
    (Mat::from_fn(rows, cols, |_, _| x + 0.25), Mat::from_fn(rows, cols, |_, _| 0.25))
}

#[test]
fn huber_branch_cases() {
    let all = vec![true; 12];
    for (x, expected) in [(0.5, 0.125), (-2.0, 1.5), (1.0, 0.5)] {
        let pred = Mat::from_fn(3, 4, |_, _| x);
        let target = Mat::zeros(3, 4);
        assert_eq!(huber_loss(&pred, &target, &all).unwrap(), expected);
    }
    // Both branches agree at the knee.
    assert_eq!(0.5 * 1.0f64 * 1.0, 1.0f64.abs() - 0.5);
    let (p, t) = constant_diff(0.5, 2, 2);
    assert!(matches!(huber_loss(&p, &t, &[false; 4]), Err(crate::Error::InvalidInput(_))));
    assert!(huber_loss(&p, &t, &[true; 3]).is_err());
}

proptest! {
    #[test]
    fn huber_matches_mse_and_mae_on_their_branches(xs in prop::collection::vec(-0.999f64..0.999, 1..40), ys in prop::collection::vec(1.0f64..50.0, 1..40), signs in prop::collection::vec(any::<bool>(), 40)) {
        let n = xs.len();
        let pred = Mat::from_vec(1, n, xs.clone());
        let small = huber_loss(&pred, &Mat::zeros(1, n), &vec![true; n]).unwrap();
        let mse = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
        prop_assert!((small - 0.5 * mse).abs() < 1e-12);

        let m = ys.len();
        let big: Vec<f64> = ys.iter().zip(&signs).map(|(y, &s)| if s { *y } else { -y }).collect();
        let large = huber_loss(&Mat::from_vec(1, m, big.clone()), &Mat::zeros(1, m), &vec![true; m]).unwrap();
        let mae = big.iter().map(|x| x.abs()).sum::<f64>() / m as f64;
        prop_assert!((large - (mae - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn unmasked_targets_do_not_affect_the_loss(seed in any::<u64>(), cell in 0usize..20, delta in -10.0f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pred = Mat::from_fn(4, 5, |_, _| rng.random_range(-2.0..2.0));
        let target = Mat::from_fn(4, 5, |_, _| rng.random_range(-2.0..2.0));
        let mut mask: Vec<bool> = (0..20).map(|_| rng.random_bool(0.5)).collect();
        mask[(cell + 1) % 20] = true;
        mask[cell] = false;
        let base = huber_loss(&pred, &target, &mask).unwrap();
        let mut t2 = target.clone();
        t2.as_mut_slice()[cell] += delta;
        prop_assert_eq!(base.to_bits(), huber_loss(&pred, &t2, &mask).unwrap().to_bits());
    }
}

#[test]
fn huber_gradient_is_masked_and_clamped() {
    let pred = Mat::from_vec(1, 4, vec![0.3, -3.0, 2.0, 0.0]);
    let (sum, count, g) = huber_sum_and_grad(&pred, &Mat::zeros(1, 4), &[true, true, false, true]).unwrap();
    assert_eq!(count, 3);
    assert_eq!(sum, 0.5 * 0.3 * 0.3 + 2.5);
    assert_eq!(g.as_slice(), &[0.3, -1.0, 0.0, 0.0]);
}

#[test]
fn classification_and_tagging_losses() {
    let (l, g) = cross_entropy(&[0.0, 0.0], 1).unwrap();
    assert!((l - 2f64.ln()).abs() < 1e-15);
    assert_eq!(g, vec![0.5, -0.5]);
    let (l, g) = binary_cross_entropy(&[0.0, 0.0], &[true, false]).unwrap();
    assert!((l - 2f64.ln()).abs() < 1e-15);
    assert_eq!(g, vec![-0.25, 0.25]);
    // Large logits stay finite.
    let (l, _) = binary_cross_entropy(&[800.0, -800.0], &[false, true]).unwrap();
    assert_eq!(l, 800.0);
    assert!(cross_entropy(&[1.0], 3).is_err());
}

#[test]
fn learning_rate_schedule() {
    let peak = lr_schedule(8000, 768, 8000).unwrap();
    assert!((peak - 1.0 / (768.0f64 * 8000.0).sqrt()).abs() < 1e-18);
    assert!((peak - 4.0344e-4).abs() < 1e-8);
    let half = lr_schedule(4000, 768, 8000).unwrap();
    assert!((half - peak / 2.0).abs() < 1e-18);
    let mut prev = 0.0;
    for step in 1..=8000 {
        let lr = lr_schedule(step, 768, 8000).unwrap();
        assert!(lr >= prev && lr <= peak);
        prev = lr;
    }
    for step in 8001..20000 {
        let lr = lr_schedule(step, 768, 8000).unwrap();
        assert!(lr <= prev);
        prev = lr;
    }
    assert!(matches!(lr_schedule(0, 768, 8000), Err(crate::Error::InvalidInput(_))));
}

#[test]
fn adam_single_scalar_step() {
    let cfg = OptimizerConfig::default();
    let (mut p, mut m, mut v) = ([1.0], [0.0], [0.0]);
    adam_update(&mut p, &[1.0], &mut m, &mut v, 1, 0.01, &cfg);
    // m = 0.1, v = 0.001, both bias corrections give exactly the gradient.
    let m_hat = 0.1 / (1.0 - 0.9);
    let v_hat = 0.001f64 / (1.0 - 0.999);
    let expected = 1.0 - 0.01 * m_hat / (v_hat.sqrt() + 1e-6);
    assert!((p[0] - expected).abs() < 1e-12);
    assert!((p[0] - (1.0 - 0.01 / (1.0 + 1e-6))).abs() < 1e-12);
}

#[test]
fn adam_two_steps_on_a_quadratic() {
    // f(a, b) = a^2 + 3 b^2, reference trace from a plain loop.
    let cfg = OptimizerConfig::default();
    let lr = 0.1;
    let grad = |p: &[f64]| vec![2.0 * p[0], 6.0 * p[1]];
    let mut p = vec![1.0, -2.0];
    let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
    let mut reference = p.clone();
    let (mut rm, mut rv) = ([0.0f64; 2], [0.0f64; 2]);
    for t in 1..=2u64 {
        let g = grad(&p);
        adam_update(&mut p, &g, &mut m, &mut v, t, lr, &cfg);
        let rg = grad(&reference);
        for i in 0..2 {
            rm[i] = 0.9 * rm[i] + 0.1 * rg[i];
            rv[i] = 0.999 * rv[i] + 0.001 * rg[i] * rg[i];
            let mh = rm[i] / (1.0 - 0.9f64.powi(t as i32));
            let vh = rv[i] / (1.0 - 0.999f64.powi(t as i32));
            reference[i] -= lr * mh / (vh.sqrt() + 1e-6);
        }
    }
    for i in 0..2 {
        assert!((p[i] - reference[i]).abs() < 1e-12);
    }
}

fn tiny_model() -> ModelConfig {
    ModelConfig { dropout_rate: 0.0, ..ModelConfig::new(1, 8, 2) }
}

#[test]
fn adam_zero_gradient_keeps_params_and_decays_moments() {
    let cfg = tiny_model();
    let mut params = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let before = params.clone();
    let grads = params.zeros_like();
    let mut state = TrainState::new(0);
    state.first_moments = params.tensors().iter().map(|t| vec![0.0; t.data.len()]).collect();
    state.second_moments = state.first_moments.clone();
    adam_step(&mut params, &grads, &mut state, 0.1, &OptimizerConfig::default()).unwrap();
    assert_eq!(params, before);
    state.first_moments[0][0] = 1.0;
    state.second_moments[0][0] = 1.0;
    adam_step(&mut params, &grads, &mut state, 0.0, &OptimizerConfig::default()).unwrap();
    assert_eq!(state.first_moments[0][0], 0.9);
    assert_eq!(state.second_moments[0][0], 0.999);
    assert_eq!(state.step, 2);
}

#[test]
fn adam_reports_the_offending_tensor() {
    let cfg = tiny_model();
    let mut params = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut grads = params.zeros_like();
    grads.layers[0].key.bias[3] = f64::NAN;
    let err = adam_step(&mut params, &grads, &mut TrainState::new(0), 0.1, &OptimizerConfig::default()).unwrap_err();
    match err {
        crate::Error::Numerical { tensor, .. } => assert_eq!(tensor, "layers.0.attention.key.bias"),
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn clipping_caps_the_global_norm() {
    let cfg = tiny_model();
    let params = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut grads = params.zeros_like();
    grads.input_projection.bias[0] = 3.0;
    grads.reconstruction.out.bias[0] = 4.0;
    assert_eq!(clip_grad_norm(&mut grads, 10.0), 5.0);
    assert_eq!(grads.input_projection.bias[0], 3.0);
    assert_eq!(clip_grad_norm(&mut grads, 1.0), 5.0);
    assert!((grads.input_projection.bias[0] - 0.6).abs() < 1e-15);
    assert!((grads.reconstruction.out.bias[0] - 0.8).abs() < 1e-15);
}

fn random_seq(n: usize, seed: u64) -> FrameSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FrameSequence::new(n, (0..n * N_CHANNELS).map(|_| rng.random_range(-1.5f32..1.5)).collect()).unwrap()
}

#[test]
fn masked_reconstruction_gradients_match_finite_differences() {
    let cfg = ModelConfig { dropout_rate: 0.0, ..ModelConfig::new(2, 16, 2) };
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut params = ModelParams::init(&cfg, &mut rng).unwrap();
    for t in params.tensors_mut() {
        t.data.iter_mut().for_each(|v| *v += rng.random_range(-0.2..0.2));
    }
    let seq = random_seq(8, 22);
    let plan = sample_plan(8, Objective::Both, &CfmConfig::default(), &CcmConfig::default(), &mut rng).unwrap();
    let (masked, mask) = apply_mask(&seq, &plan, &mut rng).unwrap();
    let report =
        reconstruction_gradient_check(&cfg, &params, &masked.to_mat(), &seq.to_mat(), &mask, 1e-5, 1e-6).unwrap();
    assert_eq!(report.len(), params.tensors().len());
    for r in &report {
        assert!(r.max_rel_error < 1e-4, "{}: {}", r.name, r.max_rel_error);
    }
}

fn checkpoint_with_head() -> Checkpoint {
    let cfg = ModelConfig { dropout_rate: 0.1, ..ModelConfig::new(2, 8, 2) };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut params = ModelParams::init(&cfg, &mut rng).unwrap();
    params.attach_task_head(TaskKind::Tag { n_tags: 5 }, &mut rng);
    let mut state = TrainState::new(99);
    state.step = 17;
    state.first_moments = params.tensors().iter().map(|t| t.data.iter().map(|v| v * 0.5).collect()).collect();
    state.second_moments = params.tensors().iter().map(|t| t.data.iter().map(|v| v * v).collect()).collect();
    Checkpoint { config: cfg, params, state }
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let ck = checkpoint_with_head();
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, &ck, Dtype::F64).unwrap();
    assert_eq!(&bytes[..4], b"MCCK");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), CHECKPOINT_VERSION);
    let back = read_checkpoint(bytes.as_slice()).unwrap();
    assert_eq!(back, ck);

    let x = random_seq(6, 1).to_mat();
    let before = reconstruction_head(encode(&x, &ck.config, &ck.params, None, None).unwrap().last(), &ck.params);
    let after = reconstruction_head(encode(&x, &back.config, &back.params, None, None).unwrap().last(), &back.params);
    let bits = |m: &Mat| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&before), bits(&after));

    let mut again = Vec::new();
    write_checkpoint(&mut again, &back, Dtype::F64).unwrap();
    assert_eq!(bytes, again);
}

#[test]
fn f32_checkpoints_round_trip_through_single_precision() {
    let ck = checkpoint_with_head();
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, &ck, Dtype::F32).unwrap();
    let back = read_checkpoint(bytes.as_slice()).unwrap();
    for (a, b) in ck.params.tensors().iter().zip(back.params.tensors()) {
        assert_eq!(a.name, b.name);
        for (x, y) in a.data.iter().zip(b.data) {
            assert_eq!(*x as f32 as f64, *y);
        }
    }
    assert_eq!(back.state, ck.state);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let ck = checkpoint_with_head();
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, &ck, Dtype::F64).unwrap();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(read_checkpoint(bad.as_slice()), Err(crate::Error::Format(_))));
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(read_checkpoint(bad.as_slice()), Err(crate::Error::Format(_))));
    for cut in [3, 10, 100, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(read_checkpoint(&bytes[..cut]), Err(crate::Error::Format(_))), "cut {cut}");
    }
    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(read_checkpoint(long.as_slice()), Err(crate::Error::Format(_))));
}

fn small_pretrain(objective: Objective, steps: u64) -> PretrainConfig {
    PretrainConfig {
        batch_size: 2,
        total_steps: steps,
        objective,
        seed: 5,
        checkpoint_every: 0,
        crop_frames: Some(24),
        ..PretrainConfig::default()
    }
}

fn quick_opt() -> OptimizerConfig {
    OptimizerConfig { warmup_steps: 10, ..OptimizerConfig::default() }
}

#[derive(Default)]
struct Recorder {
    plans: Vec<MaskPlan>,
    records: Vec<LossRecord>,
    checkpoints: Vec<u64>,
}

impl PretrainObserver for Recorder {
    fn on_plan(&mut self, _step: u64, plan: &MaskPlan) {
        self.plans.push(plan.clone());
    }
    fn on_step(&mut self, r: &LossRecord) -> crate::Result<()> {
        self.records.push(*r);
        Ok(())
    }
    fn on_checkpoint(&mut self, ck: &Checkpoint) -> crate::Result<()> {
        self.checkpoints.push(ck.state.step);
        Ok(())
    }
}

#[test]
fn pretraining_is_deterministic_and_respects_the_objective() {
    let corpus: Vec<FrameSequence> = (0..4).map(|i| random_seq(30 + i * 5, i as u64)).collect();
    let model = ModelConfig { dropout_rate: 0.1, ..ModelConfig::new(1, 8, 2) };
    let run = |objective| {
        let mut rec = Recorder::default();
        let cfg = PretrainConfig { checkpoint_every: 2, ..small_pretrain(objective, 5) };
        let ck = pretrain(&corpus, &model, &cfg, &quick_opt(), &mut rec).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &ck, Dtype::F64).unwrap();
        (rec, bytes)
    };
    let (a, bytes_a) = run(Objective::Both);
    let (b, bytes_b) = run(Objective::Both);
    assert_eq!(bytes_a, bytes_b);
    assert_eq!(a.records, b.records);
    assert_eq!(a.records.len(), 5);
    assert_eq!(a.checkpoints, vec![2, 4, 5]);
    assert!(a.records.iter().all(|r| r.loss.is_finite() && r.lrate > 0.0));
    assert_eq!(a.records[0].to_string().split('\t').count(), 3);

    let (cfm, _) = run(Objective::Cfm);
    assert!(cfm.plans.iter().all(|p| p.channel_blocks().is_empty() && !p.spans().is_empty()));
    let (ccm, _) = run(Objective::Ccm);
    assert!(ccm.plans.iter().all(|p| p.spans().is_empty() && p.channel_blocks().len() == 2));
}

#[test]
fn resuming_matches_an_uninterrupted_run() {
    let corpus: Vec<FrameSequence> = (0..3).map(|i| random_seq(40, 10 + i)).collect();
    let model = ModelConfig { dropout_rate: 0.1, ..ModelConfig::new(1, 8, 2) };
    let full = pretrain(&corpus, &model, &small_pretrain(Objective::Both, 6), &quick_opt(), &mut ()).unwrap();
    let half = pretrain(&corpus, &model, &small_pretrain(Objective::Both, 3), &quick_opt(), &mut ()).unwrap();
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, &half, Dtype::F64).unwrap();
    let restored = read_checkpoint(bytes.as_slice()).unwrap();
    let resumed = Pretrainer::resume(&corpus, restored, small_pretrain(Objective::Both, 6), quick_opt())
        .unwrap()
        .run(&mut ())
        .unwrap();
    assert_eq!(resumed, full);
}

#[test]
fn pretraining_rejects_bad_inputs() {
    let model = tiny_model();
    let cfg = small_pretrain(Objective::Both, 1);
    assert!(pretrain(&[], &model, &cfg, &quick_opt(), &mut ()).is_err());
    let short = ModelConfig { max_positions: 10, ..model };
    let long = [random_seq(30, 0)];
    let uncropped = PretrainConfig { crop_frames: None, ..cfg.clone() };
    assert!(matches!(
        pretrain(&long, &short, &uncropped, &quick_opt(), &mut ()),
        Err(crate::Error::SequenceTooLong { .. })
    ));
    let zero_batch = PretrainConfig { batch_size: 0, ..cfg };
    assert!(pretrain(&long, &model, &zero_batch, &quick_opt(), &mut ()).is_err());
}

#[test]
fn grid_cells_and_subsampling() {
    let grid = FinetuneGrid::default();
    let cells = grid.cells();
    assert_eq!(cells.len(), 54);
    assert_eq!(cells[0], FinetuneCell { batch_size: 16, learning_rate: 2e-5, epochs: 2, dropout_rate: 0.05 });
    let sub = grid.subsample(Some(5), 1);
    assert_eq!(sub.len(), 5);
    assert!(sub.iter().all(|c| cells.contains(c)));
    assert_eq!(sub, grid.subsample(Some(5), 1));
    assert_eq!(grid.subsample(Some(100), 1).len(), 54);
    let empty = FinetuneGrid { epochs: vec![], ..FinetuneGrid::default() };
    assert!(empty.validate().is_err());
}

fn toy_task() -> (Vec<FrameSequence>, Vec<Label>) {
    // Class is the sign of the first 32 channels.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut seqs = Vec::new();
    let mut labels = Vec::new();
    for i in 0..24 {
        let class = i % 2;
        let n = rng.random_range(6..12);
        let mut s = random_seq(n, 100 + i as u64);
        for f in 0..n {
            s.frame_mut(f)[..32].fill(if class == 1 { 2.0 } else { -2.0 });
        }
        seqs.push(s);
        labels.push(Label::Class(class));
    }
    (seqs, labels)
}

#[test]
fn finetuning_reports_every_cell_and_learns_a_toy_task() {
    let (seqs, labels) = toy_task();
    let examples: Vec<Labeled> = seqs.iter().zip(&labels).map(|(frames, label)| Labeled { frames, label }).collect();
    let (train, valid) = examples.split_at(16);
    let base = Checkpoint::initial(tiny_model(), 1).unwrap();
    let grid = FinetuneGrid { batch_sizes: vec![4], learning_rates: vec![1e-4, 1e-2], epochs: vec![8], dropout_rates: vec![0.0] };
    let cfg = FinetuneConfig { grid, seed: 2, ..FinetuneConfig::default() };
    let kind = TaskKind::Classify { n_classes: 2 };
    let out = finetune(&base, train, valid, kind, &cfg, &OptimizerConfig::default()).unwrap();
    assert_eq!(out.report.rows.len(), 2);
    assert_eq!(out.report.to_string().lines().count(), 3);
    assert_eq!(out.report.rows[out.report.best].cell, out.best_cell);
    assert_eq!(out.report.rows[1].metric, 1.0);
    assert!(out.best.params.task_head.is_some());

    let single = FinetuneConfig { max_cells: Some(1), ..cfg.clone() };
    assert_eq!(finetune(&base, train, valid, kind, &single, &OptimizerConfig::default()).unwrap().report.rows.len(), 1);
    assert!(finetune(&base, &[], valid, kind, &cfg, &OptimizerConfig::default()).is_err());
    assert!(finetune(&base, train, valid, TaskKind::Tag { n_tags: 2 }, &cfg, &OptimizerConfig::default()).is_err());
}

#[test]
fn frozen_encoder_finetuning_only_moves_the_head() {
    let (seqs, labels) = toy_task();
    let examples: Vec<Labeled> = seqs.iter().zip(&labels).map(|(frames, label)| Labeled { frames, label }).collect();
    let base = Checkpoint::initial(tiny_model(), 1).unwrap();
    let grid = FinetuneGrid { batch_sizes: vec![8], learning_rates: vec![1e-3], epochs: vec![1], dropout_rates: vec![0.1] };
    let cfg = FinetuneConfig { grid, freeze_encoder: true, seed: 2, ..FinetuneConfig::default() };
    let out = finetune(&base, &examples[..16], &examples[16..], TaskKind::Classify { n_classes: 2 }, &cfg, &OptimizerConfig::default()).unwrap();
    let mut tuned = out.best.params.clone();
    tuned.task_head = None;
    assert_eq!(tuned, base.params);
}

#[test]
fn windowed_prediction_averages_windows() {
    let cfg = tiny_model();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut params = ModelParams::init(&cfg, &mut rng).unwrap();
    params.attach_task_head(TaskKind::Classify { n_classes: 3 }, &mut rng);
    let seq = random_seq(10, 4);
    let whole = predict_logits(&cfg, &params, &seq, None).unwrap();
    assert_eq!(whole, predict_logits(&cfg, &params, &seq, Some(10)).unwrap());
    let windows = predict_logits(&cfg, &params, &seq, Some(4)).unwrap();
    let mut expected = vec![0.0; 3];
    for s in [0, 4, 6] {
        let l = predict_logits(&cfg, &params, &seq.window(s, 4), None).unwrap();
        expected.iter_mut().zip(&l).for_each(|(e, v)| *e += v);
    }
    for (w, e) in windows.iter().zip(&expected) {
        assert!((w - e / 3.0).abs() < 1e-15);
    }
}
