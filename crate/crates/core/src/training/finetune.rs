use std::fmt;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::loss::{binary_cross_entropy, cross_entropy};
use super::optim::{adam_step, clip_grad_norm, OptimizerConfig, TrainState};
use crate::dsp::FrameSequence;
use crate::error::{Error, Result};
use crate::eval::{accuracy, pr_auc_macro, PredictionSet};
use crate::model::{
    encode, encode_backward, task_head_backward, task_head_forward, Dropout, ModelConfig, ModelParams, TaskKind,
};
use crate::tensor::Mat;

/// Hyper-parameter sets searched during finetuning.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneGrid {
    pub batch_sizes: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub epochs: Vec<usize>,
    pub dropout_rates: Vec<f64>,
}

impl Default for FinetuneGrid {
    fn default() -> Self {
        FinetuneGrid {
            batch_sizes: vec![16, 24, 32],
            learning_rates: vec![2e-5, 3e-5, 5e-5],
            epochs: vec![2, 3, 4],
            dropout_rates: vec![0.05, 0.1],
        }
    }
}

/// One point of the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinetuneCell {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub dropout_rate: f64,
}

impl FinetuneGrid {
    pub fn validate(&self) -> Result<()> {
        if self.batch_sizes.is_empty()
            || self.learning_rates.is_empty()
            || self.epochs.is_empty()
            || self.dropout_rates.is_empty()
        {
            return Err(Error::config("every finetune grid axis needs at least one value"));
        }
        if self.batch_sizes.contains(&0) || self.epochs.contains(&0) {
            return Err(Error::config("batch sizes and epochs must be positive"));
        }
        if self.learning_rates.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::config("learning rates must be positive"));
        }
        if self.dropout_rates.iter().any(|&d| !(0.0..1.0).contains(&d)) {
            return Err(Error::config("dropout rates must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Cartesian product in axis order (batch size outermost).
    pub fn cells(&self) -> Vec<FinetuneCell> {
        let mut out = Vec::new();
        for &batch_size in &self.batch_sizes {
            for &learning_rate in &self.learning_rates {
                for &epochs in &self.epochs {
                    for &dropout_rate in &self.dropout_rates {
                        out.push(FinetuneCell { batch_size, learning_rate, epochs, dropout_rate });
                    }
                }
            }
        }
        out
    }

    /// At most `max_cells` cells chosen with `seed`, in grid order.
    pub fn subsample(&self, max_cells: Option<usize>, seed: u64) -> Vec<FinetuneCell> {
        let cells = self.cells();
        match max_cells {
            Some(m) if m < cells.len() => {
                let mut picked = index::sample(&mut ChaCha8Rng::seed_from_u64(seed), cells.len(), m).into_vec();
                picked.sort_unstable();
                picked.into_iter().map(|i| cells[i]).collect()
            }
            _ => cells,
        }
    }
}

/// Finetuning settings beyond the grid itself.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneConfig {
    pub grid: FinetuneGrid,
    /// Desk-scale cap on the number of grid cells tried.
    pub max_cells: Option<usize>,
    /// Train only the task head.
    pub freeze_encoder: bool,
    pub seed: u64,
    /// Train on random windows of this many frames; inference averages the
    /// logits of consecutive windows of the same length.
    pub crop_frames: Option<usize>,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig { grid: FinetuneGrid::default(), max_cells: None, freeze_encoder: false, seed: 0, crop_frames: None }
    }
}

/// Ground truth for one example.
#[derive(Debug, Clone, PartialEq)]
pub enum Label {
    Class(usize),
    Tags(Vec<bool>),
}

/// A feature sequence with its label.
#[derive(Debug, Clone, Copy)]
pub struct Labeled<'a> {
    pub frames: &'a FrameSequence,
    pub label: &'a Label,
}

/// Validation metric of one grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub cell: FinetuneCell,
    pub metric: f64,
}

/// One row per trained cell plus the index of the selected one.
#[derive(Debug, Clone, PartialEq)]
pub struct GridReport {
    pub metric_name: &'static str,
    pub rows: Vec<GridRow>,
    pub best: usize,
}

impl fmt::Display for GridReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "batch_size\tlearning_rate\tepochs\tdropout\t{}\tselected", self.metric_name)?;
        for (i, r) in self.rows.iter().enumerate() {
            let c = r.cell;
            writeln!(
                f,
                "{}\t{:e}\t{}\t{}\t{:.6}\t{}",
                c.batch_size,
                c.learning_rate,
                c.epochs,
                c.dropout_rate,
                r.metric,
                if i == self.best { "*" } else { "" }
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub best: Checkpoint,
    pub best_cell: FinetuneCell,
    pub report: GridReport,
}

fn check_labels(kind: TaskKind, examples: &[Labeled<'_>], split: &str) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::invalid(format!("{split} split is empty")));
    }
    for ex in examples {
        let ok = match (kind, ex.label) {
            (TaskKind::Classify { n_classes }, Label::Class(c)) => *c < n_classes,
            (TaskKind::Tag { n_tags }, Label::Tags(t)) => t.len() == n_tags,
            _ => false,
        };
        if !ok {
            return Err(Error::invalid(format!("{split} label {:?} does not fit task {kind:?}", ex.label)));
        }
    }
    Ok(())
}

/// Logits for `frames`. With a window, the clip is cut into consecutive
/// windows (the last one aligned to the end) whose logits are averaged.
pub fn predict_logits(cfg: &ModelConfig, params: &ModelParams, frames: &FrameSequence, window: Option<usize>) -> Result<Vec<f64>> {
    let n = frames.n_frames();
    let starts: Vec<usize> = match window {
        Some(w) if n > w => {
            let count = n.div_ceil(w);
            (0..count).map(|i| (i * w).min(n - w)).collect()
        }
        _ => vec![0],
    };
    let len = window.map_or(n, |w| w.min(n));
    let mut sum: Option<Vec<f64>> = None;
    for &s in &starts {
        let x = frames.window(s, len).to_mat();
        let acts = encode(&x, cfg, params, None, None)?;
        let (logits, _) = task_head_forward(acts.last(), params, None, None)?;
        match &mut sum {
            None => sum = Some(logits),
            Some(acc) => acc.iter_mut().zip(&logits).for_each(|(a, l)| *a += l),
        }
    }
    let mut out = sum.expect("at least one window");
    out.iter_mut().for_each(|v| *v /= starts.len() as f64);
    Ok(out)
}

/// Validation metric: accuracy for classification, macro PR-AUC for tags.
fn validation_metric(
    kind: TaskKind,
    cfg: &ModelConfig,
    params: &ModelParams,
    valid: &[Labeled<'_>],
    window: Option<usize>,
) -> Result<f64> {
    let k = kind.n_outputs();
    let mut scores = Mat::zeros(valid.len(), k);
    let mut labels = vec![false; valid.len() * k];
    for (r, ex) in valid.iter().enumerate() {
        scores.row_mut(r).copy_from_slice(&predict_logits(cfg, params, ex.frames, window)?);
        match ex.label {
            Label::Class(c) => labels[r * k + c] = true,
            Label::Tags(t) => labels[r * k..(r + 1) * k].copy_from_slice(t),
        }
    }
    let preds = PredictionSet::new(scores, labels)?;
    match kind {
        TaskKind::Classify { .. } => accuracy(&preds),
        TaskKind::Tag { .. } => Ok(pr_auc_macro(&preds)?.value),
    }
}

fn train_cell(
    base: &Checkpoint,
    kind: TaskKind,
    train: &[Labeled<'_>],
    cell: FinetuneCell,
    cfg: &FinetuneConfig,
    opt: &OptimizerConfig,
) -> Result<ModelParams> {
    let model = &base.config;
    let mut params = base.params.clone();
    params.attach_task_head(kind, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let mut grads = params.zeros_like();
    let mut state = TrainState::new(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cell.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);
        for batch in order.chunks(cell.batch_size) {
            grads.tensors_mut().into_iter().for_each(|t| t.data.fill(0.0));
            for &i in batch {
                let ex = train[i];
                let n = ex.frames.n_frames();
                let window = match cfg.crop_frames {
                    Some(c) if n > c => ex.frames.window(rng.random_range(0..=n - c), c),
                    _ => ex.frames.clone(),
                };
                let x = window.to_mat();
                let mut dropout = Dropout { rate: cell.dropout_rate, rng: &mut rng };
                let acts = encode(&x, model, &params, None, Some(&mut dropout))?;
                let (logits, cache) = task_head_forward(acts.last(), &params, None, Some(&mut dropout))?;
                let (_, d_logits) = match ex.label {
                    Label::Class(c) => cross_entropy(&logits, *c)?,
                    Label::Tags(t) => binary_cross_entropy(&logits, t)?,
                };
                let d_top = task_head_backward(&params, &cache, &d_logits, &mut grads);
                if !cfg.freeze_encoder {
                    encode_backward(&x, model, &params, &acts, &d_top, &mut grads);
                }
            }
            let inv = 1.0 / batch.len() as f64;
            for t in grads.tensors_mut() {
                t.data.iter_mut().for_each(|g| *g *= inv);
            }
            if let Some(max) = opt.clip_norm {
                clip_grad_norm(&mut grads, max);
            }
            adam_step(&mut params, &grads, &mut state, cell.learning_rate, opt)?;
        }
    }
    Ok(params)
}

/// Trains a task head (and, unless frozen, the encoder) from `base` for every
/// selected grid cell, keeping the cell with the best validation metric.
/// Each cell uses a constant learning rate.
pub fn finetune(
    base: &Checkpoint,
    train: &[Labeled<'_>],
    valid: &[Labeled<'_>],
    kind: TaskKind,
    cfg: &FinetuneConfig,
    opt: &OptimizerConfig,
) -> Result<FinetuneOutcome> {
    cfg.grid.validate()?;
    opt.validate()?;
    if kind.n_outputs() == 0 {
        return Err(Error::invalid("task has no outputs"));
    }
    check_labels(kind, train, "train")?;
    check_labels(kind, valid, "valid")?;
    let metric_name = match kind {
        TaskKind::Classify { .. } => "accuracy",
        TaskKind::Tag { .. } => "pr_auc_macro",
    };
    let mut rows: Vec<GridRow> = Vec::new();
    let mut best: Option<(usize, ModelParams)> = None;
    for cell in cfg.grid.subsample(cfg.max_cells, cfg.seed) {
        let params = train_cell(base, kind, train, cell, cfg, opt)?;
        let metric = validation_metric(kind, &base.config, &params, valid, cfg.crop_frames)?;
        let better = best.as_ref().is_none_or(|(i, _)| metric > rows[*i].metric);
        rows.push(GridRow { cell, metric });
        if better {
            best = Some((rows.len() - 1, params));
        }
    }
    let (best_idx, params) = best.expect("grid has at least one cell");
    let best_cell = rows[best_idx].cell;
    let mut config = base.config;
    config.dropout_rate = best_cell.dropout_rate;
    Ok(FinetuneOutcome {
        best: Checkpoint { config, params, state: TrainState::new(cfg.seed) },
        best_cell,
        report: GridReport { metric_name, rows, best: best_idx },
    })
}
