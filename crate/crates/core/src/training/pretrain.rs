use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::loss::huber_sum_and_grad;
use super::optim::{adam_step, clip_grad_norm, OptimizerConfig, TrainState};
use crate::dsp::FrameSequence;
use crate::error::{Error, Result};
use crate::masking::{apply_mask, sample_plan, CcmConfig, CfmConfig, MaskPlan, Objective};
use crate::model::{encode, encode_backward, reconstruction_backward, reconstruction_forward, Dropout, ModelConfig, ModelParams};

/// Pre-training loop settings.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub batch_size: usize,
    pub total_steps: u64,
    pub objective: Objective,
    pub seed: u64,
    /// Emit a checkpoint every this many steps; 0 emits only the final one.
    pub checkpoint_every: u64,
    /// Train on random windows of this many frames instead of whole clips.
    pub crop_frames: Option<usize>,
    pub cfm: CfmConfig,
    pub ccm: CcmConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            batch_size: 64,
            total_steps: 200_000,
            objective: Objective::Both,
            seed: 0,
            checkpoint_every: 0,
            crop_frames: None,
            cfm: CfmConfig::default(),
            ccm: CcmConfig::default(),
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.total_steps == 0 {
            return Err(Error::config("batch_size and total_steps must be at least 1"));
        }
        if self.crop_frames == Some(0) {
            return Err(Error::config("crop_frames must be positive"));
        }
        self.cfm.validate()?;
        self.ccm.validate()
    }
}

/// One line of the loss log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub loss: f64,
    pub lrate: f64,
}

impl fmt::Display for LossRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}", self.step, self.loss, self.lrate)
    }
}

/// Hooks called while pre-training runs.
pub trait PretrainObserver {
    fn on_plan(&mut self, _step: u64, _plan: &MaskPlan) {}

    fn on_step(&mut self, _record: &LossRecord) -> Result<()> {
        Ok(())
    }

    fn on_checkpoint(&mut self, _checkpoint: &Checkpoint) -> Result<()> {
        Ok(())
    }
}

impl PretrainObserver for () {}

impl PretrainObserver for Vec<LossRecord> {
    fn on_step(&mut self, record: &LossRecord) -> Result<()> {
        self.push(*record);
        Ok(())
    }
}

/// Random stream for one step. Depends only on the seed and the step, so
/// batch composition, crops, masks and dropout are reproducible and a resumed
/// run continues exactly where it stopped.
fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// Stateful pre-training run over a borrowed corpus.
pub struct Pretrainer<'a> {
    corpus: &'a [FrameSequence],
    model: ModelConfig,
    cfg: PretrainConfig,
    opt: OptimizerConfig,
    params: ModelParams,
    grads: ModelParams,
    state: TrainState,
}

impl<'a> Pretrainer<'a> {
    /// Starts from parameters initialized with `cfg.seed`.
    pub fn new(corpus: &'a [FrameSequence], model: ModelConfig, cfg: PretrainConfig, opt: OptimizerConfig) -> Result<Self> {
        let start = Checkpoint::initial(model, cfg.seed)?;
        Self::resume(corpus, start, cfg, opt)
    }

    /// Continues from `checkpoint`, keeping its step count and moments.
    pub fn resume(corpus: &'a [FrameSequence], checkpoint: Checkpoint, cfg: PretrainConfig, opt: OptimizerConfig) -> Result<Self> {
        cfg.validate()?;
        opt.validate()?;
        checkpoint.config.validate()?;
        if corpus.is_empty() {
            return Err(Error::invalid("pre-training corpus is empty"));
        }
        for (i, seq) in corpus.iter().enumerate() {
            let longest = cfg.crop_frames.map_or(seq.n_frames(), |c| c.min(seq.n_frames()));
            if longest > checkpoint.config.max_positions {
                return Err(Error::SequenceTooLong { len: longest, max: checkpoint.config.max_positions });
            }
            if seq.n_frames() == 0 {
                return Err(Error::invalid(format!("corpus sequence {i} has no frames")));
            }
        }
        let grads = checkpoint.params.zeros_like();
        let mut state = checkpoint.state;
        state.seed = cfg.seed;
        Ok(Pretrainer { corpus, model: checkpoint.config, cfg, opt, params: checkpoint.params, grads, state })
    }

    pub fn step_count(&self) -> u64 {
        self.state.step
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint { config: self.model, params: self.params.clone(), state: self.state.clone() }
    }

    /// Runs one optimizer step and returns its log record.
    pub fn step(&mut self, observer: &mut dyn PretrainObserver) -> Result<LossRecord> {
        let step = self.state.step + 1;
        let mut rng = step_rng(self.cfg.seed, step);
        self.grads.tensors_mut().into_iter().for_each(|t| t.data.fill(0.0));
        let mut loss_sum = 0.0;
        let mut n_targets = 0usize;
        for _ in 0..self.cfg.batch_size {
            let seq = &self.corpus[rng.random_range(0..self.corpus.len())];
            let window = match self.cfg.crop_frames {
                Some(c) if seq.n_frames() > c => seq.window(rng.random_range(0..=seq.n_frames() - c), c),
                _ => seq.clone(),
            };
            let plan = sample_plan(window.n_frames(), self.cfg.objective, &self.cfg.cfm, &self.cfg.ccm, &mut rng)?;
            observer.on_plan(step, &plan);
            let (masked, target_mask) = apply_mask(&window, &plan, &mut rng)?;
            let x = masked.to_mat();
            let target = window.to_mat();
            let mut dropout = Dropout { rate: self.model.dropout_rate, rng: &mut rng };
            let acts = encode(&x, &self.model, &self.params, None, Some(&mut dropout))?;
            let (out, cache) = reconstruction_forward(acts.last(), &self.params);
            let (sum, count, d_out) = huber_sum_and_grad(&out, &target, &target_mask)?;
            loss_sum += sum;
            n_targets += count;
            if count > 0 {
                let d_top = reconstruction_backward(&self.params, acts.last(), &cache, &d_out, &mut self.grads);
                encode_backward(&x, &self.model, &self.params, &acts, &d_top, &mut self.grads);
            }
        }
        if n_targets == 0 {
            return Err(Error::invalid(format!("step {step}: the batch contains no reconstruction targets")));
        }
        let loss = loss_sum / n_targets as f64;
        if !loss.is_finite() {
            return Err(Error::Numerical { tensor: "loss".into(), detail: format!("step {step}: loss is {loss}") });
        }
        let inv = 1.0 / n_targets as f64;
        for t in self.grads.tensors_mut() {
            t.data.iter_mut().for_each(|g| *g *= inv);
        }
        if let Some(max) = self.opt.clip_norm {
            clip_grad_norm(&mut self.grads, max);
        }
        let lrate = self.opt.learning_rate(step, self.model.hidden_dim)?;
        adam_step(&mut self.params, &self.grads, &mut self.state, lrate, &self.opt)?;
        let record = LossRecord { step, loss, lrate };
        observer.on_step(&record)?;
        let every = self.cfg.checkpoint_every;
        if every > 0 && step % every == 0 && step < self.cfg.total_steps {
            observer.on_checkpoint(&self.checkpoint())?;
        }
        Ok(record)
    }

    /// Steps until `total_steps` and returns the final checkpoint, which is
    /// also handed to the observer.
    pub fn run(mut self, observer: &mut dyn PretrainObserver) -> Result<Checkpoint> {
        while self.state.step < self.cfg.total_steps {
            self.step(observer)?;
        }
        let ck = self.checkpoint();
        observer.on_checkpoint(&ck)?;
        Ok(ck)
    }
}

/// Pre-trains a freshly initialized model on `corpus`.
pub fn pretrain(
    corpus: &[FrameSequence],
    model: &ModelConfig,
    cfg: &PretrainConfig,
    opt: &OptimizerConfig,
    observer: &mut dyn PretrainObserver,
) -> Result<Checkpoint> {
    Pretrainer::new(corpus, *model, cfg.clone(), opt.clone())?.run(observer)
}
