//! Masked-reconstruction pre-training, downstream finetuning and the
//! checkpoint format.

mod checkpoint;
mod finetune;
mod gradcheck;
mod loss;
mod optim;
mod pretrain;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, Dtype, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use finetune::{
    finetune, predict_logits, FinetuneCell, FinetuneConfig, FinetuneGrid, FinetuneOutcome, GridReport, GridRow, Label,
    Labeled,
};
pub use gradcheck::{reconstruction_gradient_check, reconstruction_gradients, TensorGradCheck};
pub use loss::{binary_cross_entropy, cross_entropy, huber, huber_loss, huber_sum_and_grad};
pub use optim::{adam_step, clip_grad_norm, lr_schedule, OptimizerConfig, TrainState};
pub use pretrain::{pretrain, LossRecord, PretrainConfig, PretrainObserver, Pretrainer};

#[cfg(test)]
mod tests;
