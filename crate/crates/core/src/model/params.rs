use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::{ModelConfig, TaskKind};
use super::layers::{LayerNorm, Linear};
use crate::error::{Error, Result};
use crate::tensor::Mat;

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub attn_out: Linear,
    pub attn_norm: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub ffn_norm: LayerNorm,
}

/// Linear -> GeLU -> LayerNorm -> Linear back to the input width.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionHead {
    pub dense: Linear,
    pub norm: LayerNorm,
    pub out: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskHead {
    pub kind: TaskKind,
    pub linear: Linear,
}

/// All learnable weights. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub input_projection: Linear,
    pub layers: Vec<EncoderLayer>,
    pub reconstruction: ReconstructionHead,
    pub task_head: Option<TaskHead>,
}

/// A named view of one parameter tensor.
pub struct TensorView<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

pub struct TensorViewMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [f64],
}

fn truncated_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Mat {
    let normal = Normal::new(0.0, INIT_STD).unwrap();
    Mat::from_fn(rows, cols, |_, _| loop {
        let v: f64 = normal.sample(rng);
        if v.abs() <= 2.0 * INIT_STD {
            break v;
        }
    })
}

fn build(cfg: &ModelConfig, weight: &mut dyn FnMut(usize, usize) -> Mat) -> ModelParams {
    let h = cfg.hidden_dim;
    let mut linear = |d_in: usize, d_out: usize| Linear { weight: weight(d_in, d_out), bias: vec![0.0; d_out] };
    // Field order fixes the order in which random weights are drawn.
    let input_projection = linear(cfg.input_dim, h);
    let layers = (0..cfg.n_layers)
        .map(|_| EncoderLayer {
            query: linear(h, h),
            key: linear(h, h),
            value: linear(h, h),
            attn_out: linear(h, h),
            attn_norm: LayerNorm::new(h),
            ffn_in: linear(h, cfg.ffn_dim),
            ffn_out: linear(cfg.ffn_dim, h),
            ffn_norm: LayerNorm::new(h),
        })
        .collect();
    let reconstruction = ReconstructionHead {
        dense: linear(h, h),
        norm: LayerNorm::new(h),
        out: linear(h, cfg.input_dim),
    };
    ModelParams { input_projection, layers, reconstruction, task_head: None }
}

impl ModelParams {
    /// Truncated-normal (std 0.02) weights, zero biases, unit layer-norm gains.
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        Ok(build(cfg, &mut |r, c| truncated_normal(r, c, rng)))
    }

    /// All-zero tensors with the shapes implied by `cfg` and `task`.
    pub fn zeros(cfg: &ModelConfig, task: Option<TaskKind>) -> Result<Self> {
        cfg.validate()?;
        let mut p = build(cfg, &mut Mat::zeros);
        if let Some(kind) = task {
            p.task_head = Some(TaskHead { kind, linear: Linear::zeros(cfg.hidden_dim, kind.n_outputs()) });
        }
        Ok(p.zeros_like())
    }

    /// Same shapes, every value zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data.fill(0.0);
        }
        z
    }

    /// Replaces the task head with a freshly initialized one.
    pub fn attach_task_head<R: Rng + ?Sized>(&mut self, kind: TaskKind, rng: &mut R) {
        let h = self.hidden_dim();
        let linear = Linear { weight: truncated_normal(h, kind.n_outputs(), rng), bias: vec![0.0; kind.n_outputs()] };
        self.task_head = Some(TaskHead { kind, linear });
    }

    pub fn hidden_dim(&self) -> usize {
        self.input_projection.d_out()
    }

    pub fn input_dim(&self) -> usize {
        self.input_projection.d_in()
    }

    /// Tensors in a fixed canonical order.
    pub fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = Vec::new();
        collect_views(self, &mut out);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_>> {
        let mut out = Vec::new();
        let ModelParams { input_projection, layers, reconstruction, task_head } = self;
        push_linear_mut(&mut out, "input_projection".into(), input_projection);
        for (i, layer) in layers.iter_mut().enumerate() {
            let EncoderLayer { query, key, value, attn_out, attn_norm, ffn_in, ffn_out, ffn_norm } = layer;
            push_linear_mut(&mut out, format!("layers.{i}.attention.query"), query);
            push_linear_mut(&mut out, format!("layers.{i}.attention.key"), key);
            push_linear_mut(&mut out, format!("layers.{i}.attention.value"), value);
            push_linear_mut(&mut out, format!("layers.{i}.attention.output"), attn_out);
            push_norm_mut(&mut out, format!("layers.{i}.attention_norm"), attn_norm);
            push_linear_mut(&mut out, format!("layers.{i}.ffn.input"), ffn_in);
            push_linear_mut(&mut out, format!("layers.{i}.ffn.output"), ffn_out);
            push_norm_mut(&mut out, format!("layers.{i}.ffn_norm"), ffn_norm);
        }
        let ReconstructionHead { dense, norm, out: proj } = reconstruction;
        push_linear_mut(&mut out, "reconstruction.dense".into(), dense);
        push_norm_mut(&mut out, "reconstruction.norm".into(), norm);
        push_linear_mut(&mut out, "reconstruction.output".into(), proj);
        if let Some(head) = task_head {
            push_linear_mut(&mut out, "task_head".into(), &mut head.linear);
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Checks that `other` has exactly the same tensor names and shapes.
    pub fn check_compatible(&self, other: &ModelParams) -> Result<()> {
        let a = self.tensors();
        let b = other.tensors();
        if a.len() != b.len() {
            return Err(Error::invalid(format!("tensor counts differ: {} vs {}", a.len(), b.len())));
        }
        for (x, y) in a.iter().zip(&b) {
            if x.name != y.name || x.shape != y.shape {
                return Err(Error::invalid(format!(
                    "tensor mismatch: {} {:?} vs {} {:?}",
                    x.name, x.shape, y.name, y.shape
                )));
            }
        }
        Ok(())
    }
}

fn collect_views<'a>(p: &'a ModelParams, out: &mut Vec<TensorView<'a>>) {
    push_linear(out, "input_projection".into(), &p.input_projection);
    for (i, l) in p.layers.iter().enumerate() {
        push_linear(out, format!("layers.{i}.attention.query"), &l.query);
        push_linear(out, format!("layers.{i}.attention.key"), &l.key);
        push_linear(out, format!("layers.{i}.attention.value"), &l.value);
        push_linear(out, format!("layers.{i}.attention.output"), &l.attn_out);
        push_norm(out, format!("layers.{i}.attention_norm"), &l.attn_norm);
        push_linear(out, format!("layers.{i}.ffn.input"), &l.ffn_in);
        push_linear(out, format!("layers.{i}.ffn.output"), &l.ffn_out);
        push_norm(out, format!("layers.{i}.ffn_norm"), &l.ffn_norm);
    }
    push_linear(out, "reconstruction.dense".into(), &p.reconstruction.dense);
    push_norm(out, "reconstruction.norm".into(), &p.reconstruction.norm);
    push_linear(out, "reconstruction.output".into(), &p.reconstruction.out);
    if let Some(head) = &p.task_head {
        push_linear(out, "task_head".into(), &head.linear);
    }
}

fn push_linear<'a>(out: &mut Vec<TensorView<'a>>, prefix: String, l: &'a Linear) {
    out.push(TensorView {
        name: format!("{prefix}.weight"),
        shape: vec![l.weight.rows(), l.weight.cols()],
        data: l.weight.as_slice(),
    });
    out.push(TensorView { name: format!("{prefix}.bias"), shape: vec![l.bias.len()], data: &l.bias });
}

fn push_norm<'a>(out: &mut Vec<TensorView<'a>>, prefix: String, n: &'a LayerNorm) {
    out.push(TensorView { name: format!("{prefix}.gain"), shape: vec![n.gain.len()], data: &n.gain });
    out.push(TensorView { name: format!("{prefix}.bias"), shape: vec![n.bias.len()], data: &n.bias });
}

fn push_linear_mut<'a>(out: &mut Vec<TensorViewMut<'a>>, prefix: String, l: &'a mut Linear) {
    let shape = vec![l.weight.rows(), l.weight.cols()];
    out.push(TensorViewMut { name: format!("{prefix}.weight"), shape, data: l.weight.as_mut_slice() });
    out.push(TensorViewMut { name: format!("{prefix}.bias"), shape: vec![l.bias.len()], data: &mut l.bias });
}

fn push_norm_mut<'a>(out: &mut Vec<TensorViewMut<'a>>, prefix: String, n: &'a mut LayerNorm) {
    out.push(TensorViewMut { name: format!("{prefix}.gain"), shape: vec![n.gain.len()], data: &mut n.gain });
    out.push(TensorViewMut { name: format!("{prefix}.bias"), shape: vec![n.bias.len()], data: &mut n.bias });
}
