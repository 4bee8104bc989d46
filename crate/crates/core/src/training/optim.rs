use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Adam and warmup-schedule settings.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub warmup_steps: u64,
    /// Width used in the schedule's `dim^-0.5` factor; the model's hidden
    /// width when unset.
    pub schedule_dim: Option<usize>,
    /// Constant multiplier on the schedule.
    pub lr_scale: f64,
    /// Global gradient-norm ceiling; no clipping when unset.
    pub clip_norm: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-6,
            warmup_steps: 8000,
            schedule_dim: None,
            lr_scale: 1.0,
            clip_norm: Some(5.0),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |b: f64| b > 0.0 && b < 1.0;
        if !open_unit(self.beta1) || !open_unit(self.beta2) {
            return Err(Error::config("Adam betas must lie in (0, 1)"));
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(Error::config("adam_epsilon must be positive"));
        }
        if self.warmup_steps == 0 {
            return Err(Error::config("warmup_steps must be at least 1"));
        }
        if self.schedule_dim == Some(0) {
            return Err(Error::config("schedule_dim must be positive"));
        }
        if !(self.lr_scale > 0.0) || !self.lr_scale.is_finite() {
            return Err(Error::config("lr_scale must be positive"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::config("clip_norm must be positive"));
            }
        }
        Ok(())
    }

    /// Scaled schedule value at `step` for a model of width `hidden_dim`.
    pub fn learning_rate(&self, step: u64, hidden_dim: usize) -> Result<f64> {
        let dim = self.schedule_dim.unwrap_or(hidden_dim);
        Ok(self.lr_scale * lr_schedule(step, dim, self.warmup_steps)?)
    }
}

/// `dim^-0.5 * min(step^-0.5, step * warmup^-1.5)`.
pub fn lr_schedule(step: u64, dim: usize, warmup_steps: u64) -> Result<f64> {
    if step == 0 {
        return Err(Error::invalid("the learning-rate schedule starts at step 1"));
    }
    if dim == 0 || warmup_steps == 0 {
        return Err(Error::invalid("schedule width and warmup must be positive"));
    }
    let s = step as f64;
    let decay = s.powf(-0.5);
    let warm = s * (warmup_steps as f64).powf(-1.5);
    Ok((dim as f64).powf(-0.5) * decay.min(warm))
}

/// Optimizer progress: step counter, the seed every step's random stream is
/// derived from, and Adam's moment estimates in canonical tensor order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub seed: u64,
    pub first_moments: Vec<Vec<f64>>,
    pub second_moments: Vec<Vec<f64>>,
}

impl TrainState {
    pub fn new(seed: u64) -> Self {
        TrainState { step: 0, seed, first_moments: Vec::new(), second_moments: Vec::new() }
    }

    fn ensure_moments(&mut self, params: &ModelParams) -> Result<()> {
        let lens: Vec<usize> = params.tensors().iter().map(|t| t.data.len()).collect();
        if self.first_moments.is_empty() && self.second_moments.is_empty() {
            self.first_moments = lens.iter().map(|&n| vec![0.0; n]).collect();
            self.second_moments = self.first_moments.clone();
            return Ok(());
        }
        let matches = |m: &[Vec<f64>]| m.len() == lens.len() && m.iter().zip(&lens).all(|(v, &n)| v.len() == n);
        if !matches(&self.first_moments) || !matches(&self.second_moments) {
            return Err(Error::invalid("optimizer moments do not match the parameter shapes"));
        }
        Ok(())
    }
}

/// Rescales `grads` so that their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut ModelParams, max_norm: f64) -> f64 {
    let norm = grads
        .tensors()
        .iter()
        .flat_map(|t| t.data.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for t in grads.tensors_mut() {
            t.data.iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}

/// One bias-corrected Adam update. Advances `state.step`.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut TrainState,
    lrate: f64,
    cfg: &OptimizerConfig,
) -> Result<()> {
    params.check_compatible(grads)?;
    for t in grads.tensors() {
        if let Some(bad) = t.data.iter().find(|g| !g.is_finite()) {
            return Err(Error::Numerical { tensor: t.name, detail: format!("gradient value {bad}") });
        }
    }
    state.ensure_moments(params)?;
    state.step += 1;
    let grad_views = grads.tensors();
    for (i, p) in params.tensors_mut().into_iter().enumerate() {
        adam_update(
            p.data,
            grad_views[i].data,
            &mut state.first_moments[i],
            &mut state.second_moments[i],
            state.step,
            lrate,
            cfg,
        );
    }
    Ok(())
}

/// Adam on flat slices at (1-based) step `t`.
pub(crate) fn adam_update(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], t: u64, lrate: f64, cfg: &OptimizerConfig) {
    let t = i32::try_from(t).unwrap_or(i32::MAX);
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for j in 0..g.len() {
        m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
        v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
        let m_hat = m[j] / c1;
        let v_hat = v[j] / c2;
        p[j] -= lrate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
    }
}
