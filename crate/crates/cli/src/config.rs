//! Plain-text `key = value` run configuration.

use std::fmt::{self, Display};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use mam_core::dsp::{FeatureConfig, WindowFn};
use mam_core::masking::{ChannelRange, Objective};
use mam_core::model::ModelConfig;
use mam_core::training::{FinetuneConfig, OptimizerConfig, PretrainConfig};

/// Environment variable naming a config file when `--config` is absent.
pub const CONFIG_ENV: &str = "MAM_CONFIG";

/// Every setting a pipeline command reads.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Feature cache directory; `features/` next to the manifest when unset.
    pub cache_dir: Option<PathBuf>,
    pub features: FeatureConfig,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    /// Seed fields inside are ignored in favour of `seed`.
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub folds: usize,
    pub valid_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            cache_dir: None,
            features: FeatureConfig::default(),
            model: ModelConfig::base(),
            optimizer: OptimizerConfig::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            folds: 10,
            valid_fraction: 0.1,
        }
    }
}

fn parse<T: FromStr>(v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.parse::<T>().map_err(|e| anyhow!("{e}"))
}

fn show<T: Display>(v: &T) -> String {
    v.to_string()
}

fn parse_opt<T: FromStr>(v: &str) -> Result<Option<T>>
where
    T::Err: Display,
{
    if v == "none" { Ok(None) } else { parse(v).map(Some) }
}

fn show_opt<T: Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), T::to_string)
}

fn parse_list<T: FromStr>(v: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    v.split(',').map(|s| parse(s.trim())).collect()
}

fn show_list<T: Display>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn parse_groups(v: &str) -> Result<Vec<ChannelRange>> {
    v.split(',')
        .map(|g| {
            let (s, l) = g.trim().split_once(':').ok_or_else(|| anyhow!("expected start:len, got `{g}`"))?;
            Ok(ChannelRange { start: parse(s)?, len: parse(l)? })
        })
        .collect()
}

fn show_groups(v: &[ChannelRange]) -> String {
    v.iter().map(|g| format!("{}:{}", g.start, g.len)).collect::<Vec<_>>().join(",")
}

fn parse_window(v: &str) -> Result<WindowFn> {
    WindowFn::from_name(v).ok_or_else(|| anyhow!("unknown window `{v}` (hamming or hann)"))
}

fn parse_objective(v: &str) -> Result<Objective> {
    Objective::from_name(v).ok_or_else(|| anyhow!("unknown objective `{v}` (cfm, ccm or both)"))
}

fn parse_path(v: &str) -> Result<Option<PathBuf>> {
    Ok(if v == "auto" { None } else { Some(PathBuf::from(v)) })
}

fn show_path(v: &Option<PathBuf>) -> String {
    v.as_ref().map_or_else(|| "auto".to_string(), |p| p.display().to_string())
}

struct Field {
    key: &'static str,
    get: fn(&RunConfig) -> String,
    set: fn(&mut RunConfig, &str) -> Result<()>,
}

macro_rules! field {
    ($key:literal, $($path:ident).+, $show:expr, $parse:expr) => {
        Field {
            key: $key,
            get: |c| $show(&c.$($path).+),
            set: |c, v| {
                c.$($path).+ = $parse(v)?;
                Ok(())
            },
        }
    };
}

const FIELDS: &[Field] = &[
    field!("seed", seed, show, parse),
    field!("paths.cache_dir", cache_dir, show_path, parse_path),
    field!("features.sample_rate", features.sample_rate, show, parse),
    field!("features.window_len", features.window_len, show, parse),
    field!("features.hop_len", features.hop_len, show, parse),
    field!("features.window", features.window_fn, |w: &WindowFn| w.name().to_string(), parse_window),
    field!("features.n_mels", features.n_mels, show, parse),
    field!("features.n_cqt_bins", features.n_cqt_bins, show, parse),
    field!("features.cqt_bins_per_octave", features.cqt_bins_per_octave, show, parse),
    field!("features.cqt_fmin", features.cqt_fmin, show, parse),
    field!("features.n_mfcc", features.n_mfcc, show, parse),
    field!("features.delta_width", features.delta_width, show, parse),
    field!("features.epsilon", features.epsilon, show, parse),
    field!("features.max_frames", features.max_frames, show, parse),
    field!("cfm.p_geometric", pretrain.cfm.p_geometric, show, parse),
    field!("cfm.span_min", pretrain.cfm.span_min, show, parse),
    field!("cfm.span_max", pretrain.cfm.span_max, show, parse),
    field!("cfm.budget_fraction", pretrain.cfm.budget_fraction, show, parse),
    field!("cfm.p_zero", pretrain.cfm.policy_probs.zero, show, parse),
    field!("cfm.p_random", pretrain.cfm.policy_probs.random, show, parse),
    field!("cfm.p_keep", pretrain.cfm.policy_probs.keep, show, parse),
    field!("ccm.groups", pretrain.ccm.groups, |g: &Vec<ChannelRange>| show_groups(g), parse_groups),
    field!("model.n_layers", model.n_layers, show, parse),
    field!("model.hidden_dim", model.hidden_dim, show, parse),
    field!("model.n_heads", model.n_heads, show, parse),
    field!("model.ffn_dim", model.ffn_dim, show, parse),
    field!("model.input_dim", model.input_dim, show, parse),
    field!("model.max_positions", model.max_positions, show, parse),
    field!("model.dropout_rate", model.dropout_rate, show, parse),
    field!("optimizer.beta1", optimizer.beta1, show, parse),
    field!("optimizer.beta2", optimizer.beta2, show, parse),
    field!("optimizer.adam_epsilon", optimizer.adam_epsilon, show, parse),
    field!("optimizer.warmup_steps", optimizer.warmup_steps, show, parse),
    field!("optimizer.schedule_dim", optimizer.schedule_dim, |v: &Option<usize>| v.map_or("auto".into(), |d| d.to_string()), |v: &str| if v == "auto" { Ok(None) } else { parse(v).map(Some) }),
    field!("optimizer.lr_scale", optimizer.lr_scale, show, parse),
    field!("optimizer.clip_norm", optimizer.clip_norm, show_opt, parse_opt),
    field!("pretrain.batch_size", pretrain.batch_size, show, parse),
    field!("pretrain.total_steps", pretrain.total_steps, show, parse),
    field!("pretrain.objective", pretrain.objective, |o: &Objective| o.name().to_string(), parse_objective),
    field!("pretrain.checkpoint_every", pretrain.checkpoint_every, show, parse),
    field!("pretrain.crop_frames", pretrain.crop_frames, show_opt, parse_opt),
    field!("finetune.batch_sizes", finetune.grid.batch_sizes, |v: &Vec<usize>| show_list(v), parse_list),
    field!("finetune.learning_rates", finetune.grid.learning_rates, |v: &Vec<f64>| show_list(v), parse_list),
    field!("finetune.epochs", finetune.grid.epochs, |v: &Vec<usize>| show_list(v), parse_list),
    field!("finetune.dropout_rates", finetune.grid.dropout_rates, |v: &Vec<f64>| show_list(v), parse_list),
    field!("finetune.max_cells", finetune.max_cells, show_opt, parse_opt),
    field!("finetune.freeze_encoder", finetune.freeze_encoder, show, parse),
    field!("finetune.crop_frames", finetune.crop_frames, show_opt, parse_opt),
    field!("eval.folds", folds, show, parse),
    field!("eval.valid_fraction", valid_fraction, show, parse),
];

impl RunConfig {
    /// Known keys in canonical order.
    pub fn keys() -> impl Iterator<Item = &'static str> {
        FIELDS.iter().map(|f| f.key)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        FIELDS.iter().find(|f| f.key == key).map(|f| (f.get)(self))
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let field = FIELDS.iter().find(|f| f.key == key).ok_or_else(|| anyhow!("unknown config key `{key}`"))?;
        (field.set)(self, value).with_context(|| format!("bad value `{value}` for `{key}`"))
    }

    /// Applies `key = value` lines on top of the defaults. Blank lines and
    /// `#` comments are ignored; unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("line {}: expected `key = value`", i + 1))?;
            let (k, v) = (k.trim(), v.trim());
            if seen.contains(&k) {
                bail!("line {}: `{k}` is set twice", i + 1);
            }
            seen.push(k);
            cfg.set(k, v).with_context(|| format!("line {}", i + 1))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.model.validate()?;
        self.optimizer.validate()?;
        self.pretrain_config().validate()?;
        self.finetune.grid.validate()?;
        if self.folds < 2 {
            bail!("eval.folds must be at least 2");
        }
        if !(self.valid_fraction > 0.0 && self.valid_fraction < 1.0) {
            bail!("eval.valid_fraction must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig { seed: self.seed, ..self.pretrain.clone() }
    }

    pub fn finetune_config(&self) -> FinetuneConfig {
        FinetuneConfig { seed: self.seed, ..self.finetune.clone() }
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for field in FIELDS {
            writeln!(f, "{} = {}", field.key, (field.get)(self))?;
        }
        Ok(())
    }
}
