//! The pipeline behind each subcommand, as library functions.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use log::{info, warn};
use mam_core::dsp::{read_wav, FeatureExtractor, FrameSequence};
use mam_core::eval::{
    pr_auc_macro, roc_auc_macro, stratified_kfold, validation_carve, CvReport, PredictionSet, TagReport,
};
use mam_core::masking::{sample_plan, MaskingStats, SpanPolicy};
use mam_core::model::{ModelConfig, TaskKind};
use mam_core::tensor::Mat;
use mam_core::training::{
    self, load_checkpoint, predict_logits, save_checkpoint, Checkpoint, Dtype, FinetuneOutcome, Label, Labeled,
    LossRecord, PretrainObserver,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cache::{content_hash, feature_fingerprint, DirLock, FeatureCache};
use crate::config::RunConfig;
use crate::manifest::{Entry, Manifest, Split};

pub const LOSS_LOG: &str = "loss.log";
pub const PRETRAINED: &str = "pretrained.mcck";
pub const FINETUNED: &str = "finetuned.mcck";
pub const GRID_REPORT: &str = "grid_report.tsv";
pub const EVAL_REPORT: &str = "eval_report.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// Single-label classification, evaluated by k-fold cross-validation.
    Genre,
    /// Multi-label tagging on the manifest's splits.
    Tags,
}

/// Where finetuning or evaluation starts from.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Checkpoint(PathBuf),
    Random,
}

pub fn cache_for(manifest: &Manifest, cfg: &RunConfig) -> FeatureCache {
    FeatureCache::new(cfg.cache_dir.clone().unwrap_or_else(|| manifest.base_dir.join("features")))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExtractSummary {
    pub extracted: Vec<String>,
    pub skipped: Vec<String>,
    pub failed: Vec<(String, String)>,
}

enum Outcome {
    Extracted,
    Skipped,
}

fn extract_one(manifest: &Manifest, entry: &Entry, extractor: &FeatureExtractor, fingerprint: &str, cache: &FeatureCache) -> Result<Outcome> {
    let path = manifest.resolve(entry);
    let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    let hash = content_hash(&bytes, fingerprint);
    if cache.is_fresh(&entry.clip_id, &hash) {
        return Ok(Outcome::Skipped);
    }
    let mut clip = read_wav(&path)?;
    let sr = extractor.config().sample_rate;
    if clip.sample_rate != sr {
        clip = clip.resampled(sr);
    }
    let seq = extractor.extract(&clip)?;
    cache.store(&entry.clip_id, &seq, &hash)?;
    Ok(Outcome::Extracted)
}

/// Extracts features for every manifest clip in parallel, skipping entries
/// whose cached content hash is current.
pub fn extract(manifest: &Manifest, cfg: &RunConfig) -> Result<ExtractSummary> {
    let cache = cache_for(manifest, cfg);
    let _lock = DirLock::acquire(cache.dir())?;
    let extractor = FeatureExtractor::new(cfg.features.clone())?;
    let fingerprint = feature_fingerprint(&cfg.features);
    let results: Vec<(String, Result<Outcome>)> = manifest
        .entries
        .par_iter()
        .map(|e| (e.clip_id.clone(), extract_one(manifest, e, &extractor, &fingerprint, &cache)))
        .collect();
    let mut summary = ExtractSummary::default();
    for (id, r) in results {
        match r {
            Ok(Outcome::Extracted) => summary.extracted.push(id),
            Ok(Outcome::Skipped) => summary.skipped.push(id),
            Err(e) => {
                warn!("{id}: {e:#}");
                summary.failed.push((id, format!("{e:#}")));
            }
        }
    }
    Ok(summary)
}

fn load_features<'a>(cache: &FeatureCache, entries: impl IntoIterator<Item = &'a Entry>) -> Result<Vec<FrameSequence>> {
    entries.into_iter().map(|e| cache.load(&e.clip_id)).collect()
}

/// Rows used for pre-training: the `pretrain` split, or every non-test row
/// when that split is absent.
pub fn pretrain_entries(manifest: &Manifest) -> Vec<&Entry> {
    let explicit: Vec<&Entry> = manifest.split(Split::Pretrain).collect();
    if explicit.is_empty() {
        manifest.entries.iter().filter(|e| e.split != Split::Test).collect()
    } else {
        explicit
    }
}

struct FileObserver {
    out_dir: PathBuf,
    log: BufWriter<File>,
    final_step: u64,
}

impl PretrainObserver for FileObserver {
    fn on_step(&mut self, r: &LossRecord) -> mam_core::Result<()> {
        writeln!(self.log, "{r}")?;
        if r.step % 100 == 0 || r.step == 1 {
            info!("step {}: loss {:.5} lr {:.3e}", r.step, r.loss, r.lrate);
        }
        Ok(())
    }

    fn on_checkpoint(&mut self, ck: &Checkpoint) -> mam_core::Result<()> {
        self.log.flush()?;
        let name = if ck.state.step == self.final_step {
            PRETRAINED.to_string()
        } else {
            format!("checkpoint_{:08}.mcck", ck.state.step)
        };
        save_checkpoint(&self.out_dir.join(name), ck, Dtype::F64)
    }
}

/// Pre-trains on the cached features and writes `loss.log`, periodic
/// checkpoints and `pretrained.mcck` to `out_dir`.
pub fn pretrain(manifest: &Manifest, cfg: &RunConfig, out_dir: &Path) -> Result<PathBuf> {
    let _lock = DirLock::acquire(out_dir)?;
    let cache = cache_for(manifest, cfg);
    let entries = pretrain_entries(manifest);
    if entries.is_empty() {
        bail!("manifest has no clips to pre-train on");
    }
    let corpus = load_features(&cache, entries)?;
    let log = BufWriter::new(File::create(out_dir.join(LOSS_LOG))?);
    let pcfg = cfg.pretrain_config();
    let mut observer = FileObserver { out_dir: out_dir.to_path_buf(), log, final_step: pcfg.total_steps };
    info!("pre-training on {} clips for {} steps ({})", corpus.len(), pcfg.total_steps, pcfg.objective.name());
    training::pretrain(&corpus, &cfg.model, &pcfg, &cfg.optimizer, &mut observer)?;
    observer.log.flush()?;
    Ok(out_dir.join(PRETRAINED))
}

fn same_architecture(a: &ModelConfig, b: &ModelConfig) -> bool {
    (a.n_layers, a.hidden_dim, a.n_heads, a.ffn_dim, a.input_dim) == (b.n_layers, b.hidden_dim, b.n_heads, b.ffn_dim, b.input_dim)
}

/// Loads the starting checkpoint, or draws fresh parameters.
pub fn load_init(init: &Init, cfg: &RunConfig) -> Result<Checkpoint> {
    match init {
        Init::Random => Ok(Checkpoint::initial(cfg.model, cfg.seed)?),
        Init::Checkpoint(path) => {
            let ck = load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
            if !same_architecture(&ck.config, &cfg.model) {
                bail!(
                    "checkpoint {} has architecture {:?}, but the model.* settings describe {:?}",
                    path.display(),
                    ck.config,
                    cfg.model
                );
            }
            Ok(ck)
        }
    }
}

fn task_kind(manifest: &Manifest, task: Task) -> TaskKind {
    match task {
        Task::Genre => TaskKind::Classify { n_classes: manifest.vocab.len() },
        Task::Tags => TaskKind::Tag { n_tags: manifest.vocab.len() },
    }
}

fn label_of(manifest: &Manifest, entry: &Entry, task: Task) -> Result<Label> {
    Ok(match task {
        Task::Genre => Label::Class(manifest.class_of(entry)?),
        Task::Tags => Label::Tags(manifest.tags_of(entry)),
    })
}

/// Train and validation rows for finetuning.
fn finetune_split<'a>(manifest: &'a Manifest, task: Task, cfg: &RunConfig) -> Result<(Vec<&'a Entry>, Vec<&'a Entry>)> {
    let train: Vec<&Entry> = manifest.split(Split::Train).collect();
    let valid: Vec<&Entry> = manifest.split(Split::Valid).collect();
    if !train.is_empty() && !valid.is_empty() {
        return Ok((train, valid));
    }
    if task == Task::Tags {
        bail!("tagging needs both `train` and `valid` rows in the manifest");
    }
    let pool: Vec<&Entry> = manifest.entries.iter().filter(|e| e.split != Split::Test).collect();
    let classes = pool.iter().map(|e| manifest.class_of(e)).collect::<Result<Vec<_>>>()?;
    let idx: Vec<usize> = (0..pool.len()).collect();
    let (t, v) = validation_carve(&idx, &classes, cfg.valid_fraction, cfg.seed)?;
    Ok((t.into_iter().map(|i| pool[i]).collect(), v.into_iter().map(|i| pool[i]).collect()))
}

struct Examples {
    frames: Vec<FrameSequence>,
    labels: Vec<Label>,
}

impl Examples {
    fn load(manifest: &Manifest, cache: &FeatureCache, entries: &[&Entry], task: Task) -> Result<Self> {
        Ok(Examples {
            frames: load_features(cache, entries.iter().copied())?,
            labels: entries.iter().map(|e| label_of(manifest, e, task)).collect::<Result<_>>()?,
        })
    }

    fn select(&self, idx: &[usize]) -> Vec<Labeled<'_>> {
        idx.iter().map(|&i| Labeled { frames: &self.frames[i], label: &self.labels[i] }).collect()
    }

    fn all(&self) -> Vec<Labeled<'_>> {
        self.select(&(0..self.frames.len()).collect::<Vec<_>>())
    }
}

/// Runs the finetuning grid and writes `grid_report.tsv` and
/// `finetuned.mcck`.
pub fn finetune(manifest: &Manifest, cfg: &RunConfig, init: &Init, task: Task, out_dir: &Path) -> Result<FinetuneOutcome> {
    let _lock = DirLock::acquire(out_dir)?;
    let base = load_init(init, cfg)?;
    let cache = cache_for(manifest, cfg);
    let (train, valid) = finetune_split(manifest, task, cfg)?;
    let train = Examples::load(manifest, &cache, &train, task)?;
    let valid = Examples::load(manifest, &cache, &valid, task)?;
    let outcome = training::finetune(
        &base,
        &train.all(),
        &valid.all(),
        task_kind(manifest, task),
        &cfg.finetune_config(),
        &cfg.optimizer,
    )?;
    fs::write(out_dir.join(GRID_REPORT), outcome.report.to_string())?;
    save_checkpoint(&out_dir.join(FINETUNED), &outcome.best, Dtype::F64)?;
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq)]
pub enum EvalReport {
    CrossValidation(CvReport),
    Tags(TagReport),
}

impl std::fmt::Display for EvalReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EvalReport::CrossValidation(r) => r.fmt(f),
            EvalReport::Tags(r) => r.fmt(f),
        }
    }
}

/// Genre: stratified k-fold cross-validation, finetuning from `init` on
/// every fold. Tags: scores a finetuned model on the `test` split.
pub fn evaluate(manifest: &Manifest, cfg: &RunConfig, init: &Init, task: Task, out_dir: &Path) -> Result<EvalReport> {
    let _lock = DirLock::acquire(out_dir)?;
    let cache = cache_for(manifest, cfg);
    let report = match task {
        Task::Genre => EvalReport::CrossValidation(cross_validate(manifest, cfg, init, &cache)?),
        Task::Tags => EvalReport::Tags(evaluate_tags(manifest, cfg, init, &cache)?),
    };
    fs::write(out_dir.join(EVAL_REPORT), report.to_string())?;
    Ok(report)
}

fn cross_validate(manifest: &Manifest, cfg: &RunConfig, init: &Init, cache: &FeatureCache) -> Result<CvReport> {
    let base = load_init(init, cfg)?;
    let entries: Vec<&Entry> = manifest.entries.iter().collect();
    let data = Examples::load(manifest, cache, &entries, Task::Genre)?;
    let classes: Vec<usize> = data.labels.iter().map(|l| if let Label::Class(c) = l { *c } else { 0 }).collect();
    let folds = stratified_kfold(&classes, cfg.folds, cfg.seed)?;
    let kind = task_kind(manifest, Task::Genre);
    let ft = cfg.finetune_config();
    let mut accuracies = Vec::with_capacity(cfg.folds);
    for fold in 0..cfg.folds {
        let (pool, test) = folds.split(fold);
        let (train, valid) = validation_carve(&pool, &classes, cfg.valid_fraction, cfg.seed.wrapping_add(fold as u64))?;
        let out = training::finetune(&base, &data.select(&train), &data.select(&valid), kind, &ft, &cfg.optimizer)?;
        let mut scores = Mat::zeros(test.len(), kind.n_outputs());
        for (r, &i) in test.iter().enumerate() {
            let logits = predict_logits(&out.best.config, &out.best.params, &data.frames[i], ft.crop_frames)?;
            scores.row_mut(r).copy_from_slice(&logits);
        }
        let test_classes: Vec<usize> = test.iter().map(|&i| classes[i]).collect();
        let acc = mam_core::eval::accuracy(&PredictionSet::from_classes(scores, &test_classes)?)?;
        info!("fold {fold}: accuracy {acc:.4}");
        accuracies.push(acc);
    }
    Ok(CvReport { fold_accuracies: accuracies })
}

fn evaluate_tags(manifest: &Manifest, cfg: &RunConfig, init: &Init, cache: &FeatureCache) -> Result<TagReport> {
    let Init::Checkpoint(path) = init else {
        bail!("tag evaluation needs a finetuned model (--model)");
    };
    let ck = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    let n_tags = manifest.vocab.len();
    match ck.params.task_head.as_ref().map(|h| h.kind) {
        Some(TaskKind::Tag { n_tags: n }) if n == n_tags => {}
        other => bail!("{} has task head {other:?}; expected a {n_tags}-tag head from `mam finetune`", path.display()),
    }
    let test: Vec<&Entry> = manifest.split(Split::Test).collect();
    if test.is_empty() {
        bail!("manifest has no `test` rows");
    }
    let frames = load_features(cache, test.iter().copied())?;
    let mut scores = Mat::zeros(test.len(), n_tags);
    let mut labels = Vec::with_capacity(test.len() * n_tags);
    for (r, (e, f)) in test.iter().zip(&frames).enumerate() {
        let logits = predict_logits(&ck.config, &ck.params, f, cfg.finetune.crop_frames)?;
        for (s, z) in scores.row_mut(r).iter_mut().zip(logits) {
            *s = 1.0 / (1.0 + (-z).exp());
        }
        labels.extend(manifest.tags_of(e));
    }
    let preds = PredictionSet::new(scores, labels)?;
    Ok(TagReport { tag_names: manifest.vocab.clone(), roc_auc: roc_auc_macro(&preds)?, pr_auc: pr_auc_macro(&preds)? })
}

/// One sampled plan drawn as text plus masking statistics over many plans.
pub fn mask_demo(cfg: &RunConfig, n_frames: usize, trials: usize) -> Result<String> {
    let pcfg = cfg.pretrain_config();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let plan = sample_plan(n_frames, pcfg.objective, &pcfg.cfm, &pcfg.ccm, &mut rng)?;
    let mut row = vec!['.'; n_frames];
    for s in plan.spans() {
        let c = match s.policy {
            SpanPolicy::Zero => 'Z',
            SpanPolicy::Random => 'R',
            SpanPolicy::Keep => 'K',
        };
        row[s.start..s.end()].fill(c);
    }
    let mut out = String::new();
    out.push_str(&format!("objective\t{}\n", pcfg.objective.name()));
    out.push_str("frames\t");
    out.extend(row);
    out.push('\n');
    for b in plan.channel_blocks() {
        out.push_str(&format!("channel_block\tgroup={}\tstart={}\twidth={}\n", b.group, b.start, b.width));
    }
    out.push_str(&format!("targets\t{}\n", plan.n_targets()));
    if trials > 0 {
        let stats = MaskingStats::collect(n_frames, trials, &pcfg.cfm, &pcfg.ccm, &mut rng)
            .map_err(|e| anyhow!("collecting masking statistics: {e}"))?;
        out.push_str(&format!("trials\t{}\n", stats.trials));
        out.push_str(&format!("mean_span_length\t{:.4}\n", stats.mean_span_length));
        out.push_str(&format!("expected_span_length\t{:.4}\n", pcfg.cfm.expected_span_length()));
        out.push_str(&format!("masked_frames\tmin={}\tmax={}\n", stats.min_masked_frames, stats.max_masked_frames));
        let p = stats.policy_fractions;
        out.push_str(&format!("policy_fractions\tzero={:.4}\trandom={:.4}\tkeep={:.4}\n", p[0], p[1], p[2]));
        for (g, w) in stats.ccm_mean_width.iter().enumerate() {
            out.push_str(&format!("ccm_mean_width\tgroup={g}\t{w:.3}\n"));
        }
    }
    Ok(out)
}
