//! Pre-training corruptions.
//!
//! Contiguous frames masking (CFM) corrupts spans of consecutive frames until
//! a coverage budget is spent; each span is zeroed, replaced by a copy of
//! another frame, or kept as is. Contiguous channels masking (CCM) zeroes a
//! block of consecutive channels, for all frames, inside each target group.
//! Every corrupted (or kept) cell becomes a reconstruction target.

use rand::Rng;
use rand_distr::{Distribution, Geometric};

use crate::dsp::{FrameSequence, CQT, MEL, N_CHANNELS};
use crate::error::{Error, Result};

/// How the frames of one CFM span are corrupted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpanPolicy {
    Zero,
    Random,
    Keep,
}

impl SpanPolicy {
    pub const ALL: [SpanPolicy; 3] = [SpanPolicy::Zero, SpanPolicy::Random, SpanPolicy::Keep];

    pub fn name(self) -> &'static str {
        match self {
            SpanPolicy::Zero => "zero",
            SpanPolicy::Random => "random",
            SpanPolicy::Keep => "keep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyProbs {
    pub zero: f64,
    pub random: f64,
    pub keep: f64,
}

impl PolicyProbs {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SpanPolicy {
        let u: f64 = rng.random::<f64>() * (self.zero + self.random + self.keep);
        if u < self.zero {
            SpanPolicy::Zero
        } else if u < self.zero + self.random {
            SpanPolicy::Random
        } else {
            SpanPolicy::Keep
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfmConfig {
    pub p_geometric: f64,
    pub span_min: usize,
    pub span_max: usize,
    pub budget_fraction: f64,
    pub policy_probs: PolicyProbs,
}

impl Default for CfmConfig {
    fn default() -> Self {
        CfmConfig {
            p_geometric: 0.2,
            span_min: 2,
            span_max: 7,
            budget_fraction: 0.15,
            policy_probs: PolicyProbs { zero: 0.7, random: 0.2, keep: 0.1 },
        }
    }
}

impl CfmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_geometric > 0.0 && self.p_geometric < 1.0) {
            return Err(Error::config("cfm p_geometric must lie in (0, 1)"));
        }
        if self.span_min < 1 || self.span_min > self.span_max {
            return Err(Error::config("cfm needs 1 <= span_min <= span_max"));
        }
        if !(self.budget_fraction > 0.0 && self.budget_fraction < 1.0) {
            return Err(Error::config("cfm budget_fraction must lie in (0, 1)"));
        }
        let p = &self.policy_probs;
        if [p.zero, p.random, p.keep].iter().any(|&x| !(x >= 0.0))
            || ((p.zero + p.random + p.keep) - 1.0).abs() > 1e-9
        {
            return Err(Error::config("cfm policy probabilities must be nonnegative and sum to 1"));
        }
        Ok(())
    }

    /// Number of distinct frames a plan over `n_frames` frames masks.
    pub fn budget(&self, n_frames: usize) -> usize {
        // The small offset keeps e.g. 0.15 * 100 = 15.000000000000002 at 15.
        let b = (self.budget_fraction * n_frames as f64 - 1e-9).ceil() as usize;
        b.clamp(1.min(n_frames), n_frames)
    }

    /// Mean span length implied by rejection-truncating `Geo(p)` to
    /// `[span_min, span_max]`.
    pub fn expected_span_length(&self) -> f64 {
        let q = 1.0 - self.p_geometric;
        let (mut z, mut m) = (0.0, 0.0);
        for k in self.span_min..=self.span_max {
            let w = q.powi(k as i32 - 1);
            z += w;
            m += k as f64 * w;
        }
        m / z
    }
}

/// A channel range that CCM may blank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelRange {
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CcmConfig {
    pub groups: Vec<ChannelRange>,
}

impl Default for CcmConfig {
    fn default() -> Self {
        CcmConfig {
            groups: vec![
                ChannelRange { start: MEL.start, len: MEL.len },
                ChannelRange { start: CQT.start, len: CQT.len },
            ],
        }
    }
}

impl CcmConfig {
    pub fn validate(&self) -> Result<()> {
        let mut sorted = self.groups.clone();
        sorted.sort_by_key(|g| g.start);
        for g in &sorted {
            if g.len == 0 || g.start + g.len > N_CHANNELS {
                return Err(Error::config(format!("ccm group {g:?} is empty or exceeds {N_CHANNELS} channels")));
            }
        }
        if sorted.windows(2).any(|w| w[0].start + w[0].len > w[1].start) {
            return Err(Error::config("ccm groups overlap"));
        }
        Ok(())
    }
}

/// Which corruptions a pre-training run applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Cfm,
    Ccm,
    Both,
}

impl Objective {
    pub fn uses_cfm(self) -> bool {
        matches!(self, Objective::Cfm | Objective::Both)
    }

    pub fn uses_ccm(self) -> bool {
        matches!(self, Objective::Ccm | Objective::Both)
    }

    pub fn name(self) -> &'static str {
        match self {
            Objective::Cfm => "cfm",
            Objective::Ccm => "ccm",
            Objective::Both => "both",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "cfm" => Some(Objective::Cfm),
            "ccm" => Some(Objective::Ccm),
            "both" => Some(Objective::Both),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub len: usize,
    pub policy: SpanPolicy,
}

impl Span {
    pub fn end(&self) -> usize {
        self.start + self.len
    }
}

/// Channels `start..start + width` (absolute indices) of CCM group `group`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelBlock {
    pub group: usize,
    pub start: usize,
    pub width: usize,
}

/// Everything a CFM draw produced, including the raw span draws that the
/// coverage statistics are computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct CfmTrace {
    /// Disjoint masked spans, in sampling order.
    pub spans: Vec<Span>,
    /// `(untrimmed length, policy)` of every span drawn.
    pub draws: Vec<(usize, SpanPolicy)>,
}

/// Draws one span length from `Geo(p)` restricted to `[span_min, span_max]`
/// by rejection.
pub fn sample_span_length<R: Rng + ?Sized>(cfg: &CfmConfig, rng: &mut R) -> usize {
    let geo = Geometric::new(cfg.p_geometric).expect("p validated in (0, 1)");
    loop {
        // `Geometric` counts failures before the first success.
        let len = geo.sample(rng) as usize + 1;
        if (cfg.span_min..=cfg.span_max).contains(&len) {
            return len;
        }
    }
}

pub fn sample_cfm<R: Rng + ?Sized>(n_frames: usize, cfg: &CfmConfig, rng: &mut R) -> Result<Vec<Span>> {
    Ok(sample_cfm_traced(n_frames, cfg, rng)?.spans)
}

/// Samples spans until exactly `cfg.budget(n_frames)` distinct frames are
/// covered. Frames already covered by an earlier span are not re-counted and
/// do not appear twice; the last span is cut short once the budget is met.
pub fn sample_cfm_traced<R: Rng + ?Sized>(n_frames: usize, cfg: &CfmConfig, rng: &mut R) -> Result<CfmTrace> {
    cfg.validate()?;
    if n_frames == 0 {
        return Err(Error::invalid("cannot mask an empty sequence"));
    }
    let budget = cfg.budget(n_frames);
    if n_frames < cfg.span_min {
        let len = n_frames.min(budget);
        let policy = cfg.policy_probs.sample(rng);
        let start = rng.random_range(0..=n_frames - len);
        return Ok(CfmTrace {
            spans: vec![Span { start, len, policy }],
            draws: vec![(len, policy)],
        });
    }

    let mut covered = vec![false; n_frames];
    let mut n_covered = 0;
    let mut trace = CfmTrace { spans: Vec::new(), draws: Vec::new() };
    while n_covered < budget {
        let drawn = sample_span_length(cfg, rng);
        let len = drawn.min(n_frames);
        let start = rng.random_range(0..=n_frames - len);
        let policy = cfg.policy_probs.sample(rng);
        trace.draws.push((drawn, policy));

        let mut run: Option<usize> = None;
        let mut f = start;
        while f < start + len && n_covered < budget {
            if covered[f] {
                if let Some(s) = run.take() {
                    trace.spans.push(Span { start: s, len: f - s, policy });
                }
            } else {
                covered[f] = true;
                n_covered += 1;
                run.get_or_insert(f);
            }
            f += 1;
        }
        if let Some(s) = run {
            trace.spans.push(Span { start: s, len: f - s, policy });
        }
    }
    Ok(trace)
}

/// One CCM block per target group, of width uniform in `0..=H`, positioned
/// uniformly. Zero-width draws produce no block.
pub fn sample_ccm<R: Rng + ?Sized>(cfg: &CcmConfig, rng: &mut R) -> Vec<ChannelBlock> {
    cfg.groups
        .iter()
        .enumerate()
        .filter_map(|(gi, g)| {
            let width = rng.random_range(0..=g.len);
            let offset = rng.random_range(0..=g.len - width);
            (width > 0).then_some(ChannelBlock { group: gi, start: g.start + offset, width })
        })
        .collect()
}

/// CFM spans and CCM blocks for one sequence, plus the cells they make
/// reconstruction targets.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    n_frames: usize,
    spans: Vec<Span>,
    channel_blocks: Vec<ChannelBlock>,
    target_mask: Vec<bool>,
}

impl MaskPlan {
    pub fn new(n_frames: usize, spans: Vec<Span>, channel_blocks: Vec<ChannelBlock>) -> Result<Self> {
        for s in &spans {
            if s.len == 0 || s.end() > n_frames {
                return Err(Error::invalid(format!("span {s:?} outside {n_frames} frames")));
            }
        }
        for b in &channel_blocks {
            if b.width == 0 || b.start + b.width > N_CHANNELS {
                return Err(Error::invalid(format!("channel block {b:?} outside {N_CHANNELS} channels")));
            }
        }
        let mut target_mask = vec![false; n_frames * N_CHANNELS];
        for s in &spans {
            target_mask[s.start * N_CHANNELS..s.end() * N_CHANNELS].fill(true);
        }
        for b in &channel_blocks {
            for row in target_mask.chunks_exact_mut(N_CHANNELS) {
                row[b.start..b.start + b.width].fill(true);
            }
        }
        Ok(MaskPlan { n_frames, spans, channel_blocks, target_mask })
    }

    pub fn empty(n_frames: usize) -> Self {
        MaskPlan::new(n_frames, Vec::new(), Vec::new()).expect("empty plan is valid")
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn spans(&self) -> &[Span] {
        &self.spans
    }

    pub fn channel_blocks(&self) -> &[ChannelBlock] {
        &self.channel_blocks
    }

    /// Row-major `n_frames x 324` flags.
    pub fn target_mask(&self) -> &[bool] {
        &self.target_mask
    }

    pub fn n_targets(&self) -> usize {
        self.target_mask.iter().filter(|&&m| m).count()
    }

    /// Distinct frames covered by CFM spans.
    pub fn masked_frames(&self) -> usize {
        let mut hit = vec![false; self.n_frames];
        for s in &self.spans {
            hit[s.start..s.end()].fill(true);
        }
        hit.iter().filter(|&&h| h).count()
    }
}

/// Samples the CFM and/or CCM parts of a plan as the objective requires.
pub fn sample_plan<R: Rng + ?Sized>(
    n_frames: usize,
    objective: Objective,
    cfm: &CfmConfig,
    ccm: &CcmConfig,
    rng: &mut R,
) -> Result<MaskPlan> {
    let spans = if objective.uses_cfm() { sample_cfm(n_frames, cfm, rng)? } else { Vec::new() };
    let blocks = if objective.uses_ccm() { sample_ccm(ccm, rng) } else { Vec::new() };
    MaskPlan::new(n_frames, spans, blocks)
}

/// Corrupts `seq` according to `plan`. Random-policy spans copy one frame,
/// chosen uniformly among the frames outside the span, from the uncorrupted
/// input. Returns the corrupted sequence and the target mask.
pub fn apply_mask<R: Rng + ?Sized>(
    seq: &FrameSequence,
    plan: &MaskPlan,
    rng: &mut R,
) -> Result<(FrameSequence, Vec<bool>)> {
    let n = seq.n_frames();
    if plan.n_frames() != n {
        return Err(Error::invalid(format!(
            "mask plan covers {} frames but the sequence has {n}",
            plan.n_frames()
        )));
    }
    let mut out = seq.clone();
    for span in plan.spans() {
        match span.policy {
            SpanPolicy::Keep => {}
            SpanPolicy::Zero => {
                out.data_mut()[span.start * N_CHANNELS..span.end() * N_CHANNELS].fill(0.0);
            }
            SpanPolicy::Random => {
                let outside = n - span.len;
                let src = if outside == 0 {
                    rng.random_range(0..n)
                } else {
                    let i = rng.random_range(0..outside);
                    if i < span.start { i } else { i + span.len }
                };
                let source = seq.frame(src).to_vec();
                for f in span.start..span.end() {
                    out.frame_mut(f).copy_from_slice(&source);
                }
            }
        }
    }
    for b in plan.channel_blocks() {
        for f in 0..n {
            out.frame_mut(f)[b.start..b.start + b.width].fill(0.0);
        }
    }
    Ok((out, plan.target_mask().to_vec()))
}

/// Empirical statistics over many sampled plans.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskingStats {
    pub n_frames: usize,
    pub trials: usize,
    pub mean_span_length: f64,
    pub n_span_draws: usize,
    /// Mean fraction of frames covered per plan.
    pub coverage_fraction: f64,
    pub min_masked_frames: usize,
    pub max_masked_frames: usize,
    /// Fractions of span draws assigned zero / random / keep.
    pub policy_fractions: [f64; 3],
    /// Mean CCM width per group, counting zero-width draws.
    pub ccm_mean_width: Vec<f64>,
}

impl MaskingStats {
    pub fn collect<R: Rng + ?Sized>(
        n_frames: usize,
        trials: usize,
        cfm: &CfmConfig,
        ccm: &CcmConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if trials == 0 {
            return Err(Error::invalid("need at least one trial"));
        }
        let mut len_sum = 0usize;
        let mut draws = 0usize;
        let mut policy_counts = [0usize; 3];
        let mut coverage = 0.0;
        let (mut min_m, mut max_m) = (usize::MAX, 0);
        for _ in 0..trials {
            let trace = sample_cfm_traced(n_frames, cfm, rng)?;
            for &(len, policy) in &trace.draws {
                len_sum += len;
                draws += 1;
                policy_counts[SpanPolicy::ALL.iter().position(|&p| p == policy).unwrap()] += 1;
            }
            let plan = MaskPlan::new(n_frames, trace.spans, Vec::new())?;
            let masked = plan.masked_frames();
            min_m = min_m.min(masked);
            max_m = max_m.max(masked);
            coverage += masked as f64 / n_frames as f64;
        }
        let mut width_sums = vec![0usize; ccm.groups.len()];
        for _ in 0..trials {
            for b in sample_ccm(ccm, rng) {
                width_sums[b.group] += b.width;
            }
        }
        Ok(MaskingStats {
            n_frames,
            trials,
            mean_span_length: len_sum as f64 / draws as f64,
            n_span_draws: draws,
            coverage_fraction: coverage / trials as f64,
            min_masked_frames: min_m,
            max_masked_frames: max_m,
            policy_fractions: policy_counts.map(|c| c as f64 / draws as f64),
            ccm_mean_width: width_sums.iter().map(|&w| w as f64 / trials as f64).collect(),
        })
    }
}
