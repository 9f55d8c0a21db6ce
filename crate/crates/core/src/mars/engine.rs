use serde::{Deserialize, Serialize};

use crate::diffusion::{DenoiseEngine, GroupRefresh, SequenceLayout, StepContext, StepOutput, StepReport};
use crate::error::{Error, Result};
use crate::model::{forward, forward_rows, KeySet, LayerKv, LayerPlan, MaskMode, ModelConfig, RowCache, Weights};
use crate::numeric::Matrix;

use super::anchors::{check_budgets, equidistant_sample, proxy_scores, select_anchors, AnchorPlan};
use super::chunk::anchor_keysets;
use super::schedule::{refresh_due, validate_schedule, Modality, RefreshSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    Vanilla,
    DualCache,
    Mars,
}

impl EngineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EngineKind::Vanilla => "vanilla",
            EngineKind::DualCache => "dual_cache",
            EngineKind::Mars => "mars",
        }
    }
}

/// Fully resolved MARS parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarsParams {
    pub schedule: RefreshSchedule,
    /// Per-frame anchor budget for each group, shallow to deep.
    pub budgets: Vec<usize>,
    /// When off, refreshed visual rows use full attention and no anchors are
    /// selected.
    pub chunk_enabled: bool,
    pub sample_size: usize,
    /// Let non-anchor visual rows see prompt and response keys as well.
    pub text_keys_for_chunked: bool,
}

impl MarsParams {
    /// τ ≡ 1 with every visual token an anchor: a full recompute each step.
    pub fn always_refresh(groups: usize, patches_per_frame: usize) -> Self {
        Self {
            schedule: RefreshSchedule::always(groups),
            budgets: vec![patches_per_frame; groups],
            chunk_enabled: true,
            sample_size: 32,
            text_keys_for_chunked: false,
        }
    }

    pub fn validate(&self, config: &ModelConfig, layout: &SequenceLayout) -> Result<()> {
        validate_schedule(&self.schedule)?;
        let groups = config.num_groups();
        if self.schedule.groups() != groups || self.budgets.len() != groups {
            return Err(Error::Config(format!(
                "model has {groups} layer groups but the schedule has {} and the budgets {}",
                self.schedule.groups(),
                self.budgets.len()
            )));
        }
        if self.chunk_enabled {
            check_budgets(&self.budgets, layout.patches_per_frame())?;
            if self.sample_size == 0 {
                return Err(Error::Config("sample_size must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Which rows every layer recomputes at one step.
#[derive(Debug, Clone)]
pub struct StepPlan {
    pub full_recompute: bool,
    pub layers: Vec<LayerPlan>,
    pub refresh: Vec<GroupRefresh>,
}

impl StepPlan {
    pub fn entries(&self, seq_len: usize) -> u64 {
        self.layers.iter().map(|p| p.entries(seq_len)).sum()
    }

    pub fn row_layers(&self) -> u64 {
        self.layers.iter().map(|p| p.rows.len() as u64).sum()
    }
}

fn full_plan(config: &ModelConfig, layout: &SequenceLayout) -> StepPlan {
    let n = layout.seq_len();
    let keys: Vec<KeySet> = match config.mask_mode {
        MaskMode::Bidirectional => vec![KeySet::All; n],
        MaskMode::Causal => (0..n).map(|i| KeySet::subset((0..=i).collect())).collect(),
    };
    let plan = LayerPlan {
        rows: (0..n).collect(),
        keys,
    };
    StepPlan {
        full_recompute: true,
        layers: vec![plan; config.num_layers],
        refresh: vec![GroupRefresh::default(); config.num_groups()],
    }
}

fn active_plan(config: &ModelConfig, layout: &SequenceLayout, block: usize) -> StepPlan {
    let rows: Vec<usize> = layout.response_blocks()[block].clone().collect();
    let plan = LayerPlan {
        keys: vec![KeySet::All; rows.len()],
        rows,
    };
    StepPlan {
        full_recompute: false,
        layers: vec![plan; config.num_layers],
        refresh: vec![GroupRefresh::default(); config.num_groups()],
    }
}

/// Key sets of the visual rows for each group: anchor visibility when
/// chunking is on, otherwise full attention.
pub fn visual_keysets(layout: &SequenceLayout, params: &MarsParams, anchors: Option<&AnchorPlan>) -> Vec<Vec<KeySet>> {
    let visual = layout.visual_len();
    (0..params.budgets.len())
        .map(|g| match (params.chunk_enabled, anchors) {
            (true, Some(plan)) => {
                let mut ks = anchor_keysets(layout, &plan.anchors(g), params.text_keys_for_chunked);
                ks.truncate(visual);
                ks
            }
            _ => vec![KeySet::All; visual],
        })
        .collect()
}

/// The attention plan of a MARS step `t > 1`: the active block always, plus
/// each modality's context rows in the groups where that modality is due.
pub fn mars_plan(
    config: &ModelConfig,
    layout: &SequenceLayout,
    params: &MarsParams,
    visual_keys: &[Vec<KeySet>],
    step: usize,
    block: usize,
) -> StepPlan {
    let n = layout.seq_len();
    let visual = layout.visual_len();
    let active = layout.response_blocks()[block].clone();
    let mut layers = Vec::with_capacity(config.num_layers);
    let mut refresh = Vec::with_capacity(config.num_groups());
    for (g, group_keys) in visual_keys.iter().enumerate().take(config.num_groups()) {
        let r = GroupRefresh {
            visual: refresh_due(step, g, Modality::Visual, &params.schedule),
            text: refresh_due(step, g, Modality::Text, &params.schedule),
        };
        let mut plan = LayerPlan::default();
        #[allow(clippy::needless_range_loop)]
        for i in 0..n {
            let take = if i < visual {
                r.visual
            } else {
                r.text || active.contains(&i)
            };
            if take {
                plan.rows.push(i);
                plan.keys.push(if i < visual {
                    group_keys[i].clone()
                } else {
                    KeySet::All
                });
            }
        }
        layers.extend(std::iter::repeat_n(plan, config.group_layers(g).len()));
        refresh.push(r);
    }
    StepPlan {
        full_recompute: false,
        layers,
        refresh,
    }
}

/// The plan any engine would follow at a step, with anchors supplied by the
/// caller. Entry counts depend on anchor budgets only, so
/// [`AnchorPlan::lowest`] serves for analytic accounting.
#[allow(clippy::too_many_arguments)]
pub fn step_plan(
    kind: EngineKind,
    params: Option<&MarsParams>,
    config: &ModelConfig,
    layout: &SequenceLayout,
    anchors: Option<&AnchorPlan>,
    step: usize,
    block: usize,
    block_step: usize,
) -> Result<StepPlan> {
    Ok(match kind {
        EngineKind::Vanilla => full_plan(config, layout),
        EngineKind::DualCache if block_step == 1 => full_plan(config, layout),
        EngineKind::DualCache => active_plan(config, layout, block),
        EngineKind::Mars if step == 1 => full_plan(config, layout),
        EngineKind::Mars => {
            let params = params.ok_or_else(|| Error::Config("mars engine without parameters".into()))?;
            let keys = visual_keysets(layout, params, anchors);
            mars_plan(config, layout, params, &keys, step, block)
        }
    })
}

struct CacheState {
    cache: RowCache,
    block: usize,
    anchors: Option<AnchorPlan>,
    digest: Option<String>,
    visual_keys: Vec<Vec<KeySet>>,
    /// Last step each group's (visual, text) context was recomputed.
    last_refresh: Vec<[usize; 2]>,
}

/// A denoising engine. Owns its cache for one decode; build a fresh engine
/// (or call [`Engine::reset`]) per decode.
pub struct Engine {
    kind: EngineKind,
    mars: Option<MarsParams>,
    state: Option<CacheState>,
}

impl Engine {
    pub fn vanilla() -> Self {
        Self {
            kind: EngineKind::Vanilla,
            mars: None,
            state: None,
        }
    }

    pub fn dual_cache() -> Self {
        Self {
            kind: EngineKind::DualCache,
            mars: None,
            state: None,
        }
    }

    pub fn mars(params: MarsParams) -> Result<Self> {
        validate_schedule(&params.schedule)?;
        Ok(Self {
            kind: EngineKind::Mars,
            mars: Some(params),
            state: None,
        })
    }

    pub fn new(kind: EngineKind, params: Option<MarsParams>) -> Result<Self> {
        match (kind, params) {
            (EngineKind::Mars, Some(p)) => Self::mars(p),
            (EngineKind::Mars, None) => Err(Error::Config("mars engine needs parameters".into())),
            (EngineKind::Vanilla, _) => Ok(Self::vanilla()),
            (EngineKind::DualCache, _) => Ok(Self::dual_cache()),
        }
    }

    pub fn kind(&self) -> EngineKind {
        self.kind
    }

    pub fn params(&self) -> Option<&MarsParams> {
        self.mars.as_ref()
    }

    pub fn reset(&mut self) {
        self.state = None;
    }

    /// Cached keys/values and group-boundary hidden states, once initialized.
    pub fn cache(&self) -> Option<&RowCache> {
        self.state.as_ref().map(|s| &s.cache)
    }

    pub fn anchor_plan(&self) -> Option<&AnchorPlan> {
        self.state.as_ref().and_then(|s| s.anchors.as_ref())
    }

    /// Last step at which each group's context was recomputed, per modality.
    pub fn last_refresh(&self, group: usize, modality: Modality) -> Option<usize> {
        let s = self.state.as_ref()?;
        let i = match modality {
            Modality::Visual => 0,
            Modality::Text => 1,
        };
        s.last_refresh.get(group).map(|r| r[i])
    }

    fn full_step(&mut self, ctx: &StepContext<'_>) -> Result<StepOutput> {
        let (weights, layout) = (ctx.weights, ctx.layout);
        let (logits, acts) = forward(weights, ctx.embeddings, layout.position_ids(), None)?;
        let plan = full_plan(&weights.config, layout);
        let active: Vec<usize> = layout.response_blocks()[ctx.block].clone().collect();
        let mut report = StepReport {
            full_recompute: true,
            refresh: plan.refresh.clone(),
            entries: plan.entries(layout.seq_len()),
            row_layers: plan.row_layers(),
            ..StepReport::default()
        };
        if self.kind != EngineKind::Vanilla {
            let groups = weights.config.num_groups();
            let mut state = CacheState {
                cache: RowCache::from_activations(weights, &acts),
                block: ctx.block,
                anchors: None,
                digest: None,
                visual_keys: Vec::new(),
                last_refresh: vec![[ctx.step; 2]; groups],
            };
            if let Some(params) = &self.mars {
                if params.chunk_enabled {
                    let (plan, proxy) = build_anchor_plan(weights, layout, params, &acts.hidden, &acts.kv)?;
                    report.proxy_entries = proxy;
                    state.digest = Some(plan.digest());
                    state.anchors = Some(plan);
                }
                state.visual_keys = visual_keysets(layout, params, state.anchors.as_ref());
                report.anchor_digest = state.digest.clone();
            }
            self.state = Some(state);
        }
        Ok(StepOutput {
            logits: logits.select_rows(&active),
            report,
            activations: Some(acts),
        })
    }

    fn cached_step(&mut self, ctx: &StepContext<'_>, plan: StepPlan) -> Result<StepOutput> {
        let (weights, layout) = (ctx.weights, ctx.layout);
        let state = self.state.as_mut().ok_or(Error::Uninitialized { step: ctx.step })?;
        let active: Vec<usize> = layout.response_blocks()[ctx.block].clone().collect();
        let out = forward_rows(
            weights,
            &mut state.cache,
            ctx.embeddings,
            layout.position_ids(),
            &plan.layers,
            &active,
        )?;
        for (g, r) in plan.refresh.iter().enumerate() {
            if r.visual {
                state.last_refresh[g][0] = ctx.step;
            }
            if r.text {
                state.last_refresh[g][1] = ctx.step;
            }
        }
        Ok(StepOutput {
            logits: out.logits,
            report: StepReport {
                full_recompute: false,
                refresh: plan.refresh,
                entries: out.entries,
                row_layers: out.row_layers,
                proxy_entries: 0,
                anchor_digest: state.digest.clone(),
            },
            activations: None,
        })
    }
}

/// Scores the equidistant sample against the visual keys at each group's
/// first layer, averaging heads, and picks each group's anchors.
fn build_anchor_plan(
    weights: &Weights,
    layout: &SequenceLayout,
    params: &MarsParams,
    hidden: &[Matrix],
    kv: &[LayerKv],
) -> Result<(AnchorPlan, u64)> {
    let cfg = &weights.config;
    let sample = equidistant_sample(layout.seq_len(), params.sample_size);
    let visual: Vec<usize> = layout.visual_span().collect();
    let dk = cfg.head_dim;
    let mut scores = Vec::with_capacity(cfg.num_groups());
    let mut proxy = 0u64;
    for &layer in &cfg.group_boundaries {
        let input = hidden[layer].select_rows(&sample);
        let q = weights.project_queries(layer, &input, &sample, layout.position_ids())?;
        let mut sum = Matrix::zeros(sample.len(), visual.len());
        for h in 0..cfg.num_heads {
            let mut qh = Matrix::zeros(layout.seq_len(), dk);
            qh.set_rows(&sample, &q.column_block(h * dk, dk))?;
            let kh = kv[layer].keys.column_block(h * dk, dk);
            sum.add_assign(&proxy_scores(&qh, &kh, &sample, &visual)?)?;
        }
        sum.scale(1.0 / cfg.num_heads as f64);
        proxy += (sample.len() * visual.len() * cfg.num_heads) as u64;
        scores.push(sum);
    }
    Ok((select_anchors(&scores, layout, &params.budgets, sample.clone())?, proxy))
}

impl DenoiseEngine for Engine {
    fn name(&self) -> &str {
        self.kind.as_str()
    }

    fn step(&mut self, ctx: &StepContext<'_>) -> Result<StepOutput> {
        let cfg = &ctx.weights.config;
        if self.kind != EngineKind::Vanilla && cfg.mask_mode != MaskMode::Bidirectional {
            return Err(Error::Config(format!(
                "{} engine requires bidirectional attention",
                self.kind.as_str()
            )));
        }
        if ctx.step == 0 || ctx.block_step == 0 {
            return Err(Error::OutOfRange("steps are 1-based".into()));
        }
        if let Some(p) = &self.mars {
            p.validate(cfg, ctx.layout)?;
        }
        match self.kind {
            EngineKind::Vanilla => self.full_step(ctx),
            EngineKind::DualCache if ctx.block_step == 1 => self.full_step(ctx),
            EngineKind::DualCache => {
                match &self.state {
                    None => return Err(Error::Uninitialized { step: ctx.step }),
                    Some(s) if s.block != ctx.block => {
                        return Err(Error::Uninitialized { step: ctx.step })
                    }
                    _ => {}
                }
                let plan = active_plan(cfg, ctx.layout, ctx.block);
                self.cached_step(ctx, plan)
            }
            EngineKind::Mars if ctx.step == 1 => self.full_step(ctx),
            EngineKind::Mars => {
                let state = self.state.as_ref().ok_or(Error::Uninitialized { step: ctx.step })?;
                let params = self.mars.as_ref().expect("mars params");
                let plan = mars_plan(cfg, ctx.layout, params, &state.visual_keys, ctx.step, ctx.block);
                self.cached_step(ctx, plan)
            }
        }
    }
}

/// One denoising step of `engine`.
pub fn engine_step(engine: &mut Engine, ctx: &StepContext<'_>) -> Result<StepOutput> {
    engine.step(ctx)
}
