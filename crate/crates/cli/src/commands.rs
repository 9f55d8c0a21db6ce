//! The `decode`, `bench` and `analyze` commands.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use mars_core::analysis::{
    attention_cost, attention_entropy, cost_from_trace, drift, inject_high_norm, relocate_high_norm,
    relocation_logits, visibility_frequency, write_report, CostReport,
};
use mars_core::diffusion::{decode, decode_observed, DecodeResult, DecodeTrace};
use mars_core::mars::{Engine, EngineSpec};
use mars_core::model::{forward, forward_traced, MaskMode, Weights};
use mars_core::numeric::{seeded_stream, Matrix};
use mars_core::workload::Workload;
use serde::Serialize;

use crate::config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Drift,
    Sparsity,
    Visibility,
    Relocation,
    Cost,
}

fn prepare(config: &RunConfig) -> Result<()> {
    fs::create_dir_all(&config.output_dir)
        .with_context(|| format!("creating {}", config.output_dir.display()))?;
    config.write_echo(&config.output_dir)
}

fn report<S: Serialize>(dir: &Path, kind: &str, rows: &[S]) -> Result<()> {
    let path = dir.join(format!("{kind}.csv"));
    let out = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    write_report(out, kind, rows)?;
    Ok(())
}

fn build_engine(spec: &EngineSpec, weights: &Weights, work: &Workload) -> Result<Engine> {
    let (kind, params) = spec
        .resolve(&weights.config, &work.layout)
        .with_context(|| format!("engine `{}`", spec.display_name()))?;
    Ok(Engine::new(kind, params)?)
}

fn run_engine(engine: &mut Engine, weights: &Weights, work: &Workload, config: &RunConfig) -> Result<(DecodeResult, f64)> {
    let started = Instant::now();
    let result = decode(engine, weights, &work.layout, &work.visual, &work.prompt, &config.decode)?;
    Ok((result, started.elapsed().as_secs_f64()))
}

fn tokens_line(tokens: &[usize]) -> String {
    let mut s = tokens.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ");
    s.push('\n');
    s
}

pub fn cmd_decode(config: &RunConfig) -> Result<()> {
    prepare(config)?;
    let weights = config.weights()?;
    let work = config.workload()?;
    let mut engine = build_engine(&config.engine, &weights, &work)?;
    let (result, secs) = run_engine(&mut engine, &weights, &work, config)?;
    let dir = &config.output_dir;
    fs::write(dir.join("tokens.txt"), tokens_line(&result.tokens))?;
    let mut trace = BufWriter::new(File::create(dir.join("trace.jsonl"))?);
    result.trace.write_jsonl(&mut trace)?;
    trace.flush()?;
    println!(
        "decode engine={} steps={} tokens={} tokens_per_sec={:.1} entries={}",
        result.trace.engine,
        result.trace.num_steps(),
        result.tokens.len(),
        result.tokens.len() as f64 / secs,
        result.trace.total_entries()
    );
    Ok(())
}

#[derive(Serialize)]
struct BenchRow {
    engine: String,
    kind: String,
    steps: usize,
    tokens_per_sec: f64,
    total_entries: u64,
    entry_ratio: f64,
    row_layers: u64,
    agreement: f64,
}

pub fn cmd_bench(config: &RunConfig) -> Result<()> {
    if config.bench.engines.is_empty() {
        bail!("bench.engines is empty; list at least one engine");
    }
    prepare(config)?;
    let weights = config.weights()?;
    let work = config.workload()?;
    let (reference, _) = run_engine(&mut Engine::vanilla(), &weights, &work, config)?;
    let mut rows = Vec::new();
    for spec in &config.bench.engines {
        let mut engine = build_engine(spec, &weights, &work)?;
        let (result, secs) = run_engine(&mut engine, &weights, &work, config)?;
        let same = result.tokens.iter().zip(&reference.tokens).filter(|(a, b)| a == b).count();
        let row = BenchRow {
            engine: spec.display_name(),
            kind: result.trace.engine.clone(),
            steps: result.trace.num_steps(),
            tokens_per_sec: result.tokens.len() as f64 / secs,
            total_entries: result.trace.total_entries(),
            entry_ratio: result.trace.total_entries() as f64 / reference.trace.total_entries() as f64,
            row_layers: result.trace.total_row_layers(),
            agreement: same as f64 / reference.tokens.len() as f64,
        };
        println!(
            "bench engine={} tokens_per_sec={:.1} entries={} entry_ratio={:.4} agreement={:.3}",
            row.engine, row.tokens_per_sec, row.total_entries, row.entry_ratio, row.agreement
        );
        rows.push(row);
    }
    report(&config.output_dir, "bench", &rows)
}

#[derive(Serialize)]
struct DriftRow {
    from_step: usize,
    to_step: usize,
    scope: String,
    mean: f64,
    median: Option<f64>,
}

fn analyze_drift(config: &RunConfig, weights: &Weights, work: &Workload) -> Result<()> {
    let mut acts = Vec::new();
    decode_observed(
        &mut Engine::vanilla(),
        weights,
        &work.layout,
        &work.visual,
        &work.prompt,
        &config.decode,
        &mut |_, out| acts.extend(out.activations.clone()),
    )?;
    let mut rows = Vec::new();
    let mut ordered = 0;
    for (i, pair) in acts.windows(2).enumerate() {
        let d = drift(&pair[0], &pair[1], &weights.config, &work.layout, (i + 1, i + 2))?;
        ordered += usize::from(d.visual.mean <= d.prompt.mean);
        let mut row = |scope: String, mean: f64, median: Option<f64>| {
            rows.push(DriftRow {
                from_step: d.from_step,
                to_step: d.to_step,
                scope,
                mean,
                median,
            })
        };
        row("visual".into(), d.visual.mean, Some(d.visual.median));
        row("prompt".into(), d.prompt.mean, Some(d.prompt.median));
        row("response".into(), d.response.mean, Some(d.response.median));
        for (&l, &m) in d.layers.iter().zip(&d.per_layer) {
            row(format!("layer{l}"), m, None);
        }
    }
    println!(
        "drift pairs={} visual_le_prompt={}",
        acts.len().saturating_sub(1),
        ordered
    );
    report(&config.output_dir, "drift", &rows)
}

fn initial_embeddings(weights: &Weights, work: &Workload, visual: &Matrix) -> Result<Matrix> {
    let masked = vec![work.layout.mask_token_id(); work.layout.response_len()];
    Ok(visual
        .vstack(&weights.embed_tokens(&work.prompt)?)?
        .vstack(&weights.embed_tokens(&masked)?)?)
}

#[derive(Serialize)]
struct EntropyRow {
    layer: usize,
    group: usize,
    mean_entropy: f64,
    uniform_entropy: f64,
}

fn analyze_sparsity(config: &RunConfig, weights: &Weights, work: &Workload) -> Result<()> {
    let e = initial_embeddings(weights, work, &work.visual)?;
    let (_, _, maps) = forward_traced(weights, &e, work.layout.position_ids(), None)?;
    let uniform = (work.layout.seq_len() as f64).ln();
    let rows: Vec<EntropyRow> = attention_entropy(&maps)
        .into_iter()
        .enumerate()
        .map(|(layer, mean_entropy)| EntropyRow {
            layer,
            group: weights.config.group_of_layer(layer),
            mean_entropy,
            uniform_entropy: uniform,
        })
        .collect();
    report(&config.output_dir, "sparsity", &rows)
}

#[derive(Serialize)]
struct VisibilityRow {
    position: usize,
    visibility: u64,
}

fn analyze_visibility(config: &RunConfig) -> Result<()> {
    let rows: Vec<VisibilityRow> = visibility_frequency(config.analysis.visibility_length)
        .into_iter()
        .enumerate()
        .map(|(j, visibility)| VisibilityRow {
            position: j + 1,
            visibility,
        })
        .collect();
    report(&config.output_dir, "visibility", &rows)
}

#[derive(Serialize)]
struct RelocationRow {
    mask_mode: &'static str,
    ratio: f64,
    run_start: usize,
    max_logit_delta: f64,
}

fn analyze_relocation(config: &RunConfig, weights: &Weights, work: &Workload) -> Result<()> {
    let a = &config.analysis;
    let mut rng = seeded_stream(config.seed, "analysis/high-norm");
    let (visual, _) = inject_high_norm(&work.visual, a.relocation_count, a.relocation_factor, &mut rng);
    let e = initial_embeddings(weights, work, &visual)?;
    let (base, _) = forward(weights, &e, work.layout.position_ids(), None)?;
    let mode = match weights.config.mask_mode {
        MaskMode::Bidirectional => "bidirectional",
        MaskMode::Causal => "causal",
    };
    let mut rows = Vec::new();
    for &r in &a.relocation_ratios {
        let moved = relocate_high_norm(&e, work.layout.position_ids(), &work.layout, a.relocation_count, r)?;
        let logits = relocation_logits(weights, &e, &work.layout, a.relocation_count, r)?;
        rows.push(RelocationRow {
            mask_mode: mode,
            ratio: r,
            run_start: moved.start,
            max_logit_delta: logits.max_abs_diff(&base)?,
        });
    }
    report(&config.output_dir, "relocation", &rows)?;
    if weights.config.mask_mode == MaskMode::Bidirectional {
        if let Some(bad) = rows.iter().find(|r| r.max_logit_delta > 1e-9) {
            bail!(
                "bidirectional logits moved by {:e} at ratio {}",
                bad.max_logit_delta,
                bad.ratio
            );
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct CostRow {
    step: usize,
    block: usize,
    block_step: usize,
    analytic_entries: u64,
    recorded_entries: Option<u64>,
    entries_delta: Option<i64>,
    analytic_row_layers: u64,
    recorded_row_layers: Option<u64>,
    vanilla_entries: u64,
}

fn analyze_cost(config: &RunConfig, weights: &Weights, trace: Option<&Path>) -> Result<()> {
    let layout = config.sequence_layout()?;
    let (kind, params) = config.engine.resolve(&weights.config, &layout)?;
    let cost: CostReport = match trace {
        Some(path) => {
            let file = File::open(path).with_context(|| format!("opening trace {}", path.display()))?;
            let trace = DecodeTrace::read_jsonl(BufReader::new(file))?;
            cost_from_trace(&trace, kind, params.as_ref(), &weights.config, &layout)?
        }
        None => attention_cost(kind, params.as_ref(), &weights.config, &layout, &config.decode)?,
    };
    let rows: Vec<CostRow> = cost
        .steps
        .iter()
        .map(|s| CostRow {
            step: s.step,
            block: s.block,
            block_step: s.block_step,
            analytic_entries: s.analytic_entries,
            recorded_entries: s.recorded_entries,
            entries_delta: s.recorded_entries.map(|r| r as i64 - s.analytic_entries as i64),
            analytic_row_layers: s.analytic_row_layers,
            recorded_row_layers: s.recorded_row_layers,
            vanilla_entries: s.vanilla_entries,
        })
        .collect();
    println!(
        "cost engine={} entries={} vanilla_entries={} entry_ratio={:.5} row_layer_ratio={:.5}",
        cost.engine,
        cost.total_entries(),
        cost.vanilla_entries(),
        cost.entry_ratio(),
        cost.row_layer_ratio()
    );
    report(&config.output_dir, "cost", &rows)
}

pub fn cmd_analyze(config: &RunConfig, mode: Mode, trace: Option<&Path>) -> Result<()> {
    if trace.is_some() && mode != Mode::Cost {
        bail!("--trace only applies to the cost mode");
    }
    prepare(config)?;
    if mode == Mode::Visibility {
        return analyze_visibility(config);
    }
    let weights = config.weights()?;
    match mode {
        Mode::Cost => analyze_cost(config, &weights, trace),
        Mode::Drift => analyze_drift(config, &weights, &config.workload()?),
        Mode::Sparsity => analyze_sparsity(config, &weights, &config.workload()?),
        Mode::Relocation => analyze_relocation(config, &weights, &config.workload()?),
        Mode::Visibility => unreachable!(),
    }
}
