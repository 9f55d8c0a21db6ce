//! Engine-level properties on the default toy workload.

use mars_core::diffusion::{decode, decode_observed, DecodeConfig, DecodeTrace, SequenceLayout};
use mars_core::mars::{Engine, EngineSpec, MarsParams, Modality};
use mars_core::model::{init_weights, ModelConfig, Weights};
use mars_core::workload::{synthetic_workload, LayoutConfig, Workload};

fn setup(decode_cfg: &DecodeConfig) -> (Weights, Workload) {
    let config = ModelConfig::default();
    let weights = init_weights(&config, 42).unwrap();
    let work = synthetic_workload(&config, &LayoutConfig::default(), decode_cfg, 42).unwrap();
    (weights, work)
}

fn mars_engine(spec: EngineSpec, weights: &Weights, layout: &SequenceLayout) -> Engine {
    let (kind, params) = spec.resolve(&weights.config, layout).unwrap();
    Engine::new(kind, params).unwrap()
}

fn run(engine: &mut Engine, weights: &Weights, work: &Workload, cfg: &DecodeConfig) -> (Vec<usize>, DecodeTrace) {
    let r = decode(engine, weights, &work.layout, &work.visual, &work.prompt, cfg).unwrap();
    (r.tokens, r.trace)
}

/// Independent count of the score entries a MARS step evaluates: walks every
/// (query, key) pair of every layer and applies the visibility rules directly.
fn oracle_mars_entries(layout: &SequenceLayout, budgets: &[usize], tau_text: &[usize], tau_visual: &[usize], step: usize, block: usize) -> u64 {
    let n = layout.seq_len();
    let v = layout.visual_len();
    let p = layout.patches_per_frame();
    let active = layout.response_blocks()[block].clone();
    let mut total = 0u64;
    for (g, &k) in budgets.iter().enumerate() {
        let mut per_layer = 0u64;
        for q in 0..n {
            let recompute = if q < v {
                step.is_multiple_of(tau_visual[g])
            } else {
                active.contains(&q) || step.is_multiple_of(tau_text[g])
            };
            if !recompute {
                continue;
            }
            for key in 0..n {
                let visible = if q >= v || q % p < k {
                    true
                } else {
                    let (fq, fk) = (q / p, key / p);
                    key < v && (fq.abs_diff(fk) <= 1 || key % p < k)
                };
                per_layer += u64::from(visible);
            }
        }
        total += per_layer * 2;
    }
    total
}

#[test]
fn pinned_entry_totals_on_default_workload() {
    let cfg = DecodeConfig::default();
    let (weights, work) = setup(&cfg);
    let (_, vanilla) = run(&mut Engine::vanilla(), &weights, &work, &cfg);
    let (_, dual) = run(&mut Engine::dual_cache(), &weights, &work, &cfg);
    let mut mars = mars_engine(EngineSpec::default(), &weights, &work.layout);
    let (_, m) = run(&mut mars, &weights, &work, &cfg);
    assert_eq!(vanilla.num_steps(), 16);
    assert_eq!(vanilla.total_entries(), 5_537_792);
    assert_eq!(dual.total_entries(), 1_437_696);
    assert_eq!(m.total_entries(), 1_268_256);
}

#[test]
fn recorded_entries_match_the_pair_walking_oracle() {
    let cfg = DecodeConfig::default();
    let (weights, work) = setup(&cfg);
    let mut mars = mars_engine(EngineSpec::default(), &weights, &work.layout);
    let (_, trace) = run(&mut mars, &weights, &work, &cfg);
    let l = work.layout.seq_len() as u64;
    for r in &trace.records {
        let expected = if r.step == 1 {
            8 * l * l
        } else {
            // Oracle assumes the lowest-index anchors; counts depend only on budgets.
            oracle_mars_entries(&work.layout, &[16, 8, 4, 2], &[64, 32, 16, 8], &[64, 32, 16, 8], r.step, r.block)
        };
        assert_eq!(r.entries, expected, "step {}", r.step);
    }
}

#[test]
fn always_refresh_matches_vanilla() {
    let cfg = DecodeConfig::default();
    let (weights, work) = setup(&cfg);
    let mut reference = Vec::new();
    decode_observed(&mut Engine::vanilla(), &weights, &work.layout, &work.visual, &work.prompt, &cfg, &mut |_, out| {
        reference.push(out.logits.clone())
    })
    .unwrap();
    let mut mars = Engine::mars(MarsParams::always_refresh(4, 16)).unwrap();
    let mut worst = 0.0f64;
    let mut i = 0;
    decode_observed(&mut mars, &weights, &work.layout, &work.visual, &work.prompt, &cfg, &mut |_, out| {
        worst = worst.max(out.logits.max_abs_diff(&reference[i]).unwrap());
        i += 1;
    })
    .unwrap();
    assert_eq!(i, reference.len());
    assert!(worst <= 1e-9, "max |Δlogit| = {worst:e}");
}

#[test]
fn refresh_counts_suffix_and_anchor_stability_on_long_protocol() {
    let cfg = DecodeConfig::ablation_protocol();
    let (weights, work) = setup(&cfg);
    for (preset, visual) in [("table10-pyramid", [2, 4, 8, 16]), ("table10-pyramid-x2", [1, 2, 4, 8])] {
        let spec = EngineSpec {
            presets: vec![preset.into()],
            ..Default::default()
        };
        let mut mars = mars_engine(spec, &weights, &work.layout);
        let (_, trace) = run(&mut mars, &weights, &work, &cfg);
        assert_eq!(trace.num_steps(), 128);
        let counts = trace.refresh_counts();
        assert_eq!(counts.iter().map(|c| c.text).collect::<Vec<_>>(), vec![2, 4, 8, 16]);
        assert_eq!(counts.iter().map(|c| c.visual).collect::<Vec<_>>(), visual.to_vec());
        for r in &trace.records {
            for pick in [|g: &mars_core::diffusion::GroupRefresh| g.visual, |g: &mars_core::diffusion::GroupRefresh| g.text] {
                let flags: Vec<bool> = r.refresh.iter().map(pick).collect();
                let first = flags.iter().position(|&f| f).unwrap_or(flags.len());
                assert!(flags[first..].iter().all(|&f| f), "step {} not a suffix: {flags:?}", r.step);
            }
        }
        let digest = trace.records[0].anchor_digest.clone().unwrap();
        assert!(trace.records.iter().all(|r| r.anchor_digest.as_deref() == Some(digest.as_str())));
        assert_eq!(mars.last_refresh(3, Modality::Text), Some(128));
    }
}
