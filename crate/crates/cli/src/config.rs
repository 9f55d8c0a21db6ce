//! Run configuration: one TOML file per run, with `--set key=value`
//! overrides applied before deserialization.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mars_core::diffusion::{DecodeConfig, SequenceLayout};
use mars_core::mars::EngineSpec;
use mars_core::model::{init_weights, load_snapshot, ModelConfig, Weights};
use mars_core::workload::{synthetic_workload, LayoutConfig, Workload};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds the synthetic workload, and the weights unless `weights_seed`
    /// or `weights` is set.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_seed: Option<u64>,
    /// Weight snapshot to load instead of initializing from a seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub layout: LayoutConfig,
    #[serde(default)]
    pub decode: DecodeConfig,
    #[serde(default)]
    pub engine: EngineSpec,
    #[serde(default)]
    pub bench: BenchConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub engines: Vec<EngineSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Sequence length for the visibility report.
    pub visibility_length: usize,
    /// Number of high-norm visual tokens to inject and relocate.
    pub relocation_count: usize,
    /// Scale applied to the injected rows.
    pub relocation_factor: f64,
    pub relocation_ratios: Vec<f64>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            visibility_length: 1024,
            relocation_count: 16,
            relocation_factor: 8.0,
            relocation_ratios: vec![0.0, 0.25, 0.5, 0.75, 1.0],
        }
    }
}

fn default_seed() -> u64 {
    42
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Parses an override value as a TOML literal, or as a bare string when it
/// is not one.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .with_context(|| format!("override `{spec}` is not key=value"))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut at = table;
    for p in parents {
        at = at
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .with_context(|| format!("override `{key}`: `{p}` is not a table"))?;
    }
    at.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text, overrides).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text)?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: RunConfig = toml::Value::Table(table).try_into()?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().context("model")?;
        self.decode.validate().context("decode")?;
        if self.analysis.relocation_ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
            bail!("analysis.relocation_ratios must lie in [0, 1]");
        }
        Ok(())
    }

    /// This config with every engine spec expanded, so the echo does not
    /// depend on preset files.
    pub fn resolved(&self) -> Result<Self> {
        let mut out = self.clone();
        out.engine = self.engine.expand().context("engine")?;
        out.bench.engines = self
            .bench
            .engines
            .iter()
            .map(|e| e.expand())
            .collect::<mars_core::Result<_>>()
            .context("bench.engines")?;
        if out.weights.is_none() && out.weights_seed.is_none() {
            out.weights_seed = Some(self.seed);
        }
        Ok(out)
    }

    pub fn weights(&self) -> Result<Weights> {
        let w = match &self.weights {
            Some(p) => load_snapshot(p).with_context(|| format!("loading weights {}", p.display()))?,
            None => init_weights(&self.model, self.weights_seed.unwrap_or(self.seed))?,
        };
        if w.config != self.model {
            bail!("weights snapshot does not match the [model] section");
        }
        Ok(w)
    }

    pub fn workload(&self) -> Result<Workload> {
        Ok(synthetic_workload(&self.model, &self.layout, &self.decode, self.seed)?)
    }

    pub fn sequence_layout(&self) -> Result<SequenceLayout> {
        Ok(self.layout.layout(&self.model, &self.decode)?)
    }

    pub fn write_echo(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string_pretty(&self.resolved()?)?;
        std::fs::write(dir.join("config.toml"), text)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_default_run() {
        let c = RunConfig::parse("", &[]).unwrap();
        assert_eq!(c.seed, 42);
        assert_eq!(c.model, ModelConfig::default());
        assert_eq!(c.decode, DecodeConfig::default());
        assert_eq!(c.output_dir, PathBuf::from("out"));
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let c = RunConfig::parse(
            "[engine]\npresets = [\"table10-pyramid\"]\n",
            &[
                "seed=7".into(),
                "model.mask_mode=causal".into(),
                "engine.engine_kind=dual_cache".into(),
                "output_dir=/tmp/x".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.model.mask_mode, mars_core::model::MaskMode::Causal);
        assert_eq!(c.engine.engine_kind, Some(mars_core::mars::EngineKind::DualCache));
        assert_eq!(c.output_dir, PathBuf::from("/tmp/x"));
        assert!(RunConfig::parse("", &["seed".into()]).is_err());
    }

    #[test]
    fn unknown_and_invalid_fields_are_named() {
        let err = format!("{:#}", RunConfig::parse("[decode]\nnum_stepz = 3\n", &[]).unwrap_err());
        assert!(err.contains("num_stepz"), "{err}");
        let err = format!(
            "{:#}",
            RunConfig::parse("[decode]\ngeneration_length = 64\nnum_steps = 1\nblock_length = 32\ntokens_per_step = 1\n", &[])
                .unwrap_err()
        );
        assert!(err.contains("decode"), "{err}");
    }

    #[test]
    fn echo_round_trips() {
        let c = RunConfig::parse("[engine]\npresets = [\"always-refresh\"]\n", &[]).unwrap();
        let echo = toml::to_string_pretty(&c.resolved().unwrap()).unwrap();
        let back = RunConfig::parse(&echo, &[]).unwrap();
        assert_eq!(back, c.resolved().unwrap());
        assert!(back.engine.presets.is_empty());
    }
}
