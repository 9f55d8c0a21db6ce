use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::SequenceLayout;
use crate::error::{Error, Result};
use crate::model::ModelConfig;

use super::engine::{EngineKind, MarsParams};
use super::schedule::RefreshSchedule;

/// A per-frame anchor budget: a token count or `"full"` (every token is an
/// anchor, i.e. full attention).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BudgetRepr", into = "BudgetRepr")]
pub enum Budget {
    Full,
    Tokens(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BudgetRepr {
    Tokens(usize),
    Word(String),
}

impl TryFrom<BudgetRepr> for Budget {
    type Error = String;

    fn try_from(r: BudgetRepr) -> std::result::Result<Self, String> {
        match r {
            BudgetRepr::Tokens(n) => Ok(Budget::Tokens(n)),
            BudgetRepr::Word(w) if w == "full" => Ok(Budget::Full),
            BudgetRepr::Word(w) => Err(format!("anchor budget must be an integer or \"full\", got {w:?}")),
        }
    }
}

impl From<Budget> for BudgetRepr {
    fn from(b: Budget) -> Self {
        match b {
            Budget::Full => BudgetRepr::Word("full".into()),
            Budget::Tokens(n) => BudgetRepr::Tokens(n),
        }
    }
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Budget::Full => f.write_str("full"),
            Budget::Tokens(n) => write!(f, "{n}"),
        }
    }
}

impl Budget {
    pub fn resolve(self, patches_per_frame: usize) -> usize {
        match self {
            Budget::Full => patches_per_frame,
            Budget::Tokens(n) => n,
        }
    }
}

/// Engine section of a config file or a preset. Every field is optional;
/// `presets` are applied in order, then the explicit fields on top, then the
/// defaults (`mars` with `table10-pyramid` and `table8-best`).
///
/// A list of length one applies to every group.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineSpec {
    /// Display name in reports; defaults to the engine kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub presets: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub engine_kind: Option<EngineKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_text: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_visual: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_budgets: Option<Vec<Budget>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_enabled: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_keys_for_chunked: Option<bool>,
}

const BUILTIN: &[(&str, &str)] = &[
    ("always-refresh", include_str!("../../presets/always-refresh.toml")),
    ("paper-best", include_str!("../../presets/paper-best.toml")),
    ("table8-full", include_str!("../../presets/table8-full.toml")),
    ("table8-chunk-only", include_str!("../../presets/table8-chunk-only.toml")),
    ("table8-uniform-32", include_str!("../../presets/table8-uniform-32.toml")),
    ("table8-shallow-full", include_str!("../../presets/table8-shallow-full.toml")),
    ("table8-uniform-128", include_str!("../../presets/table8-uniform-128.toml")),
    ("table8-128-32", include_str!("../../presets/table8-128-32.toml")),
    ("table8-full-32", include_str!("../../presets/table8-full-32.toml")),
    ("table8-best", include_str!("../../presets/table8-best.toml")),
    ("table10-uniform-32", include_str!("../../presets/table10-uniform-32.toml")),
    ("table10-64-64-32-32", include_str!("../../presets/table10-64-64-32-32.toml")),
    ("table10-32-32-16-16", include_str!("../../presets/table10-32-32-16-16.toml")),
    ("table10-32-32-16-8", include_str!("../../presets/table10-32-32-16-8.toml")),
    ("table10-32-16-8-4", include_str!("../../presets/table10-32-16-8-4.toml")),
    ("table10-pyramid", include_str!("../../presets/table10-pyramid.toml")),
    ("table10-32-32-16-8-x2", include_str!("../../presets/table10-32-32-16-8-x2.toml")),
    ("table10-32-16-8-4-x2", include_str!("../../presets/table10-32-16-8-4-x2.toml")),
    ("table10-pyramid-x2", include_str!("../../presets/table10-pyramid-x2.toml")),
];

pub fn builtin_preset_names() -> Vec<&'static str> {
    BUILTIN.iter().map(|(n, _)| *n).collect()
}

/// Loads a built-in preset by name, or a preset file when `name` names an
/// existing `.toml` path.
pub fn load_preset(name: &str) -> Result<EngineSpec> {
    let text = match BUILTIN.iter().find(|(n, _)| *n == name) {
        Some((_, t)) => t.to_string(),
        None if name.ends_with(".toml") && Path::new(name).is_file() => std::fs::read_to_string(name)?,
        None => return Err(Error::UnknownPreset(name.into())),
    };
    let spec: EngineSpec = toml::from_str(&text)?;
    if !spec.presets.is_empty() {
        return Err(Error::Config(format!("preset `{name}` may not include other presets")));
    }
    Ok(spec)
}

fn broadcast<T: Clone>(field: &str, values: Vec<T>, groups: usize) -> Result<Vec<T>> {
    match values.len() {
        1 => Ok(vec![values[0].clone(); groups]),
        n if n == groups => Ok(values),
        n => Err(Error::Config(format!("engine.{field} has {n} entries for {groups} groups"))),
    }
}

impl EngineSpec {
    /// Overwrites every field that `other` sets.
    pub fn merge(&mut self, other: &EngineSpec) {
        macro_rules! take {
            ($($f:ident),*) => {$(if other.$f.is_some() { self.$f = other.$f.clone(); })*};
        }
        take!(engine_kind, groups, tau_text, tau_visual, anchor_budgets, chunk_enabled, sample_size, text_keys_for_chunked);
    }

    /// Presets, then explicit fields, then defaults. The result names no
    /// presets and sets every field.
    pub fn expand(&self) -> Result<EngineSpec> {
        let mut out = load_preset("table10-pyramid")?;
        out.merge(&load_preset("table8-best")?);
        out.engine_kind = Some(EngineKind::Mars);
        out.text_keys_for_chunked = Some(false);
        for p in &self.presets {
            out.merge(&load_preset(p)?);
        }
        out.merge(self);
        out.label = self.label.clone();
        Ok(out)
    }

    pub fn display_name(&self) -> String {
        match (&self.label, self.engine_kind) {
            (Some(l), _) => l.clone(),
            (None, Some(k)) => k.as_str().into(),
            (None, None) => EngineKind::Mars.as_str().into(),
        }
    }

    /// Resolves against a model and layout. Only `mars` carries parameters.
    pub fn resolve(&self, config: &ModelConfig, layout: &SequenceLayout) -> Result<(EngineKind, Option<MarsParams>)> {
        let full = self.expand()?;
        let kind = full.engine_kind.unwrap_or(EngineKind::Mars);
        if kind != EngineKind::Mars {
            return Ok((kind, None));
        }
        let groups = config.num_groups();
        if let Some(g) = full.groups {
            if g != groups {
                return Err(Error::Config(format!(
                    "engine.groups = {g} but the model has {groups} layer groups"
                )));
            }
        }
        let field = |name: &str, v: &Option<Vec<usize>>| {
            broadcast(name, v.clone().unwrap_or_default(), groups)
        };
        let tau_text = field("tau_text", &full.tau_text)?;
        let tau_visual = field("tau_visual", &full.tau_visual)?;
        let patches = layout.patches_per_frame();
        let budgets = broadcast("anchor_budgets", full.anchor_budgets.clone().unwrap_or_default(), groups)?
            .into_iter()
            .map(|b| b.resolve(patches))
            .collect();
        let params = MarsParams {
            schedule: RefreshSchedule::new(tau_text, tau_visual)?,
            budgets,
            chunk_enabled: full.chunk_enabled.unwrap_or(true),
            sample_size: full.sample_size.unwrap_or(32),
            text_keys_for_chunked: full.text_keys_for_chunked.unwrap_or(false),
        };
        params.validate(config, layout)?;
        Ok((kind, Some(params)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (ModelConfig, SequenceLayout) {
        (
            ModelConfig::default(),
            SequenceLayout::new(8, 16, 16, 64, 32, 255).unwrap(),
        )
    }

    #[test]
    fn every_builtin_parses() {
        for name in builtin_preset_names() {
            load_preset(name).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        assert!(matches!(load_preset("nope"), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn defaults_are_pyramid_and_best_budgets() {
        let (c, l) = toy();
        let (kind, p) = EngineSpec::default().resolve(&c, &l).unwrap();
        let p = p.unwrap();
        assert_eq!(kind, EngineKind::Mars);
        assert_eq!(p.schedule.tau_text, vec![64, 32, 16, 8]);
        assert_eq!(p.schedule.tau_visual, vec![64, 32, 16, 8]);
        assert_eq!(p.budgets, vec![16, 8, 4, 2]);
        assert!(p.chunk_enabled && !p.text_keys_for_chunked);
        assert_eq!(p.sample_size, 32);
    }

    #[test]
    fn presets_apply_in_order_then_fields() {
        let (c, l) = toy();
        let spec = EngineSpec {
            presets: vec!["table10-pyramid-x2".into(), "table8-chunk-only".into()],
            sample_size: Some(8),
            ..Default::default()
        };
        let p = spec.resolve(&c, &l).unwrap().1.unwrap();
        assert_eq!(p.schedule.tau_visual, vec![128, 64, 32, 16]);
        assert_eq!(p.budgets, vec![0; 4]);
        assert_eq!(p.sample_size, 8);

        let always = EngineSpec {
            presets: vec!["always-refresh".into()],
            ..Default::default()
        };
        let p = always.resolve(&c, &l).unwrap().1.unwrap();
        assert_eq!(p, MarsParams::always_refresh(4, 16));
    }

    #[test]
    fn bad_specs_are_rejected() {
        let (c, l) = toy();
        let bad_tau = EngineSpec {
            tau_text: Some(vec![48, 32, 16, 8]),
            tau_visual: Some(vec![48, 32, 16, 8]),
            ..Default::default()
        };
        assert!(matches!(bad_tau.resolve(&c, &l), Err(Error::Schedule { group: 1, .. })));
        let growing = EngineSpec {
            anchor_budgets: Some(vec![Budget::Tokens(2), Budget::Full, Budget::Tokens(2), Budget::Tokens(2)]),
            ..Default::default()
        };
        assert!(growing.resolve(&c, &l).is_err());
        let too_many = EngineSpec {
            groups: Some(3),
            ..Default::default()
        };
        assert!(too_many.resolve(&c, &l).is_err());
        assert!(toml::from_str::<EngineSpec>("anchor_budgets = [\"most\"]").is_err());
        assert!(toml::from_str::<EngineSpec>("tau = [1]").is_err());
    }

    #[test]
    fn vanilla_needs_no_parameters() {
        let (c, l) = toy();
        let spec: EngineSpec = toml::from_str("engine_kind = \"vanilla\"").unwrap();
        assert_eq!(spec.resolve(&c, &l).unwrap(), (EngineKind::Vanilla, None));
    }
}
