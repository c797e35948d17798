//! Run settings: built-in defaults, overlaid by an optional JSON config file,
//! overlaid by command-line flags.

use std::path::Path;

use anyhow::{Context, Result};
use rerank_core::data::SynthConfig;
use rerank_core::metrics::AucMode;
use rerank_core::model::{HeadMode, PositionMode, RerankerConfig};
use rerank_core::obedience::SwapTrials;
use rerank_core::training::TrainConfig;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::Value;

use crate::UsageError;

/// Architecture knobs not fixed by the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    pub mlp_hidden: Vec<usize>,
    pub head_mode: HeadMode,
    pub position_mode: PositionMode,
    /// Longest list the model accepts; defaults to the longest training list.
    pub n_max: Option<usize>,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let base = RerankerConfig::new(1, 0, 1);
        Self {
            d_model: base.d_model,
            n_heads: base.n_heads,
            n_blocks: base.n_blocks,
            mlp_hidden: base.mlp_hidden,
            head_mode: base.head_mode,
            position_mode: base.position_mode,
            n_max: None,
        }
    }
}

impl ModelSettings {
    pub fn resolve(&self, d_item: usize, d_user: usize, longest: usize, seed: u64) -> RerankerConfig {
        RerankerConfig {
            d_item,
            d_user,
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_blocks: self.n_blocks,
            mlp_hidden: self.mlp_hidden.clone(),
            n_max: self.n_max.unwrap_or(longest),
            head_mode: self.head_mode,
            position_mode: self.position_mode,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub auc_mode: AucMode,
    pub p2_trials: SwapTrials,
    pub eval_seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            auc_mode: AucMode::PerList,
            p2_trials: SwapTrials::default(),
            eval_seed: 0,
        }
    }
}

/// Everything a config file may set. Each section is optional and may be
/// partial; unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub synth: SynthConfig,
    pub model: ModelSettings,
    pub train: TrainConfig,
    pub eval: EvalSettings,
}

/// Recursively overlays `patch` on `base`, refusing keys `base` lacks.
fn overlay(base: &mut Value, patch: &Value, at: &str) -> Result<(), UsageError> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let here = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
                match b.get_mut(k) {
                    // optional settings default to null and take any value
                    Some(Value::Null) => {
                        b.insert(k.clone(), v.clone());
                    }
                    Some(slot) if slot.is_object() && v.is_object() => overlay(slot, v, &here)?,
                    Some(slot) => *slot = v.clone(),
                    None => return Err(UsageError(format!("unknown config key `{here}`"))),
                }
            }
            Ok(())
        }
        _ => Err(UsageError(format!("config section `{at}` must be an object"))),
    }
}

fn merged<T: Serialize + DeserializeOwned>(defaults: &T, patch: &Value, at: &str) -> Result<T, UsageError> {
    let mut v = serde_json::to_value(defaults).expect("settings serialise");
    overlay(&mut v, patch, at)?;
    serde_json::from_value(v).map_err(|e| UsageError(format!("config `{at}`: {e}")))
}

impl Settings {
    pub fn from_json(text: &str) -> Result<Self, UsageError> {
        let v: Value =
            serde_json::from_str(text).map_err(|e| UsageError(format!("config file is not valid JSON: {e}")))?;
        let Value::Object(obj) = &v else {
            return Err(UsageError("config file must hold a JSON object".into()));
        };
        let d = Settings::default();
        let mut out = d.clone();
        for (k, section) in obj {
            match k.as_str() {
                "synth" => out.synth = merged(&d.synth, section, k)?,
                "model" => out.model = merged(&d.model, section, k)?,
                "train" => out.train = merged(&d.train, section, k)?,
                "eval" => out.eval = merged(&d.eval, section, k)?,
                other => return Err(UsageError(format!("unknown config section `{other}`"))),
            }
        }
        Ok(out)
    }

    /// Defaults, overlaid by `path` when given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Ok(Self::from_json(&text)?)
            }
        }
    }
}

/// Parses `3` or `all` for the number of adjacent-swap trials.
pub fn parse_trials(s: &str) -> Result<SwapTrials, String> {
    if s.eq_ignore_ascii_case("all") || s.eq_ignore_ascii_case("strict") {
        return Ok(SwapTrials::Strict);
    }
    match s.parse::<usize>() {
        Ok(0) => Err("at least one trial is needed".into()),
        Ok(t) => Ok(SwapTrials::Sampled(t)),
        Err(_) => Err(format!("expected a positive count or `all`, got `{s}`")),
    }
}
