//! Four-way ablation: log-loss baseline, each consistency principle alone
//! and both together, trained from identical initialisations per seed.

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::losses::PrincipleWeights;
use crate::metrics::{evaluate, AucMode, MetricsReport};
use crate::model::{init_params, RerankerConfig};
use crate::obedience::{obedience, ObedienceReport, SwapTrials};
use crate::sample::Dataset;
use crate::training::{train_from, Objective, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    P1,
    P2,
    Both,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::P1, Variant::P2, Variant::Both];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::P1 => "p1",
            Variant::P2 => "p2",
            Variant::Both => "both",
        }
    }

    /// Objective and weights this variant trains with.
    pub fn objective(self) -> (Objective, PrincipleWeights) {
        match self {
            Variant::Baseline => (Objective::LogLoss, PrincipleWeights::NONE),
            Variant::P1 => (Objective::Principled, PrincipleWeights { p1: 1.0, p2: 0.0 }),
            Variant::P2 => (Objective::Principled, PrincipleWeights { p1: 0.0, p2: 1.0 }),
            Variant::Both => (Objective::Principled, PrincipleWeights::BOTH),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub train: TrainConfig,
    pub model: RerankerConfig,
    /// One repeat per seed; the seed drives both initialisation and shuffling.
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    pub p2_trials: SwapTrials,
    pub eval_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub variant: Variant,
    pub seed: u64,
    pub metrics: MetricsReport,
    pub obedience: ObedienceReport,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub runs: Vec<AblationRun>,
}

/// Column names of everything summarised per run.
pub fn summary_columns() -> Vec<String> {
    let mut cols: Vec<String> = MetricsReport::csv_header().split(',').map(str::to_string).collect();
    cols.push("p1_obedience".into());
    cols.push("p2_obedience".into());
    cols
}

impl AblationRun {
    /// Values in [`summary_columns`] order; an absent metric is NaN.
    pub fn values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .metrics
            .values()
            .into_iter()
            .map(|x| x.unwrap_or(f64::NAN))
            .collect();
        v.push(self.obedience.p1_rate);
        v.push(self.obedience.p2_rate);
        v
    }
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Relative improvement of `value` over `base`, in percent.
pub fn improvement_pct(value: f64, base: f64) -> f64 {
    (value - base) / base * 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variant: Variant,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    /// Against the baseline mean; `None` without a baseline.
    pub improvement_pct: Option<f64>,
    /// This variant's improvement divided by the both-principles improvement.
    pub ratio_to_both: Option<f64>,
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => x.to_string(),
        _ => String::new(),
    }
}

fn fmt(x: f64) -> String {
    fmt_opt(Some(x))
}

impl AblationResult {
    pub fn runs_of(&self, v: Variant) -> Vec<&AblationRun> {
        self.runs.iter().filter(|r| r.variant == v).collect()
    }

    fn column(&self, v: Variant, c: usize) -> Vec<f64> {
        self.runs_of(v).iter().map(|r| r.values()[c]).collect()
    }

    /// Mean over seeds of one column for one variant.
    pub fn mean(&self, v: Variant, column: &str) -> Option<f64> {
        let c = summary_columns().iter().position(|n| n == column)?;
        let xs = self.column(v, c);
        (!xs.is_empty()).then(|| mean_std(&xs).0)
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        let cols = summary_columns();
        let present: Vec<Variant> = Variant::ALL
            .into_iter()
            .filter(|v| !self.runs_of(*v).is_empty())
            .collect();
        let mut rows = Vec::new();
        for &v in &present {
            for (c, name) in cols.iter().enumerate() {
                let (mean, std) = mean_std(&self.column(v, c));
                let impr = |variant: Variant| {
                    let base = self.column(Variant::Baseline, c);
                    let xs = self.column(variant, c);
                    (!base.is_empty() && !xs.is_empty()).then(|| improvement_pct(mean_std(&xs).0, mean_std(&base).0))
                };
                let improvement = impr(v);
                let ratio = match (improvement, impr(Variant::Both)) {
                    (Some(a), Some(b)) if b != 0.0 => Some(a / b),
                    _ => None,
                };
                rows.push(SummaryRow {
                    variant: v,
                    metric: name.clone(),
                    mean,
                    std,
                    improvement_pct: improvement,
                    ratio_to_both: ratio,
                });
            }
        }
        rows
    }

    /// Long-format summary: one row per (variant, metric).
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("variant,metric,mean,std,improvement_pct,ratio_to_both\n");
        for r in self.summary() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.variant.name(),
                r.metric,
                fmt(r.mean),
                fmt(r.std),
                fmt_opt(r.improvement_pct),
                fmt_opt(r.ratio_to_both)
            ));
        }
        out
    }

    /// Every run's raw values, one row per (variant, seed).
    pub fn raw_csv(&self) -> String {
        let mut out = format!("variant,seed,final_loss,{}\n", summary_columns().join(","));
        for r in &self.runs {
            let vals: Vec<String> = r.values().into_iter().map(fmt).collect();
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.variant.name(),
                r.seed,
                fmt(r.final_loss),
                vals.join(",")
            ));
        }
        out
    }

    /// Obedience of the baseline next to the model trained for each principle.
    pub fn obedience_csv(&self) -> String {
        let m = |v, c| fmt_opt(self.mean(v, c));
        format!(
            "p1_baseline,p1_with_p1,p2_baseline,p2_with_p2,p1_with_both,p2_with_both\n{},{},{},{},{},{}\n",
            m(Variant::Baseline, "p1_obedience"),
            m(Variant::P1, "p1_obedience"),
            m(Variant::Baseline, "p2_obedience"),
            m(Variant::P2, "p2_obedience"),
            m(Variant::Both, "p1_obedience"),
            m(Variant::Both, "p2_obedience"),
        )
    }
}

/// Trains every variant for every seed and evaluates on `test`.
pub fn run_ablation(cfg: &AblationConfig, train_data: &Dataset, test: &Dataset) -> Result<AblationResult> {
    if cfg.seeds.is_empty() {
        return Err(config("ablation needs at least one seed"));
    }
    if cfg.variants.is_empty() {
        return Err(config("ablation needs at least one variant"));
    }
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        let model_cfg = RerankerConfig {
            seed,
            ..cfg.model.clone()
        };
        let init = init_params(&model_cfg)?;
        for &variant in &cfg.variants {
            let (objective, principle_weights) = variant.objective();
            let train_cfg = TrainConfig {
                seed,
                objective,
                principle_weights,
                eval_every: 0,
                keep_best_valid: false,
                ..cfg.train.clone()
            };
            let (params, log) = train_from(&train_cfg, init.clone(), train_data, None)?;
            runs.push(AblationRun {
                variant,
                seed,
                metrics: evaluate(&params, test, AucMode::PerList)?,
                obedience: obedience(&params, test, cfg.p2_trials, cfg.eval_seed)?,
                final_loss: log.records.last().map_or(f64::NAN, |r| r.loss),
            });
        }
    }
    Ok(AblationResult { runs })
}
