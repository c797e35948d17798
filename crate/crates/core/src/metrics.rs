//! Listwise ranking metrics with binary relevance.
//!
//! Labels are `f64` slices; an item is relevant when its label exceeds 0.5.
//! Ranks in formulas are 1-based: the item at 0-based rank `r - 1` of a
//! [`PositionVector`] occupies rank `r`. Metrics that are undefined on a list
//! (no relevant items, or for AUC no irrelevant items either) return `None`
//! and are excluded from dataset averages.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::model::RerankerParams;
use crate::positions::{scores_to_positions, PositionVector};
use crate::sample::{Dataset, ListSample};

/// Cutoffs reported for MAP and Precision.
pub const CUTOFFS: [usize; 4] = [5, 10, 15, 20];

fn relevant(y: f64) -> bool {
    y > 0.5
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(contract(format!("{a} scores or ranks for {b} labels")))
    }
}

/// Labels in display order.
fn ranked_labels(ranking: &PositionVector, labels: &[f64]) -> Result<Vec<f64>> {
    check_len(ranking.len(), labels.len())?;
    Ok(ranking.order().into_iter().map(|i| labels[i]).collect())
}

/// Fraction of (relevant, irrelevant) pairs where the relevant item scores
/// higher; ties count one half.
pub fn list_auc(scores: &[f64], labels: &[f64]) -> Result<Option<f64>> {
    check_len(scores.len(), labels.len())?;
    let mut concordant = 0.0;
    let (mut n_pos, mut n_neg) = (0usize, 0usize);
    for (i, &yi) in labels.iter().enumerate() {
        if !relevant(yi) {
            n_neg += 1;
            continue;
        }
        n_pos += 1;
        for (j, &yj) in labels.iter().enumerate() {
            if relevant(yj) {
                continue;
            }
            if scores[i] > scores[j] {
                concordant += 1.0;
            } else if scores[i] == scores[j] {
                concordant += 0.5;
            }
        }
    }
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    Ok(Some(concordant / (n_pos * n_neg) as f64))
}

/// Full-depth NDCG with gain `y` and discount `log2(rank + 1)`.
pub fn list_ndcg(ranking: &PositionVector, labels: &[f64]) -> Result<Option<f64>> {
    let ranked = ranked_labels(ranking, labels)?;
    let n_pos = ranked.iter().filter(|&&y| relevant(y)).count();
    if n_pos == 0 {
        return Ok(None);
    }
    let discount = |r: usize| 1.0 / ((r + 1) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .enumerate()
        .filter(|(_, &y)| relevant(y))
        .map(|(i, _)| discount(i + 1))
        .sum();
    let idcg: f64 = (1..=n_pos).map(discount).sum();
    Ok(Some(dcg / idcg))
}

/// Average precision over the top `min(k, n)` ranks, normalised by
/// `min(k, n, total relevant)`.
pub fn list_map_at_k(ranking: &PositionVector, labels: &[f64], k: usize) -> Result<Option<f64>> {
    if k == 0 {
        return Err(contract("cutoff k must be at least 1"));
    }
    let ranked = ranked_labels(ranking, labels)?;
    let total = ranked.iter().filter(|&&y| relevant(y)).count();
    if total == 0 {
        return Ok(None);
    }
    let depth = k.min(ranked.len());
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &y) in ranked[..depth].iter().enumerate() {
        if relevant(y) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(Some(sum / depth.min(total) as f64))
}

/// Relevant items among the top `min(k, n)` ranks, divided by `min(k, n)`.
pub fn list_precision_at_k(ranking: &PositionVector, labels: &[f64], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(contract("cutoff k must be at least 1"));
    }
    let ranked = ranked_labels(ranking, labels)?;
    let depth = k.min(ranked.len());
    let hits = ranked[..depth].iter().filter(|&&y| relevant(y)).count();
    Ok(hits as f64 / depth as f64)
}

/// AUC over all items of all lists pooled together (Mann-Whitney with
/// average ranks for ties).
pub fn pooled_auc<'a>(lists: impl IntoIterator<Item = (&'a [f64], &'a [f64])>) -> Result<Option<f64>> {
    let mut all: Vec<(f64, bool)> = Vec::new();
    for (scores, labels) in lists {
        check_len(scores.len(), labels.len())?;
        all.extend(scores.iter().zip(labels).map(|(&s, &y)| (s, relevant(y))));
    }
    let n_pos = all.iter().filter(|(_, p)| *p).count();
    let n_neg = all.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j share their average
        let avg = (i + 1 + j) as f64 / 2.0;
        rank_sum += avg * all[i..j].iter().filter(|(_, p)| *p).count() as f64;
        i = j;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(Some(u / (n_pos * n_neg) as f64))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AucMode {
    /// Mean of per-list AUCs over lists with both classes.
    #[default]
    PerList,
    /// One AUC over every item of every list.
    Pooled,
}

/// Lists that contributed to each averaged metric.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListCounts {
    pub total: usize,
    pub auc: usize,
    pub ndcg: usize,
    pub map: usize,
    pub precision: usize,
}

/// Dataset-level metrics. `None` marks a metric no list could be evaluated on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: Option<f64>,
    pub ndcg: Option<f64>,
    pub map_at: BTreeMap<usize, Option<f64>>,
    pub precision_at: BTreeMap<usize, Option<f64>>,
    pub n_lists_evaluated: ListCounts,
    pub auc_mode: AucMode,
}

impl MetricsReport {
    /// Column names in report order.
    pub fn csv_header() -> String {
        let mut cols = vec!["auc".to_string(), "ndcg".to_string()];
        cols.extend(CUTOFFS.iter().map(|k| format!("map@{k}")));
        cols.extend(CUTOFFS.iter().map(|k| format!("precision@{k}")));
        cols.join(",")
    }

    /// Values in [`csv_header`](Self::csv_header) order.
    pub fn values(&self) -> Vec<Option<f64>> {
        let mut v = vec![self.auc, self.ndcg];
        v.extend(CUTOFFS.iter().map(|k| self.map_at.get(k).copied().flatten()));
        v.extend(CUTOFFS.iter().map(|k| self.precision_at.get(k).copied().flatten()));
        v
    }

    /// One data row; an absent metric is an empty field.
    pub fn csv_row(&self) -> String {
        self.values()
            .iter()
            .map(|v| v.map(|x| x.to_string()).unwrap_or_default())
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::csv_header(), self.csv_row())
    }
}

/// Per-list inputs for aggregation: scores, the ranking they induce, labels.
#[derive(Debug, Clone)]
pub struct ScoredList {
    pub scores: Vec<f64>,
    pub ranking: PositionVector,
    pub labels: Vec<f64>,
}

struct ListMetrics {
    auc: Option<f64>,
    ndcg: Option<f64>,
    map: Vec<Option<f64>>,
    precision: Vec<f64>,
}

fn per_list(l: &ScoredList) -> Result<ListMetrics> {
    Ok(ListMetrics {
        auc: list_auc(&l.scores, &l.labels)?,
        ndcg: list_ndcg(&l.ranking, &l.labels)?,
        map: CUTOFFS
            .iter()
            .map(|&k| list_map_at_k(&l.ranking, &l.labels, k))
            .collect::<Result<_>>()?,
        precision: CUTOFFS
            .iter()
            .map(|&k| list_precision_at_k(&l.ranking, &l.labels, k))
            .collect::<Result<_>>()?,
    })
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> (Option<f64>, usize) {
    let (sum, count) = values.flatten().fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    ((count > 0).then(|| sum / count as f64), count)
}

/// Averages per-list metrics in list order.
pub fn aggregate(lists: &[ScoredList], auc_mode: AucMode) -> Result<MetricsReport> {
    if lists.is_empty() {
        return Err(contract("cannot evaluate an empty dataset"));
    }
    let per: Vec<ListMetrics> = lists.par_iter().map(per_list).collect::<Result<_>>()?;

    let (auc, n_auc) = match auc_mode {
        AucMode::PerList => mean(per.iter().map(|m| m.auc)),
        AucMode::Pooled => {
            let pooled = pooled_auc(lists.iter().map(|l| (l.scores.as_slice(), l.labels.as_slice())))?;
            let n = per.iter().filter(|m| m.auc.is_some()).count();
            (pooled, n)
        }
    };
    let (ndcg, n_ndcg) = mean(per.iter().map(|m| m.ndcg));
    let mut map_at = BTreeMap::new();
    let mut precision_at = BTreeMap::new();
    let mut n_map = 0;
    for (c, &k) in CUTOFFS.iter().enumerate() {
        let (m, n) = mean(per.iter().map(|p| p.map[c]));
        n_map = n;
        map_at.insert(k, m);
        let (p, _) = mean(per.iter().map(|p| Some(p.precision[c])));
        precision_at.insert(k, p);
    }
    Ok(MetricsReport {
        auc,
        ndcg,
        map_at,
        precision_at,
        n_lists_evaluated: ListCounts {
            total: lists.len(),
            auc: n_auc,
            ndcg: n_ndcg,
            map: n_map,
            precision: lists.len(),
        },
        auc_mode,
    })
}

/// Scores every list, ranks by descending score (ties keep the initial
/// order) and averages the metrics.
pub fn evaluate(params: &RerankerParams, data: &Dataset, auc_mode: AucMode) -> Result<MetricsReport> {
    if data.is_empty() {
        return Err(contract("cannot evaluate an empty dataset"));
    }
    let lists: Vec<ScoredList> = data
        .samples
        .par_iter()
        .map(|s| score_list(params, s))
        .collect::<Result<_>>()?;
    aggregate(&lists, auc_mode)
}

pub(crate) fn score_list(params: &RerankerParams, s: &ListSample) -> Result<ScoredList> {
    let list = s.prepare()?;
    let scores = params.forward(&list.items, &list.user, &list.init_pos)?;
    let ranking = scores_to_positions(scores.as_slice(), &list.init_pos)?;
    Ok(ScoredList {
        scores: scores.0,
        ranking,
        labels: list.labels,
    })
}
