//! Fraction of lists on which a trained re-ranker obeys each principle.
//!
//! A list obeys convergence consistency when re-ranking the re-ranked order
//! reproduces it exactly. It obeys adversarial consistency when every drawn
//! adjacent swap of the initial order leads to exactly the same re-ranked
//! order as the unperturbed input.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, contract, Result};
use crate::model::RerankerParams;
use crate::positions::{adjacent_swap, scores_to_positions, PositionVector};
use crate::sample::{Dataset, PreparedList};

/// How many adjacent swaps are tried per list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwapTrials {
    /// Up to this many distinct swap indices, drawn with the evaluation seed.
    Sampled(usize),
    /// Every one of the `n - 1` adjacent swaps.
    Strict,
}

impl Default for SwapTrials {
    fn default() -> Self {
        SwapTrials::Sampled(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObedienceReport {
    pub p1_rate: f64,
    pub p2_rate: f64,
    pub n_lists: usize,
    pub p2_trials: SwapTrials,
    pub eval_seed: u64,
}

impl ObedienceReport {
    pub fn csv_header() -> &'static str {
        "p1_obedience,p2_obedience,n_lists,p2_trials,eval_seed"
    }

    pub fn csv_row(&self) -> String {
        let trials = match self.p2_trials {
            SwapTrials::Sampled(t) => t.to_string(),
            SwapTrials::Strict => "all".to_string(),
        };
        format!(
            "{},{},{},{},{}",
            self.p1_rate, self.p2_rate, self.n_lists, trials, self.eval_seed
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::csv_header(), self.csv_row())
    }
}

fn rerank(params: &RerankerParams, list: &PreparedList, pos: &PositionVector) -> Result<PositionVector> {
    let s = params.forward(&list.items, &list.user, pos)?;
    scores_to_positions(s.as_slice(), pos)
}

fn prepared(data: &Dataset) -> Result<Vec<PreparedList>> {
    if data.is_empty() {
        return Err(contract("obedience needs a nonempty dataset"));
    }
    data.samples.iter().map(|s| s.prepare()).collect()
}

/// Whether re-ranking the re-ranked order of `list` reproduces it.
pub fn obeys_p1(params: &RerankerParams, list: &PreparedList) -> Result<bool> {
    let once = rerank(params, list, &list.init_pos)?;
    let twice = rerank(params, list, &once)?;
    Ok(once == twice)
}

/// Swap indices tried for list `index`: a prefix of a per-list shuffle of
/// `0..n-1`, so larger trial counts always test a superset of swaps.
pub fn swap_indices(n: usize, trials: SwapTrials, eval_seed: u64, index: usize) -> Vec<usize> {
    if n < 2 {
        return Vec::new();
    }
    let mut ks: Vec<usize> = (0..n - 1).collect();
    let take = match trials {
        SwapTrials::Strict => ks.len(),
        SwapTrials::Sampled(t) => t.min(ks.len()),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(eval_seed);
    rng.set_stream(index as u64);
    ks.shuffle(&mut rng);
    ks.truncate(take);
    ks
}

/// Whether every given adjacent swap of the initial order leaves the
/// re-ranked order unchanged.
pub fn obeys_p2(params: &RerankerParams, list: &PreparedList, swaps: &[usize]) -> Result<bool> {
    let reference = rerank(params, list, &list.init_pos)?;
    for &k in swaps {
        let perturbed = adjacent_swap(&list.init_pos, k)?;
        if rerank(params, list, &perturbed)? != reference {
            return Ok(false);
        }
    }
    Ok(true)
}

fn rate(flags: &[bool]) -> f64 {
    flags.iter().filter(|&&b| b).count() as f64 / flags.len() as f64
}

pub fn p1_obedience(params: &RerankerParams, data: &Dataset) -> Result<f64> {
    let lists = prepared(data)?;
    let flags: Vec<bool> = lists.par_iter().map(|l| obeys_p1(params, l)).collect::<Result<_>>()?;
    Ok(rate(&flags))
}

/// Lists shorter than two items have no adjacent pair and count as obeyed.
pub fn p2_obedience(params: &RerankerParams, data: &Dataset, trials: SwapTrials, eval_seed: u64) -> Result<f64> {
    if trials == SwapTrials::Sampled(0) {
        return Err(config("p2 obedience needs at least one trial"));
    }
    let lists = prepared(data)?;
    let flags: Vec<bool> = lists
        .par_iter()
        .enumerate()
        .map(|(i, l)| obeys_p2(params, l, &swap_indices(l.len(), trials, eval_seed, i)))
        .collect::<Result<_>>()?;
    Ok(rate(&flags))
}

pub fn obedience(
    params: &RerankerParams,
    data: &Dataset,
    trials: SwapTrials,
    eval_seed: u64,
) -> Result<ObedienceReport> {
    Ok(ObedienceReport {
        p1_rate: p1_obedience(params, data)?,
        p2_rate: p2_obedience(params, data, trials, eval_seed)?,
        n_lists: data.len(),
        p2_trials: trials,
        eval_seed,
    })
}
