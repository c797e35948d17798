//! Listwise log-loss, the contrastive similarity loss between two runs of the
//! re-ranker at different input orders, and the five-term principled
//! objective that combines them.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{config, contract, Result};
use crate::model::{BoundParams, RerankerParams};
use crate::positions::{adjacent_swap, scores_to_positions, PositionVector};
use crate::sample::PreparedList;
use crate::tensor::Matrix;

/// Lower bound applied to a score inside the logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

/// `-sum_i y_i ln(max(p_i, LOG_FLOOR))`.
pub fn log_loss(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(contract(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    Ok(-scores
        .iter()
        .zip(labels)
        .map(|(&p, &y)| y * p.max(LOG_FLOOR).ln())
        .sum::<f64>())
}

/// `sum_i |a_i - b_i| * (s_a_i - s_b_i)^2` for position vectors `a`, `b`.
pub fn cs_loss(pos_a: &PositionVector, pos_b: &PositionVector, s_a: &[f64], s_b: &[f64]) -> Result<f64> {
    let n = pos_a.len();
    if pos_b.len() != n || s_a.len() != n || s_b.len() != n {
        return Err(contract(format!(
            "cs_loss length mismatch: positions {} and {}, scores {} and {}",
            n,
            pos_b.len(),
            s_a.len(),
            s_b.len()
        )));
    }
    let w = position_gap(pos_a, pos_b);
    Ok(w.iter()
        .zip(s_a.iter().zip(s_b))
        .map(|(w, (a, b))| w * (a - b) * (a - b))
        .sum())
}

fn position_gap(a: &PositionVector, b: &PositionVector) -> Vec<f64> {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| x.abs_diff(y) as f64)
        .collect()
}

/// Differentiable [`log_loss`] of a `1 x n` score row.
pub fn log_loss_on_tape(tape: &mut Tape, scores: Var, labels: &[f64]) -> Var {
    let logp = tape.log_floor(scores, LOG_FLOOR);
    let neg_y = labels.iter().map(|y| -y).collect::<Vec<_>>();
    tape.weighted_sum(logp, Matrix::row_vector(&neg_y))
}

/// Differentiable [`cs_loss`]; the position weight is a constant.
pub fn cs_loss_on_tape(tape: &mut Tape, pos_a: &PositionVector, pos_b: &PositionVector, s_a: Var, s_b: Var) -> Var {
    let diff = tape.sub(s_a, s_b);
    let sq = tape.mul(diff, diff);
    tape.weighted_sum(sq, Matrix::row_vector(&position_gap(pos_a, pos_b)))
}

/// Multipliers on the two consistency pairs of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrincipleWeights {
    /// Scales the re-ranked-order log-loss and its consistency term.
    pub p1: f64,
    /// Scales the swapped-order log-loss and its consistency term.
    pub p2: f64,
}

impl PrincipleWeights {
    pub const BOTH: Self = Self { p1: 1.0, p2: 1.0 };
    pub const NONE: Self = Self { p1: 0.0, p2: 0.0 };

    pub fn validate(&self) -> Result<()> {
        if !(self.p1 >= 0.0 && self.p2 >= 0.0 && self.p1.is_finite() && self.p2.is_finite()) {
            return Err(config(format!(
                "principle weights must be finite and >= 0, got ({}, {})",
                self.p1, self.p2
            )));
        }
        Ok(())
    }
}

impl Default for PrincipleWeights {
    fn default() -> Self {
        Self::BOTH
    }
}

/// The orders visited by one evaluation of the principled objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrincipledPositions {
    /// Initial order.
    pub initial: PositionVector,
    /// Order after one re-ranking pass.
    pub reranked: PositionVector,
    /// Order after re-ranking the re-ranked list again.
    pub rereranked: PositionVector,
    /// Initial order with the items at ranks `swap_k`, `swap_k + 1` exchanged.
    pub perturbed: PositionVector,
    pub swap_k: usize,
}

/// Per-term values of the principled objective for one list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrincipledLossBreakdown {
    pub ce_base: f64,
    pub ce_p_prime: f64,
    pub cs_p1: f64,
    pub ce_p_hat: f64,
    pub cs_p2: f64,
    /// Unit-weight sum of the five terms.
    pub total: f64,
    pub positions: PrincipledPositions,
}

impl PrincipledLossBreakdown {
    /// `ce_base + w.p1 (ce_p_prime + cs_p1) + w.p2 (ce_p_hat + cs_p2)`.
    pub fn weighted(&self, w: PrincipleWeights) -> f64 {
        let mut t = self.ce_base;
        if w.p1 != 0.0 {
            t += w.p1 * (self.ce_p_prime + self.cs_p1);
        }
        if w.p2 != 0.0 {
            t += w.p2 * (self.ce_p_hat + self.cs_p2);
        }
        t
    }
}

/// Derives the re-ranked, twice re-ranked and swapped orders for `list`.
pub fn principled_positions(
    params: &RerankerParams,
    list: &PreparedList,
    swap_k: usize,
) -> Result<PrincipledPositions> {
    let initial = list.init_pos.clone();
    let perturbed = adjacent_swap(&initial, swap_k)?;
    let s = params.forward(&list.items, &list.user, &initial)?;
    let reranked = scores_to_positions(s.as_slice(), &initial)?;
    let s1 = params.forward(&list.items, &list.user, &reranked)?;
    let rereranked = scores_to_positions(s1.as_slice(), &reranked)?;
    Ok(PrincipledPositions {
        initial,
        reranked,
        rereranked,
        perturbed,
        swap_k,
    })
}

/// Records the four forward passes and five loss terms on `tape` with the
/// orders held fixed. Returns the weighted objective node and the breakdown.
///
/// A term whose weight is zero is still recorded (its value appears in the
/// breakdown) but is not connected to the returned node, so it contributes
/// nothing to the gradients.
pub fn principled_objective(
    tape: &mut Tape,
    bound: &BoundParams<'_>,
    list: &PreparedList,
    positions: &PrincipledPositions,
    weights: PrincipleWeights,
) -> Result<(Var, PrincipledLossBreakdown)> {
    let y = &list.labels;
    let s = bound.forward(tape, &list.items, &list.user, &positions.initial)?;
    let ce_base = log_loss_on_tape(tape, s, y);
    let s1 = bound.forward(tape, &list.items, &list.user, &positions.reranked)?;
    let ce_p_prime = log_loss_on_tape(tape, s1, y);
    let s2 = bound.forward(tape, &list.items, &list.user, &positions.rereranked)?;
    let cs_p1 = cs_loss_on_tape(tape, &positions.rereranked, &positions.reranked, s2, s1);
    let s_hat = bound.forward(tape, &list.items, &list.user, &positions.perturbed)?;
    let ce_p_hat = log_loss_on_tape(tape, s_hat, y);
    let cs_p2 = cs_loss_on_tape(tape, &positions.perturbed, &positions.reranked, s_hat, s1);

    let mut total = ce_base;
    if weights.p1 != 0.0 {
        let pair = tape.add(ce_p_prime, cs_p1);
        let pair = tape.scale(pair, weights.p1);
        total = tape.add(total, pair);
    }
    if weights.p2 != 0.0 {
        let pair = tape.add(ce_p_hat, cs_p2);
        let pair = tape.scale(pair, weights.p2);
        total = tape.add(total, pair);
    }

    let v = |x: Var| tape.scalar(x);
    let (ce_base, ce_p_prime, cs_p1, ce_p_hat, cs_p2) = (v(ce_base), v(ce_p_prime), v(cs_p1), v(ce_p_hat), v(cs_p2));
    let breakdown = PrincipledLossBreakdown {
        ce_base,
        ce_p_prime,
        cs_p1,
        ce_p_hat,
        cs_p2,
        total: ce_base + ce_p_prime + cs_p1 + ce_p_hat + cs_p2,
        positions: positions.clone(),
    };
    Ok((total, breakdown))
}

/// Evaluates the unit-weight principled objective on one list.
pub fn principled_loss(params: &RerankerParams, list: &PreparedList, swap_k: usize) -> Result<PrincipledLossBreakdown> {
    let positions = principled_positions(params, list, swap_k)?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let (_, breakdown) = principled_objective(&mut tape, &bound, list, &positions, PrincipleWeights::BOTH)?;
    Ok(breakdown)
}
