//! Permutation semantics shared by every other module.
//!
//! A [`PositionVector`] maps item index to its 0-based rank in the displayed
//! list: `pos[i] == r` means item `i` is shown at rank `r`.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// A permutation of `0..n`; entry `i` is the rank of item `i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct PositionVector(Vec<usize>);

impl PositionVector {
    /// Builds a position vector, rejecting anything that is not a bijection onto `0..n`.
    pub fn new(pos: Vec<usize>) -> Result<Self> {
        check_permutation(&pos).map_err(contract)?;
        Ok(Self(pos))
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<usize> {
        self.0
    }

    /// Item indices in display order: `order()[r]` is the item shown at rank `r`.
    pub fn order(&self) -> Vec<usize> {
        let mut order = vec![0; self.0.len()];
        for (item, &rank) in self.0.iter().enumerate() {
            order[rank] = item;
        }
        order
    }

    /// Inverse of [`order`](Self::order).
    pub fn from_order(order: &[usize]) -> Result<Self> {
        check_permutation(order).map_err(contract)?;
        let mut pos = vec![0; order.len()];
        for (rank, &item) in order.iter().enumerate() {
            pos[item] = rank;
        }
        Ok(Self(pos))
    }
}

impl TryFrom<Vec<usize>> for PositionVector {
    type Error = String;

    fn try_from(pos: Vec<usize>) -> std::result::Result<Self, Self::Error> {
        check_permutation(&pos)?;
        Ok(Self(pos))
    }
}

impl From<PositionVector> for Vec<usize> {
    fn from(p: PositionVector) -> Self {
        p.0
    }
}

impl std::ops::Index<usize> for PositionVector {
    type Output = usize;

    fn index(&self, i: usize) -> &usize {
        &self.0[i]
    }
}

pub(crate) fn check_permutation(pos: &[usize]) -> std::result::Result<(), String> {
    let n = pos.len();
    let mut seen = vec![false; n];
    for &p in pos {
        if p >= n {
            return Err(format!("not a permutation: rank {p} out of range for length {n}"));
        }
        if std::mem::replace(&mut seen[p], true) {
            return Err(format!("not a permutation: rank {p} appears twice"));
        }
    }
    Ok(())
}

/// Per-item re-ranking scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScoreVector(pub Vec<f64>);

impl ScoreVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for ScoreVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Ranks items by descending score. Equal scores keep the relative order given
/// by `tie_ref` (smaller reference rank first), so all-equal scores return
/// `tie_ref` unchanged.
pub fn scores_to_positions(scores: &[f64], tie_ref: &PositionVector) -> Result<PositionVector> {
    if scores.len() != tie_ref.len() {
        return Err(contract(format!(
            "scores have length {} but tie reference has length {}",
            scores.len(),
            tie_ref.len()
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(tie_ref[a].cmp(&tie_ref[b])));
    let mut pos = vec![0; scores.len()];
    for (rank, item) in order.into_iter().enumerate() {
        pos[item] = rank;
    }
    Ok(PositionVector(pos))
}

/// Exchanges the items sitting at ranks `k` and `k + 1`.
pub fn adjacent_swap(pos: &PositionVector, k: usize) -> Result<PositionVector> {
    let n = pos.len();
    if n < 2 {
        return Err(contract(format!("adjacent swap needs at least 2 items, got {n}")));
    }
    if k > n - 2 {
        return Err(contract(format!("swap index {k} out of range 0..={}", n - 2)));
    }
    let mut out = pos.0.clone();
    for r in out.iter_mut() {
        if *r == k {
            *r = k + 1;
        } else if *r == k + 1 {
            *r = k;
        }
    }
    Ok(PositionVector(out))
}
