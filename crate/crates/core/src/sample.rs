use serde::{Deserialize, Serialize};

use crate::error::{config, contract, Result};
use crate::positions::{check_permutation, PositionVector};
use crate::tensor::Matrix;

/// One ranked list served to one user.
///
/// Fields are plain data so that malformed records can be represented and
/// reported by [`validate_sample`]; operations that need a permutation go
/// through [`ListSample::init_positions`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListSample {
    pub list_id: String,
    /// `n` rows of `d_item` raw features.
    pub items: Vec<Vec<f64>>,
    /// User features; may be empty.
    pub user: Vec<f64>,
    /// Click labels, 1 = click.
    pub labels: Vec<u8>,
    /// Rank of each item in the initial list.
    pub init_pos: Vec<usize>,
}

impl ListSample {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn d_item(&self) -> usize {
        self.items.first().map_or(0, Vec::len)
    }

    pub fn init_positions(&self) -> Result<PositionVector> {
        PositionVector::new(self.init_pos.clone())
    }

    pub fn labels_f64(&self) -> Vec<f64> {
        self.labels.iter().map(|&y| f64::from(y)).collect()
    }

    pub fn n_clicks(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    /// Validates the sample and converts it to model inputs.
    pub fn prepare(&self) -> Result<PreparedList> {
        if let Validation::Fail(why) = validate_sample(self) {
            return Err(contract(format!("list {}: {why}", self.list_id)));
        }
        Ok(PreparedList {
            items: Matrix::from_rows(&self.items),
            user: self.user.clone(),
            labels: self.labels_f64(),
            init_pos: self.init_positions()?,
        })
    }
}

/// A validated list in the form the model consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedList {
    pub items: Matrix,
    pub user: Vec<f64>,
    pub labels: Vec<f64>,
    pub init_pos: PositionVector,
}

impl PreparedList {
    pub fn len(&self) -> usize {
        self.items.rows
    }

    pub fn is_empty(&self) -> bool {
        self.items.rows == 0
    }
}

/// Outcome of [`validate_sample`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Validation {
    Pass,
    Fail(String),
}

impl Validation {
    pub fn is_pass(&self) -> bool {
        matches!(self, Validation::Pass)
    }
}

/// Checks every [`ListSample`] invariant and reports the first violation.
pub fn validate_sample(s: &ListSample) -> Validation {
    let n = s.items.len();
    if n == 0 {
        return Validation::Fail("empty list".into());
    }
    let d = s.items[0].len();
    if let Some(r) = s.items.iter().position(|row| row.len() != d) {
        return Validation::Fail(format!(
            "ragged item matrix: row {r} has width {}, expected {d}",
            s.items[r].len()
        ));
    }
    if s.items.iter().flatten().chain(&s.user).any(|v| !v.is_finite()) {
        return Validation::Fail("non-finite feature value".into());
    }
    if s.labels.len() != n {
        return Validation::Fail(format!("{} labels for {n} items", s.labels.len()));
    }
    if let Some(y) = s.labels.iter().find(|&&y| y > 1) {
        return Validation::Fail(format!("non-binary label {y}"));
    }
    if s.init_pos.len() != n {
        return Validation::Fail(format!("init_pos has length {} for {n} items", s.init_pos.len()));
    }
    match check_permutation(&s.init_pos) {
        Ok(()) => Validation::Pass,
        Err(e) => Validation::Fail(e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Valid,
    Test,
}

/// An ordered collection of lists sharing feature widths.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<ListSample>,
    pub d_item: usize,
    pub d_user: usize,
    pub split_tag: SplitTag,
    /// When set, every list must have this length.
    pub fixed_n: Option<usize>,
}

impl Dataset {
    /// Validates every sample and the shared widths.
    pub fn new(samples: Vec<ListSample>, split_tag: SplitTag) -> Result<Self> {
        let d_item = samples.first().map_or(0, ListSample::d_item);
        let d_user = samples.first().map_or(0, |s| s.user.len());
        let ds = Self {
            samples,
            d_item,
            d_user,
            split_tag,
            fixed_n: None,
        };
        ds.check()?;
        Ok(ds)
    }

    /// Empty dataset with declared widths.
    pub fn empty(d_item: usize, d_user: usize, split_tag: SplitTag) -> Self {
        Self {
            samples: Vec::new(),
            d_item,
            d_user,
            split_tag,
            fixed_n: None,
        }
    }

    pub fn with_fixed_n(mut self, n: usize) -> Result<Self> {
        self.fixed_n = Some(n);
        self.check()?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn click_rate(&self) -> f64 {
        let (clicks, items) = self
            .samples
            .iter()
            .fold((0usize, 0usize), |(c, t), s| (c + s.n_clicks(), t + s.len()));
        if items == 0 {
            0.0
        } else {
            clicks as f64 / items as f64
        }
    }

    pub fn max_list_len(&self) -> usize {
        self.samples.iter().map(ListSample::len).max().unwrap_or(0)
    }

    fn check(&self) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            if let Validation::Fail(why) = validate_sample(s) {
                return Err(contract(format!("sample {i} ({}): {why}", s.list_id)));
            }
            if s.d_item() != self.d_item || s.user.len() != self.d_user {
                return Err(config(format!(
                    "sample {i} ({}) has widths ({}, {}), dataset has ({}, {})",
                    s.list_id,
                    s.d_item(),
                    s.user.len(),
                    self.d_item,
                    self.d_user
                )));
            }
            if let Some(n) = self.fixed_n {
                if s.len() != n {
                    return Err(config(format!(
                        "sample {i} has length {}, fixed length is {n}",
                        s.len()
                    )));
                }
            }
        }
        Ok(())
    }
}
