//! The general list re-ranker.
//!
//! Items are embedded by an affine map, the integer rank of each item selects
//! a row of a learned position table that is added to its embedding, a stack
//! of multi-head self-attention blocks mixes information across the list, the
//! projected user vector is concatenated to every item, and an MLP head emits
//! one logit per item. The list-level softmax turns logits into scores.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{config, contract, Error, Result};
use crate::positions::{PositionVector, ScoreVector};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    /// Softmax across the list; scores sum to one.
    SoftmaxList,
    /// Independent per-item click probability.
    SigmoidItem,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionMode {
    LearnedAdd,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankerConfig {
    pub d_item: usize,
    pub d_user: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    pub mlp_hidden: Vec<usize>,
    /// Rows of the position table; the longest list the model accepts.
    pub n_max: usize,
    pub head_mode: HeadMode,
    pub position_mode: PositionMode,
    pub seed: u64,
}

impl RerankerConfig {
    /// Default architecture for the given feature widths.
    pub fn new(d_item: usize, d_user: usize, n_max: usize) -> Self {
        Self {
            d_item,
            d_user,
            d_model: 32,
            n_heads: 2,
            n_blocks: 1,
            mlp_hidden: vec![32],
            n_max,
            head_mode: HeadMode::SoftmaxList,
            position_mode: PositionMode::LearnedAdd,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_item == 0 {
            return Err(config("d_item must be positive"));
        }
        if self.d_model == 0 || self.n_heads == 0 {
            return Err(config("d_model and n_heads must be positive"));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.n_max == 0 {
            return Err(config("n_max must be positive"));
        }
        if self.mlp_hidden.contains(&0) {
            return Err(config("mlp_hidden widths must be positive"));
        }
        Ok(())
    }

    fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// `x W + b` with `W: in x out` and `b: 1 x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine<T> {
    pub weight: T,
    pub bias: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlock<T> {
    pub query: Affine<T>,
    pub key: Affine<T>,
    pub value: Affine<T>,
    pub output: Affine<T>,
    pub ff_in: Affine<T>,
    pub ff_out: Affine<T>,
}

/// Every trainable array of the re-ranker, generic over the slot type so the
/// same layout holds parameter values, their gradients, optimizer moments or
/// tape handles.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T> {
    pub item_proj: Affine<T>,
    pub user_proj: Option<Affine<T>>,
    pub pos_table: T,
    pub blocks: Vec<AttentionBlock<T>>,
    pub head: Vec<Affine<T>>,
}

impl<T> Affine<T> {
    fn map<U>(&self, prefix: &str, f: &mut impl FnMut(&str, &T) -> U) -> Affine<U> {
        Affine {
            weight: f(&format!("{prefix}.weight"), &self.weight),
            bias: f(&format!("{prefix}.bias"), &self.bias),
        }
    }

    fn for_each<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a T)) {
        f(format!("{prefix}.weight"), &self.weight);
        f(format!("{prefix}.bias"), &self.bias);
    }

    fn for_each_mut<'a>(&'a mut self, f: &mut impl FnMut(&'a mut T)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

impl<T> AttentionBlock<T> {
    fn affines(&self) -> [(&'static str, &Affine<T>); 6] {
        [
            ("query", &self.query),
            ("key", &self.key),
            ("value", &self.value),
            ("output", &self.output),
            ("ff_in", &self.ff_in),
            ("ff_out", &self.ff_out),
        ]
    }
}

impl<T> Weights<T> {
    /// Applies `f` to every slot in canonical order, passing its name.
    pub fn map<U>(&self, mut f: impl FnMut(&str, &T) -> U) -> Weights<U> {
        let item_proj = self.item_proj.map("item_proj", &mut f);
        let user_proj = self.user_proj.as_ref().map(|a| a.map("user_proj", &mut f));
        let pos_table = f("pos_table", &self.pos_table);
        let blocks = self
            .blocks
            .iter()
            .enumerate()
            .map(|(b, blk)| {
                let p = |name: &str| format!("blocks.{b}.{name}");
                AttentionBlock {
                    query: blk.query.map(&p("query"), &mut f),
                    key: blk.key.map(&p("key"), &mut f),
                    value: blk.value.map(&p("value"), &mut f),
                    output: blk.output.map(&p("output"), &mut f),
                    ff_in: blk.ff_in.map(&p("ff_in"), &mut f),
                    ff_out: blk.ff_out.map(&p("ff_out"), &mut f),
                }
            })
            .collect();
        let head = self
            .head
            .iter()
            .enumerate()
            .map(|(l, a)| a.map(&format!("head.{l}"), &mut f))
            .collect();
        Weights {
            item_proj,
            user_proj,
            pos_table,
            blocks,
            head,
        }
    }

    /// Named slots in canonical order (the same order `map` visits).
    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        let mut push = |name: String, t| out.push((name, t));
        self.item_proj.for_each("item_proj", &mut push);
        if let Some(u) = &self.user_proj {
            u.for_each("user_proj", &mut push);
        }
        push("pos_table".to_string(), &self.pos_table);
        for (b, blk) in self.blocks.iter().enumerate() {
            for (name, a) in blk.affines() {
                a.for_each(&format!("blocks.{b}.{name}"), &mut push);
            }
        }
        for (l, a) in self.head.iter().enumerate() {
            a.for_each(&format!("head.{l}"), &mut push);
        }
        out
    }

    /// Mutable slots in canonical order.
    pub fn for_each_mut<'a>(&'a mut self, mut f: impl FnMut(&'a mut T)) {
        self.item_proj.for_each_mut(&mut f);
        if let Some(u) = &mut self.user_proj {
            u.for_each_mut(&mut f);
        }
        f(&mut self.pos_table);
        for blk in &mut self.blocks {
            for a in [
                &mut blk.query,
                &mut blk.key,
                &mut blk.value,
                &mut blk.output,
                &mut blk.ff_in,
                &mut blk.ff_out,
            ] {
                a.for_each_mut(&mut f);
            }
        }
        for a in &mut self.head {
            a.for_each_mut(&mut f);
        }
    }
}

impl Weights<Matrix> {
    pub fn zeros_like(&self) -> Self {
        self.map(|_, m| Matrix::zeros(m.rows, m.cols))
    }

    pub fn n_scalars(&self) -> usize {
        self.named().iter().map(|(_, m)| m.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, m)| m.is_finite())
    }

    /// All entries concatenated in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        self.named().iter().flat_map(|(_, m)| m.data.iter().copied()).collect()
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Self) {
        let others: Vec<&Matrix> = other.named().into_iter().map(|(_, m)| m).collect();
        let mut i = 0;
        self.for_each_mut(|m| {
            m.add_assign(others[i]);
            i += 1;
        });
    }

    pub fn scale(&mut self, c: f64) {
        self.for_each_mut(|m| m.data.iter_mut().for_each(|v| *v *= c));
    }
}

/// Trainable parameters together with the configuration that shaped them.
#[derive(Debug, Clone, PartialEq)]
pub struct RerankerParams {
    pub cfg: RerankerConfig,
    pub weights: Weights<Matrix>,
}

/// Parameter gradients; same layout as [`RerankerParams::weights`].
pub type ParamGrads = Weights<Matrix>;

fn layout(cfg: &RerankerConfig) -> Weights<(usize, usize)> {
    let aff = |i: usize, o: usize| Affine {
        weight: (i, o),
        bias: (1, o),
    };
    let d = cfg.d_model;
    let head_in = if cfg.d_user > 0 { 2 * d } else { d };
    let mut head = Vec::new();
    let mut width = head_in;
    for &h in &cfg.mlp_hidden {
        head.push(aff(width, h));
        width = h;
    }
    head.push(aff(width, 1));
    Weights {
        item_proj: aff(cfg.d_item, d),
        user_proj: (cfg.d_user > 0).then(|| aff(cfg.d_user, d)),
        pos_table: (cfg.n_max, d),
        blocks: (0..cfg.n_blocks)
            .map(|_| AttentionBlock {
                query: aff(d, d),
                key: aff(d, d),
                value: aff(d, d),
                output: aff(d, d),
                ff_in: aff(d, d),
                ff_out: aff(d, d),
            })
            .collect(),
        head,
    }
}

/// Expected `(name, rows, cols)` of every parameter for `cfg`.
pub fn parameter_shapes(cfg: &RerankerConfig) -> Vec<(String, usize, usize)> {
    layout(cfg).named().into_iter().map(|(n, &(r, c))| (n, r, c)).collect()
}

/// Weights uniform in `±1/sqrt(fan_in)`, biases zero, position table zero
/// (a fresh model ignores the input order).
pub fn init_params(cfg: &RerankerConfig) -> Result<RerankerParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let weights = layout(cfg).map(|name, &(r, c)| {
        if name.ends_with(".weight") {
            let bound = 1.0 / (r as f64).sqrt();
            let data = (0..r * c).map(|_| rng.random_range(-bound..bound)).collect();
            Matrix::from_vec(r, c, data)
        } else {
            Matrix::zeros(r, c)
        }
    });
    Ok(RerankerParams {
        cfg: cfg.clone(),
        weights,
    })
}

/// Parameters registered as leaves on a tape.
#[derive(Debug, Clone)]
pub struct BoundParams<'a> {
    pub cfg: &'a RerankerConfig,
    pub vars: Weights<Var>,
}

impl RerankerParams {
    pub fn bind(&self, tape: &mut Tape) -> BoundParams<'_> {
        BoundParams {
            cfg: &self.cfg,
            vars: self.weights.map(|_, m| tape.leaf(m.clone())),
        }
    }

    /// Scores for one list.
    pub fn forward(&self, items: &Matrix, user: &[f64], pos: &PositionVector) -> Result<ScoreVector> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let out = bound.forward(&mut tape, items, user, pos)?;
        Ok(ScoreVector(tape.value(out).data.clone()))
    }
}

fn affine(tape: &mut Tape, a: &Affine<Var>, x: Var) -> Var {
    let xw = tape.matmul(x, a.weight);
    tape.add_row(xw, a.bias)
}

impl BoundParams<'_> {
    /// Records one forward pass on `tape`; returns a `1 x n` score row.
    pub fn forward(&self, tape: &mut Tape, items: &Matrix, user: &[f64], pos: &PositionVector) -> Result<Var> {
        let cfg = self.cfg;
        let n = items.rows;
        if n == 0 {
            return Err(contract("empty item list"));
        }
        if n > cfg.n_max {
            return Err(contract(format!("list length {n} exceeds n_max {}", cfg.n_max)));
        }
        if items.cols != cfg.d_item {
            return Err(contract(format!(
                "items have {} features, model expects {}",
                items.cols, cfg.d_item
            )));
        }
        if user.len() != cfg.d_user {
            return Err(contract(format!(
                "user has {} features, model expects {}",
                user.len(),
                cfg.d_user
            )));
        }
        if pos.len() != n {
            return Err(contract(format!(
                "position vector has length {}, list has {n} items",
                pos.len()
            )));
        }

        let x = tape.leaf(items.clone());
        let mut h = affine(tape, &self.vars.item_proj, x);
        if cfg.position_mode == PositionMode::LearnedAdd {
            let pe = tape.gather_rows(self.vars.pos_table, pos.as_slice());
            h = tape.add(h, pe);
        }

        let dh = cfg.head_dim();
        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        for blk in &self.vars.blocks {
            let q = affine(tape, &blk.query, h);
            let k = affine(tape, &blk.key, h);
            let v = affine(tape, &blk.value, h);
            let mut heads = Vec::with_capacity(cfg.n_heads);
            for head in 0..cfg.n_heads {
                let qh = tape.col_slice(q, head * dh, dh);
                let kh = tape.col_slice(k, head * dh, dh);
                let vh = tape.col_slice(v, head * dh, dh);
                let kt = tape.transpose(kh);
                let logits = tape.matmul(qh, kt);
                let logits = tape.scale(logits, inv_sqrt);
                let attn = tape.softmax_rows(logits);
                heads.push(tape.matmul(attn, vh));
            }
            let merged = if heads.len() == 1 {
                heads[0]
            } else {
                tape.concat_cols(&heads)
            };
            let attended = affine(tape, &blk.output, merged);
            h = tape.add(h, attended);
            let ff = affine(tape, &blk.ff_in, h);
            let ff = tape.gelu(ff);
            let ff = affine(tape, &blk.ff_out, ff);
            h = tape.add(h, ff);
        }

        if let Some(up) = &self.vars.user_proj {
            let u = tape.leaf(Matrix::row_vector(user));
            let u = affine(tape, up, u);
            let u = tape.broadcast_rows(u, n);
            h = tape.concat_cols(&[h, u]);
        }

        let (last, hidden) = self.vars.head.split_last().expect("head has an output layer");
        for layer in hidden {
            let z = affine(tape, layer, h);
            h = tape.gelu(z);
        }
        let logits = affine(tape, last, h);
        let row = tape.transpose(logits);
        Ok(match cfg.head_mode {
            HeadMode::SoftmaxList => tape.softmax_rows(row),
            HeadMode::SigmoidItem => tape.sigmoid(row),
        })
    }
}

/// Evaluates `objective` on a fresh tape and differentiates it with respect
/// to every parameter. Any permutation the objective computes is a constant
/// of the recorded graph.
pub fn loss_and_gradients<F>(params: &RerankerParams, objective: F) -> Result<(f64, ParamGrads)>
where
    F: FnOnce(&mut Tape, &BoundParams<'_>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let out = objective(&mut tape, &bound)?;
    let loss = tape.scalar(out);
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("objective evaluated to {loss}")));
    }
    let mut grads = tape.backward(out);
    let g = bound.vars.map(|_, &v| grads.take(v));
    Ok((loss, g))
}
