//! Training loop: per-epoch swap resampling, Adam updates over batches of
//! equal-length lists, learning-rate grid search and finite-difference
//! gradient verification.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{config, contract, Error, Result};
use crate::losses::{
    log_loss_on_tape, principled_objective, principled_positions, PrincipleWeights, PrincipledLossBreakdown,
    PrincipledPositions,
};
use crate::metrics::{evaluate, AucMode, MetricsReport};
use crate::model::{init_params, loss_and_gradients, ParamGrads, RerankerConfig, RerankerParams, Weights};
use crate::obedience::{obedience, SwapTrials};
use crate::positions::PositionVector;
use crate::sample::{Dataset, PreparedList};
use crate::tensor::Matrix;

/// Learning rates tried by [`grid_search`] unless configured otherwise.
pub const DEFAULT_LR_GRID: [f64; 3] = [1e-4, 5e-5, 1e-5];

/// What each list contributes to the batch loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Log-loss plus the weighted consistency pairs.
    #[default]
    Principled,
    /// Listwise log-loss at the initial order only.
    LogLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Lists per batch; batches only ever hold lists of one length.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_grid: Vec<f64>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub principle_weights: PrincipleWeights,
    pub objective: Objective,
    /// Validation metrics every this many epochs; 0 disables them.
    pub eval_every: usize,
    /// Return the parameters of the epoch with the best validation NDCG
    /// instead of the final ones.
    pub keep_best_valid: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            learning_rate: DEFAULT_LR_GRID[0],
            lr_grid: DEFAULT_LR_GRID.to_vec(),
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            principle_weights: PrincipleWeights::BOTH,
            objective: Objective::Principled,
            eval_every: 1,
            keep_best_valid: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(config("batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || self.adam_eps <= 0.0 {
            return Err(config("Adam betas must lie in [0, 1) and eps must be positive"));
        }
        self.principle_weights.validate()
    }
}

/// Adam with bias correction, over the full parameter layout.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Weights<Matrix>,
    v: Weights<Matrix>,
}

impl Adam {
    pub fn new(params: &RerankerParams, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: params.weights.zeros_like(),
            v: params.weights.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut RerankerParams, grads: &ParamGrads) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let grads: Vec<&Matrix> = grads.named().into_iter().map(|(_, g)| g).collect();
        let mut ms: Vec<&mut Matrix> = Vec::new();
        self.m.for_each_mut(|m| ms.push(m));
        let mut vs: Vec<&mut Matrix> = Vec::new();
        self.v.for_each_mut(|v| vs.push(v));
        let mut i = 0;
        params.weights.for_each_mut(|p| {
            let (g, m, v) = (grads[i], &mut ms[i], &mut vs[i]);
            for j in 0..p.data.len() {
                let gj = g.data[j];
                m.data[j] = b1 * m.data[j] + (1.0 - b1) * gj;
                v.data[j] = b2 * v.data[j] + (1.0 - b2) * gj * gj;
                let m_hat = m.data[j] / c1;
                let v_hat = v.data[j] / c2;
                p.data[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            i += 1;
        });
    }
}

/// Averages of one epoch plus optional validation results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the optimised (weighted) per-list objective.
    pub loss: f64,
    pub ce_base: f64,
    pub ce_p_prime: f64,
    pub cs_p1: f64,
    pub ce_p_hat: f64,
    pub cs_p2: f64,
    pub valid_auc: Option<f64>,
    pub valid_ndcg: Option<f64>,
    pub valid_p1_obedience: Option<f64>,
    pub valid_p2_obedience: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    pub principle_weights: PrincipleWeights,
    pub objective: Objective,
    /// Epoch whose parameters were returned.
    pub selected_epoch: usize,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "epoch,loss,ce_base,ce_p_prime,cs_p1,ce_p_hat,cs_p2,w_p1,w_p2,\
valid_auc,valid_ndcg,valid_p1_obedience,valid_p2_obedience";

    /// One row per epoch. Wall-clock times are left out so that the file is
    /// reproducible; see [`timings`](Self::timings).
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        let w = self.principle_weights;
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.epoch,
                r.loss,
                r.ce_base,
                r.ce_p_prime,
                r.cs_p1,
                r.ce_p_hat,
                r.cs_p2,
                w.p1,
                w.p2,
                opt(r.valid_auc),
                opt(r.valid_ndcg),
                opt(r.valid_p1_obedience),
                opt(r.valid_p2_obedience)
            ));
        }
        out
    }

    pub fn timings(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.seconds).collect()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }
}

/// Batches of dataset indices: each length bucket is chunked in shuffled
/// order, then the batch order is shuffled.
fn make_batches(lengths: &[usize], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..lengths.len()).collect();
    idx.shuffle(rng);
    let mut buckets: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in idx {
        buckets.entry(lengths[i]).or_default().push(i);
    }
    let mut batches: Vec<Vec<usize>> = buckets
        .into_values()
        .flat_map(|b| b.chunks(batch_size).map(<[usize]>::to_vec).collect::<Vec<_>>())
        .collect();
    batches.shuffle(rng);
    batches
}

/// Swap index for every list of one epoch, drawn in dataset order.
fn draw_swaps(lengths: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
    lengths
        .iter()
        .map(|&n| if n >= 2 { rng.random_range(0..n - 1) } else { 0 })
        .collect()
}

/// Derived seeds for the independent random streams of a run.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const STREAM_BATCHES: u64 = 1;
const STREAM_SWAPS: u64 = 2;

/// Swap index drawn for every list in each of the first `epochs` epochs of a
/// run with this seed; `0` for lists shorter than two items.
pub fn swap_schedule(seed: u64, lengths: &[usize], epochs: usize) -> Vec<Vec<usize>> {
    let mut rng = stream(seed, STREAM_SWAPS);
    (0..epochs).map(|_| draw_swaps(lengths, &mut rng)).collect()
}

fn training_positions(params: &RerankerParams, list: &PreparedList, swap_k: usize) -> Result<PrincipledPositions> {
    if list.len() >= 2 {
        return principled_positions(params, list, swap_k);
    }
    // a single item has exactly one order
    let id = PositionVector::identity(list.len());
    Ok(PrincipledPositions {
        initial: id.clone(),
        reranked: id.clone(),
        rereranked: id.clone(),
        perturbed: id,
        swap_k: 0,
    })
}

/// Loss value, optional term breakdown and gradients for one list.
pub fn list_gradient(
    params: &RerankerParams,
    list: &PreparedList,
    swap_k: usize,
    objective: Objective,
    weights: PrincipleWeights,
) -> Result<(f64, Option<PrincipledLossBreakdown>, ParamGrads)> {
    match objective {
        Objective::LogLoss => {
            let (loss, g) = loss_and_gradients(params, |tape, bound| {
                let s = bound.forward(tape, &list.items, &list.user, &list.init_pos)?;
                Ok(log_loss_on_tape(tape, s, &list.labels))
            })?;
            Ok((loss, None, g))
        }
        Objective::Principled => {
            let positions = training_positions(params, list, swap_k)?;
            let mut breakdown = None;
            let (loss, g) = loss_and_gradients(params, |tape, bound| {
                let (total, b) = principled_objective(tape, bound, list, &positions, weights)?;
                breakdown = Some(b);
                Ok(total)
            })?;
            Ok((loss, breakdown, g))
        }
    }
}

#[derive(Default)]
struct EpochSums {
    loss: f64,
    terms: [f64; 5],
    count: usize,
}

/// Trains a fresh model. `valid` feeds the per-epoch validation columns.
pub fn train(
    cfg: &TrainConfig,
    model_cfg: &RerankerConfig,
    data: &Dataset,
    valid: Option<&Dataset>,
) -> Result<(RerankerParams, TrainLog)> {
    cfg.validate()?;
    let params = init_params(model_cfg)?;
    train_from(cfg, params, data, valid)
}

/// Continues training from given parameters.
pub fn train_from(
    cfg: &TrainConfig,
    mut params: RerankerParams,
    data: &Dataset,
    valid: Option<&Dataset>,
) -> Result<(RerankerParams, TrainLog)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(contract("training data is empty"));
    }
    let model_cfg = &params.cfg;
    if data.d_item != model_cfg.d_item || data.d_user != model_cfg.d_user {
        return Err(config(format!(
            "data widths ({}, {}) do not match model ({}, {})",
            data.d_item, data.d_user, model_cfg.d_item, model_cfg.d_user
        )));
    }
    if data.max_list_len() > model_cfg.n_max {
        return Err(config(format!(
            "lists of length {} exceed n_max {}",
            data.max_list_len(),
            model_cfg.n_max
        )));
    }
    let lists: Vec<PreparedList> = data.samples.iter().map(|s| s.prepare()).collect::<Result<_>>()?;
    let lengths: Vec<usize> = lists.iter().map(PreparedList::len).collect();

    let mut batch_rng = stream(cfg.seed, STREAM_BATCHES);
    let mut swap_rng = stream(cfg.seed, STREAM_SWAPS);
    let mut adam = Adam::new(&params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, RerankerParams)> = None;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let swaps = draw_swaps(&lengths, &mut swap_rng);
        let batches = make_batches(&lengths, cfg.batch_size, &mut batch_rng);
        let mut sums = EpochSums::default();

        for batch in &batches {
            let results: Vec<_> = batch
                .par_iter()
                .map(|&i| list_gradient(&params, &lists[i], swaps[i], cfg.objective, cfg.principle_weights))
                .collect();
            let mut grad_sum: Option<ParamGrads> = None;
            for (&i, r) in batch.iter().zip(results) {
                let (loss, breakdown, g) = r.map_err(|e| match e {
                    Error::Numerical(m) => {
                        Error::Numerical(format!("epoch {epoch}, list {} ({}): {m}", i, data.samples[i].list_id))
                    }
                    other => other,
                })?;
                sums.loss += loss;
                sums.count += 1;
                if let Some(b) = breakdown {
                    for (s, v) in sums
                        .terms
                        .iter_mut()
                        .zip([b.ce_base, b.ce_p_prime, b.cs_p1, b.ce_p_hat, b.cs_p2])
                    {
                        *s += v;
                    }
                } else {
                    sums.terms[0] += loss;
                }
                match &mut grad_sum {
                    None => grad_sum = Some(g),
                    Some(acc) => acc.add_assign(&g),
                }
            }
            let mut grads = grad_sum.expect("batches are nonempty");
            grads.scale(1.0 / batch.len() as f64);
            adam.step(&mut params, &grads);
            if !params.weights.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite parameters after an update in epoch {epoch} (batch starting at list {})",
                    data.samples[batch[0]].list_id
                )));
            }
        }

        let c = sums.count as f64;
        let mut rec = EpochRecord {
            epoch,
            loss: sums.loss / c,
            ce_base: sums.terms[0] / c,
            ce_p_prime: sums.terms[1] / c,
            cs_p1: sums.terms[2] / c,
            ce_p_hat: sums.terms[3] / c,
            cs_p2: sums.terms[4] / c,
            valid_auc: None,
            valid_ndcg: None,
            valid_p1_obedience: None,
            valid_p2_obedience: None,
            seconds: 0.0,
        };
        if let Some(v) = valid.filter(|v| !v.is_empty()) {
            if cfg.eval_every > 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
                let m = evaluate(&params, v, AucMode::PerList)?;
                let o = obedience(&params, v, SwapTrials::default(), cfg.seed)?;
                rec.valid_auc = m.auc;
                rec.valid_ndcg = m.ndcg;
                rec.valid_p1_obedience = Some(o.p1_rate);
                rec.valid_p2_obedience = Some(o.p2_rate);
                if cfg.keep_best_valid {
                    let score = m.ndcg.unwrap_or(f64::NEG_INFINITY);
                    if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
                        best = Some((score, epoch, params.clone()));
                    }
                }
            }
        }
        rec.seconds = started.elapsed().as_secs_f64();
        records.push(rec);
    }

    let (params, selected_epoch) = match best {
        Some((_, epoch, p)) => (p, epoch),
        None => (params, cfg.epochs),
    };
    Ok((
        params,
        TrainLog {
            records,
            principle_weights: cfg.principle_weights,
            objective: cfg.objective,
            selected_epoch,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub learning_rate: f64,
    pub metrics: MetricsReport,
    pub final_loss: f64,
    pub selected: bool,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub rows: Vec<GridRow>,
    pub best_config: TrainConfig,
    pub best_params: RerankerParams,
    pub best_log: TrainLog,
}

impl GridResult {
    pub fn to_csv(&self) -> String {
        let mut out = format!("learning_rate,final_loss,{},selected\n", MetricsReport::csv_header());
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.learning_rate,
                r.final_loss,
                r.metrics.csv_row(),
                r.selected
            ));
        }
        out
    }
}

/// Index of the preferred run: highest NDCG, then highest AUC, then lowest
/// learning rate. Missing metrics rank below any value.
pub fn select_best(rows: &[(f64, Option<f64>, Option<f64>)]) -> Option<usize> {
    let key = |v: Option<f64>| v.unwrap_or(f64::NEG_INFINITY);
    (0..rows.len()).reduce(|best, i| {
        let (lr_b, ndcg_b, auc_b) = rows[best];
        let (lr_i, ndcg_i, auc_i) = rows[i];
        let ord = key(ndcg_i)
            .total_cmp(&key(ndcg_b))
            .then(key(auc_i).total_cmp(&key(auc_b)))
            .then(lr_b.total_cmp(&lr_i));
        if ord.is_gt() {
            i
        } else {
            best
        }
    })
}

/// Trains once per learning rate in `template.lr_grid` and keeps the run
/// with the best validation metrics.
pub fn grid_search(
    template: &TrainConfig,
    model_cfg: &RerankerConfig,
    train_data: &Dataset,
    valid: &Dataset,
) -> Result<GridResult> {
    if template.lr_grid.is_empty() {
        return Err(config("learning-rate grid is empty"));
    }
    if valid.is_empty() {
        return Err(contract("grid search needs a nonempty validation split"));
    }
    let mut runs = Vec::with_capacity(template.lr_grid.len());
    for &lr in &template.lr_grid {
        let cfg = TrainConfig {
            learning_rate: lr,
            ..template.clone()
        };
        let (params, log) = train(&cfg, model_cfg, train_data, Some(valid))?;
        let metrics = evaluate(&params, valid, AucMode::PerList)?;
        runs.push((cfg, params, log, metrics));
    }
    let keys: Vec<_> = runs
        .iter()
        .map(|(c, _, _, m)| (c.learning_rate, m.ndcg, m.auc))
        .collect();
    let best = select_best(&keys).expect("grid is nonempty");
    let rows = runs
        .iter()
        .enumerate()
        .map(|(i, (c, _, log, m))| GridRow {
            learning_rate: c.learning_rate,
            metrics: m.clone(),
            final_loss: log.records.last().map_or(f64::NAN, |r| r.loss),
            selected: i == best,
        })
        .collect();
    let (best_config, best_params, best_log, _) = runs.swap_remove(best);
    Ok(GridResult {
        rows,
        best_config,
        best_params,
        best_log,
    })
}

/// Tolerance settings for [`gradient_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub h: f64,
    /// Pass threshold on the maximum relative error.
    pub threshold: f64,
    /// Denominator floor of the relative error; coordinates whose gradients
    /// are both below it are compared on an absolute scale.
    pub scale_floor: f64,
    /// Adds 1 to this flat gradient coordinate before comparing.
    pub corrupt: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            threshold: 1e-4,
            scale_floor: 1e-4,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_parameter: String,
    pub worst_index: usize,
    pub coordinates: usize,
    pub h: f64,
    pub threshold: f64,
    pub passed: bool,
}

/// Compares analytic gradients of the unit-weight principled objective with
/// central differences, with all orders frozen at the unperturbed point.
pub fn gradient_check(
    params: &RerankerParams,
    list: &PreparedList,
    swap_k: usize,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let positions = principled_positions(params, list, swap_k)?;
    let objective = |p: &RerankerParams| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let (total, _) = principled_objective(&mut tape, &bound, list, &positions, PrincipleWeights::BOTH)?;
        Ok(tape.scalar(total))
    };
    let (_, grads) = loss_and_gradients(params, |tape, bound| {
        principled_objective(tape, bound, list, &positions, PrincipleWeights::BOTH).map(|(t, _)| t)
    })?;
    let mut analytic = grads.flatten();
    if let Some(c) = opts.corrupt {
        if c >= analytic.len() {
            return Err(contract(format!(
                "corrupt index {c} out of range ({} coordinates)",
                analytic.len()
            )));
        }
        analytic[c] += 1.0;
    }

    let names: Vec<(String, usize)> = params
        .weights
        .named()
        .into_iter()
        .flat_map(|(n, m)| (0..m.len()).map(move |j| (n.clone(), j)))
        .collect();
    let h = opts.h;
    let numeric: Vec<f64> = (0..analytic.len())
        .into_par_iter()
        .map(|flat| {
            let probe = |delta: f64| {
                let mut p = params.clone();
                let mut seen = 0;
                p.weights.for_each_mut(|m| {
                    if flat >= seen && flat < seen + m.len() {
                        m.data[flat - seen] += delta;
                    }
                    seen += m.len();
                });
                objective(&p)
            };
            Ok((probe(h)? - probe(-h)?) / (2.0 * h))
        })
        .collect::<Result<_>>()?;

    let mut worst = (f64::NEG_INFINITY, 0usize);
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(opts.scale_floor);
        if rel > worst.0 || rel.is_nan() {
            worst = (rel, i);
        }
    }
    let (name, index) = names[worst.1].clone();
    Ok(GradCheckReport {
        max_rel_error: worst.0,
        worst_parameter: name,
        worst_index: index,
        coordinates: analytic.len(),
        h,
        threshold: opts.threshold,
        passed: worst.0 <= opts.threshold,
    })
}

/// Small model with a randomised position table so that every path of the
/// objective carries gradient; used by the CLI gradient check.
pub fn gradcheck_params(model_cfg: &RerankerConfig, pos_scale: f64) -> Result<RerankerParams> {
    let mut p = init_params(model_cfg)?;
    let mut rng = stream(model_cfg.seed, 7);
    for v in &mut p.weights.pos_table.data {
        *v = rng.random_range(-pos_scale..pos_scale);
    }
    Ok(p)
}
