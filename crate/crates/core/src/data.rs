//! Synthetic click lists with a known click model, JSON Lines dataset files
//! and seeded train/valid/test splits.
//!
//! # File format
//!
//! One list per line, a JSON object with the fields
//!
//! ```text
//! {"list_id": "...", "user": [f64...], "items": [[f64...]...], "labels": [0|1...], "init_pos": [usize...]}
//! ```
//!
//! `items` rows are in the order the initial ranker produced them.
//! `init_pos` is optional when reading and defaults to the identity. Blank
//! lines are ignored. Reals are written in shortest round-trip form so a
//! save/load cycle is exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{config, Error, Result};
use crate::positions::{check_permutation, PositionVector};
use crate::sample::{Dataset, ListSample, SplitTag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_lists: usize,
    /// Items per list.
    pub n: usize,
    pub d_item: usize,
    pub d_user: usize,
    /// Strength of the cross-item term in the click utility.
    pub context_weight: f64,
    /// Standard deviation of the noise the initial ranker adds to relevance.
    pub ranker_noise: f64,
    /// Multiplier on the utility inside the click sigmoid.
    pub click_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_lists: 1000,
            n: 10,
            d_item: 6,
            d_user: 8,
            context_weight: 0.5,
            ranker_noise: 0.5,
            click_scale: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(config(format!("list length must be at least 2, got {}", self.n)));
        }
        if self.d_item == 0 {
            return Err(config("d_item must be positive"));
        }
        if !(self.ranker_noise >= 0.0 && self.ranker_noise.is_finite()) {
            return Err(config(format!(
                "ranker_noise must be finite and >= 0, got {}",
                self.ranker_noise
            )));
        }
        if !self.context_weight.is_finite() || !self.click_scale.is_finite() {
            return Err(config("context_weight and click_scale must be finite"));
        }
        Ok(())
    }
}

/// Latent click model of one generated list, in stored item order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListTruth {
    /// User-specific relevance weights.
    pub user_weights: Vec<f64>,
    /// Pointwise relevance of each item.
    pub relevance: Vec<f64>,
    /// Relevance plus the cross-item term.
    pub utility: Vec<f64>,
    pub click_prob: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// User-independent part of the relevance weights.
    pub base_weights: Vec<f64>,
    /// `d_item x d_user` map from user features to relevance weights.
    pub user_map: Vec<Vec<f64>>,
    pub lists: Vec<ListTruth>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn normal_vec(rng: &mut impl Rng, len: usize, std: f64) -> Vec<f64> {
    (0..len).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Generates `cfg.n_lists` lists and the model that produced their clicks.
///
/// Relevance weights are `w_u = base + M u`, scaled so relevance has roughly
/// unit variance. Item `i` has relevance `b_i = <w_u, x_i>` and utility
/// `v_i = b_i + context_weight * <x_i, mean of the other items>`; it is
/// clicked with probability `sigmoid(click_scale * v_i)`. The initial ranker
/// orders items by `b_i` plus Gaussian noise.
pub fn generate(cfg: &SynthConfig) -> Result<(Dataset, GroundTruth)> {
    cfg.validate()?;
    let mut latent = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.d_item;
    let split_var = if cfg.d_user > 0 { 0.5 } else { 1.0 };
    let base_weights = normal_vec(&mut latent, d, (split_var / d as f64).sqrt());
    let map_std = (0.5 / (d * cfg.d_user.max(1)) as f64).sqrt();
    let user_map: Vec<Vec<f64>> = (0..d).map(|_| normal_vec(&mut latent, cfg.d_user, map_std)).collect();
    let noise = Normal::new(0.0, cfg.ranker_noise).map_err(|e| config(e.to_string()))?;

    let mut samples = Vec::with_capacity(cfg.n_lists);
    let mut lists = Vec::with_capacity(cfg.n_lists);
    for l in 0..cfg.n_lists {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(l as u64 + 1);

        let user = normal_vec(&mut rng, cfg.d_user, 1.0);
        let w: Vec<f64> = (0..d).map(|k| base_weights[k] + dot(&user_map[k], &user)).collect();
        let items: Vec<Vec<f64>> = (0..cfg.n).map(|_| normal_vec(&mut rng, d, 1.0)).collect();

        let mut total = vec![0.0; d];
        for x in &items {
            for (t, v) in total.iter_mut().zip(x) {
                *t += v;
            }
        }
        let relevance: Vec<f64> = items.iter().map(|x| dot(&w, x)).collect();
        let utility: Vec<f64> = items
            .iter()
            .zip(&relevance)
            .map(|(x, b)| {
                let others: Vec<f64> = total.iter().zip(x).map(|(t, v)| (t - v) / (cfg.n - 1) as f64).collect();
                b + cfg.context_weight * dot(x, &others)
            })
            .collect();
        let click_prob: Vec<f64> = utility.iter().map(|v| sigmoid(cfg.click_scale * v)).collect();
        let labels: Vec<u8> = click_prob.iter().map(|&p| u8::from(rng.random::<f64>() < p)).collect();
        let noisy: Vec<f64> = relevance.iter().map(|b| b + noise.sample(&mut rng)).collect();

        // store items in initial-ranker order
        let mut order: Vec<usize> = (0..cfg.n).collect();
        order.sort_by(|&a, &b| noisy[b].total_cmp(&noisy[a]).then(a.cmp(&b)));
        let pick = |v: &[f64]| order.iter().map(|&i| v[i]).collect::<Vec<_>>();
        samples.push(ListSample {
            list_id: format!("synth-{l}"),
            items: order.iter().map(|&i| items[i].clone()).collect(),
            user,
            labels: order.iter().map(|&i| labels[i]).collect(),
            init_pos: (0..cfg.n).collect(),
        });
        lists.push(ListTruth {
            user_weights: w,
            relevance: pick(&relevance),
            utility: pick(&utility),
            click_prob: pick(&click_prob),
        });
    }

    let mut ds = Dataset::new(samples, SplitTag::Train)?;
    if ds.is_empty() {
        ds.d_item = d;
        ds.d_user = cfg.d_user;
    }
    Ok((
        ds.with_fixed_n(cfg.n)?,
        GroundTruth {
            base_weights,
            user_map,
            lists,
        },
    ))
}

#[derive(Serialize)]
struct Record<'a> {
    list_id: &'a str,
    user: &'a [f64],
    items: &'a [Vec<f64>],
    labels: &'a [u8],
    init_pos: &'a [usize],
}

/// Serialises one list as a single JSON line (no trailing newline).
pub fn to_json_line(s: &ListSample) -> Result<String> {
    Ok(serde_json::to_string(&Record {
        list_id: &s.list_id,
        user: &s.user,
        items: &s.items,
        labels: &s.labels,
        init_pos: &s.init_pos,
    })?)
}

pub fn save(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in &data.samples {
        writeln!(w, "{}", to_json_line(s)?)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_err(line: usize, field: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

fn real_array(v: &Value, line: usize, field: &str) -> Result<Vec<f64>> {
    let arr = v
        .as_array()
        .ok_or_else(|| parse_err(line, field, "expected an array of numbers"))?;
    arr.iter()
        .enumerate()
        .map(|(i, x)| {
            x.as_f64()
                .ok_or_else(|| parse_err(line, field, format!("element {i} is not a number")))
        })
        .collect()
}

/// Parses one JSON line; `line` is 1-based and only used in diagnostics.
pub fn parse_json_line(text: &str, line: usize) -> Result<ListSample> {
    let v: Value = serde_json::from_str(text).map_err(|e| parse_err(line, "<record>", e.to_string()))?;
    let obj = v
        .as_object()
        .ok_or_else(|| parse_err(line, "<record>", "expected a JSON object"))?;
    let field = |name: &str| obj.get(name).ok_or_else(|| parse_err(line, name, "missing field"));

    let list_id = match field("list_id")? {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        _ => return Err(parse_err(line, "list_id", "expected a string")),
    };
    let user = match obj.get("user") {
        None | Some(Value::Null) => Vec::new(),
        Some(u) => real_array(u, line, "user")?,
    };
    let rows = field("items")?
        .as_array()
        .ok_or_else(|| parse_err(line, "items", "expected an array of rows"))?;
    if rows.is_empty() {
        return Err(parse_err(line, "items", "list has no items"));
    }
    let items = rows
        .iter()
        .map(|r| real_array(r, line, "items"))
        .collect::<Result<Vec<_>>>()?;
    let width = items[0].len();
    if items.iter().any(|r| r.len() != width) {
        return Err(parse_err(line, "items", "rows have different widths"));
    }
    let labels = field("labels")?
        .as_array()
        .ok_or_else(|| parse_err(line, "labels", "expected an array"))?
        .iter()
        .map(|y| match y.as_u64() {
            Some(0) => Ok(0u8),
            Some(1) => Ok(1u8),
            _ => Err(parse_err(line, "labels", format!("non-binary label {y}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    if labels.len() != items.len() {
        return Err(parse_err(
            line,
            "labels",
            format!("{} labels for {} items", labels.len(), items.len()),
        ));
    }
    let init_pos = match obj.get("init_pos") {
        None | Some(Value::Null) => PositionVector::identity(items.len()).into_inner(),
        Some(p) => {
            let arr = p
                .as_array()
                .ok_or_else(|| parse_err(line, "init_pos", "expected an array"))?;
            let pos = arr
                .iter()
                .map(|x| {
                    x.as_u64()
                        .map(|u| u as usize)
                        .ok_or_else(|| parse_err(line, "init_pos", "expected non-negative integers"))
                })
                .collect::<Result<Vec<_>>>()?;
            if pos.len() != items.len() {
                return Err(parse_err(
                    line,
                    "init_pos",
                    format!("length {} for {} items", pos.len(), items.len()),
                ));
            }
            check_permutation(&pos).map_err(|e| parse_err(line, "init_pos", e))?;
            pos
        }
    };
    Ok(ListSample {
        list_id,
        items,
        user,
        labels,
        init_pos,
    })
}

/// Reads a dataset file. An empty file yields an empty dataset.
pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
    load_as(path, SplitTag::Train)
}

pub fn load_as(path: impl AsRef<Path>, tag: SplitTag) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut samples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s = parse_json_line(&line, i + 1)?;
        if let Some(first) = samples.first() {
            let first: &ListSample = first;
            if s.d_item() != first.d_item() {
                return Err(parse_err(
                    i + 1,
                    "items",
                    format!("width {} differs from earlier lists ({})", s.d_item(), first.d_item()),
                ));
            }
            if s.user.len() != first.user.len() {
                return Err(parse_err(
                    i + 1,
                    "user",
                    format!(
                        "width {} differs from earlier lists ({})",
                        s.user.len(),
                        first.user.len()
                    ),
                ));
            }
        }
        samples.push(s);
    }
    Dataset::new(samples, tag)
}

/// Seeded shuffled partition by list.
///
/// The train split gets `round(f_train * N)` lists, the validation split
/// `round(f_valid * N)` (capped by what is left) and the test split the
/// remainder.
pub fn split(data: &Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
        return Err(config(format!(
            "split fractions must be finite and >= 0, got {fractions:?}"
        )));
    }
    if (a + b + c - 1.0).abs() > 1e-9 {
        return Err(config(format!("split fractions must sum to 1, got {}", a + b + c)));
    }
    let n = data.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((a * n as f64).round() as usize).min(n);
    let n_valid = ((b * n as f64).round() as usize).min(n - n_train);

    let part = |range: &[usize], tag| Dataset {
        samples: range.iter().map(|&i| data.samples[i].clone()).collect(),
        d_item: data.d_item,
        d_user: data.d_user,
        split_tag: tag,
        fixed_n: data.fixed_n,
    };
    Ok((
        part(&idx[..n_train], SplitTag::Train),
        part(&idx[n_train..n_train + n_valid], SplitTag::Valid),
        part(&idx[n_train + n_valid..], SplitTag::Test),
    ))
}
