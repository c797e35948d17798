//! Independent reference implementations used as test oracles. Nothing here
//! calls into the tape or the library's loss and metric code.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rerank_core::model::{HeadMode, PositionMode, RerankerConfig, RerankerParams};
use rerank_core::ListSample;

pub type Mat = Vec<Vec<f64>>;

pub fn tensor(p: &RerankerParams, name: &str) -> Mat {
    let (_, m) = p
        .weights
        .named()
        .into_iter()
        .find(|(n, _)| n == name)
        .unwrap_or_else(|| panic!("no tensor {name}"));
    (0..m.rows)
        .map(|r| m.data[r * m.cols..(r + 1) * m.cols].to_vec())
        .collect()
}

fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

fn affine(p: &RerankerParams, prefix: &str, x: &Mat) -> Mat {
    let w = tensor(p, &format!("{prefix}.weight"));
    let b = &tensor(p, &format!("{prefix}.bias"))[0];
    matmul(x, &w)
        .into_iter()
        .map(|row| row.iter().zip(b).map(|(v, c)| v + c).collect())
        .collect()
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u + v).collect())
        .collect()
}

pub fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

/// Straight-line scoring of one list.
pub fn forward(p: &RerankerParams, items: &[Vec<f64>], user: &[f64], pos: &[usize]) -> Vec<f64> {
    let cfg = &p.cfg;
    let n = items.len();
    let mut h = affine(p, "item_proj", &items.to_vec());
    if cfg.position_mode == PositionMode::LearnedAdd {
        let table = tensor(p, "pos_table");
        for i in 0..n {
            for j in 0..cfg.d_model {
                h[i][j] += table[pos[i]][j];
            }
        }
    }
    let dh = cfg.d_model / cfg.n_heads;
    for b in 0..cfg.n_blocks {
        let q = affine(p, &format!("blocks.{b}.query"), &h);
        let k = affine(p, &format!("blocks.{b}.key"), &h);
        let v = affine(p, &format!("blocks.{b}.value"), &h);
        let mut merged = vec![vec![0.0; cfg.d_model]; n];
        for head in 0..cfg.n_heads {
            let cols = head * dh..(head + 1) * dh;
            for i in 0..n {
                let logits: Vec<f64> = (0..n)
                    .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let a = softmax(&logits);
                for c in cols.clone() {
                    merged[i][c] = (0..n).map(|j| a[j] * v[j][c]).sum();
                }
            }
        }
        h = add(&h, &affine(p, &format!("blocks.{b}.output"), &merged));
        let ff = affine(p, &format!("blocks.{b}.ff_in"), &h);
        let ff: Mat = ff.iter().map(|r| r.iter().map(|&x| gelu(x)).collect()).collect();
        h = add(&h, &affine(p, &format!("blocks.{b}.ff_out"), &ff));
    }
    if cfg.d_user > 0 {
        let u = affine(p, "user_proj", &vec![user.to_vec()]);
        for row in &mut h {
            row.extend_from_slice(&u[0]);
        }
    }
    let layers = cfg.mlp_hidden.len();
    for l in 0..layers {
        h = affine(p, &format!("head.{l}"), &h)
            .iter()
            .map(|r| r.iter().map(|&x| gelu(x)).collect())
            .collect();
    }
    let logits: Vec<f64> = affine(p, &format!("head.{layers}"), &h).iter().map(|r| r[0]).collect();
    match cfg.head_mode {
        HeadMode::SoftmaxList => softmax(&logits),
        HeadMode::SigmoidItem => logits.iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect(),
    }
}

/// Position of each item after sorting by descending score, equal scores
/// ordered by their rank in `tie_ref`.
pub fn rank_by_score(scores: &[f64], tie_ref: &[usize]) -> Vec<usize> {
    let n = scores.len();
    let mut pos = vec![0; n];
    for i in 0..n {
        // number of items that go before item i
        pos[i] = (0..n)
            .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && tie_ref[j] < tie_ref[i]))
            .count();
    }
    pos
}

pub fn swap_ranks(pos: &[usize], k: usize) -> Vec<usize> {
    pos.iter()
        .map(|&p| {
            if p == k {
                k + 1
            } else if p == k + 1 {
                k
            } else {
                p
            }
        })
        .collect()
}

pub fn log_loss(s: &[f64], y: &[f64]) -> f64 {
    -s.iter().zip(y).map(|(p, y)| y * p.max(1e-12).ln()).sum::<f64>()
}

pub fn cs(pa: &[usize], pb: &[usize], sa: &[f64], sb: &[f64]) -> f64 {
    (0..pa.len())
        .map(|i| (pa[i] as f64 - pb[i] as f64).abs() * (sa[i] - sb[i]).powi(2))
        .sum()
}

#[derive(Debug, Clone)]
pub struct Orders {
    pub initial: Vec<usize>,
    pub reranked: Vec<usize>,
    pub rereranked: Vec<usize>,
    pub perturbed: Vec<usize>,
}

pub fn orders(p: &RerankerParams, s: &ListSample, swap_k: usize) -> Orders {
    let initial = s.init_pos.clone();
    let s0 = forward(p, &s.items, &s.user, &initial);
    let reranked = rank_by_score(&s0, &initial);
    let s1 = forward(p, &s.items, &s.user, &reranked);
    let rereranked = rank_by_score(&s1, &reranked);
    Orders {
        perturbed: swap_ranks(&initial, swap_k),
        initial,
        reranked,
        rereranked,
    }
}

/// `[ce_base, ce_p_prime, cs_p1, ce_p_hat, cs_p2]` at fixed orders.
pub fn terms(p: &RerankerParams, s: &ListSample, o: &Orders) -> [f64; 5] {
    let y: Vec<f64> = s.labels.iter().map(|&l| l as f64).collect();
    let f = |pos: &[usize]| forward(p, &s.items, &s.user, pos);
    let (s0, s1, s2, sh) = (f(&o.initial), f(&o.reranked), f(&o.rereranked), f(&o.perturbed));
    [
        log_loss(&s0, &y),
        log_loss(&s1, &y),
        cs(&o.rereranked, &o.reranked, &s2, &s1),
        log_loss(&sh, &y),
        cs(&o.perturbed, &o.reranked, &sh, &s1),
    ]
}

pub fn flat(p: &RerankerParams) -> Vec<f64> {
    let mut out = Vec::new();
    for (_, m) in p.weights.named() {
        out.extend_from_slice(&m.data);
    }
    out
}

pub fn with_coordinate(p: &RerankerParams, idx: usize, delta: f64) -> RerankerParams {
    let mut q = p.clone();
    let mut seen = 0;
    q.weights.for_each_mut(|m| {
        if idx >= seen && idx < seen + m.data.len() {
            m.data[idx - seen] += delta;
        }
        seen += m.data.len();
    });
    q
}

/// Central differences of `f` at every coordinate.
pub fn fd_gradient(p: &RerankerParams, h: f64, f: impl Fn(&RerankerParams) -> f64) -> Vec<f64> {
    (0..flat(p).len())
        .map(|i| (f(&with_coordinate(p, i, h)) - f(&with_coordinate(p, i, -h))) / (2.0 * h))
        .collect()
}

pub fn random_sample(rng: &mut ChaCha8Rng, n: usize, d_item: usize, d_user: usize) -> ListSample {
    let mut init: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        init.swap(i, rng.random_range(0..=i));
    }
    let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
    labels[0] = 1;
    ListSample {
        list_id: "r".into(),
        items: (0..n)
            .map(|_| (0..d_item).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect(),
        user: (0..d_user).map(|_| rng.random_range(-1.0..1.0)).collect(),
        labels,
        init_pos: init,
    }
}

/// Random small configuration with a non-zero position table.
pub fn random_params(seed: u64) -> RerankerParams {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let n_heads = [1, 2][rng.random_range(0..2)];
    let cfg = RerankerConfig {
        d_item: rng.random_range(2..5),
        d_user: rng.random_range(0..3),
        d_model: 4 * n_heads,
        n_heads,
        n_blocks: rng.random_range(1..3),
        mlp_hidden: vec![rng.random_range(3..7)],
        n_max: 6,
        head_mode: HeadMode::SoftmaxList,
        position_mode: PositionMode::LearnedAdd,
        seed,
    };
    let mut p = rerank_core::init_params(&cfg).unwrap();
    p.weights.for_each_mut(|m| {
        for v in &mut m.data {
            if *v == 0.0 {
                *v = rng.random_range(-0.5..0.5);
            }
        }
    });
    p
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---- metrics by enumeration ----

pub fn relevant(y: f64) -> bool {
    y > 0.5
}

/// Labels in display order for positions `pos`.
pub fn displayed(pos: &[usize], y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; y.len()];
    for (i, &p) in pos.iter().enumerate() {
        out[p] = y[i];
    }
    out
}

pub fn auc(s: &[f64], y: &[f64]) -> Option<f64> {
    let pairs: Vec<(usize, usize)> = (0..s.len())
        .flat_map(|i| (0..s.len()).map(move |j| (i, j)))
        .filter(|&(i, j)| relevant(y[i]) && !relevant(y[j]))
        .collect();
    if pairs.is_empty() {
        return None;
    }
    let good: f64 = pairs
        .iter()
        .map(|&(i, j)| {
            if s[i] > s[j] {
                1.0
            } else if s[i] == s[j] {
                0.5
            } else {
                0.0
            }
        })
        .sum();
    Some(good / pairs.len() as f64)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for at in 0..=p.len() {
            let mut q = p.clone();
            q.insert(at, n - 1);
            out.push(q);
        }
    }
    out
}

fn dcg(shown: &[f64]) -> f64 {
    shown
        .iter()
        .enumerate()
        .map(|(r, &y)| {
            if relevant(y) {
                1.0 / ((r + 2) as f64).log2()
            } else {
                0.0
            }
        })
        .sum()
}

/// NDCG with the ideal DCG found by trying every permutation.
pub fn ndcg(pos: &[usize], y: &[f64]) -> Option<f64> {
    if !y.iter().any(|&v| relevant(v)) {
        return None;
    }
    let best = permutations(y.len())
        .into_iter()
        .map(|p| dcg(&displayed(&p, y)))
        .fold(f64::NEG_INFINITY, f64::max);
    Some(dcg(&displayed(pos, y)) / best)
}

pub fn precision_at(pos: &[usize], y: &[f64], k: usize) -> f64 {
    let shown = displayed(pos, y);
    let d = k.min(shown.len());
    shown[..d].iter().filter(|&&v| relevant(v)).count() as f64 / d as f64
}

pub fn ap_at(pos: &[usize], y: &[f64], k: usize) -> Option<f64> {
    let shown = displayed(pos, y);
    let total = shown.iter().filter(|&&v| relevant(v)).count();
    if total == 0 {
        return None;
    }
    let d = k.min(shown.len());
    let s: f64 = (0..d)
        .filter(|&r| relevant(shown[r]))
        .map(|r| precision_at(pos, y, r + 1))
        .sum();
    Some(s / total.min(d) as f64)
}
