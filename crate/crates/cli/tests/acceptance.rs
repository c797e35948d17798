//! Acceptance checks, one line per criterion. Runs without the libtest
//! harness so that every criterion is reported even when an earlier one
//! fails; the process exits non-zero if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use rand::Rng;
use rerank_core::ablation::{run_ablation, AblationConfig, Variant};
use rerank_core::data::{generate, split, SynthConfig};
use rerank_core::losses::{cs_loss, principled_loss, principled_objective, PrincipleWeights, PrincipledPositions};
use rerank_core::metrics::{list_auc, list_map_at_k, list_ndcg, list_precision_at_k, CUTOFFS};
use rerank_core::model::{loss_and_gradients, RerankerConfig};
use rerank_core::obedience::{obedience, SwapTrials};
use rerank_core::training::{train, Objective, TrainConfig};
use rerank_core::PositionVector;

type Outcome = Result<String, String>;

fn check(cond: bool, ok: String, bad: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(bad)
    }
}

fn pv(v: &[usize]) -> PositionVector {
    PositionVector::new(v.to_vec()).unwrap()
}

fn gradient_check() -> Outcome {
    let mut worst_all: f64 = 0.0;
    for seed in 0..4 {
        let p = random_params(seed);
        let s = random_sample(&mut rng(300 + seed), 5, p.cfg.d_item, p.cfg.d_user);
        let list = s.prepare().map_err(|e| e.to_string())?;
        for k in 0..4 {
            let o = orders(&p, &s, k);
            let frozen = PrincipledPositions {
                initial: pv(&o.initial),
                reranked: pv(&o.reranked),
                rereranked: pv(&o.rereranked),
                perturbed: pv(&o.perturbed),
                swap_k: k,
            };
            let (_, g) = loss_and_gradients(&p, |tape, bound| {
                principled_objective(tape, bound, &list, &frozen, PrincipleWeights::BOTH).map(|(t, _)| t)
            })
            .map_err(|e| e.to_string())?;
            let numeric = fd_gradient(&p, 1e-5, |q| terms(q, &s, &o).iter().sum());
            for (a, n) in g.flatten().iter().zip(&numeric) {
                worst_all = worst_all.max((a - n).abs() / a.abs().max(n.abs()).max(1e-4));
            }
        }
    }
    check(
        worst_all <= 1e-4,
        format!("4 random configs x 4 swap indices, max relative error {worst_all:.2e} (h = 1e-5)"),
        format!("max relative error {worst_all:.2e} exceeds 1e-4"),
    )
}

fn cs_law() -> Outcome {
    let mut r = rng(77);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = r.random_range(1..=12);
        let perm = |r: &mut rand_chacha::ChaCha8Rng| {
            let mut v: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                v.swap(i, r.random_range(0..=i));
            }
            v
        };
        let (a, b) = (perm(&mut r), perm(&mut r));
        let sa: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
        let sb: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
        let got = cs_loss(&pv(&a), &pv(&b), &sa, &sb).map_err(|e| e.to_string())?;
        let want = cs(&a, &b, &sa, &sb);
        worst = worst.max((got - want).abs());
        let same = cs_loss(&pv(&a), &pv(&a), &sa, &sb).unwrap();
        let swapped = cs_loss(&pv(&b), &pv(&a), &sb, &sa).unwrap();
        if got < 0.0 || same != 0.0 || swapped != got {
            return Err("non-negativity, zero on equal positions or symmetry violated".into());
        }
    }
    let hand = cs_loss(&pv(&[0, 1]), &pv(&[1, 0]), &[0.7, 0.3], &[0.4, 0.6]).unwrap();
    check(
        worst <= 1e-12 && (hand - 0.18).abs() <= 1e-15,
        format!("1000 random instances agree to {worst:.1e}; hand example = {hand}"),
        format!("max deviation {worst:.1e}, hand example {hand}"),
    )
}

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= 1e-12,
        (None, None) => true,
        _ => false,
    }
}

fn metric_oracle() -> Outcome {
    let mut r = rng(5150);
    for case in 0..100 {
        let n = r.random_range(1..=8);
        let s: Vec<f64> = (0..n).map(|_| r.random_range(0..4) as f64).collect();
        let mut pos: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            pos.swap(i, r.random_range(0..=i));
        }
        let y: Vec<f64> = (0..n).map(|_| r.random_range(0..2) as f64).collect();
        let p = pv(&pos);
        let mut fine =
            close(list_auc(&s, &y).unwrap(), auc(&s, &y)) && close(list_ndcg(&p, &y).unwrap(), ndcg(&pos, &y));
        for k in CUTOFFS {
            fine &= close(list_map_at_k(&p, &y, k).unwrap(), ap_at(&pos, &y, k));
            fine &= (list_precision_at_k(&p, &y, k).unwrap() - precision_at(&pos, &y, k)).abs() <= 1e-12;
        }
        if !fine {
            return Err(format!("list {case} disagrees with the enumeration oracle"));
        }
    }
    let a = list_auc(&[0.5, 0.5], &[1.0, 0.0]).unwrap().unwrap();
    let g = list_ndcg(&pv(&[1, 0]), &[1.0, 0.0]).unwrap().unwrap();
    let m = list_map_at_k(&pv(&[0, 1, 2, 3, 4]), &[1.0, 0.0, 1.0, 0.0, 0.0], 5)
        .unwrap()
        .unwrap();
    check(
        a == 0.5 && (g - 0.63093).abs() < 5e-6 && (m - 0.8333).abs() < 5e-5,
        format!("100 random lists match at 1e-12; AUC {a}, NDCG {g:.5}, AP@5 {m:.4}"),
        format!("hand cases: AUC {a}, NDCG {g}, AP@5 {m}"),
    )
}

struct Directionality {
    p1: (f64, f64),
    p2: (f64, f64),
    ndcg: (f64, f64),
    elapsed: Duration,
}

/// 2000 training and 500 test lists of 10 items, five seeds.
fn ablation_protocol() -> Result<Directionality, String> {
    let started = Instant::now();
    let synth = SynthConfig {
        n_lists: 2500,
        n: 10,
        context_weight: 0.5,
        seed: 1,
        ..SynthConfig::default()
    };
    let (all, _) = generate(&synth).map_err(|e| e.to_string())?;
    let (train_data, _, test) = split(&all, (0.8, 0.0, 0.2), 3).map_err(|e| e.to_string())?;
    let mut model = RerankerConfig::new(synth.d_item, synth.d_user, synth.n);
    model.d_model = 16;
    model.mlp_hidden = vec![16];
    let cfg = AblationConfig {
        train: TrainConfig {
            epochs: 5,
            batch_size: 16,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        },
        model,
        seeds: (0..5).collect(),
        variants: Variant::ALL.to_vec(),
        p2_trials: SwapTrials::Sampled(1),
        eval_seed: 7,
    };
    let r = run_ablation(&cfg, &train_data, &test).map_err(|e| e.to_string())?;
    let m = |v, c| r.mean(v, c).unwrap_or(f64::NAN);
    Ok(Directionality {
        p1: (m(Variant::Baseline, "p1_obedience"), m(Variant::P1, "p1_obedience")),
        p2: (m(Variant::Baseline, "p2_obedience"), m(Variant::P2, "p2_obedience")),
        ndcg: (m(Variant::Baseline, "ndcg"), m(Variant::Both, "ndcg")),
        elapsed: started.elapsed(),
    })
}

fn directionality(d: &Result<Directionality, String>) -> Outcome {
    let d = d.as_ref().map_err(Clone::clone)?;
    let (m1, m2) = (d.p1.1 - d.p1.0, d.p2.1 - d.p2.0);
    let detail = format!(
        "P1 obedience {:.4} -> {:.4} (+{m1:.4}), P2 obedience {:.4} -> {:.4} (+{m2:.4}), {:.0}s",
        d.p1.0,
        d.p1.1,
        d.p2.0,
        d.p2.1,
        d.elapsed.as_secs_f64()
    );
    check(
        m1 > 0.0 && m2 > 0.0 && d.elapsed < Duration::from_secs(600),
        detail.clone(),
        detail,
    )
}

fn non_degradation(d: &Result<Directionality, String>) -> Outcome {
    let d = d.as_ref().map_err(Clone::clone)?;
    let (base, both) = d.ndcg;
    let detail = format!(
        "mean NDCG baseline {base:.5}, both principles {both:.5} (floor {:.5})",
        base * 0.995
    );
    check(both >= base * 0.995, detail.clone(), detail)
}

fn zero_weights_bit_identity() -> Outcome {
    let (data, _) = generate(&SynthConfig {
        n_lists: 64,
        n: 8,
        seed: 21,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let mut model = RerankerConfig::new(data.d_item, data.d_user, 8);
    model.d_model = 16;
    model.mlp_hidden = vec![16];
    let zero = TrainConfig {
        epochs: 3,
        learning_rate: 1e-3,
        principle_weights: PrincipleWeights::NONE,
        ..TrainConfig::default()
    };
    let plain = TrainConfig {
        objective: Objective::LogLoss,
        ..zero.clone()
    };
    let (a, la) = train(&zero, &model, &data, None).map_err(|e| e.to_string())?;
    let (b, lb) = train(&plain, &model, &data, None).map_err(|e| e.to_string())?;
    let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
    let same = bits(a.weights.flatten()) == bits(b.weights.flatten()) && bits(la.losses()) == bits(lb.losses());
    check(
        same,
        "3 epochs on 64 lists: parameters and per-epoch losses bit-identical".into(),
        "trajectories differ".into(),
    )
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_rerank"))
        .current_dir(dir)
        .env_remove("RERANK_OUT_DIR")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if !p.to_string_lossy().ends_with(".timing.json") {
                files.push((
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    std::fs::read(&p).unwrap(),
                ));
            }
        }
    }
    files.sort();
    files
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = dir.path();
    let small = ["--epochs", "2", "--d-model", "8", "--mlp-hidden", "8"];
    let script: Vec<Vec<&str>> = vec![
        vec![
            "generate",
            "--lists",
            "60",
            "--n",
            "6",
            "--seed",
            "4",
            "-o",
            "train.jsonl",
        ],
        vec![
            "generate",
            "--lists",
            "20",
            "--n",
            "6",
            "--seed",
            "5",
            "-o",
            "test.jsonl",
        ],
        [
            &["train", "--train", "train.jsonl", "--valid", "test.jsonl", "-o", "run"][..],
            &small,
        ]
        .concat(),
        vec![
            "evaluate",
            "--model",
            "run/model.json",
            "--data",
            "test.jsonl",
            "-o",
            "eval",
        ],
        [
            &[
                "ablate",
                "--train",
                "train.jsonl",
                "--test",
                "test.jsonl",
                "--seeds",
                "2",
                "-o",
                "abl",
            ][..],
            &small,
        ]
        .concat(),
        vec!["gradcheck", "-o", "gc"],
    ];
    let mut snaps = Vec::new();
    for _ in 0..2 {
        for args in &script {
            run_cli(p, args)?;
        }
        snaps.push(snapshot(p));
    }
    let differing: Vec<&String> = snaps[0]
        .iter()
        .zip(&snaps[1])
        .filter(|(a, b)| a != b)
        .map(|(a, _)| &a.0)
        .collect();
    check(
        differing.is_empty() && snaps[0].len() == snaps[1].len(),
        format!(
            "all five commands rerun: {} output files byte-identical",
            snaps[0].len()
        ),
        format!("files differ: {differing:?}"),
    )
}

fn position_blind() -> Outcome {
    let (data, _) = generate(&SynthConfig {
        n_lists: 200,
        n: 8,
        seed: 8,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let mut model = RerankerConfig::new(data.d_item, data.d_user, 8);
    model.d_model = 16;
    let mut p = rerank_core::init_params(&model).map_err(|e| e.to_string())?;
    // trained-looking weights everywhere except the position table
    let mut r = rng(9);
    p.weights
        .for_each_mut(|m| m.data.iter_mut().for_each(|v| *v += r.random_range(-0.3..0.3)));
    p.weights.pos_table.data.iter_mut().for_each(|v| *v = 0.0);
    let o = obedience(&p, &data, SwapTrials::Strict, 0).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (i, s) in data.samples.iter().enumerate() {
        let b = principled_loss(&p, &s.prepare().unwrap(), i % 7).map_err(|e| e.to_string())?;
        worst = worst.max((b.total - 3.0 * b.ce_base).abs());
    }
    check(
        o.p1_rate == 1.0 && o.p2_rate == 1.0 && worst <= 1e-12,
        format!(
            "obedience {}/{} (all swaps), |total - 3 base| <= {worst:.1e} over 200 lists",
            o.p1_rate, o.p2_rate
        ),
        format!("obedience {}/{}, deviation {worst:.1e}", o.p1_rate, o.p2_rate),
    )
}

fn main() {
    let protocol = ablation_protocol();
    let results: Vec<(&str, Outcome)> = vec![
        ("gradient check", gradient_check()),
        ("contrastive similarity law", cs_law()),
        ("metric oracle", metric_oracle()),
        ("obedience directionality", directionality(&protocol)),
        ("non-degradation", non_degradation(&protocol)),
        ("zero weights = log-loss training", zero_weights_bit_identity()),
        ("determinism", determinism()),
        ("position-blind model", position_blind()),
    ];
    let mut failed = 0;
    for (i, (name, r)) in results.iter().enumerate() {
        match r {
            Ok(d) => println!("PASS criterion {}: {name} - {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {}: {name} - {d}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
