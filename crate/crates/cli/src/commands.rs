use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rerank_core::ablation::{run_ablation, AblationConfig, AblationResult, Variant};
use rerank_core::checkpoint;
use rerank_core::data::{self, generate, SynthConfig};
use rerank_core::metrics::{evaluate, AucMode, MetricsReport, CUTOFFS};
use rerank_core::obedience::{obedience, ObedienceReport};
use rerank_core::training::{
    gradcheck_params, gradient_check, grid_search, train, GradCheckOptions, TrainConfig, TrainLog,
};
use rerank_core::{Dataset, RerankerConfig, RerankerParams, SplitTag};
use serde::Serialize;
use serde_json::json;

use crate::args::{
    AblateArgs, AucArg, Cli, Command, EvalArgs, EvaluateArgs, GenerateArgs, GradcheckArgs, ModelArgs, OptimArgs,
    TrainArgs,
};
use crate::output::{default_out_dir, pretty_json, sha256_hex, Run};
use crate::settings::{EvalSettings, ModelSettings, Settings};
use crate::UsageError;

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

/// A JSON result tagged with the manifest that describes its run.
#[derive(Serialize)]
struct Tagged<'a, T: Serialize> {
    manifest: String,
    #[serde(flatten)]
    report: &'a T,
}

fn tagged<T: Serialize>(run: &Run, report: &T) -> Result<String> {
    pretty_json(&Tagged {
        manifest: run.manifest_path().display().to_string(),
        report,
    })
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.unwrap_or_else(default_out_dir)
}

fn load_data(path: &Path, tag: SplitTag) -> Result<Dataset> {
    data::load_as(path, tag).with_context(|| format!("loading dataset {}", path.display()))
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let mut cfg: SynthConfig = Settings::load(a.config.as_deref())?.synth;
    macro_rules! set {
        ($($f:ident <- $v:expr),*) => { $(if let Some(v) = $v { cfg.$f = v; })* };
    }
    set!(n_lists <- a.lists, n <- a.n, d_item <- a.d_item, d_user <- a.d_user,
         context_weight <- a.context_weight, ranker_noise <- a.ranker_noise,
         click_scale <- a.click_scale, seed <- a.seed);

    let (dataset, truth) = generate(&cfg)?;
    let mut text = String::new();
    for s in &dataset.samples {
        text.push_str(&data::to_json_line(s)?);
        text.push('\n');
    }

    let manifest = sibling(&a.output, ".manifest.json");
    let mut run = Run::new("generate", manifest, json!({ "synth": cfg }));
    run.output(a.output.clone(), text);
    if let Some(t) = &a.truth {
        run.output(t.clone(), pretty_json(&truth)?);
    }
    run.commit()?;
    println!(
        "wrote {} lists of {} items to {} (click rate {:.4}, seed {})",
        dataset.len(),
        cfg.n,
        a.output.display(),
        dataset.click_rate(),
        cfg.seed
    );
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn apply_model(mut m: ModelSettings, a: &ModelArgs) -> ModelSettings {
    if let Some(v) = a.d_model {
        m.d_model = v;
    }
    if let Some(v) = a.heads {
        m.n_heads = v;
    }
    if let Some(v) = a.blocks {
        m.n_blocks = v;
    }
    if let Some(v) = &a.mlp_hidden {
        m.mlp_hidden = v.clone();
    }
    if let Some(v) = a.head_mode {
        m.head_mode = v.into();
    }
    if let Some(v) = a.position_mode {
        m.position_mode = v.into();
    }
    if a.n_max.is_some() {
        m.n_max = a.n_max;
    }
    m
}

fn apply_optim(mut t: TrainConfig, a: &OptimArgs) -> TrainConfig {
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.lr {
        t.learning_rate = v;
    }
    t
}

fn apply_eval(mut e: EvalSettings, a: &EvalArgs) -> EvalSettings {
    if let Some(m) = a.auc_mode {
        e.auc_mode = match m {
            AucArg::PerList => AucMode::PerList,
            AucArg::Pooled => AucMode::Pooled,
        };
    }
    if let Some(t) = a.p2_trials {
        e.p2_trials = t;
    }
    if let Some(s) = a.eval_seed {
        e.eval_seed = s;
    }
    e
}

fn model_config(m: &ModelSettings, data: &[&Dataset], seed: u64) -> RerankerConfig {
    let first = data[0];
    let longest = data.iter().map(|d| d.max_list_len()).max().unwrap_or(1).max(1);
    m.resolve(first.d_item, first.d_user, longest, seed)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let settings = Settings::load(a.config.as_deref())?;
    let mut tc = apply_optim(settings.train.clone(), &a.optim);
    if let Some(s) = a.seed {
        tc.seed = s;
    }
    if let Some(on) = a.p1_flag() {
        tc.principle_weights.p1 = if on { tc.principle_weights.p1.max(1.0) } else { 0.0 };
    }
    if let Some(on) = a.p2_flag() {
        tc.principle_weights.p2 = if on { tc.principle_weights.p2.max(1.0) } else { 0.0 };
    }
    if let Some(g) = &a.lr_grid {
        tc.lr_grid = g.clone();
    }
    if a.keep_best_valid {
        tc.keep_best_valid = true;
    }
    tc.validate()?;
    let model_settings = apply_model(settings.model.clone(), &a.model);
    if a.grid && a.valid.is_none() {
        return Err(UsageError("--grid needs --valid".into()).into());
    }

    let train_data = load_data(&a.train, SplitTag::Train)?;
    let valid = a.valid.as_deref().map(|p| load_data(p, SplitTag::Valid)).transpose()?;
    let mut shapes = vec![&train_data];
    shapes.extend(valid.as_ref());
    let mc = model_config(&model_settings, &shapes, tc.seed);
    mc.validate()?;

    let dir = out_dir(a.output);
    let ckpt_path = dir.join("model.json");
    let mut run = Run::new(
        "train",
        dir.join("train_manifest.json"),
        json!({"train": tc, "model": mc, "grid": a.grid, "checkpoint": ckpt_path.display().to_string()}),
    );
    run.input("train", &a.train)?;
    if let Some(v) = &a.valid {
        run.input("valid", v)?;
    }

    let (params, log, selected_lr, grid_csv) = if a.grid {
        let g = grid_search(&tc, &mc, &train_data, valid.as_ref().expect("checked above"))?;
        let csv = g.to_csv();
        (g.best_params, g.best_log, g.best_config.learning_rate, Some(csv))
    } else {
        let (p, l) = train(&tc, &mc, &train_data, valid.as_ref())?;
        (p, l, tc.learning_rate, None)
    };

    let ckpt = checkpoint::to_string(&params)?;
    let summary = json!({
        "selected_learning_rate": selected_lr,
        "selected_epoch": log.selected_epoch,
        "final_loss": log.records.last().map(|r| r.loss),
        "checkpoint": ckpt_path.display().to_string(),
        "checkpoint_sha256": sha256_hex(ckpt.as_bytes()),
        "seed": tc.seed,
        "principle_weights": tc.principle_weights,
    });
    run.output(ckpt_path.clone(), ckpt);
    run.output(dir.join("train_log.csv"), log.to_csv());
    if let Some(csv) = grid_csv {
        run.output(dir.join("grid.csv"), csv);
    }
    run.output(dir.join("train_summary.json"), tagged(&run, &summary)?);
    run.timing("epoch_seconds", json!(log.timings()));
    run.commit()?;

    print_train_summary(&log, selected_lr, &ckpt_path);
    Ok(())
}

fn print_train_summary(log: &TrainLog, lr: f64, ckpt: &Path) {
    let w = log.principle_weights;
    println!(
        "epochs {} | lr {lr} | weights p1={} p2={}",
        log.records.len(),
        w.p1,
        w.p2
    );
    if let Some(r) = log.records.last() {
        println!(
            "final loss {:.6} (ce_base {:.6}, cs_p1 {:.6}, cs_p2 {:.6})",
            r.loss, r.ce_base, r.cs_p1, r.cs_p2
        );
    }
    println!("checkpoint {}", ckpt.display());
}

fn load_checkpoint(path: &Path) -> Result<RerankerParams> {
    checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or("-".to_string(), |x| format!("{x:.4}"))
}

/// AUC, NDCG, MAP@k, Precision@k and the obedience rates as one table.
fn metrics_table(rows: &[(String, &MetricsReport, Option<&ObedienceReport>)]) -> String {
    let mut header = vec!["".to_string(), "AUC".into(), "NDCG".into()];
    header.extend(CUTOFFS.iter().map(|k| format!("MAP@{k}")));
    header.extend(CUTOFFS.iter().map(|k| format!("P@{k}")));
    header.extend(["P1-obey".to_string(), "P2-obey".to_string()]);
    let mut lines = vec![header];
    for (name, m, o) in rows {
        let mut line = vec![name.clone()];
        line.extend(m.values().into_iter().map(fmt_metric));
        line.push(fmt_metric(o.map(|o| o.p1_rate)));
        line.push(fmt_metric(o.map(|o| o.p2_rate)));
        lines.push(line);
    }
    let widths: Vec<usize> = (0..lines[0].len())
        .map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for l in &lines {
        let cells: Vec<String> = l.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let settings = Settings::load(a.config.as_deref())?;
    let ev = apply_eval(settings.eval, &a.eval);
    let params = load_checkpoint(&a.model)?;
    let data = load_data(&a.data, SplitTag::Test)?;

    let dir = out_dir(a.output);
    let mut run = Run::new("evaluate", dir.join("eval_manifest.json"), json!({ "eval": ev }));
    run.input("model", &a.model)?;
    run.input("data", &a.data)?;

    let metrics = evaluate(&params, &data, ev.auc_mode)?;
    let obey = obedience(&params, &data, ev.p2_trials, ev.eval_seed)?;
    run.output(dir.join("metrics.json"), tagged(&run, &metrics)?);
    run.output(dir.join("metrics.csv"), metrics.to_csv());
    run.output(dir.join("obedience.json"), tagged(&run, &obey)?);
    run.output(dir.join("obedience.csv"), obey.to_csv());
    run.commit()?;

    print!("{}", metrics_table(&[("model".into(), &metrics, Some(&obey))]));
    println!(
        "{} lists ({} with both classes for AUC); results in {}",
        metrics.n_lists_evaluated.total,
        metrics.n_lists_evaluated.auc,
        dir.display()
    );
    Ok(())
}

fn print_ablation(r: &AblationResult) {
    let summary = r.summary();
    let reports: Vec<(Variant, MetricsReport, ObedienceReport)> = Variant::ALL
        .into_iter()
        .filter_map(|v| {
            let runs = r.runs_of(v);
            let first = runs.first()?;
            // mean report over seeds, built from the summary rows
            let mut m = first.metrics.clone();
            let mut o = first.obedience.clone();
            let mean = |name: &str| {
                summary
                    .iter()
                    .find(|s| s.variant == v && s.metric == name)
                    .map(|s| s.mean)
            };
            m.auc = mean("auc").filter(|x| x.is_finite());
            m.ndcg = mean("ndcg").filter(|x| x.is_finite());
            for k in CUTOFFS {
                m.map_at.insert(k, mean(&format!("map@{k}")).filter(|x| x.is_finite()));
                m.precision_at
                    .insert(k, mean(&format!("precision@{k}")).filter(|x| x.is_finite()));
            }
            o.p1_rate = mean("p1_obedience")?;
            o.p2_rate = mean("p2_obedience")?;
            Some((v, m, o))
        })
        .collect();
    let rows: Vec<_> = reports
        .iter()
        .map(|(v, m, o)| (v.name().to_string(), m, Some(o)))
        .collect();
    print!("{}", metrics_table(&rows));
    for s in summary
        .iter()
        .filter(|s| s.variant != Variant::Baseline && (s.metric == "auc" || s.metric == "ndcg"))
    {
        println!(
            "{:>8} {:<5} improvement {:>8} ratio to both {}",
            s.variant.name(),
            s.metric,
            s.improvement_pct.map_or("-".into(), |x| format!("{x:+.3}%")),
            s.ratio_to_both.map_or("-".into(), |x| format!("{x:.3}"))
        );
    }
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    if a.seeds == 0 {
        return Err(UsageError("--seeds must be at least 1".into()).into());
    }
    let settings = Settings::load(a.config.as_deref())?;
    let tc = apply_optim(settings.train.clone(), &a.optim);
    tc.validate()?;
    let ev = apply_eval(settings.eval.clone(), &a.eval);
    let model_settings = apply_model(settings.model.clone(), &a.model);
    let train_data = load_data(&a.train, SplitTag::Train)?;
    let test = load_data(&a.test, SplitTag::Test)?;
    let mc = model_config(&model_settings, &[&train_data, &test], a.base_seed);
    mc.validate()?;

    let cfg = AblationConfig {
        train: tc,
        model: mc,
        seeds: (0..a.seeds as u64).map(|i| a.base_seed + i).collect(),
        variants: Variant::ALL.to_vec(),
        p2_trials: ev.p2_trials,
        eval_seed: ev.eval_seed,
    };
    let dir = out_dir(a.output);
    let mut run = Run::new("ablate", dir.join("ablation_manifest.json"), json!({ "ablation": cfg }));
    run.input("train", &a.train)?;
    run.input("test", &a.test)?;

    let result = run_ablation(&cfg, &train_data, &test)?;
    run.output(dir.join("ablation.csv"), result.summary_csv());
    run.output(dir.join("ablation_raw.csv"), result.raw_csv());
    run.output(dir.join("obedience_table.csv"), result.obedience_csv());
    run.output(dir.join("ablation.json"), tagged(&run, &result)?);
    run.commit()?;

    print_ablation(&result);
    println!("results in {}", dir.display());
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<()> {
    if a.n < 2 {
        return Err(UsageError("--n must be at least 2".into()).into());
    }
    if a.swap_k + 1 >= a.n {
        return Err(UsageError(format!("--swap-k must be below {}", a.n - 1)).into());
    }
    let mut mc = RerankerConfig::new(a.d_item, a.d_user, a.n);
    mc.d_model = a.d_model;
    mc.n_heads = a.heads;
    mc.n_blocks = a.blocks;
    mc.mlp_hidden = vec![a.d_model];
    mc.seed = a.seed;
    let params = gradcheck_params(&mc, 0.5)?;
    let synth = SynthConfig {
        n_lists: 1,
        n: a.n,
        d_item: a.d_item,
        d_user: a.d_user,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let (probe, _) = generate(&synth)?;
    let list = probe.samples[0].prepare()?;
    let opts = GradCheckOptions {
        h: a.h,
        threshold: a.threshold,
        corrupt: a.corrupt,
        ..GradCheckOptions::default()
    };
    let report = gradient_check(&params, &list, a.swap_k, &opts)?;

    let dir = out_dir(a.output);
    let mut run = Run::new(
        "gradcheck",
        dir.join("gradcheck_manifest.json"),
        json!({"model": mc, "options": opts, "swap_k": a.swap_k}),
    );
    run.output(dir.join("gradcheck.json"), tagged(&run, &report)?);
    run.commit()?;

    println!(
        "max relative error {:.3e} at {}[{}] over {} coordinates (h {}, threshold {})",
        report.max_rel_error,
        report.worst_parameter,
        report.worst_index,
        report.coordinates,
        report.h,
        report.threshold
    );
    if !report.passed {
        bail!(
            "gradient check failed: {:.3e} exceeds {}",
            report.max_rel_error,
            report.threshold
        );
    }
    println!("gradient check passed");
    Ok(())
}
