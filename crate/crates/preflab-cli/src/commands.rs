//! Subcommand implementations. Each writes a self-describing artifact
//! directory: config + manifest + outputs suffice to rerun it.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};

use preflab_core::config::RunConfig;
use preflab_core::data::{
    build_preference_pairs, cache_reference_logits, generate_instances, read_pairs_jsonl,
    split_validation, write_pairs_jsonl, PipelineStats,
};
use preflab_core::diagnostics::gradient_angle_and_norms;
use preflab_core::eval::{
    evaluate, gain_loss, pass1_and_se, read_eval_jsonl, write_eval_jsonl, EvalResult,
    GainLossReport, QuestionResult, SeConvention,
};
use preflab_core::metrics::{read_metrics_csv, write_metrics_csv};
use preflab_core::train::train;
use preflab_core::{FrozenReference, TinyLm};

use crate::plot::{line_chart_svg, Series, PALETTE};

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const CONFIG_FILE: &str = "config.txt";
pub const REFERENCE_FILE: &str = "reference.tlm";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FINAL: &str = "checkpoint_final.tlm";
pub const CHECKPOINT_BEST: &str = "checkpoint_best.tlm";
pub const EVAL_FILE: &str = "eval.jsonl";
pub const EVAL_SUMMARY_FILE: &str = "eval_summary.csv";
pub const DIAGNOSE_FILE: &str = "diagnose.csv";
pub const COMPARE_FILE: &str = "compare.csv";
pub const COMPARE_SUMMARY_FILE: &str = "compare_summary.csv";

/// FNV-1a over the canonical config text; stamped into manifests so runs
/// can verify they consume the dataset they think they do.
pub fn config_hash(cfg: &RunConfig) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in cfg.to_file_string().bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

fn write_kv(path: &Path, title: &str, entries: &[(&str, String)]) -> anyhow::Result<()> {
    let mut out = format!("# {title}\n");
    for (k, v) in entries {
        out.push_str(&format!("{k} = {v}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn read_kv(path: &Path) -> anyhow::Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .with_context(|| format!("malformed line in {}: {line}", path.display()))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn kv_get<'a>(kv: &'a [(String, String)], key: &str, path: &Path) -> anyhow::Result<&'a str> {
    kv.iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .with_context(|| format!("{} lacks key `{key}`", path.display()))
}

pub struct GenDataOutput {
    pub dataset: PathBuf,
    pub stats: PipelineStats,
}

/// `gen-data`: build the preference dataset, cache reference logits, and
/// write dataset + manifest + config + reference checkpoint.
pub fn cmd_gen_data(cfg: &RunConfig, out_dir: &Path) -> anyhow::Result<GenDataOutput> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let layout = cfg.layout();
    let reference: FrozenReference = TinyLm::init(cfg.lm_config(), cfg.seed).freeze();
    let instances = generate_instances(
        cfg.train_instances,
        cfg.modulus,
        cfg.overlap,
        cfg.seed,
        layout,
    )?;
    let (mut pairs, stats) = build_preference_pairs(
        &reference,
        &instances,
        cfg.k_samples,
        cfg.sample_temperature,
        cfg.seed,
        cfg.pair_cap,
        layout,
    )?;
    cache_reference_logits(&reference, &mut pairs)?;

    let dataset = out_dir.join(DATASET_FILE);
    write_pairs_jsonl(&dataset, &pairs)?;
    reference.model().save(&out_dir.join(REFERENCE_FILE))?;
    cfg.save(&out_dir.join(CONFIG_FILE))?;
    write_kv(
        &out_dir.join(MANIFEST_FILE),
        "preflab dataset manifest",
        &[
            ("config_hash", config_hash(cfg)),
            ("vocab_size", cfg.vocab_size.to_string()),
            ("context_len", cfg.context_len.to_string()),
            ("hidden_dim", cfg.hidden_dim.to_string()),
            ("modulus", cfg.modulus.to_string()),
            ("instances", stats.instances.to_string()),
            ("kept_instances", stats.kept_instances.to_string()),
            ("discarded_instances", stats.discarded_instances.to_string()),
            ("pairs", stats.pairs.to_string()),
        ],
    )?;

    // Spot check: the manifest pair count must equal the JSONL line count.
    let written = std::fs::read_to_string(&dataset)?;
    let lines = written.lines().filter(|l| !l.is_empty()).count();
    if lines != stats.pairs {
        bail!("dataset line count {lines} disagrees with pipeline count {}", stats.pairs);
    }
    Ok(GenDataOutput { dataset, stats })
}

pub struct TrainOutput {
    pub metrics_csv: PathBuf,
    pub checkpoint_final: PathBuf,
    pub checkpoint_best: PathBuf,
    pub steps: usize,
    pub best_val_pass1: Option<f64>,
    pub stopped_early: bool,
}

/// `train`: consume a dataset directory, verify it matches the config,
/// train, and write checkpoints + metrics CSV + config copy.
pub fn cmd_train(cfg: &RunConfig, data_dir: &Path, out_dir: &Path) -> anyhow::Result<TrainOutput> {
    cfg.validate()?;
    let manifest_path = data_dir.join(MANIFEST_FILE);
    let manifest = read_kv(&manifest_path)?;
    for (key, expected) in [
        ("vocab_size", cfg.vocab_size),
        ("context_len", cfg.context_len),
        ("hidden_dim", cfg.hidden_dim),
        ("modulus", cfg.modulus),
    ] {
        let got = kv_get(&manifest, key, &manifest_path)?;
        if got != expected.to_string() {
            bail!("dataset {key} = {got} does not match config {key} = {expected}");
        }
    }
    let pairs = read_pairs_jsonl(&data_dir.join(DATASET_FILE))?;
    if pairs.is_empty() {
        bail!("dataset is empty; regenerate with different sampling settings");
    }
    let split = split_validation(&pairs, cfg.val_fraction, cfg.seed)?;

    let model: TinyLm = TinyLm::init(cfg.lm_config(), cfg.seed);
    let reference = model.freeze();
    // The dataset ships the reference checkpoint; a drifted config would
    // silently change the reference, so verify parameters when present.
    let ref_path = data_dir.join(REFERENCE_FILE);
    if ref_path.exists() {
        let stored: TinyLm = TinyLm::load(&ref_path)?;
        if stored.flat_params() != reference.model().flat_params() {
            bail!("reference checkpoint in {} does not match the seeded init; config/dataset mismatch", data_dir.display());
        }
    }

    let outcome = train(
        model,
        &reference,
        &split,
        cfg.objective,
        &cfg.train_config(),
        &cfg.hyper_params(),
        cfg.fpa_lambda,
        cfg.fpa_target,
    )?;

    std::fs::create_dir_all(out_dir)?;
    let metrics_csv = out_dir.join(METRICS_FILE);
    write_metrics_csv(&metrics_csv, &outcome.metrics)?;
    let checkpoint_final = out_dir.join(CHECKPOINT_FINAL);
    outcome.final_model.save(&checkpoint_final)?;
    let checkpoint_best = out_dir.join(CHECKPOINT_BEST);
    outcome.best_model.save(&checkpoint_best)?;
    cfg.save(&out_dir.join(CONFIG_FILE))?;
    Ok(TrainOutput {
        metrics_csv,
        checkpoint_final,
        checkpoint_best,
        steps: outcome.metrics.len(),
        best_val_pass1: outcome.best_val_pass1,
        stopped_early: outcome.stopped_early,
    })
}

pub struct EvalOutput {
    pub jsonl: PathBuf,
    pub summary_csv: PathBuf,
    pub result: EvalResult,
}

/// `eval`: pass@1 of a checkpoint over the seeded evaluation instance set.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, out_dir: &Path) -> anyhow::Result<EvalOutput> {
    cfg.validate()?;
    let model: TinyLm = TinyLm::load(checkpoint)?;
    if model.cfg() != cfg.lm_config() {
        bail!(
            "checkpoint dims {:?} do not match config dims {:?}",
            model.cfg(),
            cfg.lm_config()
        );
    }
    let instances = generate_instances(
        cfg.eval_instances,
        cfg.modulus,
        cfg.overlap,
        cfg.eval_seed,
        cfg.layout(),
    )?;
    let result = evaluate(
        &model,
        &instances,
        cfg.eval_n,
        cfg.eval_temperature,
        cfg.eval_seed,
        cfg.se_convention,
    )?;
    std::fs::create_dir_all(out_dir)?;
    let jsonl = out_dir.join(EVAL_FILE);
    write_eval_jsonl(&jsonl, &result)?;
    let summary_csv = out_dir.join(EVAL_SUMMARY_FILE);
    std::fs::write(
        &summary_csv,
        format!(
            "questions,n,temperature,pass1,se,convention\n{},{},{},{},{},{}\n",
            result.per_question.len(),
            result.n,
            result.temperature,
            result.pass1,
            result.se,
            result.convention,
        ),
    )?;
    cfg.save(&out_dir.join(CONFIG_FILE))?;
    Ok(EvalOutput {
        jsonl,
        summary_csv,
        result,
    })
}

/// `diagnose`: gradient angle/norm probe of a checkpoint over a dataset,
/// batch by batch.
pub fn cmd_diagnose(
    cfg: &RunConfig,
    checkpoint: &Path,
    data_dir: &Path,
    out_dir: &Path,
    max_batches: Option<usize>,
) -> anyhow::Result<PathBuf> {
    cfg.validate()?;
    let model: TinyLm = TinyLm::load(checkpoint)?;
    let pairs = read_pairs_jsonl::<f64>(&data_dir.join(DATASET_FILE))?;
    if pairs.is_empty() {
        bail!("dataset is empty");
    }
    std::fs::create_dir_all(out_dir)?;
    let mut rows = String::from("batch,angle_deg,update_angle_deg,norm_w,norm_l\n");
    let limit = max_batches.unwrap_or(usize::MAX);
    for (batch_id, chunk) in pairs.chunks(cfg.batch_size).take(limit).enumerate() {
        let report = gradient_angle_and_norms(&model, chunk, 0, batch_id)?;
        let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        rows.push_str(&format!(
            "{},{},{},{},{}\n",
            batch_id,
            fmt_opt(report.angle_deg),
            fmt_opt(report.update_angle_deg()),
            report.norm_w,
            report.norm_l
        ));
    }
    let path = out_dir.join(DIAGNOSE_FILE);
    std::fs::write(&path, rows)?;
    Ok(path)
}

pub struct CompareOutput {
    pub csv: PathBuf,
    pub summary_csv: PathBuf,
    pub report: GainLossReport,
    pub pass1_a: f64,
    pub se_a: f64,
    pub pass1_b: f64,
    pub se_b: f64,
}

/// `compare`: question-level deltas between two evaluated runs over the
/// same instance set, with the Total Gain / Total Loss decomposition.
pub fn cmd_compare(
    eval_a: &Path,
    eval_b: &Path,
    out_dir: &Path,
    convention: SeConvention,
) -> anyhow::Result<CompareOutput> {
    let a = read_eval_jsonl(&eval_a.join(EVAL_FILE))?;
    let b = read_eval_jsonl(&eval_b.join(EVAL_FILE))?;
    check_aligned(&a, &b)?;
    let acc = |qs: &[QuestionResult]| -> Vec<f64> {
        qs.iter().map(|q| q.correct as f64 / q.n as f64).collect()
    };
    let accs_a = acc(&a);
    let accs_b = acc(&b);
    let report = gain_loss(&accs_a, &accs_b)?;
    let (pass1_a, se_a) = pass1_and_se(&a, convention);
    let (pass1_b, se_b) = pass1_and_se(&b, convention);

    std::fs::create_dir_all(out_dir)?;
    let mut rows = String::from("question,acc_a,acc_b,delta\n");
    for ((qa, &aa), &ab) in a.iter().zip(&accs_a).zip(&accs_b) {
        rows.push_str(&format!("{},{},{},{}\n", qa.question, aa, ab, ab - aa));
    }
    let csv = out_dir.join(COMPARE_FILE);
    std::fs::write(&csv, rows)?;
    let summary_csv = out_dir.join(COMPARE_SUMMARY_FILE);
    std::fs::write(
        &summary_csv,
        format!(
            "pass1_a,se_a,pass1_b,se_b,total_gain,total_loss,net_gain\n{},{},{},{},{},{},{}\n",
            pass1_a, se_a, pass1_b, se_b, report.total_gain, report.total_loss, report.net_gain
        ),
    )?;
    Ok(CompareOutput {
        csv,
        summary_csv,
        report,
        pass1_a,
        se_a,
        pass1_b,
        se_b,
    })
}

fn check_aligned(a: &[QuestionResult], b: &[QuestionResult]) -> anyhow::Result<()> {
    if a.len() != b.len() {
        bail!("evaluations cover {} vs {} questions", a.len(), b.len());
    }
    for (qa, qb) in a.iter().zip(b) {
        if qa.question != qb.question
            || qa.prompt != qb.prompt
            || qa.gold != qb.gold
            || qa.n != qb.n
        {
            bail!("instance sets differ at question {}", qa.question);
        }
    }
    Ok(())
}

/// `plot`: render the standard figure set from a metrics CSV. Returns the
/// files written; columns with no data are skipped.
pub fn cmd_plot(csv: &Path, out_dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let rows = read_metrics_csv(csv)?;
    if rows.is_empty() {
        bail!("metrics file {} has no rows", csv.display());
    }
    std::fs::create_dir_all(out_dir)?;
    let series = |label: &str, color: &'static str, f: &dyn Fn(&preflab_core::metrics::StepMetrics) -> Option<f64>| Series {
        label: label.to_string(),
        color,
        points: rows
            .iter()
            .filter_map(|r| f(r).map(|v| (r.step as f64, v)))
            .collect(),
    };
    let charts: Vec<(&str, &str, Vec<Series>)> = vec![
        ("loss.svg", "Training loss", vec![series("loss", PALETTE[0], &|r| Some(r.loss))]),
        ("lr.svg", "Learning rate", vec![series("lr", PALETTE[0], &|r| Some(r.lr))]),
        (
            "grad_norm.svg",
            "Pre-clip gradient norm",
            vec![series("grad_norm", PALETTE[0], &|r| Some(r.grad_norm))],
        ),
        (
            "drift.svg",
            "Mean log-prob drift from reference",
            vec![
                series("preferred", PALETTE[0], &|r| Some(r.drift_w)),
                series("dispreferred", PALETTE[1], &|r| Some(r.drift_l)),
            ],
        ),
        (
            "coefficients.svg",
            "Gradient coefficients",
            vec![
                series("C_w base", PALETTE[0], &|r| r.cw_base),
                series("C_l base", PALETTE[1], &|r| r.cl_base),
                series("C_w future", PALETTE[2], &|r| r.cw_fpa),
                series("C_l future", PALETTE[3], &|r| r.cl_fpa),
            ],
        ),
        (
            "ratios.svg",
            "Future/base coefficient ratios",
            vec![
                series("r_w mean-of-ratios", PALETTE[0], &|r| r.rw_mean),
                series("r_l mean-of-ratios", PALETTE[1], &|r| r.rl_mean),
                series("r_w ratio-of-means", PALETTE[2], &|r| r.rw_of_means),
                series("r_l ratio-of-means", PALETTE[3], &|r| r.rl_of_means),
            ],
        ),
        (
            "near_zero.svg",
            "Near-zero C_l count per step",
            vec![series("count", PALETTE[1], &|r| r.near_zero.map(|v| v as f64))],
        ),
        (
            "near_zero_cum.svg",
            "Cumulative near-zero C_l count",
            vec![series("cumulative", PALETTE[1], &|r| {
                r.near_zero_cum.map(|v| v as f64)
            })],
        ),
        (
            "angle.svg",
            "Preferred/dispreferred gradient angle",
            vec![series("angle (deg)", PALETTE[0], &|r| r.angle_deg)],
        ),
        (
            "probe_norms.svg",
            "Probe gradient norms",
            vec![
                series("preferred", PALETTE[0], &|r| r.grad_norm_w),
                series("dispreferred", PALETTE[1], &|r| r.grad_norm_l),
            ],
        ),
        (
            "val_pass1.svg",
            "Validation pass@1",
            vec![series("pass@1", PALETTE[2], &|r| r.val_pass1)],
        ),
    ];
    let mut written = Vec::new();
    for (file, title, series) in charts {
        if let Some(svg) = line_chart_svg(title, "step", &series) {
            let path = out_dir.join(file);
            std::fs::write(&path, svg)?;
            written.push(path);
        }
    }
    Ok(written)
}
