//! preflab: experiment runner for the preference-optimization laboratory.
//!
//! Subcommands: gen-data, train, eval, diagnose, compare, plot.
//! Configuration comes from an optional `--config` file (flat key = value)
//! with command-line flags layered on top; every artifact directory gets a
//! copy of the resolved configuration. The env var PREFLAB_OUT overrides
//! the output root.

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use preflab_cli::commands::{
    cmd_compare, cmd_diagnose, cmd_eval, cmd_gen_data, cmd_plot, cmd_train,
};
use preflab_core::config::RunConfig;
use preflab_core::eval::SeConvention;

#[derive(Parser)]
#[command(name = "preflab", version, about = "Preference-optimization laboratory runner")]
struct Cli {
    /// Output root; relative paths resolve against it.
    /// The PREFLAB_OUT environment variable takes precedence.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

/// Flags mirroring the RunConfig keys; unset flags keep the config-file
/// (or default) values.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,

    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    context_len: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    modulus: Option<usize>,
    /// Completion overlap knob ρ in [0, 1).
    #[arg(long)]
    overlap: Option<f64>,
    #[arg(long)]
    k_samples: Option<usize>,
    /// Dataset sampling temperature.
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    train_instances: Option<usize>,
    #[arg(long)]
    eval_instances: Option<usize>,
    #[arg(long)]
    eval_seed: Option<u64>,
    /// Max pairs per instance, or `none`.
    #[arg(long)]
    pair_cap: Option<String>,
    #[arg(long)]
    val_fraction: Option<f64>,
    /// sft | dpo | dpop | kto | rpo | simper | fpa-dpo | fpa-rpo | fpa-simper
    #[arg(long)]
    objective: Option<String>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lambda_dpop: Option<f64>,
    #[arg(long)]
    kto_beta: Option<f64>,
    #[arg(long)]
    kto_lambda_w: Option<f64>,
    #[arg(long)]
    kto_lambda_l: Option<f64>,
    /// batch | running-mean
    #[arg(long)]
    kto_z0: Option<String>,
    /// FPA extrapolation strength λ.
    #[arg(long)]
    lambda: Option<f64>,
    /// both | preferred-only | dispreferred-only
    #[arg(long)]
    fpa_target: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    warmup_steps: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// constant | cosine | mimic-decay
    #[arg(long)]
    scheduler: Option<String>,
    /// Final lr fraction for mimic-decay, or `auto`.
    #[arg(long)]
    mimic_final_fraction: Option<String>,
    #[arg(long)]
    max_grad_norm: Option<f64>,
    #[arg(long)]
    adam_beta1: Option<f64>,
    #[arg(long)]
    adam_beta2: Option<f64>,
    #[arg(long)]
    adam_eps: Option<f64>,
    #[arg(long)]
    eval_every: Option<usize>,
    /// Early-stopping patience in evaluations, or `none`.
    #[arg(long)]
    patience: Option<String>,
    #[arg(long)]
    eval_n: Option<usize>,
    #[arg(long)]
    eval_temperature: Option<f64>,
    #[arg(long)]
    angle_probe_every: Option<usize>,
    #[arg(long)]
    near_zero_threshold: Option<f64>,
    /// population | sample
    #[arg(long)]
    se_convention: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self, root: &Path) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(&resolve_path(root, path))
                .with_context(|| format!("loading config {}", path.display()))?,
            None => RunConfig::default(),
        };
        let seed_overridden = self.seed.is_some();
        let eval_seed_overridden = self.eval_seed.is_some();
        macro_rules! set {
            ($field:ident) => {
                if let Some(v) = self.$field {
                    cfg.$field = v;
                }
            };
        }
        set!(seed);
        set!(vocab_size);
        set!(context_len);
        set!(hidden_dim);
        set!(modulus);
        set!(overlap);
        set!(k_samples);
        set!(train_instances);
        set!(eval_instances);
        set!(eval_seed);
        set!(val_fraction);
        set!(beta);
        set!(alpha);
        set!(lambda_dpop);
        set!(kto_beta);
        set!(kto_lambda_w);
        set!(kto_lambda_l);
        set!(lr);
        set!(weight_decay);
        set!(warmup_steps);
        set!(max_steps);
        set!(batch_size);
        set!(max_grad_norm);
        set!(adam_beta1);
        set!(adam_beta2);
        set!(adam_eps);
        set!(eval_every);
        set!(eval_n);
        set!(eval_temperature);
        set!(angle_probe_every);
        set!(near_zero_threshold);
        if let Some(v) = self.temperature {
            cfg.sample_temperature = v;
        }
        if let Some(v) = self.lambda {
            cfg.fpa_lambda = v;
        }
        if let Some(v) = &self.objective {
            cfg.objective = v.parse()?;
        }
        if let Some(v) = &self.fpa_target {
            cfg.fpa_target = v.parse()?;
        }
        if let Some(v) = &self.kto_z0 {
            cfg.kto_z0 = v.parse()?;
        }
        if let Some(v) = &self.scheduler {
            cfg.scheduler = v.parse()?;
        }
        if let Some(v) = &self.se_convention {
            cfg.se_convention = v.parse()?;
        }
        if let Some(v) = &self.pair_cap {
            cfg.pair_cap = parse_opt_usize("pair_cap", v)?;
        }
        if let Some(v) = &self.patience {
            cfg.patience = parse_opt_usize("patience", v)?;
        }
        if let Some(v) = &self.mimic_final_fraction {
            cfg.mimic_final_fraction = if v == "auto" {
                None
            } else {
                Some(v.parse().context("mimic_final_fraction")?)
            };
        }
        // Keep the derived eval seed in step with a seed override, unless
        // the eval seed itself was pinned.
        if seed_overridden && !eval_seed_overridden && self.config.is_none() {
            cfg.eval_seed = cfg.seed + 1;
        }
        Ok(cfg)
    }
}

fn parse_opt_usize(key: &str, v: &str) -> anyhow::Result<Option<usize>> {
    if v == "none" {
        Ok(None)
    } else {
        Ok(Some(v.parse().with_context(|| format!("flag {key}"))?))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the preference dataset (with cached reference logits).
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory for dataset artifacts.
        #[arg(long, default_value = "data")]
        dir: PathBuf,
    },
    /// Train a policy on a generated dataset.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dataset directory from gen-data.
        #[arg(long, default_value = "data")]
        data: PathBuf,
        /// Output directory for checkpoints and metrics.
        #[arg(long, default_value = "run")]
        dir: PathBuf,
    },
    /// Evaluate a checkpoint: pass@1 with standard error.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Checkpoint file (e.g. run/checkpoint_best.tlm).
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "eval")]
        dir: PathBuf,
    },
    /// Gradient angle/norm probe of a checkpoint over a dataset.
    Diagnose {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long, default_value = "diagnose")]
        dir: PathBuf,
        /// Probe at most this many batches.
        #[arg(long)]
        max_batches: Option<usize>,
    },
    /// Question-level comparison of two evaluated runs.
    Compare {
        /// Directory holding the first run's eval.jsonl.
        #[arg(long)]
        run_a: PathBuf,
        /// Directory holding the second run's eval.jsonl.
        #[arg(long)]
        run_b: PathBuf,
        #[arg(long, default_value = "compare")]
        dir: PathBuf,
        /// population | sample
        #[arg(long, default_value = "population")]
        se_convention: String,
    },
    /// Render SVG figures from a metrics CSV.
    Plot {
        /// Metrics CSV written by train.
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value = "plots")]
        dir: PathBuf,
    },
}

fn resolve_path(root: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let root = std::env::var_os("PREFLAB_OUT")
        .map(PathBuf::from)
        .or(cli.out.clone())
        .unwrap_or_else(|| PathBuf::from("."));

    match &cli.command {
        Command::GenData { cfg, dir } => {
            let cfg = cfg.resolve(&root)?;
            let out = cmd_gen_data(&cfg, &resolve_path(&root, dir))?;
            println!(
                "gen-data: {} pairs from {} instances ({} kept, {} discarded) -> {}",
                out.stats.pairs,
                out.stats.instances,
                out.stats.kept_instances,
                out.stats.discarded_instances,
                out.dataset.display()
            );
        }
        Command::Train { cfg, data, dir } => {
            let cfg = cfg.resolve(&root)?;
            let out = cmd_train(&cfg, &resolve_path(&root, data), &resolve_path(&root, dir))?;
            println!(
                "train: {} steps{} (objective {}), best validation pass@1 {} -> {}",
                out.steps,
                if out.stopped_early { " (early stop)" } else { "" },
                cfg.objective,
                out.best_val_pass1
                    .map(|v| format!("{v:.4}"))
                    .unwrap_or_else(|| "n/a".into()),
                out.metrics_csv.display()
            );
        }
        Command::Eval { cfg, checkpoint, dir } => {
            let cfg = cfg.resolve(&root)?;
            let out = cmd_eval(
                &cfg,
                &resolve_path(&root, checkpoint),
                &resolve_path(&root, dir),
            )?;
            println!(
                "eval: pass@1 {:.4} ± {:.4} over {} questions -> {}",
                out.result.pass1,
                out.result.se,
                out.result.per_question.len(),
                out.jsonl.display()
            );
        }
        Command::Diagnose {
            cfg,
            checkpoint,
            data,
            dir,
            max_batches,
        } => {
            let cfg = cfg.resolve(&root)?;
            let path = cmd_diagnose(
                &cfg,
                &resolve_path(&root, checkpoint),
                &resolve_path(&root, data),
                &resolve_path(&root, dir),
                *max_batches,
            )?;
            println!("diagnose: wrote {}", path.display());
        }
        Command::Compare {
            run_a,
            run_b,
            dir,
            se_convention,
        } => {
            let convention: SeConvention = se_convention.parse()?;
            let out = cmd_compare(
                &resolve_path(&root, run_a),
                &resolve_path(&root, run_b),
                &resolve_path(&root, dir),
                convention,
            )?;
            println!(
                "compare: A {:.4} ± {:.4} vs B {:.4} ± {:.4}; gain {:.4}, loss {:.4}, net {:.4} -> {}",
                out.pass1_a,
                out.se_a,
                out.pass1_b,
                out.se_b,
                out.report.total_gain,
                out.report.total_loss,
                out.report.net_gain,
                out.csv.display()
            );
        }
        Command::Plot { csv, dir } => {
            let written = cmd_plot(&resolve_path(&root, csv), &resolve_path(&root, dir))?;
            println!("plot: wrote {} figures", written.len());
            for p in written {
                println!("  {}", p.display());
            }
        }
    }
    Ok(())
}
