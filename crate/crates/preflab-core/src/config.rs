//! Run configuration: one flat `key = value` file per run, typed parsing,
//! unknown keys rejected, lossless round-trip.

use std::path::Path;

use crate::data::{TokenLayout, RESERVED_TOKENS};
use crate::error::{Error, Result};
use crate::eval::SeConvention;
use crate::fpa::FpaTarget;
use crate::model::LmConfig;
use crate::objectives::{HyperParams, KtoZ0Mode};
use crate::scalar::Real;
use crate::train::{Objective, Scheduler, TrainConfig};

impl std::str::FromStr for FpaTarget {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(Self::Both),
            "preferred-only" => Ok(Self::PreferredOnly),
            "dispreferred-only" => Ok(Self::DispreferredOnly),
            other => Err(Error::Config(format!(
                "unknown fpa_target `{other}` (both | preferred-only | dispreferred-only)"
            ))),
        }
    }
}

impl std::fmt::Display for FpaTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Both => "both",
            Self::PreferredOnly => "preferred-only",
            Self::DispreferredOnly => "dispreferred-only",
        })
    }
}

impl std::str::FromStr for KtoZ0Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch" => Ok(Self::Batch),
            "running-mean" => Ok(Self::RunningMean),
            other => Err(Error::Config(format!(
                "unknown kto_z0 `{other}` (batch | running-mean)"
            ))),
        }
    }
}

impl std::fmt::Display for KtoZ0Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Batch => "batch",
            Self::RunningMean => "running-mean",
        })
    }
}

impl std::str::FromStr for SeConvention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "population" => Ok(Self::Population),
            "sample" => Ok(Self::Sample),
            other => Err(Error::Config(format!(
                "unknown se_convention `{other}` (population | sample)"
            ))),
        }
    }
}

impl std::fmt::Display for SeConvention {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Population => "population",
            Self::Sample => "sample",
        })
    }
}

/// Everything one experiment run needs, as written to `config.txt`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    // model
    pub vocab_size: usize,
    pub context_len: usize,
    pub hidden_dim: usize,
    // data
    pub modulus: usize,
    pub overlap: f64,
    pub k_samples: usize,
    pub sample_temperature: f64,
    pub train_instances: usize,
    pub eval_instances: usize,
    pub eval_seed: u64,
    /// Max pairs per instance; None keeps every cross pair.
    pub pair_cap: Option<usize>,
    pub val_fraction: f64,
    // objective
    pub objective: Objective,
    pub beta: f64,
    pub alpha: f64,
    pub lambda_dpop: f64,
    pub kto_beta: f64,
    pub kto_lambda_w: f64,
    pub kto_lambda_l: f64,
    pub kto_z0: KtoZ0Mode,
    pub fpa_lambda: f64,
    pub fpa_target: FpaTarget,
    // optimization
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub max_steps: usize,
    pub batch_size: usize,
    pub scheduler: Scheduler,
    /// None resolves per objective (0.9 for the DPO family, 0.8 for the
    /// SimPER family).
    pub mimic_final_fraction: Option<f64>,
    pub max_grad_norm: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    // evaluation and probes
    pub eval_every: usize,
    /// None disables early stopping.
    pub patience: Option<usize>,
    pub eval_n: usize,
    pub eval_temperature: f64,
    pub angle_probe_every: usize,
    pub near_zero_threshold: f64,
    pub se_convention: SeConvention,
}

impl Default for RunConfig {
    fn default() -> Self {
        let seed = 42;
        Self {
            seed,
            vocab_size: 16,
            context_len: 32,
            hidden_dim: 32,
            modulus: 7,
            overlap: 0.5,
            k_samples: 8,
            sample_temperature: 0.7,
            train_instances: 200,
            eval_instances: 50,
            eval_seed: seed + 1,
            pair_cap: None,
            val_fraction: 0.05,
            objective: Objective::Simper,
            beta: 0.1,
            alpha: 1.0,
            lambda_dpop: 50.0,
            kto_beta: 0.1,
            kto_lambda_w: 1.0,
            kto_lambda_l: 1.0,
            kto_z0: KtoZ0Mode::Batch,
            fpa_lambda: 0.5,
            fpa_target: FpaTarget::Both,
            lr: 5e-5,
            weight_decay: 0.01,
            warmup_steps: 15,
            max_steps: 2_000,
            batch_size: 16,
            scheduler: Scheduler::ConstantAfterWarmup,
            mimic_final_fraction: None,
            max_grad_norm: 10.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            eval_every: 100,
            patience: Some(20),
            eval_n: 8,
            eval_temperature: 0.7,
            angle_probe_every: 0,
            near_zero_threshold: 1e-8,
            se_convention: SeConvention::Population,
        }
    }
}

macro_rules! config_keys {
    ($($key:ident : $write:expr, $read:expr;)*) => {
        const KEY_NAMES: &[&str] = &[$(stringify!($key)),*];

        impl RunConfig {
            /// Canonical textual form; parsing it back reproduces `self`.
            pub fn to_file_string(&self) -> String {
                let mut out = String::from("# preflab run configuration\n");
                $(
                    out.push_str(stringify!($key));
                    out.push_str(" = ");
                    out.push_str(&($write)(self));
                    out.push('\n');
                )*
                out
            }

            fn apply(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $(stringify!($key) => ($read)(self, value),)*
                    other => Err(Error::Config(format!("unknown key `{other}`"))),
                }
            }
        }
    };
}

fn parse_as<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("key `{key}`: {e}")))
}

fn parse_opt_usize(key: &str, value: &str) -> Result<Option<usize>> {
    if value == "none" {
        Ok(None)
    } else {
        parse_as::<usize>(key, value).map(Some)
    }
}

fn write_opt_usize(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "none".into())
}

fn parse_opt_f64(key: &str, value: &str) -> Result<Option<f64>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse_as::<f64>(key, value).map(Some)
    }
}

fn write_opt_f64(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "auto".into())
}

config_keys! {
    seed: |c: &RunConfig| c.seed.to_string(), |c: &mut RunConfig, v: &str| { c.seed = parse_as("seed", v)?; Ok(()) };
    vocab_size: |c: &RunConfig| c.vocab_size.to_string(), |c: &mut RunConfig, v: &str| { c.vocab_size = parse_as("vocab_size", v)?; Ok(()) };
    context_len: |c: &RunConfig| c.context_len.to_string(), |c: &mut RunConfig, v: &str| { c.context_len = parse_as("context_len", v)?; Ok(()) };
    hidden_dim: |c: &RunConfig| c.hidden_dim.to_string(), |c: &mut RunConfig, v: &str| { c.hidden_dim = parse_as("hidden_dim", v)?; Ok(()) };
    modulus: |c: &RunConfig| c.modulus.to_string(), |c: &mut RunConfig, v: &str| { c.modulus = parse_as("modulus", v)?; Ok(()) };
    overlap: |c: &RunConfig| c.overlap.to_string(), |c: &mut RunConfig, v: &str| { c.overlap = parse_as("overlap", v)?; Ok(()) };
    k_samples: |c: &RunConfig| c.k_samples.to_string(), |c: &mut RunConfig, v: &str| { c.k_samples = parse_as("k_samples", v)?; Ok(()) };
    sample_temperature: |c: &RunConfig| c.sample_temperature.to_string(), |c: &mut RunConfig, v: &str| { c.sample_temperature = parse_as("sample_temperature", v)?; Ok(()) };
    train_instances: |c: &RunConfig| c.train_instances.to_string(), |c: &mut RunConfig, v: &str| { c.train_instances = parse_as("train_instances", v)?; Ok(()) };
    eval_instances: |c: &RunConfig| c.eval_instances.to_string(), |c: &mut RunConfig, v: &str| { c.eval_instances = parse_as("eval_instances", v)?; Ok(()) };
    eval_seed: |c: &RunConfig| c.eval_seed.to_string(), |c: &mut RunConfig, v: &str| { c.eval_seed = parse_as("eval_seed", v)?; Ok(()) };
    pair_cap: |c: &RunConfig| write_opt_usize(c.pair_cap), |c: &mut RunConfig, v: &str| { c.pair_cap = parse_opt_usize("pair_cap", v)?; Ok(()) };
    val_fraction: |c: &RunConfig| c.val_fraction.to_string(), |c: &mut RunConfig, v: &str| { c.val_fraction = parse_as("val_fraction", v)?; Ok(()) };
    objective: |c: &RunConfig| c.objective.to_string(), |c: &mut RunConfig, v: &str| { c.objective = v.parse()?; Ok(()) };
    beta: |c: &RunConfig| c.beta.to_string(), |c: &mut RunConfig, v: &str| { c.beta = parse_as("beta", v)?; Ok(()) };
    alpha: |c: &RunConfig| c.alpha.to_string(), |c: &mut RunConfig, v: &str| { c.alpha = parse_as("alpha", v)?; Ok(()) };
    lambda_dpop: |c: &RunConfig| c.lambda_dpop.to_string(), |c: &mut RunConfig, v: &str| { c.lambda_dpop = parse_as("lambda_dpop", v)?; Ok(()) };
    kto_beta: |c: &RunConfig| c.kto_beta.to_string(), |c: &mut RunConfig, v: &str| { c.kto_beta = parse_as("kto_beta", v)?; Ok(()) };
    kto_lambda_w: |c: &RunConfig| c.kto_lambda_w.to_string(), |c: &mut RunConfig, v: &str| { c.kto_lambda_w = parse_as("kto_lambda_w", v)?; Ok(()) };
    kto_lambda_l: |c: &RunConfig| c.kto_lambda_l.to_string(), |c: &mut RunConfig, v: &str| { c.kto_lambda_l = parse_as("kto_lambda_l", v)?; Ok(()) };
    kto_z0: |c: &RunConfig| c.kto_z0.to_string(), |c: &mut RunConfig, v: &str| { c.kto_z0 = v.parse()?; Ok(()) };
    fpa_lambda: |c: &RunConfig| c.fpa_lambda.to_string(), |c: &mut RunConfig, v: &str| { c.fpa_lambda = parse_as("fpa_lambda", v)?; Ok(()) };
    fpa_target: |c: &RunConfig| c.fpa_target.to_string(), |c: &mut RunConfig, v: &str| { c.fpa_target = v.parse()?; Ok(()) };
    lr: |c: &RunConfig| c.lr.to_string(), |c: &mut RunConfig, v: &str| { c.lr = parse_as("lr", v)?; Ok(()) };
    weight_decay: |c: &RunConfig| c.weight_decay.to_string(), |c: &mut RunConfig, v: &str| { c.weight_decay = parse_as("weight_decay", v)?; Ok(()) };
    warmup_steps: |c: &RunConfig| c.warmup_steps.to_string(), |c: &mut RunConfig, v: &str| { c.warmup_steps = parse_as("warmup_steps", v)?; Ok(()) };
    max_steps: |c: &RunConfig| c.max_steps.to_string(), |c: &mut RunConfig, v: &str| { c.max_steps = parse_as("max_steps", v)?; Ok(()) };
    batch_size: |c: &RunConfig| c.batch_size.to_string(), |c: &mut RunConfig, v: &str| { c.batch_size = parse_as("batch_size", v)?; Ok(()) };
    scheduler: |c: &RunConfig| c.scheduler.to_string(), |c: &mut RunConfig, v: &str| { c.scheduler = v.parse()?; Ok(()) };
    mimic_final_fraction: |c: &RunConfig| write_opt_f64(c.mimic_final_fraction), |c: &mut RunConfig, v: &str| { c.mimic_final_fraction = parse_opt_f64("mimic_final_fraction", v)?; Ok(()) };
    max_grad_norm: |c: &RunConfig| c.max_grad_norm.to_string(), |c: &mut RunConfig, v: &str| { c.max_grad_norm = parse_as("max_grad_norm", v)?; Ok(()) };
    adam_beta1: |c: &RunConfig| c.adam_beta1.to_string(), |c: &mut RunConfig, v: &str| { c.adam_beta1 = parse_as("adam_beta1", v)?; Ok(()) };
    adam_beta2: |c: &RunConfig| c.adam_beta2.to_string(), |c: &mut RunConfig, v: &str| { c.adam_beta2 = parse_as("adam_beta2", v)?; Ok(()) };
    adam_eps: |c: &RunConfig| c.adam_eps.to_string(), |c: &mut RunConfig, v: &str| { c.adam_eps = parse_as("adam_eps", v)?; Ok(()) };
    eval_every: |c: &RunConfig| c.eval_every.to_string(), |c: &mut RunConfig, v: &str| { c.eval_every = parse_as("eval_every", v)?; Ok(()) };
    patience: |c: &RunConfig| write_opt_usize(c.patience), |c: &mut RunConfig, v: &str| { c.patience = parse_opt_usize("patience", v)?; Ok(()) };
    eval_n: |c: &RunConfig| c.eval_n.to_string(), |c: &mut RunConfig, v: &str| { c.eval_n = parse_as("eval_n", v)?; Ok(()) };
    eval_temperature: |c: &RunConfig| c.eval_temperature.to_string(), |c: &mut RunConfig, v: &str| { c.eval_temperature = parse_as("eval_temperature", v)?; Ok(()) };
    angle_probe_every: |c: &RunConfig| c.angle_probe_every.to_string(), |c: &mut RunConfig, v: &str| { c.angle_probe_every = parse_as("angle_probe_every", v)?; Ok(()) };
    near_zero_threshold: |c: &RunConfig| c.near_zero_threshold.to_string(), |c: &mut RunConfig, v: &str| { c.near_zero_threshold = parse_as("near_zero_threshold", v)?; Ok(()) };
    se_convention: |c: &RunConfig| c.se_convention.to_string(), |c: &mut RunConfig, v: &str| { c.se_convention = v.parse()?; Ok(()) };
}

impl RunConfig {
    /// Parse the flat `key = value` text form. Unknown and duplicate keys
    /// are rejected; missing keys keep their defaults.
    pub fn from_file_string(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<&str> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let canonical = KEY_NAMES
                .iter()
                .find(|k| **k == key)
                .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
            if seen.contains(canonical) {
                return Err(Error::Config(format!("duplicate key `{key}`")));
            }
            seen.push(canonical);
            cfg.apply(key, value)?;
        }
        // A freshly-written file pins eval_seed explicitly, but a sparse
        // hand-written one keeps the derived default in sync with seed.
        if !seen.contains(&"eval_seed") {
            cfg.eval_seed = cfg.seed + 1;
        }
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_file_string(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let layout = self.layout();
        if self.modulus < 2 || self.modulus > layout.max_modulus() {
            return Err(Error::Config(format!(
                "modulus {} needs vocab_size ≥ {}",
                self.modulus,
                self.modulus + RESERVED_TOKENS
            )));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::Config("overlap must lie in [0, 1)".into()));
        }
        if self.k_samples < 2 {
            return Err(Error::Config("k_samples must be ≥ 2".into()));
        }
        if !(0.0 < self.val_fraction && self.val_fraction < 1.0) {
            return Err(Error::Config("val_fraction must lie in (0, 1)".into()));
        }
        if self.fpa_lambda < 0.0 || !self.fpa_lambda.is_finite() {
            return Err(Error::Config("fpa_lambda must be finite and ≥ 0".into()));
        }
        self.hyper_params::<f64>().validate()?;
        self.train_config().validate()?;
        Ok(())
    }

    pub fn lm_config(&self) -> LmConfig {
        LmConfig::new(self.vocab_size, self.context_len, self.hidden_dim)
    }

    pub fn layout(&self) -> TokenLayout {
        TokenLayout::new(self.vocab_size)
    }

    pub fn hyper_params<T: Real>(&self) -> HyperParams<T> {
        HyperParams {
            beta: T::from_f64_c(self.beta),
            alpha: T::from_f64_c(self.alpha),
            lambda_dpop: T::from_f64_c(self.lambda_dpop),
            kto_beta: T::from_f64_c(self.kto_beta),
            kto_lambda_w: T::from_f64_c(self.kto_lambda_w),
            kto_lambda_l: T::from_f64_c(self.kto_lambda_l),
        }
    }

    /// Mimic-decay floor, resolved per objective when left on auto:
    /// 0.9 for the DPO/RPO family, 0.8 for the SimPER family.
    pub fn resolved_mimic_fraction(&self) -> f64 {
        self.mimic_final_fraction.unwrap_or(match self.objective {
            Objective::Simper | Objective::FpaSimper => 0.8,
            _ => 0.9,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_eps: self.adam_eps,
            weight_decay: self.weight_decay,
            warmup_steps: self.warmup_steps,
            learning_rate: self.lr,
            max_grad_norm: self.max_grad_norm,
            max_steps: self.max_steps,
            batch_size: self.batch_size,
            scheduler: self.scheduler,
            mimic_final_fraction: self.resolved_mimic_fraction(),
            eval_every: self.eval_every,
            patience: self.patience.unwrap_or(usize::MAX),
            eval_n: self.eval_n,
            eval_temperature: self.eval_temperature,
            angle_probe_every: self.angle_probe_every,
            kto_z0_mode: self.kto_z0,
            near_zero_threshold: self.near_zero_threshold,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = RunConfig::default();
        let text = cfg.to_file_string();
        let parsed = RunConfig::from_file_string(&text).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn non_default_round_trips_losslessly() {
        let cfg = RunConfig {
            seed: 7,
            overlap: 0.7500000000000001,
            lr: 3.3e-6,
            objective: Objective::FpaRpo,
            fpa_target: FpaTarget::DispreferredOnly,
            pair_cap: Some(12),
            patience: None,
            mimic_final_fraction: Some(0.85),
            scheduler: Scheduler::MimicDecay,
            kto_z0: KtoZ0Mode::RunningMean,
            se_convention: SeConvention::Sample,
            ..Default::default()
        };
        let parsed = RunConfig::from_file_string(&cfg.to_file_string()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        assert!(RunConfig::from_file_string("bogus = 1").is_err());
        assert!(RunConfig::from_file_string("seed = 1\nseed = 2").is_err());
        assert!(RunConfig::from_file_string("seed 1").is_err());
    }

    #[test]
    fn sparse_file_keeps_defaults_and_derives_eval_seed() {
        let cfg = RunConfig::from_file_string("seed = 10\nobjective = dpo\n").unwrap();
        assert_eq!(cfg.seed, 10);
        assert_eq!(cfg.eval_seed, 11);
        assert_eq!(cfg.objective, Objective::Dpo);
        assert_eq!(cfg.vocab_size, RunConfig::default().vocab_size);
    }

    #[test]
    fn mimic_fraction_resolution() {
        let mut cfg = RunConfig {
            objective: Objective::Simper,
            ..Default::default()
        };
        assert_eq!(cfg.resolved_mimic_fraction(), 0.8);
        cfg.objective = Objective::FpaRpo;
        assert_eq!(cfg.resolved_mimic_fraction(), 0.9);
        cfg.mimic_final_fraction = Some(0.5);
        assert_eq!(cfg.resolved_mimic_fraction(), 0.5);
    }

    #[test]
    fn validation_catches_bad_setups() {
        let mut cfg = RunConfig::default();
        cfg.modulus = 14; // needs vocab ≥ 19
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.overlap = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.k_samples = 1;
        assert!(cfg.validate().is_err());
        assert!(RunConfig::default().validate().is_ok());
    }
}
