//! The preference-loss zoo: SFT, DPO, DPOP, KTO, RPO, SimPER, plus the
//! masked-reward / length-normalized REINFORCE constructs.
//!
//! Every loss maps a batch of [`PairScore`]s to a differentiable scalar
//! whose gradient decomposes as
//!
//! ```text
//! ∇L = -E[ C_w ∇log π_θ(y_w|x) - C_l ∇log π_θ(y_l|x) ]
//! ```
//!
//! The `*_coefficients` functions compute the (C_w, C_l) weights of that
//! decomposition as plain numbers; they deliberately mirror the in-graph
//! arithmetic op for op, so a coefficient computed here is bit-identical to
//! the one materialized inside an FPA loss at the λ=0 / initialization
//! fixed points.

use crate::data::PreferencePair;
use crate::error::{Error, Result};
use crate::graph::Value;
use crate::model::{BoundLm, FrozenReference, Token};
use crate::scalar::{sigmoid, Real};

/// Loss hyperparameters with the laboratory defaults.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams<T> {
    /// DPO/DPOP temperature β.
    pub beta: T,
    /// RPO NLL weight α.
    pub alpha: T,
    /// DPOP hinge weight λ_DPOP.
    pub lambda_dpop: T,
    /// KTO temperature β.
    pub kto_beta: T,
    /// KTO preferred weight λ_w.
    pub kto_lambda_w: T,
    /// KTO dispreferred weight λ_l.
    pub kto_lambda_l: T,
}

impl<T: Real> Default for HyperParams<T> {
    fn default() -> Self {
        Self {
            beta: T::from_f64_c(0.1),
            alpha: T::one(),
            lambda_dpop: T::from_f64_c(50.0),
            kto_beta: T::from_f64_c(0.1),
            kto_lambda_w: T::one(),
            kto_lambda_l: T::one(),
        }
    }
}

impl<T: Real> HyperParams<T> {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("beta", self.beta),
            ("alpha", self.alpha),
            ("lambda_dpop", self.lambda_dpop),
            ("kto_beta", self.kto_beta),
            ("kto_lambda_w", self.kto_lambda_w),
            ("kto_lambda_l", self.kto_lambda_l),
        ];
        for (name, v) in all {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "hyperparameter {name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-pair scores: live policy log-probs (graph values) and frozen
/// reference log-probs (plain constants), with trajectory lengths.
#[derive(Clone)]
pub struct PairScore<T> {
    /// log π_θ(y_w|x), differentiable.
    pub policy_w: Value<T>,
    /// log π_θ(y_l|x), differentiable.
    pub policy_l: Value<T>,
    /// log π_ref(y_w|x).
    pub reference_w: T,
    /// log π_ref(y_l|x).
    pub reference_l: T,
    pub len_w: usize,
    pub len_l: usize,
}

/// The (C_w, C_l) gradient weights of one pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientPair<T> {
    pub c_w: T,
    pub c_l: T,
}

/// Score a preference pair against the bound policy and the frozen
/// reference. Reference log-probs come from the cached logit rows when
/// present, a live reference forward otherwise; both agree bit for bit.
pub fn score_pair<T: Real>(
    policy: &BoundLm<T>,
    reference: &FrozenReference<T>,
    pair: &PreferencePair<T>,
) -> Result<PairScore<T>> {
    Ok(PairScore {
        policy_w: policy.sequence_logprob(&pair.prompt, &pair.chosen)?,
        policy_l: policy.sequence_logprob(&pair.prompt, &pair.rejected)?,
        reference_w: reference_logprob(reference, pair, true)?,
        reference_l: reference_logprob(reference, pair, false)?,
        len_w: pair.chosen.len(),
        len_l: pair.rejected.len(),
    })
}

/// log π_ref(y|x) for one side of a pair, preferring the cached rows.
pub fn reference_logprob<T: Real>(
    reference: &FrozenReference<T>,
    pair: &PreferencePair<T>,
    chosen: bool,
) -> Result<T> {
    let (completion, cache) = if chosen {
        (&pair.chosen, &pair.ref_logits_chosen)
    } else {
        (&pair.rejected, &pair.ref_logits_rejected)
    };
    match cache {
        Some(rows) => {
            if rows.rows() != completion.len() {
                return Err(Error::Data(format!(
                    "cached logits have {} rows for a {}-token trajectory",
                    rows.rows(),
                    completion.len()
                )));
            }
            // Same kernels as the live path, applied to the cached rows.
            let g = crate::graph::Graph::new();
            let v = g.leaf(rows.clone());
            Ok(v.log_softmax()?.take_per_row(completion)?.sum().item())
        }
        None => reference.sequence_logprob(&pair.prompt, completion),
    }
}

/// Arithmetic mean of per-pair scalar terms, in batch order.
pub fn mean_of<T: Real>(terms: &[Value<T>]) -> Result<Value<T>> {
    let first = terms
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let mut acc = first.clone();
    for t in &terms[1..] {
        acc = acc.add(t)?;
    }
    Ok(acc.scale(T::one() / T::from_f64_c(terms.len() as f64)))
}

/// Negative log-likelihood on the preferred trajectories only.
pub fn sft_loss<T: Real>(batch: &[PairScore<T>]) -> Result<Value<T>> {
    let terms: Vec<Value<T>> = batch.iter().map(|s| s.policy_w.neg()).collect();
    mean_of(&terms)
}

/// β·(log π_θ(y_w)/π_ref(y_w) − log π_θ(y_l)/π_ref(y_l)) as a graph value.
fn dpo_margin<T: Real>(s: &PairScore<T>) -> Result<Value<T>> {
    let g = s.policy_w.graph();
    let ratio_w = s.policy_w.sub(&g.scalar(s.reference_w))?;
    let ratio_l = s.policy_l.sub(&g.scalar(s.reference_l))?;
    ratio_w.sub(&ratio_l)
}

/// DPO: mean of −log σ(β·margin).
pub fn dpo_loss<T: Real>(batch: &[PairScore<T>], beta: T) -> Result<Value<T>> {
    let mut terms = Vec::with_capacity(batch.len());
    for s in batch {
        let term = dpo_margin(s)?.scale(beta).sigmoid().log()?.neg();
        terms.push(term);
    }
    mean_of(&terms)
}

/// The shared DPO coefficient β·σ(β·(ratio_l − ratio_w)) from plain ratios.
/// Operation order matches the in-graph construction exactly.
pub fn dpo_coefficient_from_ratios<T: Real>(beta: T, ratio_w: T, ratio_l: T) -> T {
    let diff = ratio_l - ratio_w;
    sigmoid(diff * beta) * beta
}

/// Per-pair DPO coefficients: C_w = C_l = β·σ(−β·margin).
pub fn dpo_coefficients<T: Real>(batch: &[PairScore<T>], beta: T) -> Vec<CoefficientPair<T>> {
    batch
        .iter()
        .map(|s| {
            let c = dpo_coefficient_from_ratios(
                beta,
                s.policy_w.item() - s.reference_w,
                s.policy_l.item() - s.reference_l,
            );
            CoefficientPair { c_w: c, c_l: c }
        })
        .collect()
}

/// RPO: DPO plus an α-weighted, length-normalized NLL term on y_w.
pub fn rpo_loss<T: Real>(batch: &[PairScore<T>], beta: T, alpha: T) -> Result<Value<T>> {
    let dpo = dpo_loss(batch, beta)?;
    let nll: Vec<Value<T>> = batch
        .iter()
        .map(|s| s.policy_w.scale(T::one() / T::from_f64_c(s.len_w as f64)))
        .collect();
    dpo.sub(&mean_of(&nll)?.scale(alpha))
}

/// Per-pair RPO coefficients: C_w = C_dpo + α/|y_w|, C_l = C_dpo.
pub fn rpo_coefficients<T: Real>(
    batch: &[PairScore<T>],
    beta: T,
    alpha: T,
) -> Vec<CoefficientPair<T>> {
    batch
        .iter()
        .map(|s| {
            let c = dpo_coefficient_from_ratios(
                beta,
                s.policy_w.item() - s.reference_w,
                s.policy_l.item() - s.reference_l,
            );
            CoefficientPair {
                c_w: c + alpha / T::from_f64_c(s.len_w as f64),
                c_l: c,
            }
        })
        .collect()
}

/// SimPER: mean of −[exp(log π_θ(y_w)/|y_w|) − exp(log π_θ(y_l)/|y_l|)].
/// Reference-free and hyperparameter-free.
pub fn simper_loss<T: Real>(batch: &[PairScore<T>]) -> Result<Value<T>> {
    let mut terms = Vec::with_capacity(batch.len());
    for s in batch {
        let a = inverse_perplexity_value(&s.policy_w, s.len_w);
        let b = inverse_perplexity_value(&s.policy_l, s.len_l);
        terms.push(a.sub(&b)?);
    }
    Ok(mean_of(&terms)?.neg())
}

/// exp(logp / len) as a graph value.
fn inverse_perplexity_value<T: Real>(logp: &Value<T>, len: usize) -> Value<T> {
    logp.scale(T::one() / T::from_f64_c(len as f64)).exp()
}

/// The SimPER coefficient (1/|y|)·exp(log π(y)/|y|) from a plain log-prob.
/// Operation order matches the in-graph construction exactly.
pub fn simper_coefficient_from_logprob<T: Real>(logp: T, len: usize) -> T {
    let inv = T::one() / T::from_f64_c(len as f64);
    (logp * inv).exp() * inv
}

/// Per-pair SimPER coefficients.
pub fn simper_coefficients<T: Real>(batch: &[PairScore<T>]) -> Vec<CoefficientPair<T>> {
    batch
        .iter()
        .map(|s| CoefficientPair {
            c_w: simper_coefficient_from_logprob(s.policy_w.item(), s.len_w),
            c_l: simper_coefficient_from_logprob(s.policy_l.item(), s.len_l),
        })
        .collect()
}

/// DPOP: DPO with a hinge penalty that keeps π_θ(y_w) from dropping below
/// π_ref(y_w): −log σ(β[margin − λ·max(0, log π_ref(y_w)/π_θ(y_w))]).
pub fn dpop_loss<T: Real>(batch: &[PairScore<T>], beta: T, lambda_dpop: T) -> Result<Value<T>> {
    let mut terms = Vec::with_capacity(batch.len());
    for s in batch {
        let g = s.policy_w.graph();
        let penalty = g.scalar(s.reference_w).sub(&s.policy_w)?.relu();
        let arg = dpo_margin(s)?.sub(&penalty.scale(lambda_dpop))?;
        terms.push(arg.scale(beta).sigmoid().log()?.neg());
    }
    mean_of(&terms)
}

/// How KTO estimates the dataset-level mean reward z₀.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KtoZ0Mode {
    /// Mean log-ratio of the current minibatch (gradient-stopped).
    #[default]
    Batch,
    /// Exponential running mean of per-batch estimates (decay 0.9).
    RunningMean,
}

/// KTO over the pair batch flattened into (trajectory, desirability)
/// singleton examples: mean of λ_y − v(x, y) with the two-branch sigmoid
/// value function. Returns the loss and the numeric z₀ that was used, for
/// running-mean bookkeeping.
pub fn kto_loss<T: Real>(
    batch: &[PairScore<T>],
    hp: &HyperParams<T>,
    mode: KtoZ0Mode,
    previous_z0: Option<T>,
) -> Result<(Value<T>, T)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let g = batch[0].policy_w.graph().clone();
    // Flatten: (w, l) per pair, in batch order.
    let mut rewards = Vec::with_capacity(batch.len() * 2);
    for s in batch {
        rewards.push((s.policy_w.sub(&g.scalar(s.reference_w))?, true));
        rewards.push((s.policy_l.sub(&g.scalar(s.reference_l))?, false));
    }
    let r_values: Vec<Value<T>> = rewards.iter().map(|(r, _)| r.clone()).collect();
    let batch_z0 = mean_of(&r_values)?.stop_gradient();
    let (z0, z0_num) = match mode {
        KtoZ0Mode::Batch => {
            let n = batch_z0.item();
            (batch_z0, n)
        }
        KtoZ0Mode::RunningMean => {
            let decay = T::from_f64_c(0.9);
            let blended = match previous_z0 {
                Some(p) => p * decay + batch_z0.item() * (T::one() - decay),
                None => batch_z0.item(),
            };
            (g.scalar(blended), blended)
        }
    };
    let mut terms = Vec::with_capacity(rewards.len());
    for (r, desirable) in &rewards {
        let (lam, centered) = if *desirable {
            (hp.kto_lambda_w, r.sub(&z0)?)
        } else {
            (hp.kto_lambda_l, z0.sub(r)?)
        };
        let v = centered.scale(hp.kto_beta).sigmoid().scale(lam);
        terms.push(g.scalar(lam).sub(&v)?);
    }
    Ok((mean_of(&terms)?, z0_num))
}

/// Masked reward R(x, y): +1 on the preferred trajectory, −1 on the
/// dispreferred one, 0 elsewhere.
pub fn masked_reward<T>(y: &[Token], pair: &PreferencePair<T>) -> i32 {
    if y == pair.chosen.as_slice() {
        1
    } else if y == pair.rejected.as_slice() {
        -1
    } else {
        0
    }
}

/// Length-normalized REINFORCE objective over the pair set S_x:
/// mean over pairs of Σ_{y ∈ S_x} π_θ(y|x)^{1/|y|} · R(x, y), with the
/// masked reward fixed at +1 / −1 for the preferred / dispreferred
/// trajectory. A maximization objective; the trainer negates it.
pub fn ln_reinforce_objective<T: Real>(batch: &[PairScore<T>]) -> Result<Value<T>> {
    let mut terms = Vec::with_capacity(batch.len());
    for s in batch {
        let w = inverse_perplexity_value(&s.policy_w, s.len_w).scale(T::one());
        let l = inverse_perplexity_value(&s.policy_l, s.len_l).scale(-T::one());
        terms.push(w.add(&l)?);
    }
    mean_of(&terms)
}
