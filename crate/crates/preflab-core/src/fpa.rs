//! Future-policy-aware (FPA) preference learning.
//!
//! The future policy is estimated by logit-space extrapolation from the
//! reference toward the current model,
//!
//! ```text
//! π̂_θ = softmax((1+λ) h_θ − λ h_ref)
//! ```
//!
//! and the base algorithm's gradient coefficients are recomputed under π̂
//! behind a stop-gradient, leaving the main gradient flow through π_θ
//! untouched:
//!
//! ```text
//! L = -E[ sg[C_w(π̂_θ)] log π_θ(y_w|x) - sg[C_l(π̂_θ)] log π_θ(y_l|x) ]
//! ```
//!
//! The extrapolation is computed as `h_θ + λ (h_θ − h_ref)`, which is the
//! same expression but exact at the two fixed points: λ = 0 reproduces h_θ
//! bit for bit, and θ = reference gives h_θ − h_ref ≡ 0 so π̂ = π_θ for
//! every λ. Both fixed points are load-bearing for the coefficient-ratio
//! diagnostics, which must read exactly 1.0 there.

use crate::data::PreferencePair;
use crate::error::{Error, Result};
use crate::graph::Value;
use crate::model::{BoundLm, FrozenReference};
use crate::objectives::{
    dpo_coefficient_from_ratios, mean_of, simper_coefficient_from_logprob, CoefficientPair,
    HyperParams, PairScore,
};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Base algorithm an FPA loss wraps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FpaBase {
    Dpo,
    Rpo,
    Simper,
}

/// Which coefficients are computed under the future policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FpaTarget {
    /// Both C_w and C_l use π̂.
    #[default]
    Both,
    /// Only C_w uses π̂; C_l uses the (gradient-stopped) current policy.
    PreferredOnly,
    /// Only C_l uses π̂; C_w uses the (gradient-stopped) current policy.
    DispreferredOnly,
}

/// Extrapolation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpaConfig<T> {
    /// Extrapolation strength λ ≥ 0.
    pub lambda: T,
    pub target: FpaTarget,
    pub base: FpaBase,
}

impl<T: Real> FpaConfig<T> {
    pub fn new(base: FpaBase, lambda: T) -> Result<Self> {
        let cfg = Self {
            lambda,
            target: FpaTarget::Both,
            base,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_target(mut self, target: FpaTarget) -> Self {
        self.target = target;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < T::zero() {
            return Err(Error::InvalidArgument(format!(
                "extrapolation λ must be finite and ≥ 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Extrapolated logits ĥ = (1+λ) h_θ − λ h_ref, computed in the
/// fixed-point-exact form h_θ + λ (h_θ − h_ref).
pub fn future_policy_logits<T: Real>(
    h_theta: &Value<T>,
    h_ref: &Tensor<T>,
    lambda: T,
) -> Result<Value<T>> {
    if h_theta.shape() != h_ref.shape() {
        return Err(Error::ShapeMismatch(format!(
            "policy logits {:?} vs reference logits {:?}",
            h_theta.shape(),
            h_ref.shape()
        )));
    }
    if !lambda.is_finite() || lambda < T::zero() {
        return Err(Error::InvalidArgument(format!(
            "extrapolation λ must be finite and ≥ 0, got {lambda}"
        )));
    }
    let reference = h_theta.graph().leaf(h_ref.clone());
    let drift = h_theta.sub(&reference)?;
    h_theta.add(&drift.scale(lambda))
}

/// A scored pair extended with the gradient-stopped future log-probs
/// log π̂_θ(y|x) at the run's λ.
#[derive(Clone)]
pub struct FpaScoredPair<T> {
    pub score: PairScore<T>,
    /// sg[log π̂_θ(y_w|x)]
    pub future_w: Value<T>,
    /// sg[log π̂_θ(y_l|x)]
    pub future_l: Value<T>,
}

/// Plain-number snapshot of one scored pair, for diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct PairNumbers<T> {
    pub policy_w: T,
    pub policy_l: T,
    pub future_w: T,
    pub future_l: T,
    pub reference_w: T,
    pub reference_l: T,
    pub len_w: usize,
    pub len_l: usize,
}

impl<T: Real> FpaScoredPair<T> {
    pub fn numbers(&self) -> PairNumbers<T> {
        PairNumbers {
            policy_w: self.score.policy_w.item(),
            policy_l: self.score.policy_l.item(),
            future_w: self.future_w.item(),
            future_l: self.future_l.item(),
            reference_w: self.score.reference_w,
            reference_l: self.score.reference_l,
            len_w: self.score.len_w,
            len_l: self.score.len_l,
        }
    }
}

/// Score a pair against the bound policy, producing both the live
/// log-probs and the future log-probs under extrapolation strength λ.
/// Reference logit rows come from the pair's cache when present, from a
/// live reference forward otherwise; the two agree bit for bit.
pub fn score_pair_with_future<T: Real>(
    policy: &BoundLm<T>,
    reference: &FrozenReference<T>,
    pair: &PreferencePair<T>,
    lambda: T,
) -> Result<FpaScoredPair<T>> {
    let (logp_w, ref_w, fut_w) =
        score_trajectory(policy, reference, pair, &pair.chosen, &pair.ref_logits_chosen, lambda)?;
    let (logp_l, ref_l, fut_l) = score_trajectory(
        policy,
        reference,
        pair,
        &pair.rejected,
        &pair.ref_logits_rejected,
        lambda,
    )?;
    Ok(FpaScoredPair {
        score: PairScore {
            policy_w: logp_w,
            policy_l: logp_l,
            reference_w: ref_w,
            reference_l: ref_l,
            len_w: pair.chosen.len(),
            len_l: pair.rejected.len(),
        },
        future_w: fut_w,
        future_l: fut_l,
    })
}

fn score_trajectory<T: Real>(
    policy: &BoundLm<T>,
    reference: &FrozenReference<T>,
    pair: &PreferencePair<T>,
    completion: &[usize],
    cache: &Option<Tensor<T>>,
    lambda: T,
) -> Result<(Value<T>, T, Value<T>)> {
    let rows = policy.completion_logit_rows(&pair.prompt, completion)?;
    let logp = rows.log_softmax()?.take_per_row(completion)?.sum();
    let ref_rows = match cache {
        Some(t) => {
            if t.shape() != rows.shape() {
                return Err(Error::Data(format!(
                    "cached reference logits {:?} do not match trajectory rows {:?}",
                    t.shape(),
                    rows.shape()
                )));
            }
            t.clone()
        }
        None => crate::data::reference_logit_rows(reference, &pair.prompt, completion)?,
    };
    let g = rows.graph();
    let ref_logp = g
        .leaf(ref_rows.clone())
        .log_softmax()?
        .take_per_row(completion)?
        .sum()
        .item();
    let future = future_sequence_logprob(&rows, &ref_rows, completion, lambda)?;
    Ok((logp, ref_logp, future))
}

/// Gradient-stopped log π̂_θ(y|x) from live policy logit rows and the
/// matching reference rows.
pub fn future_sequence_logprob<T: Real>(
    policy_rows: &Value<T>,
    reference_rows: &Tensor<T>,
    completion: &[usize],
    lambda: T,
) -> Result<Value<T>> {
    let extrapolated = future_policy_logits(policy_rows, reference_rows, lambda)?;
    Ok(extrapolated
        .log_softmax()?
        .take_per_row(completion)?
        .sum()
        .stop_gradient())
}

/// The in-graph DPO/RPO sigmoid coefficient β·σ(β·(ratio_l − ratio_w))
/// built from (gradient-stopped) log-prob values. Mirrors
/// [`dpo_coefficient_from_ratios`] op for op.
fn dpo_coefficient_value<T: Real>(
    beta: T,
    logp_w: &Value<T>,
    logp_l: &Value<T>,
    ref_w: T,
    ref_l: T,
) -> Result<Value<T>> {
    let g = logp_w.graph();
    let ratio_w = logp_w.sub(&g.scalar(ref_w))?;
    let ratio_l = logp_l.sub(&g.scalar(ref_l))?;
    let diff = ratio_l.sub(&ratio_w)?;
    Ok(diff.scale(beta).sigmoid().scale(beta))
}

/// The in-graph SimPER coefficient (1/|y|)·exp(logp/|y|). Mirrors
/// [`simper_coefficient_from_logprob`] op for op.
fn simper_coefficient_value<T: Real>(logp: &Value<T>, len: usize) -> Value<T> {
    let inv = T::one() / T::from_f64_c(len as f64);
    logp.scale(inv).exp().scale(inv)
}

/// FPA loss over a scored batch, per the general stop-gradient form, and
/// the per-pair coefficient values it used.
pub fn fpa_loss_with_coefficients<T: Real>(
    batch: &[FpaScoredPair<T>],
    cfg: &FpaConfig<T>,
    hp: &HyperParams<T>,
) -> Result<(Value<T>, Vec<CoefficientPair<T>>)> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut terms = Vec::with_capacity(batch.len());
    let mut coefficients = Vec::with_capacity(batch.len());
    for sp in batch {
        let s = &sp.score;
        let g = s.policy_w.graph();
        // Inputs for the untouched side of a targeted variant: the current
        // policy behind a stop-gradient.
        let current_w = || s.policy_w.stop_gradient();
        let current_l = || s.policy_l.stop_gradient();
        let (c_w, c_l) = match cfg.base {
            FpaBase::Dpo | FpaBase::Rpo => {
                let coef_future = dpo_coefficient_value(
                    hp.beta,
                    &sp.future_w,
                    &sp.future_l,
                    s.reference_w,
                    s.reference_l,
                )?;
                let pick = |extrapolated: bool| -> Result<Value<T>> {
                    if extrapolated {
                        Ok(coef_future.clone())
                    } else {
                        dpo_coefficient_value(
                            hp.beta,
                            &current_w(),
                            &current_l(),
                            s.reference_w,
                            s.reference_l,
                        )
                    }
                };
                let (ew, el) = extrapolates(cfg.target);
                let mut c_w = pick(ew)?;
                let c_l = pick(el)?;
                if cfg.base == FpaBase::Rpo {
                    // α/|y_w| is θ-independent; it enters C_w as a plain
                    // constant addend.
                    let addend = hp.alpha / T::from_f64_c(s.len_w as f64);
                    c_w = c_w.add(&g.scalar(addend))?;
                }
                (c_w, c_l)
            }
            FpaBase::Simper => {
                let (ew, el) = extrapolates(cfg.target);
                let in_w = if ew { sp.future_w.clone() } else { current_w() };
                let in_l = if el { sp.future_l.clone() } else { current_l() };
                (
                    simper_coefficient_value(&in_w, s.len_w),
                    simper_coefficient_value(&in_l, s.len_l),
                )
            }
        };
        coefficients.push(CoefficientPair {
            c_w: c_w.item(),
            c_l: c_l.item(),
        });
        let term = c_w.mul(&s.policy_w)?.sub(&c_l.mul(&s.policy_l)?)?;
        terms.push(term);
    }
    Ok((mean_of(&terms)?.neg(), coefficients))
}

/// FPA loss over a scored batch.
pub fn fpa_loss<T: Real>(
    batch: &[FpaScoredPair<T>],
    cfg: &FpaConfig<T>,
    hp: &HyperParams<T>,
) -> Result<Value<T>> {
    Ok(fpa_loss_with_coefficients(batch, cfg, hp)?.0)
}

/// One-sided FPA: the designated coefficient uses π̂, the other uses the
/// gradient-stopped current policy.
pub fn targeted_fpa_loss<T: Real>(
    batch: &[FpaScoredPair<T>],
    cfg: &FpaConfig<T>,
    hp: &HyperParams<T>,
) -> Result<Value<T>> {
    if cfg.target == FpaTarget::Both {
        return Err(Error::InvalidArgument(
            "targeted FPA needs target preferred-only or dispreferred-only".into(),
        ));
    }
    fpa_loss(batch, cfg, hp)
}

/// (preferred extrapolated?, dispreferred extrapolated?)
fn extrapolates(target: FpaTarget) -> (bool, bool) {
    match target {
        FpaTarget::Both => (true, true),
        FpaTarget::PreferredOnly => (true, false),
        FpaTarget::DispreferredOnly => (false, true),
    }
}

/// Base-algorithm coefficients from the current policy, plain numbers.
pub fn base_coefficients_plain<T: Real>(
    base: FpaBase,
    hp: &HyperParams<T>,
    n: &PairNumbers<T>,
) -> CoefficientPair<T> {
    match base {
        FpaBase::Dpo | FpaBase::Rpo => {
            let c = dpo_coefficient_from_ratios(
                hp.beta,
                n.policy_w - n.reference_w,
                n.policy_l - n.reference_l,
            );
            let c_w = if base == FpaBase::Rpo {
                c + hp.alpha / T::from_f64_c(n.len_w as f64)
            } else {
                c
            };
            CoefficientPair { c_w, c_l: c }
        }
        FpaBase::Simper => CoefficientPair {
            c_w: simper_coefficient_from_logprob(n.policy_w, n.len_w),
            c_l: simper_coefficient_from_logprob(n.policy_l, n.len_l),
        },
    }
}

/// FPA coefficients (with targeting applied), plain numbers. Bitwise
/// consistent with the values materialized by [`fpa_loss_with_coefficients`].
pub fn fpa_coefficients_plain<T: Real>(
    base: FpaBase,
    target: FpaTarget,
    hp: &HyperParams<T>,
    n: &PairNumbers<T>,
) -> CoefficientPair<T> {
    let (ew, el) = extrapolates(target);
    match base {
        FpaBase::Dpo | FpaBase::Rpo => {
            let coef = |extrapolated: bool| {
                let (w, l) = if extrapolated {
                    (n.future_w, n.future_l)
                } else {
                    (n.policy_w, n.policy_l)
                };
                dpo_coefficient_from_ratios(hp.beta, w - n.reference_w, l - n.reference_l)
            };
            let mut c_w = coef(ew);
            let c_l = coef(el);
            if base == FpaBase::Rpo {
                c_w = c_w + hp.alpha / T::from_f64_c(n.len_w as f64);
            }
            CoefficientPair { c_w, c_l }
        }
        FpaBase::Simper => CoefficientPair {
            c_w: simper_coefficient_from_logprob(if ew { n.future_w } else { n.policy_w }, n.len_w),
            c_l: simper_coefficient_from_logprob(if el { n.future_l } else { n.policy_l }, n.len_l),
        },
    }
}

/// Elementwise FPA/base coefficient ratio; a zero base coefficient reports
/// the ratio as missing rather than infinite.
pub fn coefficient_ratio<T: Real>(
    base: &CoefficientPair<T>,
    fpa: &CoefficientPair<T>,
) -> (Option<T>, Option<T>) {
    let ratio = |b: T, f: T| if b > T::zero() { Some(f / b) } else { None };
    (ratio(base.c_w, fpa.c_w), ratio(base.c_l, fpa.c_l))
}
