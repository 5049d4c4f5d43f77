//! Measurement apparatus for gradient entanglement and coefficient
//! dynamics. Everything here is read-only over model snapshots: a run with
//! diagnostics on and off produces identical parameters.

use crate::data::PreferencePair;
use crate::error::Result;
use crate::fpa::coefficient_ratio;
use crate::graph::Graph;
use crate::model::{FrozenReference, TinyLm};
use crate::objectives::{mean_of, reference_logprob, CoefficientPair};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Angle and norms of the preferred/dispreferred log-prob gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientReport {
    /// arccos of the cosine similarity between ∇ mean log π_θ(y_w) and
    /// ∇ mean log π_θ(y_l), in degrees within [0, 180]. Missing when either
    /// gradient has zero norm.
    pub angle_deg: Option<f64>,
    /// L2 norm of ∇ mean log π_θ(y_w) over all parameters.
    pub norm_w: f64,
    /// L2 norm of ∇ mean log π_θ(y_l) over all parameters.
    pub norm_l: f64,
    pub step: usize,
    pub batch_id: usize,
}

impl GradientReport {
    /// The angle between the gradient-ascent direction on the preferred
    /// trajectory and the gradient-descent direction on the dispreferred
    /// one, i.e. between the two update components +∇logπ(y_w) and
    /// −∇logπ(y_l). This is 180° minus `angle_deg`: the more the raw
    /// gradients overlap (entanglement), the wider the update components
    /// spread.
    pub fn update_angle_deg(&self) -> Option<f64> {
        self.angle_deg.map(|a| 180.0 - a)
    }
}

/// Mean log-probability drift away from the reference policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftRecord {
    /// mean over pairs of log π_θ(y_w|x) − log π_ref(y_w|x)
    pub drift_w: f64,
    /// mean over pairs of log π_θ(y_l|x) − log π_ref(y_l|x)
    pub drift_l: f64,
}

/// One step of the coefficient trace (Fig. 4/5-style bookkeeping).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientTrace {
    pub step: usize,
    pub mean_cw_base: f64,
    pub mean_cl_base: f64,
    pub mean_cw_fpa: f64,
    pub mean_cl_fpa: f64,
    /// Mean over pairs of the per-pair ratio fpa/base (pairs with zero base
    /// coefficient excluded from the denominator count).
    pub ratio_w_mean_of_ratios: Option<f64>,
    pub ratio_l_mean_of_ratios: Option<f64>,
    /// Ratio of the batch means.
    pub ratio_w_of_means: Option<f64>,
    pub ratio_l_of_means: Option<f64>,
    /// Count of active C_l values strictly below the threshold, this step.
    pub near_zero: usize,
    /// Running total of `near_zero` across steps.
    pub near_zero_cum: usize,
}

/// Which coefficient set drives the run (and therefore the near-zero
/// counter): the base algorithm's or the FPA-regularized one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActiveCoefficients {
    Base,
    Fpa,
}

/// Count of values strictly below `threshold`.
pub fn near_zero_count<T: Real>(values: &[T], threshold: T) -> usize {
    values.iter().filter(|&&v| v < threshold).count()
}

/// Flattened parameter gradients of mean log π_θ(y_w) and mean
/// log π_θ(y_l), in two backward passes over one recorded graph; the angle
/// is the arccos of their cosine similarity.
pub fn gradient_angle_and_norms<T: Real>(
    model: &TinyLm<T>,
    batch: &[PreferencePair<T>],
    step: usize,
    batch_id: usize,
) -> Result<GradientReport> {
    let graph = Graph::new();
    let bound = model.bind(&graph);
    let mut logp_w = Vec::with_capacity(batch.len());
    let mut logp_l = Vec::with_capacity(batch.len());
    for pair in batch {
        logp_w.push(bound.sequence_logprob(&pair.prompt, &pair.chosen)?);
        logp_l.push(bound.sequence_logprob(&pair.prompt, &pair.rejected)?);
    }
    let mean_w = mean_of(&logp_w)?;
    let mean_l = mean_of(&logp_l)?;

    mean_w.backward()?;
    let grad_w = flat_param_grads(&bound);
    graph.zero_grads();
    mean_l.backward()?;
    let grad_l = flat_param_grads(&bound);

    let norm_w = grad_w.iter().map(|a| a * a).sum::<f64>().sqrt();
    let norm_l = grad_l.iter().map(|a| a * a).sum::<f64>().sqrt();
    Ok(GradientReport {
        angle_deg: vector_angle_deg(&grad_w, &grad_l),
        norm_w,
        norm_l,
        step,
        batch_id,
    })
}

fn flat_param_grads<T: Real>(bound: &crate::model::BoundLm<T>) -> Vec<f64> {
    let mut out = Vec::new();
    for v in bound.param_values() {
        out.extend(v.grad().data().iter().map(|&x| x.as_f64()));
    }
    out
}

/// Angle between two flat vectors in degrees; missing on zero norms.
/// Mathematically arccos of the cosine similarity, computed with Kahan's
/// 2·atan2(‖â−b̂‖, ‖â+b̂‖) form, which stays exact at 0° and 180°.
pub fn vector_angle_deg(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    let mut diff2 = 0.0;
    let mut sum2 = 0.0;
    for (x, y) in a.iter().zip(b) {
        let u = x / na;
        let v = y / nb;
        diff2 += (u - v) * (u - v);
        sum2 += (u + v) * (u + v);
    }
    Some((2.0 * diff2.sqrt().atan2(sum2.sqrt())).to_degrees())
}

/// Gradient-free probe of the mean log-prob drift over a fixed pair set.
pub fn drift_probe<T: Real>(
    model: &TinyLm<T>,
    reference: &FrozenReference<T>,
    pairs: &[PreferencePair<T>],
) -> Result<DriftRecord> {
    let mut dw = 0.0;
    let mut dl = 0.0;
    for pair in pairs {
        let pw = model.sequence_logprob_plain(&pair.prompt, &pair.chosen)?.as_f64();
        let pl = model.sequence_logprob_plain(&pair.prompt, &pair.rejected)?.as_f64();
        let rw = reference_logprob(reference, pair, true)?.as_f64();
        let rl = reference_logprob(reference, pair, false)?.as_f64();
        dw += pw - rw;
        dl += pl - rl;
    }
    let n = pairs.len() as f64;
    Ok(DriftRecord {
        drift_w: dw / n,
        drift_l: dl / n,
    })
}

/// Assemble one coefficient-trace row from the per-pair base and FPA
/// coefficients of a batch.
pub fn coefficient_trace_step<T: Real>(
    step: usize,
    base: &[CoefficientPair<T>],
    fpa: &[CoefficientPair<T>],
    threshold: T,
    active: ActiveCoefficients,
    near_zero_cum_before: usize,
) -> CoefficientTrace {
    debug_assert_eq!(base.len(), fpa.len(), "coefficients from the same batch");
    let mean = |f: &dyn Fn(&CoefficientPair<T>) -> T, set: &[CoefficientPair<T>]| {
        set.iter().map(|c| f(c).as_f64()).sum::<f64>() / set.len().max(1) as f64
    };
    let mean_cw_base = mean(&|c| c.c_w, base);
    let mean_cl_base = mean(&|c| c.c_l, base);
    let mean_cw_fpa = mean(&|c| c.c_w, fpa);
    let mean_cl_fpa = mean(&|c| c.c_l, fpa);

    let mut rw_sum = 0.0;
    let mut rw_n = 0usize;
    let mut rl_sum = 0.0;
    let mut rl_n = 0usize;
    for (b, f) in base.iter().zip(fpa) {
        let (rw, rl) = coefficient_ratio(b, f);
        if let Some(r) = rw {
            rw_sum += r.as_f64();
            rw_n += 1;
        }
        if let Some(r) = rl {
            rl_sum += r.as_f64();
            rl_n += 1;
        }
    }
    let ratio_of_means = |f: f64, b: f64| if b > 0.0 { Some(f / b) } else { None };

    let active_cl: Vec<T> = match active {
        ActiveCoefficients::Base => base.iter().map(|c| c.c_l).collect(),
        ActiveCoefficients::Fpa => fpa.iter().map(|c| c.c_l).collect(),
    };
    let near_zero = near_zero_count(&active_cl, threshold);
    CoefficientTrace {
        step,
        mean_cw_base,
        mean_cl_base,
        mean_cw_fpa,
        mean_cl_fpa,
        ratio_w_mean_of_ratios: (rw_n > 0).then(|| rw_sum / rw_n as f64),
        ratio_l_mean_of_ratios: (rl_n > 0).then(|| rl_sum / rl_n as f64),
        ratio_w_of_means: ratio_of_means(mean_cw_fpa, mean_cw_base),
        ratio_l_of_means: ratio_of_means(mean_cl_fpa, mean_cl_base),
        near_zero,
        near_zero_cum: near_zero_cum_before + near_zero,
    }
}

/// Max |aᵢ − bᵢ| between two parameter sets, for run-equality checks.
pub fn param_linf_distance<T: Real>(a: &TinyLm<T>, b: &TinyLm<T>) -> T {
    let mut worst = T::zero();
    for (pa, pb) in a.params().iter().zip(b.params().iter()) {
        let d = pa.max_abs_diff(pb);
        if d > worst {
            worst = d;
        }
    }
    worst
}

/// Flattened gradient of a scalar loss w.r.t. all bound parameters.
pub fn collect_param_grads<T: Real>(bound: &crate::model::BoundLm<T>) -> Vec<Tensor<T>> {
    bound.param_values().iter().map(|v| v.grad()).collect()
}
