//! Pass@1 evaluation with standard errors, and the question-level
//! Total Gain / Total Loss decomposition.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{sample_instance_completion, TaskInstance, TokenLayout};
use crate::error::{Error, Result};
use crate::model::{derive_seed, TinyLm, Token};
use crate::scalar::Real;

/// Which standard deviation enters SE = std/√N.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SeConvention {
    /// Divide the variance by N.
    #[default]
    Population,
    /// Divide the variance by N − 1.
    Sample,
}

/// Outcome of one evaluated question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionResult {
    pub question: usize,
    pub prompt: Vec<Token>,
    pub gold: Vec<Token>,
    pub correct: usize,
    pub n: usize,
}

/// Pass@1 accuracy over a question set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub per_question: Vec<QuestionResult>,
    pub n: usize,
    pub temperature: f64,
    pub pass1: f64,
    pub se: f64,
    pub convention: SeConvention,
}

impl EvalResult {
    /// Per-question accuracies cᵢ/n, question order.
    pub fn accuracies(&self) -> Vec<f64> {
        self.per_question
            .iter()
            .map(|q| q.correct as f64 / q.n as f64)
            .collect()
    }
}

/// Question-level accuracy movement between two evaluations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainLossReport {
    /// Mean over all questions of max(0, Δᵢ).
    pub total_gain: f64,
    /// Mean over all questions of max(0, −Δᵢ).
    pub total_loss: f64,
    /// total_gain − total_loss, which equals the pass@1 difference.
    pub net_gain: f64,
}

/// Evaluate with an arbitrary per-question completion sampler. The sampler
/// receives a per-question RNG derived from `(seed, question index)`, so
/// results are independent of evaluation order.
pub fn evaluate_with<F>(
    mut sampler: F,
    instances: &[TaskInstance],
    layout: TokenLayout,
    n: usize,
    temperature: f64,
    seed: u64,
    convention: SeConvention,
) -> Result<EvalResult>
where
    F: FnMut(&TaskInstance, f64, &mut ChaCha8Rng) -> Result<Vec<Token>>,
{
    if n == 0 {
        return Err(Error::InvalidArgument("need n ≥ 1 attempts".into()));
    }
    if instances.is_empty() {
        return Err(Error::InvalidArgument("empty instance set".into()));
    }
    let mut per_question = Vec::with_capacity(instances.len());
    for (qi, inst) in instances.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, qi as u64));
        let mut correct = 0;
        for _ in 0..n {
            let completion = sampler(inst, temperature, &mut rng)?;
            if inst.is_correct(&completion, layout) {
                correct += 1;
            }
        }
        per_question.push(QuestionResult {
            question: qi,
            prompt: inst.prompt.clone(),
            gold: inst.gold.clone(),
            correct,
            n,
        });
    }
    let (pass1, se) = pass1_and_se(&per_question, convention);
    Ok(EvalResult {
        per_question,
        n,
        temperature,
        pass1,
        se,
        convention,
    })
}

/// Pass@1 accuracy of `model` over the instance set: n temperature
/// samples per question, exact-match grading.
pub fn evaluate<T: Real>(
    model: &TinyLm<T>,
    instances: &[TaskInstance],
    n: usize,
    temperature: f64,
    seed: u64,
    convention: SeConvention,
) -> Result<EvalResult> {
    let layout = TokenLayout::new(model.cfg().vocab);
    evaluate_with(
        |inst, temp, rng| sample_instance_completion(model, inst, temp, layout, rng),
        instances,
        layout,
        n,
        temperature,
        seed,
        convention,
    )
}

/// Pass@1 = (1/N) Σ cᵢ/n and SE = std/√N under the chosen convention.
pub fn pass1_and_se(per_question: &[QuestionResult], convention: SeConvention) -> (f64, f64) {
    let n_questions = per_question.len();
    let accs: Vec<f64> = per_question
        .iter()
        .map(|q| q.correct as f64 / q.n as f64)
        .collect();
    let mean = accs.iter().sum::<f64>() / n_questions as f64;
    let ss: f64 = accs.iter().map(|a| (a - mean) * (a - mean)).sum();
    let denom = match convention {
        SeConvention::Population => n_questions as f64,
        SeConvention::Sample => (n_questions - 1).max(1) as f64,
    };
    let std = (ss / denom).sqrt();
    (mean, std / (n_questions as f64).sqrt())
}

/// Total Gain / Total Loss over aligned per-question accuracies. Both are
/// averaged over all N questions, which makes net = gain − loss equal the
/// pass@1 difference.
pub fn gain_loss(before: &[f64], after: &[f64]) -> Result<GainLossReport> {
    if before.len() != after.len() || before.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "misaligned question sets: {} vs {}",
            before.len(),
            after.len()
        )));
    }
    let n = before.len() as f64;
    let mut gain_sum = 0.0;
    let mut loss_sum = 0.0;
    for (&b, &a) in before.iter().zip(after) {
        let delta = a - b;
        gain_sum += delta.max(0.0);
        loss_sum += (-delta).max(0.0);
    }
    let total_gain = gain_sum / n;
    let total_loss = loss_sum / n;
    Ok(GainLossReport {
        total_gain,
        total_loss,
        net_gain: total_gain - total_loss,
    })
}

/// Write per-question results as JSONL (UTF-8, LF).
pub fn write_eval_jsonl(path: &Path, result: &EvalResult) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    for q in &result.per_question {
        serde_json::to_writer(&mut out, q)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_eval_jsonl(path: &Path) -> Result<Vec<QuestionResult>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let q: QuestionResult = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("line {}: {e}", lineno + 1)))?;
        out.push(q);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LmConfig;

    fn instances(count: usize) -> (Vec<TaskInstance>, TokenLayout) {
        let layout = TokenLayout::new(16);
        let insts = crate::data::generate_instances(count, 7, 0.5, 3, layout).unwrap();
        (insts, layout)
    }

    #[test]
    fn pass1_direct_average() {
        // c = [8, 4] of n = 8: accuracies 1.0 and 0.5, pass@1 = 0.75.
        let per = vec![
            QuestionResult { question: 0, prompt: vec![], gold: vec![], correct: 8, n: 8 },
            QuestionResult { question: 1, prompt: vec![], gold: vec![], correct: 4, n: 8 },
        ];
        let (pass1, se) = pass1_and_se(&per, SeConvention::Population);
        assert_eq!(pass1, 0.75);
        // Population std of [1.0, 0.5] is 0.25, SE = 0.25/√2.
        assert!((se - 0.25 / 2.0f64.sqrt()).abs() < 1e-15);
        assert!((se - 0.176777).abs() < 1e-6);
        // Sample convention uses N − 1.
        let (_, se_s) = pass1_and_se(&per, SeConvention::Sample);
        assert!((se_s - 0.25 * 2.0f64.sqrt() / 2.0f64.sqrt() / 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_correct_has_zero_se() {
        let per: Vec<QuestionResult> = (0..5)
            .map(|i| QuestionResult { question: i, prompt: vec![], gold: vec![], correct: 8, n: 8 })
            .collect();
        let (pass1, se) = pass1_and_se(&per, SeConvention::Population);
        assert_eq!(pass1, 1.0);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn oracle_model_scores_one() {
        let (insts, layout) = instances(12);
        let result = evaluate_with(
            |inst, _t, _rng| Ok(inst.gold_completion(layout)),
            &insts,
            layout,
            8,
            0.7,
            42,
            SeConvention::Population,
        )
        .unwrap();
        assert_eq!(result.pass1, 1.0);
        assert_eq!(result.se, 0.0);
    }

    #[test]
    fn evaluate_is_seed_deterministic_and_order_independent() {
        let (insts, _) = instances(6);
        let model = TinyLm::<f64>::init(LmConfig::new(16, 32, 8), 1);
        let a = evaluate(&model, &insts, 4, 0.7, 42, SeConvention::Population).unwrap();
        let b = evaluate(&model, &insts, 4, 0.7, 42, SeConvention::Population).unwrap();
        assert_eq!(a, b);
        // Per-question seeds make results independent of evaluation order:
        // evaluating a suffix reproduces those questions' counts only if the
        // per-question seed depends on the absolute index, so check identity
        // via a permuted copy scored question by question.
        let c = evaluate(&model, &insts[..3], 4, 0.7, 42, SeConvention::Population).unwrap();
        for (x, y) in c.per_question.iter().zip(&a.per_question[..3]) {
            assert_eq!(x.correct, y.correct);
        }
    }

    #[test]
    fn gain_loss_hand_values() {
        let r = gain_loss(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert_eq!(r.total_gain, 0.25);
        assert_eq!(r.total_loss, 0.25);
        assert_eq!(r.net_gain, 0.0);

        let r = gain_loss(&[0.25, 0.5], &[0.25, 0.5]).unwrap();
        assert_eq!(r, GainLossReport { total_gain: 0.0, total_loss: 0.0, net_gain: 0.0 });

        let r = gain_loss(&[0.0, 0.25, 0.5], &[0.25, 0.5, 0.75]).unwrap();
        assert_eq!(r.total_gain, 0.25);
        assert_eq!(r.total_loss, 0.0);
        assert_eq!(r.net_gain, 0.25);

        assert!(gain_loss(&[0.5], &[0.5, 0.5]).is_err());
        assert!(gain_loss(&[], &[]).is_err());
    }

    #[test]
    fn net_gain_equals_pass1_difference() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.gen_range(2..30);
            let before: Vec<f64> = (0..n).map(|_| rng.gen_range(0..=8) as f64 / 8.0).collect();
            let after: Vec<f64> = (0..n).map(|_| rng.gen_range(0..=8) as f64 / 8.0).collect();
            let r = gain_loss(&before, &after).unwrap();
            let d = after.iter().sum::<f64>() / n as f64 - before.iter().sum::<f64>() / n as f64;
            assert!((r.net_gain - d).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_jsonl_round_trip() {
        let (insts, layout) = instances(4);
        let result = evaluate_with(
            |inst, _t, _rng| Ok(inst.gold_completion(layout)),
            &insts,
            layout,
            2,
            0.7,
            9,
            SeConvention::Population,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eval.jsonl");
        write_eval_jsonl(&path, &result).unwrap();
        let loaded = read_eval_jsonl(&path).unwrap();
        assert_eq!(loaded, result.per_question);
    }
}
