//! Synthetic entangled-trajectory tasks and preference-pair construction.
//!
//! Each task is a modular-addition query `a ⊕ b (mod m) =`. A completion
//! follows the template `boilerplate ⊕ answer ⊕ STOP`, where the boilerplate
//! is a fixed filler prefix shared by every completion of the instance. Its
//! length is chosen so any two completions of one instance overlap by at
//! least the fraction ρ, which is the knob that controls how entangled the
//! preferred and dispreferred trajectories are.
//!
//! Pairs are built by sampling K completions per instance from the frozen
//! reference, labeling them by exact answer-token match, discarding
//! instances whose samples are all correct or all incorrect, and crossing
//! every correct completion with every incorrect one.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{derive_seed, FrozenReference, TinyLm, Token};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Reserved (non-digit) tokens, placed at the top of the vocabulary.
pub const RESERVED_TOKENS: usize = 5;

/// Positions of the special tokens for a given vocabulary size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenLayout {
    pub vocab: usize,
}

impl TokenLayout {
    pub fn new(vocab: usize) -> Self {
        Self { vocab }
    }

    /// End-of-completion marker.
    pub fn stop(&self) -> Token {
        self.vocab - 1
    }

    /// The `=` of the query.
    pub fn equals(&self) -> Token {
        self.vocab - 2
    }

    /// The `⊕` of the query.
    pub fn operator(&self) -> Token {
        self.vocab - 3
    }

    /// Alternating boilerplate filler tokens.
    pub fn filler(&self, i: usize) -> Token {
        if i % 2 == 0 {
            self.vocab - 4
        } else {
            self.vocab - 5
        }
    }

    /// Largest modulus whose digits fit below the reserved tokens.
    pub fn max_modulus(&self) -> usize {
        self.vocab.saturating_sub(RESERVED_TOKENS)
    }
}

/// One synthetic question with its unique gold answer.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskInstance {
    /// `[a, ⊕, b, =]`
    pub prompt: Vec<Token>,
    /// Single digit token `(a + b) mod m`.
    pub gold: Vec<Token>,
    /// Shared completion prefix (filler tokens).
    pub boilerplate: Vec<Token>,
    /// Overlap knob this instance was built with.
    pub rho: f64,
}

impl TaskInstance {
    /// Build the instance for `a ⊕ b (mod m)` at overlap ρ.
    pub fn new(a: usize, b: usize, modulus: usize, rho: f64, layout: TokenLayout) -> Result<Self> {
        if modulus < 2 || modulus > layout.max_modulus() {
            return Err(Error::Data(format!(
                "modulus {modulus} needs a vocabulary of at least {}, got {}",
                modulus + RESERVED_TOKENS,
                layout.vocab
            )));
        }
        if a >= modulus || b >= modulus {
            return Err(Error::Data(format!(
                "operands {a}, {b} out of range for modulus {modulus}"
            )));
        }
        let boiler_len = boilerplate_len(rho)?;
        let boilerplate = (0..boiler_len).map(|i| layout.filler(i)).collect();
        Ok(Self {
            prompt: vec![a, layout.operator(), b, layout.equals()],
            gold: vec![(a + b) % modulus],
            boilerplate,
            rho,
        })
    }

    /// Completion length implied by the template.
    pub fn completion_len(&self) -> usize {
        self.boilerplate.len() + 2
    }

    /// `boilerplate ⊕ answer ⊕ STOP` for an arbitrary answer token.
    pub fn completion_with_answer(&self, answer: Token, layout: TokenLayout) -> Vec<Token> {
        let mut y = self.boilerplate.clone();
        y.push(answer);
        y.push(layout.stop());
        y
    }

    /// The gold completion.
    pub fn gold_completion(&self, layout: TokenLayout) -> Vec<Token> {
        self.completion_with_answer(self.gold[0], layout)
    }

    /// Extract the answer token if `completion` matches the template.
    pub fn decode_answer(&self, completion: &[Token], layout: TokenLayout) -> Option<Token> {
        let nb = self.boilerplate.len();
        if completion.len() != nb + 2
            || completion[..nb] != self.boilerplate[..]
            || completion[nb + 1] != layout.stop()
        {
            return None;
        }
        Some(completion[nb])
    }

    /// Exact-token-match grading.
    pub fn is_correct(&self, completion: &[Token], layout: TokenLayout) -> bool {
        self.decode_answer(completion, layout) == Some(self.gold[0])
    }
}

/// Smallest boilerplate length with `nb / (nb + 2) ≥ ρ`.
fn boilerplate_len(rho: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::Data(format!("overlap ρ must be in [0, 1), got {rho}")));
    }
    Ok(((2.0 * rho / (1.0 - rho)) - 1e-9).ceil().max(0.0) as usize)
}

/// One prompt with a preferred and a dispreferred trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair<T> {
    pub prompt: Vec<Token>,
    pub chosen: Vec<Token>,
    pub rejected: Vec<Token>,
    /// Reference logit rows scoring each chosen token, shape `[|y_w| × V]`.
    pub ref_logits_chosen: Option<Tensor<T>>,
    /// Reference logit rows scoring each rejected token, shape `[|y_l| × V]`.
    pub ref_logits_rejected: Option<Tensor<T>>,
}

impl<T: Real> PreferencePair<T> {
    pub fn new(prompt: Vec<Token>, chosen: Vec<Token>, rejected: Vec<Token>) -> Self {
        Self {
            prompt,
            chosen,
            rejected,
            ref_logits_chosen: None,
            ref_logits_rejected: None,
        }
    }
}

/// Train/validation partition of a pair set.
#[derive(Debug, Clone)]
pub struct DatasetSplit<T> {
    pub train: Vec<PreferencePair<T>>,
    pub validation: Vec<PreferencePair<T>>,
}

/// Outcome counts of the pair-construction pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PipelineStats {
    pub instances: usize,
    pub kept_instances: usize,
    pub discarded_instances: usize,
    pub pairs: usize,
}

/// Deterministically generate `count` task instances.
pub fn generate_instances(
    count: usize,
    modulus: usize,
    rho: f64,
    seed: u64,
    layout: TokenLayout,
) -> Result<Vec<TaskInstance>> {
    if count == 0 {
        return Err(Error::Data("instance count must be ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let a = rng.gen_range(0..modulus);
        let b = rng.gen_range(0..modulus);
        out.push(TaskInstance::new(a, b, modulus, rho, layout)?);
    }
    Ok(out)
}

/// Sample one templated completion for `inst` from a model: the
/// boilerplate is forced, the answer slot is drawn at `temperature`, and
/// the STOP token closes the trajectory.
pub fn sample_instance_completion<T: Real>(
    model: &TinyLm<T>,
    inst: &TaskInstance,
    temperature: f64,
    layout: TokenLayout,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Token>> {
    let mut context = inst.prompt.clone();
    context.extend_from_slice(&inst.boilerplate);
    let sampled = model.sample_completion(&context, temperature, 1, layout.stop(), rng)?;
    let mut y = inst.boilerplate.clone();
    y.push(sampled[0]);
    y.push(layout.stop());
    Ok(y)
}

/// Cross every correct completion with every incorrect one, up to `cap`
/// pairs. Instances whose samples are all correct or all incorrect yield
/// nothing.
pub fn pairs_from_labeled(
    labeled: &[(Vec<Token>, bool)],
    cap: Option<usize>,
) -> Vec<(Vec<Token>, Vec<Token>)> {
    let correct: Vec<&Vec<Token>> = labeled.iter().filter(|(_, ok)| *ok).map(|(y, _)| y).collect();
    let incorrect: Vec<&Vec<Token>> =
        labeled.iter().filter(|(_, ok)| !*ok).map(|(y, _)| y).collect();
    if correct.is_empty() || incorrect.is_empty() {
        return Vec::new();
    }
    let limit = cap.unwrap_or(usize::MAX);
    let mut out = Vec::new();
    'outer: for w in &correct {
        for l in &incorrect {
            if out.len() >= limit {
                break 'outer;
            }
            out.push(((*w).clone(), (*l).clone()));
        }
    }
    out
}

/// Build preference pairs by K-sampling each instance from the reference.
///
/// Per-instance RNGs are derived from `(seed, instance index)` and results
/// are merged in index order, so the output is order-deterministic.
pub fn build_preference_pairs<T: Real>(
    reference: &FrozenReference<T>,
    instances: &[TaskInstance],
    k: usize,
    temperature: f64,
    seed: u64,
    cap_per_instance: Option<usize>,
    layout: TokenLayout,
) -> Result<(Vec<PreferencePair<T>>, PipelineStats)> {
    if k < 2 {
        return Err(Error::Data(format!("need K ≥ 2 samples per instance, got {k}")));
    }
    let mut pairs = Vec::new();
    let mut stats = PipelineStats {
        instances: instances.len(),
        ..Default::default()
    };
    for (i, inst) in instances.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
        let mut labeled = Vec::with_capacity(k);
        for _ in 0..k {
            let y = sample_instance_completion(reference.model(), inst, temperature, layout, &mut rng)?;
            let ok = inst.is_correct(&y, layout);
            labeled.push((y, ok));
        }
        let crossed = pairs_from_labeled(&labeled, cap_per_instance);
        if crossed.is_empty() {
            stats.discarded_instances += 1;
            continue;
        }
        stats.kept_instances += 1;
        for (chosen, rejected) in crossed {
            pairs.push(PreferencePair::new(inst.prompt.clone(), chosen, rejected));
        }
    }
    stats.pairs = pairs.len();
    Ok((pairs, stats))
}

/// Longest-common-prefix fraction relative to the longer trajectory.
pub fn token_overlap(a: &[Token], b: &[Token]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Data("token_overlap of an empty trajectory".into()));
    }
    let lcp = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    Ok(lcp as f64 / a.len().max(b.len()) as f64)
}

/// Fill in `ref_logits_chosen` / `ref_logits_rejected` with the reference's
/// per-position logit rows. Cached rows equal a fresh reference forward
/// pass bit for bit.
pub fn cache_reference_logits<T: Real>(
    reference: &FrozenReference<T>,
    pairs: &mut [PreferencePair<T>],
) -> Result<()> {
    for pair in pairs.iter_mut() {
        pair.ref_logits_chosen = Some(reference_logit_rows(reference, &pair.prompt, &pair.chosen)?);
        pair.ref_logits_rejected =
            Some(reference_logit_rows(reference, &pair.prompt, &pair.rejected)?);
    }
    Ok(())
}

/// Reference logit rows scoring each completion token, `[|y| × V]`.
pub fn reference_logit_rows<T: Real>(
    reference: &FrozenReference<T>,
    prompt: &[Token],
    completion: &[Token],
) -> Result<Tensor<T>> {
    let graph = crate::graph::Graph::new();
    let bound = reference.model().bind(&graph);
    Ok(bound.completion_logit_rows(prompt, completion)?.value())
}

/// Seeded uniform 5%-style holdout. The validation size is
/// `round(fraction · N)`; both halves keep the original order.
pub fn split_validation<T: Real>(
    pairs: &[PreferencePair<T>],
    fraction: f64,
    seed: u64,
) -> Result<DatasetSplit<T>> {
    if !(0.0..1.0).contains(&fraction) || fraction == 0.0 {
        return Err(Error::Data(format!(
            "validation fraction must be in (0, 1), got {fraction}"
        )));
    }
    if pairs.len() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 pairs to split, got {}",
            pairs.len()
        )));
    }
    let n_val = (fraction * pairs.len() as f64).round() as usize;
    let mut indices: Vec<usize> = (0..pairs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Partial Fisher–Yates: the first n_val slots become the holdout.
    for i in 0..n_val.min(pairs.len() - 1) {
        let j = rng.gen_range(i..pairs.len());
        indices.swap(i, j);
    }
    let mut val_set = vec![false; pairs.len()];
    for &i in &indices[..n_val] {
        val_set[i] = true;
    }
    let mut split = DatasetSplit {
        train: Vec::with_capacity(pairs.len() - n_val),
        validation: Vec::with_capacity(n_val),
    };
    for (i, p) in pairs.iter().enumerate() {
        if val_set[i] {
            split.validation.push(p.clone());
        } else {
            split.train.push(p.clone());
        }
    }
    Ok(split)
}

/// Rebuild the evaluation question behind a pair: the chosen trajectory
/// decodes to the gold answer, so prompt + template come straight back.
pub fn instance_from_pair<T: Real>(pair: &PreferencePair<T>, rho: f64) -> TaskInstance {
    let n = pair.chosen.len();
    TaskInstance {
        prompt: pair.prompt.clone(),
        gold: vec![pair.chosen[n - 2]],
        boilerplate: pair.chosen[..n - 2].to_vec(),
        rho,
    }
}

/// Unique evaluation questions behind a pair set, first-seen order.
pub fn instances_from_pairs<T: Real>(pairs: &[PreferencePair<T>], rho: f64) -> Vec<TaskInstance> {
    let mut seen: Vec<TaskInstance> = Vec::new();
    for pair in pairs {
        let inst = instance_from_pair(pair, rho);
        if !seen.iter().any(|s| s.prompt == inst.prompt && s.gold == inst.gold) {
            seen.push(inst);
        }
    }
    seen
}

#[derive(Serialize, Deserialize)]
struct PairRecord {
    prompt: Vec<Token>,
    chosen: Vec<Token>,
    rejected: Vec<Token>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    ref_logits_chosen: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    ref_logits_rejected: Option<Vec<Vec<f64>>>,
}

fn tensor_to_rows<T: Real>(t: &Tensor<T>) -> Vec<Vec<f64>> {
    (0..t.rows())
        .map(|r| t.row(r).iter().map(|&v| v.as_f64()).collect())
        .collect()
}

fn rows_to_tensor<T: Real>(rows: &[Vec<f64>]) -> Result<Tensor<T>> {
    if rows.is_empty() {
        return Err(Error::Data("empty logit row list".into()));
    }
    let cols = rows[0].len();
    let mut data = Vec::with_capacity(rows.len() * cols);
    for row in rows {
        if row.len() != cols {
            return Err(Error::Data("ragged logit rows".into()));
        }
        data.extend(row.iter().map(|&v| T::from_f64_c(v)));
    }
    Tensor::new(vec![rows.len(), cols], data)
}

/// Write pairs as JSONL (UTF-8, LF): keys `prompt`, `chosen`, `rejected`,
/// and the optional `ref_logits_*` arrays.
pub fn write_pairs_jsonl<T: Real>(path: &Path, pairs: &[PreferencePair<T>]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    for pair in pairs {
        let record = PairRecord {
            prompt: pair.prompt.clone(),
            chosen: pair.chosen.clone(),
            rejected: pair.rejected.clone(),
            ref_logits_chosen: pair.ref_logits_chosen.as_ref().map(tensor_to_rows),
            ref_logits_rejected: pair.ref_logits_rejected.as_ref().map(tensor_to_rows),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_pairs_jsonl<T: Real>(path: &Path) -> Result<Vec<PreferencePair<T>>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut pairs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PairRecord = serde_json::from_str(&line).map_err(|e| {
            Error::Data(format!("line {}: malformed pair record: {e}", lineno + 1))
        })?;
        let mut pair = PreferencePair::new(record.prompt, record.chosen, record.rejected);
        if let Some(rows) = &record.ref_logits_chosen {
            pair.ref_logits_chosen = Some(rows_to_tensor(rows)?);
        }
        if let Some(rows) = &record.ref_logits_rejected {
            pair.ref_logits_rejected = Some(rows_to_tensor(rows)?);
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LmConfig, TinyLm};

    fn layout() -> TokenLayout {
        TokenLayout::new(16)
    }

    fn reference() -> FrozenReference<f64> {
        TinyLm::init(LmConfig::new(16, 32, 8), 42).freeze()
    }

    #[test]
    fn gold_answer_is_modular_sum() {
        let inst = TaskInstance::new(3, 5, 7, 0.0, layout()).unwrap();
        assert_eq!(inst.gold, vec![1]); // (3 + 5) mod 7
        assert_eq!(inst.prompt, vec![3, layout().operator(), 5, layout().equals()]);
    }

    #[test]
    fn rho_zero_has_no_boilerplate() {
        let inst = TaskInstance::new(1, 2, 7, 0.0, layout()).unwrap();
        assert!(inst.boilerplate.is_empty());
        assert_eq!(inst.completion_len(), 2);
        let y = inst.gold_completion(layout());
        assert_eq!(y, vec![3, layout().stop()]);
    }

    #[test]
    fn boilerplate_lengths_hit_overlap_targets() {
        for (rho, expect) in [(0.0, 0), (0.25, 1), (0.5, 2), (0.75, 6)] {
            assert_eq!(boilerplate_len(rho).unwrap(), expect, "rho = {rho}");
            let nb = expect as f64;
            assert!(nb / (nb + 2.0) >= rho - 1e-12);
        }
        assert!(boilerplate_len(1.0).is_err());
    }

    #[test]
    fn generated_instances_verify_against_arithmetic() {
        let layout = layout();
        let instances = generate_instances(50, 7, 0.5, 42, layout).unwrap();
        assert_eq!(instances.len(), 50);
        for inst in &instances {
            let a = inst.prompt[0];
            let b = inst.prompt[2];
            assert_eq!(inst.gold[0], (a + b) % 7);
        }
        // Deterministic under the seed.
        let again = generate_instances(50, 7, 0.5, 42, layout).unwrap();
        assert_eq!(instances, again);
    }

    #[test]
    fn vocabulary_too_small_rejected() {
        let tiny = TokenLayout::new(8);
        assert!(TaskInstance::new(0, 1, 7, 0.0, tiny).is_err()); // 7 > 8-5
        assert!(TaskInstance::new(0, 1, 3, 0.0, tiny).is_ok());
    }

    #[test]
    fn pairing_rules() {
        let y = |tag: Token| vec![tag, 15];
        // all correct → discarded
        let all_ok = vec![(y(0), true), (y(1), true), (y(2), true)];
        assert!(pairs_from_labeled(&all_ok, None).is_empty());
        // all incorrect → discarded
        let all_bad = vec![(y(0), false), (y(1), false)];
        assert!(pairs_from_labeled(&all_bad, None).is_empty());
        // 1 correct, 1 incorrect → exactly one pair
        let one_each = vec![(y(0), true), (y(1), false)];
        assert_eq!(pairs_from_labeled(&one_each, None).len(), 1);
        // 2 correct, 3 incorrect → all six cross pairs
        let mixed = vec![
            (y(0), true),
            (y(1), true),
            (y(2), false),
            (y(3), false),
            (y(4), false),
        ];
        assert_eq!(pairs_from_labeled(&mixed, None).len(), 6);
        // cap bounds the blowup
        assert_eq!(pairs_from_labeled(&mixed, Some(4)).len(), 4);
    }

    #[test]
    fn emitted_pairs_satisfy_label_contract() {
        let layout = layout();
        let reference = reference();
        let instances = generate_instances(30, 7, 0.5, 1, layout).unwrap();
        let (pairs, stats) =
            build_preference_pairs(&reference, &instances, 8, 0.7, 42, None, layout).unwrap();
        assert_eq!(stats.kept_instances + stats.discarded_instances, 30);
        assert_eq!(stats.pairs, pairs.len());
        assert!(!pairs.is_empty(), "sampling produced no pairs");
        for pair in &pairs {
            let inst = instance_from_pair(pair, 0.5);
            assert!(inst.is_correct(&pair.chosen, layout));
            assert!(!inst.is_correct(&pair.rejected, layout));
        }
    }

    #[test]
    fn token_overlap_examples() {
        assert_eq!(token_overlap(&[0, 1, 2, 3], &[0, 1, 8, 9]).unwrap(), 0.5);
        assert_eq!(token_overlap(&[4, 5], &[4, 5]).unwrap(), 1.0);
        assert_eq!(token_overlap(&[1], &[2]).unwrap(), 0.0);
        assert!(token_overlap(&[], &[1]).is_err());
    }

    #[test]
    fn mean_overlap_nondecreasing_in_rho() {
        let layout = layout();
        let reference = reference();
        let mut means = Vec::new();
        for rho in [0.0, 0.25, 0.5, 0.75] {
            let instances = generate_instances(20, 7, rho, 42, layout).unwrap();
            let (pairs, _) =
                build_preference_pairs(&reference, &instances, 6, 0.9, 42, None, layout).unwrap();
            assert!(!pairs.is_empty());
            let mean: f64 = pairs
                .iter()
                .map(|p| token_overlap(&p.chosen, &p.rejected).unwrap())
                .sum::<f64>()
                / pairs.len() as f64;
            means.push(mean);
        }
        for w in means.windows(2) {
            assert!(w[1] >= w[0], "means not monotone: {means:?}");
        }
    }

    #[test]
    fn cached_logits_match_fresh_forward_bitwise() {
        let layout = layout();
        let reference = reference();
        let instances = generate_instances(6, 7, 0.5, 3, layout).unwrap();
        let (mut pairs, _) =
            build_preference_pairs(&reference, &instances, 4, 0.9, 7, None, layout).unwrap();
        assert!(!pairs.is_empty());
        cache_reference_logits(&reference, &mut pairs).unwrap();
        for pair in &pairs {
            let fresh = reference_logit_rows(&reference, &pair.prompt, &pair.chosen).unwrap();
            assert_eq!(pair.ref_logits_chosen.as_ref().unwrap(), &fresh);
            let fresh_l = reference_logit_rows(&reference, &pair.prompt, &pair.rejected).unwrap();
            assert_eq!(pair.ref_logits_rejected.as_ref().unwrap(), &fresh_l);
        }
    }

    #[test]
    fn split_sizes_and_partition() {
        let pairs: Vec<PreferencePair<f64>> = (0..100)
            .map(|i| PreferencePair::new(vec![i, 0, 1, 2], vec![3, 15], vec![4, 15]))
            .collect();
        let split = split_validation(&pairs, 0.05, 42).unwrap();
        assert_eq!(split.validation.len(), 5);
        assert_eq!(split.train.len(), 95);
        // Union equals the input multiset (here: check prompts as ids).
        let mut ids: Vec<usize> = split
            .train
            .iter()
            .chain(&split.validation)
            .map(|p| p.prompt[0])
            .collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..100).collect::<Vec<_>>());

        let forty: Vec<PreferencePair<f64>> = pairs[..40].to_vec();
        let split = split_validation(&forty, 0.05, 1).unwrap();
        assert_eq!(split.validation.len(), 2);

        assert!(split_validation(&pairs[..1], 0.05, 1).is_err());
    }

    #[test]
    fn split_is_seed_deterministic() {
        let pairs: Vec<PreferencePair<f64>> = (0..50)
            .map(|i| PreferencePair::new(vec![i], vec![3, 15], vec![4, 15]))
            .collect();
        let a = split_validation(&pairs, 0.1, 7).unwrap();
        let b = split_validation(&pairs, 0.1, 7).unwrap();
        let ids = |ps: &[PreferencePair<f64>]| ps.iter().map(|p| p.prompt[0]).collect::<Vec<_>>();
        assert_eq!(ids(&a.validation), ids(&b.validation));
        let c = split_validation(&pairs, 0.1, 8).unwrap();
        assert_ne!(ids(&a.validation), ids(&c.validation));
    }

    #[test]
    fn jsonl_round_trip_and_determinism() {
        let layout = layout();
        let reference = reference();
        let instances = generate_instances(8, 7, 0.25, 5, layout).unwrap();
        let (mut pairs, _) =
            build_preference_pairs(&reference, &instances, 4, 0.9, 11, None, layout).unwrap();
        cache_reference_logits(&reference, &mut pairs).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.jsonl");
        let p2 = dir.path().join("b.jsonl");
        write_pairs_jsonl(&p1, &pairs).unwrap();
        write_pairs_jsonl(&p2, &pairs).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

        let loaded: Vec<PreferencePair<f64>> = read_pairs_jsonl(&p1).unwrap();
        assert_eq!(loaded, pairs); // f64 JSON round-trip is exact
    }

    #[test]
    fn instances_from_pairs_dedups() {
        let pair = PreferencePair::<f64>::new(vec![1, 13, 2, 14], vec![6, 3, 15], vec![6, 4, 15]);
        let other = PreferencePair::<f64>::new(vec![2, 13, 2, 14], vec![6, 4, 15], vec![6, 0, 15]);
        let insts = instances_from_pairs(&[pair.clone(), pair.clone(), other], 0.25);
        assert_eq!(insts.len(), 2);
        assert_eq!(insts[0].gold, vec![3]);
        assert_eq!(insts[0].boilerplate, vec![6]);
    }
}
