//! Tiny autoregressive token model.
//!
//! The policy is a 2-layer gated MLP with residual connections applied to a
//! causal prefix-mean of token + position embeddings:
//!
//! ```text
//! E  = tok_emb[y] + pos_emb[0..T]          [T × d]
//! C  = M E            (M lower-triangular row-averaging, constant)
//! H1 = C  + sigmoid(C W_g1)  ⊙ (C W_v1)
//! H2 = H1 + sigmoid(H1 W_g2) ⊙ (H1 W_v2)
//! logits = H2 W_out                         [T × V]
//! ```
//!
//! Row t of `C` depends only on positions ≤ t, so the logits at position t
//! are a function of tokens 0..=t (causality). Every forward pass — training,
//! scoring, sampling — goes through the same recorded-graph path, so cached
//! and recomputed logits agree bit for bit.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{Graph, Value};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Token id. Valid ids are `0..vocab`.
pub type Token = usize;

/// Magic bytes of the checkpoint format.
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TLM1";

/// Model dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LmConfig {
    /// Vocabulary size V (≤ 64).
    pub vocab: usize,
    /// Maximum context length T_max (≤ 64).
    pub context: usize,
    /// Hidden width d.
    pub dim: usize,
}

impl LmConfig {
    pub fn new(vocab: usize, context: usize, dim: usize) -> Self {
        Self {
            vocab,
            context,
            dim,
        }
    }

    /// Laboratory default: V=16, T_max=32, d=32.
    pub fn default_desk() -> Self {
        Self::new(16, 32, 32)
    }
}

/// Names of the parameter tensors, in canonical (checkpoint) order.
pub const PARAM_NAMES: [&str; 7] = [
    "tok_emb", "pos_emb", "w_gate1", "w_val1", "w_gate2", "w_val2", "w_out",
];

/// Trainable autoregressive policy π_θ.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyLm<T> {
    cfg: LmConfig,
    tok_emb: Tensor<T>,
    pos_emb: Tensor<T>,
    w_gate1: Tensor<T>,
    w_val1: Tensor<T>,
    w_gate2: Tensor<T>,
    w_val2: Tensor<T>,
    w_out: Tensor<T>,
}

impl<T: Real> TinyLm<T> {
    /// All parameters zero.
    pub fn zeros(cfg: LmConfig) -> Self {
        let d = cfg.dim;
        Self {
            cfg,
            tok_emb: Tensor::zeros(vec![cfg.vocab, d]),
            pos_emb: Tensor::zeros(vec![cfg.context, d]),
            w_gate1: Tensor::zeros(vec![d, d]),
            w_val1: Tensor::zeros(vec![d, d]),
            w_gate2: Tensor::zeros(vec![d, d]),
            w_val2: Tensor::zeros(vec![d, d]),
            w_out: Tensor::zeros(vec![d, cfg.vocab]),
        }
    }

    /// Gaussian init (mean 0, std 0.02), fully determined by `seed`.
    pub fn init(cfg: LmConfig, seed: u64) -> Self {
        let mut model = Self::zeros(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f64, 0.02).expect("valid std");
        for p in model.params_mut() {
            for v in p.data_mut() {
                *v = T::from_f64_c(normal.sample(&mut rng));
            }
        }
        model
    }

    pub fn cfg(&self) -> LmConfig {
        self.cfg
    }

    /// Parameters in canonical order.
    pub fn params(&self) -> [&Tensor<T>; 7] {
        [
            &self.tok_emb,
            &self.pos_emb,
            &self.w_gate1,
            &self.w_val1,
            &self.w_gate2,
            &self.w_val2,
            &self.w_out,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor<T>; 7] {
        [
            &mut self.tok_emb,
            &mut self.pos_emb,
            &mut self.w_gate1,
            &mut self.w_val1,
            &mut self.w_gate2,
            &mut self.w_val2,
            &mut self.w_out,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    /// Flattened copy of all parameters, canonical order.
    pub fn flat_params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for p in self.params() {
            out.extend_from_slice(p.data());
        }
        out
    }

    /// Overwrite all parameters from a flat slice, canonical order.
    pub fn set_flat_params(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut off = 0;
        for p in self.params_mut() {
            let n = p.numel();
            p.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    fn check_tokens(&self, tokens: &[Token]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Token("empty token sequence".into()));
        }
        if tokens.len() > self.cfg.context {
            return Err(Error::Token(format!(
                "sequence length {} exceeds context {}",
                tokens.len(),
                self.cfg.context
            )));
        }
        for &t in tokens {
            if t >= self.cfg.vocab {
                return Err(Error::Token(format!(
                    "token {t} out of range for vocab {}",
                    self.cfg.vocab
                )));
            }
        }
        Ok(())
    }

    /// Insert the parameters into `graph` as leaves and return the bound
    /// model used for differentiable forward passes.
    pub fn bind(&self, graph: &Graph<T>) -> BoundLm<T> {
        BoundLm {
            cfg: self.cfg,
            params: self.params().map(|p| graph.leaf(p.clone())),
            graph: graph.clone(),
        }
    }

    /// Next-token logits for every position, as a plain tensor.
    pub fn logits(&self, tokens: &[Token]) -> Result<Tensor<T>> {
        self.check_tokens(tokens)?;
        let graph = Graph::new();
        let bound = self.bind(&graph);
        Ok(bound.forward_logits(tokens)?.value())
    }

    /// log π_θ(completion | prompt) as a plain scalar.
    pub fn sequence_logprob_plain(&self, prompt: &[Token], completion: &[Token]) -> Result<T> {
        let graph = Graph::new();
        let bound = self.bind(&graph);
        Ok(bound.sequence_logprob(prompt, completion)?.item())
    }

    /// Sample tokens autoregressively after `prompt`. Stops after emitting
    /// `stop` (included in the output) or after `max_len` tokens.
    /// Temperatures below 1e-6 mean greedy (argmax) decoding.
    pub fn sample_completion(
        &self,
        prompt: &[Token],
        temperature: f64,
        max_len: usize,
        stop: Token,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Token>> {
        if temperature <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let mut context = prompt.to_vec();
        let mut out = Vec::new();
        while out.len() < max_len {
            let logits = self.logits(&context)?;
            let last = logits.row(logits.rows() - 1);
            let tok = sample_index(last, temperature, rng);
            out.push(tok);
            if tok == stop {
                break;
            }
            if context.len() == self.cfg.context {
                break; // context exhausted
            }
            context.push(tok);
        }
        Ok(out)
    }

    /// Snapshot the current parameters as an immutable reference policy.
    pub fn freeze(&self) -> FrozenReference<T> {
        FrozenReference(self.clone())
    }

    /// Write the checkpoint: magic "TLM1", then V, T_max, d as u32 LE,
    /// then all parameters as f64 LE in canonical order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(16 + self.param_count() * 8);
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        for dim in [self.cfg.vocab, self.cfg.context, self.cfg.dim] {
            buf.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for p in self.params() {
            for &v in p.data() {
                buf.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 16 || &bytes[0..4] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!(
                "{} is not a TLM1 checkpoint",
                path.display()
            )));
        }
        let dim_at = |i: usize| {
            let mut b = [0u8; 4];
            b.copy_from_slice(&bytes[4 + 4 * i..8 + 4 * i]);
            u32::from_le_bytes(b) as usize
        };
        let cfg = LmConfig::new(dim_at(0), dim_at(1), dim_at(2));
        let mut model = Self::zeros(cfg);
        let expected = 16 + model.param_count() * 8;
        if bytes.len() != expected {
            return Err(Error::Checkpoint(format!(
                "expected {} bytes for {:?}, found {}",
                expected,
                cfg,
                bytes.len()
            )));
        }
        let mut off = 16;
        for p in model.params_mut() {
            for v in p.data_mut() {
                let mut b = [0u8; 8];
                b.copy_from_slice(&bytes[off..off + 8]);
                *v = T::from_f64_c(f64::from_le_bytes(b));
                off += 8;
            }
        }
        Ok(model)
    }
}

/// Frozen copy of a [`TinyLm`] serving as the reference policy π_ref.
/// It exposes only read paths; nothing can update its parameters.
#[derive(Debug, Clone)]
pub struct FrozenReference<T>(TinyLm<T>);

impl<T: Real> FrozenReference<T> {
    pub fn model(&self) -> &TinyLm<T> {
        &self.0
    }

    pub fn cfg(&self) -> LmConfig {
        self.0.cfg
    }

    pub fn logits(&self, tokens: &[Token]) -> Result<Tensor<T>> {
        self.0.logits(tokens)
    }

    pub fn sequence_logprob(&self, prompt: &[Token], completion: &[Token]) -> Result<T> {
        self.0.sequence_logprob_plain(prompt, completion)
    }

    pub fn sample_completion(
        &self,
        prompt: &[Token],
        temperature: f64,
        max_len: usize,
        stop: Token,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Token>> {
        self.0
            .sample_completion(prompt, temperature, max_len, stop, rng)
    }
}

/// A [`TinyLm`] whose parameters live as leaves of a recording graph.
pub struct BoundLm<T> {
    cfg: LmConfig,
    params: [Value<T>; 7],
    graph: Graph<T>,
}

impl<T: Real> BoundLm<T> {
    /// Parameter leaves in canonical order (for gradient collection).
    pub fn param_values(&self) -> &[Value<T>; 7] {
        &self.params
    }

    pub fn graph(&self) -> &Graph<T> {
        &self.graph
    }

    pub fn cfg(&self) -> LmConfig {
        self.cfg
    }

    /// Next-token logits: row t conditions on tokens 0..=t.
    pub fn forward_logits(&self, tokens: &[Token]) -> Result<Value<T>> {
        if tokens.is_empty() {
            return Err(Error::Token("empty token sequence".into()));
        }
        if tokens.len() > self.cfg.context {
            return Err(Error::Token(format!(
                "sequence length {} exceeds context {}",
                tokens.len(),
                self.cfg.context
            )));
        }
        for &t in tokens {
            if t >= self.cfg.vocab {
                return Err(Error::Token(format!(
                    "token {t} out of range for vocab {}",
                    self.cfg.vocab
                )));
            }
        }
        let [tok_emb, pos_emb, w_gate1, w_val1, w_gate2, w_val2, w_out] = &self.params;
        let len = tokens.len();
        let positions: Vec<usize> = (0..len).collect();
        let embedded = tok_emb
            .gather_rows(tokens)?
            .add(&pos_emb.gather_rows(&positions)?)?;
        let causal = self.graph.leaf(causal_mean_matrix(len));
        let ctx = causal.matmul(&embedded)?;
        let h1 = ctx.add(&gated_unit(&ctx, w_gate1, w_val1)?)?;
        let h2 = h1.add(&gated_unit(&h1, w_gate2, w_val2)?)?;
        h2.matmul(w_out)
    }

    /// log π_θ(completion | prompt): sum over completion positions of the
    /// realized token's log-softmax entry.
    pub fn sequence_logprob(&self, prompt: &[Token], completion: &[Token]) -> Result<Value<T>> {
        let logp = self.completion_log_probs(prompt, completion)?;
        Ok(logp.sum())
    }

    /// Per-position realized-token log-probabilities of the completion,
    /// shape `[completion.len()]`.
    pub fn completion_log_probs(
        &self,
        prompt: &[Token],
        completion: &[Token],
    ) -> Result<Value<T>> {
        let rows = self.completion_logit_rows(prompt, completion)?;
        let logp = rows.log_softmax()?;
        logp.take_per_row(completion)
    }

    /// The logit rows that score each completion token: row j is the
    /// next-token distribution that generated `completion[j]`. Shape
    /// `[completion.len() × V]`.
    pub fn completion_logit_rows(
        &self,
        prompt: &[Token],
        completion: &[Token],
    ) -> Result<Value<T>> {
        if completion.is_empty() {
            return Err(Error::Token("empty completion".into()));
        }
        if prompt.is_empty() {
            return Err(Error::Token(
                "empty prompt: the first completion token needs conditioning".into(),
            ));
        }
        let mut seq = Vec::with_capacity(prompt.len() + completion.len());
        seq.extend_from_slice(prompt);
        seq.extend_from_slice(completion);
        // Feed everything but the last token; row t predicts token t+1.
        let input = &seq[..seq.len() - 1];
        let logits = self.forward_logits(input)?;
        let start = prompt.len() - 1;
        let wanted: Vec<usize> = (start..start + completion.len()).collect();
        logits.gather_rows(&wanted)
    }
}

/// sigmoid(x W_gate) ⊙ (x W_val)
fn gated_unit<T: Real>(
    x: &Value<T>,
    w_gate: &Value<T>,
    w_val: &Value<T>,
) -> Result<Value<T>> {
    x.matmul(w_gate)?.sigmoid().mul(&x.matmul(w_val)?)
}

/// Lower-triangular matrix averaging each prefix: row t holds 1/(t+1) in
/// columns 0..=t.
fn causal_mean_matrix<T: Real>(len: usize) -> Tensor<T> {
    let mut data = vec![T::zero(); len * len];
    for t in 0..len {
        let w = T::one() / T::from_f64_c((t + 1) as f64);
        for s in 0..=t {
            data[t * len + s] = w;
        }
    }
    Tensor::new(vec![len, len], data).expect("square shape")
}

/// Draw an index from softmax(logits / temperature); greedy for
/// temperatures below 1e-6. Sampling happens in f64.
fn sample_index<T: Real>(logits: &[T], temperature: f64, rng: &mut ChaCha8Rng) -> usize {
    let scaled: Vec<f64> = logits.iter().map(|&l| l.as_f64() / temperature).collect();
    if temperature < 1e-6 {
        return argmax(&scaled);
    }
    let m = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scaled.iter().map(|&l| (l - m).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Deterministic per-item seed derivation (run seed + item index).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 of seed ⊕ golden-ratio-stepped index
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> LmConfig {
        LmConfig::new(8, 16, 6)
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let m = TinyLm::<f64>::zeros(small_cfg());
        let logits = m.logits(&[0, 3, 5]).unwrap();
        assert!(logits.iter().all(|&v| v == 0.0));
        assert_eq!(logits.shape(), &[3, 8]);
    }

    #[test]
    fn causality_under_token_perturbation() {
        let m = TinyLm::<f64>::init(small_cfg(), 7);
        let base = m.logits(&[1, 2, 3, 4, 5]).unwrap();
        let perturbed = m.logits(&[1, 2, 3, 7, 5]).unwrap();
        // Rows before the perturbed position are bit-identical.
        for t in 0..3 {
            assert_eq!(base.row(t), perturbed.row(t), "row {t} changed");
        }
        // The perturbed position itself must change.
        assert_ne!(base.row(3), perturbed.row(3));
    }

    #[test]
    fn forward_is_deterministic() {
        let m = TinyLm::<f64>::init(small_cfg(), 42);
        let a = m.logits(&[0, 1, 2]).unwrap();
        let b = m.logits(&[0, 1, 2]).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = TinyLm::<f64>::init(small_cfg(), 9);
        let b = TinyLm::<f64>::init(small_cfg(), 9);
        let c = TinyLm::<f64>::init(small_cfg(), 10);
        assert_eq!(a.flat_params(), b.flat_params());
        assert_ne!(a.flat_params(), c.flat_params());
    }

    #[test]
    fn uniform_model_logprob() {
        // All-zero parameters: every next-token distribution is uniform,
        // so a 3-token completion over V=4 scores -3 ln 4.
        let m = TinyLm::<f64>::zeros(LmConfig::new(4, 16, 6));
        let lp = m.sequence_logprob_plain(&[0], &[1, 2, 3]).unwrap();
        assert!((lp + 3.0 * 4.0f64.ln()).abs() < 1e-12, "lp = {lp}");
    }

    #[test]
    fn single_token_logprob_matches_row_entry() {
        let m = TinyLm::<f64>::init(small_cfg(), 3);
        let prompt = [1, 4];
        let completion = [6];
        let lp = m.sequence_logprob_plain(&prompt, &completion).unwrap();
        let logits = m.logits(&[1, 4]).unwrap();
        let g = Graph::<f64>::new();
        let row = g.vector(logits.row(1).to_vec());
        let expect = row.log_softmax().unwrap().value().data()[6];
        assert!((lp - expect).abs() < 1e-14);
    }

    #[test]
    fn completion_probabilities_normalize() {
        // Brute force over all V^|y| completions: total probability 1.
        let m = TinyLm::<f64>::init(LmConfig::new(3, 8, 5), 11);
        let prompt = [0, 1];
        let mut total = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    let lp = m.sequence_logprob_plain(&prompt, &[a, b, c]).unwrap();
                    total += lp.exp();
                }
            }
        }
        assert!((total - 1.0).abs() < 1e-10, "total = {total}");
    }

    #[test]
    fn logprob_chains_over_concatenation() {
        let m = TinyLm::<f64>::init(small_cfg(), 21);
        let prompt = vec![2, 3];
        let y1 = vec![1, 5];
        let y2 = vec![0, 7, 4];
        let joint: Vec<Token> = y1.iter().chain(&y2).cloned().collect();
        let lhs = m.sequence_logprob_plain(&prompt, &joint).unwrap();
        let first = m.sequence_logprob_plain(&prompt, &y1).unwrap();
        let longer: Vec<Token> = prompt.iter().chain(&y1).cloned().collect();
        let second = m.sequence_logprob_plain(&longer, &y2).unwrap();
        assert!((lhs - (first + second)).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_tokens_and_lengths() {
        let m = TinyLm::<f64>::init(small_cfg(), 1);
        assert!(m.logits(&[8]).is_err()); // out of vocab
        assert!(m.logits(&vec![0; 17]).is_err()); // too long
        assert!(m.sequence_logprob_plain(&[0], &[]).is_err()); // empty completion
        assert!(m.sequence_logprob_plain(&[], &[1]).is_err()); // empty prompt
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let m = TinyLm::<f64>::init(small_cfg(), 5);
        let mut r1 = ChaCha8Rng::seed_from_u64(99);
        let mut r2 = ChaCha8Rng::seed_from_u64(99);
        let a = m.sample_completion(&[1, 2], 0.7, 8, 7, &mut r1).unwrap();
        let b = m.sample_completion(&[1, 2], 0.7, 8, 7, &mut r2).unwrap();
        assert_eq!(a, b);
        assert!(!a.is_empty() && a.len() <= 8);
    }

    #[test]
    fn tiny_temperature_is_greedy() {
        let m = TinyLm::<f64>::init(small_cfg(), 13);
        let logits = m.logits(&[1, 2]).unwrap();
        let greedy = argmax(&logits.row(1).to_vec());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = m.sample_completion(&[1, 2], 1e-9, 1, 7, &mut rng).unwrap();
        assert_eq!(s, vec![greedy]);
    }

    #[test]
    fn uniform_sampling_frequencies() {
        // 10,000 single-token draws from the uniform (zero-parameter) model:
        // each frequency within 3σ of 1/V.
        let v = 8usize;
        let m = TinyLm::<f64>::zeros(LmConfig::new(v, 4, 4));
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 10_000;
        let mut counts = vec![0usize; v];
        for _ in 0..n {
            let s = m.sample_completion(&[0], 1.0, 1, v + 1, &mut rng).unwrap();
            counts[s[0]] += 1;
        }
        let p = 1.0 / v as f64;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        for (tok, &c) in counts.iter().enumerate() {
            let freq = c as f64 / n as f64;
            assert!(
                (freq - p).abs() <= 3.0 * sigma,
                "token {tok}: freq {freq} vs p {p} (3σ = {})",
                3.0 * sigma
            );
        }
    }

    #[test]
    fn freeze_preserves_logits_and_ignores_later_updates() {
        let mut m = TinyLm::<f64>::init(small_cfg(), 17);
        let frozen = m.freeze();
        let before = m.logits(&[0, 1]).unwrap();
        assert_eq!(frozen.logits(&[0, 1]).unwrap().data(), before.data());
        // log π_θ − log π_ref = 0 right after freezing.
        let lp = m.sequence_logprob_plain(&[0], &[1, 2]).unwrap();
        let lr = frozen.sequence_logprob(&[0], &[1, 2]).unwrap();
        assert_eq!(lp, lr);
        // Mutate the live model; the frozen copy must not move.
        for p in m.params_mut() {
            p.scale_assign(3.0);
        }
        assert_eq!(frozen.logits(&[0, 1]).unwrap().data(), before.data());
        assert_ne!(m.logits(&[0, 1]).unwrap().data(), before.data());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.tlm");
        let m = TinyLm::<f64>::init(small_cfg(), 23);
        m.save(&path).unwrap();
        let loaded = TinyLm::<f64>::load(&path).unwrap();
        assert_eq!(loaded.cfg(), m.cfg());
        assert_eq!(loaded.flat_params(), m.flat_params());
        // Header check: little-endian magic + dims.
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"TLM1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 8);
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tlm");
        std::fs::write(&path, b"NOPE....").unwrap();
        assert!(TinyLm::<f64>::load(&path).is_err());
    }

    #[test]
    fn derive_seed_spreads() {
        let a = derive_seed(42, 0);
        let b = derive_seed(42, 1);
        let c = derive_seed(43, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(42, 0));
    }
}
