//! Toy autoregressive policy: a linear-softmax head over a fixed context
//! feature.
//!
//! The context for step `t` concatenates the task features with one-hot
//! encodings of the `k` most recent tokens (most recent first, missing slots
//! all-zero), so `D = D_task + k * V`. Logits are `W . phi / temperature`
//! and every probability is computed through max-subtracted log-sum-exp;
//! log-probabilities, never raw probabilities, cross operation boundaries.
//!
//! Because the head is linear, the gradient of a sequence log-probability is
//! available in closed form: `sum_t (onehot(token_t) - p_t) (x) phi_t / temperature`.

use crate::error::{CoreError, Result};
use crate::rng::{namespace, Stream};
use crate::task::Task;
use crate::vocab::Vocabulary;

/// Flat policy parameters.
///
/// `w` stores the `V x D` weight matrix row-major; row `v` scores token `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub w: Vec<f64>,
    pub vocab_size: usize,
    /// History window length.
    pub k: usize,
    /// Task-feature dimension.
    pub d_task: usize,
}

impl PolicyParams {
    pub fn new(w: Vec<f64>, vocab_size: usize, k: usize, d_task: usize) -> Result<Self> {
        if vocab_size == 0 || k == 0 {
            return Err(CoreError::Config("vocab_size and k must be positive".into()));
        }
        let d = d_task + k * vocab_size;
        if w.len() != vocab_size * d {
            return Err(CoreError::Config(format!(
                "parameter vector has length {}, expected {} ({vocab_size} x {d})",
                w.len(),
                vocab_size * d
            )));
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(CoreError::Config("non-finite parameter entry".into()));
        }
        Ok(PolicyParams { w, vocab_size, k, d_task })
    }

    pub fn zeros(vocab_size: usize, k: usize, d_task: usize) -> Result<Self> {
        let d = d_task + k * vocab_size;
        PolicyParams::new(vec![0.0; vocab_size * d], vocab_size, k, d_task)
    }

    /// Context-feature dimension `D_task + k * V`.
    pub fn dim(&self) -> usize {
        self.d_task + self.k * self.vocab_size
    }

    pub fn row(&self, v: usize) -> &[f64] {
        let d = self.dim();
        &self.w[v * d..(v + 1) * d]
    }

    fn row_mut(&mut self, v: usize) -> &mut [f64] {
        let d = self.dim();
        &mut self.w[v * d..(v + 1) * d]
    }

    /// Offset of the one-hot for the `slot`-th most recent token (0 = last)
    /// with id `tok` inside a context feature vector.
    pub fn history_offset(&self, slot: usize, tok: usize) -> usize {
        debug_assert!(slot < self.k && tok < self.vocab_size);
        self.d_task + slot * self.vocab_size + tok
    }

    /// Weights that put probability mass on the tag grammar while leaving
    /// answer selection uninformed, plus small Gaussian symmetry-breaking
    /// noise on every entry. This is the stand-in for starting from a
    /// pretrained, instruction-following model: the initial policy usually
    /// produces the `<think>/<answer>` skeleton but picks letters uniformly
    /// at random, so accuracy starts at chance.
    ///
    /// `strength` is the logit boost given to each primed transition;
    /// `feature_mass` is the expected sum of the task features (used to turn
    /// the task-feature block into a pseudo-bias for the opening tag).
    pub fn format_primed(
        vocab: &Vocabulary,
        k: usize,
        d_task: usize,
        n_options: usize,
        strength: f64,
        init_noise: f64,
        feature_mass: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut params = PolicyParams::zeros(vocab.len(), k, d_task)?;
        let fillers = vocab.filler_ids();
        let letters = vocab
            .letter_ids(n_options)
            .ok_or_else(|| CoreError::Config(format!("vocabulary lacks {n_options} letters")))?;
        if fillers.is_empty() {
            return Err(CoreError::Config("vocabulary has no filler tokens".into()));
        }

        // Step 0 has an all-zero history, so the task-feature block is the
        // only available bias channel for "open with <think>".
        let open = vocab.think_open_id();
        if feature_mass.abs() > 1e-12 {
            let boost = strength / feature_mass;
            for x in params.row_mut(open)[..d_task].iter_mut() {
                *x = boost;
            }
        }

        let filler_share = strength - (fillers.len() as f64).ln();
        let letter_share = strength - (letters.len() as f64).ln();
        let mut bump = |target: usize, prev: usize, value: f64| {
            let off = d_task + prev; // slot 0 of the history block
            params.row_mut(target)[off] += value;
        };
        for &f in &fillers {
            bump(f, open, filler_share); // <think> -> reasoning word
        }
        for &prev in &fillers {
            for &f in &fillers {
                bump(f, prev, filler_share); // word -> word
            }
            bump(vocab.think_close_id(), prev, strength); // word -> </think>
        }
        bump(vocab.answer_open_id(), vocab.think_close_id(), strength);
        for &l in &letters {
            bump(l, vocab.answer_open_id(), letter_share); // uniform over letters
            bump(vocab.answer_close_id(), l, strength);
        }
        bump(vocab.eos_id(), vocab.answer_close_id(), strength);

        if init_noise != 0.0 {
            let mut rng = Stream::derive(seed, &[namespace::PARAM_INIT]);
            for x in params.w.iter_mut() {
                *x += init_noise * rng.next_gaussian();
            }
        }
        Ok(params)
    }
}

/// Which role a frozen snapshot plays in the training loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Current,
    Old,
    Reference,
}

/// An immutable (params, vocabulary) pair. Snapshots with equal parameter
/// vectors define identical distributions; sampling never mutates one.
#[derive(Debug, Clone)]
pub struct PolicySnapshot {
    params: PolicyParams,
    vocab: Vocabulary,
    role: Role,
}

impl PolicySnapshot {
    pub fn new(params: PolicyParams, vocab: Vocabulary, role: Role) -> Result<Self> {
        if params.vocab_size != vocab.len() {
            return Err(CoreError::Config(format!(
                "parameter vocab size {} does not match vocabulary size {}",
                params.vocab_size,
                vocab.len()
            )));
        }
        Ok(PolicySnapshot { params, vocab, role })
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn with_role(&self, role: Role) -> Self {
        PolicySnapshot { params: self.params.clone(), vocab: self.vocab.clone(), role }
    }
}

/// One sampled response.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    /// Token ids, ending with `<eos>` unless truncated at `max_len`.
    pub token_ids: Vec<usize>,
    /// Log-probability of each sampled token under the sampling snapshot.
    pub step_logprobs: Vec<f64>,
    /// Detokenized text (terminator not rendered).
    pub text: String,
}

impl Completion {
    /// Token count before the terminator.
    pub fn len_before_eos(&self, eos_id: usize) -> usize {
        match self.token_ids.last() {
            Some(&last) if last == eos_id => self.token_ids.len() - 1,
            _ => self.token_ids.len(),
        }
    }
}

/// Context feature for the next-token decision after `history`.
///
/// Layout: task features, then `k` one-hot blocks of the most recent tokens
/// (most recent first); history slots beyond `history.len()` stay zero.
pub fn featurize(
    task: &Task,
    history: &[usize],
    k: usize,
    vocab_size: usize,
) -> Result<Vec<f64>> {
    debug_assert!(k >= 1);
    if let Some(&bad) = history.iter().find(|&&id| id >= vocab_size) {
        return Err(CoreError::InvalidToken { id: bad, vocab_size });
    }
    let d_task = task.features.len();
    let mut phi = vec![0.0; d_task + k * vocab_size];
    phi[..d_task].copy_from_slice(&task.features);
    for slot in 0..k.min(history.len()) {
        let id = history[history.len() - 1 - slot];
        phi[d_task + slot * vocab_size + id] = 1.0;
    }
    Ok(phi)
}

fn logits(params: &PolicyParams, phi: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if temperature <= 0.0 || !temperature.is_finite() {
        return Err(CoreError::Config(format!("temperature must be positive, got {temperature}")));
    }
    if phi.len() != params.dim() {
        return Err(CoreError::Config(format!(
            "feature vector has dimension {}, expected {}",
            phi.len(),
            params.dim()
        )));
    }
    let mut out = Vec::with_capacity(params.vocab_size);
    for v in 0..params.vocab_size {
        let dot: f64 = params.row(v).iter().zip(phi).map(|(w, x)| w * x).sum();
        out.push(dot / temperature);
    }
    if out.iter().any(|x| !x.is_finite()) {
        return Err(CoreError::Numerical("non-finite logit".into()));
    }
    Ok(out)
}

/// Max-subtracted log-softmax, in place.
fn log_softmax_inplace(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    for l in logits.iter_mut() {
        *l = (*l - max) - lse;
    }
}

/// Log-probabilities over the next token.
pub fn log_token_distribution(
    params: &PolicyParams,
    phi: &[f64],
    temperature: f64,
) -> Result<Vec<f64>> {
    let mut l = logits(params, phi, temperature)?;
    log_softmax_inplace(&mut l);
    Ok(l)
}

/// Probabilities over the next token: `softmax(W . phi / temperature)`.
pub fn token_distribution(
    params: &PolicyParams,
    phi: &[f64],
    temperature: f64,
) -> Result<Vec<f64>> {
    let mut l = log_token_distribution(params, phi, temperature)?;
    for x in l.iter_mut() {
        *x = x.exp();
    }
    Ok(l)
}

/// Per-step cached quantities for one realized token sequence.
pub(crate) struct StepCache {
    /// Context feature at each step.
    pub phi: Vec<Vec<f64>>,
    /// Full next-token distribution at each step.
    pub probs: Vec<Vec<f64>>,
    /// Log-probability of the realized token at each step.
    pub logp: Vec<f64>,
}

pub(crate) fn step_cache(
    params: &PolicyParams,
    task: &Task,
    token_ids: &[usize],
    temperature: f64,
) -> Result<StepCache> {
    let v = params.vocab_size;
    if let Some(&bad) = token_ids.iter().find(|&&id| id >= v) {
        return Err(CoreError::InvalidToken { id: bad, vocab_size: v });
    }
    let mut cache = StepCache {
        phi: Vec::with_capacity(token_ids.len()),
        probs: Vec::with_capacity(token_ids.len()),
        logp: Vec::with_capacity(token_ids.len()),
    };
    for (t, &tok) in token_ids.iter().enumerate() {
        let phi = featurize(task, &token_ids[..t], params.k, v)?;
        let logp = log_token_distribution(params, &phi, temperature)?;
        cache.logp.push(logp[tok]);
        cache.probs.push(logp.iter().map(|&x| x.exp()).collect());
        cache.phi.push(phi);
    }
    Ok(cache)
}

/// Log-probability of each realized token, step by step.
pub fn step_logprobs(
    params: &PolicyParams,
    task: &Task,
    token_ids: &[usize],
    temperature: f64,
) -> Result<Vec<f64>> {
    let v = params.vocab_size;
    if let Some(&bad) = token_ids.iter().find(|&&id| id >= v) {
        return Err(CoreError::InvalidToken { id: bad, vocab_size: v });
    }
    let mut out = Vec::with_capacity(token_ids.len());
    for (t, &tok) in token_ids.iter().enumerate() {
        let phi = featurize(task, &token_ids[..t], params.k, v)?;
        let logp = log_token_distribution(params, &phi, temperature)?;
        out.push(logp[tok]);
    }
    Ok(out)
}

/// Exact sequence log-probability `sum_t log softmax(W . phi_t / T)[token_t]`.
pub fn sequence_logprob(
    params: &PolicyParams,
    task: &Task,
    token_ids: &[usize],
    temperature: f64,
) -> Result<f64> {
    Ok(step_logprobs(params, task, token_ids, temperature)?.iter().sum())
}

/// Closed-form gradient of [`sequence_logprob`] with respect to the flat
/// parameter vector: `sum_t (onehot(token_t) - p_t) (x) phi_t / temperature`.
pub fn grad_sequence_logprob(
    params: &PolicyParams,
    task: &Task,
    token_ids: &[usize],
    temperature: f64,
) -> Result<Vec<f64>> {
    let cache = step_cache(params, task, token_ids, temperature)?;
    let d = params.dim();
    let mut grad = vec![0.0; params.vocab_size * d];
    for (t, &tok) in token_ids.iter().enumerate() {
        let phi = &cache.phi[t];
        let probs = &cache.probs[t];
        for v in 0..params.vocab_size {
            let coeff = ((v == tok) as u8 as f64 - probs[v]) / temperature;
            if coeff == 0.0 {
                continue;
            }
            let row = &mut grad[v * d..(v + 1) * d];
            for (g, &x) in row.iter_mut().zip(phi) {
                *g += coeff * x;
            }
        }
    }
    Ok(grad)
}

/// Sample one completion autoregressively from a snapshot.
///
/// Stops after emitting `<eos>` (which is kept as the final token) or at
/// `max_len` tokens. Each step records the log-probability of the sampled
/// token at the sampling temperature. Deterministic given the rng state.
pub fn sample_completion(
    snapshot: &PolicySnapshot,
    task: &Task,
    temperature: f64,
    max_len: usize,
    rng: &mut Stream,
) -> Result<Completion> {
    if max_len == 0 {
        return Err(CoreError::Config("max_len must be at least 1".into()));
    }
    let params = snapshot.params();
    let vocab = snapshot.vocab();
    let eos = vocab.eos_id();
    let mut ids: Vec<usize> = Vec::new();
    let mut lps: Vec<f64> = Vec::new();
    for _ in 0..max_len {
        let phi = featurize(task, &ids, params.k, params.vocab_size)?;
        let logp = log_token_distribution(params, &phi, temperature)?;
        let probs: Vec<f64> = logp.iter().map(|&x| x.exp()).collect();
        let tok = rng.next_categorical(&probs);
        ids.push(tok);
        lps.push(logp[tok]);
        if tok == eos {
            break;
        }
    }
    let text = vocab.detokenize(&ids);
    Ok(Completion { token_ids: ids, step_logprobs: lps, text })
}

/// Greedy decode: argmax at every step, ties broken by the lowest token
/// index. Temperature-free (argmax is invariant to it).
pub fn greedy_completion(
    snapshot: &PolicySnapshot,
    task: &Task,
    max_len: usize,
) -> Result<Completion> {
    if max_len == 0 {
        return Err(CoreError::Config("max_len must be at least 1".into()));
    }
    let params = snapshot.params();
    let vocab = snapshot.vocab();
    let eos = vocab.eos_id();
    let mut ids: Vec<usize> = Vec::new();
    let mut lps: Vec<f64> = Vec::new();
    for _ in 0..max_len {
        let phi = featurize(task, &ids, params.k, params.vocab_size)?;
        let logp = log_token_distribution(params, &phi, 1.0)?;
        let mut best = 0;
        for (i, &x) in logp.iter().enumerate() {
            if x > logp[best] {
                best = i;
            }
        }
        ids.push(best);
        lps.push(logp[best]);
        if best == eos {
            break;
        }
    }
    let text = vocab.detokenize(&ids);
    Ok(Completion { token_ids: ids, step_logprobs: lps, text })
}
