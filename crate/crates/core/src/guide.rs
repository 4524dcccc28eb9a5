//! Lexically guided decoding.
//!
//! A trained causal LM decodes as usual, except that before each token is
//! sampled, the attention key/value cache of a conditional copy of the
//! decoder is nudged by a few normalized gradient ascent steps on a reward
//! that trades class-lexicon alignment against a KL trust region anchored
//! at the unperturbed decoder. The perturbations persist across steps, so
//! control accumulates over the sequence while the KL penalty (with an
//! adaptive weight) keeps the output on the language manifold.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::{preprocess, Vocab};
use crate::lm::{
    math, requery, requery_at, softmax_with_temperature, step, CacheLeaves, KvCache, LmError,
    LmModel, RewardTape, TapeNode,
};
use crate::salience::Lexicon;

/// Probability floor applied inside importance ratios and KL terms.
pub const PROB_FLOOR: f64 = 1e-12;
/// Gradient norms below this skip the sub-step instead of dividing by ~0.
const GRAD_SKIP_NORM: f64 = 1e-12;
/// Stream separator so token sampling and rollout sampling never share
/// random state; k=0 decoding must consume exactly the token stream.
const ROLLOUT_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Error)]
pub enum GuideError {
    #[error("invalid guide configuration: {0}")]
    BadConfig(String),
    #[error("class {0:?} has no lexicon entry")]
    MissingLexicon(String),
    #[error("lexicon word {0:?} is not in the model vocabulary")]
    WordNotInVocab(String),
    #[error(transparent)]
    Lm(#[from] LmError),
}

/// Decode-time guidance knobs.
#[derive(Clone, Debug, PartialEq)]
pub struct GuideConfig {
    /// Initial KL penalty weight.
    pub beta0: f64,
    /// Target per-step KL divergence for the adaptive penalty.
    pub sigma: f64,
    /// Gradient sub-steps per decoded token; 0 disables guidance.
    pub k: usize,
    /// Step size for each normalized gradient increment.
    pub eta: f64,
    /// Sampling temperature, applied to every distribution in the reward.
    pub temperature: f64,
    /// Maximum generated tokens per sequence.
    pub max_len: usize,
    /// Samples drawn from the unperturbed policy to estimate the reward.
    pub num_rollouts: usize,
    /// Log-floor constant in the gain mapping log(eps + (1+cos)/2).
    pub epsilon: f64,
    /// Optional seed text consumed before generation starts.
    pub prompt: Option<String>,
}

impl Default for GuideConfig {
    fn default() -> Self {
        GuideConfig {
            beta0: 0.1,
            sigma: 0.5,
            k: 3,
            eta: 0.02,
            temperature: 1.0,
            max_len: 30,
            num_rollouts: 8,
            epsilon: 0.05,
            prompt: None,
        }
    }
}

impl GuideConfig {
    pub fn validate(&self) -> Result<(), GuideError> {
        let bad = |m: String| Err(GuideError::BadConfig(m));
        if !(self.beta0 > 0.0) || !self.beta0.is_finite() {
            return bad(format!("beta0 must be positive, got {}", self.beta0));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return bad(format!(
                "temperature must be positive, got {}",
                self.temperature
            ));
        }
        if self.max_len == 0 {
            return bad("max_len must be at least 1".into());
        }
        if self.num_rollouts == 0 {
            return bad("num_rollouts must be at least 1".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 0.1) {
            return bad(format!(
                "epsilon must be in (0, 0.1], got {}",
                self.epsilon
            ));
        }
        Ok(())
    }

    /// Parses the flat `key=value` format produced by [`to_kv`]. Blank
    /// lines and `#` comments are skipped; unknown or repeated keys are
    /// rejected. Missing keys keep their defaults.
    ///
    /// [`to_kv`]: GuideConfig::to_kv
    pub fn from_kv(text: &str) -> Result<GuideConfig, GuideError> {
        let mut cfg = GuideConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                GuideError::BadConfig(format!("line {}: expected key=value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(GuideError::BadConfig(format!("repeated key {key:?}")));
            }
            let bad =
                |k: &str, v: &str| GuideError::BadConfig(format!("bad value {v:?} for {k}"));
            match key {
                "beta0" => cfg.beta0 = value.parse().map_err(|_| bad(key, value))?,
                "sigma" => cfg.sigma = value.parse().map_err(|_| bad(key, value))?,
                "k" => cfg.k = value.parse().map_err(|_| bad(key, value))?,
                "eta" => cfg.eta = value.parse().map_err(|_| bad(key, value))?,
                "temperature" => cfg.temperature = value.parse().map_err(|_| bad(key, value))?,
                "max_len" => cfg.max_len = value.parse().map_err(|_| bad(key, value))?,
                "num_rollouts" => {
                    cfg.num_rollouts = value.parse().map_err(|_| bad(key, value))?
                }
                "epsilon" => cfg.epsilon = value.parse().map_err(|_| bad(key, value))?,
                "prompt" => cfg.prompt = Some(value.to_string()),
                _ => {
                    return Err(GuideError::BadConfig(format!("unknown key {key:?}")));
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        let mut out = format!(
            "beta0={}\nsigma={}\nk={}\neta={}\ntemperature={}\nmax_len={}\nnum_rollouts={}\nepsilon={}\n",
            self.beta0,
            self.sigma,
            self.k,
            self.eta,
            self.temperature,
            self.max_len,
            self.num_rollouts,
            self.epsilon,
        );
        if let Some(p) = &self.prompt {
            out.push_str(&format!("prompt={p}\n"));
        }
        out
    }
}

/// Per-token diagnostics, one row per decode step.
#[derive(Clone, Debug, Serialize)]
pub struct StepDiag {
    pub step: usize,
    pub token: u32,
    pub reward: f64,
    pub kl: f64,
    /// Penalty weight used for this step (adaptation happens afterwards).
    pub beta: f64,
    pub gain: f64,
    /// True when numerical failure forced this step back to the
    /// unperturbed policy.
    pub fallback: bool,
}

/// One finished generation.
#[derive(Clone, Debug, Serialize)]
pub struct Generation {
    pub tokens: Vec<u32>,
    pub text: String,
    /// Immediate end-of-sequence: nothing was generated.
    pub empty: bool,
    pub steps: Vec<StepDiag>,
}

/// Outcome of the k sub-steps for one decoded token.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct UpdateLog {
    pub applied: usize,
    pub skipped: usize,
    pub fallback: bool,
}

/// Everything the decode-time reward depends on besides the cache itself.
/// Distributions are at the configured temperature; `uncond_dists[i]` is
/// the unperturbed policy after the first `i + 1` prefix tokens.
pub struct RewardInputs<'a> {
    pub prefix: &'a [u32],
    pub uncond_dists: &'a [Vec<f64>],
    pub rollouts: &'a [u32],
    pub lexicon_ids: &'a [u32],
    pub beta: f64,
    pub temperature: f64,
    pub epsilon: f64,
}

/// Builds the per-step reward as a tape expression over the conditional
/// cache: mean importance ratio times lexicon gain, minus beta times the
/// KL divergence from the unperturbed policy summed over every prefix
/// position. Returns the scalar root node.
pub fn reward_node(
    tape: &mut RewardTape<'_>,
    leaves: &CacheLeaves,
    inp: &RewardInputs<'_>,
) -> TapeNode {
    let t = inp.prefix.len();
    debug_assert_eq!(t, inp.uncond_dists.len());
    let cond = tape.requery_dist(leaves, inp.prefix[t - 1], t, inp.temperature);

    let expected = tape.emb_expect(cond);
    let word_terms: Vec<TapeNode> = inp
        .lexicon_ids
        .iter()
        .map(|&w| {
            let cos = tape.cos_emb(expected, w);
            tape.log_shift_half(cos, inp.epsilon)
        })
        .collect();
    let n_words = word_terms.len();
    let gain = tape.lin_comb(word_terms, vec![1.0; n_words], 0.0);

    let p_now = inp.uncond_dists.last().expect("non-empty prefix");
    let m = inp.rollouts.len() as f64;
    let picks: Vec<TapeNode> = inp
        .rollouts
        .iter()
        .map(|&a| tape.pick(cond, a as usize))
        .collect();
    let coefs: Vec<f64> = inp
        .rollouts
        .iter()
        .map(|&a| 1.0 / (m * p_now[a as usize].max(PROB_FLOOR)))
        .collect();
    let mean_ratio = tape.lin_comb(picks, coefs, 0.0);
    let weighted_gain = tape.mul(mean_ratio, gain);

    let mut terms = vec![weighted_gain];
    let mut weights = vec![1.0];
    let mut bias = 0.0;
    for j in 1..=t {
        let q = if j == t {
            cond
        } else {
            tape.requery_dist(leaves, inp.prefix[j - 1], j, inp.temperature)
        };
        let log_q = tape.log_floor(q, PROB_FLOOR);
        let p = &inp.uncond_dists[j - 1];
        // -beta * KL_j = -beta * sum_v p ln p + beta * sum_v p ln q; the
        // first part is constant, the second differentiable.
        let cross = tape.dot_const(log_q, p.clone());
        terms.push(cross);
        weights.push(inp.beta);
        bias -= inp.beta
            * p.iter()
                .map(|&pv| pv * pv.max(PROB_FLOOR).ln())
                .sum::<f64>();
    }
    tape.lin_comb(terms, weights, bias)
}

/// Lexicon alignment gain of a next-token distribution: the expected
/// embedding under `dist` is compared against each lexicon word embedding,
/// and the shifted cosines are summed in log domain. Zero-probability
/// entries contribute nothing; the maximum per word is ln(1 + epsilon) at
/// perfect alignment.
pub fn salience_gain(dist: &[f64], lexicon_ids: &[u32], model: &LmModel, epsilon: f64) -> f64 {
    let d = model.hyper().d_model;
    let mut expected = vec![0.0; d];
    for (v, &p) in dist.iter().enumerate() {
        let row = model.embedding(v as u32);
        for (o, &e) in expected.iter_mut().zip(row) {
            *o += p * e;
        }
    }
    let ne = math::dot(&expected, &expected).sqrt();
    lexicon_ids
        .iter()
        .map(|&w| {
            let row = model.embedding(w);
            let nr = math::dot(row, row).sqrt();
            let cos = if ne > 0.0 && nr > 0.0 {
                math::dot(&expected, row) / (ne * nr)
            } else {
                0.0
            };
            (epsilon + (1.0 + cos) / 2.0).ln()
        })
        .sum()
}

/// Sum over steps of KL(p_i || q_i). Both sides are floored at
/// [`PROB_FLOOR`] inside the logs, which keeps equality exactly zero and
/// ratios finite; entries at or above the floor satisfy the usual
/// non-negativity.
pub fn kl_policies(steps: &[(&[f64], &[f64])]) -> f64 {
    steps
        .iter()
        .map(|(p, q)| {
            p.iter()
                .zip(q.iter())
                .map(|(&pv, &qv)| pv * (pv.max(PROB_FLOOR).ln() - qv.max(PROB_FLOOR).ln()))
                .sum::<f64>()
        })
        .sum()
}

/// One branch of the adaptive trust region: double the penalty when the
/// divergence overshoots twice the target, halve it when under half.
pub fn adapt_beta(beta: f64, kl: f64, sigma: f64) -> f64 {
    debug_assert!(beta > 0.0 && sigma > 0.0);
    if kl >= 2.0 * sigma {
        2.0 * beta
    } else if kl <= sigma / 2.0 {
        beta / 2.0
    } else {
        beta
    }
}

/// Resolves a class lexicon into model token ids.
pub fn resolve_lexicon(
    model: &LmModel,
    lexicon: &Lexicon,
    class: &str,
) -> Result<Vec<u32>, GuideError> {
    let entries = lexicon
        .entry(class)
        .ok_or_else(|| GuideError::MissingLexicon(class.to_string()))?;
    entries
        .iter()
        .map(|(word, _)| {
            model
                .vocab()
                .id(word)
                .ok_or_else(|| GuideError::WordNotInVocab(word.clone()))
        })
        .collect()
}

fn sample_token(rng: &mut ChaCha8Rng, dist: &[f64]) -> u32 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0usize;
    for (i, &p) in dist.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i as u32;
        }
    }
    // Rounding left acc slightly under 1; take the last token with mass.
    last_positive as u32
}

/// One guided generation in progress. Owns an unperturbed cache (the
/// anchor policy), a perturbed conditional cache, and two independent
/// random streams so disabling guidance cannot shift token sampling.
pub struct DecodeSession<'m> {
    model: &'m LmModel,
    cfg: GuideConfig,
    lexicon_ids: Vec<u32>,
    uncond_cache: KvCache,
    cond_cache: KvCache,
    prefix: Vec<u32>,
    generated: Vec<u32>,
    uncond_dists: Vec<Vec<f64>>,
    beta: f64,
    steps: Vec<StepDiag>,
    rng_tokens: ChaCha8Rng,
    rng_rollouts: ChaCha8Rng,
}

impl<'m> DecodeSession<'m> {
    pub fn new(
        model: &'m LmModel,
        lexicon: &Lexicon,
        class: &str,
        cfg: GuideConfig,
        seed: u64,
    ) -> Result<DecodeSession<'m>, GuideError> {
        cfg.validate()?;
        let lexicon_ids = resolve_lexicon(model, lexicon, class)?;
        if lexicon_ids.is_empty() {
            return Err(GuideError::MissingLexicon(class.to_string()));
        }
        let mut session = DecodeSession {
            model,
            beta: cfg.beta0,
            cfg,
            lexicon_ids,
            uncond_cache: KvCache::for_model(model),
            cond_cache: KvCache::for_model(model),
            prefix: Vec::new(),
            generated: Vec::new(),
            uncond_dists: Vec::new(),
            steps: Vec::new(),
            rng_tokens: ChaCha8Rng::seed_from_u64(seed),
            rng_rollouts: ChaCha8Rng::seed_from_u64(seed ^ ROLLOUT_STREAM),
        };
        for token in session.opening_tokens()? {
            session.advance(token)?;
        }
        Ok(session)
    }

    /// Begin-of-sequence plus the optional encoded prompt.
    fn opening_tokens(&self) -> Result<Vec<u32>, GuideError> {
        let mut tokens = vec![Vocab::BOS];
        if let Some(prompt) = &self.cfg.prompt {
            let words = preprocess(prompt, self.model.preprocess_config()).ok_or_else(|| {
                GuideError::BadConfig(format!("prompt {prompt:?} is empty after preprocessing"))
            })?;
            tokens.extend(self.model.vocab().encode(&words));
        }
        if tokens.len() >= self.model.hyper().ctx_len {
            return Err(GuideError::BadConfig(format!(
                "prompt of {} tokens fills the {}-token context",
                tokens.len() - 1,
                self.model.hyper().ctx_len
            )));
        }
        Ok(tokens)
    }

    /// Feeds one token to both caches and records the unperturbed policy's
    /// next-token distribution at the configured temperature.
    fn advance(&mut self, token: u32) -> Result<(), GuideError> {
        let logits = step(self.model, token, &mut self.uncond_cache)?;
        step(self.model, token, &mut self.cond_cache)?;
        self.uncond_dists
            .push(softmax_with_temperature(&logits, self.cfg.temperature));
        self.prefix.push(token);
        Ok(())
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn prefix(&self) -> &[u32] {
        &self.prefix
    }

    pub fn conditional_cache(&self) -> &KvCache {
        &self.cond_cache
    }

    /// Conditional next-token distribution under the current (possibly
    /// perturbed) cache.
    pub fn conditional_dist(&self) -> Result<Vec<f64>, GuideError> {
        let logits = requery(self.model, *self.prefix.last().unwrap(), &self.cond_cache)?;
        Ok(softmax_with_temperature(&logits, self.cfg.temperature))
    }

    /// Total KL divergence from the unperturbed policy, summed over every
    /// prefix position, under the current conditional cache.
    pub fn kl_to_unconditional(&self) -> Result<f64, GuideError> {
        let mut cond = Vec::with_capacity(self.prefix.len());
        for j in 1..=self.prefix.len() {
            let logits = requery_at(self.model, self.prefix[j - 1], &self.cond_cache, j)?;
            cond.push(softmax_with_temperature(&logits, self.cfg.temperature));
        }
        let pairs: Vec<(&[f64], &[f64])> = self
            .uncond_dists
            .iter()
            .zip(&cond)
            .map(|(p, q)| (p.as_slice(), q.as_slice()))
            .collect();
        Ok(kl_policies(&pairs))
    }

    /// Draws rollout actions from the unperturbed policy at the current
    /// state. Uses the dedicated rollout stream.
    pub fn sample_rollouts(&mut self) -> Vec<u32> {
        let dist = self.uncond_dists.last().expect("session is primed");
        (0..self.cfg.num_rollouts)
            .map(|_| {
                let d = dist.clone();
                sample_token(&mut self.rng_rollouts, &d)
            })
            .collect()
    }

    /// The reward the guidance ascends, evaluated at the current caches:
    /// mean importance-weighted gain over the rollout actions minus the
    /// beta-weighted KL trust-region penalty.
    pub fn step_reward(&self, rollouts: &[u32]) -> Result<f64, GuideError> {
        let cond = self.conditional_dist()?;
        let gain = salience_gain(&cond, &self.lexicon_ids, self.model, self.cfg.epsilon);
        let p_now = self.uncond_dists.last().expect("session is primed");
        let m = rollouts.len() as f64;
        let mean_ratio: f64 = rollouts
            .iter()
            .map(|&a| cond[a as usize] / p_now[a as usize].max(PROB_FLOOR))
            .sum::<f64>()
            / m;
        Ok(mean_ratio * gain - self.beta * self.kl_to_unconditional()?)
    }

    /// Runs the k normalized gradient sub-steps on the conditional cache.
    /// Each increment has unit Frobenius norm before scaling by eta;
    /// vanishing gradients are skipped, and a non-finite gradient restores
    /// the cache to its state at entry and stops.
    pub fn policy_update(&mut self, rollouts: &[u32]) -> UpdateLog {
        let snapshot = self.cond_cache.clone();
        let mut log = UpdateLog::default();
        for _ in 0..self.cfg.k {
            let inputs = RewardInputs {
                prefix: &self.prefix,
                uncond_dists: &self.uncond_dists,
                rollouts,
                lexicon_ids: &self.lexicon_ids,
                beta: self.beta,
                temperature: self.cfg.temperature,
                epsilon: self.cfg.epsilon,
            };
            let mut tape = RewardTape::new(self.model);
            let leaves = tape.cache_leaves(&self.cond_cache);
            let root = reward_node(&mut tape, &leaves, &inputs);
            if !tape.scalar(root).is_finite() {
                self.cond_cache = snapshot;
                log.fallback = true;
                return log;
            }
            match tape.backward(root) {
                Ok(grad) => {
                    let norm = grad.frobenius_norm();
                    if norm < GRAD_SKIP_NORM {
                        log.skipped += 1;
                    } else {
                        grad.apply_scaled(&mut self.cond_cache, self.cfg.eta / norm);
                        log.applied += 1;
                    }
                }
                Err(_) => {
                    self.cond_cache = snapshot;
                    log.fallback = true;
                    return log;
                }
            }
        }
        log
    }

    /// Decodes one token: guidance sub-steps, diagnostics, beta adaptation,
    /// then sampling. Returns None when end-of-sequence was sampled.
    fn decode_step(&mut self) -> Result<Option<u32>, GuideError> {
        let step_idx = self.generated.len();
        let (dist, reward, kl, gain, fallback);
        if self.cfg.k == 0 {
            // Guidance off: token-for-token identical to the unperturbed
            // decoder. Nothing here may touch rng_tokens before sampling.
            dist = self.uncond_dists.last().expect("session is primed").clone();
            gain = salience_gain(&dist, &self.lexicon_ids, self.model, self.cfg.epsilon);
            reward = gain;
            kl = 0.0;
            fallback = false;
        } else {
            let rollouts = self.sample_rollouts();
            let update = self.policy_update(&rollouts);
            let mut cond = self.conditional_dist()?;
            let mut fell_back = update.fallback;
            if !cond.iter().all(|p| p.is_finite()) {
                // The carried cache itself is damaged; resynchronize the
                // conditional policy with the unperturbed one.
                self.cond_cache = self.uncond_cache.clone();
                cond = self.uncond_dists.last().expect("session is primed").clone();
                fell_back = true;
            }
            gain = salience_gain(&cond, &self.lexicon_ids, self.model, self.cfg.epsilon);
            kl = self.kl_to_unconditional()?;
            let p_now = self.uncond_dists.last().expect("session is primed");
            let mean_ratio: f64 = rollouts
                .iter()
                .map(|&a| cond[a as usize] / p_now[a as usize].max(PROB_FLOOR))
                .sum::<f64>()
                / rollouts.len() as f64;
            reward = mean_ratio * gain - self.beta * kl;
            dist = cond;
            fallback = fell_back;
        }
        let token = sample_token(&mut self.rng_tokens, &dist);
        self.steps.push(StepDiag {
            step: step_idx,
            token,
            reward,
            kl,
            beta: self.beta,
            gain,
            fallback,
        });
        if self.cfg.k > 0 {
            self.beta = adapt_beta(self.beta, kl, self.cfg.sigma);
        }
        if token == Vocab::EOS {
            return Ok(None);
        }
        self.advance(token)?;
        Ok(Some(token))
    }

    /// Runs the decode loop to end-of-sequence, the length cap, or the
    /// context limit.
    pub fn run(mut self) -> Result<Generation, GuideError> {
        while self.generated.len() < self.cfg.max_len
            && self.prefix.len() < self.model.hyper().ctx_len
        {
            match self.decode_step()? {
                Some(token) => self.generated.push(token),
                None => break,
            }
        }
        let text = self.model.vocab().decode_text(&self.generated);
        Ok(Generation {
            empty: self.generated.is_empty(),
            text,
            tokens: self.generated,
            steps: self.steps,
        })
    }
}

/// Guided generation for one class: builds a session and runs it.
pub fn generate_conditional(
    model: &LmModel,
    lexicon: &Lexicon,
    class: &str,
    cfg: &GuideConfig,
    seed: u64,
) -> Result<Generation, GuideError> {
    DecodeSession::new(model, lexicon, class, cfg.clone(), seed)?.run()
}

/// Plain temperature sampling from the unperturbed model. Shares the token
/// RNG construction with the guided decoder, so a guided run with k = 0
/// reproduces this token for token.
pub fn generate_unconditional(
    model: &LmModel,
    cfg: &GuideConfig,
    seed: u64,
) -> Result<Generation, GuideError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cache = KvCache::for_model(model);
    let mut opening = vec![Vocab::BOS];
    if let Some(prompt) = &cfg.prompt {
        let words = preprocess(prompt, model.preprocess_config()).ok_or_else(|| {
            GuideError::BadConfig(format!("prompt {prompt:?} is empty after preprocessing"))
        })?;
        opening.extend(model.vocab().encode(&words));
    }
    if opening.len() >= model.hyper().ctx_len {
        return Err(GuideError::BadConfig(format!(
            "prompt of {} tokens fills the {}-token context",
            opening.len() - 1,
            model.hyper().ctx_len
        )));
    }
    let mut dist = Vec::new();
    let mut consumed = 0usize;
    for &t in &opening {
        let logits = step(model, t, &mut cache)?;
        dist = softmax_with_temperature(&logits, cfg.temperature);
        consumed += 1;
    }
    let mut generated = Vec::new();
    let mut steps = Vec::new();
    while generated.len() < cfg.max_len && consumed < model.hyper().ctx_len {
        let token = sample_token(&mut rng, &dist);
        steps.push(StepDiag {
            step: generated.len(),
            token,
            reward: 0.0,
            kl: 0.0,
            beta: cfg.beta0,
            gain: 0.0,
            fallback: false,
        });
        if token == Vocab::EOS {
            break;
        }
        generated.push(token);
        let logits = step(model, token, &mut cache)?;
        dist = softmax_with_temperature(&logits, cfg.temperature);
        consumed += 1;
    }
    let text = model.vocab().decode_text(&generated);
    Ok(Generation {
        empty: generated.is_empty(),
        text,
        tokens: generated,
        steps,
    })
}
