//! Tabular autoregressive softmax policies.
//!
//! Parameters live in one flat vector: the context logit table (row-major,
//! `num_contexts × V`) followed by the per-prompt offset table (`num_prompts × V`).
//! Gradients use the same layout, so an SGD step is a single axpy.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on `V^length` for exhaustive enumeration.
pub const ENUMERATION_LIMIT: usize = 1_000_000;

/// What the logits condition on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ContextOrder {
    /// A single context row shared by every position.
    Unconditioned,
    /// Previous token (plus a start-of-sequence row).
    #[default]
    Bigram,
}

impl ContextOrder {
    pub fn from_index(order: usize) -> Result<Self> {
        match order {
            0 => Ok(ContextOrder::Unconditioned),
            1 => Ok(ContextOrder::Bigram),
            other => Err(Error::InvalidInput(format!("context order must be 0 or 1, got {other}"))),
        }
    }

    pub fn index(self) -> usize {
        match self {
            ContextOrder::Unconditioned => 0,
            ContextOrder::Bigram => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy {
    vocab_size: usize,
    max_len: usize,
    order: ContextOrder,
    num_prompts: usize,
    params: Vec<f64>,
}

/// A sampled (or enumerated) response with log-probs under the current and behavior policies.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub prompt_id: usize,
    pub tokens: Vec<usize>,
    pub logp_pi: Vec<f64>,
    pub logp_mu: Vec<f64>,
    pub reward: f64,
    /// Parameter version of the policy that generated the tokens.
    pub behavior_version: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn log_softmax_into(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    for v in z.iter_mut() {
        *v -= lse;
    }
}

impl SoftmaxPolicy {
    /// All-zero (uniform) policy.
    pub fn uniform(vocab_size: usize, max_len: usize, order: ContextOrder, num_prompts: usize) -> Result<Self> {
        if vocab_size == 0 || max_len == 0 || num_prompts == 0 {
            return Err(Error::InvalidInput(format!(
                "policy dims must be positive (V = {vocab_size}, T_max = {max_len}, prompts = {num_prompts})"
            )));
        }
        let n = (Self::contexts_for(vocab_size, order) + num_prompts) * vocab_size;
        Ok(Self { vocab_size, max_len, order, num_prompts, params: vec![0.0; n] })
    }

    /// Build from explicit tables; `offsets` has one row per prompt.
    pub fn from_tables(
        vocab_size: usize,
        max_len: usize,
        order: ContextOrder,
        logits: &[Vec<f64>],
        offsets: &[Vec<f64>],
    ) -> Result<Self> {
        let mut policy = Self::uniform(vocab_size, max_len, order, offsets.len().max(1))?;
        if logits.len() != policy.num_contexts() {
            return Err(Error::InvalidInput(format!(
                "expected {} context rows, got {}",
                policy.num_contexts(),
                logits.len()
            )));
        }
        if offsets.is_empty() {
            return Err(Error::InvalidInput("at least one prompt offset row is required".into()));
        }
        let mut flat = Vec::with_capacity(policy.params.len());
        for row in logits.iter().chain(offsets) {
            if row.len() != vocab_size {
                return Err(Error::InvalidInput(format!("row has {} entries, expected {vocab_size}", row.len())));
            }
            flat.extend_from_slice(row);
        }
        policy.set_params(flat)?;
        Ok(policy)
    }

    fn contexts_for(vocab_size: usize, order: ContextOrder) -> usize {
        match order {
            ContextOrder::Unconditioned => 1,
            ContextOrder::Bigram => vocab_size + 1,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn order(&self) -> ContextOrder {
        self.order
    }

    pub fn num_prompts(&self) -> usize {
        self.num_prompts
    }

    pub fn num_contexts(&self) -> usize {
        Self::contexts_for(self.vocab_size, self.order)
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::InvalidInput(format!(
                "parameter vector has {} entries, expected {}",
                params.len(),
                self.params.len()
            )));
        }
        if let Some(bad) = params.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("policy logits must be finite, got {bad}")));
        }
        self.params = params;
        Ok(())
    }

    /// θ ← θ + step · direction. Leaves the policy untouched if the result is non-finite.
    pub fn ascend(&mut self, direction: &[f64], step: f64) -> Result<()> {
        let next: Vec<f64> = self.params.iter().zip(direction).map(|(p, d)| p + step * d).collect();
        self.set_params(next)
    }

    /// Same policy with parameters shifted by `scale · direction`.
    pub fn perturbed(&self, direction: &[f64], scale: f64) -> Result<Self> {
        let mut out = self.clone();
        out.ascend(direction, scale)?;
        Ok(out)
    }

    /// Context row used at position `t` given the tokens generated so far.
    pub fn context(&self, prefix: &[usize], t: usize) -> usize {
        match self.order {
            ContextOrder::Unconditioned => 0,
            ContextOrder::Bigram if t == 0 => self.vocab_size,
            ContextOrder::Bigram => prefix[t - 1],
        }
    }

    /// Flat index of (context row, token) in the parameter vector.
    pub fn logit_index(&self, context: usize, token: usize) -> usize {
        context * self.vocab_size + token
    }

    /// Flat index of (prompt row, token) in the parameter vector.
    pub fn offset_index(&self, prompt_id: usize, token: usize) -> usize {
        (self.num_contexts() + prompt_id) * self.vocab_size + token
    }

    fn check_prompt(&self, prompt_id: usize) -> Result<()> {
        if prompt_id >= self.num_prompts {
            return Err(Error::InvalidInput(format!("prompt {prompt_id} out of range (have {})", self.num_prompts)));
        }
        Ok(())
    }

    /// Log-softmax of `logits[context] + offsets[prompt]`.
    pub fn step_log_probs(&self, prompt_id: usize, context: usize) -> Vec<f64> {
        let v = self.vocab_size;
        let row = &self.params[context * v..(context + 1) * v];
        let off_start = (self.num_contexts() + prompt_id) * v;
        let off = &self.params[off_start..off_start + v];
        let mut z: Vec<f64> = row.iter().zip(off).map(|(a, b)| a + b).collect();
        log_softmax_into(&mut z);
        z
    }

    /// Mean per-position entropy of the next-token distribution along `tokens`.
    pub fn mean_entropy(&self, prompt_id: usize, tokens: &[usize]) -> f64 {
        if tokens.is_empty() {
            return 0.0;
        }
        let total: f64 = (0..tokens.len())
            .map(|t| {
                let lp = self.step_log_probs(prompt_id, self.context(tokens, t));
                -lp.iter().map(|l| l.exp() * l).sum::<f64>()
            })
            .sum();
        total / tokens.len() as f64
    }

    /// Per-token log-probabilities of `tokens` under this policy.
    pub fn logprob(&self, prompt_id: usize, tokens: &[usize]) -> Result<Vec<f64>> {
        self.check_prompt(prompt_id)?;
        if let Some(&bad) = tokens.iter().find(|&&y| y >= self.vocab_size) {
            return Err(Error::InvalidInput(format!("token {bad} out of range for V = {}", self.vocab_size)));
        }
        Ok((0..tokens.len())
            .map(|t| self.step_log_probs(prompt_id, self.context(tokens, t))[tokens[t]])
            .collect())
    }

    /// Draw `length` tokens autoregressively. `logp_pi` and `logp_mu` both hold the sampling log-probs.
    pub fn sample<R: Rng + ?Sized>(&self, prompt_id: usize, length: usize, rng: &mut R) -> Result<Trajectory> {
        self.check_prompt(prompt_id)?;
        if length == 0 || length > self.max_len {
            return Err(Error::InvalidInput(format!("length must lie in 1..={}, got {length}", self.max_len)));
        }
        let mut tokens = Vec::with_capacity(length);
        let mut logp = Vec::with_capacity(length);
        for t in 0..length {
            let lp = self.step_log_probs(prompt_id, self.context(&tokens, t));
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut choice = self.vocab_size - 1;
            for (k, l) in lp.iter().enumerate() {
                acc += l.exp();
                if u < acc {
                    choice = k;
                    break;
                }
            }
            tokens.push(choice);
            logp.push(lp[choice]);
        }
        Ok(Trajectory { prompt_id, tokens, logp_pi: logp.clone(), logp_mu: logp, reward: 0.0, behavior_version: 0 })
    }

    /// Every length-`length` sequence with its probability, in lexicographic order.
    pub fn enumerate_trajectories(&self, prompt_id: usize, length: usize) -> Result<Vec<(Vec<usize>, f64)>> {
        self.check_prompt(prompt_id)?;
        let count = u32::try_from(length)
            .ok()
            .and_then(|l| self.vocab_size.checked_pow(l))
            .filter(|&c| c <= ENUMERATION_LIMIT)
            .ok_or_else(|| {
                Error::Resource(format!(
                    "enumerating V^T = {}^{length} sequences exceeds the limit of {ENUMERATION_LIMIT}",
                    self.vocab_size
                ))
            })?;
        let mut out = Vec::with_capacity(count);
        let mut tokens = vec![0usize; length];
        for _ in 0..count {
            let lp: f64 = self.logprob(prompt_id, &tokens)?.iter().sum();
            out.push((tokens.clone(), lp.exp()));
            for slot in tokens.iter_mut().rev() {
                *slot += 1;
                if *slot < self.vocab_size {
                    break;
                }
                *slot = 0;
            }
        }
        Ok(out)
    }

    /// Plain-text table: a header line, one row per context, then one row per prompt offset.
    pub fn to_table_string(&self) -> String {
        let v = self.vocab_size;
        let mut out = format!(
            "# softmax-policy vocab_size={} max_len={} order={} num_prompts={}\n",
            v,
            self.max_len,
            self.order.index(),
            self.num_prompts
        );
        for (i, row) in self.params.chunks(v).enumerate() {
            if i == self.num_contexts() {
                out.push_str("# prompt offsets\n");
            }
            let line: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn from_table_str(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::InvalidInput("empty policy table".into()))?;
        let mut dims = [None; 4];
        for field in header.trim_start_matches('#').split_whitespace().skip(1) {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::InvalidInput(format!("malformed header field {field:?}")))?;
            let value: usize = value
                .parse()
                .map_err(|_| Error::InvalidInput(format!("header field {key} is not an integer: {value:?}")))?;
            let slot = match key {
                "vocab_size" => 0,
                "max_len" => 1,
                "order" => 2,
                "num_prompts" => 3,
                other => return Err(Error::InvalidInput(format!("unknown header field {other:?}"))),
            };
            dims[slot] = Some(value);
        }
        let [Some(v), Some(t), Some(order), Some(prompts)] = dims else {
            return Err(Error::InvalidInput("policy header is missing a dimension".into()));
        };
        let mut policy = Self::uniform(v, t, ContextOrder::from_index(order)?, prompts)?;
        let mut flat = Vec::with_capacity(policy.num_params());
        for (lineno, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row: std::result::Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
            let row = row.map_err(|e| Error::InvalidInput(format!("line {}: {e}", lineno + 2)))?;
            if row.len() != v {
                return Err(Error::InvalidInput(format!("line {}: expected {v} values, got {}", lineno + 2, row.len())));
            }
            flat.extend(row);
        }
        policy.set_params(flat)?;
        Ok(policy)
    }
}

/// Synthetic sequence-level reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RewardKind {
    /// Fraction of positions holding the target token.
    TargetCount,
    /// 1 if the target appears at two adjacent positions, else 0.
    PatternMatch,
    /// Target fraction minus `weight · T / T_max`.
    LengthPenalizedCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub kind: RewardKind,
    pub target_token: usize,
    pub weight: f64,
}

impl Default for RewardSpec {
    fn default() -> Self {
        Self { kind: RewardKind::TargetCount, target_token: 0, weight: 0.0 }
    }
}

impl RewardSpec {
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.target_token >= vocab_size {
            return Err(Error::InvalidInput(format!("target token {} out of range for V = {vocab_size}", self.target_token)));
        }
        if !(self.weight.is_finite() && self.weight >= 0.0) {
            return Err(Error::InvalidInput(format!("reward weight must be finite and >= 0, got {}", self.weight)));
        }
        Ok(())
    }

    pub fn score_tokens(&self, tokens: &[usize], max_len: usize) -> f64 {
        if tokens.is_empty() {
            return 0.0;
        }
        let count = tokens.iter().filter(|&&y| y == self.target_token).count() as f64;
        let frac = count / tokens.len() as f64;
        match self.kind {
            RewardKind::TargetCount => frac,
            RewardKind::PatternMatch => {
                let hit = tokens.windows(2).any(|w| w[0] == self.target_token && w[1] == self.target_token);
                if hit {
                    1.0
                } else {
                    0.0
                }
            }
            RewardKind::LengthPenalizedCount => frac - self.weight * tokens.len() as f64 / max_len as f64,
        }
    }
}

/// Reward of a trajectory under `spec`.
pub fn score_reward(spec: &RewardSpec, trajectory: &Trajectory, max_len: usize) -> f64 {
    spec.score_tokens(&trajectory.tokens, max_len)
}
