//! Policy-gradient estimators over tabular policies.
//!
//! Every estimator reduces to per-token coefficients `c_{i,t}` multiplying the token
//! score `∇ log π(y_t | ·)`:
//!
//! | estimator   | coefficient                                   |
//! |-------------|-----------------------------------------------|
//! | REINFORCE   | `A_i`                                         |
//! | raw seq IS  | `W_i · A_i`                                   |
//! | token IS    | `ρ_{i,t} · A_i`                               |
//! | VESPO       | `φ(W_i) · A_i`, exponents chosen by sign(A_i) |
//! | GRPO token  | `φ_GRPO(ρ_{i,t}) · A_i`                       |
//! | GSPO        | `φ_GSPO(W_i) · A_i`                           |
//! | seq clip    | `min(W_i, cap) · A_i`                         |
//!
//! The coefficients are constants (never differentiated). Current-policy log-probs are
//! always recomputed from the policy; stored `logp_pi` values are ignored.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{
    self, apply_length_norm, phi_grpo_token, phi_gspo_tokens, phi_seq_clip, phi_vespo_guarded, raw_weight, select_params,
    surrogate_f, AdvantageSign, ClipParams, KernelParams, LengthNorm, LogWeight, DEFAULT_MAX_WEIGHT,
};
use crate::policy::{RewardSpec, SoftmaxPolicy, Trajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    values: Vec<f64>,
    norm: f64,
}

impl GradientVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("gradient entries must be finite, got {bad}")));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(Self { values, norm })
    }

    pub fn zeros(len: usize) -> Self {
        Self { values: vec![0.0; len], norm: 0.0 }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// ‖self − other‖.
    pub fn distance(&self, other: &GradientVector) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }

    /// ‖self − reference‖ / max(‖reference‖, floor).
    pub fn relative_error(&self, reference: &GradientVector, floor: f64) -> f64 {
        self.distance(reference) / reference.norm.max(floor)
    }
}

/// Group-baseline advantages `A_i = R_i − mean(R over the group of i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageBatch {
    pub advantages: Vec<f64>,
    pub group_ids: Vec<usize>,
    pub baselines: BTreeMap<usize, f64>,
}

pub fn group_advantages(rewards: &[f64], group_ids: &[usize]) -> Result<AdvantageBatch> {
    if rewards.len() != group_ids.len() {
        return Err(Error::InvalidInput(format!(
            "{} rewards but {} group ids",
            rewards.len(),
            group_ids.len()
        )));
    }
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (&r, &g) in rewards.iter().zip(group_ids) {
        if !r.is_finite() {
            return Err(Error::InvalidInput(format!("reward must be finite, got {r}")));
        }
        let e = sums.entry(g).or_insert((0.0, 0));
        e.0 += r;
        e.1 += 1;
    }
    let baselines: BTreeMap<usize, f64> = sums.into_iter().map(|(g, (s, n))| (g, s / n as f64)).collect();
    let advantages = rewards.iter().zip(group_ids).map(|(r, g)| r - baselines[g]).collect();
    Ok(AdvantageBatch { advantages, group_ids: group_ids.to_vec(), baselines })
}

/// Σ_t (logp_pi[t] − logp_mu[t]) from the stored log-probs.
pub fn seq_log_weight(trajectory: &Trajectory) -> Result<LogWeight> {
    if trajectory.logp_pi.len() != trajectory.tokens.len() || trajectory.logp_mu.len() != trajectory.tokens.len() {
        return Err(Error::InvalidInput("log-prob lists must match the token count".into()));
    }
    let value = trajectory.logp_pi.iter().zip(&trajectory.logp_mu).map(|(p, m)| p - m).sum();
    LogWeight::new(value, trajectory.tokens.len())
}

/// How per-trajectory contributions are normalized within a mini-batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Aggregation {
    /// `(1/n) Σ_i Σ_t`: the sequence-mean form of the reshaped gradient.
    #[default]
    SequenceMean,
    /// `(1/Σ_i T_i) Σ_i Σ_t`: every token in the batch counts equally.
    TokenSum,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimator {
    Reinforce,
    RawIs { max_weight: f64 },
    TokenIs,
    Vespo { params: KernelParams, length_norm: LengthNorm, max_weight: f64 },
    GrpoToken { clip: ClipParams },
    Gspo { clip: ClipParams },
    SeqClip { cap: f64 },
}

impl Estimator {
    pub fn vespo(params: KernelParams) -> Self {
        Estimator::Vespo { params, length_norm: LengthNorm::None, max_weight: DEFAULT_MAX_WEIGHT }
    }

    pub fn raw_is() -> Self {
        Estimator::RawIs { max_weight: DEFAULT_MAX_WEIGHT }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Estimator::Vespo { params, max_weight, .. } => {
                params.validate()?;
                check_guard(*max_weight)
            }
            Estimator::RawIs { max_weight } => check_guard(*max_weight),
            Estimator::GrpoToken { clip } | Estimator::Gspo { clip } => clip.validate(),
            Estimator::SeqClip { cap } if !(*cap > 0.0) => {
                Err(Error::InvalidInput(format!("sequence clip cap must be > 0, got {cap}")))
            }
            _ => Ok(()),
        }
    }

    /// Per-token coefficients for one trajectory, or `None` when the weight is non-finite.
    fn coefficients(&self, log_ratios: &[f64], advantage: f64) -> Result<Option<Vec<f64>>> {
        let length = log_ratios.len();
        let log_w: f64 = log_ratios.iter().sum();
        if !log_w.is_finite() {
            return Ok(None);
        }
        let sign = AdvantageSign::of(advantage);
        let lw = LogWeight::new(log_w, length)?;
        let seq = |w: f64| Some(vec![w * advantage; length]);
        let coeffs = match *self {
            Estimator::Reinforce => seq(1.0),
            Estimator::RawIs { max_weight } => seq(raw_weight(log_w, max_weight)?),
            Estimator::Vespo { params, length_norm, max_weight } => {
                let (c1, c2) = select_params(advantage, &params);
                seq(phi_vespo_guarded(apply_length_norm(lw, length_norm), c1, c2, max_weight)?)
            }
            Estimator::Gspo { clip } => seq(phi_gspo_tokens(log_ratios, sign, clip)?),
            Estimator::SeqClip { cap } => seq(phi_seq_clip(log_w, cap)?),
            Estimator::TokenIs => Some(log_ratios.iter().map(|lr| lr.exp() * advantage).collect()),
            Estimator::GrpoToken { clip } => {
                let mut out = Vec::with_capacity(length);
                for lr in log_ratios {
                    let rho = lr.exp();
                    if !(rho.is_finite() && rho > 0.0) {
                        return Ok(None);
                    }
                    out.push(phi_grpo_token(rho, sign, clip)? * advantage);
                }
                Some(out)
            }
        };
        Ok(coeffs.filter(|c| c.iter().all(|v| v.is_finite())))
    }
}

fn check_guard(max_weight: f64) -> Result<()> {
    if max_weight > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("max weight guard must be > 0, got {max_weight}")))
    }
}

/// Output of one estimator evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub gradient: GradientVector,
    /// Fresh log W per trajectory (NaN for skipped ones).
    pub log_weights: Vec<f64>,
    pub skipped_nonfinite: usize,
    /// Value of the detached-coefficient loss −Σ c · log π, normalized like the gradient.
    pub pg_loss: f64,
}

struct Contribution {
    grad: Vec<f64>,
    log_w: f64,
    loss: f64,
    skipped: bool,
}

/// Fresh per-token log-probs of a trajectory plus its score rows.
struct Scored {
    logp: Vec<f64>,
    /// (context, full probability row) per position.
    rows: Vec<(usize, Vec<f64>)>,
}

fn score(policy: &SoftmaxPolicy, trajectory: &Trajectory) -> Result<Scored> {
    if trajectory.logp_mu.len() != trajectory.tokens.len() {
        return Err(Error::InvalidInput("behavior log-probs must match the token count".into()));
    }
    if trajectory.prompt_id >= policy.num_prompts() {
        return Err(Error::InvalidInput(format!("prompt {} out of range", trajectory.prompt_id)));
    }
    let mut logp = Vec::with_capacity(trajectory.len());
    let mut rows = Vec::with_capacity(trajectory.len());
    for (t, &y) in trajectory.tokens.iter().enumerate() {
        if y >= policy.vocab_size() {
            return Err(Error::InvalidInput(format!("token {y} out of range")));
        }
        let ctx = policy.context(&trajectory.tokens, t);
        let lp = policy.step_log_probs(trajectory.prompt_id, ctx);
        logp.push(lp[y]);
        rows.push((ctx, lp.iter().map(|l| l.exp()).collect()));
    }
    Ok(Scored { logp, rows })
}

/// Add `coef · ∇ log π(y_t | ·)` for every position into `grad`.
fn add_scores(policy: &SoftmaxPolicy, trajectory: &Trajectory, scored: &Scored, coeffs: &[f64], grad: &mut [f64]) {
    let v = policy.vocab_size();
    for ((&y, (ctx, probs)), &c) in trajectory.tokens.iter().zip(&scored.rows).zip(coeffs) {
        if c == 0.0 {
            continue;
        }
        let logit_row = policy.logit_index(*ctx, 0);
        let offset_row = policy.offset_index(trajectory.prompt_id, 0);
        for k in 0..v {
            let s = if k == y { 1.0 - probs[k] } else { -probs[k] };
            grad[logit_row + k] += c * s;
            grad[offset_row + k] += c * s;
        }
    }
}

/// Core accumulator: `Σ_i weight_i Σ_t coef_{i,t} ∇ log π(y_{i,t})` with a custom coefficient rule.
fn accumulate<F>(policy: &SoftmaxPolicy, batch: &[Trajectory], weights: &[f64], coef: F) -> Result<GradientEstimate>
where
    F: Fn(usize, &Trajectory, &[f64]) -> Result<Option<Vec<f64>>> + Sync,
{
    if weights.len() != batch.len() {
        return Err(Error::InvalidInput(format!("{} weights for {} trajectories", weights.len(), batch.len())));
    }
    let n = policy.num_params();
    let parts: Vec<Contribution> = batch
        .par_iter()
        .enumerate()
        .map(|(i, tr)| -> Result<Contribution> {
            let scored = score(policy, tr)?;
            let log_ratios: Vec<f64> = scored.logp.iter().zip(&tr.logp_mu).map(|(p, m)| p - m).collect();
            let log_w: f64 = log_ratios.iter().sum();
            let mut grad = vec![0.0; n];
            match coef(i, tr, &log_ratios)? {
                Some(coeffs) => {
                    add_scores(policy, tr, &scored, &coeffs, &mut grad);
                    let loss = -coeffs.iter().zip(&scored.logp).map(|(c, l)| c * l).sum::<f64>();
                    Ok(Contribution { grad, log_w, loss, skipped: false })
                }
                None => Ok(Contribution { grad, log_w: f64::NAN, loss: 0.0, skipped: true }),
            }
        })
        .collect::<Result<_>>()?;

    // Reduce in index order so results do not depend on thread scheduling.
    let mut total = vec![0.0; n];
    let mut loss = 0.0;
    let mut skipped = 0;
    let mut log_weights = Vec::with_capacity(parts.len());
    for (part, &w) in parts.iter().zip(weights) {
        log_weights.push(part.log_w);
        if part.skipped {
            skipped += 1;
            continue;
        }
        for (t, g) in total.iter_mut().zip(&part.grad) {
            *t += w * g;
        }
        loss += w * part.loss;
    }
    Ok(GradientEstimate { gradient: GradientVector::new(total)?, log_weights, skipped_nonfinite: skipped, pg_loss: loss })
}

/// Estimator over a mini-batch, normalized according to `aggregation`.
pub fn estimate(
    estimator: &Estimator,
    policy: &SoftmaxPolicy,
    batch: &[Trajectory],
    advantages: &[f64],
    aggregation: Aggregation,
) -> Result<GradientEstimate> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty mini-batch".into()));
    }
    let scale = match aggregation {
        Aggregation::SequenceMean => 1.0 / batch.len() as f64,
        Aggregation::TokenSum => 1.0 / batch.iter().map(Trajectory::len).sum::<usize>().max(1) as f64,
    };
    estimate_weighted(estimator, policy, batch, advantages, &vec![scale; batch.len()])
}

/// Estimator with explicit per-trajectory weights (enumeration probabilities for exact expectations).
pub fn estimate_weighted(
    estimator: &Estimator,
    policy: &SoftmaxPolicy,
    batch: &[Trajectory],
    advantages: &[f64],
    weights: &[f64],
) -> Result<GradientEstimate> {
    estimator.validate()?;
    if advantages.len() != batch.len() {
        return Err(Error::InvalidInput(format!("{} advantages for {} trajectories", advantages.len(), batch.len())));
    }
    accumulate(policy, batch, weights, |i, _, log_ratios| estimator.coefficients(log_ratios, advantages[i]))
}

pub fn vespo_gradient(policy: &SoftmaxPolicy, batch: &[Trajectory], advantages: &[f64], params: KernelParams) -> Result<GradientEstimate> {
    estimate(&Estimator::vespo(params), policy, batch, advantages, Aggregation::SequenceMean)
}

pub fn token_is_gradient(policy: &SoftmaxPolicy, batch: &[Trajectory], advantages: &[f64]) -> Result<GradientEstimate> {
    estimate(&Estimator::TokenIs, policy, batch, advantages, Aggregation::SequenceMean)
}

pub fn seq_is_gradient(policy: &SoftmaxPolicy, batch: &[Trajectory], advantages: &[f64]) -> Result<GradientEstimate> {
    estimate(&Estimator::raw_is(), policy, batch, advantages, Aggregation::SequenceMean)
}

pub fn reinforce_gradient(policy: &SoftmaxPolicy, batch: &[Trajectory], advantages: &[f64]) -> Result<GradientEstimate> {
    estimate(&Estimator::Reinforce, policy, batch, advantages, Aggregation::SequenceMean)
}

/// All length-`length` responses to `prompt_id` under `behavior`, with behavior log-probs filled.
pub fn enumerated_batch(behavior: &SoftmaxPolicy, prompt_id: usize, length: usize) -> Result<(Vec<Trajectory>, Vec<f64>)> {
    let all = behavior.enumerate_trajectories(prompt_id, length)?;
    let mut batch = Vec::with_capacity(all.len());
    let mut probs = Vec::with_capacity(all.len());
    for (tokens, p) in all {
        let logp = behavior.logprob(prompt_id, &tokens)?;
        batch.push(Trajectory { prompt_id, tokens, logp_pi: logp.clone(), logp_mu: logp, reward: 0.0, behavior_version: 0 });
        probs.push(p);
    }
    Ok((batch, probs))
}

/// Exact expectation over τ ~ `behavior` of an estimator's single-trajectory contribution.
pub fn expected_estimate<A>(
    estimator: &Estimator,
    policy: &SoftmaxPolicy,
    behavior: &SoftmaxPolicy,
    prompt_id: usize,
    length: usize,
    advantage: A,
) -> Result<GradientEstimate>
where
    A: Fn(&[usize]) -> f64,
{
    let (batch, probs) = enumerated_batch(behavior, prompt_id, length)?;
    let advantages: Vec<f64> = batch.iter().map(|t| advantage(&t.tokens)).collect();
    estimate_weighted(estimator, policy, &batch, &advantages, &probs)
}

/// ∇ E_{τ~π}[R(τ)] = Σ_τ π(τ) R(τ) ∇ log π(τ), by enumeration.
pub fn exact_gradient(policy: &SoftmaxPolicy, prompt_id: usize, reward: &RewardSpec, length: usize) -> Result<GradientVector> {
    let max_len = policy.max_len();
    let est = expected_estimate(&Estimator::Reinforce, policy, policy, prompt_id, length, |y| {
        reward.score_tokens(y, max_len)
    })?;
    Ok(est.gradient)
}

/// E_{τ~π}[R(τ)] by enumeration.
pub fn expected_reward(policy: &SoftmaxPolicy, prompt_id: usize, reward: &RewardSpec, length: usize) -> Result<f64> {
    Ok(policy
        .enumerate_trajectories(prompt_id, length)?
        .iter()
        .map(|(y, p)| p * reward.score_tokens(y, policy.max_len()))
        .sum())
}

/// E_{τ~μ}[f(W(τ)) · A(τ)], the surrogate whose gradient the VESPO estimator targets.
pub fn surrogate_objective<A>(
    policy: &SoftmaxPolicy,
    behavior: &SoftmaxPolicy,
    prompt_id: usize,
    length: usize,
    params: &KernelParams,
    advantage: A,
) -> Result<f64>
where
    A: Fn(&[usize]) -> f64,
{
    let mut total = 0.0;
    for (tokens, mu) in behavior.enumerate_trajectories(prompt_id, length)? {
        let a = advantage(&tokens);
        let (c1, c2) = select_params(a, params);
        let log_pi: f64 = policy.logprob(prompt_id, &tokens)?.iter().sum();
        let log_mu = mu.ln();
        let w = (log_pi - log_mu).exp();
        total += mu * kernels::surrogate_f(w, c1, c2)? * a;
    }
    Ok(total)
}

/// Norms from comparing sequence-level and token-level IS at one perturbation scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirstOrderGap {
    /// ‖∇J_seq − ∇J_tok‖.
    pub gap_norm: f64,
    /// ‖(∇J_seq − ∇J_tok) − Σ_{s≠t} E_μ[(ρ_s − 1) R ∇ log π(y_t)]‖: what is left after the
    /// first-order cross-token correction.
    pub residual_norm: f64,
}

/// Exact sequence-vs-token IS comparison with μ = π shifted by `scale · direction`.
///
/// Both expectations weight the scores by the reward `R(τ)`.
pub fn first_order_gap(
    policy: &SoftmaxPolicy,
    direction: &[f64],
    scale: f64,
    prompt_id: usize,
    reward: &RewardSpec,
    length: usize,
) -> Result<FirstOrderGap> {
    let behavior = policy.perturbed(direction, scale)?;
    let max_len = policy.max_len();
    let r = |y: &[usize]| reward.score_tokens(y, max_len);
    let unguarded = Estimator::RawIs { max_weight: f64::INFINITY };
    let seq = expected_estimate(&unguarded, policy, &behavior, prompt_id, length, r)?.gradient;
    let tok = expected_estimate(&Estimator::TokenIs, policy, &behavior, prompt_id, length, r)?.gradient;

    let (batch, probs) = enumerated_batch(&behavior, prompt_id, length)?;
    let cross = accumulate(policy, &batch, &probs, |_, tr, log_ratios| {
        let rw = r(&tr.tokens);
        let total: f64 = log_ratios.iter().map(|lr| lr.exp() - 1.0).sum();
        Ok(Some(log_ratios.iter().map(|lr| rw * (total - (lr.exp() - 1.0))).collect()))
    })?
    .gradient;

    let gap: Vec<f64> = seq.values().iter().zip(tok.values()).map(|(a, b)| a - b).collect();
    let gap = GradientVector::new(gap)?;
    Ok(FirstOrderGap { gap_norm: gap.norm(), residual_norm: gap.distance(&cross) })
}

/// Gradient of E_μ[f(W) A] computed independently of [`surrogate_objective`]'s parametrization:
/// Σ_τ μ(τ) f'(W) A ∇W = Σ_τ μ(τ) (φ(W)/W) A W ∇ log π.
pub fn surrogate_gradient_via_chain_rule<A>(
    policy: &SoftmaxPolicy,
    behavior: &SoftmaxPolicy,
    prompt_id: usize,
    length: usize,
    params: &KernelParams,
    advantage: A,
) -> Result<GradientVector>
where
    A: Fn(&[usize]) -> f64 + Sync,
{
    let (batch, probs) = enumerated_batch(behavior, prompt_id, length)?;
    Ok(accumulate(policy, &batch, &probs, |_, tr, log_ratios| {
        let a = advantage(&tr.tokens);
        let (c1, c2) = select_params(a, params);
        let w = log_ratios.iter().sum::<f64>().exp();
        // f'(W) = W^{c1-1} e^{c2(1-W)}; multiply by W for ∇W = W ∇ log π.
        let slope = if w == 0.0 { 0.0 } else { w.powf(c1 - 1.0) * (c2 * (1.0 - w)).exp() };
        Ok(Some(vec![slope * w * a; tr.len()]))
    })?
    .gradient)
}

/// Surrogate value at W with the exponents of the given advantage sign.
pub fn surrogate_for_sign(w: f64, sign: AdvantageSign, params: &KernelParams) -> Result<f64> {
    let (c1, c2) = match sign {
        AdvantageSign::Positive => (params.c1_pos, params.c2_pos),
        AdvantageSign::Negative => (params.c1_neg, params.c2_neg),
    };
    surrogate_f(w, c1, c2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{ContextOrder, RewardKind};
    use crate::rng::substream;
    use rand::Rng;

    fn random_policy(v: usize, t: usize, seed: u64) -> SoftmaxPolicy {
        let mut p = SoftmaxPolicy::uniform(v, t, ContextOrder::Bigram, 1).unwrap();
        let mut rng = substream(seed, &[]);
        let params = (0..p.num_params()).map(|_| rng.random::<f64>() - 0.5).collect();
        p.set_params(params).unwrap();
        p
    }

    fn random_direction(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = substream(seed, &[99]);
        (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
    }

    fn sampled_batch(policy: &SoftmaxPolicy, n: usize, len: usize, seed: u64) -> Vec<Trajectory> {
        let mut rng = substream(seed, &[1]);
        (0..n).map(|_| policy.sample(0, len, &mut rng).unwrap()).collect()
    }

    #[test]
    fn advantages_examples() {
        let a = group_advantages(&[1.0, 1.0, 0.0, 0.0], &[0, 0, 0, 0]).unwrap();
        assert_eq!(a.advantages, vec![0.5, 0.5, -0.5, -0.5]);
        let a = group_advantages(&[0.3; 5], &[0, 0, 1, 1, 1]).unwrap();
        assert!(a.advantages.iter().all(|&x| x == 0.0));
        let a = group_advantages(&[0.7, 0.1], &[0, 1]).unwrap();
        assert_eq!(a.advantages, vec![0.0, 0.0]);
        assert!(group_advantages(&[1.0], &[0, 1]).is_err());
    }

    #[test]
    fn log_weight_is_a_sum() {
        let mut tr = Trajectory {
            prompt_id: 0,
            tokens: vec![0; 6],
            logp_pi: vec![-0.5; 6],
            logp_mu: vec![-0.5; 6],
            reward: 0.0,
            behavior_version: 0,
        };
        assert_eq!(seq_log_weight(&tr).unwrap().value, 0.0);
        tr.logp_mu = vec![-0.7; 6];
        assert!((seq_log_weight(&tr).unwrap().value - 6.0 * 0.2).abs() < 1e-14);

        let mut rng = substream(4, &[]);
        tr.tokens = vec![0; 5];
        tr.logp_pi = (0..5).map(|_| -rng.random::<f64>()).collect();
        tr.logp_mu = (0..5).map(|_| -rng.random::<f64>()).collect();
        let mut brute = 0.0;
        for i in 0..5 {
            brute += tr.logp_pi[i];
            brute -= tr.logp_mu[i];
        }
        assert!((seq_log_weight(&tr).unwrap().value - brute).abs() < 1e-14);
    }

    #[test]
    fn on_policy_estimators_reduce_to_reinforce() {
        let p = random_policy(3, 4, 1);
        let batch = sampled_batch(&p, 32, 4, 2);
        let adv: Vec<f64> = (0..32).map(|i| (i as f64 - 15.5) / 10.0).collect();
        let base = reinforce_gradient(&p, &batch, &adv).unwrap().gradient;
        for est in [
            vespo_gradient(&p, &batch, &adv, KernelParams::default()).unwrap(),
            token_is_gradient(&p, &batch, &adv).unwrap(),
            seq_is_gradient(&p, &batch, &adv).unwrap(),
        ] {
            assert!(est.gradient.distance(&base) < 1e-14);
            assert_eq!(est.skipped_nonfinite, 0);
        }
    }

    #[test]
    fn zero_advantage_gives_zero_gradient() {
        let p = random_policy(3, 3, 5);
        let mu = random_policy(3, 3, 6);
        let mut batch = sampled_batch(&mu, 1, 3, 3);
        batch[0].logp_mu = mu.logprob(0, &batch[0].tokens).unwrap();
        let g = vespo_gradient(&p, &batch, &[0.0], KernelParams::default()).unwrap();
        assert_eq!(g.gradient.norm(), 0.0);
    }

    #[test]
    fn single_token_token_is_equals_seq_is() {
        let p = random_policy(4, 1, 7);
        let mu = random_policy(4, 1, 8);
        let mut batch = sampled_batch(&mu, 16, 1, 9);
        for tr in &mut batch {
            tr.logp_mu = mu.logprob(0, &tr.tokens).unwrap();
        }
        let adv: Vec<f64> = (0..16).map(|i| (i % 3) as f64 - 1.0).collect();
        let a = token_is_gradient(&p, &batch, &adv).unwrap().gradient;
        let b = seq_is_gradient(&p, &batch, &adv).unwrap().gradient;
        assert!(a.distance(&b) < 1e-15);
    }

    #[test]
    fn identity_exponents_match_seq_is_exactly() {
        let p = random_policy(3, 4, 10);
        let mu = random_policy(3, 4, 11);
        let mut batch = sampled_batch(&mu, 24, 4, 12);
        for tr in &mut batch {
            tr.logp_mu = mu.logprob(0, &tr.tokens).unwrap();
        }
        let adv: Vec<f64> = (0..24).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let v = vespo_gradient(&p, &batch, &adv, KernelParams::symmetric(1.0, 0.0)).unwrap();
        let s = seq_is_gradient(&p, &batch, &adv).unwrap();
        assert_eq!(v.gradient, s.gradient);
    }

    #[test]
    fn token_is_matches_hand_rolled_enumeration() {
        let p = random_policy(2, 3, 13);
        let mu = random_policy(2, 3, 14);
        let reward = RewardSpec { kind: RewardKind::TargetCount, target_token: 1, weight: 0.0 };
        let est = expected_estimate(&Estimator::TokenIs, &p, &mu, 0, 3, |y| reward.score_tokens(y, 3)).unwrap();

        let mut oracle = vec![0.0; p.num_params()];
        for (tokens, q) in mu.enumerate_trajectories(0, 3).unwrap() {
            let r = reward.score_tokens(&tokens, 3);
            for t in 0..3 {
                let ctx = p.context(&tokens, t);
                let lp = p.step_log_probs(0, ctx);
                let lm = mu.step_log_probs(0, ctx);
                let rho = (lp[tokens[t]] - lm[tokens[t]]).exp();
                for k in 0..2 {
                    let s = f64::from(u8::from(k == tokens[t])) - lp[k].exp();
                    oracle[p.logit_index(ctx, k)] += q * rho * r * s;
                    oracle[p.offset_index(0, k)] += q * rho * r * s;
                }
            }
        }
        let oracle = GradientVector::new(oracle).unwrap();
        assert!(est.gradient.distance(&oracle) < 1e-14);
    }

    #[test]
    fn raw_is_is_unbiased() {
        let p = random_policy(2, 2, 15);
        let mu = random_policy(2, 2, 16);
        let reward = RewardSpec { kind: RewardKind::TargetCount, target_token: 0, weight: 0.0 };
        let b = 0.3;
        let est = expected_estimate(&Estimator::raw_is(), &p, &mu, 0, 2, |y| reward.score_tokens(y, 2) - b).unwrap();
        let exact = exact_gradient(&p, 0, &reward, 2).unwrap();
        assert!(est.gradient.distance(&exact) < 1e-12);
    }

    #[test]
    fn constant_reward_has_zero_gradient() {
        let p = random_policy(3, 3, 17);
        let g = expected_estimate(&Estimator::Reinforce, &p, &p, 0, 3, |_| 0.75).unwrap();
        assert!(g.gradient.norm() < 1e-15);
    }

    #[test]
    fn binary_single_token_matches_sigmoid_derivative() {
        // V = 2, T = 1, reward = 1{y = 1}: dE/d(logit_1) = p(1−p), dE/d(logit_0) = −p(1−p).
        let logits = vec![vec![0.2, -0.4]];
        let p = SoftmaxPolicy::from_tables(2, 1, ContextOrder::Unconditioned, &logits, &[vec![0.0, 0.0]]).unwrap();
        let reward = RewardSpec { kind: RewardKind::TargetCount, target_token: 1, weight: 0.0 };
        let g = exact_gradient(&p, 0, &reward, 1).unwrap();
        let p1 = 1.0 / (1.0 + (0.2f64 + 0.4).exp());
        let d = p1 * (1.0 - p1);
        assert!((g.values()[1] - d).abs() < 1e-15);
        assert!((g.values()[0] + d).abs() < 1e-15);
    }

    #[test]
    fn gap_vanishes_on_policy_and_for_single_tokens() {
        let reward = RewardSpec { kind: RewardKind::TargetCount, target_token: 1, weight: 0.0 };
        let p = random_policy(3, 3, 18);
        let dir = random_direction(p.num_params(), 18);
        assert!(first_order_gap(&p, &dir, 0.0, 0, &reward, 3).unwrap().gap_norm < 1e-12);
        let p1 = random_policy(3, 1, 19);
        let dir1 = random_direction(p1.num_params(), 19);
        for scale in [0.1, 0.05, 0.3] {
            assert!(first_order_gap(&p1, &dir1, scale, 0, &reward, 1).unwrap().gap_norm < 1e-12);
        }
    }

    #[test]
    fn chain_rule_gradient_matches_estimator_expectation() {
        let p = random_policy(2, 3, 20);
        let mu = random_policy(2, 3, 21);
        let params = KernelParams::default();
        let adv = |y: &[usize]| y.iter().filter(|&&k| k == 1).count() as f64 / 3.0 - 0.4;
        let est = expected_estimate(&Estimator::vespo(params), &p, &mu, 0, 3, adv).unwrap();
        let chain = surrogate_gradient_via_chain_rule(&p, &mu, 0, 3, &params, adv).unwrap();
        assert!(est.gradient.relative_error(&chain, 1e-12) < 1e-12);
    }

    #[test]
    fn token_sum_uses_token_count() {
        let p = random_policy(3, 4, 22);
        let batch = sampled_batch(&p, 8, 4, 23);
        let adv = vec![0.5; 8];
        let seq = estimate(&Estimator::Reinforce, &p, &batch, &adv, Aggregation::SequenceMean).unwrap();
        let tok = estimate(&Estimator::Reinforce, &p, &batch, &adv, Aggregation::TokenSum).unwrap();
        for (a, b) in seq.gradient.values().iter().zip(tok.gradient.values()) {
            assert!((a / 4.0 - b).abs() < 1e-15);
        }
    }

    #[test]
    fn extreme_weights_under_raw_is_saturate() {
        let p = random_policy(2, 2, 24);
        let mut batch = sampled_batch(&p, 2, 2, 25);
        batch[0].logp_mu = vec![-400.0, -400.0];
        let est = seq_is_gradient(&p, &batch, &[1.0, -1.0]).unwrap();
        assert_eq!(est.skipped_nonfinite, 0);
        assert!(est.gradient.norm() > 1e9);
        batch[1].logp_mu = vec![f64::NEG_INFINITY, -1.0];
        let est = seq_is_gradient(&p, &batch, &[1.0, -1.0]).unwrap();
        assert_eq!(est.skipped_nonfinite, 1);
    }
}
