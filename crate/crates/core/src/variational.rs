//! Finite-support checks of the proposal-distribution view of weight reshaping.
//!
//! A reshaping kernel φ induces the proposal Q = μ φ(W) / Z with Z = E_μ[φ(W)]. The
//! constrained problem
//!
//! ```text
//! min_Q (1−α) KL(Q‖μ) + α KL(Q‖π)   s.t.  E_Q[W] ≤ C
//! ```
//!
//! has the solution Q ∝ μ^{1−α} π^α e^{−λW}; [`solve_proposal`] finds λ by bisection.

use rand::Rng;

use crate::error::{Error, Result};
use crate::kernels::SequenceKernel;
use crate::rng::uniform_simplex;

const SUM_TOL: f64 = 1e-12;
const LAMBDA_CEILING: f64 = 1e9;
const MOMENT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    probs: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidInput("distribution needs at least one outcome".into()));
        }
        if let Some(bad) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::InvalidInput(format!("probabilities must be finite and >= 0, got {bad}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidInput(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { probs })
    }

    /// Normalize non-negative masses.
    pub fn from_masses(masses: &[f64]) -> Result<Self> {
        let total: f64 = masses.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Degenerate(format!("masses sum to {total}")));
        }
        Self::new(masses.iter().map(|m| m / total).collect())
    }

    /// Normalize log-masses without leaving log space until the end.
    pub fn from_log_masses(log_masses: &[f64]) -> Result<Self> {
        let max = log_masses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::Degenerate("proposal normalizer is zero".into()));
        }
        let shifted: Vec<f64> = log_masses.iter().map(|l| (l - max).exp()).collect();
        Self::from_masses(&shifted)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn expect(&self, values: &[f64]) -> f64 {
        self.probs.iter().zip(values).map(|(p, v)| if *p == 0.0 { 0.0 } else { p * v }).sum()
    }

    pub fn total_variation(&self, other: &DiscreteDistribution) -> f64 {
        0.5 * self.probs.iter().zip(&other.probs).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }
}

/// KL(p‖q) with 0 · log 0 = 0; infinite when p puts mass where q has none.
pub fn kl_divergence(p: &DiscreteDistribution, q: &DiscreteDistribution) -> f64 {
    p.probs
        .iter()
        .zip(&q.probs)
        .map(|(&a, &b)| match (a, b) {
            (0.0, _) => 0.0,
            (_, 0.0) => f64::INFINITY,
            _ => a * (a / b).ln(),
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariationalInstance {
    pub mu: DiscreteDistribution,
    pub pi: DiscreteDistribution,
    pub alpha: f64,
    pub budget: f64,
    weights: Vec<f64>,
}

impl VariationalInstance {
    /// Outcomes with μ = 0 are not allowed (their weight is undefined).
    pub fn new(mu: DiscreteDistribution, pi: DiscreteDistribution, alpha: f64, budget: f64) -> Result<Self> {
        if mu.len() != pi.len() {
            return Err(Error::InvalidInput(format!("μ has {} outcomes, π has {}", mu.len(), pi.len())));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidInput(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        if !(budget > 0.0 && budget.is_finite()) {
            return Err(Error::InvalidInput(format!("budget C must be finite and > 0, got {budget}")));
        }
        let weights = importance_weights(&mu, &pi)?;
        Ok(Self { mu, pi, alpha, budget, weights })
    }

    /// W_k = π_k / μ_k.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Dirichlet(1) μ and π over `k` outcomes with budget `C = W_min + fraction · (E_{Q₀}[W] − W_min)`,
    /// where Q₀ is the unconstrained geometric mixture. `fraction ≥ 1` leaves the constraint inactive.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, k: usize, alpha: f64, fraction: f64) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidInput("random instances need k >= 2".into()));
        }
        let draw = |rng: &mut R| -> Result<DiscreteDistribution> {
            let raw: Vec<f64> = uniform_simplex(rng, k).into_iter().map(|p| p.max(1e-6)).collect();
            DiscreteDistribution::from_masses(&raw)
        };
        let mu = draw(rng)?;
        let pi = draw(rng)?;
        let mut instance = Self::new(mu, pi, alpha, 1.0)?;
        let q0 = closed_form_proposal(&instance, 0.0)?;
        let e0 = q0.expect(&instance.weights);
        let w_min = instance.weights.iter().copied().fold(f64::INFINITY, f64::min);
        instance.budget = w_min + fraction * (e0 - w_min).max(0.0);
        if !(instance.budget > 0.0) {
            instance.budget = e0;
        }
        Ok(instance)
    }
}

fn importance_weights(mu: &DiscreteDistribution, pi: &DiscreteDistribution) -> Result<Vec<f64>> {
    mu.probs
        .iter()
        .zip(&pi.probs)
        .map(|(&m, &p)| {
            if m == 0.0 {
                Err(Error::InvalidInput("μ must have full support (W undefined where μ = 0)".into()))
            } else {
                Ok(p / m)
            }
        })
        .collect()
}

/// Q_k ∝ μ_k^{1−α} π_k^α e^{−λ W_k}, normalized in log space.
pub fn closed_form_proposal(instance: &VariationalInstance, lambda: f64) -> Result<DiscreteDistribution> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidInput(format!("lambda must be >= 0, got {lambda}")));
    }
    let a = instance.alpha;
    let log_masses: Vec<f64> = instance
        .mu
        .probs
        .iter()
        .zip(&instance.pi.probs)
        .zip(&instance.weights)
        .map(|((&m, &p), &w)| {
            let pi_term = if a == 0.0 { 0.0 } else { a * p.ln() };
            let mu_term = if a == 1.0 { 0.0 } else { (1.0 - a) * m.ln() };
            mu_term + pi_term - lambda * w
        })
        .collect();
    DiscreteDistribution::from_log_masses(&log_masses)
}

/// (1−α) KL(Q‖μ) + α KL(Q‖π). A term with zero coefficient is dropped even if infinite.
pub fn dual_kl_objective(q: &DiscreteDistribution, instance: &VariationalInstance) -> Result<f64> {
    if q.len() != instance.mu.len() {
        return Err(Error::InvalidInput("Q and μ have different support sizes".into()));
    }
    let a = instance.alpha;
    let mu_kl = kl_divergence(q, &instance.mu);
    let pi_kl = if a > 0.0 { kl_divergence(q, &instance.pi) } else { 0.0 };
    if !mu_kl.is_finite() || !pi_kl.is_finite() {
        return Err(Error::Domain("Q puts mass outside supp(μ) ∩ supp(π)".into()));
    }
    let mu_part = if a < 1.0 { (1.0 - a) * mu_kl } else { 0.0 };
    Ok(mu_part + a * pi_kl)
}

/// Optimal proposal with its multiplier and normalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSolution {
    pub q: DiscreteDistribution,
    pub lambda: f64,
    /// Σ_k μ_k^{1−α} π_k^α e^{−λ W_k}.
    pub z: f64,
    pub objective: f64,
    /// E_Q[W] at the solution.
    pub moment: f64,
}

fn normalizer(instance: &VariationalInstance, lambda: f64) -> f64 {
    let a = instance.alpha;
    instance
        .mu
        .probs
        .iter()
        .zip(&instance.pi.probs)
        .zip(&instance.weights)
        .map(|((&m, &p), &w)| m.powf(1.0 - a) * p.powf(a) * (-lambda * w).exp())
        .sum()
}

/// E_{Q_λ}[W] for the closed-form proposal at multiplier λ.
pub fn proposal_moment(instance: &VariationalInstance, lambda: f64) -> Result<f64> {
    Ok(closed_form_proposal(instance, lambda)?.expect(&instance.weights))
}

/// Solve the constrained problem: λ = 0 if the constraint is slack, otherwise bisect
/// λ until E_Q[W] meets the budget from below.
pub fn solve_proposal(instance: &VariationalInstance) -> Result<ProposalSolution> {
    let c = instance.budget;
    let finish = |lambda: f64| -> Result<ProposalSolution> {
        let q = closed_form_proposal(instance, lambda)?;
        let objective = dual_kl_objective(&q, instance)?;
        let moment = q.expect(&instance.weights);
        Ok(ProposalSolution { q, lambda, z: normalizer(instance, lambda), objective, moment })
    };
    if proposal_moment(instance, 0.0)? <= c {
        return finish(0.0);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while proposal_moment(instance, hi)? > c {
        lo = hi;
        hi *= 2.0;
        if hi > LAMBDA_CEILING {
            return Err(Error::Infeasible(format!(
                "E_Q[W] stays above C = {c} for every λ ≤ {LAMBDA_CEILING:e}"
            )));
        }
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if proposal_moment(instance, mid)? > c {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let solution = finish(hi)?;
    if solution.moment - c > MOMENT_TOL {
        return Err(Error::Infeasible(format!("bisection ended with E_Q[W] = {} > C = {c}", solution.moment)));
    }
    Ok(solution)
}

/// Both sides of E_μ[φ(W) G] = Z · E_Q[G] with Q = μ φ(W) / Z.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureChange {
    pub lhs: f64,
    pub z: f64,
    pub rhs: f64,
    pub q: DiscreteDistribution,
}

fn kernel_weights(mu: &DiscreteDistribution, pi: &DiscreteDistribution, kernel: &SequenceKernel) -> Result<(Vec<f64>, Vec<f64>)> {
    let w = importance_weights(mu, pi)?;
    let phi = w
        .iter()
        .map(|&wk| if wk == 0.0 { kernel_at_zero(kernel) } else { kernel.weight(wk.ln()) })
        .collect::<Result<Vec<f64>>>()?;
    Ok((w, phi))
}

fn kernel_at_zero(kernel: &SequenceKernel) -> Result<f64> {
    Ok(match kernel {
        SequenceKernel::Constant => 1.0,
        _ => 0.0,
    })
}

fn induced_proposal(mu: &DiscreteDistribution, phi: &[f64]) -> Result<(f64, DiscreteDistribution)> {
    let z: f64 = mu.probs.iter().zip(phi).map(|(m, p)| m * p).sum();
    if !(z > 0.0) {
        return Err(Error::Degenerate("Z = E_μ[φ(W)] is zero".into()));
    }
    let q = mu.probs.iter().zip(phi).map(|(m, p)| m * p / z).collect::<Vec<_>>();
    // Renormalize to absorb rounding so the distribution invariant holds.
    Ok((z, DiscreteDistribution::from_masses(&q)?))
}

pub fn measure_change_check(
    mu: &DiscreteDistribution,
    pi: &DiscreteDistribution,
    kernel: &SequenceKernel,
    g: &[f64],
) -> Result<MeasureChange> {
    if g.len() != mu.len() {
        return Err(Error::InvalidInput("G must have one value per outcome".into()));
    }
    let (_, phi) = kernel_weights(mu, pi, kernel)?;
    let lhs = mu.probs.iter().zip(&phi).zip(g).map(|((m, p), gk)| m * p * gk).sum();
    let (z, q) = induced_proposal(mu, &phi)?;
    let rhs = z * q.expect(g);
    Ok(MeasureChange { lhs, z, rhs, q })
}

/// (Z · E_Q[W], E_μ[φ(W) W]).
pub fn variance_link_check(mu: &DiscreteDistribution, pi: &DiscreteDistribution, kernel: &SequenceKernel) -> Result<(f64, f64)> {
    let (w, phi) = kernel_weights(mu, pi, kernel)?;
    let (z, q) = induced_proposal(mu, &phi)?;
    let lhs = z * q.expect(&w);
    let rhs = mu.probs.iter().zip(&phi).zip(&w).map(|((m, p), wk)| m * p * wk).sum();
    Ok((lhs, rhs))
}

/// (Σw)² / Σw².
pub fn ess(weights: &[f64]) -> Result<f64> {
    if let Some(bad) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::InvalidInput(format!("ESS weights must be finite and >= 0, got {bad}")));
    }
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    if s2 == 0.0 {
        return Err(Error::Degenerate("all ESS weights are zero".into()));
    }
    Ok(s * s / s2)
}

/// ESS from log-weights, stable for weights that would overflow.
pub fn ess_from_log_weights(log_weights: &[f64]) -> Result<f64> {
    let finite: Vec<f64> = log_weights.iter().copied().filter(|l| l.is_finite()).collect();
    if finite.is_empty() {
        return Err(Error::Degenerate("no finite log-weights".into()));
    }
    let max = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = finite.iter().map(|l| (l - max).exp()).sum();
    let s2: f64 = finite.iter().map(|l| (2.0 * (l - max)).exp()).sum();
    Ok(s * s / s2)
}

/// (E_μ[W], E_μ[W²]).
pub fn weight_moments(mu: &DiscreteDistribution, pi: &DiscreteDistribution) -> Result<(f64, f64)> {
    let w = importance_weights(mu, pi)?;
    let mean = mu.expect(&w);
    let second = mu.probs.iter().zip(&w).map(|(m, wk)| m * wk * wk).sum();
    Ok((mean, second))
}
