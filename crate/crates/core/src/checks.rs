//! Property suites behind the `verify` subcommand.
//!
//! Each property runs a batch of instances against an independent oracle and reports the
//! largest error it saw next to the tolerance it was held to.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::Result;
use crate::gradient::{
    exact_gradient, expected_estimate, expected_reward, first_order_gap, surrogate_objective, Estimator, GradientVector,
};
use crate::harness::{run_async_experiment, run_sync_experiment, AsyncConfig, TrainConfig};
use crate::kernels::{self, special, KernelParams, LogWeight, SequenceKernel};
use crate::oracle;
use crate::policy::{ContextOrder, RewardKind, RewardSpec, SoftmaxPolicy};
use crate::rng::substream;
use crate::variational::{
    self, dual_kl_objective, measure_change_check, solve_proposal, variance_link_check, DiscreteDistribution,
    VariationalInstance,
};

pub const SUITES: [&str; 4] = ["kernels", "variational", "gradient", "harness-smoke"];

/// Largest error over a batch of instances and the bound it must stay under.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropertyOutcome {
    pub instances: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl PropertyOutcome {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }

    fn from_errors(errors: &[f64], tolerance: f64) -> Self {
        let max_error = errors.iter().copied().fold(0.0f64, |m, e| if e.is_nan() || m.is_nan() { f64::NAN } else { m.max(e) });
        Self { instances: errors.len(), max_error, tolerance }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyReport {
    pub suite: &'static str,
    pub property: &'static str,
    pub instances: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub error: Option<String>,
}

pub type PropertyFn = fn() -> Result<PropertyOutcome>;

pub fn registry(suite: &str) -> Option<Vec<(&'static str, PropertyFn)>> {
    let list: Vec<(&'static str, PropertyFn)> = match suite {
        "kernels" => vec![
            ("phi_one_is_one", kernel_unit_point),
            ("phi_unimodal_peak", kernel_unimodal),
            ("surrogate_slope_matches_phi", surrogate_slope),
            ("incomplete_gamma_vs_quadrature", incomplete_gamma_quadrature),
            ("incomplete_gamma_exponential_case", incomplete_gamma_exponential),
            ("kernels_nonnegative_bounded", kernel_bounds),
            ("grpo_gate_pass_through", grpo_pass_through),
            ("length_norm_conflation", length_norm_conflation),
        ],
        "variational" => vec![
            ("proposal_matches_simplex_search", proposal_vs_search),
            ("proposal_beats_random_feasible", proposal_vs_random),
            ("proposal_moment_nonincreasing", moment_monotone),
            ("measure_change_identity", measure_change_identity),
            ("variance_link_identity", variance_link_identity),
            ("second_moment_at_least_one", second_moment_bound),
        ],
        "gradient" => vec![
            ("exact_gradient_vs_fd", exact_gradient_fd),
            ("vespo_expectation_vs_surrogate_fd", vespo_surrogate_fd),
            ("raw_is_unbiased", raw_is_unbiased),
            ("token_gap_second_order_residual", token_gap_residual_slope),
            ("token_gap_vanishes_at_t1", token_gap_t1),
        ],
        "harness-smoke" => vec![
            ("sync_determinism", harness_determinism),
            ("async_interval_one_equals_sync", harness_async_degenerate),
            ("async_lag_bound", harness_lag_bound),
            ("data_equalization", harness_data_equalization),
            ("snapshot_log_weight_zero", harness_snapshot_weight),
        ],
        _ => return None,
    };
    Some(list)
}

pub fn run_suite(suite: &str) -> Option<Vec<PropertyReport>> {
    let suite_name = SUITES.iter().copied().find(|s| *s == suite)?;
    let props = registry(suite)?;
    Some(
        props
            .into_iter()
            .map(|(name, f)| match f() {
                Ok(o) => PropertyReport {
                    suite: suite_name,
                    property: name,
                    instances: o.instances,
                    max_error: o.max_error,
                    tolerance: o.tolerance,
                    passed: o.passed(),
                    error: None,
                },
                Err(e) => PropertyReport {
                    suite: suite_name,
                    property: name,
                    instances: 0,
                    max_error: f64::NAN,
                    tolerance: 0.0,
                    passed: false,
                    error: Some(e.to_string()),
                },
            })
            .collect(),
    )
}

pub fn report_csv(rows: &[PropertyReport]) -> String {
    let mut out = String::from("property,instances,max_error,status\n");
    for r in rows {
        let status = if r.passed { "pass" } else { "fail" };
        out.push_str(&format!("{}/{},{},{:e},{}\n", r.suite, r.property, r.instances, r.max_error, status));
    }
    out
}

// ---- kernels ----

const C1_GRID: [f64; 5] = [0.5, 1.0, 2.0, 3.0, 5.0];
const C2_GRID: [f64; 5] = [0.0, 0.5, 1.0, 2.0, 3.0];

pub fn kernel_unit_point() -> Result<PropertyOutcome> {
    let mut errors = Vec::new();
    for c1 in C1_GRID {
        for c2 in C2_GRID {
            errors.push((kernels::phi_vespo(0.0, c1, c2)? - 1.0).abs());
        }
    }
    Ok(PropertyOutcome::from_errors(&errors, 0.0))
}

/// Violations of monotone-up-then-down on a 1000-point grid spanning (0, 2·c1/c2].
pub fn kernel_unimodal() -> Result<PropertyOutcome> {
    let mut errors = Vec::new();
    for c1 in C1_GRID {
        for c2 in C2_GRID {
            let peak = if c2 > 0.0 { c1 / c2 } else { f64::INFINITY };
            let top = if c2 > 0.0 { 2.0 * peak } else { 10.0 };
            let points = 1000;
            let values: Vec<f64> =
                (1..=points).map(|i| kernels::phi_vespo((top * i as f64 / points as f64).ln(), c1, c2)).collect::<Result<_>>()?;
            let argmax = values.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(0);
            let mut violations = 0usize;
            for i in 1..points {
                let w = top * (i + 1) as f64 / points as f64;
                let up = values[i] >= values[i - 1];
                if (w <= peak && !up) || (w > peak && up && values[i] != values[i - 1]) {
                    violations += 1;
                }
            }
            let expected_argmax = if c2 > 0.0 { points / 2 - 1 } else { points - 1 };
            if argmax != expected_argmax {
                violations += 1;
            }
            errors.push(violations as f64);
        }
    }
    Ok(PropertyOutcome::from_errors(&errors, 0.0))
}

/// |f′(W) − φ(W)/W| / max(1, φ(W)/W) with f′ by central differences.
pub fn surrogate_slope() -> Result<PropertyOutcome> {
    let p = KernelParams::default();
    let mut errors = Vec::new();
    for (c1, c2) in [(p.c1_pos, p.c2_pos), (p.c1_neg, p.c2_neg)] {
        for i in 0..100 {
            let w = 10f64.powf(-2.0 + 3.0 * i as f64 / 99.0);
            let h = 1e-4 * w;
            let f = |x: f64| kernels::surrogate_f(x, c1, c2).unwrap_or(f64::NAN);
            let slope = oracle::central_difference(f, w, h);
            let target = kernels::phi_vespo(w.ln(), c1, c2)? / w;
            errors.push((slope - target).abs() / target.max(1.0));
        }
    }
    Ok(PropertyOutcome::from_errors(&errors, 1e-6))
}

pub fn incomplete_gamma_quadrature() -> Result<PropertyOutcome> {
    let mut errors = Vec::new();
    for a in [0.5, 1.0, 2.0, 3.0, 5.0] {
        for i in 0..40 {
            let x = 20.0 * i as f64 / 39.0;
            let got = special::lower_incomplete_gamma(a, x)?;
            let reference = oracle::lower_gamma_quadrature(a, x);
            let err = if reference == 0.0 { got.abs() } else { (got - reference).abs() / reference.abs() };
            errors.push(err);
        }
    }
    Ok(PropertyOutcome::from_errors(&errors, 1e-8))
}

pub fn incomplete_gamma_exponential() -> Result<PropertyOutcome> {
    let errors: Vec<f64> = (0..200)
        .map(|i| {
            let x = 30.0 * i as f64 / 199.0;
            special::lower_incomplete_gamma(1.0, x).map(|g| (g - (1.0 - (-x).exp())).abs())
        })
        .collect::<Result<_>>()?;
    Ok(PropertyOutcome::from_errors(&errors, 1e-12))
}

/// Count of kernel values that are negative, non-finite, or above the analytic peak.
pub fn kernel_bounds() -> Result<PropertyOutcome> {
    let mut errors = Vec::new();
    for c1 in C1_GRID {
        for c2 in C2_GRID.into_iter().filter(|c| *c > 0.0) {
            let peak = (c1 / c2).powf(c1) * (c2 - c1).exp();
            let mut bad = 0usize;
            for i in 0..=400 {
                let log_w = -50.0 + 100.0 * i as f64 / 400.0;
                let v = kernels::phi_vespo(log_w, c1, c2)?;
                if !(v.is_finite() && v >= 0.0 && v <= peak * (1.0 + 1e-12)) {
                    bad += 1;
                }
            }
            errors.push(bad as f64);
        }
    }
    Ok(PropertyOutcome::from_errors(&errors, 0.0))
}

/// Inside the trust region the token gate returns ρ unchanged.
pub fn grpo_pass_through() -> Result<PropertyOutcome> {
    let clip = kernels::ClipParams::grpo();
    let mut errors = Vec::new();
    let interior = (1..200).map(|i| (1.0 - clip.eps_low) + (clip.eps_low + clip.eps_high) * i as f64 / 200.0);
    for rho in interior.chain([1.0 - clip.eps_low, 1.0 + clip.eps_high]) {
        for sign in [kernels::AdvantageSign::Positive, kernels::AdvantageSign::Negative] {
            errors.push((kernels::phi_grpo_token(rho, sign, clip)? - rho).abs());
        }
    }
    Ok(PropertyOutcome::from_errors(&errors, 0.0))
}

/// Matched per-token ratios at lengths 2 and 6: GSPO pre-clip weights coincide, the
/// linear-normalized log weight equals ln r, and VESPO weights differ for r ≠ 1. Counts violations.
pub fn length_norm_conflation() -> Result<PropertyOutcome> {
    let p = KernelParams::default();
    let mut errors = Vec::new();
    for i in 0..50 {
        let r = 0.5 + i as f64 / 49.0;
        let lr = r.ln();
        let mut bad = 0usize;
        if kernels::gspo_pre_clip_tokens(&[lr; 2])? != kernels::gspo_pre_clip_tokens(&[lr; 6])? {
            bad += 1;
        }
        let short = LogWeight::new([lr; 2].iter().sum(), 2)?;
        let long = LogWeight::new([lr; 6].iter().sum(), 6)?;
        if (kernels::apply_length_norm(long, kernels::LengthNorm::Linear) - lr).abs() > 4.0 * f64::EPSILON * lr.abs() {
            bad += 1;
        }
        let vs = kernels::phi_vespo(short.value, p.c1_pos, p.c2_pos)?;
        let vl = kernels::phi_vespo(long.value, p.c1_pos, p.c2_pos)?;
        if r != 1.0 && vs == vl {
            bad += 1;
        }
        errors.push(bad as f64);
    }
    Ok(PropertyOutcome::from_errors(&errors, 0.0))
}

// ---- variational ----

const ALPHAS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// Instance `i` of the shared random family: K cycles 2..=6, α cycles the grid, and the
/// budget fraction spans tight, moderate and slack regimes.
pub fn variational_instance(seed: u64, i: usize) -> Result<VariationalInstance> {
    let mut rng = substream(seed, &[i as u64]);
    let k = 2 + i % 5;
    let alpha = ALPHAS[(i / 5) % 5];
    let fraction = match (i / 25) % 4 {
        0 => rng.random_range(0.05..0.4),
        1 => rng.random_range(0.4..0.95),
        2 => rng.random_range(0.95..1.0),
        _ => rng.random_range(1.0..1.5),
    };
    VariationalInstance::random(&mut rng, k, alpha, fraction)
}

/// Worst of (moment excess, |λ·slack|, TV to the search minimizer, objective excess over the
/// search minimum), per instance.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ProposalErrors {
    pub infeasibility: f64,
    pub slackness: f64,
    pub total_variation: f64,
    pub objective_gap: f64,
}

pub fn proposal_errors(instance: &VariationalInstance) -> Result<ProposalErrors> {
    let sol = solve_proposal(instance)?;
    let w = instance.weights();
    let search = oracle::simplex_minimize(instance.mu.probs(), instance.pi.probs(), instance.alpha, w, instance.budget);
    let search_obj = oracle::mixed_kl(&search, instance.mu.probs(), instance.pi.probs(), instance.alpha);
    let search_dist = DiscreteDistribution::from_masses(&search)?;
    Ok(ProposalErrors {
        infeasibility: (sol.moment - instance.budget).max(0.0),
        slackness: (sol.lambda * (sol.moment - instance.budget)).abs(),
        total_variation: sol.q.total_variation(&search_dist),
        objective_gap: (sol.objective - search_obj).max(0.0),
    })
}

pub fn proposal_errors_batch(seed: u64, count: usize) -> Result<Vec<ProposalErrors>> {
    (0..count).into_par_iter().map(|i| proposal_errors(&variational_instance(seed, i)?)).collect()
}

/// Worst violation after scaling each criterion by its tolerance (1e−6, 1e−6, 1e−3, 1e−6).
fn proposal_vs_search() -> Result<PropertyOutcome> {
    let errs = proposal_errors_batch(0x5eed, 500)?;
    let scaled: Vec<f64> = errs
        .iter()
        .map(|e| (e.infeasibility / 1e-6).max(e.slackness / 1e-6).max(e.total_variation / 1e-3).max(e.objective_gap / 1e-6))
        .collect();
    Ok(PropertyOutcome::from_errors(&scaled, 1.0))
}

fn proposal_vs_random() -> Result<PropertyOutcome> {
    let errors: Vec<f64> = (0..100)
        .into_par_iter()
        .map(|i| {
            let inst = variational_instance(0xfea5, i)?;
            let sol = solve_proposal(&inst)?;
            let mut rng = substream(0xfea5, &[1, i as u64]);
            let points = oracle::random_feasible(&mut rng, inst.weights(), inst.budget, 200);
            let mut worst = 0.0f64;
            for q in points {
                let value = dual_kl_objective(&DiscreteDistribution::from_masses(&q)?, &inst)?;
                worst = worst.max(sol.objective - value);
            }
            Ok(worst)
        })
        .collect::<Result<_>>()?;
    Ok(PropertyOutcome::from_errors(&errors, 1e-12))
}

fn moment_monotone() -> Result<PropertyOutcome> {
    let errors: Vec<f64> = (0..200)
        .into_par_iter()
        .map(|i| {
            let inst = variational_instance(0x0101, i)?;
            let mut prev = f64::INFINITY;
            let mut worst = 0.0f64;
            for j in 0..100 {
                let lambda = 1e-3 * 1.2f64.powi(j);
                let m = variational::proposal_moment(&inst, lambda)?;
                worst = worst.max(m - prev);
                prev = m;
            }
            Ok(worst)
        })
        .collect::<Result<_>>()?;
    Ok(PropertyOutcome::from_errors(&errors, 1e-12))
}

fn random_g(rng: &mut impl Rng, k: usize) -> Vec<f64> {
    (0..k).map(|_| rng.sample::<f64, _>(StandardNormal) * 2.0).collect()
}

/// max over kernels of |lhs − rhs| / max(1, |lhs|).
pub fn measure_change_errors(seed: u64, count: usize) -> Result<Vec<f64>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, &[i as u64]);
            let k = 2 + i % 5;
            let inst = VariationalInstance::random(&mut rng, k, 0.5, 1.0)?;
            let g = random_g(&mut rng, k);
            let mut worst = 0.0f64;
            for (_, kernel) in SequenceKernel::catalogue() {
                match measure_change_check(&inst.mu, &inst.pi, &kernel, &g) {
                    Ok(mc) => worst = worst.max((mc.lhs - mc.rhs).abs() / mc.lhs.abs().max(1.0)),
                    // A kernel that zeroes every outcome has no proposal; there is nothing to compare.
                    Err(crate::Error::Degenerate(_)) => {}
                    Err(e) => return Err(e),
                }
            }
            Ok(worst)
        })
        .collect()
}

pub fn variance_link_errors(seed: u64, count: usize) -> Result<Vec<f64>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, &[i as u64]);
            let inst = VariationalInstance::random(&mut rng, 2 + i % 5, 0.5, 1.0)?;
            let mut worst = 0.0f64;
            for (_, kernel) in SequenceKernel::catalogue() {
                match variance_link_check(&inst.mu, &inst.pi, &kernel) {
                    Ok((lhs, rhs)) => worst = worst.max((lhs - rhs).abs() / rhs.abs().max(1.0)),
                    Err(crate::Error::Degenerate(_)) => {}
                    Err(e) => return Err(e),
                }
            }
            Ok(worst)
        })
        .collect()
}

fn measure_change_identity() -> Result<PropertyOutcome> {
    Ok(PropertyOutcome::from_errors(&measure_change_errors(0x10, 200)?, 1e-12))
}

fn variance_link_identity() -> Result<PropertyOutcome> {
    Ok(PropertyOutcome::from_errors(&variance_link_errors(0x13, 200)?, 1e-12))
}

fn second_moment_bound() -> Result<PropertyOutcome> {
    let errors: Vec<f64> = (0..500)
        .map(|i| {
            let mut rng = substream(0x22, &[i as u64]);
            let inst = VariationalInstance::random(&mut rng, 2 + i % 5, 0.5, 1.0)?;
            let (mean, second) = variational::weight_moments(&inst.mu, &inst.pi)?;
            Ok((mean - 1.0).abs().max(1.0 - second))
        })
        .collect::<Result<_>>()?;
    Ok(PropertyOutcome::from_errors(&errors, 1e-12))
}

// ---- gradient ----

/// Random enumerable policy: V ∈ {2, 3}, T ∈ {1..4}, N(0, 1) logits.
pub fn random_policy(seed: u64, vocab: usize, length: usize, order: ContextOrder) -> Result<SoftmaxPolicy> {
    let mut policy = SoftmaxPolicy::uniform(vocab, length, order, 1)?;
    let mut rng = substream(seed, &[0]);
    let params: Vec<f64> = (0..policy.num_params()).map(|_| rng.sample(StandardNormal)).collect();
    policy.set_params(params)?;
    Ok(policy)
}

pub fn random_direction(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = substream(seed, &[1]);
    let v: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Shape of gradient instance `i`: (V, T, reward).
pub fn gradient_instance(i: usize) -> (usize, usize, RewardSpec) {
    let vocab = 2 + i % 2;
    let length = 1 + (i / 2) % 4;
    let kind = if i % 3 == 2 { RewardKind::PatternMatch } else { RewardKind::TargetCount };
    (vocab, length, RewardSpec { kind, target_token: i % vocab, weight: 0.0 })
}

fn fd_params<F: Fn(&SoftmaxPolicy) -> Result<f64>>(policy: &SoftmaxPolicy, f: F) -> Result<GradientVector> {
    let eval = |x: &[f64]| -> f64 {
        let mut p = policy.clone();
        match p.set_params(x.to_vec()) {
            Ok(()) => f(&p).unwrap_or(f64::NAN),
            Err(_) => f64::NAN,
        }
    };
    GradientVector::new(oracle::gradient(eval, policy.params(), 1e-3))
}

/// Relative error of the enumerated REINFORCE gradient against finite differences of E_π[R].
pub fn exact_gradient_errors(count: usize) -> Result<Vec<f64>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let (v, t, reward) = gradient_instance(i);
            let policy = random_policy(100 + i as u64, v, t, ContextOrder::Bigram)?;
            let exact = exact_gradient(&policy, 0, &reward, t)?;
            let fd = fd_params(&policy, |p| expected_reward(p, 0, &reward, t))?;
            Ok(exact.relative_error(&fd, 1e-8))
        })
        .collect()
}

/// Advantage with both signs: reward minus a fixed baseline.
pub fn signed_advantage(reward: RewardSpec, max_len: usize) -> impl Fn(&[usize]) -> f64 + Sync {
    move |y: &[usize]| reward.score_tokens(y, max_len) - 0.4
}

/// Relative error of E_μ[VESPO estimator] against finite differences of E_μ[f(W) A].
pub fn vespo_surrogate_errors(count: usize) -> Result<Vec<f64>> {
    let params = KernelParams::default();
    (0..count)
        .into_par_iter()
        .map(|i| {
            let (v, t, reward) = gradient_instance(i);
            let policy = random_policy(200 + i as u64, v, t, ContextOrder::Bigram)?;
            let behavior = policy.perturbed(&random_direction(300 + i as u64, policy.num_params()), 0.5)?;
            let adv = signed_advantage(reward, t);
            let est = expected_estimate(&Estimator::vespo(params), &policy, &behavior, 0, t, &adv)?.gradient;
            let fd = fd_params(&policy, |p| surrogate_objective(p, &behavior, 0, t, &params, &adv))?;
            Ok(est.relative_error(&fd, 1e-8))
        })
        .collect()
}

/// Relative error of E_μ[W R ∇log π] against the exact on-policy gradient.
pub fn raw_is_errors(count: usize) -> Result<Vec<f64>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let (v, t, reward) = gradient_instance(i);
            let policy = random_policy(400 + i as u64, v, t, ContextOrder::Bigram)?;
            let behavior = policy.perturbed(&random_direction(500 + i as u64, policy.num_params()), 0.7)?;
            let unguarded = Estimator::RawIs { max_weight: f64::INFINITY };
            let r = |y: &[usize]| reward.score_tokens(y, t);
            let is = expected_estimate(&unguarded, &policy, &behavior, 0, t, r)?.gradient;
            let exact = exact_gradient(&policy, 0, &reward, t)?;
            Ok(is.relative_error(&exact, 1e-12))
        })
        .collect()
}

fn exact_gradient_fd() -> Result<PropertyOutcome> {
    Ok(PropertyOutcome::from_errors(&exact_gradient_errors(20)?, 1e-6))
}

fn vespo_surrogate_fd() -> Result<PropertyOutcome> {
    Ok(PropertyOutcome::from_errors(&vespo_surrogate_errors(20)?, 1e-5))
}

fn raw_is_unbiased() -> Result<PropertyOutcome> {
    Ok(PropertyOutcome::from_errors(&raw_is_errors(20)?, 1e-8))
}

pub const GAP_SCALES: [f64; 4] = [1e-1, 5e-2, 2.5e-2, 1.25e-2];

/// Least-squares slope of ln y against ln x.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    cov / var
}

/// Slopes (raw gap, residual after the first-order cross term) on gap instance `i`,
/// a bigram policy with V = 3 and T ∈ {3, 4}.
pub fn gap_slopes(i: usize) -> Result<(f64, f64)> {
    let t = 3 + i % 2;
    let policy = random_policy(600 + i as u64, 3, t, ContextOrder::Bigram)?;
    let direction = random_direction(700 + i as u64, policy.num_params());
    let reward = RewardSpec { kind: RewardKind::TargetCount, target_token: i % 3, weight: 0.0 };
    let mut gaps = Vec::new();
    let mut residuals = Vec::new();
    for scale in GAP_SCALES {
        let g = first_order_gap(&policy, &direction, scale, 0, &reward, t)?;
        gaps.push(g.gap_norm);
        residuals.push(g.residual_norm);
    }
    Ok((log_log_slope(&GAP_SCALES, &gaps), log_log_slope(&GAP_SCALES, &residuals)))
}

fn token_gap_residual_slope() -> Result<PropertyOutcome> {
    let errors: Vec<f64> = (0..6).into_par_iter().map(|i| gap_slopes(i).map(|(_, res)| (res - 2.0).abs())).collect::<Result<_>>()?;
    Ok(PropertyOutcome::from_errors(&errors, 0.1))
}

/// ‖∇J_seq − ∇J_tok‖ at T = 1 over the gap scales.
pub fn gap_at_t1(count: usize) -> Result<Vec<f64>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let policy = random_policy(800 + i as u64, 3, 1, ContextOrder::Bigram)?;
            let direction = random_direction(900 + i as u64, policy.num_params());
            let reward = RewardSpec { kind: RewardKind::TargetCount, target_token: i % 3, weight: 0.0 };
            let mut worst = 0.0f64;
            for scale in GAP_SCALES {
                worst = worst.max(first_order_gap(&policy, &direction, scale, 0, &reward, 1)?.gap_norm);
            }
            Ok(worst)
        })
        .collect()
}

fn token_gap_t1() -> Result<PropertyOutcome> {
    Ok(PropertyOutcome::from_errors(&gap_at_t1(10)?, 1e-12))
}

// ---- harness smoke ----

pub fn smoke_config() -> TrainConfig {
    TrainConfig { vocab_size: 4, max_len: 6, mbs: 16, group_size: 4, steps: 24, learning_rate: 0.5, staleness_n: 4, ..TrainConfig::default() }
}

fn flag(ok: bool) -> Vec<f64> {
    vec![if ok { 0.0 } else { 1.0 }]
}

fn harness_determinism() -> Result<PropertyOutcome> {
    let cfg = smoke_config();
    let same = run_sync_experiment(&cfg)?.to_csv() == run_sync_experiment(&cfg)?.to_csv();
    Ok(PropertyOutcome::from_errors(&flag(same), 0.0))
}

fn harness_async_degenerate() -> Result<PropertyOutcome> {
    let cfg = TrainConfig { staleness_n: 1, ..smoke_config() };
    let sync = run_sync_experiment(&cfg)?.to_csv();
    let asyn = run_async_experiment(&cfg, &AsyncConfig { sync_interval: 1, preserve_inflight: false, staleness_threshold: 1.0 })?.to_csv();
    Ok(PropertyOutcome::from_errors(&flag(sync == asyn), 0.0))
}

fn harness_lag_bound() -> Result<PropertyOutcome> {
    let cfg = TrainConfig { staleness_n: 1, ..smoke_config() };
    let mut worst = Vec::new();
    for preserve in [false, true] {
        let log = run_async_experiment(&cfg, &AsyncConfig { sync_interval: 4, preserve_inflight: preserve, staleness_threshold: 1.0 })?;
        worst.push(log.rows.iter().map(|r| r.engine_lag.saturating_sub(4) as f64).fold(0.0, f64::max));
    }
    Ok(PropertyOutcome::from_errors(&worst, 0.0))
}

fn harness_data_equalization() -> Result<PropertyOutcome> {
    let mut errors = Vec::new();
    for n in [1, 3, 8] {
        let cfg = TrainConfig { staleness_n: n, ..smoke_config() };
        let log = run_sync_experiment(&cfg)?;
        errors.push((log.trajectories_consumed as f64 - (cfg.steps * cfg.mbs) as f64).abs());
    }
    Ok(PropertyOutcome::from_errors(&errors, 0.0))
}

fn harness_snapshot_weight() -> Result<PropertyOutcome> {
    let log = run_sync_experiment(&smoke_config())?;
    let errors: Vec<f64> = log.rows.iter().filter(|r| r.behavior_lag == 0).map(|r| r.mean_log_w.abs()).collect();
    Ok(PropertyOutcome::from_errors(&errors, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_names_are_unique() {
        for suite in SUITES {
            let props = registry(suite).unwrap();
            let mut names: Vec<_> = props.iter().map(|(n, _)| *n).collect();
            names.sort();
            names.dedup();
            assert_eq!(names.len(), props.len());
        }
        assert!(registry("nope").is_none());
    }

    #[test]
    fn kernels_suite_passes() {
        let rows = run_suite("kernels").unwrap();
        for r in &rows {
            assert!(r.passed, "{r:?}");
        }
    }

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 2.0, 4.0];
        let y = [3.0, 12.0, 48.0];
        assert!((log_log_slope(&x, &y) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn csv_shape() {
        let rows = run_suite("kernels").unwrap();
        let csv = report_csv(&rows);
        assert_eq!(csv.lines().count(), rows.len() + 1);
        assert!(csv.starts_with("property,instances,max_error,status\n"));
    }
}
