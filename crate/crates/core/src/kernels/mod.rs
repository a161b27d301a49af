//! Importance-weight reshaping kernels.
//!
//! Every kernel takes the *log* of the sequence weight and exponentiates last, so
//! weights that would overflow in linear space are suppressed (or saturated) instead
//! of producing infinities.

pub mod special;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

pub use special::{gamma, ln_gamma, lower_incomplete_gamma, regularized_lower_gamma, upper_incomplete_gamma};

/// Saturation level for kernels without exponential decay (c2 = 0, raw IS).
pub const DEFAULT_MAX_WEIGHT: f64 = 1e12;

/// Sign of an advantage. Zero advantages route to `Positive`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdvantageSign {
    Positive,
    Negative,
}

impl AdvantageSign {
    pub fn of(advantage: f64) -> Self {
        if advantage >= 0.0 {
            AdvantageSign::Positive
        } else {
            AdvantageSign::Negative
        }
    }
}

/// Shifted-kernel exponents, one pair per advantage sign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub c1_pos: f64,
    pub c2_pos: f64,
    pub c1_neg: f64,
    pub c2_neg: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self { c1_pos: 2.0, c2_pos: 3.0, c1_neg: 3.0, c2_neg: 2.0 }
    }
}

impl KernelParams {
    /// Same pair for both advantage signs.
    pub fn symmetric(c1: f64, c2: f64) -> Self {
        Self { c1_pos: c1, c2_pos: c2, c1_neg: c1, c2_neg: c2 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, c1, c2) in [("pos", self.c1_pos, self.c2_pos), ("neg", self.c1_neg, self.c2_neg)] {
            if !(c1.is_finite() && c1 > 0.0) {
                return Err(Error::InvalidInput(format!("c1_{name} must be finite and > 0, got {c1}")));
            }
            if !(c2.is_finite() && c2 >= 0.0) {
                return Err(Error::InvalidInput(format!("c2_{name} must be finite and >= 0, got {c2}")));
            }
        }
        Ok(())
    }
}

/// Clip range `[1 - eps_low, 1 + eps_high]` for GRPO/GSPO-style gating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipParams {
    pub eps_low: f64,
    pub eps_high: f64,
}

impl ClipParams {
    pub fn grpo() -> Self {
        Self { eps_low: 0.2, eps_high: 0.28 }
    }

    pub fn gspo() -> Self {
        Self { eps_low: 3e-4, eps_high: 4e-4 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_low > 0.0 && self.eps_low < 1.0) {
            return Err(Error::InvalidInput(format!("eps_low must lie in (0, 1), got {}", self.eps_low)));
        }
        if !(self.eps_high > 0.0 && self.eps_high.is_finite()) {
            return Err(Error::InvalidInput(format!("eps_high must be > 0, got {}", self.eps_high)));
        }
        Ok(())
    }

    /// Zero-or-pass gate shared by the GRPO token rule and GSPO.
    fn gate(&self, ratio: f64, sign: AdvantageSign) -> f64 {
        let keep = match sign {
            AdvantageSign::Positive => ratio <= 1.0 + self.eps_high,
            AdvantageSign::Negative => ratio >= 1.0 - self.eps_low,
        };
        if keep {
            ratio
        } else {
            0.0
        }
    }
}

/// Log of a sequence importance weight together with the sequence length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogWeight {
    pub value: f64,
    pub length: usize,
}

impl LogWeight {
    pub fn new(value: f64, length: usize) -> Result<Self> {
        ensure_finite("log weight", value)?;
        if length == 0 {
            return Err(Error::InvalidInput("log weight length must be >= 1".into()));
        }
        Ok(Self { value, length })
    }
}

/// Divisor exponent applied to log W before reshaping: none (T^0), sqrt (T^½) or linear (T¹).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LengthNorm {
    #[default]
    None,
    Sqrt,
    Linear,
}

impl LengthNorm {
    pub fn exponent(self) -> f64 {
        match self {
            LengthNorm::None => 0.0,
            LengthNorm::Sqrt => 0.5,
            LengthNorm::Linear => 1.0,
        }
    }
}

/// `log_w.value / T^exponent`.
pub fn apply_length_norm(log_w: LogWeight, variant: LengthNorm) -> f64 {
    match variant {
        LengthNorm::None => log_w.value,
        LengthNorm::Sqrt => log_w.value / (log_w.length as f64).sqrt(),
        LengthNorm::Linear => log_w.value / log_w.length as f64,
    }
}

/// φ(W) = W^{c1} exp(c2 (1 − W)), evaluated from log W with the default saturation guard.
pub fn phi_vespo(log_w: f64, c1: f64, c2: f64) -> Result<f64> {
    phi_vespo_guarded(log_w, c1, c2, DEFAULT_MAX_WEIGHT)
}

/// [`phi_vespo`] with an explicit saturation level for the c2 = 0 branch.
pub fn phi_vespo_guarded(log_w: f64, c1: f64, c2: f64, max_weight: f64) -> Result<f64> {
    ensure_finite("log_w", log_w)?;
    ensure_finite("c1", c1)?;
    ensure_finite("c2", c2)?;
    if c1 <= 0.0 || c2 < 0.0 {
        return Err(Error::InvalidInput(format!("kernel requires c1 > 0 and c2 >= 0, got ({c1}, {c2})")));
    }
    // c2 = 0 is kept separate: 0 · (1 − e^{log_w}) is NaN once e^{log_w} overflows.
    let exponent = if c2 == 0.0 { c1 * log_w } else { c1 * log_w + c2 * (1.0 - log_w.exp()) };
    Ok(exponent.exp().min(max_weight))
}

/// Unshifted form W^α exp(−λ W) that falls out of the constrained problem.
pub fn phi_gamma_kernel(log_w: f64, alpha: f64, lambda: f64) -> Result<f64> {
    ensure_finite("log_w", log_w)?;
    if alpha < 0.0 || lambda < 0.0 || !alpha.is_finite() || !lambda.is_finite() {
        return Err(Error::InvalidInput(format!("need alpha, lambda >= 0, got ({alpha}, {lambda})")));
    }
    let exponent = if lambda == 0.0 { alpha * log_w } else { alpha * log_w - lambda * log_w.exp() };
    Ok(exponent.exp())
}

/// Raw sequence importance weight exp(log W), saturated at `max_weight`.
pub fn raw_weight(log_w: f64, max_weight: f64) -> Result<f64> {
    ensure_finite("log_w", log_w)?;
    Ok(log_w.exp().min(max_weight))
}

/// Surrogate f with f'(W) = φ(W)/W and f(0) = 0.
///
/// For c2 > 0 this is e^{c2} c2^{−c1} γ(c1, c2 W); for c2 = 0 it is W^{c1} / c1.
/// `W = +∞` returns the saturation value when c2 > 0.
pub fn surrogate_f(w: f64, c1: f64, c2: f64) -> Result<f64> {
    if w.is_nan() || w < 0.0 {
        return Err(Error::Domain(format!("surrogate requires W >= 0, got {w}")));
    }
    ensure_finite("c1", c1)?;
    ensure_finite("c2", c2)?;
    if c1 <= 0.0 || c2 < 0.0 {
        return Err(Error::InvalidInput(format!("surrogate requires c1 > 0 and c2 >= 0, got ({c1}, {c2})")));
    }
    if c2 == 0.0 {
        return Ok(w.powf(c1) / c1);
    }
    let scale = (c2 - c1 * c2.ln()).exp();
    Ok(scale * lower_incomplete_gamma(c1, c2 * w)?)
}

/// Per-token GRPO weight: the ratio itself inside the sign-dependent clip region, else 0.
pub fn phi_grpo_token(rho: f64, sign: AdvantageSign, clip: ClipParams) -> Result<f64> {
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::InvalidInput(format!("token ratio must be finite and > 0, got {rho}")));
    }
    Ok(clip.gate(rho, sign))
}

/// Length-normalized (geometric-mean) sequence ratio before clipping.
pub fn gspo_pre_clip(log_w: LogWeight) -> f64 {
    (log_w.value / log_w.length as f64).exp()
}

/// GSPO weight: geometric-mean ratio passed through the GRPO gate.
pub fn phi_gspo(log_w: LogWeight, sign: AdvantageSign, clip: ClipParams) -> Result<f64> {
    ensure_finite("log weight", log_w.value)?;
    Ok(clip.gate(gspo_pre_clip(log_w), sign))
}

/// Running mean of per-token log-ratios. A sequence of identical ratios yields exactly that
/// ratio whatever its length, which the sum-then-divide form does not guarantee.
pub fn mean_log_ratio(log_ratios: &[f64]) -> Result<f64> {
    if log_ratios.is_empty() {
        return Err(Error::InvalidInput("need at least one token".into()));
    }
    let mut mean = 0.0;
    for (k, &lr) in log_ratios.iter().enumerate() {
        ensure_finite("token log-ratio", lr)?;
        mean += (lr - mean) / (k + 1) as f64;
    }
    Ok(mean)
}

/// Geometric-mean ratio from the per-token log-ratios.
pub fn gspo_pre_clip_tokens(log_ratios: &[f64]) -> Result<f64> {
    Ok(mean_log_ratio(log_ratios)?.exp())
}

/// GSPO weight from the per-token log-ratios.
pub fn phi_gspo_tokens(log_ratios: &[f64], sign: AdvantageSign, clip: ClipParams) -> Result<f64> {
    Ok(clip.gate(gspo_pre_clip_tokens(log_ratios)?, sign))
}

/// Sequence-level truncation min(W, cap).
pub fn phi_seq_clip(log_w: f64, cap: f64) -> Result<f64> {
    ensure_finite("log_w", log_w)?;
    if !(cap > 0.0) {
        return Err(Error::InvalidInput(format!("cap must be > 0, got {cap}")));
    }
    Ok(log_w.exp().min(cap))
}

/// Kernel exponents for an advantage: non-negative → positive pair.
pub fn select_params(advantage: f64, params: &KernelParams) -> (f64, f64) {
    match AdvantageSign::of(advantage) {
        AdvantageSign::Positive => (params.c1_pos, params.c2_pos),
        AdvantageSign::Negative => (params.c1_neg, params.c2_neg),
    }
}

/// A reshaping function of the sequence weight alone, used by the measure-change checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SequenceKernel {
    /// φ(W) = W: unbiased importance sampling.
    Identity,
    /// φ(W) = 1: ignore the behavior mismatch.
    Constant,
    Vespo { c1: f64, c2: f64 },
    GammaKernel { alpha: f64, lambda: f64 },
    SeqClip { cap: f64 },
    /// Geometric mean at a fixed length, no clipping.
    GspoPreClip { length: usize },
    Gspo { length: usize, sign: AdvantageSign, clip: ClipParams },
}

impl SequenceKernel {
    pub fn weight(&self, log_w: f64) -> Result<f64> {
        match *self {
            SequenceKernel::Identity => raw_weight(log_w, f64::INFINITY),
            SequenceKernel::Constant => {
                ensure_finite("log_w", log_w)?;
                Ok(1.0)
            }
            SequenceKernel::Vespo { c1, c2 } => phi_vespo(log_w, c1, c2),
            SequenceKernel::GammaKernel { alpha, lambda } => phi_gamma_kernel(log_w, alpha, lambda),
            SequenceKernel::SeqClip { cap } => phi_seq_clip(log_w, cap),
            SequenceKernel::GspoPreClip { length } => Ok(gspo_pre_clip(LogWeight::new(log_w, length)?)),
            SequenceKernel::Gspo { length, sign, clip } => phi_gspo(LogWeight::new(log_w, length)?, sign, clip),
        }
    }

    /// Every kernel family at representative settings.
    pub fn catalogue() -> Vec<(&'static str, SequenceKernel)> {
        let p = KernelParams::default();
        vec![
            ("identity", SequenceKernel::Identity),
            ("constant", SequenceKernel::Constant),
            ("vespo_pos", SequenceKernel::Vespo { c1: p.c1_pos, c2: p.c2_pos }),
            ("vespo_neg", SequenceKernel::Vespo { c1: p.c1_neg, c2: p.c2_neg }),
            ("gamma_kernel", SequenceKernel::GammaKernel { alpha: 0.5, lambda: 0.7 }),
            ("seq_clip", SequenceKernel::SeqClip { cap: 1.5 }),
            ("gspo_pre_clip", SequenceKernel::GspoPreClip { length: 4 }),
            (
                "gspo_clipped",
                SequenceKernel::Gspo { length: 4, sign: AdvantageSign::Positive, clip: ClipParams { eps_low: 0.2, eps_high: 0.28 } },
            ),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn unit_weight_maps_to_one() {
        for &(c1, c2) in &[(2.0, 3.0), (3.0, 2.0), (0.5, 0.0), (7.0, 11.0)] {
            assert_eq!(phi_vespo(0.0, c1, c2).unwrap(), 1.0);
        }
    }

    #[test]
    fn hand_evaluated_points() {
        // 4 e^{-3} and e / 8
        assert!(close(phi_vespo(2f64.ln(), 2.0, 3.0).unwrap(), 4.0 * (-3f64).exp(), 1e-15));
        assert!(close(phi_vespo(0.5f64.ln(), 3.0, 2.0).unwrap(), 0.125 * 1f64.exp(), 1e-15));
        assert!((phi_vespo(2f64.ln(), 2.0, 3.0).unwrap() - 0.199_148).abs() < 1e-6);
        assert!((phi_vespo(0.5f64.ln(), 3.0, 2.0).unwrap() - 0.339_785).abs() < 1e-6);
    }

    #[test]
    fn identity_kernel_is_raw_is() {
        for &x in &[-3.0, -0.1, 0.0, 0.4, 5.0] {
            assert_eq!(phi_vespo(x, 1.0, 0.0).unwrap(), f64::exp(x));
        }
    }

    #[test]
    fn extreme_log_weights_are_suppressed_or_saturated() {
        assert_eq!(phi_vespo(800.0, 2.0, 3.0).unwrap(), 0.0);
        assert_eq!(phi_vespo(-800.0, 2.0, 3.0).unwrap(), 0.0);
        assert_eq!(phi_vespo(800.0, 1.0, 0.0).unwrap(), DEFAULT_MAX_WEIGHT);
        assert_eq!(phi_vespo_guarded(50.0, 1.0, 0.0, 10.0).unwrap(), 10.0);
    }

    #[test]
    fn non_finite_inputs_are_rejected() {
        assert!(phi_vespo(f64::NAN, 2.0, 3.0).is_err());
        assert!(phi_vespo(f64::INFINITY, 2.0, 3.0).is_err());
        assert!(phi_vespo(0.0, 0.0, 3.0).is_err());
        assert!(phi_vespo(0.0, 2.0, -1.0).is_err());
        assert!(phi_grpo_token(0.0, AdvantageSign::Positive, ClipParams::grpo()).is_err());
        assert!(phi_seq_clip(0.0, 0.0).is_err());
        assert!(LogWeight::new(0.0, 0).is_err());
    }

    #[test]
    fn token_geometric_mean_is_length_invariant() {
        for i in 1..2000 {
            let lr = (0.5 + i as f64 / 1000.0).ln();
            let short = gspo_pre_clip_tokens(&[lr; 2]).unwrap();
            let long = gspo_pre_clip_tokens(&[lr; 6]).unwrap();
            assert_eq!(short, long);
        }
        let mixed = gspo_pre_clip_tokens(&[0.1, -0.3, 0.5]).unwrap();
        assert!((mixed - (0.1f64).exp()).abs() < 1e-15);
        assert!(gspo_pre_clip_tokens(&[]).is_err());
    }

    #[test]
    fn surrogate_endpoints() {
        assert_eq!(surrogate_f(0.0, 2.0, 3.0).unwrap(), 0.0);
        let limit = surrogate_f(f64::INFINITY, 2.0, 3.0).unwrap();
        assert!((limit - 3f64.exp() / 9.0).abs() < 1e-12);
        assert!((limit - 2.231_726_324_798_63).abs() < 1e-12);
        assert!(surrogate_f(-1.0, 2.0, 3.0).is_err());
        // c2 = 0 uses the power antiderivative
        assert!((surrogate_f(2.0, 3.0, 0.0).unwrap() - 8.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn surrogate_slope_at_one() {
        let h = 1e-5;
        let d = (surrogate_f(1.0 + h, 2.0, 3.0).unwrap() - surrogate_f(1.0 - h, 2.0, 3.0).unwrap()) / (2.0 * h);
        assert!((d - 1.0).abs() < 1e-6, "{d}");
    }

    #[test]
    fn grpo_gate() {
        let clip = ClipParams::grpo();
        assert_eq!(phi_grpo_token(1.0, AdvantageSign::Positive, clip).unwrap(), 1.0);
        assert_eq!(phi_grpo_token(1.3, AdvantageSign::Positive, clip).unwrap(), 0.0);
        assert_eq!(phi_grpo_token(0.75, AdvantageSign::Negative, clip).unwrap(), 0.0);
        assert_eq!(phi_grpo_token(1.3, AdvantageSign::Negative, clip).unwrap(), 1.3);
        assert_eq!(phi_grpo_token(0.75, AdvantageSign::Positive, clip).unwrap(), 0.75);
    }

    #[test]
    fn gspo_uses_geometric_mean() {
        let clip = ClipParams::gspo();
        for t in 1..6 {
            let lw = LogWeight::new(0.0, t).unwrap();
            assert_eq!(phi_gspo(lw, AdvantageSign::Negative, clip).unwrap(), 1.0);
        }
        let r: f64 = 1.01;
        let lw = LogWeight::new(10.0 * r.ln(), 10).unwrap();
        assert!((gspo_pre_clip(lw) - r).abs() < 1e-14);
        assert_eq!(phi_gspo(lw, AdvantageSign::Positive, clip).unwrap(), 0.0);
    }

    #[test]
    fn seq_clip_values() {
        assert_eq!(phi_seq_clip(0.0, 5.0).unwrap(), 1.0);
        assert_eq!(phi_seq_clip(10f64.ln(), 5.0).unwrap(), 5.0);
        assert!((phi_seq_clip(-1.0, 5.0).unwrap() - 0.367_879).abs() < 1e-6);
    }

    #[test]
    fn parameter_selection_by_sign() {
        let p = KernelParams::default();
        assert_eq!(select_params(0.5, &p), (2.0, 3.0));
        assert_eq!(select_params(-0.5, &p), (3.0, 2.0));
        assert_eq!(select_params(0.0, &p), (2.0, 3.0));
    }

    #[test]
    fn length_norm_variants() {
        let lw = LogWeight::new(4.0, 16).unwrap();
        assert_eq!(apply_length_norm(lw, LengthNorm::None), 4.0);
        assert_eq!(apply_length_norm(lw, LengthNorm::Sqrt), 1.0);
        assert_eq!(apply_length_norm(lw, LengthNorm::Linear), 0.25);
        let r: f64 = 1.3;
        for t in [1usize, 3, 9] {
            let lw = LogWeight::new(t as f64 * r.ln(), t).unwrap();
            assert!((apply_length_norm(lw, LengthNorm::Linear) - r.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn params_validation() {
        assert!(KernelParams::default().validate().is_ok());
        assert!(KernelParams::symmetric(0.0, 1.0).validate().is_err());
        assert!(ClipParams { eps_low: 1.0, eps_high: 0.2 }.validate().is_err());
        assert!(ClipParams::gspo().validate().is_ok());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn kernel_is_nonnegative_and_bounded_by_peak(log_w in -30.0f64..30.0, c1 in 0.1f64..6.0, c2 in 0.1f64..6.0) {
                let v = phi_vespo(log_w, c1, c2).unwrap();
                let peak = ((c1 / c2).ln() * c1 + c2 - c1).exp();
                prop_assert!(v >= 0.0);
                prop_assert!(v <= peak * (1.0 + 1e-12));
            }

            #[test]
            fn surrogate_is_monotone(w in 0.0f64..20.0, dw in 0.0f64..5.0, c1 in 0.5f64..5.0, c2 in 0.0f64..5.0) {
                let a = surrogate_f(w, c1, c2).unwrap();
                let b = surrogate_f(w + dw, c1, c2).unwrap();
                prop_assert!(b >= a - 1e-12 * a.abs().max(1.0));
            }

            #[test]
            fn gates_pass_through_inside_region(rho in 0.81f64..1.27) {
                let clip = ClipParams::grpo();
                prop_assert_eq!(phi_grpo_token(rho, AdvantageSign::Positive, clip).unwrap(), rho);
                prop_assert_eq!(phi_grpo_token(rho, AdvantageSign::Negative, clip).unwrap(), rho);
            }
        }
    }
}
