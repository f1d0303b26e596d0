//! Probability and importance-sampling primitives.
//!
//! These are pure functions over immutable inputs: numerically stable
//! log-sum-exp, exponential tilting of sampled actions by a soft Q-function,
//! the K-sample soft state value, and the self-normalized KL estimate used by
//! the temperature dual. All of it is generic over the scalar type.

mod gaussian;

pub use gaussian::DiagonalGaussian;

use crate::real::Real;
use crate::rng::SeedRng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MathError {
    #[error("{op}: empty input")]
    EmptyInput { op: &'static str },
    #[error("{op}: non-finite value at index {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("inverse temperature must be positive, got {alpha}")]
    NonPositiveAlpha { alpha: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("stddev[{index}] = {value} is below the {floor} floor")]
    StddevBelowFloor {
        index: usize,
        value: f64,
        floor: f64,
    },
    #[error("weights sum to {sum}, not 1")]
    WeightsNotNormalized { sum: f64 },
}

pub type MathResult<T> = Result<T, MathError>;

fn ensure_finite<R: Real>(op: &'static str, values: &[R]) -> MathResult<()> {
    for (index, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(MathError::NonFinite { op, index });
        }
    }
    Ok(())
}

fn ensure_alpha<R: Real>(alpha: R) -> MathResult<()> {
    if !(alpha > R::zero()) || !alpha.is_finite() {
        return Err(MathError::NonPositiveAlpha {
            alpha: alpha.as_f64(),
        });
    }
    Ok(())
}

/// `log Σ exp(v_j)` via max subtraction; safe for |v| up to ~700.
pub fn log_sum_exp<R: Real>(values: &[R]) -> MathResult<R> {
    if values.is_empty() {
        return Err(MathError::EmptyInput { op: "log_sum_exp" });
    }
    ensure_finite("log_sum_exp", values)?;
    let max = values.iter().cloned().fold(values[0], R::max);
    let mut sum = R::zero();
    for &v in values {
        sum = sum + (v - max).exp();
    }
    Ok(max + sum.ln())
}

/// Normalized softmax weights `w_k ∝ exp(Q_k / α)`.
pub fn tilt_weights<R: Real>(q_values: &[R], alpha: R) -> MathResult<Vec<R>> {
    Ok(tilt_log_weights(q_values, alpha)?
        .into_iter()
        .map(|lw| lw.exp())
        .collect())
}

/// Shift-normalized log weights `log w_k = Q_k/α − lse(Q/α)`.
pub fn tilt_log_weights<R: Real>(q_values: &[R], alpha: R) -> MathResult<Vec<R>> {
    if q_values.is_empty() {
        return Err(MathError::EmptyInput { op: "tilt_weights" });
    }
    ensure_alpha(alpha)?;
    ensure_finite("tilt_weights", q_values)?;
    let scaled: Vec<R> = q_values.iter().map(|&q| q / alpha).collect();
    let lse = log_sum_exp(&scaled)?;
    Ok(scaled.into_iter().map(|s| s - lse).collect())
}

/// K-sample soft state value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftValueEstimate<R: Real> {
    /// `α · log((1/K) Σ exp(Q_k/α))`, in reward units.
    pub value: R,
    /// `log((1/K) Σ exp(Q_k/α))`.
    pub log_mean_exp: R,
    /// Number of sampled actions backing the estimate.
    pub k: usize,
}

/// Soft value of a state from Q-values at K prior samples.
///
/// Algebraically equal to the self-normalized weighted sum
/// `Σ_k ŵ_k (Q_k − α log(K·ŵ_k))` with `ŵ = tilt_weights(Q, α)`.
pub fn soft_value_estimate<R: Real>(q_values: &[R], alpha: R) -> MathResult<SoftValueEstimate<R>> {
    if q_values.is_empty() {
        return Err(MathError::EmptyInput {
            op: "soft_value_estimate",
        });
    }
    ensure_alpha(alpha)?;
    ensure_finite("soft_value_estimate", q_values)?;
    let k = q_values.len();
    let scaled: Vec<R> = q_values.iter().map(|&q| q / alpha).collect();
    let log_mean_exp = log_sum_exp(&scaled)? - R::of(k as f64).ln();
    Ok(SoftValueEstimate {
        value: alpha * log_mean_exp,
        log_mean_exp,
        k,
    })
}

/// Literal mixed pmf/density form of the weighted Bellman bracket:
/// `Σ_k ŵ_k (Q_k − α log(ŵ_k / π₀(a_k)))` with `ŵ_k` a categorical mass and
/// `π₀(a_k)` the proposal density at the sample.
///
/// Diagnostic only; the learner always uses [`soft_value_estimate`], which is
/// the self-normalized reading of the same expression.
pub fn soft_value_literal<R: Real>(
    q_values: &[R],
    prior_log_probs: &[R],
    alpha: R,
) -> MathResult<R> {
    if q_values.len() != prior_log_probs.len() {
        return Err(MathError::DimensionMismatch {
            expected: q_values.len(),
            got: prior_log_probs.len(),
        });
    }
    let log_w = tilt_log_weights(q_values, alpha)?;
    let mut total = R::zero();
    for ((&q, &lw), &lp) in q_values.iter().zip(&log_w).zip(prior_log_probs) {
        total = total + lw.exp() * (q - alpha * (lw - lp));
    }
    Ok(total)
}

/// Empirical KL of tilted weights against the uniform proposal samples:
/// `Σ_k w_k log(K·w_k) ∈ [0, log K]`.
pub fn snis_kl_estimate<R: Real>(weights: &[R]) -> MathResult<R> {
    if weights.is_empty() {
        return Err(MathError::EmptyInput {
            op: "snis_kl_estimate",
        });
    }
    ensure_finite("snis_kl_estimate", weights)?;
    let sum = weights.iter().fold(R::zero(), |acc, &w| acc + w);
    if (sum - R::one()).abs() > R::of(1e-6) {
        return Err(MathError::WeightsNotNormalized { sum: sum.as_f64() });
    }
    let k = R::of(weights.len() as f64);
    let mut kl = R::zero();
    for &w in weights {
        if w > R::zero() {
            kl = kl + w * (k * w).ln();
        }
    }
    // Exact zero for uniform weights up to rounding.
    Ok(kl.max(R::zero()))
}

/// Discrete policy over K actions sampled from the behavior prior, weighted
/// by the exponentiated soft Q-function.
#[derive(Debug, Clone)]
pub struct TiltedCategorical<R: Real> {
    pub actions: Vec<Vec<R>>,
    pub log_weights: Vec<R>,
    pub weights: Vec<R>,
    pub alpha: R,
}

impl<R: Real> TiltedCategorical<R> {
    pub fn from_q_values(actions: Vec<Vec<R>>, q_values: &[R], alpha: R) -> MathResult<Self> {
        if actions.len() != q_values.len() {
            return Err(MathError::DimensionMismatch {
                expected: actions.len(),
                got: q_values.len(),
            });
        }
        let log_weights = tilt_log_weights(q_values, alpha)?;
        let weights: Vec<R> = log_weights.iter().map(|&lw| lw.exp()).collect();
        Ok(Self {
            actions,
            log_weights,
            weights,
            alpha,
        })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    /// Draw one action index.
    pub fn sample_index(&self, rng: &mut SeedRng) -> usize {
        rng.categorical(&self.weights)
    }

    /// Draw one action.
    pub fn sample(&self, rng: &mut SeedRng) -> &[R] {
        &self.actions[self.sample_index(rng)]
    }

    /// Index of the largest weight; ties go to the lowest index.
    pub fn argmax_index(&self) -> usize {
        let mut best = 0;
        for i in 1..self.weights.len() {
            if self.weights[i] > self.weights[best] {
                best = i;
            }
        }
        best
    }

    /// Empirical KL against the proposal samples.
    pub fn snis_kl(&self) -> R {
        snis_kl_estimate(&self.weights).expect("tilt weights are normalized")
    }
}

/// I.i.d. action draws from a diagonal Gaussian.
pub fn sample_actions<R: Real>(
    d: &DiagonalGaussian<R>,
    k: usize,
    rng: &mut SeedRng,
) -> Vec<Vec<R>> {
    assert!(k >= 1, "need at least one sample");
    (0..k).map(|_| d.sample(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-12;

    #[test]
    fn lse_identical_entries() {
        let v = log_sum_exp(&[0.0f64, 0.0]).unwrap();
        assert!((v - 2.0f64.ln()).abs() < TOL);
    }

    #[test]
    fn lse_single_element() {
        assert_eq!(log_sum_exp(&[5.0f64]).unwrap(), 5.0);
    }

    #[test]
    fn lse_no_overflow() {
        // Exact answer 1000 + ln 2: max-subtraction reduces this to the
        // identical-entries case, so no extended precision is needed.
        let v = log_sum_exp(&[1000.0f64, 1000.0]).unwrap();
        assert!((v - (1000.0 + 2.0f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn lse_rejects_empty_and_nan() {
        assert!(matches!(
            log_sum_exp::<f64>(&[]),
            Err(MathError::EmptyInput { .. })
        ));
        assert!(matches!(
            log_sum_exp(&[0.0, f64::NAN]),
            Err(MathError::NonFinite { index: 1, .. })
        ));
    }

    #[test]
    fn tilt_symmetry() {
        let w = tilt_weights(&[0.0f64, 0.0], 1.0).unwrap();
        assert!((w[0] - 0.5).abs() < TOL && (w[1] - 0.5).abs() < TOL);
    }

    #[test]
    fn tilt_direct_softmax() {
        let w = tilt_weights(&[3.0f64.ln(), 0.0], 1.0).unwrap();
        assert!((w[0] - 0.75).abs() < TOL);
        assert!((w[1] - 0.25).abs() < TOL);
    }

    #[test]
    fn tilt_argmax_limit() {
        let w = tilt_weights(&[1.0f64, 0.0], 1e-6).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-9);
        assert!(w[1].abs() < 1e-9);
    }

    #[test]
    fn tilt_rejects_bad_alpha() {
        assert!(matches!(
            tilt_weights(&[1.0f64], 0.0),
            Err(MathError::NonPositiveAlpha { .. })
        ));
        assert!(matches!(
            tilt_weights(&[1.0f64], -1.0),
            Err(MathError::NonPositiveAlpha { .. })
        ));
    }

    #[test]
    fn soft_value_constant_q() {
        for k in [1usize, 3, 17] {
            let q = vec![0.37f64; k];
            let sv = soft_value_estimate(&q, 1.0).unwrap();
            assert!((sv.value - 0.37).abs() < TOL);
        }
    }

    #[test]
    fn soft_value_closed_form() {
        // ln((e + 1)/2)
        let sv = soft_value_estimate(&[1.0f64, 0.0], 1.0).unwrap();
        let expect = ((1.0f64.exp() + 1.0) / 2.0).ln();
        assert!((sv.value - expect).abs() < TOL);
        assert!((expect - 0.6201).abs() < 1e-4);
    }

    #[test]
    fn soft_value_large_alpha_near_mean() {
        let sv = soft_value_estimate(&[1.0f64, 0.0], 10.0).unwrap();
        assert!(sv.value > 0.5 && sv.value < 1.0);
        // 10·ln((e^{0.1}+1)/2)
        assert!((sv.value - 0.512_494_795_136_256_3).abs() < 1e-12);
    }

    #[test]
    fn soft_value_weighted_sum_identity() {
        let mut rng = SeedRng::new(11);
        for _ in 0..200 {
            let k = 1 + rng.index(12);
            let q: Vec<f64> = (0..k).map(|_| rng.normal::<f64>() * 3.0).collect();
            let alpha = 10f64.powf(rng.uniform(-2.0, 2.0));
            let sv = soft_value_estimate(&q, alpha).unwrap();
            let w = tilt_weights(&q, alpha).unwrap();
            let mut direct = 0.0;
            for (&qi, &wi) in q.iter().zip(&w) {
                let ell = qi / alpha - sv.log_mean_exp;
                direct += wi * (qi - alpha * ell);
            }
            assert!(
                (direct - sv.value).abs() < 1e-9,
                "identity broke: {direct} vs {}",
                sv.value
            );
        }
    }

    #[test]
    fn literal_form_matches_snis_when_density_is_uniform_mass() {
        // With π₀(a_k) read as the uniform sample mass 1/K the log-ratio
        // becomes log(K·ŵ_k) and the literal bracket collapses to the soft
        // value exactly.
        let q = [0.7f64, -0.3, 1.1];
        let alpha = 0.8;
        let lp = vec![-(3.0f64.ln()); 3];
        let lit = soft_value_literal(&q, &lp, alpha).unwrap();
        let sv = soft_value_estimate(&q, alpha).unwrap();
        assert!((lit - sv.value).abs() < 1e-12);
    }

    #[test]
    fn snis_kl_uniform_is_zero() {
        for k in [2usize, 5, 64] {
            let w = vec![1.0f64 / k as f64; k];
            assert!(snis_kl_estimate(&w).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn snis_kl_one_hot() {
        let kl = snis_kl_estimate(&[1.0f64, 0.0, 0.0, 0.0]).unwrap();
        assert!((kl - 4.0f64.ln()).abs() < TOL);
    }

    #[test]
    fn snis_kl_direct_arithmetic() {
        let kl = snis_kl_estimate(&[0.75f64, 0.25]).unwrap();
        let expect = 0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln();
        assert!((kl - expect).abs() < TOL);
        assert!((expect - 0.1308).abs() < 1e-4);
    }

    #[test]
    fn snis_kl_rejects_unnormalized() {
        assert!(matches!(
            snis_kl_estimate(&[0.4f64, 0.4]),
            Err(MathError::WeightsNotNormalized { .. })
        ));
    }

    #[test]
    fn sample_actions_deterministic_under_seed() {
        let d = DiagonalGaussian::new(vec![0.0f64, 1.0], vec![1.0, 2.0]).unwrap();
        let a = sample_actions(&d, 16, &mut SeedRng::new(5));
        let b = sample_actions(&d, 16, &mut SeedRng::new(5));
        assert_eq!(a, b);
    }

    #[test]
    fn sample_actions_clt_mean() {
        let d = DiagonalGaussian::new(vec![0.0f64], vec![1.0]).unwrap();
        let draws = sample_actions(&d, 100_000, &mut SeedRng::new(9));
        let mean: f64 = draws.iter().map(|a| a[0]).sum::<f64>() / draws.len() as f64;
        assert!(mean.abs() < 0.02, "sample mean {mean}");
    }

    #[test]
    fn tilted_categorical_argmax_tie_breaks_low() {
        let tc =
            TiltedCategorical::from_q_values(vec![vec![0.0f64], vec![0.0], vec![0.0]], &[1.0, 1.0, 1.0], 1.0)
                .unwrap();
        assert_eq!(tc.argmax_index(), 0);
    }

    #[test]
    fn works_at_f32() {
        let w = tilt_weights(&[1.0f32, 0.0], 1.0f32).unwrap();
        assert!((w[0] + w[1] - 1.0).abs() < 1e-6);
        let sv = soft_value_estimate(&[1.0f32, 0.0], 1.0).unwrap();
        assert!((sv.value - 0.6201).abs() < 1e-3);
    }
}
