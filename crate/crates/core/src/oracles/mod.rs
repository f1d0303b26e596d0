//! Brute-force reference solutions.
//!
//! Everything here is computed by direct linear solves, fixed-point sweeps,
//! or bisection — no gradient descent — so these results cannot share bugs
//! with the learner they validate. Finite problems are solved exactly; the
//! quadratic-Gaussian tilt has a closed form.

use crate::env::FiniteMdp;
use crate::math::{self, snis_kl_estimate, tilt_weights, DiagonalGaussian, MathError};
use crate::real::{Real, ALPHA_MAX, ALPHA_MIN};
use crate::rng::SeedRng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("value iteration did not reach tol {tol} in {sweeps} sweeps (residual {residual})")]
    NonConvergence {
        sweeps: usize,
        tol: f64,
        residual: f64,
    },
    #[error("singular linear system (pivot {0})")]
    Singular(f64),
    #[error("tilted Gaussian posterior precision {0} is not positive")]
    NonPositivePrecision(f64),
    #[error("{0}")]
    BadInput(String),
    #[error(transparent)]
    Math(#[from] MathError),
}

pub type OracleResult<T> = Result<T, OracleError>;

/// Exact fixed point of the soft Bellman backup on a finite MDP.
#[derive(Debug, Clone)]
pub struct ExactSoftSolution<R: Real> {
    /// S×A optimal soft Q.
    pub q: Vec<R>,
    /// S optimal soft values.
    pub v: Vec<R>,
    /// S×A soft-greedy policy, rows normalized.
    pub policy: Vec<R>,
    pub iterations: usize,
    pub residual: R,
    /// Sup-norm change per sweep; the contraction check reads these.
    pub sweep_residuals: Vec<R>,
}

/// `α · log Σ_a π₀(a) exp(q_a/α)` in log-space (prior-weighted soft max).
fn soft_backup<R: Real>(q_row: &[R], prior_row: &[R], alpha: R) -> R {
    let mut best = R::neg_infinity();
    for (&q, &p) in q_row.iter().zip(prior_row) {
        if p > R::zero() {
            let z = q / alpha + p.ln();
            if z > best {
                best = z;
            }
        }
    }
    let mut sum = R::zero();
    for (&q, &p) in q_row.iter().zip(prior_row) {
        if p > R::zero() {
            sum = sum + (q / alpha + p.ln() - best).exp();
        }
    }
    alpha * (best + sum.ln())
}

/// Iterate the exact soft Bellman operator to its fixed point.
pub fn tabular_soft_value_iteration<R: Real>(
    mdp: &FiniteMdp<R>,
    alpha: R,
    tol: R,
) -> OracleResult<ExactSoftSolution<R>> {
    if !(alpha > R::zero()) || !(tol > R::zero()) {
        return Err(OracleError::BadInput("alpha and tol must be positive".into()));
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let gamma = mdp.gamma;
    let max_sweeps = 200_000;
    let mut v = vec![R::zero(); ns];
    let mut q = vec![R::zero(); ns * na];
    let mut sweep_residuals = Vec::new();
    for sweep in 1..=max_sweeps {
        let mut residual = R::zero();
        for s in 0..ns {
            for a in 0..na {
                let mut ev = R::zero();
                for (s2, &p) in mdp.transition(s, a).iter().enumerate() {
                    if p > R::zero() {
                        ev = ev + p * v[s2];
                    }
                }
                q[s * na + a] = mdp.reward(s, a) + gamma * ev;
            }
        }
        for s in 0..ns {
            let new_v = soft_backup(&q[s * na..(s + 1) * na], mdp.prior_row(s), alpha);
            let delta = (new_v - v[s]).abs();
            if delta > residual {
                residual = delta;
            }
            v[s] = new_v;
        }
        sweep_residuals.push(residual);
        if residual < tol {
            let policy = exact_improved_policy(&q, mdp.enumerate().2, na, alpha)?;
            return Ok(ExactSoftSolution {
                q,
                v,
                policy,
                iterations: sweep,
                residual,
                sweep_residuals,
            });
        }
    }
    Err(OracleError::NonConvergence {
        sweeps: max_sweeps,
        tol: tol.as_f64(),
        residual: sweep_residuals.last().map(|r| r.as_f64()).unwrap_or(f64::NAN),
    })
}

/// Standard hard-max value iteration; the α → 0 limit of the soft variant.
pub fn tabular_hard_value_iteration<R: Real>(
    mdp: &FiniteMdp<R>,
    tol: R,
) -> OracleResult<(Vec<R>, Vec<R>)> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let gamma = mdp.gamma;
    let mut v = vec![R::zero(); ns];
    let mut q = vec![R::zero(); ns * na];
    for _ in 0..200_000 {
        let mut residual = R::zero();
        for s in 0..ns {
            for a in 0..na {
                let mut ev = R::zero();
                for (s2, &p) in mdp.transition(s, a).iter().enumerate() {
                    ev = ev + p * v[s2];
                }
                q[s * na + a] = mdp.reward(s, a) + gamma * ev;
            }
        }
        for s in 0..ns {
            let row = &q[s * na..(s + 1) * na];
            let new_v = row.iter().cloned().fold(R::neg_infinity(), R::max);
            let delta = (new_v - v[s]).abs();
            if delta > residual {
                residual = delta;
            }
            v[s] = new_v;
        }
        if residual < tol {
            return Ok((q, v));
        }
    }
    Err(OracleError::NonConvergence {
        sweeps: 200_000,
        tol: tol.as_f64(),
        residual: f64::NAN,
    })
}

/// One-step soft-greedy policy `q(a|s) ∝ π₀(a|s) exp(Q(s,a)/α)`.
pub fn exact_improved_policy<R: Real>(
    q: &[R],
    prior: &[R],
    n_actions: usize,
    alpha: R,
) -> OracleResult<Vec<R>> {
    if q.len() != prior.len() || n_actions == 0 || q.len() % n_actions != 0 {
        return Err(OracleError::BadInput("table shapes disagree".into()));
    }
    if !(alpha > R::zero()) {
        return Err(OracleError::BadInput("alpha must be positive".into()));
    }
    let ns = q.len() / n_actions;
    let mut policy = vec![R::zero(); q.len()];
    for s in 0..ns {
        let row = &q[s * n_actions..(s + 1) * n_actions];
        let prow = &prior[s * n_actions..(s + 1) * n_actions];
        let mut best = R::neg_infinity();
        for (&qa, &p) in row.iter().zip(prow) {
            if p > R::zero() {
                best = best.max(qa / alpha + p.ln());
            }
        }
        let mut total = R::zero();
        let out = &mut policy[s * n_actions..(s + 1) * n_actions];
        for (a, (&qa, &p)) in row.iter().zip(prow).enumerate() {
            if p > R::zero() {
                out[a] = (qa / alpha + p.ln() - best).exp();
                total = total + out[a];
            }
        }
        for w in out.iter_mut() {
            *w = *w / total;
        }
    }
    Ok(policy)
}

/// Exact KL-regularized evaluation of `policy` by direct linear solve:
/// V satisfies (I − γ M_π) V = r_π − α KL(π‖π₀) and Q = r + γ P V.
pub fn exact_policy_evaluation<R: Real>(
    mdp: &FiniteMdp<R>,
    policy: &[R],
    alpha: R,
) -> OracleResult<Vec<R>> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    if policy.len() != ns * na {
        return Err(OracleError::BadInput("policy table shape".into()));
    }
    for s in 0..ns {
        let row = &policy[s * na..(s + 1) * na];
        let sum = row.iter().fold(R::zero(), |acc, &w| acc + w);
        if (sum - R::one()).abs() > R::of(1e-9) {
            return Err(OracleError::BadInput(format!(
                "policy row {s} sums to {}",
                sum.as_f64()
            )));
        }
    }
    let gamma = mdp.gamma;
    // Row-stochastic state transition under the policy and the drift term.
    let mut a_mat = vec![R::zero(); ns * ns];
    let mut b = vec![R::zero(); ns];
    for s in 0..ns {
        let pi = &policy[s * na..(s + 1) * na];
        let prior = mdp.prior_row(s);
        let mut kl = R::zero();
        for a in 0..na {
            if pi[a] > R::zero() {
                if prior[a] <= R::zero() {
                    return Err(OracleError::BadInput(format!(
                        "policy puts mass on a prior-null action ({s},{a})"
                    )));
                }
                kl = kl + pi[a] * (pi[a].ln() - prior[a].ln());
            }
            b[s] = b[s] + pi[a] * mdp.reward(s, a);
            for (s2, &p) in mdp.transition(s, a).iter().enumerate() {
                a_mat[s * ns + s2] = a_mat[s * ns + s2] + pi[a] * p;
            }
        }
        b[s] = b[s] - alpha * kl;
    }
    // I − γ M.
    for s in 0..ns {
        for s2 in 0..ns {
            let m = a_mat[s * ns + s2];
            a_mat[s * ns + s2] = if s == s2 { R::one() - gamma * m } else { -(gamma * m) };
        }
    }
    let v = solve_linear(&mut a_mat, &mut b, ns)?;
    let mut q = vec![R::zero(); ns * na];
    for s in 0..ns {
        for a in 0..na {
            let mut ev = R::zero();
            for (s2, &p) in mdp.transition(s, a).iter().enumerate() {
                ev = ev + p * v[s2];
            }
            q[s * na + a] = mdp.reward(s, a) + gamma * ev;
        }
    }
    Ok(q)
}

/// Gaussian elimination with partial pivoting; `a` is n×n row-major and both
/// buffers are clobbered. Plenty for the ≤16-state oracle systems.
fn solve_linear<R: Real>(a: &mut [R], b: &mut [R], n: usize) -> OracleResult<Vec<R>> {
    assert_eq!(a.len(), n * n);
    assert_eq!(b.len(), n);
    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_mag = a[col * n + col].abs();
        for row in col + 1..n {
            let mag = a[row * n + col].abs();
            if mag > pivot_mag {
                pivot_mag = mag;
                pivot_row = row;
            }
        }
        if pivot_mag.as_f64() < 1e-12 {
            return Err(OracleError::Singular(pivot_mag.as_f64()));
        }
        if pivot_row != col {
            for k in 0..n {
                a.swap(col * n + k, pivot_row * n + k);
            }
            b.swap(col, pivot_row);
        }
        let pivot = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / pivot;
            if factor == R::zero() {
                continue;
            }
            for k in col..n {
                let val = a[col * n + k];
                a[row * n + k] = a[row * n + k] - factor * val;
            }
            b[row] = b[row] - factor * b[col];
        }
    }
    let mut x = vec![R::zero(); n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc = acc - a[row * n + k] * x[k];
        }
        x[row] = acc / a[row * n + row];
    }
    Ok(x)
}

/// Closed-form tilt of a 1-D Gaussian prior by `exp(Q/α)` with
/// `Q(a) = −½κa² + βa`: precision adds, linear term shifts the mean.
pub fn tilted_gaussian_moments<R: Real>(
    prior_mean: R,
    prior_stddev: R,
    kappa: R,
    beta: R,
    alpha: R,
) -> OracleResult<(R, R)> {
    if !(alpha > R::zero()) || !(prior_stddev > R::zero()) {
        return Err(OracleError::BadInput("alpha and stddev must be positive".into()));
    }
    let prior_precision = R::one() / (prior_stddev * prior_stddev);
    let precision = prior_precision + kappa / alpha;
    if !(precision > R::zero()) {
        return Err(OracleError::NonPositivePrecision(precision.as_f64()));
    }
    let variance = R::one() / precision;
    let mean = variance * (prior_mean * prior_precision + beta / alpha);
    Ok((mean, variance))
}

/// SNIS estimate of the tilted-Gaussian moments from K prior samples — the
/// measured side of the [`tilted_gaussian_moments`] comparison.
pub fn snis_tilted_moments_estimate<R: Real>(
    prior_mean: R,
    prior_stddev: R,
    kappa: R,
    beta: R,
    alpha: R,
    k: usize,
    rng: &mut SeedRng,
) -> OracleResult<(R, R)> {
    let prior = DiagonalGaussian::new(vec![prior_mean], vec![prior_stddev])?;
    let actions = math::sample_actions(&prior, k, rng);
    let half = R::of(0.5);
    let q: Vec<R> = actions
        .iter()
        .map(|a| beta * a[0] - half * kappa * a[0] * a[0])
        .collect();
    let w = tilt_weights(&q, alpha)?;
    let mut mean = R::zero();
    for (a, &wi) in actions.iter().zip(&w) {
        mean = mean + wi * a[0];
    }
    let mut var = R::zero();
    for (a, &wi) in actions.iter().zip(&w) {
        let d = a[0] - mean;
        var = var + wi * d * d;
    }
    Ok((mean, var))
}

#[derive(Debug, Clone, Copy)]
pub struct DualSolution<R: Real> {
    pub alpha_star: R,
    pub kl_at_alpha: R,
    /// False when the bound can never bind (KL ≤ ε across the whole clamp
    /// range), in which case `alpha_star` is the floor.
    pub constraint_active: bool,
}

fn mean_snis_kl<R: Real>(q_samples: &[Vec<R>], alpha: R) -> OracleResult<R> {
    let mut total = R::zero();
    for q in q_samples {
        total = total + snis_kl_estimate(&tilt_weights(q, alpha)?)?;
    }
    Ok(total / R::of(q_samples.len() as f64))
}

/// Solve `mean_s KL(q̂_s ‖ uniform samples) = ε` for α by bisection on the
/// monotone map α ↦ KL. Pure root finding — the reference for the learner's
/// gradient-based temperature dual.
pub fn dual_bisection<R: Real>(q_samples: &[Vec<R>], epsilon: R) -> OracleResult<DualSolution<R>> {
    if q_samples.is_empty() || q_samples.iter().any(|q| q.is_empty()) {
        return Err(OracleError::BadInput("need at least one Q sample row".into()));
    }
    if !(epsilon > R::zero()) {
        return Err(OracleError::BadInput("epsilon must be positive".into()));
    }
    let floor = R::of(ALPHA_MIN);
    let ceil = R::of(ALPHA_MAX);
    let kl_floor = mean_snis_kl(q_samples, floor)?;
    if kl_floor <= epsilon {
        // Even the coldest temperature satisfies the bound.
        return Ok(DualSolution {
            alpha_star: floor,
            kl_at_alpha: kl_floor,
            constraint_active: false,
        });
    }
    let kl_ceil = mean_snis_kl(q_samples, ceil)?;
    if kl_ceil >= epsilon {
        return Ok(DualSolution {
            alpha_star: ceil,
            kl_at_alpha: kl_ceil,
            constraint_active: true,
        });
    }
    let (mut lo, mut hi) = (floor, ceil);
    let tol = R::of(1e-4);
    let mut kl_mid = kl_floor;
    let mut mid = lo;
    for _ in 0..200 {
        // Geometric midpoint: the natural scale for a temperature.
        mid = ((lo.ln() + hi.ln()) * R::of(0.5)).exp();
        kl_mid = mean_snis_kl(q_samples, mid)?;
        if (kl_mid - epsilon).abs() < tol {
            break;
        }
        if kl_mid > epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(DualSolution {
        alpha_star: mid,
        kl_at_alpha: kl_mid,
        constraint_active: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_state_closed_form() {
        // γ = 0, uniform prior, r = [1, 0], α = 1.
        let mdp = FiniteMdp::new(
            1,
            2,
            vec![1.0, 1.0],
            vec![1.0, 0.0],
            vec![0.5, 0.5],
            0.0f64,
        )
        .unwrap();
        let sol = tabular_soft_value_iteration(&mdp, 1.0, 1e-12).unwrap();
        let expect_v = ((1.0f64.exp() + 1.0) / 2.0).ln();
        assert!((sol.v[0] - expect_v).abs() < 1e-10);
        let e = 1.0f64.exp();
        assert!((sol.policy[0] - e / (e + 1.0)).abs() < 1e-10);
        assert!((sol.policy[1] - 1.0 / (e + 1.0)).abs() < 1e-10);
    }

    #[test]
    fn zero_reward_gives_zero_value_and_prior_policy() {
        let mut mdp = FiniteMdp::<f64>::random(6, 3, 0.9, 5);
        let zero = vec![0.0; 18];
        mdp = FiniteMdp::new(
            6,
            3,
            mdp.enumerate().0.to_vec(),
            zero,
            mdp.enumerate().2.to_vec(),
            0.9,
        )
        .unwrap();
        let sol = tabular_soft_value_iteration(&mdp, 0.7, 1e-12).unwrap();
        for (i, &v) in sol.v.iter().enumerate() {
            assert!(v.abs() < 1e-9, "v[{i}] = {v}");
        }
        let (_, _, prior) = mdp.enumerate();
        for (p, q) in sol.policy.iter().zip(prior) {
            assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn cold_limit_matches_hard_value_iteration() {
        for mdp in [
            FiniteMdp::<f64>::chain(0.9),
            FiniteMdp::<f64>::grid4x4(0.9),
            FiniteMdp::<f64>::random(7, 4, 0.92, 31),
        ] {
            let soft = tabular_soft_value_iteration(&mdp, 1e-6, 1e-12).unwrap();
            let (_, hard_v) = tabular_hard_value_iteration(&mdp, 1e-12).unwrap();
            for s in 0..mdp.n_states() {
                assert!(
                    (soft.v[s] - hard_v[s]).abs() < 1e-4,
                    "state {s}: {} vs {}",
                    soft.v[s],
                    hard_v[s]
                );
            }
        }
    }

    #[test]
    fn soft_vi_contraction_is_geometric() {
        let mdp = FiniteMdp::<f64>::random(8, 3, 0.9, 77);
        let sol = tabular_soft_value_iteration(&mdp, 0.5, 1e-10).unwrap();
        let rs = &sol.sweep_residuals;
        for w in rs.windows(2).skip(2) {
            if w[0] > 1e-8 {
                assert!(w[1] <= w[0] * (mdp.gamma + 1e-6), "ratio {}", w[1] / w[0]);
            }
        }
    }

    #[test]
    fn soft_vi_fixed_point_identity() {
        // V*(s) must equal the prior-weighted soft max of Q*(s,·).
        let mdp = FiniteMdp::<f64>::random(6, 4, 0.88, 11);
        let alpha = 0.3;
        let sol = tabular_soft_value_iteration(&mdp, alpha, 1e-12).unwrap();
        for s in 0..6 {
            let backup = soft_backup(&sol.q[s * 4..(s + 1) * 4], mdp.prior_row(s), alpha);
            assert!((backup - sol.v[s]).abs() < 1e-10);
        }
    }

    #[test]
    fn evaluation_gamma_zero_returns_rewards() {
        let mut mdp = FiniteMdp::<f64>::random(5, 3, 0.9, 9);
        mdp = FiniteMdp::new(
            5,
            3,
            mdp.enumerate().0.to_vec(),
            mdp.enumerate().1.to_vec(),
            mdp.enumerate().2.to_vec(),
            0.0,
        )
        .unwrap();
        let prior = mdp.enumerate().2.to_vec();
        let q = exact_policy_evaluation(&mdp, &prior, 1.0).unwrap();
        for (qa, ra) in q.iter().zip(mdp.enumerate().1) {
            assert!((qa - ra).abs() < 1e-12);
        }
    }

    #[test]
    fn evaluating_the_prior_ignores_alpha() {
        // π = π₀ makes the KL drift vanish, so α cannot matter.
        let mdp = FiniteMdp::<f64>::random(6, 3, 0.9, 13);
        let prior = mdp.enumerate().2.to_vec();
        let q1 = exact_policy_evaluation(&mdp, &prior, 0.05).unwrap();
        let q2 = exact_policy_evaluation(&mdp, &prior, 50.0).unwrap();
        for (a, b) in q1.iter().zip(&q2) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn evaluation_bellman_residual_is_tiny() {
        let mdp = FiniteMdp::<f64>::random(5, 4, 0.93, 17);
        let alpha = 0.4;
        let sol = tabular_soft_value_iteration(&mdp, alpha, 1e-12).unwrap();
        let q = exact_policy_evaluation(&mdp, &sol.policy, alpha).unwrap();
        // Residual of Eq.-style recursion: Q(s,a) − [r + γ Σ P (π·Q − α KL)].
        let (ns, na) = (5, 4);
        for s in 0..ns {
            for a in 0..na {
                let mut rhs = mdp.reward(s, a);
                for (s2, &p) in mdp.transition(s, a).iter().enumerate() {
                    let pi = &sol.policy[s2 * na..(s2 + 1) * na];
                    let prior = mdp.prior_row(s2);
                    let mut v = 0.0;
                    for a2 in 0..na {
                        if pi[a2] > 0.0 {
                            v += pi[a2] * (q[s2 * na + a2] - alpha * (pi[a2].ln() - prior[a2].ln()));
                        }
                    }
                    rhs += mdp.gamma * p * v;
                }
                assert!(
                    (q[s * na + a] - rhs).abs() < 1e-10,
                    "residual at ({s},{a})"
                );
            }
        }
    }

    #[test]
    fn improvement_is_pointwise_monotone() {
        for seed in 0..10 {
            let mdp = FiniteMdp::<f64>::random(6, 3, 0.9, 1000 + seed);
            let alpha = 0.5;
            let prior = mdp.enumerate().2.to_vec();
            let q_prior = exact_policy_evaluation(&mdp, &prior, alpha).unwrap();
            let improved = exact_improved_policy(&q_prior, &prior, 3, alpha).unwrap();
            let q_improved = exact_policy_evaluation(&mdp, &improved, alpha).unwrap();
            for (i, (qi, qp)) in q_improved.iter().zip(&q_prior).enumerate() {
                assert!(qi >= &(qp - 1e-8), "entry {i}: {qi} < {qp}");
            }
        }
    }

    #[test]
    fn improved_policy_edge_cases() {
        // Constant Q row → prior unchanged; uniform prior → softmax of Q/α.
        let prior = vec![0.7f64, 0.3];
        let pol = exact_improved_policy(&[2.5, 2.5], &prior, 2, 1.0).unwrap();
        assert!((pol[0] - 0.7).abs() < 1e-12 && (pol[1] - 0.3).abs() < 1e-12);

        let pol = exact_improved_policy(&[3.0f64.ln(), 0.0], &[0.5, 0.5], 2, 1.0).unwrap();
        assert!((pol[0] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn tilted_gaussian_closed_forms() {
        // Q = −a² (κ=2): precision 1 + 2 = 3.
        let (m, v) = tilted_gaussian_moments(0.0, 1.0, 2.0, 0.0, 1.0f64).unwrap();
        assert!((m - 0.0).abs() < 1e-15 && (v - 1.0 / 3.0).abs() < 1e-15);
        // Q = a: mean shifts by σ²β/α.
        let (m, v) = tilted_gaussian_moments(0.0, 1.0, 0.0, 1.0, 1.0f64).unwrap();
        assert!((m - 1.0).abs() < 1e-15 && (v - 1.0).abs() < 1e-15);
        // κ = β = 0 leaves the prior alone.
        let (m, v) = tilted_gaussian_moments(0.4, 1.3, 0.0, 0.0, 2.0f64).unwrap();
        assert!((m - 0.4).abs() < 1e-15 && (v - 1.69).abs() < 1e-12);
        // Too-negative curvature breaks normalizability.
        assert!(matches!(
            tilted_gaussian_moments(0.0, 1.0, -3.0, 0.0, 1.0f64),
            Err(OracleError::NonPositivePrecision(_))
        ));
    }

    #[test]
    fn snis_estimate_approaches_the_closed_form() {
        let mut rng = SeedRng::new(40);
        let (m, v) =
            snis_tilted_moments_estimate(0.0, 1.0, 2.0, 0.0, 1.0f64, 100_000, &mut rng).unwrap();
        assert!(m.abs() < 0.02, "mean {m}");
        assert!((v - 1.0 / 3.0).abs() < 0.02, "variance {v}");
    }

    #[test]
    fn dual_bisection_constant_q_hits_floor() {
        let sol = dual_bisection(&[vec![1.0f64; 8]], 0.1).unwrap();
        assert_eq!(sol.alpha_star, ALPHA_MIN);
        assert!(!sol.constraint_active);
        assert!(sol.kl_at_alpha.abs() < 1e-12);
    }

    #[test]
    fn dual_bisection_two_point_fixture() {
        // Q = [10, 0], K = 2, ε = ln 2 − 0.01: independently derived root.
        let eps = 2.0f64.ln() - 0.01;
        let sol = dual_bisection(&[vec![10.0, 0.0]], eps).unwrap();
        assert!(sol.constraint_active);
        assert!(
            (sol.alpha_star - 1.506_717_723_854_886_8).abs() < 0.01,
            "alpha* {}",
            sol.alpha_star
        );
        assert!((sol.kl_at_alpha - eps).abs() < 1e-4);
    }

    #[test]
    fn dual_bisection_monotone_in_epsilon() {
        let q = vec![vec![3.0f64, 1.0, 0.0, -2.0], vec![0.5, 0.2, 0.0, 1.0]];
        let mut last = f64::INFINITY;
        for eps in [0.05, 0.2, 0.5, 1.0] {
            let sol = dual_bisection(&q, eps).unwrap();
            assert!(
                sol.alpha_star <= last + 1e-9,
                "alpha* not non-increasing in eps"
            );
            last = sol.alpha_star;
        }
    }

    #[test]
    fn solver_matches_known_system() {
        // [2 1; 1 3] x = [5; 10] → x = [1, 3].
        let mut a = vec![2.0f64, 1.0, 1.0, 3.0];
        let mut b = vec![5.0, 10.0];
        let x = solve_linear(&mut a, &mut b, 2).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 3.0).abs() < 1e-12);

        let mut sing = vec![1.0f64, 2.0, 2.0, 4.0];
        let mut b2 = vec![1.0, 2.0];
        assert!(matches!(
            solve_linear(&mut sing, &mut b2, 2),
            Err(OracleError::Singular(_))
        ));
    }
}
