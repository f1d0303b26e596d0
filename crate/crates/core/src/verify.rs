//! Named runtime verification checks behind the CLI `verify` command: every
//! non-parametric operator is replayed against its exact oracle, the math
//! invariants are probed on random inputs, and analytic gradients are
//! finite-difference spot-checked. All checks are side-effect-free.

use crate::adapt::{
    init_adaptation, AdaptProtocol, AdaptVariant, EnvDims, PretrainedBundle,
};
use crate::env::FiniteMdp;
use crate::learner::{LearnerConfig, LearnerState};
use crate::math::{snis_kl_estimate, soft_value_estimate, tilt_weights, MathResult};
use crate::oracles::{
    dual_bisection, exact_improved_policy, exact_policy_evaluation, snis_tilted_moments_estimate,
    tabular_soft_value_iteration,
};
use crate::replay::{chunk_episode, Episode, TrajectoryChunk};
use crate::rng::SeedRng;
use std::sync::Arc;

/// Tilt-weight implementation under test. Injectable so a deliberately
/// broken variant can demonstrate that the harness catches it.
pub type TiltFn = fn(&[f64], f64) -> MathResult<Vec<f64>>;

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// Measured quantities, human-readable.
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self {
            name,
            passed,
            detail,
        }
    }
}

/// Run every check against the library's own tilt implementation.
pub fn run_checks() -> Vec<CheckOutcome> {
    run_checks_with_tilt(tilt_weights::<f64>)
}

/// Run every check, routing the tilt-pipeline checks through `tilt`.
pub fn run_checks_with_tilt(tilt: TiltFn) -> Vec<CheckOutcome> {
    vec![
        check_tilt_normalization(tilt),
        check_tilt_shift_invariance(tilt),
        check_tilt_temperature_limits(tilt),
        check_snis_kl_permutation_invariance(),
        check_soft_value_weighted_sum_identity(),
        check_tilted_gaussian_consistency(),
        check_snis_error_decay_slope(),
        check_soft_vi_closed_form(),
        check_soft_vi_residual(),
        check_exact_evaluation_residual(),
        check_policy_improvement_monotone(),
        check_tabular_k_sample_fidelity(),
        check_dual_calibration(),
        check_gradients("critic_gradient_check", critic_fd_max_rel_error),
        check_gradients("prior_gradient_check", prior_fd_max_rel_error),
        check_gradients("adapt_gradient_check", adapt_fd_max_rel_error),
        check_gradients("parametric_gradient_check", parametric_fd_max_rel_error),
    ]
}

/// Deliberately broken tilt used by the mutation fixture: the normalizing
/// pass exponentiates with a flipped sign, so a constant shift of Q scales
/// the weights by exp(2c/α) instead of cancelling.
pub fn sign_flipped_tilt(q: &[f64], alpha: f64) -> MathResult<Vec<f64>> {
    let z: f64 = q.iter().map(|&qi| (-qi / alpha).exp()).sum();
    Ok(q.iter().map(|&qi| (qi / alpha).exp() / z).collect())
}

fn random_q(rng: &mut SeedRng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.normal::<f64>()).collect()
}

fn check_tilt_normalization(tilt: TiltFn) -> CheckOutcome {
    let mut rng = SeedRng::new(101);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = 1 + rng.index(16);
        let q = random_q(&mut rng, n, 3.0);
        let alpha = rng.uniform(0.05, 10.0);
        match tilt(&q, alpha) {
            Ok(w) => worst = worst.max((w.iter().sum::<f64>() - 1.0).abs()),
            Err(e) => {
                return CheckOutcome::new("tilt_normalization", false, format!("error: {e}"))
            }
        }
    }
    CheckOutcome::new(
        "tilt_normalization",
        worst < 1e-9,
        format!("max |Σw − 1| = {worst:.3e} (bound 1e-9)"),
    )
}

fn check_tilt_shift_invariance(tilt: TiltFn) -> CheckOutcome {
    let mut rng = SeedRng::new(102);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = 2 + rng.index(14);
        let q = random_q(&mut rng, n, 3.0);
        let alpha = rng.uniform(0.05, 10.0);
        let c = rng.uniform(-100.0, 100.0);
        let shifted: Vec<f64> = q.iter().map(|&v| v + c).collect();
        match (tilt(&q, alpha), tilt(&shifted, alpha)) {
            (Ok(a), Ok(b)) => {
                for (x, y) in a.iter().zip(&b) {
                    worst = worst.max((x - y).abs());
                }
            }
            _ => {
                return CheckOutcome::new(
                    "tilt_shift_invariance",
                    false,
                    "tilt returned an error".into(),
                )
            }
        }
    }
    CheckOutcome::new(
        "tilt_shift_invariance",
        worst < 1e-12,
        format!("max |w(Q+c) − w(Q)| = {worst:.3e} (bound 1e-12)"),
    )
}

fn check_tilt_temperature_limits(tilt: TiltFn) -> CheckOutcome {
    let mut rng = SeedRng::new(103);
    let k = 12;
    let q = random_q(&mut rng, k, 2.0);
    let hot = match tilt(&q, 1e9) {
        Ok(w) => w,
        Err(e) => return CheckOutcome::new("tilt_temperature_limits", false, format!("{e}")),
    };
    let uniform_dist = hot
        .iter()
        .map(|w| (w - 1.0 / k as f64).abs())
        .fold(0.0, f64::max);
    let cold = match tilt(&q, 1e-6) {
        Ok(w) => w,
        Err(e) => return CheckOutcome::new("tilt_temperature_limits", false, format!("{e}")),
    };
    let argmax = q
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let one_hot_err = cold
        .iter()
        .enumerate()
        .map(|(i, w)| (w - if i == argmax { 1.0 } else { 0.0 }).abs())
        .fold(0.0, f64::max);
    CheckOutcome::new(
        "tilt_temperature_limits",
        uniform_dist < 1e-6 && one_hot_err < 1e-9,
        format!("α→∞ sup|w − 1/K| = {uniform_dist:.3e}, α→0 one-hot err = {one_hot_err:.3e}"),
    )
}

fn check_snis_kl_permutation_invariance() -> CheckOutcome {
    let mut rng = SeedRng::new(104);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = 2 + rng.index(14);
        let q = random_q(&mut rng, n, 3.0);
        let w = tilt_weights(&q, rng.uniform(0.1, 5.0)).expect("valid inputs");
        let kl = snis_kl_estimate(&w).expect("valid weights");
        let mut perm = w.clone();
        perm.reverse();
        perm.rotate_left(1);
        let kl_perm = snis_kl_estimate(&perm).expect("valid weights");
        worst = worst.max((kl - kl_perm).abs());
    }
    CheckOutcome::new(
        "snis_kl_permutation_invariance",
        worst < 1e-12,
        format!("max |KL − KL∘σ| = {worst:.3e} (bound 1e-12)"),
    )
}

fn check_soft_value_weighted_sum_identity() -> CheckOutcome {
    let mut rng = SeedRng::new(105);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = 2 + rng.index(14);
        let q = random_q(&mut rng, n, 4.0);
        let alpha = rng.uniform(0.1, 5.0);
        let sv = soft_value_estimate(&q, alpha).expect("valid inputs").value;
        let w = tilt_weights(&q, alpha).expect("valid inputs");
        let k = q.len() as f64;
        // Σ q̂_k (Q_k − α log(K q̂_k)) must equal the log-mean-exp form.
        let weighted: f64 = q
            .iter()
            .zip(&w)
            .map(|(&qi, &wi)| wi * (qi - alpha * (k * wi).ln()))
            .sum();
        worst = worst.max((sv - weighted).abs());
    }
    CheckOutcome::new(
        "soft_value_weighted_sum_identity",
        worst < 1e-9,
        format!("max |V̂ − Σq̂(Q − α log K q̂)| = {worst:.3e} (bound 1e-9)"),
    )
}

fn check_tilted_gaussian_consistency() -> CheckOutcome {
    // Prior N(0,1), Q = −a², α = 1 → exact tilt N(0, 1/3).
    let mut rng = SeedRng::new(106);
    let (mean, var) =
        snis_tilted_moments_estimate::<f64>(0.0, 1.0, 2.0, 0.0, 1.0, 100_000, &mut rng).expect("valid");
    let (em, ev) = (0.0, 1.0 / 3.0);
    let err_m = (mean - em).abs();
    let err_v = (var - ev).abs();
    CheckOutcome::new(
        "tilted_gaussian_snis_consistency",
        err_m < 0.02 && err_v < 0.02,
        format!("K=1e5: |mean − 0| = {err_m:.4}, |var − 1/3| = {err_v:.4} (bound 0.02)"),
    )
}

fn check_snis_error_decay_slope() -> CheckOutcome {
    let slope = snis_error_slope(8, 107);
    CheckOutcome::new(
        "snis_error_decay_slope",
        (slope + 0.5).abs() < 0.15,
        format!("log-log error slope over K ∈ 1e2..1e6 = {slope:.3} (want −0.5 ± 0.15)"),
    )
}

/// Least-squares slope of log mean-absolute SNIS error against log K for
/// the tilted-Gaussian fixture, averaged over `reps` independent streams.
pub fn snis_error_slope(reps: usize, seed: u64) -> f64 {
    let mut rng = SeedRng::new(seed);
    let ks = [100usize, 1_000, 10_000, 100_000, 1_000_000];
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &k in &ks {
        let mut err = 0.0;
        for _ in 0..reps {
            let (m, v) =
                snis_tilted_moments_estimate::<f64>(0.0, 1.0, 2.0, 0.0, 1.0, k, &mut rng).expect("valid");
            err += 0.5 * (m.abs() + (v - 1.0 / 3.0).abs());
        }
        xs.push((k as f64).ln());
        ys.push((err / reps as f64).ln());
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}

fn check_soft_vi_closed_form() -> CheckOutcome {
    // 1 state, 2 actions, γ = 0, uniform prior, α = 1, r = [1, 0]:
    // V* = ln((e + 1)/2), q* = [e, 1]/(e + 1).
    let mdp = FiniteMdp::<f64>::new(
        1,
        2,
        vec![1.0, 1.0],
        vec![1.0, 0.0],
        vec![0.5, 0.5],
        0.0,
    )
    .expect("valid tables");
    let sol = tabular_soft_value_iteration(&mdp, 1.0, 1e-12).expect("converges");
    let v_exact = ((1f64.exp() + 1.0) / 2.0).ln();
    let q_exact = [1f64.exp() / (1f64.exp() + 1.0), 1.0 / (1f64.exp() + 1.0)];
    let err = (sol.v[0] - v_exact)
        .abs()
        .max((sol.policy[0] - q_exact[0]).abs())
        .max((sol.policy[1] - q_exact[1]).abs());
    CheckOutcome::new(
        "soft_vi_closed_form",
        err < 1e-10,
        format!("1-state fixture max err = {err:.3e} (bound 1e-10)"),
    )
}

/// One exact soft Bellman backup of `q`; returns the sup-norm change.
pub fn soft_backup_residual(mdp: &FiniteMdp<f64>, q: &[f64], alpha: f64) -> f64 {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut v = vec![0.0; ns];
    for s in 0..ns {
        // V(s) = α log Σ_a π₀(a|s) exp(Q(s,a)/α), computed max-shifted.
        let row = &q[s * na..(s + 1) * na];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row
            .iter()
            .zip(mdp.prior_row(s))
            .map(|(&qi, &p)| p * ((qi - max) / alpha).exp())
            .sum();
        v[s] = max + alpha * z.ln();
    }
    let mut worst: f64 = 0.0;
    for s in 0..ns {
        for a in 0..na {
            let ev: f64 = mdp.transition(s, a).iter().zip(&v).map(|(p, vi)| p * vi).sum();
            let backed = mdp.reward(s, a) + mdp.gamma * ev;
            worst = worst.max((backed - q[s * na + a]).abs());
        }
    }
    worst
}

fn check_soft_vi_residual() -> CheckOutcome {
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let mdp = FiniteMdp::<f64>::random(5, 3, 0.9, 900 + seed);
        let sol = tabular_soft_value_iteration(&mdp, 0.7, 1e-12).expect("converges");
        worst = worst.max(soft_backup_residual(&mdp, &sol.q, 0.7));
    }
    CheckOutcome::new(
        "soft_vi_residual",
        worst < 1e-10,
        format!("max Bellman residual over 5 random MDPs = {worst:.3e} (bound 1e-10)"),
    )
}

fn check_exact_evaluation_residual() -> CheckOutcome {
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let mdp = FiniteMdp::<f64>::random(5, 3, 0.9, 910 + seed);
        let alpha = 0.8;
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let prior: Vec<f64> = (0..ns).flat_map(|s| mdp.prior_row(s).to_vec()).collect();
        // Evaluate the soft-greedy improvement of the zero table.
        let policy =
            exact_improved_policy(&vec![0.0; ns * na], &prior, na, alpha).expect("valid");
        let q = exact_policy_evaluation(&mdp, &policy, alpha).expect("solvable");
        // Residual of Eq. Q(s,a) = r + γ E[V_π(s')] with the KL-adjusted V.
        let mut v = vec![0.0; ns];
        for s in 0..ns {
            for a in 0..na {
                let pi = policy[s * na + a];
                if pi > 0.0 {
                    let prior = mdp.prior_row(s)[a];
                    v[s] += pi * (q[s * na + a] - alpha * (pi / prior).ln());
                }
            }
        }
        for s in 0..ns {
            for a in 0..na {
                let ev: f64 = mdp.transition(s, a).iter().zip(&v).map(|(p, vi)| p * vi).sum();
                let backed = mdp.reward(s, a) + mdp.gamma * ev;
                worst = worst.max((backed - q[s * na + a]).abs());
            }
        }
    }
    CheckOutcome::new(
        "exact_evaluation_residual",
        worst < 1e-10,
        format!("max evaluation residual over 5 random MDPs = {worst:.3e} (bound 1e-10)"),
    )
}

fn check_policy_improvement_monotone() -> CheckOutcome {
    let (violation, _count) = policy_improvement_worst_violation(50, 920);
    CheckOutcome::new(
        "policy_improvement_monotone",
        violation <= 1e-8,
        format!("worst pointwise regression over 50 random MDPs = {violation:.3e} (bound 1e-8)"),
    )
}

/// Worst pointwise decrease of Q under one soft-greedy improvement step,
/// across `n` random MDPs. Positive values are violations.
pub fn policy_improvement_worst_violation(n: usize, seed_base: u64) -> (f64, usize) {
    let mut worst = f64::NEG_INFINITY;
    let mut cells = 0;
    for i in 0..n {
        let mdp = FiniteMdp::<f64>::random(4 + (i % 3), 2 + (i % 2), 0.9, seed_base + i as u64);
        let alpha = 0.5 + 0.1 * (i % 5) as f64;
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let prior: Vec<f64> = (0..ns).flat_map(|s| mdp.prior_row(s).to_vec()).collect();
        let q_prior = exact_policy_evaluation(&mdp, &prior, alpha).expect("solvable");
        let improved = exact_improved_policy(&q_prior, &prior, na, alpha).expect("valid");
        let q_improved = exact_policy_evaluation(&mdp, &improved, alpha).expect("solvable");
        for (a, b) in q_prior.iter().zip(&q_improved) {
            worst = worst.max(a - b);
            cells += 1;
        }
    }
    (worst, cells)
}

/// Iterate the K-sample Bellman target with exact tables: proposals are K
/// prior draws per state, the soft value is the SNIS collapse, transitions
/// are taken in exact expectation. Returns the sup-norm gap between the
/// time-averaged iterate and exact soft value iteration.
pub fn tabular_k_sample_gap(
    mdp: &FiniteMdp<f64>,
    alpha: f64,
    k: usize,
    burn_in: usize,
    averaged: usize,
    rng: &mut SeedRng,
) -> f64 {
    let exact = tabular_soft_value_iteration(mdp, alpha, 1e-12).expect("converges");
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut q = vec![0.0; ns * na];
    let mut acc = vec![0.0; ns * na];
    for sweep in 0..burn_in + averaged {
        let mut vhat = vec![0.0; ns];
        for s in 0..ns {
            let row = mdp.prior_row(s);
            let samples: Vec<f64> = (0..k)
                .map(|_| q[s * na + rng.categorical(row)])
                .collect();
            vhat[s] = soft_value_estimate(&samples, alpha).expect("finite").value;
        }
        let mut next = vec![0.0; ns * na];
        for s in 0..ns {
            for a in 0..na {
                let ev: f64 = mdp
                    .transition(s, a)
                    .iter()
                    .zip(&vhat)
                    .map(|(p, v)| p * v)
                    .sum();
                next[s * na + a] = mdp.reward(s, a) + mdp.gamma * ev;
            }
        }
        q = next;
        if sweep >= burn_in {
            for (t, qi) in acc.iter_mut().zip(&q) {
                *t += qi;
            }
        }
    }
    acc.iter()
        .zip(&exact.q)
        .map(|(t, e)| (t / averaged as f64 - e).abs())
        .fold(0.0, f64::max)
}

fn check_tabular_k_sample_fidelity() -> CheckOutcome {
    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        let mdp = FiniteMdp::<f64>::random(5, 3, 0.6, 930 + seed);
        let mut rng = SeedRng::new(940 + seed);
        worst = worst.max(tabular_k_sample_gap(&mdp, 1.0, 512, 100, 200, &mut rng));
    }
    CheckOutcome::new(
        "tabular_k_sample_fidelity",
        worst < 1e-2,
        format!("K=512 sup-norm gap to exact soft VI over 3 MDPs = {worst:.4} (bound 1e-2)"),
    )
}

fn check_dual_calibration() -> CheckOutcome {
    // Frozen batch where the constraint binds; the dual iteration must land
    // on the bisection solution.
    let mut rng = SeedRng::new(108);
    let q_rows: Vec<Vec<f64>> = (0..16).map(|_| random_q(&mut rng, 8, 2.0)).collect();
    let epsilon = 0.3;
    let reference = dual_bisection(&q_rows, epsilon).expect("valid rows");
    let mut log_alpha: f64 = 0.0;
    for _ in 0..4000 {
        let alpha = log_alpha.exp().clamp(crate::ALPHA_MIN, crate::ALPHA_MAX);
        let mut kl = 0.0;
        for q in &q_rows {
            kl += snis_kl_estimate(&tilt_weights(q, alpha).expect("valid")).expect("valid");
        }
        kl /= q_rows.len() as f64;
        log_alpha += 0.05 * (kl - epsilon);
        log_alpha = log_alpha.clamp(crate::ALPHA_MIN.ln(), crate::ALPHA_MAX.ln());
    }
    let alpha = log_alpha.exp();
    let mut kl = 0.0;
    for q in &q_rows {
        kl += snis_kl_estimate(&tilt_weights(q, alpha).expect("valid")).expect("valid");
    }
    kl /= q_rows.len() as f64;
    let kl_gap = (kl - epsilon).abs() / epsilon;
    let alpha_gap = (alpha - reference.alpha_star).abs() / reference.alpha_star;
    CheckOutcome::new(
        "dual_temperature_calibration",
        reference.constraint_active && kl_gap < 0.1 && alpha_gap < 0.05,
        format!(
            "dual iterate: |KL − ε|/ε = {kl_gap:.4} (bound 0.1), \
             |α − α_bis|/α_bis = {alpha_gap:.4} (bound 0.05)"
        ),
    )
}

fn check_gradients(name: &'static str, f: fn(u64) -> f64) -> CheckOutcome {
    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        worst = worst.max(f(7000 + seed));
    }
    CheckOutcome::new(
        name,
        worst < 1e-4,
        format!("max FD relative error over 3 instances = {worst:.3e} (bound 1e-4)"),
    )
}

const FD_H: f64 = 1e-5;

fn fd_rel_err(analytic: f64, plus: f64, minus: f64) -> f64 {
    let fd = (plus - minus) / (2.0 * FD_H);
    (fd - analytic).abs() / analytic.abs().max(fd.abs()).max(1e-6)
}

fn small_learner(seed: u64) -> (LearnerState, Vec<Arc<TrajectoryChunk>>) {
    let rng = SeedRng::new(seed);
    let cfg = LearnerConfig {
        k: 4,
        hidden: vec![6],
        d: 4,
        gamma: 0.9,
        ..LearnerConfig::default()
    };
    let mut state = LearnerState::new(cfg, vec![1, 2], 2, 2, 2, &mut rng.child_named("init"));
    // Decorrelate targets from live nets so the targets are informative.
    let mut trng = rng.child_named("targets");
    for p in state
        .features
        .target
        .params
        .iter_mut()
        .chain(state.prior.target.params.iter_mut())
    {
        *p += 0.1 * trng.normal::<f64>();
    }
    for head in state.heads.iter_mut() {
        for w in head.target.w.iter_mut() {
            *w += trng.normal::<f64>();
        }
    }
    state.log_alpha = trng.uniform(-0.5, 0.5);
    let mut batch = Vec::new();
    let mut erng = rng.child_named("episodes");
    for task_id in [1usize, 2] {
        let t = 3;
        let ep = Episode {
            task_id,
            obs: (0..=t)
                .map(|_| vec![erng.uniform(-1.0, 1.0), erng.uniform(-1.0, 1.0)])
                .collect(),
            actions: (0..t)
                .map(|_| vec![erng.uniform(-1.0, 1.0), erng.uniform(-1.0, 1.0)])
                .collect(),
            rewards: (0..t).map(|_| erng.uniform(-1.0, 1.0)).collect(),
            terminals: vec![false, false, true],
        };
        batch.extend(chunk_episode(&ep, t, 1).into_iter().map(Arc::new));
    }
    (state, batch)
}

/// Max FD relative error of the multi-task critic loss gradient on one
/// random instance (features and both task heads).
pub fn critic_fd_max_rel_error(seed: u64) -> f64 {
    let (mut state, batch) = small_learner(seed);
    let grad_seed = seed ^ 0x9e37;
    let (_, gf, gh) = state
        .critic_loss_grad(&batch, &mut SeedRng::new(grad_seed))
        .expect("finite");
    let mut worst: f64 = 0.0;
    let eval = |st: &mut LearnerState| {
        st.critic_loss_grad(&batch, &mut SeedRng::new(grad_seed))
            .expect("finite")
            .0
    };
    for i in 0..gf.len() {
        state.features.live.params[i] += FD_H;
        let plus = eval(&mut state);
        state.features.live.params[i] -= 2.0 * FD_H;
        let minus = eval(&mut state);
        state.features.live.params[i] += FD_H;
        worst = worst.max(fd_rel_err(gf[i], plus, minus));
    }
    for (&idx, g) in &gh {
        for i in 0..g.len() {
            state.heads[idx].live.w[i] += FD_H;
            let plus = eval(&mut state);
            state.heads[idx].live.w[i] -= 2.0 * FD_H;
            let minus = eval(&mut state);
            state.heads[idx].live.w[i] += FD_H;
            worst = worst.max(fd_rel_err(g[i], plus, minus));
        }
    }
    worst
}

/// Max FD relative error of the prior's weighted-MLE loss gradient on one
/// random instance.
pub fn prior_fd_max_rel_error(seed: u64) -> f64 {
    let (mut state, batch) = small_learner(seed);
    let grad_seed = seed ^ 0x51f3;
    let (_, grad, _) = state
        .prior_loss_grad(&batch, &mut SeedRng::new(grad_seed))
        .expect("finite");
    let mut worst: f64 = 0.0;
    for i in 0..grad.len() {
        state.prior.live.params[i] += FD_H;
        let plus = state
            .prior_loss_grad(&batch, &mut SeedRng::new(grad_seed))
            .expect("finite")
            .0;
        state.prior.live.params[i] -= 2.0 * FD_H;
        let minus = state
            .prior_loss_grad(&batch, &mut SeedRng::new(grad_seed))
            .expect("finite")
            .0;
        state.prior.live.params[i] += FD_H;
        worst = worst.max(fd_rel_err(grad[i], plus, minus));
    }
    worst
}

fn small_adapt(seed: u64, variant: AdaptVariant) -> (crate::adapt::AdaptState, Vec<Arc<TrajectoryChunk>>) {
    let rng = SeedRng::new(seed);
    let cfg = LearnerConfig {
        k: 4,
        hidden: vec![6],
        d: 4,
        ..LearnerConfig::default()
    };
    let learner = LearnerState::new(cfg, vec![1], 2, 2, 2, &mut rng.child_named("pretrain"));
    let bundle = PretrainedBundle::load_for_variant(&learner.to_checkpoint(), variant)
        .expect("fresh checkpoint");
    let protocol = AdaptProtocol {
        variant,
        k: 4,
        gamma: 0.9,
        alpha: 1.0,
        finetune_after: Some(0),
        fresh_hidden: vec![6],
        fresh_d: 4,
        ..AdaptProtocol::default()
    };
    let dims = EnvDims {
        obs_dim: 2,
        prior_dim: 2,
        action_dim: 2,
    };
    let mut state =
        init_adaptation(Some(&bundle), 9, &protocol, dims, &mut rng.child_named("adapt"))
            .expect("compatible");
    let mut trng = rng.child_named("targets");
    for w in state.w.target.w.iter_mut() {
        *w += trng.normal::<f64>();
    }
    let t = 4;
    let mut erng = rng.child_named("episodes");
    let ep = Episode {
        task_id: 9,
        obs: (0..=t)
            .map(|_| vec![erng.uniform(-1.0, 1.0), erng.uniform(-1.0, 1.0)])
            .collect(),
        actions: (0..t)
            .map(|_| vec![erng.uniform(-1.0, 1.0), erng.uniform(-1.0, 1.0)])
            .collect(),
        rewards: (0..t).map(|_| erng.uniform(-1.0, 1.0)).collect(),
        terminals: vec![false; t],
    };
    let batch = chunk_episode(&ep, t, 1).into_iter().map(Arc::new).collect();
    (state, batch)
}

/// Max FD relative error of the adaptation TD(0) gradient (head plus
/// finetuned features) on one random instance.
pub fn adapt_fd_max_rel_error(seed: u64) -> f64 {
    let (mut state, batch) = small_adapt(seed, AdaptVariant::SharedQIw);
    let grad_seed = seed ^ 0x2b7e;
    let (_, gw, gf) = state
        .adapt_loss_grad(&batch, &mut SeedRng::new(grad_seed))
        .expect("finite");
    let gf = gf.expect("finetuning enabled");
    let mut worst: f64 = 0.0;
    for i in 0..gw.len() {
        state.w.live.w[i] += FD_H;
        let plus = state
            .adapt_loss_grad(&batch, &mut SeedRng::new(grad_seed))
            .expect("finite")
            .0;
        state.w.live.w[i] -= 2.0 * FD_H;
        let minus = state
            .adapt_loss_grad(&batch, &mut SeedRng::new(grad_seed))
            .expect("finite")
            .0;
        state.w.live.w[i] += FD_H;
        worst = worst.max(fd_rel_err(gw[i], plus, minus));
    }
    for i in 0..gf.len() {
        state.features.live.params[i] += FD_H;
        let plus = state
            .adapt_loss_grad(&batch, &mut SeedRng::new(grad_seed))
            .expect("finite")
            .0;
        state.features.live.params[i] -= 2.0 * FD_H;
        let minus = state
            .adapt_loss_grad(&batch, &mut SeedRng::new(grad_seed))
            .expect("finite")
            .0;
        state.features.live.params[i] += FD_H;
        worst = worst.max(fd_rel_err(gf[i], plus, minus));
    }
    worst
}

/// Max FD relative error of the parametric baseline's weighted-MLE policy
/// gradient on one random instance.
pub fn parametric_fd_max_rel_error(seed: u64) -> f64 {
    let (mut state, batch) = small_adapt(seed, AdaptVariant::ParametricBaseline);
    let grad_seed = seed ^ 0x7ac1;
    let (_, grad) = state
        .parametric_loss_grad(&batch, &mut SeedRng::new(grad_seed))
        .expect("finite");
    let mut worst: f64 = 0.0;
    for i in 0..grad.len() {
        state.policy.as_mut().expect("baseline").params[i] += FD_H;
        let plus = state
            .parametric_loss_grad(&batch, &mut SeedRng::new(grad_seed))
            .expect("finite")
            .0;
        state.policy.as_mut().expect("baseline").params[i] -= 2.0 * FD_H;
        let minus = state
            .parametric_loss_grad(&batch, &mut SeedRng::new(grad_seed))
            .expect("finite")
            .0;
        state.policy.as_mut().expect("baseline").params[i] += FD_H;
        worst = worst.max(fd_rel_err(grad[i], plus, minus));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass_on_the_real_implementation() {
        let results = run_checks();
        for r in &results {
            assert!(r.passed, "{} failed: {}", r.name, r.detail);
        }
        assert_eq!(results.len(), 17);
    }

    #[test]
    fn sign_flipped_tilt_fails_shift_invariance() {
        let results = run_checks_with_tilt(sign_flipped_tilt);
        let shift = results
            .iter()
            .find(|r| r.name == "tilt_shift_invariance")
            .expect("check present");
        assert!(!shift.passed, "mutation must be caught: {}", shift.detail);
    }

    #[test]
    fn check_outcomes_have_unique_names() {
        let results = run_checks();
        let mut names: Vec<_> = results.iter().map(|r| r.name).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), results.len());
    }
}
