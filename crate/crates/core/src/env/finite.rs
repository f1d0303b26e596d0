use super::EnvError;
use crate::real::Real;
use crate::rng::SeedRng;

/// Enumerable MDP with a categorical behavior prior; the substrate for all
/// exact-solution oracles. Tables are row-major: `p[s][a][s']`, `r[s][a]`,
/// `prior[s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp<R: Real> {
    n_states: usize,
    n_actions: usize,
    p: Vec<R>,
    r: Vec<R>,
    prior: Vec<R>,
    pub gamma: R,
}

impl<R: Real> FiniteMdp<R> {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        p: Vec<R>,
        r: Vec<R>,
        prior: Vec<R>,
        gamma: R,
    ) -> Result<Self, EnvError> {
        if n_states == 0 || n_actions == 0 {
            return Err(EnvError::InvalidMdp("empty state or action set".into()));
        }
        if p.len() != n_states * n_actions * n_states {
            return Err(EnvError::InvalidMdp("transition tensor shape".into()));
        }
        if r.len() != n_states * n_actions || prior.len() != n_states * n_actions {
            return Err(EnvError::InvalidMdp("reward/prior table shape".into()));
        }
        if !(gamma >= R::zero() && gamma < R::one()) {
            return Err(EnvError::InvalidMdp(format!(
                "discount {} outside [0, 1)",
                gamma.as_f64()
            )));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(EnvError::InvalidMdp("non-finite reward".into()));
        }
        let tol = R::of(1e-12);
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = &p[(s * n_actions + a) * n_states..][..n_states];
                if row.iter().any(|&v| v < R::zero()) {
                    return Err(EnvError::InvalidMdp(format!("negative P[{s}][{a}]")));
                }
                let sum = row.iter().fold(R::zero(), |acc, &v| acc + v);
                if (sum - R::one()).abs() > tol {
                    return Err(EnvError::InvalidMdp(format!(
                        "P[{s}][{a}] sums to {}",
                        sum.as_f64()
                    )));
                }
            }
            let prow = &prior[s * n_actions..][..n_actions];
            let sum = prow.iter().fold(R::zero(), |acc, &v| acc + v);
            if (sum - R::one()).abs() > R::of(1e-9) || prow.iter().any(|&v| v < R::zero()) {
                return Err(EnvError::InvalidMdp(format!("prior row {s} not a pmf")));
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            p,
            r,
            prior,
            gamma,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn transition(&self, s: usize, a: usize) -> &[R] {
        &self.p[(s * self.n_actions + a) * self.n_states..][..self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> R {
        self.r[s * self.n_actions + a]
    }

    pub fn prior_row(&self, s: usize) -> &[R] {
        &self.prior[s * self.n_actions..][..self.n_actions]
    }

    /// Exact tables for the oracles: (P, R, prior).
    pub fn enumerate(&self) -> (&[R], &[R], &[R]) {
        (&self.p, &self.r, &self.prior)
    }

    pub fn sample_next(&self, s: usize, a: usize, rng: &mut SeedRng) -> usize {
        rng.categorical(self.transition(s, a))
    }

    /// Five-state corridor: action 0 steps left, action 1 steps right, ends
    /// saturate; the only reward is stepping right out of state 3.
    pub fn chain(gamma: R) -> Self {
        let (ns, na) = (5, 2);
        let mut p = vec![R::zero(); ns * na * ns];
        let mut r = vec![R::zero(); ns * na];
        for s in 0..ns {
            let left = s.saturating_sub(1);
            let right = (s + 1).min(ns - 1);
            p[(s * na) * ns + left] = R::one();
            p[(s * na + 1) * ns + right] = R::one();
        }
        r[3 * na + 1] = R::one();
        let prior = vec![R::of(0.5); ns * na];
        Self::new(ns, na, p, r, prior, gamma).expect("chain tables are valid")
    }

    /// Deterministic 4×4 gridworld, actions up/right/down/left with wall
    /// bounce; any move that lands on the far corner pays 1.
    pub fn grid4x4(gamma: R) -> Self {
        let (ns, na) = (16, 4);
        let mut p = vec![R::zero(); ns * na * ns];
        let mut r = vec![R::zero(); ns * na];
        for s in 0..ns {
            let (row, col) = (s / 4, s % 4);
            for a in 0..na {
                let (nr, nc) = match a {
                    0 => (row.saturating_sub(1), col),
                    1 => (row, (col + 1).min(3)),
                    2 => ((row + 1).min(3), col),
                    _ => (row, col.saturating_sub(1)),
                };
                let next = nr * 4 + nc;
                p[(s * na + a) * ns + next] = R::one();
                if next == 15 {
                    r[s * na + a] = R::one();
                }
            }
        }
        let prior = vec![R::of(0.25); ns * na];
        Self::new(ns, na, p, r, prior, gamma).expect("grid tables are valid")
    }

    /// Seeded dense random MDP with exponential-weight transition rows,
    /// rewards in [−1, 1], and a random (non-uniform) prior.
    pub fn random(n_states: usize, n_actions: usize, gamma: R, seed: u64) -> Self {
        assert!((2..=16).contains(&n_states) && (2..=8).contains(&n_actions));
        let mut rng = SeedRng::new(seed).child_named("finite_mdp");
        let mut p = Vec::with_capacity(n_states * n_actions * n_states);
        for _ in 0..n_states * n_actions {
            let raw: Vec<f64> = (0..n_states).map(|_| -rng.unit().max(1e-12).ln()).collect();
            let total: f64 = raw.iter().sum();
            p.extend(raw.iter().map(|&w| R::of(w / total)));
        }
        let r: Vec<R> = (0..n_states * n_actions)
            .map(|_| R::of(rng.uniform(-1.0, 1.0)))
            .collect();
        let mut prior = Vec::with_capacity(n_states * n_actions);
        for _ in 0..n_states {
            let raw: Vec<f64> = (0..n_actions).map(|_| -rng.unit().max(1e-12).ln()).collect();
            let total: f64 = raw.iter().sum();
            prior.extend(raw.iter().map(|&w| R::of(w / total)));
        }
        Self::new(n_states, n_actions, p, r, prior, gamma).expect("random tables are valid")
    }
}
