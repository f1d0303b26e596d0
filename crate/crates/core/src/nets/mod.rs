//! Self-contained differentiable function approximation.
//!
//! One topology covers every network role here: a fully connected ELU MLP
//! with a linear output layer, flat parameter storage, and exact reverse-mode
//! gradients of ⟨upstream, forward(x)⟩. On top of it sit the three roles the
//! learner needs — behavior prior (mean + softplus stddev), shared critic
//! features ψ with linear task heads w, and a goal-embedding head — plus an
//! input normalizer with freeze-after-warmup statistics, an adaptive
//! first-order optimizer, and delayed target copies.

pub mod checkpoint;
mod optim;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use optim::Adam;

use crate::math::DiagonalGaussian;
use crate::real::SIGMA_MIN;
use crate::rng::SeedRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("{context}: expected input of length {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{context}: non-finite value")]
    NonFinite { context: &'static str },
    #[error("params length {got} does not match spec count {expected}")]
    ParamCount { expected: usize, got: usize },
    #[error("prior network output dim {0} is not twice an action dim")]
    OddPriorOutput(usize),
    #[error("non-finite gradient in {context}")]
    NonFiniteGrad { context: String },
}

pub type NetResult<T> = Result<T, NetError>;

/// Immutable architecture description. Hidden layers use ELU; the output
/// layer is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub normalize_input: bool,
    /// Extra multiplier on the output layer's init (0.01 for critics so Q
    /// starts near zero).
    #[serde(default = "one")]
    pub final_init_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl NetworkSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Self {
        assert!(input_dim >= 1 && output_dim >= 1);
        assert!(hidden.iter().all(|&h| h >= 1), "hidden widths must be >= 1");
        Self {
            input_dim,
            hidden,
            output_dim,
            normalize_input: false,
            final_init_scale: 1.0,
        }
    }

    pub fn with_normalization(mut self) -> Self {
        self.normalize_input = true;
        self
    }

    pub fn with_final_init_scale(mut self, scale: f64) -> Self {
        self.final_init_scale = scale;
        self
    }

    /// (fan_in, fan_out) of each linear layer, input to output.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims()
            .iter()
            .map(|&(i, o)| i * o + o)
            .sum()
    }
}

fn elu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        z.exp() - 1.0
    }
}

fn elu_deriv(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        z.exp()
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Online input statistics: Welford accumulation during warm-up, then frozen
/// for the rest of the run so regression targets stay stationary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    dim: usize,
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    frozen: bool,
}

impl Normalizer {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            frozen: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Accumulate one observation; silently ignored once frozen.
    pub fn observe(&mut self, x: &[f64]) {
        assert_eq!(x.len(), self.dim);
        if self.frozen {
            return;
        }
        self.count += 1;
        let n = self.count as f64;
        for i in 0..self.dim {
            let delta = x[i] - self.mean[i];
            self.mean[i] += delta / n;
            self.m2[i] += delta * (x[i] - self.mean[i]);
        }
    }

    fn stddev(&self, i: usize) -> f64 {
        if self.count < 2 {
            1.0
        } else {
            (self.m2[i] / self.count as f64).sqrt().max(1e-6)
        }
    }

    /// `(x − μ̂)/σ̂`, identity until two observations exist.
    pub fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        assert_eq!(x.len(), self.dim);
        out.clear();
        if self.count < 2 {
            out.extend_from_slice(x);
            return;
        }
        for i in 0..self.dim {
            out.push((x[i] - self.mean[i]) / self.stddev(i));
        }
    }

    pub fn mean_slice(&self) -> &[f64] {
        &self.mean
    }
}

/// Reusable forward/backward workspace; one per thread of use.
#[derive(Debug, Default, Clone)]
pub struct Scratch {
    xnorm: Vec<f64>,
    acts: Vec<Vec<f64>>,
    pres: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

/// MLP with flat parameter storage. Parameters are laid out layer by layer,
/// row-major weights then biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
    pub params: Vec<f64>,
    pub normalizer: Option<Normalizer>,
}

impl Network {
    /// Fan-in-scaled uniform init; biases zero.
    pub fn init(spec: NetworkSpec, rng: &mut SeedRng) -> Self {
        let dims = spec.layer_dims();
        let n_layers = dims.len();
        let mut params = Vec::with_capacity(spec.param_count());
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let mut bound = 1.0 / (fan_in as f64).sqrt();
            if l == n_layers - 1 {
                bound *= spec.final_init_scale;
            }
            for _ in 0..fan_in * fan_out {
                params.push(rng.uniform(-bound, bound));
            }
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        let normalizer = spec.normalize_input.then(|| Normalizer::new(spec.input_dim));
        Self {
            spec,
            params,
            normalizer,
        }
    }

    pub fn from_params(spec: NetworkSpec, params: Vec<f64>) -> NetResult<Self> {
        if params.len() != spec.param_count() {
            return Err(NetError::ParamCount {
                expected: spec.param_count(),
                got: params.len(),
            });
        }
        let normalizer = spec.normalize_input.then(|| Normalizer::new(spec.input_dim));
        Ok(Self {
            spec,
            params,
            normalizer,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Feed one raw input into the warm-up statistics.
    pub fn observe_input(&mut self, x: &[f64]) {
        if let Some(n) = self.normalizer.as_mut() {
            n.observe(x);
        }
    }

    fn check_input(&self, x: &[f64], context: &'static str) -> NetResult<()> {
        if x.len() != self.spec.input_dim {
            return Err(NetError::DimensionMismatch {
                context,
                expected: self.spec.input_dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(NetError::NonFinite { context });
        }
        Ok(())
    }

    /// Deterministic forward pass; output slice lives in `scratch`.
    pub fn forward<'s>(&self, x: &[f64], scratch: &'s mut Scratch) -> NetResult<&'s [f64]> {
        self.check_input(x, "forward")?;
        let dims = self.spec.layer_dims();
        let n_layers = dims.len();
        scratch.acts.resize(n_layers, Vec::new());
        scratch.pres.resize(n_layers, Vec::new());

        match &self.normalizer {
            Some(n) => n.apply(x, &mut scratch.xnorm),
            None => {
                scratch.xnorm.clear();
                scratch.xnorm.extend_from_slice(x);
            }
        }
        scratch.acts[0].clear();
        scratch.acts[0].extend_from_slice(&scratch.xnorm);

        let mut offset = 0;
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let (weights, rest) = self.params[offset..].split_at(fan_in * fan_out);
            let biases = &rest[..fan_out];
            let (in_slot, out_slot) = {
                // acts[l] feeds layer l; pres[l] receives it.
                let (lo, hi) = scratch.acts.split_at_mut(l + 1);
                (&lo[l], hi)
            };
            let pre = &mut scratch.pres[l];
            pre.clear();
            for j in 0..fan_out {
                let row = &weights[j * fan_in..(j + 1) * fan_in];
                let mut z = biases[j];
                for i in 0..fan_in {
                    z += row[i] * in_slot[i];
                }
                pre.push(z);
            }
            if l + 1 < n_layers {
                let act = &mut out_slot[0];
                act.clear();
                act.extend(pre.iter().map(|&z| elu(z)));
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(&scratch.pres[n_layers - 1])
    }

    /// Adds the exact reverse-mode gradient of `⟨upstream, forward(x)⟩` with
    /// respect to the parameters into `grad`.
    pub fn accumulate_gradient(
        &self,
        x: &[f64],
        upstream: &[f64],
        scratch: &mut Scratch,
        grad: &mut [f64],
    ) -> NetResult<()> {
        if upstream.len() != self.spec.output_dim {
            return Err(NetError::DimensionMismatch {
                context: "gradient upstream",
                expected: self.spec.output_dim,
                got: upstream.len(),
            });
        }
        assert_eq!(grad.len(), self.param_count(), "gradient buffer length");
        self.forward(x, scratch)?;

        let dims = self.spec.layer_dims();
        let n_layers = dims.len();
        let layer_offset = |l: usize| -> usize {
            dims[..l].iter().map(|&(i, o)| i * o + o).sum()
        };

        scratch.delta.clear();
        scratch.delta.extend_from_slice(upstream);
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = dims[l];
            let offset = layer_offset(l);
            let weights = &self.params[offset..offset + fan_in * fan_out];
            let input = &scratch.acts[l];
            {
                let (gw, gb) = grad[offset..offset + fan_in * fan_out + fan_out]
                    .split_at_mut(fan_in * fan_out);
                for j in 0..fan_out {
                    let dj = scratch.delta[j];
                    if dj == 0.0 {
                        continue;
                    }
                    let row = &mut gw[j * fan_in..(j + 1) * fan_in];
                    for i in 0..fan_in {
                        row[i] += dj * input[i];
                    }
                    gb[j] += dj;
                }
            }
            if l > 0 {
                let pre_below = &scratch.pres[l - 1];
                scratch.delta_prev.clear();
                scratch.delta_prev.resize(fan_in, 0.0);
                for j in 0..fan_out {
                    let dj = scratch.delta[j];
                    if dj == 0.0 {
                        continue;
                    }
                    let row = &weights[j * fan_in..(j + 1) * fan_in];
                    for i in 0..fan_in {
                        scratch.delta_prev[i] += row[i] * dj;
                    }
                }
                for i in 0..fan_in {
                    scratch.delta_prev[i] *= elu_deriv(pre_below[i]);
                }
                std::mem::swap(&mut scratch.delta, &mut scratch.delta_prev);
            }
        }
        Ok(())
    }
}

/// Per-task linear value head: Q_i(s,a) = ψ(s,a)ᵀ w_i.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticHead {
    pub w: Vec<f64>,
}

impl CriticHead {
    pub fn zeros(d: usize) -> Self {
        Self { w: vec![0.0; d] }
    }

    /// Transfer init w ~ N(0, I_d/d), so E‖w‖² = 1 regardless of d.
    pub fn spherical_init(d: usize, rng: &mut SeedRng) -> Self {
        let scale = 1.0 / (d as f64).sqrt();
        Self {
            w: (0..d).map(|_| scale * rng.normal::<f64>()).collect(),
        }
    }

    pub fn d(&self) -> usize {
        self.w.len()
    }
}

/// `ψ(s,a)ᵀw`. Input is the concatenated state-action vector.
pub fn q_value(
    features: &Network,
    head: &CriticHead,
    state_action: &[f64],
    scratch: &mut Scratch,
) -> NetResult<f64> {
    if features.spec.output_dim != head.d() {
        return Err(NetError::DimensionMismatch {
            context: "q_value head",
            expected: features.spec.output_dim,
            got: head.d(),
        });
    }
    let psi = features.forward(state_action, scratch)?;
    Ok(psi.iter().zip(&head.w).map(|(p, w)| p * w).sum())
}

/// Embeds a structured goal descriptor into a critic head, replacing the
/// per-task table for goal-conditioned training.
pub fn goal_head(embed: &Network, goal: &[f64], scratch: &mut Scratch) -> NetResult<CriticHead> {
    let w = embed.forward(goal, scratch)?.to_vec();
    Ok(CriticHead { w })
}

/// Prior network output split into distribution parameters. The raw second
/// half goes through softplus and the σ floor, so the spec's output_dim is
/// always 2 × action_dim.
#[derive(Debug, Clone)]
pub struct PriorOutput {
    pub mean: Vec<f64>,
    pub stddev: Vec<f64>,
    raw_std: Vec<f64>,
}

impl PriorOutput {
    pub fn action_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn dist(&self) -> DiagonalGaussian<f64> {
        DiagonalGaussian::new(self.mean.clone(), self.stddev.clone())
            .expect("softplus floor keeps stddev valid")
    }

    /// Output-cotangent of `weight · log N(a; μ, σ)` for
    /// [`Network::accumulate_gradient`] on the prior network.
    pub fn log_prob_upstream(&self, action: &[f64], weight: f64) -> Vec<f64> {
        assert_eq!(action.len(), self.action_dim());
        let ad = self.action_dim();
        let mut up = vec![0.0; 2 * ad];
        for i in 0..ad {
            let sigma = self.stddev[i];
            let z = (action[i] - self.mean[i]) / sigma;
            // ∂logp/∂μ and ∂logp/∂σ chained through σ = softplus(raw) + σ_min.
            up[i] = weight * z / sigma;
            let dlogp_dsigma = (z * z - 1.0) / sigma;
            up[ad + i] = weight * dlogp_dsigma * sigmoid(self.raw_std[i]);
        }
        up
    }

    pub fn log_prob(&self, action: &[f64]) -> f64 {
        self.dist().log_prob(action).expect("dims match")
    }
}

pub fn prior_output(prior: &Network, obs: &[f64], scratch: &mut Scratch) -> NetResult<PriorOutput> {
    let out = prior.forward(obs, scratch)?;
    if out.len() % 2 != 0 {
        return Err(NetError::OddPriorOutput(out.len()));
    }
    let ad = out.len() / 2;
    let mean = out[..ad].to_vec();
    let raw_std = out[ad..].to_vec();
    let stddev: Vec<f64> = raw_std.iter().map(|&r| softplus(r) + SIGMA_MIN).collect();
    Ok(PriorOutput {
        mean,
        stddev,
        raw_std,
    })
}

pub fn prior_distribution(
    prior: &Network,
    obs: &[f64],
    scratch: &mut Scratch,
) -> NetResult<DiagonalGaussian<f64>> {
    Ok(prior_output(prior, obs, scratch)?.dist())
}

/// Live/target parameter pair with a fixed sync period.
#[derive(Debug, Clone)]
pub struct TargetPair<T: Clone> {
    pub live: T,
    pub target: T,
    pub period: usize,
    pub steps_since_sync: usize,
    pub early_sync_warnings: u64,
}

impl<T: Clone> TargetPair<T> {
    pub fn new(value: T, period: usize) -> Self {
        assert!(period >= 1);
        Self {
            target: value.clone(),
            live: value,
            period,
            steps_since_sync: 0,
            early_sync_warnings: 0,
        }
    }

    /// Advance one learner step; copies live → target when the period
    /// elapses. Returns whether a sync happened.
    pub fn tick(&mut self) -> bool {
        self.steps_since_sync += 1;
        if self.steps_since_sync >= self.period {
            self.target = self.live.clone();
            self.steps_since_sync = 0;
            true
        } else {
            false
        }
    }

    /// Explicit sync; a call before the period elapses is a counted no-op.
    pub fn sync_target(&mut self) -> bool {
        if self.steps_since_sync < self.period {
            self.early_sync_warnings += 1;
            return false;
        }
        self.target = self.live.clone();
        self.steps_since_sync = 0;
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, abs_tol: f64, rel_tol: f64) {
        let diff = (a - b).abs();
        let scale = a.abs().max(b.abs());
        assert!(
            diff <= abs_tol + rel_tol * scale,
            "{a} vs {b}: diff {diff}"
        );
    }

    #[test]
    fn elu_definition() {
        assert_eq!(elu(1.0), 1.0);
        assert!((elu(-50.0) - (-1.0)).abs() < 1e-15);
        assert!((elu(-1.0) - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
        assert_eq!(elu_deriv(2.0), 1.0);
        assert!((elu_deriv(-1.0) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn softplus_floor_and_zero() {
        assert!(softplus(-700.0) < 1e-12);
        assert!((softplus(0.0) - 2.0f64.ln()).abs() < 1e-15);
        assert!((softplus(30.0) - 30.0).abs() < 1e-9);
    }

    #[test]
    fn pure_linear_identity() {
        // No hidden layers: y = Wx + b with W = I, b = 0.
        let spec = NetworkSpec::new(3, vec![], 3);
        let mut params = vec![0.0; spec.param_count()];
        for i in 0..3 {
            params[i * 3 + i] = 1.0;
        }
        let net = Network::from_params(spec, params).unwrap();
        let mut s = Scratch::default();
        let x = [0.3, -1.0, 2.5];
        let y = net.forward(&x, &mut s).unwrap();
        assert_eq!(y, &x);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let spec = NetworkSpec::new(2, vec![4], 1);
        let net = Network::init(spec, &mut SeedRng::new(0));
        let mut s = Scratch::default();
        assert!(matches!(
            net.forward(&[1.0], &mut s),
            Err(NetError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            net.forward(&[1.0, f64::NAN], &mut s),
            Err(NetError::NonFinite { .. })
        ));
    }

    #[test]
    fn normalizer_property() {
        // After fitting on a batch, the normalized batch has mean 0 and
        // variance 1 per feature.
        let mut rng = SeedRng::new(3);
        let n = 500;
        let data: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![5.0 + 2.0 * rng.normal::<f64>(), -1.0 + 0.1 * rng.normal::<f64>()])
            .collect();
        let mut norm = Normalizer::new(2);
        for x in &data {
            norm.observe(x);
        }
        norm.freeze();
        let mut out = Vec::new();
        let mut mean = [0.0; 2];
        let mut var = [0.0; 2];
        for x in &data {
            norm.apply(x, &mut out);
            for i in 0..2 {
                mean[i] += out[i] / n as f64;
            }
        }
        for x in &data {
            norm.apply(x, &mut out);
            for i in 0..2 {
                var[i] += (out[i] - mean[i]).powi(2) / n as f64;
            }
        }
        for i in 0..2 {
            assert!(mean[i].abs() < 1e-6, "mean {}", mean[i]);
            assert!((var[i] - 1.0).abs() < 1e-6, "var {}", var[i]);
        }
    }

    #[test]
    fn normalizer_frozen_ignores_updates() {
        let mut norm = Normalizer::new(1);
        norm.observe(&[1.0]);
        norm.observe(&[3.0]);
        norm.freeze();
        let before = norm.clone();
        norm.observe(&[1000.0]);
        assert_eq!(norm, before);
    }

    #[test]
    fn single_linear_layer_gradient_is_outer_product() {
        let spec = NetworkSpec::new(2, vec![], 3);
        let net = Network::init(spec, &mut SeedRng::new(1));
        let mut s = Scratch::default();
        let x = [0.7, -0.2];
        let u = [1.0, -2.0, 0.5];
        let mut grad = vec![0.0; net.param_count()];
        net.accumulate_gradient(&x, &u, &mut s, &mut grad).unwrap();
        for j in 0..3 {
            for i in 0..2 {
                assert_close(grad[j * 2 + i], u[j] * x[i], 1e-12, 0.0);
            }
            assert_close(grad[6 + j], u[j], 1e-12, 0.0);
        }
    }

    #[test]
    fn zero_upstream_zero_gradient() {
        let spec = NetworkSpec::new(3, vec![8, 8], 2);
        let net = Network::init(spec, &mut SeedRng::new(2));
        let mut s = Scratch::default();
        let mut grad = vec![0.0; net.param_count()];
        net.accumulate_gradient(&[0.1, 0.2, 0.3], &[0.0, 0.0], &mut s, &mut grad)
            .unwrap();
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    fn finite_diff_check(spec: NetworkSpec, seed: u64) {
        let mut rng = SeedRng::new(seed);
        let mut net = Network::init(spec.clone(), &mut rng);
        let x: Vec<f64> = (0..spec.input_dim).map(|_| rng.normal::<f64>()).collect();
        let u: Vec<f64> = (0..spec.output_dim).map(|_| rng.normal::<f64>()).collect();
        let mut s = Scratch::default();
        let mut grad = vec![0.0; net.param_count()];
        net.accumulate_gradient(&x, &u, &mut s, &mut grad).unwrap();

        let h = 1e-5;
        let mut checked = 0usize;
        let stride = (net.param_count() / 40).max(1);
        for p in (0..net.param_count()).step_by(stride) {
            let orig = net.params[p];
            net.params[p] = orig + h;
            let fp: f64 = net
                .forward(&x, &mut s)
                .unwrap()
                .iter()
                .zip(&u)
                .map(|(y, ui)| y * ui)
                .sum();
            net.params[p] = orig - h;
            let fm: f64 = net
                .forward(&x, &mut s)
                .unwrap()
                .iter()
                .zip(&u)
                .map(|(y, ui)| y * ui)
                .sum();
            net.params[p] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            assert_close(grad[p], numeric, 1e-7, 1e-4);
            checked += 1;
        }
        assert!(checked >= 20);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        finite_diff_check(NetworkSpec::new(4, vec![16, 16], 3), 7);
        finite_diff_check(NetworkSpec::new(2, vec![5], 1), 8);
        finite_diff_check(NetworkSpec::new(6, vec![], 4), 9);
    }

    #[test]
    fn gradient_with_normalization_matches_finite_differences() {
        let spec = NetworkSpec::new(3, vec![8], 2).with_normalization();
        let mut rng = SeedRng::new(12);
        let mut net = Network::init(spec, &mut rng);
        for _ in 0..50 {
            net.observe_input(&[rng.normal::<f64>(), 5.0 + rng.normal::<f64>(), 0.0]);
        }
        net.normalizer.as_mut().unwrap().freeze();
        let x = [0.5, 4.0, 0.0];
        let u = [1.0, -1.0];
        let mut s = Scratch::default();
        let mut grad = vec![0.0; net.param_count()];
        net.accumulate_gradient(&x, &u, &mut s, &mut grad).unwrap();
        let h = 1e-5;
        for p in (0..net.param_count()).step_by(7) {
            let orig = net.params[p];
            net.params[p] = orig + h;
            let fp: f64 = net.forward(&x, &mut s).unwrap().iter().zip(&u).map(|(y, ui)| y * ui).sum();
            net.params[p] = orig - h;
            let fm: f64 = net.forward(&x, &mut s).unwrap().iter().zip(&u).map(|(y, ui)| y * ui).sum();
            net.params[p] = orig;
            assert_close(grad[p], (fp - fm) / (2.0 * h), 1e-7, 1e-4);
        }
    }

    #[test]
    fn q_value_zero_head_and_unit_head() {
        let spec = NetworkSpec::new(3, vec![8], 4);
        let net = Network::init(spec, &mut SeedRng::new(4));
        let mut s = Scratch::default();
        let sa = [0.1, -0.5, 0.9];
        assert_eq!(q_value(&net, &CriticHead::zeros(4), &sa, &mut s).unwrap(), 0.0);
        let mut e1 = CriticHead::zeros(4);
        e1.w[1] = 1.0;
        let q = q_value(&net, &e1, &sa, &mut s).unwrap();
        let psi1 = net.forward(&sa, &mut s).unwrap()[1];
        assert_eq!(q, psi1);
    }

    #[test]
    fn q_value_bilinear_in_head() {
        let spec = NetworkSpec::new(2, vec![6], 5);
        let net = Network::init(spec, &mut SeedRng::new(5));
        let mut rng = SeedRng::new(6);
        let mut s = Scratch::default();
        let w1 = CriticHead::spherical_init(5, &mut rng);
        let w2 = CriticHead::spherical_init(5, &mut rng);
        let (a, b) = (1.7, -0.3);
        let combo = CriticHead {
            w: w1.w.iter().zip(&w2.w).map(|(x, y)| a * x + b * y).collect(),
        };
        let sa = [0.4, 0.6];
        let lhs = q_value(&net, &combo, &sa, &mut s).unwrap();
        let rhs = a * q_value(&net, &w1, &sa, &mut s).unwrap()
            + b * q_value(&net, &w2, &sa, &mut s).unwrap();
        assert_close(lhs, rhs, 1e-10, 0.0);
    }

    #[test]
    fn spherical_init_unit_norm_in_expectation() {
        let mut rng = SeedRng::new(7);
        let d = 64;
        let n = 10_000;
        let mean_sq: f64 = (0..n)
            .map(|_| {
                let h = CriticHead::spherical_init(d, &mut rng);
                h.w.iter().map(|w| w * w).sum::<f64>()
            })
            .sum::<f64>()
            / n as f64;
        assert!((mean_sq - 1.0).abs() < 0.05, "mean ‖w‖² = {mean_sq}");
    }

    #[test]
    fn goal_head_deterministic_and_bias_only() {
        let spec = NetworkSpec::new(2, vec![], 3);
        let mut net = Network::init(spec, &mut SeedRng::new(8));
        // Zero the weights: head should equal the bias vector for any goal.
        for p in net.params[..6].iter_mut() {
            *p = 0.0;
        }
        net.params[6..9].copy_from_slice(&[0.5, -1.0, 2.0]);
        let mut s = Scratch::default();
        let h1 = goal_head(&net, &[3.0, 4.0], &mut s).unwrap();
        let h2 = goal_head(&net, &[-9.0, 0.1], &mut s).unwrap();
        assert_eq!(h1.w, vec![0.5, -1.0, 2.0]);
        assert_eq!(h1.w, h2.w);
    }

    #[test]
    fn prior_distribution_softplus_floor() {
        let spec = NetworkSpec::new(1, vec![], 4);
        // Outputs [μ1, μ2, raw1, raw2] = [b] with zero weights.
        let mut params = vec![0.0; spec.param_count()];
        params[4..8].copy_from_slice(&[0.3, -0.7, 0.0, -200.0]);
        let net = Network::from_params(spec, params).unwrap();
        let mut s = Scratch::default();
        let d = prior_distribution(&net, &[0.0], &mut s).unwrap();
        assert_eq!(d.mean(), &[0.3, -0.7]);
        assert_close(d.stddev()[0], 2.0f64.ln() + SIGMA_MIN, 1e-12, 0.0);
        assert_close(d.stddev()[1], SIGMA_MIN, 1e-12, 0.0);
    }

    #[test]
    fn prior_log_prob_upstream_matches_finite_differences() {
        let spec = NetworkSpec::new(3, vec![10], 4);
        let mut rng = SeedRng::new(9);
        let mut net = Network::init(spec, &mut rng);
        let obs = [0.2, -0.4, 1.0];
        let action = [0.5, -0.25];
        let mut s = Scratch::default();
        let out = prior_output(&net, &obs, &mut s).unwrap();
        let up = out.log_prob_upstream(&action, 1.0);
        let mut grad = vec![0.0; net.param_count()];
        net.accumulate_gradient(&obs, &up, &mut s, &mut grad).unwrap();

        let h = 1e-6;
        for p in (0..net.param_count()).step_by(5) {
            let orig = net.params[p];
            net.params[p] = orig + h;
            let lp_p = prior_output(&net, &obs, &mut s).unwrap().log_prob(&action);
            net.params[p] = orig - h;
            let lp_m = prior_output(&net, &obs, &mut s).unwrap().log_prob(&action);
            net.params[p] = orig;
            assert_close(grad[p], (lp_p - lp_m) / (2.0 * h), 1e-6, 1e-4);
        }
    }

    #[test]
    fn target_pair_staleness() {
        let mut pair = TargetPair::new(vec![0.0f64], 3);
        for step in 1..=10 {
            pair.live[0] = step as f64;
            let synced = pair.tick();
            assert_eq!(synced, step % 3 == 0);
            assert!(pair.steps_since_sync < pair.period);
            if synced {
                assert_eq!(pair.target[0], pair.live[0]);
            }
        }
    }

    #[test]
    fn target_pair_period_one_trails_by_one_step() {
        let mut pair = TargetPair::new(0.0f64, 1);
        for step in 1..=5 {
            // Target during the step is the previous step's live value.
            assert_eq!(pair.target, (step - 1) as f64);
            pair.live = step as f64;
            assert!(pair.tick());
        }
    }

    #[test]
    fn early_sync_is_counted_noop() {
        let mut pair = TargetPair::new(1.0f64, 5);
        pair.live = 2.0;
        assert!(!pair.sync_target());
        assert_eq!(pair.target, 1.0);
        assert_eq!(pair.early_sync_warnings, 1);
    }
}
