//! Multi-task training: non-parametric actors and the shared learner.
//!
//! Actors sample K candidate actions from the behavior prior, weight them by
//! exp(Q_i/α), and draw from the resulting categorical — no parametric
//! per-task policy exists anywhere. The learner regresses each critic toward
//! self-normalized soft targets, distills the weighted samples back into the
//! prior by maximum likelihood, and tunes the temperature by dual descent on
//! the hard KL bound.

mod run;

pub use run::{
    run_training, EpisodeStats, TrainingConfig, TrainingError, TrainingOutcome, TrainingResult,
};

use crate::env::Observation;
use crate::math::{
    sample_actions, snis_kl_estimate, soft_value_estimate, soft_value_literal, tilt_weights,
    MathError, TiltedCategorical,
};
use crate::nets::{
    prior_output, q_value, Adam, Checkpoint, CriticHead, NetError, Network, NetworkSpec, Scratch,
    TargetPair,
};
use crate::real::{ALPHA_MAX, ALPHA_MIN};
use crate::replay::{ReplayBuffer, ReplayError, TrajectoryChunk};
use crate::rng::SeedRng;
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Math(#[from] MathError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("task {0} is not a training task")]
    UnknownTask(usize),
    #[error("critic head for task {task_id} produced a non-finite Q-value")]
    NonFiniteQ { task_id: usize },
    #[error("non-finite {context} loss")]
    NonFiniteLoss { context: &'static str },
}

pub type LearnerResult<T> = Result<T, LearnerError>;

/// Learner hyper-parameters (the per-run episode budget and actor count live
/// in [`TrainingConfig`]).
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct LearnerConfig {
    /// Prior samples per state for acting and for every estimator.
    pub k: usize,
    pub gamma: f64,
    /// Hard bound on the mean sample KL; the dual variable is α.
    pub epsilon: f64,
    pub init_alpha: f64,
    /// Target-network sync period T, in learner steps.
    pub target_period: usize,
    pub lr_critic: f64,
    pub lr_prior: f64,
    pub lr_alpha: f64,
    /// Shared feature dimension d.
    pub d: usize,
    pub hidden: Vec<usize>,
    /// Chunks per learner step.
    pub batch_chunks: usize,
    /// Observations consumed before input statistics freeze.
    pub normalizer_warmup: u64,
    /// Raw-stddev output bias at init; softplus of it sets the initial
    /// exploration stddev (ln(e−1) ≈ 0.541 gives σ ≈ 1).
    pub prior_std_bias: f64,
    /// Evaluate the mixed pmf/density reading of the bootstrap bracket
    /// instead of the self-normalized one. Diagnostic only.
    pub literal_soft_value: bool,
    /// Clamp bootstrapped critic targets to known return bounds. A correct
    /// target is never moved, but runaway bootstrap inflation is cut off.
    pub value_clip: Option<(f64, f64)>,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            k: 20,
            gamma: 0.99,
            epsilon: 0.5,
            init_alpha: 1.0,
            target_period: 100,
            lr_critic: 5e-4,
            lr_prior: 5e-4,
            lr_alpha: 1e-3,
            d: 64,
            hidden: vec![64, 64],
            batch_chunks: 32,
            normalizer_warmup: 5000,
            prior_std_bias: 0.5413248546129181,
            literal_soft_value: false,
            value_clip: None,
        }
    }
}

/// Everything the learner owns: live/target nets, per-task heads, the
/// temperature, and optimizer state.
#[derive(Debug)]
pub struct LearnerState {
    pub cfg: LearnerConfig,
    pub task_ids: Vec<usize>,
    pub prior: TargetPair<Network>,
    pub features: TargetPair<Network>,
    pub heads: Vec<TargetPair<CriticHead>>,
    pub log_alpha: f64,
    pub steps: u64,
    version: u64,
    opt_prior: Adam,
    opt_features: Adam,
    opt_heads: Vec<Adam>,
    prior_dim: usize,
    obs_dim: usize,
    action_dim: usize,
    scratch: Scratch,
}

impl LearnerState {
    pub fn new(
        cfg: LearnerConfig,
        task_ids: Vec<usize>,
        obs_dim: usize,
        prior_dim: usize,
        action_dim: usize,
        rng: &mut SeedRng,
    ) -> Self {
        assert!(!task_ids.is_empty());
        assert!(cfg.epsilon > 0.0, "KL bound must be positive");
        assert!(prior_dim <= obs_dim);
        let mut prior_net = Network::init(
            NetworkSpec::new(prior_dim, cfg.hidden.clone(), 2 * action_dim)
                .with_normalization(),
            &mut rng.child_named("prior_init"),
        );
        {
            // Bias the raw-stddev outputs so the initial prior explores.
            let n = prior_net.param_count();
            let biases = &mut prior_net.params[n - 2 * action_dim..];
            for b in biases[action_dim..].iter_mut() {
                *b = cfg.prior_std_bias;
            }
        }
        let features = Network::init(
            NetworkSpec::new(obs_dim + action_dim, cfg.hidden.clone(), cfg.d)
                .with_normalization(),
            &mut rng.child_named("features_init"),
        );
        let mut head_rng = rng.child_named("head_init");
        let heads: Vec<TargetPair<CriticHead>> = task_ids
            .iter()
            .map(|_| {
                let mut h = CriticHead::spherical_init(cfg.d, &mut head_rng);
                for w in h.w.iter_mut() {
                    *w *= 0.01;
                }
                TargetPair::new(h, cfg.target_period)
            })
            .collect();
        let opt_prior = Adam::new(prior_net.param_count(), cfg.lr_prior);
        let opt_features = Adam::new(features.param_count(), cfg.lr_critic);
        let opt_heads = task_ids
            .iter()
            .map(|_| Adam::new(cfg.d, cfg.lr_critic))
            .collect();
        Self {
            task_ids,
            prior: TargetPair::new(prior_net, cfg.target_period),
            features: TargetPair::new(features, cfg.target_period),
            heads,
            log_alpha: cfg.init_alpha.ln(),
            steps: 0,
            version: 0,
            opt_prior,
            opt_features,
            opt_heads,
            prior_dim,
            obs_dim,
            action_dim,
            scratch: Scratch::default(),
            cfg,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp().clamp(ALPHA_MIN, ALPHA_MAX)
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn prior_dim(&self) -> usize {
        self.prior_dim
    }

    pub fn task_index(&self, task_id: usize) -> LearnerResult<usize> {
        self.task_ids
            .iter()
            .position(|&t| t == task_id)
            .ok_or(LearnerError::UnknownTask(task_id))
    }

    /// Feed raw observations into the live input statistics until frozen.
    pub fn observe_for_normalization(&mut self, obs: &[f64], action: &[f64]) {
        self.prior.live.observe_input(&obs[..self.prior_dim]);
        let mut sa = Vec::with_capacity(self.obs_dim + self.action_dim);
        sa.extend_from_slice(obs);
        sa.extend_from_slice(action);
        self.features.live.observe_input(&sa);
    }

    pub fn normalizer_count(&self) -> u64 {
        self.features
            .live
            .normalizer
            .as_ref()
            .map_or(0, |n| n.count())
    }

    pub fn freeze_normalizers(&mut self) {
        for net in [&mut self.prior.live, &mut self.features.live] {
            if let Some(n) = net.normalizer.as_mut() {
                n.freeze();
            }
        }
    }

    /// Copy the live networks onto their targets outside the sync schedule.
    /// Used once after the normalizer freeze, so targets never regress
    /// inputs through stale statistics. Parameters are unchanged at that
    /// point, making this a statistics-only propagation.
    pub fn sync_target_statistics(&mut self) {
        self.prior.target = self.prior.live.clone();
        self.features.target = self.features.live.clone();
    }

    /// Serialize the live parameters and everything needed to rebuild them
    /// (or to adapt from them) into the binary checkpoint container.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "kind": "iwpl_learner",
            "alpha": self.alpha(),
            "epsilon": self.cfg.epsilon,
            "k": self.cfg.k,
            "gamma": self.cfg.gamma,
            "d": self.cfg.d,
            "steps": self.steps,
            "task_ids": self.task_ids,
            "obs_dim": self.obs_dim,
            "prior_dim": self.prior_dim,
            "action_dim": self.action_dim,
            "prior_spec": serde_json::to_value(&self.prior.live.spec).expect("spec is json"),
            "features_spec": serde_json::to_value(&self.features.live.spec).expect("spec is json"),
            "prior_normalizer": serde_json::to_value(&self.prior.live.normalizer)
                .expect("normalizer is json"),
            "features_normalizer": serde_json::to_value(&self.features.live.normalizer)
                .expect("normalizer is json"),
        });
        let mut ckpt = Checkpoint::new(meta);
        ckpt.push("prior_params", self.prior.live.params.clone());
        ckpt.push("features_params", self.features.live.params.clone());
        for (idx, id) in self.task_ids.iter().enumerate() {
            ckpt.push(format!("head_w_{id}"), self.heads[idx].live.w.clone());
        }
        ckpt
    }

    /// Immutable parameter copy for actors; internally consistent by
    /// construction (single-threaded mutation).
    pub fn snapshot(&self) -> ActorSnapshot {
        ActorSnapshot {
            prior: self.prior.live.clone(),
            features: self.features.live.clone(),
            heads: self.heads.iter().map(|h| h.live.clone()).collect(),
            task_ids: self.task_ids.clone(),
            alpha: self.alpha(),
            k: self.cfg.k,
            prior_dim: self.prior_dim,
            version: self.version,
        }
    }
}

/// Frozen view of learner parameters used by actors.
#[derive(Debug, Clone)]
pub struct ActorSnapshot {
    pub prior: Network,
    pub features: Network,
    pub heads: Vec<CriticHead>,
    pub task_ids: Vec<usize>,
    pub alpha: f64,
    pub k: usize,
    pub prior_dim: usize,
    pub version: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActDiagnostics {
    pub snis_kl: f64,
    pub soft_value: f64,
    pub q_mean: f64,
    pub q_max: f64,
    pub alpha: f64,
}

impl ActorSnapshot {
    fn head_for(&self, task_id: usize) -> LearnerResult<&CriticHead> {
        let idx = self
            .task_ids
            .iter()
            .position(|&t| t == task_id)
            .ok_or(LearnerError::UnknownTask(task_id))?;
        Ok(&self.heads[idx])
    }

    /// Draw one action from the tilted categorical over K prior samples.
    pub fn act(
        &self,
        obs: &Observation,
        task_id: usize,
        rng: &mut SeedRng,
        scratch: &mut Scratch,
    ) -> LearnerResult<(Vec<f64>, ActDiagnostics)> {
        let head = self.head_for(task_id)?;
        let dist = prior_output(&self.prior, &obs.prior_view, scratch)?.dist();
        let actions = sample_actions(&dist, self.k, rng);
        let mut sa = obs.full.clone();
        let obs_len = sa.len();
        let mut q = Vec::with_capacity(self.k);
        for a in &actions {
            sa.truncate(obs_len);
            sa.extend_from_slice(a);
            let qa = q_value(&self.features, head, &sa, scratch)?;
            if !qa.is_finite() {
                return Err(LearnerError::NonFiniteQ { task_id });
            }
            q.push(qa);
        }
        let sv = soft_value_estimate(&q, self.alpha)?;
        let q_mean = q.iter().sum::<f64>() / q.len() as f64;
        let q_max = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let tc = TiltedCategorical::from_q_values(actions, &q, self.alpha)?;
        let diagnostics = ActDiagnostics {
            snis_kl: tc.snis_kl(),
            soft_value: sv.value,
            q_mean,
            q_max,
            alpha: self.alpha,
        };
        let action = tc.sample(rng).to_vec();
        Ok((action, diagnostics))
    }
}

/// Per-step targets for one chunk: `None` marks padding. Terminal steps use
/// the raw reward; truncations bootstrap like ordinary steps.
pub fn critic_target(
    chunk: &TrajectoryChunk,
    prior_target: &Network,
    features_target: &Network,
    head_target: &CriticHead,
    alpha: f64,
    k: usize,
    gamma: f64,
    literal: bool,
    rng: &mut SeedRng,
    scratch: &mut Scratch,
) -> LearnerResult<Vec<Option<f64>>> {
    let m = chunk.m();
    let mut targets = Vec::with_capacity(m);
    let mut sa = Vec::new();
    for j in 0..m {
        if !chunk.mask[j] {
            targets.push(None);
            continue;
        }
        let r = chunk.rewards[j];
        if chunk.terminals[j] || gamma == 0.0 {
            targets.push(Some(r));
            continue;
        }
        let next = &chunk.obs[j + 1];
        let out = prior_output(prior_target, &next[..prior_target.spec.input_dim], scratch)?;
        let dist = out.dist();
        let actions = sample_actions(&dist, k, rng);
        let mut q = Vec::with_capacity(k);
        for a in &actions {
            sa.clear();
            sa.extend_from_slice(next);
            sa.extend_from_slice(a);
            let qa = q_value(features_target, head_target, &sa, scratch)?;
            if !qa.is_finite() {
                return Err(LearnerError::NonFiniteQ {
                    task_id: chunk.task_id,
                });
            }
            q.push(qa);
        }
        let value = if literal {
            let log_probs: Vec<f64> = actions.iter().map(|a| out.log_prob(a)).collect();
            soft_value_literal(&q, &log_probs, alpha)?
        } else {
            soft_value_estimate(&q, alpha)?.value
        };
        targets.push(Some(r + gamma * value));
    }
    Ok(targets)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub critic_loss: f64,
    pub prior_loss: f64,
    pub alpha: f64,
    pub mean_snis_kl: f64,
    pub synced_targets: bool,
}

impl StepMetrics {
    pub fn scalars(&self) -> BTreeMap<String, f64> {
        let mut map = BTreeMap::new();
        map.insert("critic_loss".into(), self.critic_loss);
        map.insert("prior_loss".into(), self.prior_loss);
        map.insert("alpha".into(), self.alpha);
        map.insert("snis_kl".into(), self.mean_snis_kl);
        map.insert(
            "target_sync".into(),
            if self.synced_targets { 1.0 } else { 0.0 },
        );
        map
    }
}

impl LearnerState {
    /// Bellman-residual loss and its gradient; no optimizer step. Targets
    /// come from the target copies and are constants to this gradient, so a
    /// fixed `rng` seed re-derives identical targets regardless of live
    /// parameters — which is what makes finite-difference checks valid.
    pub fn critic_loss_grad(
        &mut self,
        batch: &[Arc<TrajectoryChunk>],
        rng: &mut SeedRng,
    ) -> LearnerResult<(f64, Vec<f64>, BTreeMap<usize, Vec<f64>>)> {
        assert!(!batch.is_empty());
        let alpha = self.alpha();
        let mut grad_features = vec![0.0; self.features.live.param_count()];
        let mut grad_heads: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let mut total_loss = 0.0;
        let mut n_steps = 0usize;
        // Two passes: count real steps first so per-step weights are uniform.
        for chunk in batch {
            n_steps += chunk.real_steps();
        }
        if n_steps == 0 {
            return Ok((0.0, grad_features, grad_heads));
        }
        let inv_n = 1.0 / n_steps as f64;
        let mut sa = Vec::new();
        let mut psi_buf = Vec::new();
        for chunk in batch {
            let task_idx = self.task_index(chunk.task_id)?;
            let targets = critic_target(
                chunk,
                &self.prior.target,
                &self.features.target,
                &self.heads[task_idx].target,
                alpha,
                self.cfg.k,
                self.cfg.gamma,
                self.cfg.literal_soft_value,
                rng,
                &mut self.scratch,
            )?;
            let head = &self.heads[task_idx].live;
            let grad_w = grad_heads
                .entry(task_idx)
                .or_insert_with(|| vec![0.0; self.cfg.d]);
            for (j, target) in targets.iter().enumerate() {
                let Some(target) = target else { continue };
                let target = match self.cfg.value_clip {
                    Some((lo, hi)) => target.clamp(lo, hi),
                    None => *target,
                };
                sa.clear();
                sa.extend_from_slice(&chunk.obs[j]);
                sa.extend_from_slice(&chunk.actions[j]);
                let psi = self.features.live.forward(&sa, &mut self.scratch)?;
                psi_buf.clear();
                psi_buf.extend_from_slice(psi);
                let q: f64 = psi_buf.iter().zip(&head.w).map(|(p, w)| p * w).sum();
                let err = q - target;
                total_loss += 0.5 * err * err * inv_n;
                let scale = err * inv_n;
                // ∂Q/∂θ = wᵀ ∂ψ/∂θ, ∂Q/∂w = ψ.
                let upstream: Vec<f64> = head.w.iter().map(|w| w * scale).collect();
                self.features.live.accumulate_gradient(
                    &sa,
                    &upstream,
                    &mut self.scratch,
                    &mut grad_features,
                )?;
                for (gw, p) in grad_w.iter_mut().zip(&psi_buf) {
                    *gw += scale * p;
                }
            }
        }
        if !total_loss.is_finite() {
            return Err(LearnerError::NonFiniteLoss { context: "critic" });
        }
        Ok((total_loss, grad_features, grad_heads))
    }

    /// One optimizer step on θ and the sampled tasks' heads.
    pub fn critic_update(
        &mut self,
        batch: &[Arc<TrajectoryChunk>],
        rng: &mut SeedRng,
    ) -> LearnerResult<f64> {
        let (loss, grad_features, grad_heads) = self.critic_loss_grad(batch, rng)?;
        self.opt_features
            .step(&mut self.features.live.params, &grad_features, "critic loss")?;
        for (task_idx, grad_w) in grad_heads {
            self.opt_heads[task_idx].step(
                &mut self.heads[task_idx].live.w,
                &grad_w,
                "critic loss (head)",
            )?;
        }
        Ok(loss)
    }

    /// Weighted maximum-likelihood loss on the live prior φ and its
    /// gradient; no optimizer step. Actions come from the target prior φ′;
    /// weights from the target critic and live α — both independent of φ, so
    /// fixed-seed finite differencing is valid here too. Also returns the
    /// per-state Q sample rows for the temperature dual.
    pub fn prior_loss_grad(
        &mut self,
        batch: &[Arc<TrajectoryChunk>],
        rng: &mut SeedRng,
    ) -> LearnerResult<(f64, Vec<f64>, Vec<Vec<f64>>)> {
        assert!(!batch.is_empty());
        let alpha = self.alpha();
        let mut grad = vec![0.0; self.prior.live.param_count()];
        let mut loss = 0.0;
        let mut q_rows = Vec::new();
        let mut n_states = 0usize;
        for chunk in batch {
            n_states += chunk.real_steps();
        }
        if n_states == 0 {
            return Ok((0.0, grad, q_rows));
        }
        let inv_n = 1.0 / n_states as f64;
        let mut sa = Vec::new();
        for chunk in batch {
            let task_idx = self.task_index(chunk.task_id)?;
            let head_target = &self.heads[task_idx].target;
            for j in 0..chunk.m() {
                if !chunk.mask[j] {
                    continue;
                }
                let obs = &chunk.obs[j];
                let pview = &obs[..self.prior_dim];
                let proposal = prior_output(&self.prior.target, pview, &mut self.scratch)?.dist();
                let actions = sample_actions(&proposal, self.cfg.k, rng);
                let mut q = Vec::with_capacity(self.cfg.k);
                for a in &actions {
                    sa.clear();
                    sa.extend_from_slice(obs);
                    sa.extend_from_slice(a);
                    let qa =
                        q_value(&self.features.target, head_target, &sa, &mut self.scratch)?;
                    if !qa.is_finite() {
                        return Err(LearnerError::NonFiniteQ {
                            task_id: chunk.task_id,
                        });
                    }
                    q.push(qa);
                }
                let weights = tilt_weights(&q, alpha)?;
                let live_out = prior_output(&self.prior.live, pview, &mut self.scratch)?;
                let mut upstream = vec![0.0; 2 * self.action_dim];
                for (a, &w) in actions.iter().zip(&weights) {
                    loss -= w * live_out.log_prob(a) * inv_n;
                    // Maximizing weighted log-likelihood = descending its
                    // negation.
                    let up = live_out.log_prob_upstream(a, -w * inv_n);
                    for (u, v) in upstream.iter_mut().zip(up) {
                        *u += v;
                    }
                }
                self.prior.live.accumulate_gradient(
                    pview,
                    &upstream,
                    &mut self.scratch,
                    &mut grad,
                )?;
                q_rows.push(q);
            }
        }
        if !loss.is_finite() {
            return Err(LearnerError::NonFiniteLoss { context: "prior" });
        }
        Ok((loss, grad, q_rows))
    }

    /// One optimizer step maximizing the weighted prior likelihood.
    pub fn prior_update(
        &mut self,
        batch: &[Arc<TrajectoryChunk>],
        rng: &mut SeedRng,
    ) -> LearnerResult<(f64, Vec<Vec<f64>>)> {
        let (loss, grad, q_rows) = self.prior_loss_grad(batch, rng)?;
        self.opt_prior
            .step(&mut self.prior.live.params, &grad, "prior loss")?;
        Ok((loss, q_rows))
    }

    /// One dual-descent step on the temperature: log α moves by
    /// β_α (KL − ε), so a violated bound heats the tilt and slack cools it.
    /// Plain sign-consistent descent — momentum would be free to move α
    /// against the current constraint violation.
    pub fn update_temperature(&mut self, q_rows: &[Vec<f64>]) -> LearnerResult<f64> {
        if q_rows.is_empty() {
            return Ok(self.alpha());
        }
        let alpha = self.alpha();
        let mut mean_kl = 0.0;
        for q in q_rows {
            mean_kl += snis_kl_estimate(&tilt_weights(q, alpha)?)?;
        }
        mean_kl /= q_rows.len() as f64;
        self.log_alpha += self.cfg.lr_alpha * (mean_kl - self.cfg.epsilon);
        self.log_alpha = self.log_alpha.clamp(ALPHA_MIN.ln(), ALPHA_MAX.ln());
        Ok(self.alpha())
    }

    pub fn mean_snis_kl(&self, q_rows: &[Vec<f64>]) -> LearnerResult<f64> {
        let alpha = self.alpha();
        let mut total = 0.0;
        for q in q_rows {
            total += snis_kl_estimate(&tilt_weights(q, alpha)?)?;
        }
        Ok(total / q_rows.len().max(1) as f64)
    }

    /// One full learner step: critic, prior, temperature, target counters.
    /// Returns `Ok(None)` when the buffer is not ready yet.
    pub fn learner_step(
        &mut self,
        buffer: &ReplayBuffer,
        rng: &mut SeedRng,
    ) -> LearnerResult<Option<StepMetrics>> {
        if !buffer.ready(&self.task_ids) {
            return Ok(None);
        }
        let batch = match buffer.sample_batch(&self.task_ids, self.cfg.batch_chunks, rng) {
            Ok(batch) => batch,
            Err(ReplayError::NotReady { .. }) => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let critic_loss = self.critic_update(&batch, rng)?;
        let (prior_loss, q_rows) = self.prior_update(&batch, rng)?;
        let alpha = self.update_temperature(&q_rows)?;
        let mean_kl = self.mean_snis_kl(&q_rows)?;
        let mut synced = self.prior.tick();
        synced |= self.features.tick();
        for head in &mut self.heads {
            synced |= head.tick();
        }
        self.steps += 1;
        self.version += 1;
        Ok(Some(StepMetrics {
            step: self.steps,
            critic_loss,
            prior_loss,
            alpha,
            mean_snis_kl: mean_kl,
            synced_targets: synced,
        }))
    }
}
