//! Transfer to held-out tasks: a frozen behavior prior proposes actions, a
//! fresh linear head on the shared value features is re-fit by TD(0), and
//! the tilted categorical turns both into a policy immediately. The variant
//! matrix (IW, SharedQ+IW, SharedQ-only, from-scratch, parametric baseline)
//! isolates which ingredient carries the transfer.

use crate::env::{EnvError, Observation, SparseNav2D, TaskSpec};
use crate::learner::ActDiagnostics;
use crate::math::{
    sample_actions, soft_value_estimate, tilt_weights, DiagonalGaussian, MathError,
    TiltedCategorical,
};
use crate::nets::{
    prior_output, q_value, Adam, Checkpoint, CheckpointError, CriticHead, NetError, Network,
    NetworkSpec, Normalizer, Scratch, TargetPair,
};
use crate::replay::{Episode, ReplayBuffer, ReplayError, TrajectoryChunk};
use crate::rng::SeedRng;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdaptError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Math(#[from] MathError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint meta field {0} is missing or malformed")]
    Meta(&'static str),
    #[error("variant {variant} requires {part} from a pretrained bundle")]
    MissingPart {
        variant: AdaptVariant,
        part: &'static str,
    },
    #[error("operation requires variant {expected}, state has {got}")]
    VariantMismatch {
        expected: AdaptVariant,
        got: AdaptVariant,
    },
    #[error("bundle expects {field} = {expected}, environment provides {got}")]
    Incompatible {
        field: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite adaptation loss")]
    NonFiniteLoss,
    #[error("adapted critic produced a non-finite Q-value")]
    NonFiniteQ,
}

pub type AdaptResult<T> = Result<T, AdaptError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptVariant {
    /// Frozen prior proposals, fresh full critic.
    Iw,
    /// Frozen prior proposals, fresh head on frozen shared features.
    SharedQIw,
    /// Fresh head on frozen features, prior replaced by a broad Gaussian.
    SharedQOnly,
    /// Fresh full critic and broad Gaussian proposals.
    FromScratch,
    /// Fits an explicit Gaussian policy to the tilt weights and acts from it.
    ParametricBaseline,
}

impl AdaptVariant {
    pub const ALL: [AdaptVariant; 5] = [
        AdaptVariant::Iw,
        AdaptVariant::SharedQIw,
        AdaptVariant::SharedQOnly,
        AdaptVariant::FromScratch,
        AdaptVariant::ParametricBaseline,
    ];

    pub fn needs_prior(self) -> bool {
        matches!(
            self,
            AdaptVariant::Iw | AdaptVariant::SharedQIw | AdaptVariant::ParametricBaseline
        )
    }

    pub fn needs_features(self) -> bool {
        matches!(
            self,
            AdaptVariant::SharedQIw | AdaptVariant::SharedQOnly | AdaptVariant::ParametricBaseline
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AdaptVariant::Iw => "iw",
            AdaptVariant::SharedQIw => "shared_q_iw",
            AdaptVariant::SharedQOnly => "shared_q_only",
            AdaptVariant::FromScratch => "from_scratch",
            AdaptVariant::ParametricBaseline => "parametric_baseline",
        }
    }
}

impl std::fmt::Display for AdaptVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AdaptVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AdaptVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown variant {s:?}"))
    }
}

/// Frozen artifacts from multi-task training. Parts a variant must not see
/// stay `None`; [`PretrainedBundle::load_for_variant`] decodes only what the
/// variant is allowed to read.
#[derive(Debug, Clone)]
pub struct PretrainedBundle {
    pub prior: Option<Network>,
    pub features: Option<Network>,
    pub d: usize,
    pub alpha: f64,
    pub obs_dim: usize,
    pub prior_dim: usize,
    pub action_dim: usize,
}

fn meta_usize(meta: &serde_json::Value, field: &'static str) -> AdaptResult<usize> {
    meta.get(field)
        .and_then(|v| v.as_u64())
        .map(|v| v as usize)
        .ok_or(AdaptError::Meta(field))
}

fn meta_net(
    ckpt: &Checkpoint,
    meta: &serde_json::Value,
    spec_field: &'static str,
    norm_field: &'static str,
    array: &str,
) -> AdaptResult<Network> {
    let spec: NetworkSpec = serde_json::from_value(
        meta.get(spec_field).cloned().ok_or(AdaptError::Meta(spec_field))?,
    )
    .map_err(|_| AdaptError::Meta(spec_field))?;
    let normalizer: Option<Normalizer> = serde_json::from_value(
        meta.get(norm_field).cloned().ok_or(AdaptError::Meta(norm_field))?,
    )
    .map_err(|_| AdaptError::Meta(norm_field))?;
    let mut net = Network::from_params(spec, ckpt.array(array)?.to_vec())?;
    net.normalizer = normalizer;
    Ok(net)
}

impl PretrainedBundle {
    /// Decode only the parts this variant may read. `SharedQ-only` never
    /// touches the prior arrays; `IW` never touches θ*; `from-scratch` needs
    /// no checkpoint at all and should not reach this function.
    pub fn load_for_variant(ckpt: &Checkpoint, variant: AdaptVariant) -> AdaptResult<Self> {
        let meta = &ckpt.meta;
        if meta.get("kind").and_then(|k| k.as_str()) != Some("iwpl_learner") {
            return Err(AdaptError::Meta("kind"));
        }
        let alpha = meta
            .get("alpha")
            .and_then(|v| v.as_f64())
            .ok_or(AdaptError::Meta("alpha"))?;
        let prior = variant
            .needs_prior()
            .then(|| meta_net(ckpt, meta, "prior_spec", "prior_normalizer", "prior_params"))
            .transpose()?;
        let features = variant
            .needs_features()
            .then(|| {
                meta_net(
                    ckpt,
                    meta,
                    "features_spec",
                    "features_normalizer",
                    "features_params",
                )
            })
            .transpose()?;
        Ok(Self {
            prior,
            features,
            d: meta_usize(meta, "d")?,
            alpha,
            obs_dim: meta_usize(meta, "obs_dim")?,
            prior_dim: meta_usize(meta, "prior_dim")?,
            action_dim: meta_usize(meta, "action_dim")?,
        })
    }
}

/// Appendix-scale adaptation schedule plus the hyper-parameters the single
/// transfer task needs (the temperature stays fixed — no dual on one task).
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AdaptProtocol {
    /// N adaptation episodes.
    pub episodes: usize,
    /// M gradient updates at each episode end.
    pub updates_per_episode: usize,
    /// Unroll length in environment steps.
    pub unroll_len: usize,
    /// Updates per completed unroll.
    pub updates_per_unroll: usize,
    /// Batch size in transitions; rounded up to whole replay chunks.
    pub batch_size: usize,
    /// Leading episodes that act from the proposal prior only.
    pub exploration_episodes: usize,
    pub variant: AdaptVariant,
    /// Fixed adaptation temperature.
    pub alpha: f64,
    /// Proposal samples per state.
    pub k: usize,
    pub gamma: f64,
    /// β_w, learning rate on the head (and on fresh full critics).
    pub lr_w: f64,
    /// β_θ for feature finetuning; conventionally 10× smaller than β_w.
    pub lr_features: f64,
    pub target_period: usize,
    pub chunk_len: usize,
    pub replay_capacity: usize,
    /// Enable feature finetuning from this episode index on.
    pub finetune_after: Option<usize>,
    /// Architecture for fresh critics (IW / from-scratch).
    pub fresh_hidden: Vec<usize>,
    pub fresh_d: usize,
    /// Clamp bootstrapped TD targets to known return bounds.
    #[serde(default)]
    pub value_clip: Option<(f64, f64)>,
}

impl Default for AdaptProtocol {
    fn default() -> Self {
        Self {
            episodes: 40,
            updates_per_episode: 50,
            unroll_len: 10,
            updates_per_unroll: 1,
            batch_size: 128,
            exploration_episodes: 5,
            variant: AdaptVariant::SharedQIw,
            alpha: 1.0,
            k: 20,
            gamma: 0.99,
            lr_w: 1e-3,
            lr_features: 1e-4,
            target_period: 100,
            chunk_len: 10,
            replay_capacity: 10_000,
            finetune_after: None,
            fresh_hidden: vec![64, 64],
            fresh_d: 64,
            value_clip: None,
        }
    }
}

/// Environment dimensions the networks must agree with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnvDims {
    pub obs_dim: usize,
    pub prior_dim: usize,
    pub action_dim: usize,
}

impl EnvDims {
    pub fn nav() -> Self {
        Self {
            obs_dim: SparseNav2D::obs_dim(),
            prior_dim: SparseNav2D::obs_dim(),
            action_dim: SparseNav2D::action_dim(),
        }
    }
}

/// Proposal distribution: the frozen pretrained prior, or the broad
/// zero-mean unit-stddev Gaussian used by the ablations.
#[derive(Debug, Clone)]
pub enum ProposalPrior {
    Frozen(Network),
    Broad { action_dim: usize },
}

impl ProposalPrior {
    fn distribution(
        &self,
        prior_view: &[f64],
        scratch: &mut Scratch,
    ) -> AdaptResult<DiagonalGaussian<f64>> {
        match self {
            ProposalPrior::Frozen(net) => {
                Ok(prior_output(net, prior_view, scratch)?.dist())
            }
            ProposalPrior::Broad { action_dim } => Ok(DiagonalGaussian::standard(*action_dim)),
        }
    }

    pub fn is_frozen(&self) -> bool {
        matches!(self, ProposalPrior::Frozen(_))
    }
}

/// Everything a single-task adaptation run owns.
#[derive(Debug)]
pub struct AdaptState {
    pub variant: AdaptVariant,
    pub task_id: usize,
    pub w: TargetPair<CriticHead>,
    pub features: TargetPair<Network>,
    pub prior: ProposalPrior,
    /// Explicit Gaussian policy, parametric-baseline only.
    pub policy: Option<Network>,
    pub alpha: f64,
    pub replay: ReplayBuffer,
    // Counter audit: the protocol applies exactly `updates_per_unroll` per
    // completed unroll and exactly M at each episode end.
    pub episodes_run: u64,
    pub exploration_episodes_run: u64,
    pub unroll_updates: u64,
    pub episode_end_updates: u64,
    pub total_updates: u64,
    pub steps_collected: u64,
    features_trainable: bool,
    finetune_after: Option<usize>,
    k: usize,
    gamma: f64,
    value_clip: Option<(f64, f64)>,
    batch_chunks: usize,
    dims: EnvDims,
    opt_w: Adam,
    opt_features: Adam,
    opt_policy: Option<Adam>,
    scratch: Scratch,
}

/// Build the variant's starting state. Fresh heads draw w ~ N(0, I_d/d) so
/// E‖w‖² = 1; fresh full critics use their own random features at the head
/// learning rate; ablation variants swap the proposal prior for the broad
/// Gaussian.
pub fn init_adaptation(
    bundle: Option<&PretrainedBundle>,
    task_id: usize,
    protocol: &AdaptProtocol,
    dims: EnvDims,
    rng: &mut SeedRng,
) -> AdaptResult<AdaptState> {
    let variant = protocol.variant;
    if let Some(b) = bundle {
        for (field, expected, got) in [
            ("obs_dim", b.obs_dim, dims.obs_dim),
            ("prior_dim", b.prior_dim, dims.prior_dim),
            ("action_dim", b.action_dim, dims.action_dim),
        ] {
            if expected != got {
                return Err(AdaptError::Incompatible {
                    field,
                    expected,
                    got,
                });
            }
        }
    }
    let take_prior = || -> AdaptResult<Network> {
        bundle
            .and_then(|b| b.prior.clone())
            .ok_or(AdaptError::MissingPart {
                variant,
                part: "prior",
            })
    };
    let take_features = || -> AdaptResult<(Network, usize)> {
        bundle
            .and_then(|b| b.features.clone().map(|f| (f, b.d)))
            .ok_or(AdaptError::MissingPart {
                variant,
                part: "features",
            })
    };
    let fresh_features = |rng: &mut SeedRng| {
        Network::init(
            NetworkSpec::new(
                dims.obs_dim + dims.action_dim,
                protocol.fresh_hidden.clone(),
                protocol.fresh_d,
            ),
            rng,
        )
    };
    let broad = ProposalPrior::Broad {
        action_dim: dims.action_dim,
    };
    let mut feat_rng = rng.child_named("fresh_features");
    let (features, d, prior, features_trainable) = match variant {
        AdaptVariant::Iw => (
            fresh_features(&mut feat_rng),
            protocol.fresh_d,
            ProposalPrior::Frozen(take_prior()?),
            true,
        ),
        AdaptVariant::SharedQIw => {
            let (f, d) = take_features()?;
            (f, d, ProposalPrior::Frozen(take_prior()?), false)
        }
        AdaptVariant::SharedQOnly => {
            let (f, d) = take_features()?;
            (f, d, broad, false)
        }
        AdaptVariant::FromScratch => (fresh_features(&mut feat_rng), protocol.fresh_d, broad, true),
        AdaptVariant::ParametricBaseline => {
            let (f, d) = take_features()?;
            (f, d, ProposalPrior::Frozen(take_prior()?), false)
        }
    };
    // The parametric baseline's explicit policy starts from the pretrained
    // prior and is refit toward the tilt weights every step.
    let (policy, opt_policy) = if variant == AdaptVariant::ParametricBaseline {
        let net = take_prior()?;
        let n = net.param_count();
        (Some(net), Some(Adam::new(n, protocol.lr_w)))
    } else {
        (None, None)
    };
    let w = CriticHead::spherical_init(d, &mut rng.child_named("head_init"));
    // Fresh critics train their features as the primary critic parameters;
    // finetuning of pretrained features uses the smaller β_θ.
    let features_lr = if features_trainable {
        protocol.lr_w
    } else {
        protocol.lr_features
    };
    let opt_features = Adam::new(features.param_count(), features_lr);
    Ok(AdaptState {
        variant,
        task_id,
        w: TargetPair::new(w, protocol.target_period),
        features: TargetPair::new(features, protocol.target_period),
        prior,
        policy,
        alpha: protocol.alpha,
        replay: ReplayBuffer::new([task_id], protocol.chunk_len, protocol.replay_capacity, None),
        episodes_run: 0,
        exploration_episodes_run: 0,
        unroll_updates: 0,
        episode_end_updates: 0,
        total_updates: 0,
        steps_collected: 0,
        features_trainable,
        finetune_after: protocol.finetune_after,
        k: protocol.k,
        gamma: protocol.gamma,
        value_clip: protocol.value_clip,
        batch_chunks: protocol.batch_size.div_ceil(protocol.chunk_len).max(1),
        dims,
        opt_w: Adam::new(d, protocol.lr_w),
        opt_features,
        opt_policy,
        scratch: Scratch::default(),
    })
}

/// Enable feature finetuning from the given episode index on (Algorithm 2's
/// optional θ step). `usize::MAX` leaves the run frozen forever.
pub fn finetune_features(state: &mut AdaptState, enable_after: usize) {
    state.finetune_after = Some(enable_after);
}

impl AdaptState {
    pub fn d(&self) -> usize {
        self.w.live.d()
    }

    fn finetuning_active(&self) -> bool {
        self.features_trainable
            || self
                .finetune_after
                .is_some_and(|after| self.episodes_run as usize >= after)
    }

    /// Act with the variant's policy; exploration episodes bypass the critic
    /// and sample the proposal prior directly.
    pub fn act(
        &mut self,
        obs: &Observation,
        explore: bool,
        rng: &mut SeedRng,
    ) -> AdaptResult<(Vec<f64>, ActDiagnostics)> {
        let pview = &obs.prior_view[..self.dims.prior_dim];
        if explore {
            let dist = self.prior.distribution(pview, &mut self.scratch)?;
            let action = dist.sample(rng);
            return Ok((
                action,
                ActDiagnostics {
                    snis_kl: 0.0,
                    soft_value: 0.0,
                    q_mean: 0.0,
                    q_max: 0.0,
                    alpha: self.alpha,
                },
            ));
        }
        if let Some(policy) = &self.policy {
            let action = prior_output(policy, pview, &mut self.scratch)?.dist().sample(rng);
            return Ok((
                action,
                ActDiagnostics {
                    snis_kl: 0.0,
                    soft_value: 0.0,
                    q_mean: 0.0,
                    q_max: 0.0,
                    alpha: self.alpha,
                },
            ));
        }
        let dist = self.prior.distribution(pview, &mut self.scratch)?;
        let actions = sample_actions(&dist, self.k, rng);
        let mut sa = obs.full.clone();
        let obs_len = sa.len();
        let mut q = Vec::with_capacity(self.k);
        for a in &actions {
            sa.truncate(obs_len);
            sa.extend_from_slice(a);
            let qa = q_value(&self.features.live, &self.w.live, &sa, &mut self.scratch)?;
            if !qa.is_finite() {
                return Err(AdaptError::NonFiniteQ);
            }
            q.push(qa);
        }
        let sv = soft_value_estimate(&q, self.alpha)?;
        let q_mean = q.iter().sum::<f64>() / q.len() as f64;
        let q_max = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let tc = TiltedCategorical::from_q_values(actions, &q, self.alpha)?;
        let diag = ActDiagnostics {
            snis_kl: tc.snis_kl(),
            soft_value: sv.value,
            q_mean,
            q_max,
            alpha: self.alpha,
        };
        Ok((tc.sample(rng).to_vec(), diag))
    }

    /// TD(0) loss on the live critic and its gradients; targets use w′/θ′
    /// with proposals from the (fixed) prior, so a fixed seed reproduces
    /// identical targets and finite differencing is valid.
    pub fn adapt_loss_grad(
        &mut self,
        batch: &[Arc<TrajectoryChunk>],
        rng: &mut SeedRng,
    ) -> AdaptResult<(f64, Vec<f64>, Option<Vec<f64>>)> {
        let finetune = self.finetuning_active();
        let mut grad_w = vec![0.0; self.d()];
        let mut grad_features = finetune.then(|| vec![0.0; self.features.live.param_count()]);
        let mut loss = 0.0;
        let n_steps: usize = batch.iter().map(|c| c.real_steps()).sum();
        if n_steps == 0 {
            return Ok((0.0, grad_w, grad_features));
        }
        let inv_n = 1.0 / n_steps as f64;
        let mut sa = Vec::new();
        let mut psi_buf = Vec::new();
        for chunk in batch {
            for j in 0..chunk.m() {
                if !chunk.mask[j] {
                    continue;
                }
                let target = self.td_target(chunk, j, rng)?;
                sa.clear();
                sa.extend_from_slice(&chunk.obs[j]);
                sa.extend_from_slice(&chunk.actions[j]);
                let psi = self.features.live.forward(&sa, &mut self.scratch)?;
                psi_buf.clear();
                psi_buf.extend_from_slice(psi);
                let q: f64 = psi_buf.iter().zip(&self.w.live.w).map(|(p, w)| p * w).sum();
                let err = q - target;
                loss += 0.5 * err * err * inv_n;
                let scale = err * inv_n;
                for (gw, p) in grad_w.iter_mut().zip(&psi_buf) {
                    *gw += scale * p;
                }
                if let Some(gf) = grad_features.as_mut() {
                    let upstream: Vec<f64> = self.w.live.w.iter().map(|w| w * scale).collect();
                    self.features.live.accumulate_gradient(
                        &sa,
                        &upstream,
                        &mut self.scratch,
                        gf,
                    )?;
                }
            }
        }
        if !loss.is_finite() {
            return Err(AdaptError::NonFiniteLoss);
        }
        Ok((loss, grad_w, grad_features))
    }

    fn td_target(&mut self, chunk: &TrajectoryChunk, j: usize, rng: &mut SeedRng) -> AdaptResult<f64> {
        let r = chunk.rewards[j];
        let raw = if chunk.terminals[j] || self.gamma == 0.0 {
            r
        } else {
            let next = &chunk.obs[j + 1];
            let dist = self
                .prior
                .distribution(&next[..self.dims.prior_dim], &mut self.scratch)?;
            let actions = sample_actions(&dist, self.k, rng);
            let mut q = Vec::with_capacity(self.k);
            let mut sa = Vec::with_capacity(next.len() + self.dims.action_dim);
            for a in &actions {
                sa.clear();
                sa.extend_from_slice(next);
                sa.extend_from_slice(a);
                let qa = q_value(&self.features.target, &self.w.target, &sa, &mut self.scratch)?;
                if !qa.is_finite() {
                    return Err(AdaptError::NonFiniteQ);
                }
                q.push(qa);
            }
            r + self.gamma * soft_value_estimate(&q, self.alpha)?.value
        };
        Ok(match self.value_clip {
            Some((lo, hi)) => raw.clamp(lo, hi),
            None => raw,
        })
    }

    /// One TD(0) optimizer step on w (and θ while finetuning), advancing the
    /// target sync counters.
    pub fn adapt_step(&mut self, rng: &mut SeedRng) -> AdaptResult<f64> {
        let batch = self.replay.sample_batch(&[self.task_id], self.batch_chunks, rng)?;
        let (loss, grad_w, grad_features) = self.adapt_loss_grad(&batch, rng)?;
        self.opt_w.step(&mut self.w.live.w, &grad_w, "adapt critic")?;
        if let Some(gf) = grad_features {
            self.opt_features
                .step(&mut self.features.live.params, &gf, "adapt features")?;
        }
        self.w.tick();
        self.features.tick();
        self.total_updates += 1;
        Ok(loss)
    }

    /// Weighted maximum-likelihood loss fitting the explicit policy to the
    /// tilt weights, and its gradient on the policy parameters.
    pub fn parametric_loss_grad(
        &mut self,
        batch: &[Arc<TrajectoryChunk>],
        rng: &mut SeedRng,
    ) -> AdaptResult<(f64, Vec<f64>)> {
        let policy_params = self
            .policy
            .as_ref()
            .map(Network::param_count)
            .ok_or(AdaptError::VariantMismatch {
                expected: AdaptVariant::ParametricBaseline,
                got: self.variant,
            })?;
        let mut grad = vec![0.0; policy_params];
        let mut loss = 0.0;
        let n_states: usize = batch.iter().map(|c| c.real_steps()).sum();
        if n_states == 0 {
            return Ok((0.0, grad));
        }
        let inv_n = 1.0 / n_states as f64;
        let mut sa = Vec::new();
        for chunk in batch {
            for j in 0..chunk.m() {
                if !chunk.mask[j] {
                    continue;
                }
                let obs = &chunk.obs[j];
                let pview = &obs[..self.dims.prior_dim];
                let proposal = self.prior.distribution(pview, &mut self.scratch)?;
                let actions = sample_actions(&proposal, self.k, rng);
                let mut q = Vec::with_capacity(self.k);
                for a in &actions {
                    sa.clear();
                    sa.extend_from_slice(obs);
                    sa.extend_from_slice(a);
                    let qa =
                        q_value(&self.features.target, &self.w.target, &sa, &mut self.scratch)?;
                    if !qa.is_finite() {
                        return Err(AdaptError::NonFiniteQ);
                    }
                    q.push(qa);
                }
                let weights = tilt_weights(&q, self.alpha)?;
                let policy = self.policy.as_ref().expect("checked above");
                let out = prior_output(policy, pview, &mut self.scratch)?;
                let mut upstream = vec![0.0; 2 * self.dims.action_dim];
                for (a, &wt) in actions.iter().zip(&weights) {
                    loss -= wt * out.log_prob(a) * inv_n;
                    for (u, v) in upstream
                        .iter_mut()
                        .zip(out.log_prob_upstream(a, -wt * inv_n))
                    {
                        *u += v;
                    }
                }
                policy.accumulate_gradient(pview, &upstream, &mut self.scratch, &mut grad)?;
            }
        }
        if !loss.is_finite() {
            return Err(AdaptError::NonFiniteLoss);
        }
        Ok((loss, grad))
    }

    /// One weighted-MLE step refitting the explicit Gaussian policy.
    pub fn parametric_baseline_step(&mut self, rng: &mut SeedRng) -> AdaptResult<f64> {
        let batch = self.replay.sample_batch(&[self.task_id], self.batch_chunks, rng)?;
        let (loss, grad) = self.parametric_loss_grad(&batch, rng)?;
        let policy = self.policy.as_mut().expect("parametric_loss_grad checked");
        self.opt_policy
            .as_mut()
            .expect("policy and optimizer travel together")
            .step(&mut policy.params, &grad, "parametric policy")?;
        Ok(loss)
    }
}

/// Per-episode adaptation trace plus the Appendix-style evaluation (mean
/// return and majority success over the last three episodes).
#[derive(Debug)]
pub struct AdaptOutcome {
    pub returns: Vec<f64>,
    pub successes: Vec<bool>,
    pub lengths: Vec<usize>,
    pub eval_return: f64,
    pub success: bool,
    pub episodes_to_first_success: Option<usize>,
    pub state: AdaptState,
}

fn run_one_episode(
    state: &mut AdaptState,
    task: &TaskSpec,
    protocol: &AdaptProtocol,
    explore: bool,
    rng: &mut SeedRng,
) -> AdaptResult<(f64, bool, usize)> {
    let mut env = SparseNav2D::new(task.clone());
    let mut obs = env.reset(rng);
    let mut segment = Episode {
        task_id: state.task_id,
        obs: vec![obs.full.clone()],
        actions: Vec::new(),
        rewards: Vec::new(),
        terminals: Vec::new(),
    };
    let mut ret = 0.0;
    let mut steps = 0usize;
    let success;
    loop {
        let (action, _) = state.act(&obs, explore, rng)?;
        let step = env.step(&action)?;
        ret += step.reward;
        steps += 1;
        segment.actions.push(action);
        segment.rewards.push(step.reward);
        segment.terminals.push(step.terminal);
        segment.obs.push(step.obs.full.clone());
        obs = step.obs;
        if segment.len() == protocol.unroll_len || step.done {
            let complete = segment.len() == protocol.unroll_len;
            state.replay.append(&segment)?;
            state.steps_collected += segment.len() as u64;
            segment = Episode {
                task_id: state.task_id,
                obs: vec![obs.full.clone()],
                actions: Vec::new(),
                rewards: Vec::new(),
                terminals: Vec::new(),
            };
            if complete {
                for _ in 0..protocol.updates_per_unroll {
                    state.adapt_step(rng)?;
                    state.unroll_updates += 1;
                    if state.variant == AdaptVariant::ParametricBaseline {
                        state.parametric_baseline_step(rng)?;
                    }
                }
            }
        }
        if step.done {
            success = step.terminal;
            break;
        }
    }
    for _ in 0..protocol.updates_per_episode {
        state.adapt_step(rng)?;
        state.episode_end_updates += 1;
        if state.variant == AdaptVariant::ParametricBaseline {
            state.parametric_baseline_step(rng)?;
        }
    }
    state.episodes_run += 1;
    if explore {
        state.exploration_episodes_run += 1;
    }
    Ok((ret, success, steps))
}

/// Run the full N-episode protocol on one held-out task. Exploration
/// episodes act from the proposal prior; every episode streams unrolls into
/// the local replay and applies the scheduled updates. The curve is always
/// exactly length N — adaptation never stops early.
pub fn run_adaptation(
    bundle: Option<&PretrainedBundle>,
    task: &TaskSpec,
    protocol: &AdaptProtocol,
    rng: &mut SeedRng,
) -> AdaptResult<AdaptOutcome> {
    let mut state = init_adaptation(bundle, task.task_id, protocol, EnvDims::nav(), rng)?;
    let mut returns = Vec::with_capacity(protocol.episodes);
    let mut successes = Vec::with_capacity(protocol.episodes);
    let mut lengths = Vec::with_capacity(protocol.episodes);
    for episode in 0..protocol.episodes {
        let explore = episode < protocol.exploration_episodes;
        let (ret, success, steps) = run_one_episode(&mut state, task, protocol, explore, rng)?;
        returns.push(ret);
        successes.push(success);
        lengths.push(steps);
    }
    let tail = returns.len().min(3);
    let eval_return = if tail == 0 {
        0.0
    } else {
        returns[returns.len() - tail..].iter().sum::<f64>() / tail as f64
    };
    let tail_hits = successes[successes.len() - tail..]
        .iter()
        .filter(|&&s| s)
        .count();
    let success = tail > 0 && 2 * tail_hits > tail;
    let episodes_to_first_success = successes.iter().position(|&s| s).map(|i| i + 1);
    Ok(AdaptOutcome {
        returns,
        successes,
        lengths,
        eval_return,
        success,
        episodes_to_first_success,
        state,
    })
}
