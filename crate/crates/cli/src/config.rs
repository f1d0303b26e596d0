//! Experiment configuration: one JSON file holds every training and
//! adaptation hyper-parameter. Unknown keys are rejected so typos fail
//! loudly, and the resolved struct is copied into each run directory.

use iwrl_core::adapt::{AdaptProtocol, AdaptVariant};
use iwrl_core::learner::{LearnerConfig, TrainingConfig};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Environment family; only "sparse_nav2d" ships.
    pub env: String,
    #[serde(default = "d_n_train")]
    pub n_train: usize,
    #[serde(default = "d_n_test")]
    pub n_test: usize,
    /// Seed for drawing the task set (kept separate from run seeds so the
    /// same tasks appear across seeds).
    #[serde(default = "d_task_seed")]
    pub task_seed: u64,
    #[serde(default = "d_seeds")]
    pub seeds: Vec<u64>,
    /// Proposal samples per state.
    #[serde(default = "d_k")]
    pub k: usize,
    /// KL bound ε for the temperature dual.
    #[serde(default = "d_epsilon")]
    pub epsilon: f64,
    #[serde(default = "d_init_alpha")]
    pub init_alpha: f64,
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    /// Target-network sync period T.
    #[serde(default = "d_target_period")]
    pub target_period: usize,
    #[serde(default = "d_lr_critic")]
    pub lr_critic: f64,
    #[serde(default = "d_lr_prior")]
    pub lr_prior: f64,
    #[serde(default = "d_lr_alpha")]
    pub lr_alpha: f64,
    /// Shared value-feature dimension.
    #[serde(default = "d_feature_dim")]
    pub d: usize,
    #[serde(default = "d_hidden")]
    pub hidden: Vec<usize>,
    /// Batch size in replay chunks per learner step.
    #[serde(default = "d_batch_chunks")]
    pub batch_chunks: usize,
    #[serde(default = "d_chunk_len")]
    pub chunk_len: usize,
    #[serde(default = "d_replay_capacity")]
    pub replay_capacity: usize,
    /// Soft synchronicity cap: max samplings of a chunk before fresh data
    /// must arrive. `null` removes the cap.
    #[serde(default = "d_max_reuse")]
    pub max_reuse: Option<u32>,
    #[serde(default = "d_normalizer_warmup")]
    pub normalizer_warmup: u64,
    /// Clamp bootstrapped TD targets to [lo, hi]; returns in this family are
    /// bounded, so a correct target is never moved. Applies to training and
    /// adaptation alike. `null` disables.
    #[serde(default = "d_value_clip")]
    pub value_clip: Option<(f64, f64)>,
    #[serde(default = "d_n_actors")]
    pub n_actors: usize,
    #[serde(default = "d_episode_budget")]
    pub episode_budget: u64,
    #[serde(default = "d_learner_steps")]
    pub learner_steps_per_episode: usize,
    #[serde(default = "d_success_window")]
    pub success_window: usize,
    /// Stop training early once the trailing success rate reaches this.
    #[serde(default)]
    pub stop_at_success_rate: Option<f64>,
    /// Adaptation variants to run, e.g. ["shared_q_iw", "from_scratch"].
    #[serde(default = "d_variants")]
    pub variants: Vec<String>,
    #[serde(default)]
    pub adapt: AdaptSettings,
    #[serde(default = "d_output_dir")]
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptSettings {
    /// N adaptation episodes per cell.
    #[serde(default = "da_episodes")]
    pub episodes: usize,
    /// M updates at each episode end.
    #[serde(default = "da_updates_per_episode")]
    pub updates_per_episode: usize,
    #[serde(default = "da_unroll_len")]
    pub unroll_len: usize,
    #[serde(default = "da_updates_per_unroll")]
    pub updates_per_unroll: usize,
    /// Batch size in transitions.
    #[serde(default = "da_batch_size")]
    pub batch_size: usize,
    #[serde(default = "da_exploration_episodes")]
    pub exploration_episodes: usize,
    /// Fixed adaptation temperature.
    #[serde(default = "da_alpha")]
    pub alpha: f64,
    /// β_w on the linear head.
    #[serde(default = "da_lr_w")]
    pub lr_w: f64,
    /// β_θ for feature finetuning; defaults to β_w / 10.
    #[serde(default)]
    pub lr_features: Option<f64>,
    #[serde(default = "da_target_period")]
    pub target_period: usize,
    #[serde(default)]
    pub finetune_after: Option<usize>,
    #[serde(default = "da_fresh_hidden")]
    pub fresh_hidden: Vec<usize>,
    #[serde(default = "da_fresh_d")]
    pub fresh_d: usize,
    #[serde(default = "da_replay_capacity")]
    pub replay_capacity: usize,
}

fn d_n_train() -> usize {
    16
}
fn d_n_test() -> usize {
    8
}
fn d_task_seed() -> u64 {
    1234
}
fn d_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}
fn d_k() -> usize {
    20
}
fn d_epsilon() -> f64 {
    0.5
}
fn d_init_alpha() -> f64 {
    1.0
}
fn d_gamma() -> f64 {
    0.99
}
fn d_target_period() -> usize {
    100
}
fn d_lr_critic() -> f64 {
    5e-4
}
fn d_lr_prior() -> f64 {
    5e-4
}
fn d_lr_alpha() -> f64 {
    1e-3
}
fn d_feature_dim() -> usize {
    64
}
fn d_hidden() -> Vec<usize> {
    vec![64, 64]
}
fn d_batch_chunks() -> usize {
    32
}
fn d_chunk_len() -> usize {
    10
}
fn d_replay_capacity() -> usize {
    100_000
}
fn d_max_reuse() -> Option<u32> {
    Some(16)
}
fn d_normalizer_warmup() -> u64 {
    5000
}
// Nav returns live in [-0.5, 10]; one unit of slack on each side.
fn d_value_clip() -> Option<(f64, f64)> {
    Some((-1.0, 11.0))
}
fn d_n_actors() -> usize {
    4
}
fn d_episode_budget() -> u64 {
    2000
}
fn d_learner_steps() -> usize {
    2
}
fn d_success_window() -> usize {
    100
}
fn d_variants() -> Vec<String> {
    vec![
        "iw".into(),
        "shared_q_iw".into(),
        "shared_q_only".into(),
        "from_scratch".into(),
    ]
}
fn d_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn da_episodes() -> usize {
    40
}
fn da_updates_per_episode() -> usize {
    50
}
fn da_unroll_len() -> usize {
    10
}
fn da_updates_per_unroll() -> usize {
    1
}
fn da_batch_size() -> usize {
    128
}
fn da_exploration_episodes() -> usize {
    5
}
fn da_alpha() -> f64 {
    1.0
}
fn da_lr_w() -> f64 {
    1e-3
}
fn da_target_period() -> usize {
    100
}
fn da_fresh_hidden() -> Vec<usize> {
    vec![64, 64]
}
fn da_fresh_d() -> usize {
    64
}
fn da_replay_capacity() -> usize {
    10_000
}

impl Default for AdaptSettings {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields default")
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| ConfigError::Invalid {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        cfg.validate(path)?;
        Ok(cfg)
    }

    fn validate(&self, path: &Path) -> Result<(), ConfigError> {
        let fail = |message: String| {
            Err(ConfigError::Invalid {
                path: path.to_path_buf(),
                message,
            })
        };
        if self.env != "sparse_nav2d" {
            return fail(format!("env: unknown family {:?}", self.env));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return fail("n_train/n_test: need at least one task each".into());
        }
        if self.seeds.is_empty() {
            return fail("seeds: need at least one seed".into());
        }
        if self.k == 0 {
            return fail("k: need at least one proposal sample".into());
        }
        if !(self.epsilon > 0.0) {
            return fail(format!("epsilon: must be positive, got {}", self.epsilon));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return fail(format!("gamma: must lie in [0, 1), got {}", self.gamma));
        }
        if let Some((lo, hi)) = self.value_clip {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return fail(format!("value_clip: need finite lo < hi, got [{lo}, {hi}]"));
            }
        }
        for name in &self.variants {
            if name.parse::<AdaptVariant>().is_err() {
                return fail(format!("variants: unknown variant {name:?}"));
            }
        }
        Ok(())
    }

    pub fn learner_config(&self) -> LearnerConfig {
        LearnerConfig {
            k: self.k,
            gamma: self.gamma,
            epsilon: self.epsilon,
            init_alpha: self.init_alpha,
            target_period: self.target_period,
            lr_critic: self.lr_critic,
            lr_prior: self.lr_prior,
            lr_alpha: self.lr_alpha,
            d: self.d,
            hidden: self.hidden.clone(),
            batch_chunks: self.batch_chunks,
            normalizer_warmup: self.normalizer_warmup,
            value_clip: self.value_clip,
            ..LearnerConfig::default()
        }
    }

    pub fn training_config(&self, deterministic: bool, seed: u64) -> TrainingConfig {
        TrainingConfig {
            learner: self.learner_config(),
            episode_budget: self.episode_budget,
            n_actors: self.n_actors,
            deterministic,
            seed,
            chunk_len: self.chunk_len,
            replay_capacity: self.replay_capacity,
            max_reuse: self.max_reuse,
            learner_steps_per_episode: self.learner_steps_per_episode,
            success_window: self.success_window,
            stop_at_success_rate: self.stop_at_success_rate,
        }
    }

    pub fn adapt_protocol(&self, variant: AdaptVariant) -> AdaptProtocol {
        AdaptProtocol {
            episodes: self.adapt.episodes,
            updates_per_episode: self.adapt.updates_per_episode,
            unroll_len: self.adapt.unroll_len,
            updates_per_unroll: self.adapt.updates_per_unroll,
            batch_size: self.adapt.batch_size,
            exploration_episodes: self.adapt.exploration_episodes,
            variant,
            alpha: self.adapt.alpha,
            k: self.k,
            gamma: self.gamma,
            lr_w: self.adapt.lr_w,
            lr_features: self.adapt.lr_features.unwrap_or(self.adapt.lr_w / 10.0),
            target_period: self.adapt.target_period,
            chunk_len: self.chunk_len,
            replay_capacity: self.adapt.replay_capacity,
            finetune_after: self.adapt.finetune_after,
            fresh_hidden: self.adapt.fresh_hidden.clone(),
            fresh_d: self.adapt.fresh_d,
            value_clip: self.value_clip,
        }
    }

}
