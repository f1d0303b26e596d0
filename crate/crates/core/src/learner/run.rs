//! Training orchestration: normalizer warm-up, episode collection, and the
//! actor/learner loops. Deterministic mode runs one actor strictly
//! alternating with the learner on a single thread; concurrent mode runs A
//! actor threads against a lock-protected snapshot slot.

use super::{ActDiagnostics, ActorSnapshot, LearnerConfig, LearnerError, LearnerState, StepMetrics};
use crate::env::{EnvError, Observation, SparseNav2D, TaskSpec};
use crate::metrics::{MetricsError, MetricsRecord, MetricsWriter};
use crate::nets::Scratch;
use crate::replay::{Episode, ReplayBuffer, ReplayError};
use crate::rng::SeedRng;
use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("actor failed: {0}")]
    Actor(String),
    #[error("actor thread panicked")]
    ActorPanic,
}

pub type TrainingResult<T> = Result<T, TrainingError>;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainingConfig {
    pub learner: LearnerConfig,
    pub episode_budget: u64,
    /// Concurrent actor count; deterministic mode always uses exactly one.
    pub n_actors: usize,
    pub deterministic: bool,
    pub seed: u64,
    /// Replay chunk length M.
    pub chunk_len: usize,
    /// Replay capacity in chunks.
    pub replay_capacity: usize,
    /// Per-chunk sampling cap (soft synchronicity); `None` disables it.
    pub max_reuse: Option<u32>,
    /// Learner steps per collected episode (deterministic alternation only;
    /// the concurrent learner free-runs against the reuse cap).
    pub learner_steps_per_episode: usize,
    /// Trailing window for the reported success rate.
    pub success_window: usize,
    /// Stop early once the trailing window fills at or above this rate.
    pub stop_at_success_rate: Option<f64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learner: LearnerConfig::default(),
            episode_budget: 2000,
            n_actors: 4,
            deterministic: false,
            seed: 0,
            chunk_len: 10,
            replay_capacity: 100_000,
            max_reuse: Some(16),
            learner_steps_per_episode: 2,
            success_window: 100,
            stop_at_success_rate: None,
        }
    }
}

#[derive(Debug)]
pub struct TrainingOutcome {
    pub state: LearnerState,
    pub episodes: u64,
    pub learner_steps: u64,
    pub trailing_success: f64,
    /// Whether the trailing success window met `stop_at_success_rate`.
    pub solved: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct EpisodeStats {
    pub ret: f64,
    pub length: usize,
    pub success: bool,
    pub mean_snis_kl: f64,
    pub mean_soft_value: f64,
}

/// Run one episode with an arbitrary acting rule (the learner snapshot in
/// training; the frozen prior or the adapted critic during transfer).
pub(crate) fn roll_episode_with<F>(
    task: &TaskSpec,
    rng: &mut SeedRng,
    scratch: &mut Scratch,
    mut act: F,
) -> TrainingResult<(Episode, EpisodeStats)>
where
    F: FnMut(&Observation, &mut SeedRng, &mut Scratch) -> Result<(Vec<f64>, ActDiagnostics), LearnerError>,
{
    let mut env = SparseNav2D::new(task.clone());
    let mut obs = env.reset(rng);
    let mut episode = Episode {
        task_id: task.task_id,
        obs: vec![obs.full.clone()],
        actions: Vec::new(),
        rewards: Vec::new(),
        terminals: Vec::new(),
    };
    let mut ret = 0.0;
    let mut kl_sum = 0.0;
    let mut value_sum = 0.0;
    loop {
        let (action, diag) = act(&obs, rng, scratch)?;
        let step = env.step(&action)?;
        ret += step.reward;
        kl_sum += diag.snis_kl;
        value_sum += diag.soft_value;
        episode.actions.push(action);
        episode.rewards.push(step.reward);
        episode.terminals.push(step.terminal);
        episode.obs.push(step.obs.full.clone());
        obs = step.obs;
        if step.done {
            let n = episode.len();
            let stats = EpisodeStats {
                ret,
                length: n,
                success: step.terminal,
                mean_snis_kl: kl_sum / n as f64,
                mean_soft_value: value_sum / n as f64,
            };
            return Ok((episode, stats));
        }
    }
}

fn roll_episode(
    task: &TaskSpec,
    snapshot: &ActorSnapshot,
    rng: &mut SeedRng,
    scratch: &mut Scratch,
) -> TrainingResult<(Episode, EpisodeStats)> {
    let task_id = task.task_id;
    roll_episode_with(task, rng, scratch, |obs, rng, scratch| {
        snapshot.act(obs, task_id, rng, scratch)
    })
}

struct SuccessTracker {
    window: usize,
    hits: VecDeque<bool>,
    successes: usize,
}

impl SuccessTracker {
    fn new(window: usize) -> Self {
        assert!(window >= 1);
        Self {
            window,
            hits: VecDeque::with_capacity(window),
            successes: 0,
        }
    }

    fn push(&mut self, success: bool) {
        if self.hits.len() == self.window {
            if self.hits.pop_front() == Some(true) {
                self.successes -= 1;
            }
        }
        self.hits.push_back(success);
        self.successes += success as usize;
    }

    fn rate(&self) -> f64 {
        if self.hits.is_empty() {
            0.0
        } else {
            self.successes as f64 / self.hits.len() as f64
        }
    }

    fn satisfies(&self, threshold: Option<f64>) -> bool {
        threshold.is_some_and(|t| self.hits.len() == self.window && self.rate() >= t)
    }
}

fn episode_record(index: u64, task_id: usize, stats: &EpisodeStats, trailing: f64) -> MetricsRecord {
    MetricsRecord::new("train")
        .with_episode(index)
        .scalar("return", stats.ret)
        .scalar("length", stats.length as f64)
        .scalar("success", stats.success as u8 as f64)
        .scalar("task_id", task_id as f64)
        .scalar("snis_kl", stats.mean_snis_kl)
        .scalar("soft_value", stats.mean_soft_value)
        .scalar("trailing_success", trailing)
}

fn step_record(m: &StepMetrics) -> MetricsRecord {
    let mut record = MetricsRecord::new("train").with_step(m.step);
    record.scalars = m.scalars();
    record
}

enum ActorMessage {
    Episode { task_id: usize, stats: EpisodeStats },
    Failed(String),
}

/// Train on the given tasks until the episode budget (or an early-stop
/// success rate) is reached. Metrics are flushed even when a failure aborts
/// the run.
pub fn run_training(
    tasks: &[TaskSpec],
    cfg: &TrainingConfig,
    writer: &mut MetricsWriter,
) -> TrainingResult<TrainingOutcome> {
    assert!(!tasks.is_empty(), "need at least one training task");
    assert!(cfg.learner_steps_per_episode >= 1);
    let root = SeedRng::new(cfg.seed);
    let task_ids: Vec<usize> = tasks.iter().map(|t| t.task_id).collect();
    let mut init_rng = root.child_named("learner_init");
    let mut state = LearnerState::new(
        cfg.learner.clone(),
        task_ids.clone(),
        SparseNav2D::obs_dim(),
        SparseNav2D::obs_dim(),
        SparseNav2D::action_dim(),
        &mut init_rng,
    );
    let buffer = Arc::new(ReplayBuffer::new(
        task_ids.clone(),
        cfg.chunk_len,
        cfg.replay_capacity,
        cfg.max_reuse,
    ));
    let mut tracker = SuccessTracker::new(cfg.success_window);
    let mut episodes_done: u64 = 0;
    let mut scratch = Scratch::default();

    // Warm-up: collect with the initial snapshot until the input statistics
    // have seen enough data, then freeze them and propagate to the targets
    // (parameters are still at init, so only the statistics change).
    let mut warm_rng = root.child_named("warmup");
    let mut snapshot = Arc::new(state.snapshot());
    while episodes_done < cfg.episode_budget
        && state.normalizer_count() < cfg.learner.normalizer_warmup
    {
        let task = &tasks[episodes_done as usize % tasks.len()];
        let (episode, stats) = roll_episode(task, &snapshot, &mut warm_rng, &mut scratch)?;
        for j in 0..episode.len() {
            state.observe_for_normalization(&episode.obs[j], &episode.actions[j]);
        }
        buffer.append(&episode)?;
        episodes_done += 1;
        tracker.push(stats.success);
        writer.append(episode_record(episodes_done, task.task_id, &stats, tracker.rate()))?;
    }
    state.freeze_normalizers();
    state.sync_target_statistics();
    snapshot = Arc::new(state.snapshot());

    let mut learn_rng = root.child_named("learner");
    let mut solved = tracker.satisfies(cfg.stop_at_success_rate);

    if cfg.deterministic {
        let mut act_rng = root.child_named("actors").child(0);
        while episodes_done < cfg.episode_budget && !solved {
            let task = &tasks[episodes_done as usize % tasks.len()];
            let (episode, stats) = roll_episode(task, &snapshot, &mut act_rng, &mut scratch)?;
            buffer.append(&episode)?;
            episodes_done += 1;
            tracker.push(stats.success);
            writer.append(episode_record(episodes_done, task.task_id, &stats, tracker.rate()))?;
            for _ in 0..cfg.learner_steps_per_episode {
                match state.learner_step(&buffer, &mut learn_rng) {
                    Ok(Some(m)) => {
                        writer.append(step_record(&m))?;
                        snapshot = Arc::new(state.snapshot());
                    }
                    Ok(None) => break,
                    Err(e) => {
                        writer.flush()?;
                        return Err(e.into());
                    }
                }
            }
            solved = tracker.satisfies(cfg.stop_at_success_rate);
        }
        writer.flush()?;
        return Ok(TrainingOutcome {
            episodes: episodes_done,
            learner_steps: state.steps,
            trailing_success: tracker.rate(),
            solved,
            state,
        });
    }

    // Concurrent mode: actors claim episode tickets and push stats back over
    // a channel; only this thread touches learner state and the writer.
    let stop = Arc::new(AtomicBool::new(false));
    let tickets = Arc::new(AtomicU64::new(episodes_done));
    let slot = Arc::new(Mutex::new(Arc::clone(&snapshot)));
    let (tx, rx) = mpsc::channel::<ActorMessage>();
    let mut handles = Vec::new();
    for a in 0..cfg.n_actors.max(1) {
        let tasks = tasks.to_vec();
        let buffer = Arc::clone(&buffer);
        let stop = Arc::clone(&stop);
        let tickets = Arc::clone(&tickets);
        let slot = Arc::clone(&slot);
        let tx = tx.clone();
        let budget = cfg.episode_budget;
        let mut rng = root.child_named("actors").child(a as u64);
        handles.push(std::thread::spawn(move || {
            let mut scratch = Scratch::default();
            while !stop.load(Ordering::Relaxed) {
                if tickets.fetch_add(1, Ordering::Relaxed) >= budget {
                    break;
                }
                let task = tasks[rng.index(tasks.len())].clone();
                let snap = Arc::clone(&slot.lock().unwrap());
                let rolled = roll_episode(&task, &snap, &mut rng, &mut scratch)
                    .and_then(|(episode, stats)| {
                        buffer.append(&episode)?;
                        Ok(stats)
                    });
                let message = match rolled {
                    Ok(stats) => ActorMessage::Episode {
                        task_id: task.task_id,
                        stats,
                    },
                    Err(e) => ActorMessage::Failed(e.to_string()),
                };
                let failed = matches!(message, ActorMessage::Failed(_));
                if tx.send(message).is_err() || failed {
                    break;
                }
            }
        }));
    }
    drop(tx);

    let mut error: Option<TrainingError> = None;
    let mut channel_open = true;
    'learn: loop {
        while channel_open {
            match rx.try_recv() {
                Ok(ActorMessage::Episode { task_id, stats }) => {
                    episodes_done += 1;
                    tracker.push(stats.success);
                    writer.append(episode_record(episodes_done, task_id, &stats, tracker.rate()))?;
                }
                Ok(ActorMessage::Failed(msg)) => {
                    error = Some(TrainingError::Actor(msg));
                    break 'learn;
                }
                Err(mpsc::TryRecvError::Empty) => break,
                Err(mpsc::TryRecvError::Disconnected) => channel_open = false,
            }
        }
        if episodes_done >= cfg.episode_budget || !channel_open {
            break;
        }
        if tracker.satisfies(cfg.stop_at_success_rate) {
            solved = true;
            break;
        }
        match state.learner_step(&buffer, &mut learn_rng) {
            Ok(Some(m)) => {
                writer.append(step_record(&m))?;
                *slot.lock().unwrap() = Arc::new(state.snapshot());
            }
            Ok(None) => std::thread::sleep(Duration::from_millis(1)),
            Err(e) => {
                error = Some(e.into());
                break;
            }
        }
    }
    stop.store(true, Ordering::Relaxed);
    for handle in handles {
        if handle.join().is_err() {
            error.get_or_insert(TrainingError::ActorPanic);
        }
    }
    // Actors may have finished episodes after the loop exited; keep the log
    // complete.
    while let Ok(message) = rx.try_recv() {
        if let ActorMessage::Episode { task_id, stats } = message {
            episodes_done += 1;
            tracker.push(stats.success);
            writer.append(episode_record(episodes_done, task_id, &stats, tracker.rate()))?;
        }
    }
    writer.flush()?;
    if let Some(e) = error {
        return Err(e);
    }
    solved = solved || tracker.satisfies(cfg.stop_at_success_rate);
    Ok(TrainingOutcome {
        episodes: episodes_done,
        learner_steps: state.steps,
        trailing_success: tracker.rate(),
        solved,
        state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::sample_task_set;
    use crate::metrics::read_metrics;
    use std::path::PathBuf;

    fn tmp_path(tag: &str) -> PathBuf {
        std::env::temp_dir().join(format!("iwrl-run-{}-{tag}.jsonl", std::process::id()))
    }

    fn tiny_config(budget: u64, deterministic: bool) -> TrainingConfig {
        TrainingConfig {
            learner: LearnerConfig {
                k: 4,
                hidden: vec![8],
                d: 4,
                batch_chunks: 2,
                normalizer_warmup: 150,
                target_period: 5,
                ..LearnerConfig::default()
            },
            episode_budget: budget,
            n_actors: 2,
            deterministic,
            seed: 7,
            chunk_len: 10,
            replay_capacity: 10_000,
            max_reuse: Some(16),
            learner_steps_per_episode: 1,
            success_window: 10,
            stop_at_success_rate: None,
        }
    }

    #[test]
    fn zero_budget_returns_initial_state_and_empty_log() {
        let tasks: Vec<_> = sample_task_set("sparse_nav2d", 2, 1, 1).train().cloned().collect();
        let path = tmp_path("zero");
        let mut writer = MetricsWriter::create(&path, true).unwrap();
        let outcome = run_training(&tasks, &tiny_config(0, true), &mut writer).unwrap();
        drop(writer);
        assert_eq!(outcome.episodes, 0);
        assert_eq!(outcome.learner_steps, 0);
        assert_eq!(outcome.state.steps, 0);
        assert!(read_metrics(&path).unwrap().is_empty());
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn deterministic_reruns_are_byte_identical() {
        let tasks: Vec<_> = sample_task_set("sparse_nav2d", 2, 1, 2).train().cloned().collect();
        let paths = [tmp_path("det-a"), tmp_path("det-b")];
        for path in &paths {
            let mut writer = MetricsWriter::create(path, true).unwrap();
            let outcome = run_training(&tasks, &tiny_config(6, true), &mut writer).unwrap();
            assert_eq!(outcome.episodes, 6);
            assert!(outcome.learner_steps > 0, "learner must engage");
        }
        let a = std::fs::read(&paths[0]).unwrap();
        let b = std::fs::read(&paths[1]).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "deterministic reruns must match byte for byte");
        for path in &paths {
            std::fs::remove_file(path).unwrap();
        }
    }

    #[test]
    fn concurrent_mode_completes_budget() {
        let tasks: Vec<_> = sample_task_set("sparse_nav2d", 2, 1, 3).train().cloned().collect();
        let path = tmp_path("conc");
        let mut writer = MetricsWriter::create(&path, false).unwrap();
        let outcome = run_training(&tasks, &tiny_config(10, false), &mut writer).unwrap();
        drop(writer);
        assert_eq!(outcome.episodes, 10);
        let records = read_metrics(&path).unwrap();
        let episode_records = records.iter().filter(|r| r.episode.is_some()).count();
        assert_eq!(episode_records, 10);
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn early_stop_halts_before_budget() {
        let tasks: Vec<_> = sample_task_set("sparse_nav2d", 2, 1, 4).train().cloned().collect();
        let mut cfg = tiny_config(50, true);
        cfg.success_window = 2;
        cfg.stop_at_success_rate = Some(0.0); // any full window qualifies
        let path = tmp_path("stop");
        let mut writer = MetricsWriter::create(&path, true).unwrap();
        let outcome = run_training(&tasks, &cfg, &mut writer).unwrap();
        drop(writer);
        assert!(outcome.solved);
        assert_eq!(outcome.episodes, 2, "stop as soon as the window fills");
        std::fs::remove_file(&path).unwrap();
    }
}
