//! Per-task replay storage.
//!
//! Episodes are split into fixed-length chunks (M steps, M+1 observations,
//! final chunk padded under a mask). Appends are episode-atomic; sampling is
//! uniform over each task's stored chunks, with a per-chunk reuse cap that
//! excludes — never evicts — over-used chunks. Capacity overflow evicts the
//! globally oldest chunks first.

use crate::rng::SeedRng;
use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, Mutex};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("task {0} is not registered with this buffer")]
    UnknownTask(usize),
    #[error("not ready: task {task_id} has no sampleable chunk yet")]
    NotReady { task_id: usize },
    #[error("episode arrays misaligned: {0}")]
    Misaligned(String),
}

/// One episode as produced by an actor.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub task_id: usize,
    /// T+1 observations (full view).
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    /// True MDP terminations; a timeout truncation stays false.
    pub terminals: Vec<bool>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn ret(&self) -> f64 {
        self.rewards.iter().sum()
    }

    fn validate(&self) -> Result<(), ReplayError> {
        let t = self.actions.len();
        if self.obs.len() != t + 1 || self.rewards.len() != t || self.terminals.len() != t {
            return Err(ReplayError::Misaligned(format!(
                "obs {} actions {} rewards {} terminals {}",
                self.obs.len(),
                t,
                self.rewards.len(),
                self.terminals.len()
            )));
        }
        if self.rewards.iter().any(|r| !r.is_finite()) {
            return Err(ReplayError::Misaligned("non-finite reward".into()));
        }
        Ok(())
    }
}

/// M-step slice of an episode. Steps with `mask[j] == false` are padding and
/// must contribute zero to every loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryChunk {
    pub task_id: usize,
    pub episode_id: u64,
    pub chunk_index: usize,
    pub is_episode_end: bool,
    /// M+1 observations; padded tail repeats the last real observation.
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub terminals: Vec<bool>,
    pub mask: Vec<bool>,
}

impl TrajectoryChunk {
    pub fn m(&self) -> usize {
        self.actions.len()
    }

    pub fn real_steps(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Split one episode into padded M-step chunks.
pub fn chunk_episode(episode: &Episode, m: usize, episode_id: u64) -> Vec<TrajectoryChunk> {
    assert!(m >= 1);
    let t = episode.len();
    if t == 0 {
        return Vec::new();
    }
    let n_chunks = t.div_ceil(m);
    let mut chunks = Vec::with_capacity(n_chunks);
    let action_dim = episode.actions[0].len();
    for c in 0..n_chunks {
        let start = c * m;
        let real = (t - start).min(m);
        let mut obs = Vec::with_capacity(m + 1);
        let mut actions = Vec::with_capacity(m);
        let mut rewards = Vec::with_capacity(m);
        let mut terminals = Vec::with_capacity(m);
        let mut mask = Vec::with_capacity(m);
        for j in 0..=real {
            obs.push(episode.obs[start + j].clone());
        }
        for j in 0..real {
            actions.push(episode.actions[start + j].clone());
            rewards.push(episode.rewards[start + j]);
            terminals.push(episode.terminals[start + j]);
            mask.push(true);
        }
        while obs.len() < m + 1 {
            obs.push(obs.last().expect("real >= 1").clone());
        }
        while actions.len() < m {
            actions.push(vec![0.0; action_dim]);
            rewards.push(0.0);
            terminals.push(false);
            mask.push(false);
        }
        chunks.push(TrajectoryChunk {
            task_id: episode.task_id,
            episode_id,
            chunk_index: c,
            is_episode_end: c == n_chunks - 1,
            obs,
            actions,
            rewards,
            terminals,
            mask,
        });
    }
    chunks
}

#[derive(Debug)]
struct Stored {
    chunk: Arc<TrajectoryChunk>,
    reuse: u32,
    seq: u64,
}

#[derive(Debug, Default)]
struct Inner {
    per_task: BTreeMap<usize, VecDeque<Stored>>,
    total: usize,
    seq: u64,
    episodes: u64,
}

/// Thread-safe chunk store: many appending actors, one sampling learner.
#[derive(Debug)]
pub struct ReplayBuffer {
    m: usize,
    capacity: usize,
    max_reuse: Option<u32>,
    inner: Mutex<Inner>,
}

impl ReplayBuffer {
    /// `max_reuse = None` disables the reuse cap (single-task adaptation).
    pub fn new(
        task_ids: impl IntoIterator<Item = usize>,
        m: usize,
        capacity: usize,
        max_reuse: Option<u32>,
    ) -> Self {
        assert!(m >= 1 && capacity >= 1);
        let per_task = task_ids
            .into_iter()
            .map(|id| (id, VecDeque::new()))
            .collect();
        Self {
            m,
            capacity,
            max_reuse,
            inner: Mutex::new(Inner {
                per_task,
                ..Inner::default()
            }),
        }
    }

    pub fn chunk_len(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().total
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task_len(&self, task_id: usize) -> usize {
        self.inner
            .lock()
            .unwrap()
            .per_task
            .get(&task_id)
            .map_or(0, VecDeque::len)
    }

    /// Whole-episode append; sampling never sees a partial episode. Returns
    /// the number of chunks added.
    pub fn append(&self, episode: &Episode) -> Result<usize, ReplayError> {
        episode.validate()?;
        if episode.is_empty() {
            return Ok(0);
        }
        let mut inner = self.inner.lock().unwrap();
        if !inner.per_task.contains_key(&episode.task_id) {
            return Err(ReplayError::UnknownTask(episode.task_id));
        }
        inner.episodes += 1;
        let episode_id = inner.episodes;
        let chunks = chunk_episode(episode, self.m, episode_id);
        let added = chunks.len();
        for chunk in chunks {
            let seq = inner.seq;
            inner.seq += 1;
            inner
                .per_task
                .get_mut(&episode.task_id)
                .expect("checked above")
                .push_back(Stored {
                    chunk: Arc::new(chunk),
                    reuse: 0,
                    seq,
                });
            inner.total += 1;
        }
        while inner.total > self.capacity {
            // Evict the globally oldest chunk (smallest sequence number
            // among queue fronts).
            let oldest = inner
                .per_task
                .iter()
                .filter_map(|(id, q)| q.front().map(|s| (s.seq, *id)))
                .min()
                .map(|(_, id)| id)
                .expect("total > 0");
            inner.per_task.get_mut(&oldest).unwrap().pop_front();
            inner.total -= 1;
        }
        Ok(added)
    }

    /// True once every listed task has at least one sampleable chunk.
    pub fn ready(&self, task_ids: &[usize]) -> bool {
        let inner = self.inner.lock().unwrap();
        task_ids.iter().all(|id| {
            inner.per_task.get(id).is_some_and(|q| {
                q.iter()
                    .any(|s| self.max_reuse.is_none_or(|cap| s.reuse < cap))
            })
        })
    }

    /// Uniform tasks with replacement, then uniform over that task's
    /// sampleable chunks. Reuse counters advance on every returned chunk.
    pub fn sample_batch(
        &self,
        task_ids: &[usize],
        batch_size: usize,
        rng: &mut SeedRng,
    ) -> Result<Vec<Arc<TrajectoryChunk>>, ReplayError> {
        assert!(batch_size >= 1 && !task_ids.is_empty());
        let mut inner = self.inner.lock().unwrap();
        let mut batch = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let task_id = task_ids[rng.index(task_ids.len())];
            let queue = inner
                .per_task
                .get_mut(&task_id)
                .ok_or(ReplayError::UnknownTask(task_id))?;
            let available: Vec<usize> = queue
                .iter()
                .enumerate()
                .filter(|(_, s)| self.max_reuse.is_none_or(|cap| s.reuse < cap))
                .map(|(i, _)| i)
                .collect();
            if available.is_empty() {
                return Err(ReplayError::NotReady { task_id });
            }
            let slot = available[rng.index(available.len())];
            let stored = &mut queue[slot];
            stored.reuse += 1;
            batch.push(Arc::clone(&stored.chunk));
        }
        Ok(batch)
    }

    /// Insertion-order snapshot of one task's chunks (reconstruction and
    /// audit use only; does not touch reuse counters).
    pub fn task_chunks(&self, task_id: usize) -> Vec<Arc<TrajectoryChunk>> {
        self.inner
            .lock()
            .unwrap()
            .per_task
            .get(&task_id)
            .map(|q| q.iter().map(|s| Arc::clone(&s.chunk)).collect())
            .unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn episode(task_id: usize, t: usize) -> Episode {
        Episode {
            task_id,
            obs: (0..=t).map(|j| vec![j as f64, -(j as f64)]).collect(),
            actions: (0..t).map(|j| vec![j as f64 * 0.1]).collect(),
            rewards: (0..t).map(|j| if j + 1 == t { 10.0 } else { -0.005 }).collect(),
            terminals: (0..t).map(|j| j + 1 == t).collect(),
        }
    }

    #[test]
    fn chunk_counts_and_padding() {
        let ep = episode(1, 25);
        let chunks = chunk_episode(&ep, 10, 1);
        assert_eq!(chunks.len(), 3);
        assert_eq!(chunks[0].real_steps(), 10);
        assert_eq!(chunks[2].real_steps(), 5);
        assert!(chunks[2].is_episode_end);
        assert!(!chunks[0].is_episode_end);
        for c in &chunks {
            assert_eq!(c.obs.len(), 11);
            assert_eq!(c.actions.len(), 10);
        }
        // Padded observations repeat the last real one.
        assert_eq!(chunks[2].obs[5], ep.obs[25]);
        assert_eq!(chunks[2].obs[10], ep.obs[25]);
        assert!(!chunks[2].mask[5]);
        assert_eq!(chunks[2].rewards[5], 0.0);
    }

    #[test]
    fn empty_episode_is_a_noop() {
        let ep = Episode {
            task_id: 1,
            obs: vec![vec![0.0]],
            actions: vec![],
            rewards: vec![],
            terminals: vec![],
        };
        let buf = ReplayBuffer::new([1], 10, 100, Some(8));
        assert_eq!(buf.append(&ep).unwrap(), 0);
        assert_eq!(buf.len(), 0);
    }

    #[test]
    fn reconstruction_reproduces_episodes() {
        let buf = ReplayBuffer::new([3], 4, 1000, Some(8));
        let eps = [episode(3, 9), episode(3, 4), episode(3, 13)];
        for ep in &eps {
            buf.append(ep).unwrap();
        }
        let chunks = buf.task_chunks(3);
        // Group by episode id in insertion order and rebuild.
        let mut rebuilt: Vec<Episode> = Vec::new();
        for c in chunks {
            if c.chunk_index == 0 {
                rebuilt.push(Episode {
                    task_id: c.task_id,
                    obs: vec![c.obs[0].clone()],
                    actions: vec![],
                    rewards: vec![],
                    terminals: vec![],
                });
            }
            let ep = rebuilt.last_mut().unwrap();
            for j in 0..c.m() {
                if c.mask[j] {
                    ep.obs.push(c.obs[j + 1].clone());
                    ep.actions.push(c.actions[j].clone());
                    ep.rewards.push(c.rewards[j]);
                    ep.terminals.push(c.terminals[j]);
                }
            }
        }
        assert_eq!(rebuilt.len(), eps.len());
        for (r, e) in rebuilt.iter().zip(&eps) {
            assert_eq!(r, e);
        }
    }

    #[test]
    fn fifo_eviction_drops_oldest() {
        let buf = ReplayBuffer::new([1], 10, 2, None);
        buf.append(&episode(1, 10)).unwrap(); // chunk seq 0
        buf.append(&episode(1, 10)).unwrap(); // seq 1
        buf.append(&episode(1, 10)).unwrap(); // seq 2, evicts seq 0
        assert_eq!(buf.len(), 2);
        let chunks = buf.task_chunks(1);
        assert_eq!(chunks[0].episode_id, 2);
        assert_eq!(chunks[1].episode_id, 3);
    }

    #[test]
    fn unknown_task_rejected() {
        let buf = ReplayBuffer::new([1], 10, 10, None);
        assert!(matches!(
            buf.append(&episode(9, 3)),
            Err(ReplayError::UnknownTask(9))
        ));
    }

    #[test]
    fn reuse_cap_excludes_then_not_ready() {
        let buf = ReplayBuffer::new([1], 10, 10, Some(3));
        buf.append(&episode(1, 5)).unwrap(); // one chunk
        let mut rng = SeedRng::new(1);
        for _ in 0..3 {
            let b = buf.sample_batch(&[1], 1, &mut rng).unwrap();
            assert_eq!(b.len(), 1);
        }
        assert!(matches!(
            buf.sample_batch(&[1], 1, &mut rng),
            Err(ReplayError::NotReady { task_id: 1 })
        ));
        // Chunk is excluded, not evicted.
        assert_eq!(buf.len(), 1);
        assert!(!buf.ready(&[1]));
        buf.append(&episode(1, 5)).unwrap();
        assert!(buf.ready(&[1]));
    }

    #[test]
    fn fixed_seed_identical_batches() {
        let mk = || {
            let buf = ReplayBuffer::new([1, 2], 5, 100, Some(8));
            for t in [1, 2] {
                buf.append(&episode(t, 12)).unwrap();
                buf.append(&episode(t, 7)).unwrap();
            }
            let mut rng = SeedRng::new(9);
            let batch = buf.sample_batch(&[1, 2], 8, &mut rng).unwrap();
            batch
                .iter()
                .map(|c| (c.task_id, c.episode_id, c.chunk_index))
                .collect::<Vec<_>>()
        };
        assert_eq!(mk(), mk());
    }

    #[test]
    fn sampling_is_roughly_uniform_over_two_chunks() {
        let buf = ReplayBuffer::new([1], 5, 100, None);
        buf.append(&episode(1, 5)).unwrap();
        buf.append(&episode(1, 5)).unwrap();
        let mut rng = SeedRng::new(17);
        let n = 10_000;
        let mut first = 0usize;
        for _ in 0..n {
            let b = buf.sample_batch(&[1], 1, &mut rng).unwrap();
            if b[0].episode_id == 1 {
                first += 1;
            }
        }
        let frac = first as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.02, "fraction {frac}");
    }

    #[test]
    fn concurrent_appends_and_samples() {
        use std::thread;
        let buf = Arc::new(ReplayBuffer::new([1, 2, 3, 4], 10, 10_000, Some(64)));
        let writers: Vec<_> = (1..=4)
            .map(|task| {
                let buf = Arc::clone(&buf);
                thread::spawn(move || {
                    for _ in 0..50 {
                        buf.append(&episode(task, 23)).unwrap();
                    }
                })
            })
            .collect();
        let reader = {
            let buf = Arc::clone(&buf);
            thread::spawn(move || {
                let mut rng = SeedRng::new(5);
                let mut drawn = 0usize;
                while drawn < 200 {
                    if let Ok(b) = buf.sample_batch(&[1, 2, 3, 4], 4, &mut rng) {
                        // Episode atomicity: a drawn chunk is fully formed.
                        for c in &b {
                            assert_eq!(c.obs.len(), 11);
                        }
                        drawn += b.len();
                    }
                }
            })
        };
        for w in writers {
            w.join().unwrap();
        }
        reader.join().unwrap();
        assert_eq!(buf.len(), 4 * 50 * 3); // 23 steps → 3 chunks each
    }
}
