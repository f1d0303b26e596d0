use super::{EnvError, Observation, Split, TaskConditioning, TaskSpec};
use crate::rng::SeedRng;

pub const ARENA_HALF_WIDTH: f64 = 4.0;
pub const GOAL_RADIUS: f64 = 0.3;
pub const MAX_STEPS: usize = 100;
const DT: f64 = 0.1;
const GOAL_REWARD: f64 = 10.0;
const STEP_PENALTY: f64 = -0.005;

/// One environment step. `done` ends the episode; `terminal` marks a true
/// MDP termination (goal reached) as opposed to the timeout truncation —
/// only non-terminal bootstrapping targets may look past a truncation.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub terminal: bool,
}

/// Sparse 2-D goal navigation: velocity control in an [−4,4]² arena, reward
/// 10 inside the 0.3 m goal disc, −0.005 every other step, 100-step budget.
/// Goals live on rings with radius in [1, 3].
#[derive(Debug, Clone)]
pub struct SparseNav2D {
    task: TaskSpec,
    position: [f64; 2],
    steps: usize,
    done: bool,
    started: bool,
}

impl SparseNav2D {
    pub fn new(task: TaskSpec) -> Self {
        assert_eq!(task.goal.len(), 2, "planar goals only");
        Self {
            task,
            position: [0.0; 2],
            steps: 0,
            done: true,
            started: false,
        }
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn obs_dim() -> usize {
        2
    }

    pub fn action_dim() -> usize {
        2
    }

    fn observation(&self) -> Observation {
        let full = vec![self.position[0], self.position[1]];
        let conditioning = match self.task.split {
            Split::Train => Some(TaskConditioning::Goal(self.task.goal.clone())),
            Split::Test => None,
        };
        Observation {
            prior_view: full.clone(),
            full,
            task_conditioning: conditioning,
        }
    }

    /// Start an episode. Train tasks spawn uniformly in the arena; test
    /// tasks reuse one fixed spawn for the whole meta-episode, derived from
    /// the task seed.
    pub fn reset(&mut self, rng: &mut SeedRng) -> Observation {
        self.position = match self.task.split {
            Split::Train => [
                rng.uniform(-ARENA_HALF_WIDTH, ARENA_HALF_WIDTH),
                rng.uniform(-ARENA_HALF_WIDTH, ARENA_HALF_WIDTH),
            ],
            Split::Test => {
                let mut fixed = SeedRng::new(self.task.seed).child_named("test_spawn");
                [
                    fixed.uniform(-ARENA_HALF_WIDTH, ARENA_HALF_WIDTH),
                    fixed.uniform(-ARENA_HALF_WIDTH, ARENA_HALF_WIDTH),
                ]
            }
        };
        self.steps = 0;
        self.done = false;
        self.started = true;
        self.observation()
    }

    pub fn at_goal(&self) -> bool {
        let dx = self.position[0] - self.task.goal[0];
        let dy = self.position[1] - self.task.goal[1];
        (dx * dx + dy * dy).sqrt() <= GOAL_RADIUS
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvError> {
        if self.done || !self.started {
            return Err(EnvError::EpisodeOver);
        }
        if action.len() != 2 || action.iter().any(|a| !a.is_finite()) {
            return Err(EnvError::NonFiniteAction);
        }
        for i in 0..2 {
            let v = action[i].clamp(-1.0, 1.0);
            self.position[i] =
                (self.position[i] + v * DT).clamp(-ARENA_HALF_WIDTH, ARENA_HALF_WIDTH);
        }
        self.steps += 1;
        let terminal = self.at_goal();
        let truncated = self.steps >= MAX_STEPS;
        self.done = terminal || truncated;
        Ok(StepResult {
            obs: self.observation(),
            reward: if terminal { GOAL_REWARD } else { STEP_PENALTY },
            done: self.done,
            terminal,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::sample_task_set;

    fn train_task(goal: [f64; 2]) -> TaskSpec {
        TaskSpec {
            task_id: 1,
            split: Split::Train,
            goal: goal.to_vec(),
            seed: 77,
        }
    }

    #[test]
    fn spawn_at_goal_terminates_first_step() {
        // Max displacement per step is √2·0.1 < 0.3, so starting inside the
        // disc cannot escape it in one step.
        let mut env = SparseNav2D::new(train_task([0.0, 0.0]));
        let mut rng = SeedRng::new(1);
        env.reset(&mut rng);
        env.position = [0.0, 0.0];
        let r = env.step(&[1.0, 1.0]).unwrap();
        assert_eq!(r.reward, 10.0);
        assert!(r.done && r.terminal);
    }

    #[test]
    fn zero_actions_time_out_at_half_negative() {
        let mut env = SparseNav2D::new(train_task([3.0, 0.0]));
        let mut rng = SeedRng::new(2);
        env.reset(&mut rng);
        env.position = [-3.0, 0.0];
        let mut total = 0.0;
        let mut steps = 0;
        loop {
            let r = env.step(&[0.0, 0.0]).unwrap();
            total += r.reward;
            steps += 1;
            if r.done {
                assert!(!r.terminal, "timeout is a truncation, not a terminal");
                break;
            }
        }
        assert_eq!(steps, MAX_STEPS);
        assert!((total - (-0.5)).abs() < 1e-12);
        assert!(matches!(env.step(&[0.0, 0.0]), Err(EnvError::EpisodeOver)));
    }

    #[test]
    fn actions_clip_to_unit_velocity() {
        let mut env = SparseNav2D::new(train_task([3.0, 0.0]));
        let mut rng = SeedRng::new(3);
        env.reset(&mut rng);
        env.position = [0.0, 0.0];
        let r = env.step(&[2.0, 0.0]).unwrap();
        assert_eq!(r.obs.full, vec![0.1, 0.0]);
        assert_eq!(r.reward, STEP_PENALTY);
    }

    #[test]
    fn arena_walls_clamp_position() {
        let mut env = SparseNav2D::new(train_task([0.0, 0.0]));
        let mut rng = SeedRng::new(4);
        env.reset(&mut rng);
        env.position = [ARENA_HALF_WIDTH, -ARENA_HALF_WIDTH];
        let r = env.step(&[1.0, -1.0]).unwrap();
        assert_eq!(r.obs.full, vec![ARENA_HALF_WIDTH, -ARENA_HALF_WIDTH]);
    }

    #[test]
    fn rewards_take_only_two_values() {
        let ts = sample_task_set("sparse_nav2d", 2, 1, 11);
        let mut env = SparseNav2D::new(ts.tasks[0].clone());
        let mut rng = SeedRng::new(5);
        for _ in 0..20 {
            env.reset(&mut rng);
            loop {
                let a = [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)];
                let r = env.step(&a).unwrap();
                assert!(r.reward == 10.0 || r.reward == -0.005, "reward {}", r.reward);
                if r.done {
                    break;
                }
            }
        }
    }

    #[test]
    fn test_split_spawn_is_fixed_train_is_random() {
        let ts = sample_task_set("sparse_nav2d", 1, 1, 8);
        let test_task = ts.test().next().unwrap().clone();
        let mut env = SparseNav2D::new(test_task);
        let mut rng = SeedRng::new(6);
        let o1 = env.reset(&mut rng);
        let o2 = env.reset(&mut rng);
        assert_eq!(o1.full, o2.full, "test spawn must be fixed");
        assert!(o1.task_conditioning.is_none(), "test tasks expose no goal");

        let train_task = ts.train().next().unwrap().clone();
        let mut env = SparseNav2D::new(train_task);
        let a = env.reset(&mut rng);
        let b = env.reset(&mut rng);
        assert_ne!(a.full, b.full, "train spawn should vary");
        assert!(a.task_conditioning.is_some());
    }

    #[test]
    fn train_spawns_cover_the_arena() {
        // Coarse uniformity check: each quadrant collects roughly a quarter
        // of 10⁴ spawns.
        let ts = sample_task_set("sparse_nav2d", 1, 1, 13);
        let mut env = SparseNav2D::new(ts.train().next().unwrap().clone());
        let mut rng = SeedRng::new(7);
        let n = 10_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            let o = env.reset(&mut rng);
            let q = (o.full[0] >= 0.0) as usize * 2 + (o.full[1] >= 0.0) as usize;
            counts[q] += 1;
        }
        for c in counts {
            let frac = c as f64 / n as f64;
            assert!((frac - 0.25).abs() < 0.02, "quadrant fraction {frac}");
        }
    }

    #[test]
    fn prior_view_matches_full_projection() {
        let ts = sample_task_set("sparse_nav2d", 1, 1, 21);
        let mut env = SparseNav2D::new(ts.tasks[0].clone());
        let mut rng = SeedRng::new(9);
        let o = env.reset(&mut rng);
        assert_eq!(o.prior_view, o.full[..2].to_vec());
    }
}
