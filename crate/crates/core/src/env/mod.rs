//! Desk-scale task distributions: sparse goal-reaching navigation with
//! train/test splits and information asymmetry, plus finite MDPs for exact
//! verification.

mod finite;
mod nav;

pub use finite::FiniteMdp;
pub use nav::{SparseNav2D, StepResult, ARENA_HALF_WIDTH, GOAL_RADIUS, MAX_STEPS};

use crate::rng::SeedRng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("step called after the episode ended")]
    EpisodeOver,
    #[error("non-finite action")]
    NonFiniteAction,
    #[error("task {0} not in task set")]
    UnknownTask(usize),
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),
    #[error("task set i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("task set parse: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// One task: a goal position plus its split and seed. Task ids run from 1
/// to n_train + n_test; ids themselves carry no structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: usize,
    pub split: Split,
    pub goal: Vec<f64>,
    pub seed: u64,
}

/// What a learner component is allowed to condition on. Test tasks expose
/// nothing beyond the observation itself.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskConditioning {
    TaskId(usize),
    Goal(Vec<f64>),
}

/// Environment observation with the asymmetric views: `prior_view` is a
/// fixed coordinate projection of `full` and never contains task identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub full: Vec<f64>,
    pub prior_view: Vec<f64>,
    pub task_conditioning: Option<TaskConditioning>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSet {
    pub family: String,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub tasks: Vec<TaskSpec>,
}

impl TaskSet {
    pub fn train(&self) -> impl Iterator<Item = &TaskSpec> {
        self.tasks.iter().filter(|t| t.split == Split::Train)
    }

    pub fn test(&self) -> impl Iterator<Item = &TaskSpec> {
        self.tasks.iter().filter(|t| t.split == Split::Test)
    }

    pub fn task(&self, task_id: usize) -> Result<&TaskSpec, EnvError> {
        self.tasks
            .iter()
            .find(|t| t.task_id == task_id)
            .ok_or(EnvError::UnknownTask(task_id))
    }

    pub fn save(&self, path: &Path) -> Result<(), EnvError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EnvError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Draw disjoint train and test goal sets. Goals sit on rings: angle
/// uniform in [0, 2π), radius uniform in [1, 3].
pub fn sample_task_set(family: &str, n_train: usize, n_test: usize, seed: u64) -> TaskSet {
    assert!(n_train >= 1 && n_test >= 1);
    let mut rng = SeedRng::new(seed).child_named("task_set");
    let mut tasks = Vec::with_capacity(n_train + n_test);
    for i in 0..n_train + n_test {
        let angle = rng.uniform(0.0, std::f64::consts::TAU);
        let radius = rng.uniform(1.0, 3.0);
        let split = if i < n_train { Split::Train } else { Split::Test };
        tasks.push(TaskSpec {
            task_id: i + 1,
            split,
            goal: vec![radius * angle.cos(), radius * angle.sin()],
            seed: rng.raw_u64(),
        });
    }
    TaskSet {
        family: family.to_string(),
        n_train,
        n_test,
        seed,
        tasks,
    }
}
