//! `iwrl train`: multi-task training from a config file into a run
//! directory holding the resolved config, task set, metrics, checkpoint,
//! and provenance.

use crate::config::ExperimentConfig;
use crate::util::{create_run_dir, resolve_output_dir, sha256_file, write_json};
use crate::{CliError, TrainArgs};
use iwrl_core::env::sample_task_set;
use iwrl_core::learner::run_training;
use iwrl_core::metrics::MetricsWriter;

pub fn run(args: TrainArgs) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let seed = args.seed.unwrap_or(cfg.seeds[0]);
    let base = resolve_output_dir(args.output_dir, &cfg.output_dir);
    let dir = create_run_dir(&base, &format!("train_seed{seed}"))?;

    let tasks = sample_task_set(&cfg.env, cfg.n_train, cfg.n_test, cfg.task_seed);
    tasks
        .save(&dir.join("task_set.json"))
        .map_err(|e| CliError::Failed(format!("task set: {e}")))?;

    let train_cfg = cfg.training_config(args.deterministic, seed);
    let mut writer = MetricsWriter::create(&dir.join("metrics.jsonl"), args.deterministic)
        .map_err(|e| CliError::Failed(format!("metrics: {e}")))?;
    let train_tasks: Vec<_> = tasks.train().cloned().collect();
    let outcome = run_training(&train_tasks, &train_cfg, &mut writer)
        .map_err(|e| CliError::Failed(format!("training: {e}")))?;

    let ckpt_path = dir.join("checkpoint.ckpt");
    outcome
        .state
        .to_checkpoint()
        .save(&ckpt_path)
        .map_err(|e| CliError::Failed(format!("checkpoint: {e}")))?;

    let resolved = serde_json::to_value(&cfg)
        .map_err(|e| CliError::Failed(format!("resolve config: {e}")))?;
    write_json(&dir.join("resolved_config.json"), &resolved)?;
    write_json(
        &dir.join("provenance.json"),
        &serde_json::json!({
            "command": "train",
            "env": cfg.env,
            "seed": seed,
            "deterministic": args.deterministic,
            "checkpoint_sha256": sha256_file(&ckpt_path)?,
            "episodes": outcome.episodes,
            "learner_steps": outcome.learner_steps,
            "trailing_success": outcome.trailing_success,
            "solved": outcome.solved,
        }),
    )?;

    println!(
        "train: {} episodes, {} learner steps, trailing success {:.3}{} → {}",
        outcome.episodes,
        outcome.learner_steps,
        outcome.trailing_success,
        if outcome.solved { " (solved)" } else { "" },
        dir.display()
    );
    Ok(())
}
