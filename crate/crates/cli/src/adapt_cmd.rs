//! `iwrl adapt`: run every (variant × held-out task × seed) cell against a
//! pretrained checkpoint, writing tidy curves and a per-variant summary.

use crate::config::ExperimentConfig;
use crate::util::{create_run_dir, median, resolve_output_dir, sha256_file, write_json, write_text};
use crate::{AdaptArgs, CliError};
use iwrl_core::adapt::{run_adaptation, AdaptError, AdaptVariant, PretrainedBundle};
use iwrl_core::env::TaskSet;
use iwrl_core::nets::Checkpoint;
use iwrl_core::rng::SeedRng;
use std::collections::BTreeMap;
use std::fmt::Write as _;

pub(crate) struct CurveRow {
    pub episode: usize,
    pub ret: f64,
    pub success: bool,
    pub variant: AdaptVariant,
    pub task_id: usize,
    pub seed: u64,
}

pub(crate) fn curves_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from("episode,return,success,variant,task_id,seed\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.episode,
            r.ret,
            u8::from(r.success),
            r.variant,
            r.task_id,
            r.seed
        )
        .expect("string write");
    }
    out
}

/// Causal rolling mean over the return column within each cell; everything
/// else is copied through.
pub(crate) fn smoothed_csv(rows: &[CurveRow], window: usize) -> String {
    let window = window.max(1);
    let mut out = String::from("episode,return,success,variant,task_id,seed\n");
    let mut cells: BTreeMap<(String, usize, u64), Vec<&CurveRow>> = BTreeMap::new();
    for r in rows {
        cells
            .entry((r.variant.to_string(), r.task_id, r.seed))
            .or_default()
            .push(r);
    }
    for cell in cells.values() {
        for (i, r) in cell.iter().enumerate() {
            let lo = (i + 1).saturating_sub(window);
            let mean =
                cell[lo..=i].iter().map(|r| r.ret).sum::<f64>() / (i - lo + 1) as f64;
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.episode,
                mean,
                u8::from(r.success),
                r.variant,
                r.task_id,
                r.seed
            )
            .expect("string write");
        }
    }
    out
}

fn artifact_or_failed(e: AdaptError) -> CliError {
    match e {
        AdaptError::Meta(_)
        | AdaptError::MissingPart { .. }
        | AdaptError::Incompatible { .. }
        | AdaptError::Checkpoint(_) => CliError::Artifact(e.to_string()),
        other => CliError::Failed(format!("adaptation: {other}")),
    }
}

pub fn run(args: AdaptArgs) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let variant_names = if args.variants.is_empty() {
        cfg.variants.clone()
    } else {
        args.variants.clone()
    };
    let variants: Vec<AdaptVariant> = variant_names
        .iter()
        .map(|v| v.parse().map_err(CliError::Config))
        .collect::<Result<_, _>>()?;
    let seeds = if args.seeds.is_empty() {
        cfg.seeds.clone()
    } else {
        args.seeds.clone()
    };

    let task_set = TaskSet::load(&args.task_set)
        .map_err(|e| CliError::Artifact(format!("task set {}: {e}", args.task_set.display())))?;
    if task_set.family != cfg.env {
        return Err(CliError::Artifact(format!(
            "task set family {:?} does not match config env {:?}",
            task_set.family, cfg.env
        )));
    }
    let test_tasks: Vec<_> = task_set.test().cloned().collect();
    if test_tasks.is_empty() {
        return Err(CliError::Config("task set holds no test tasks".into()));
    }
    let ckpt = Checkpoint::load(&args.checkpoint).map_err(|e| {
        CliError::Artifact(format!("checkpoint {}: {e}", args.checkpoint.display()))
    })?;

    let base = resolve_output_dir(args.output_dir, &cfg.output_dir);
    let dir = create_run_dir(&base, "adapt")?;

    let mut rows: Vec<CurveRow> = Vec::new();
    let mut summary = serde_json::Map::new();
    for &variant in &variants {
        let bundle = if variant.needs_prior() || variant.needs_features() {
            Some(PretrainedBundle::load_for_variant(&ckpt, variant).map_err(artifact_or_failed)?)
        } else {
            None
        };
        let mut first_success: Vec<f64> = Vec::new();
        let mut eval_returns: Vec<f64> = Vec::new();
        let mut successes = 0usize;
        for task in &test_tasks {
            for &seed in &seeds {
                let mut rng = SeedRng::new(seed)
                    .child_named(variant.as_str())
                    .child(task.task_id as u64);
                let protocol = cfg.adapt_protocol(variant);
                let outcome = run_adaptation(bundle.as_ref(), task, &protocol, &mut rng)
                    .map_err(artifact_or_failed)?;
                for (episode, (&ret, &success)) in outcome
                    .returns
                    .iter()
                    .zip(&outcome.successes)
                    .enumerate()
                {
                    rows.push(CurveRow {
                        episode,
                        ret,
                        success,
                        variant,
                        task_id: task.task_id,
                        seed,
                    });
                }
                // Censored cells count as one past the budget.
                first_success.push(
                    outcome
                        .episodes_to_first_success
                        .unwrap_or(protocol.episodes + 1) as f64,
                );
                eval_returns.push(outcome.eval_return);
                successes += usize::from(outcome.success);
            }
        }
        let cells = first_success.len();
        summary.insert(
            variant.to_string(),
            serde_json::json!({
                "cells": cells,
                "median_episodes_to_first_success": median(&mut first_success),
                "success_rate": successes as f64 / cells as f64,
                "mean_eval_return": eval_returns.iter().sum::<f64>() / cells as f64,
            }),
        );
        println!(
            "adapt[{variant}]: {} cells, success rate {:.3}",
            cells,
            successes as f64 / cells as f64
        );
    }

    write_text(&dir.join("curves.csv"), &curves_csv(&rows))?;
    if let Some(window) = args.smooth_window {
        write_text(
            &dir.join("curves_smoothed.csv"),
            &smoothed_csv(&rows, window),
        )?;
    }
    write_json(&dir.join("summary.json"), &serde_json::Value::Object(summary))?;
    let resolved = serde_json::to_value(&cfg)
        .map_err(|e| CliError::Failed(format!("resolve config: {e}")))?;
    write_json(&dir.join("resolved_config.json"), &resolved)?;
    write_json(
        &dir.join("provenance.json"),
        &serde_json::json!({
            "command": "adapt",
            "env": cfg.env,
            "seeds": seeds,
            "variants": variant_names,
            "checkpoint": args.checkpoint.display().to_string(),
            "checkpoint_sha256": sha256_file(&args.checkpoint)?,
            "task_set_sha256": sha256_file(&args.task_set)?,
        }),
    )?;
    println!("adapt: wrote {} curve rows → {}", rows.len(), dir.display());
    Ok(())
}
