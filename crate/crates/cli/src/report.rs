//! `iwrl report`: merge curves from adaptation run directories into
//! per-variant mean return curves with 95% confidence bands, ready for
//! external plotting.

use crate::util::{mean_ci95, write_text};
use crate::{CliError, ReportArgs};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

fn read_env(dir: &Path) -> Result<String, CliError> {
    let path = dir.join("provenance.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Artifact(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Artifact(format!("{}: {e}", path.display())))?;
    value
        .get("env")
        .and_then(|v| v.as_str())
        .map(str::to_string)
        .ok_or_else(|| CliError::Artifact(format!("{}: missing env field", path.display())))
}

fn read_curves(dir: &Path) -> Result<Vec<(String, usize, f64)>, CliError> {
    let path = dir.join("curves.csv");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Artifact(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let bad = || CliError::Artifact(format!("{} line {}: malformed row", path.display(), i + 1));
        if fields.len() != 6 {
            return Err(bad());
        }
        let episode: usize = fields[0].parse().map_err(|_| bad())?;
        let ret: f64 = fields[1].parse().map_err(|_| bad())?;
        rows.push((fields[3].to_string(), episode, ret));
    }
    Ok(rows)
}

pub fn run(args: ReportArgs) -> Result<(), CliError> {
    if args.run_dirs.is_empty() {
        return Err(CliError::Config("report needs at least one run directory".into()));
    }
    let mut env: Option<String> = None;
    let mut grouped: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    for dir in &args.run_dirs {
        let this_env = read_env(dir)?;
        match &env {
            None => env = Some(this_env),
            Some(e) if *e != this_env => {
                return Err(CliError::Config(format!(
                    "mixed env families: {e:?} vs {this_env:?} in {}",
                    dir.display()
                )))
            }
            _ => {}
        }
        for (variant, episode, ret) in read_curves(dir)? {
            grouped.entry((variant, episode)).or_default().push(ret);
        }
    }
    let mut out = String::from("variant,episode,mean_return,ci_lo,ci_hi,n\n");
    for ((variant, episode), returns) in &grouped {
        let (mean, hw) = mean_ci95(returns);
        writeln!(
            out,
            "{},{},{},{},{},{}",
            variant,
            episode,
            mean,
            mean - hw,
            mean + hw,
            returns.len()
        )
        .expect("string write");
    }
    write_text(&args.output, &out)?;
    println!(
        "report: {} (variant, episode) rows → {}",
        grouped.len(),
        args.output.display()
    );
    Ok(())
}
