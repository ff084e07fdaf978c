//! Several methods on one problem instance, merged into a single trace table.

use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::outputs::{self, TraceRow};
use crate::runner::{execute_on, write_outputs, RunOutput};

/// Refuses unless every config describes the same problem instance.
pub fn check_compatible(configs: &[RunConfig]) -> Result<()> {
    if configs.len() < 2 {
        return Err(CliError::Mismatch("need at least two run configs".into()));
    }
    let first = &configs[0];
    for (k, c) in configs.iter().enumerate().skip(1) {
        if c.seed != first.seed {
            return Err(CliError::Mismatch(format!(
                "config {k} uses seed {} but config 0 uses seed {}",
                c.seed, first.seed
            )));
        }
        if c.problem != first.problem {
            return Err(CliError::Mismatch(format!(
                "config {k} describes problem {} ({}) which differs from config 0's {} ({})",
                c.problem.name(),
                c.preset,
                first.problem.name(),
                first.preset
            )));
        }
    }
    Ok(())
}

/// Stable sort by `(method, wall_time_s)`.
pub fn merge_traces(outputs: &[RunOutput]) -> Vec<TraceRow> {
    let mut rows: Vec<TraceRow> = outputs.iter().flat_map(|o| o.trace.iter().cloned()).collect();
    rows.sort_by(|a, b| a.method.cmp(&b.method).then(a.wall_time_s.total_cmp(&b.wall_time_s)));
    rows
}

pub struct CompareOutput {
    pub runs: Vec<RunOutput>,
    pub merged: Vec<TraceRow>,
}

/// Builds the problem once and runs every config on it.
pub fn compare(configs: &[RunConfig]) -> Result<CompareOutput> {
    check_compatible(configs)?;
    let problem = configs[0].problem.build()?;
    let runs = configs
        .iter()
        .map(|c| execute_on(&problem, c))
        .collect::<Result<Vec<_>>>()?;
    let merged = merge_traces(&runs);
    Ok(CompareOutput { runs, merged })
}

/// Per-run outputs go to `<dir>/<k>_<method>/`, the merged table to `<dir>/compare.csv`.
pub fn write_compare(dir: &Path, configs: &[RunConfig], out: &CompareOutput) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (k, (cfg, run)) in configs.iter().zip(&out.runs).enumerate() {
        let sub = dir.join(format!("{k}_{}", cfg.method));
        written.extend(write_outputs(&sub, cfg, run)?);
    }
    let p = dir.join(outputs::COMPARE_FILE);
    outputs::write_trace(&p, &out.merged)?;
    written.push(p);
    Ok(written)
}
