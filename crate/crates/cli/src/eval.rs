//! `rca eval`: execute each run's generated script, join reviewer scores and
//! print the three metric tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::time::Duration;

use rca_core::evaluation::{aggregate, combine_scores, lines_edited, render_tables, RunAssessment, ScoreRow};
use rca_core::executor::{execute_script, ExecOptions};
use rca_core::planner::OUTPUT_SCRIPT;
use rca_core::workspace::{FileRole, Workspace};

use crate::run::{RunManifest, MANIFEST_FILE};
use crate::{load_config, CliError, CliResult, EvalArgs};

fn read_scores(path: &Path) -> CliResult<Vec<ScoreRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::usage(format!("cannot read scores {}: {e}", path.display())))?;
    reader
        .deserialize()
        .collect::<Result<Vec<ScoreRow>, _>>()
        .map_err(|e| CliError::usage(format!("bad scores file {}: {e}", path.display())))
}

/// Run directories under `runs_dir` that carry a manifest, sorted by name.
fn find_runs(runs_dir: &Path) -> CliResult<Vec<std::path::PathBuf>> {
    let entries = fs::read_dir(runs_dir)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", runs_dir.display())))?;
    let mut dirs: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST_FILE).is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn assess(run_dir: &Path, manifest: &RunManifest, exec: &ExecOptions) -> CliResult<RunAssessment> {
    let fail = |e: String| CliError::failure(format!("run {}: {e}", manifest.run_id));
    let ws = Workspace::open(run_dir.join(&manifest.artifacts.workspace_copy)).map_err(|e| fail(e.to_string()))?;
    let baseline = ws.read_baseline_performance().map_err(|e| fail(e.to_string()))?;
    let mut assessment = RunAssessment {
        run_id: manifest.run_id.clone(),
        task: ws.task().to_string(),
        experiment: manifest.mode.to_string(),
        code_generated: false,
        executes_clean: false,
        final_performance: None,
        baseline_performance: baseline.value,
        perf_direction: baseline.direction,
        manual_score: None,
        lines_edited: 0,
        lines_repaired: None,
    };
    if manifest.artifacts.generated_script.is_none() || !ws.exists(OUTPUT_SCRIPT) {
        return Ok(assessment);
    }
    assessment.code_generated = true;
    let starter = ws.read_text(ws.path_for(FileRole::StarterCode)).map_err(|e| fail(e.to_string()))?;
    let generated = ws.read_text(OUTPUT_SCRIPT).map_err(|e| fail(e.to_string()))?;
    assessment.lines_edited = lines_edited(&starter, &generated);
    let mut opts = exec.clone();
    if opts.timeout.is_zero() {
        opts.timeout = Duration::from_secs(ws.timeout_secs());
    }
    let report = execute_script(&ws, OUTPUT_SCRIPT, &[], &opts).map_err(|e| fail(e.to_string()))?;
    assessment.executes_clean = report.exit_status == 0 && !report.timed_out;
    assessment.final_performance = report.extracted_performance;
    Ok(assessment)
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult<u8> {
    let (config, _) = load_config(args.config.as_deref())?;
    let run_dirs = find_runs(&args.runs_dir)?;
    if run_dirs.is_empty() {
        return Err(CliError::failure(format!("no runs found in {}", args.runs_dir.display())));
    }
    let mut exec = config.agent_options().exec;
    exec.timeout = config.executor.timeout_secs.map(Duration::from_secs).unwrap_or_default();

    let mut assessments = Vec::new();
    for dir in &run_dirs {
        let manifest = RunManifest::load(dir).map_err(CliError::failure)?;
        assessments.push(assess(dir, &manifest, &exec)?);
    }

    if let Some(path) = &args.scores {
        let combined = combine_scores(&read_scores(path)?).map_err(CliError::usage)?;
        let known: BTreeSet<&str> = assessments.iter().map(|a| a.run_id.as_str()).collect();
        let unknown: Vec<&str> = combined.keys().map(String::as_str).filter(|id| !known.contains(id)).collect();
        if !unknown.is_empty() {
            return Err(CliError::usage(format!(
                "scores reference unknown run ids: {}",
                unknown.join(", ")
            )));
        }
        let by_id: BTreeMap<_, _> = combined.into_iter().collect();
        for a in &mut assessments {
            if let Some(s) = by_id.get(&a.run_id) {
                a.manual_score = Some(s.manual_score);
                a.lines_repaired = Some(s.lines_repaired);
            }
        }
    }

    let report = aggregate(&assessments).map_err(CliError::failure)?;
    let tables = render_tables(&report);
    print!("{tables}");
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(out) = &args.out {
        fs::create_dir_all(out).map_err(CliError::failure)?;
        fs::write(out.join("metrics.txt"), &tables).map_err(CliError::failure)?;
        write_csv(&out.join("runs.csv"), &report.runs)?;
        write_csv(&out.join("groups.csv"), &report.groups)?;
    }
    Ok(0)
}

fn write_csv<T: serde::Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(CliError::failure)?;
    for r in rows {
        w.serialize(r).map_err(CliError::failure)?;
    }
    w.flush().map_err(CliError::failure)
}
