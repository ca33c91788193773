//! Run metrics: outcome categories, quality bins, lines edited and repaired,
//! time saving, and per-task aggregates.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::workspace::{diff_texts, PerfDirection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    A,
    B,
    C,
    D,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::A, Category::B, Category::C, Category::D];
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QualityBin {
    S1,
    S2,
    S3,
}

impl QualityBin {
    pub const ALL: [QualityBin; 3] = [QualityBin::S1, QualityBin::S2, QualityBin::S3];
}

impl fmt::Display for QualityBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("manual score {0} is outside 1-10")]
    ScoreOutOfRange(i64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunAssessment {
    pub run_id: String,
    pub task: String,
    pub experiment: String,
    pub code_generated: bool,
    pub executes_clean: bool,
    pub final_performance: Option<f64>,
    pub baseline_performance: f64,
    pub perf_direction: PerfDirection,
    pub manual_score: Option<u8>,
    pub lines_edited: usize,
    pub lines_repaired: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub category: Category,
    pub warning: Option<String>,
}

pub fn classify_outcome(a: &RunAssessment) -> Outcome {
    let plain = |category| Outcome {
        category,
        warning: None,
    };
    if !a.code_generated {
        return plain(Category::D);
    }
    if !a.executes_clean {
        return plain(Category::C);
    }
    match a.final_performance {
        Some(p) if a.perf_direction.improves(p, a.baseline_performance) => plain(Category::A),
        Some(_) => plain(Category::B),
        None => Outcome {
            category: Category::B,
            warning: Some(format!(
                "run {} executed cleanly but reported no performance; counted as B",
                a.run_id
            )),
        },
    }
}

pub fn bin_quality(score: i64) -> Result<QualityBin, EvalError> {
    match score {
        8..=10 => Ok(QualityBin::S1),
        4..=7 => Ok(QualityBin::S2),
        1..=3 => Ok(QualityBin::S3),
        other => Err(EvalError::ScoreOutOfRange(other)),
    }
}

/// Added plus removed lines of the minimal line diff.
pub fn lines_edited(starter: &str, final_text: &str) -> usize {
    diff_texts("starter", "final", starter, final_text).lines_changed()
}

/// `(1 − repaired / edited) × 100`; undefined when nothing was edited.
pub fn time_saving(lines_edited: usize, lines_repaired: usize) -> Option<f64> {
    (lines_edited > 0).then(|| (1.0 - lines_repaired as f64 / lines_edited as f64) * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub run_id: String,
    pub task: String,
    pub experiment: String,
    pub category: Category,
    pub quality_bin: Option<QualityBin>,
    pub manual_score: Option<u8>,
    pub lines_edited: usize,
    pub lines_repaired: Option<usize>,
    pub time_saving: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub task: String,
    pub experiment: String,
    pub runs: usize,
    pub pct_a: f64,
    pub pct_b: f64,
    pub pct_c: f64,
    pub pct_d: f64,
    pub scored_runs: usize,
    pub pct_s1: Option<f64>,
    pub pct_s2: Option<f64>,
    pub pct_s3: Option<f64>,
    pub avg_lines_edited: Option<f64>,
    pub avg_lines_repaired: Option<f64>,
    pub avg_time_saving: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub runs: Vec<RunRow>,
    /// One row per (task, experiment), then one per experiment over all tasks
    /// (task `all`).
    pub groups: Vec<GroupRow>,
    pub warnings: Vec<String>,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn group_row(task: &str, experiment: &str, rows: &[&RunRow]) -> GroupRow {
    let n = rows.len() as f64;
    let pct = |c: Category| rows.iter().filter(|r| r.category == c).count() as f64 * 100.0 / n;
    let scored: Vec<QualityBin> = rows.iter().filter_map(|r| r.quality_bin).collect();
    let bin_pct = |b: QualityBin| {
        (!scored.is_empty())
            .then(|| scored.iter().filter(|x| **x == b).count() as f64 * 100.0 / scored.len() as f64)
    };
    let edited: Vec<f64> = rows
        .iter()
        .filter(|r| r.category != Category::D)
        .map(|r| r.lines_edited as f64)
        .collect();
    let repaired: Vec<f64> = rows.iter().filter_map(|r| r.lines_repaired.map(|x| x as f64)).collect();
    let saving: Vec<f64> = rows.iter().filter_map(|r| r.time_saving).collect();
    GroupRow {
        task: task.to_string(),
        experiment: experiment.to_string(),
        runs: rows.len(),
        pct_a: pct(Category::A),
        pct_b: pct(Category::B),
        pct_c: pct(Category::C),
        pct_d: pct(Category::D),
        scored_runs: scored.len(),
        pct_s1: bin_pct(QualityBin::S1),
        pct_s2: bin_pct(QualityBin::S2),
        pct_s3: bin_pct(QualityBin::S3),
        avg_lines_edited: mean(&edited),
        avg_lines_repaired: mean(&repaired),
        avg_time_saving: mean(&saving),
    }
}

/// Per-run rows and grouped averages. The average time saving is the mean of
/// per-run percentages, not the formula applied to averaged counts.
pub fn aggregate(assessments: &[RunAssessment]) -> Result<MetricsReport, EvalError> {
    let mut report = MetricsReport::default();
    for a in assessments {
        let outcome = classify_outcome(a);
        if let Some(w) = outcome.warning {
            report.warnings.push(w);
        }
        let quality_bin = a.manual_score.map(|s| bin_quality(s.into())).transpose()?;
        let saving = a.lines_repaired.and_then(|r| {
            let s = time_saving(a.lines_edited, r);
            if s.is_none() {
                report.warnings.push(format!(
                    "run {} edited no lines; time saving is undefined and left out of averages",
                    a.run_id
                ));
            }
            s
        });
        report.runs.push(RunRow {
            run_id: a.run_id.clone(),
            task: a.task.clone(),
            experiment: a.experiment.clone(),
            category: outcome.category,
            quality_bin,
            manual_score: a.manual_score,
            lines_edited: a.lines_edited,
            lines_repaired: a.lines_repaired,
            time_saving: saving,
        });
    }

    let mut by_group: BTreeMap<(String, String), Vec<&RunRow>> = BTreeMap::new();
    let mut by_experiment: BTreeMap<String, Vec<&RunRow>> = BTreeMap::new();
    for r in &report.runs {
        by_group
            .entry((r.task.clone(), r.experiment.clone()))
            .or_default()
            .push(r);
        by_experiment.entry(r.experiment.clone()).or_default().push(r);
    }
    let mut groups: Vec<GroupRow> = by_group
        .iter()
        .map(|((task, exp), rows)| group_row(task, exp, rows))
        .collect();
    groups.extend(by_experiment.iter().map(|(exp, rows)| group_row("all", exp, rows)));
    report.groups = groups;
    Ok(report)
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.2}"))
}

fn table(title: &str, header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i > 0 {
                s.push_str("  ");
            }
            if i < 2 {
                s.push_str(&format!("{cell:<w$}"));
            } else {
                s.push_str(&format!("{cell:>w$}"));
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = format!("{title}\n");
    out.push_str(&line(&header.iter().map(|h| h.to_string()).collect::<Vec<_>>()));
    let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
    out.push_str(&"-".repeat(total));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row));
    }
    out
}

/// The three report tables: error categories, code quality, efficiency.
pub fn render_tables(report: &MetricsReport) -> String {
    let g = &report.groups;
    let categories: Vec<Vec<String>> = g
        .iter()
        .map(|r| {
            vec![
                r.task.clone(),
                r.experiment.clone(),
                r.runs.to_string(),
                format!("{:.2}", r.pct_a),
                format!("{:.2}", r.pct_b),
                format!("{:.2}", r.pct_c),
                format!("{:.2}", r.pct_d),
            ]
        })
        .collect();
    let quality: Vec<Vec<String>> = g
        .iter()
        .map(|r| {
            vec![
                r.task.clone(),
                r.experiment.clone(),
                r.scored_runs.to_string(),
                pct(r.pct_s1),
                pct(r.pct_s2),
                pct(r.pct_s3),
            ]
        })
        .collect();
    let efficiency: Vec<Vec<String>> = g
        .iter()
        .map(|r| {
            vec![
                r.task.clone(),
                r.experiment.clone(),
                pct(r.avg_lines_edited),
                pct(r.avg_lines_repaired),
                pct(r.avg_time_saving),
            ]
        })
        .collect();
    let mut out = table(
        "Error categories (% of runs)",
        &["Task", "Experiment", "Runs", "A", "B", "C", "D"],
        &categories,
    );
    out.push('\n');
    out.push_str(&table(
        "Code quality (% of scored runs)",
        &["Task", "Experiment", "Scored", "S1", "S2", "S3"],
        &quality,
    ));
    out.push('\n');
    out.push_str(&table(
        "Efficiency",
        &["Task", "Experiment", "Avg. lines edited", "Avg. lines repaired", "Avg. time saving (%)"],
        &efficiency,
    ));
    out
}

/// One reviewer's row from a scores file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub run_id: String,
    pub manual_score: i64,
    pub lines_repaired: usize,
    pub reviewer_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CombinedScore {
    pub manual_score: u8,
    pub lines_repaired: usize,
}

/// Averages reviewers per run, rounding half up.
pub fn combine_scores(rows: &[ScoreRow]) -> Result<BTreeMap<String, CombinedScore>, EvalError> {
    let mut acc: BTreeMap<String, (i64, usize, usize)> = BTreeMap::new();
    for r in rows {
        bin_quality(r.manual_score)?;
        let e = acc.entry(r.run_id.clone()).or_default();
        e.0 += r.manual_score;
        e.1 += r.lines_repaired;
        e.2 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(id, (score, repaired, n))| {
            let n64 = n as i64;
            let combined = CombinedScore {
                manual_score: ((2 * score + n64) / (2 * n64)) as u8,
                lines_repaired: (2 * repaired + n) / (2 * n),
            };
            (id, combined)
        })
        .collect())
}
