//! Planner, expert and single-call prompt assembly.

use serde::{Deserialize, Serialize};

use crate::research_log::StepRecord;
use crate::template::fill;
use crate::workspace::{FileRole, Workspace, WorkspaceError};

const PROBLEM_STATEMENT: &str = include_str!("../../assets/prompts/problem_statement.txt");
const PRESCRIBED_STEPS: &str = include_str!("../../assets/prompts/prescribed_steps.txt");
const PLANNER_PROMPT: &str = include_str!("../../assets/prompts/planner.txt");
const SINGLE_CALL_PROMPT: &str = include_str!("../../assets/prompts/single_call.txt");
const EXPERT_PROMPT: &str = include_str!("../../assets/prompts/expert_help.txt");

/// File the agent is asked to produce.
pub const OUTPUT_SCRIPT: &str = "methodology_implementation.py";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Agent,
    Prescribed,
    Single,
}

impl std::fmt::Display for RunMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RunMode::Agent => "agent",
            RunMode::Prescribed => "prescribed",
            RunMode::Single => "single",
        })
    }
}

impl std::str::FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "agent" => Ok(RunMode::Agent),
            "prescribed" => Ok(RunMode::Prescribed),
            "single" => Ok(RunMode::Single),
            other => Err(format!("unknown mode `{other}` (expected agent, prescribed or single)")),
        }
    }
}

/// Problem statement for the planner. The prescribed variant adds the
/// step-by-step paragraph and is otherwise identical.
pub fn problem_statement(ws: &Workspace, mode: RunMode) -> String {
    let steps = if mode == RunMode::Prescribed { PRESCRIBED_STEPS } else { "" };
    fill(
        PROBLEM_STATEMENT,
        &[
            ("methodology_file", ws.path_for(FileRole::Methodology)),
            ("dataset_file", ws.path_for(FileRole::Dataset)),
            ("pseudocode_file", ws.path_for(FileRole::Pseudocode)),
            ("starter_file", ws.path_for(FileRole::StarterCode)),
            ("performance_file", ws.path_for(FileRole::StarterPerformance)),
            ("output_file", OUTPUT_SCRIPT),
            ("prescribed_steps", steps),
        ],
    )
    .trim_end()
    .to_string()
}

/// Renders recent steps: full response, then the observation as shown.
pub fn render_recent(window: &[StepRecord]) -> String {
    let mut out = String::new();
    for r in window {
        out.push_str(&format!("\nStep {}:\n", r.index + 1));
        out.push_str(r.response.raw.trim_end());
        out.push_str("\nObservation:\n````\n");
        out.push_str(r.observation_shown.trim_end_matches('\n'));
        out.push_str("\n````\n");
    }
    out
}

/// Planner prompt: instructions, action catalog, long-term summary, recent
/// steps, response format. Sections with nothing to show are left out.
pub fn build_prompt(
    problem_statement: &str,
    catalog: &str,
    long_term_summary: &str,
    window: &[StepRecord],
) -> String {
    let mut memory = String::new();
    if !long_term_summary.trim().is_empty() {
        memory.push_str("\nResearch log summary of all steps so far:\n");
        memory.push_str(long_term_summary.trim_end());
        memory.push('\n');
    }
    if !window.is_empty() {
        memory.push_str("\nYour most recent steps, with their observations:\n");
        memory.push_str(&render_recent(window));
    }
    fill(
        PLANNER_PROMPT,
        &[
            ("problem_statement", problem_statement),
            ("catalog", catalog.trim_end()),
            ("memory", &memory),
        ],
    )
}

/// Appends the reasons earlier attempts in this step were refused.
pub fn with_retry_notes(prompt: &str, notes: &[String]) -> String {
    if notes.is_empty() {
        return prompt.to_string();
    }
    let mut out = prompt.to_string();
    out.push_str("\nYour previous responses for this step were rejected:\n");
    for (i, note) in notes.iter().enumerate() {
        out.push_str(&format!("{}. {}\n", i + 1, note));
    }
    out.push_str("Respond again, following the response format exactly.\n");
    out
}

pub fn expert_prompt(
    problem_statement: &str,
    summary: &str,
    window: &[StepRecord],
    request: &str,
    catalog: &str,
) -> String {
    let recent = if window.is_empty() {
        "(none)".to_string()
    } else {
        render_recent(window).trim_start().to_string()
    };
    let summary = if summary.trim().is_empty() { "(empty)" } else { summary };
    fill(
        EXPERT_PROMPT,
        &[
            ("problem_statement", problem_statement),
            ("summary", summary),
            ("recent", &recent),
            ("request", request.trim()),
            ("catalog", catalog.trim_end()),
        ],
    )
}

/// One-shot prompt with the full text of every input file.
pub fn single_call_prompt(ws: &Workspace) -> Result<String, WorkspaceError> {
    let read = |role| ws.read_text(ws.path_for(role)).map(|t| t.trim_end().to_string());
    let mut extra = String::new();
    for f in ws.files_with_role(FileRole::Subpart) {
        let label = match &f.subpart_index {
            Some(idx) => format!("SUBPART_{}_{} CODE", idx.part, idx.script),
            None => f.relative_path.clone(),
        };
        extra.push_str(&format!(
            "{label}:\n\n{}\n\n",
            ws.read_text(&f.relative_path)?.trim_end()
        ));
    }
    for f in ws.files_with_role(FileRole::Supplementary) {
        extra.push_str(&format!(
            "{}:\n\n{}\n\n",
            f.relative_path,
            ws.read_text(&f.relative_path)?.trim_end()
        ));
    }
    Ok(fill(
        SINGLE_CALL_PROMPT,
        &[
            ("methodology", &read(FileRole::Methodology)?),
            ("starter_code", &read(FileRole::StarterCode)?),
            ("data", &read(FileRole::Dataset)?),
            ("pseudocode", &read(FileRole::Pseudocode)?),
            ("starter_code_performance", &read(FileRole::StarterPerformance)?),
            ("extra_files", &extra),
        ],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_memory_sections_are_omitted() {
        let p = build_prompt("do it", "- List Files", "", &[]);
        assert!(!p.contains("most recent steps"));
        assert!(!p.contains("Research log summary"));
        assert!(p.contains("do it"));
        assert_eq!(p, build_prompt("do it", "- List Files", "", &[]));
    }

    #[test]
    fn format_section_lists_headings_in_order() {
        let p = build_prompt("x", "y", "", &[]);
        let mut last = 0;
        for h in super::super::response::HEADINGS {
            let pos = p[last..].find(&format!("\n{h}:")).map(|i| i + last).expect(h);
            last = pos + 1;
        }
    }

    #[test]
    fn retry_notes() {
        let p = with_retry_notes("base", &["bad".into(), "worse".into()]);
        assert!(p.starts_with("base"));
        assert!(p.contains("1. bad\n2. worse\n"));
        assert_eq!(with_retry_notes("base", &[]), "base");
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("prescribed".parse::<RunMode>(), Ok(RunMode::Prescribed));
        assert!("Agent".parse::<RunMode>().is_err());
    }
}
