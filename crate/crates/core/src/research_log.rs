//! Append-only run history. The last few full responses form the planner's
//! short-term memory; a running summary extended on every append forms its
//! long-term memory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::ActionInvocation;
use crate::constraints::Violation;
use crate::gateway::{Gateway, RoleTag};
use crate::planner::PlannerResponse;
use crate::template::fill;
use crate::text::{elide, head_tail};
use crate::workspace::write_atomic;

pub const SUMMARY_PREFIX: &str = "SUMMARY OF LONG OBSERVATION:";
pub const LOG_FILE: &str = "research_log.md";
pub const STEPS_DIR: &str = "steps";

const SUMMARIZE_OBSERVATION_PROMPT: &str = include_str!("../assets/prompts/summarize_observation.txt");
const SUMMARIZE_LOG_PROMPT: &str = include_str!("../assets/prompts/summarize_log.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemorySettings {
    /// Full responses kept in the planner prompt.
    pub window: usize,
    /// Observations longer than this (in characters) are summarized.
    pub observation_threshold: usize,
    pub fallback_head: usize,
    pub fallback_tail: usize,
}

impl Default for MemorySettings {
    fn default() -> Self {
        Self {
            window: 3,
            observation_threshold: 4_000,
            fallback_head: 2_000,
            fallback_tail: 1_000,
        }
    }
}

/// A planner attempt that was turned down within a step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedAttempt {
    pub level: RoleTag,
    pub attempt: usize,
    pub violation: Option<Violation>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    pub response: PlannerResponse,
    pub invocation: ActionInvocation,
    pub observation: String,
    pub observation_shown: String,
    pub step_summary: String,
    pub cascade_level_used: RoleTag,
    pub attempts_per_level: BTreeMap<RoleTag, usize>,
    #[serde(default)]
    pub rejected: Vec<RejectedAttempt>,
    /// Long-term summary after this step was appended.
    #[serde(default)]
    pub summary_after: String,
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("step {got} cannot follow a log of {expected} steps")]
    IndexGap { expected: usize, got: usize },
    #[error("cannot persist the research log: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt step record {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
}

#[derive(Debug, Clone)]
pub struct ResearchLog {
    dir: Option<PathBuf>,
    records: Vec<StepRecord>,
    long_term_summary: String,
    pub settings: MemorySettings,
}

impl ResearchLog {
    pub fn in_memory(settings: MemorySettings) -> Self {
        Self {
            dir: None,
            records: Vec::new(),
            long_term_summary: String::new(),
            settings,
        }
    }

    /// A log persisted under `dir` (`steps/<index>.json`, `research_log.md`).
    pub fn persisted(dir: impl Into<PathBuf>, settings: MemorySettings) -> Result<Self, LogError> {
        let dir = dir.into();
        fs::create_dir_all(dir.join(STEPS_DIR))?;
        Ok(Self {
            dir: Some(dir),
            ..Self::in_memory(settings)
        })
    }

    /// Reloads a persisted log.
    pub fn load(dir: impl Into<PathBuf>, settings: MemorySettings) -> Result<Self, LogError> {
        let dir = dir.into();
        let steps = dir.join(STEPS_DIR);
        let mut found = Vec::new();
        if steps.is_dir() {
            for entry in fs::read_dir(&steps)? {
                let path = entry?.path();
                let index = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .and_then(|s| s.parse::<usize>().ok());
                if let (Some(i), Some("json")) = (index, path.extension().and_then(|e| e.to_str())) {
                    found.push((i, path));
                }
            }
        }
        found.sort();
        let mut log = Self::persisted(dir, settings)?;
        for (i, path) in found {
            let corrupt = |message: String| LogError::Corrupt {
                path: path.clone(),
                message,
            };
            let record: StepRecord =
                serde_json::from_str(&fs::read_to_string(&path)?).map_err(|e| corrupt(e.to_string()))?;
            if record.index != i || i != log.records.len() {
                return Err(corrupt(format!("expected step {}", log.records.len())));
            }
            log.long_term_summary = record.summary_after.clone();
            log.records.push(record);
        }
        Ok(log)
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn long_term_summary(&self) -> &str {
        &self.long_term_summary
    }

    /// The most recent `window` records, oldest first.
    pub fn short_term(&self) -> &[StepRecord] {
        let n = self.records.len();
        &self.records[n.saturating_sub(self.settings.window)..]
    }

    /// Appends `record`, extending the long-term summary with one worker call
    /// (or deterministically when that call fails), and persists it before
    /// returning.
    pub fn append_step(&mut self, gateway: &Gateway, mut record: StepRecord) -> Result<(), LogError> {
        if record.index != self.records.len() {
            return Err(LogError::IndexGap {
                expected: self.records.len(),
                got: record.index,
            });
        }
        let step_text = format!("Step {}: {}", record.index + 1, record.step_summary);
        let previous = if self.long_term_summary.is_empty() {
            "(empty)"
        } else {
            self.long_term_summary.as_str()
        };
        let prompt = fill(SUMMARIZE_LOG_PROMPT, &[("summary", previous), ("step", &step_text)]);
        let summary = match gateway.complete(RoleTag::Worker, &prompt) {
            Ok(s) if !s.trim().is_empty() => s.trim().to_string(),
            Ok(_) | Err(_) => {
                if self.long_term_summary.is_empty() {
                    step_text
                } else {
                    format!("{}\n{}", self.long_term_summary, step_text)
                }
            }
        };
        record.summary_after = summary.clone();
        if let Some(dir) = &self.dir {
            let body = serde_json::to_string_pretty(&record).expect("step record serializes");
            write_atomic(&step_path(dir, record.index), body.as_bytes())?;
        }
        self.records.push(record);
        self.long_term_summary = summary;
        Ok(())
    }

    /// Identity up to the threshold; longer text is summarized by one worker
    /// call, or cut to head and tail if that call fails.
    pub fn summarize_observation(&self, gateway: &Gateway, text: &str) -> String {
        if text.chars().count() <= self.settings.observation_threshold {
            return text.to_string();
        }
        let prompt = fill(SUMMARIZE_OBSERVATION_PROMPT, &[("observation", text)]);
        match gateway.complete(RoleTag::Worker, &prompt) {
            Ok(s) if !s.trim().is_empty() => format!("{SUMMARY_PREFIX}\n{}", s.trim()),
            Ok(_) | Err(_) => elide(text, self.settings.fallback_head, self.settings.fallback_tail),
        }
    }

    /// Writes the rendered transcript next to the step files.
    pub fn write_transcript(&self) -> Result<(), LogError> {
        if let Some(dir) = &self.dir {
            write_atomic(&dir.join(LOG_FILE), render_log_file(self).as_bytes())?;
        }
        Ok(())
    }
}

fn step_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(STEPS_DIR).join(format!("{index}.json"))
}

/// Compact one-paragraph description of a step.
pub fn step_summary(response: &PlannerResponse, invocation: &ActionInvocation, observation_shown: &str) -> String {
    let thought = one_line(&response.thought, 300);
    let observation = one_line(observation_shown, 300);
    format!(
        "Thought: {thought} Action: {} {}. Observation: {observation}",
        invocation.action,
        invocation.render()
    )
}

fn one_line(text: &str, max: usize) -> String {
    let flat = crate::text::normalize_whitespace(text);
    if flat.chars().count() <= max {
        flat
    } else {
        let mut s: String = flat.chars().take(max).collect();
        s.push_str(" ...");
        s
    }
}

/// Human-readable transcript. Depends only on the records.
pub fn render_log_file(log: &ResearchLog) -> String {
    let mut out = String::from("# Research log\n");
    for r in &log.records {
        out.push_str(&format!("\n## Step {}\n\n", r.index + 1));
        out.push_str(&format!("Summary: {}\n\n", r.step_summary));
        out.push_str(&format!(
            "Planner: {} after {} attempt(s)\n\n",
            r.cascade_level_used,
            r.attempts_per_level.values().sum::<usize>()
        ));
        for rej in &r.rejected {
            out.push_str(&format!(
                "- rejected attempt {} at {}: {}\n",
                rej.attempt,
                rej.level,
                one_line(&rej.reason, 200)
            ));
        }
        if !r.rejected.is_empty() {
            out.push('\n');
        }
        out.push_str(&format!("Action: {}\n\n", r.invocation.action));
        out.push_str(&format!("Action Input:\n```\n{}\n```\n\n", r.invocation.render()));
        out.push_str("Observation:\n````\n");
        let shown = head_tail(&r.observation_shown, 8_000);
        out.push_str(shown.trim_end_matches('\n'));
        out.push_str("\n````\n");
    }
    out
}
