//! LLM-backed actions. Each worker is a single persona-scoped prompt sent
//! through the gateway under the worker role.

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;
use thiserror::Error;

use crate::actions::Action;
use crate::gateway::{Gateway, GatewayError, RoleTag};
use crate::template::fill;
use crate::text::{extract_code_block, keep_recent};
use crate::workspace::{DiffSummary, FileRole, Workspace, WorkspaceError};

pub const UNDERSTAND_FILE: &str =
    "You are an expert in understanding files containing both code and natural language.";
pub const UNDERSTAND_FILE_WITH_CONTEXT: &str = "You are an expert in understanding files containing both code and natural language given some context.";
pub const EDIT_SCRIPT: &str = "You are an expert in editing code files.";
pub const EDIT_SCRIPT_WITH_CONTEXT: &str =
    "You are an expert in editing code files given some code or text context.";
pub const REFLECTION: &str = "You are an expert in reflecting on previous actions when implementing code for a given research methodology.";
pub const CHECK_IMPLEMENTATION: &str = "You are an expert in checking the implementation of a methodology in a piece of edited code given the starter code that was edited to arrive at the edited code.";

const UNDERSTAND_FILE_PROMPT: &str = include_str!("../assets/prompts/understand_file.txt");
const UNDERSTAND_CONTEXT_PROMPT: &str =
    include_str!("../assets/prompts/understand_file_with_context.txt");
const EDIT_PROMPT: &str = include_str!("../assets/prompts/edit_script.txt");
const EDIT_CONTEXT_PROMPT: &str = include_str!("../assets/prompts/edit_script_with_context.txt");
const REFLECTION_PROMPT: &str = include_str!("../assets/prompts/reflection.txt");
const DECOMPOSE_PROMPT: &str = include_str!("../assets/prompts/decompose.txt");
const CHECK_PROMPT: &str = include_str!("../assets/prompts/check_implementation.txt");

const FENCE_RETRY: &str = "\n\nYour previous reply did not contain the script in a fenced code block. \
Reply with the complete edited script inside one ``` block.";
const LIST_RETRY: &str =
    "\n\nYour previous reply was not a numbered list. Reply only with the numbered list of subparts.";
const REPORT_RETRY: &str = "\n\nYour previous reply did not follow the format. Start with `Status: implemented` \
or `Status: missing`, give a non-empty Snippet, and a non-empty Proposed Edit when missing.";

/// Persona text for an LLM-backed action.
pub fn persona(action: Action) -> Option<&'static str> {
    Some(match action {
        Action::UnderstandFile => UNDERSTAND_FILE,
        Action::UnderstandFileWithCodeContext => UNDERSTAND_FILE_WITH_CONTEXT,
        Action::EditScript => EDIT_SCRIPT,
        Action::EditScriptWithContext => EDIT_SCRIPT_WITH_CONTEXT,
        Action::Reflection => REFLECTION,
        Action::CheckImplementation => CHECK_IMPLEMENTATION,
        _ => return None,
    })
}

#[derive(Debug, Error)]
pub enum WorkerError {
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("`{0}` must not be empty")]
    EmptyInput(&'static str),
    #[error("no fenced code block in the editor's reply after {attempts} attempts")]
    NoCodeBlock { attempts: usize },
    #[error("could not parse a numbered list of subparts after {attempts} attempts")]
    Decomposition { attempts: usize },
    #[error("malformed report for subpart {subpart} after {attempts} attempts")]
    Report { subpart: usize, attempts: usize },
    #[error("the methodology has not been decomposed yet; run the decomposition first")]
    NoDecomposition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubpartStatus {
    Implemented,
    Missing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubpartReport {
    pub subpart_id: usize,
    pub description: String,
    pub status: SubpartStatus,
    pub snippet: String,
    pub proposed_edit: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditOutcome {
    pub save_as: String,
    /// Against the source script; this is what the zero-diff guard inspects.
    pub diff: DiffSummary,
    /// Against whatever `save_as` held before the write.
    pub written: DiffSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkerSettings {
    pub retry_budget: usize,
    /// File characters per understand-file prompt before chunking.
    pub chunk_chars: usize,
    /// Longest research-log summary handed to the reflection worker.
    pub reflection_summary_chars: usize,
}

impl Default for WorkerSettings {
    fn default() -> Self {
        Self {
            retry_budget: 8,
            chunk_chars: 12_000,
            reflection_summary_chars: 4_000,
        }
    }
}

/// Worker state for one run (holds the decomposition cache).
#[derive(Debug, Default)]
pub struct Workers {
    pub settings: WorkerSettings,
    decomposition: Option<Vec<String>>,
}

fn require(value: &str, field: &'static str) -> Result<(), WorkerError> {
    if value.trim().is_empty() {
        Err(WorkerError::EmptyInput(field))
    } else {
        Ok(())
    }
}

fn with_newline(text: &str) -> String {
    if text.is_empty() || text.ends_with('\n') {
        text.to_string()
    } else {
        format!("{text}\n")
    }
}

fn range(start: i64, end: i64) -> (usize, usize) {
    (start.max(0) as usize, end.max(0) as usize)
}

impl Workers {
    pub fn new(settings: WorkerSettings) -> Self {
        Self {
            settings,
            decomposition: None,
        }
    }

    pub fn decomposition(&self) -> Option<&[String]> {
        self.decomposition.as_deref()
    }

    pub fn understand_file(
        &self,
        gateway: &Gateway,
        ws: &Workspace,
        file: &str,
        query: &str,
    ) -> Result<String, WorkerError> {
        let content = ws.read_text(file)?;
        require(query, "things to look for")?;
        let name = ws.normalize(file)?;
        let chunks = chunk_lines(&content, self.settings.chunk_chars);
        let total = chunks.len();
        let mut answers = Vec::with_capacity(total);
        for (i, chunk) in chunks.iter().enumerate() {
            let part_note = if total > 1 {
                format!(" (part {} of {total})", i + 1)
            } else {
                String::new()
            };
            let prompt = fill(
                UNDERSTAND_FILE_PROMPT,
                &[
                    ("persona", UNDERSTAND_FILE),
                    ("file_name", &name),
                    ("part_note", &part_note),
                    ("file_content", &with_newline(chunk)),
                    ("query", query.trim()),
                ],
            );
            let answer = gateway.complete(RoleTag::Worker, &prompt)?;
            answers.push(if total > 1 {
                format!("[Part {} of {total}]\n{}", i + 1, answer.trim_end())
            } else {
                answer
            });
        }
        Ok(answers.join("\n\n"))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn understand_file_with_context(
        &self,
        gateway: &Gateway,
        ws: &Workspace,
        file: &str,
        file_range: (i64, i64),
        script: &str,
        script_range: (i64, i64),
        query: &str,
    ) -> Result<String, WorkerError> {
        let (fs, fe) = range(file_range.0, file_range.1);
        let (ss, se) = range(script_range.0, script_range.1);
        let excerpt = ws.inspect_lines(file, fs, fe)?;
        let context = ws.inspect_lines(script, ss, se)?;
        require(query, "things to look for")?;
        let prompt = fill(
            UNDERSTAND_CONTEXT_PROMPT,
            &[
                ("persona", UNDERSTAND_FILE_WITH_CONTEXT),
                ("file_name", &excerpt.path),
                ("file_start", &excerpt.start.to_string()),
                ("file_end", &excerpt.end.to_string()),
                ("file_excerpt", &excerpt.render()),
                ("script_name", &context.path),
                ("script_start", &context.start.to_string()),
                ("script_end", &context.end.to_string()),
                ("code_context", &context.render()),
                ("query", query.trim()),
            ],
        );
        Ok(gateway.complete(RoleTag::Worker, &prompt)?)
    }

    pub fn edit_script(
        &self,
        gateway: &Gateway,
        ws: &mut Workspace,
        script: &str,
        instructions: &str,
        save_as: &str,
    ) -> Result<EditOutcome, WorkerError> {
        let source = ws.read_text(script)?;
        let name = ws.normalize(script)?;
        let save_as = ws.normalize(save_as)?;
        require(instructions, "edit instructions")?;
        let prompt = fill(
            EDIT_PROMPT,
            &[
                ("persona", EDIT_SCRIPT),
                ("script_name", &name),
                ("script_content", &with_newline(&source)),
                ("instructions", instructions.trim()),
            ],
        );
        self.finish_edit(gateway, ws, &prompt, &name, &source, &save_as)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn edit_script_with_context(
        &self,
        gateway: &Gateway,
        ws: &mut Workspace,
        script: &str,
        instructions: &str,
        context_file: &str,
        context_range: (i64, i64),
        save_as: &str,
    ) -> Result<EditOutcome, WorkerError> {
        let source = ws.read_text(script)?;
        let name = ws.normalize(script)?;
        let save_as = ws.normalize(save_as)?;
        let (cs, ce) = range(context_range.0, context_range.1);
        let context = ws.inspect_lines(context_file, cs, ce)?;
        require(instructions, "edit instructions")?;
        let prompt = fill(
            EDIT_CONTEXT_PROMPT,
            &[
                ("persona", EDIT_SCRIPT_WITH_CONTEXT),
                ("script_name", &name),
                ("script_content", &with_newline(&source)),
                ("context_name", &context.path),
                ("context_start", &context.start.to_string()),
                ("context_end", &context.end.to_string()),
                ("context_excerpt", &context.render()),
                ("instructions", instructions.trim()),
            ],
        );
        self.finish_edit(gateway, ws, &prompt, &name, &source, &save_as)
    }

    fn finish_edit(
        &self,
        gateway: &Gateway,
        ws: &mut Workspace,
        prompt: &str,
        source_name: &str,
        source: &str,
        save_as: &str,
    ) -> Result<EditOutcome, WorkerError> {
        let budget = self.settings.retry_budget.max(1);
        let mut request = prompt.to_string();
        for attempt in 0..budget {
            if attempt == 1 {
                request.push_str(FENCE_RETRY);
            }
            let reply = gateway.complete(RoleTag::Worker, &request)?;
            if let Some(code) = extract_code_block(&reply) {
                let written = ws.apply_edit(save_as, &code)?;
                let diff = crate::workspace::diff_texts(source_name, save_as, source, &code);
                return Ok(EditOutcome {
                    save_as: save_as.to_string(),
                    diff,
                    written,
                });
            }
        }
        Err(WorkerError::NoCodeBlock { attempts: budget })
    }

    pub fn reflect(&self, gateway: &Gateway, query: &str, summary: &str) -> Result<String, WorkerError> {
        require(query, "things to reflect on")?;
        let summary = keep_recent(summary, self.settings.reflection_summary_chars);
        let summary = if summary.trim().is_empty() {
            "(no steps recorded yet)".to_string()
        } else {
            summary
        };
        let prompt = fill(
            REFLECTION_PROMPT,
            &[("persona", REFLECTION), ("summary", &summary), ("query", query.trim())],
        );
        Ok(gateway.complete(RoleTag::Worker, &prompt)?)
    }

    /// Splits the methodology into subparts with one worker call; cached for
    /// the rest of the run.
    pub fn decompose_methodology(
        &mut self,
        gateway: &Gateway,
        ws: &Workspace,
    ) -> Result<&[String], WorkerError> {
        if self.decomposition.is_none() {
            let methodology_name = ws.path_for(FileRole::Methodology).to_string();
            let pseudocode_name = ws.path_for(FileRole::Pseudocode).to_string();
            let prompt = fill(
                DECOMPOSE_PROMPT,
                &[
                    ("persona", CHECK_IMPLEMENTATION),
                    ("methodology_name", &methodology_name),
                    ("methodology", ws.read_text(&methodology_name)?.trim_end()),
                    ("pseudocode_name", &pseudocode_name),
                    ("pseudocode", ws.read_text(&pseudocode_name)?.trim_end()),
                ],
            );
            let budget = self.settings.retry_budget.max(1);
            let mut request = prompt;
            let mut parsed = None;
            for attempt in 0..budget {
                if attempt == 1 {
                    request.push_str(LIST_RETRY);
                }
                let items = parse_numbered_list(&gateway.complete(RoleTag::Worker, &request)?);
                if !items.is_empty() {
                    parsed = Some(items);
                    break;
                }
            }
            self.decomposition = Some(parsed.ok_or(WorkerError::Decomposition { attempts: budget })?);
        }
        Ok(self.decomposition.as_deref().unwrap_or_default())
    }

    /// One worker call per cached subpart, in order.
    pub fn check_implementation(
        &self,
        gateway: &Gateway,
        ws: &Workspace,
        script: &str,
    ) -> Result<Vec<SubpartReport>, WorkerError> {
        let edited = ws.read_text(script)?;
        let subparts = self.decomposition.as_deref().ok_or(WorkerError::NoDecomposition)?;
        let script_name = ws.normalize(script)?;
        let starter_name = ws.path_for(FileRole::StarterCode).to_string();
        let starter = ws.read_text(&starter_name)?;
        let count = subparts.len().to_string();
        let budget = self.settings.retry_budget.max(1);

        let mut reports = Vec::with_capacity(subparts.len());
        for (i, description) in subparts.iter().enumerate() {
            let id = i + 1;
            let mut request = fill(
                CHECK_PROMPT,
                &[
                    ("persona", CHECK_IMPLEMENTATION),
                    ("starter_name", &starter_name),
                    ("starter_code", &with_newline(&starter)),
                    ("script_name", &script_name),
                    ("edited_code", &with_newline(&edited)),
                    ("subpart_id", &id.to_string()),
                    ("subpart_count", &count),
                    ("subpart", description),
                ],
            );
            let mut report = None;
            for attempt in 0..budget {
                if attempt == 1 {
                    request.push_str(REPORT_RETRY);
                }
                let reply = gateway.complete(RoleTag::Worker, &request)?;
                if let Some(r) = parse_subpart_report(id, description, &reply) {
                    report = Some(r);
                    break;
                }
            }
            reports.push(report.ok_or(WorkerError::Report {
                subpart: id,
                attempts: budget,
            })?);
        }
        Ok(reports)
    }
}

/// Observation text for a list of subpart reports.
pub fn render_reports(script: &str, reports: &[SubpartReport]) -> String {
    let implemented = reports
        .iter()
        .filter(|r| r.status == SubpartStatus::Implemented)
        .count();
    let mut out = format!(
        "Checked {script} against {} methodology subparts: {implemented} implemented, {} missing.\n",
        reports.len(),
        reports.len() - implemented
    );
    for r in reports {
        let status = match r.status {
            SubpartStatus::Implemented => "implemented",
            SubpartStatus::Missing => "missing",
        };
        out.push_str(&format!(
            "\nSubpart {}: {}\nStatus: {status}\nSnippet:\n{}\n",
            r.subpart_id,
            r.description,
            r.snippet.trim_end()
        ));
        if let Some(edit) = &r.proposed_edit {
            out.push_str(&format!("Proposed Edit:\n{}\n", edit.trim_end()));
        }
    }
    out
}

/// Splits on line boundaries into pieces of at most `max_chars` characters;
/// single overlong lines are split hard.
pub fn chunk_lines(text: &str, max_chars: usize) -> Vec<String> {
    let max_chars = max_chars.max(1);
    let mut chunks = Vec::new();
    let mut current = String::new();
    let mut current_len = 0;
    for line in text.split_inclusive('\n') {
        let mut piece: Vec<char> = line.chars().collect();
        while !piece.is_empty() {
            let room = max_chars - current_len;
            if piece.len() <= room {
                current.extend(piece.iter());
                current_len += piece.len();
                break;
            }
            if current_len > 0 {
                chunks.push(std::mem::take(&mut current));
                current_len = 0;
                continue;
            }
            let rest = piece.split_off(max_chars);
            chunks.push(piece.into_iter().collect());
            piece = rest;
        }
    }
    if current_len > 0 || chunks.is_empty() {
        chunks.push(current);
    }
    chunks
}

fn numbered_item() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(?:\*\*)?(\d+)[.)](?:\*\*)?\s+(.+)$").unwrap())
}

/// `1. foo` / `2) bar` items; indented continuation lines join the previous
/// item. Text before the first item is ignored.
pub fn parse_numbered_list(text: &str) -> Vec<String> {
    let mut items: Vec<String> = Vec::new();
    for line in text.lines() {
        if let Some(c) = numbered_item().captures(line) {
            items.push(c[2].trim().to_string());
        } else if let Some(last) = items.last_mut() {
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            if line.starts_with(char::is_whitespace) {
                last.push(' ');
                last.push_str(t);
            }
        }
    }
    items
}

/// Parses `Status:` / `Snippet:` / `Proposed Edit:` sections.
pub fn parse_subpart_report(id: usize, description: &str, reply: &str) -> Option<SubpartReport> {
    #[derive(PartialEq)]
    enum Section {
        None,
        Snippet,
        Edit,
    }
    let mut status = None;
    let mut snippet = String::new();
    let mut edit = String::new();
    let mut section = Section::None;
    for line in reply.lines() {
        let trimmed = line.trim_start().trim_start_matches(['*', '#', ' ']);
        let lower = trimmed.to_ascii_lowercase();
        if let Some(rest) = strip_label(&lower, trimmed, "status:") {
            let word = rest.trim().trim_matches('*').trim().to_ascii_lowercase();
            status = if word.starts_with("implemented") {
                Some(SubpartStatus::Implemented)
            } else if word.starts_with("missing") || word.starts_with("not implemented") {
                Some(SubpartStatus::Missing)
            } else {
                None
            };
            section = Section::None;
        } else if let Some(rest) = strip_label(&lower, trimmed, "snippet:") {
            section = Section::Snippet;
            push_line(&mut snippet, rest.trim_start_matches('*'));
        } else if let Some(rest) = strip_label(&lower, trimmed, "proposed edit:") {
            section = Section::Edit;
            push_line(&mut edit, rest.trim_start_matches('*'));
        } else {
            match section {
                Section::Snippet => push_line(&mut snippet, line),
                Section::Edit => push_line(&mut edit, line),
                Section::None => {}
            }
        }
    }
    let snippet = snippet.trim().to_string();
    let edit = edit.trim().to_string();
    let report = match status? {
        SubpartStatus::Implemented if !snippet.is_empty() => SubpartReport {
            subpart_id: id,
            description: description.to_string(),
            status: SubpartStatus::Implemented,
            snippet,
            proposed_edit: None,
        },
        SubpartStatus::Missing if !edit.is_empty() => SubpartReport {
            subpart_id: id,
            description: description.to_string(),
            status: SubpartStatus::Missing,
            snippet,
            proposed_edit: Some(edit),
        },
        _ => return None,
    };
    Some(report)
}

fn strip_label<'a>(lower: &str, original: &'a str, label: &str) -> Option<&'a str> {
    lower.starts_with(label).then(|| &original[label.len()..])
}

fn push_line(buf: &mut String, line: &str) {
    if !buf.is_empty() || !line.trim().is_empty() {
        buf.push_str(line);
        buf.push('\n');
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn personas_cover_llm_actions() {
        use crate::actions::{ActionKind, REGISTRY};
        for spec in &REGISTRY {
            let expected = spec.kind == ActionKind::LlmBacked
                && spec.action != Action::RequestPlanningExpertHelp;
            assert_eq!(persona(spec.action).is_some(), expected, "{}", spec.name);
        }
    }

    #[test]
    fn chunking_respects_limit_and_reassembles() {
        let text = "abc\n".repeat(10) + &"x".repeat(25) + "\nend";
        let chunks = chunk_lines(&text, 12);
        assert!(chunks.iter().all(|c| c.chars().count() <= 12));
        assert_eq!(chunks.concat(), text);
        assert_eq!(chunk_lines("", 5), vec![String::new()]);
    }

    #[test]
    fn numbered_lists() {
        let reply = "Here are the parts:\n1. Load data\n2) Build the\n   perturbation loop\n\n3. Train\nThanks";
        assert_eq!(
            parse_numbered_list(reply),
            ["Load data", "Build the perturbation loop", "Train"]
        );
        assert!(parse_numbered_list("The method perturbs features and trains.").is_empty());
        assert_eq!(parse_numbered_list("**1.** Scale"), ["Scale"]);
    }

    #[test]
    fn subpart_reports() {
        let ok = parse_subpart_report(1, "d", "Status: implemented\nSnippet:\n  x = f(y)\n").unwrap();
        assert_eq!(ok.status, SubpartStatus::Implemented);
        assert_eq!(ok.snippet, "x = f(y)");
        assert_eq!(ok.proposed_edit, None);

        let missing = parse_subpart_report(
            2,
            "d",
            "**Status:** missing\nSnippet: line 14, the training loop\nProposed Edit:\nadd perturb()\n",
        )
        .unwrap();
        assert_eq!(missing.status, SubpartStatus::Missing);
        assert_eq!(missing.proposed_edit.as_deref(), Some("add perturb()"));

        assert!(parse_subpart_report(3, "d", "Status: missing\nSnippet: here").is_none());
        assert!(parse_subpart_report(3, "d", "Status: implemented\n").is_none());
        assert!(parse_subpart_report(3, "d", "looks fine").is_none());
    }
}
