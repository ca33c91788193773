//! Parser for `.cover` execution traces.
//!
//! Each line of the traced script appears once, in order, with one of three
//! prefixes:
//!
//! ```text
//!     5: total += x        executed five times
//! >>>>>> print("never")    executable, never run
//!        # comment         not executable
//! ```
//!
//! Column widths are not significant.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NEVER_EXECUTED_MARKER: &str = ">>>>>>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "count")]
pub enum LineStatus {
    Count(u64),
    NeverExecuted,
    NonExecutable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineEntry {
    pub line: usize,
    pub status: LineStatus,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineTrace {
    pub entries: Vec<LineEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceSummary {
    pub total_lines: usize,
    pub executable: usize,
    pub executed: usize,
    pub never_executed: usize,
}

#[derive(Debug, Error)]
pub enum CoverError {
    #[error("malformed prefix on line {line}: `{text}`")]
    MalformedPrefix { line: usize, text: String },
    #[error("cannot read trace file: {0}")]
    Io(#[from] std::io::Error),
}

impl LineTrace {
    pub fn status(&self, line: usize) -> Option<LineStatus> {
        self.entries.get(line.checked_sub(1)?).map(|e| e.status)
    }

    pub fn never_executed_lines(&self) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|e| e.status == LineStatus::NeverExecuted)
            .map(|e| e.line)
            .collect()
    }

    pub fn summary(&self) -> TraceSummary {
        let mut s = TraceSummary {
            total_lines: self.entries.len(),
            executable: 0,
            executed: 0,
            never_executed: 0,
        };
        for e in &self.entries {
            match e.status {
                LineStatus::Count(_) => {
                    s.executable += 1;
                    s.executed += 1;
                }
                LineStatus::NeverExecuted => {
                    s.executable += 1;
                    s.never_executed += 1;
                }
                LineStatus::NonExecutable => {}
            }
        }
        s
    }

    /// Renders back to the `.cover` layout (5-wide counts, 7-space gutter).
    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            match e.status {
                LineStatus::Count(n) => out.push_str(&format!("{n:>5}: {}\n", e.text)),
                LineStatus::NeverExecuted => {
                    out.push_str(&format!("{NEVER_EXECUTED_MARKER} {}\n", e.text))
                }
                LineStatus::NonExecutable => out.push_str(&format!("       {}\n", e.text)),
            }
        }
        out
    }
}

pub fn parse_cover_file(path: &Path) -> Result<LineTrace, CoverError> {
    parse_cover(&std::fs::read_to_string(path)?)
}

pub fn parse_cover(text: &str) -> Result<LineTrace, CoverError> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let malformed = || CoverError::MalformedPrefix {
            line,
            text: raw.to_string(),
        };
        let trimmed = raw.trim_start();

        if trimmed.starts_with('>') {
            let run = trimmed.chars().take_while(|c| *c == '>').count();
            if run != NEVER_EXECUTED_MARKER.len() {
                return Err(malformed());
            }
            let rest = &trimmed[run..];
            entries.push(LineEntry {
                line,
                status: LineStatus::NeverExecuted,
                text: rest.strip_prefix(' ').unwrap_or(rest).to_string(),
            });
            continue;
        }

        if let Some((count, rest)) = split_count(trimmed) {
            let count = count.parse::<u64>().map_err(|_| malformed())?;
            entries.push(LineEntry {
                line,
                status: LineStatus::Count(count),
                text: rest.strip_prefix(' ').unwrap_or(rest).to_string(),
            });
            continue;
        }
        if trimmed.starts_with('-') && split_count(&trimmed[1..]).is_some() {
            return Err(malformed());
        }

        let text = raw.strip_prefix("       ").unwrap_or(trimmed);
        entries.push(LineEntry {
            line,
            status: LineStatus::NonExecutable,
            text: text.to_string(),
        });
    }
    Ok(LineTrace { entries })
}

/// `"12: rest"` → `("12", " rest")`.
fn split_count(s: &str) -> Option<(&str, &str)> {
    let digits = s.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 || s.as_bytes().get(digits) != Some(&b':') {
        return None;
    }
    Some((&s[..digits], &s[digits + 1..]))
}
