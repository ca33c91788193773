//! The six-section planner response.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HEADINGS: [&str; 6] = [
    "Reflection",
    "Research Plan and Status",
    "Fact Check",
    "Thought",
    "Action",
    "Action Input",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannerResponse {
    pub reflection: String,
    pub research_plan_and_status: String,
    pub fact_check: String,
    pub thought: String,
    pub action: String,
    pub action_input: String,
    /// The response exactly as the model produced it.
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ResponseError {
    #[error("the response is missing the `{0}:` section")]
    MissingHeading(&'static str),
    #[error("the `{found}:` section must come before `{expected}:`")]
    OutOfOrder {
        found: &'static str,
        expected: &'static str,
    },
    #[error("the `{0}:` heading appears more than once")]
    DuplicateHeading(&'static str),
    #[error("the `Action:` section is empty")]
    EmptyAction,
}

/// Heading that starts `line`, with the remainder after the colon. Leading
/// markdown emphasis or heading marks are tolerated.
fn heading_of(line: &str) -> Option<(usize, &str)> {
    let t = line.trim_start().trim_start_matches(['#', '*']).trim_start();
    // Longest names first so "Action Input" wins over "Action".
    let mut order: Vec<usize> = (0..HEADINGS.len()).collect();
    order.sort_by_key(|i| std::cmp::Reverse(HEADINGS[*i].len()));
    for i in order {
        let name = HEADINGS[i];
        if let Some(rest) = t.strip_prefix(name) {
            let rest = rest.trim_start_matches('*');
            if let Some(after) = rest.strip_prefix(':') {
                return Some((i, after.trim_start_matches('*')));
            }
        }
    }
    None
}

pub fn parse_planner_response(text: &str) -> Result<PlannerResponse, ResponseError> {
    let lines: Vec<&str> = text.lines().collect();
    let mut found: Vec<(usize, usize, &str)> = Vec::new();
    for (n, line) in lines.iter().enumerate() {
        if let Some((i, rest)) = heading_of(line) {
            if found.iter().any(|(_, j, _)| *j == i) {
                return Err(ResponseError::DuplicateHeading(HEADINGS[i]));
            }
            found.push((n, i, rest));
        }
    }
    if let Some(missing) = (0..HEADINGS.len()).find(|i| !found.iter().any(|(_, j, _)| j == i)) {
        return Err(ResponseError::MissingHeading(HEADINGS[missing]));
    }
    for pair in found.windows(2) {
        if pair[1].1 < pair[0].1 {
            return Err(ResponseError::OutOfOrder {
                found: HEADINGS[pair[1].1],
                expected: HEADINGS[pair[0].1],
            });
        }
    }

    let mut sections: [Option<String>; 6] = Default::default();
    for (k, (n, i, rest)) in found.iter().enumerate() {
        let stop = found.get(k + 1).map_or(lines.len(), |next| next.0);
        let mut body = rest.to_string();
        for line in &lines[n + 1..stop] {
            body.push('\n');
            body.push_str(line);
        }
        sections[*i] = Some(body);
    }

    let mut out: Vec<String> = Vec::with_capacity(6);
    for (i, s) in sections.into_iter().enumerate() {
        out.push(s.ok_or(ResponseError::MissingHeading(HEADINGS[i]))?.trim().to_string());
    }
    let action_input = out.pop().unwrap_or_default();
    let action = out.pop().unwrap_or_default();
    let action = action
        .lines()
        .next()
        .unwrap_or_default()
        .trim()
        .trim_matches(['*', '`'])
        .trim()
        .to_string();
    if action.is_empty() {
        return Err(ResponseError::EmptyAction);
    }
    let thought = out.pop().unwrap_or_default();
    let fact_check = out.pop().unwrap_or_default();
    let research_plan_and_status = out.pop().unwrap_or_default();
    let reflection = out.pop().unwrap_or_default();
    Ok(PlannerResponse {
        reflection,
        research_plan_and_status,
        fact_check,
        thought,
        action,
        action_input,
        raw: text.to_string(),
    })
}
