//! Programmatic guards applied to every planner proposal: pool-streak limits
//! with a decaying cap, consecutive-duplicate rejection, recursive-response
//! rejection, and zero-diff edit rejection.
//!
//! All checks are pure over snapshots of the accepted history and return a
//! [`ConstraintVerdict`]; none of them mutate anything.

use serde::{Deserialize, Serialize};

use crate::actions::{ActionInvocation, Pool};
use crate::text::normalize_whitespace;
use crate::workspace::DiffSummary;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolPolicy {
    pub initial_limit: u32,
    pub decay_rate: f64,
    pub floor: u32,
}

impl Default for PoolPolicy {
    fn default() -> Self {
        Self {
            initial_limit: 15,
            decay_rate: 0.01,
            floor: 1,
        }
    }
}

impl PoolPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if self.floor < 1 {
            return Err("pool floor must be at least 1".into());
        }
        if self.initial_limit < self.floor {
            return Err("initial pool limit must be at least the floor".into());
        }
        if !(self.decay_rate >= 0.0) {
            return Err("decay rate must be non-negative".into());
        }
        Ok(())
    }

    /// `max(floor, ⌊k0 · e^(−rate · step)⌋)`
    pub fn max_consecutive(&self, step: usize) -> usize {
        let decayed = f64::from(self.initial_limit) * (-self.decay_rate * step as f64).exp();
        (decayed.floor() as usize).max(self.floor as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    PoolStreak,
    DuplicateAction,
    RecursiveResponse,
    ZeroDiff,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintVerdict {
    pub violation: Option<Violation>,
    pub message: String,
}

impl ConstraintVerdict {
    pub fn allow() -> Self {
        Self {
            violation: None,
            message: String::new(),
        }
    }

    pub fn reject(violation: Violation, message: impl Into<String>) -> Self {
        Self {
            violation: Some(violation),
            message: message.into(),
        }
    }

    pub fn allowed(&self) -> bool {
        self.violation.is_none()
    }
}

/// Length of the run of `pool` at the end of `history`.
pub fn trailing_streak<'a>(history: impl DoubleEndedIterator<Item = &'a Pool>, pool: Pool) -> usize {
    history.rev().take_while(|p| **p == pool).count()
}

pub fn check_pool_streak(
    policy: &PoolPolicy,
    history: &[ActionInvocation],
    candidate: &ActionInvocation,
    step: usize,
) -> ConstraintVerdict {
    let pools: Vec<Pool> = history.iter().map(ActionInvocation::pool).collect();
    check_pool_streak_pools(policy, &pools, candidate.pool(), step)
}

/// Pool-level form of [`check_pool_streak`], used where only pool labels are
/// at hand.
pub fn check_pool_streak_pools(
    policy: &PoolPolicy,
    history: &[Pool],
    candidate: Pool,
    step: usize,
) -> ConstraintVerdict {
    if candidate == Pool::C {
        return ConstraintVerdict::allow();
    }
    let limit = policy.max_consecutive(step);
    let streak = trailing_streak(history.iter(), candidate);
    if streak >= limit {
        ConstraintVerdict::reject(
            Violation::PoolStreak,
            format!(
                "The last {streak} actions were all from pool {candidate} and at most {limit} \
                 consecutive pool {candidate} actions are allowed at this step. Choose an action \
                 from a different pool."
            ),
        )
    } else {
        ConstraintVerdict::allow()
    }
}

pub fn check_duplicate(history: &[ActionInvocation], candidate: &ActionInvocation) -> ConstraintVerdict {
    match history.last() {
        Some(prev) if prev.same_request(candidate) => ConstraintVerdict::reject(
            Violation::DuplicateAction,
            format!(
                "The action `{}` with the same input was just executed. Do not repeat the \
                 previous action; choose a different action or different inputs.",
                candidate.action
            ),
        ),
        _ => ConstraintVerdict::allow(),
    }
}

/// Number of lines that start an `Action:` heading.
pub fn count_action_headings(text: &str) -> usize {
    text.lines()
        .filter(|l| l.trim_start().starts_with("Action:"))
        .count()
}

pub fn check_recursive(previous: Option<&str>, candidate: &str) -> ConstraintVerdict {
    if let Some(prev) = previous {
        if normalize_whitespace(prev) == normalize_whitespace(candidate) {
            return ConstraintVerdict::reject(
                Violation::RecursiveResponse,
                "The response is identical to the previous response. Make progress with a new \
                 response instead of repeating yourself.",
            );
        }
    }
    let headings = count_action_headings(candidate);
    if headings > 1 {
        return ConstraintVerdict::reject(
            Violation::RecursiveResponse,
            format!(
                "The response contains {headings} `Action:` headings. Give exactly one response \
                 with a single Action and Action Input; do not nest responses."
            ),
        );
    }
    ConstraintVerdict::allow()
}

pub fn check_zero_diff(diff: &DiffSummary) -> ConstraintVerdict {
    if diff.is_empty() {
        ConstraintVerdict::reject(
            Violation::ZeroDiff,
            "The edit produced no changes compared to the source script, so it was undone. \
             Give edit instructions that actually change the code.",
        )
    } else {
        ConstraintVerdict::allow()
    }
}
