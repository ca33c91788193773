//! The agent's control loop.
//!
//! Each step builds a prompt from the problem statement, the action catalog
//! and memory, then walks the cascade of planner roles until one produces a
//! valid response: it parses into six sections, names a registered action
//! with well-formed inputs, and passes every programmatic guard. Edit actions
//! are carried out inside the attempt so a no-op edit can be undone and
//! retried at the same level. The accepted action is dispatched, its
//! observation summarized if long, and the step appended to the research log.

mod prompt;
mod response;

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::actions::{self, Action, ActionInvocation};
use crate::constraints::{self, PoolPolicy, Violation};
use crate::executor::{self, ExecOptions};
use crate::gateway::{Gateway, RoleTable, RoleTag};
use crate::research_log::{step_summary, RejectedAttempt, ResearchLog, StepRecord};
use crate::text::extract_code_block;
use crate::workers::{render_reports, WorkerError, WorkerSettings, Workers};
use crate::workspace::{UndoOutcome, Workspace};

pub use prompt::{
    build_prompt, expert_prompt, problem_statement, render_recent, single_call_prompt,
    with_retry_notes, RunMode, OUTPUT_SCRIPT,
};
pub use response::{parse_planner_response, PlannerResponse, ResponseError, HEADINGS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CascadeLevel {
    pub role: RoleTag,
    pub budget: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CascadeConfig {
    pub levels: Vec<CascadeLevel>,
    pub expert_help_budget: usize,
    pub max_steps: usize,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            levels: vec![
                CascadeLevel { role: RoleTag::BasePlanner, budget: 8 },
                CascadeLevel { role: RoleTag::IntermediatePlanner, budget: 4 },
                CascadeLevel { role: RoleTag::ExpertPlanner, budget: 1 },
            ],
            expert_help_budget: 3,
            max_steps: 50,
        }
    }
}

impl CascadeConfig {
    /// Levels with the validity budgets configured for each planner role.
    pub fn from_roles(roles: &RoleTable, expert_help_budget: usize, max_steps: usize) -> Self {
        let levels = [RoleTag::BasePlanner, RoleTag::IntermediatePlanner, RoleTag::ExpertPlanner]
            .into_iter()
            .map(|role| CascadeLevel {
                role,
                budget: roles.get(role).retry_budget as usize,
            })
            .collect();
        Self {
            levels,
            expert_help_budget,
            max_steps,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.levels.is_empty() {
            return Err("the cascade needs at least one level".into());
        }
        if let Some(l) = self.levels.iter().find(|l| l.budget == 0) {
            return Err(format!("retry budget for {} must be positive", l.role));
        }
        if self.max_steps == 0 {
            return Err("max_steps must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct AgentOptions {
    pub cascade: CascadeConfig,
    pub policy: PoolPolicy,
    pub workers: WorkerSettings,
    pub exec: ExecOptions,
    /// Overrides the workspace's own timeout when set.
    pub exec_timeout: Option<Duration>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    FinalAnswer,
    MaxSteps,
    CascadeExhausted,
    Aborted,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Termination::FinalAnswer => "final_answer",
            Termination::MaxSteps => "max_steps",
            Termination::CascadeExhausted => "cascade_exhausted",
            Termination::Aborted => "aborted",
        })
    }
}

/// Attempts spent on a step that never produced a valid response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedStep {
    pub index: usize,
    pub attempts_per_level: BTreeMap<RoleTag, usize>,
    pub rejected: Vec<RejectedAttempt>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunResult {
    pub termination: Termination,
    pub steps_taken: usize,
    pub final_answer_text: Option<String>,
    pub generated_script: Option<String>,
    pub failed_step: Option<FailedStep>,
    pub error: Option<String>,
}

/// A step's accepted proposal.
#[derive(Debug, Clone)]
pub struct PlannedStep {
    pub response: PlannerResponse,
    pub invocation: ActionInvocation,
    pub level: RoleTag,
    pub attempts_per_level: BTreeMap<RoleTag, usize>,
    pub rejected: Vec<RejectedAttempt>,
    /// Already produced while validating (edit actions).
    pub observation: Option<String>,
}

#[derive(Debug)]
pub enum StepFailure {
    CascadeExhausted(FailedStep),
    Aborted(String),
}

struct Rejection {
    violation: Option<Violation>,
    message: String,
}

impl Rejection {
    fn format(message: impl Into<String>) -> Self {
        Self {
            violation: None,
            message: message.into(),
        }
    }
}

enum EditAttempt {
    Done(String),
    ZeroDiff(String),
}

pub struct Agent<'g> {
    gateway: &'g Gateway,
    ws: Workspace,
    mode: RunMode,
    options: AgentOptions,
    workers: Workers,
    log: ResearchLog,
    problem: String,
    catalog: String,
    expert_calls: usize,
}

impl<'g> Agent<'g> {
    pub fn new(
        gateway: &'g Gateway,
        ws: Workspace,
        mode: RunMode,
        options: AgentOptions,
        log: ResearchLog,
    ) -> Self {
        let problem = problem_statement(&ws, mode);
        let workers = Workers::new(options.workers);
        Self {
            gateway,
            ws,
            mode,
            options,
            workers,
            log,
            problem,
            catalog: actions::render_catalog(),
            expert_calls: 0,
        }
    }

    pub fn workspace(&self) -> &Workspace {
        &self.ws
    }

    pub fn into_workspace(self) -> Workspace {
        self.ws
    }

    pub fn log(&self) -> &ResearchLog {
        &self.log
    }

    pub fn mode(&self) -> RunMode {
        self.mode
    }

    pub fn expert_calls(&self) -> usize {
        self.expert_calls
    }

    pub fn problem_statement(&self) -> &str {
        &self.problem
    }

    /// Prompt for the next step, before any retry notes.
    pub fn current_prompt(&self) -> String {
        build_prompt(
            &self.problem,
            &self.catalog,
            self.log.long_term_summary(),
            self.log.short_term(),
        )
    }

    fn accepted(&self) -> Vec<ActionInvocation> {
        self.log.records().iter().map(|r| r.invocation.clone()).collect()
    }

    fn validate(
        &self,
        text: &str,
        history: &[ActionInvocation],
        step: usize,
    ) -> Result<(PlannerResponse, ActionInvocation), Rejection> {
        let previous = self.log.records().last().map(|r| r.response.raw.as_str());
        let verdict = constraints::check_recursive(previous, text);
        if !verdict.allowed() {
            return Err(Rejection {
                violation: verdict.violation,
                message: verdict.message,
            });
        }
        let response = parse_planner_response(text)
            .map_err(|e| Rejection::format(format!("Invalid response format: {e}.")))?;
        let spec = actions::lookup(&response.action)
            .map_err(|e| Rejection::format(format!("{e}")))?;
        let invocation = actions::parse_invocation(spec, &response.action_input)
            .map_err(|e| Rejection::format(format!("Invalid Action Input: {e}.")))?;
        for verdict in [
            constraints::check_duplicate(history, &invocation),
            constraints::check_pool_streak(&self.options.policy, history, &invocation, step),
        ] {
            if !verdict.allowed() {
                return Err(Rejection {
                    violation: verdict.violation,
                    message: verdict.message,
                });
            }
        }
        Ok((response, invocation))
    }

    /// Walks the cascade until a valid response is found.
    pub fn plan_step(&mut self) -> Result<PlannedStep, StepFailure> {
        let step = self.log.len();
        let history = self.accepted();
        let base = self.current_prompt();
        let mut notes: Vec<String> = Vec::new();
        let mut attempts: BTreeMap<RoleTag, usize> = BTreeMap::new();
        let mut rejected: Vec<RejectedAttempt> = Vec::new();
        let levels = self.options.cascade.levels.clone();

        for level in levels {
            for attempt in 1..=level.budget {
                *attempts.entry(level.role).or_default() += 1;
                let prompt = with_retry_notes(&base, &notes);
                let text = match self.gateway.complete(level.role, &prompt) {
                    Ok(t) => t,
                    Err(e) if e.is_replay_failure() => return Err(StepFailure::Aborted(e.to_string())),
                    Err(e) => {
                        tracing::warn!(role = %level.role, attempt, "planner call failed: {e}");
                        rejected.push(RejectedAttempt {
                            level: level.role,
                            attempt,
                            violation: None,
                            reason: format!("model call failed: {e}"),
                        });
                        continue;
                    }
                };
                let (response, invocation) = match self.validate(&text, &history, step) {
                    Ok(ok) => ok,
                    Err(r) => {
                        rejected.push(RejectedAttempt {
                            level: level.role,
                            attempt,
                            violation: r.violation,
                            reason: r.message.clone(),
                        });
                        notes.push(r.message);
                        continue;
                    }
                };
                let mut observation = None;
                if invocation.action.is_edit() {
                    match self.run_edit(&invocation).map_err(StepFailure::Aborted)? {
                        EditAttempt::Done(obs) => observation = Some(obs),
                        EditAttempt::ZeroDiff(message) => {
                            rejected.push(RejectedAttempt {
                                level: level.role,
                                attempt,
                                violation: Some(Violation::ZeroDiff),
                                reason: message.clone(),
                            });
                            notes.push(message);
                            continue;
                        }
                    }
                }
                return Ok(PlannedStep {
                    response,
                    invocation,
                    level: level.role,
                    attempts_per_level: attempts,
                    rejected,
                    observation,
                });
            }
        }
        Err(StepFailure::CascadeExhausted(FailedStep {
            index: step,
            attempts_per_level: attempts,
            rejected,
        }))
    }

    fn worker_failure(e: WorkerError) -> Result<String, String> {
        match e {
            WorkerError::Gateway(g) if g.is_replay_failure() => Err(g.to_string()),
            other => Ok(format!("Error: {other}")),
        }
    }

    fn run_edit(&mut self, inv: &ActionInvocation) -> Result<EditAttempt, String> {
        let result = match inv.action {
            Action::EditScript => self.workers.edit_script(
                self.gateway,
                &mut self.ws,
                inv.text("script name"),
                inv.text("edit instructions"),
                inv.text("save script name"),
            ),
            _ => self.workers.edit_script_with_context(
                self.gateway,
                &mut self.ws,
                inv.text("script name"),
                inv.text("edit instructions"),
                inv.text("context file name"),
                (inv.integer("file start line number"), inv.integer("file end line number")),
                inv.text("save script name"),
            ),
        };
        let outcome = match result {
            Ok(o) => o,
            Err(e) => return Self::worker_failure(e).map(EditAttempt::Done),
        };
        let verdict = constraints::check_zero_diff(&outcome.diff);
        if !verdict.allowed() {
            self.ws.undo_edit(&outcome.save_as).map_err(|e| e.to_string())?;
            return Ok(EditAttempt::ZeroDiff(verdict.message));
        }
        let source = self.ws.normalize(inv.text("script name")).unwrap_or_default();
        let mut obs = format!(
            "The edited script was saved to {} ({} additions, {} deletions compared to {source}).\n",
            outcome.save_as, outcome.diff.additions, outcome.diff.deletions
        );
        obs.push_str("Diff:\n");
        obs.push_str(&outcome.diff.unified);
        Ok(EditAttempt::Done(obs))
    }

    /// Carries out an accepted action. Action failures become observation
    /// text; only a diverged replay is returned as an error.
    pub fn dispatch(&mut self, inv: &ActionInvocation) -> Result<String, String> {
        let ws_err = |e: crate::workspace::WorkspaceError| format!("Error: {e}");
        let obs = match inv.action {
            Action::ListFiles => {
                let dir = inv.text("directory path");
                match self.ws.list_files(dir) {
                    Ok(entries) if entries.is_empty() => format!("The directory {dir} is empty."),
                    Ok(entries) => entries.join("\n"),
                    Err(e) => ws_err(e),
                }
            }
            Action::CopyFile => {
                let (src, dst) = (inv.text("source"), inv.text("destination"));
                match self.ws.copy_file(src, dst) {
                    Ok(()) => format!("Copied {src} to {dst}."),
                    Err(e) => ws_err(e),
                }
            }
            Action::InspectScriptLines => {
                let start = inv.integer("start line number").max(0) as usize;
                let end = inv.integer("end line number").max(0) as usize;
                match self.ws.inspect_lines(inv.text("script name"), start, end) {
                    Ok(ex) => format!(
                        "Lines {}-{} of {} ({} lines in total):\n{}",
                        ex.start,
                        ex.end,
                        ex.path,
                        ex.total_lines,
                        ex.render()
                    ),
                    Err(e) => ws_err(e),
                }
            }
            Action::ExecuteScript => {
                let mut opts = self.options.exec.clone();
                opts.timeout = self
                    .options
                    .exec_timeout
                    .unwrap_or(Duration::from_secs(self.ws.timeout_secs()));
                match executor::execute_script(
                    &self.ws,
                    inv.text("script name"),
                    inv.args("arguments"),
                    &opts,
                ) {
                    Ok(report) => executor::render_observation(&report),
                    Err(e) => format!("Error: {e}"),
                }
            }
            Action::UndoEditScript => {
                let script = inv.text("script name");
                match self.ws.undo_edit(script) {
                    Ok(UndoOutcome::Restored { remaining }) => format!(
                        "Reverted the last edit to {script}. {remaining} earlier edit(s) remain."
                    ),
                    Ok(UndoOutcome::Removed { remaining }) => format!(
                        "Reverted the last edit to {script}; the file did not exist before it and was removed. {remaining} earlier edit(s) remain."
                    ),
                    Err(e) => ws_err(e),
                }
            }
            Action::GetCodeDiff => {
                let (a, b) = (inv.text("script 1 name"), inv.text("script 2 name"));
                match self.ws.get_diff(a, b) {
                    Ok(d) if d.is_empty() => format!("{a} and {b} are identical."),
                    Ok(d) => format!(
                        "{} additions, {} deletions going from {a} to {b}.\n{}",
                        d.additions, d.deletions, d.unified
                    ),
                    Err(e) => ws_err(e),
                }
            }
            Action::FinalAnswer => "Final answer submitted.".to_string(),
            Action::RequestPlanningExpertHelp => self.request_expert_help(inv.text("request description"))?,
            Action::UnderstandFile => match self.workers.understand_file(
                self.gateway,
                &self.ws,
                inv.text("file name"),
                inv.text("things to look for"),
            ) {
                Ok(s) => s,
                Err(e) => Self::worker_failure(e)?,
            },
            Action::UnderstandFileWithCodeContext => match self.workers.understand_file_with_context(
                self.gateway,
                &self.ws,
                inv.text("file name"),
                (inv.integer("file start line number"), inv.integer("file end line number")),
                inv.text("script name"),
                (inv.integer("script start line number"), inv.integer("script end line number")),
                inv.text("things to look for"),
            ) {
                Ok(s) => s,
                Err(e) => Self::worker_failure(e)?,
            },
            Action::EditScript | Action::EditScriptWithContext => match self.run_edit(inv)? {
                EditAttempt::Done(obs) => obs,
                EditAttempt::ZeroDiff(message) => message,
            },
            Action::Reflection => match self.workers.reflect(
                self.gateway,
                inv.text("things to reflect on"),
                self.log.long_term_summary(),
            ) {
                Ok(s) => s,
                Err(e) => Self::worker_failure(e)?,
            },
            Action::CheckImplementation => {
                let script = inv.text("script name");
                let result = self
                    .workers
                    .decompose_methodology(self.gateway, &self.ws)
                    .map(|_| ())
                    .and_then(|_| self.workers.check_implementation(self.gateway, &self.ws, script));
                match result {
                    Ok(reports) => render_reports(script, &reports),
                    Err(e) => Self::worker_failure(e)?,
                }
            }
        };
        Ok(obs)
    }

    /// Runs the expert role on the current planning context, at most
    /// `expert_help_budget` times per run.
    pub fn request_expert_help(&mut self, request: &str) -> Result<String, String> {
        if request.trim().is_empty() {
            return Ok("Error: the request description must not be empty.".into());
        }
        let budget = self.options.cascade.expert_help_budget;
        if self.expert_calls >= budget {
            return Ok(format!(
                "The planning expert budget is exhausted: all {budget} expert calls have been used. Continue planning on your own."
            ));
        }
        let prompt = expert_prompt(
            &self.problem,
            self.log.long_term_summary(),
            self.log.short_term(),
            request,
            &self.catalog,
        );
        self.expert_calls += 1;
        match self.gateway.complete(RoleTag::ExpertPlanner, &prompt) {
            Ok(advice) => Ok(format!("Planning expert's advice:\n{}", advice.trim_end())),
            Err(e) if e.is_replay_failure() => Err(e.to_string()),
            Err(e) => Ok(format!("Error: the planning expert could not be reached: {e}")),
        }
    }

    fn result(&self, termination: Termination) -> RunResult {
        RunResult {
            termination,
            steps_taken: self.log.len(),
            final_answer_text: None,
            generated_script: self.ws.exists(OUTPUT_SCRIPT).then(|| OUTPUT_SCRIPT.to_string()),
            failed_step: None,
            error: None,
        }
    }

    fn aborted(&self, error: String) -> RunResult {
        RunResult {
            error: Some(error),
            ..self.result(Termination::Aborted)
        }
    }

    /// Plans, dispatches and logs steps until a final answer, the step cap,
    /// cascade exhaustion or an unrecoverable failure.
    pub fn run(&mut self) -> RunResult {
        if let Err(e) = self.options.cascade.validate().and(self.options.policy.validate()) {
            return self.aborted(e);
        }
        loop {
            let index = self.log.len();
            if index >= self.options.cascade.max_steps {
                return self.result(Termination::MaxSteps);
            }
            let planned = match self.plan_step() {
                Ok(p) => p,
                Err(StepFailure::CascadeExhausted(failed)) => {
                    return RunResult {
                        failed_step: Some(failed),
                        ..self.result(Termination::CascadeExhausted)
                    };
                }
                Err(StepFailure::Aborted(e)) => return self.aborted(e),
            };
            let observation = match planned.observation.clone() {
                Some(o) => o,
                None => match self.dispatch(&planned.invocation) {
                    Ok(o) => o,
                    Err(e) => return self.aborted(e),
                },
            };
            let shown = self.log.summarize_observation(self.gateway, &observation);
            let record = StepRecord {
                index,
                step_summary: step_summary(&planned.response, &planned.invocation, &shown),
                response: planned.response,
                invocation: planned.invocation,
                observation,
                observation_shown: shown,
                cascade_level_used: planned.level,
                attempts_per_level: planned.attempts_per_level,
                rejected: planned.rejected,
                summary_after: String::new(),
            };
            let is_final = record.invocation.action == Action::FinalAnswer;
            let answer = is_final.then(|| record.invocation.text("description").to_string());
            if let Err(e) = self.log.append_step(self.gateway, record) {
                return self.aborted(e.to_string());
            }
            if let Err(e) = self.log.write_transcript() {
                return self.aborted(e.to_string());
            }
            if is_final {
                return RunResult {
                    final_answer_text: answer,
                    ..self.result(Termination::FinalAnswer)
                };
            }
        }
    }
}

/// Baseline: one planner-role call with every input file, whose fenced code
/// block becomes the output script. Extraction is retried within the base
/// level's budget.
pub fn run_single_call(gateway: &Gateway, ws: &mut Workspace, cascade: &CascadeConfig) -> RunResult {
    let aborted = |error: String| RunResult {
        termination: Termination::Aborted,
        steps_taken: 0,
        final_answer_text: None,
        generated_script: None,
        failed_step: None,
        error: Some(error),
    };
    let prompt = match single_call_prompt(ws) {
        Ok(p) => p,
        Err(e) => return aborted(e.to_string()),
    };
    let level = cascade.levels.first().copied().unwrap_or(CascadeLevel {
        role: RoleTag::BasePlanner,
        budget: 8,
    });
    let mut request = prompt;
    for attempt in 0..level.budget.max(1) {
        if attempt == 1 {
            request.push_str("\nYour previous reply had no fenced code block. Return the complete script inside one ``` block.\n");
        }
        let reply = match gateway.complete(level.role, &request) {
            Ok(r) => r,
            Err(e) => return aborted(e.to_string()),
        };
        if let Some(code) = extract_code_block(&reply) {
            return match ws.apply_edit(OUTPUT_SCRIPT, &code) {
                Ok(_) => RunResult {
                    termination: Termination::FinalAnswer,
                    steps_taken: 1,
                    final_answer_text: Some(format!("Single call output saved to {OUTPUT_SCRIPT}.")),
                    generated_script: Some(OUTPUT_SCRIPT.to_string()),
                    failed_step: None,
                    error: None,
                },
                Err(e) => aborted(e.to_string()),
            };
        }
    }
    aborted(format!(
        "no fenced code block in the reply after {} attempts",
        level.budget.max(1)
    ))
}

/// Convenience wrapper: a full agent or prescribed-path run.
pub fn run_loop(
    gateway: &Gateway,
    ws: Workspace,
    mode: RunMode,
    options: AgentOptions,
    log: ResearchLog,
) -> (RunResult, Workspace, ResearchLog) {
    let mut agent = Agent::new(gateway, ws, mode, options, log);
    let result = agent.run();
    let Agent { ws, log, .. } = agent;
    (result, ws, log)
}
