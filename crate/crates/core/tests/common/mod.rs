//! Shared fixtures: the toy workspace, authored planner/worker scripts and
//! helpers to record and replay them.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rca_core::gateway::{
    Cassette, Gateway, GatewayMode, Providers, RoleTable, RoleTag, Script, ScriptedProvider,
    SentinelProvider,
};
use rca_core::planner::{run_loop, run_single_call, AgentOptions, RunMode, RunResult};
use rca_core::research_log::{MemorySettings, ResearchLog};
use rca_core::workspace::Workspace;
use serde_json::json;
use tempfile::TempDir;

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn toy_source() -> PathBuf {
    fixtures_dir().join("toy")
}

pub fn cassette_path(name: &str) -> PathBuf {
    fixtures_dir().join("cassettes").join(name)
}

pub fn copy_dir(src: &Path, dst: &Path) {
    fs::create_dir_all(dst).unwrap();
    for entry in fs::read_dir(src).unwrap() {
        let entry = entry.unwrap();
        let target = dst.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            fs::copy(entry.path(), target).unwrap();
        }
    }
}

/// A fresh copy of the toy workspace at `<tmp>/workspace`.
pub fn toy_workspace() -> (TempDir, Workspace) {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path().join("workspace");
    copy_dir(&toy_source(), &root);
    let ws = Workspace::open(&root).unwrap();
    (tmp, ws)
}

pub fn response(thought: &str, action: &str, input: serde_json::Value) -> String {
    format!(
        "Reflection: {thought}\n\
         Research Plan and Status:\n\
         1. Read the methodology and the starter code.\n\
         2. Implement the method in methodology_implementation.py.\n\
         3. Run it and check each subpart.\n\
         Fact Check: Only observations so far are confirmed.\n\
         Thought: {thought}\n\
         Action: {action}\n\
         Action Input: {input}\n"
    )
}

pub fn toy_solution() -> String {
    fs::read_to_string(fixtures_dir().join("authoring/solution.py")).unwrap()
}

pub const EDIT_INSTRUCTIONS: &str =
    "Standardize both splits with the training mean and standard deviation before fitting the centroids.";

/// Planner steps of the authored toy run, in order.
pub fn toy_planner_steps() -> Vec<String> {
    let out = "methodology_implementation.py";
    vec![
        response("Start by seeing what the workspace holds.", "List Files", json!({"directory path": "."})),
        response(
            "The methodology file defines what must be built.",
            "Understand File",
            json!({"file name": "methodology.md", "things to look for": "the subparts of the method and how they change training"}),
        ),
        response(
            "Work on a copy of the starter code.",
            "Copy File",
            json!({"source": "train.py", "destination": out}),
        ),
        response(
            "Add the standardization step the methodology asks for.",
            "Edit Script",
            json!({"script name": out, "edit instructions": EDIT_INSTRUCTIONS, "save script name": out}),
        ),
        response(
            "Run the edited script to measure it.",
            "Execute Script",
            json!({"script name": out, "arguments": ""}),
        ),
        response(
            "Confirm every subpart is implemented.",
            "Check Implementation",
            json!({"script name": out}),
        ),
        response(
            "Both subparts are implemented and accuracy improved from 0.5650 to 0.8250.",
            "Final Answer",
            json!({"description": "methodology_implementation.py standardizes features with training statistics before the nearest-centroid fit. Test accuracy 0.8250 against the starter's 0.5650."}),
        ),
    ]
}

pub const UNDERSTAND_REPLY: &str = "The method has two subparts: (1) standardize each feature with the training mean and standard deviation and apply the same transform to the test split; (2) fit class centroids on the standardized training data and classify by Euclidean distance.";

pub const DECOMPOSE_REPLY: &str = "1. Standardize every feature with training-split mean and standard deviation, applied to both splits.\n2. Fit class centroids on standardized training data and classify test points by Euclidean distance.";

/// Worker replies for the toy run, keyed by prompt needles, plus one long-term
/// summary per step.
pub fn toy_worker_script(script: &mut Script, steps: usize) {
    script.push_matching(RoleTag::Worker, "Things to look for:\nthe subparts", UNDERSTAND_REPLY);
    script.push_matching(
        RoleTag::Worker,
        EDIT_INSTRUCTIONS,
        format!("Here is the edited script.\n```python\n{}```\n", toy_solution()),
    );
    script.push_matching(RoleTag::Worker, "Split the methodology into", DECOMPOSE_REPLY);
    script.push_matching(
        RoleTag::Worker,
        "Methodology subpart 1 of 2",
        "Status: implemented\nSnippet: train_x, test_x = standardize(train_x, test_x)",
    );
    script.push_matching(
        RoleTag::Worker,
        "Methodology subpart 2 of 2",
        "Status: implemented\nSnippet: cents = centroids(train_x, train_y)",
    );
    let notes = [
        "Listed the workspace: methodology, dataset, pseudocode, train.py and performance.txt.",
        "The method standardizes features with training statistics, then fits nearest centroids.",
        "Copied train.py to methodology_implementation.py.",
        "Edited methodology_implementation.py to standardize both splits.",
        "Executed methodology_implementation.py: exit 0, test accuracy 0.8250 (baseline 0.5650).",
        "Check Implementation: both subparts implemented.",
        "Submitted the final answer.",
    ];
    let mut summary = String::new();
    for (i, note) in notes.iter().enumerate().take(steps) {
        summary.push_str(&format!("- {note}\n"));
        script.push_matching(RoleTag::Worker, format!("NEW STEP:\nStep {}:", i + 1), summary.trim_end());
    }
}

pub fn toy_script(mode: RunMode) -> Script {
    let mut script = Script::default();
    match mode {
        RunMode::Single => {
            script.push(
                RoleTag::BasePlanner,
                format!("The method standardizes features first.\n\n```python\n{}```\n", toy_solution()),
            );
        }
        _ => {
            let steps = toy_planner_steps();
            for s in &steps {
                script.push(RoleTag::BasePlanner, s.clone());
            }
            toy_worker_script(&mut script, steps.len());
        }
    }
    script
}

pub fn scripted_gateway(script: Script, mode: GatewayMode) -> Gateway {
    let provider = Arc::new(ScriptedProvider::new(script));
    Gateway::new(RoleTable::default(), Providers::uniform(provider), mode).unwrap()
}

pub fn options() -> AgentOptions {
    rca_core::config::Config::default().agent_options()
}

pub fn run_mode(gateway: &Gateway, ws: Workspace, mode: RunMode, log: ResearchLog) -> (RunResult, Workspace, ResearchLog) {
    match mode {
        RunMode::Single => {
            let mut ws = ws;
            let r = run_single_call(gateway, &mut ws, &options().cascade);
            (r, ws, log)
        }
        _ => run_loop(gateway, ws, mode, options(), log),
    }
}

/// Records `script` against a fresh toy workspace into `out`.
pub fn record_toy(mode: RunMode, script: Script, out: &Path) -> RunResult {
    let (_tmp, ws) = toy_workspace();
    let gateway = scripted_gateway(script, GatewayMode::Record(out.to_path_buf()));
    let (result, _, _) = run_mode(&gateway, ws, mode, ResearchLog::in_memory(MemorySettings::default()));
    result
}

pub struct Replayed {
    pub result: RunResult,
    pub tmp: TempDir,
    pub ws: Workspace,
    pub log: ResearchLog,
    pub sentinel_calls: usize,
    pub gateway_calls: usize,
    pub remaining: usize,
}

impl Replayed {
    pub fn run_dir(&self) -> PathBuf {
        self.tmp.path().join("run")
    }
}

/// Replays a cassette on a fresh toy workspace with a persisted log under
/// `<tmp>/run`.
pub fn replay_toy(mode: RunMode, cassette: &Path) -> Replayed {
    let (tmp, ws) = toy_workspace();
    let sentinel = Arc::new(SentinelProvider::default());
    let gateway = Gateway::replay(RoleTable::default(), Cassette::load(cassette).unwrap(), sentinel.clone());
    let log = ResearchLog::persisted(tmp.path().join("run"), MemorySettings::default()).unwrap();
    let (result, ws, log) = run_mode(&gateway, ws, mode, log);
    log.write_transcript().unwrap();
    Replayed {
        result,
        ws,
        log,
        sentinel_calls: sentinel.calls(),
        gateway_calls: gateway.total_calls(),
        remaining: gateway.replay_remaining().unwrap(),
        tmp,
    }
}
