//! `rca run`: one trial in a fresh run directory.
//!
//! ```text
//! runs/<run_id>/
//!   workspace/                       copy of the source workspace, edited in place
//!   history/                         edit snapshots used by Undo Edit Script
//!   steps/<index>.json               one record per accepted step
//!   research_log.md
//!   cassette.jsonl                   record mode only
//!   methodology_implementation.py    on success
//!   manifest.json                    written last
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{SecondsFormat, Utc};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rca_core::config::Config;
use rca_core::gateway::{
    Cassette, Gateway, GatewayMode, Providers, RoleTag, SentinelProvider,
};
use rca_core::planner::{run_loop, run_single_call, RunMode, RunResult, Termination, OUTPUT_SCRIPT};
use rca_core::research_log::{ResearchLog, LOG_FILE, STEPS_DIR};
use rca_core::workspace::{EditHistory, Workspace};

use crate::{load_config, CliError, CliResult, RunArgs};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const WORKSPACE_DIR: &str = "workspace";
pub const HISTORY_DIR: &str = "history";
pub const CASSETTE_FILE: &str = "cassette.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CassetteMode {
    Live,
    Record,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteInfo {
    pub mode: CassetteMode,
    pub path: Option<String>,
}

/// Paths relative to the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub workspace_copy: String,
    pub history: String,
    pub steps: String,
    pub research_log: String,
    pub cassette: Option<String>,
    pub generated_script: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub mode: RunMode,
    pub workspace: String,
    pub task: String,
    pub config_digest: String,
    pub cassette: CassetteInfo,
    pub termination: Termination,
    pub steps_taken: usize,
    pub gateway_calls: BTreeMap<RoleTag, usize>,
    pub error: Option<String>,
    pub started_at: String,
    pub finished_at: String,
    pub artifacts: Artifacts,
}

impl RunManifest {
    pub fn load(run_dir: &Path) -> Result<Self, String> {
        let path = run_dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("bad manifest {}: {e}", path.display()))
    }
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub fn new_run_id() -> String {
    let suffix: u32 = rand::thread_rng().gen_range(0..0x100_0000);
    format!("{}-{suffix:06x}", Utc::now().format("%Y%m%dT%H%M%SZ"))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Copies `src` into `dst`, skipping `skip` (a runs directory nested inside
/// the workspace, say).
fn copy_tree(src: &Path, dst: &Path, skip: &Path) -> std::io::Result<()> {
    fs::create_dir_all(dst)?;
    for entry in fs::read_dir(src)? {
        let entry = entry?;
        let path = entry.path();
        if path.canonicalize().map(|p| p == skip).unwrap_or(false) {
            continue;
        }
        let target = dst.join(entry.file_name());
        let kind = entry.file_type()?;
        if kind.is_dir() {
            copy_tree(&path, &target, skip)?;
        } else if kind.is_file() {
            fs::copy(&path, &target)?;
        }
    }
    Ok(())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

/// Held for the duration of a live or record run on one source workspace.
struct RunLock(PathBuf);

impl RunLock {
    fn acquire(runs_dir: &Path, workspace: &Path) -> CliResult<Self> {
        let dir = runs_dir.join(".locks");
        fs::create_dir_all(&dir).map_err(CliError::failure)?;
        let key = sha256_hex(workspace.to_string_lossy().as_bytes());
        let path = dir.join(format!("{}.lock", &key[..16]));
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => {
                let _ = fs::write(&path, format!("{}\n{}\n", std::process::id(), workspace.display()));
                Ok(RunLock(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::failure(format!(
                "another live run holds {}; remove it if that run is gone",
                path.display()
            ))),
            Err(e) => Err(CliError::failure(e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn build_gateway(
    config: &Config,
    config_dir: &Path,
    mode: CassetteMode,
    cassette: Option<&Path>,
    run_dir: &Path,
) -> CliResult<Gateway> {
    let roles = config.role_table();
    let gateway = match mode {
        CassetteMode::Replay => {
            let path = cassette.ok_or_else(|| CliError::usage("--replay needs --cassette"))?;
            let cassette = Cassette::load(path).map_err(CliError::usage)?;
            Gateway::replay(roles, cassette, Arc::new(SentinelProvider::default()))
        }
        CassetteMode::Live | CassetteMode::Record => {
            let mut providers = Providers::uniform(Arc::new(SentinelProvider::default()));
            for role in RoleTag::ALL {
                let provider = roles.get(role).build_provider(config_dir).map_err(CliError::usage)?;
                providers = providers.with(role, provider);
            }
            let gw_mode = if mode == CassetteMode::Record {
                GatewayMode::Record(run_dir.join(CASSETTE_FILE))
            } else {
                GatewayMode::Live
            };
            Gateway::new(roles, providers, gw_mode).map_err(CliError::failure)?
        }
    };
    Ok(gateway.with_transport_retries(config.gateway.transport_retries))
}

pub fn cmd_run(args: &RunArgs) -> CliResult<u8> {
    let (mut config, config_text) = load_config(args.config.as_deref())?;
    if let Some(n) = args.max_steps {
        config.planner.max_steps = n;
        config.validate().map_err(CliError::usage)?;
    }
    let config_dir = args
        .config
        .as_deref()
        .and_then(Path::parent)
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let cassette_mode = match (args.record, args.replay) {
        (true, _) => CassetteMode::Record,
        (_, true) => CassetteMode::Replay,
        _ => CassetteMode::Live,
    };

    let source = Workspace::open(&args.workspace)
        .map_err(|e| CliError::failure(format!("invalid workspace: {e}")))?;
    let source_root = source.root().to_path_buf();
    drop(source);

    fs::create_dir_all(&args.runs_dir).map_err(CliError::failure)?;
    let runs_dir = args.runs_dir.canonicalize().map_err(CliError::failure)?;
    let _lock = match cassette_mode {
        CassetteMode::Replay => None,
        _ => Some(RunLock::acquire(&runs_dir, &source_root)?),
    };

    let started_at = now();
    let (run_id, run_dir) = loop {
        let id = new_run_id();
        let dir = runs_dir.join(&id);
        match fs::create_dir(&dir) {
            Ok(()) => break (id, dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(CliError::failure(e)),
        }
    };
    let ws_copy = run_dir.join(WORKSPACE_DIR);
    copy_tree(&source_root, &ws_copy, &runs_dir).map_err(CliError::failure)?;
    let history = EditHistory::persisted(run_dir.join(HISTORY_DIR)).map_err(CliError::failure)?;
    let mut ws = Workspace::open_with_history(&ws_copy, history).map_err(CliError::failure)?;
    let task = ws.task().to_string();

    let gateway = build_gateway(&config, &config_dir, cassette_mode, args.cassette.as_deref(), &run_dir)?;
    let log = ResearchLog::persisted(&run_dir, config.memory).map_err(CliError::failure)?;

    let result: RunResult = match args.mode {
        RunMode::Single => {
            let r = run_single_call(&gateway, &mut ws, &config.cascade());
            log.write_transcript().map_err(CliError::failure)?;
            r
        }
        mode => {
            let (r, _ws, log) = run_loop(&gateway, ws, mode, config.agent_options(), log);
            log.write_transcript().map_err(CliError::failure)?;
            r
        }
    };

    let mut generated = None;
    if result.termination == Termination::FinalAnswer {
        let script = ws_copy.join(OUTPUT_SCRIPT);
        if script.is_file() {
            fs::copy(&script, run_dir.join(OUTPUT_SCRIPT)).map_err(CliError::failure)?;
            generated = Some(OUTPUT_SCRIPT.to_string());
        }
    }
    let mut cassette_artifact = None;
    if cassette_mode == CassetteMode::Record {
        cassette_artifact = Some(CASSETTE_FILE.to_string());
        if let Some(dest) = &args.cassette {
            if let Some(parent) = dest.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(CliError::failure)?;
            }
            fs::copy(run_dir.join(CASSETTE_FILE), dest).map_err(CliError::failure)?;
        }
    }
    let error = match (&result.error, gateway.replay_remaining()) {
        (Some(e), _) => Some(e.clone()),
        (None, Some(n)) if n > 0 => Some(format!("{n} cassette entries were not consumed")),
        _ => None,
    };

    let manifest = RunManifest {
        run_id: run_id.clone(),
        mode: args.mode,
        workspace: source_root.display().to_string(),
        task,
        config_digest: sha256_hex(config_text.as_bytes()),
        cassette: CassetteInfo {
            mode: cassette_mode,
            path: args.cassette.as_ref().map(|p| p.display().to_string()),
        },
        termination: result.termination,
        steps_taken: result.steps_taken,
        gateway_calls: RoleTag::ALL
            .into_iter()
            .map(|r| (r, gateway.calls(r)))
            .filter(|(_, n)| *n > 0)
            .collect(),
        error,
        started_at,
        finished_at: now(),
        artifacts: Artifacts {
            workspace_copy: WORKSPACE_DIR.into(),
            history: HISTORY_DIR.into(),
            steps: STEPS_DIR.into(),
            research_log: LOG_FILE.into(),
            cassette: cassette_artifact,
            generated_script: generated.clone(),
        },
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(CliError::failure)?;
    write_atomic(&run_dir.join(MANIFEST_FILE), &json).map_err(CliError::failure)?;

    println!("run {run_id}: {} after {} step(s)", result.termination, result.steps_taken);
    if let Some(e) = &manifest.error {
        println!("error: {e}");
    }
    println!("run directory: {}", run_dir.display());
    let success = result.termination == Termination::FinalAnswer && generated.is_some();
    Ok(if success { 0 } else { crate::EXIT_FAILURE })
}
