//! Runs target scripts as child processes.
//!
//! The plain backend launches `<interpreter> <script> <args…>` in the
//! workspace root. The traced backend launches the external trace shim
//! instead (`<shim…> <script> <args…> --out <dir>`), which writes a JSON
//! sidecar report and a `<stem>_execution_trace.cover` file beside the script.

mod cover;

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::head_tail;
use crate::workspace::{extract_single, Workspace, WorkspaceError};

pub use cover::{
    parse_cover, parse_cover_file, CoverError, LineEntry, LineStatus, LineTrace, TraceSummary,
    NEVER_EXECUTED_MARKER,
};

/// Per-stream character bound in observations.
pub const STREAM_LIMIT: usize = 2_000;
/// Never-executed line numbers listed in an observation.
pub const NEVER_EXECUTED_LIST_LIMIT: usize = 50;
pub const SHIM_REPORT_FILE: &str = "shim_report.json";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Plain,
    Traced,
}

#[derive(Debug, Clone)]
pub struct ExecOptions {
    pub backend: Backend,
    pub timeout: Duration,
    /// Command prefix for the trace shim (traced backend only).
    pub shim_command: Vec<String>,
    /// Environment variables withheld from the child (credentials).
    pub scrub_env: Vec<String>,
    /// Where the shim writes its sidecar files.
    pub scratch_dir: Option<PathBuf>,
}

impl Default for ExecOptions {
    fn default() -> Self {
        Self {
            backend: Backend::Plain,
            timeout: Duration::from_secs(crate::workspace::DEFAULT_TIMEOUT_SECS),
            shim_command: vec!["trace_shim".into()],
            scrub_env: Vec::new(),
            scratch_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub script: String,
    pub arguments: Vec<String>,
    pub exit_status: i32,
    pub timed_out: bool,
    pub stdout: String,
    pub stderr: String,
    pub duration_secs: f64,
    pub trace: Option<LineTrace>,
    /// Why the trace is missing when the traced backend was requested.
    pub trace_error: Option<String>,
    pub extracted_performance: Option<f64>,
}

/// Sidecar report written by the trace shim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShimReport {
    pub exit_status: i32,
    pub wall_seconds: f64,
    pub cover_path: Option<String>,
    pub stdout_path: String,
    pub stderr_path: String,
}

#[derive(Debug, Error)]
pub enum ExecError {
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error("script `{0}` not found")]
    MissingScript(String),
    #[error("failed to start `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("timeout must be positive")]
    InvalidTimeout,
    #[error("i/o error while running script: {0}")]
    Io(#[from] std::io::Error),
}

struct RawOutcome {
    exit_status: i32,
    timed_out: bool,
    stdout: String,
    stderr: String,
    duration: Duration,
}

pub fn execute_script(
    ws: &Workspace,
    script: &str,
    arguments: &[String],
    options: &ExecOptions,
) -> Result<ExecutionReport, ExecError> {
    if options.timeout.is_zero() {
        return Err(ExecError::InvalidTimeout);
    }
    let script_key = ws.normalize(script)?;
    let script_path = ws.resolve(&script_key)?;
    if !script_path.is_file() {
        return Err(ExecError::MissingScript(script.to_string()));
    }

    let mut report = match options.backend {
        Backend::Plain => {
            let mut argv: Vec<String> = ws.script_interpreter().to_vec();
            argv.push(script_key.clone());
            argv.extend(arguments.iter().cloned());
            let raw = run_command(&argv, ws.root(), options)?;
            report_from_raw(&script_key, arguments, raw, None, None)
        }
        Backend::Traced => run_traced(ws, &script_key, arguments, options)?,
    };

    if report.exit_status == 0 && !report.timed_out {
        report.extracted_performance = extract_single(ws.perf_pattern(), &report.stdout, "stdout").ok();
    }
    Ok(report)
}

fn report_from_raw(
    script: &str,
    arguments: &[String],
    raw: RawOutcome,
    trace: Option<LineTrace>,
    trace_error: Option<String>,
) -> ExecutionReport {
    ExecutionReport {
        script: script.to_string(),
        arguments: arguments.to_vec(),
        exit_status: raw.exit_status,
        timed_out: raw.timed_out,
        stdout: raw.stdout,
        stderr: raw.stderr,
        duration_secs: raw.duration.as_secs_f64(),
        trace,
        trace_error,
        extracted_performance: None,
    }
}

fn run_traced(
    ws: &Workspace,
    script: &str,
    arguments: &[String],
    options: &ExecOptions,
) -> Result<ExecutionReport, ExecError> {
    let scratch = match &options.scratch_dir {
        Some(dir) => dir.clone(),
        None => std::env::temp_dir().join(format!("rca-trace-{}", std::process::id())),
    };
    let out_dir = scratch.join(format!("trace-{}", unique_suffix()));
    std::fs::create_dir_all(&out_dir)?;

    let mut argv = options.shim_command.clone();
    argv.push(script.to_string());
    argv.extend(arguments.iter().cloned());
    argv.push("--out".into());
    argv.push(out_dir.to_string_lossy().into_owned());
    let mut raw = run_command(&argv, ws.root(), options)?;

    let sidecar = out_dir.join(SHIM_REPORT_FILE);
    let shim: ShimReport = match std::fs::read_to_string(&sidecar)
        .map_err(|e| e.to_string())
        .and_then(|t| serde_json::from_str(&t).map_err(|e| e.to_string()))
    {
        Ok(r) => r,
        Err(e) => {
            let msg = format!("trace shim produced no usable report: {e}");
            return Ok(report_from_raw(script, arguments, raw, None, Some(msg)));
        }
    };
    raw.exit_status = shim.exit_status;
    let read = |p: &str| std::fs::read_to_string(resolve_in(ws.root(), p));
    if let Ok(s) = read(&shim.stdout_path) {
        raw.stdout = s;
    }
    if let Ok(s) = read(&shim.stderr_path) {
        raw.stderr = s;
    }
    let (trace, trace_error) = match &shim.cover_path {
        Some(p) => match parse_cover_file(&resolve_in(ws.root(), p)) {
            Ok(t) => (Some(t), None),
            Err(e) => (None, Some(e.to_string())),
        },
        None => (None, Some("trace shim wrote no cover file".into())),
    };
    Ok(report_from_raw(script, arguments, raw, trace, trace_error))
}

fn resolve_in(root: &Path, p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        root.join(path)
    }
}

fn unique_suffix() -> String {
    use rand::Rng;
    format!("{:08x}", rand::thread_rng().gen::<u32>())
}

fn run_command(argv: &[String], cwd: &Path, options: &ExecOptions) -> Result<RawOutcome, ExecError> {
    let (program, rest) = argv.split_first().ok_or_else(|| ExecError::Spawn {
        command: String::new(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty command"),
    })?;
    let mut cmd = Command::new(program);
    cmd.args(rest)
        .current_dir(cwd)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    for var in &options.scrub_env {
        cmd.env_remove(var);
    }
    #[cfg(unix)]
    {
        use std::os::unix::process::CommandExt;
        cmd.process_group(0);
    }

    let started = Instant::now();
    let mut child = cmd.spawn().map_err(|source| ExecError::Spawn {
        command: argv.join(" "),
        source,
    })?;
    let stdout = drain(child.stdout.take());
    let stderr = drain(child.stderr.take());

    let deadline = started + options.timeout;
    let mut timed_out = false;
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break status;
        }
        if Instant::now() >= deadline {
            timed_out = true;
            kill_tree(&mut child);
            break child.wait()?;
        }
        thread::sleep(Duration::from_millis(10));
    };
    let duration = started.elapsed();

    Ok(RawOutcome {
        exit_status: exit_code(status),
        timed_out,
        stdout: stdout.join().unwrap_or_default(),
        stderr: stderr.join().unwrap_or_default(),
        duration,
    })
}

fn drain<R: Read + Send + 'static>(pipe: Option<R>) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        if let Some(mut p) = pipe {
            let _ = p.read_to_end(&mut buf);
        }
        String::from_utf8_lossy(&buf).into_owned()
    })
}

fn kill_tree(child: &mut Child) {
    #[cfg(unix)]
    {
        // The child leads its own process group; take the whole group down so
        // grandchildren do not keep the output pipes open.
        let pgid = child.id() as libc::pid_t;
        unsafe {
            libc::kill(-pgid, libc::SIGKILL);
        }
    }
    let _ = child.kill();
}

fn exit_code(status: std::process::ExitStatus) -> i32 {
    if let Some(code) = status.code() {
        return code;
    }
    #[cfg(unix)]
    {
        use std::os::unix::process::ExitStatusExt;
        if let Some(sig) = status.signal() {
            return 128 + sig;
        }
    }
    -1
}

/// Deterministic observation text for the planner. Timing appears only for
/// timed-out runs.
pub fn render_observation(report: &ExecutionReport) -> String {
    let mut out = String::new();
    let args = if report.arguments.is_empty() {
        String::new()
    } else {
        format!(" {}", report.arguments.join(" "))
    };
    out.push_str(&format!("Executed {}{}\n", report.script, args));
    if report.timed_out {
        out.push_str(&format!(
            "The script timed out after {:.1} seconds and was terminated.\n",
            report.duration_secs
        ));
    }
    out.push_str(&format!("exit status: {}\n", report.exit_status));
    out.push_str("stdout:\n");
    out.push_str(&fenced(&head_tail(&report.stdout, STREAM_LIMIT)));
    out.push_str("stderr:\n");
    out.push_str(&fenced(&head_tail(&report.stderr, STREAM_LIMIT)));
    if let Some(perf) = report.extracted_performance {
        out.push_str(&format!("performance: {perf}\n"));
    }
    if let Some(trace) = &report.trace {
        let s = trace.summary();
        out.push_str(&format!(
            "execution trace: {} lines, {} executable, {} executed, {} never executed\n",
            s.total_lines, s.executable, s.executed, s.never_executed
        ));
        let never = trace.never_executed_lines();
        if !never.is_empty() {
            let shown: Vec<String> = never
                .iter()
                .take(NEVER_EXECUTED_LIST_LIMIT)
                .map(usize::to_string)
                .collect();
            let more = never.len().saturating_sub(NEVER_EXECUTED_LIST_LIMIT);
            out.push_str(&format!("never executed lines: {}", shown.join(", ")));
            if more > 0 {
                out.push_str(&format!(" (and {more} more)"));
            }
            out.push('\n');
        }
    } else if let Some(err) = &report.trace_error {
        out.push_str(&format!("execution trace unavailable: {err}\n"));
    }
    out
}

fn fenced(text: &str) -> String {
    if text.is_empty() {
        return "(empty)\n".into();
    }
    let mut s = String::from("```\n");
    s.push_str(text);
    if !text.ends_with('\n') {
        s.push('\n');
    }
    s.push_str("```\n");
    s
}
