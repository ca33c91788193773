//! The on-disk environment the agent acts on: input files, scripts, edit
//! history and the programmatic file actions.
//!
//! Every path handed to a [`Workspace`] is relative to its root and is
//! resolved lexically before touching the filesystem; anything that would
//! leave the root (`..` escapes, absolute paths, symlinks pointing outside)
//! is refused with [`WorkspaceError::SandboxViolation`].

mod diff;
mod history;
mod manifest;

use std::fs;
use std::io;
use std::path::{Component, Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use diff::{diff_texts, DiffSummary};
pub use history::{EditHistory, Snapshot};
pub(crate) use history::write_atomic;
pub use manifest::{
    FileRole, KnownFile, ManifestFile, ManifestFiles, PerfDirection, SubpartIndex, MANIFEST_FILE,
};

/// Maximum number of lines a single inspection may return.
pub const INSPECT_LIMIT: usize = 100;
pub const DEFAULT_TIMEOUT_SECS: u64 = 1800;

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error("path `{0}` is outside the workspace")]
    SandboxViolation(String),
    #[error("`{0}` is managed by the workspace and cannot be modified")]
    Protected(String),
    #[error("`{0}` not found")]
    NotFound(String),
    #[error("parent directory of `{0}` does not exist")]
    MissingParent(String),
    #[error("invalid line range {start}-{end}: {reason}")]
    InvalidRange {
        start: usize,
        end: usize,
        reason: String,
    },
    #[error("requested {span} lines but at most {limit} lines can be inspected per call; narrow the line range")]
    SpanTooLarge { span: usize, limit: usize },
    #[error("no edits recorded for `{0}`, nothing to undo")]
    NothingToUndo(String),
    #[error("performance pattern `{pattern}` matched nothing in {source_name}")]
    PerformanceNotFound {
        pattern: String,
        source_name: String,
    },
    #[error("performance pattern `{pattern}` matched {count} values in {source_name}; expected exactly one")]
    AmbiguousPerformance {
        pattern: String,
        count: usize,
        source_name: String,
    },
    #[error("invalid workspace: {0}")]
    Manifest(String),
    #[error("workspace is missing the mandatory {0} file")]
    MissingRole(FileRole),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = WorkspaceError> = std::result::Result<T, E>;

/// The baseline performance value and how to compare against it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Performance {
    pub value: f64,
    pub direction: PerfDirection,
}

/// Numbered slice of a file as returned by [`Workspace::inspect_lines`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Excerpt {
    pub path: String,
    pub start: usize,
    pub end: usize,
    pub total_lines: usize,
    /// Raw lines including their terminators.
    pub lines: Vec<String>,
}

impl Excerpt {
    /// `N: text` per line, newline-terminated.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, line) in self.lines.iter().enumerate() {
            let text = line.strip_suffix('\n').unwrap_or(line);
            let text = text.strip_suffix('\r').unwrap_or(text);
            out.push_str(&format!("{}: {}\n", self.start + i, text));
        }
        out
    }
}

/// What `undo_edit` put back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UndoOutcome {
    Restored { remaining: usize },
    Removed { remaining: usize },
}

#[derive(Debug)]
pub struct Workspace {
    root: PathBuf,
    task: String,
    manifest: Vec<KnownFile>,
    script_interpreter: Vec<String>,
    perf_pattern: Regex,
    perf_direction: PerfDirection,
    timeout_secs: u64,
    history: EditHistory,
}

impl Workspace {
    /// Opens the workspace at `root` with an in-memory edit history.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        Self::open_with_history(root, EditHistory::in_memory())
    }

    pub fn open_with_history(root: impl AsRef<Path>, history: EditHistory) -> Result<Self> {
        let root = root.as_ref();
        if !root.is_dir() {
            return Err(WorkspaceError::Manifest(format!(
                "{} is not a directory",
                root.display()
            )));
        }
        let root = root.canonicalize()?;
        let file = ManifestFile::load(&root.join(MANIFEST_FILE))?;
        Self::from_manifest(root, file, history)
    }

    fn from_manifest(root: PathBuf, file: ManifestFile, history: EditHistory) -> Result<Self> {
        let script_interpreter: Vec<String> = file
            .script_interpreter
            .split_whitespace()
            .map(str::to_string)
            .collect();
        if script_interpreter.is_empty() {
            return Err(WorkspaceError::Manifest(
                "script_interpreter must not be empty".into(),
            ));
        }
        let perf_pattern = Regex::new(&file.perf_pattern)
            .map_err(|e| WorkspaceError::Manifest(format!("bad perf_pattern: {e}")))?;
        if perf_pattern.captures_len() != 2 {
            return Err(WorkspaceError::Manifest(
                "perf_pattern must have exactly one capture group".into(),
            ));
        }
        let task = file.task.clone().unwrap_or_else(|| {
            root.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "workspace".into())
        });

        let mut ws = Workspace {
            root,
            task,
            manifest: Vec::new(),
            script_interpreter,
            perf_pattern,
            perf_direction: file.perf_direction,
            timeout_secs: file.timeout_secs.unwrap_or(DEFAULT_TIMEOUT_SECS),
            history,
        };

        for role in FileRole::MANDATORY {
            let rel = file.role_path(role).ok_or(WorkspaceError::MissingRole(role))?;
            let path = ws.resolve(rel)?;
            if !path.is_file() {
                return Err(WorkspaceError::MissingRole(role));
            }
            ws.register(rel, role, None)?;
        }
        for rel in &file.files.supplementary {
            if !ws.resolve(rel)?.is_file() {
                return Err(WorkspaceError::NotFound(rel.clone()));
            }
            ws.register(rel, FileRole::Supplementary, None)?;
        }
        let mut subparts = Vec::new();
        for entry in fs::read_dir(&ws.root)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(index) = SubpartIndex::parse_file_name(&name) {
                subparts.push((index, name));
            }
        }
        subparts.sort();
        for (index, name) in subparts {
            ws.register(&name, FileRole::Subpart, Some(index))?;
        }
        // Validates the pattern against the performance file up front.
        ws.read_baseline_performance()?;
        Ok(ws)
    }

    fn register(&mut self, rel: &str, role: FileRole, index: Option<SubpartIndex>) -> Result<()> {
        let key = self.normalize(rel)?;
        if self.manifest.iter().any(|f| f.relative_path == key) {
            return Err(WorkspaceError::Manifest(format!(
                "`{key}` is listed more than once"
            )));
        }
        self.manifest.push(KnownFile {
            relative_path: key,
            role,
            subpart_index: index,
        });
        Ok(())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn task(&self) -> &str {
        &self.task
    }

    pub fn manifest(&self) -> &[KnownFile] {
        &self.manifest
    }

    pub fn script_interpreter(&self) -> &[String] {
        &self.script_interpreter
    }

    pub fn perf_pattern(&self) -> &Regex {
        &self.perf_pattern
    }

    pub fn perf_direction(&self) -> PerfDirection {
        self.perf_direction
    }

    pub fn timeout_secs(&self) -> u64 {
        self.timeout_secs
    }

    /// Relative path registered for a mandatory role.
    pub fn path_for(&self, role: FileRole) -> &str {
        self.manifest
            .iter()
            .find(|f| f.role == role)
            .map(|f| f.relative_path.as_str())
            .expect("mandatory roles are validated at construction")
    }

    pub fn files_with_role(&self, role: FileRole) -> impl Iterator<Item = &KnownFile> {
        self.manifest.iter().filter(move |f| f.role == role)
    }

    /// Lexically normalizes a relative path; `.` becomes the empty string.
    pub fn normalize(&self, rel: &str) -> Result<String> {
        let mut parts: Vec<String> = Vec::new();
        for comp in Path::new(rel.trim()).components() {
            match comp {
                Component::Normal(p) => parts.push(p.to_string_lossy().into_owned()),
                Component::CurDir => {}
                Component::ParentDir => {
                    if parts.pop().is_none() {
                        return Err(WorkspaceError::SandboxViolation(rel.to_string()));
                    }
                }
                Component::RootDir | Component::Prefix(_) => {
                    return Err(WorkspaceError::SandboxViolation(rel.to_string()));
                }
            }
        }
        Ok(parts.join("/"))
    }

    /// Absolute path for `rel`, guaranteed to lie under the root.
    pub fn resolve(&self, rel: &str) -> Result<PathBuf> {
        let key = self.normalize(rel)?;
        let path = if key.is_empty() {
            self.root.clone()
        } else {
            self.root.join(&key)
        };
        // Symlinks: the deepest existing ancestor must stay under the root.
        let mut probe = path.as_path();
        loop {
            if probe.exists() {
                let real = probe.canonicalize()?;
                if !real.starts_with(&self.root) {
                    return Err(WorkspaceError::SandboxViolation(rel.to_string()));
                }
                break;
            }
            match probe.parent() {
                Some(parent) => probe = parent,
                None => break,
            }
        }
        Ok(path)
    }

    fn resolve_writable(&self, rel: &str) -> Result<(String, PathBuf)> {
        let key = self.normalize(rel)?;
        if key.is_empty() {
            return Err(WorkspaceError::Protected(rel.to_string()));
        }
        if key == MANIFEST_FILE {
            return Err(WorkspaceError::Protected(key));
        }
        let path = self.resolve(&key)?;
        Ok((key, path))
    }

    pub fn read_text(&self, rel: &str) -> Result<String> {
        let path = self.resolve(rel)?;
        if !path.is_file() {
            return Err(WorkspaceError::NotFound(rel.to_string()));
        }
        Ok(fs::read_to_string(path)?)
    }

    pub fn exists(&self, rel: &str) -> bool {
        self.resolve(rel).map(|p| p.is_file()).unwrap_or(false)
    }

    /// Sorted, non-recursive directory listing; directories end with `/`.
    pub fn list_files(&self, dir: &str) -> Result<Vec<String>> {
        let key = self.normalize(dir)?;
        let path = self.resolve(dir)?;
        if !path.is_dir() {
            return Err(WorkspaceError::NotFound(dir.to_string()));
        }
        let mut names = Vec::new();
        for entry in fs::read_dir(&path)? {
            let entry = entry?;
            let mut name = entry.file_name().to_string_lossy().into_owned();
            if key.is_empty() && name == MANIFEST_FILE {
                continue;
            }
            if entry.path().is_dir() {
                name.push('/');
            }
            names.push(name);
        }
        names.sort();
        Ok(names)
    }

    pub fn copy_file(&mut self, source: &str, destination: &str) -> Result<()> {
        let src = self.resolve(source)?;
        if !src.is_file() {
            return Err(WorkspaceError::NotFound(source.to_string()));
        }
        let (key, dst) = self.resolve_writable(destination)?;
        match dst.parent() {
            Some(parent) if parent.is_dir() => {}
            _ => return Err(WorkspaceError::MissingParent(destination.to_string())),
        }
        fs::copy(&src, &dst)?;
        self.note_generated(&key);
        Ok(())
    }

    pub fn inspect_lines(&self, script: &str, start: usize, end: usize) -> Result<Excerpt> {
        let invalid = |reason: &str| WorkspaceError::InvalidRange {
            start,
            end,
            reason: reason.to_string(),
        };
        if start == 0 {
            return Err(invalid("line numbers start at 1"));
        }
        if start > end {
            return Err(invalid("start line is after end line"));
        }
        let text = self.read_text(script)?;
        let lines: Vec<&str> = text.split_inclusive('\n').collect();
        let total = lines.len();
        if start > total {
            return Err(invalid(&format!(
                "start line is beyond the end of the file ({total} lines)"
            )));
        }
        let end_clamped = end.min(total);
        let span = end_clamped - start + 1;
        if span > INSPECT_LIMIT {
            return Err(WorkspaceError::SpanTooLarge {
                span,
                limit: INSPECT_LIMIT,
            });
        }
        Ok(Excerpt {
            path: self.normalize(script)?,
            start,
            end: end_clamped,
            total_lines: total,
            lines: lines[start - 1..end_clamped]
                .iter()
                .map(|l| l.to_string())
                .collect(),
        })
    }

    pub fn get_diff(&self, script_a: &str, script_b: &str) -> Result<DiffSummary> {
        let a = self.read_text(script_a)?;
        let b = self.read_text(script_b)?;
        Ok(diff_texts(script_a, script_b, &a, &b))
    }

    /// Writes `new_content` to `script`, recording the prior state for undo.
    /// The returned diff is against the prior content (empty if the file did
    /// not exist).
    pub fn apply_edit(&mut self, script: &str, new_content: &str) -> Result<DiffSummary> {
        let (key, path) = self.resolve_writable(script)?;
        match path.parent() {
            Some(parent) if parent.is_dir() => {}
            _ => return Err(WorkspaceError::MissingParent(script.to_string())),
        }
        let prior = if path.is_file() {
            Some(fs::read_to_string(&path)?)
        } else {
            None
        };
        let summary = diff_texts(
            &key,
            &key,
            prior.as_deref().unwrap_or(""),
            new_content,
        );
        self.history.push(&key, Snapshot { content: prior })?;
        fs::write(&path, new_content)?;
        self.note_generated(&key);
        Ok(summary)
    }

    pub fn undo_edit(&mut self, script: &str) -> Result<UndoOutcome> {
        let (key, path) = self.resolve_writable(script)?;
        let snapshot = self.history.pop(&key)?;
        let remaining = self.history.depth(&key);
        match snapshot.content {
            Some(content) => {
                fs::write(&path, content)?;
                Ok(UndoOutcome::Restored { remaining })
            }
            None => {
                if path.exists() {
                    fs::remove_file(&path)?;
                }
                self.manifest
                    .retain(|f| !(f.relative_path == key && f.role == FileRole::Generated));
                Ok(UndoOutcome::Removed { remaining })
            }
        }
    }

    pub fn edit_depth(&self, script: &str) -> usize {
        self.normalize(script)
            .map(|k| self.history.depth(&k))
            .unwrap_or(0)
    }

    pub fn read_baseline_performance(&self) -> Result<Performance> {
        let rel = self.path_for(FileRole::StarterPerformance).to_string();
        let text = self.read_text(&rel)?;
        let value = self.extract_performance(&text, &rel)?;
        Ok(Performance {
            value,
            direction: self.perf_direction,
        })
    }

    /// Applies the workspace pattern to `text`, requiring exactly one match.
    pub fn extract_performance(&self, text: &str, source_name: &str) -> Result<f64> {
        extract_single(&self.perf_pattern, text, source_name)
    }

    fn note_generated(&mut self, key: &str) {
        if !self.manifest.iter().any(|f| f.relative_path == key) {
            self.manifest.push(KnownFile {
                relative_path: key.to_string(),
                role: FileRole::Generated,
                subpart_index: None,
            });
        }
    }
}

pub fn extract_single(pattern: &Regex, text: &str, source_name: &str) -> Result<f64> {
    let values: Vec<&str> = pattern
        .captures_iter(text)
        .filter_map(|c| c.get(1).map(|m| m.as_str()))
        .collect();
    match values.as_slice() {
        [] => Err(WorkspaceError::PerformanceNotFound {
            pattern: pattern.as_str().to_string(),
            source_name: source_name.to_string(),
        }),
        [one] => one.trim().parse::<f64>().map_err(|_| {
            WorkspaceError::PerformanceNotFound {
                pattern: pattern.as_str().to_string(),
                source_name: format!("{source_name} (captured `{one}` is not a number)"),
            }
        }),
        many => Err(WorkspaceError::AmbiguousPerformance {
            pattern: pattern.as_str().to_string(),
            count: many.len(),
            source_name: source_name.to_string(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> (tempfile::TempDir, Workspace) {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        fs::write(
            root.join(MANIFEST_FILE),
            r#"
script_interpreter = "python3"
perf_pattern = 'accuracy:\s*([0-9.]+)'
perf_direction = "higher_better"

[files]
methodology = "methodology_description.txt"
dataset = "dataset_description.txt"
pseudocode = "pseudocode.txt"
starter_code = "starter_code.py"
starter_performance = "starter_code_performance.txt"
"#,
        )
        .unwrap();
        fs::write(root.join("methodology_description.txt"), "method\n").unwrap();
        fs::write(root.join("dataset_description.txt"), "data\n").unwrap();
        fs::write(root.join("pseudocode.txt"), "pseudo\n").unwrap();
        let starter: String = (1..=40).map(|i| format!("line {i}\n")).collect();
        fs::write(root.join("starter_code.py"), starter).unwrap();
        fs::write(root.join("starter_code_performance.txt"), "Test accuracy: 0.7123\n").unwrap();
        fs::write(root.join("subpart_1_a.py"), "pass\n").unwrap();
        let ws = Workspace::open(root).unwrap();
        (dir, ws)
    }

    #[test]
    fn manifest_roles_and_subparts() {
        let (_d, ws) = fixture();
        assert_eq!(ws.path_for(FileRole::StarterCode), "starter_code.py");
        let subs: Vec<_> = ws.files_with_role(FileRole::Subpart).collect();
        assert_eq!(subs.len(), 1);
        assert_eq!(subs[0].subpart_index.as_ref().unwrap().part, 1);
    }

    #[test]
    fn missing_role_fails_construction() {
        let (dir, _ws) = fixture();
        fs::remove_file(dir.path().join("pseudocode.txt")).unwrap();
        let err = Workspace::open(dir.path()).unwrap_err();
        assert!(matches!(err, WorkspaceError::MissingRole(FileRole::Pseudocode)));
        assert!(err.to_string().contains("pseudocode"));
    }

    #[test]
    fn listing_hides_manifest_and_marks_dirs() {
        let (dir, ws) = fixture();
        fs::create_dir(dir.path().join("data")).unwrap();
        let names = ws.list_files(".").unwrap();
        assert!(names.contains(&"data/".to_string()));
        assert!(!names.iter().any(|n| n == MANIFEST_FILE));
        assert!(matches!(ws.list_files("missing/"), Err(WorkspaceError::NotFound(_))));
        assert!(matches!(ws.list_files("../.."), Err(WorkspaceError::SandboxViolation(_))));
    }

    #[test]
    fn copy_semantics() {
        let (_d, mut ws) = fixture();
        ws.copy_file("starter_code.py", "methodology_implementation.py").unwrap();
        assert_eq!(
            ws.read_text("starter_code.py").unwrap(),
            ws.read_text("methodology_implementation.py").unwrap()
        );
        assert!(matches!(
            ws.copy_file("nonexistent.py", "x.py"),
            Err(WorkspaceError::NotFound(_))
        ));
        assert!(matches!(
            ws.copy_file("starter_code.py", "deep/missing/b.py"),
            Err(WorkspaceError::MissingParent(_))
        ));
        assert!(matches!(
            ws.copy_file("starter_code.py", "../escape.py"),
            Err(WorkspaceError::SandboxViolation(_))
        ));
        assert!(matches!(
            ws.copy_file("starter_code.py", MANIFEST_FILE),
            Err(WorkspaceError::Protected(_))
        ));
    }

    #[test]
    fn inspect_ranges() {
        let (_d, ws) = fixture();
        let ex = ws.inspect_lines("starter_code.py", 1, 3).unwrap();
        assert_eq!(ex.render(), "1: line 1\n2: line 2\n3: line 3\n");
        assert!(matches!(
            ws.inspect_lines("starter_code.py", 5, 2),
            Err(WorkspaceError::InvalidRange { .. })
        ));
        assert!(matches!(
            ws.inspect_lines("starter_code.py", 41, 45),
            Err(WorkspaceError::InvalidRange { .. })
        ));
        let all = ws.inspect_lines("starter_code.py", 1, 500).unwrap();
        assert_eq!((all.start, all.end, all.lines.len()), (1, 40, 40));
    }

    #[test]
    fn span_cap_applies_after_clamping() {
        let (dir, ws) = fixture();
        let long: String = (1..=250).map(|i| format!("{i}\n")).collect();
        fs::write(dir.path().join("long.py"), long).unwrap();
        let err = ws.inspect_lines("long.py", 1, 101).unwrap_err();
        assert!(matches!(err, WorkspaceError::SpanTooLarge { span: 101, limit: 100 }));
        assert!(err.to_string().contains("narrow"));
        assert_eq!(ws.inspect_lines("long.py", 151, 400).unwrap().lines.len(), 100);
    }

    #[test]
    fn edit_undo_round_trip() {
        let (_d, mut ws) = fixture();
        let original = ws.read_text("starter_code.py").unwrap();
        ws.apply_edit("starter_code.py", "A\n").unwrap();
        ws.apply_edit("starter_code.py", "B\n").unwrap();
        ws.undo_edit("starter_code.py").unwrap();
        assert_eq!(ws.read_text("starter_code.py").unwrap(), "A\n");
        ws.undo_edit("starter_code.py").unwrap();
        assert_eq!(ws.read_text("starter_code.py").unwrap(), original);
        assert!(matches!(
            ws.undo_edit("starter_code.py"),
            Err(WorkspaceError::NothingToUndo(_))
        ));
    }

    #[test]
    fn undo_of_created_file_removes_it() {
        let (_d, mut ws) = fixture();
        ws.apply_edit("new.py", "x = 1\n").unwrap();
        assert!(ws.exists("new.py"));
        assert_eq!(ws.undo_edit("new.py").unwrap(), UndoOutcome::Removed { remaining: 0 });
        assert!(!ws.exists("new.py"));
    }

    #[test]
    fn identical_edit_reports_zero_diff() {
        let (_d, mut ws) = fixture();
        let same = ws.read_text("starter_code.py").unwrap();
        let d = ws.apply_edit("starter_code.py", &same).unwrap();
        assert!(d.is_empty());
        assert_eq!(ws.edit_depth("starter_code.py"), 1);
    }

    #[test]
    fn performance_extraction() {
        let (dir, ws) = fixture();
        let perf = ws.read_baseline_performance().unwrap();
        assert_eq!(perf.value, 0.7123);
        assert_eq!(perf.direction, PerfDirection::HigherBetter);
        assert!(matches!(
            ws.extract_performance("nothing", "x"),
            Err(WorkspaceError::PerformanceNotFound { .. })
        ));
        assert!(matches!(
            ws.extract_performance("accuracy: 0.1\naccuracy: 0.2", "x"),
            Err(WorkspaceError::AmbiguousPerformance { count: 2, .. })
        ));
        fs::write(dir.path().join("starter_code_performance.txt"), "no value").unwrap();
        assert!(Workspace::open(dir.path()).is_err());
    }
}
