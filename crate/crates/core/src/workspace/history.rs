//! Per-script undo stacks, optionally mirrored to disk.
//!
//! Layout: `<dir>/<hex(script path)>/<depth>.json`, one snapshot per applied
//! edit. Depth is zero-padded so a directory listing sorts in push order.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::WorkspaceError;

/// Content of a script before an edit; `None` when the edit created the file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub content: Option<String>,
}

#[derive(Debug, Default)]
pub struct EditHistory {
    dir: Option<PathBuf>,
    stacks: BTreeMap<String, Vec<Snapshot>>,
}

impl EditHistory {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a persisted history, reloading any existing stacks.
    pub fn persisted(dir: impl Into<PathBuf>) -> Result<Self, WorkspaceError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut stacks = BTreeMap::new();
        for entry in fs::read_dir(&dir)? {
            let entry = entry?;
            if !entry.file_type()?.is_dir() {
                continue;
            }
            let name = entry.file_name().to_string_lossy().into_owned();
            let Some(script) = hex::decode(&name)
                .ok()
                .and_then(|b| String::from_utf8(b).ok())
            else {
                continue;
            };
            let mut files: Vec<PathBuf> = fs::read_dir(entry.path())?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            files.sort();
            let mut stack = Vec::with_capacity(files.len());
            for file in files {
                let text = fs::read_to_string(&file)?;
                let snap: Snapshot = serde_json::from_str(&text).map_err(|e| {
                    WorkspaceError::Manifest(format!(
                        "corrupt edit history {}: {e}",
                        file.display()
                    ))
                })?;
                stack.push(snap);
            }
            if !stack.is_empty() {
                stacks.insert(script, stack);
            }
        }
        Ok(Self {
            dir: Some(dir),
            stacks,
        })
    }

    pub fn depth(&self, script: &str) -> usize {
        self.stacks.get(script).map_or(0, Vec::len)
    }

    pub fn push(&mut self, script: &str, snapshot: Snapshot) -> Result<(), WorkspaceError> {
        let depth = self.depth(script);
        if let Some(dir) = &self.dir {
            let script_dir = dir.join(hex::encode(script));
            fs::create_dir_all(&script_dir)?;
            let body = serde_json::to_string(&snapshot).expect("snapshot serializes");
            write_atomic(&snapshot_path(&script_dir, depth), body.as_bytes())?;
        }
        self.stacks
            .entry(script.to_string())
            .or_default()
            .push(snapshot);
        Ok(())
    }

    pub fn pop(&mut self, script: &str) -> Result<Snapshot, WorkspaceError> {
        let stack = self
            .stacks
            .get_mut(script)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| WorkspaceError::NothingToUndo(script.to_string()))?;
        let depth = stack.len() - 1;
        if let Some(dir) = &self.dir {
            let path = snapshot_path(&dir.join(hex::encode(script)), depth);
            if path.exists() {
                fs::remove_file(path)?;
            }
        }
        let snap = stack.pop().expect("non-empty stack");
        if stack.is_empty() {
            self.stacks.remove(script);
        }
        Ok(snap)
    }
}

fn snapshot_path(script_dir: &Path, depth: usize) -> PathBuf {
    script_dir.join(format!("{depth:06}.json"))
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn persisted_history_reloads() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut h = EditHistory::persisted(dir.path()).unwrap();
            h.push("a.py", Snapshot { content: None }).unwrap();
            h.push("a.py", Snapshot { content: Some("v1".into()) }).unwrap();
            h.push("sub/b.py", Snapshot { content: Some("b".into()) }).unwrap();
        }
        let mut h = EditHistory::persisted(dir.path()).unwrap();
        assert_eq!(h.depth("a.py"), 2);
        assert_eq!(h.depth("sub/b.py"), 1);
        assert_eq!(h.pop("a.py").unwrap().content.as_deref(), Some("v1"));
        drop(h);
        let h = EditHistory::persisted(dir.path()).unwrap();
        assert_eq!(h.depth("a.py"), 1);
    }

    #[test]
    fn pop_empty_errors() {
        let mut h = EditHistory::in_memory();
        assert!(matches!(h.pop("x.py"), Err(WorkspaceError::NothingToUndo(_))));
    }
}
