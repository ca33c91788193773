//! JSON-lines cassette: one recorded model call per line.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::RoleTag;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub sequence: usize,
    pub role: RoleTag,
    pub prompt_digest: String,
    pub prompt_text: String,
    pub response_text: String,
    pub temperature: f64,
}

impl CassetteEntry {
    pub fn new(sequence: usize, role: RoleTag, prompt: &str, response: &str, temperature: f64) -> Self {
        Self {
            sequence,
            role,
            prompt_digest: prompt_digest(prompt),
            prompt_text: prompt.to_string(),
            response_text: response.to_string(),
            temperature,
        }
    }
}

/// SHA-256 of the exact prompt bytes, lowercase hex.
pub fn prompt_digest(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Error)]
pub enum CassetteError {
    #[error("cassette line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("cannot access cassette {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cassette {
    pub entries: Vec<CassetteEntry>,
}

impl Cassette {
    pub fn load(path: &Path) -> Result<Self, CassetteError> {
        let io_err = |source| CassetteError::Io {
            path: path.to_path_buf(),
            source,
        };
        let reader = BufReader::new(File::open(path).map_err(io_err)?);
        let mut entries: Vec<CassetteEntry> = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(io_err)?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: CassetteEntry =
                serde_json::from_str(&line).map_err(|e| CassetteError::Parse {
                    line: line_no,
                    message: e.to_string(),
                })?;
            if let Some(prev) = entries.last() {
                if entry.sequence <= prev.sequence {
                    return Err(CassetteError::Parse {
                        line: line_no,
                        message: format!(
                            "sequence {} does not follow {}",
                            entry.sequence, prev.sequence
                        ),
                    });
                }
            }
            if prompt_digest(&entry.prompt_text) != entry.prompt_digest {
                return Err(CassetteError::Parse {
                    line: line_no,
                    message: "prompt_digest does not match prompt_text".into(),
                });
            }
            entries.push(entry);
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<(), CassetteError> {
        let mut body = String::new();
        for entry in &self.entries {
            body.push_str(&serde_json::to_string(entry).expect("entry serializes"));
            body.push('\n');
        }
        fs::write(path, body).map_err(|source| CassetteError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn for_role(&self, role: RoleTag) -> impl Iterator<Item = &CassetteEntry> {
        self.entries.iter().filter(move |e| e.role == role)
    }
}

/// Appends entries to a cassette file as they are recorded, so a crashed run
/// still leaves every completed call on disk.
#[derive(Debug)]
pub(crate) struct CassetteWriter {
    path: PathBuf,
    file: File,
    pub(crate) cassette: Cassette,
}

impl CassetteWriter {
    pub(crate) fn create(path: &Path) -> Result<Self, CassetteError> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)
            .map_err(|source| CassetteError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
            cassette: Cassette::default(),
        })
    }

    pub(crate) fn append(&mut self, entry: CassetteEntry) -> Result<(), CassetteError> {
        let mut line = serde_json::to_string(&entry).expect("entry serializes");
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|source| CassetteError::Io {
                path: self.path.clone(),
                source,
            })?;
        self.cassette.entries.push(entry);
        Ok(())
    }
}
