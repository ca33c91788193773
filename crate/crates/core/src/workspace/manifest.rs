use std::fmt;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::WorkspaceError;

/// Name of the manifest file every workspace carries at its root.
pub const MANIFEST_FILE: &str = "workspace.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileRole {
    Methodology,
    Dataset,
    Pseudocode,
    StarterCode,
    StarterPerformance,
    Subpart,
    Supplementary,
    Generated,
}

impl FileRole {
    pub const MANDATORY: [FileRole; 5] = [
        FileRole::Methodology,
        FileRole::Dataset,
        FileRole::Pseudocode,
        FileRole::StarterCode,
        FileRole::StarterPerformance,
    ];
}

impl fmt::Display for FileRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            FileRole::Methodology => "methodology description",
            FileRole::Dataset => "dataset description",
            FileRole::Pseudocode => "pseudocode",
            FileRole::StarterCode => "starter code",
            FileRole::StarterPerformance => "starter code performance",
            FileRole::Subpart => "subpart script",
            FileRole::Supplementary => "supplementary file",
            FileRole::Generated => "generated file",
        };
        f.write_str(name)
    }
}

/// `(i, j)` from a `subpart_[i]_[j].py` file name: the j'th script for the
/// i'th methodology subpart.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SubpartIndex {
    pub part: u32,
    pub script: String,
}

impl SubpartIndex {
    pub fn parse_file_name(name: &str) -> Option<Self> {
        let re = Regex::new(r"^subpart_(\d+)_([A-Za-z0-9]+)\.py$").expect("static regex");
        let caps = re.captures(name)?;
        Some(SubpartIndex {
            part: caps[1].parse().ok()?,
            script: caps[2].to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnownFile {
    pub relative_path: String,
    pub role: FileRole,
    pub subpart_index: Option<SubpartIndex>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerfDirection {
    HigherBetter,
    LowerBetter,
}

impl PerfDirection {
    /// Strict improvement of `candidate` over `baseline`.
    pub fn improves(self, candidate: f64, baseline: f64) -> bool {
        match self {
            PerfDirection::HigherBetter => candidate > baseline,
            PerfDirection::LowerBetter => candidate < baseline,
        }
    }
}

impl fmt::Display for PerfDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PerfDirection::HigherBetter => "higher is better",
            PerfDirection::LowerBetter => "lower is better",
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFiles {
    pub methodology: Option<String>,
    pub dataset: Option<String>,
    pub pseudocode: Option<String>,
    pub starter_code: Option<String>,
    pub starter_performance: Option<String>,
    #[serde(default)]
    pub supplementary: Vec<String>,
}

/// On-disk form of `workspace.toml`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    /// Task label used when grouping evaluation rows; defaults to the
    /// workspace directory name.
    pub task: Option<String>,
    pub script_interpreter: String,
    pub perf_pattern: String,
    pub perf_direction: PerfDirection,
    pub timeout_secs: Option<u64>,
    pub files: ManifestFiles,
}

impl ManifestFile {
    pub fn load(path: &Path) -> Result<Self, WorkspaceError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            WorkspaceError::Manifest(format!("cannot read {}: {e}", path.display()))
        })?;
        toml::from_str(&text).map_err(|e| WorkspaceError::Manifest(e.to_string()))
    }

    pub fn role_path(&self, role: FileRole) -> Option<&str> {
        let path = match role {
            FileRole::Methodology => &self.files.methodology,
            FileRole::Dataset => &self.files.dataset,
            FileRole::Pseudocode => &self.files.pseudocode,
            FileRole::StarterCode => &self.files.starter_code,
            FileRole::StarterPerformance => &self.files.starter_performance,
            _ => return None,
        };
        path.as_deref()
    }
}
