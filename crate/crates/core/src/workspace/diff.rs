use serde::{Deserialize, Serialize};
use similar::{Algorithm, ChangeTag, TextDiff};

/// Unified diff text plus added/removed line counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffSummary {
    pub unified: String,
    pub additions: usize,
    pub deletions: usize,
}

impl DiffSummary {
    pub fn is_empty(&self) -> bool {
        self.additions == 0 && self.deletions == 0
    }

    /// Lines edited: a replaced line counts as one addition plus one deletion.
    pub fn lines_changed(&self) -> usize {
        self.additions + self.deletions
    }
}

/// Minimal line diff of `old` against `new`.
pub fn diff_texts(old_name: &str, new_name: &str, old: &str, new: &str) -> DiffSummary {
    let diff = TextDiff::configure()
        .algorithm(Algorithm::Myers)
        .diff_lines(old, new);
    let (mut additions, mut deletions) = (0, 0);
    for change in diff.iter_all_changes() {
        match change.tag() {
            ChangeTag::Insert => additions += 1,
            ChangeTag::Delete => deletions += 1,
            ChangeTag::Equal => {}
        }
    }
    let unified = if additions + deletions == 0 {
        String::new()
    } else {
        diff.unified_diff()
            .context_radius(3)
            .header(old_name, new_name)
            .to_string()
    };
    DiffSummary {
        unified,
        additions,
        deletions,
    }
}
