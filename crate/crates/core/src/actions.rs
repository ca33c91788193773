//! The fourteen actions the planner can choose from, their input schemas and
//! pool membership, plus parsing of the planner's `Action Input` block.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pool {
    A,
    B,
    C,
}

impl fmt::Display for Pool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Programmatic,
    LlmBacked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    ListFiles,
    CopyFile,
    InspectScriptLines,
    ExecuteScript,
    UndoEditScript,
    GetCodeDiff,
    FinalAnswer,
    RequestPlanningExpertHelp,
    UnderstandFile,
    UnderstandFileWithCodeContext,
    EditScript,
    EditScriptWithContext,
    Reflection,
    CheckImplementation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Path,
    Text,
    Integer,
    ArgumentList,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldSpec {
    pub name: &'static str,
    pub kind: FieldKind,
}

const fn field(name: &'static str, kind: FieldKind) -> FieldSpec {
    FieldSpec { name, kind }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionSpec {
    pub action: Action,
    pub name: &'static str,
    pub inputs: &'static [FieldSpec],
    pub pool: Pool,
    pub kind: ActionKind,
    pub description: &'static str,
}

use FieldKind::{ArgumentList, Integer, Path, Text};

pub static REGISTRY: [ActionSpec; 14] = [
    ActionSpec {
        action: Action::ListFiles,
        name: "List Files",
        inputs: &[field("directory path", Path)],
        pool: Pool::A,
        kind: ActionKind::Programmatic,
        description: "List the files and directories in a directory of the workspace.",
    },
    ActionSpec {
        action: Action::CopyFile,
        name: "Copy File",
        inputs: &[field("source", Path), field("destination", Path)],
        pool: Pool::B,
        kind: ActionKind::Programmatic,
        description: "Copy a file to a new location; the destination directory must exist.",
    },
    ActionSpec {
        action: Action::InspectScriptLines,
        name: "Inspect Script Lines",
        inputs: &[
            field("script name", Path),
            field("start line number", Integer),
            field("end line number", Integer),
        ],
        pool: Pool::A,
        kind: ActionKind::Programmatic,
        description: "Show numbered lines of a file (at most 100 lines per call).",
    },
    ActionSpec {
        action: Action::ExecuteScript,
        name: "Execute Script",
        inputs: &[field("script name", Path), field("arguments", ArgumentList)],
        pool: Pool::B,
        kind: ActionKind::Programmatic,
        description: "Run a script and observe its output, errors and execution trace.",
    },
    ActionSpec {
        action: Action::UndoEditScript,
        name: "Undo Edit Script",
        inputs: &[field("script name", Path)],
        pool: Pool::B,
        kind: ActionKind::Programmatic,
        description: "Revert the most recent edit made to a script.",
    },
    ActionSpec {
        action: Action::GetCodeDiff,
        name: "Get Code Diff",
        inputs: &[field("script 1 name", Path), field("script 2 name", Path)],
        pool: Pool::A,
        kind: ActionKind::Programmatic,
        description: "Show the unified diff between two scripts.",
    },
    ActionSpec {
        action: Action::FinalAnswer,
        name: "Final Answer",
        inputs: &[field("description", Text)],
        pool: Pool::C,
        kind: ActionKind::Programmatic,
        description: "End the run, describing what was implemented.",
    },
    ActionSpec {
        action: Action::RequestPlanningExpertHelp,
        name: "Request Planning Expert Help",
        inputs: &[field("request description", Text)],
        pool: Pool::C,
        kind: ActionKind::Programmatic,
        description: "Ask a much stronger model to plan the next step when stuck (limited uses).",
    },
    ActionSpec {
        action: Action::UnderstandFile,
        name: "Understand File",
        inputs: &[field("file name", Path), field("things to look for", Text)],
        pool: Pool::A,
        kind: ActionKind::LlmBacked,
        description: "Read a whole file and answer what to look for in it.",
    },
    ActionSpec {
        action: Action::UnderstandFileWithCodeContext,
        name: "Understand File with Code Context",
        inputs: &[
            field("file name", Path),
            field("file start line number", Integer),
            field("file end line number", Integer),
            field("script name", Path),
            field("script start line number", Integer),
            field("script end line number", Integer),
            field("things to look for", Text),
        ],
        pool: Pool::A,
        kind: ActionKind::LlmBacked,
        description: "Understand a file excerpt alongside an excerpt of related code.",
    },
    ActionSpec {
        action: Action::EditScript,
        name: "Edit Script",
        inputs: &[
            field("script name", Path),
            field("edit instructions", Text),
            field("save script name", Path),
        ],
        pool: Pool::B,
        kind: ActionKind::LlmBacked,
        description: "Have an editor rewrite a script following instructions and save it.",
    },
    ActionSpec {
        action: Action::EditScriptWithContext,
        name: "Edit Script with Context",
        inputs: &[
            field("script name", Path),
            field("edit instructions", Text),
            field("context file name", Path),
            field("file start line number", Integer),
            field("file end line number", Integer),
            field("save script name", Path),
        ],
        pool: Pool::B,
        kind: ActionKind::LlmBacked,
        description: "Edit a script with an excerpt of another file given as context.",
    },
    ActionSpec {
        action: Action::Reflection,
        name: "Reflection",
        inputs: &[field("things to reflect on", Text)],
        pool: Pool::C,
        kind: ActionKind::LlmBacked,
        description: "Reflect on past actions and observations to revise the plan.",
    },
    ActionSpec {
        action: Action::CheckImplementation,
        name: "Check Implementation",
        inputs: &[field("script name", Path)],
        pool: Pool::C,
        kind: ActionKind::LlmBacked,
        description: "Check subpart by subpart whether a script implements the methodology.",
    },
];

const ALIASES: [(&str, Action); 2] = [
    ("Edit Script (AI)", Action::EditScript),
    ("Edit Script (AI) with Context", Action::EditScriptWithContext),
];

impl Action {
    pub fn spec(self) -> &'static ActionSpec {
        REGISTRY
            .iter()
            .find(|s| s.action == self)
            .expect("every action is registered")
    }

    pub fn name(self) -> &'static str {
        self.spec().name
    }

    pub fn pool(self) -> Pool {
        self.spec().pool
    }

    pub fn is_edit(self) -> bool {
        matches!(self, Action::EditScript | Action::EditScriptWithContext)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ActionError {
    #[error("unknown action `{name}`{}; valid actions are: {}", suggestion_text(.suggestion), valid_names())]
    UnknownAction {
        name: String,
        suggestion: Option<&'static str>,
    },
    #[error("Action Input is not a valid JSON object: {0}")]
    Malformed(String),
    #[error("Action Input for `{action}` is missing field `{field}`")]
    MissingField { action: &'static str, field: &'static str },
    #[error("Action Input for `{action}` has unknown field `{field}`; expected fields: {expected}")]
    UnknownField {
        action: &'static str,
        field: String,
        expected: String,
    },
    #[error("field `{field}` of `{action}` has the wrong type: expected {expected}")]
    TypeMismatch {
        action: &'static str,
        field: &'static str,
        expected: &'static str,
    },
}

fn suggestion_text(s: &Option<&'static str>) -> String {
    s.map(|n| format!(" (did you mean `{n}`?)")).unwrap_or_default()
}

fn valid_names() -> String {
    REGISTRY.iter().map(|s| s.name).collect::<Vec<_>>().join(", ")
}

/// Exact, case-sensitive lookup after trimming surrounding whitespace.
pub fn lookup(name: &str) -> Result<&'static ActionSpec, ActionError> {
    let name = name.trim();
    if let Some(spec) = REGISTRY.iter().find(|s| s.name == name) {
        return Ok(spec);
    }
    if let Some((_, action)) = ALIASES.iter().find(|(alias, _)| *alias == name) {
        return Ok(action.spec());
    }
    Err(ActionError::UnknownAction {
        name: name.to_string(),
        suggestion: nearest(name),
    })
}

fn nearest(name: &str) -> Option<&'static str> {
    let lowered = name.to_lowercase();
    REGISTRY
        .iter()
        .map(|s| (strsim::levenshtein(&lowered, &s.name.to_lowercase()), s.name))
        .filter(|(d, _)| *d <= 4.max(name.len() / 4))
        .min()
        .map(|(_, n)| n)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldValue {
    Integer(i64),
    Args(Vec<String>),
    Text(String),
}

impl FieldValue {
    pub fn as_str(&self) -> Option<&str> {
        match self {
            FieldValue::Text(s) => Some(s),
            _ => None,
        }
    }

    fn to_json(&self) -> Value {
        match self {
            FieldValue::Integer(i) => Value::from(*i),
            FieldValue::Args(a) => Value::from(a.clone()),
            FieldValue::Text(s) => Value::from(s.clone()),
        }
    }
}

/// A validated request to run one action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionInvocation {
    pub action: Action,
    pub values: BTreeMap<String, FieldValue>,
    pub raw_text: String,
}

impl ActionInvocation {
    pub fn spec(&self) -> &'static ActionSpec {
        self.action.spec()
    }

    pub fn pool(&self) -> Pool {
        self.action.pool()
    }

    /// Same action with identical field values (raw text is ignored).
    pub fn same_request(&self, other: &ActionInvocation) -> bool {
        self.action == other.action && self.values == other.values
    }

    pub fn text(&self, field: &str) -> &str {
        match self.values.get(field) {
            Some(FieldValue::Text(s)) => s,
            _ => panic!("field `{field}` of {} is not text", self.action),
        }
    }

    pub fn integer(&self, field: &str) -> i64 {
        match self.values.get(field) {
            Some(FieldValue::Integer(i)) => *i,
            _ => panic!("field `{field}` of {} is not an integer", self.action),
        }
    }

    pub fn args(&self, field: &str) -> &[String] {
        match self.values.get(field) {
            Some(FieldValue::Args(a)) => a,
            _ => panic!("field `{field}` of {} is not an argument list", self.action),
        }
    }

    /// Canonical JSON object in schema field order.
    pub fn render(&self) -> String {
        let mut map = Map::new();
        for f in self.spec().inputs {
            if let Some(v) = self.values.get(f.name) {
                map.insert(f.name.to_string(), v.to_json());
            }
        }
        serde_json::to_string(&Value::Object(map)).expect("json")
    }
}

/// Parses an `Action Input` block (a single JSON object, optionally inside a
/// code fence) against `spec`. Keys match field names case-insensitively.
pub fn parse_invocation(
    spec: &'static ActionSpec,
    block: &str,
) -> Result<ActionInvocation, ActionError> {
    let body = strip_fence(block.trim());
    let value: Value =
        serde_json::from_str(body).map_err(|e| ActionError::Malformed(e.to_string()))?;
    let Value::Object(object) = value else {
        return Err(ActionError::Malformed("expected a JSON object".into()));
    };

    let mut values = BTreeMap::new();
    for (key, raw) in &object {
        let normalized = key.trim().to_lowercase();
        let Some(field) = spec.inputs.iter().find(|f| f.name == normalized) else {
            return Err(ActionError::UnknownField {
                action: spec.name,
                field: key.clone(),
                expected: spec
                    .inputs
                    .iter()
                    .map(|f| f.name)
                    .collect::<Vec<_>>()
                    .join(", "),
            });
        };
        if values.contains_key(field.name) {
            return Err(ActionError::Malformed(format!(
                "field `{}` given more than once",
                field.name
            )));
        }
        values.insert(field.name.to_string(), coerce(spec, field, raw)?);
    }
    if let Some(missing) = spec.inputs.iter().find(|f| !values.contains_key(f.name)) {
        return Err(ActionError::MissingField {
            action: spec.name,
            field: missing.name,
        });
    }
    Ok(ActionInvocation {
        action: spec.action,
        values,
        raw_text: block.to_string(),
    })
}

fn strip_fence(block: &str) -> &str {
    let Some(rest) = block.strip_prefix("```") else {
        return block;
    };
    let rest = rest.split_once('\n').map_or("", |(_, body)| body);
    rest.trim_end().strip_suffix("```").unwrap_or(rest).trim()
}

fn coerce(
    spec: &'static ActionSpec,
    field: &'static FieldSpec,
    raw: &Value,
) -> Result<FieldValue, ActionError> {
    let mismatch = |expected| ActionError::TypeMismatch {
        action: spec.name,
        field: field.name,
        expected,
    };
    match field.kind {
        FieldKind::Path | FieldKind::Text => match raw {
            Value::String(s) => Ok(FieldValue::Text(s.clone())),
            _ => Err(mismatch("a string")),
        },
        FieldKind::Integer => match raw {
            Value::Number(n) => n.as_i64().map(FieldValue::Integer).ok_or(mismatch("an integer")),
            Value::String(s) => s
                .trim()
                .parse()
                .map(FieldValue::Integer)
                .map_err(|_| mismatch("an integer")),
            _ => Err(mismatch("an integer")),
        },
        FieldKind::ArgumentList => match raw {
            Value::String(s) => Ok(FieldValue::Args(
                s.split_whitespace().map(str::to_string).collect(),
            )),
            Value::Array(items) => items
                .iter()
                .map(|v| v.as_str().map(str::to_string))
                .collect::<Option<Vec<_>>>()
                .map(FieldValue::Args)
                .ok_or(mismatch("a string or a list of strings")),
            _ => Err(mismatch("a string or a list of strings")),
        },
    }
}

/// Catalog text injected into planner prompts.
pub fn render_catalog() -> String {
    let mut out = String::new();
    for spec in &REGISTRY {
        let fields = spec
            .inputs
            .iter()
            .map(|f| format!("\"{}\"", f.name))
            .collect::<Vec<_>>()
            .join(", ");
        out.push_str(&format!(
            "- {}: {} Action Input fields: {{{}}}\n",
            spec.name, spec.description, fields
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn registry_partition() {
        let count = |p| REGISTRY.iter().filter(|s| s.pool == p).count();
        assert_eq!((count(Pool::A), count(Pool::B), count(Pool::C)), (5, 5, 4));
        let pool_a: Vec<_> = REGISTRY.iter().filter(|s| s.pool == Pool::A).map(|s| s.name).collect();
        assert_eq!(
            pool_a,
            [
                "List Files",
                "Inspect Script Lines",
                "Get Code Diff",
                "Understand File",
                "Understand File with Code Context"
            ]
        );
        let llm = REGISTRY.iter().filter(|s| s.kind == ActionKind::LlmBacked).count();
        assert_eq!(llm, 6);
    }

    #[test]
    fn lookup_examples() {
        let exec = lookup("Execute Script").unwrap();
        assert_eq!(exec.pool, Pool::B);
        let names: Vec<_> = exec.inputs.iter().map(|f| f.name).collect();
        assert_eq!(names, ["script name", "arguments"]);

        let err = lookup("execute script").unwrap_err();
        assert!(matches!(
            &err,
            ActionError::UnknownAction { suggestion: Some("Execute Script"), .. }
        ));
        assert!(err.to_string().contains("List Files"));

        let fin = lookup("  Final Answer\n").unwrap();
        assert_eq!(fin.inputs.len(), 1);
        assert_eq!(fin.inputs[0].name, "description");
        assert_eq!(fin.pool, Pool::C);

        assert_eq!(lookup("Edit Script (AI)").unwrap().action, Action::EditScript);
        assert_eq!(
            lookup("Edit Script (AI) with Context").unwrap().action,
            Action::EditScriptWithContext
        );
    }

    #[test]
    fn pool_examples() {
        assert_eq!(Action::GetCodeDiff.pool(), Pool::A);
        assert_eq!(Action::UndoEditScript.pool(), Pool::B);
        assert_eq!(Action::Reflection.pool(), Pool::C);
        assert_eq!(Action::RequestPlanningExpertHelp.pool(), Pool::C);
    }

    #[test]
    fn parse_examples() {
        let spec = lookup("Inspect Script Lines").unwrap();
        let inv = parse_invocation(
            spec,
            r#"{"script name":"starter_code.py","start line number":10,"end line number":20}"#,
        )
        .unwrap();
        assert_eq!(inv.text("script name"), "starter_code.py");
        assert_eq!(inv.integer("start line number"), 10);
        assert_eq!(inv.integer("end line number"), 20);

        let edit = lookup("Edit Script").unwrap();
        let err = parse_invocation(
            edit,
            r#"{"script name":"a.py","edit instructions":"do it"}"#,
        )
        .unwrap_err();
        assert_eq!(
            err,
            ActionError::MissingField { action: "Edit Script", field: "save script name" }
        );

        let exec = lookup("Execute Script").unwrap();
        let inv = parse_invocation(exec, r#"{"script name":"m.py","arguments":""}"#).unwrap();
        let expected = ActionInvocation {
            action: Action::ExecuteScript,
            values: BTreeMap::from([
                ("arguments".to_string(), FieldValue::Args(vec![])),
                ("script name".to_string(), FieldValue::Text("m.py".into())),
            ]),
            raw_text: r#"{"script name":"m.py","arguments":""}"#.into(),
        };
        assert_eq!(inv, expected);
    }

    #[test]
    fn parse_leniency_and_errors() {
        let exec = lookup("Execute Script").unwrap();
        let inv = parse_invocation(
            exec,
            "```json\n{\"Script Name\": \"m.py\", \"ARGUMENTS\": [\"--fast\", \"-n\"]}\n```",
        )
        .unwrap();
        assert_eq!(inv.args("arguments"), ["--fast", "-n"]);

        assert!(matches!(
            parse_invocation(exec, "script name: m.py"),
            Err(ActionError::Malformed(_))
        ));
        assert!(matches!(
            parse_invocation(exec, r#"{"script name":"m.py","arguments":"","extra":1}"#),
            Err(ActionError::UnknownField { .. })
        ));
        assert!(matches!(
            parse_invocation(exec, r#"{"script name":3,"arguments":""}"#),
            Err(ActionError::TypeMismatch { .. })
        ));
        let inspect = lookup("Inspect Script Lines").unwrap();
        let inv = parse_invocation(
            inspect,
            r#"{"script name":"a.py","start line number":"3","end line number":4}"#,
        )
        .unwrap();
        assert_eq!(inv.integer("start line number"), 3);
    }

    #[test]
    fn catalog_lists_every_action() {
        let catalog = render_catalog();
        for spec in &REGISTRY {
            assert!(catalog.contains(spec.name));
        }
    }

    fn arb_invocation() -> impl Strategy<Value = ActionInvocation> {
        (0..REGISTRY.len(), any::<u64>()).prop_flat_map(|(idx, _)| {
            let spec = &REGISTRY[idx];
            let fields: Vec<BoxedStrategy<FieldValue>> = spec
                .inputs
                .iter()
                .map(|f| match f.kind {
                    FieldKind::Integer => (-1000i64..100_000).prop_map(FieldValue::Integer).boxed(),
                    FieldKind::ArgumentList => prop::collection::vec("[a-z0-9=-]{1,8}", 0..4)
                        .prop_map(FieldValue::Args)
                        .boxed(),
                    _ => ".{0,40}".prop_map(FieldValue::Text).boxed(),
                })
                .collect();
            fields.prop_map(move |vals| {
                let values = spec
                    .inputs
                    .iter()
                    .zip(vals)
                    .map(|(f, v)| (f.name.to_string(), v))
                    .collect();
                ActionInvocation {
                    action: spec.action,
                    values,
                    raw_text: String::new(),
                }
            })
        })
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(inv in arb_invocation()) {
            let rendered = inv.render();
            let parsed = parse_invocation(inv.spec(), &rendered).unwrap();
            prop_assert!(parsed.same_request(&inv));
        }

        #[test]
        fn missing_and_unknown_are_exclusive(drop_idx in 0usize..7, add_extra in any::<bool>()) {
            let spec = lookup("Understand File with Code Context").unwrap();
            let mut map = Map::new();
            for (i, f) in spec.inputs.iter().enumerate() {
                if i != drop_idx {
                    let v = if f.kind == FieldKind::Integer { Value::from(1) } else { Value::from("x") };
                    map.insert(f.name.to_string(), v);
                }
            }
            if add_extra {
                map.insert("bogus".into(), Value::from("y"));
            }
            let err = parse_invocation(spec, &Value::Object(map).to_string()).unwrap_err();
            let missing = matches!(err, ActionError::MissingField { .. });
            let unknown = matches!(err, ActionError::UnknownField { .. });
            prop_assert!(missing != unknown);
            prop_assert_eq!(unknown, add_extra);
        }
    }
}
