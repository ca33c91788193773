//! Provider-agnostic model access.
//!
//! Core code only ever names a [`RoleTag`]; which provider and model serve a
//! role, and at what temperature, comes from configuration. The gateway runs
//! in one of three modes:
//!
//! - live: call the provider, retrying transient failures with backoff;
//! - record: as live, appending every exchange to a cassette file;
//! - replay: serve the next cassette entry, checking role and prompt digest.
//!
//! Replay is strictly sequential. A prompt that differs from the recorded
//! one by a single byte fails at that call with the entry's sequence number.

mod cassette;
mod provider;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::{Arc, Mutex, TryLockError};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cassette::{prompt_digest, Cassette, CassetteEntry, CassetteError};
use cassette::CassetteWriter;
pub use provider::{
    FnProvider, HttpChatProvider, Provider, ProviderError, ProviderRequest, Script, ScriptEntry,
    ScriptedProvider, SentinelProvider,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleTag {
    BasePlanner,
    IntermediatePlanner,
    ExpertPlanner,
    Worker,
}

impl RoleTag {
    pub const ALL: [RoleTag; 4] = [
        RoleTag::BasePlanner,
        RoleTag::IntermediatePlanner,
        RoleTag::ExpertPlanner,
        RoleTag::Worker,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RoleTag::BasePlanner => "base_planner",
            RoleTag::IntermediatePlanner => "intermediate_planner",
            RoleTag::ExpertPlanner => "expert_planner",
            RoleTag::Worker => "worker",
        }
    }
}

impl fmt::Display for RoleTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-role binding as it appears in the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleConfig {
    /// `http` (OpenAI-compatible), `scripted`, or `none`.
    #[serde(default = "default_provider")]
    pub provider: String,
    pub model: Option<String>,
    pub endpoint: Option<String>,
    pub credential_env: Option<String>,
    /// Script file for the `scripted` provider.
    pub script: Option<String>,
    pub temperature: f64,
    pub retry_budget: u32,
}

fn default_provider() -> String {
    "none".into()
}

impl RoleConfig {
    pub fn defaults(role: RoleTag) -> Self {
        let (temperature, retry_budget) = match role {
            RoleTag::BasePlanner => (0.8, 8),
            RoleTag::IntermediatePlanner => (0.8, 4),
            RoleTag::ExpertPlanner => (0.8, 1),
            RoleTag::Worker => (0.2, 8),
        };
        Self {
            provider: default_provider(),
            model: None,
            endpoint: None,
            credential_env: None,
            script: None,
            temperature,
            retry_budget,
        }
    }

    /// Builds the provider this binding names.
    pub fn build_provider(&self, base_dir: &Path) -> Result<Arc<dyn Provider>, ProviderError> {
        match self.provider.as_str() {
            "http" | "openai" => Ok(Arc::new(HttpChatProvider::from_config(self)?)),
            "scripted" => {
                let script = self.script.as_deref().ok_or_else(|| {
                    ProviderError::Fatal("scripted provider needs a `script` path".into())
                })?;
                Ok(Arc::new(ScriptedProvider::from_file(&base_dir.join(script))?))
            }
            "none" => Ok(Arc::new(SentinelProvider::default())),
            other => Err(ProviderError::Fatal(format!("unknown provider `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleTable(pub BTreeMap<RoleTag, RoleConfig>);

impl Default for RoleTable {
    fn default() -> Self {
        Self(RoleTag::ALL.iter().map(|r| (*r, RoleConfig::defaults(*r))).collect())
    }
}

impl RoleTable {
    pub fn get(&self, role: RoleTag) -> &RoleConfig {
        &self.0[&role]
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("role {0} is not configured")]
    UnknownRole(RoleTag),
    #[error("{role} call failed after {attempts} attempts: {last}")]
    BudgetExhausted {
        role: RoleTag,
        attempts: u32,
        last: String,
    },
    #[error("{role} call failed: {source}")]
    Provider {
        role: RoleTag,
        #[source]
        source: ProviderError,
    },
    #[error("cassette exhausted: no entry {sequence} for a {role} call")]
    CassetteExhausted { sequence: usize, role: RoleTag },
    #[error("cassette entry {sequence} was recorded for role {recorded} but replayed as {requested}")]
    RoleMismatch {
        sequence: usize,
        recorded: RoleTag,
        requested: RoleTag,
    },
    #[error("prompt for cassette entry {sequence} ({role}) differs from the recording at byte {offset}")]
    DigestMismatch {
        sequence: usize,
        role: RoleTag,
        offset: usize,
    },
    #[error("concurrent calls are not allowed while replaying a cassette")]
    ConcurrentReplay,
    #[error(transparent)]
    Cassette(#[from] CassetteError),
}

impl GatewayError {
    /// Errors after which continuing the run is meaningless: the replay has
    /// diverged from its recording, or the cassette itself is unusable.
    pub fn is_replay_failure(&self) -> bool {
        matches!(
            self,
            GatewayError::CassetteExhausted { .. }
                | GatewayError::RoleMismatch { .. }
                | GatewayError::DigestMismatch { .. }
                | GatewayError::ConcurrentReplay
                | GatewayError::Cassette(_)
        )
    }
}

/// Per-role providers. Roles without an explicit provider fall back to the
/// default one.
#[derive(Clone)]
pub struct Providers {
    default: Arc<dyn Provider>,
    by_role: BTreeMap<RoleTag, Arc<dyn Provider>>,
}

impl Providers {
    pub fn uniform(provider: Arc<dyn Provider>) -> Self {
        Self {
            default: provider,
            by_role: BTreeMap::new(),
        }
    }

    pub fn with(mut self, role: RoleTag, provider: Arc<dyn Provider>) -> Self {
        self.by_role.insert(role, provider);
        self
    }

    fn get(&self, role: RoleTag) -> &Arc<dyn Provider> {
        self.by_role.get(&role).unwrap_or(&self.default)
    }
}

pub enum GatewayMode {
    Live,
    Record(std::path::PathBuf),
    Replay(Cassette),
}

enum Backend {
    Live,
    Record(Mutex<CassetteWriter>),
    Replay(Mutex<ReplayState>),
}

struct ReplayState {
    entries: Vec<CassetteEntry>,
    cursor: usize,
}

pub const DEFAULT_TRANSPORT_RETRIES: u32 = 2;

/// `1s · 2^attempt`, capped at 30s.
pub fn default_backoff(attempt: u32) -> Duration {
    Duration::from_secs(1u64 << attempt.min(5)).min(Duration::from_secs(30))
}

pub struct Gateway {
    roles: RoleTable,
    providers: Providers,
    backend: Backend,
    transport_retries: u32,
    backoff: Box<dyn Fn(u32) -> Duration + Send + Sync>,
    calls: Mutex<BTreeMap<RoleTag, usize>>,
}

impl Gateway {
    pub fn new(roles: RoleTable, providers: Providers, mode: GatewayMode) -> Result<Self, GatewayError> {
        let backend = match mode {
            GatewayMode::Live => Backend::Live,
            GatewayMode::Record(path) => Backend::Record(Mutex::new(CassetteWriter::create(&path)?)),
            GatewayMode::Replay(cassette) => Backend::Replay(Mutex::new(ReplayState {
                entries: cassette.entries,
                cursor: 0,
            })),
        };
        Ok(Self {
            roles,
            providers,
            backend,
            transport_retries: DEFAULT_TRANSPORT_RETRIES,
            backoff: Box::new(default_backoff),
            calls: Mutex::new(BTreeMap::new()),
        })
    }

    /// Replay gateway whose providers are all a sentinel, so any attempt to
    /// reach a model is both refused and counted.
    pub fn replay(roles: RoleTable, cassette: Cassette, sentinel: Arc<SentinelProvider>) -> Self {
        Self::new(roles, Providers::uniform(sentinel), GatewayMode::Replay(cassette))
            .expect("replay construction cannot fail")
    }

    pub fn with_transport_retries(mut self, retries: u32) -> Self {
        self.transport_retries = retries;
        self
    }

    pub fn with_backoff(mut self, backoff: impl Fn(u32) -> Duration + Send + Sync + 'static) -> Self {
        self.backoff = Box::new(backoff);
        self
    }

    pub fn roles(&self) -> &RoleTable {
        &self.roles
    }

    pub fn role(&self, role: RoleTag) -> &RoleConfig {
        self.roles.get(role)
    }

    pub fn is_replay(&self) -> bool {
        matches!(self.backend, Backend::Replay(_))
    }

    /// Completed calls per role in this gateway's lifetime.
    pub fn calls(&self, role: RoleTag) -> usize {
        self.calls.lock().unwrap().get(&role).copied().unwrap_or(0)
    }

    pub fn total_calls(&self) -> usize {
        self.calls.lock().unwrap().values().sum()
    }

    /// Entries not yet consumed (replay mode only).
    pub fn replay_remaining(&self) -> Option<usize> {
        match &self.backend {
            Backend::Replay(state) => {
                let s = state.lock().unwrap();
                Some(s.entries.len() - s.cursor)
            }
            _ => None,
        }
    }

    /// Cassette recorded so far (record mode only).
    pub fn recorded(&self) -> Option<Cassette> {
        match &self.backend {
            Backend::Record(w) => Some(w.lock().unwrap().cassette.clone()),
            _ => None,
        }
    }

    pub fn complete(&self, role: RoleTag, prompt: &str) -> Result<String, GatewayError> {
        let cfg = self
            .roles
            .0
            .get(&role)
            .ok_or(GatewayError::UnknownRole(role))?;
        let response = match &self.backend {
            Backend::Replay(state) => {
                let mut state = match state.try_lock() {
                    Ok(guard) => guard,
                    Err(TryLockError::WouldBlock) => return Err(GatewayError::ConcurrentReplay),
                    Err(TryLockError::Poisoned(p)) => p.into_inner(),
                };
                let sequence = state.cursor;
                let entry = state
                    .entries
                    .get(sequence)
                    .ok_or(GatewayError::CassetteExhausted { sequence, role })?;
                if entry.role != role {
                    return Err(GatewayError::RoleMismatch {
                        sequence: entry.sequence,
                        recorded: entry.role,
                        requested: role,
                    });
                }
                if entry.prompt_digest != prompt_digest(prompt) {
                    return Err(GatewayError::DigestMismatch {
                        sequence: entry.sequence,
                        role,
                        offset: first_difference(&entry.prompt_text, prompt),
                    });
                }
                let response = entry.response_text.clone();
                state.cursor += 1;
                response
            }
            Backend::Live => self.call_provider(role, cfg, prompt)?,
            Backend::Record(writer) => {
                let response = self.call_provider(role, cfg, prompt)?;
                let mut writer = writer.lock().unwrap();
                let sequence = writer.cassette.len();
                writer.append(CassetteEntry::new(
                    sequence,
                    role,
                    prompt,
                    &response,
                    cfg.temperature,
                ))?;
                response
            }
        };
        *self.calls.lock().unwrap().entry(role).or_default() += 1;
        Ok(response)
    }

    fn call_provider(&self, role: RoleTag, cfg: &RoleConfig, prompt: &str) -> Result<String, GatewayError> {
        let provider = self.providers.get(role);
        let request = ProviderRequest {
            role,
            prompt,
            temperature: cfg.temperature,
            model: cfg.model.as_deref(),
        };
        let mut attempt = 0;
        loop {
            match provider.complete(&request) {
                Ok(text) => return Ok(text),
                Err(ProviderError::Transient(msg)) => {
                    if attempt >= self.transport_retries {
                        return Err(GatewayError::BudgetExhausted {
                            role,
                            attempts: attempt + 1,
                            last: msg,
                        });
                    }
                    tracing::warn!(%role, attempt, "transient provider failure: {msg}");
                    std::thread::sleep((self.backoff)(attempt));
                    attempt += 1;
                }
                Err(source @ ProviderError::Fatal(_)) => {
                    return Err(GatewayError::Provider { role, source })
                }
            }
        }
    }
}

fn first_difference(a: &str, b: &str) -> usize {
    a.bytes()
        .zip(b.bytes())
        .position(|(x, y)| x != y)
        .unwrap_or_else(|| a.len().min(b.len()))
}
