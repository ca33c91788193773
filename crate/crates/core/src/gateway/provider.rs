//! Model providers behind the gateway.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::{RoleConfig, RoleTag};

#[derive(Debug, Clone, Copy)]
pub struct ProviderRequest<'a> {
    pub role: RoleTag,
    pub prompt: &'a str,
    pub temperature: f64,
    pub model: Option<&'a str>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    /// Worth retrying (rate limits, timeouts, 5xx).
    #[error("transient provider failure: {0}")]
    Transient(String),
    #[error("provider failure: {0}")]
    Fatal(String),
}

pub trait Provider: Send + Sync {
    fn complete(&self, request: &ProviderRequest<'_>) -> Result<String, ProviderError>;
}

/// Fails every call and counts attempts; installed wherever no model access
/// is expected (replay runs).
#[derive(Debug, Default)]
pub struct SentinelProvider {
    calls: AtomicUsize,
}

impl SentinelProvider {
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Provider for SentinelProvider {
    fn complete(&self, request: &ProviderRequest<'_>) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Err(ProviderError::Fatal(format!(
            "no model access configured for role {}",
            request.role
        )))
    }
}

/// Wraps a closure; handy in tests.
pub struct FnProvider<F>(pub F);

impl<F> Provider for FnProvider<F>
where
    F: Fn(&ProviderRequest<'_>) -> Result<String, ProviderError> + Send + Sync,
{
    fn complete(&self, request: &ProviderRequest<'_>) -> Result<String, ProviderError> {
        (self.0)(request)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub role: RoleTag,
    /// Only consumed by a prompt containing this text.
    #[serde(default, rename = "match", skip_serializing_if = "Option::is_none")]
    pub matches: Option<String>,
    pub response: String,
}

/// Authored responses for deterministic recordings.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Script {
    #[serde(default)]
    pub entries: Vec<ScriptEntry>,
    /// Reused whenever no entry of the role matches.
    #[serde(default)]
    pub fallbacks: BTreeMap<RoleTag, String>,
}

impl Script {
    pub fn push(&mut self, role: RoleTag, response: impl Into<String>) -> &mut Self {
        self.entries.push(ScriptEntry {
            role,
            matches: None,
            response: response.into(),
        });
        self
    }

    pub fn push_matching(
        &mut self,
        role: RoleTag,
        needle: impl Into<String>,
        response: impl Into<String>,
    ) -> &mut Self {
        self.entries.push(ScriptEntry {
            role,
            matches: Some(needle.into()),
            response: response.into(),
        });
        self
    }

    pub fn fallback(&mut self, role: RoleTag, response: impl Into<String>) -> &mut Self {
        self.fallbacks.insert(role, response.into());
        self
    }
}

/// Plays back a [`Script`]: for each call, the first unconsumed entry of the
/// calling role whose `match` text occurs in the prompt.
#[derive(Debug)]
pub struct ScriptedProvider {
    script: Script,
    consumed: Mutex<Vec<bool>>,
}

impl ScriptedProvider {
    pub fn new(script: Script) -> Self {
        let consumed = Mutex::new(vec![false; script.entries.len()]);
        Self { script, consumed }
    }

    pub fn from_file(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Fatal(format!("cannot read script {}: {e}", path.display())))?;
        let script = serde_json::from_str(&text)
            .map_err(|e| ProviderError::Fatal(format!("bad script {}: {e}", path.display())))?;
        Ok(Self::new(script))
    }

    pub fn remaining(&self) -> usize {
        self.consumed.lock().unwrap().iter().filter(|c| !**c).count()
    }
}

impl Provider for ScriptedProvider {
    fn complete(&self, request: &ProviderRequest<'_>) -> Result<String, ProviderError> {
        let mut consumed = self.consumed.lock().unwrap();
        let hit = self.script.entries.iter().enumerate().find(|(i, e)| {
            !consumed[*i]
                && e.role == request.role
                && e.matches.as_deref().map_or(true, |m| request.prompt.contains(m))
        });
        if let Some((i, entry)) = hit {
            consumed[i] = true;
            return Ok(entry.response.clone());
        }
        self.script
            .fallbacks
            .get(&request.role)
            .cloned()
            .ok_or_else(|| {
                ProviderError::Fatal(format!("script has no response left for role {}", request.role))
            })
    }
}

/// OpenAI-compatible chat-completions endpoint.
pub struct HttpChatProvider {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
}

impl HttpChatProvider {
    pub fn from_config(cfg: &RoleConfig) -> Result<Self, ProviderError> {
        let endpoint = cfg
            .endpoint
            .clone()
            .ok_or_else(|| ProviderError::Fatal("http provider needs an endpoint".into()))?;
        let model = cfg
            .model
            .clone()
            .ok_or_else(|| ProviderError::Fatal("http provider needs a model".into()))?;
        let api_key = match &cfg.credential_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                ProviderError::Fatal(format!("credential variable {var} is not set"))
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(600))
            .build()
            .map_err(|e| ProviderError::Fatal(e.to_string()))?;
        Ok(Self {
            client,
            endpoint,
            model,
            api_key,
        })
    }
}

impl Provider for HttpChatProvider {
    fn complete(&self, request: &ProviderRequest<'_>) -> Result<String, ProviderError> {
        let body = json!({
            "model": request.model.unwrap_or(&self.model),
            "temperature": request.temperature,
            "messages": [{"role": "user", "content": request.prompt}],
        });
        let mut req = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() || e.is_connect() {
                ProviderError::Transient(e.to_string())
            } else {
                ProviderError::Fatal(e.to_string())
            }
        })?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(ProviderError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(ProviderError::Fatal(format!("HTTP {status}: {text}")));
        }
        let value: Value = resp
            .json()
            .map_err(|e| ProviderError::Transient(format!("bad response body: {e}")))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ProviderError::Fatal(format!("unexpected response shape: {value}")))
    }
}
