//! TOML run configuration. Every section is optional; role sections are
//! merged field by field onto the role defaults.
//!
//! ```toml
//! [roles.base_planner]
//! provider = "http"
//! model = "some-model"
//! endpoint = "https://example.invalid/v1/chat/completions"
//! credential_env = "PLANNER_API_KEY"
//!
//! [constraints]
//! initial_limit = 15
//! decay_rate = 0.01
//!
//! [memory]
//! window = 3
//! observation_threshold = 4000
//!
//! [executor]
//! backend = "plain"
//! timeout_secs = 1800
//!
//! [planner]
//! max_steps = 50
//! expert_help_budget = 3
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::PoolPolicy;
use crate::executor::{Backend, ExecOptions};
use crate::gateway::{RoleConfig, RoleTable, RoleTag, DEFAULT_TRANSPORT_RETRIES};
use crate::planner::{AgentOptions, CascadeConfig};
use crate::research_log::MemorySettings;
use crate::workers::WorkerSettings;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleOverride {
    pub provider: Option<String>,
    pub model: Option<String>,
    pub endpoint: Option<String>,
    pub credential_env: Option<String>,
    pub script: Option<String>,
    pub temperature: Option<f64>,
    pub retry_budget: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutorSection {
    pub backend: Backend,
    pub timeout_secs: Option<u64>,
    pub shim_command: Vec<String>,
    /// Extra variables withheld from scripts, beyond the role credentials.
    pub scrub_env: Vec<String>,
}

impl Default for ExecutorSection {
    fn default() -> Self {
        Self {
            backend: Backend::Plain,
            timeout_secs: None,
            shim_command: vec!["trace_shim".into()],
            scrub_env: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerSection {
    pub max_steps: usize,
    pub expert_help_budget: usize,
}

impl Default for PlannerSection {
    fn default() -> Self {
        Self {
            max_steps: 50,
            expert_help_budget: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySection {
    pub transport_retries: u32,
}

impl Default for GatewaySection {
    fn default() -> Self {
        Self {
            transport_retries: DEFAULT_TRANSPORT_RETRIES,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub roles: BTreeMap<RoleTag, RoleOverride>,
    pub constraints: PoolPolicy,
    pub memory: MemorySettings,
    pub executor: ExecutorSection,
    pub planner: PlannerSection,
    pub workers: WorkerSettings,
    pub gateway: GatewaySection,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: Config = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.constraints.validate().map_err(ConfigError::Invalid)?;
        if self.memory.window == 0 {
            return Err(ConfigError::Invalid("memory.window must be positive".into()));
        }
        if self.executor.timeout_secs == Some(0) {
            return Err(ConfigError::Invalid("executor.timeout_secs must be positive".into()));
        }
        if self.executor.backend == Backend::Traced && self.executor.shim_command.is_empty() {
            return Err(ConfigError::Invalid("executor.shim_command must not be empty".into()));
        }
        if self.workers.retry_budget == 0 {
            return Err(ConfigError::Invalid("workers.retry_budget must be positive".into()));
        }
        for (role, cfg) in self.role_table().0 {
            if !(0.0..=2.0).contains(&cfg.temperature) {
                return Err(ConfigError::Invalid(format!("temperature for {role} must be in 0..2")));
            }
            if cfg.retry_budget == 0 {
                return Err(ConfigError::Invalid(format!("retry_budget for {role} must be positive")));
            }
        }
        self.cascade().validate().map_err(ConfigError::Invalid)
    }

    pub fn role_table(&self) -> RoleTable {
        let mut table = RoleTable::default();
        for (role, o) in &self.roles {
            let base = table.0.entry(*role).or_insert_with(|| RoleConfig::defaults(*role));
            if let Some(v) = &o.provider {
                base.provider = v.clone();
            }
            if o.model.is_some() {
                base.model = o.model.clone();
            }
            if o.endpoint.is_some() {
                base.endpoint = o.endpoint.clone();
            }
            if o.credential_env.is_some() {
                base.credential_env = o.credential_env.clone();
            }
            if o.script.is_some() {
                base.script = o.script.clone();
            }
            if let Some(t) = o.temperature {
                base.temperature = t;
            }
            if let Some(b) = o.retry_budget {
                base.retry_budget = b;
            }
        }
        table
    }

    pub fn cascade(&self) -> CascadeConfig {
        CascadeConfig::from_roles(
            &self.role_table(),
            self.planner.expert_help_budget,
            self.planner.max_steps,
        )
    }

    /// Credential variables named by any role, plus the explicit scrub list.
    pub fn scrubbed_env(&self) -> Vec<String> {
        let mut vars: Vec<String> = self
            .role_table()
            .0
            .values()
            .filter_map(|r| r.credential_env.clone())
            .chain(self.executor.scrub_env.iter().cloned())
            .collect();
        vars.sort();
        vars.dedup();
        vars
    }

    pub fn agent_options(&self) -> AgentOptions {
        AgentOptions {
            cascade: self.cascade(),
            policy: self.constraints,
            workers: self.workers,
            exec: ExecOptions {
                backend: self.executor.backend,
                shim_command: self.executor.shim_command.clone(),
                scrub_env: self.scrubbed_env(),
                ..ExecOptions::default()
            },
            exec_timeout: self.executor.timeout_secs.map(Duration::from_secs),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let c = Config::parse("").unwrap();
        let roles = c.role_table();
        assert_eq!(roles.get(RoleTag::BasePlanner).temperature, 0.8);
        assert_eq!(roles.get(RoleTag::Worker).temperature, 0.2);
        let budgets: Vec<usize> = c.cascade().levels.iter().map(|l| l.budget).collect();
        assert_eq!(budgets, [8, 4, 1]);
        assert_eq!(c.memory.window, 3);
        assert_eq!(c.planner.max_steps, 50);
    }

    #[test]
    fn role_sections_merge() {
        let c = Config::parse(
            "[roles.worker]\nprovider = \"http\"\nmodel = \"m\"\ncredential_env = \"KEY\"\n\n[executor]\nscrub_env = [\"OTHER\"]\n",
        )
        .unwrap();
        let w = c.role_table().get(RoleTag::Worker).clone();
        assert_eq!((w.provider.as_str(), w.model.as_deref(), w.temperature), ("http", Some("m"), 0.2));
        assert_eq!(c.scrubbed_env(), ["KEY", "OTHER"]);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(Config::parse("[constraints]\nfloor = 0\n").is_err());
        assert!(Config::parse("[roles.worker]\nretry_budget = 0\n").is_err());
        assert!(Config::parse("[bogus]\nx = 1\n").is_err());
        assert!(Config::parse("[roles.nobody]\nmodel = \"x\"\n").is_err());
    }
}
