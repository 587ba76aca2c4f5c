use std::time::{Duration, Instant};

use super::{Expert, ExpertError, ExpertOutput, ExpertRequest, ExpertResponse};
use crate::error::{Error, Result};

pub const ENDPOINT_VAR: &str = "EXPERT_ENDPOINT";
pub const TIMEOUT_VAR: &str = "EXPERT_TIMEOUT_MS";
pub const DEFAULT_TIMEOUT_MS: u64 = 2000;
pub const PREDICT_PATH: &str = "/v1/expert/predict";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RemoteExpertConfig {
    /// Base URL, e.g. `http://127.0.0.1:8080`.
    pub endpoint: String,
    pub timeout_ms: u64,
}

impl RemoteExpertConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteExpertConfig {
            endpoint: endpoint.into(),
            timeout_ms: DEFAULT_TIMEOUT_MS,
        }
    }

    /// Reads `EXPERT_ENDPOINT` and `EXPERT_TIMEOUT_MS` from the process environment.
    pub fn from_env() -> Result<Self> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(lookup: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let endpoint = lookup(ENDPOINT_VAR).ok_or_else(|| Error::Config(format!("{ENDPOINT_VAR} is not set")))?;
        let mut cfg = RemoteExpertConfig::new(endpoint);
        if let Some(raw) = lookup(TIMEOUT_VAR) {
            cfg.timeout_ms = raw
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{TIMEOUT_VAR}=`{raw}` is not a millisecond count")))?;
        }
        Ok(cfg)
    }

    /// Overrides unset fields from the environment: the variables win over
    /// file configuration only when present.
    pub fn with_env_overrides(mut self) -> Result<Self> {
        if let Ok(ep) = std::env::var(ENDPOINT_VAR) {
            self.endpoint = ep;
        }
        if let Ok(raw) = std::env::var(TIMEOUT_VAR) {
            self.timeout_ms = raw
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{TIMEOUT_VAR}=`{raw}` is not a millisecond count")))?;
        }
        Ok(self)
    }
}

/// HTTP client for an expert speaking the JSON predict protocol.
pub struct RemoteExpert {
    config: RemoteExpertConfig,
    url: String,
    agent: ureq::Agent,
}

impl RemoteExpert {
    pub fn new(config: RemoteExpertConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(true)
            .build()
            .into();
        let url = format!("{}{PREDICT_PATH}", config.endpoint.trim_end_matches('/'));
        RemoteExpert { config, url, agent }
    }

    pub fn config(&self) -> &RemoteExpertConfig {
        &self.config
    }

    fn map_err(&self, e: ureq::Error) -> ExpertError {
        match e {
            ureq::Error::Timeout(_) => ExpertError::Timeout {
                timeout_ms: self.config.timeout_ms,
            },
            ureq::Error::StatusCode(code) => ExpertError::Status(code),
            ureq::Error::Json(e) => ExpertError::Schema(e.to_string()),
            ureq::Error::Io(e) if e.kind() == std::io::ErrorKind::TimedOut => ExpertError::Timeout {
                timeout_ms: self.config.timeout_ms,
            },
            other => ExpertError::Connection(other.to_string()),
        }
    }
}

impl Expert for RemoteExpert {
    fn predict(&self, request: &ExpertRequest) -> std::result::Result<ExpertOutput, ExpertError> {
        let started = Instant::now();
        let mut response = self.agent.post(&self.url).send_json(request).map_err(|e| self.map_err(e))?;
        let body = response.body_mut().read_to_string().map_err(|e| self.map_err(e))?;
        let parsed: ExpertResponse = serde_json::from_str(&body).map_err(|e| ExpertError::Schema(e.to_string()))?;
        parsed.validate(&request.labels, started.elapsed().as_secs_f64() * 1000.0)
    }
}
