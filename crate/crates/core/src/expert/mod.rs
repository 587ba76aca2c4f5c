//! The escalation target: an expensive, more accurate predictor reached
//! either in-process (simulation) or over HTTP.

mod local;
mod remote;
mod stub;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stream::ClassId;

pub use local::LocalOracleExpert;
pub use remote::{RemoteExpert, RemoteExpertConfig, DEFAULT_TIMEOUT_MS, ENDPOINT_VAR, PREDICT_PATH, TIMEOUT_VAR};
pub use stub::{StubBehavior, StubServer};

/// Failures the router can fall back from. No variant carries a usable prediction.
#[derive(Clone, Debug, Error, PartialEq)]
pub enum ExpertError {
    #[error("expert did not answer within {timeout_ms} ms")]
    Timeout { timeout_ms: u64 },
    #[error("connection to expert failed: {0}")]
    Connection(String),
    #[error("expert returned HTTP status {0}")]
    Status(u16),
    #[error("expert response violates the schema: {0}")]
    Schema(String),
    #[error("expert confidence {0} outside [0.5, 1]")]
    ConfidenceOutOfRange(f64),
    #[error("expert returned label `{0}` outside the label space")]
    UnknownLabel(String),
    #[error("expert unavailable: {0}")]
    Unavailable(String),
}

/// Frame attached to a request: inline base64 bytes or a reference.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum FrameRef {
    B64(String),
    Uri(String),
}

impl FrameRef {
    pub fn inline(bytes: &[u8]) -> Self {
        use base64::Engine;
        FrameRef::B64(base64::engine::general_purpose::STANDARD.encode(bytes))
    }
}

/// Wire request body for `POST /v1/expert/predict`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertRequest {
    pub stream_id: String,
    pub timestamp: u64,
    /// Text for timestamps `[i - N, i]`, oldest first.
    pub text: Vec<String>,
    pub frame: Option<FrameRef>,
    pub labels: Vec<String>,
    /// Labels previously emitted on this stream, oldest first. Not sent on the wire.
    #[serde(skip)]
    pub prior_labels: Vec<String>,
}

/// Wire response body.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertResponse {
    pub label: String,
    pub confidence: f64,
    pub model_id: String,
}

/// A validated expert prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertOutput {
    pub label: ClassId,
    pub confidence: f64,
    pub latency_ms: f64,
    pub model_id: String,
}

impl ExpertResponse {
    /// Checks the response against the request's label space.
    pub fn validate(self, labels: &[String], latency_ms: f64) -> Result<ExpertOutput, ExpertError> {
        if !self.confidence.is_finite() || !(0.5..=1.0).contains(&self.confidence) {
            return Err(ExpertError::ConfidenceOutOfRange(self.confidence));
        }
        let label = labels
            .iter()
            .position(|l| *l == self.label)
            .ok_or(ExpertError::UnknownLabel(self.label))?;
        Ok(ExpertOutput {
            label,
            confidence: self.confidence,
            latency_ms,
            model_id: self.model_id,
        })
    }
}

pub trait Expert: Send + Sync {
    fn predict(&self, request: &ExpertRequest) -> Result<ExpertOutput, ExpertError>;
}

impl<E: Expert + ?Sized> Expert for Box<E> {
    fn predict(&self, request: &ExpertRequest) -> Result<ExpertOutput, ExpertError> {
        (**self).predict(request)
    }
}

impl<E: Expert + ?Sized> Expert for std::sync::Arc<E> {
    fn predict(&self, request: &ExpertRequest) -> Result<ExpertOutput, ExpertError> {
        (**self).predict(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_shapes() {
        let req = ExpertRequest {
            stream_id: "v1".into(),
            timestamp: 7,
            text: vec!["hi".into()],
            frame: Some(FrameRef::Uri("file:///f/7.jpg".into())),
            labels: vec!["neg".into(), "pos".into()],
            prior_labels: vec!["neg".into()],
        };
        let v: serde_json::Value = serde_json::to_value(&req).unwrap();
        assert_eq!(
            v,
            serde_json::json!({
                "stream_id": "v1", "timestamp": 7, "text": ["hi"],
                "frame": {"kind": "uri", "value": "file:///f/7.jpg"},
                "labels": ["neg", "pos"]
            })
        );
        let none = ExpertRequest { frame: None, ..req };
        assert!(serde_json::to_value(&none).unwrap()["frame"].is_null());
        let inline = FrameRef::inline(b"\x00\x01");
        assert_eq!(
            serde_json::to_value(&inline).unwrap(),
            serde_json::json!({"kind": "b64", "value": "AAE="})
        );
    }

    #[test]
    fn response_validation() {
        let labels = vec!["neg".to_string(), "pos".to_string()];
        let ok = ExpertResponse {
            label: "pos".into(),
            confidence: 0.9,
            model_id: "m".into(),
        };
        assert_eq!(ok.clone().validate(&labels, 3.0).unwrap().label, 1);
        let low = ExpertResponse {
            confidence: 0.3,
            ..ok.clone()
        };
        assert_eq!(low.validate(&labels, 0.0), Err(ExpertError::ConfidenceOutOfRange(0.3)));
        let unknown = ExpertResponse { label: "meh".into(), ..ok };
        assert!(matches!(unknown.validate(&labels, 0.0), Err(ExpertError::UnknownLabel(_))));
    }
}
