use super::{Expert, ExpertError, ExpertOutput, ExpertRequest};
use crate::classifier::{ConfidenceModel, NoisyLabeler};
use crate::dataset::StreamDataset;
use crate::error::Result;

/// Simulated expert: a noisy copy of the ground truth with a fixed reported latency.
#[derive(Clone, Debug)]
pub struct LocalOracleExpert {
    labeler: NoisyLabeler,
    latency_ms: f64,
    model_id: String,
}

impl LocalOracleExpert {
    pub fn new(labeler: NoisyLabeler, latency_ms: f64) -> Self {
        LocalOracleExpert {
            labeler,
            latency_ms,
            model_id: "local-oracle".into(),
        }
    }

    pub fn from_dataset(dataset: &StreamDataset, flip_prob: f64, confidence: ConfidenceModel, latency_ms: f64, seed: u64) -> Result<Self> {
        Ok(Self::new(
            NoisyLabeler::from_dataset(dataset, flip_prob, confidence, seed)?,
            latency_ms,
        ))
    }

    pub fn with_model_id(mut self, id: impl Into<String>) -> Self {
        self.model_id = id.into();
        self
    }

    pub fn labeler(&self) -> &NoisyLabeler {
        &self.labeler
    }
}

impl Expert for LocalOracleExpert {
    fn predict(&self, request: &ExpertRequest) -> std::result::Result<ExpertOutput, ExpertError> {
        let draw = self
            .labeler
            .draw(&request.stream_id, request.timestamp as usize)
            .map_err(|e| ExpertError::Unavailable(e.to_string()))?;
        Ok(ExpertOutput {
            label: draw.label,
            confidence: draw.confidence,
            latency_ms: self.latency_ms,
            model_id: self.model_id.clone(),
        })
    }
}
