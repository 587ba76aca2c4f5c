//! Cheap per-window scorers: the trainable streaming encoder, trace replay,
//! and a synthetic noisy oracle used for simulation.

mod checkpoint;
mod encoder;
mod oracle;
mod trace;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::stream::{ClassId, StreamWindow};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use encoder::{EncoderConfig, ModelShape, StreamEncoder};
pub use oracle::{ConfidenceModel, NoisyLabeler, SyntheticOracle};
pub use trace::{export_trace, load_trace, write_trace_file, TraceScorer};
pub use train::{train, train_observed, training_samples, EncoderBatchObjective, TrainObjective, TrainingLog, TrainingSample};

/// Label and confidence produced for one window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScorerOutput {
    pub label: ClassId,
    /// Probability of `label`; in `[0.5, 1]` for binary label spaces.
    pub confidence: f64,
    pub class_probs: Vec<f64>,
}

impl ScorerOutput {
    /// Argmax label (lowest index on ties) with its probability as confidence.
    pub fn from_probs(class_probs: Vec<f64>) -> Self {
        let (label, confidence) = class_probs
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, p)| if p > best.1 { (i, p) } else { best });
        ScorerOutput {
            label,
            confidence,
            class_probs,
        }
    }

    /// Output whose distribution puts `confidence` on `label` and spreads
    /// the remainder evenly over the other classes.
    pub fn from_label(label: ClassId, confidence: f64, num_classes: usize) -> Self {
        let rest = if num_classes > 1 {
            (1.0 - confidence) / (num_classes - 1) as f64
        } else {
            0.0
        };
        let class_probs = (0..num_classes).map(|c| if c == label { confidence } else { rest }).collect();
        ScorerOutput {
            label,
            confidence,
            class_probs,
        }
    }
}

/// Anything that maps a past-only window to a label and confidence.
pub trait Scorer: Send + Sync {
    fn num_classes(&self) -> usize;

    fn score(&self, window: &StreamWindow) -> Result<ScorerOutput>;
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }

    fn score(&self, window: &StreamWindow) -> Result<ScorerOutput> {
        (**self).score(window)
    }
}

impl<S: Scorer + ?Sized> Scorer for std::sync::Arc<S> {
    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }

    fn score(&self, window: &StreamWindow) -> Result<ScorerOutput> {
        (**self).score(window)
    }
}
