use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Scorer, ScorerOutput};
use crate::dataset::StreamDataset;
use crate::error::{Error, Result};
use crate::nn::keyed_seed;
use crate::stream::{ClassId, StreamWindow};

/// How a simulated predictor reports confidence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConfidenceModel {
    Constant {
        value: f64,
    },
    /// `1 - flip_prob` on every output.
    Calibrated,
    /// Uniform in `correct` when the emitted label is right, in `incorrect` otherwise.
    Uniform {
        correct: [f64; 2],
        incorrect: [f64; 2],
    },
}

impl ConfidenceModel {
    fn validate(&self) -> Result<()> {
        let in_range = |p: f64| (0.5..=1.0).contains(&p);
        match self {
            ConfidenceModel::Constant { value } if !in_range(*value) => {
                Err(Error::Config(format!("constant confidence {value} outside [0.5, 1]")))
            }
            ConfidenceModel::Uniform { correct, incorrect } => {
                for [lo, hi] in [correct, incorrect] {
                    if !(in_range(*lo) && in_range(*hi) && lo <= hi) {
                        return Err(Error::Config(format!(
                            "confidence range [{lo}, {hi}] must satisfy 0.5 <= lo <= hi <= 1"
                        )));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// One simulated prediction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Draw {
    pub label: ClassId,
    pub confidence: f64,
    /// `None` when the ground truth at that timestamp is Unlabeled.
    pub correct: Option<bool>,
}

/// Emits the true label with probability `1 - flip_prob`, otherwise a
/// uniformly chosen wrong label. Each (stream, timestamp) has its own random
/// stream, so outputs do not depend on call order.
#[derive(Clone, Debug)]
pub struct NoisyLabeler {
    truth: HashMap<String, Vec<Option<ClassId>>>,
    num_classes: usize,
    flip_prob: f64,
    confidence: ConfidenceModel,
    seed: u64,
}

impl NoisyLabeler {
    pub fn new(
        truth: HashMap<String, Vec<Option<ClassId>>>,
        num_classes: usize,
        flip_prob: f64,
        confidence: ConfidenceModel,
        seed: u64,
    ) -> Result<Self> {
        if !(0.0..=0.5).contains(&flip_prob) {
            return Err(Error::Config(format!("flip probability {flip_prob} outside [0, 0.5]")));
        }
        if num_classes < 2 {
            return Err(Error::Config("a noisy labeler needs at least two classes".into()));
        }
        confidence.validate()?;
        Ok(NoisyLabeler {
            truth,
            num_classes,
            flip_prob,
            confidence,
            seed,
        })
    }

    pub fn from_dataset(dataset: &StreamDataset, flip_prob: f64, confidence: ConfidenceModel, seed: u64) -> Result<Self> {
        let truth = dataset.videos.iter().map(|v| (v.id.clone(), v.labels.clone())).collect();
        NoisyLabeler::new(truth, dataset.num_classes(), flip_prob, confidence, seed)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn flip_prob(&self) -> f64 {
        self.flip_prob
    }

    pub fn truth(&self, stream_id: &str, t: usize) -> Result<Option<ClassId>> {
        let labels = self
            .truth
            .get(stream_id)
            .ok_or_else(|| Error::Invalid(format!("no ground truth for stream `{stream_id}`")))?;
        labels.get(t).copied().ok_or(Error::OutOfRange {
            index: t,
            len: labels.len(),
        })
    }

    pub fn draw(&self, stream_id: &str, t: usize) -> Result<Draw> {
        let truth = self.truth(stream_id, t)?;
        let mut rng = ChaCha8Rng::seed_from_u64(keyed_seed(self.seed, stream_id, t as u64));
        let flip = rng.gen::<f64>() < self.flip_prob;
        let (label, correct) = match truth {
            Some(y) if !flip => (y, Some(true)),
            Some(y) => {
                let k = rng.gen_range(0..self.num_classes - 1);
                (if k >= y { k + 1 } else { k }, Some(false))
            }
            None => (rng.gen_range(0..self.num_classes), None),
        };
        let confidence = match &self.confidence {
            ConfidenceModel::Constant { value } => *value,
            ConfidenceModel::Calibrated => 1.0 - self.flip_prob,
            ConfidenceModel::Uniform { correct: c, incorrect: w } => {
                let [lo, hi] = if correct == Some(false) { *w } else { *c };
                if hi > lo {
                    rng.gen_range(lo..=hi)
                } else {
                    lo
                }
            }
        };
        Ok(Draw {
            label,
            confidence,
            correct,
        })
    }
}

/// Simulated cheap scorer backed by ground truth.
#[derive(Clone, Debug)]
pub struct SyntheticOracle {
    labeler: NoisyLabeler,
}

impl SyntheticOracle {
    pub fn new(labeler: NoisyLabeler) -> Self {
        SyntheticOracle { labeler }
    }

    pub fn from_dataset(dataset: &StreamDataset, flip_prob: f64, confidence: ConfidenceModel, seed: u64) -> Result<Self> {
        Ok(SyntheticOracle::new(NoisyLabeler::from_dataset(
            dataset, flip_prob, confidence, seed,
        )?))
    }

    pub fn labeler(&self) -> &NoisyLabeler {
        &self.labeler
    }
}

impl Scorer for SyntheticOracle {
    fn num_classes(&self) -> usize {
        self.labeler.num_classes
    }

    fn score(&self, window: &StreamWindow) -> Result<ScorerOutput> {
        let d = self.labeler.draw(&window.stream_id, window.timestamp)?;
        Ok(ScorerOutput::from_label(d.label, d.confidence, self.labeler.num_classes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labeler(n: usize, flip: f64, conf: ConfidenceModel) -> NoisyLabeler {
        let truth: Vec<Option<ClassId>> = (0..n).map(|t| Some(t % 2)).collect();
        NoisyLabeler::new(HashMap::from([("s".to_string(), truth)]), 2, flip, conf, 11).unwrap()
    }

    #[test]
    fn perfect_oracle() {
        let l = labeler(200, 0.0, ConfidenceModel::Constant { value: 0.9 });
        for t in 0..200 {
            let d = l.draw("s", t).unwrap();
            assert_eq!(d.label, t % 2);
            assert_eq!(d.confidence, 0.9);
        }
    }

    #[test]
    fn calibrated_confidence() {
        let l = labeler(50, 0.2, ConfidenceModel::Calibrated);
        assert!((0..50).all(|t| l.draw("s", t).unwrap().confidence == 0.8));
    }

    #[test]
    fn coin_flip_accuracy() {
        // Binomial(10000, 0.5) has sd 0.005; 0.02 is four sd.
        let l = labeler(10_000, 0.5, ConfidenceModel::Calibrated);
        let correct = (0..10_000).filter(|t| l.draw("s", *t).unwrap().correct == Some(true)).count();
        let acc = correct as f64 / 10_000.0;
        assert!((acc - 0.5).abs() <= 0.02, "{acc}");
    }

    #[test]
    fn deterministic_and_order_free() {
        let l = labeler(
            100,
            0.3,
            ConfidenceModel::Uniform {
                correct: [0.7, 1.0],
                incorrect: [0.5, 0.8],
            },
        );
        let fwd: Vec<_> = (0..100).map(|t| l.draw("s", t).unwrap()).collect();
        let rev: Vec<_> = (0..100).rev().map(|t| l.draw("s", t).unwrap()).collect();
        assert!(fwd.iter().eq(rev.iter().rev()));
    }

    #[test]
    fn invalid_settings() {
        let t = HashMap::new();
        assert!(NoisyLabeler::new(t.clone(), 2, 0.6, ConfidenceModel::Calibrated, 0).is_err());
        assert!(NoisyLabeler::new(t, 2, 0.1, ConfidenceModel::Constant { value: 0.4 }, 0).is_err());
    }
}
