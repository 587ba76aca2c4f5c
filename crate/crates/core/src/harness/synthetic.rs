//! Generated benchmark streams: piecewise-constant segment labels whose
//! features carry class evidence only in the final fraction of each segment.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{StreamDataset, Video};
use crate::error::{Error, Result};
use crate::stream::{FeatureStream, Modality, ModalityDims, SegmentAnnotation, TimestepFeatures};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub name: String,
    pub streams: usize,
    /// Timestamps per stream.
    pub length: usize,
    pub num_classes: usize,
    /// Feature width of every modality.
    pub dim: usize,
    pub segment_min: usize,
    pub segment_max: usize,
    /// Probability of an unannotated gap after a segment.
    pub gap_prob: f64,
    pub gap_min: usize,
    pub gap_max: usize,
    /// Fraction f of each segment, at its end, whose features show the label.
    pub informative_fraction: f64,
    /// Scale of the class prototype in the informative part.
    pub signal: f64,
    /// Scale of the previous segment's prototype carried into the
    /// uninformative prefix of the next one.
    pub interference: f64,
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f64,
    /// Whether consecutive segments always change class.
    pub force_change: bool,
    pub sample_rate_hz: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            name: "synthetic".into(),
            streams: 50,
            length: 300,
            num_classes: 2,
            dim: 8,
            segment_min: 20,
            segment_max: 60,
            gap_prob: 0.0,
            gap_min: 3,
            gap_max: 10,
            informative_fraction: 0.5,
            signal: 1.0,
            interference: 0.0,
            noise: 1.0,
            force_change: true,
            sample_rate_hz: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.streams == 0 || self.length == 0 || self.dim == 0 {
            return bad("synthetic streams, length and dim must be positive".into());
        }
        if self.num_classes < 2 {
            return bad(format!("synthetic data needs at least 2 classes, got {}", self.num_classes));
        }
        if self.segment_min == 0 || self.segment_min > self.segment_max {
            return bad(format!(
                "segment lengths [{}, {}] are not a valid range",
                self.segment_min, self.segment_max
            ));
        }
        if self.gap_min == 0 || self.gap_min > self.gap_max {
            return bad(format!("gap lengths [{}, {}] are not a valid range", self.gap_min, self.gap_max));
        }
        if !(0.0..=1.0).contains(&self.gap_prob) {
            return bad(format!("gap_prob {} outside [0, 1]", self.gap_prob));
        }
        if !(self.informative_fraction > 0.0 && self.informative_fraction <= 1.0) {
            return bad(format!("informative_fraction {} outside (0, 1]", self.informative_fraction));
        }
        if !(self.noise >= 0.0 && self.signal.is_finite() && self.interference.is_finite()) {
            return bad("signal and interference must be finite and noise non-negative".into());
        }
        if !(self.sample_rate_hz > 0.0) {
            return bad("sample_rate_hz must be positive".into());
        }
        Ok(())
    }
}

/// Number of timestamps at the start of a segment of length `len` that carry
/// no evidence of its label.
pub fn uninformative_prefix(len: usize, informative_fraction: f64) -> usize {
    let informative = ((len as f64) * informative_fraction).round().max(1.0) as usize;
    len - informative.min(len)
}

pub fn generate(config: &SyntheticConfig) -> Result<StreamDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    // One +-1 prototype per (modality, class).
    let prototypes: Vec<Vec<Vec<f64>>> = Modality::ALL
        .iter()
        .map(|_| {
            (0..config.num_classes)
                .map(|_| (0..config.dim).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect())
                .collect()
        })
        .collect();
    let noise = Normal::new(0.0, config.noise).map_err(|e| Error::Config(e.to_string()))?;
    let dims = ModalityDims::uniform(config.dim);
    let width = (config.streams - 1).to_string().len().max(3);

    let mut videos = Vec::with_capacity(config.streams);
    for v in 0..config.streams {
        let id = format!("s{v:0width$}");
        let mut segments = Vec::new();
        let mut t = 0;
        let mut prev: Option<usize> = None;
        while t < config.length {
            let len = rng.gen_range(config.segment_min..=config.segment_max).min(config.length - t);
            let label = match prev {
                Some(p) if config.force_change => {
                    let others: Vec<usize> = (0..config.num_classes).filter(|c| *c != p).collect();
                    *others.choose(&mut rng).expect("at least two classes")
                }
                _ => rng.gen_range(0..config.num_classes),
            };
            segments.push(SegmentAnnotation {
                video_id: id.clone(),
                st: t,
                en: t + len - 1,
                label,
            });
            prev = Some(label);
            t += len;
            if t < config.length && rng.gen_bool(config.gap_prob) {
                t += rng.gen_range(config.gap_min..=config.gap_max);
            }
        }

        // Mean per timestamp: gaps and prefixes echo the last segment seen.
        let mut means: Vec<(Option<usize>, f64)> = vec![(None, 0.0); config.length];
        let mut last: Option<usize> = None;
        let mut cursor = 0;
        for seg in &segments {
            for m in means.iter_mut().take(seg.st).skip(cursor) {
                *m = (last, config.interference);
            }
            let len = seg.en - seg.st + 1;
            let prefix = uninformative_prefix(len, config.informative_fraction);
            for (k, m) in means[seg.st..=seg.en].iter_mut().enumerate() {
                *m = if k < prefix {
                    (last, config.interference)
                } else {
                    (Some(seg.label), config.signal)
                };
            }
            last = Some(seg.label);
            cursor = seg.en + 1;
        }
        for m in means.iter_mut().skip(cursor) {
            *m = (last, config.interference);
        }

        let steps = means
            .iter()
            .map(|(class, scale)| {
                let mut step = TimestepFeatures::default();
                for m in Modality::ALL {
                    let x = (0..config.dim)
                        .map(|k| {
                            let mu = class.map_or(0.0, |c| scale * prototypes[m.index()][c][k]);
                            mu + noise.sample(&mut rng)
                        })
                        .collect();
                    step.set(m, Some(x));
                }
                step
            })
            .collect();
        let stream = FeatureStream::new(id, dims, steps)?;
        videos.push(Video::new(stream, segments)?);
    }

    Ok(StreamDataset {
        name: config.name.clone(),
        label_space: (0..config.num_classes).map(|c| format!("class{c}")).collect(),
        dims,
        sample_rate_hz: config.sample_rate_hz,
        videos,
    })
}
