//! Causal stream data model: per-timestamp multimodal features, past-only
//! windows, segment annotations and temporal IoU.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index into a dataset's label space.
pub type ClassId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Visual,
    Text,
    Audio,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Visual, Modality::Text, Modality::Audio];

    pub fn index(self) -> usize {
        match self {
            Modality::Visual => 0,
            Modality::Text => 1,
            Modality::Audio => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Visual => "visual",
            Modality::Text => "text",
            Modality::Audio => "audio",
        }
    }
}

/// Feature width per modality; `None` marks a modality absent for the whole dataset.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityDims {
    pub visual: Option<usize>,
    pub text: Option<usize>,
    pub audio: Option<usize>,
}

impl ModalityDims {
    pub fn uniform(dim: usize) -> Self {
        ModalityDims {
            visual: Some(dim),
            text: Some(dim),
            audio: Some(dim),
        }
    }

    pub fn get(&self, modality: Modality) -> Option<usize> {
        match modality {
            Modality::Visual => self.visual,
            Modality::Text => self.text,
            Modality::Audio => self.audio,
        }
    }

    pub fn all_present(&self) -> bool {
        Modality::ALL.iter().all(|m| self.get(*m).is_some())
    }
}

/// Features observed at a single timestamp. An absent modality is `None`,
/// never a zero vector.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TimestepFeatures {
    pub visual: Option<Vec<f64>>,
    pub text: Option<Vec<f64>>,
    pub audio: Option<Vec<f64>>,
}

impl TimestepFeatures {
    pub fn get(&self, modality: Modality) -> Option<&[f64]> {
        match modality {
            Modality::Visual => self.visual.as_deref(),
            Modality::Text => self.text.as_deref(),
            Modality::Audio => self.audio.as_deref(),
        }
    }

    pub fn set(&mut self, modality: Modality, value: Option<Vec<f64>>) {
        match modality {
            Modality::Visual => self.visual = value,
            Modality::Text => self.text = value,
            Modality::Audio => self.audio = value,
        }
    }

    /// Zero vectors for every modality the dataset declares.
    fn padding(dims: &ModalityDims) -> Self {
        TimestepFeatures {
            visual: dims.visual.map(|d| vec![0.0; d]),
            text: dims.text.map(|d| vec![0.0; d]),
            audio: dims.audio.map(|d| vec![0.0; d]),
        }
    }
}

/// The feature sequence of one video, row `r` holding timestamp `r`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStream {
    id: String,
    dims: ModalityDims,
    steps: Vec<TimestepFeatures>,
}

impl FeatureStream {
    pub fn new(id: impl Into<String>, dims: ModalityDims, steps: Vec<TimestepFeatures>) -> Result<Self> {
        let id = id.into();
        for (t, step) in steps.iter().enumerate() {
            for m in Modality::ALL {
                match (dims.get(m), step.get(m)) {
                    (Some(d), Some(v)) if v.len() != d => {
                        return Err(Error::Dimension(format!(
                            "stream `{id}` timestamp {t}: {} has width {}, expected {d}",
                            m.name(),
                            v.len()
                        )))
                    }
                    (None, Some(_)) => {
                        return Err(Error::Dimension(format!(
                            "stream `{id}` timestamp {t}: {} is declared absent but has data",
                            m.name()
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(FeatureStream { id, dims, steps })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dims(&self) -> ModalityDims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn step(&self, t: usize) -> Option<&TimestepFeatures> {
        self.steps.get(t)
    }

    pub fn steps(&self) -> &[TimestepFeatures] {
        &self.steps
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    /// Past context length N; a window holds N + 1 timestamps.
    pub window: usize,
    /// Decision interval s, in timestamps.
    pub interval: usize,
    /// Text aggregation window n_t.
    pub text_window: usize,
    /// Audio aggregation window n_a.
    pub audio_window: usize,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            window: 32,
            interval: 1,
            text_window: 2,
            audio_window: 4,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 1 {
            return Err(Error::Config("window length must be at least 1".into()));
        }
        if self.interval < 1 {
            return Err(Error::Config("decision interval must be at least 1".into()));
        }
        for (name, n) in [("text_window", self.text_window), ("audio_window", self.audio_window)] {
            if n < 1 || n > self.window {
                return Err(Error::Config(format!("{name} = {n} must lie in [1, {}]", self.window)));
            }
        }
        Ok(())
    }

    pub fn aggregation_window(&self, modality: Modality) -> usize {
        match modality {
            Modality::Visual => 1,
            Modality::Text => self.text_window,
            Modality::Audio => self.audio_window,
        }
    }
}

/// Inclusive integer timestamp interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub start: i64,
    pub end: i64,
}

impl Interval {
    pub fn new(start: i64, end: i64) -> Result<Self> {
        if end < start {
            return Err(Error::DegenerateInterval { start, end });
        }
        Ok(Interval { start, end })
    }

    pub fn len(&self) -> i64 {
        (self.end - self.start + 1).max(0)
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }

    pub fn contains(&self, t: i64) -> bool {
        self.start <= t && t <= self.end
    }
}

/// Intersection over union of two inclusive intervals, counted in whole timestamps.
pub fn temporal_iou(window: Interval, segment: Interval) -> Result<f64> {
    for iv in [window, segment] {
        if iv.is_empty() {
            return Err(Error::DegenerateInterval {
                start: iv.start,
                end: iv.end,
            });
        }
    }
    let inter = (window.end.min(segment.end) - window.start.max(segment.start) + 1).max(0);
    let union = window.len() + segment.len() - inter;
    Ok(inter as f64 / union as f64)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentAnnotation {
    pub video_id: String,
    pub st: usize,
    pub en: usize,
    pub label: ClassId,
}

impl SegmentAnnotation {
    pub fn interval(&self) -> Interval {
        Interval {
            start: self.st as i64,
            end: self.en as i64,
        }
    }
}

/// Expands segment labels onto timestamps `0..duration`; uncovered timestamps are `None`.
pub fn propagate_labels(segments: &[SegmentAnnotation], duration: usize) -> Result<Vec<Option<ClassId>>> {
    let mut labels = vec![None; duration];
    let mut owner: Vec<Option<usize>> = vec![None; duration];
    for (idx, seg) in segments.iter().enumerate() {
        if seg.st > seg.en || seg.en >= duration {
            return Err(Error::SegmentOutOfRange {
                video: seg.video_id.clone(),
                index: idx,
                st: seg.st,
                en: seg.en,
                last: duration as i64 - 1,
            });
        }
        for t in seg.st..=seg.en {
            if let Some(prev) = owner[t] {
                return Err(Error::OverlappingSegments {
                    video: seg.video_id.clone(),
                    first: prev,
                    second: idx,
                });
            }
            owner[t] = Some(idx);
            labels[t] = Some(seg.label);
        }
    }
    Ok(labels)
}

/// A past-only slice `[x_{i-N}, ..., x_i]` of one stream.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamWindow {
    pub stream_id: String,
    /// Decision timestamp `i`, the last position of the window.
    pub timestamp: usize,
    pub dims: ModalityDims,
    pub features: Vec<TimestepFeatures>,
    /// `true` where the position precedes the start of the stream.
    pub pad_mask: Vec<bool>,
    pub extent: Interval,
}

impl StreamWindow {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn padded_positions(&self) -> usize {
        self.pad_mask.iter().filter(|p| **p).count()
    }

    /// Timestamp at window position `pos`, negative for padding.
    pub fn timestamp_at(&self, pos: usize) -> i64 {
        self.timestamp as i64 - (self.len() - 1 - pos) as i64
    }
}

fn window_with(
    stream: &FeatureStream,
    i: usize,
    config: &StreamConfig,
    mut fill: impl FnMut(usize) -> TimestepFeatures,
) -> Result<StreamWindow> {
    if i >= stream.len() {
        return Err(Error::OutOfRange {
            index: i,
            len: stream.len(),
        });
    }
    let n = config.window;
    let mut features = Vec::with_capacity(n + 1);
    let mut pad_mask = Vec::with_capacity(n + 1);
    for offset in (0..=n).rev() {
        if offset > i {
            features.push(TimestepFeatures::padding(&stream.dims));
            pad_mask.push(true);
        } else {
            features.push(fill(i - offset));
            pad_mask.push(false);
        }
    }
    Ok(StreamWindow {
        stream_id: stream.id.clone(),
        timestamp: i,
        dims: stream.dims,
        features,
        pad_mask,
        extent: Interval {
            start: i.saturating_sub(n) as i64,
            end: i as i64,
        },
    })
}

/// Raw past-only window ending at `i`, zero-padded before the stream start.
pub fn extract_window(stream: &FeatureStream, i: usize, config: &StreamConfig) -> Result<StreamWindow> {
    window_with(stream, i, config, |t| stream.steps[t].clone())
}

/// Window as consumed by scorers: text and audio at each position are mean
/// pooled over their aggregation windows, vision stays per-timestamp.
pub fn extract_model_window(stream: &FeatureStream, i: usize, config: &StreamConfig) -> Result<StreamWindow> {
    window_with(stream, i, config, |t| {
        let mut step = TimestepFeatures::default();
        for m in Modality::ALL {
            let n = config.aggregation_window(m);
            let value = if n == 1 {
                stream.steps[t].get(m).map(<[f64]>::to_vec)
            } else {
                aggregate_modality(stream, t, m, n)
            };
            step.set(m, value);
        }
        step
    })
}

/// Mean of one modality over timestamps `[max(0, i - n + 1), i]`, skipping
/// absent entries. `None` when nothing in range is present.
pub fn aggregate_modality(stream: &FeatureStream, i: usize, modality: Modality, n: usize) -> Option<Vec<f64>> {
    let dim = stream.dims.get(modality)?;
    let n = n.max(1);
    let lo = (i + 1).saturating_sub(n);
    let hi = i.min(stream.len().checked_sub(1)?);
    let mut sum = vec![0.0; dim];
    let mut count = 0usize;
    for step in &stream.steps[lo..=hi] {
        if let Some(v) = step.get(modality) {
            sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
            count += 1;
        }
    }
    if count == 0 {
        return None;
    }
    let inv = 1.0 / count as f64;
    sum.iter_mut().for_each(|s| *s *= inv);
    Some(sum)
}
