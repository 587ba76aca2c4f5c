//! Replay of recorded scorer outputs.
//!
//! A trace directory holds one `<video_id>.csv` per stream with header
//! `timestamp,label,confidence` optionally followed by `p_<class>` columns,
//! one row per timestamp starting at 0.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{Scorer, ScorerOutput};
use crate::dataset::StreamDataset;
use crate::error::{Error, Result};
use crate::stream::{extract_model_window, StreamConfig, StreamWindow};

#[derive(Clone, Debug, PartialEq)]
pub struct TraceScorer {
    label_space: Vec<String>,
    traces: HashMap<String, Vec<ScorerOutput>>,
}

impl TraceScorer {
    pub fn new(label_space: Vec<String>, traces: HashMap<String, Vec<ScorerOutput>>) -> Self {
        TraceScorer { label_space, traces }
    }

    pub fn label_space(&self) -> &[String] {
        &self.label_space
    }

    pub fn stream(&self, id: &str) -> Option<&[ScorerOutput]> {
        self.traces.get(id).map(Vec::as_slice)
    }
}

impl Scorer for TraceScorer {
    fn num_classes(&self) -> usize {
        self.label_space.len()
    }

    fn score(&self, window: &StreamWindow) -> Result<ScorerOutput> {
        let trace = self
            .traces
            .get(&window.stream_id)
            .ok_or_else(|| Error::Invalid(format!("trace has no stream `{}`", window.stream_id)))?;
        trace.get(window.timestamp).cloned().ok_or(Error::OutOfRange {
            index: window.timestamp,
            len: trace.len(),
        })
    }
}

/// Scores every timestamp of every video and writes one CSV per video.
pub fn export_trace<S: Scorer + ?Sized>(scorer: &S, dataset: &StreamDataset, config: &StreamConfig, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for video in &dataset.videos {
        let outputs = (0..video.duration())
            .map(|t| scorer.score(&extract_model_window(&video.stream, t, config)?))
            .collect::<Result<Vec<_>>>()?;
        write_trace_file(dir.join(format!("{}.csv", video.id)), &dataset.label_space, &outputs)?;
    }
    Ok(())
}

pub fn write_trace_file(path: impl AsRef<Path>, label_space: &[String], outputs: &[ScorerOutput]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["timestamp".to_string(), "label".into(), "confidence".into()];
    header.extend(label_space.iter().map(|l| format!("p_{l}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (t, out) in outputs.iter().enumerate() {
        let mut row = vec![t.to_string(), label_space[out.label].clone(), out.confidence.to_string()];
        row.extend(out.class_probs.iter().map(f64::to_string));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::parse(path, line, e.to_string())
}

/// Loads every `*.csv` in `dir` as a per-stream trace.
pub fn load_trace(dir: impl AsRef<Path>, label_space: &[String]) -> Result<TraceScorer> {
    let dir = dir.as_ref();
    let mut traces = HashMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("csv") {
            continue;
        }
        let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        traces.insert(id, read_trace_file(&path, label_space)?);
    }
    if traces.is_empty() {
        return Err(Error::Invalid(format!("{}: no trace files", dir.display())));
    }
    Ok(TraceScorer::new(label_space.to_vec(), traces))
}

pub(crate) fn read_trace_file(path: &Path, label_space: &[String]) -> Result<Vec<ScorerOutput>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let names: Vec<&str> = header.iter().collect();
    if names.len() < 3 || names[..3] != ["timestamp", "label", "confidence"] {
        return Err(Error::parse(path, 1, "header must start with timestamp,label,confidence"));
    }
    let prob_cols = &names[3..];
    let has_probs = !prob_cols.is_empty();
    if has_probs {
        let expected: Vec<String> = label_space.iter().map(|l| format!("p_{l}")).collect();
        if prob_cols.iter().ne(expected.iter()) {
            return Err(Error::parse(
                path,
                1,
                format!("probability columns {prob_cols:?} do not match label space {label_space:?}"),
            ));
        }
    }
    let c = label_space.len();
    let min_conf = if c == 2 { 0.5 } else { 1.0 / c as f64 };

    let mut outputs = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let expected_t = outputs.len();
        let t: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, line, format!("bad timestamp `{}`", &record[0])))?;
        if t != expected_t {
            return Err(Error::parse(path, line, format!("missing timestamp {expected_t} (found {t})")));
        }
        let label = label_space
            .iter()
            .position(|l| l == record[1].trim())
            .ok_or_else(|| Error::parse(path, line, format!("unknown label `{}`", &record[1])))?;
        let confidence: f64 = record[2]
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, line, format!("bad confidence `{}`", &record[2])))?;
        if !(min_conf..=1.0).contains(&confidence) {
            return Err(Error::parse(path, line, format!("confidence {confidence} outside [{min_conf}, 1]")));
        }
        let out = if has_probs {
            let probs = (0..c)
                .map(|k| {
                    record[3 + k]
                        .trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|p| (0.0..=1.0).contains(p))
                        .ok_or_else(|| Error::parse(path, line, format!("bad probability `{}`", &record[3 + k])))
                })
                .collect::<Result<Vec<_>>>()?;
            ScorerOutput {
                label,
                confidence,
                class_probs: probs,
            }
        } else {
            ScorerOutput::from_label(label, confidence, c)
        };
        outputs.push(out);
    }
    Ok(outputs)
}
