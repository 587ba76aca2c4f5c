use serde::{Deserialize, Serialize};

use super::metrics::{classification_scores, compute_metrics, resolve_deferrals, LatencyModel, MetricsReport};
use crate::classifier::{Scorer, ScorerOutput};
use crate::dataset::{StreamDataset, Video};
use crate::error::{Error, Result};
use crate::expert::{Expert, ExpertError, ExpertRequest};
use crate::router::{
    pad_history, train_meta_router, DecisionRecord, DeferralSource, MetaModel, MetaTrainConfig, Router, RouterConfig, Strategy,
};
use crate::stream::{extract_model_window, ClassId, StreamConfig};

/// Decisions for one stream, with the ground truth at each decision step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamLog {
    pub stream_id: String,
    pub records: Vec<DecisionRecord>,
    pub truth: Vec<Option<ClassId>>,
}

/// Scores every decision step of a video.
pub fn score_stream(video: &Video, scorer: &dyn Scorer, stream: &StreamConfig, num_classes: usize) -> Result<Vec<ScorerOutput>> {
    (0..video.duration())
        .step_by(stream.interval)
        .map(|t| {
            let out = scorer.score(&extract_model_window(&video.stream, t, stream)?)?;
            if out.label >= num_classes || out.class_probs.len() != num_classes {
                return Err(Error::Dimension(format!(
                    "scorer produced label {} with {} probabilities for {num_classes} classes",
                    out.label,
                    out.class_probs.len()
                )));
            }
            Ok(out)
        })
        .collect()
}

/// The request an expert sees for timestamp `t` of `video`.
pub fn expert_request(video: &Video, t: usize, stream: &StreamConfig, label_space: &[String], prior: &[String]) -> ExpertRequest {
    let text = video
        .transcript
        .as_ref()
        .map(|lines| lines[t.saturating_sub(stream.window)..=t.min(lines.len().saturating_sub(1))].to_vec())
        .unwrap_or_default();
    ExpertRequest {
        stream_id: video.id.clone(),
        timestamp: t as u64,
        text,
        frame: None,
        labels: label_space.to_vec(),
        prior_labels: prior.to_vec(),
    }
}

fn ask_expert(expert: Option<&dyn Expert>, request: &ExpertRequest, num_classes: usize) -> std::result::Result<ScorerOutput, ExpertError> {
    let expert = expert.ok_or_else(|| ExpertError::Unavailable("no expert configured".into()))?;
    let out = expert.predict(request)?;
    if out.label >= num_classes {
        return Err(ExpertError::UnknownLabel(out.label.to_string()));
    }
    Ok(ScorerOutput::from_label(out.label, out.confidence, num_classes))
}

/// Routes one stream given its precomputed encoder outputs.
pub fn route_stream(
    video: &Video,
    encoder_outputs: &[ScorerOutput],
    expert: Option<&dyn Expert>,
    router: &Router,
    stream: &StreamConfig,
    label_space: &[String],
) -> Result<StreamLog> {
    let steps: Vec<usize> = (0..video.duration()).step_by(stream.interval).collect();
    if steps.len() != encoder_outputs.len() {
        return Err(Error::Dimension(format!(
            "{} encoder outputs for {} decision steps of `{}`",
            encoder_outputs.len(),
            steps.len(),
            video.id
        )));
    }
    let mut state = router.new_state();
    let mut prior: Vec<String> = Vec::new();
    let mut records = Vec::with_capacity(steps.len());
    let mut truth = Vec::with_capacity(steps.len());
    for (i, (&t, enc)) in steps.iter().zip(encoder_outputs).enumerate() {
        let mut rec = router.step(
            &mut state,
            enc,
            || ask_expert(expert, &expert_request(video, t, stream, label_space, &prior), label_space.len()),
            i as i64,
        );
        rec.t = t as i64;
        if let Some(l) = rec.label {
            prior.push(label_space[l].clone());
        }
        records.push(rec);
        truth.push(video.labels[t]);
    }
    Ok(StreamLog {
        stream_id: video.id.clone(),
        records,
        truth,
    })
}

pub fn run_stream(
    video: &Video,
    scorer: &dyn Scorer,
    expert: Option<&dyn Expert>,
    router: &Router,
    stream: &StreamConfig,
    label_space: &[String],
) -> Result<StreamLog> {
    let enc = score_stream(video, scorer, stream, label_space.len())?;
    route_stream(video, &enc, expert, router, stream, label_space)
}

/// Runs `f` over every video on scoped worker threads; results keep dataset order.
fn par_videos<T: Send>(dataset: &StreamDataset, f: impl Fn(usize, &Video) -> Result<T> + Sync) -> Result<Vec<T>> {
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(dataset.videos.len().max(1));
    let chunk = dataset.videos.len().div_ceil(workers).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = dataset
            .videos
            .chunks(chunk)
            .enumerate()
            .map(|(c, vs)| {
                let f = &f;
                scope.spawn(move || vs.iter().enumerate().map(|(k, v)| f(c * chunk + k, v)).collect::<Result<Vec<T>>>())
            })
            .collect();
        let mut out = Vec::with_capacity(dataset.videos.len());
        for h in handles {
            out.extend(h.join().expect("simulation worker panicked")?);
        }
        Ok(out)
    })
}

/// Encoder outputs for every stream, computed once and reused across router settings.
pub fn score_dataset(dataset: &StreamDataset, scorer: &dyn Scorer, stream: &StreamConfig) -> Result<Vec<Vec<ScorerOutput>>> {
    stream.validate()?;
    par_videos(dataset, |_, v| score_stream(v, scorer, stream, dataset.num_classes()))
}

pub fn route_dataset(
    dataset: &StreamDataset,
    encoder_outputs: &[Vec<ScorerOutput>],
    expert: Option<&dyn Expert>,
    router: &Router,
    stream: &StreamConfig,
) -> Result<Vec<StreamLog>> {
    if encoder_outputs.len() != dataset.videos.len() {
        return Err(Error::Dimension("encoder outputs do not match the dataset".into()));
    }
    par_videos(dataset, |k, v| {
        route_stream(v, &encoder_outputs[k], expert, router, stream, &dataset.label_space)
    })
}

pub fn run_dataset(
    dataset: &StreamDataset,
    scorer: &dyn Scorer,
    expert: Option<&dyn Expert>,
    router: &Router,
    stream: &StreamConfig,
) -> Result<Vec<StreamLog>> {
    let enc = score_dataset(dataset, scorer, stream)?;
    route_dataset(dataset, &enc, expert, router, stream)
}

/// Resolves deferrals per stream and scores all labeled steps together.
pub fn evaluate_logs(logs: &[StreamLog], num_classes: usize, latency: &LatencyModel, interval: usize) -> Result<MetricsReport> {
    let mut resolved = Vec::new();
    let mut truth = Vec::new();
    for log in logs {
        if log.records.len() != log.truth.len() {
            return Err(Error::Dimension(format!(
                "log of `{}` is misaligned with its labels",
                log.stream_id
            )));
        }
        resolved.extend(resolve_deferrals(&log.records, latency, interval));
        truth.extend_from_slice(&log.truth);
    }
    compute_metrics(&resolved, &truth, num_classes, latency)
}

/// Accuracy and macro-F1 of a scorer's own labels on every labeled decision step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScorerReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub scored: usize,
}

pub fn evaluate_scorer(dataset: &StreamDataset, scorer: &dyn Scorer, stream: &StreamConfig) -> Result<ScorerReport> {
    let outputs = score_dataset(dataset, scorer, stream)?;
    let mut preds = Vec::new();
    let mut truth = Vec::new();
    for (video, outs) in dataset.videos.iter().zip(&outputs) {
        for (t, out) in (0..video.duration()).step_by(stream.interval).zip(outs) {
            if let Some(y) = video.labels[t] {
                preds.push(out.label);
                truth.push(y);
            }
        }
    }
    let (accuracy, macro_f1, _) = classification_scores(&preds, &truth, dataset.num_classes())?;
    Ok(ScorerReport {
        accuracy,
        macro_f1,
        scored: preds.len(),
    })
}

/// Named router configurations compared in ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Expert disabled; deferral driven by the encoder's confidence.
    NoVlm,
    /// Escalation allowed, deferral disabled.
    NoDefer,
    /// Escalation and deferral.
    AllowBoth,
    /// The encoder answers every step.
    EncoderOnly,
    /// The expert answers every step.
    ExpertAlways,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::NoVlm,
        Preset::NoDefer,
        Preset::AllowBoth,
        Preset::EncoderOnly,
        Preset::ExpertAlways,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::NoVlm => "no_vlm",
            Preset::NoDefer => "no_defer",
            Preset::AllowBoth => "allow_both",
            Preset::EncoderOnly => "encoder_only",
            Preset::ExpertAlways => "expert_always",
        }
    }

    /// Threshold router config for this preset, keeping `base`'s allowances where they apply.
    pub fn apply(self, base: &RouterConfig) -> RouterConfig {
        let mut cfg = RouterConfig {
            strategy: Strategy::Threshold,
            deferral_source: DeferralSource::Expert,
            ..base.clone()
        };
        match self {
            Preset::NoVlm => cfg.deferral_source = DeferralSource::Encoder,
            Preset::NoDefer => cfg.max_defer = 0,
            Preset::AllowBoth => {}
            Preset::EncoderOnly => {
                cfg.deferral_source = DeferralSource::Encoder;
                cfg.max_defer = 0;
            }
            Preset::ExpertAlways => {
                cfg.max_enc = 0;
                cfg.deferral_source = DeferralSource::None;
            }
        }
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub max_enc: Vec<u32>,
    pub max_defer: Vec<u32>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            max_enc: (0..=30).collect(),
            max_defer: (0..=10).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// `grid` for grid cells, otherwise the preset name.
    pub name: String,
    pub max_enc: u32,
    pub max_defer: u32,
    pub deferral_source: DeferralSource,
    pub report: MetricsReport,
}

/// Threshold-router metrics for every grid cell, followed by the presets
/// (at `base`'s allowances) when `presets` is set.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    dataset: &StreamDataset,
    scorer: &dyn Scorer,
    expert: Option<&dyn Expert>,
    grid: &SweepGrid,
    base: &RouterConfig,
    presets: bool,
    stream: &StreamConfig,
    latency: &LatencyModel,
) -> Result<Vec<SweepRow>> {
    if grid.max_enc.is_empty() || grid.max_defer.is_empty() {
        return Err(Error::Config(
            "sweep grid must have at least one max_enc and one max_defer value".into(),
        ));
    }
    let enc = score_dataset(dataset, scorer, stream)?;
    let mut cells: Vec<(String, RouterConfig)> = Vec::new();
    for &max_enc in &grid.max_enc {
        for &max_defer in &grid.max_defer {
            cells.push((
                "grid".into(),
                RouterConfig {
                    max_enc,
                    max_defer,
                    strategy: Strategy::Threshold,
                    deferral_source: base.deferral_source,
                },
            ));
        }
    }
    if presets {
        cells.extend(Preset::ALL.iter().map(|p| (p.name().to_string(), p.apply(base))));
    }
    cells
        .into_iter()
        .map(|(name, cfg)| {
            let router = Router::threshold(cfg.clone())?;
            let logs = route_dataset(dataset, &enc, expert, &router, stream)?;
            Ok(SweepRow {
                name,
                max_enc: cfg.max_enc,
                max_defer: cfg.max_defer,
                deferral_source: cfg.deferral_source,
                report: evaluate_logs(&logs, dataset.num_classes(), latency, stream.interval)?,
            })
        })
        .collect()
}

/// Trains the two meta models on a calibration set: the routing model
/// predicts encoder errors from recent encoder confidences, the deferral
/// model predicts expert errors from recent expert confidences (the expert
/// is queried at every step here).
pub fn fit_meta_models(
    calibration: &StreamDataset,
    scorer: &dyn Scorer,
    expert: &dyn Expert,
    stream: &StreamConfig,
    config: &MetaTrainConfig,
) -> Result<(MetaModel, MetaModel)> {
    let enc = score_dataset(calibration, scorer, stream)?;
    let mut route_x = Vec::new();
    let mut route_y = Vec::new();
    let mut defer_x = Vec::new();
    let mut defer_y = Vec::new();
    let len = config.history_len;
    for (video, outs) in calibration.videos.iter().zip(&enc) {
        let mut enc_hist = Vec::new();
        let mut exp_hist = Vec::new();
        for (t, out) in (0..video.duration()).step_by(stream.interval).zip(outs) {
            enc_hist.push(out.confidence);
            let req = expert_request(video, t, stream, &calibration.label_space, &[]);
            let answer = ask_expert(Some(expert), &req, calibration.num_classes())?;
            exp_hist.push(answer.confidence);
            if let Some(y) = video.labels[t] {
                route_x.push(pad_history(&enc_hist, len));
                route_y.push(out.label != y);
                defer_x.push(pad_history(&exp_hist, len));
                defer_y.push(answer.label != y);
            }
        }
    }
    let route = train_meta_router(&route_x, &route_y, config)?;
    let defer = train_meta_router(&defer_x, &defer_y, config)?;
    Ok((route, defer))
}
