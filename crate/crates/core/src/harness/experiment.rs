//! End-to-end runs driven by an [`ExperimentConfig`].

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::metrics::MetricsReport;
use super::simulate::{evaluate_logs, evaluate_scorer, fit_meta_models, run_dataset, sweep, ScorerReport, StreamLog, SweepRow};
use crate::classifier::{train, Scorer, StreamEncoder, TrainingLog};
use crate::dataset::{split_by_video, StreamDataset};
use crate::error::{Error, Result};
use crate::expert::Expert;
use crate::router::{Router, Strategy};

pub struct Simulation {
    pub report: MetricsReport,
    pub logs: Vec<StreamLog>,
    /// Videos the report covers; with a model-based router the calibration
    /// videos are held out.
    pub evaluated: StreamDataset,
}

fn as_expert(e: &Option<Arc<dyn Expert>>) -> Option<&dyn Expert> {
    e.as_deref()
}

/// Builds the configured router. Model-based routing fits its meta models
/// on a calibration split and returns the remaining videos for evaluation.
pub fn build_router(
    cfg: &ExperimentConfig,
    dataset: &StreamDataset,
    scorer: &dyn Scorer,
    expert: Option<&dyn Expert>,
) -> Result<(Router, StreamDataset)> {
    match cfg.router.strategy {
        Strategy::Threshold => Ok((Router::threshold(cfg.router.clone())?, dataset.clone())),
        Strategy::ModelBased => {
            let expert = expert.ok_or_else(|| Error::Config("model-based routing needs an expert to calibrate against".into()))?;
            let (calib, eval) = split_by_video(dataset, cfg.meta.calibration_fraction, cfg.component_seed("calibration"))?;
            let (route, defer) = fit_meta_models(&calib, scorer, expert, &cfg.stream, &cfg.meta_config())?;
            Ok((Router::model_based(cfg.router.clone(), route, defer)?, eval))
        }
    }
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<Simulation> {
    let dataset = cfg.load_dataset()?;
    let scorer = cfg.build_scorer(&dataset)?;
    let expert = cfg.build_expert(&dataset)?;
    let (router, evaluated) = build_router(cfg, &dataset, scorer.as_ref(), as_expert(&expert))?;
    let logs = run_dataset(&evaluated, scorer.as_ref(), as_expert(&expert), &router, &cfg.stream)?;
    let latency = cfg.latency_for(dataset.sample_rate_hz);
    let report = evaluate_logs(&logs, dataset.num_classes(), &latency, cfg.stream.interval)?;
    Ok(Simulation { report, logs, evaluated })
}

pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let dataset = cfg.load_dataset()?;
    let scorer = cfg.build_scorer(&dataset)?;
    let expert = cfg.build_expert(&dataset)?;
    sweep(
        &dataset,
        scorer.as_ref(),
        as_expert(&expert),
        &cfg.sweep.grid(),
        &cfg.router,
        cfg.sweep.presets,
        &cfg.stream,
        &cfg.latency_for(dataset.sample_rate_hz),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub train_videos: usize,
    pub test_videos: usize,
    pub train: ScorerReport,
    pub test: ScorerReport,
    pub log: TrainingLog,
}

/// Trains the encoder on a video-level split and scores both sides.
pub fn train_encoder(cfg: &ExperimentConfig) -> Result<(StreamEncoder, TrainSummary, Vec<String>)> {
    let dataset = cfg.load_dataset()?;
    let (train_set, test_set) = split_by_video(&dataset, cfg.train.train_fraction, cfg.component_seed("split"))?;
    let (encoder, log) = train(&train_set, &cfg.stream, &cfg.encoder_config(), &cfg.train.objective())?;
    let summary = TrainSummary {
        train_videos: train_set.videos.len(),
        test_videos: test_set.videos.len(),
        train: evaluate_scorer(&train_set, &encoder, &cfg.stream)?,
        test: evaluate_scorer(&test_set, &encoder, &cfg.stream)?,
        log,
    };
    Ok((encoder, summary, dataset.label_space))
}

/// Scores decision logs against a dataset; streams are matched by id.
pub fn evaluate_stream_logs(
    cfg: &ExperimentConfig,
    dataset: &StreamDataset,
    logs: Vec<(String, Vec<crate::router::DecisionRecord>)>,
) -> Result<MetricsReport> {
    let mut out = Vec::with_capacity(logs.len());
    for (id, records) in logs {
        let video = dataset
            .video(&id)
            .ok_or_else(|| Error::Invalid(format!("decision log for unknown stream `{id}`")))?;
        let truth = records
            .iter()
            .map(|r| {
                usize::try_from(r.t)
                    .ok()
                    .and_then(|t| video.labels.get(t).copied())
                    .ok_or_else(|| Error::Invalid(format!("log of `{id}` has timestamp {} outside the stream", r.t)))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(StreamLog {
            stream_id: id,
            records,
            truth,
        });
    }
    evaluate_logs(
        &out,
        dataset.num_classes(),
        &cfg.latency_for(dataset.sample_rate_hz),
        cfg.stream.interval,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(extra: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml_str(&format!("seed = 3\n[dataset.synthetic]\nstreams = 6\nlength = 90\n{extra}"), "").unwrap()
    }

    #[test]
    fn simulate_is_seeded() {
        let a = simulate(&config("")).unwrap();
        let b = simulate(&config("")).unwrap();
        assert_eq!(a.logs, b.logs);
        assert_eq!(a.report, b.report);
        let mut other = config("");
        other.seed = 4;
        assert_ne!(simulate(&other).unwrap().logs, a.logs);
    }

    #[test]
    fn logs_evaluate_back_to_the_same_report() {
        let cfg = config("");
        let sim = simulate(&cfg).unwrap();
        let logs = sim.logs.iter().map(|l| (l.stream_id.clone(), l.records.clone())).collect();
        assert_eq!(evaluate_stream_logs(&cfg, &sim.evaluated, logs).unwrap(), sim.report);
        let bad = vec![("nope".to_string(), Vec::new())];
        assert!(evaluate_stream_logs(&cfg, &sim.evaluated, bad).is_err());
    }

    #[test]
    fn model_based_holds_out_calibration() {
        let cfg = config("[router]\nstrategy = \"model_based\"\n[meta]\nepochs = 5\ncalibration_fraction = 0.5");
        let sim = simulate(&cfg).unwrap();
        assert_eq!(sim.evaluated.videos.len(), 3);
        let none = config("[router]\nstrategy = \"model_based\"\n[expert]\nkind = \"none\"");
        assert!(matches!(simulate(&none), Err(Error::Config(_))));
    }

    #[test]
    fn sweep_uses_the_configured_grid() {
        let rows = run_sweep(&config("[sweep]\nmax_enc = [0, 5]\nmax_defer = [0]\npresets = false")).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].report.vlm_invoc_rate, 1.0);
    }
}
