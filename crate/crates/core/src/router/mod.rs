//! Per-timestamp routing: emit the encoder's label, escalate to the expert,
//! or defer the answer.

mod meta;

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::ScorerOutput;
use crate::error::{Error, Result};
use crate::expert::ExpertError;
use crate::stream::ClassId;

pub use meta::{pad_history, train_meta_router, MetaModel, MetaTrainConfig, HISTORY_PAD};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Threshold,
    ModelBased,
}

/// Whose output the deferral rule inspects.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeferralSource {
    #[default]
    Expert,
    /// Expert disabled; the deferral rule runs on the encoder's output.
    Encoder,
    /// Never defer.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RouterConfig {
    pub max_enc: u32,
    pub max_defer: u32,
    pub strategy: Strategy,
    pub deferral_source: DeferralSource,
}

impl Default for RouterConfig {
    fn default() -> Self {
        RouterConfig {
            max_enc: 18,
            max_defer: 6,
            strategy: Strategy::Threshold,
            deferral_source: DeferralSource::Expert,
        }
    }
}

/// `0.5 + d / (max_enc + 1) * 0.5`, for `1 <= d <= max_enc + 1`.
pub fn enc_threshold(d: u32, max_enc: u32) -> Result<f64> {
    if d == 0 || d > max_enc + 1 {
        return Err(Error::Invalid(format!("encoder distance {d} outside [1, {}]", max_enc + 1)));
    }
    Ok(0.5 + f64::from(d) / f64::from(max_enc + 1) * 0.5)
}

/// `1 - d / (max_defer + 1) * 0.5`, for `1 <= d <= max_defer + 1`.
pub fn vlm_threshold(d: u32, max_defer: u32) -> Result<f64> {
    if d == 0 || d > max_defer + 1 {
        return Err(Error::Invalid(format!("deferral distance {d} outside [1, {}]", max_defer + 1)));
    }
    Ok(1.0 - f64::from(d) / f64::from(max_defer + 1) * 0.5)
}

fn clamp_distance(raw: i64, max: u32) -> u32 {
    raw.clamp(1, i64::from(max) + 1) as u32
}

/// Per-stream router memory.
#[derive(Clone, Debug, PartialEq)]
pub struct RoutingState {
    /// Step of the last emitted encoder prediction, -1 before any.
    pub t_enc: i64,
    /// Step of the last emitted expert prediction, -1 before any.
    pub t_vlm: i64,
    pub last_emitted_label: Option<ClassId>,
    pub consecutive_defers: u32,
    last_step: Option<i64>,
    history_len: usize,
    enc_history: VecDeque<f64>,
    expert_history: VecDeque<f64>,
}

impl Default for RoutingState {
    fn default() -> Self {
        RoutingState::new()
    }
}

impl RoutingState {
    pub fn new() -> Self {
        RoutingState::with_history(0)
    }

    /// State that also remembers the last `len` encoder and expert
    /// confidences, as the model-based strategy needs.
    pub fn with_history(len: usize) -> Self {
        RoutingState {
            t_enc: -1,
            t_vlm: -1,
            last_emitted_label: None,
            consecutive_defers: 0,
            last_step: None,
            history_len: len,
            enc_history: VecDeque::with_capacity(len),
            expert_history: VecDeque::with_capacity(len),
        }
    }

    pub fn enc_history(&self) -> Vec<f64> {
        self.enc_history.iter().copied().collect()
    }

    pub fn expert_history(&self) -> Vec<f64> {
        self.expert_history.iter().copied().collect()
    }

    fn remember(&mut self, expert: bool, p: f64) {
        if self.history_len == 0 {
            return;
        }
        let h = if expert { &mut self.expert_history } else { &mut self.enc_history };
        if h.len() == self.history_len {
            h.pop_front();
        }
        h.push_back(p);
    }

    fn emit(&mut self, label: ClassId, source: Source, i: i64) {
        match source {
            Source::Encoder => self.t_enc = i,
            Source::Expert => self.t_vlm = i,
        }
        self.last_emitted_label = Some(label);
        self.consecutive_defers = 0;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Encoder,
    Expert,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionKind {
    Emit,
    Defer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Emit { label: ClassId, source: Source },
    Defer,
}

/// One line of a decision log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub t: i64,
    pub decision: DecisionKind,
    pub source: Option<Source>,
    pub label: Option<ClassId>,
    pub enc_p: f64,
    pub expert_p: Option<f64>,
    pub escalated: bool,
    pub theta_enc: f64,
    pub theta_vlm: Option<f64>,
    pub expert_failed: bool,
}

impl DecisionRecord {
    pub fn decision(&self) -> Decision {
        match (self.decision, self.source, self.label) {
            (DecisionKind::Emit, Some(source), Some(label)) => Decision::Emit { label, source },
            _ => Decision::Defer,
        }
    }

    pub fn is_defer(&self) -> bool {
        self.decision == DecisionKind::Defer
    }

    /// Whether the expert was asked at this step (successfully or not).
    pub fn invoked_expert(&self) -> bool {
        self.escalated
    }
}

/// Threshold or model-based router for one configuration.
#[derive(Clone, Debug)]
pub struct Router {
    config: RouterConfig,
    route_model: Option<MetaModel>,
    defer_model: Option<MetaModel>,
}

impl Router {
    pub fn threshold(config: RouterConfig) -> Result<Self> {
        if config.strategy != Strategy::Threshold {
            return Err(Error::Config("model-based routing needs trained meta models".into()));
        }
        Ok(Router {
            config,
            route_model: None,
            defer_model: None,
        })
    }

    /// Model-based strategy: `route` predicts encoder errors from recent
    /// encoder confidences, `defer` predicts wrong outputs of the deferral source.
    pub fn model_based(config: RouterConfig, route: MetaModel, defer: MetaModel) -> Result<Self> {
        if config.strategy != Strategy::ModelBased {
            return Err(Error::Config("meta models given to a threshold router".into()));
        }
        Ok(Router {
            config,
            route_model: Some(route),
            defer_model: Some(defer),
        })
    }

    pub fn config(&self) -> &RouterConfig {
        &self.config
    }

    /// Fresh per-stream state sized for this router's strategy.
    pub fn new_state(&self) -> RoutingState {
        let len = [&self.route_model, &self.defer_model]
            .iter()
            .filter_map(|m| m.as_ref().map(|m| m.history_len()))
            .max()
            .unwrap_or(0);
        RoutingState::with_history(len)
    }

    /// Threshold-mode escalation rule.
    pub fn should_escalate(&self, state: &RoutingState, enc: &ScorerOutput, i: i64) -> bool {
        let max = self.config.max_enc;
        let d = clamp_distance(i - state.t_vlm, max);
        let theta = enc_threshold(d, max).expect("clamped");
        state.last_emitted_label != Some(enc.label) || enc.confidence < theta || d == max + 1
    }

    /// Threshold-mode deferral rule for a confidence `p` from the deferral source.
    pub fn should_defer(&self, state: &RoutingState, p: f64, i: i64) -> bool {
        let max = self.config.max_defer;
        let d = clamp_distance(i - state.t_enc.max(state.t_vlm), max);
        d <= max && p < vlm_threshold(d, max).expect("clamped")
    }

    fn deferral_theta(&self, state: &RoutingState, i: i64) -> (u32, f64) {
        let max = self.config.max_defer;
        let d = clamp_distance(i - state.t_enc.max(state.t_vlm), max);
        (d, vlm_threshold(d, max).expect("clamped"))
    }

    /// Decides step `i` (strictly increasing per stream). `expert` is called
    /// at most once, and only when the step escalates.
    pub fn step(
        &self,
        state: &mut RoutingState,
        enc: &ScorerOutput,
        expert: impl FnOnce() -> std::result::Result<ScorerOutput, ExpertError>,
        i: i64,
    ) -> DecisionRecord {
        if let Some(prev) = state.last_step {
            assert!(i > prev, "router steps must increase: {i} after {prev}");
        }
        state.last_step = Some(i);
        state.remember(false, enc.confidence);

        let model_based = self.config.strategy == Strategy::ModelBased;
        let max_enc = self.config.max_enc;
        let d_enc = clamp_distance(i - state.t_vlm, max_enc);
        let mut theta_enc = enc_threshold(d_enc, max_enc).expect("clamped");
        let escalate = if self.config.deferral_source == DeferralSource::Encoder {
            false
        } else if model_based {
            theta_enc = meta::DECISION_THRESHOLD;
            let model = self.route_model.as_ref().expect("model-based router has a route model");
            state.last_emitted_label.is_none() || model.predict(&state.enc_history())
        } else {
            self.should_escalate(state, enc, i)
        };

        let mut record = DecisionRecord {
            t: i,
            decision: DecisionKind::Emit,
            source: Some(Source::Encoder),
            label: Some(enc.label),
            enc_p: enc.confidence,
            expert_p: None,
            escalated: escalate,
            theta_enc,
            theta_vlm: None,
            expert_failed: false,
        };

        // The output the deferral rule looks at, if any.
        let candidate = if escalate {
            match expert() {
                Ok(out) => {
                    record.expert_p = Some(out.confidence);
                    state.remember(true, out.confidence);
                    Some((out, Source::Expert))
                }
                Err(_) => {
                    record.expert_failed = true;
                    None
                }
            }
        } else if self.config.deferral_source == DeferralSource::Encoder {
            Some((enc.clone(), Source::Encoder))
        } else {
            None
        };

        let Some((out, source)) = candidate else {
            state.emit(enc.label, Source::Encoder, i);
            return record;
        };

        if self.config.deferral_source != DeferralSource::None {
            let (d, theta) = self.deferral_theta(state, i);
            let defer = if model_based {
                record.theta_vlm = Some(meta::DECISION_THRESHOLD);
                let model = self.defer_model.as_ref().expect("model-based router has a deferral model");
                let history = match source {
                    Source::Expert => state.expert_history(),
                    Source::Encoder => state.enc_history(),
                };
                d <= self.config.max_defer && model.predict(&history)
            } else {
                record.theta_vlm = Some(theta);
                d <= self.config.max_defer && out.confidence < theta
            };
            if defer {
                state.consecutive_defers += 1;
                record.decision = DecisionKind::Defer;
                record.source = None;
                record.label = None;
                return record;
            }
        }
        state.emit(out.label, source, i);
        record.source = Some(source);
        record.label = Some(out.label);
        record
    }
}

pub fn write_decision_log(path: impl AsRef<Path>, records: &[DecisionRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_decision_log(path: impl AsRef<Path>) -> Result<Vec<DecisionRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(path, n + 1, e.to_string()))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    fn out(label: ClassId, p: f64) -> ScorerOutput {
        ScorerOutput::from_label(label, p, 2)
    }

    fn router(max_enc: u32, max_defer: u32) -> Router {
        Router::threshold(RouterConfig {
            max_enc,
            max_defer,
            ..RouterConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(enc_threshold(1, 0).unwrap(), 1.0);
        assert_eq!(enc_threshold(19, 18).unwrap(), 1.0);
        assert!((enc_threshold(1, 18).unwrap() - 0.526316).abs() < 1e-6);
        assert_eq!(vlm_threshold(1, 0).unwrap(), 0.5);
        assert_eq!(vlm_threshold(7, 6).unwrap(), 0.5);
        assert!((vlm_threshold(1, 6).unwrap() - 0.928571).abs() < 1e-6);
        assert!(enc_threshold(0, 3).is_err());
        assert!(enc_threshold(5, 3).is_err());
        assert!(vlm_threshold(8, 6).is_err());
    }

    #[test]
    fn escalation_rules() {
        let r = router(18, 6);
        let mut s = RoutingState::new();
        assert!(r.should_escalate(&s, &out(0, 0.99), 0));
        s.last_emitted_label = Some(0);
        s.t_vlm = 9;
        assert!(!r.should_escalate(&s, &out(0, 0.99), 10));
        assert!(r.should_escalate(&s, &out(1, 0.99), 10));
        assert!(r.should_escalate(&s, &out(0, 0.52), 10));
        // d = 19 forces the call.
        assert!(r.should_escalate(&s, &out(0, 1.0), 28));
        assert!(!r.should_escalate(&s, &out(0, 1.0), 27));
    }

    #[test]
    fn deferral_rules() {
        let r = router(18, 6);
        let mut s = RoutingState::new();
        s.t_enc = 4;
        assert!(!r.should_defer(&s, 0.95, 5));
        assert!(r.should_defer(&s, 0.6, 5));
        // d = 7 = max_defer + 1: a prediction is required.
        assert!(!r.should_defer(&s, 0.51, 11));
        let never = router(18, 0);
        assert!(!never.should_defer(&s, 0.5, 5));
    }

    #[test]
    fn confident_encoder_skips_expert() {
        let r = router(18, 6);
        let mut s = RoutingState::new();
        let first = r.step(&mut s, &out(1, 0.99), || Ok(out(1, 0.99)), 0);
        assert!(first.escalated);
        assert_eq!(first.source, Some(Source::Expert));
        let calls = Cell::new(0);
        let rec = r.step(
            &mut s,
            &out(1, 0.99),
            || {
                calls.set(calls.get() + 1);
                Ok(out(1, 0.99))
            },
            1,
        );
        assert_eq!(calls.get(), 0);
        assert_eq!(
            rec.decision(),
            Decision::Emit {
                label: 1,
                source: Source::Encoder
            }
        );
        assert_eq!(s.t_enc, 1);
    }

    #[test]
    fn seven_unsure_expert_answers_defer_six_times() {
        let r = router(18, 6);
        let mut s = RoutingState::new();
        let kinds: Vec<_> = (0..7)
            .map(|i| r.step(&mut s, &out(0, 0.55), || Ok(out(1, 0.51)), i).decision)
            .collect();
        assert_eq!(&kinds[..6], &[DecisionKind::Defer; 6]);
        assert_eq!(kinds[6], DecisionKind::Emit);
        assert_eq!(s.t_vlm, 6);
        assert_eq!(s.last_emitted_label, Some(1));
    }

    #[test]
    fn max_enc_zero_always_asks() {
        let r = router(0, 6);
        let mut s = RoutingState::new();
        for i in 0..50 {
            assert!(r.step(&mut s, &out(0, 1.0), || Ok(out(0, 1.0)), i).escalated);
        }
    }

    #[test]
    fn expert_failure_falls_back_to_encoder() {
        let r = router(18, 6);
        let mut s = RoutingState::new();
        let rec = r.step(&mut s, &out(1, 0.7), || Err(ExpertError::Timeout { timeout_ms: 5 }), 0);
        assert!(rec.expert_failed && rec.escalated);
        assert_eq!(
            rec.decision(),
            Decision::Emit {
                label: 1,
                source: Source::Encoder
            }
        );
        assert_eq!(rec.expert_p, None);
        assert_eq!((s.t_enc, s.t_vlm), (0, -1));
    }

    #[test]
    fn encoder_deferral_source_never_escalates() {
        let r = Router::threshold(RouterConfig {
            deferral_source: DeferralSource::Encoder,
            ..RouterConfig::default()
        })
        .unwrap();
        let mut s = RoutingState::new();
        let mut defers = 0;
        for i in 0..20 {
            let rec = r.step(&mut s, &out(0, 0.55), || panic!("expert disabled"), i);
            assert!(!rec.escalated);
            defers += rec.is_defer() as u32;
        }
        // Pattern: 6 defers then a forced emit, repeating.
        assert_eq!(defers, 18);
    }

    #[test]
    fn no_deferral_source_emits_expert_label() {
        let r = Router::threshold(RouterConfig {
            deferral_source: DeferralSource::None,
            ..RouterConfig::default()
        })
        .unwrap();
        let mut s = RoutingState::new();
        let rec = r.step(&mut s, &out(0, 0.6), || Ok(out(1, 0.5)), 0);
        assert_eq!(
            rec.decision(),
            Decision::Emit {
                label: 1,
                source: Source::Expert
            }
        );
        assert_eq!(rec.theta_vlm, None);
    }

    #[test]
    #[should_panic(expected = "must increase")]
    fn non_increasing_steps_panic() {
        let r = router(18, 6);
        let mut s = RoutingState::new();
        r.step(&mut s, &out(0, 0.9), || Ok(out(0, 0.9)), 3);
        r.step(&mut s, &out(0, 0.9), || Ok(out(0, 0.9)), 3);
    }

    #[test]
    fn log_schema_and_round_trip() {
        let r = router(18, 6);
        let mut s = RoutingState::new();
        let recs = vec![
            r.step(&mut s, &out(0, 0.55), || Ok(out(1, 0.51)), 0),
            r.step(&mut s, &out(0, 0.55), || Ok(out(1, 0.99)), 1),
        ];
        let v = serde_json::to_value(&recs[0]).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        let mut want = vec![
            "t",
            "decision",
            "source",
            "label",
            "enc_p",
            "expert_p",
            "escalated",
            "theta_enc",
            "theta_vlm",
            "expert_failed",
        ];
        want.sort();
        let mut got = keys.clone();
        got.sort();
        assert_eq!(got, want);
        assert_eq!(v["decision"], "defer");
        assert!(v["source"].is_null());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.jsonl");
        write_decision_log(&p, &recs).unwrap();
        assert_eq!(read_decision_log(&p).unwrap(), recs);
    }
}
