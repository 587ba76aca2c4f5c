use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::router::{DecisionKind, DecisionRecord, Source};
use crate::stream::ClassId;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencyModel {
    pub encoder_cost_s: f64,
    pub expert_cost_s: f64,
    /// Delay charged per deferred decision step.
    pub defer_delay_s: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel {
            encoder_cost_s: 0.1,
            expert_cost_s: 0.8,
            defer_delay_s: 1.0,
        }
    }
}

impl LatencyModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("encoder_cost_s", self.encoder_cost_s),
            ("expert_cost_s", self.expert_cost_s),
            ("defer_delay_s", self.defer_delay_s),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("latency {name} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    /// Compute cost of one decision step.
    pub fn step_cost(&self, escalated: bool) -> f64 {
        self.encoder_cost_s + if escalated { self.expert_cost_s } else { 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    Emitted,
    /// Deferred, answered by the emit `steps` decision steps later.
    Deferred {
        steps: u64,
    },
    /// Deferred with no later emit in the stream.
    Unresolved,
}

/// Final answer for one logged decision step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedStep {
    pub t: i64,
    pub label: Option<ClassId>,
    pub source: Option<Source>,
    pub resolution: Resolution,
    pub escalated: bool,
    pub expert_failed: bool,
    /// Time until an answer exists: the defer wait plus the compute cost of
    /// the answering step. `None` when unresolved.
    pub answer_latency_s: Option<f64>,
}

/// Gives each deferral the label of the next emit. `interval` converts
/// timestamp gaps into decision steps.
pub fn resolve_deferrals(log: &[DecisionRecord], latency: &LatencyModel, interval: usize) -> Vec<ResolvedStep> {
    let interval = interval.max(1) as i64;
    let mut out: Vec<ResolvedStep> = Vec::with_capacity(log.len());
    let mut next_emit: Option<&DecisionRecord> = None;
    for rec in log.iter().rev() {
        let step = match rec.decision {
            DecisionKind::Emit => {
                next_emit = Some(rec);
                ResolvedStep {
                    t: rec.t,
                    label: rec.label,
                    source: rec.source,
                    resolution: Resolution::Emitted,
                    escalated: rec.escalated,
                    expert_failed: rec.expert_failed,
                    answer_latency_s: Some(latency.step_cost(rec.escalated)),
                }
            }
            DecisionKind::Defer => match next_emit {
                Some(j) => {
                    let steps = ((j.t - rec.t) / interval) as u64;
                    ResolvedStep {
                        t: rec.t,
                        label: j.label,
                        source: j.source,
                        resolution: Resolution::Deferred { steps },
                        escalated: rec.escalated,
                        expert_failed: rec.expert_failed,
                        answer_latency_s: Some(steps as f64 * latency.defer_delay_s + latency.step_cost(j.escalated)),
                    }
                }
                None => ResolvedStep {
                    t: rec.t,
                    label: None,
                    source: None,
                    resolution: Resolution::Unresolved,
                    escalated: rec.escalated,
                    expert_failed: rec.expert_failed,
                    answer_latency_s: None,
                },
            },
        };
        out.push(step);
    }
    out.reverse();
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: ClassId,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Resolved timestamps whose true label is this class.
    pub support: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    /// Labeled decision steps.
    pub total: usize,
    pub scored: usize,
    pub correct: usize,
    pub unresolved: usize,
    pub emit_encoder: usize,
    pub emit_expert: usize,
    pub defer: usize,
    pub escalated: usize,
    pub expert_failed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub vlm_suc_rate: f64,
    pub vlm_defer_rate: f64,
    pub vlm_invoc_rate: f64,
    pub avg_latency_s: f64,
    pub per_class: Vec<ClassMetrics>,
    pub counts: Counts,
}

/// Accuracy, macro-F1 and per-class scores of `preds` against `truth`.
/// Macro-F1 averages over classes that occur in either array.
pub fn classification_scores(preds: &[ClassId], truth: &[ClassId], num_classes: usize) -> Result<(f64, f64, Vec<ClassMetrics>)> {
    if preds.len() != truth.len() {
        return Err(Error::Dimension(format!("{} predictions for {} labels", preds.len(), truth.len())));
    }
    if preds.is_empty() {
        return Err(Error::Invalid("no scored predictions".into()));
    }
    let width = preds.iter().chain(truth).copied().max().map_or(0, |m| m + 1).max(num_classes);
    let mut confusion = vec![vec![0usize; width]; width];
    for (p, y) in preds.iter().zip(truth) {
        confusion[*y][*p] += 1;
    }
    let correct: usize = (0..width).map(|c| confusion[c][c]).sum();
    let mut per_class = Vec::new();
    for c in 0..width {
        let tp = confusion[c][c];
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = confusion.iter().map(|row| row[c]).sum();
        if support == 0 && predicted == 0 {
            continue;
        }
        let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
        let recall = if support == 0 { 0.0 } else { tp as f64 / support as f64 };
        // 2PR / (P + R) in count form, so the value is one exact division.
        let f1 = (2 * tp) as f64 / (support + predicted) as f64;
        per_class.push(ClassMetrics {
            class: c,
            precision,
            recall,
            f1,
            support,
        });
    }
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / per_class.len() as f64;
    Ok((correct as f64 / preds.len() as f64, macro_f1, per_class))
}

/// Scores resolved steps against `truth` (aligned, `None` = unlabeled and skipped).
pub fn compute_metrics(
    resolved: &[ResolvedStep],
    truth: &[Option<ClassId>],
    num_classes: usize,
    latency: &LatencyModel,
) -> Result<MetricsReport> {
    if resolved.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} resolved steps for {} labels",
            resolved.len(),
            truth.len()
        )));
    }
    let mut counts = Counts::default();
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    let mut defer_steps = 0usize;
    for (step, y) in resolved.iter().zip(truth) {
        let Some(y) = y else { continue };
        counts.total += 1;
        counts.escalated += step.escalated as usize;
        counts.expert_failed += step.expert_failed as usize;
        match step.resolution {
            Resolution::Emitted => match step.source {
                Some(Source::Expert) => counts.emit_expert += 1,
                _ => counts.emit_encoder += 1,
            },
            Resolution::Deferred { steps } => {
                counts.defer += 1;
                defer_steps += steps as usize;
            }
            Resolution::Unresolved => {
                counts.defer += 1;
                counts.unresolved += 1;
            }
        }
        if let Some(p) = step.label {
            preds.push(p);
            labels.push(*y);
        }
    }
    if counts.total == 0 {
        return Err(Error::Invalid("decision log has no labeled steps".into()));
    }
    let (accuracy, macro_f1, per_class) = classification_scores(&preds, &labels, num_classes)?;
    counts.scored = preds.len();
    counts.correct = preds.iter().zip(&labels).filter(|(p, y)| p == y).count();
    let total = counts.total as f64;
    let vlm_suc_rate = counts.emit_expert as f64 / total;
    let vlm_defer_rate = counts.defer as f64 / total;
    Ok(MetricsReport {
        accuracy,
        macro_f1,
        vlm_suc_rate,
        vlm_defer_rate,
        vlm_invoc_rate: vlm_suc_rate + vlm_defer_rate,
        // Encoder cost is paid on every step; adding it outside the average keeps it exact.
        avg_latency_s: latency.encoder_cost_s
            + (counts.escalated as f64 * latency.expert_cost_s + defer_steps as f64 * latency.defer_delay_s) / total,
        per_class,
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: i64, kind: DecisionKind, label: Option<ClassId>, source: Option<Source>, escalated: bool) -> DecisionRecord {
        DecisionRecord {
            t,
            decision: kind,
            source,
            label,
            enc_p: 0.9,
            expert_p: None,
            escalated,
            theta_enc: 0.5,
            theta_vlm: None,
            expert_failed: false,
        }
    }

    fn emit(t: i64, label: ClassId, source: Source) -> DecisionRecord {
        rec(t, DecisionKind::Emit, Some(label), Some(source), source == Source::Expert)
    }

    fn defer(t: i64) -> DecisionRecord {
        rec(t, DecisionKind::Defer, None, None, true)
    }

    #[test]
    fn worked_macro_f1() {
        let (acc, mf1, per) = classification_scores(&[1, 1, 0, 0], &[1, 0, 0, 0], 2).unwrap();
        assert_eq!(acc, 0.75);
        assert!((per[1].f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((per[0].f1 - 0.8).abs() < 1e-15);
        assert_eq!(format!("{mf1:.4}"), "0.7333");
    }

    #[test]
    fn all_correct_is_perfect() {
        let (acc, mf1, _) = classification_scores(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        assert_eq!((acc, mf1), (1.0, 1.0));
    }

    #[test]
    fn deferral_resolves_to_next_emit() {
        let lat = LatencyModel::default();
        let log = vec![
            emit(4, 0, Source::Encoder),
            defer(5),
            defer(6),
            emit(7, 1, Source::Expert),
            defer(8),
        ];
        let r = resolve_deferrals(&log, &lat, 1);
        assert_eq!(r[1].label, Some(1));
        assert_eq!(r[1].resolution, Resolution::Deferred { steps: 2 });
        assert!((r[1].answer_latency_s.unwrap() - (2.0 + 0.9)).abs() < 1e-12);
        assert_eq!(r[2].resolution, Resolution::Deferred { steps: 1 });
        assert_eq!(r[4].resolution, Resolution::Unresolved);
        assert_eq!(r[4].label, None);

        let plain = vec![emit(0, 1, Source::Encoder), emit(1, 0, Source::Expert)];
        let r = resolve_deferrals(&plain, &lat, 1);
        assert!(r
            .iter()
            .zip(&plain)
            .all(|(a, b)| a.label == b.label && a.resolution == Resolution::Emitted));
    }

    #[test]
    fn rates_and_latency() {
        let lat = LatencyModel::default();
        let mut log: Vec<DecisionRecord> = (0..10).map(|t| emit(t, 0, Source::Encoder)).collect();
        log[2] = emit(2, 0, Source::Expert);
        log[5] = emit(5, 0, Source::Expert);
        log[7] = defer(7);
        let r = resolve_deferrals(&log, &lat, 1);
        let truth = vec![Some(0); 10];
        let m = compute_metrics(&r, &truth, 2, &lat).unwrap();
        assert_eq!(m.vlm_suc_rate, 0.2);
        assert_eq!(m.vlm_defer_rate, 0.1);
        assert!((m.vlm_invoc_rate - 0.3).abs() < 1e-15);
        // 10 x 0.1 + 3 x 0.8 + 1 step of deferral.
        assert!((m.avg_latency_s - (1.0 + 2.4 + 1.0) / 10.0).abs() < 1e-12);

        let quiet: Vec<_> = (0..4).map(|t| emit(t, 0, Source::Encoder)).collect();
        let r = resolve_deferrals(&quiet, &lat, 1);
        let m = compute_metrics(&r, &[Some(0); 4], 2, &lat).unwrap();
        assert_eq!(m.avg_latency_s, lat.encoder_cost_s);
    }

    #[test]
    fn unresolved_and_unlabeled_are_excluded() {
        let lat = LatencyModel::default();
        let log = vec![emit(0, 1, Source::Encoder), emit(1, 0, Source::Encoder), defer(2)];
        let r = resolve_deferrals(&log, &lat, 1);
        let m = compute_metrics(&r, &[None, Some(0), Some(1)], 2, &lat).unwrap();
        assert_eq!(m.counts.total, 2);
        assert_eq!(m.counts.scored, 1);
        assert_eq!(m.counts.unresolved, 1);
        assert_eq!(m.accuracy, 1.0);
    }

    #[test]
    fn empty_log_is_an_error() {
        let lat = LatencyModel::default();
        assert!(compute_metrics(&[], &[], 2, &lat).is_err());
        let r = resolve_deferrals(&[emit(0, 0, Source::Encoder)], &lat, 1);
        assert!(compute_metrics(&r, &[None], 2, &lat).is_err());
    }
}
