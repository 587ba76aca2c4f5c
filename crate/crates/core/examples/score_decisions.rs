//! Scores a short hand-written decision log: deferrals take the label of
//! the next emit, the trailing deferral stays unresolved, and latency
//! charges the expert and the defer wait.
//!
//! `cargo run --example score_decisions`

use streamroute::harness::{classification_scores, compute_metrics, resolve_deferrals, LatencyModel};
use streamroute::router::{DecisionKind, DecisionRecord, Source};

fn record(t: i64, emit: Option<(usize, Source)>, escalated: bool) -> DecisionRecord {
    DecisionRecord {
        t,
        decision: if emit.is_some() { DecisionKind::Emit } else { DecisionKind::Defer },
        source: emit.map(|e| e.1),
        label: emit.map(|e| e.0),
        enc_p: 0.6,
        expert_p: escalated.then_some(0.7),
        escalated,
        theta_enc: 0.5,
        theta_vlm: escalated.then_some(0.8),
        expert_failed: false,
    }
}

fn main() -> streamroute::Result<()> {
    let (enc, vlm) = (Source::Encoder, Source::Expert);
    let log = vec![
        record(0, Some((0, vlm)), true),
        record(1, Some((0, enc)), false),
        record(2, None, true),
        record(3, None, true),
        record(4, Some((1, vlm)), true),
        record(5, Some((1, enc)), false),
        record(6, Some((0, enc)), false),
        record(7, None, true),
    ];
    let truth = [Some(0), Some(0), Some(1), Some(1), Some(1), None, Some(1), Some(0)];
    let latency = LatencyModel::default();

    let resolved = resolve_deferrals(&log, &latency, 1);
    for (r, y) in resolved.iter().zip(&truth) {
        println!(
            "t={} {:?} label {:?} truth {:?} answer latency {:?}",
            r.t, r.resolution, r.label, y, r.answer_latency_s
        );
    }
    let report = compute_metrics(&resolved, &truth, 2, &latency)?;
    println!("{}", serde_json::to_string_pretty(&report)?);

    let (acc, mf1, _) = classification_scores(&[1, 1, 0, 0], &[1, 0, 0, 0], 2)?;
    println!("preds [1,1,0,0] vs truth [1,0,0,0]: acc {acc:.4}, macro-F1 {mf1:.4}");
    Ok(())
}
