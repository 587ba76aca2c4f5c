//! Trains the streaming encoder on a synthetic dataset, saves a checkpoint,
//! reloads it, and replays its outputs through a trace scorer.
//!
//! `cargo run --release --example train_encoder -- [out_dir]`

use std::path::PathBuf;

use streamroute::classifier::{export_trace, load_checkpoint, load_trace, save_checkpoint, train, EncoderConfig, TrainObjective};
use streamroute::dataset::split_by_video;
use streamroute::harness::{evaluate_scorer, generate, SyntheticConfig};
use streamroute::losses::LossConfig;
use streamroute::stream::StreamConfig;

fn main() -> streamroute::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("streamroute-train"));
    let dataset = generate(&SyntheticConfig {
        streams: 20,
        length: 200,
        informative_fraction: 0.5,
        seed: 3,
        ..SyntheticConfig::default()
    })?;
    let (train_set, test_set) = split_by_video(&dataset, 0.75, 3)?;
    let stream = StreamConfig::default();
    let enc = EncoderConfig {
        epochs: 4,
        ..EncoderConfig::default()
    };

    let (model, log) = train(&train_set, &stream, &enc, &TrainObjective::Combined(LossConfig::default()))?;
    for (epoch, loss) in log.epoch_loss.iter().enumerate() {
        println!("epoch {epoch}: loss {loss:.4}");
    }
    let report = evaluate_scorer(&test_set, &model, &stream)?;
    println!(
        "held out ({} streams): acc {:.4}  m-f1 {:.4}",
        test_set.videos.len(),
        report.accuracy,
        report.macro_f1
    );

    let ckpt = out.join("encoder.ckpt");
    save_checkpoint(&model, &dataset.label_space, &ckpt)?;
    let (reloaded, labels) = load_checkpoint(&ckpt)?;
    // Weights are stored as f32, so scores may move in the last digits.
    let again = evaluate_scorer(&test_set, &reloaded, &stream)?;
    println!(
        "checkpoint {} reloads with labels {labels:?}: m-f1 {:.4}",
        ckpt.display(),
        again.macro_f1
    );

    let traces = out.join("traces");
    export_trace(&reloaded, &test_set, &stream, &traces)?;
    let replay = load_trace(&traces, &dataset.label_space)?;
    let replayed = evaluate_scorer(&test_set, &replay, &stream)?;
    println!("trace replay in {}: m-f1 {:.4}", traces.display(), replayed.macro_f1);
    Ok(())
}
