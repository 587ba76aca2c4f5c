//! Trains the streaming encoder with and without IoU weighting and compares
//! held-out macro-F1. Only the last half of each segment carries label
//! evidence, so windows straddling a boundary are mostly misleading.
//!
//! `cargo run --release --example iou_weighting -- [key=value ...]`

use streamroute::classifier::{train, EncoderConfig, TrainObjective};
use streamroute::dataset::split_by_video;
use streamroute::harness::{evaluate_scorer, generate, SyntheticConfig};
use streamroute::losses::LossConfig;
use streamroute::stream::StreamConfig;
use streamroute::Error;

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> streamroute::Result<T> {
    v.parse().map_err(|_| Error::Config(format!("bad value `{v}` for {key}")))
}

fn main() -> streamroute::Result<()> {
    let mut data = SyntheticConfig {
        streams: 40,
        informative_fraction: 0.5,
        interference: 0.0,
        noise: 1.0,
        force_change: false,
        seed: 1,
        ..SyntheticConfig::default()
    };
    let mut enc = EncoderConfig::default();
    let stream = StreamConfig::default();
    let mut train_fraction = 0.5;
    let mut alpha = 0.25;
    for arg in std::env::args().skip(1) {
        let (k, v) = arg
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got `{arg}`")))?;
        match k {
            "streams" => data.streams = parse(k, v)?,
            "length" => data.length = parse(k, v)?,
            "dim" => data.dim = parse(k, v)?,
            "noise" => data.noise = parse(k, v)?,
            "signal" => data.signal = parse(k, v)?,
            "interference" => data.interference = parse(k, v)?,
            "f" => data.informative_fraction = parse(k, v)?,
            "seg_min" => data.segment_min = parse(k, v)?,
            "seg_max" => data.segment_max = parse(k, v)?,
            "seed" => data.seed = parse(k, v)?,
            "force_change" => data.force_change = parse(k, v)?,
            "epochs" => enc.epochs = parse(k, v)?,
            "hidden" => enc.hidden = parse(k, v)?,
            "lr" => enc.learning_rate = parse(k, v)?,
            "train_seed" => enc.seed = parse(k, v)?,
            "train_fraction" => train_fraction = parse(k, v)?,
            "alpha" => alpha = parse(k, v)?,
            _ => return Err(Error::Config(format!("unknown key `{k}`"))),
        }
    }
    let dataset = generate(&data)?;
    let (train_set, test_set) = split_by_video(&dataset, train_fraction, data.seed)?;
    for beta in [0.0, 1.0] {
        let loss = LossConfig {
            alpha,
            beta,
            ..LossConfig::default()
        };
        let started = std::time::Instant::now();
        let (model, log) = train(&train_set, &stream, &enc, &TrainObjective::Combined(loss))?;
        let test = evaluate_scorer(&test_set, &model, &stream)?;
        let fit = evaluate_scorer(&train_set, &model, &stream)?;
        println!(
            "beta={beta}: test acc {:.4} M-F1 {:.4} | train M-F1 {:.4} | final loss {:.4} | {:.1}s",
            test.accuracy,
            test.macro_f1,
            fit.macro_f1,
            log.epoch_loss.last().copied().unwrap_or(f64::NAN),
            started.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
