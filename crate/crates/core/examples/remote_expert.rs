//! Serves a local oracle expert over HTTP, routes a small synthetic dataset
//! through the remote client, then repeats against a stub slower than the
//! client timeout to show the encoder fallback.
//!
//! `cargo run --example remote_expert`

use std::sync::Arc;
use std::time::Duration;

use streamroute::classifier::{ConfidenceModel, SyntheticOracle};
use streamroute::expert::{Expert, LocalOracleExpert, RemoteExpert, RemoteExpertConfig, StubBehavior, StubServer};
use streamroute::harness::{describe, evaluate_logs, generate, run_dataset, LatencyModel, SyntheticConfig};
use streamroute::router::{Router, RouterConfig};
use streamroute::stream::StreamConfig;

fn main() -> streamroute::Result<()> {
    let dataset = generate(&SyntheticConfig {
        streams: 4,
        length: 120,
        seed: 9,
        ..SyntheticConfig::default()
    })?;
    let scorer = SyntheticOracle::from_dataset(
        &dataset,
        0.3,
        ConfidenceModel::Uniform {
            correct: [0.7, 1.0],
            incorrect: [0.5, 0.8],
        },
        1,
    )?;
    let oracle: Arc<dyn Expert> = Arc::new(LocalOracleExpert::from_dataset(
        &dataset,
        0.05,
        ConfidenceModel::Calibrated,
        800.0,
        2,
    )?);
    let router = Router::threshold(RouterConfig::default())?;
    let stream = StreamConfig::default();
    let latency = LatencyModel::default();

    let server = StubServer::start("127.0.0.1:0", StubBehavior::Expert(oracle), Duration::ZERO)?;
    println!("oracle expert listening on {}", server.endpoint());
    let remote = RemoteExpert::new(RemoteExpertConfig::new(server.endpoint()));
    let logs = run_dataset(&dataset, &scorer, Some(&remote), &router, &stream)?;
    println!(
        "remote:  {}",
        describe(&evaluate_logs(&logs, dataset.num_classes(), &latency, stream.interval)?)
    );

    // Every call now times out, so escalated steps fall back to the encoder.
    let slow = StubServer::start("127.0.0.1:0", StubBehavior::Expert(Arc::new(remote)), Duration::from_millis(200))?;
    let impatient = RemoteExpert::new(RemoteExpertConfig {
        endpoint: slow.endpoint(),
        timeout_ms: 50,
    });
    let short = generate(&SyntheticConfig {
        streams: 1,
        length: 40,
        seed: 9,
        ..SyntheticConfig::default()
    })?;
    let logs = run_dataset(&short, &scorer, Some(&impatient), &router, &stream)?;
    let failed = logs.iter().flat_map(|l| &l.records).filter(|r| r.expert_failed).count();
    println!("timeout: {failed} expert calls failed, every step still emitted or deferred");
    Ok(())
}
