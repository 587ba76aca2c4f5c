//! Steps the threshold router through a hand-written confidence trace and
//! prints every decision with the thresholds that produced it.
//!
//! `cargo run --example route_trace -- [max_enc] [max_defer]`

use streamroute::classifier::ScorerOutput;
use streamroute::expert::ExpertError;
use streamroute::router::{enc_threshold, vlm_threshold, Router, RouterConfig};

fn arg(n: usize, default: u32) -> streamroute::Result<u32> {
    match std::env::args().nth(n) {
        Some(s) => s.parse().map_err(|_| streamroute::Error::Config(format!("`{s}` is not a count"))),
        None => Ok(default),
    }
}

fn main() -> streamroute::Result<()> {
    let config = RouterConfig {
        max_enc: arg(1, 4)?,
        max_defer: arg(2, 2)?,
        ..RouterConfig::default()
    };
    println!("theta_enc(d) for d = 1..={}:", config.max_enc + 1);
    for d in 1..=config.max_enc + 1 {
        print!(" {:.3}", enc_threshold(d, config.max_enc)?);
    }
    println!("\ntheta_vlm(d) for d = 1..={}:", config.max_defer + 1);
    for d in 1..=config.max_defer + 1 {
        print!(" {:.3}", vlm_threshold(d, config.max_defer)?);
    }
    println!();

    // (encoder label, encoder confidence, expert confidence); the expert
    // fails at step 9 to show the fallback.
    let trace = [
        (0, 0.95, 0.90),
        (0, 0.92, 0.90),
        (0, 0.70, 0.95),
        (1, 0.55, 0.60),
        (1, 0.58, 0.62),
        (1, 0.90, 0.97),
        (1, 0.93, 0.97),
        (1, 0.88, 0.97),
        (1, 0.91, 0.97),
        (0, 0.52, 0.99),
        (0, 0.97, 0.99),
    ];
    let router = Router::threshold(config)?;
    let mut state = router.new_state();
    println!("{:>2}  {:>5}  {:>9}  {:>9}  decision", "i", "enc_p", "theta_enc", "theta_vlm");
    for (i, &(label, p, expert_p)) in trace.iter().enumerate() {
        let enc = ScorerOutput::from_label(label, p, 2);
        let rec = router.step(
            &mut state,
            &enc,
            || {
                if i == 9 {
                    Err(ExpertError::Timeout { timeout_ms: 5000 })
                } else {
                    Ok(ScorerOutput::from_label(label, expert_p, 2))
                }
            },
            i as i64,
        );
        let what = match (rec.is_defer(), rec.source, rec.label) {
            (true, _, _) => "defer".to_string(),
            (false, Some(src), Some(l)) => format!("emit {l} from {src:?}{}", if rec.expert_failed { " (expert failed)" } else { "" }),
            _ => unreachable!("emits carry a label and source"),
        };
        let vlm = rec.theta_vlm.map_or("-".to_string(), |v| format!("{v:.3}"));
        println!("{i:>2}  {p:>5.2}  {:>9.3}  {vlm:>9}  {what}", rec.theta_enc);
    }
    Ok(())
}
