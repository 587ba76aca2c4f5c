//! Evaluates the contrastive, cross-modal and total losses on a random
//! batch and checks their analytic gradients by central differences.
//!
//! `cargo run --example loss_gradcheck -- [seed]`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use streamroute::gradcheck::{finite_difference_check, ContrastiveObjective, CrossModalObjective, Objective, TotalObjective};
use streamroute::losses::{iou_weight, LossConfig};

fn main() -> streamroute::Result<()> {
    let seed = match std::env::args().nth(1) {
        Some(s) => s
            .parse()
            .map_err(|_| streamroute::Error::Config(format!("seed `{s}` is not an integer")))?,
        None => 5,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, e) = (6, 8);
    let config = LossConfig::default();

    let contrastive = ContrastiveObjective {
        batch: b,
        embed_dim: e,
        tau: config.tau,
    };
    let cross_modal = CrossModalObjective {
        batch: b,
        embed_dim: e,
        alpha: config.alpha,
        tau: config.tau,
    };
    let total = TotalObjective {
        embed_dim: e,
        classes: 2,
        targets: vec![0, 1, 1, 0, 1, 0],
        iou: vec![1.0, 0.8, 0.5, 0.25, 0.0, 0.6],
        config,
    };
    let objectives: [(&str, &dyn Objective); 3] = [("contrastive", &contrastive), ("cross-modal", &cross_modal), ("total", &total)];
    for (name, obj) in objectives {
        let x: Vec<f64> = (0..obj.dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let value = obj.value(&x)?;
        let report = finite_difference_check(obj, &x, 1e-4, 1e-4)?;
        println!("{name:<12} loss {value:.5}  {report}");
    }

    println!("IoU weights at beta = {}:", config.beta);
    for iou in [0.0, 0.25, 0.5, 1.0] {
        println!(
            "  IoU {iou:.2} -> {:.3} (beta 0: {:.0})",
            iou_weight(iou, config.beta),
            iou_weight(iou, 0.0)
        );
    }
    Ok(())
}
