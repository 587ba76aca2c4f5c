//! Past-only windows over a short three-modality stream: padding at the
//! start, text and audio mean-pooled over 2 and 4 steps, and window/segment IoU.
//!
//! `cargo run --example causal_windows`

use streamroute::stream::{
    extract_model_window, propagate_labels, temporal_iou, FeatureStream, Interval, Modality, ModalityDims, SegmentAnnotation, StreamConfig,
    TimestepFeatures,
};

fn main() -> streamroute::Result<()> {
    // Feature value = timestamp, so aggregation is easy to read off.
    let steps = (0..12)
        .map(|t| TimestepFeatures {
            visual: Some(vec![t as f64]),
            text: Some(vec![t as f64]),
            audio: Some(vec![t as f64]),
        })
        .collect();
    let stream = FeatureStream::new("demo", ModalityDims::uniform(1), steps)?;
    let config = StreamConfig {
        window: 4,
        ..StreamConfig::default()
    };

    let segments = vec![
        SegmentAnnotation {
            video_id: "demo".into(),
            st: 0,
            en: 4,
            label: 0,
        },
        SegmentAnnotation {
            video_id: "demo".into(),
            st: 7,
            en: 11,
            label: 1,
        },
    ];
    let labels = propagate_labels(&segments, stream.len())?;

    for i in [0, 2, 6, 9] {
        let w = extract_model_window(&stream, i, &config)?;
        let row = |m: Modality| {
            w.features
                .iter()
                .zip(&w.pad_mask)
                .map(|(f, &pad)| {
                    if pad {
                        "   -".to_string()
                    } else {
                        format!("{:>4.1}", f.get(m).map_or(f64::NAN, |v| v[0]))
                    }
                })
                .collect::<Vec<_>>()
                .join(" ")
        };
        println!(
            "i={i} extent [{}, {}] padded {}",
            w.extent.start,
            w.extent.end,
            w.padded_positions()
        );
        for m in Modality::ALL {
            println!("  {:<6} {}", m.name(), row(m));
        }
        let label = labels[i].map_or("unlabeled".to_string(), |c| format!("class {c}"));
        let best = segments
            .iter()
            .map(|s| temporal_iou(w.extent, s.interval()))
            .collect::<streamroute::Result<Vec<_>>>()?;
        println!("  truth {label}, IoU with segments {best:.3?}");
    }

    let iou = temporal_iou(Interval::new(0, 9)?, Interval::new(5, 14)?)?;
    println!("IoU([0,9], [5,14]) = {iou:.4}");
    Ok(())
}
