use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{EncoderConfig, ModelShape, StreamEncoder};
use crate::dataset::StreamDataset;
use crate::error::{Error, Result};
use crate::gradcheck::Objective;
use crate::losses::{cross_entropy, cross_modal_loss_grad, iou_weighted_ce_logits, BatchEmbeddings, LossConfig, DEFAULT_PROB_FLOOR};
use crate::matrix::Matrix;
use crate::stream::{extract_model_window, temporal_iou, ClassId, Interval, Modality, StreamConfig, StreamWindow};

/// One supervised window: decision timestamp, its propagated label and the
/// IoU between the window extent and the segment it falls in.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub video: usize,
    pub timestamp: usize,
    pub label: ClassId,
    pub iou: f64,
}

/// Windows at every decision interval whose endpoint is labeled.
pub fn training_samples(dataset: &StreamDataset, config: &StreamConfig) -> Result<Vec<TrainingSample>> {
    config.validate()?;
    let mut out = Vec::new();
    for (vi, video) in dataset.videos.iter().enumerate() {
        for t in (0..video.duration()).step_by(config.interval) {
            let Some(label) = video.labels[t] else { continue };
            let seg = video.segment_at(t).expect("labeled timestamps lie inside a segment");
            let extent = Interval {
                start: t.saturating_sub(config.window) as i64,
                end: t as i64,
            };
            out.push(TrainingSample {
                video: vi,
                timestamp: t,
                label,
                iou: temporal_iou(extent, seg.interval())?,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainObjective {
    /// Cross-modal contrastive term plus IoU-weighted cross-entropy.
    Combined(LossConfig),
    /// Unweighted softmax cross-entropy, computed on its own code path.
    PlainCrossEntropy,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epoch_loss: Vec<f64>,
    pub step_loss: Vec<f64>,
}

pub fn train(
    dataset: &StreamDataset,
    stream: &StreamConfig,
    config: &EncoderConfig,
    objective: &TrainObjective,
) -> Result<(StreamEncoder, TrainingLog)> {
    train_observed(dataset, stream, config, objective, |_| {})
}

/// Mini-batch Adam training; `observer` sees every batch before it is used.
pub fn train_observed(
    dataset: &StreamDataset,
    stream: &StreamConfig,
    config: &EncoderConfig,
    objective: &TrainObjective,
    mut observer: impl FnMut(&[TrainingSample]),
) -> Result<(StreamEncoder, TrainingLog)> {
    config.validate()?;
    if let TrainObjective::Combined(lc) = objective {
        lc.validate()?;
    }
    let mut samples = training_samples(dataset, stream)?;
    let mut classes: Vec<ClassId> = samples.iter().map(|s| s.label).collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Invalid(format!(
            "training needs at least two classes, found {}",
            classes.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let shape = ModelShape {
        dims: dataset.dims,
        window_len: stream.window + 1,
        num_classes: dataset.num_classes(),
    };
    let mut encoder = StreamEncoder::with_rng(config.clone(), shape, &mut rng)?;
    let mut adam = crate::nn::Adam::new(encoder.num_params(), config.learning_rate);
    let mut log = TrainingLog::default();
    let mut grad = vec![0.0; encoder.num_params()];

    for epoch in 0..config.epochs {
        samples.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        let mut steps = 0usize;
        for (step, batch) in samples.chunks(config.batch_size).enumerate() {
            observer(batch);
            let windows = batch
                .iter()
                .map(|s| extract_model_window(&dataset.videos[s.video].stream, s.timestamp, stream))
                .collect::<Result<Vec<_>>>()?;
            let labels: Vec<ClassId> = batch.iter().map(|s| s.label).collect();
            let iou: Vec<f64> = batch.iter().map(|s| s.iou).collect();
            grad.iter_mut().for_each(|g| *g = 0.0);
            let loss = batch_loss_and_grad(&encoder, encoder.params(), &windows, &labels, &iou, objective, &mut grad)?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    step,
                    reason: format!("loss is {loss}"),
                });
            }
            if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged {
                    epoch,
                    step,
                    reason: format!("gradient coordinate {i} is not finite"),
                });
            }
            adam.step(encoder.params_mut(), &grad);
            log.step_loss.push(loss);
            epoch_total += loss;
            steps += 1;
        }
        log.epoch_loss.push(epoch_total / steps.max(1) as f64);
    }
    Ok((encoder, log))
}

/// Loss of one batch under `params`, accumulating its gradient into `grad`.
pub(crate) fn batch_loss_and_grad(
    encoder: &StreamEncoder,
    params: &[f64],
    windows: &[StreamWindow],
    labels: &[ClassId],
    iou: &[f64],
    objective: &TrainObjective,
    grad: &mut [f64],
) -> Result<f64> {
    let fwds = windows
        .iter()
        .map(|w| encoder.forward_with(params, w))
        .collect::<Result<Vec<_>>>()?;
    let b = fwds.len();
    let c = encoder.shape().num_classes;
    let logits = Matrix::from_rows(&fwds.iter().map(|f| f.logits.clone()).collect::<Vec<_>>())?;

    match objective {
        TrainObjective::PlainCrossEntropy => {
            let probs = crate::losses::softmax_rows(&logits);
            let loss = cross_entropy(&probs, labels, DEFAULT_PROB_FLOOR);
            for (i, fwd) in fwds.iter().enumerate() {
                let mut d = probs.row(i).to_vec();
                d[labels[i]] -= 1.0;
                d.iter_mut().for_each(|v| *v /= b as f64);
                encoder.backward_with(params, fwd, &d, [None, None, None], grad);
            }
            Ok(loss)
        }
        TrainObjective::Combined(cfg) => {
            let (ce, d_logits) = iou_weighted_ce_logits(&logits, labels, iou, cfg.beta, cfg.prob_floor)?;
            debug_assert_eq!(d_logits.cols(), c);

            // Contrastive alignment over windows where all three modalities pooled something.
            let aligned: Vec<usize> = if cfg.alpha > 0.0 && encoder.shape().dims.all_present() {
                (0..b).filter(|i| fwds[*i].pooled.iter().all(|p| *p)).collect()
            } else {
                Vec::new()
            };
            let mut d_emb: Vec<[Option<Vec<f64>>; 3]> = vec![[None, None, None]; b];
            let mut cm = 0.0;
            if !aligned.is_empty() {
                let pick =
                    |m: Modality| Matrix::from_rows(&aligned.iter().map(|i| fwds[*i].embeddings[m.index()].clone()).collect::<Vec<_>>());
                let emb = BatchEmbeddings::new(pick(Modality::Text)?, pick(Modality::Visual)?, pick(Modality::Audio)?)?;
                let (loss, g) = cross_modal_loss_grad(&emb, cfg.alpha, cfg.tau)?;
                cm = loss;
                for (r, i) in aligned.iter().enumerate() {
                    d_emb[*i] = [
                        Some(g.visual.row(r).to_vec()),
                        Some(g.text.row(r).to_vec()),
                        Some(g.audio.row(r).to_vec()),
                    ];
                }
            }
            for (i, fwd) in fwds.iter().enumerate() {
                let de = &d_emb[i];
                encoder.backward_with(
                    params,
                    fwd,
                    d_logits.row(i),
                    [de[0].as_deref(), de[1].as_deref(), de[2].as_deref()],
                    grad,
                );
            }
            Ok(cm + ce)
        }
    }
}

/// The training loss of a fixed batch as a function of the encoder parameters.
pub struct EncoderBatchObjective<'a> {
    pub encoder: &'a StreamEncoder,
    pub windows: Vec<StreamWindow>,
    pub labels: Vec<ClassId>,
    pub iou: Vec<f64>,
    pub objective: TrainObjective,
}

impl Objective for EncoderBatchObjective<'_> {
    fn dim(&self) -> usize {
        self.encoder.num_params()
    }

    fn value_and_gradient(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; params.len()];
        let loss = batch_loss_and_grad(
            self.encoder,
            params,
            &self.windows,
            &self.labels,
            &self.iou,
            &self.objective,
            &mut grad,
        )?;
        Ok((loss, grad))
    }
}

/// Fraction of labeled windows the scorer classifies correctly.
#[cfg(test)]
fn accuracy_on(encoder: &StreamEncoder, dataset: &StreamDataset, stream: &StreamConfig) -> Result<f64> {
    let samples = training_samples(dataset, stream)?;
    let mut correct = 0usize;
    for s in &samples {
        let w = extract_model_window(&dataset.videos[s.video].stream, s.timestamp, stream)?;
        let mut p = encoder.forward(&w)?.logits;
        crate::matrix::softmax_in_place(&mut p);
        let pred = super::ScorerOutput::from_probs(p).label;
        correct += usize::from(pred == s.label);
    }
    Ok(correct as f64 / samples.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Video;
    use crate::gradcheck::finite_difference_check;
    use crate::stream::{FeatureStream, ModalityDims, SegmentAnnotation, TimestepFeatures};
    use rand::Rng;

    /// Two alternating classes whose features are shifted by +/- `signal`.
    fn separable(videos: usize, len: usize, seg: usize, signal: f64, seed: u64) -> StreamDataset {
        let dims = ModalityDims::uniform(3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for v in 0..videos {
            let id = format!("v{v}");
            let segments: Vec<SegmentAnnotation> = (0..len / seg)
                .map(|k| SegmentAnnotation {
                    video_id: id.clone(),
                    st: k * seg,
                    en: (k + 1) * seg - 1,
                    label: (k + v) % 2,
                })
                .collect();
            let steps = (0..len)
                .map(|t| {
                    let y = segments[t / seg].label as f64 * 2.0 - 1.0;
                    let mut s = TimestepFeatures::default();
                    for m in Modality::ALL {
                        s.set(m, Some((0..3).map(|_| y * signal + rng.gen_range(-0.5..0.5)).collect()));
                    }
                    s
                })
                .collect();
            let stream = FeatureStream::new(id, dims, steps).unwrap();
            out.push(Video::new(stream, segments).unwrap());
        }
        StreamDataset {
            name: "sep".into(),
            label_space: vec!["a".into(), "b".into()],
            dims,
            sample_rate_hz: 1.0,
            videos: out,
        }
    }

    fn small_stream() -> StreamConfig {
        StreamConfig {
            window: 4,
            interval: 1,
            text_window: 2,
            audio_window: 2,
        }
    }

    #[test]
    fn samples_skip_unlabeled_and_carry_iou() {
        let mut ds = separable(1, 20, 10, 1.0, 0);
        // Leave timestamps 10..14 unannotated.
        let v = &mut ds.videos[0];
        v.segments[1].st = 15;
        *v = Video::new(v.stream.clone(), v.segments.clone()).unwrap();
        let samples = training_samples(&ds, &small_stream()).unwrap();
        assert_eq!(samples.len(), 15);
        assert!(samples.iter().all(|s| !(10..15).contains(&s.timestamp)));
        // t = 2: window [0, 2] inside segment [0, 9] -> 3 / 10.
        assert_eq!(samples[2].iou, 0.3);
        // t = 16: window [12, 16], segment [15, 19] -> 2 / 8.
        let s16 = samples.iter().find(|s| s.timestamp == 16).unwrap();
        assert_eq!(s16.iou, 0.25);
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let ds = separable(1, 12, 6, 0.8, 3);
        let sc = small_stream();
        let cfg = EncoderConfig {
            hidden: 3,
            ..EncoderConfig::default()
        };
        let shape = ModelShape {
            dims: ds.dims,
            window_len: sc.window + 1,
            num_classes: 2,
        };
        let enc = StreamEncoder::new(cfg, shape).unwrap();
        let ts = [1usize, 5, 7, 11];
        let windows: Vec<_> = ts
            .iter()
            .map(|t| extract_model_window(&ds.videos[0].stream, *t, &sc).unwrap())
            .collect();
        let labels: Vec<_> = ts.iter().map(|t| ds.videos[0].labels[*t].unwrap()).collect();
        for objective in [
            TrainObjective::Combined(LossConfig {
                alpha: 0.5,
                beta: 1.0,
                tau: 0.5,
                ..LossConfig::default()
            }),
            TrainObjective::PlainCrossEntropy,
        ] {
            let obj = EncoderBatchObjective {
                encoder: &enc,
                windows: windows.clone(),
                labels: labels.clone(),
                iou: vec![0.2, 0.5, 0.9, 1.0],
                objective,
            };
            let report = finite_difference_check(&obj, enc.params(), 1e-5, 1e-4).unwrap();
            assert!(report.passed, "{report}");
        }
    }

    #[test]
    fn overfits_separable_streams() {
        let ds = separable(2, 100, 20, 0.6, 5);
        let sc = small_stream();
        let cfg = EncoderConfig {
            hidden: 8,
            batch_size: 16,
            epochs: 40,
            learning_rate: 1e-2,
            ..EncoderConfig::default()
        };
        let (enc, log) = train(&ds, &sc, &cfg, &TrainObjective::Combined(LossConfig::default())).unwrap();
        assert_eq!(log.epoch_loss.len(), 40);
        let acc = accuracy_on(&enc, &ds, &sc).unwrap();
        assert!(acc >= 0.95, "training accuracy {acc}");
    }

    #[test]
    fn same_seed_bit_identical() {
        let ds = separable(2, 40, 10, 0.6, 9);
        let sc = small_stream();
        let cfg = EncoderConfig {
            hidden: 4,
            epochs: 2,
            ..EncoderConfig::default()
        };
        let obj = TrainObjective::Combined(LossConfig::default());
        let (a, la) = train(&ds, &sc, &cfg, &obj).unwrap();
        let (b, lb) = train(&ds, &sc, &cfg, &obj).unwrap();
        assert_eq!(a.params(), b.params());
        assert_eq!(la, lb);
    }

    #[test]
    fn reduced_objective_tracks_plain_cross_entropy() {
        let ds = separable(2, 40, 10, 0.6, 2);
        let sc = small_stream();
        let cfg = EncoderConfig {
            hidden: 4,
            epochs: 3,
            ..EncoderConfig::default()
        };
        let reduced = TrainObjective::Combined(LossConfig {
            alpha: 0.0,
            beta: 0.0,
            ..LossConfig::default()
        });
        let (a, la) = train(&ds, &sc, &cfg, &reduced).unwrap();
        let (b, lb) = train(&ds, &sc, &cfg, &TrainObjective::PlainCrossEntropy).unwrap();
        assert_eq!(la.step_loss.len(), lb.step_loss.len());
        for (x, y) in la.step_loss.iter().zip(&lb.step_loss) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{x} vs {y}");
        }
        for (x, y) in a.params().iter().zip(b.params()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn single_class_rejected() {
        let mut ds = separable(1, 20, 10, 0.6, 2);
        let v = &mut ds.videos[0];
        v.segments.iter_mut().for_each(|s| s.label = 0);
        *v = Video::new(v.stream.clone(), v.segments.clone()).unwrap();
        let err = train(&ds, &small_stream(), &EncoderConfig::default(), &TrainObjective::PlainCrossEntropy).unwrap_err();
        assert!(err.to_string().contains("two classes"));
    }

    #[test]
    fn observer_never_sees_unlabeled() {
        let mut ds = separable(2, 30, 10, 0.6, 4);
        for v in &mut ds.videos {
            v.segments.remove(1);
            *v = Video::new(v.stream.clone(), v.segments.clone()).unwrap();
        }
        let cfg = EncoderConfig {
            hidden: 2,
            epochs: 1,
            ..EncoderConfig::default()
        };
        let mut seen = 0;
        train_observed(
            &ds,
            &small_stream(),
            &cfg,
            &TrainObjective::Combined(LossConfig::default()),
            |batch| {
                for s in batch {
                    assert!(ds.videos[s.video].labels[s.timestamp].is_some());
                    seen += 1;
                }
            },
        )
        .unwrap();
        assert_eq!(seen, 40);
    }
}
