//! Trainable lightweight streaming encoder.
//!
//! Three unimodal branches (visual, text, audio) apply `enc_layers`
//! position-wise tanh layers to every valid window position, with a learned
//! positional embedding added at the first layer, then mean-pool over the
//! valid (non-padded, present) positions. The pooled embeddings are
//! concatenated, passed through `fusion_layers` tanh layers, and classified
//! by an MLP head of depth `mlp_depth`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Scorer, ScorerOutput};
use crate::error::{Error, Result};
use crate::matrix::softmax_in_place;
use crate::nn::{init_dense, tanh_backward, tanh_in_place, Dense, ParamAllocator};
use crate::stream::{Modality, ModalityDims, StreamWindow};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Depth of each unimodal branch.
    pub enc_layers: usize,
    /// Depth of the fusion stack.
    pub fusion_layers: usize,
    pub hidden: usize,
    /// Layers in the classification head, including the output layer.
    pub mlp_depth: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            enc_layers: 2,
            fusion_layers: 2,
            hidden: 16,
            mlp_depth: 2,
            learning_rate: 3e-3,
            epochs: 10,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.enc_layers < 1 || self.fusion_layers < 1 || self.mlp_depth < 1 {
            return Err(Error::Config("encoder, fusion and MLP depths must be at least 1".into()));
        }
        if self.hidden < 1 || self.batch_size < 1 {
            return Err(Error::Config("hidden width and batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be > 0", self.learning_rate)));
        }
        Ok(())
    }
}

/// Input geometry the encoder was built for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub dims: ModalityDims,
    /// Positions per window, `N + 1`.
    pub window_len: usize,
    pub num_classes: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct Branch {
    modality: Modality,
    /// Offset of the `window_len x hidden` positional embedding.
    pos: usize,
    layers: Vec<Dense>,
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    branches: Vec<Branch>,
    fusion: Vec<Dense>,
    head: Vec<Dense>,
    len: usize,
}

impl Layout {
    fn new(config: &EncoderConfig, shape: &ModelShape) -> Self {
        let h = config.hidden;
        let mut alloc = ParamAllocator::default();
        let mut branches = Vec::new();
        for m in Modality::ALL {
            let Some(d) = shape.dims.get(m) else { continue };
            let pos = alloc.block(shape.window_len * h);
            let layers = (0..config.enc_layers).map(|l| alloc.dense(if l == 0 { d } else { h }, h)).collect();
            branches.push(Branch { modality: m, pos, layers });
        }
        let fusion = (0..config.fusion_layers)
            .map(|l| alloc.dense(if l == 0 { 3 * h } else { h }, h))
            .collect();
        let mut head: Vec<Dense> = (0..config.mlp_depth - 1).map(|_| alloc.dense(h, h)).collect();
        head.push(alloc.dense(h, shape.num_classes));
        Layout {
            branches,
            fusion,
            head,
            len: alloc.len,
        }
    }
}

/// Activations of one window retained for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct Forward {
    /// Per branch: `(window position, layer activations with the input at index 0)`.
    branch_acts: Vec<Vec<(usize, Vec<Vec<f64>>)>>,
    /// Pooled embedding per modality (`Modality::index`); zeros when nothing was pooled.
    pub embeddings: [Vec<f64>; 3],
    /// Whether the modality had at least one valid position.
    pub pooled: [bool; 3],
    fusion_acts: Vec<Vec<f64>>,
    head_acts: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StreamEncoder {
    config: EncoderConfig,
    shape: ModelShape,
    layout: Layout,
    params: Vec<f64>,
}

impl StreamEncoder {
    /// Freshly initialized encoder, deterministic in `config.seed`.
    pub fn new(config: EncoderConfig, shape: ModelShape) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self::with_rng(config, shape, &mut rng)
    }

    pub(crate) fn with_rng(config: EncoderConfig, shape: ModelShape, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        if shape.num_classes < 2 || shape.window_len < 1 {
            return Err(Error::Config("encoder needs >= 2 classes and a non-empty window".into()));
        }
        if Modality::ALL.iter().all(|m| shape.dims.get(*m).is_none()) {
            return Err(Error::Config("encoder needs at least one modality".into()));
        }
        let layout = Layout::new(&config, &shape);
        let mut params = vec![0.0; layout.len];
        for b in &layout.branches {
            for v in &mut params[b.pos..b.pos + shape.window_len * config.hidden] {
                *v = rng.gen_range(-0.05..0.05);
            }
            b.layers.iter().for_each(|l| init_dense(&mut params, l, rng));
        }
        layout
            .fusion
            .iter()
            .chain(&layout.head)
            .for_each(|l| init_dense(&mut params, l, rng));
        Ok(StreamEncoder {
            config,
            shape,
            layout,
            params,
        })
    }

    pub(crate) fn from_parts(config: EncoderConfig, shape: ModelShape, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config, &shape);
        if params.len() != layout.len {
            return Err(Error::Dimension(format!(
                "{} parameters, architecture needs {}",
                params.len(),
                layout.len
            )));
        }
        Ok(StreamEncoder {
            config,
            shape,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.layout.len
    }

    fn check_window(&self, window: &StreamWindow) -> Result<()> {
        if window.len() != self.shape.window_len {
            return Err(Error::Dimension(format!(
                "window of {} positions, encoder expects {}",
                window.len(),
                self.shape.window_len
            )));
        }
        if window.dims != self.shape.dims {
            return Err(Error::Dimension(format!(
                "window dims {:?}, encoder expects {:?}",
                window.dims, self.shape.dims
            )));
        }
        Ok(())
    }

    pub(crate) fn forward_with(&self, params: &[f64], window: &StreamWindow) -> Result<Forward> {
        self.check_window(window)?;
        let h = self.config.hidden;
        let mut embeddings = [vec![0.0; h], vec![0.0; h], vec![0.0; h]];
        let mut pooled = [false; 3];
        let mut branch_acts = Vec::with_capacity(self.layout.branches.len());
        for branch in &self.layout.branches {
            let mi = branch.modality.index();
            let mut per_pos = Vec::new();
            for (pos, step) in window.features.iter().enumerate() {
                if window.pad_mask[pos] {
                    continue;
                }
                let Some(x) = step.get(branch.modality) else { continue };
                let mut acts = Vec::with_capacity(branch.layers.len() + 1);
                acts.push(x.to_vec());
                for (l, layer) in branch.layers.iter().enumerate() {
                    let mut z = vec![0.0; h];
                    layer.forward(params, &acts[l], &mut z);
                    if l == 0 {
                        let pe = &params[branch.pos + pos * h..branch.pos + (pos + 1) * h];
                        z.iter_mut().zip(pe).for_each(|(a, b)| *a += b);
                    }
                    tanh_in_place(&mut z);
                    acts.push(z);
                }
                per_pos.push((pos, acts));
            }
            if !per_pos.is_empty() {
                let inv = 1.0 / per_pos.len() as f64;
                let emb = &mut embeddings[mi];
                for (_, acts) in &per_pos {
                    emb.iter_mut().zip(acts.last().unwrap()).for_each(|(e, a)| *e += a * inv);
                }
                pooled[mi] = true;
            }
            branch_acts.push(per_pos);
        }

        let mut fusion_acts = Vec::with_capacity(self.layout.fusion.len() + 1);
        fusion_acts.push(embeddings.concat());
        for layer in &self.layout.fusion {
            let mut z = vec![0.0; layer.out];
            layer.forward(params, fusion_acts.last().unwrap(), &mut z);
            tanh_in_place(&mut z);
            fusion_acts.push(z);
        }

        let mut head_acts = vec![fusion_acts.last().unwrap().clone()];
        let (out_layer, hidden_layers) = self.layout.head.split_last().unwrap();
        for layer in hidden_layers {
            let mut z = vec![0.0; layer.out];
            layer.forward(params, head_acts.last().unwrap(), &mut z);
            tanh_in_place(&mut z);
            head_acts.push(z);
        }
        let mut logits = vec![0.0; out_layer.out];
        out_layer.forward(params, head_acts.last().unwrap(), &mut logits);

        Ok(Forward {
            branch_acts,
            embeddings,
            pooled,
            fusion_acts,
            head_acts,
            logits,
        })
    }

    pub(crate) fn forward(&self, window: &StreamWindow) -> Result<Forward> {
        self.forward_with(&self.params, window)
    }

    /// Accumulates into `grad` the parameter gradient given upstream
    /// gradients for the logits and (optionally) each pooled embedding.
    pub(crate) fn backward_with(&self, params: &[f64], fwd: &Forward, d_logits: &[f64], d_emb: [Option<&[f64]>; 3], grad: &mut [f64]) {
        let h = self.config.hidden;
        let (out_layer, hidden_layers) = self.layout.head.split_last().unwrap();
        let mut d = vec![0.0; out_layer.inp];
        out_layer.backward(params, fwd.head_acts.last().unwrap(), d_logits, grad, Some(&mut d));
        for (l, layer) in hidden_layers.iter().enumerate().rev() {
            tanh_backward(&fwd.head_acts[l + 1], &mut d);
            let mut dx = vec![0.0; layer.inp];
            layer.backward(params, &fwd.head_acts[l], &d, grad, Some(&mut dx));
            d = dx;
        }
        for (l, layer) in self.layout.fusion.iter().enumerate().rev() {
            tanh_backward(&fwd.fusion_acts[l + 1], &mut d);
            let mut dx = vec![0.0; layer.inp];
            layer.backward(params, &fwd.fusion_acts[l], &d, grad, Some(&mut dx));
            d = dx;
        }
        // `d` is now the gradient of the concatenated embeddings.
        for (branch, per_pos) in self.layout.branches.iter().zip(&fwd.branch_acts) {
            if per_pos.is_empty() {
                continue;
            }
            let mi = branch.modality.index();
            let mut d_pool = d[mi * h..(mi + 1) * h].to_vec();
            if let Some(extra) = d_emb[mi] {
                d_pool.iter_mut().zip(extra).for_each(|(a, b)| *a += b);
            }
            let inv = 1.0 / per_pos.len() as f64;
            d_pool.iter_mut().for_each(|v| *v *= inv);
            for (pos, acts) in per_pos {
                let mut da = d_pool.clone();
                for (l, layer) in branch.layers.iter().enumerate().rev() {
                    tanh_backward(&acts[l + 1], &mut da);
                    if l == 0 {
                        let pe = &mut grad[branch.pos + pos * h..branch.pos + (pos + 1) * h];
                        pe.iter_mut().zip(&da).for_each(|(g, v)| *g += v);
                        layer.backward(params, &acts[0], &da, grad, None);
                    } else {
                        let mut dx = vec![0.0; layer.inp];
                        layer.backward(params, &acts[l], &da, grad, Some(&mut dx));
                        da = dx;
                    }
                }
            }
        }
    }

    /// Class distribution for one window.
    pub fn predict_probs(&self, window: &StreamWindow) -> Result<Vec<f64>> {
        let mut logits = self.forward(window)?.logits;
        softmax_in_place(&mut logits);
        Ok(logits)
    }
}

impl Scorer for StreamEncoder {
    fn num_classes(&self) -> usize {
        self.shape.num_classes
    }

    fn score(&self, window: &StreamWindow) -> Result<ScorerOutput> {
        Ok(ScorerOutput::from_probs(self.predict_probs(window)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::{extract_model_window, FeatureStream, StreamConfig, TimestepFeatures};

    fn stream(len: usize, dims: ModalityDims, seed: u64) -> FeatureStream {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let steps = (0..len)
            .map(|_| {
                let mut s = TimestepFeatures::default();
                for m in Modality::ALL {
                    if let Some(d) = dims.get(m) {
                        s.set(m, Some((0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()));
                    }
                }
                s
            })
            .collect();
        FeatureStream::new("s", dims, steps).unwrap()
    }

    fn small() -> (EncoderConfig, ModelShape, StreamConfig) {
        let cfg = EncoderConfig {
            hidden: 4,
            ..EncoderConfig::default()
        };
        let dims = ModalityDims {
            visual: Some(3),
            text: Some(2),
            audio: None,
        };
        let sc = StreamConfig {
            window: 5,
            interval: 1,
            text_window: 2,
            audio_window: 1,
        };
        (
            cfg,
            ModelShape {
                dims,
                window_len: 6,
                num_classes: 3,
            },
            sc,
        )
    }

    #[test]
    fn probabilities_are_a_distribution() {
        let (cfg, shape, sc) = small();
        let enc = StreamEncoder::new(cfg, shape).unwrap();
        let s = stream(12, shape.dims, 1);
        for t in 0..12 {
            let w = extract_model_window(&s, t, &sc).unwrap();
            let p = enc.predict_probs(&w).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let out = enc.score(&w).unwrap();
            assert_eq!(out.confidence, p[out.label]);
        }
    }

    #[test]
    fn window_shape_checked() {
        let (cfg, shape, _) = small();
        let enc = StreamEncoder::new(cfg, shape).unwrap();
        let s = stream(12, shape.dims, 1);
        let wrong = StreamConfig {
            window: 3,
            interval: 1,
            text_window: 1,
            audio_window: 1,
        };
        let w = extract_model_window(&s, 4, &wrong).unwrap();
        assert!(matches!(enc.score(&w), Err(Error::Dimension(_))));
    }

    #[test]
    fn same_seed_same_init() {
        let (cfg, shape, _) = small();
        let a = StreamEncoder::new(cfg.clone(), shape).unwrap();
        let b = StreamEncoder::new(cfg, shape).unwrap();
        assert_eq!(a.params(), b.params());
    }
}
