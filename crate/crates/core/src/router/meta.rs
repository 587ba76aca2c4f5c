//! Learned routing: a two-layer MLP that reads a fixed-length history of
//! confidences and predicts whether the current prediction is wrong.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{init_dense, tanh_backward, tanh_in_place, Adam, Dense, ParamAllocator};

/// Value used for history slots before the stream start.
pub const HISTORY_PAD: f64 = 0.5;
pub(crate) const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaTrainConfig {
    /// Inputs per example; `N + 1` for a window of `N` past steps.
    pub history_len: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for MetaTrainConfig {
    fn default() -> Self {
        MetaTrainConfig {
            history_len: 33,
            hidden: 16,
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-2,
            seed: 0,
        }
    }
}

/// Keeps the last `len` values, left-padding with [`HISTORY_PAD`].
pub fn pad_history(recent: &[f64], len: usize) -> Vec<f64> {
    let take = recent.len().min(len);
    let mut out = vec![HISTORY_PAD; len - take];
    out.extend_from_slice(&recent[recent.len() - take..]);
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaModel {
    history_len: usize,
    hidden: usize,
    params: Vec<f64>,
}

impl MetaModel {
    fn layers(history_len: usize, hidden: usize) -> (Dense, Dense, usize) {
        let mut alloc = ParamAllocator::default();
        let l1 = alloc.dense(history_len, hidden);
        let l2 = alloc.dense(hidden, 1);
        (l1, l2, alloc.len)
    }

    pub fn history_len(&self) -> usize {
        self.history_len
    }

    fn logit_with(&self, params: &[f64], x: &[f64], h: &mut [f64]) -> f64 {
        let (l1, l2, _) = Self::layers(self.history_len, self.hidden);
        l1.forward(params, x, h);
        tanh_in_place(h);
        let mut z = [0.0];
        l2.forward(params, h, &mut z);
        z[0]
    }

    /// Probability that the prediction at the end of `history` is wrong.
    /// Short histories are left-padded, long ones truncated to the newest values.
    pub fn predict_proba(&self, history: &[f64]) -> f64 {
        let x = pad_history(history, self.history_len);
        let mut h = vec![0.0; self.hidden];
        sigmoid(self.logit_with(&self.params, &x, &mut h))
    }

    pub fn predict(&self, history: &[f64]) -> bool {
        self.predict_proba(history) > DECISION_THRESHOLD
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Fits a meta model with binary cross-entropy and Adam. `targets[k]` is
/// true when the prediction that ends `histories[k]` was wrong.
pub fn train_meta_router(histories: &[Vec<f64>], targets: &[bool], config: &MetaTrainConfig) -> Result<MetaModel> {
    if histories.len() != targets.len() {
        return Err(Error::Dimension(format!(
            "{} histories but {} targets",
            histories.len(),
            targets.len()
        )));
    }
    if config.history_len == 0 || config.hidden == 0 || config.batch_size == 0 {
        return Err(Error::Config(
            "meta router needs positive history_len, hidden and batch_size".into(),
        ));
    }
    let positives = targets.iter().filter(|t| **t).count();
    if positives == 0 || positives == targets.len() {
        return Err(Error::Invalid("meta router targets are all one class; nothing to learn".into()));
    }
    let xs: Vec<Vec<f64>> = histories.iter().map(|h| pad_history(h, config.history_len)).collect();
    if let Some(k) = xs.iter().position(|x| x.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite {
            index: k,
            context: "meta router history".into(),
        });
    }

    let (l1, l2, n) = MetaModel::layers(config.history_len, config.hidden);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = MetaModel {
        history_len: config.history_len,
        hidden: config.hidden,
        params: vec![0.0; n],
    };
    init_dense(&mut model.params, &l1, &mut rng);
    init_dense(&mut model.params, &l2, &mut rng);

    let mut adam = Adam::new(n, config.learning_rate);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut grad = vec![0.0; n];
    let mut h = vec![0.0; config.hidden];
    let mut dh = vec![0.0; config.hidden];
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &k in batch {
                let z = model.logit_with(&model.params, &xs[k], &mut h);
                let y = if targets[k] { 1.0 } else { 0.0 };
                let dz = [(sigmoid(z) - y) * scale];
                l2.backward(&model.params, &h, &dz, &mut grad, Some(&mut dh));
                tanh_backward(&h, &mut dh);
                l1.backward(&model.params, &xs[k], &dh, &mut grad, None);
            }
            adam.step(&mut model.params, &grad);
        }
    }
    Ok(model)
}
