//! Training objective kernels and their analytic gradients.
//!
//! The encoder objective is `cross_modal_loss + iou_weighted_ce`: an
//! InfoNCE-style alignment of visual and audio window embeddings against the
//! text embedding, plus a cross-entropy whose per-sample weight is the
//! temporal IoU of the context window with its ground-truth segment raised
//! to `beta`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, log_sum_exp, norm, softmax_in_place, Matrix};
use crate::stream::ClassId;

pub const DEFAULT_PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the cross-modal contrastive term.
    pub alpha: f64,
    /// Exponent applied to the IoU weight.
    pub beta: f64,
    /// Contrastive temperature.
    pub tau: f64,
    /// Probabilities below this are clamped before taking the log.
    pub prob_floor: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.25,
            beta: 1.0,
            tau: 0.07,
            prob_floor: DEFAULT_PROB_FLOOR,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("alpha = {} must be >= 0", self.alpha)));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!("beta = {} must be >= 0", self.beta)));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Config(format!("tau = {} must be > 0", self.tau)));
        }
        if !(self.prob_floor > 0.0 && self.prob_floor < 1.0) {
            return Err(Error::Config(format!("prob_floor = {} must lie in (0, 1)", self.prob_floor)));
        }
        Ok(())
    }
}

pub fn cosine_similarity(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!("cosine of vectors of width {} and {}", x.len(), y.len())));
    }
    let (nx, ny) = (norm(x), norm(y));
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::Invalid("cosine similarity of a zero vector is undefined".into()));
    }
    Ok((dot(x, y) / (nx * ny)).clamp(-1.0, 1.0))
}

/// Accumulates `scale * d cos(x, y) / dx` into `gx` and the `y` counterpart into `gy`.
fn accumulate_cosine_grad(x: &[f64], y: &[f64], scale: f64, gx: &mut [f64], gy: &mut [f64]) {
    let (nx, ny) = (norm(x), norm(y));
    let inv = 1.0 / (nx * ny);
    let cos = dot(x, y) * inv;
    let (cx, cy) = (cos / (nx * nx), cos / (ny * ny));
    for k in 0..x.len() {
        gx[k] += scale * (y[k] * inv - cx * x[k]);
        gy[k] += scale * (x[k] * inv - cy * y[k]);
    }
}

fn check_pair(x: &Matrix, y: &Matrix) -> Result<()> {
    if x.rows() != y.rows() || x.cols() != y.cols() {
        return Err(Error::Dimension(format!(
            "contrastive inputs {}x{} and {}x{}",
            x.rows(),
            x.cols(),
            y.rows(),
            y.cols()
        )));
    }
    if x.rows() == 0 {
        return Err(Error::Invalid("contrastive loss needs at least one row".into()));
    }
    for m in [x, y] {
        if let Some(idx) = m.first_non_finite() {
            return Err(Error::NonFinite {
                index: idx,
                context: "contrastive input".into(),
            });
        }
        if let Some(r) = m.iter_rows().position(|row| norm(row) == 0.0) {
            return Err(Error::Invalid(format!("contrastive input row {r} is a zero vector")));
        }
    }
    Ok(())
}

fn similarity_logits(x: &Matrix, y: &Matrix, tau: f64) -> Matrix {
    let b = x.rows();
    let mut logits = Matrix::zeros(b, b);
    for i in 0..b {
        let xi = x.row(i);
        let nx = norm(xi);
        for j in 0..b {
            let yj = y.row(j);
            logits.set(i, j, dot(xi, yj) / (nx * norm(yj)) / tau);
        }
    }
    logits
}

/// Batch contrastive loss between paired rows of `x` and `y`; row `i` of
/// each is a positive pair and every `j != i` a negative.
pub fn contrastive_loss(x: &Matrix, y: &Matrix, tau: f64) -> Result<f64> {
    Ok(contrastive_loss_grad_impl(x, y, tau, false)?.0)
}

/// Loss and gradients with respect to `x` and `y`.
pub fn contrastive_loss_grad(x: &Matrix, y: &Matrix, tau: f64) -> Result<(f64, Matrix, Matrix)> {
    let (loss, grads) = contrastive_loss_grad_impl(x, y, tau, true)?;
    let (gx, gy) = grads.expect("gradients requested");
    Ok((loss, gx, gy))
}

fn contrastive_loss_grad_impl(x: &Matrix, y: &Matrix, tau: f64, with_grad: bool) -> Result<(f64, Option<(Matrix, Matrix)>)> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature {tau} must be > 0")));
    }
    check_pair(x, y)?;
    let b = x.rows();
    let mut logits = similarity_logits(x, y, tau);
    let mut loss = 0.0;
    for i in 0..b {
        let row = logits.row(i);
        loss += log_sum_exp(row) - row[i];
    }
    loss /= b as f64;
    if !with_grad {
        return Ok((loss, None));
    }
    // dL/ds_ij = (softmax_i(j) - [i == j]) / (B * tau)
    let mut gx = Matrix::zeros(b, x.cols());
    let mut gy = Matrix::zeros(b, y.cols());
    let scale = 1.0 / (b as f64 * tau);
    for i in 0..b {
        softmax_in_place(logits.row_mut(i));
        for j in 0..b {
            let mut d = logits.get(i, j);
            if i == j {
                d -= 1.0;
            }
            let (gxi, gyj) = split_two_rows(&mut gx, i, &mut gy, j);
            accumulate_cosine_grad(x.row(i), y.row(j), d * scale, gxi, gyj);
        }
    }
    Ok((loss, Some((gx, gy))))
}

fn split_two_rows<'a>(a: &'a mut Matrix, i: usize, b: &'a mut Matrix, j: usize) -> (&'a mut [f64], &'a mut [f64]) {
    (a.row_mut(i), b.row_mut(j))
}

/// Window-level embeddings of one batch, one row per window.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchEmbeddings {
    pub text: Matrix,
    pub visual: Matrix,
    pub audio: Matrix,
}

impl BatchEmbeddings {
    pub fn new(text: Matrix, visual: Matrix, audio: Matrix) -> Result<Self> {
        let shape = (text.rows(), text.cols());
        for (name, m) in [("visual", &visual), ("audio", &audio)] {
            if (m.rows(), m.cols()) != shape {
                return Err(Error::Dimension(format!(
                    "{name} embeddings {}x{} differ from text {}x{}",
                    m.rows(),
                    m.cols(),
                    shape.0,
                    shape.1
                )));
            }
        }
        if shape.0 == 0 {
            return Err(Error::Invalid("empty embedding batch".into()));
        }
        Ok(BatchEmbeddings { text, visual, audio })
    }

    pub fn batch_size(&self) -> usize {
        self.text.rows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingGrads {
    pub text: Matrix,
    pub visual: Matrix,
    pub audio: Matrix,
}

/// `(alpha / 2) * (contrastive(text, visual) + contrastive(text, audio))`.
pub fn cross_modal_loss(emb: &BatchEmbeddings, alpha: f64, tau: f64) -> Result<f64> {
    if alpha == 0.0 {
        return Ok(0.0);
    }
    let tv = contrastive_loss(&emb.text, &emb.visual, tau)?;
    let ta = contrastive_loss(&emb.text, &emb.audio, tau)?;
    Ok(0.5 * alpha * (tv + ta))
}

pub fn cross_modal_loss_grad(emb: &BatchEmbeddings, alpha: f64, tau: f64) -> Result<(f64, EmbeddingGrads)> {
    let (b, e) = (emb.text.rows(), emb.text.cols());
    if alpha == 0.0 {
        return Ok((
            0.0,
            EmbeddingGrads {
                text: Matrix::zeros(b, e),
                visual: Matrix::zeros(b, e),
                audio: Matrix::zeros(b, e),
            },
        ));
    }
    let (tv, mut gt, mut gv) = contrastive_loss_grad(&emb.text, &emb.visual, tau)?;
    let (ta, gt2, mut ga) = contrastive_loss_grad(&emb.text, &emb.audio, tau)?;
    gt.add_assign(&gt2);
    let k = 0.5 * alpha;
    gt.scale(k);
    gv.scale(k);
    ga.scale(k);
    Ok((
        k * (tv + ta),
        EmbeddingGrads {
            text: gt,
            visual: gv,
            audio: ga,
        },
    ))
}

/// Class probabilities, targets and IoU weights for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct SupervisedBatch {
    probs: Matrix,
    targets: Vec<ClassId>,
    iou: Vec<f64>,
}

impl SupervisedBatch {
    pub fn new(probs: Matrix, targets: Vec<ClassId>, iou: Vec<f64>) -> Result<Self> {
        check_targets(probs.rows(), probs.cols(), &targets, &iou)?;
        for (r, row) in probs.iter_rows().enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Invalid(format!("probability row {r} has entries outside [0, 1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::Invalid(format!("probability row {r} sums to {s}")));
            }
        }
        Ok(SupervisedBatch { probs, targets, iou })
    }

    /// Builds a batch from unnormalized scores via a row-wise softmax.
    pub fn from_logits(logits: &Matrix, targets: Vec<ClassId>, iou: Vec<f64>) -> Result<Self> {
        SupervisedBatch::new(softmax_rows(logits), targets, iou)
    }

    pub fn probs(&self) -> &Matrix {
        &self.probs
    }

    pub fn targets(&self) -> &[ClassId] {
        &self.targets
    }

    pub fn iou(&self) -> &[f64] {
        &self.iou
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

fn check_targets(rows: usize, cols: usize, targets: &[ClassId], iou: &[f64]) -> Result<()> {
    if rows == 0 {
        return Err(Error::Invalid("empty supervised batch".into()));
    }
    if targets.len() != rows || iou.len() != rows {
        return Err(Error::Dimension(format!(
            "{rows} rows, {} targets, {} iou weights",
            targets.len(),
            iou.len()
        )));
    }
    if let Some(i) = targets.iter().position(|t| *t >= cols) {
        return Err(Error::Invalid(format!("target {} at row {i} outside {cols} classes", targets[i])));
    }
    if let Some(i) = iou.iter().position(|w| !(0.0..=1.0).contains(w)) {
        return Err(Error::Invalid(format!("iou weight {} at row {i} outside [0, 1]", iou[i])));
    }
    Ok(())
}

pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

/// `iou^beta` with `0^0 = 1`.
pub fn iou_weight(iou: f64, beta: f64) -> f64 {
    if beta == 0.0 {
        1.0
    } else {
        iou.powf(beta)
    }
}

/// `-(1/B) * sum_i iou_i^beta * log p(y_i | x_i)`.
pub fn iou_weighted_ce(batch: &SupervisedBatch, beta: f64, prob_floor: f64) -> Result<f64> {
    if !(beta >= 0.0) {
        return Err(Error::Config(format!("beta = {beta} must be >= 0")));
    }
    let mut total = 0.0;
    for (i, (&y, &w)) in batch.targets.iter().zip(&batch.iou).enumerate() {
        let p = batch.probs.get(i, y).max(prob_floor);
        total -= iou_weight(w, beta) * p.ln();
    }
    Ok(total / batch.len() as f64)
}

/// Unweighted mean cross-entropy of the target classes.
pub fn cross_entropy(probs: &Matrix, targets: &[ClassId], prob_floor: f64) -> f64 {
    let total: f64 = targets
        .iter()
        .enumerate()
        .map(|(i, &y)| -probs.get(i, y).max(prob_floor).ln())
        .sum();
    total / targets.len() as f64
}

/// IoU-weighted cross-entropy evaluated on logits, with the gradient
/// with respect to those logits.
pub fn iou_weighted_ce_logits(logits: &Matrix, targets: &[ClassId], iou: &[f64], beta: f64, prob_floor: f64) -> Result<(f64, Matrix)> {
    check_targets(logits.rows(), logits.cols(), targets, iou)?;
    if let Some(idx) = logits.first_non_finite() {
        return Err(Error::NonFinite {
            index: idx,
            context: "logits".into(),
        });
    }
    let b = logits.rows();
    let log_floor = prob_floor.ln();
    let mut grad = softmax_rows(logits);
    let mut total = 0.0;
    for i in 0..b {
        let y = targets[i];
        let w = iou_weight(iou[i], beta);
        let row = logits.row(i);
        let logp = row[y] - log_sum_exp(row);
        let g = grad.row_mut(i);
        if logp < log_floor {
            // Clamped: the loss is flat in the logits here.
            total -= w * log_floor;
            g.iter_mut().for_each(|v| *v = 0.0);
            continue;
        }
        total -= w * logp;
        g[y] -= 1.0;
        g.iter_mut().for_each(|v| *v *= w / b as f64);
    }
    Ok((total / b as f64, grad))
}

pub fn total_loss(emb: &BatchEmbeddings, batch: &SupervisedBatch, config: &LossConfig) -> Result<f64> {
    if emb.batch_size() != batch.len() {
        return Err(Error::Dimension(format!(
            "embedding batch {} vs supervised batch {}",
            emb.batch_size(),
            batch.len()
        )));
    }
    Ok(cross_modal_loss(emb, config.alpha, config.tau)? + iou_weighted_ce(batch, config.beta, config.prob_floor)?)
}

/// Combined loss on logits with gradients for the embeddings and logits.
pub fn total_loss_grad(
    emb: &BatchEmbeddings,
    logits: &Matrix,
    targets: &[ClassId],
    iou: &[f64],
    config: &LossConfig,
) -> Result<(f64, EmbeddingGrads, Matrix)> {
    if emb.batch_size() != logits.rows() {
        return Err(Error::Dimension(format!(
            "embedding batch {} vs logits batch {}",
            emb.batch_size(),
            logits.rows()
        )));
    }
    let (cm, g_emb) = cross_modal_loss_grad(emb, config.alpha, config.tau)?;
    let (ce, g_logits) = iou_weighted_ce_logits(logits, targets, iou, config.beta, config.prob_floor)?;
    Ok((cm + ce, g_emb, g_logits))
}
