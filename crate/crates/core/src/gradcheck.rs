//! Scalar objectives over flat parameter vectors, and a central-difference
//! checker for their analytic gradients.

use crate::error::{Error, Result};
use crate::losses::{contrastive_loss_grad, cross_modal_loss_grad, iou_weighted_ce_logits, total_loss_grad, BatchEmbeddings, LossConfig};
use crate::matrix::Matrix;
use crate::stream::ClassId;

/// A differentiable scalar function of a flat parameter vector.
pub trait Objective {
    fn dim(&self) -> usize;

    fn value(&self, params: &[f64]) -> Result<f64> {
        Ok(self.value_and_gradient(params)?.0)
    }

    fn value_and_gradient(&self, params: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// Analytic gradient of `objective` at `params`, rejecting non-finite entries.
pub fn gradient<O: Objective + ?Sized>(objective: &O, params: &[f64]) -> Result<Vec<f64>> {
    if params.len() != objective.dim() {
        return Err(Error::Dimension(format!(
            "{} parameters for an objective of dimension {}",
            params.len(),
            objective.dim()
        )));
    }
    let (_, grad) = objective.value_and_gradient(params)?;
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            index,
            context: "gradient".into(),
        });
    }
    Ok(grad)
}

/// Relative error with an absolute floor, so coordinates whose true
/// derivative is ~0 are judged by absolute error instead.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub passed: bool,
    pub max_rel_error: f64,
    /// Coordinate with the largest relative error.
    pub worst_index: usize,
    /// Every coordinate whose relative error exceeds the tolerance.
    pub failing: Vec<usize>,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.passed {
            write!(f, "pass (max rel err {:.3e} at {})", self.max_rel_error, self.worst_index)
        } else {
            write!(
                f,
                "FAIL (max rel err {:.3e} at coordinate {}; {} coordinates over tolerance)",
                self.max_rel_error,
                self.worst_index,
                self.failing.len()
            )
        }
    }
}

/// Compares `analytic` with central differences of `objective` at `params`.
pub fn check_against<O: Objective + ?Sized>(objective: &O, params: &[f64], analytic: &[f64], h: f64, tol: f64) -> Result<GradCheckReport> {
    if !(h > 0.0) {
        return Err(Error::Config(format!("step h = {h} must be > 0")));
    }
    let mut probe = params.to_vec();
    let mut report = GradCheckReport {
        passed: true,
        max_rel_error: 0.0,
        worst_index: 0,
        failing: Vec::new(),
    };
    for k in 0..params.len() {
        let orig = probe[k];
        probe[k] = orig + h;
        let plus = objective.value(&probe)?;
        probe[k] = orig - h;
        let minus = objective.value(&probe)?;
        probe[k] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let err = relative_error(analytic[k], numeric);
        if !(err <= report.max_rel_error) {
            report.max_rel_error = err;
            report.worst_index = k;
        }
        if !(err <= tol) {
            report.failing.push(k);
        }
    }
    report.passed = report.failing.is_empty();
    Ok(report)
}

pub fn finite_difference_check<O: Objective + ?Sized>(objective: &O, params: &[f64], h: f64, tol: f64) -> Result<GradCheckReport> {
    let analytic = gradient(objective, params)?;
    check_against(objective, params, &analytic, h, tol)
}

/// Objective backed by a pair of closures.
pub struct FnObjective<F, G> {
    dim: usize,
    value: F,
    grad: G,
}

impl<F, G> FnObjective<F, G>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    pub fn new(dim: usize, value: F, grad: G) -> Self {
        FnObjective { dim, value, grad }
    }
}

impl<F, G> Objective for FnObjective<F, G>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, params: &[f64]) -> Result<f64> {
        Ok((self.value)(params))
    }

    fn value_and_gradient(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok(((self.value)(params), (self.grad)(params)))
    }
}

fn split_matrices(params: &[f64], rows: usize, cols: usize, count: usize) -> Result<Vec<Matrix>> {
    if params.len() != rows * cols * count {
        return Err(Error::Dimension(format!(
            "{} parameters for {count} matrices of {rows}x{cols}",
            params.len()
        )));
    }
    params
        .chunks_exact(rows * cols)
        .map(|c| Matrix::from_vec(rows, cols, c.to_vec()))
        .collect()
}

/// Contrastive loss as a function of `[X | Y]` flattened row-major.
#[derive(Clone, Debug)]
pub struct ContrastiveObjective {
    pub batch: usize,
    pub embed_dim: usize,
    pub tau: f64,
}

impl Objective for ContrastiveObjective {
    fn dim(&self) -> usize {
        2 * self.batch * self.embed_dim
    }

    fn value_and_gradient(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        let m = split_matrices(params, self.batch, self.embed_dim, 2)?;
        let (loss, gx, gy) = contrastive_loss_grad(&m[0], &m[1], self.tau)?;
        let mut g = gx.into_vec();
        g.extend(gy.into_vec());
        Ok((loss, g))
    }
}

/// Cross-modal loss as a function of `[text | visual | audio]`.
#[derive(Clone, Debug)]
pub struct CrossModalObjective {
    pub batch: usize,
    pub embed_dim: usize,
    pub alpha: f64,
    pub tau: f64,
}

impl Objective for CrossModalObjective {
    fn dim(&self) -> usize {
        3 * self.batch * self.embed_dim
    }

    fn value_and_gradient(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut m = split_matrices(params, self.batch, self.embed_dim, 3)?.into_iter();
        let emb = BatchEmbeddings::new(m.next().unwrap(), m.next().unwrap(), m.next().unwrap())?;
        let (loss, g) = cross_modal_loss_grad(&emb, self.alpha, self.tau)?;
        let mut out = g.text.into_vec();
        out.extend(g.visual.into_vec());
        out.extend(g.audio.into_vec());
        Ok((loss, out))
    }
}

/// IoU-weighted cross-entropy as a function of the logits.
#[derive(Clone, Debug)]
pub struct IouCeObjective {
    pub classes: usize,
    pub targets: Vec<ClassId>,
    pub iou: Vec<f64>,
    pub beta: f64,
    pub prob_floor: f64,
}

impl Objective for IouCeObjective {
    fn dim(&self) -> usize {
        self.targets.len() * self.classes
    }

    fn value_and_gradient(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        let logits = Matrix::from_vec(self.targets.len(), self.classes, params.to_vec())?;
        let (loss, g) = iou_weighted_ce_logits(&logits, &self.targets, &self.iou, self.beta, self.prob_floor)?;
        Ok((loss, g.into_vec()))
    }
}

/// Combined objective as a function of `[text | visual | audio | logits]`.
#[derive(Clone, Debug)]
pub struct TotalObjective {
    pub embed_dim: usize,
    pub classes: usize,
    pub targets: Vec<ClassId>,
    pub iou: Vec<f64>,
    pub config: LossConfig,
}

impl Objective for TotalObjective {
    fn dim(&self) -> usize {
        let b = self.targets.len();
        3 * b * self.embed_dim + b * self.classes
    }

    fn value_and_gradient(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        let b = self.targets.len();
        let split = 3 * b * self.embed_dim;
        if params.len() != self.dim() {
            return Err(Error::Dimension(format!("{} parameters, expected {}", params.len(), self.dim())));
        }
        let mut m = split_matrices(&params[..split], b, self.embed_dim, 3)?.into_iter();
        let emb = BatchEmbeddings::new(m.next().unwrap(), m.next().unwrap(), m.next().unwrap())?;
        let logits = Matrix::from_vec(b, self.classes, params[split..].to_vec())?;
        let (loss, ge, gl) = total_loss_grad(&emb, &logits, &self.targets, &self.iou, &self.config)?;
        let mut out = ge.text.into_vec();
        out.extend(ge.visual.into_vec());
        out.extend(ge.audio.into_vec());
        out.extend(gl.into_vec());
        Ok((loss, out))
    }
}
