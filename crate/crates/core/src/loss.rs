//! Information normalisation, margin matrix and the three classification losses.
//!
//! For a sample of class `i` the information-guided angular-margin (IGAM) loss is
//!
//! ```text
//! L = −log( e^{s·cos θ_i} / (e^{s·cos θ_i} + Σ_{j≠i} e^{s·cos(θ_j + m_ij)}) )
//! m_ij = max(0, ln(I′_i / I′_j) / π)
//! I′_i = C · exp(exp(x_i)) / Σ_j exp(x_j) + 1,   x_i = I_i / (Ī·√C),   Ī = Σ_j I_j
//! ```
//!
//! With an all-zero margin matrix it is exactly the normalised-cosine loss.
//! Margins only move non-target angles; the target angle is untouched.

use std::f64::consts::PI;
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::info::InfoAmountTable;
use crate::stats::CategoryId;

/// Scale applied to cosine logits when none is given.
pub const DEFAULT_SCALE: f64 = 30.0;

/// Cosines this close to ±1 make the margin derivative singular.
const SINGULAR_COS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InfoVariant {
    /// Double exponential in the numerator, single in the denominator.
    #[default]
    PaperDoubleExp,
    /// Plain softmax: single exponential in both.
    SoftmaxSingleExp,
}

/// How the reference information level Ī is formed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InfoScale {
    #[default]
    Sum,
    Mean,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarginVariant {
    /// `max(0, ·)`: only categories with more information get margins.
    #[default]
    Clamped,
    /// Keep negative log-ratios as negative margins.
    Signed,
}

#[derive(Debug, Clone)]
pub struct InfoNormalization {
    /// Category ids in column order.
    pub ids: Vec<CategoryId>,
    pub raw: Vec<f64>,
    pub i_bar: f64,
    /// `I′_i`. May be `+inf` under [`InfoScale::Mean`] with many classes; the margin
    /// computation uses `log_normalized` and never overflows.
    pub normalized: Vec<f64>,
    pub log_normalized: Vec<f64>,
    pub variant: InfoVariant,
    /// Every raw amount was zero, so all categories normalise to the same value.
    pub degenerate: bool,
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `ln(1 + e^a)` without overflow.
fn softplus(a: f64) -> f64 {
    if a > 0.0 {
        a + (-a).exp().ln_1p()
    } else {
        a.exp().ln_1p()
    }
}

/// Normalise a table of information amounts. Categories are ordered by id.
pub fn normalize_info(
    table: &InfoAmountTable,
    variant: InfoVariant,
    scale: InfoScale,
) -> Result<InfoNormalization> {
    table.validate()?;
    let c = table.info.len();
    if c < 2 {
        return Err(Error::input(format!(
            "normalisation needs at least 2 categories, got {c}"
        )));
    }
    let ids: Vec<CategoryId> = table.info.keys().copied().collect();
    let raw: Vec<f64> = table.info.values().copied().collect();
    let sum: f64 = raw.iter().sum();
    let i_bar = match scale {
        InfoScale::Sum => sum,
        InfoScale::Mean => sum / c as f64,
    };
    let degenerate = i_bar == 0.0;
    let cf = c as f64;
    let x: Vec<f64> = if degenerate {
        vec![0.0; c]
    } else {
        raw.iter().map(|v| v / (i_bar * cf.sqrt())).collect()
    };
    let log_den = log_sum_exp(x.iter().copied());
    // a_i = ln(I′_i − 1)
    let a: Vec<f64> = x
        .iter()
        .map(|&xi| {
            let num = match variant {
                InfoVariant::PaperDoubleExp => xi.exp(),
                InfoVariant::SoftmaxSingleExp => xi,
            };
            num - log_den + cf.ln()
        })
        .collect();
    let normalized = a.iter().map(|&ai| ai.exp() + 1.0).collect();
    let log_normalized = a.iter().map(|&ai| softplus(ai)).collect();
    Ok(InfoNormalization {
        ids,
        raw,
        i_bar,
        normalized,
        log_normalized,
        variant,
        degenerate,
    })
}

/// C×C angular margins in radians, indexed `[target][other]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginMatrix {
    m: DMatrix<f64>,
}

impl MarginMatrix {
    pub fn zeros(classes: usize) -> Self {
        Self {
            m: DMatrix::zeros(classes, classes),
        }
    }

    pub fn from_row_major(classes: usize, values: &[f64]) -> Result<Self> {
        if values.len() != classes * classes {
            return Err(Error::input(format!(
                "margin matrix for {classes} classes needs {} entries, got {}",
                classes * classes,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("margin matrix has non-finite entries"));
        }
        Ok(Self {
            m: DMatrix::from_row_slice(classes, classes, values),
        })
    }

    pub fn classes(&self) -> usize {
        self.m.nrows()
    }

    pub fn get(&self, target: usize, other: usize) -> f64 {
        self.m[(target, other)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn transposed(&self) -> Self {
        Self {
            m: self.m.transpose(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.m.amax()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.m.row_iter().map(|r| r.sum()).collect()
    }

    pub fn to_file(&self) -> MarginFile {
        MarginFile {
            classes: self.classes(),
            margins_row_major: self.m.transpose().iter().copied().collect(),
        }
    }

    pub fn from_file(file: &MarginFile) -> Result<Self> {
        Self::from_row_major(file.classes, &file.margins_row_major)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginFile {
    #[serde(rename = "C")]
    pub classes: usize,
    pub margins_row_major: Vec<f64>,
}

/// Margins from natural-log ratios of normalised amounts given in log space.
pub fn margins_from_log_normalized(log_normalized: &[f64], variant: MarginVariant) -> MarginMatrix {
    let c = log_normalized.len();
    let m = DMatrix::from_fn(c, c, |i, j| {
        if i == j {
            return 0.0;
        }
        let v = (log_normalized[i] - log_normalized[j]) / PI;
        match variant {
            MarginVariant::Clamped => v.max(0.0),
            MarginVariant::Signed => v,
        }
    });
    MarginMatrix { m }
}

/// Margins from positive normalised amounts.
pub fn margins_from_normalized(normalized: &[f64], variant: MarginVariant) -> Result<MarginMatrix> {
    if let Some(v) = normalized.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::input(format!(
            "normalised information amounts must be positive and finite, got {v}"
        )));
    }
    let logs: Vec<f64> = normalized.iter().map(|v| v.ln()).collect();
    Ok(margins_from_log_normalized(&logs, variant))
}

pub fn build_margins(norm: &InfoNormalization, variant: MarginVariant) -> Result<MarginMatrix> {
    if norm.log_normalized.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::input("normalised information amounts must exceed 1"));
    }
    Ok(margins_from_log_normalized(&norm.log_normalized, variant))
}

/// Margin matrix published to readers as whole snapshots.
#[derive(Debug)]
pub struct SharedMargins {
    current: RwLock<Arc<MarginMatrix>>,
}

impl SharedMargins {
    pub fn new(initial: MarginMatrix) -> Self {
        Self {
            current: RwLock::new(Arc::new(initial)),
        }
    }

    pub fn load(&self) -> Arc<MarginMatrix> {
        Arc::clone(&self.current.read().unwrap_or_else(|e| e.into_inner()))
    }

    pub fn store(&self, next: MarginMatrix) {
        *self.current.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(next);
    }
}

/// Linear classifier with one weight column per class.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineClassifier {
    /// p×C.
    pub weights: DMatrix<f64>,
    pub scale: f64,
}

impl CosineClassifier {
    pub fn new(weights: DMatrix<f64>, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::input(format!("scale must be positive, got {scale}")));
        }
        let clf = Self { weights, scale };
        clf.check_columns()?;
        Ok(clf)
    }

    fn check_columns(&self) -> Result<()> {
        if self.weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("weights contain non-finite values"));
        }
        if let Some(j) = self.weights.column_iter().position(|c| c.norm() == 0.0) {
            return Err(Error::input(format!("weight column {j} is zero")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn classes(&self) -> usize {
        self.weights.ncols()
    }

    /// `cos θ_j` for every class, clamped to [−1, 1].
    pub fn cosines(&self, x: &DVector<f64>) -> Result<Vec<f64>> {
        Ok(self.geometry(x)?.cos)
    }

    /// Class with the largest cosine (lowest index on ties).
    pub fn predict(&self, x: &DVector<f64>) -> Result<usize> {
        Ok(argmax(&self.cosines(x)?))
    }

    /// Class with the largest raw inner product.
    pub fn predict_linear(&self, x: &DVector<f64>) -> Result<usize> {
        check_features(x, self.dim())?;
        let logits = self.weights.tr_mul(x);
        Ok(argmax(logits.as_slice()))
    }

    fn geometry(&self, x: &DVector<f64>) -> Result<Geometry> {
        check_features(x, self.dim())?;
        let x_norm = x.norm();
        if x_norm == 0.0 {
            return Err(Error::input("feature vector is zero"));
        }
        let mut w_norm = Vec::with_capacity(self.classes());
        let mut cos = Vec::with_capacity(self.classes());
        for col in self.weights.column_iter() {
            let n = col.norm();
            if n == 0.0 {
                return Err(Error::input("weight column is zero"));
            }
            w_norm.push(n);
            cos.push((col.dot(x) / (n * x_norm)).clamp(-1.0, 1.0));
        }
        Ok(Geometry { x_norm, w_norm, cos })
    }
}

struct Geometry {
    x_norm: f64,
    w_norm: Vec<f64>,
    cos: Vec<f64>,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (j, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = j;
        }
    }
    best
}

fn check_features(x: &DVector<f64>, dim: usize) -> Result<()> {
    if x.len() != dim {
        return Err(Error::input(format!(
            "feature vector has dimension {}, classifier expects {dim}",
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("feature vector has non-finite values"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    /// ∂L/∂cos θ_j (∂L/∂logit_j for cross-entropy). Empty from `*_forward`.
    pub grad_cos: Vec<f64>,
    /// Empty from `*_forward`.
    pub grad_features: DVector<f64>,
    /// p×C. Empty from `*_forward`.
    pub grad_weights: DMatrix<f64>,
    /// Classes whose margin derivative was singular and taken as zero.
    pub singular: Vec<usize>,
}

/// Margin-shifted cosine `cos(θ + m)` and its derivative in `cos θ`.
///
/// The shifted angle is clamped to [0, π]. Returns `None` for the derivative when
/// it is singular (|cos θ| within 1e-9 of 1 on an active margin).
fn shifted_cosine(c: f64, m: f64) -> (f64, Option<f64>) {
    if m == 0.0 {
        return (c, Some(1.0));
    }
    let (cm, sm) = (m.cos(), m.sin());
    if m >= PI || (m > 0.0 && c <= -cm) {
        // θ + m ≥ π
        return (-1.0, Some(0.0));
    }
    if m <= -PI || (m < 0.0 && c >= cm) {
        // θ + m ≤ 0
        return (1.0, Some(0.0));
    }
    let sin_theta = (1.0 - c * c).max(0.0).sqrt();
    let value = c * cm - sin_theta * sm;
    if 1.0 - c.abs() < SINGULAR_COS {
        return (value, None);
    }
    (value, Some(cm + c * sm / sin_theta))
}

fn validate_label(label: usize, classes: usize) -> Result<()> {
    if label >= classes {
        return Err(Error::input(format!(
            "label {label} out of range for {classes} classes"
        )));
    }
    Ok(())
}

fn cosine_loss(
    x: &DVector<f64>,
    label: usize,
    clf: &CosineClassifier,
    margins: Option<&MarginMatrix>,
    with_grad: bool,
) -> Result<LossOutput> {
    let classes = clf.classes();
    validate_label(label, classes)?;
    if let Some(mm) = margins {
        if mm.classes() != classes {
            return Err(Error::input(format!(
                "margin matrix has {} classes, classifier has {classes}",
                mm.classes()
            )));
        }
    }
    let g = clf.geometry(x)?;
    let s = clf.scale;

    let mut logits = Vec::with_capacity(classes);
    let mut dphi = Vec::with_capacity(classes);
    let mut singular = Vec::new();
    for (j, &c) in g.cos.iter().enumerate() {
        let m = match margins {
            Some(mm) if j != label => mm.get(label, j),
            _ => 0.0,
        };
        let (phi, d) = shifted_cosine(c, m);
        logits.push(s * phi);
        dphi.push(d.unwrap_or_else(|| {
            singular.push(j);
            0.0
        }));
    }

    let lse = log_sum_exp(logits.iter().copied());
    let loss = lse - logits[label];
    if !loss.is_finite() {
        return Err(Error::numerical("loss is not finite"));
    }
    if !with_grad {
        return Ok(LossOutput {
            loss,
            grad_cos: Vec::new(),
            grad_features: DVector::zeros(0),
            grad_weights: DMatrix::zeros(0, 0),
            singular,
        });
    }

    let grad_cos: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(j, &z)| {
            let p = (z - lse).exp();
            let target = if j == label { 1.0 } else { 0.0 };
            s * (p - target) * dphi[j]
        })
        .collect();

    let dim = clf.dim();
    let x_norm2 = g.x_norm * g.x_norm;
    let mut grad_features = DVector::zeros(dim);
    let mut grad_weights = DMatrix::zeros(dim, classes);
    for (j, w) in clf.weights.column_iter().enumerate() {
        let gc = grad_cos[j];
        if gc == 0.0 {
            continue;
        }
        let wn = g.w_norm[j];
        let c = g.cos[j];
        // ∂c/∂x = w/(‖w‖‖x‖) − c·x/‖x‖²
        grad_features.axpy(gc / (wn * g.x_norm), &w, 1.0);
        grad_features.axpy(-gc * c / x_norm2, x, 1.0);
        // ∂c/∂w = x/(‖w‖‖x‖) − c·w/‖w‖²
        let mut col = grad_weights.column_mut(j);
        col.axpy(gc / (wn * g.x_norm), x, 1.0);
        col.axpy(-gc * c / (wn * wn), &w, 1.0);
    }

    Ok(LossOutput {
        loss,
        grad_cos,
        grad_features,
        grad_weights,
        singular,
    })
}

/// IGAM loss value only.
pub fn igam_forward(
    x: &DVector<f64>,
    label: usize,
    clf: &CosineClassifier,
    margins: &MarginMatrix,
) -> Result<LossOutput> {
    cosine_loss(x, label, clf, Some(margins), false)
}

/// IGAM loss with analytic gradients.
pub fn igam_backward(
    x: &DVector<f64>,
    label: usize,
    clf: &CosineClassifier,
    margins: &MarginMatrix,
) -> Result<LossOutput> {
    cosine_loss(x, label, clf, Some(margins), true)
}

/// Normalised-cosine softmax loss value only.
pub fn normface_forward(x: &DVector<f64>, label: usize, clf: &CosineClassifier) -> Result<LossOutput> {
    cosine_loss(x, label, clf, None, false)
}

pub fn normface_backward(x: &DVector<f64>, label: usize, clf: &CosineClassifier) -> Result<LossOutput> {
    cosine_loss(x, label, clf, None, true)
}

fn linear_loss(
    x: &DVector<f64>,
    label: usize,
    weights: &DMatrix<f64>,
    with_grad: bool,
) -> Result<LossOutput> {
    let classes = weights.ncols();
    validate_label(label, classes)?;
    check_features(x, weights.nrows())?;
    if weights.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("weights contain non-finite values"));
    }
    let logits = weights.tr_mul(x);
    let lse = log_sum_exp(logits.iter().copied());
    let loss = lse - logits[label];
    if !loss.is_finite() {
        return Err(Error::numerical("loss is not finite"));
    }
    if !with_grad {
        return Ok(LossOutput {
            loss,
            grad_cos: Vec::new(),
            grad_features: DVector::zeros(0),
            grad_weights: DMatrix::zeros(0, 0),
            singular: Vec::new(),
        });
    }
    let mut delta = logits.map(|z| (z - lse).exp());
    delta[label] -= 1.0;
    Ok(LossOutput {
        loss,
        grad_features: weights * &delta,
        grad_weights: x * delta.transpose(),
        grad_cos: delta.iter().copied().collect(),
        singular: Vec::new(),
    })
}

/// Softmax cross-entropy over raw inner products `W_jᵀx`.
pub fn ce_forward(x: &DVector<f64>, label: usize, weights: &DMatrix<f64>) -> Result<LossOutput> {
    linear_loss(x, label, weights, false)
}

pub fn ce_backward(x: &DVector<f64>, label: usize, weights: &DMatrix<f64>) -> Result<LossOutput> {
    linear_loss(x, label, weights, true)
}
