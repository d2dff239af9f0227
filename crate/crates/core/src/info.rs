//! Information amount of a category: half the base-2 log-determinant of
//! `I + Σ̃`, where `Σ̃` is the population covariance with every eigenvalue
//! floored at the lower Marchenko–Pastur edge `(1 − √(p/m))²`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{compute_local_stats, CategoryId, EmbeddingRecord, GlobalStats};

const SYMMETRY_TOL: f64 = 1e-9;
const PSD_TOL: f64 = 1e-6;

/// Dimension and sample count that fix the eigenvalue floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShrinkageSpec {
    pub p: usize,
    pub m: usize,
    pub lambda_minus: f64,
}

impl ShrinkageSpec {
    pub fn new(p: usize, m: usize) -> Result<Self> {
        if p == 0 || m == 0 {
            return Err(Error::input(format!(
                "shrinkage needs p >= 1 and m >= 1 (got p = {p}, m = {m})"
            )));
        }
        let ratio = p as f64 / m as f64;
        let lambda_minus = if p == m { 0.0 } else { (1.0 - ratio.sqrt()).powi(2) };
        Ok(Self { p, m, lambda_minus })
    }
}

fn check_symmetric(cov: &DMatrix<f64>) -> Result<()> {
    if !cov.is_square() {
        return Err(Error::input(format!(
            "covariance must be square, got {}x{}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("covariance has non-finite entries"));
    }
    let scale = cov.amax().max(1.0);
    let n = cov.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (cov[(i, j)] - cov[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::input(format!(
                    "covariance is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

fn eigen(cov: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let eig = SymmetricEigen::try_new(cov.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::numerical("symmetric eigendecomposition did not converge"))?;
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("eigendecomposition produced non-finite values"));
    }
    Ok(eig)
}

/// Floor every eigenvalue of `cov` at `spec.lambda_minus` and reconstruct.
pub fn shrink_covariance(cov: &DMatrix<f64>, spec: &ShrinkageSpec) -> Result<DMatrix<f64>> {
    check_symmetric(cov)?;
    if cov.nrows() != spec.p {
        return Err(Error::input(format!(
            "covariance is {}x{} but shrinkage spec has p = {}",
            cov.nrows(),
            cov.ncols(),
            spec.p
        )));
    }
    let eig = eigen(cov)?;
    // rounding can leave tiny negative eigenvalues on a PSD input
    let floored = eig.eigenvalues.map(|l| l.max(0.0).max(spec.lambda_minus));
    let v = &eig.eigenvectors;
    let mut out = v * DMatrix::from_diagonal(&floored) * v.transpose();
    crate::stats::symmetrize(&mut out);
    Ok(out)
}

/// `½ Σ_k log₂(1 + λ_k)` over the eigenvalues of a PSD matrix, in bits.
pub fn information_amount(cov_shrunk: &DMatrix<f64>) -> Result<f64> {
    check_symmetric(cov_shrunk)?;
    let eig = eigen(cov_shrunk)?;
    let mut bits = 0.0;
    for &l in eig.eigenvalues.iter() {
        if l < -PSD_TOL {
            return Err(Error::input(format!(
                "matrix is not positive semidefinite (eigenvalue {l:e})"
            )));
        }
        bits += l.max(0.0).ln_1p();
    }
    Ok(0.5 * bits / std::f64::consts::LN_2)
}

/// Information amount of a covariance estimated from `m` samples.
pub fn information_from_covariance(cov: &DMatrix<f64>, m: usize) -> Result<f64> {
    let spec = ShrinkageSpec::new(cov.nrows(), m)?;
    information_amount(&shrink_covariance(cov, &spec)?)
}

/// Center, take the population covariance, shrink and measure. Rows of
/// `embeddings` are instances.
pub fn information_amount_from_embeddings(embeddings: &DMatrix<f64>) -> Result<f64> {
    let m = embeddings.nrows();
    if m == 0 {
        return Err(Error::input("need at least one embedding"));
    }
    let records: Vec<EmbeddingRecord> = embeddings
        .row_iter()
        .map(|r| EmbeddingRecord::new(0, r.iter().copied().collect::<Vec<_>>()))
        .collect();
    let stats = compute_local_stats(&records)?;
    information_from_covariance(&stats[0].cov, m)
}

/// Per-category information amounts (bits) for one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfoAmountTable {
    pub epoch: u64,
    pub info: BTreeMap<CategoryId, f64>,
}

impl InfoAmountTable {
    /// Compute every present category from merged statistics, using its total
    /// count as the sample size. Categories absent from `stats` keep their value
    /// from `previous` when there is one.
    pub fn from_global(
        stats: &GlobalStats,
        epoch: u64,
        previous: Option<&InfoAmountTable>,
    ) -> Result<Self> {
        let mut info = BTreeMap::new();
        for (&id, s) in &stats.categories {
            let bits = information_from_covariance(&s.cov, s.total)?;
            if !bits.is_finite() || bits < 0.0 {
                return Err(Error::numerical(format!(
                    "category {id} produced information amount {bits}"
                )));
            }
            info.insert(id, bits);
        }
        if let Some(prev) = previous {
            for id in &stats.absent {
                if let Some(&v) = prev.info.get(id) {
                    info.insert(*id, v);
                }
            }
        }
        Ok(Self { epoch, info })
    }

    pub fn validate(&self) -> Result<()> {
        for (id, v) in &self.info {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::input(format!(
                    "category {id} has invalid information amount {v}"
                )));
            }
        }
        Ok(())
    }
}
