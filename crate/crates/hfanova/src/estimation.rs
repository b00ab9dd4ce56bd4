//! Per-frequency generalized least squares in the RKHS norm.
//!
//! Each frequency k is an independent weighted least-squares problem with
//! weight `Lambda_k^{-1}`; solves go through symmetric-PD factorizations,
//! and the normal-equation matrix inverse is materialized only where the
//! API returns it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::spectral::{invert_spd, CoefficientBlock, SpectralMatrixOperator};

/// Convergence report for the estimability series
/// `S_K = sum_{k<=K} trace((X^T Lambda_k^{-1} X)^{-1})`.
///
/// `converged` is a numerical tail-ratio judgment on the truncated series,
/// not a proof of convergence of the infinite one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimabilityReport {
    pub partial_sums: Vec<f64>,
    pub tail_ratio: f64,
    pub converged: bool,
    pub tail_tolerance: f64,
}

/// GLS fit: per-k estimates and the per-k estimator covariance sequence.
#[derive(Debug, Clone)]
pub struct GlsFit {
    pub beta_hat: CoefficientBlock,
    /// `(X^T Lambda_k^{-1} X)^{-1}` for each k.
    pub per_k_cov: SpectralMatrixOperator,
    pub estimability: EstimabilityReport,
}

fn normal_matrix(x: &DMatrix<f64>, lambda_k: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    let lam_inv = invert_spd(lambda_k, k)?;
    Ok(x.transpose() * lam_inv * x)
}

/// `beta_hat_k = (X^T Lambda_k^{-1} X)^{-1} X^T Lambda_k^{-1} Y_k` for
/// every k.
pub fn gls_fit(model: &ModelSpec, y: &CoefficientBlock) -> Result<GlsFit> {
    if y.k_max() != model.k_max() {
        return Err(Error::BasisMismatch(y.k_max(), model.k_max()));
    }
    if y.d() != model.n() {
        return Err(Error::Dimension(format!(
            "Y must have {} components, has {}",
            model.n(),
            y.d()
        )));
    }
    let x = &model.x;
    let mut beta = DMatrix::zeros(model.k_max(), model.p());
    let mut covs = Vec::with_capacity(model.k_max());
    for k in 0..model.k_max() {
        let lam_inv = invert_spd(model.lambda.mat(k), k + 1)?;
        let gram = x.transpose() * &lam_inv * x;
        let chol = nalgebra::Cholesky::new(gram.clone()).ok_or(Error::Singular {
            k: k + 1,
            rcond: 0.0,
        })?;
        let rhs = x.transpose() * &lam_inv * y.row_vec(k);
        let bk = chol.solve(&rhs);
        beta.row_mut(k).copy_from(&bk.transpose());
        covs.push(invert_spd(&gram, k + 1)?);
    }
    let per_k_cov = {
        let op = SpectralMatrixOperator::new(covs)?;
        SpectralMatrixOperator {
            symmetric: true,
            positive_definite: true,
            ..op
        }
    };
    let estimability = check_estimability(x, &model.lambda, model.k_max(), 1e-6)?;
    Ok(GlsFit {
        beta_hat: CoefficientBlock::new(beta)?,
        per_k_cov,
        estimability,
    })
}

/// Partial sums of `trace((X^T Lambda_k^{-1} X)^{-1})` with a tail-ratio
/// convergence verdict.
pub fn check_estimability(
    x: &DMatrix<f64>,
    lambda: &SpectralMatrixOperator,
    k_max: usize,
    tail_tolerance: f64,
) -> Result<EstimabilityReport> {
    let k_max = k_max.min(lambda.k_max());
    let mut partial = Vec::with_capacity(k_max);
    let mut acc = 0.0;
    let mut last = 0.0;
    for k in 0..k_max {
        let gram = normal_matrix(x, lambda.mat(k), k + 1)?;
        let inv = invert_spd(&gram, k + 1)?;
        last = inv.trace();
        acc += last;
        partial.push(acc);
    }
    let tail_ratio = if acc > 0.0 { last / acc } else { 0.0 };
    Ok(EstimabilityReport {
        partial_sums: partial,
        tail_ratio,
        converged: tail_ratio < tail_tolerance,
        tail_tolerance,
    })
}

/// Per-k covariance `Q_k = (X^T Lambda_k^{-1} X)^{-1}` of the estimator's
/// coefficient vectors.
pub fn estimator_covariance(
    x: &DMatrix<f64>,
    lambda: &SpectralMatrixOperator,
) -> Result<SpectralMatrixOperator> {
    let mut mats = Vec::with_capacity(lambda.k_max());
    for k in 0..lambda.k_max() {
        let gram = normal_matrix(x, lambda.mat(k), k + 1)?;
        mats.push(invert_spd(&gram, k + 1)?);
    }
    let op = SpectralMatrixOperator::new(mats)?;
    Ok(SpectralMatrixOperator {
        symmetric: true,
        positive_definite: true,
        ..op
    })
}

/// `E[y^T A y] = trace(A V) + mu^T A mu` for a random vector with mean
/// `mu` and covariance `V`.
pub fn expected_quadform(a: &DMatrix<f64>, mu: &DVector<f64>, v: &DMatrix<f64>) -> Result<f64> {
    let r = a.nrows();
    if a.ncols() != r || v.nrows() != r || v.ncols() != r || mu.len() != r {
        return Err(Error::Dimension("expected_quadform dimensions disagree".into()));
    }
    if (a - a.transpose()).norm() > 1e-10 * a.norm().max(1.0) {
        return Err(Error::Validation("quadratic-form matrix must be symmetric".into()));
    }
    Ok((a * v).trace() + (mu.transpose() * a * mu)[(0, 0)])
}
