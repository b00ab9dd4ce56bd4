//! Variance components of the weighted model.
//!
//! All sums of squares are taken on the transformed data `W_k Y_k` in the
//! norm induced by `Lambda_k^{-1}`:
//!
//! - `SST~ = sum_k (W_k Y_k)^T Lambda_k^{-1} (W_k Y_k)`
//! - `SSE~ = sum_k (M_k W_k Y_k)^T Lambda_k^{-1} (M_k W_k Y_k)`
//! - `SSR~ = SST~ - SSE~`
//!
//! with `M_k` the GLS residual projector. The subtraction is exact in
//! theory; per-k round-off slightly below zero is clamped and counted.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::distributions::{component_kernels, Component};
use crate::error::{Error, Result};
use crate::estimation::expected_quadform;
use crate::model::ModelSpec;
use crate::spectral::{invert_spd, CoefficientBlock};
use crate::weights::WeightOperator;

/// GLS residual projector `M_k = I - X (X^T Lambda_k^{-1} X)^{-1} X^T
/// Lambda_k^{-1}` (k is 1-based, for error reporting).
pub fn residual_projector(
    x: &DMatrix<f64>,
    lambda_k: &DMatrix<f64>,
    k: usize,
) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    if lambda_k.nrows() != n || lambda_k.ncols() != n {
        return Err(Error::Dimension(format!(
            "projector needs {n}x{n} covariance, got {}x{}",
            lambda_k.nrows(),
            lambda_k.ncols()
        )));
    }
    let lam_inv = invert_spd(lambda_k, k)?;
    let gram = x.transpose() * &lam_inv * x;
    let gram_inv = invert_spd(&gram, k)?;
    Ok(DMatrix::identity(n, n) - x * gram_inv * x.transpose() * lam_inv)
}

/// Observed variance components with per-k traces and clamp diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarianceComponents {
    pub sst: f64,
    pub sse: f64,
    pub ssr: f64,
    pub per_k_sst: Vec<f64>,
    pub per_k_sse: Vec<f64>,
    pub per_k_ssr: Vec<f64>,
    /// Count of per-k SSR values in [-1e-12, 0) clamped to zero.
    pub clamped: usize,
    /// Last-term-over-total ratio of the SST series.
    pub sst_tail_ratio: f64,
}

const CLAMP: f64 = 1e-12;

/// Computes the three components from data.
pub fn sum_squares(
    model: &ModelSpec,
    w: &WeightOperator,
    y: &CoefficientBlock,
) -> Result<VarianceComponents> {
    sum_squares_verified(model, w, y, false)
}

/// Same as [`sum_squares`]; with `verify` set, SSR is recomputed through
/// its explicit kernel `W^T Lambda^{-1} X (X^T Lambda^{-1} X)^{-1} X^T
/// Lambda^{-1} W` and the two routes must agree to 1e-10 relative.
pub fn sum_squares_verified(
    model: &ModelSpec,
    w: &WeightOperator,
    y: &CoefficientBlock,
    verify: bool,
) -> Result<VarianceComponents> {
    let k_max = model.k_max();
    if y.k_max() != k_max {
        return Err(Error::BasisMismatch(y.k_max(), k_max));
    }
    if y.d() != model.n() || w.w.k_max() != k_max {
        return Err(Error::Dimension("data or weights do not match the model".into()));
    }
    let x = &model.x;
    let mut per_sst = Vec::with_capacity(k_max);
    let mut per_sse = Vec::with_capacity(k_max);
    let mut per_ssr = Vec::with_capacity(k_max);
    let mut clamped = 0;
    let ssr_kernels = if verify {
        Some(component_kernels(model, w, Component::Ssr)?)
    } else {
        None
    };
    for k in 0..k_max {
        let lam_inv = invert_spd(model.lambda.mat(k), k + 1)?;
        let ty = w.w.mat(k) * y.row_vec(k);
        let sst_k = (ty.transpose() * &lam_inv * &ty)[(0, 0)];
        let m = residual_projector(x, model.lambda.mat(k), k + 1)?;
        let resid = &m * &ty;
        let sse_k = (resid.transpose() * &lam_inv * &resid)[(0, 0)];
        let mut ssr_k = sst_k - sse_k;
        if ssr_k < 0.0 {
            if ssr_k < -CLAMP * sst_k.max(1.0) {
                return Err(Error::Validation(format!(
                    "ssr_{} = {ssr_k:.3e} is negative beyond round-off",
                    k + 1
                )));
            }
            ssr_k = 0.0;
            clamped += 1;
        }
        if let Some(kernels) = &ssr_kernels {
            let yk = y.row_vec(k);
            let direct = (yk.transpose() * &kernels[k] * &yk)[(0, 0)];
            if (direct - ssr_k).abs() > 1e-10 * ssr_k.abs().max(1.0) {
                return Err(Error::Validation(format!(
                    "SSR routes disagree at k={}: projector {ssr_k:.12e}, kernel {direct:.12e}",
                    k + 1
                )));
            }
        }
        per_sst.push(sst_k);
        per_sse.push(sse_k);
        per_ssr.push(ssr_k);
    }
    let sst: f64 = per_sst.iter().sum();
    let sse: f64 = per_sse.iter().sum();
    let ssr: f64 = per_ssr.iter().sum();
    let sst_tail_ratio = if sst > 0.0 {
        per_sst.last().copied().unwrap_or(0.0).abs() / sst
    } else {
        0.0
    };
    Ok(VarianceComponents {
        sst,
        sse,
        ssr,
        per_k_sst: per_sst,
        per_k_sse: per_sse,
        per_k_ssr: per_ssr,
        clamped,
        sst_tail_ratio,
    })
}

/// Exact expectations of the components under the model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpectedComponents {
    pub e_sst: f64,
    pub e_sse: f64,
    pub e_ssr: f64,
    pub per_k_e_sst: Vec<f64>,
    pub per_k_e_sse: Vec<f64>,
    pub per_k_e_ssr: Vec<f64>,
    pub sst_tail_ratio: f64,
}

/// `E[component] = sum_k [trace(A_k V_k) + mu_k^T A_k mu_k]` with the
/// matching kernel, `V_k = sigma^2 Lambda_k`, `mu_k = X beta_k`.
pub fn expected_components(model: &ModelSpec, w: &WeightOperator) -> Result<ExpectedComponents> {
    let sst_kernels = component_kernels(model, w, Component::Sst)?;
    let ssr_kernels = component_kernels(model, w, Component::Ssr)?;
    let k_max = model.k_max();
    let mut per_sst = Vec::with_capacity(k_max);
    let mut per_sse = Vec::with_capacity(k_max);
    let mut per_ssr = Vec::with_capacity(k_max);
    for k in 0..k_max {
        let v = model.cov(k);
        let mu = model.mean(k);
        let e_sst = expected_quadform(&sst_kernels[k], &mu, &v)?;
        let e_ssr = expected_quadform(&ssr_kernels[k], &mu, &v)?;
        per_sst.push(e_sst);
        per_ssr.push(e_ssr);
        per_sse.push(e_sst - e_ssr);
    }
    let e_sst: f64 = per_sst.iter().sum();
    let e_ssr: f64 = per_ssr.iter().sum();
    let e_sse: f64 = per_sse.iter().sum();
    let sst_tail_ratio = if e_sst > 0.0 {
        per_sst.last().copied().unwrap_or(0.0).abs() / e_sst
    } else {
        0.0
    };
    Ok(ExpectedComponents {
        e_sst,
        e_sse,
        e_ssr,
        per_k_e_sst: per_sst,
        per_k_e_sse: per_sse,
        per_k_e_ssr: per_ssr,
        sst_tail_ratio,
    })
}
