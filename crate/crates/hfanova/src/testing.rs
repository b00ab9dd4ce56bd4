//! Linear hypothesis tests on the fixed effects.
//!
//! The hypothesis is `K_l beta_l = C_l` across the first `L` frequencies,
//! aggregated by the squared-distance statistic `S = sum_l ||K_l
//! beta_hat_l - C_l||^2`. Under the null each summand is a Gaussian
//! quadratic form with covariance `sigma^2 K_l Q_l K_l^T`, so the null
//! distribution of `S` is again a weighted chi-square sum and reuses the
//! characteristic-function machinery.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::distributions::{cdf, quantile, QuadFormSpec, QuadTerm};
use crate::error::{Error, Result};
use crate::estimation::{gls_fit, GlsFit};
use crate::model::ModelSpec;
use crate::spectral::{invert_spd, sym_eigen_desc, CoefficientBlock, SpectralMatrixOperator};

/// `K_l beta_l = C_l` for `l = 1..=L`, tested at level `alpha`.
#[derive(Debug, Clone)]
pub struct LinearHypothesis {
    /// `L` contrast matrices, each `m x p`.
    pub k_ops: SpectralMatrixOperator,
    /// `L x m` right-hand sides.
    pub c: CoefficientBlock,
    pub alpha: f64,
}

impl LinearHypothesis {
    pub fn new(k_ops: SpectralMatrixOperator, c: CoefficientBlock, alpha: f64) -> Result<Self> {
        if k_ops.k_max() != c.k_max() {
            return Err(Error::BasisMismatch(k_ops.k_max(), c.k_max()));
        }
        if k_ops.rows() != c.d() {
            return Err(Error::Dimension(format!(
                "contrast has {} rows, right-hand side has width {}",
                k_ops.rows(),
                c.d()
            )));
        }
        if !(0.0 < alpha && alpha < 1.0) {
            return Err(Error::Validation(format!("alpha must lie in (0,1), got {alpha}")));
        }
        Ok(Self { k_ops, c, alpha })
    }

    /// The no-effect hypothesis `beta_l = 0` over the first `l_max`
    /// frequencies.
    pub fn no_effect(p: usize, l_max: usize, alpha: f64) -> Result<Self> {
        Self::new(
            SpectralMatrixOperator::identity(l_max, p)?,
            CoefficientBlock::zeros(l_max, p)?,
            alpha,
        )
    }

    pub fn l_max(&self) -> usize {
        self.k_ops.k_max()
    }

    pub fn m(&self) -> usize {
        self.k_ops.rows()
    }

    fn deviation(&self, beta_hat: &CoefficientBlock, l: usize) -> DVector<f64> {
        self.k_ops.mat(l) * beta_hat.row_vec(l) - self.c.row_vec(l)
    }
}

/// `S = sum_l ||K_l beta_hat_l - C_l||^2`.
pub fn global_stat(beta_hat: &CoefficientBlock, hyp: &LinearHypothesis) -> Result<f64> {
    if beta_hat.k_max() < hyp.l_max() {
        return Err(Error::BasisMismatch(beta_hat.k_max(), hyp.l_max()));
    }
    if hyp.k_ops.cols() != beta_hat.d() {
        return Err(Error::Dimension(format!(
            "contrast expects {} coefficients, estimate has {}",
            hyp.k_ops.cols(),
            beta_hat.d()
        )));
    }
    Ok((0..hyp.l_max())
        .map(|l| hyp.deviation(beta_hat, l).norm_squared())
        .sum())
}

/// Null distribution of the global statistic plus the boundedness check
/// on the per-l operators.
#[derive(Debug, Clone)]
pub struct NullDistribution {
    pub spec: QuadFormSpec,
    /// `sup_l` spectral norm of `sigma^2 Q_l^{1/2} K_l^T K_l Q_l^{1/2}`.
    pub sup_operator_norm: f64,
    /// Whether the supremum is strictly below one (warned on, not fatal).
    pub condition_ok: bool,
}

/// Central weighted-chi-square law of `S` under the null: the weights at
/// frequency l are the eigenvalues of `sigma^2 Q_l^{1/2} K_l^T K_l
/// Q_l^{1/2}` with `Q_l = (X^T Lambda_l^{-1} X)^{-1}`.
pub fn null_distribution(model: &ModelSpec, hyp: &LinearHypothesis) -> Result<NullDistribution> {
    if hyp.l_max() > model.k_max() {
        return Err(Error::BasisMismatch(hyp.l_max(), model.k_max()));
    }
    if hyp.k_ops.cols() != model.p() {
        return Err(Error::Dimension(format!(
            "contrast expects p={}, model has p={}",
            hyp.k_ops.cols(),
            model.p()
        )));
    }
    let s2 = model.sigma * model.sigma;
    let mut terms = Vec::with_capacity(hyp.l_max() * model.p());
    let mut sup: f64 = 0.0;
    for l in 0..hyp.l_max() {
        let lam_inv = invert_spd(model.lambda.mat(l), l + 1)?;
        let gram = model.x.transpose() * lam_inv * &model.x;
        let q = invert_spd(&gram, l + 1)?;
        let kl = hyp.k_ops.mat(l);
        // eigenvalues of Q^{1/2} K^T K Q^{1/2} = eigenvalues of K Q K^T
        let kqk = {
            let m = kl * &q * kl.transpose();
            (&m + m.transpose()) * 0.5
        };
        let (_, vals) = sym_eigen_desc(&kqk)?;
        for &v in vals.iter() {
            let weight = s2 * v.max(0.0);
            sup = sup.max(weight);
            terms.push(QuadTerm { weight, noncentrality: 0.0 });
        }
    }
    let spec = QuadFormSpec::from_terms(terms, format!("null@L={}", hyp.l_max()), hyp.l_max());
    Ok(NullDistribution {
        spec,
        sup_operator_norm: sup,
        condition_ok: sup < 1.0,
    })
}

/// Standardized per-l statistic `(K beta_hat - C)^T (sigma^2 K Q K^T)^{-1}
/// (K beta_hat - C)`, chi-square with m degrees of freedom under the null.
pub fn perk_chisq(
    fit: &GlsFit,
    sigma: f64,
    hyp: &LinearHypothesis,
    l: usize,
) -> Result<f64> {
    if l >= hyp.l_max() {
        return Err(Error::Dimension(format!("l={l} out of range 0..{}", hyp.l_max())));
    }
    if !(sigma > 0.0) {
        return Err(Error::Domain("standardized statistic needs sigma > 0".into()));
    }
    let kl = hyp.k_ops.mat(l);
    let cov = {
        let m = kl * fit.per_k_cov.mat(l) * kl.transpose() * (sigma * sigma);
        (&m + m.transpose()) * 0.5
    };
    let cov_inv = invert_spd(&cov, l + 1)?;
    let d = hyp.deviation(&fit.beta_hat, l);
    Ok((d.transpose() * cov_inv * d)[(0, 0)])
}

/// One per-l record of the aggregated test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerFrequencyTest {
    pub l: usize,
    pub contribution: f64,
    /// Absent when sigma = 0 (no standardization exists).
    pub chisq_statistic: Option<f64>,
    pub chisq_p_value: Option<f64>,
}

/// Outcome of the aggregated linear hypothesis test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub critical_value: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub reject: bool,
    pub per_l: Vec<PerFrequencyTest>,
    pub sup_operator_norm: f64,
    pub condition_ok: bool,
}

/// Fits the model, computes the global statistic, its null law, critical
/// value and p-value, and the standardized per-l statistics.
pub fn run_test(
    model: &ModelSpec,
    y: &CoefficientBlock,
    hyp: &LinearHypothesis,
) -> Result<TestResult> {
    let fit = gls_fit(model, y)?;
    run_test_with_fit(model, &fit, hyp)
}

pub fn run_test_with_fit(
    model: &ModelSpec,
    fit: &GlsFit,
    hyp: &LinearHypothesis,
) -> Result<TestResult> {
    let statistic = global_stat(&fit.beta_hat, hyp)?;
    let null = null_distribution(model, hyp)?;
    let degenerate = null.spec.terms.iter().all(|t| t.weight == 0.0);
    let (critical_value, p_value) = if degenerate {
        // sigma = 0: the statistic is a point mass at zero
        (0.0, if statistic <= 1e-12 { 1.0 } else { 0.0 })
    } else {
        (
            quantile(&null.spec, 1.0 - hyp.alpha)?,
            1.0 - cdf(&null.spec, statistic)?,
        )
    };
    let m = hyp.m();
    let chisq_m = QuadFormSpec::from_terms(
        vec![QuadTerm { weight: 1.0, noncentrality: 0.0 }; m],
        "chi2_m",
        1,
    );
    let mut per_l = Vec::with_capacity(hyp.l_max());
    for l in 0..hyp.l_max() {
        let contribution = hyp.deviation(&fit.beta_hat, l).norm_squared();
        let (chisq_statistic, chisq_p_value) = if model.sigma > 0.0 {
            let s = perk_chisq(fit, model.sigma, hyp, l)?;
            (Some(s), Some(1.0 - cdf(&chisq_m, s)?))
        } else {
            (None, None)
        };
        per_l.push(PerFrequencyTest { l: l + 1, contribution, chisq_statistic, chisq_p_value });
    }
    Ok(TestResult {
        statistic,
        critical_value,
        p_value,
        alpha: hyp.alpha,
        reject: statistic > critical_value,
        per_l,
        sup_operator_norm: null.sup_operator_norm,
        condition_ok: null.condition_ok,
    })
}
