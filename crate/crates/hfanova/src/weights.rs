//! Weight-operator construction.
//!
//! `W_k` shares the eigenvectors of `Lambda_k` and gets its own eigenvalue
//! decay, chosen so the transformed sums of squares have finite mean. The
//! `ssr` mode uses the stronger decay sufficient for SSR and for the
//! MGF/CF machinery; all distributional computations default to it.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{invert_spd, sym_eigen_desc, SpectralMatrixOperator};

/// Eigenvalue decay rule for `W_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    /// `omega_p(W_k) = k^{-(rho_tilde(p) + varrho(p)) / 2}` — enough for a
    /// finite E[SST~].
    Sst,
    /// `omega_p(W_k) = k^{-(rho_tilde(p) + varrho(p))}` — the stronger
    /// decay sufficient for SSR and the distribution theory.
    Ssr,
    /// `omega_p(W_k) = M * k^{-(rho + varrho) / 2}` with scalar exponents.
    Uniform,
}

/// Decay plan for the weight operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightPlan {
    pub mode: WeightMode,
    /// Per-slot decay exponents of `Lambda_k` (scalar `rho` in uniform
    /// mode: only the first entry is used).
    pub rho_tilde: Vec<f64>,
    /// Per-slot exponents `varrho(p)`, each > 1.
    pub varrho: Vec<f64>,
    /// Multiplier for uniform mode.
    pub m: f64,
}

impl WeightPlan {
    pub fn new(mode: WeightMode, rho_tilde: Vec<f64>, varrho: Vec<f64>, m: f64) -> Result<Self> {
        if rho_tilde.is_empty() || varrho.is_empty() {
            return Err(Error::Validation("weight plan exponents must be nonempty".into()));
        }
        if varrho.iter().any(|&v| v <= 1.0) {
            return Err(Error::Validation("every varrho(p) must exceed 1".into()));
        }
        if mode == WeightMode::Uniform {
            if rho_tilde[0] <= 1.0 {
                return Err(Error::Validation("uniform mode requires rho > 1".into()));
            }
            if !(m > 0.0) {
                return Err(Error::Validation("uniform mode requires M > 0".into()));
            }
        }
        Ok(Self { mode, rho_tilde, varrho, m })
    }

    /// Scalar plan with one exponent pair for every slot.
    pub fn scalar(mode: WeightMode, rho_tilde: f64, varrho: f64) -> Result<Self> {
        Self::new(mode, vec![rho_tilde], vec![varrho], 1.0)
    }

    /// Estimates `rho_tilde(p)` from the family by log-log regression of
    /// `omega_p(Lambda_k)` on k over the last half of 1..k_max, rounded
    /// down, then pairs it with the supplied `varrho`.
    pub fn auto(mode: WeightMode, lambda: &SpectralMatrixOperator, varrho: f64) -> Result<Self> {
        let rho_tilde = estimate_decay_exponents(lambda)?;
        let n = rho_tilde.len();
        let rho_tilde = if mode == WeightMode::Uniform {
            // scalar rho: slowest-decaying slot
            vec![rho_tilde.into_iter().fold(f64::INFINITY, f64::min)]
        } else {
            rho_tilde
        };
        Self::new(mode, rho_tilde, vec![varrho; n], 1.0)
    }

    fn slot_exponent(&self, slot: usize) -> (f64, f64) {
        let rt = self.rho_tilde[slot.min(self.rho_tilde.len() - 1)];
        let vr = self.varrho[slot.min(self.varrho.len() - 1)];
        (rt, vr)
    }

    /// `omega_p(W_k)` for 1-based frequency k and eigenvalue slot p.
    pub fn omega(&self, k: usize, slot: usize) -> f64 {
        let kf = k as f64;
        let (rt, vr) = self.slot_exponent(slot);
        match self.mode {
            WeightMode::Sst => kf.powf(-(rt + vr) / 2.0),
            WeightMode::Ssr => kf.powf(-(rt + vr)),
            WeightMode::Uniform => self.m * kf.powf(-(rt + vr) / 2.0),
        }
    }
}

/// Per-slot decay exponents of `Lambda_k`, from a log-log fit over the
/// last half of the frequency range, floored to the nearest integer below.
pub fn estimate_decay_exponents(lambda: &SpectralMatrixOperator) -> Result<Vec<f64>> {
    let k_max = lambda.k_max();
    if k_max < 4 {
        return Err(Error::Validation(
            "need at least 4 frequencies to estimate decay exponents".into(),
        ));
    }
    let n = lambda.rows();
    let start = k_max / 2;
    let mut slopes = vec![0.0; n];
    for slot in 0..n {
        let pts: Vec<(f64, f64)> = (start..k_max)
            .map(|k| {
                let (_, vals) = sym_eigen_desc(lambda.mat(k)).unwrap();
                (((k + 1) as f64).ln(), vals[slot].max(f64::MIN_POSITIVE).ln())
            })
            .collect();
        let m = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
        slopes[slot] = (-slope).floor().max(0.0);
    }
    Ok(slopes)
}

/// Convergence report for the weight sufficiency series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightConditionReport {
    /// Partial sums of `trace(W_k^T Lambda_k^{-1} W_k)`.
    pub s_a_partial: Vec<f64>,
    pub s_a_tail_ratio: f64,
    pub s_a_converged: bool,
    /// Partial sums of `trace(Lambda_k^{-1} W_k)`.
    pub s_b_partial: Vec<f64>,
    pub s_b_tail_ratio: f64,
    pub s_b_converged: bool,
    pub tail_tolerance: f64,
}

/// The weight operator together with its plan and condition report.
#[derive(Debug, Clone)]
pub struct WeightOperator {
    pub w: SpectralMatrixOperator,
    pub plan: WeightPlan,
    pub report: WeightConditionReport,
}

/// Spectral diagonalization of a symmetric PD matrix: orthogonal `Psi`
/// and descending positive eigenvalues.
pub fn eig_lambda(lambda_k: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let scale = lambda_k.norm().max(1.0);
    if (lambda_k - lambda_k.transpose()).norm() > 1e-12 * scale {
        return Err(Error::Validation("eig_lambda input must be symmetric".into()));
    }
    let (vecs, vals) = sym_eigen_desc(lambda_k)?;
    if vals.iter().any(|&v| v <= 0.0) {
        return Err(Error::NotPositiveDefinite { k: 0 });
    }
    Ok((vecs, vals.iter().copied().collect()))
}

/// Assembles `W_k = Psi_k Omega(W_k) Psi_k^T` from the eigenvectors of
/// each `Lambda_k` and the plan's decay rule.
pub fn build_weights(lambda: &SpectralMatrixOperator, plan: &WeightPlan) -> Result<WeightOperator> {
    let n = lambda.rows();
    let mut mats = Vec::with_capacity(lambda.k_max());
    for k in 0..lambda.k_max() {
        let (psi, _) = eig_lambda(lambda.mat(k))?;
        let omega = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(n, |p, _| {
            plan.omega(k + 1, p)
        }));
        let wk = &psi * omega * psi.transpose();
        // symmetrize exactly: assembled from symmetric factors up to rounding
        mats.push((&wk + wk.transpose()) * 0.5);
    }
    let w = {
        let op = SpectralMatrixOperator::new(mats)?;
        SpectralMatrixOperator {
            symmetric: true,
            positive_definite: true,
            ..op
        }
    };
    let report = check_weight_conditions(&w, lambda, 1e-6)?;
    Ok(WeightOperator { w, plan: plan.clone(), report })
}

/// Tail-ratio verdicts for `sum trace(W^T Lambda^{-1} W)` and
/// `sum trace(Lambda^{-1} W)`.
pub fn check_weight_conditions(
    w: &SpectralMatrixOperator,
    lambda: &SpectralMatrixOperator,
    tail_tolerance: f64,
) -> Result<WeightConditionReport> {
    if w.k_max() != lambda.k_max() {
        return Err(Error::BasisMismatch(w.k_max(), lambda.k_max()));
    }
    let k_max = lambda.k_max();
    let mut s_a = Vec::with_capacity(k_max);
    let mut s_b = Vec::with_capacity(k_max);
    let (mut acc_a, mut acc_b) = (0.0, 0.0);
    let (mut last_a, mut last_b) = (0.0, 0.0);
    for k in 0..k_max {
        let lam_inv = invert_spd(lambda.mat(k), k + 1)?;
        let wk = w.mat(k);
        last_a = (wk.transpose() * &lam_inv * wk).trace();
        last_b = (&lam_inv * wk).trace();
        acc_a += last_a;
        acc_b += last_b;
        s_a.push(acc_a);
        s_b.push(acc_b);
    }
    let ratio = |last: f64, acc: f64| if acc.abs() > 0.0 { last.abs() / acc.abs() } else { 0.0 };
    let (ra, rb) = (ratio(last_a, acc_a), ratio(last_b, acc_b));
    Ok(WeightConditionReport {
        s_a_partial: s_a,
        s_a_tail_ratio: ra,
        s_a_converged: ra < tail_tolerance,
        s_b_partial: s_b,
        s_b_tail_ratio: rb,
        s_b_converged: rb < tail_tolerance,
        tail_tolerance,
    })
}
