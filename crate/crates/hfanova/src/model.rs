//! Model specification: design matrix, fixed-effect coefficients, scale,
//! and covariance families sharing one eigenbasis.
//!
//! The default covariance family is the full-rank correlated one:
//! `Lambda_k[i,j] = sqrt(lambda_ki * lambda_kj) * rho[i,j]` with a strictly
//! positive definite correlation matrix `rho`. With `rho = I` this reduces
//! to independent components. The degenerate rank-one case (perfectly
//! correlated coefficients) is surfaced by [`validate_a0`] as a diagnostic,
//! not an error.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{sym_eigen_desc, BasisMeta, CoefficientBlock, SpectralMatrixOperator};

/// Continuous spectrum-shaping function, drawn from a small closed set so
/// it can be evaluated exactly without an expression interpreter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum SpectrumFunc {
    /// f(x) = x^exponent
    Power { exponent: f64 },
    /// f(x) = c0 + c1 x + c2 x^2 + ...
    Polynomial { coeffs: Vec<f64> },
    /// f(x) = scale * x^exponent + shift
    AffinePower { scale: f64, shift: f64, exponent: f64 },
}

impl SpectrumFunc {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            SpectrumFunc::Power { exponent } => x.powf(*exponent),
            SpectrumFunc::Polynomial { coeffs } => coeffs
                .iter()
                .rev()
                .fold(0.0, |acc, c| acc * x + c),
            SpectrumFunc::AffinePower { scale, shift, exponent } => {
                scale * x.powf(*exponent) + shift
            }
        }
    }
}

/// Eigenvalue law of the operator generating the basis: `lambda_k(L) =
/// scale * k^exponent`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorLaw {
    pub scale: f64,
    pub exponent: f64,
}

impl Default for OperatorLaw {
    fn default() -> Self {
        Self { scale: 1.0, exponent: 1.0 }
    }
}

impl OperatorLaw {
    pub fn eval(&self, k: usize) -> f64 {
        self.scale * (k as f64).powf(self.exponent)
    }
}

/// Per-component eigenvalue laws for the error covariance family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "kebab-case")]
pub enum SpectrumKind {
    /// `lambda_ki = scale_i * k^{-exponent_i}`
    PowerLaw {
        exponents: Vec<f64>,
        #[serde(default)]
        scales: Option<Vec<f64>>,
    },
    /// `lambda_ki = |f_i(lambda_k(L))|^{-2}` for continuous functions f_i.
    Pseudodiff {
        funcs: Vec<SpectrumFunc>,
        #[serde(default)]
        op_law: Option<OperatorLaw>,
    },
    /// Explicit `k_max x n` table of eigenvalues.
    Explicit { values: Vec<Vec<f64>> },
}

/// Covariance family: per-component eigenvalue laws plus a full-rank
/// correlation matrix with unit diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumFamily {
    pub kind: SpectrumKind,
    /// n x n correlation matrix, row-major. Unit diagonal, strictly PD.
    pub rho: Vec<Vec<f64>>,
}

impl SpectrumFamily {
    pub fn independent(kind: SpectrumKind, n: usize) -> Self {
        let rho = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self { kind, rho }
    }

    pub fn n(&self) -> usize {
        self.rho.len()
    }

    fn rho_matrix(&self) -> Result<DMatrix<f64>> {
        let n = self.rho.len();
        if self.rho.iter().any(|r| r.len() != n) {
            return Err(Error::Validation("rho must be square".into()));
        }
        let m = DMatrix::from_fn(n, n, |i, j| self.rho[i][j]);
        if (&m - m.transpose()).norm() > 1e-12 * m.norm().max(1.0) {
            return Err(Error::Validation("rho must be symmetric".into()));
        }
        for i in 0..n {
            if (m[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(Error::Validation("rho must have unit diagonal".into()));
            }
        }
        let (_, vals) = sym_eigen_desc(&m)?;
        if vals[vals.len() - 1] <= 1e-12 {
            return Err(Error::Validation(
                "rho must be strictly positive definite".into(),
            ));
        }
        Ok(m)
    }

    /// `k_max x n` table of per-component eigenvalues `lambda_ki`.
    pub fn eigenvalues(&self, k_max: usize) -> Result<DMatrix<f64>> {
        let n = self.n();
        let table = match &self.kind {
            SpectrumKind::PowerLaw { exponents, scales } => {
                if exponents.len() != n {
                    return Err(Error::Dimension(format!(
                        "power-law family needs {n} exponents, got {}",
                        exponents.len()
                    )));
                }
                if let Some(s) = scales {
                    if s.len() != n {
                        return Err(Error::Dimension("scales length must equal n".into()));
                    }
                }
                DMatrix::from_fn(k_max, n, |k, i| {
                    let scale = scales.as_ref().map_or(1.0, |s| s[i]);
                    scale * ((k + 1) as f64).powf(-exponents[i])
                })
            }
            SpectrumKind::Pseudodiff { funcs, op_law } => {
                if funcs.len() != n {
                    return Err(Error::Dimension(format!(
                        "pseudodiff family needs {n} functions, got {}",
                        funcs.len()
                    )));
                }
                let law = op_law.clone().unwrap_or_default();
                pseudodiff_spectrum(funcs, &law, k_max)?
            }
            SpectrumKind::Explicit { values } => {
                if values.len() < k_max {
                    return Err(Error::Dimension(format!(
                        "explicit spectrum has {} rows, k_max is {k_max}",
                        values.len()
                    )));
                }
                if values.iter().any(|r| r.len() != n) {
                    return Err(Error::Dimension("explicit spectrum rows must have width n".into()));
                }
                DMatrix::from_fn(k_max, n, |k, i| values[k][i])
            }
        };
        if table.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Validation(
                "all per-component eigenvalues must be strictly positive and finite".into(),
            ));
        }
        Ok(table)
    }
}

/// `lambda_ki = |f_i(lambda_k(L))|^{-2}` for the stochastic
/// pseudodifferential-equation covariance family.
pub fn pseudodiff_spectrum(
    funcs: &[SpectrumFunc],
    op_law: &OperatorLaw,
    k_max: usize,
) -> Result<DMatrix<f64>> {
    let n = funcs.len();
    let mut out = DMatrix::zeros(k_max, n);
    for k in 0..k_max {
        let x = op_law.eval(k + 1);
        for (i, f) in funcs.iter().enumerate() {
            let v = f.eval(x);
            if v == 0.0 || !v.is_finite() {
                return Err(Error::Domain(format!(
                    "f_{}(lambda_{}(L)) = {v} is not invertible",
                    i + 1,
                    k + 1
                )));
            }
            out[(k, i)] = v.abs().powi(-2);
        }
    }
    Ok(out)
}

/// Builds the covariance matrix sequence `Lambda_k[i,j] =
/// sqrt(lambda_ki * lambda_kj) * rho[i,j]`.
///
/// Each `Lambda_k` is symmetric PD because it is a congruence of the
/// strictly PD `rho` by a positive diagonal.
pub fn build_lambda(family: &SpectrumFamily, k_max: usize) -> Result<SpectralMatrixOperator> {
    let rho = family.rho_matrix()?;
    let eigs = family.eigenvalues(k_max)?;
    let n = family.n();
    let mats: Vec<DMatrix<f64>> = (0..k_max)
        .map(|k| {
            DMatrix::from_fn(n, n, |i, j| {
                (eigs[(k, i)] * eigs[(k, j)]).sqrt() * rho[(i, j)]
            })
        })
        .collect();
    let mut op = SpectralMatrixOperator::new(mats)?.assert_symmetric()?;
    op.positive_definite = true;
    Ok(op)
}

/// Structural diagnostics against the common-eigenbasis assumption.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct A0Diagnostics {
    pub per_k_min_eigenvalue: Vec<f64>,
    pub per_k_rank: Vec<usize>,
    pub trace_partial_sums: Vec<f64>,
    pub trace_tail_ratio: f64,
    /// Raised when a `Lambda_k` is numerically rank one (the degenerate
    /// perfectly-correlated case).
    pub rank_one_flags: Vec<bool>,
    /// 1-based indices of matrices failing the symmetry check.
    pub symmetry_violations: Vec<usize>,
}

impl A0Diagnostics {
    pub fn all_positive_definite(&self) -> bool {
        self.per_k_min_eigenvalue.iter().all(|&v| v > 0.0)
    }

    pub fn clean(&self) -> bool {
        self.all_positive_definite()
            && self.symmetry_violations.is_empty()
            && !self.rank_one_flags.iter().any(|&f| f)
    }
}

/// Pure diagnostics: per-k minimum eigenvalue, rank, trace partial sums,
/// rank-one and symmetry flags. Never errors.
pub fn validate_a0(lambda: &SpectralMatrixOperator) -> A0Diagnostics {
    let k_max = lambda.k_max();
    let mut min_eigs = Vec::with_capacity(k_max);
    let mut ranks = Vec::with_capacity(k_max);
    let mut partial = Vec::with_capacity(k_max);
    let mut rank_one = Vec::with_capacity(k_max);
    let mut asym = Vec::new();
    let mut acc = 0.0;
    for k in 0..k_max {
        let m = lambda.mat(k);
        let scale = m.norm().max(1.0);
        if (m - m.transpose()).norm() > 1e-12 * scale {
            asym.push(k + 1);
        }
        let sym = 0.5 * (m + m.transpose());
        let (_, vals) = sym_eigen_desc(&sym).expect("square symmetric input");
        let max = vals[0].abs().max(f64::MIN_POSITIVE);
        let rank = vals.iter().filter(|&&v| v.abs() > 1e-12 * max).count();
        min_eigs.push(vals[vals.len() - 1]);
        ranks.push(rank);
        rank_one.push(rank <= 1 && m.nrows() > 1);
        acc += m.trace();
        partial.push(acc);
    }
    let tail_ratio = if acc.abs() > 0.0 {
        lambda.mat(k_max - 1).trace().abs() / acc.abs()
    } else {
        0.0
    };
    A0Diagnostics {
        per_k_min_eigenvalue: min_eigs,
        per_k_rank: ranks,
        trace_partial_sums: partial,
        trace_tail_ratio: tail_ratio,
        rank_one_flags: rank_one,
        symmetry_violations: asym,
    }
}

/// Full model specification. `lambda` is the unit-scale covariance
/// family; the error covariance of the data is `sigma^2 * Lambda_k`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub x: DMatrix<f64>,
    pub lambda: SpectralMatrixOperator,
    pub beta: CoefficientBlock,
    pub sigma: f64,
    pub basis: BasisMeta,
}

impl ModelSpec {
    pub fn new(
        x: DMatrix<f64>,
        lambda: SpectralMatrixOperator,
        beta: CoefficientBlock,
        sigma: f64,
    ) -> Result<Self> {
        let n = x.nrows();
        let p = x.ncols();
        if p < 1 || n < p {
            return Err(Error::Validation(format!(
                "need n >= p >= 1, got n={n}, p={p}"
            )));
        }
        if lambda.rows() != n || lambda.cols() != n {
            return Err(Error::Dimension(format!(
                "lambda matrices must be {n}x{n}"
            )));
        }
        if beta.d() != p {
            return Err(Error::Dimension(format!(
                "beta must have {p} components, has {}",
                beta.d()
            )));
        }
        if beta.k_max() != lambda.k_max() {
            return Err(Error::BasisMismatch(beta.k_max(), lambda.k_max()));
        }
        if !(sigma >= 0.0) {
            return Err(Error::Validation("sigma must be nonnegative".into()));
        }
        // full column rank check via the Gram matrix
        let gram = x.transpose() * &x;
        let (_, vals) = sym_eigen_desc(&gram)?;
        if vals[vals.len() - 1] <= 1e-12 * vals[0].max(1.0) {
            return Err(Error::Validation("X must have full column rank".into()));
        }
        let diag = validate_a0(&lambda);
        if !diag.all_positive_definite() || !diag.symmetry_violations.is_empty() {
            return Err(Error::Validation(
                "lambda family must be symmetric positive definite per k".into(),
            ));
        }
        let basis = BasisMeta::new(lambda.k_max())?;
        Ok(Self { x, lambda, beta, sigma, basis })
    }

    pub fn from_family(
        x: DMatrix<f64>,
        family: &SpectrumFamily,
        beta: CoefficientBlock,
        sigma: f64,
        k_max: usize,
    ) -> Result<Self> {
        let lambda = build_lambda(family, k_max)?;
        Self::new(x, lambda, beta, sigma)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn k_max(&self) -> usize {
        self.lambda.k_max()
    }

    /// Error covariance at frequency k: `sigma^2 * Lambda_k`.
    pub fn cov(&self, k: usize) -> DMatrix<f64> {
        self.lambda.mat(k) * (self.sigma * self.sigma)
    }

    /// Mean coefficient vector at frequency k: `[X beta]_k`.
    pub fn mean(&self, k: usize) -> nalgebra::DVector<f64> {
        &self.x * self.beta.row_vec(k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn power_family(n: usize, exps: &[f64], rho01: f64) -> SpectrumFamily {
        let mut fam = SpectrumFamily::independent(
            SpectrumKind::PowerLaw { exponents: exps.to_vec(), scales: None },
            n,
        );
        if n == 2 {
            fam.rho[0][1] = rho01;
            fam.rho[1][0] = rho01;
        }
        fam
    }

    #[test]
    fn scalar_family_is_just_the_eigenvalues() {
        let fam = power_family(1, &[2.0], 0.0);
        let lam = build_lambda(&fam, 5).unwrap();
        for k in 0..5 {
            assert_relative_eq!(lam.mat(k)[(0, 0)], ((k + 1) as f64).powi(-2));
        }
    }

    #[test]
    fn identity_correlation_gives_diagonal_lambda() {
        let fam = SpectrumFamily::independent(
            SpectrumKind::PowerLaw { exponents: vec![2.0, 3.0], scales: Some(vec![1.0, 2.0]) },
            2,
        );
        let lam = build_lambda(&fam, 4).unwrap();
        for k in 0..4 {
            assert_eq!(lam.mat(k)[(0, 1)], 0.0);
            assert_eq!(lam.mat(k)[(1, 0)], 0.0);
        }
    }

    #[test]
    fn correlated_family_matches_hand_computation() {
        // lambda_k1 = k^-2, lambda_k2 = 2 k^-2, rho = 0.5, k = 1
        let fam = SpectrumFamily {
            kind: SpectrumKind::PowerLaw {
                exponents: vec![2.0, 2.0],
                scales: Some(vec![1.0, 2.0]),
            },
            rho: vec![vec![1.0, 0.5], vec![0.5, 1.0]],
        };
        let lam = build_lambda(&fam, 1).unwrap();
        let expect = DMatrix::from_row_slice(
            2,
            2,
            &[1.0, 0.5 * 2.0_f64.sqrt(), 0.5 * 2.0_f64.sqrt(), 2.0],
        );
        assert!((lam.mat(0) - expect).norm() < 1e-12);
        let (_, vals) = sym_eigen_desc(lam.mat(0)).unwrap();
        assert!(vals.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn non_pd_rho_is_rejected() {
        let fam = SpectrumFamily {
            kind: SpectrumKind::PowerLaw { exponents: vec![2.0, 2.0], scales: None },
            rho: vec![vec![1.0, 1.0], vec![1.0, 1.0]],
        };
        assert!(build_lambda(&fam, 3).is_err());
    }

    #[test]
    fn pseudodiff_power_law() {
        // f(x) = x, lambda_k(L) = k  ->  lambda_ki = k^-2
        let out = pseudodiff_spectrum(
            &[SpectrumFunc::Power { exponent: 1.0 }],
            &OperatorLaw::default(),
            4,
        )
        .unwrap();
        for k in 0..4 {
            assert_relative_eq!(out[(k, 0)], ((k + 1) as f64).powi(-2));
        }
        // f(x) = x^{3/2}  ->  lambda_ki = k^-3
        let out = pseudodiff_spectrum(
            &[SpectrumFunc::Power { exponent: 1.5 }],
            &OperatorLaw::default(),
            4,
        )
        .unwrap();
        for k in 0..4 {
            assert_relative_eq!(out[(k, 0)], ((k + 1) as f64).powi(-3), epsilon = 1e-12);
        }
    }

    #[test]
    fn pseudodiff_two_components_hand_check() {
        // f_1(x) = x, f_2(x) = x + 1, k = 2  ->  (1/4, 1/9)
        let out = pseudodiff_spectrum(
            &[
                SpectrumFunc::Power { exponent: 1.0 },
                SpectrumFunc::Polynomial { coeffs: vec![1.0, 1.0] },
            ],
            &OperatorLaw::default(),
            2,
        )
        .unwrap();
        assert_relative_eq!(out[(1, 0)], 0.25, epsilon = 1e-12);
        assert_relative_eq!(out[(1, 1)], 1.0 / 9.0, epsilon = 1e-12);
    }

    #[test]
    fn pseudodiff_rejects_zero_of_f() {
        // f(x) = x - 2 vanishes at lambda_2(L) = 2
        let r = pseudodiff_spectrum(
            &[SpectrumFunc::Polynomial { coeffs: vec![-2.0, 1.0] }],
            &OperatorLaw::default(),
            3,
        );
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn validate_a0_on_power_family() {
        let k_max = 10_000;
        let fam = power_family(2, &[2.0, 2.0], 0.0);
        let lam = build_lambda(&fam, k_max).unwrap();
        let diag = validate_a0(&lam);
        assert!(diag.clean());
        // trace sum -> n * pi^2 / 6
        let total = *diag.trace_partial_sums.last().unwrap();
        assert_relative_eq!(total, 2.0 * std::f64::consts::PI.powi(2) / 6.0, epsilon = 1e-3);
    }

    #[test]
    fn validate_a0_flags_rank_one() {
        let d = nalgebra::DVector::from_vec(vec![1.0, 2.0]);
        let mats: Vec<DMatrix<f64>> = (1..=5)
            .map(|k| (&d * d.transpose()) * (k as f64).powi(-2))
            .collect();
        let op = SpectralMatrixOperator::new(mats).unwrap();
        let diag = validate_a0(&op);
        assert!(diag.rank_one_flags.iter().all(|&f| f));
    }

    #[test]
    fn validate_a0_flags_asymmetry() {
        let mut mats = vec![DMatrix::identity(2, 2); 3];
        mats[1][(0, 1)] = 0.3;
        let op = SpectralMatrixOperator::new(mats).unwrap();
        let diag = validate_a0(&op);
        assert_eq!(diag.symmetry_violations, vec![2]);
    }

    #[test]
    fn build_lambda_always_passes_a0_for_pd_rho() {
        let fam = SpectrumFamily {
            kind: SpectrumKind::PowerLaw {
                exponents: vec![2.0, 2.5, 3.0],
                scales: Some(vec![1.0, 0.5, 2.0]),
            },
            rho: vec![
                vec![1.0, 0.3, -0.2],
                vec![0.3, 1.0, 0.4],
                vec![-0.2, 0.4, 1.0],
            ],
        };
        let lam = build_lambda(&fam, 50).unwrap();
        assert!(validate_a0(&lam).clean());
    }
}
