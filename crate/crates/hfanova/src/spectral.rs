//! Coefficient-space representations of vectors and matrix operators that
//! are diagonal in one fixed common eigenbasis.
//!
//! A function vector in `H^d` truncated at level `k_max` is a `k_max x d`
//! matrix of projection coefficients ([`CoefficientBlock`]); an operator
//! sharing the eigenbasis is a sequence of `k_max` small real matrices
//! ([`SpectralMatrixOperator`]). All series of the underlying model are
//! truncated at `k_max`; series-valued results carry a tail diagnostic.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reciprocal condition numbers below this are treated as singular.
pub const RCOND_LIMIT: f64 = 1e-12;

/// The abstract truncated eigenbasis: only the truncation level and
/// optional per-index labels are retained.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisMeta {
    pub k_max: usize,
    pub labels: Option<Vec<String>>,
}

impl BasisMeta {
    pub fn new(k_max: usize) -> Result<Self> {
        if k_max == 0 {
            return Err(Error::Validation("k_max must be at least 1".into()));
        }
        Ok(Self { k_max, labels: None })
    }
}

/// Coefficients of a `d`-vector of H-valued functions: row `k` holds the
/// projections of all `d` components onto the k-th basis element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientBlock {
    pub data: DMatrix<f64>,
    pub basis: BasisMeta,
}

impl CoefficientBlock {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Validation("non-finite coefficient entry".into()));
        }
        let basis = BasisMeta::new(data.nrows())?;
        Ok(Self { data, basis })
    }

    pub fn zeros(k_max: usize, d: usize) -> Result<Self> {
        Self::new(DMatrix::zeros(k_max, d))
    }

    pub fn k_max(&self) -> usize {
        self.data.nrows()
    }

    /// Component count (n, p or m depending on role).
    pub fn d(&self) -> usize {
        self.data.ncols()
    }

    /// Coefficient vector at frequency `k` (0-based).
    pub fn row_vec(&self, k: usize) -> DVector<f64> {
        self.data.row(k).transpose()
    }

    /// Squared H^d-norm of the represented truncated vector (Parseval).
    pub fn norm_squared(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Packs per-k coefficient rows into a block. Lossless; errors on ragged
/// input.
pub fn project(rows: &[Vec<f64>], d: usize) -> Result<CoefficientBlock> {
    if rows.is_empty() {
        return Err(Error::Dimension("no coefficient rows".into()));
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != d) {
        return Err(Error::Dimension(format!(
            "row {} has width {}, expected {}",
            bad,
            rows[bad].len(),
            d
        )));
    }
    let data = DMatrix::from_fn(rows.len(), d, |k, j| rows[k][j]);
    CoefficientBlock::new(data)
}

/// Inverse of [`project`] on the truncated space.
pub fn reconstruct(block: &CoefficientBlock) -> Vec<Vec<f64>> {
    (0..block.k_max())
        .map(|k| block.data.row(k).iter().copied().collect())
        .collect()
}

/// A sequence of `k_max` real matrices sharing one eigenbasis, all of the
/// same shape `r x c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralMatrixOperator {
    pub mats: Vec<DMatrix<f64>>,
    pub basis: BasisMeta,
    pub symmetric: bool,
    pub positive_definite: bool,
}

impl SpectralMatrixOperator {
    pub fn new(mats: Vec<DMatrix<f64>>) -> Result<Self> {
        let basis = BasisMeta::new(mats.len())?;
        let (r, c) = (mats[0].nrows(), mats[0].ncols());
        if mats.iter().any(|m| m.nrows() != r || m.ncols() != c) {
            return Err(Error::Dimension(
                "all matrices in a spectral operator must share dimensions".into(),
            ));
        }
        Ok(Self {
            mats,
            basis,
            symmetric: false,
            positive_definite: false,
        })
    }

    /// Marks the operator symmetric after verifying each matrix to 1e-12
    /// relative.
    pub fn assert_symmetric(mut self) -> Result<Self> {
        for (k, m) in self.mats.iter().enumerate() {
            let scale = m.norm().max(1.0);
            if (m - m.transpose()).norm() > 1e-12 * scale {
                return Err(Error::Validation(format!(
                    "matrix at k={} is not symmetric",
                    k + 1
                )));
            }
        }
        self.symmetric = true;
        Ok(self)
    }

    /// Marks the operator symmetric PD after verifying every per-k matrix
    /// has strictly positive eigenvalues.
    pub fn assert_positive_definite(self) -> Result<Self> {
        let mut op = self.assert_symmetric()?;
        for (k, m) in op.mats.iter().enumerate() {
            let (_, eigs) = sym_eigen_desc(m)?;
            if eigs.iter().any(|&e| e <= 0.0) {
                return Err(Error::NotPositiveDefinite { k: k + 1 });
            }
        }
        op.positive_definite = true;
        Ok(op)
    }

    pub fn identity(k_max: usize, n: usize) -> Result<Self> {
        let op = Self::new(vec![DMatrix::identity(n, n); k_max])?;
        Ok(Self {
            symmetric: true,
            positive_definite: true,
            ..op
        })
    }

    pub fn k_max(&self) -> usize {
        self.mats.len()
    }

    pub fn rows(&self) -> usize {
        self.mats[0].nrows()
    }

    pub fn cols(&self) -> usize {
        self.mats[0].ncols()
    }

    pub fn mat(&self, k: usize) -> &DMatrix<f64> {
        &self.mats[k]
    }
}

fn check_basis(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::BasisMismatch(a, b));
    }
    Ok(())
}

/// Applies the operator row-by-row: output row k is `A_k f_k`.
pub fn op_apply(a: &SpectralMatrixOperator, f: &CoefficientBlock) -> Result<CoefficientBlock> {
    check_basis(a.k_max(), f.k_max())?;
    if a.cols() != f.d() {
        return Err(Error::Dimension(format!(
            "operator expects {} components, block has {}",
            a.cols(),
            f.d()
        )));
    }
    let mut out = DMatrix::zeros(f.k_max(), a.rows());
    for k in 0..f.k_max() {
        let y = a.mat(k) * f.row_vec(k);
        out.row_mut(k).copy_from(&y.transpose());
    }
    CoefficientBlock::new(out)
}

/// `sum_k g_k^T A_k f_k`: the bilinear form induced by the operator.
pub fn bilinear_form(
    a: &SpectralMatrixOperator,
    f: &CoefficientBlock,
    g: &CoefficientBlock,
) -> Result<f64> {
    check_basis(a.k_max(), f.k_max())?;
    check_basis(a.k_max(), g.k_max())?;
    if a.cols() != f.d() || a.rows() != g.d() {
        return Err(Error::Dimension(format!(
            "bilinear form expects blocks of widths {}x{}, got {}x{}",
            a.rows(),
            a.cols(),
            g.d(),
            f.d()
        )));
    }
    let mut acc = 0.0;
    for k in 0..a.k_max() {
        acc += (g.row_vec(k).transpose() * a.mat(k) * f.row_vec(k))[(0, 0)];
    }
    Ok(acc)
}

/// Per-k matrix inverse. Errors on reciprocal condition number below
/// [`RCOND_LIMIT`] instead of silently pseudo-inverting.
pub fn op_inverse(a: &SpectralMatrixOperator) -> Result<SpectralMatrixOperator> {
    if a.rows() != a.cols() {
        return Err(Error::Dimension("inverse requires square matrices".into()));
    }
    let mut mats = Vec::with_capacity(a.k_max());
    for k in 0..a.k_max() {
        mats.push(invert_spd(a.mat(k), k + 1)?);
    }
    let op = SpectralMatrixOperator::new(mats)?;
    Ok(SpectralMatrixOperator {
        symmetric: a.symmetric,
        positive_definite: a.positive_definite,
        ..op
    })
}

/// Per-k symmetric PD square root.
pub fn op_sqrt(a: &SpectralMatrixOperator) -> Result<SpectralMatrixOperator> {
    let mut mats = Vec::with_capacity(a.k_max());
    for k in 0..a.k_max() {
        mats.push(spd_sqrt(a.mat(k), k + 1)?);
    }
    let op = SpectralMatrixOperator::new(mats)?;
    Ok(SpectralMatrixOperator {
        symmetric: true,
        positive_definite: true,
        ..op
    })
}

/// Per-k matrix product `A_k B_k`.
pub fn op_compose(
    a: &SpectralMatrixOperator,
    b: &SpectralMatrixOperator,
) -> Result<SpectralMatrixOperator> {
    check_basis(a.k_max(), b.k_max())?;
    if a.cols() != b.rows() {
        return Err(Error::Dimension(format!(
            "cannot compose {}x{} with {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let mats = (0..a.k_max()).map(|k| a.mat(k) * b.mat(k)).collect();
    SpectralMatrixOperator::new(mats)
}

/// Result of a truncated trace sum together with its tail diagnostic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceResult {
    pub value: f64,
    pub last_term: f64,
    pub tail_ratio: f64,
}

/// `sum_k trace(A_k)`, summed sequentially in k-order.
///
/// Errors when the partial sums look divergent: the increments over the
/// last quarter of 1..k_max are non-decreasing in magnitude while the tail
/// ratio stays above 1e-3.
pub fn op_trace(a: &SpectralMatrixOperator) -> Result<TraceResult> {
    if a.rows() != a.cols() {
        return Err(Error::Dimension("trace requires square matrices".into()));
    }
    let increments: Vec<f64> = a.mats.iter().map(|m| m.trace()).collect();
    let value: f64 = increments.iter().sum();
    let last_term = *increments.last().unwrap();
    let tail_ratio = if value.abs() > 0.0 {
        last_term.abs() / value.abs()
    } else {
        0.0
    };
    let k = increments.len();
    if k >= 8 && tail_ratio > 1e-3 {
        let tail = &increments[3 * k / 4..];
        let nondecreasing = tail
            .windows(2)
            .all(|w| w[1].abs() >= w[0].abs() * (1.0 - 1e-12));
        if nondecreasing {
            return Err(Error::DivergentSeries(format!(
                "trace increments non-decreasing over the last quarter, tail ratio {tail_ratio:.3e}"
            )));
        }
    }
    Ok(TraceResult {
        value,
        last_term,
        tail_ratio,
    })
}

/// Eigendecomposition of a symmetric matrix with deterministic output:
/// eigenvalues descending, each eigenvector's largest-magnitude component
/// made positive.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension("eigendecomposition requires a square matrix".into()));
    }
    let sym = nalgebra::SymmetricEigen::new(m.clone());
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        sym.eigenvalues[j]
            .partial_cmp(&sym.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut vecs = DMatrix::zeros(n, n);
    let mut vals = DVector::zeros(n);
    for (slot, &idx) in order.iter().enumerate() {
        vals[slot] = sym.eigenvalues[idx];
        let mut col = sym.eigenvectors.column(idx).clone_owned();
        // first maximal index, so ties break deterministically
        let mut imax = 0;
        for i in 1..n {
            if col[i].abs() > col[imax].abs() {
                imax = i;
            }
        }
        if col[imax] < 0.0 {
            col.neg_mut();
        }
        vecs.column_mut(slot).copy_from(&col);
    }
    Ok((vecs, vals))
}

/// Inverse of a symmetric PD matrix via its eigendecomposition, with the
/// library-wide singularity guard.
pub fn invert_spd(m: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    let (vecs, vals) = sym_eigen_desc(m)?;
    let max = vals[0];
    let min = vals[vals.len() - 1];
    if min <= 0.0 {
        return Err(Error::NotPositiveDefinite { k });
    }
    let rcond = min / max;
    if rcond < RCOND_LIMIT {
        return Err(Error::Singular { k, rcond });
    }
    let inv_diag = DMatrix::from_diagonal(&vals.map(|v| 1.0 / v));
    Ok(&vecs * inv_diag * vecs.transpose())
}

/// Symmetric PD square root.
pub fn spd_sqrt(m: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    let (vecs, vals) = sym_eigen_desc(m)?;
    if vals.iter().any(|&v| v <= 0.0) {
        return Err(Error::NotPositiveDefinite { k });
    }
    let sqrt_diag = DMatrix::from_diagonal(&vals.map(f64::sqrt));
    Ok(&vecs * sqrt_diag * vecs.transpose())
}

/// Inverse symmetric PD square root.
pub fn spd_inv_sqrt(m: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    let (vecs, vals) = sym_eigen_desc(m)?;
    let max = vals[0];
    let min = vals[vals.len() - 1];
    if min <= 0.0 {
        return Err(Error::NotPositiveDefinite { k });
    }
    if min / max < RCOND_LIMIT {
        return Err(Error::Singular { k, rcond: min / max });
    }
    let diag = DMatrix::from_diagonal(&vals.map(|v| 1.0 / v.sqrt()));
    Ok(&vecs * diag * vecs.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_block(rng: &mut StdRng, k_max: usize, d: usize) -> CoefficientBlock {
        CoefficientBlock::new(DMatrix::from_fn(k_max, d, |_, _| rng.gen_range(-1.0..1.0))).unwrap()
    }

    fn random_spd(rng: &mut StdRng, n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn project_packs_rows() {
        let b = project(&[vec![1.0, 2.0], vec![3.0, 4.0]], 2).unwrap();
        assert_eq!(b.row_vec(0), DVector::from_vec(vec![1.0, 2.0]));
        assert_eq!(b.row_vec(1), DVector::from_vec(vec![3.0, 4.0]));
    }

    #[test]
    fn project_rejects_ragged_input() {
        assert!(matches!(
            project(&[vec![1.0], vec![1.0, 2.0]], 1),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn project_zero_rows_gives_zero_block() {
        let b = project(&[vec![0.0; 3], vec![0.0; 3]], 3).unwrap();
        assert_eq!(b.norm_squared(), 0.0);
    }

    #[test]
    fn reconstruct_round_trips_exactly() {
        let mut rng = StdRng::seed_from_u64(7);
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect())
            .collect();
        let block = project(&rows, 3).unwrap();
        assert_eq!(reconstruct(&block), rows);

        let big = random_block(&mut rng, 100, 5);
        let back = project(&reconstruct(&big), 5).unwrap();
        assert_eq!(back.data, big.data);
    }

    #[test]
    fn op_apply_identity_and_zero() {
        let mut rng = StdRng::seed_from_u64(1);
        let f = random_block(&mut rng, 6, 3);
        let id = SpectralMatrixOperator::identity(6, 3).unwrap();
        assert_eq!(op_apply(&id, &f).unwrap().data, f.data);

        let zero = SpectralMatrixOperator::new(vec![DMatrix::zeros(3, 3); 6]).unwrap();
        assert_eq!(op_apply(&zero, &f).unwrap().norm_squared(), 0.0);
    }

    #[test]
    fn op_apply_matches_naive_loop() {
        let mut rng = StdRng::seed_from_u64(2);
        let mats: Vec<DMatrix<f64>> = (0..10)
            .map(|_| DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let a = SpectralMatrixOperator::new(mats.clone()).unwrap();
        let f = random_block(&mut rng, 10, 2);
        let out = op_apply(&a, &f).unwrap();
        for k in 0..10 {
            for i in 0..2 {
                let mut expect = 0.0;
                for j in 0..2 {
                    expect += mats[k][(i, j)] * f.data[(k, j)];
                }
                assert_relative_eq!(out.data[(k, i)], expect, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn op_apply_rejects_mismatches() {
        let a = SpectralMatrixOperator::identity(4, 2).unwrap();
        let f = CoefficientBlock::zeros(4, 3).unwrap();
        assert!(op_apply(&a, &f).is_err());
        let g = CoefficientBlock::zeros(5, 2).unwrap();
        assert!(matches!(op_apply(&a, &g), Err(Error::BasisMismatch(4, 5))));
    }

    #[test]
    fn bilinear_identity_is_parseval() {
        let mut rng = StdRng::seed_from_u64(3);
        let f = random_block(&mut rng, 8, 2);
        let id = SpectralMatrixOperator::identity(8, 2).unwrap();
        assert_relative_eq!(
            bilinear_form(&id, &f, &f).unwrap(),
            f.norm_squared(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn bilinear_matches_triple_loop() {
        let mut rng = StdRng::seed_from_u64(4);
        let mats: Vec<DMatrix<f64>> = (0..3).map(|_| random_spd(&mut rng, 2)).collect();
        let a = SpectralMatrixOperator::new(mats.clone()).unwrap();
        let f = random_block(&mut rng, 3, 2);
        let g = random_block(&mut rng, 3, 2);
        let mut expect = 0.0;
        for k in 0..3 {
            for i in 0..2 {
                for j in 0..2 {
                    expect += g.data[(k, i)] * mats[k][(i, j)] * f.data[(k, j)];
                }
            }
        }
        assert_relative_eq!(bilinear_form(&a, &f, &g).unwrap(), expect, epsilon = 1e-12);
    }

    #[test]
    fn inverse_of_identity_is_identity() {
        let id = SpectralMatrixOperator::identity(5, 3).unwrap();
        let inv = op_inverse(&id).unwrap();
        for k in 0..5 {
            assert_relative_eq!(
                (inv.mat(k) - DMatrix::<f64>::identity(3, 3)).norm(),
                0.0,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn sqrt_recomposes() {
        let mut rng = StdRng::seed_from_u64(5);
        let mats: Vec<DMatrix<f64>> = (0..4).map(|_| random_spd(&mut rng, 3)).collect();
        let a = SpectralMatrixOperator::new(mats.clone()).unwrap();
        let s = op_sqrt(&a).unwrap();
        for k in 0..4 {
            let recomposed = s.mat(k) * s.mat(k);
            assert!((recomposed - &mats[k]).norm() <= 1e-10 * mats[k].norm());
        }
    }

    #[test]
    fn trace_of_power_law_family() {
        let k_max = 10_000;
        let mats: Vec<DMatrix<f64>> = (1..=k_max)
            .map(|k| DMatrix::identity(2, 2) * (k as f64).powi(-2))
            .collect();
        let a = SpectralMatrixOperator::new(mats).unwrap();
        let t = op_trace(&a).unwrap();
        let expect: f64 = 2.0 * (1..=k_max).map(|k| (k as f64).powi(-2)).sum::<f64>();
        assert_relative_eq!(t.value, expect, epsilon = 1e-12);
        assert_relative_eq!(t.value, 3.28986, epsilon = 1e-3);
    }

    #[test]
    fn trace_flags_divergent_family() {
        let mats: Vec<DMatrix<f64>> = (1..=100).map(|_| DMatrix::identity(2, 2)).collect();
        let a = SpectralMatrixOperator::new(mats).unwrap();
        assert!(matches!(op_trace(&a), Err(Error::DivergentSeries(_))));
    }

    #[test]
    fn compose_is_consistent_with_sequential_application() {
        let mut rng = StdRng::seed_from_u64(6);
        let a = SpectralMatrixOperator::new((0..5).map(|_| random_spd(&mut rng, 3)).collect())
            .unwrap();
        let b = SpectralMatrixOperator::new((0..5).map(|_| random_spd(&mut rng, 3)).collect())
            .unwrap();
        let f = random_block(&mut rng, 5, 3);
        let lhs = op_apply(&op_compose(&a, &b).unwrap(), &f).unwrap();
        let rhs = op_apply(&a, &op_apply(&b, &f).unwrap()).unwrap();
        assert!((lhs.data - &rhs.data).norm() <= 1e-10 * rhs.data.norm().max(1.0));
    }

    #[test]
    fn inverse_round_trips_blocks() {
        let mut rng = StdRng::seed_from_u64(8);
        let a = SpectralMatrixOperator::new((0..6).map(|_| random_spd(&mut rng, 3)).collect())
            .unwrap();
        let f = random_block(&mut rng, 6, 3);
        let back = op_apply(&a, &op_apply(&op_inverse(&a).unwrap(), &f).unwrap()).unwrap();
        assert!((back.data - &f.data).norm() <= 1e-8 * f.data.norm());
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let mut m = DMatrix::identity(2, 2);
        m[(1, 1)] = 1e-15;
        assert!(matches!(
            invert_spd(&m, 1),
            Err(Error::Singular { k: 1, .. })
        ));
    }

    #[test]
    fn eigen_sign_convention_is_deterministic() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let (vecs, vals) = sym_eigen_desc(&m).unwrap();
        assert_relative_eq!(vals[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(vals[1], 1.0, epsilon = 1e-12);
        // largest-magnitude component positive in each column
        for j in 0..2 {
            let col = vecs.column(j);
            let imax = if col[0].abs() >= col[1].abs() { 0 } else { 1 };
            assert!(col[imax] > 0.0);
        }
    }
}
