//! Exact distributions of the variance components.
//!
//! Every component is a sum of independent Gaussian quadratic forms, one
//! per frequency. Each per-k form is reduced canonically to a weighted sum
//! of independent noncentral chi-squares with one degree of freedom; the
//! flat list of (weight, noncentrality) pairs is the working
//! representation for MGF, CF, CDF and quantile evaluation.
//!
//! Products over thousands of factors are accumulated as sums of logs
//! (complex logs for the CF; each factor is a half-power of a single
//! linear factor, so the principal branch suffices and no branch tracking
//! is needed).
//!
//! The CDF inverts the CF with the Gil-Pelaez formula. The integral is
//! split into a short real-axis segment and a tail taken along a ray
//! rotated into the lower half-plane, where the integrand decays
//! exponentially for positive arguments; all singularities of the
//! integrand lie on the negative imaginary axis, so the deformation is
//! legitimate for any positive split point.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::spectral::{invert_spd, spd_inv_sqrt, spd_sqrt, sym_eigen_desc};
use crate::weights::WeightOperator;

type C64 = Complex<f64>;

/// Which variance component a kernel or spec refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Sst,
    Ssr,
    Sse,
}

impl std::fmt::Display for Component {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Component::Sst => write!(f, "sst"),
            Component::Ssr => write!(f, "ssr"),
            Component::Sse => write!(f, "sse"),
        }
    }
}

/// Per-k kernels of the transformed sums of squares:
///
/// - SST: `W^T Lambda^{-1} W`
/// - SSR: `W^T Lambda^{-1} X (X^T Lambda^{-1} X)^{-1} X^T Lambda^{-1} W`
/// - SSE: their difference
pub fn component_kernels(
    model: &ModelSpec,
    w: &WeightOperator,
    which: Component,
) -> Result<Vec<DMatrix<f64>>> {
    if w.w.k_max() != model.k_max() {
        return Err(Error::BasisMismatch(w.w.k_max(), model.k_max()));
    }
    let x = &model.x;
    let mut out = Vec::with_capacity(model.k_max());
    for k in 0..model.k_max() {
        let lam_inv = invert_spd(model.lambda.mat(k), k + 1)?;
        let wk = w.w.mat(k);
        let sst = wk.transpose() * &lam_inv * wk;
        let kernel = match which {
            Component::Sst => sst,
            Component::Ssr | Component::Sse => {
                let gram = x.transpose() * &lam_inv * x;
                let gram_inv = invert_spd(&gram, k + 1)?;
                let ssr = wk.transpose() * &lam_inv * x * gram_inv * x.transpose() * &lam_inv * wk;
                match which {
                    Component::Ssr => ssr,
                    _ => sst - ssr,
                }
            }
        };
        out.push((&kernel + kernel.transpose()) * 0.5);
    }
    Ok(out)
}

/// One canonical term: `weight * chi^2_1(noncentrality)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadTerm {
    pub weight: f64,
    pub noncentrality: f64,
}

/// Canonical representation of a sum of independent Gaussian quadratic
/// forms, aggregated over all frequencies.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadFormSpec {
    pub terms: Vec<QuadTerm>,
    /// Which component this spec came from, and at which truncation.
    pub provenance: String,
    pub k_max: usize,
    /// Reciprocal-trace MGF validity bound `1 / sum_i |xi_i|`.
    pub trace_bound: f64,
    /// Largest weight magnitude; the MGF additionally requires
    /// `t < 1 / (2 max|xi|)`.
    pub max_weight: f64,
    /// Weight mass removed by the truncation-control filter.
    pub dropped_mass: f64,
}

/// Reduces `Y^T A Y` with `Y ~ N(mu, V)` to canonical terms: eigenvalues
/// of `V^{1/2} A V^{1/2}` paired with the squared projections of the
/// standardized mean.
pub fn quadform_canonical(
    a: &DMatrix<f64>,
    v: &DMatrix<f64>,
    mu: &DVector<f64>,
) -> Result<Vec<QuadTerm>> {
    let r = a.nrows();
    if a.ncols() != r || v.nrows() != r || v.ncols() != r || mu.len() != r {
        return Err(Error::Dimension("quadform_canonical dimensions disagree".into()));
    }
    if (a - a.transpose()).norm() > 1e-10 * a.norm().max(1.0) {
        return Err(Error::Validation("kernel must be symmetric".into()));
    }
    let v_half = spd_sqrt(v, 0)?;
    let b = {
        let b = &v_half * a * &v_half;
        (&b + b.transpose()) * 0.5
    };
    let (p, xi) = sym_eigen_desc(&b)?;
    let delta = if mu.iter().all(|&m| m == 0.0) {
        DVector::zeros(r)
    } else {
        let v_inv_half = spd_inv_sqrt(v, 0)?;
        p.transpose() * v_inv_half * mu
    };
    Ok((0..r)
        .map(|i| QuadTerm {
            weight: xi[i],
            noncentrality: delta[i] * delta[i],
        })
        .collect())
}

impl QuadFormSpec {
    pub fn from_terms(terms: Vec<QuadTerm>, provenance: impl Into<String>, k_max: usize) -> Self {
        let mut spec = Self {
            terms,
            provenance: provenance.into(),
            k_max,
            trace_bound: f64::INFINITY,
            max_weight: 0.0,
            dropped_mass: 0.0,
        };
        spec.finalize();
        spec
    }

    /// Canonical terms of one variance component, aggregated over all
    /// frequencies of the model.
    pub fn from_component(
        model: &ModelSpec,
        w: &WeightOperator,
        which: Component,
    ) -> Result<Self> {
        let kernels = component_kernels(model, w, which)?;
        let mut terms = Vec::with_capacity(model.k_max() * model.n());
        for (k, a) in kernels.iter().enumerate() {
            let v = model.cov(k);
            let mu = model.mean(k);
            terms.extend(quadform_canonical(a, &v, &mu)?);
        }
        Ok(Self::from_terms(
            terms,
            format!("{which}@k_max={}", model.k_max()),
            model.k_max(),
        ))
    }

    /// Applies the truncation filter and recomputes the cached bounds.
    fn finalize(&mut self) {
        let max_abs = self
            .terms
            .iter()
            .map(|t| t.weight.abs())
            .fold(0.0_f64, f64::max);
        let cutoff = 1e-14 * max_abs;
        let mut dropped = 0.0;
        self.terms.retain(|t| {
            let keep = t.weight.abs() >= cutoff || t.noncentrality >= 1e-14;
            if !keep {
                dropped += t.weight.abs();
            }
            keep
        });
        self.dropped_mass = dropped;
        self.max_weight = max_abs;
        let abs_sum: f64 = self.terms.iter().map(|t| t.weight.abs()).sum();
        self.trace_bound = if abs_sum > 0.0 { 1.0 / abs_sum } else { f64::INFINITY };
    }

    pub fn mean(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| t.weight * (1.0 + t.noncentrality))
            .sum()
    }

    pub fn variance(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| 2.0 * t.weight * t.weight * (1.0 + 2.0 * t.noncentrality))
            .sum()
    }

    pub fn all_weights_nonnegative(&self) -> bool {
        self.terms.iter().all(|t| t.weight >= 0.0)
    }

    /// Largest weight, reported against the strictly-less-than-one
    /// hypothesis of the MGF theorem (checked, never gated on).
    pub fn max_weight_below_one(&self) -> bool {
        self.max_weight < 1.0
    }
}

/// Moment generating function `E[exp(t Q)]`, valid strictly below both
/// the reciprocal-trace bound and `1/(2 max xi)`.
pub fn mgf(spec: &QuadFormSpec, t: f64) -> Result<f64> {
    let pos_bound = if spec.max_weight > 0.0 {
        1.0 / (2.0 * spec.max_weight)
    } else {
        f64::INFINITY
    };
    let bound = spec.trace_bound.min(pos_bound);
    if t >= bound {
        return Err(Error::MgfBound { t, bound });
    }
    let mut log_acc = 0.0;
    for term in &spec.terms {
        let lin = 1.0 - 2.0 * t * term.weight;
        if lin <= 0.0 {
            return Err(Error::MgfBound { t, bound });
        }
        log_acc += -0.5 * lin.ln() + t * term.weight * term.noncentrality / lin;
    }
    Ok(log_acc.exp())
}

fn log_cf_at(terms: &[QuadTerm], omega: C64) -> C64 {
    let i = C64::new(0.0, 1.0);
    let mut acc = C64::new(0.0, 0.0);
    for term in terms {
        let lin = C64::new(1.0, 0.0) - 2.0 * i * omega * term.weight;
        acc += -0.5 * lin.ln() + i * omega * term.weight * term.noncentrality / lin;
    }
    acc
}

/// Characteristic function `E[exp(i omega Q)]`; exists for all real omega.
pub fn cf(spec: &QuadFormSpec, omega: f64) -> C64 {
    log_cf_at(&spec.terms, C64::new(omega, 0.0)).exp()
}

/// Adaptive Simpson on a real-valued function.
fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, fa, m, fm, left, lm, flm, tol / 2.0, depth - 1)
                + recurse(f, m, fm, b, fb, right, rm, frm, tol / 2.0, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, whole, m, fm, tol, 48)
}

/// `P(Q <= x)` via Gil-Pelaez inversion, clamped to [0, 1].
pub fn cdf(spec: &QuadFormSpec, x: f64) -> Result<f64> {
    if spec.terms.is_empty() || spec.terms.iter().all(|t| t.weight == 0.0) {
        // degenerate spec: point mass at 0
        return Ok(if x >= 0.0 { 1.0 } else { 0.0 });
    }
    if spec.all_weights_nonnegative() && x <= 0.0 {
        return Ok(0.0);
    }
    let mean = spec.mean();
    let terms = &spec.terms;
    let i = C64::new(0.0, 1.0);
    // Gil-Pelaez integrand on the real axis, with its removable
    // singularity at 0 filled in by the limit (mean - x).
    let integrand = move |omega: f64| -> f64 {
        if omega.abs() < 1e-300 {
            return mean - x;
        }
        let val = (log_cf_at(terms, C64::new(omega, 0.0)) - i * omega * x).exp();
        val.im / omega
    };

    let tol = 1e-9;
    // Split point: keep the real-axis segment to a bounded number of
    // oscillation periods while covering the CF's own decay scale.
    let scale = if spec.max_weight > 0.0 {
        1.0 / (2.0 * spec.max_weight)
    } else {
        1.0
    };
    let split = if x.abs() > 0.0 {
        (60.0 / x.abs()).min(scale * 20.0).max(scale * 0.5)
    } else {
        scale * 20.0
    };
    let mut integral = adaptive_simpson(&integrand, 0.0, split, tol);

    // Tail along the ray omega = split + t e^{-i pi/4}. The branch cuts of
    // every log factor sit on the negative imaginary axis, strictly
    // outside the swept sector, and exp(-i omega x) decays there for
    // x > 0.
    let dir = C64::from_polar(1.0, -std::f64::consts::FRAC_PI_4);
    let tail = move |t: f64| -> f64 {
        let omega = C64::new(split, 0.0) + dir * t;
        let val = (log_cf_at(terms, omega) - i * omega * x).exp();
        (val * dir / omega).im
    };
    let mut a = 0.0;
    let mut len = split.max(1.0);
    let mut achieved = f64::INFINITY;
    for _ in 0..64 {
        let seg = adaptive_simpson(&tail, a, a + len, tol);
        integral += seg;
        a += len;
        len *= 2.0;
        achieved = seg.abs();
        if achieved < 1e-10 && tail(a).abs() < 1e-12 {
            break;
        }
    }
    if achieved > 1e-6 {
        return Err(Error::Quadrature { achieved });
    }
    let p = 0.5 - integral / std::f64::consts::PI;
    Ok(p.clamp(0.0, 1.0))
}

/// Inverse CDF by bisection; the bracket starts from Chebyshev-type
/// bounds around the mean and expands as needed.
pub fn quantile(spec: &QuadFormSpec, p: f64) -> Result<f64> {
    if !(0.0 < p && p < 1.0) {
        return Err(Error::Domain(format!("quantile requires p in (0,1), got {p}")));
    }
    if spec.terms.is_empty() || spec.terms.iter().all(|t| t.weight == 0.0) {
        return Ok(0.0);
    }
    let mean = spec.mean();
    let sd = spec.variance().max(0.0).sqrt();
    let mut lo = if spec.all_weights_nonnegative() {
        0.0
    } else {
        mean - 10.0 * sd - 1.0
    };
    let mut hi = mean + (10.0 * sd).max(1.0);
    let mut tries = 0;
    while cdf(spec, hi)? < p {
        hi = mean + (hi - mean) * 2.0;
        tries += 1;
        if tries > 60 {
            return Err(Error::Bracket(format!("upper bound not found below {hi}")));
        }
    }
    while cdf(spec, lo)? > p {
        lo -= (mean - lo).abs().max(1.0);
        tries += 1;
        if tries > 120 {
            return Err(Error::Bracket(format!("lower bound not found above {lo}")));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let c = cdf(spec, mid)?;
        if (c - p).abs() < 1e-6 {
            return Ok(mid);
        }
        if c < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 * (1.0 + hi.abs()) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// One per-k MGF factor evaluated directly from the matrices:
/// `det(I - 2t A V)^{-1/2} exp(-1/2 mu^T (I - (I - 2t A V)^{-1}) V^{-1} mu)`.
///
/// This is the determinant/exponential route; the canonical route must
/// agree with it and the pair forms the central dual-route check.
pub fn mgf_direct_factor(
    a: &DMatrix<f64>,
    v: &DMatrix<f64>,
    mu: &DVector<f64>,
    t: f64,
) -> Result<f64> {
    let r = a.nrows();
    let id = DMatrix::<f64>::identity(r, r);
    let m = &id - (a * v) * (2.0 * t);
    let det = m.determinant();
    if det <= 0.0 {
        return Err(Error::MgfBound { t, bound: f64::NAN });
    }
    let det_part = det.powf(-0.5);
    if mu.iter().all(|&x| x == 0.0) {
        return Ok(det_part);
    }
    let m_inv = m
        .try_inverse()
        .ok_or(Error::Domain("direct MGF factor: singular resolvent".into()))?;
    let v_inv = Cholesky::new(v.clone())
        .ok_or(Error::Domain("direct MGF factor: covariance not PD".into()))?
        .inverse();
    let quad = (mu.transpose() * (&id - m_inv) * v_inv * mu)[(0, 0)];
    Ok(det_part * (-0.5 * quad).exp())
}

/// One per-k CF factor evaluated directly from the matrices, with the
/// determinant taken over the symmetric congruence
/// `I - 2 i omega V^{1/2} A V^{1/2}`.
pub fn cf_direct_factor(
    a: &DMatrix<f64>,
    v: &DMatrix<f64>,
    mu: &DVector<f64>,
    omega: f64,
) -> Result<C64> {
    let r = a.nrows();
    let v_half = spd_sqrt(v, 0)?;
    let b = {
        let b = &v_half * a * &v_half;
        (&b + b.transpose()) * 0.5
    };
    let two_iw = C64::new(0.0, 2.0 * omega);
    let to_c = |m: &DMatrix<f64>| m.map(|x| C64::new(x, 0.0));
    let idc = DMatrix::<C64>::identity(r, r);
    let m = &idc - to_c(&b) * two_iw;
    let det = m.determinant();
    let det_part = det.powc(C64::new(-0.5, 0.0));
    if mu.iter().all(|&x| x == 0.0) {
        return Ok(det_part);
    }
    let m_inv = m
        .clone()
        .try_inverse()
        .ok_or(Error::Domain("direct CF factor: singular resolvent".into()))?;
    let v_inv_half = to_c(&spd_inv_sqrt(v, 0)?);
    let muc = mu.map(|x| C64::new(x, 0.0));
    let s = &v_inv_half * muc;
    let quad = (s.transpose() * (&idc - m_inv) * &s)[(0, 0)];
    Ok(det_part * (-0.5 * quad).exp())
}

/// Full-product direct CF across every frequency of a component (log
/// accumulation over per-k factors).
pub fn cf_direct(
    model: &ModelSpec,
    w: &WeightOperator,
    which: Component,
    omega: f64,
) -> Result<C64> {
    let kernels = component_kernels(model, w, which)?;
    let mut log_acc = C64::new(0.0, 0.0);
    for (k, a) in kernels.iter().enumerate() {
        let f = cf_direct_factor(a, &model.cov(k), &model.mean(k), omega)?;
        log_acc += f.ln();
    }
    Ok(log_acc.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, StandardNormal};
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn random_spd(rng: &mut StdRng, n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    fn chi2_spec(dof: usize) -> QuadFormSpec {
        QuadFormSpec::from_terms(
            vec![QuadTerm { weight: 1.0, noncentrality: 0.0 }; dof],
            "chi2",
            1,
        )
    }

    #[test]
    fn canonical_identity_is_central_chi2() {
        let terms = quadform_canonical(
            &DMatrix::identity(3, 3),
            &DMatrix::identity(3, 3),
            &DVector::zeros(3),
        )
        .unwrap();
        assert_eq!(terms.len(), 3);
        for t in terms {
            assert_relative_eq!(t.weight, 1.0, epsilon = 1e-12);
            assert_relative_eq!(t.noncentrality, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn canonical_noncentral_case() {
        let terms = quadform_canonical(
            &DMatrix::identity(2, 2),
            &DMatrix::identity(2, 2),
            &DVector::from_vec(vec![2.0, 0.0]),
        )
        .unwrap();
        let total_nc: f64 = terms.iter().map(|t| t.noncentrality).sum();
        assert_relative_eq!(total_nc, 4.0, epsilon = 1e-10);
        for t in &terms {
            assert_relative_eq!(t.weight, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn canonical_matches_monte_carlo_two_ways() {
        let mut rng = StdRng::seed_from_u64(31);
        let r = 3;
        let a_half = DMatrix::from_fn(r, r, |_, _| rng.gen_range(-1.0..1.0));
        let a = (&a_half + a_half.transpose()) * 0.5;
        let v = random_spd(&mut rng, r);
        let mu = DVector::from_fn(r, |_, _| rng.gen_range(-1.0..1.0));
        let terms = quadform_canonical(&a, &v, &mu).unwrap();

        let l = Cholesky::new(v.clone()).unwrap().l();
        let n = 100_000;
        let mut direct: Vec<f64> = (0..n)
            .map(|_| {
                let z = DVector::from_fn(r, |_, _| StandardNormal.sample(&mut rng));
                let y = &mu + &l * z;
                (y.transpose() * &a * &y)[(0, 0)]
            })
            .collect();
        let mut reduced: Vec<f64> = (0..n)
            .map(|_| {
                terms
                    .iter()
                    .map(|t| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        let shift = t.noncentrality.sqrt();
                        t.weight * (z + shift) * (z + shift)
                    })
                    .sum()
            })
            .collect();
        direct.sort_by(|x, y| x.partial_cmp(y).unwrap());
        reduced.sort_by(|x, y| x.partial_cmp(y).unwrap());
        // two-sample KS distance
        let mut ks: f64 = 0.0;
        let (mut i, mut j) = (0usize, 0usize);
        while i < n && j < n {
            if direct[i] <= reduced[j] {
                i += 1;
            } else {
                j += 1;
            }
            ks = ks.max((i as f64 - j as f64).abs() / n as f64);
        }
        assert!(ks < 0.01, "KS distance {ks}");
    }

    #[test]
    fn mgf_trivial_points() {
        let spec = chi2_spec(1);
        assert_relative_eq!(mgf(&spec, 0.0).unwrap(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(mgf(&spec, 0.25).unwrap(), 2.0_f64.sqrt(), epsilon = 1e-12);
        assert!(matches!(mgf(&spec, 1.0), Err(Error::MgfBound { .. })));
    }

    #[test]
    fn mgf_is_increasing_below_bound() {
        let spec = QuadFormSpec::from_terms(
            vec![
                QuadTerm { weight: 0.5, noncentrality: 0.3 },
                QuadTerm { weight: 0.2, noncentrality: 0.0 },
            ],
            "test",
            1,
        );
        let bound = spec.trace_bound.min(1.0 / (2.0 * spec.max_weight));
        let mut prev = 0.0;
        for j in 0..20 {
            let t = bound * (j as f64) / 21.0;
            let m = mgf(&spec, t).unwrap();
            assert!(m >= prev);
            prev = m;
        }
    }

    #[test]
    fn mgf_derivative_at_zero_is_the_mean() {
        let spec = QuadFormSpec::from_terms(
            vec![
                QuadTerm { weight: 0.7, noncentrality: 1.2 },
                QuadTerm { weight: 0.1, noncentrality: 0.0 },
                QuadTerm { weight: 0.05, noncentrality: 2.0 },
            ],
            "test",
            1,
        );
        let h = 1e-5;
        let deriv = (mgf(&spec, h).unwrap() - mgf(&spec, -h).unwrap()) / (2.0 * h);
        assert_relative_eq!(deriv, spec.mean(), max_relative = 1e-4);
    }

    #[test]
    fn cf_trivial_and_hand_values() {
        let spec = chi2_spec(1);
        let at0 = cf(&spec, 0.0);
        assert_relative_eq!(at0.re, 1.0, epsilon = 1e-14);
        assert_relative_eq!(at0.im, 0.0, epsilon = 1e-14);
        // (1 - 2i)^{-1/2}
        let at1 = cf(&spec, 1.0);
        let expect = C64::new(1.0, -2.0).powc(C64::new(-0.5, 0.0));
        assert_relative_eq!(at1.re, expect.re, epsilon = 1e-12);
        assert_relative_eq!(at1.im, expect.im, epsilon = 1e-12);
        assert_relative_eq!(at1.re, 0.5689, epsilon = 2e-4);
        assert_relative_eq!(at1.im, 0.3516, epsilon = 2e-4);
    }

    #[test]
    fn cf_hermitian_and_bounded() {
        let spec = QuadFormSpec::from_terms(
            vec![
                QuadTerm { weight: 0.8, noncentrality: 0.5 },
                QuadTerm { weight: 0.3, noncentrality: 0.0 },
                QuadTerm { weight: 0.1, noncentrality: 2.0 },
            ],
            "test",
            1,
        );
        for j in 1..50 {
            let w = j as f64 * 0.37;
            let plus = cf(&spec, w);
            let minus = cf(&spec, -w);
            assert_relative_eq!(plus.re, minus.re, epsilon = 1e-12);
            assert_relative_eq!(plus.im, -minus.im, epsilon = 1e-12);
            assert!(plus.norm() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn cdf_matches_chi_square_reference() {
        let spec = chi2_spec(1);
        let got = cdf(&spec, 3.841).unwrap();
        let reference = ChiSquared::new(1.0).unwrap().cdf(3.841);
        assert!((got - reference).abs() < 1e-4, "got {got} reference {reference}");

        let spec2 = chi2_spec(2);
        for x in [0.5, 1.0, 3.0, 5.991, 10.0] {
            let got = cdf(&spec2, x).unwrap();
            let reference = ChiSquared::new(2.0).unwrap().cdf(x);
            assert!((got - reference).abs() < 1e-5, "x={x} got {got} ref {reference}");
        }
    }

    #[test]
    fn cdf_degenerate_spec_is_a_step() {
        let spec = QuadFormSpec::from_terms(vec![], "degenerate", 1);
        assert_eq!(cdf(&spec, -0.5).unwrap(), 0.0);
        assert_eq!(cdf(&spec, 0.0).unwrap(), 1.0);
        assert_eq!(cdf(&spec, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn cdf_is_monotone_and_reaches_one() {
        let spec = QuadFormSpec::from_terms(
            vec![
                QuadTerm { weight: 1.0, noncentrality: 1.0 },
                QuadTerm { weight: 0.5, noncentrality: 0.0 },
                QuadTerm { weight: 0.25, noncentrality: 0.0 },
            ],
            "test",
            1,
        );
        let mut prev = -1.0;
        for j in 0..40 {
            let x = j as f64 * 0.5;
            let c = cdf(&spec, x).unwrap();
            assert!(c >= prev - 1e-6);
            prev = c;
        }
        let far = spec.mean() + 40.0 * spec.variance().sqrt();
        assert!((cdf(&spec, far).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn quantile_matches_chi_square_reference() {
        let spec = chi2_spec(2);
        let q = quantile(&spec, 0.95).unwrap();
        assert!((q - 5.991).abs() < 1e-3, "got {q}");
        let spec1 = chi2_spec(1);
        let q = quantile(&spec1, 0.95).unwrap();
        assert!((q - 3.841).abs() < 1e-3, "got {q}");
    }

    #[test]
    fn quantile_inverts_cdf_across_levels() {
        let spec = QuadFormSpec::from_terms(
            vec![
                QuadTerm { weight: 1.3, noncentrality: 0.7 },
                QuadTerm { weight: 0.4, noncentrality: 0.0 },
            ],
            "test",
            1,
        );
        for p in [0.01, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99] {
            let x = quantile(&spec, p).unwrap();
            assert!((cdf(&spec, x).unwrap() - p).abs() < 2e-6, "p={p}");
        }
    }

    #[test]
    fn canonical_factor_equals_direct_factor() {
        let mut rng = StdRng::seed_from_u64(32);
        for _ in 0..25 {
            let r = rng.gen_range(2..4);
            let a_half = DMatrix::from_fn(r, r, |_, _| rng.gen_range(-1.0..1.0));
            let a = (&a_half + a_half.transpose()) * 0.5;
            let v = random_spd(&mut rng, r);
            let mu = DVector::from_fn(r, |_, _| rng.gen_range(-1.0..1.0));
            let terms = quadform_canonical(&a, &v, &mu).unwrap();
            let spec = QuadFormSpec::from_terms(terms, "factor", 1);

            // real-t route
            let bound = spec.trace_bound.min(1.0 / (2.0 * spec.max_weight.max(1e-9)));
            let t = 0.3 * bound.min(1.0);
            if let Ok(direct) = mgf_direct_factor(&a, &v, &mu, t) {
                let canonical = mgf(&spec, t).unwrap();
                assert_relative_eq!(canonical, direct, max_relative = 1e-10);
            }

            // complex route
            for w in [0.3, 1.7, -2.4] {
                let direct = cf_direct_factor(&a, &v, &mu, w).unwrap();
                let canonical = cf(&spec, w);
                assert!((canonical - direct).norm() <= 1e-10 * direct.norm().max(1.0));
            }
        }
    }

    #[test]
    fn cdf_against_monte_carlo() {
        let mut rng = StdRng::seed_from_u64(33);
        let spec = QuadFormSpec::from_terms(
            vec![
                QuadTerm { weight: 1.0, noncentrality: 0.5 },
                QuadTerm { weight: 0.6, noncentrality: 0.0 },
                QuadTerm { weight: 0.3, noncentrality: 1.0 },
                QuadTerm { weight: 0.1, noncentrality: 0.0 },
            ],
            "test",
            1,
        );
        let n = 100_000;
        let mut draws: Vec<f64> = (0..n)
            .map(|_| {
                spec.terms
                    .iter()
                    .map(|t| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        let s = t.noncentrality.sqrt();
                        t.weight * (z + s) * (z + s)
                    })
                    .sum()
            })
            .collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut sup: f64 = 0.0;
        for j in (0..n).step_by(997) {
            let x = draws[j];
            let emp = (j + 1) as f64 / n as f64;
            let exact = cdf(&spec, x).unwrap();
            sup = sup.max((emp - exact).abs());
        }
        assert!(sup < 0.01, "sup distance {sup}");
    }
}
