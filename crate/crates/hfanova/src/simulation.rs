//! Sampling from the model and Monte Carlo utilities.
//!
//! Randomness is ChaCha-based and fully deterministic given the seed.
//! Each replicate draws from its own counter-mode stream, so replicates
//! can be generated in parallel in any order and still produce identical
//! output.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::QuadFormSpec;
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::spectral::CoefficientBlock;

/// Simulation settings: the seed fixes the whole dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub replicates: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { seed: 0, replicates: 1 }
    }
}

fn cholesky_factors(model: &ModelSpec) -> Result<Vec<Option<Cholesky<f64, nalgebra::Dyn>>>> {
    (0..model.k_max())
        .map(|k| {
            if model.sigma == 0.0 {
                return Ok(None);
            }
            Cholesky::new(model.cov(k))
                .map(Some)
                .ok_or(Error::NotPositiveDefinite { k: k + 1 })
        })
        .collect()
}

fn sample_with(
    model: &ModelSpec,
    chols: &[Option<Cholesky<f64, nalgebra::Dyn>>],
    rng: &mut ChaCha8Rng,
) -> CoefficientBlock {
    let n = model.n();
    let mut data = DMatrix::zeros(model.k_max(), n);
    for k in 0..model.k_max() {
        let mut yk = model.mean(k);
        if let Some(chol) = &chols[k] {
            let z = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
            yk += chol.l() * z;
        }
        data.row_mut(k).copy_from(&yk.transpose());
    }
    CoefficientBlock::new(data).expect("sampled coefficients are finite")
}

/// One dataset `Y_k = X beta_k + sigma Lambda_k^{1/2}-factor * z_k`. With
/// `sigma = 0` the output is exactly `X beta`.
pub fn sample_dataset(model: &ModelSpec, seed: u64) -> Result<CoefficientBlock> {
    let chols = cholesky_factors(model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_with(model, &chols, &mut rng))
}

/// Many replicates, generated in parallel; replicate `r` draws from
/// stream `r` of the seeded generator, so the output is independent of the
/// scheduling order.
pub fn sample_many(model: &ModelSpec, seed: u64, replicates: usize) -> Result<Vec<CoefficientBlock>> {
    let chols = cholesky_factors(model)?;
    Ok((0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64 + 1);
            sample_with(model, &chols, &mut rng)
        })
        .collect())
}

/// Applies a statistic to each replicate in parallel, preserving order.
pub fn replicate_statistic<F>(
    model: &ModelSpec,
    seed: u64,
    replicates: usize,
    stat: F,
) -> Result<Vec<f64>>
where
    F: Fn(&CoefficientBlock) -> Result<f64> + Sync,
{
    let chols = cholesky_factors(model)?;
    (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64 + 1);
            stat(&sample_with(model, &chols, &mut rng))
        })
        .collect()
}

/// One draw of the canonical quadratic form `sum_i xi_i chi^2_1(delta_i^2)`.
pub fn sample_quadform<R: Rng>(spec: &QuadFormSpec, rng: &mut R) -> f64 {
    spec.terms
        .iter()
        .map(|t| {
            let z: f64 = StandardNormal.sample(rng);
            let s = z + t.noncentrality.sqrt();
            t.weight * s * s
        })
        .sum()
}

/// Right-continuous empirical CDF over a fixed sample.
#[derive(Debug, Clone)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Validation("empirical CDF needs samples".into()));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite sample".into()));
        }
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(Self { sorted: samples })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let idx = self.sorted.partition_point(|&v| v <= x);
        idx as f64 / self.sorted.len() as f64
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.sorted
    }

    /// Supremum distance against an exact CDF, evaluated at the sample
    /// points from both sides of each jump.
    pub fn sup_distance<F: Fn(f64) -> f64>(&self, exact: F) -> f64 {
        let n = self.sorted.len() as f64;
        let mut sup: f64 = 0.0;
        for (i, &x) in self.sorted.iter().enumerate() {
            let f = exact(x);
            sup = sup.max(((i + 1) as f64 / n - f).abs());
            sup = sup.max((i as f64 / n - f).abs());
        }
        sup
    }
}

/// Sample mean, variance, and standard error of the mean.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct McMoments {
    pub mean: f64,
    pub variance: f64,
    pub std_error: f64,
    pub n: usize,
}

pub fn mc_moments(samples: &[f64]) -> Result<McMoments> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::Validation("moments need at least two samples".into()));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let variance =
        samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    Ok(McMoments {
        mean,
        variance,
        std_error: (variance / n as f64).sqrt(),
        n,
    })
}
