//! Diagonal Gaussians parameterized by mean and log-variance.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{bail, Result};
use crate::graph::{Graph, Var};

/// `0.5 · ln(2π)`.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalGaussian {
    pub mean: Vec<f64>,
    pub log_variance: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn new(mean: Vec<f64>, log_variance: Vec<f64>) -> Result<Self> {
        if mean.len() != log_variance.len() {
            bail!(DimensionMismatch, "mean {} vs log-variance {}", mean.len(), log_variance.len());
        }
        if log_variance.iter().any(|v| !v.is_finite()) {
            bail!(NonFinite, "log-variance");
        }
        Ok(Self { mean, log_variance })
    }

    pub fn standard(dim: usize) -> Self {
        Self { mean: alloc::vec![0.0; dim], log_variance: alloc::vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

pub fn gaussian_log_density(x: &[f64], g: &DiagonalGaussian) -> Result<f64> {
    if x.len() != g.dim() {
        bail!(DimensionMismatch, "point {} vs distribution {}", x.len(), g.dim());
    }
    if x.iter().chain(&g.mean).any(|v| !v.is_finite()) {
        bail!(NonFinite, "log-density input");
    }
    Ok(x.iter()
        .zip(&g.mean)
        .zip(&g.log_variance)
        .map(|((&xi, &mu), &lv)| -HALF_LN_2PI - 0.5 * lv - 0.5 * (xi - mu) * (xi - mu) * (-lv).exp())
        .sum())
}

/// Analytic `KL(q ‖ p)`.
pub fn gaussian_kl(q: &DiagonalGaussian, p: &DiagonalGaussian) -> Result<f64> {
    if q.dim() != p.dim() {
        bail!(DimensionMismatch, "q {} vs p {}", q.dim(), p.dim());
    }
    let mut kl = 0.0;
    for i in 0..q.dim() {
        let (mq, lq, mp, lp) = (q.mean[i], q.log_variance[i], p.mean[i], p.log_variance[i]);
        let d = mq - mp;
        kl += 0.5 * ((lq.exp() + d * d) * (-lp).exp() - 1.0 + lp - lq);
    }
    Ok(kl)
}

/// `μ + exp(logvar / 2) · noise`.
pub fn reparameterized_sample(g: &DiagonalGaussian, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != g.dim() {
        bail!(DimensionMismatch, "noise {} vs distribution {}", noise.len(), g.dim());
    }
    Ok(g.mean.iter().zip(&g.log_variance).zip(noise).map(|((&m, &lv), &e)| m + (0.5 * lv).exp() * e).collect())
}

/// A batch of diagonal Gaussians inside a graph: one distribution per row.
#[derive(Debug, Clone, Copy)]
pub struct GaussianVars {
    pub mean: Var,
    pub log_variance: Var,
}

impl GaussianVars {
    /// Splits a `n x 2d` head output into mean and log-variance halves.
    pub fn from_head(g: &mut Graph<'_>, out: Var) -> Self {
        let (_, c) = g.shape(out);
        let d = c / 2;
        Self { mean: g.slice_cols(out, 0, d), log_variance: g.slice_cols(out, d, d) }
    }

    /// Differentiable reparameterized sample with externally drawn noise.
    pub fn sample(&self, g: &mut Graph<'_>, noise: crate::Tensor) -> Var {
        let eps = g.input(noise);
        let half = g.scale(self.log_variance, 0.5);
        let std = g.exp(half);
        let scaled = g.mul(std, eps);
        g.add(self.mean, scaled)
    }

    /// Sum over all rows and dimensions of the log-density of `x`.
    pub fn log_density_sum(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let (rows, cols) = g.shape(x);
        let diff = g.sub(x, self.mean);
        let sq = g.square(diff);
        let neg_lv = g.neg(self.log_variance);
        let prec = g.exp(neg_lv);
        let quad = g.mul(sq, prec);
        let inner = g.add(self.log_variance, quad);
        let s = g.sum(inner);
        let half = g.scale(s, -0.5);
        g.add_scalar(half, -HALF_LN_2PI * (rows * cols) as f64)
    }

    pub fn row(&self, g: &Graph<'_>, r: usize) -> DiagonalGaussian {
        DiagonalGaussian {
            mean: g.value(self.mean).row_slice(r).to_vec(),
            log_variance: g.value(self.log_variance).row_slice(r).to_vec(),
        }
    }
}
