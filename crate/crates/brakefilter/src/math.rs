//! Numeric helpers: stable log-sum-exp and Cholesky-backed Gaussian
//! log-densities. Everything probability-valued is kept in log space until
//! the final normalization.

use nalgebra::{DMatrix, DVector};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Derives an independent RNG seed from a base seed and a stream tag
/// (splitmix64 finalizer).
pub(crate) fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Numerically stable `log(sum(exp(x)))` over a slice.
pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        // All -inf (or an entry is +inf/NaN, which propagates as is).
        return max;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// A multivariate Gaussian prepared for repeated log-density evaluation.
///
/// Stores the lower Cholesky factor `L` of the covariance, so one density
/// evaluation is a forward substitution plus a dot product.
#[derive(Debug, Clone)]
pub(crate) struct GaussianDensity {
    mean: DVector<f64>,
    chol_l: DMatrix<f64>,
    /// -(d/2)·ln(2π) - ½·ln|Σ|
    log_norm: f64,
}

impl GaussianDensity {
    /// Returns `None` when the covariance is not positive definite.
    pub fn new(mean: DVector<f64>, covariance: &DMatrix<f64>) -> Option<Self> {
        let dim = mean.len();
        if covariance.nrows() != dim || covariance.ncols() != dim {
            return None;
        }
        let chol = nalgebra::Cholesky::new(covariance.clone())?;
        let chol_l = chol.l();
        let log_det: f64 = (0..dim).map(|i| chol_l[(i, i)].ln()).sum::<f64>() * 2.0;
        if !log_det.is_finite() {
            return None;
        }
        Some(Self {
            mean,
            chol_l,
            log_norm: -0.5 * (dim as f64 * LN_2PI + log_det),
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Log-density at `x`. `scratch` must have the same length as the mean;
    /// it is overwritten.
    pub fn log_pdf_with(&self, x: &DVector<f64>, scratch: &mut DVector<f64>) -> f64 {
        scratch.copy_from(x);
        *scratch -= &self.mean;
        // z = L⁻¹ (x - μ); the quadratic form is |z|².
        if !self.chol_l.solve_lower_triangular_mut(scratch) {
            return f64::NEG_INFINITY;
        }
        self.log_norm - 0.5 * scratch.norm_squared()
    }

    #[cfg(test)]
    pub fn log_pdf(&self, x: &DVector<f64>) -> f64 {
        let mut scratch = DVector::zeros(self.mean.len());
        self.log_pdf_with(x, &mut scratch)
    }

    /// Solves `Σ w = b` through the stored Cholesky factor.
    pub fn solve_spd(&self, b: &DVector<f64>) -> Option<DVector<f64>> {
        let y = self.chol_l.solve_lower_triangular(b)?;
        self.chol_l.tr_solve_lower_triangular(&y)
    }
}
