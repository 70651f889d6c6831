//! Multivariate Gaussian mixture over augmented samples, fitted by EM with
//! k-means initialization, with BIC-based component-count selection.

mod em;
mod kmeans;

pub use em::{fit_em, FitReport};
pub use kmeans::{kmeans_init, KMeansInit};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::features::AugmentedSample;
use crate::math::{log_sum_exp, GaussianDensity};

/// Ridge added to each covariance after an M-step, relative to the mean
/// diagonal magnitude: λ = RIDGE_SCALE · trace(Σ)/d.
pub(crate) const RIDGE_SCALE: f64 = 1e-6;

const WEIGHT_SUM_TOL: f64 = 1e-9;
const SYMMETRY_TOL: f64 = 1e-12;

/// One Gaussian component: mean vector and full covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// Weighted mixture of Gaussian components over a common dimension.
///
/// Immutable once constructed; the constructor checks the weight simplex,
/// covariance symmetry, and positive-definiteness.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    weights: Vec<f64>,
    components: Vec<GaussianComponent>,
    dim: usize,
}

impl MixtureModel {
    pub fn new(weights: Vec<f64>, components: Vec<GaussianComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::EmptyInput("mixture needs at least one component"));
        }
        if weights.len() != components.len() {
            return Err(Error::Dimension {
                expected: components.len(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::Domain("mixture weights must be nonnegative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Domain(format!(
                "mixture weights must sum to 1, got {sum}"
            )));
        }
        let dim = components[0].mean.len();
        for (i, c) in components.iter().enumerate() {
            if c.mean.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: c.mean.len(),
                });
            }
            if c.covariance.nrows() != dim || c.covariance.ncols() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: c.covariance.nrows(),
                });
            }
            for a in 0..dim {
                for b in (a + 1)..dim {
                    if (c.covariance[(a, b)] - c.covariance[(b, a)]).abs() > SYMMETRY_TOL {
                        return Err(Error::Domain(format!(
                            "component {i} covariance is not symmetric at ({a},{b})"
                        )));
                    }
                }
            }
            if GaussianDensity::new(c.mean.clone(), &c.covariance).is_none() {
                return Err(Error::DegenerateComponent {
                    component: i,
                    reason: "covariance is not positive definite".into(),
                });
            }
        }
        Ok(Self {
            weights,
            components,
            dim,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn m_components(&self) -> usize {
        self.components.len()
    }

    /// Log of the mixture density at `zeta`, computed via log-sum-exp over
    /// the per-component log densities.
    pub fn log_density(&self, zeta: &DVector<f64>) -> Result<f64> {
        self.check_dim(zeta)?;
        let caches = self.density_cache()?;
        let mut scratch = DVector::zeros(self.dim);
        let terms: Vec<f64> = caches
            .iter()
            .zip(&self.weights)
            .map(|(g, &w)| w.ln() + g.log_pdf_with(zeta, &mut scratch))
            .collect();
        Ok(log_sum_exp(&terms))
    }

    /// Posterior probability of each component given `zeta`. Entries are
    /// nonnegative and sum to 1.
    pub fn responsibilities(&self, zeta: &DVector<f64>) -> Result<Vec<f64>> {
        self.check_dim(zeta)?;
        let caches = self.density_cache()?;
        let mut scratch = DVector::zeros(self.dim);
        let terms: Vec<f64> = caches
            .iter()
            .zip(&self.weights)
            .map(|(g, &w)| w.ln() + g.log_pdf_with(zeta, &mut scratch))
            .collect();
        let lse = log_sum_exp(&terms);
        if lse == f64::NEG_INFINITY {
            return Err(Error::Numerical(
                "point has zero density under every component".into(),
            ));
        }
        let mut resp: Vec<f64> = terms.iter().map(|&l| (l - lse).exp()).collect();
        let total: f64 = resp.iter().sum();
        for r in &mut resp {
            *r /= total;
        }
        Ok(resp)
    }

    /// Total log-likelihood of `data` under this model.
    pub fn log_likelihood(&self, data: &[AugmentedSample]) -> Result<f64> {
        let vectors: Vec<DVector<f64>> = data.iter().map(AugmentedSample::to_vector).collect();
        self.log_likelihood_vectors(&vectors)
    }

    pub(crate) fn log_likelihood_vectors(&self, vectors: &[DVector<f64>]) -> Result<f64> {
        let caches = self.density_cache()?;
        let mut scratch = DVector::zeros(self.dim);
        let mut terms = vec![0.0; self.m_components()];
        let mut total = 0.0;
        for v in vectors {
            self.check_dim(v)?;
            for (i, (g, &w)) in caches.iter().zip(&self.weights).enumerate() {
                terms[i] = w.ln() + g.log_pdf_with(v, &mut scratch);
            }
            total += log_sum_exp(&terms);
        }
        Ok(total)
    }

    pub(crate) fn density_cache(&self) -> Result<Vec<GaussianDensity>> {
        self.components
            .iter()
            .enumerate()
            .map(|(i, c)| {
                GaussianDensity::new(c.mean.clone(), &c.covariance).ok_or(
                    Error::DegenerateComponent {
                        component: i,
                        reason: "covariance is not positive definite".into(),
                    },
                )
            })
            .collect()
    }

    fn check_dim(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: v.len(),
            });
        }
        Ok(())
    }
}

/// Number of free parameters of an M-component full-covariance mixture in
/// dimension d: (M-1) weights + M·d means + M·d(d+1)/2 covariance entries.
pub fn free_parameter_count(m_components: usize, dim: usize) -> usize {
    (m_components - 1) + m_components * dim + m_components * dim * (dim + 1) / 2
}

/// Bayesian information criterion: -2·L(θ̂) + p·ln(n).
pub fn bic(model: &MixtureModel, data: &[AugmentedSample]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput("BIC needs a non-empty dataset"));
    }
    let ll = model.log_likelihood(data)?;
    let p = free_parameter_count(model.m_components(), model.dim()) as f64;
    Ok(-2.0 * ll + p * (data.len() as f64).ln())
}

/// Outcome of a BIC sweep over candidate component counts.
#[derive(Debug, Clone)]
pub struct ComponentSelection {
    pub best_m: usize,
    /// (M, BIC) for every candidate that fitted successfully.
    pub curve: Vec<(usize, f64)>,
    /// Candidates that failed to fit, with the failure message.
    pub failures: Vec<(usize, String)>,
}

/// Fits each candidate M and returns the one minimizing BIC together with
/// the full curve. Failed candidates are excluded with a warning record.
pub fn select_components(
    data: &[AugmentedSample],
    candidates: &[usize],
    epsilon: f64,
    seed: u64,
) -> Result<ComponentSelection> {
    if candidates.is_empty() {
        return Err(Error::Config("candidate range must be non-empty".into()));
    }
    let mut curve = Vec::new();
    let mut failures = Vec::new();
    for &m in candidates {
        let init = KMeansInit {
            seed: crate::math::mix_seed(seed, m as u64),
            ..KMeansInit::default()
        };
        match fit_em(data, m, &init, epsilon, crate::defaults::MAX_ITER) {
            Ok((model, _report)) => {
                let score = bic(&model, data)?;
                curve.push((m, score));
            }
            Err(e) => {
                log::warn!("candidate M={m} failed to fit: {e}");
                failures.push((m, e.to_string()));
            }
        }
    }
    let best_m = curve
        .iter()
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)))
        .map(|&(m, _)| m)
        .ok_or_else(|| {
            Error::Numerical(format!(
                "all {} candidate component counts failed to fit",
                candidates.len()
            ))
        })?;
    Ok(ComponentSelection {
        best_m,
        curve,
        failures,
    })
}
