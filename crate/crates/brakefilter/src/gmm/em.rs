//! Expectation-maximization fit of the mixture.
//!
//! Responsibilities and the log-likelihood are computed in log space. After
//! every M-step each covariance gets a relative ridge λI with
//! λ = 1e-6·trace(Σ)/d, which keeps the binary brake coordinate from driving
//! the matrix singular while preserving scale invariance.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::AugmentedSample;
use crate::gmm::kmeans::{
    apply_relative_ridge, best_induced_model, global_covariance, scatter_around, KMeansInit,
};
use crate::gmm::{GaussianComponent, MixtureModel};
use crate::math::{log_sum_exp, mix_seed, GaussianDensity};

/// A component whose responsibility mass falls below this fraction of n is
/// considered collapsed and reinitialized.
const COLLAPSE_MASS_FRACTION: f64 = 1e-10;

/// Convergence diagnostics of one EM run.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub final_log_likelihood: f64,
    /// Number of E/M cycles performed.
    pub iterations: usize,
    /// Whether the log-likelihood improvement dropped below epsilon before
    /// the iteration cap.
    pub converged: bool,
    /// Log-likelihood after initialization and after each cycle;
    /// non-decreasing up to ridge-induced slack.
    pub log_likelihood_trace: Vec<f64>,
}

/// Fits an `m_components`-component mixture to the augmented samples.
///
/// Initialization comes from restarted k-means; iteration stops at the first
/// cycle whose log-likelihood improvement is below `epsilon`, or at
/// `max_iter`. Deterministic given `init.seed`.
pub fn fit_em(
    data: &[AugmentedSample],
    m_components: usize,
    init: &KMeansInit,
    epsilon: f64,
    max_iter: usize,
) -> Result<(MixtureModel, FitReport)> {
    let vectors: Vec<DVector<f64>> = data.iter().map(AugmentedSample::to_vector).collect();
    let detail = fit_em_vectors(&vectors, m_components, init, epsilon, max_iter)?;
    Ok((detail.model, detail.report))
}

pub(crate) struct EmDetail {
    pub model: MixtureModel,
    pub report: FitReport,
    /// The responsibilities consumed by the final M-step (n×M). The returned
    /// parameters are exactly the M-step update of these, plus the ridge.
    #[cfg_attr(not(test), allow(dead_code))]
    pub final_responsibilities: DMatrix<f64>,
}

pub(crate) fn fit_em_vectors(
    vectors: &[DVector<f64>],
    m_components: usize,
    init: &KMeansInit,
    epsilon: f64,
    max_iter: usize,
) -> Result<EmDetail> {
    if m_components == 0 {
        return Err(Error::Config("m_components must be at least 1".into()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if max_iter == 0 {
        return Err(Error::Config("max_iter must be at least 1".into()));
    }
    if vectors.len() < m_components {
        return Err(Error::InsufficientData {
            needed: m_components,
            got: vectors.len(),
        });
    }

    let n = vectors.len();
    let mut model = best_induced_model(vectors, m_components, init)?;
    // Separate stream from the k-means draws so collapse handling cannot
    // perturb initialization determinism.
    let mut collapse_rng = ChaCha8Rng::seed_from_u64(mix_seed(init.seed, 0xC011_A95E));

    let mut resp = DMatrix::zeros(n, m_components);
    let mut final_resp = DMatrix::zeros(n, m_components);
    let mut ll = e_step(&model, vectors, &mut resp)?;
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;

    for k in 1..=max_iter {
        model = m_step(vectors, &resp, &model, &mut collapse_rng)?;
        final_resp.copy_from(&resp);
        iterations = k;
        let ll_next = e_step(&model, vectors, &mut resp)?;
        trace.push(ll_next);
        if ll_next - ll < epsilon {
            converged = true;
            break;
        }
        ll = ll_next;
    }

    let report = FitReport {
        final_log_likelihood: *trace.last().expect("trace is non-empty"),
        iterations,
        converged,
        log_likelihood_trace: trace,
    };
    Ok(EmDetail {
        model,
        report,
        final_responsibilities: final_resp,
    })
}

/// Fills `resp` with posterior component probabilities and returns the total
/// log-likelihood at the current parameters.
fn e_step(model: &MixtureModel, vectors: &[DVector<f64>], resp: &mut DMatrix<f64>) -> Result<f64> {
    let m = model.m_components();
    let caches = model.density_cache()?;
    let log_weights: Vec<f64> = model.weights().iter().map(|&w| w.ln()).collect();
    let mut scratch = DVector::zeros(model.dim());
    let mut terms = vec![0.0; m];
    let mut total = 0.0;
    for (t, v) in vectors.iter().enumerate() {
        for i in 0..m {
            terms[i] = log_weights[i] + caches[i].log_pdf_with(v, &mut scratch);
        }
        let lse = log_sum_exp(&terms);
        if lse == f64::NEG_INFINITY {
            return Err(Error::Numerical(format!(
                "sample {t} has zero density under every component"
            )));
        }
        total += lse;
        for i in 0..m {
            resp[(t, i)] = (terms[i] - lse).exp();
        }
    }
    Ok(total)
}

/// Maximization update: weights from responsibility masses, means and biased
/// covariances from responsibility-weighted moments, then the ridge. A
/// collapsed component restarts at a random data point with the global
/// covariance.
fn m_step(
    vectors: &[DVector<f64>],
    resp: &DMatrix<f64>,
    previous: &MixtureModel,
    collapse_rng: &mut ChaCha8Rng,
) -> Result<MixtureModel> {
    let n = vectors.len();
    let d = vectors[0].len();
    let m = previous.m_components();

    let mut masses = vec![0.0; m];
    for t in 0..n {
        for i in 0..m {
            masses[i] += resp[(t, i)];
        }
    }

    let mut global: Option<DMatrix<f64>> = None;
    let mut weights = Vec::with_capacity(m);
    let mut components = Vec::with_capacity(m);
    for i in 0..m {
        if masses[i] < COLLAPSE_MASS_FRACTION * n as f64 {
            log::debug!("component {i} collapsed (mass {:.3e}); reinitializing", masses[i]);
            if global.is_none() {
                global = Some(global_covariance(vectors)?);
            }
            let pick = collapse_rng.random_range(0..n);
            weights.push(1.0 / m as f64);
            components.push(GaussianComponent {
                mean: vectors[pick].clone(),
                covariance: global.clone().expect("global covariance just computed"),
            });
            continue;
        }

        weights.push(masses[i] / n as f64);
        let mut mean = DVector::zeros(d);
        for (t, v) in vectors.iter().enumerate() {
            mean.axpy(resp[(t, i)], v, 1.0);
        }
        mean /= masses[i];

        let mut cov = scatter_around(vectors, |t| resp[(t, i)], &mean, masses[i]);
        apply_relative_ridge(&mut cov);
        if GaussianDensity::new(mean.clone(), &cov).is_none() {
            return Err(Error::DegenerateComponent {
                component: i,
                reason: "covariance not positive definite after regularization".into(),
            });
        }
        components.push(GaussianComponent { mean, covariance: cov });
    }

    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    MixtureModel::new(weights, components)
}
