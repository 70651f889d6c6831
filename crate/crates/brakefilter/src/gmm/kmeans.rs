//! Lloyd k-means used to initialize EM.
//!
//! The clustering runs a configurable number of restarts; the winner is the
//! restart whose induced mixture (centers as means, per-cluster covariances,
//! cluster-fraction weights) scores the highest total log-likelihood.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::AugmentedSample;
use crate::gmm::{GaussianComponent, MixtureModel, RIDGE_SCALE};
use crate::math::GaussianDensity;

/// K-means initialization settings for EM.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KMeansInit {
    /// Independent clustering runs; the best by induced log-likelihood wins.
    pub restarts: usize,
    pub seed: u64,
    /// Cap on Lloyd iterations per restart.
    pub max_lloyd_iters: usize,
}

impl Default for KMeansInit {
    fn default() -> Self {
        Self {
            restarts: crate::defaults::KMEANS_RESTARTS,
            seed: 0,
            max_lloyd_iters: 25,
        }
    }
}

impl KMeansInit {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

/// Runs restarted k-means on the flattened samples and returns the centers
/// of the restart whose induced mixture has the highest log-likelihood.
/// Deterministic given the seed; restarts draw from one seed stream, so a
/// higher restart count can only improve the selected initialization.
pub fn kmeans_init(
    data: &[AugmentedSample],
    k: usize,
    restarts: usize,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    let vectors: Vec<DVector<f64>> = data.iter().map(AugmentedSample::to_vector).collect();
    let init = KMeansInit {
        restarts,
        seed,
        ..KMeansInit::default()
    };
    let model = best_induced_model(&vectors, k, &init)?;
    Ok(model
        .components()
        .iter()
        .map(|c| c.mean.clone())
        .collect())
}

/// Best induced mixture across restarts (see [`kmeans_init`]).
pub(crate) fn best_induced_model(
    vectors: &[DVector<f64>],
    k: usize,
    init: &KMeansInit,
) -> Result<MixtureModel> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if init.restarts == 0 {
        return Err(Error::Config("restarts must be at least 1".into()));
    }
    if vectors.len() < k {
        return Err(Error::InsufficientData {
            needed: k,
            got: vectors.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(init.seed);
    let mut best: Option<(f64, MixtureModel)> = None;
    for _ in 0..init.restarts {
        let seeds = rand::seq::index::sample(&mut rng, vectors.len(), k);
        let centers0: Vec<DVector<f64>> = seeds.iter().map(|i| vectors[i].clone()).collect();
        let (centers, assignments) = lloyd(vectors, centers0, init.max_lloyd_iters);
        let model = induced_model(vectors, &centers, &assignments, k)?;
        let ll = model.log_likelihood_vectors(vectors)?;
        if best.as_ref().is_none_or(|(best_ll, _)| ll > *best_ll) {
            best = Some((ll, model));
        }
    }
    Ok(best.expect("at least one restart ran").1)
}

/// Standard Lloyd iterations with squared Euclidean distance. Ties in the
/// nearest-center search break toward the lowest center index; a cluster
/// that empties is relocated to the point farthest from its assigned center
/// so every cluster of the final clustering carries data.
fn lloyd(
    vectors: &[DVector<f64>],
    mut centers: Vec<DVector<f64>>,
    max_iters: usize,
) -> (Vec<DVector<f64>>, Vec<usize>) {
    let k = centers.len();
    let mut assignments = assign(vectors, &centers);
    for _ in 0..max_iters {
        let mut sums = vec![DVector::zeros(vectors[0].len()); k];
        let mut counts = vec![0usize; k];
        for (v, &a) in vectors.iter().zip(&assignments) {
            sums[a] += v;
            counts[a] += 1;
        }
        for (i, (sum, &count)) in sums.into_iter().zip(&counts).enumerate() {
            if count > 0 {
                centers[i] = sum / count as f64;
            }
        }
        if counts.contains(&0) {
            let mut dists: Vec<f64> = vectors
                .iter()
                .zip(&assignments)
                .map(|(v, &a)| squared_distance(v, &centers[a]))
                .collect();
            for i in 0..k {
                if counts[i] == 0 {
                    let farthest = dists
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                        .map(|(idx, _)| idx)
                        .expect("vectors is non-empty");
                    centers[i] = vectors[farthest].clone();
                    dists[farthest] = 0.0;
                }
            }
        }
        let next = assign(vectors, &centers);
        let stable = next == assignments;
        assignments = next;
        if stable {
            break;
        }
    }
    (centers, assignments)
}

fn assign(vectors: &[DVector<f64>], centers: &[DVector<f64>]) -> Vec<usize> {
    vectors
        .iter()
        .map(|v| {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (i, c) in centers.iter().enumerate() {
                let d = squared_distance(v, c);
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            best
        })
        .collect()
}

fn squared_distance(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// Builds the mixture induced by a clustering: centers as means, biased
/// per-cluster covariances (ridge-regularized), cluster fractions as
/// weights. Clusters too small to carry a usable covariance fall back to
/// the global covariance.
fn induced_model(
    vectors: &[DVector<f64>],
    centers: &[DVector<f64>],
    assignments: &[usize],
    k: usize,
) -> Result<MixtureModel> {
    let n = vectors.len();
    let mut counts = vec![0usize; k];
    for &a in assignments {
        counts[a] += 1;
    }

    let global = global_covariance(vectors)?;
    let mut weights = Vec::with_capacity(k);
    let mut components = Vec::with_capacity(k);
    for i in 0..k {
        weights.push(counts[i] as f64 / n as f64);
        let covariance = if counts[i] == 0 {
            global.clone()
        } else {
            let mut cov = scatter_around(
                vectors,
                |t| if assignments[t] == i { 1.0 } else { 0.0 },
                &centers[i],
                counts[i] as f64,
            );
            apply_relative_ridge(&mut cov);
            if GaussianDensity::new(centers[i].clone(), &cov).is_none() {
                global.clone()
            } else {
                cov
            }
        };
        components.push(GaussianComponent {
            mean: centers[i].clone(),
            covariance,
        });
    }
    MixtureModel::new(weights, components)
}

pub(crate) fn global_covariance(vectors: &[DVector<f64>]) -> Result<DMatrix<f64>> {
    let n = vectors.len();
    let d = vectors[0].len();
    let mut mean = DVector::zeros(d);
    for v in vectors {
        mean += v;
    }
    mean /= n as f64;
    let mut cov = scatter_around(vectors, |_| 1.0, &mean, n as f64);
    apply_relative_ridge(&mut cov);
    if GaussianDensity::new(mean, &cov).is_none() {
        return Err(Error::DegenerateComponent {
            component: 0,
            reason: "global covariance is singular (duplicated data?)".into(),
        });
    }
    Ok(cov)
}

/// Weighted scatter matrix around `center`, divided by `total_weight`.
/// Only the upper triangle is accumulated and then mirrored, so the result
/// is exactly symmetric.
pub(crate) fn scatter_around(
    vectors: &[DVector<f64>],
    weight: impl Fn(usize) -> f64,
    center: &DVector<f64>,
    total_weight: f64,
) -> DMatrix<f64> {
    let d = center.len();
    let mut cov = DMatrix::zeros(d, d);
    let mut diff = DVector::zeros(d);
    for (t, v) in vectors.iter().enumerate() {
        let w = weight(t);
        if w == 0.0 {
            continue;
        }
        diff.copy_from(v);
        diff -= center;
        for a in 0..d {
            let wa = w * diff[a];
            for b in a..d {
                cov[(a, b)] += wa * diff[b];
            }
        }
    }
    cov /= total_weight;
    for a in 0..d {
        for b in (a + 1)..d {
            cov[(b, a)] = cov[(a, b)];
        }
    }
    cov
}

/// Adds λI with λ = RIDGE_SCALE·trace(Σ)/d; returns λ.
pub(crate) fn apply_relative_ridge(cov: &mut DMatrix<f64>) -> f64 {
    let d = cov.nrows();
    let lambda = RIDGE_SCALE * cov.trace() / d as f64;
    for i in 0..d {
        cov[(i, i)] += lambda;
    }
    lambda
}
