//! Model (de)serialization: one JSON document carrying the mixture, the
//! transfer matrix, and the default critical value. Covariances are written
//! as full symmetric matrices and checked for symmetry on load.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureOrder;
use crate::fsio::atomic_write;
use crate::gmm::{GaussianComponent, MixtureModel};
use crate::hmm::BrakeHmm;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Simplex / symmetry tolerance applied when loading.
const LOAD_TOL: f64 = 1e-9;

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    feature_order: FeatureOrder,
    m_components: usize,
    dim: usize,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    /// Row-major full symmetric matrices.
    covariances: Vec<Vec<Vec<f64>>>,
    transfer: Vec<Vec<f64>>,
    default_critical_value: f64,
}

/// Writes the model atomically as pretty-printed JSON.
pub fn save_model(model: &BrakeHmm, default_critical_value: f64, path: &Path) -> Result<()> {
    if !(default_critical_value > 0.0 && default_critical_value < 1.0) {
        return Err(Error::Config(format!(
            "default critical value must be in (0, 1), got {default_critical_value}"
        )));
    }
    let mixture = model.mixture();
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        feature_order: model.feature_order().clone(),
        m_components: mixture.m_components(),
        dim: mixture.dim(),
        weights: mixture.weights().to_vec(),
        means: mixture
            .components()
            .iter()
            .map(|c| c.mean.iter().copied().collect())
            .collect(),
        covariances: mixture
            .components()
            .iter()
            .map(|c| {
                (0..c.covariance.nrows())
                    .map(|a| (0..c.covariance.ncols()).map(|b| c.covariance[(a, b)]).collect())
                    .collect()
            })
            .collect(),
        transfer: (0..model.transfer().nrows())
            .map(|i| {
                (0..model.transfer().ncols())
                    .map(|j| model.transfer()[(i, j)])
                    .collect()
            })
            .collect(),
        default_critical_value,
    };
    let bytes = serde_json::to_vec_pretty(&file)
        .map_err(|e| Error::ModelFile(format!("serialization failed: {e}")))?;
    atomic_write(path, &bytes)?;
    Ok(())
}

/// Loads and validates a model file; returns the model and its stored
/// default critical value.
pub fn load_model(path: &Path) -> Result<(BrakeHmm, f64)> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::ModelFile(format!("{}: {e}", path.display())))?;
    let file: ModelFile = serde_json::from_slice(&bytes)
        .map_err(|e| Error::ModelFile(format!("{}: {e}", path.display())))?;

    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::ModelFile(format!(
            "unsupported format_version {} (expected {MODEL_FORMAT_VERSION})",
            file.format_version
        )));
    }
    file.feature_order
        .validate()
        .map_err(|e| Error::ModelFile(format!("feature_order: {e}")))?;
    let m = file.m_components;
    let d = file.dim;
    if file.weights.len() != m || file.means.len() != m || file.covariances.len() != m {
        return Err(Error::ModelFile(format!(
            "m_components={m} does not match weights/means/covariances lengths"
        )));
    }

    let weight_sum: f64 = file.weights.iter().sum();
    if (weight_sum - 1.0).abs() > LOAD_TOL || file.weights.iter().any(|&w| w < 0.0) {
        return Err(Error::ModelFile(format!(
            "weights violate the probability simplex (sum {weight_sum})"
        )));
    }

    let mut components = Vec::with_capacity(m);
    for (i, (mean, cov)) in file.means.iter().zip(&file.covariances).enumerate() {
        if mean.len() != d {
            return Err(Error::ModelFile(format!(
                "component {i}: mean has {} entries, expected {d}",
                mean.len()
            )));
        }
        if cov.len() != d || cov.iter().any(|row| row.len() != d) {
            return Err(Error::ModelFile(format!(
                "component {i}: covariance is not {d}x{d}"
            )));
        }
        let mut matrix = DMatrix::zeros(d, d);
        for a in 0..d {
            for b in 0..d {
                matrix[(a, b)] = cov[a][b];
            }
        }
        for a in 0..d {
            for b in (a + 1)..d {
                if (matrix[(a, b)] - matrix[(b, a)]).abs() > LOAD_TOL {
                    return Err(Error::ModelFile(format!(
                        "component {i}: covariance asymmetric at ({a},{b})"
                    )));
                }
                // Make the parse exact so downstream block partitions agree.
                let avg = 0.5 * (matrix[(a, b)] + matrix[(b, a)]);
                matrix[(a, b)] = avg;
                matrix[(b, a)] = avg;
            }
        }
        components.push(GaussianComponent {
            mean: DVector::from_row_slice(mean),
            covariance: matrix,
        });
    }

    if file.transfer.len() != m || file.transfer.iter().any(|row| row.len() != m) {
        return Err(Error::ModelFile(format!("transfer is not {m}x{m}")));
    }
    let mut transfer = DMatrix::zeros(m, m);
    for i in 0..m {
        let row_sum: f64 = file.transfer[i].iter().sum();
        if (row_sum - 1.0).abs() > LOAD_TOL || file.transfer[i].iter().any(|&v| v < 0.0) {
            return Err(Error::ModelFile(format!(
                "transfer row {i} violates the probability simplex (sum {row_sum})"
            )));
        }
        for j in 0..m {
            transfer[(i, j)] = file.transfer[i][j];
        }
    }

    if !(file.default_critical_value > 0.0 && file.default_critical_value < 1.0) {
        return Err(Error::ModelFile(format!(
            "default_critical_value must be in (0, 1), got {}",
            file.default_critical_value
        )));
    }

    let mixture = MixtureModel::new(file.weights, components)
        .map_err(|e| Error::ModelFile(format!("invalid mixture: {e}")))?;
    let model = BrakeHmm::new(mixture, transfer, file.feature_order)
        .map_err(|e| Error::ModelFile(format!("invalid model: {e}")))?;
    Ok((model, file.default_critical_value))
}
