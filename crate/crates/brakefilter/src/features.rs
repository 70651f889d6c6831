//! Driving-situation feature types.
//!
//! The observable state at one tick is the 4-vector `[range, ego_speed,
//! relative_speed, ttc]`; the training unit appends the binary brake label
//! as a fifth, real-valued coordinate. The brake coordinate is always last,
//! which is what the conditional-expectation block partition relies on.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimension of the observable feature vector ξ.
pub const FEATURE_DIM: usize = 4;
/// Dimension of the augmented vector ζ = [ξ, brake].
pub const AUGMENTED_DIM: usize = 5;

/// Observable driving-situation features at one tick. All units SI.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationVector {
    /// Relative distance to the preceding vehicle, meters.
    pub range: f64,
    /// Ego vehicle speed, m/s.
    pub ego_speed: f64,
    /// Preceding speed minus ego speed, m/s.
    pub relative_speed: f64,
    /// Time to collision, seconds (range / ego_speed).
    pub ttc: f64,
}

impl ObservationVector {
    /// Builds an observation from raw coordinates, checking positivity of
    /// range and ego speed. Use [`compute_features`] when starting from
    /// kinematic channels so that `ttc` is derived consistently.
    pub fn new(range: f64, ego_speed: f64, relative_speed: f64, ttc: f64) -> Result<Self> {
        if !(ego_speed > 0.0) {
            return Err(Error::Domain(format!(
                "ego_speed must be > 0 m/s, got {ego_speed}"
            )));
        }
        if !(range > 0.0) {
            return Err(Error::Domain(format!("range must be > 0 m, got {range}")));
        }
        Ok(Self {
            range,
            ego_speed,
            relative_speed,
            ttc,
        })
    }

    pub fn as_array(&self) -> [f64; FEATURE_DIM] {
        [self.range, self.ego_speed, self.relative_speed, self.ttc]
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.as_array())
    }
}

/// Computes the observable features from raw kinematic channels.
///
/// Returns `[L, v_ego, v_prec - v_ego, L / v_ego]`. Fails with a domain
/// error when `ego_speed <= 0` or `range <= 0`, which signals a sample the
/// segmenter should have excluded.
pub fn compute_features(
    range: f64,
    ego_speed: f64,
    preceding_speed: f64,
) -> Result<ObservationVector> {
    if !(ego_speed > 0.0) {
        return Err(Error::Domain(format!(
            "ego_speed must be > 0 m/s, got {ego_speed}"
        )));
    }
    if !(range > 0.0) {
        return Err(Error::Domain(format!("range must be > 0 m, got {range}")));
    }
    Ok(ObservationVector {
        range,
        ego_speed,
        relative_speed: preceding_speed - ego_speed,
        ttc: range / ego_speed,
    })
}

/// One labeled training sample: observable features plus the binary brake
/// label. The label is stored as an integer but enters the mixture model as
/// a real 0.0/1.0 coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentedSample {
    pub xi: ObservationVector,
    pub brake: u8,
}

impl AugmentedSample {
    pub fn new(xi: ObservationVector, brake: u8) -> Result<Self> {
        if brake > 1 {
            return Err(Error::Domain(format!(
                "brake label must be 0 or 1, got {brake}"
            )));
        }
        Ok(Self { xi, brake })
    }

    /// `[range, ego_speed, relative_speed, ttc, brake]`.
    pub fn flatten(&self) -> [f64; AUGMENTED_DIM] {
        let xi = self.xi.as_array();
        [xi[0], xi[1], xi[2], xi[3], f64::from(self.brake)]
    }

    /// Inverse of [`flatten`](Self::flatten); the brake coordinate must be
    /// exactly 0.0 or 1.0.
    pub fn unflatten(coords: &[f64; AUGMENTED_DIM]) -> Result<Self> {
        let brake = if coords[4] == 0.0 {
            0
        } else if coords[4] == 1.0 {
            1
        } else {
            return Err(Error::Domain(format!(
                "brake coordinate must be exactly 0.0 or 1.0, got {}",
                coords[4]
            )));
        };
        Ok(Self {
            xi: ObservationVector {
                range: coords[0],
                ego_speed: coords[1],
                relative_speed: coords[2],
                ttc: coords[3],
            },
            brake,
        })
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.flatten())
    }
}

/// The fixed coordinate convention of the augmented vector. The brake label
/// is always the last coordinate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureOrder {
    names: Vec<String>,
}

impl FeatureOrder {
    /// `[range, ego_speed, relative_speed, ttc, brake]`.
    pub fn standard() -> Self {
        Self {
            names: ["range", "ego_speed", "relative_speed", "ttc", "brake"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn validate(&self) -> Result<()> {
        if self.names.len() != AUGMENTED_DIM {
            return Err(Error::Schema(format!(
                "feature order must have {AUGMENTED_DIM} names, got {}",
                self.names.len()
            )));
        }
        if self.names.last().map(String::as_str) != Some("brake") {
            return Err(Error::Schema(
                "the brake coordinate must be last in the feature order".into(),
            ));
        }
        Ok(())
    }
}

impl Default for FeatureOrder {
    fn default() -> Self {
        Self::standard()
    }
}
