//! brakefilter learns a driver's braking behavior in car-following traces as
//! a Gaussian-mixture hidden Markov model and infers, tick by tick, whether
//! the driver will brake.
//!
//! The pieces, in pipeline order:
//!
//! - [`pipeline`]: trace-file ingestion and car-following event extraction.
//! - [`features`]: the observable 4-vector `[range, ego_speed,
//!   relative_speed, ttc]` and the brake-augmented 5-vector it trains on.
//! - [`gmm`]: EM-fitted Gaussian mixture over the augmented samples, with
//!   k-means initialization and BIC component selection.
//! - [`hmm`]: mixture components reinterpreted as hidden modes, a counted
//!   transfer matrix, the normalized forward filter over observable
//!   features, and mixture regression from filter state to a brake
//!   expectation.
//! - [`eval`]: k-fold cross-validation, confusion metrics, and
//!   critical-value sweeps.
//! - [`simgen`]: a synthetic car-following trace generator used for
//!   end-to-end testing.

// Validation sites use `!(x > 0.0)` so NaN fails the check too; `x <= 0.0`
// would let NaN through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod features;
pub mod gmm;
pub mod hmm;
pub mod pipeline;
pub mod simgen;

mod math;

pub use error::{Error, Result};
pub use eval::{
    confusion, cross_validate, metrics, threshold_sweep, ConfusionCounts, CvReport, MetricSet,
    SweepPoint, TrainConfig,
};
pub use features::{
    compute_features, AugmentedSample, FeatureOrder, ObservationVector, AUGMENTED_DIM,
    FEATURE_DIM,
};
pub use gmm::{
    bic, fit_em, free_parameter_count, kmeans_init, select_components, ComponentSelection,
    FitReport, GaussianComponent, KMeansInit, MixtureModel,
};
pub use hmm::{
    assign_modes, decode, estimate_transfer, load_model, save_model, BrakeHmm, FilterState,
    ForwardStep, PartitionedComponent, TickInference,
};
pub use pipeline::{
    build_dataset, load_trace, segment_events, write_trace, CarFollowingEvent, DriverDataset,
    RawTick, Rejection, SegmentationRules, TurnSignal,
};
pub use simgen::{simulate, simulate_corpus, CorpusManifest, JitterSpec, SimConfig};

/// Defaults from the method this crate implements. All are overridable at
/// the call sites that use them.
pub mod defaults {
    /// Default number of mixture components.
    pub const M_COMPONENTS: usize = 10;
    /// EM convergence threshold on the log-likelihood improvement.
    pub const EPSILON: f64 = 1e-10;
    /// Safety cap on EM iterations.
    pub const MAX_ITER: usize = 500;
    /// K-means restarts used to seed EM.
    pub const KMEANS_RESTARTS: usize = 5;
    /// Cross-validation fold count.
    pub const KAPPA: usize = 10;
    /// Decoding threshold on the inferred brake expectation.
    pub const CRITICAL_VALUE: f64 = 0.9;
    /// Minimum car-following events for a driver to be admitted.
    pub const MIN_EVENTS: usize = 500;
    /// Nominal trace sampling rate, Hz.
    pub const SAMPLE_HZ: f64 = 10.0;
}

pub(crate) mod fsio {
    use std::io::Write;
    use std::path::Path;

    /// Writes a file atomically: temp file in the same directory, then
    /// rename. Interrupted runs never leave partial artifacts.
    pub fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
        let mut tmp = match dir {
            Some(dir) => tempfile::NamedTempFile::new_in(dir)?,
            None => tempfile::NamedTempFile::new_in(".")?,
        };
        tmp.write_all(bytes)?;
        tmp.flush()?;
        tmp.persist(path).map_err(|e| e.error)?;
        Ok(())
    }
}
