//! Hidden Markov layer over the mixture: each Gaussian component is a hidden
//! mode, the transfer matrix is counted from hard mode assignments, and the
//! normalized forward filter runs on the observable features only. The brake
//! expectation is the filter-weighted conditional mean of the brake
//! coordinate given the observables.

mod io;

pub use io::{load_model, save_model};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::features::{AugmentedSample, FeatureOrder, ObservationVector, AUGMENTED_DIM};
use crate::gmm::{GaussianComponent, MixtureModel};
use crate::math::{log_sum_exp, GaussianDensity};

const ROW_SUM_TOL: f64 = 1e-9;

/// A mixture component split at the brake coordinate (which is always last):
/// observable block, brake scalar, and the cross-covariance blocks the
/// conditional expectation needs.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedComponent {
    pub mu_xi: DVector<f64>,
    pub mu_br: f64,
    pub sigma_xx: DMatrix<f64>,
    /// Last covariance row without the corner (1×(d-1), stored flat).
    pub sigma_bx: DVector<f64>,
    /// Last covariance column without the corner ((d-1)×1).
    pub sigma_xb: DVector<f64>,
    pub sigma_bb: f64,
}

impl PartitionedComponent {
    pub fn partition(component: &GaussianComponent) -> Result<Self> {
        let d = component.mean.len();
        if d < 2 {
            return Err(Error::Dimension { expected: 2, got: d });
        }
        let cov = &component.covariance;
        let k = d - 1;
        Ok(Self {
            mu_xi: component.mean.rows(0, k).into_owned(),
            mu_br: component.mean[k],
            sigma_xx: cov.view((0, 0), (k, k)).into_owned(),
            sigma_bx: DVector::from_fn(k, |j, _| cov[(k, j)]),
            sigma_xb: DVector::from_fn(k, |j, _| cov[(j, k)]),
            sigma_bb: cov[(k, k)],
        })
    }

    /// Exact inverse of [`partition`](Self::partition).
    pub fn reassemble(&self) -> GaussianComponent {
        let k = self.mu_xi.len();
        let d = k + 1;
        let mut mean = DVector::zeros(d);
        mean.rows_mut(0, k).copy_from(&self.mu_xi);
        mean[k] = self.mu_br;
        let mut covariance = DMatrix::zeros(d, d);
        covariance.view_mut((0, 0), (k, k)).copy_from(&self.sigma_xx);
        for j in 0..k {
            covariance[(k, j)] = self.sigma_bx[j];
            covariance[(j, k)] = self.sigma_xb[j];
        }
        covariance[(k, k)] = self.sigma_bb;
        GaussianComponent { mean, covariance }
    }
}

/// Normalized forward probabilities over hidden modes at one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    alpha: DVector<f64>,
    t: usize,
}

impl FilterState {
    /// `alpha` must be a probability vector; it is renormalized exactly.
    pub fn new(alpha: DVector<f64>, t: usize) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::EmptyInput("filter state needs at least one mode"));
        }
        if alpha.iter().any(|&a| a < 0.0 || !a.is_finite()) {
            return Err(Error::Domain(
                "forward probabilities must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = alpha.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::Domain(format!(
                "forward probabilities must sum to 1, got {sum}"
            )));
        }
        Ok(Self {
            alpha: alpha / sum,
            t,
        })
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn t(&self) -> usize {
        self.t
    }
}

/// Result of one forward-filter update.
#[derive(Debug, Clone)]
pub struct ForwardStep {
    pub state: FilterState,
    /// True when every mode likelihood underflowed to zero and the filter
    /// fell back to the predict-only distribution.
    pub underflow: bool,
}

/// Per-tick output of [`BrakeHmm::run_sequence`].
#[derive(Debug, Clone)]
pub struct TickInference {
    /// 0-based tick index within the sequence.
    pub tick: usize,
    /// Raw brake expectation; unbounded, reported unclamped.
    pub br_hat: f64,
    /// Decoded binary action.
    pub action: u8,
    pub alpha: Vec<f64>,
    pub underflow: bool,
}

/// The deployable inference artifact: fitted mixture plus mode-transfer
/// matrix. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct BrakeHmm {
    mixture: MixtureModel,
    transfer: DMatrix<f64>,
    feature_order: FeatureOrder,
}

impl BrakeHmm {
    pub fn new(
        mixture: MixtureModel,
        transfer: DMatrix<f64>,
        feature_order: FeatureOrder,
    ) -> Result<Self> {
        if mixture.dim() != AUGMENTED_DIM {
            return Err(Error::Dimension {
                expected: AUGMENTED_DIM,
                got: mixture.dim(),
            });
        }
        feature_order.validate()?;
        let m = mixture.m_components();
        if transfer.nrows() != m || transfer.ncols() != m {
            return Err(Error::Dimension {
                expected: m,
                got: transfer.nrows(),
            });
        }
        for i in 0..m {
            let mut sum = 0.0;
            for j in 0..m {
                let v = transfer[(i, j)];
                if v < 0.0 || !v.is_finite() {
                    return Err(Error::Domain(format!(
                        "transfer[{i}][{j}] must be finite and nonnegative, got {v}"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Domain(format!(
                    "transfer row {i} must sum to 1, got {sum}"
                )));
            }
        }
        Ok(Self {
            mixture,
            transfer,
            feature_order,
        })
    }

    pub fn mixture(&self) -> &MixtureModel {
        &self.mixture
    }

    pub fn transfer(&self) -> &DMatrix<f64> {
        &self.transfer
    }

    pub fn feature_order(&self) -> &FeatureOrder {
        &self.feature_order
    }

    pub fn m_components(&self) -> usize {
        self.mixture.m_components()
    }

    /// α at t=1: mode weights reweighted by the per-mode observable-marginal
    /// likelihood of `xi`, normalized. Computed in log space.
    pub fn forward_init(&self, xi: &ObservationVector) -> Result<ForwardStep> {
        let marginals = self.marginals()?;
        Ok(self.init_with(&marginals, xi))
    }

    /// One forward recursion step: predict through the transfer matrix, then
    /// reweight by the per-mode observable-marginal likelihood of `xi`.
    pub fn forward_step(&self, state: &FilterState, xi: &ObservationVector) -> Result<ForwardStep> {
        let marginals = self.marginals()?;
        self.step_with(&marginals, state, xi)
    }

    /// Brake expectation at the current filter state: the α-weighted sum of
    /// per-mode linear-Gaussian regressions of the brake coordinate on the
    /// observables. Unbounded; callers decode against a critical value.
    pub fn infer_brake(&self, state: &FilterState, xi: &ObservationVector) -> Result<f64> {
        let marginals = self.marginals()?;
        self.infer_with(&marginals, state, xi)
    }

    /// Runs the filter over one event: init on the first tick, step on the
    /// rest, inferring and decoding per tick. The caller resets state across
    /// events by calling this once per event.
    pub fn run_sequence(
        &self,
        xis: &[ObservationVector],
        critical_value: f64,
    ) -> Result<Vec<TickInference>> {
        if xis.is_empty() {
            return Err(Error::EmptyInput("run_sequence needs at least one tick"));
        }
        check_critical_value(critical_value)?;
        let marginals = self.marginals()?;
        let mut out = Vec::with_capacity(xis.len());
        let mut state: Option<FilterState> = None;
        for (tick, xi) in xis.iter().enumerate() {
            let step = match &state {
                None => self.init_with(&marginals, xi),
                Some(prev) => self
                    .step_with(&marginals, prev, xi)
                    .map_err(|e| e.at_tick(tick))?,
            };
            let br_hat = self
                .infer_with(&marginals, &step.state, xi)
                .map_err(|e| e.at_tick(tick))?;
            let action = decode(br_hat, critical_value).map_err(|e| e.at_tick(tick))?;
            out.push(TickInference {
                tick,
                br_hat,
                action,
                alpha: step.state.alpha.iter().copied().collect(),
                underflow: step.underflow,
            });
            state = Some(step.state);
        }
        Ok(out)
    }

    fn init_with(&self, marginals: &[ModeMarginal], xi: &ObservationVector) -> ForwardStep {
        let x = xi.to_vector();
        let m = marginals.len();
        let mut scratch = DVector::zeros(x.len());
        let log_terms: Vec<f64> = marginals
            .iter()
            .map(|mode| mode.log_weight + mode.density.log_pdf_with(&x, &mut scratch))
            .collect();
        match normalize_log_terms(&log_terms) {
            Some(alpha) => ForwardStep {
                state: FilterState { alpha, t: 1 },
                underflow: false,
            },
            None => ForwardStep {
                // Prior fallback: every likelihood underflowed.
                state: FilterState {
                    alpha: DVector::from_fn(m, |i, _| self.mixture.weights()[i]),
                    t: 1,
                },
                underflow: true,
            },
        }
    }

    fn step_with(
        &self,
        marginals: &[ModeMarginal],
        state: &FilterState,
        xi: &ObservationVector,
    ) -> Result<ForwardStep> {
        let m = marginals.len();
        if state.alpha.len() != m {
            return Err(Error::Dimension {
                expected: m,
                got: state.alpha.len(),
            });
        }
        let x = xi.to_vector();
        // Predict in probability space; entries stay in [0, 1].
        let predicted = self.transfer.tr_mul(&state.alpha);
        let mut scratch = DVector::zeros(x.len());
        let log_terms: Vec<f64> = marginals
            .iter()
            .enumerate()
            .map(|(i, mode)| predicted[i].ln() + mode.density.log_pdf_with(&x, &mut scratch))
            .collect();
        let (alpha, underflow) = match normalize_log_terms(&log_terms) {
            Some(alpha) => (alpha, false),
            // Out-of-distribution tick: report the predict-only distribution
            // and flag it.
            None => (predicted, true),
        };
        Ok(ForwardStep {
            state: FilterState {
                alpha,
                t: state.t + 1,
            },
            underflow,
        })
    }

    fn infer_with(
        &self,
        marginals: &[ModeMarginal],
        state: &FilterState,
        xi: &ObservationVector,
    ) -> Result<f64> {
        let m = marginals.len();
        if state.alpha.len() != m {
            return Err(Error::Dimension {
                expected: m,
                got: state.alpha.len(),
            });
        }
        let x = xi.to_vector();
        let mut diff = DVector::zeros(x.len());
        let mut total = 0.0;
        for (i, mode) in marginals.iter().enumerate() {
            diff.copy_from(&x);
            diff -= mode.density.mean();
            total += state.alpha[i] * (mode.mu_br + mode.regression.dot(&diff));
        }
        Ok(total)
    }

    fn marginals(&self) -> Result<Vec<ModeMarginal>> {
        self.mixture
            .components()
            .iter()
            .zip(self.mixture.weights())
            .enumerate()
            .map(|(i, (component, &weight))| {
                let part = PartitionedComponent::partition(component)?;
                let density = GaussianDensity::new(part.mu_xi.clone(), &part.sigma_xx)
                    .ok_or(Error::SingularMatrix { component: i })?;
                let regression = density
                    .solve_spd(&part.sigma_xb)
                    .ok_or(Error::SingularMatrix { component: i })?;
                Ok(ModeMarginal {
                    log_weight: weight.ln(),
                    density,
                    regression,
                    mu_br: part.mu_br,
                })
            })
            .collect()
    }
}

struct ModeMarginal {
    log_weight: f64,
    /// Gaussian over the observable block (mean μ_ξ, covariance Σ_ξξ).
    density: GaussianDensity,
    /// w solving Σ_ξξ·w = Σ_ξBr, so E[Br|ξ] = μ_Br + w·(ξ - μ_ξ).
    regression: DVector<f64>,
    mu_br: f64,
}

/// Softmax of log terms, renormalized exactly. `None` when every term is
/// -inf.
fn normalize_log_terms(log_terms: &[f64]) -> Option<DVector<f64>> {
    let lse = log_sum_exp(log_terms);
    if lse == f64::NEG_INFINITY || lse.is_nan() {
        return None;
    }
    let mut alpha = DVector::from_fn(log_terms.len(), |i, _| (log_terms[i] - lse).exp());
    let sum: f64 = alpha.iter().sum();
    alpha /= sum;
    Some(alpha)
}

/// Hard mode assignment: the component maximizing the unweighted component
/// density at each sample. Ties break toward the lowest index.
pub fn assign_modes(mixture: &MixtureModel, data: &[AugmentedSample]) -> Result<Vec<usize>> {
    if mixture.dim() != AUGMENTED_DIM {
        return Err(Error::Dimension {
            expected: AUGMENTED_DIM,
            got: mixture.dim(),
        });
    }
    let caches = mixture.density_cache()?;
    let mut scratch = DVector::zeros(mixture.dim());
    let mut modes = Vec::with_capacity(data.len());
    for sample in data {
        let zeta = sample.to_vector();
        let mut best = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for (i, g) in caches.iter().enumerate() {
            let score = g.log_pdf_with(&zeta, &mut scratch);
            if score > best_score {
                best_score = score;
                best = i;
            }
        }
        modes.push(best);
    }
    Ok(modes)
}

/// Transfer-matrix estimate from per-event mode sequences. Transitions are
/// counted within events only; a mode with no outgoing transitions gets a
/// uniform row so the filter stays well defined.
pub fn estimate_transfer(mode_sequences: &[Vec<usize>], m: usize) -> Result<DMatrix<f64>> {
    if m == 0 {
        return Err(Error::Config("transfer matrix needs at least one mode".into()));
    }
    let mut counts = vec![vec![0u64; m]; m];
    let mut any = false;
    for seq in mode_sequences {
        for &mode in seq {
            if mode >= m {
                return Err(Error::Domain(format!(
                    "mode index {mode} out of range for M={m}"
                )));
            }
        }
        for pair in seq.windows(2) {
            counts[pair[0]][pair[1]] += 1;
            any = true;
        }
    }
    if !any {
        return Err(Error::EmptyInput(
            "transfer estimation needs at least one sequence of length 2",
        ));
    }
    let mut transfer = DMatrix::zeros(m, m);
    for i in 0..m {
        let outgoing: u64 = counts[i].iter().sum();
        if outgoing == 0 {
            for j in 0..m {
                transfer[(i, j)] = 1.0 / m as f64;
            }
        } else {
            for j in 0..m {
                transfer[(i, j)] = counts[i][j] as f64 / outgoing as f64;
            }
        }
    }
    Ok(transfer)
}

/// Binary decoding of the brake expectation: 1 iff `br_hat` is strictly
/// above the critical value (the boundary decodes to 0).
pub fn decode(br_hat: f64, critical_value: f64) -> Result<u8> {
    check_critical_value(critical_value)?;
    Ok(u8::from(br_hat > critical_value))
}

fn check_critical_value(critical_value: f64) -> Result<()> {
    if !(critical_value > 0.0 && critical_value < 1.0) {
        return Err(Error::Config(format!(
            "critical value must be in (0, 1), got {critical_value}"
        )));
    }
    Ok(())
}
