//! Evaluation: confusion counts, the three classification rates, k-fold
//! cross-validation over events, and critical-value sweeps.
//!
//! Folds partition events, never ticks, so no within-event temporal
//! correlation leaks from test into train. A rate whose denominator is zero
//! is reported as undefined rather than imputed.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureOrder;
use crate::gmm::{fit_em, FitReport, KMeansInit};
use crate::hmm::{assign_modes, decode, estimate_transfer, BrakeHmm};
use crate::math::mix_seed;
use crate::pipeline::{CarFollowingEvent, DriverDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    #[serde(rename = "tp")]
    pub true_pos: u64,
    #[serde(rename = "fn")]
    pub false_neg: u64,
    #[serde(rename = "fp")]
    pub false_pos: u64,
    #[serde(rename = "tn")]
    pub true_neg: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_neg + self.false_pos + self.true_neg
    }
}

/// Tallies binary labels against predictions.
pub fn confusion(labels: &[u8], predictions: &[u8]) -> Result<ConfusionCounts> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("confusion needs at least one sample"));
    }
    if labels.len() != predictions.len() {
        return Err(Error::LengthMismatch {
            labels: labels.len(),
            predictions: predictions.len(),
        });
    }
    let mut c = ConfusionCounts::default();
    for (&label, &pred) in labels.iter().zip(predictions) {
        match (label, pred) {
            (1, 1) => c.true_pos += 1,
            (1, 0) => c.false_neg += 1,
            (0, 1) => c.false_pos += 1,
            (0, 0) => c.true_neg += 1,
            _ => {
                return Err(Error::Domain(format!(
                    "labels and predictions must be binary, got ({label}, {pred})"
                )))
            }
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

/// Accuracy, sensitivity (recall on brakes), and specificity (recall on
/// non-brakes). Errors identify exactly which denominator is zero.
pub fn metrics(c: &ConfusionCounts) -> Result<MetricSet> {
    if c.total() == 0 {
        return Err(Error::UndefinedMetric {
            metric: "accuracy",
            denominator: "total count",
        });
    }
    let positives = c.true_pos + c.false_neg;
    if positives == 0 {
        return Err(Error::UndefinedMetric {
            metric: "sensitivity",
            denominator: "TP + FN",
        });
    }
    let negatives = c.true_neg + c.false_pos;
    if negatives == 0 {
        return Err(Error::UndefinedMetric {
            metric: "specificity",
            denominator: "TN + FP",
        });
    }
    Ok(MetricSet {
        accuracy: (c.true_pos + c.true_neg) as f64 / c.total() as f64,
        sensitivity: c.true_pos as f64 / positives as f64,
        specificity: c.true_neg as f64 / negatives as f64,
    })
}

fn rate(numerator: u64, denominator: u64) -> Option<f64> {
    (denominator > 0).then(|| numerator as f64 / denominator as f64)
}

/// GMM/HMM training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub m_components: usize,
    pub epsilon: f64,
    pub max_iter: usize,
    pub restarts: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            m_components: crate::defaults::M_COMPONENTS,
            epsilon: crate::defaults::EPSILON,
            max_iter: crate::defaults::MAX_ITER,
            restarts: crate::defaults::KMEANS_RESTARTS,
        }
    }
}

/// Full training composition: pool ticks across events, fit the mixture,
/// hard-assign modes per event, and count the transfer matrix.
pub fn train_model(
    events: &[&CarFollowingEvent],
    config: &TrainConfig,
    seed: u64,
) -> Result<(BrakeHmm, FitReport)> {
    let pooled: Vec<_> = events.iter().flat_map(|e| e.ticks.iter().copied()).collect();
    if pooled.is_empty() {
        return Err(Error::EmptyInput("training needs at least one tick"));
    }
    let init = KMeansInit {
        restarts: config.restarts,
        seed,
        ..KMeansInit::default()
    };
    let (mixture, report) = fit_em(
        &pooled,
        config.m_components,
        &init,
        config.epsilon,
        config.max_iter,
    )?;
    let mode_sequences: Vec<Vec<usize>> = events
        .iter()
        .map(|e| assign_modes(&mixture, &e.ticks))
        .collect::<Result<_>>()?;
    let transfer = estimate_transfer(&mode_sequences, config.m_components)?;
    let model = BrakeHmm::new(mixture, transfer, FeatureOrder::standard())?;
    Ok((model, report))
}

/// One fold's counts and rates; an undefined rate stays `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    #[serde(flatten)]
    pub counts: ConfusionCounts,
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

/// Mean or standard deviation per metric, over the folds where the metric
/// is defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricSummary {
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CvReport {
    pub driver_id: String,
    pub kappa: usize,
    pub critical_value: f64,
    pub folds: Vec<FoldResult>,
    pub mean: MetricSummary,
    pub std: MetricSummary,
}

/// κ-fold cross-validation at event granularity.
///
/// Events are put in a canonical order (source trace, start time), shuffled
/// deterministically from `seed`, and split into κ near-equal folds, so the
/// partition is independent of the caller's event ordering. Each fold trains
/// on the other κ-1 folds and is scored on its own events.
pub fn cross_validate(
    dataset: &DriverDataset,
    kappa: usize,
    config: &TrainConfig,
    critical_value: f64,
    seed: u64,
) -> Result<CvReport> {
    if kappa < 2 {
        return Err(Error::Config(format!(
            "kappa must be at least 2, got {kappa}"
        )));
    }
    let n_events = dataset.events.len();
    if n_events < kappa {
        return Err(Error::InsufficientData {
            needed: kappa,
            got: n_events,
        });
    }

    let mut order: Vec<usize> = (0..n_events).collect();
    order.sort_by(|&a, &b| {
        let ea = &dataset.events[a];
        let eb = &dataset.events[b];
        ea.source_trace
            .cmp(&eb.source_trace)
            .then(ea.start_t.partial_cmp(&eb.start_t).expect("finite start times"))
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let base = n_events / kappa;
    let remainder = n_events % kappa;
    let mut folds_idx: Vec<Vec<usize>> = Vec::with_capacity(kappa);
    let mut cursor = 0;
    for f in 0..kappa {
        let size = base + usize::from(f < remainder);
        folds_idx.push(order[cursor..cursor + size].to_vec());
        cursor += size;
    }

    let mut folds = Vec::with_capacity(kappa);
    for (f, test_idx) in folds_idx.iter().enumerate() {
        let train_events: Vec<&CarFollowingEvent> = folds_idx
            .iter()
            .enumerate()
            .filter(|(other, _)| *other != f)
            .flat_map(|(_, idx)| idx.iter().map(|&i| &dataset.events[i]))
            .collect();
        let (model, _) = train_model(&train_events, config, mix_seed(seed, f as u64 + 1))
            .map_err(|e| e.in_fold(f))?;

        let mut labels = Vec::new();
        let mut actions = Vec::new();
        for &i in test_idx {
            let event = &dataset.events[i];
            let xis: Vec<_> = event.ticks.iter().map(|s| s.xi).collect();
            let inferred = model
                .run_sequence(&xis, critical_value)
                .map_err(|e| e.in_fold(f))?;
            labels.extend(event.ticks.iter().map(|s| s.brake));
            actions.extend(inferred.iter().map(|t| t.action));
        }
        let counts = confusion(&labels, &actions).map_err(|e| e.in_fold(f))?;
        folds.push(FoldResult {
            fold: f,
            counts,
            accuracy: rate(counts.true_pos + counts.true_neg, counts.total()),
            sensitivity: rate(counts.true_pos, counts.true_pos + counts.false_neg),
            specificity: rate(counts.true_neg, counts.true_neg + counts.false_pos),
        });
    }

    let acc = summarize(&folds, |f| f.accuracy);
    let sen = summarize(&folds, |f| f.sensitivity);
    let spe = summarize(&folds, |f| f.specificity);
    let mean = MetricSummary {
        accuracy: acc.map(|(m, _)| m),
        sensitivity: sen.map(|(m, _)| m),
        specificity: spe.map(|(m, _)| m),
    };
    let std = MetricSummary {
        accuracy: acc.map(|(_, s)| s),
        sensitivity: sen.map(|(_, s)| s),
        specificity: spe.map(|(_, s)| s),
    };

    Ok(CvReport {
        driver_id: dataset.driver_id.clone(),
        kappa,
        critical_value,
        folds,
        mean,
        std,
    })
}

/// Mean and sample standard deviation over the folds where the metric is
/// defined; `None` when no fold defines it.
fn summarize(folds: &[FoldResult], pick: impl Fn(&FoldResult) -> Option<f64>) -> Option<(f64, f64)> {
    let values: Vec<f64> = folds.iter().filter_map(pick).collect();
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Some((mean, std))
}

/// Metrics at one decoding threshold of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub critical_value: f64,
    #[serde(flatten)]
    pub counts: ConfusionCounts,
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

/// Evaluates the same inferred brake expectations at several critical
/// values. The expectations are computed once; only the decoding threshold
/// varies, so predicted positives are non-increasing along rising
/// thresholds.
pub fn threshold_sweep(
    model: &BrakeHmm,
    events: &[CarFollowingEvent],
    critical_values: &[f64],
) -> Result<Vec<SweepPoint>> {
    if critical_values.is_empty() {
        return Err(Error::Config("threshold list must be non-empty".into()));
    }
    for &cv in critical_values {
        if !(cv > 0.0 && cv < 1.0) {
            return Err(Error::Config(format!(
                "critical value must be in (0, 1), got {cv}"
            )));
        }
    }
    if events.is_empty() {
        return Err(Error::EmptyInput("threshold sweep needs at least one event"));
    }

    let mut br_hats = Vec::new();
    let mut labels = Vec::new();
    for event in events {
        let xis: Vec<_> = event.ticks.iter().map(|s| s.xi).collect();
        // The decoding threshold passed here is irrelevant: only br_hat is
        // kept and re-decoded per sweep point.
        let inferred = model.run_sequence(&xis, 0.5)?;
        br_hats.extend(inferred.iter().map(|t| t.br_hat));
        labels.extend(event.ticks.iter().map(|s| s.brake));
    }

    critical_values
        .iter()
        .map(|&cv| {
            let predictions: Vec<u8> = br_hats
                .iter()
                .map(|&b| decode(b, cv))
                .collect::<Result<_>>()?;
            let counts = confusion(&labels, &predictions)?;
            Ok(SweepPoint {
                critical_value: cv,
                counts,
                accuracy: rate(counts.true_pos + counts.true_neg, counts.total()),
                sensitivity: rate(counts.true_pos, counts.true_pos + counts.false_neg),
                specificity: rate(counts.true_neg, counts.true_neg + counts.false_pos),
            })
        })
        .collect()
}
