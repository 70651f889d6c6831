//! Acceptance suite. Each test checks one numbered criterion end to end and
//! prints one `acceptance NN <name>: PASS|FAIL` line (visible with
//! `--nocapture`). Timed criteria grab a global lock so parallel test
//! execution cannot distort their runtime bounds.

use std::sync::Mutex;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use brakefilter::{
    build_dataset, cross_validate, defaults, estimate_transfer, eval, fit_em, load_trace,
    metrics, segment_events, select_components, simulate_corpus, AugmentedSample, BrakeHmm,
    ConfusionCounts, FeatureOrder, FilterState, GaussianComponent, JitterSpec, KMeansInit,
    MixtureModel, ObservationVector, SegmentationRules, SimConfig, TrainConfig,
};

static SEQUENTIAL: Mutex<()> = Mutex::new(());

fn run_criterion(id: &str, name: &str, body: impl FnOnce() + std::panic::UnwindSafe) {
    let guard = SEQUENTIAL.lock().unwrap_or_else(|e| e.into_inner());
    let started = Instant::now();
    let outcome = std::panic::catch_unwind(body);
    let elapsed = started.elapsed().as_secs_f64();
    match &outcome {
        Ok(()) => println!("acceptance {id} {name}: PASS ({elapsed:.2}s)"),
        Err(_) => println!("acceptance {id} {name}: FAIL ({elapsed:.2}s)"),
    }
    drop(guard);
    if let Err(payload) = outcome {
        std::panic::resume_unwind(payload);
    }
}

// --- 1: EM monotonicity and convergence ------------------------------------

#[test]
fn criterion_01_em_monotonicity() {
    run_criterion("01", "em-monotonicity", || {
        let started = Instant::now();
        for seed in 0..10u64 {
            let data = random_mixture_dataset(seed, 2000);
            let (_, report) = fit_em(
                &data,
                4,
                &KMeansInit::with_seed(seed),
                1e-10,
                500,
            )
            .expect("fit must succeed");
            assert!(
                report.converged,
                "seed {seed}: no convergence within 500 iterations"
            );
            assert!(report.iterations <= 500);
            for (k, pair) in report.log_likelihood_trace.windows(2).enumerate() {
                assert!(
                    pair[1] >= pair[0] - 1e-8,
                    "seed {seed}: trace decreased at step {k}: {} -> {}",
                    pair[0],
                    pair[1]
                );
            }
        }
        let elapsed = started.elapsed().as_secs_f64();
        assert!(elapsed < 30.0, "EM criterion took {elapsed:.1}s (budget 30s)");
    });
}

// --- 2: log-density oracle ---------------------------------------------------

#[test]
fn criterion_02_density_oracle() {
    run_criterion("02", "density-oracle", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0xD0);
        for case in 0..1000 {
            let d = rng.random_range(1..=3);
            let m = rng.random_range(1..=3);
            let model = random_small_model(&mut rng, m, d);
            let pick = rng.random_range(0..m);
            let zeta = DVector::from_fn(d, |i, _| {
                model.components()[pick].mean[i] + rng.random_range(-2.0..2.0)
            });

            let direct = naive_mixture_density(&model, &zeta);
            let log_density = model.log_density(&zeta).unwrap();
            let rel = (log_density.exp() - direct).abs() / direct;
            assert!(
                rel <= 1e-12,
                "case {case}: relative error {rel:.3e} (direct {direct:.6e})"
            );
        }
    });
}

// --- 3: forward-filter oracle ------------------------------------------------

#[test]
fn criterion_03_forward_filter_oracle() {
    run_criterion("03", "forward-filter-oracle", || {
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(0xF0);
        for case in 0..100 {
            let model = random_brake_hmm(&mut rng, 3);
            let xis: Vec<ObservationVector> = (0..6)
                .map(|_| {
                    let pick = rng.random_range(0..3);
                    let mean = &model.mixture().components()[pick].mean;
                    ObservationVector::new(
                        mean[0] + rng.random_range(-1.5..1.5),
                        mean[1] + rng.random_range(-1.5..1.5),
                        mean[2] + rng.random_range(-1.5..1.5),
                        mean[3] + rng.random_range(-1.5..1.5),
                    )
                    .unwrap()
                })
                .collect();

            // Filtered forward variables per tick.
            let mut alphas = Vec::new();
            let mut step = model.forward_init(&xis[0]).unwrap();
            assert!(!step.underflow);
            alphas.push(step.state.alpha().clone());
            for xi in &xis[1..] {
                step = model.forward_step(&step.state, xi).unwrap();
                assert!(!step.underflow);
                alphas.push(step.state.alpha().clone());
            }

            // Brute force: enumerate every mode path of length t.
            for (t, alpha) in alphas.iter().enumerate() {
                let expected = enumerate_posterior(&model, &xis[..=t]);
                for i in 0..3 {
                    assert!(
                        (alpha[i] - expected[i]).abs() <= 1e-10,
                        "case {case} t={t} mode {i}: {} vs {}",
                        alpha[i],
                        expected[i]
                    );
                }
            }
        }
        let elapsed = started.elapsed().as_secs_f64();
        assert!(elapsed < 10.0, "filter oracle took {elapsed:.1}s (budget 10s)");
    });
}

// --- 4: Gaussian mixture regression oracle ----------------------------------

#[test]
fn criterion_04_gmr_oracle() {
    run_criterion("04", "gmr-oracle", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0x64);
        for case in 0..1000 {
            let m = rng.random_range(1..=4);
            let model = random_brake_hmm(&mut rng, m);
            let mut alpha = DVector::from_fn(m, |_, _| rng.random_range(0.01..1.0));
            alpha /= alpha.sum();
            let state = FilterState::new(alpha.clone(), 3).unwrap();
            let xi = {
                let pick = rng.random_range(0..m);
                let mean = &model.mixture().components()[pick].mean;
                ObservationVector::new(
                    mean[0] + rng.random_range(-2.0..2.0),
                    mean[1] + rng.random_range(-2.0..2.0),
                    mean[2] + rng.random_range(-2.0..2.0),
                    mean[3] + rng.random_range(-2.0..2.0),
                )
                .unwrap()
            };

            let got = model.infer_brake(&state, &xi).unwrap();
            let expected = naive_gmr(&model, &alpha, &xi);
            let tol = 1e-12 * expected.abs().max(1.0);
            assert!(
                (got - expected).abs() <= tol,
                "case {case}: {got} vs {expected}"
            );
        }

        // At xi = mu_i with alpha concentrated on i the regression term
        // vanishes and the output is the component brake mean.
        let mut rng = ChaCha8Rng::seed_from_u64(0x65);
        for _ in 0..50 {
            let m = rng.random_range(1..=4);
            let model = random_brake_hmm(&mut rng, m);
            let i = rng.random_range(0..m);
            let mean = &model.mixture().components()[i].mean;
            let xi = ObservationVector::new(mean[0], mean[1], mean[2], mean[3]).unwrap();
            let mut alpha = DVector::zeros(m);
            alpha[i] = 1.0;
            let state = FilterState::new(alpha, 1).unwrap();
            let got = model.infer_brake(&state, &xi).unwrap();
            assert!((got - mean[4]).abs() <= 1e-12, "{got} vs {}", mean[4]);
        }
    });
}

// --- 5: metrics exactness ------------------------------------------------------

#[test]
fn criterion_05_metrics_exactness() {
    run_criterion("05", "metrics-exactness", || {
        let worked = metrics(&ConfusionCounts {
            true_pos: 8,
            false_neg: 2,
            false_pos: 1,
            true_neg: 9,
        })
        .unwrap();
        assert_eq!(worked.accuracy, 0.85);
        assert_eq!(worked.sensitivity, 0.8);
        assert_eq!(worked.specificity, 0.9);

        let mut rng = ChaCha8Rng::seed_from_u64(0x3E7);
        let bound = 1u64 << 40;
        for _ in 0..1000 {
            let counts = ConfusionCounts {
                true_pos: rng.random_range(1..bound),
                false_neg: rng.random_range(0..bound),
                false_pos: rng.random_range(0..bound),
                true_neg: rng.random_range(1..bound),
            };
            let m = metrics(&counts).unwrap();
            // Cross-multiplied rational check: |metric - p/q| <= 1e-15
            // scaled by q, evaluated without forming p/q.
            let check = |metric: f64, p: u64, q: u64| {
                let err = (metric * q as f64 - p as f64).abs();
                assert!(err <= 1e-15 * q as f64, "metric {metric} vs {p}/{q}");
            };
            check(m.accuracy, counts.true_pos + counts.true_neg, counts.total());
            check(m.sensitivity, counts.true_pos, counts.true_pos + counts.false_neg);
            check(m.specificity, counts.true_neg, counts.true_neg + counts.false_pos);
        }
    });
}

// --- 6: transfer-matrix counting oracle ---------------------------------------

#[test]
fn criterion_06_transfer_matrix_oracle() {
    run_criterion("06", "transfer-matrix-oracle", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0x7A);
        for case in 0..100 {
            let m = rng.random_range(2..=6);
            // Sometimes restrict the visited modes so uniform fallback rows
            // get exercised.
            let visited = rng.random_range(1..=m);
            let n_seq = rng.random_range(1..=12);
            let sequences: Vec<Vec<usize>> = (0..n_seq)
                .map(|_| {
                    let len = rng.random_range(2..=40);
                    (0..len).map(|_| rng.random_range(0..visited)).collect()
                })
                .collect();

            let got = estimate_transfer(&sequences, m).unwrap();

            // Independent counting pass.
            let mut counts = vec![vec![0u64; m]; m];
            for seq in &sequences {
                for k in 1..seq.len() {
                    counts[seq[k - 1]][seq[k]] += 1;
                }
            }
            for i in 0..m {
                let outgoing: u64 = counts[i].iter().sum();
                let mut row_sum = 0.0;
                for j in 0..m {
                    let expected = if outgoing == 0 {
                        1.0 / m as f64
                    } else {
                        counts[i][j] as f64 / outgoing as f64
                    };
                    assert_eq!(got[(i, j)], expected, "case {case} entry ({i},{j})");
                    row_sum += got[(i, j)];
                }
                assert!(
                    (row_sum - 1.0).abs() <= 1e-12,
                    "case {case} row {i} sums to {row_sum}"
                );
            }
        }
    });
}

// --- 7: generative self-consistency -------------------------------------------

#[test]
fn criterion_07_generative_self_consistency() {
    run_criterion("07", "generative-self-consistency", || {
        let started = Instant::now();
        let truth = generating_model();
        let events = sample_events(&truth, 200, 620, 0xBEEF);
        let dataset = build_dataset(events, "generated", 1).expect("enough events");

        let config = TrainConfig {
            m_components: 4,
            epsilon: 1e-10,
            max_iter: 500,
            restarts: 5,
        };
        let report = cross_validate(&dataset, 10, &config, 0.9, 0x5EED).unwrap();
        let mean_acc = report.mean.accuracy.expect("accuracy defined");
        let mean_sen = report.mean.sensitivity.expect("sensitivity defined");
        let mean_spe = report.mean.specificity.expect("specificity defined");
        assert!(mean_acc >= 0.95, "mean accuracy {mean_acc:.4} < 0.95");
        assert!(mean_spe >= 0.95, "mean specificity {mean_spe:.4} < 0.95");
        assert!(mean_sen >= 0.85, "mean sensitivity {mean_sen:.4} < 0.85");

        // Bayes-prediction agreement: the model retrained on everything must
        // reproduce the generating model's own decoded predictions.
        let refs: Vec<_> = dataset.events.iter().collect();
        let (trained, _) = eval::train_model(&refs, &config, 0x5EED).unwrap();
        let mut agree = 0usize;
        let mut total = 0usize;
        for event in &dataset.events {
            let xis: Vec<_> = event.ticks.iter().map(|s| s.xi).collect();
            let from_truth = truth.run_sequence(&xis, 0.9).unwrap();
            let from_trained = trained.run_sequence(&xis, 0.9).unwrap();
            for (a, b) in from_truth.iter().zip(&from_trained) {
                agree += usize::from(a.action == b.action);
                total += 1;
            }
        }
        let agreement = agree as f64 / total as f64;
        assert!(
            agreement >= 0.97,
            "trained model matches generator on only {agreement:.4} of ticks"
        );

        let elapsed = started.elapsed().as_secs_f64();
        assert!(elapsed < 300.0, "criterion took {elapsed:.0}s (budget 300s)");
    });
}

// --- 8: end-to-end synthetic run -----------------------------------------------

#[test]
fn criterion_08_end_to_end_synthetic() {
    run_criterion("08", "end-to-end-synthetic", || {
        let started = Instant::now();
        let dir = tempfile::tempdir().unwrap();
        let manifest = simulate_corpus(
            &SimConfig::default(),
            50,
            0xC0FFEE,
            &JitterSpec::default(),
            dir.path(),
        )
        .unwrap();
        assert_eq!(manifest.traces.len(), 50);

        let mut events = Vec::new();
        let mut files: Vec<_> = manifest.traces.iter().map(|t| t.file.clone()).collect();
        files.sort();
        for file in &files {
            let ticks = load_trace(&dir.path().join(file)).unwrap();
            events.extend(segment_events(&ticks, &SegmentationRules::default(), file));
        }
        assert!(events.len() >= 50, "only {} events from 50 traces", events.len());

        let dataset = build_dataset(events, "synthetic", 1).unwrap();
        let majority = dataset.brake_fraction.max(1.0 - dataset.brake_fraction);

        // Train once with the default component count, then evaluate.
        let refs: Vec<_> = dataset.events.iter().collect();
        let (model, fit) = eval::train_model(&refs, &TrainConfig::default(), 7).unwrap();
        assert_eq!(model.m_components(), defaults::M_COMPONENTS);
        assert!(fit.final_log_likelihood.is_finite());

        let report = cross_validate(
            &dataset,
            defaults::KAPPA,
            &TrainConfig::default(),
            defaults::CRITICAL_VALUE,
            7,
        )
        .unwrap();
        let sensitivity = report.mean.sensitivity.expect("labels present");
        let accuracy = report.mean.accuracy.expect("accuracy defined");
        assert!(
            sensitivity > 0.5,
            "sensitivity {sensitivity:.4} does not beat the no-brake baseline"
        );
        assert!(
            accuracy > majority,
            "accuracy {accuracy:.4} does not beat majority rate {majority:.4}"
        );

        let elapsed = started.elapsed().as_secs_f64();
        assert!(elapsed < 600.0, "criterion took {elapsed:.0}s (budget 600s)");
    });
}

// --- 9: sweep monotonicity -------------------------------------------------------

#[test]
fn criterion_09_sweep_monotonicity() {
    run_criterion("09", "sweep-monotonicity", || {
        let truth = generating_model();
        let events = sample_events(&truth, 30, 300, 0xA11CE);
        let dataset = build_dataset(events, "sweep", 1).unwrap();
        let refs: Vec<_> = dataset.events.iter().collect();
        let config = TrainConfig {
            m_components: 4,
            epsilon: 1e-8,
            max_iter: 300,
            restarts: 3,
        };
        let (model, _) = eval::train_model(&refs, &config, 3).unwrap();

        let thresholds: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
        let points = eval::threshold_sweep(&model, &dataset.events, &thresholds).unwrap();
        assert_eq!(points.len(), 9);
        for pair in points.windows(2) {
            let (lo, hi) = (&pair[0], &pair[1]);
            // Exact integer monotonicity of the count columns.
            assert!(hi.counts.true_pos <= lo.counts.true_pos);
            assert!(hi.counts.false_pos <= lo.counts.false_pos);
            assert!(hi.counts.false_neg >= lo.counts.false_neg);
            assert!(hi.counts.true_neg >= lo.counts.true_neg);
            // Specificity non-decreasing, compared in integer arithmetic:
            // tn_hi/(tn_hi+fp_hi) >= tn_lo/(tn_lo+fp_lo).
            let lhs = hi.counts.true_neg as u128
                * (lo.counts.true_neg + lo.counts.false_pos) as u128;
            let rhs = lo.counts.true_neg as u128
                * (hi.counts.true_neg + hi.counts.false_pos) as u128;
            assert!(lhs >= rhs, "specificity decreased along the sweep");
        }
    });
}

// --- 10: segmentation golden traces ----------------------------------------------

#[test]
fn criterion_10_segmentation_golden() {
    run_criterion("10", "segmentation-golden", || {
        let dir = tempfile::tempdir().unwrap();
        let rules = SegmentationRules::default();

        let segment_csv = |name: &str, csv: &str| {
            let path = dir.path().join(name);
            std::fs::write(&path, csv).unwrap();
            let ticks = load_trace(&path).unwrap();
            // Byte stability: two runs over the same input are identical.
            let once = segment_events(&ticks, &rules, name);
            let twice = segment_events(&ticks, &rules, name);
            assert_eq!(format!("{once:?}"), format!("{twice:?}"));
            once
        };

        // (a) compliant run of 49.9s: dropped.
        let short = trace_csv(&compliant_run(0.0, 500, |_, t| t));
        let events = segment_csv("short.csv", &short);
        assert!(events.is_empty(), "49.9s run must be dropped");

        // (b) a range = 120 m tick terminates the event exactly there.
        let mut ticks = compliant_run(0.0, 1201, |_, t| t);
        ticks[800].range = 120.0;
        let events = segment_csv("range_cap.csv", &trace_csv(&ticks));
        assert_eq!(events.len(), 1, "only the pre-cap run is long enough");
        assert_eq!(events[0].ticks.len(), 800);
        assert_eq!(events[0].start_t, 0.0);
        assert!((events[0].end_t - 79.9).abs() < 1e-9);

        // (c) one cut-in tick splits 120.1s into two emitted events.
        let mut ticks = compliant_run(0.0, 1201, |_, t| t);
        ticks[600].cut_in = true;
        let events = segment_csv("cut_in.csv", &trace_csv(&ticks));
        assert_eq!(events.len(), 2);
        assert_eq!(events[0].ticks.len(), 600);
        assert_eq!(events[1].ticks.len(), 600);
        assert!((events[0].end_t - 59.9).abs() < 1e-9);
        assert!((events[1].start_t - 60.1).abs() < 1e-9);

        // (d) speed floor: a tick below 5 m/s ends the run. The first run
        // spans 69.9s and the second 59.9s, so both are emitted.
        let mut ticks = compliant_run(0.0, 1301, |_, t| t);
        ticks[700].ego_speed = 4.9;
        let events = segment_csv("speed_floor.csv", &trace_csv(&ticks));
        assert_eq!(events.len(), 2);
        assert_eq!(events[0].ticks.len(), 700);
        assert_eq!(events[1].ticks.len(), 600);
        assert!((events[0].end_t - 69.9).abs() < 1e-9);
        assert!((events[1].start_t - 70.1).abs() < 1e-9);

        // (e) a sampling gap splits the run.
        let mut ticks = compliant_run(0.0, 1202, |_, t| t);
        for tick in &mut ticks[601..] {
            tick.t += 0.4;
        }
        let events = segment_csv("gap.csv", &trace_csv(&ticks));
        assert_eq!(events.len(), 2);
        assert_eq!(events[0].ticks.len(), 601);
        assert_eq!(events[1].ticks.len(), 601);
    });
}

// --- 11: BIC component-count recovery ---------------------------------------------

#[test]
fn criterion_11_bic_recovery() {
    run_criterion("11", "bic-recovery", || {
        let started = Instant::now();
        let mut hits = 0;
        for seed in 0..10u64 {
            let data = two_blob_dataset(seed, 250);
            let selection =
                select_components(&data, &[1, 2, 3, 4], defaults::EPSILON, seed).unwrap();
            assert!(selection.failures.is_empty(), "seed {seed}: {:?}", selection.failures);
            for (_, score) in &selection.curve {
                assert!(score.is_finite());
            }
            if selection.best_m == 2 {
                hits += 1;
            }
        }
        assert!(hits >= 8, "BIC picked M=2 in only {hits}/10 seeds");
        let elapsed = started.elapsed().as_secs_f64();
        assert!(elapsed < 60.0, "BIC recovery took {elapsed:.0}s (budget 60s)");
    });
}

// === helpers =====================================================================

/// Random 4-component mixture data over the 5 augmented coordinates,
/// d = 5. Labels are Bernoulli per component so every cluster carries brake
/// variance, as real traces do.
fn random_mixture_dataset(seed: u64, n: usize) -> Vec<AugmentedSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9) + 17);
    let centers: Vec<(f64, f64, f64, f64, f64)> = (0..4)
        .map(|c| {
            (
                20.0 + 22.0 * c as f64 + rng.random_range(-3.0..3.0),
                9.0 + 6.0 * c as f64 + rng.random_range(-1.0..1.0),
                rng.random_range(-4.0..4.0),
                1.0 + 0.8 * c as f64 + rng.random_range(-0.2..0.2),
                if c % 2 == 0 { 0.8 } else { 0.2 },
            )
        })
        .collect();
    (0..n)
        .map(|_| {
            let (r, v, dv, ttc, p_brake) = centers[rng.random_range(0..4)];
            let brake = u8::from(rng.random_range(0.0..1.0) < p_brake);
            let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };
            let xi = ObservationVector::new(
                r + 1.2 * gauss(),
                v + 0.7 * gauss(),
                dv + 0.7 * gauss(),
                ttc + 0.25 * gauss(),
            )
            .unwrap();
            AugmentedSample::new(xi, brake).unwrap()
        })
        .collect()
}

/// Two far-apart Gaussian blobs with constant per-blob labels.
fn two_blob_dataset(seed: u64, per_blob: usize) -> Vec<AugmentedSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB10B);
    let mut out = Vec::with_capacity(2 * per_blob);
    for b in 0..2 {
        let center_r = 35.0 + 40.0 * b as f64;
        let center_v = 14.0 + 8.0 * b as f64;
        for _ in 0..per_blob {
            let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };
            let xi = ObservationVector::new(
                center_r + 0.6 * gauss(),
                center_v + 0.4 * gauss(),
                0.5 * gauss(),
                center_r / center_v + 0.3 * gauss(),
            )
            .unwrap();
            out.push(AugmentedSample::new(xi, b as u8).unwrap());
        }
    }
    out
}

/// Small random mixture with controlled conditioning for oracle comparisons.
fn random_small_model(rng: &mut ChaCha8Rng, m: usize, d: usize) -> MixtureModel {
    let mut weights: Vec<f64> = (0..m).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    let components = (0..m)
        .map(|_| {
            let mean = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
            let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-0.5..0.5));
            let covariance = &a * a.transpose() + DMatrix::identity(d, d);
            GaussianComponent { mean, covariance }
        })
        .collect();
    MixtureModel::new(weights, components).unwrap()
}

/// Direct (non-log-space) evaluation of the mixture density.
fn naive_mixture_density(model: &MixtureModel, zeta: &DVector<f64>) -> f64 {
    let d = model.dim() as f64;
    model
        .components()
        .iter()
        .zip(model.weights())
        .map(|(c, &w)| {
            let diff = zeta - &c.mean;
            let inv = c.covariance.clone().try_inverse().unwrap();
            let quad = diff.dot(&(&inv * &diff));
            let norm = ((2.0 * std::f64::consts::PI).powf(d) * c.covariance.determinant()).sqrt();
            w * (-0.5 * quad).exp() / norm
        })
        .sum()
}

/// Random full BrakeHmm over the 5 augmented coordinates (positive range and
/// speed means so observations stay in-domain).
fn random_brake_hmm(rng: &mut ChaCha8Rng, m: usize) -> BrakeHmm {
    let mut weights: Vec<f64> = (0..m).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    let components = (0..m)
        .map(|_| {
            let mean = DVector::from_row_slice(&[
                rng.random_range(25.0..100.0),
                rng.random_range(10.0..40.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(8.0..20.0),
                rng.random_range(0.0..1.0),
            ]);
            let a = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-0.5..0.5));
            let covariance = &a * a.transpose() + DMatrix::identity(5, 5);
            GaussianComponent { mean, covariance }
        })
        .collect();
    let mixture = MixtureModel::new(weights, components).unwrap();
    let mut transfer = DMatrix::from_fn(m, m, |_, _| rng.random_range(0.05..1.0));
    for i in 0..m {
        let s: f64 = transfer.row(i).iter().sum();
        for j in 0..m {
            transfer[(i, j)] /= s;
        }
    }
    BrakeHmm::new(mixture, transfer, FeatureOrder::standard()).unwrap()
}

/// Direct observable-marginal Gaussian density, via inverse + determinant of
/// the upper-left block.
fn naive_marginal_density(component: &GaussianComponent, x: &DVector<f64>) -> f64 {
    let k = component.mean.len() - 1;
    let mean = component.mean.rows(0, k).into_owned();
    let cov = component.covariance.view((0, 0), (k, k)).into_owned();
    let diff = x - mean;
    let inv = cov.clone().try_inverse().unwrap();
    let quad = diff.dot(&(&inv * &diff));
    let norm = ((2.0 * std::f64::consts::PI).powf(k as f64) * cov.determinant()).sqrt();
    (-0.5 * quad).exp() / norm
}

/// Posterior over the mode at the last tick by enumerating all |M|^t paths.
fn enumerate_posterior(model: &BrakeHmm, xis: &[ObservationVector]) -> Vec<f64> {
    let m = model.m_components();
    let t = xis.len();
    let densities: Vec<Vec<f64>> = xis
        .iter()
        .map(|xi| {
            (0..m)
                .map(|i| {
                    naive_marginal_density(&model.mixture().components()[i], &xi.to_vector())
                })
                .collect()
        })
        .collect();

    let mut marginal = vec![0.0; m];
    let mut total = 0.0;
    let paths = m.pow(t as u32);
    for code in 0..paths {
        let mut digits = Vec::with_capacity(t);
        let mut rest = code;
        for _ in 0..t {
            digits.push(rest % m);
            rest /= m;
        }
        let mut p = model.mixture().weights()[digits[0]] * densities[0][digits[0]];
        for k in 1..t {
            p *= model.transfer()[(digits[k - 1], digits[k])] * densities[k][digits[k]];
        }
        marginal[digits[t - 1]] += p;
        total += p;
    }
    marginal.iter().map(|v| v / total).collect()
}

/// Independent evaluation of the filter-weighted conditional expectation,
/// assembled from the unpartitioned component parameters.
fn naive_gmr(model: &BrakeHmm, alpha: &DVector<f64>, xi: &ObservationVector) -> f64 {
    let x = xi.to_vector();
    let mut total = 0.0;
    for (i, c) in model.mixture().components().iter().enumerate() {
        let k = c.mean.len() - 1;
        let mu_xi = c.mean.rows(0, k).into_owned();
        let mu_br = c.mean[k];
        let sigma_xx = c.covariance.view((0, 0), (k, k)).into_owned();
        let sigma_bx = c.covariance.view((k, 0), (1, k)).into_owned();
        let diff = &x - mu_xi;
        let inv = sigma_xx.try_inverse().unwrap();
        let reg = (&sigma_bx * (&inv * &diff))[(0, 0)];
        total += alpha[i] * (mu_br + reg);
    }
    total
}

/// Hand-built 4-mode generator: two cruise modes (brake mean 0.02) and two
/// braking modes (brake mean 0.95), observable means separated by well over
/// 5σ (σ = 1 per coordinate).
fn generating_model() -> BrakeHmm {
    let means = [
        [70.0, 25.0, 0.0, 2.8, 0.02],
        [45.0, 22.0, 1.0, 2.0, 0.02],
        [30.0, 20.0, -3.0, 1.5, 0.95],
        [16.0, 12.0, -5.0, 1.2, 0.95],
    ];
    let mut covariance = DMatrix::identity(5, 5);
    covariance[(4, 4)] = 0.0025;
    let components = means
        .iter()
        .map(|m| GaussianComponent {
            mean: DVector::from_row_slice(m),
            covariance: covariance.clone(),
        })
        .collect();
    let mixture = MixtureModel::new(vec![0.35, 0.30, 0.20, 0.15], components).unwrap();
    let transfer = DMatrix::from_row_slice(
        4,
        4,
        &[
            0.95, 0.04, 0.01, 0.00, //
            0.03, 0.92, 0.05, 0.00, //
            0.01, 0.05, 0.88, 0.06, //
            0.00, 0.02, 0.08, 0.90,
        ],
    );
    BrakeHmm::new(mixture, transfer, FeatureOrder::standard()).unwrap()
}

/// Samples labeled events from the generator: mode chains through the
/// transfer matrix, observables from the mode's ξ marginal, labels from the
/// mode's brake mean.
fn sample_events(
    model: &BrakeHmm,
    n_events: usize,
    ticks_per_event: usize,
    seed: u64,
) -> Vec<brakefilter::CarFollowingEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = model.m_components();
    let weights = model.mixture().weights().to_vec();
    let pick = |probs: &[f64], rng: &mut ChaCha8Rng| -> usize {
        let u: f64 = rng.random_range(0.0..1.0);
        let mut acc = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    };

    (0..n_events)
        .map(|e| {
            let mut mode = pick(&weights, &mut rng);
            let ticks = (0..ticks_per_event)
                .map(|_| {
                    let c = &model.mixture().components()[mode];
                    let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };
                    let xi = ObservationVector::new(
                        c.mean[0] + gauss(),
                        c.mean[1] + gauss(),
                        c.mean[2] + gauss(),
                        c.mean[3] + gauss(),
                    )
                    .unwrap();
                    let brake = u8::from(c.mean[4] > 0.5);
                    let sample = AugmentedSample::new(xi, brake).unwrap();
                    let row: Vec<f64> = (0..m).map(|j| model.transfer()[(mode, j)]).collect();
                    mode = pick(&row, &mut rng);
                    sample
                })
                .collect::<Vec<_>>();
            let start_t = 1000.0 * e as f64;
            let times = (0..ticks_per_event).map(|i| start_t + i as f64 * 0.1).collect();
            brakefilter::CarFollowingEvent {
                ticks,
                times,
                start_t,
                end_t: start_t + (ticks_per_event as f64 - 1.0) * 0.1,
                source_trace: format!("gen_{e:04}"),
            }
        })
        .collect()
}

/// A compliant 10 Hz tick run starting at `t0` with `n` ticks; `tweak` can
/// perturb per-tick values (given index and nominal time).
fn compliant_run(t0: f64, n: usize, tweak: impl Fn(usize, f64) -> f64) -> Vec<brakefilter::RawTick> {
    (0..n)
        .map(|i| {
            let t = tweak(i, t0 + i as f64 * 0.1);
            brakefilter::RawTick {
                t,
                ego_speed: 20.0,
                preceding_speed: 20.0,
                range: 45.0,
                curvature: 2e-4,
                turn_signal: brakefilter::TurnSignal::None,
                cut_in: false,
                brake: 0,
                throttle: 10.0,
            }
        })
        .collect()
}

fn trace_csv(ticks: &[brakefilter::RawTick]) -> String {
    let mut out = String::from("# units=si hz=10\n");
    out.push_str("t,v_ego,v_prec,range,curvature,turn_signal,cut_in,brake,throttle\n");
    for tick in ticks {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            tick.t,
            tick.ego_speed,
            tick.preceding_speed,
            tick.range,
            tick.curvature,
            tick.turn_signal.code(),
            u8::from(tick.cut_in),
            tick.brake,
            tick.throttle
        ));
    }
    out
}
