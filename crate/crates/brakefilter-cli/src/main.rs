//! Command-line toolchain: generate synthetic corpora, segment traces into
//! car-following events, train the mixture/HMM model, run online inference,
//! cross-validate, and sweep the decoding threshold.
//!
//! Configuration precedence: command-line flags > `--config` TOML file >
//! built-in defaults (M=10, ε=1e-10, κ=10, critical value 0.9, 5 k-means
//! restarts). Exit codes: 0 success, 2 configuration, 3 data, 4 numeric
//! failure, 5 model I/O. `BRAKEFILTER_LOG` controls log verbosity.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use brakefilter::{
    bic, build_dataset, cross_validate, defaults, eval, load_model, load_trace, save_model,
    segment_events, select_components, simulate_corpus, threshold_sweep, CarFollowingEvent,
    DriverDataset, Error, JitterSpec, Result, SegmentationRules, SimConfig, TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "brakefilter",
    version,
    about = "Learn a driver's braking behavior from car-following traces and infer it online"
)]
struct Cli {
    /// TOML config file; command-line flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled trace corpus plus manifest.
    Generate(GenerateArgs),
    /// Segment traces into car-following events and report the boundaries.
    Segment(SegmentArgs),
    /// Train a model on segmented traces and write the model file.
    Train(TrainArgs),
    /// Run per-tick brake inference on traces with a trained model.
    Infer(InferArgs),
    /// Cross-validate training/testing and write a metrics report.
    Evaluate(EvaluateArgs),
    /// Evaluate one model across several decoding thresholds.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output directory for trace_NNN.csv files and manifest.json.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Number of traces to generate (at least one event each).
    #[arg(long)]
    events: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated seconds per trace.
    #[arg(long)]
    duration: Option<f64>,
    /// Integration/sampling step, seconds.
    #[arg(long)]
    dt: Option<f64>,
    /// Disable per-trace parameter jitter.
    #[arg(long)]
    no_jitter: bool,
    /// Measurement noise std-dev on the range channel, meters.
    #[arg(long)]
    noise_range: Option<f64>,
    /// Measurement noise std-dev on the speed channels, m/s.
    #[arg(long)]
    noise_speed: Option<f64>,
}

#[derive(Args)]
struct SegmentArgs {
    /// Trace file or directory of *.csv traces.
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
    /// Report JSON path; stdout when omitted.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[command(flatten)]
    segmentation: SegmentationFlags,
}

#[derive(Args)]
struct TrainArgs {
    /// Trace file or directory of *.csv traces (auto-segmented).
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
    /// Model JSON output path.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Fit a BIC curve over an inclusive range "A..B" and pick the argmin.
    #[arg(long, value_name = "A..B", conflicts_with = "m_components")]
    select_m: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Decoding threshold stored in the model file as its default.
    #[arg(long)]
    critical_value: Option<f64>,
    /// Minimum admitted events per driver (the naturalistic-data gate is
    /// 500; synthetic corpora usually need 1).
    #[arg(long)]
    min_events: Option<usize>,
    #[arg(long)]
    driver_id: Option<String>,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    segmentation: SegmentationFlags,
}

#[derive(Args)]
struct InferArgs {
    /// Trained model JSON.
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Trace file or directory (auto-segmented; filter resets per event).
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
    /// Predictions CSV output path.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Decoding threshold; the model file's default when omitted.
    #[arg(long)]
    critical_value: Option<f64>,
    #[command(flatten)]
    segmentation: SegmentationFlags,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Trace file or directory of *.csv traces (auto-segmented).
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
    /// Report JSON path; a plot-ready CSV lands next to it (.csv).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Cross-validation fold count.
    #[arg(long)]
    kappa: Option<usize>,
    #[arg(long)]
    critical_value: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    min_events: Option<usize>,
    #[arg(long)]
    driver_id: Option<String>,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    segmentation: SegmentationFlags,
}

#[derive(Args)]
struct SweepArgs {
    /// Trained model JSON.
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Labeled trace file or directory (auto-segmented).
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
    /// Sweep CSV output path.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Comma list ("0.1,0.5,0.9") or range with step ("0.1..0.9:0.1").
    #[arg(long, value_name = "SPEC")]
    thresholds: String,
    #[command(flatten)]
    segmentation: SegmentationFlags,
}

#[derive(Args, Clone, Default)]
struct TrainFlags {
    /// Number of mixture components M.
    #[arg(long)]
    m_components: Option<usize>,
    /// EM convergence threshold on the log-likelihood improvement.
    #[arg(long)]
    epsilon: Option<f64>,
    /// EM iteration cap.
    #[arg(long)]
    max_iter: Option<usize>,
    /// K-means restarts feeding EM initialization.
    #[arg(long)]
    restarts: Option<usize>,
}

#[derive(Args, Clone, Default)]
struct SegmentationFlags {
    /// Events end when range reaches this bound, meters.
    #[arg(long)]
    max_range: Option<f64>,
    /// Events end when range drops below this bound, meters.
    #[arg(long)]
    min_range: Option<f64>,
    /// Events end when ego speed drops below this, m/s.
    #[arg(long)]
    min_speed: Option<f64>,
    /// Minimum event duration (strict), seconds.
    #[arg(long)]
    min_duration: Option<f64>,
    /// Events end when curvature exceeds this, 1/m.
    #[arg(long)]
    max_curvature: Option<f64>,
    /// Sampling gaps beyond this end the run, seconds.
    #[arg(long)]
    max_gap: Option<f64>,
}

// --- config file ----------------------------------------------------------

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ConfigFile {
    train: TrainSection,
    segmentation: SegmentationSection,
    evaluate: EvaluateSection,
    generate: GenerateSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TrainSection {
    m_components: Option<usize>,
    epsilon: Option<f64>,
    max_iter: Option<usize>,
    restarts: Option<usize>,
    seed: Option<u64>,
    critical_value: Option<f64>,
    min_events: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SegmentationSection {
    max_range: Option<f64>,
    min_range: Option<f64>,
    min_speed: Option<f64>,
    min_duration: Option<f64>,
    max_curvature: Option<f64>,
    max_gap: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct EvaluateSection {
    kappa: Option<usize>,
    critical_value: Option<f64>,
    seed: Option<u64>,
    min_events: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct GenerateSection {
    events: Option<usize>,
    seed: Option<u64>,
    duration: Option<f64>,
    dt: Option<f64>,
    noise_range: Option<f64>,
    noise_speed: Option<f64>,
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("BRAKEFILTER_LOG", "warn"),
    )
    .format_timestamp(None)
    .init();

    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Parse { .. }
        | Error::Schema(_)
        | Error::Monotonicity { .. }
        | Error::InsufficientData { .. }
        | Error::EmptyInput(_)
        | Error::LengthMismatch { .. }
        | Error::Domain(_)
        | Error::Io(_) => 3,
        Error::Numerical(_)
        | Error::DegenerateComponent { .. }
        | Error::SingularMatrix { .. }
        | Error::UndefinedMetric { .. }
        | Error::Dimension { .. } => 4,
        Error::ModelFile(_) => 5,
        Error::AtTick { source, .. } | Error::InFold { source, .. } => exit_code(source),
    }
}

fn run(cli: &Cli) -> Result<()> {
    let config = load_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Generate(args) => cmd_generate(args, &config),
        Command::Segment(args) => cmd_segment(args, &config),
        Command::Train(args) => cmd_train(args, &config),
        Command::Infer(args) => cmd_infer(args, &config),
        Command::Evaluate(args) => cmd_evaluate(args, &config),
        Command::Sweep(args) => cmd_sweep(args, &config),
    }
}

// --- commands ----------------------------------------------------------------

fn cmd_generate(args: &GenerateArgs, config: &ConfigFile) -> Result<()> {
    let g = &config.generate;
    let mut template = SimConfig::default();
    if let Some(duration) = args.duration.or(g.duration) {
        template.duration = duration;
    }
    if let Some(dt) = args.dt.or(g.dt) {
        template.dt = dt;
    }
    let noise_range = args.noise_range.or(g.noise_range).unwrap_or(0.0);
    let noise_speed = args.noise_speed.or(g.noise_speed).unwrap_or(0.0);
    template.noise.range = noise_range;
    template.noise.ego_speed = noise_speed;
    template.noise.preceding_speed = noise_speed;

    let n_traces = args.events.or(g.events).unwrap_or(10);
    let seed = args.seed.or(g.seed).unwrap_or(0);
    let jitter = if args.no_jitter {
        JitterSpec::NONE
    } else {
        JitterSpec::default()
    };

    let manifest = simulate_corpus(&template, n_traces, seed, &jitter, &args.out)?;
    println!(
        "wrote {} traces and manifest.json to {}",
        manifest.n_traces,
        args.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct SegmentReport {
    traces: Vec<TraceSegments>,
    total_events: usize,
    total_ticks: usize,
}

#[derive(Serialize)]
struct TraceSegments {
    trace: String,
    events: Vec<EventSummary>,
}

#[derive(Serialize)]
struct EventSummary {
    start_t: f64,
    end_t: f64,
    ticks: usize,
    brake_ticks: usize,
}

fn cmd_segment(args: &SegmentArgs, config: &ConfigFile) -> Result<()> {
    let rules = resolve_rules(&args.segmentation, &config.segmentation)?;
    let paths = collect_trace_paths(&args.input)?;
    let mut traces = Vec::new();
    let mut total_events = 0;
    let mut total_ticks = 0;
    for path in &paths {
        let name = trace_name(path);
        let ticks = load_trace(path)?;
        let events = segment_events(&ticks, &rules, &name);
        total_events += events.len();
        total_ticks += events.iter().map(|e| e.ticks.len()).sum::<usize>();
        traces.push(TraceSegments {
            trace: name,
            events: events
                .iter()
                .map(|e| EventSummary {
                    start_t: e.start_t,
                    end_t: e.end_t,
                    ticks: e.ticks.len(),
                    brake_ticks: e.brake_tick_count(),
                })
                .collect(),
        });
    }
    let report = SegmentReport {
        traces,
        total_events,
        total_ticks,
    };
    let json = serde_json::to_vec_pretty(&report)
        .map_err(|e| Error::Numerical(format!("report serialization failed: {e}")))?;
    match &args.out {
        Some(path) => {
            atomic_write(path, &json)?;
            println!(
                "{total_events} events ({total_ticks} ticks) from {} traces -> {}",
                paths.len(),
                path.display()
            );
        }
        None => {
            std::io::stdout().write_all(&json)?;
            println!();
        }
    }
    Ok(())
}

fn cmd_train(args: &TrainArgs, config: &ConfigFile) -> Result<()> {
    let rules = resolve_rules(&args.segmentation, &config.segmentation)?;
    let train_config = resolve_train(&args.train, &config.train);
    let seed = args.seed.or(config.train.seed).unwrap_or(0);
    let critical_value = args
        .critical_value
        .or(config.train.critical_value)
        .unwrap_or(defaults::CRITICAL_VALUE);
    let min_events = args.min_events.or(config.train.min_events).unwrap_or(1);

    let dataset = load_dataset(
        &args.input,
        &rules,
        args.driver_id.as_deref(),
        min_events,
    )?;
    println!(
        "driver '{}': {} events, {} ticks, brake fraction {:.4}",
        dataset.driver_id,
        dataset.event_count(),
        dataset.tick_count(),
        dataset.brake_fraction
    );

    let mut train_config = train_config;
    if let Some(spec) = &args.select_m {
        let candidates = parse_inclusive_range(spec)?;
        let pooled: Vec<_> = dataset
            .events
            .iter()
            .flat_map(|e| e.ticks.iter().copied())
            .collect();
        let selection = select_components(&pooled, &candidates, train_config.epsilon, seed)?;
        println!("BIC curve:");
        for (m, score) in &selection.curve {
            let marker = if *m == selection.best_m { "  <- selected" } else { "" };
            println!("  M={m:<3} BIC={score:.4}{marker}");
        }
        for (m, why) in &selection.failures {
            println!("  M={m:<3} failed: {why}");
        }
        train_config.m_components = selection.best_m;
    }

    let refs: Vec<&CarFollowingEvent> = dataset.events.iter().collect();
    let (model, fit) = eval::train_model(&refs, &train_config, seed)?;
    let pooled: Vec<_> = dataset
        .events
        .iter()
        .flat_map(|e| e.ticks.iter().copied())
        .collect();
    let score = bic(model.mixture(), &pooled)?;

    save_model(&model, critical_value, &args.out)?;
    println!(
        "fitted M={} mixture in {} iterations (converged: {})",
        train_config.m_components, fit.iterations, fit.converged
    );
    println!(
        "final log-likelihood {:.6}, BIC {:.4}",
        fit.final_log_likelihood, score
    );
    println!("model written to {}", args.out.display());
    Ok(())
}

fn cmd_infer(args: &InferArgs, config: &ConfigFile) -> Result<()> {
    let rules = resolve_rules(&args.segmentation, &config.segmentation)?;
    let (model, default_cv) = load_model(&args.model)?;
    let critical_value = args.critical_value.unwrap_or(default_cv);

    let paths = collect_trace_paths(&args.input)?;
    let mut events = Vec::new();
    for path in &paths {
        let ticks = load_trace(path)?;
        events.extend(segment_events(&ticks, &rules, &trace_name(path)));
    }
    if events.is_empty() {
        return Err(Error::EmptyInput("no car-following events in the input"));
    }

    let m = model.m_components();
    let mut out = String::new();
    out.push_str("t,event,br_hat,action");
    for i in 0..m {
        out.push_str(&format!(",alpha_{i}"));
    }
    out.push_str(",underflow\n");
    let mut tick_count = 0usize;
    for (event_idx, event) in events.iter().enumerate() {
        let xis: Vec<_> = event.ticks.iter().map(|s| s.xi).collect();
        let inferred = model.run_sequence(&xis, critical_value)?;
        for tick in &inferred {
            out.push_str(&format!(
                "{},{},{},{}",
                event.times[tick.tick],
                event_idx,
                fmt_float(tick.br_hat),
                tick.action
            ));
            for &a in &tick.alpha {
                out.push(',');
                out.push_str(&fmt_float(a));
            }
            out.push_str(&format!(",{}\n", u8::from(tick.underflow)));
        }
        tick_count += inferred.len();
    }
    atomic_write(&args.out, out.as_bytes())?;
    println!(
        "inferred {} ticks across {} events (critical value {}) -> {}",
        tick_count,
        events.len(),
        critical_value,
        args.out.display()
    );
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs, config: &ConfigFile) -> Result<()> {
    let rules = resolve_rules(&args.segmentation, &config.segmentation)?;
    let train_config = resolve_train(&args.train, &config.train);
    let kappa = args.kappa.or(config.evaluate.kappa).unwrap_or(defaults::KAPPA);
    let critical_value = args
        .critical_value
        .or(config.evaluate.critical_value)
        .unwrap_or(defaults::CRITICAL_VALUE);
    let seed = args.seed.or(config.evaluate.seed).unwrap_or(0);
    let min_events = args.min_events.or(config.evaluate.min_events).unwrap_or(1);

    let dataset = load_dataset(&args.input, &rules, args.driver_id.as_deref(), min_events)?;
    let report = cross_validate(&dataset, kappa, &train_config, critical_value, seed)?;

    let json = serde_json::to_vec_pretty(&report)
        .map_err(|e| Error::Numerical(format!("report serialization failed: {e}")))?;
    atomic_write(&args.out, &json)?;

    let mut csv = String::from("fold,tp,fn,fp,tn,accuracy,sensitivity,specificity\n");
    for fold in &report.folds {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            fold.fold,
            fold.counts.true_pos,
            fold.counts.false_neg,
            fold.counts.false_pos,
            fold.counts.true_neg,
            opt(fold.accuracy),
            opt(fold.sensitivity),
            opt(fold.specificity),
        ));
    }
    let csv_path = args.out.with_extension("csv");
    atomic_write(&csv_path, csv.as_bytes())?;

    println!(
        "kappa={} critical_value={} on {} events",
        report.kappa,
        report.critical_value,
        dataset.event_count()
    );
    let line = |name: &str, mean: Option<f64>, std: Option<f64>| match (mean, std) {
        (Some(m), Some(s)) => println!("  {name:<12} {:.2}% +/- {:.4}", m * 100.0, s),
        _ => println!("  {name:<12} undefined"),
    };
    line("accuracy", report.mean.accuracy, report.std.accuracy);
    line("sensitivity", report.mean.sensitivity, report.std.sensitivity);
    line("specificity", report.mean.specificity, report.std.specificity);
    println!(
        "report -> {}, folds CSV -> {}",
        args.out.display(),
        csv_path.display()
    );
    Ok(())
}

fn cmd_sweep(args: &SweepArgs, config: &ConfigFile) -> Result<()> {
    let rules = resolve_rules(&args.segmentation, &config.segmentation)?;
    let (model, _) = load_model(&args.model)?;
    let thresholds = parse_thresholds(&args.thresholds)?;

    let paths = collect_trace_paths(&args.input)?;
    let mut events = Vec::new();
    for path in &paths {
        let ticks = load_trace(path)?;
        events.extend(segment_events(&ticks, &rules, &trace_name(path)));
    }
    let points = threshold_sweep(&model, &events, &thresholds)?;

    let mut csv = String::from("critical_value,tp,fn,fp,tn,accuracy,sensitivity,specificity\n");
    for p in &points {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            p.critical_value,
            p.counts.true_pos,
            p.counts.false_neg,
            p.counts.false_pos,
            p.counts.true_neg,
            opt(p.accuracy),
            opt(p.sensitivity),
            opt(p.specificity),
        ));
    }
    atomic_write(&args.out, csv.as_bytes())?;
    println!(
        "swept {} thresholds over {} events -> {}",
        points.len(),
        events.len(),
        args.out.display()
    );
    Ok(())
}

// --- shared plumbing -----------------------------------------------------------

fn resolve_rules(
    flags: &SegmentationFlags,
    file: &SegmentationSection,
) -> Result<SegmentationRules> {
    let d = SegmentationRules::default();
    let rules = SegmentationRules {
        max_range: flags.max_range.or(file.max_range).unwrap_or(d.max_range),
        min_range: flags.min_range.or(file.min_range).unwrap_or(d.min_range),
        min_speed: flags.min_speed.or(file.min_speed).unwrap_or(d.min_speed),
        max_curvature: flags
            .max_curvature
            .or(file.max_curvature)
            .unwrap_or(d.max_curvature),
        min_duration: flags
            .min_duration
            .or(file.min_duration)
            .unwrap_or(d.min_duration),
        max_gap: flags.max_gap.or(file.max_gap).unwrap_or(d.max_gap),
    };
    rules.validate()?;
    Ok(rules)
}

fn resolve_train(flags: &TrainFlags, file: &TrainSection) -> TrainConfig {
    let d = TrainConfig::default();
    TrainConfig {
        m_components: flags
            .m_components
            .or(file.m_components)
            .unwrap_or(d.m_components),
        epsilon: flags.epsilon.or(file.epsilon).unwrap_or(d.epsilon),
        max_iter: flags.max_iter.or(file.max_iter).unwrap_or(d.max_iter),
        restarts: flags.restarts.or(file.restarts).unwrap_or(d.restarts),
    }
}

/// A single trace file, or every *.csv inside a directory in file-name order.
fn collect_trace_paths(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    if !input.is_dir() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} does not exist", input.display()),
        )));
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(input)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    Ok(paths)
}

fn load_dataset(
    input: &Path,
    rules: &SegmentationRules,
    driver_id: Option<&str>,
    min_events: usize,
) -> Result<DriverDataset> {
    let paths = collect_trace_paths(input)?;
    let mut events = Vec::new();
    for path in &paths {
        let ticks = load_trace(path)?;
        events.extend(segment_events(&ticks, rules, &trace_name(path)));
    }
    let driver = driver_id
        .map(str::to_string)
        .unwrap_or_else(|| trace_name(input));
    let found = events.len();
    build_dataset(events, &driver, min_events).map_err(|rejection| Error::InsufficientData {
        needed: rejection.min_events,
        got: found,
    })
}

fn trace_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Inclusive "A..B".
fn parse_inclusive_range(spec: &str) -> Result<Vec<usize>> {
    let (a, b) = spec
        .split_once("..")
        .ok_or_else(|| Error::Config(format!("expected a range like 2..6, got '{spec}'")))?;
    let lo: usize = a
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid range start '{a}'")))?;
    let hi: usize = b
        .trim()
        .trim_start_matches('=')
        .parse()
        .map_err(|_| Error::Config(format!("invalid range end '{b}'")))?;
    if lo == 0 || hi < lo {
        return Err(Error::Config(format!("invalid component range {lo}..{hi}")));
    }
    Ok((lo..=hi).collect())
}

/// "0.1,0.5,0.9" or "0.1..0.9:0.1" (inclusive, fixed step).
fn parse_thresholds(spec: &str) -> Result<Vec<f64>> {
    let parse_one = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::Config(format!("invalid threshold '{s}'")))
    };
    if let Some((range, step)) = spec.split_once(':') {
        let (a, b) = range
            .split_once("..")
            .ok_or_else(|| Error::Config(format!("expected A..B:STEP, got '{spec}'")))?;
        let lo = parse_one(a)?;
        let hi = parse_one(b)?;
        let step = parse_one(step)?;
        if step <= 0.0 || hi < lo {
            return Err(Error::Config(format!("invalid threshold range '{spec}'")));
        }
        let mut out = Vec::new();
        let mut k = 0u32;
        loop {
            let v = lo + f64::from(k) * step;
            if v > hi + 1e-12 {
                break;
            }
            out.push(v);
            k += 1;
        }
        Ok(out)
    } else {
        spec.split(',').map(parse_one).collect()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Plain decimal for ordinary magnitudes, exponent form for extreme ones
/// (f64 Display never switches to scientific notation on its own).
fn fmt_float(v: f64) -> String {
    let magnitude = v.abs();
    if v == 0.0 || (1e-4..1e9).contains(&magnitude) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// Temp file + rename so interrupted runs never leave partial artifacts.
fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    if !dir.as_os_str().is_empty() {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
