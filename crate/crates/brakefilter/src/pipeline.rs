//! Trace ingestion and car-following event extraction.
//!
//! Trace files are UTF-8 CSV with a mandatory first line `# units=si hz=10`
//! and the exact header
//! `t,v_ego,v_prec,range,curvature,turn_signal,cut_in,brake,throttle`.
//! Segmentation keeps maximal contiguous runs satisfying the per-tick
//! car-following criteria and emits a run as an event only when it lasts
//! longer than the minimum duration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{compute_features, AugmentedSample};
use crate::fsio::atomic_write;

pub const TRACE_SIDECAR: &str = "# units=si hz=10";
pub const TRACE_HEADER: &str = "t,v_ego,v_prec,range,curvature,turn_signal,cut_in,brake,throttle";
/// Ego-speed validity ceiling enforced at ingestion, m/s.
pub const MAX_EGO_SPEED: f64 = 45.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TurnSignal {
    None,
    Left,
    Right,
}

impl TurnSignal {
    pub fn code(self) -> u8 {
        match self {
            TurnSignal::None => 0,
            TurnSignal::Left => 1,
            TurnSignal::Right => 2,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(TurnSignal::None),
            1 => Some(TurnSignal::Left),
            2 => Some(TurnSignal::Right),
            _ => None,
        }
    }
}

/// One recorded sample of the raw driving channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawTick {
    /// Seconds; strictly increasing within a file.
    pub t: f64,
    pub ego_speed: f64,
    pub preceding_speed: f64,
    pub range: f64,
    /// 1/m.
    pub curvature: f64,
    pub turn_signal: TurnSignal,
    pub cut_in: bool,
    pub brake: u8,
    /// Percent, [0, 100].
    pub throttle: f64,
}

/// Per-tick predicates and the run-level duration bound for event
/// extraction. Defaults follow the car-following criteria this crate
/// implements; all are overridable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentationRules {
    /// Events end when range reaches this bound (exclusive upper), meters.
    pub max_range: f64,
    /// Events end when range drops below this bound (inclusive lower), meters.
    pub min_range: f64,
    /// Events end when ego speed drops below this, m/s (inclusive lower).
    pub min_speed: f64,
    /// Events end when curvature exceeds this, 1/m.
    pub max_curvature: f64,
    /// A run becomes an event only when strictly longer than this, seconds.
    pub min_duration: f64,
    /// Sampling gaps longer than this end the current run, seconds.
    pub max_gap: f64,
}

impl Default for SegmentationRules {
    fn default() -> Self {
        Self {
            max_range: 120.0,
            min_range: 10.0,
            min_speed: 5.0,
            max_curvature: 1e-3,
            min_duration: 50.0,
            max_gap: 0.25,
        }
    }
}

impl SegmentationRules {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_range > 0.0 && self.max_range > self.min_range) {
            return Err(Error::Config(format!(
                "range bounds must satisfy 0 < min_range < max_range, got [{}, {})",
                self.min_range, self.max_range
            )));
        }
        if !(self.min_speed > 0.0) {
            return Err(Error::Config(format!(
                "min_speed must be positive, got {}",
                self.min_speed
            )));
        }
        if !(self.max_curvature > 0.0) {
            return Err(Error::Config(format!(
                "max_curvature must be positive, got {}",
                self.max_curvature
            )));
        }
        if !(self.min_duration > 0.0) {
            return Err(Error::Config(format!(
                "min_duration must be positive, got {}",
                self.min_duration
            )));
        }
        if !(self.max_gap > 0.0) {
            return Err(Error::Config(format!(
                "max_gap must be positive, got {}",
                self.max_gap
            )));
        }
        Ok(())
    }

    fn compliant(&self, tick: &RawTick) -> bool {
        tick.range < self.max_range
            && tick.range >= self.min_range
            && tick.ego_speed >= self.min_speed
            && tick.curvature <= self.max_curvature
            && tick.turn_signal == TurnSignal::None
            && !tick.cut_in
            // Required for feature computation regardless of rule overrides.
            && tick.ego_speed > 0.0
            && tick.range > 0.0
    }
}

/// One extracted car-following episode with per-tick labeled samples.
#[derive(Debug, Clone, PartialEq)]
pub struct CarFollowingEvent {
    pub ticks: Vec<AugmentedSample>,
    /// Original trace timestamp of every tick; same length as `ticks`.
    pub times: Vec<f64>,
    pub start_t: f64,
    pub end_t: f64,
    pub source_trace: String,
}

impl CarFollowingEvent {
    pub fn duration(&self) -> f64 {
        self.end_t - self.start_t
    }

    pub fn brake_tick_count(&self) -> usize {
        self.ticks.iter().filter(|s| s.brake == 1).count()
    }
}

/// All admitted events of one driver.
#[derive(Debug, Clone)]
pub struct DriverDataset {
    pub driver_id: String,
    pub events: Vec<CarFollowingEvent>,
    /// Fraction of ticks labeled brake=1 across all events.
    pub brake_fraction: f64,
}

impl DriverDataset {
    pub fn event_count(&self) -> usize {
        self.events.len()
    }

    pub fn tick_count(&self) -> usize {
        self.events.iter().map(|e| e.ticks.len()).sum()
    }
}

/// Returned instead of a dataset when a driver has too few events.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub driver_id: String,
    pub event_count: usize,
    pub min_events: usize,
}

/// Parses and validates a trace file. Rows arrive in time order; duplicate
/// or decreasing timestamps are rejected.
pub fn load_trace(path: &Path) -> Result<Vec<RawTick>> {
    let content = std::fs::read_to_string(path)?;
    let mut lines = content.splitn(2, '\n');
    let first = lines.next().unwrap_or("").trim_end_matches('\r');
    if first.trim() != TRACE_SIDECAR {
        return Err(Error::Schema(format!(
            "missing units sidecar: first line must be exactly '{TRACE_SIDECAR}'"
        )));
    }
    let rest = lines.next().unwrap_or("");

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(rest.as_bytes());
    {
        let headers = reader
            .headers()
            .map_err(|e| Error::Schema(format!("unreadable header: {e}")))?;
        let expected: Vec<&str> = TRACE_HEADER.split(',').collect();
        let got: Vec<&str> = headers.iter().collect();
        if got != expected {
            return Err(Error::Schema(format!(
                "header mismatch: expected '{TRACE_HEADER}', got '{}'",
                got.join(",")
            )));
        }
    }

    let mut ticks: Vec<RawTick> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| match e.position() {
            Some(pos) => Error::Parse {
                line: pos.line() + 1, // account for the sidecar line
                message: e.to_string(),
            },
            None => Error::Schema(e.to_string()),
        })?;
        // csv counts lines from the header inside `rest`; +1 for the sidecar.
        let line = record.position().map(|p| p.line() + 1).unwrap_or(0);
        let tick = parse_tick(&record, line)?;
        if let Some(prev) = ticks.last() {
            if tick.t <= prev.t {
                return Err(Error::Monotonicity { line });
            }
        }
        ticks.push(tick);
    }
    Ok(ticks)
}

fn parse_tick(record: &csv::StringRecord, line: u64) -> Result<RawTick> {
    if record.len() != 9 {
        return Err(Error::Parse {
            line,
            message: format!("expected 9 fields, got {}", record.len()),
        });
    }
    let num = |idx: usize, name: &str| -> Result<f64> {
        let raw = &record[idx];
        let v: f64 = raw.parse().map_err(|_| Error::Parse {
            line,
            message: format!("{name}: not a number: '{raw}'"),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                line,
                message: format!("{name}: must be finite, got {v}"),
            });
        }
        Ok(v)
    };
    let flag = |idx: usize, name: &str, max: u8| -> Result<u8> {
        let raw = &record[idx];
        let v: u8 = raw.parse().map_err(|_| Error::Parse {
            line,
            message: format!("{name}: expected an integer code, got '{raw}'"),
        })?;
        if v > max {
            return Err(Error::Parse {
                line,
                message: format!("{name}: code {v} out of range 0..={max}"),
            });
        }
        Ok(v)
    };

    let t = num(0, "t")?;
    let ego_speed = num(1, "v_ego")?;
    if !(0.0..=MAX_EGO_SPEED).contains(&ego_speed) {
        return Err(Error::Parse {
            line,
            message: format!("v_ego: {ego_speed} outside validity range [0, {MAX_EGO_SPEED}]"),
        });
    }
    let preceding_speed = num(2, "v_prec")?;
    let range = num(3, "range")?;
    let curvature = num(4, "curvature")?;
    let turn_signal = TurnSignal::from_code(flag(5, "turn_signal", 2)?)
        .expect("code already range-checked");
    let cut_in = flag(6, "cut_in", 1)? == 1;
    let brake = flag(7, "brake", 1)?;
    let throttle = num(8, "throttle")?;
    if !(0.0..=100.0).contains(&throttle) {
        return Err(Error::Parse {
            line,
            message: format!("throttle: {throttle} outside [0, 100]"),
        });
    }
    Ok(RawTick {
        t,
        ego_speed,
        preceding_speed,
        range,
        curvature,
        turn_signal,
        cut_in,
        brake,
        throttle,
    })
}

/// Writes ticks in the trace CSV format (atomically). Floats are printed
/// with the shortest round-trippable representation, so write/load is exact.
pub fn write_trace(path: &Path, ticks: &[RawTick]) -> Result<()> {
    let mut out = String::with_capacity(ticks.len() * 48 + 64);
    out.push_str(TRACE_SIDECAR);
    out.push('\n');
    out.push_str(TRACE_HEADER);
    out.push('\n');
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
    atomic_write(path, out.as_bytes())?;
    Ok(())
}

/// Extracts maximal compliant runs and emits those lasting strictly longer
/// than `rules.min_duration`. A predicate violation ends the current run at
/// the previous tick; the violating tick belongs to no event. Sampling gaps
/// beyond `rules.max_gap` split runs the same way.
pub fn segment_events(
    ticks: &[RawTick],
    rules: &SegmentationRules,
    source_trace: &str,
) -> Vec<CarFollowingEvent> {
    let mut events = Vec::new();
    let mut run_start: Option<usize> = None;

    let flush = |start: usize, end: usize, events: &mut Vec<CarFollowingEvent>| {
        // end is exclusive.
        let duration = ticks[end - 1].t - ticks[start].t;
        if duration > rules.min_duration {
            let samples = ticks[start..end]
                .iter()
                .map(|tick| {
                    let xi = compute_features(tick.range, tick.ego_speed, tick.preceding_speed)
                        .expect("compliant tick has positive range and speed");
                    AugmentedSample::new(xi, tick.brake).expect("brake is 0/1 by parsing")
                })
                .collect();
            events.push(CarFollowingEvent {
                ticks: samples,
                times: ticks[start..end].iter().map(|tick| tick.t).collect(),
                start_t: ticks[start].t,
                end_t: ticks[end - 1].t,
                source_trace: source_trace.to_string(),
            });
        }
    };

    for (i, tick) in ticks.iter().enumerate() {
        let gap_broken = match run_start {
            Some(_) if i > 0 => tick.t - ticks[i - 1].t > rules.max_gap,
            _ => false,
        };
        if gap_broken {
            if let Some(start) = run_start.take() {
                flush(start, i, &mut events);
            }
        }
        if rules.compliant(tick) {
            if run_start.is_none() {
                run_start = Some(i);
            }
        } else if let Some(start) = run_start.take() {
            flush(start, i, &mut events);
        }
    }
    if let Some(start) = run_start {
        flush(start, ticks.len(), &mut events);
    }
    events
}

/// Admits a driver when enough events were extracted, otherwise reports the
/// shortfall.
pub fn build_dataset(
    events: Vec<CarFollowingEvent>,
    driver_id: &str,
    min_events: usize,
) -> std::result::Result<DriverDataset, Rejection> {
    if events.len() < min_events {
        return Err(Rejection {
            driver_id: driver_id.to_string(),
            event_count: events.len(),
            min_events,
        });
    }
    let total: usize = events.iter().map(|e| e.ticks.len()).sum();
    let braking: usize = events.iter().map(|e| e.brake_tick_count()).sum();
    let brake_fraction = if total == 0 {
        0.0
    } else {
        braking as f64 / total as f64
    };
    Ok(DriverDataset {
        driver_id: driver_id.to_string(),
        events,
        brake_fraction,
    })
}
