//! Synthetic labeled car-following traces.
//!
//! A leader follows a piecewise speed schedule; the follower integrates an
//! intelligent-driver-model acceleration toward its desired headway and
//! speed. The brake label comes from a hysteresis policy on TTC and headway,
//! and while the policy is braking the follower never accelerates, so labels
//! and kinematics stay coherent. Purely test infrastructure; none of the
//! parameters are normative.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio::atomic_write;
use crate::math::mix_seed;
use crate::pipeline::{write_trace, RawTick, TurnSignal};

/// One step of the leader's speed schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeaderPhase {
    pub duration: f64,
    pub target_speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FollowerParams {
    /// Desired time headway, seconds.
    pub time_headway: f64,
    /// Free-flow desired speed, m/s.
    pub desired_speed: f64,
    /// Maximum acceleration, m/s².
    pub max_accel: f64,
    /// Maximum (comfortable) deceleration magnitude, m/s².
    pub max_decel: f64,
    /// Standstill minimum spacing, meters.
    pub min_spacing: f64,
    /// Accelerations below this magnitude coast instead, m/s².
    pub comfort_band: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrakePolicy {
    /// Braking starts when TTC drops below this, seconds.
    pub ttc_threshold: f64,
    /// Braking starts when range drops below this, meters.
    pub headway_threshold: f64,
    /// Fractional widening of both thresholds required to exit braking.
    pub hysteresis: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseStd {
    pub range: f64,
    pub ego_speed: f64,
    pub preceding_speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub duration: f64,
    pub dt: f64,
    /// Initial speed of both vehicles and implicit first leader target.
    pub initial_speed: f64,
    pub leader_profile: Vec<LeaderPhase>,
    /// Bound on the leader's acceleration magnitude, m/s².
    pub leader_accel_limit: f64,
    pub follower: FollowerParams,
    pub brake_policy: BrakePolicy,
    pub noise: NoiseStd,
    /// Constant emitted road curvature, 1/m.
    pub curvature: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            duration: 160.0,
            dt: 0.1,
            initial_speed: 25.0,
            leader_profile: vec![
                LeaderPhase { duration: 55.0, target_speed: 25.0 },
                LeaderPhase { duration: 25.0, target_speed: 9.0 },
                LeaderPhase { duration: 35.0, target_speed: 23.0 },
                LeaderPhase { duration: 20.0, target_speed: 8.0 },
                LeaderPhase { duration: 25.0, target_speed: 24.0 },
            ],
            leader_accel_limit: 3.0,
            follower: FollowerParams {
                time_headway: 1.4,
                desired_speed: 33.0,
                max_accel: 1.4,
                max_decel: 2.2,
                min_spacing: 2.0,
                comfort_band: 0.05,
            },
            brake_policy: BrakePolicy {
                ttc_threshold: 1.35,
                headway_threshold: 20.0,
                hysteresis: 0.2,
            },
            noise: NoiseStd::default(),
            curvature: 2e-4,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.duration < self.dt {
            return Err(Error::Config(format!(
                "duration {} must be at least dt {}",
                self.duration, self.dt
            )));
        }
        if !(self.initial_speed > 0.0) {
            return Err(Error::Config("initial_speed must be positive".into()));
        }
        if self.initial_speed >= self.follower.desired_speed {
            return Err(Error::Config(format!(
                "initial_speed {} must be below desired_speed {} for a following equilibrium",
                self.initial_speed, self.follower.desired_speed
            )));
        }
        for (i, phase) in self.leader_profile.iter().enumerate() {
            if !(phase.duration > 0.0) || !(phase.target_speed > 0.0) {
                return Err(Error::Config(format!(
                    "leader phase {i} must have positive duration and target_speed"
                )));
            }
            if phase.target_speed >= self.follower.desired_speed {
                return Err(Error::Config(format!(
                    "leader phase {i} target {} must stay below desired_speed {}",
                    phase.target_speed, self.follower.desired_speed
                )));
            }
        }
        let f = &self.follower;
        if !(f.time_headway > 0.0
            && f.max_accel > 0.0
            && f.max_decel > 0.0
            && f.min_spacing > 0.0
            && f.comfort_band >= 0.0)
        {
            return Err(Error::Config("follower parameters must be positive".into()));
        }
        let p = &self.brake_policy;
        if !(p.ttc_threshold > 0.0 && p.headway_threshold > 0.0 && p.hysteresis >= 0.0) {
            return Err(Error::Config("brake policy thresholds must be positive".into()));
        }
        if self.noise.range < 0.0 || self.noise.ego_speed < 0.0 || self.noise.preceding_speed < 0.0
        {
            return Err(Error::Config("noise standard deviations must be nonnegative".into()));
        }
        if !(self.leader_accel_limit > 0.0) {
            return Err(Error::Config("leader_accel_limit must be positive".into()));
        }
        Ok(())
    }

    /// Spacing at which the follower's acceleration is exactly zero for
    /// equal speeds `v`.
    fn equilibrium_spacing(&self, v: f64) -> f64 {
        let f = &self.follower;
        let free = 1.0 - (v / f.desired_speed).powi(4);
        (f.min_spacing + v * f.time_headway) / free.sqrt()
    }
}

/// IDM acceleration of the follower.
fn follower_accel(f: &FollowerParams, v: f64, v_lead: f64, range: f64) -> f64 {
    let s_star = f.min_spacing
        + v * f.time_headway
        + v * (v - v_lead) / (2.0 * (f.max_accel * f.max_decel).sqrt());
    let a = f.max_accel * (1.0 - (v / f.desired_speed).powi(4) - (s_star / range).powi(2));
    a.clamp(-f.max_decel, f.max_accel)
}

/// Simulates one trace. Deterministic given `config.seed`; the follower
/// starts at the exact equilibrium spacing for `initial_speed`.
pub fn simulate(config: &SimConfig) -> Result<Vec<RawTick>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_ticks = (config.duration / config.dt).round() as usize + 1;
    let dt = config.dt;

    let mut v_lead = config.initial_speed;
    let mut v_ego = config.initial_speed;
    let mut range = config.equilibrium_spacing(config.initial_speed);
    let mut braking = false;

    let policy = &config.brake_policy;
    let exit_ttc = policy.ttc_threshold * (1.0 + policy.hysteresis);
    let exit_headway = policy.headway_threshold * (1.0 + policy.hysteresis);

    let mut ticks = Vec::with_capacity(n_ticks);
    for i in 0..n_ticks {
        let t = i as f64 * dt;

        // Brake policy with hysteresis; the label holds for the step ahead.
        let ttc = if v_ego > 0.0 { range / v_ego } else { f64::INFINITY };
        if braking {
            if ttc > exit_ttc && range > exit_headway {
                braking = false;
            }
        } else if ttc < policy.ttc_threshold || range < policy.headway_threshold {
            braking = true;
        }

        let mut accel = follower_accel(&config.follower, v_ego, v_lead, range);
        if range < config.follower.min_spacing {
            accel = -config.follower.max_decel;
        }
        if accel.abs() < config.follower.comfort_band {
            accel = 0.0;
        }
        if braking {
            accel = accel.min(0.0);
        }

        let gauss = |rng: &mut ChaCha8Rng, std: f64| {
            if std == 0.0 {
                0.0
            } else {
                // Box-Muller; consumes exactly two uniforms per call.
                let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                std * (-2.0 * u1.ln()).sqrt() * u2.cos()
            }
        };
        let throttle = if accel > 0.0 {
            (accel / config.follower.max_accel * 60.0).clamp(0.0, 100.0)
        } else {
            0.0
        };
        ticks.push(RawTick {
            t,
            ego_speed: (v_ego + gauss(&mut rng, config.noise.ego_speed)).clamp(0.0, 45.0),
            preceding_speed: (v_lead + gauss(&mut rng, config.noise.preceding_speed)).max(0.0),
            range: range + gauss(&mut rng, config.noise.range),
            curvature: config.curvature,
            turn_signal: TurnSignal::None,
            cut_in: false,
            brake: u8::from(braking),
            throttle,
        });

        // Integrate to t+dt using the speeds at t for the range update.
        let target = leader_target(config, t);
        let dv_lead = (target - v_lead).clamp(-config.leader_accel_limit * dt,
                                              config.leader_accel_limit * dt);
        range += (v_lead - v_ego) * dt;
        v_lead += dv_lead;
        v_ego = (v_ego + accel * dt).max(0.0);
    }
    Ok(ticks)
}

fn leader_target(config: &SimConfig, t: f64) -> f64 {
    let mut elapsed = 0.0;
    for phase in &config.leader_profile {
        elapsed += phase.duration;
        if t < elapsed {
            return phase.target_speed;
        }
    }
    config
        .leader_profile
        .last()
        .map(|p| p.target_speed)
        .unwrap_or(config.initial_speed)
}

/// Relative jitter applied per corpus trace. Zero fractions disable jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterSpec {
    /// All speeds (initial, leader targets, desired) scale by 1 ± this.
    pub speed_frac: f64,
    /// Desired time headway scales by 1 ± this.
    pub headway_frac: f64,
}

impl Default for JitterSpec {
    fn default() -> Self {
        Self {
            speed_frac: 0.05,
            headway_frac: 0.08,
        }
    }
}

impl JitterSpec {
    pub const NONE: JitterSpec = JitterSpec {
        speed_frac: 0.0,
        headway_frac: 0.0,
    };
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceManifestEntry {
    pub file: String,
    pub seed: u64,
    pub config: SimConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub base_seed: u64,
    pub n_traces: usize,
    pub jitter: JitterSpec,
    pub traces: Vec<TraceManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Generates `n_traces` independent traces under per-trace jittered copies
/// of the template, writing `trace_NNN.csv` files plus a manifest with the
/// exact parameters of each trace.
pub fn simulate_corpus(
    template: &SimConfig,
    n_traces: usize,
    seed: u64,
    jitter: &JitterSpec,
    out_dir: &Path,
) -> Result<CorpusManifest> {
    if n_traces == 0 {
        return Err(Error::Config("n_traces must be at least 1".into()));
    }
    if jitter.speed_frac < 0.0 || jitter.headway_frac < 0.0 {
        return Err(Error::Config("jitter fractions must be nonnegative".into()));
    }
    template.validate()?;
    std::fs::create_dir_all(out_dir)?;

    let mut entries = Vec::with_capacity(n_traces);
    for i in 0..n_traces {
        let trace_seed = mix_seed(seed, i as u64);
        let mut config = template.clone();
        config.seed = trace_seed;
        if *jitter != JitterSpec::NONE {
            let mut jrng = ChaCha8Rng::seed_from_u64(mix_seed(trace_seed, 0x4A17_7E12));
            let speed_scale = 1.0 + jrng.random_range(-jitter.speed_frac..=jitter.speed_frac);
            let headway_scale =
                1.0 + jrng.random_range(-jitter.headway_frac..=jitter.headway_frac);
            config.initial_speed *= speed_scale;
            config.follower.desired_speed *= speed_scale;
            config.follower.time_headway *= headway_scale;
            for phase in &mut config.leader_profile {
                phase.target_speed *= speed_scale;
            }
        }
        let ticks = simulate(&config)?;
        let file = format!("trace_{i:03}.csv");
        write_trace(&out_dir.join(&file), &ticks)?;
        entries.push(TraceManifestEntry {
            file,
            seed: trace_seed,
            config,
        });
    }

    let manifest = CorpusManifest {
        base_seed: seed,
        n_traces,
        jitter: *jitter,
        traces: entries,
    };
    let bytes = serde_json::to_vec_pretty(&manifest)
        .map_err(|e| Error::Numerical(format!("manifest serialization failed: {e}")))?;
    atomic_write(&out_dir.join(MANIFEST_FILE), &bytes)?;
    Ok(manifest)
}
