//! Scenario configuration, ground-truth trajectories and synthetic
//! detection streams.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::estimation::EstimationConfig;
use crate::forward::{FilterConfig, Models};
use crate::metrics::{OspaParams, TruthPoint};
use crate::sensing::{noisy_observation, rayleigh, sample_clutter, ClutterModel, Detection, ObservationKind, SensorConfig, SnrBand};
use crate::smoother::GatingConfig;
use crate::state_space::{
    ct_transition, cv_transition, BirthComponent, BirthModel, ClassLabel, GaussianShape, KinematicState, ModeTransitionMatrix,
    MotionMode, MotionModel, SpawnModel, StochasticMatrix, SurvivalModel,
};

/// Independent random substreams: each (seed, domain, index) triple gets its own stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Measurements = 1,
    Filter = 2,
    Smoother = 3,
    Estimation = 4,
}

pub fn stream_rng(seed: u64, domain: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((domain as u64) << 48) | index);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingSpec {
    /// Sample time, s.
    pub dt: f64,
    /// Time of the last scan, s; scans run at `0, dt, 2 dt, ...` up to and including it.
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionSpec {
    pub cv_noise: f64,
    pub ct_noise: f64,
    pub turn_noise: f64,
    pub mode_transition: Vec<Vec<f64>>,
    pub survival: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BirthSpec {
    pub weight: f64,
    pub mean: [f64; 5],
    pub cov_diag: [f64; 5],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub name: String,
    /// SNR band `[low, high]`, dB.
    pub snr_db: [f64; 2],
    #[serde(default)]
    pub birth: Vec<BirthSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpawnSpec {
    pub rate: f64,
    pub cov_diag: [f64; 5],
    pub mode_transition: Vec<Vec<f64>>,
    pub class_transition: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub id: usize,
    pub position: [f64; 2],
    #[serde(flatten)]
    pub kind: ObservationKind,
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pd_override: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClutterSpec {
    /// Expected clutter detections per sensor per scan.
    pub rate: f64,
    pub max_range: f64,
}

/// A piece of a target's manoeuvre schedule, in force from `start` (s after birth).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSpec {
    pub start: f64,
    pub mode: MotionMode,
    /// Turn rate for CT segments, rad/s.
    #[serde(default)]
    pub omega: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub id: usize,
    /// One-based class number.
    pub class: usize,
    pub birth: f64,
    pub death: f64,
    /// `[x, vx, y, vy, omega]` at the birth time.
    pub initial: [f64; 5],
    /// Empty means straight-line motion throughout.
    #[serde(default)]
    pub segments: Vec<SegmentSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    pub particles_per_target: usize,
    pub particles_per_birth: usize,
    pub particles_per_spawn: usize,
    pub resample_threshold: f64,
    pub mass_floor: f64,
    #[serde(default)]
    pub update_order: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmootherSpec {
    pub lag: usize,
    pub enabled: bool,
    pub gate_enabled: bool,
    pub gate_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationSpec {
    pub class_radius: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSpec {
    pub ospa_cutoff: f64,
    pub ospa_order: f64,
    /// Inclusive scan range used for headline averages.
    pub window: [usize; 2],
}

/// The scenario file as written on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub timing: TimingSpec,
    pub motion: MotionSpec,
    pub classes: Vec<ClassSpec>,
    pub spawn: SpawnSpec,
    pub sensors: Vec<SensorSpec>,
    pub clutter: ClutterSpec,
    pub targets: Vec<TargetSpec>,
    pub filter: FilterSpec,
    pub smoother: SmootherSpec,
    pub estimation: EstimationSpec,
    pub evaluation: EvaluationSpec,
}

/// Validated runtime objects built from a [`ScenarioConfig`].
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub models: Models,
    pub sensors: Vec<SensorConfig>,
    pub filter: FilterConfig,
    pub gate: GatingConfig,
    pub estimation: EstimationConfig,
    pub ospa: OspaParams,
}

/// Bundled reference scenario file contents.
pub const REFERENCE_SCENARIO: &str = include_str!("../scenarios/reference_scenario.toml");

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn reference() -> Self {
        Self::from_toml(REFERENCE_SCENARIO).expect("bundled reference scenario parses")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serialises")
    }

    pub fn num_scans(&self) -> usize {
        (self.timing.duration / self.timing.dt + 1e-9).floor() as usize + 1
    }

    pub fn build(&self) -> Result<Scenario> {
        let t = &self.timing;
        if !(t.dt > 0.0) || !(t.duration >= 0.0) {
            return Err(config_err("timing: dt must be positive and duration non-negative"));
        }
        let nc = self.classes.len();
        if nc == 0 {
            return Err(config_err("at least one class must be configured"));
        }
        let pi = StochasticMatrix::new(&self.motion.mode_transition)?;
        let motion = MotionModel::new(
            t.dt,
            self.motion.cv_noise,
            self.motion.ct_noise,
            self.motion.turn_noise,
            ModeTransitionMatrix::shared(pi, nc)?,
        )?;
        let survival = SurvivalModel::new(self.motion.survival)?;

        let mut bands = Vec::with_capacity(nc);
        let mut births = Vec::with_capacity(nc);
        for class in &self.classes {
            bands.push(SnrBand::from_db(class.snr_db[0], class.snr_db[1])?);
            births.push(
                class
                    .birth
                    .iter()
                    .map(|b| BirthComponent::new(b.weight, KinematicState::from_array(b.mean), GaussianShape::from_diagonal(b.cov_diag)?))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        let s = &self.spawn;
        let spawn = SpawnModel::new(
            s.rate,
            GaussianShape::from_diagonal(s.cov_diag)?,
            StochasticMatrix::new(&s.mode_transition)?,
            StochasticMatrix::new(&s.class_transition)?,
        )?;
        let clutter = ClutterModel::new(self.clutter.rate, self.clutter.max_range)?;
        let models = Models::new(motion, survival, BirthModel::new(births), spawn, bands, clutter)?;

        let mut sensors = Vec::with_capacity(self.sensors.len());
        for spec in &self.sensors {
            let mut sensor = SensorConfig::new(spec.id, spec.position, spec.kind, spec.tau)?;
            if let Some(pd) = spec.pd_override {
                sensor = sensor.with_pd_override(pd);
            }
            if sensors.iter().any(|s: &SensorConfig| s.id == spec.id) {
                return Err(config_err(format!("duplicate sensor id {}", spec.id)));
            }
            sensors.push(sensor);
        }
        if sensors.is_empty() {
            return Err(config_err("at least one sensor must be configured"));
        }

        for target in &self.targets {
            if ClassLabel::from_number(target.class).is_none_or(|c| c.index() >= nc) {
                return Err(Error::UnknownClass(target.class));
            }
            if !(target.birth >= 0.0 && target.birth < target.death) {
                return Err(config_err(format!("target {}: need 0 <= birth < death", target.id)));
            }
        }

        let f = &self.filter;
        let filter = FilterConfig {
            particles_per_target: f.particles_per_target,
            particles_per_birth: f.particles_per_birth,
            particles_per_spawn: f.particles_per_spawn,
            resample_threshold: f.resample_threshold,
            mass_floor: f.mass_floor,
            update_order: f.update_order.clone(),
        };
        filter.validate()?;
        let gate = GatingConfig { enabled: self.smoother.gate_enabled, radius: self.smoother.gate_radius };
        gate.validate()?;
        let e = &self.estimation;
        let estimation = EstimationConfig { max_iterations: e.max_iterations, tolerance: e.tolerance, class_radius: e.class_radius };
        let ospa = OspaParams::new(self.evaluation.ospa_cutoff, self.evaluation.ospa_order)?;
        Ok(Scenario { config: self.clone(), models, sensors, filter, gate, estimation, ospa })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthState {
    pub target: usize,
    pub class: ClassLabel,
    pub kin: KinematicState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub dt: f64,
    /// Targets present at each scan.
    pub scans: Vec<Vec<TruthState>>,
}

impl GroundTruth {
    pub fn num_scans(&self) -> usize {
        self.scans.len()
    }

    pub fn time(&self, scan: usize) -> f64 {
        scan as f64 * self.dt
    }

    pub fn points(&self, scan: usize) -> Vec<TruthPoint> {
        self.scans[scan].iter().map(|t| TruthPoint { position: t.kin.position(), class: t.class }).collect()
    }

    pub fn counts(&self, scan: usize, num_classes: usize) -> Vec<usize> {
        let mut out = vec![0; num_classes];
        for t in &self.scans[scan] {
            out[t.class.index()] += 1;
        }
        out
    }
}

fn advance(kin: &KinematicState, segment: Option<&SegmentSpec>, dt: f64) -> KinematicState {
    match segment {
        Some(SegmentSpec { mode: MotionMode::Ct, omega, .. }) => ct_transition(&KinematicState { omega: *omega, ..*kin }, dt),
        _ => cv_transition(&KinematicState { omega: 0.0, ..*kin }, dt).unwrap_or(*kin),
    }
}

fn segment_at(segments: &[SegmentSpec], age: f64) -> Option<&SegmentSpec> {
    segments.iter().rfind(|s| s.start <= age + 1e-9)
}

/// Deterministic trajectories sampled at every scan; a target is present
/// at scan time `t` when `birth <= t < death`.
pub fn generate_truth(cfg: &ScenarioConfig) -> GroundTruth {
    let dt = cfg.timing.dt;
    let n = cfg.num_scans();
    let mut scans = vec![Vec::new(); n];
    for target in &cfg.targets {
        let class = ClassLabel::from_number(target.class).unwrap_or(ClassLabel::new(0));
        let mut kin = KinematicState::from_array(target.initial);
        let mut t = target.birth;
        for (k, scan) in scans.iter_mut().enumerate() {
            let tk = k as f64 * dt;
            if tk < target.birth - 1e-9 {
                continue;
            }
            if tk >= target.death - 1e-9 {
                break;
            }
            // step segment by segment up to the scan time
            while t < tk - 1e-9 {
                let age = t - target.birth;
                let next_change = target
                    .segments
                    .iter()
                    .map(|s| s.start + target.birth)
                    .filter(|&s| s > t + 1e-9)
                    .fold(f64::INFINITY, f64::min);
                let step = (tk - t).min(next_change - t);
                kin = advance(&kin, segment_at(&target.segments, age), step);
                t += step;
            }
            scan.push(TruthState { target: target.id, class, kin });
        }
    }
    GroundTruth { dt, scans }
}

/// Detections for one scan, one list per sensor in configuration order.
pub type ScanDetections = Vec<Vec<Detection>>;

/// Per-scan detections: each target draws an SNR log-uniformly within its
/// class band and a Rayleigh amplitude of that power, and is reported when
/// the amplitude reaches the sensor threshold; clutter is appended.
pub fn generate_measurements(truth: &GroundTruth, scenario: &Scenario, seed: u64) -> Result<Vec<ScanDetections>> {
    let bands = &scenario.models.bands;
    let mut out = Vec::with_capacity(truth.num_scans());
    for (k, targets) in truth.scans.iter().enumerate() {
        let mut scan = Vec::with_capacity(scenario.sensors.len());
        for (i, sensor) in scenario.sensors.iter().enumerate() {
            let mut rng = stream_rng(seed, Stream::Measurements, (k as u64) << 8 | i as u64);
            let mut dets = Vec::new();
            for target in targets {
                let band = &bands[target.class.index()];
                let ln_snr = (1.0 + band.d1()).ln() + band.ln_width() * rng.random::<f64>();
                let amplitude = rayleigh(ln_snr.exp(), &mut rng);
                if amplitude >= sensor.tau {
                    let z = noisy_observation(&target.kin, sensor, &mut rng)?;
                    dets.push(Detection { z, amplitude, sensor: sensor.id });
                }
            }
            dets.extend(sample_clutter(&scenario.models.clutter, sensor, &mut rng));
            scan.push(dets);
        }
        out.push(scan);
    }
    Ok(out)
}
