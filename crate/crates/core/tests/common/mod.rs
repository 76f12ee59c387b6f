//! Shared fixtures for the integration tests: a linear-Gaussian regime in
//! which the particle filter and smoother can be checked against Kalman and
//! Rauch-Tung-Striebel recursions.

#![allow(dead_code)]

pub mod brute;
pub mod ledger;

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Vector2, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use phd_jdtc::forward::{resample, update, FilterConfig, Models, ParticleIntensity};
use phd_jdtc::sensing::{ClutterModel, Detection, ObservationKind, SensorConfig, SnrBand};
use phd_jdtc::smoother::{GatingConfig, SmootherWindow};
use phd_jdtc::state_space::{
    cv_process_cov, AugmentedState, BirthModel, ClassLabel, KinematicState, ModeTransitionMatrix, MotionMode, MotionModel,
    Particle, SpawnModel, StochasticMatrix, SurvivalModel,
};

pub const DT: f64 = 1.0;
pub const ACCEL_NOISE: f64 = 1.0;
pub const MEAS_SIGMA: f64 = 10.0;
pub const STEPS: usize = 20;

/// Single class, CV only, certain survival, no birth or spawn, no clutter.
pub fn linear_models() -> Models {
    let pi = ModeTransitionMatrix::shared(StochasticMatrix::identity(2), 1).unwrap();
    Models::new(
        MotionModel::new(DT, ACCEL_NOISE, ACCEL_NOISE, 0.1, pi).unwrap(),
        SurvivalModel::new(1.0).unwrap(),
        BirthModel::none(1),
        SpawnModel::disabled(1),
        vec![SnrBand::from_db(10.0, 30.0).unwrap()],
        ClutterModel::new(0.0, 1000.0).unwrap(),
    )
    .unwrap()
}

/// Direct position sensor with no amplitude threshold, so every scan carries one detection.
pub fn linear_sensor() -> SensorConfig {
    SensorConfig::new(1, [0.0, 0.0], ObservationKind::Cartesian { sigma: MEAS_SIGMA }, 0.0).unwrap()
}

pub fn f_matrix() -> Matrix4<f64> {
    Matrix4::new(1.0, DT, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, DT, 0.0, 0.0, 0.0, 1.0)
}

pub fn q_matrix() -> Matrix4<f64> {
    cv_process_cov(DT, ACCEL_NOISE).fixed_view::<4, 4>(0, 0).into_owned()
}

pub fn h_matrix() -> Matrix2x4<f64> {
    Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0)
}

pub fn prior() -> (Vector4<f64>, Matrix4<f64>) {
    (Vector4::new(0.0, 5.0, 0.0, -3.0), Matrix4::from_diagonal(&Vector4::new(100.0, 1.0, 100.0, 1.0)))
}

pub fn to_vec4(k: &KinematicState) -> Vector4<f64> {
    Vector4::new(k.x, k.vx, k.y, k.vy)
}

pub fn gaussian4<R: Rng>(mean: &Vector4<f64>, cov: &Matrix4<f64>, rng: &mut R) -> Vector4<f64> {
    let l = cov.cholesky().unwrap().l();
    let n = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
    mean + l * n
}

/// Linear-Gaussian truth and detections for one seed.
pub struct LinearRun {
    pub truth: Vec<Vector4<f64>>,
    pub detections: Vec<Detection>,
}

pub fn simulate_linear(seed: u64) -> LinearRun {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m0, p0) = prior();
    let mut x = gaussian4(&m0, &p0, &mut rng);
    let (f, q) = (f_matrix(), q_matrix());
    let mut truth = Vec::with_capacity(STEPS);
    let mut detections = Vec::with_capacity(STEPS);
    for k in 0..STEPS {
        if k > 0 {
            x = gaussian4(&(f * x), &q, &mut rng);
        }
        let z = [
            x[0] + MEAS_SIGMA * rng.sample::<f64, _>(StandardNormal),
            x[2] + MEAS_SIGMA * rng.sample::<f64, _>(StandardNormal),
        ];
        truth.push(x);
        detections.push(Detection { z, amplitude: 1.0, sensor: 1 });
    }
    LinearRun { truth, detections }
}

/// Kalman filter output per step: predicted and filtered moments.
pub struct KalmanTrack {
    pub pred_mean: Vec<Vector4<f64>>,
    pub pred_cov: Vec<Matrix4<f64>>,
    pub mean: Vec<Vector4<f64>>,
    pub cov: Vec<Matrix4<f64>>,
}

pub fn kalman(detections: &[Detection]) -> KalmanTrack {
    let (f, q, h) = (f_matrix(), q_matrix(), h_matrix());
    let r = Matrix2::identity() * MEAS_SIGMA * MEAS_SIGMA;
    let (mut m, mut p) = prior();
    let mut out = KalmanTrack { pred_mean: vec![], pred_cov: vec![], mean: vec![], cov: vec![] };
    for (k, d) in detections.iter().enumerate() {
        if k > 0 {
            m = f * m;
            p = f * p * f.transpose() + q;
        }
        out.pred_mean.push(m);
        out.pred_cov.push(p);
        let s = h * p * h.transpose() + r;
        let gain = p * h.transpose() * s.try_inverse().unwrap();
        m += gain * (Vector2::new(d.z[0], d.z[1]) - h * m);
        p = (Matrix4::identity() - gain * h) * p;
        out.mean.push(m);
        out.cov.push(p);
    }
    out
}

/// Fixed-lag RTS: smoothed moments at `k - lag` using filter output up to `k`.
pub fn rts_fixed_lag(track: &KalmanTrack, k: usize, lag: usize) -> (Vector4<f64>, Matrix4<f64>) {
    let f = f_matrix();
    let mut ms = track.mean[k];
    let mut ps = track.cov[k];
    for t in (k - lag..k).rev() {
        let gain = track.cov[t] * f.transpose() * track.pred_cov[t + 1].try_inverse().unwrap();
        ms = track.mean[t] + gain * (ms - track.pred_mean[t + 1]);
        ps = track.cov[t] + gain * (ps - track.pred_cov[t + 1]) * gain.transpose();
    }
    (ms, ps)
}

/// Unit-mass particle cloud drawn from the prior.
pub fn prior_particles(n: usize, rng: &mut ChaCha8Rng) -> ParticleIntensity {
    let (m0, p0) = prior();
    let ps = (0..n).map(|_| {
        let v = gaussian4(&m0, &p0, rng);
        Particle::new(
            1.0 / n as f64,
            AugmentedState::new(KinematicState::new(v[0], v[1], v[2], v[3], 0.0), MotionMode::Cv, ClassLabel::new(0)),
        )
    });
    ParticleIntensity::from_particles(0, 1, ps).unwrap()
}

pub fn weighted_mean(pi: &ParticleIntensity) -> Vector4<f64> {
    let mass = pi.total_mass();
    pi.iter().map(|p| to_vec4(&p.state.kin) * p.weight).sum::<Vector4<f64>>() / mass
}

pub fn linear_filter_config(n: usize) -> FilterConfig {
    FilterConfig {
        particles_per_target: n,
        particles_per_birth: n,
        particles_per_spawn: 0,
        resample_threshold: 0.5,
        mass_floor: 1e-6,
        update_order: vec![],
    }
}

/// Normalised errors `(particle - oracle) / (sigma / sqrt(n))` per step and axis.
pub struct OracleErrors {
    pub filter: Vec<[f64; 4]>,
    pub smoother: Vec<[f64; 4]>,
}

/// Runs the particle filter and fixed-lag smoother on one linear seed and
/// compares with the Kalman and fixed-lag RTS moments.
/// Smoothing is skipped when `lag` is `None`.
pub fn oracle_errors(seed: u64, n: usize, lag: Option<usize>) -> OracleErrors {
    let models = linear_models();
    let sensor = linear_sensor();
    let config = linear_filter_config(n);
    let run = simulate_linear(seed);
    let kf = kalman(&run.detections);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut window = SmootherWindow::new(lag.unwrap_or(0), GatingConfig::default()).unwrap();
    let scale = (n as f64).sqrt();
    let mut out = OracleErrors { filter: vec![], smoother: vec![] };

    let mut pred = prior_particles(n, &mut rng);
    for k in 0..STEPS {
        if k > 0 {
            pred = phd_jdtc::forward::predict(window.latest().unwrap(), &models, &config, &mut rng);
        }
        let post = update(&pred, &[vec![run.detections[k]]], std::slice::from_ref(&sensor), &models, &config).unwrap();
        let mean = weighted_mean(&post);
        out.filter.push(std::array::from_fn(|i| (mean[i] - kf.mean[k][i]) / (kf.cov[k][(i, i)].sqrt() / scale)));
        window.push(resample(&post, &config, &mut rng), &models).unwrap();
        if let Some(lag) = lag.filter(|_| window.is_full()) {
            let sm = window.smooth().unwrap();
            let (ms, ps) = rts_fixed_lag(&kf, k, lag);
            let m = weighted_mean(&sm);
            out.smoother.push(std::array::from_fn(|i| (m[i] - ms[i]) / (ps[(i, i)].sqrt() / scale)));
        }
    }
    out
}

/// Root mean square over steps, per axis.
pub fn rms_per_axis(errors: &[[f64; 4]]) -> [f64; 4] {
    std::array::from_fn(|i| (errors.iter().map(|e| e[i] * e[i]).sum::<f64>() / errors.len() as f64).sqrt())
}
