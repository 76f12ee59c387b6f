//! Randomised bookkeeping checks for predict, update and resample.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use phd_jdtc::forward::{
    predict, resample, target_count, update_single_sensor_detailed, FilterConfig, Models, ParticleIntensity,
};
use phd_jdtc::sensing::{ClutterModel, Detection, SensorConfig, SnrBand};
use phd_jdtc::state_space::{
    AugmentedState, BirthComponent, BirthModel, ClassLabel, GaussianShape, KinematicState, ModeTransitionMatrix,
    MotionMode, MotionModel, Particle, SpawnModel, StochasticMatrix, SurvivalModel,
};

fn random_row<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < 0.2 { 0.0 } else { rng.random::<f64>() }).collect();
    let s: f64 = raw.iter().sum();
    if s == 0.0 {
        let mut row = vec![0.0; n];
        row[rng.random_range(0..n)] = 1.0;
        return row;
    }
    raw.iter().map(|x| x / s).collect()
}

fn random_matrix<R: Rng>(n: usize, rng: &mut R) -> StochasticMatrix {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| random_row(n, rng)).collect();
    StochasticMatrix::new(&rows).unwrap()
}

/// A random model set, filter config, prior intensity and one sensor scan.
pub struct LedgerCase {
    pub models: Models,
    pub config: FilterConfig,
    pub prior: ParticleIntensity,
    pub sensor: SensorConfig,
    pub detections: Vec<Detection>,
}

pub fn random_case(seed: u64) -> LedgerCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nc = rng.random_range(1..=3usize);
    let pi = ModeTransitionMatrix::new((0..nc).map(|_| random_matrix(2, &mut rng)).collect()).unwrap();
    let motion = MotionModel::new(
        rng.random_range(0.5..8.0),
        rng.random_range(0.1..5.0),
        rng.random_range(0.1..5.0),
        rng.random_range(0.01..0.2),
        pi,
    )
    .unwrap();
    let births = (0..nc)
        .map(|_| {
            (0..rng.random_range(0..=2usize))
                .map(|_| {
                    let mean = KinematicState::new(rng.random_range(-3000.0..3000.0), 0.0, rng.random_range(-3000.0..3000.0), 0.0, 0.0);
                    let shape = GaussianShape::from_diagonal([1e4, 100.0, 1e4, 100.0, 1e-6]).unwrap();
                    BirthComponent::new(rng.random_range(0.0..0.05), mean, shape).unwrap()
                })
                .collect()
        })
        .collect();
    let spawn_rate = if rng.random::<f64>() < 0.3 { 0.0 } else { rng.random_range(0.0..0.1) };
    let spawn = SpawnModel::new(
        spawn_rate,
        GaussianShape::from_diagonal([100.0, 1.0, 100.0, 1.0, 1e-8]).unwrap(),
        random_matrix(2, &mut rng),
        random_matrix(nc, &mut rng),
    )
    .unwrap();
    let bands = (0..nc)
        .map(|_| {
            let lo = rng.random_range(0.0..40.0);
            SnrBand::from_db(lo, lo + rng.random_range(1.0..20.0)).unwrap()
        })
        .collect();
    let clutter_rate = if rng.random::<f64>() < 0.3 { 0.0 } else { rng.random_range(0.0..20.0) };
    let models = Models::new(
        motion,
        SurvivalModel::new(rng.random_range(0.0..=1.0)).unwrap(),
        BirthModel::new(births),
        spawn,
        bands,
        ClutterModel::new(clutter_rate, 15000.0).unwrap(),
    )
    .unwrap();

    let config = FilterConfig {
        particles_per_target: rng.random_range(1..60),
        particles_per_birth: rng.random_range(1..30),
        particles_per_spawn: rng.random_range(0..20),
        resample_threshold: rng.random_range(0.0..=1.0),
        mass_floor: 1e-6,
        update_order: vec![],
    };

    let mut prior = ParticleIntensity::empty(0, nc);
    for c in 0..nc {
        for _ in 0..rng.random_range(0..25usize) {
            let mode = if rng.random::<bool>() { MotionMode::Cv } else { MotionMode::Ct };
            let omega = if mode == MotionMode::Ct { rng.random_range(-0.1..0.1) } else { 0.0 };
            let kin = KinematicState::new(
                rng.random_range(-3000.0..3000.0),
                rng.random_range(-50.0..50.0),
                rng.random_range(-3000.0..3000.0),
                rng.random_range(-50.0..50.0),
                omega,
            );
            let w = if rng.random::<f64>() < 0.1 { 0.0 } else { rng.random_range(0.0..0.2) };
            prior.push(Particle::new(w, AugmentedState::new(kin, mode, ClassLabel::new(c)))).unwrap();
        }
    }

    let tau = rng.random_range(0.0..4.0);
    let sensor = SensorConfig::polar(1, [rng.random_range(-500.0..500.0), 0.0], 300.0, 0.02, tau).unwrap();
    let detections = (0..rng.random_range(0..6usize))
        .map(|_| {
            let (x, y) = match prior.iter().nth(rng.random_range(0..prior.len().max(1))) {
                Some(p) if rng.random::<bool>() => (p.state.kin.x, p.state.kin.y),
                _ => (rng.random_range(-5000.0..5000.0), rng.random_range(-5000.0..5000.0)),
            };
            let (dx, dy) = (x - sensor.position[0], y - sensor.position[1]);
            Detection::polar(dx.hypot(dy).max(1.0), dy.atan2(dx), tau + rng.random_range(0.0..40.0), 1)
        })
        .collect();
    LedgerCase { models, config, prior, sensor, detections }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

/// Checks every bookkeeping identity on one random case; the error names the first failure.
pub fn check_case(seed: u64) -> Result<(), String> {
    let case = random_case(seed);
    let LedgerCase { models, config, prior, sensor, detections } = &case;
    let nc = prior.num_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);

    // predict: M'_c = P_s M_c + lambda sum_c' b(c | c') M_c' + gamma_c
    let pred = predict(prior, models, config, &mut rng);
    pred.validate().map_err(|e| format!("predicted intensity invalid: {e}"))?;
    let masses = prior.masses();
    for c in 0..nc {
        let class = ClassLabel::new(c);
        let mut expected = models.survival.ps * masses[c] + models.birth.total_mass(class).unwrap();
        if config.particles_per_spawn > 0 {
            for (src, m) in masses.iter().enumerate() {
                if *m > 0.0 {
                    expected += models.spawn.rate * models.spawn.class_transition.get(src, c) * m;
                }
            }
        }
        if !close(pred.mass(class), expected, 1e-9) {
            return Err(format!("predict class {c}: mass {} expected {expected}", pred.mass(class)));
        }
    }

    // update with detections: per-detection mass in [0, 1], exactly 1 without clutter
    let (post, report) = update_single_sensor_detailed(&pred, detections, sensor, models).map_err(|e| e.to_string())?;
    for (j, m) in report.detection_mass.iter().enumerate() {
        if !(*m >= 0.0 && *m <= 1.0 + 1e-12) {
            return Err(format!("detection {j} contributes {m}"));
        }
        if models.clutter.rate == 0.0 && pred.total_mass() > 0.0 && !close(*m, 1.0, 1e-12) {
            return Err(format!("clutter-free detection {j} contributes {m}, not 1"));
        }
    }
    let total = report.missed_mass + report.detection_mass.iter().sum::<f64>();
    if !close(post.total_mass(), total, 1e-12) {
        return Err(format!("posterior mass {} differs from ledger {total}", post.total_mass()));
    }

    // update without detections: every weight scaled by (1 - p_D)
    let (empty, _) = update_single_sensor_detailed(&pred, &[], sensor, models).map_err(|e| e.to_string())?;
    for class in pred.labels() {
        let pd = sensor.detection_probability(&models.bands[class.index()]);
        for (a, b) in pred.class(class).iter().zip(empty.class(class)) {
            if !close(b.weight, a.weight * (1.0 - pd), 1e-14) {
                return Err(format!("missed-only weight {} expected {}", b.weight, a.weight * (1.0 - pd)));
            }
        }
    }

    // resample: class mass preserved, equal weights, prescribed count
    let rs = resample(&post, config, &mut rng);
    for class in post.labels() {
        let m = post.mass(class);
        let n = target_count(m, config);
        let out = rs.class(class);
        if n == 0 {
            if !out.is_empty() {
                return Err(format!("class {class}: zero-mass class kept {} particles", out.len()));
            }
            continue;
        }
        if !close(rs.mass(class), m, 1e-12) {
            return Err(format!("class {class}: resampled mass {} from {m}", rs.mass(class)));
        }
        let kept = out.len() == post.class(class).len() && out.iter().zip(post.class(class)).all(|(a, b)| a == b);
        if !kept {
            if out.len() != n {
                return Err(format!("class {class}: {} particles, expected {n}", out.len()));
            }
            if out.iter().any(|p| p.weight != out[0].weight) {
                return Err(format!("class {class}: unequal resampled weights"));
            }
        }
    }
    Ok(())
}
