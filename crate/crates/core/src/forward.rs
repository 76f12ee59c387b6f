//! Sequential Monte Carlo forward PHD-JDTC filter.
//!
//! The intensity is carried as one weighted particle list per class. A scan
//! is processed as [`predict`] (survival, spawn, birth), [`update`] (one
//! PHD corrector per sensor, applied in a fixed order), then [`resample`]
//! within each class.

use rand::Rng;

use crate::error::{config_err, Error, Result};
use crate::sensing::{
    ln_kinematic_likelihood, ln_target_amp_pdf, p_d, ClutterModel, Detection, SensorConfig, SnrBand,
};
use crate::state_space::{BirthModel, ClassLabel, MotionModel, Particle, SpawnModel, SurvivalModel};

/// Per-class weighted particle approximation of the PHD at one scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleIntensity {
    scan: usize,
    classes: Vec<Vec<Particle>>,
}

impl ParticleIntensity {
    pub fn empty(scan: usize, num_classes: usize) -> Self {
        Self { scan, classes: vec![Vec::new(); num_classes] }
    }

    /// Buckets particles by their class field.
    pub fn from_particles(scan: usize, num_classes: usize, particles: impl IntoIterator<Item = Particle>) -> Result<Self> {
        let mut out = Self::empty(scan, num_classes);
        for p in particles {
            out.push(p)?;
        }
        Ok(out)
    }

    pub fn push(&mut self, p: Particle) -> Result<()> {
        let bucket = self
            .classes
            .get_mut(p.state.class.index())
            .ok_or(Error::UnknownClass(p.state.class.number()))?;
        bucket.push(p);
        Ok(())
    }

    pub fn scan(&self) -> usize {
        self.scan
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class(&self, class: ClassLabel) -> &[Particle] {
        &self.classes[class.index()]
    }

    pub fn labels(&self) -> impl Iterator<Item = ClassLabel> {
        (0..self.classes.len()).map(ClassLabel::new)
    }

    pub fn mass(&self, class: ClassLabel) -> f64 {
        self.classes[class.index()].iter().map(|p| p.weight).sum()
    }

    pub fn masses(&self) -> Vec<f64> {
        self.labels().map(|c| self.mass(c)).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses().iter().sum()
    }

    pub fn len(&self) -> usize {
        self.classes.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &Particle> {
        self.classes.iter().flatten()
    }

    /// Same particles with new weights, given class by class in storage order.
    pub fn with_weights(&self, weights: &[Vec<f64>]) -> Self {
        let classes = self
            .classes
            .iter()
            .zip(weights)
            .map(|(ps, ws)| ps.iter().zip(ws).map(|(p, &w)| Particle::new(w, p.state)).collect())
            .collect();
        Self { scan: self.scan, classes }
    }

    /// Checks weights are finite and non-negative and every particle sits in its class bucket.
    pub fn validate(&self) -> Result<()> {
        for (c, ps) in self.classes.iter().enumerate() {
            for (i, p) in ps.iter().enumerate() {
                if !(p.weight >= 0.0) || !p.weight.is_finite() {
                    return Err(config_err(format!("class {} particle {i} has weight {}", c + 1, p.weight)));
                }
                if p.state.class.index() != c {
                    return Err(config_err(format!("class {} bucket holds a class {} particle", c + 1, p.state.class)));
                }
            }
        }
        Ok(())
    }
}

/// Everything the filter and smoother need to know about targets and clutter.
#[derive(Debug, Clone)]
pub struct Models {
    pub motion: MotionModel,
    pub survival: SurvivalModel,
    pub birth: BirthModel,
    pub spawn: SpawnModel,
    /// SNR band of each class, indexed by class.
    pub bands: Vec<SnrBand>,
    pub clutter: ClutterModel,
}

impl Models {
    pub fn new(
        motion: MotionModel,
        survival: SurvivalModel,
        birth: BirthModel,
        spawn: SpawnModel,
        bands: Vec<SnrBand>,
        clutter: ClutterModel,
    ) -> Result<Self> {
        let c = bands.len();
        if c == 0 {
            return Err(config_err("at least one class is required"));
        }
        if motion.num_classes() != c || birth.num_classes() != c || spawn.num_classes() != c {
            return Err(config_err(format!(
                "class count mismatch: {} bands, {} mode matrices, {} birth classes, {}x{} spawn class matrix",
                c,
                motion.num_classes(),
                birth.num_classes(),
                spawn.num_classes(),
                spawn.num_classes()
            )));
        }
        Ok(Self { motion, survival, birth, spawn, bands, clutter })
    }

    pub fn num_classes(&self) -> usize {
        self.bands.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    /// Particles per unit of class mass after resampling.
    pub particles_per_target: usize,
    /// Particles per birth component, and the per-class floor after resampling.
    pub particles_per_birth: usize,
    /// Spawn children drawn per source class each scan.
    pub particles_per_spawn: usize,
    /// A class is left alone when its ESS fraction is at least this and its
    /// particle count already matches the target count.
    pub resample_threshold: f64,
    /// Classes at or below this mass are not raised to the birth floor.
    pub mass_floor: f64,
    /// Sensor ids in update order; empty means the order sensors are listed in.
    pub update_order: Vec<usize>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            particles_per_target: 500,
            particles_per_birth: 500,
            particles_per_spawn: 100,
            resample_threshold: 1.0,
            mass_floor: 1e-6,
            update_order: Vec::new(),
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles_per_target == 0 || self.particles_per_birth == 0 {
            return Err(config_err("particle counts must be positive"));
        }
        if !(self.mass_floor >= 0.0) {
            return Err(config_err("mass floor must be non-negative"));
        }
        Ok(())
    }
}

/// Prediction: surviving particles move under the jump-Markov model, spawn
/// children are drawn from a weight-proportional subsample of each class, and
/// birth particles are appended per class.
pub fn predict<R: Rng + ?Sized>(
    prior: &ParticleIntensity,
    models: &Models,
    config: &FilterConfig,
    rng: &mut R,
) -> ParticleIntensity {
    let num_classes = prior.num_classes();
    let mut out = ParticleIntensity::empty(prior.scan() + 1, num_classes);

    for p in prior.iter() {
        let ps = models.survival.probability(&p.state);
        if ps > 0.0 && p.weight > 0.0 {
            let state = models.motion.sample_motion(&p.state, rng);
            out.classes[state.class.index()].push(Particle::new(p.weight * ps, state));
        }
    }

    if models.spawn.rate > 0.0 && config.particles_per_spawn > 0 {
        let parents_per_class = config.particles_per_spawn.div_ceil(num_classes).max(1);
        for source in prior.labels() {
            let parents = prior.class(source);
            let mass: f64 = parents.iter().map(|p| p.weight).sum();
            if !(mass > 0.0) {
                continue;
            }
            let weights: Vec<f64> = parents.iter().map(|p| p.weight).collect();
            let share = mass / parents_per_class as f64;
            for idx in systematic_indices(&weights, parents_per_class, rng) {
                let parent = Particle::new(share, parents[idx].state);
                for child in models.spawn.sample_spawn(&parent, num_classes, rng) {
                    out.classes[child.state.class.index()].push(child);
                }
            }
        }
    }

    for class in prior.labels() {
        if let Ok(born) = models.birth.sample_birth(class, config.particles_per_birth, rng) {
            out.classes[class.index()].extend(born);
        }
    }
    out
}

/// Birth particles alone: the predicted intensity at the first scan.
pub fn birth_intensity<R: Rng + ?Sized>(scan: usize, models: &Models, config: &FilterConfig, rng: &mut R) -> ParticleIntensity {
    let mut out = ParticleIntensity::empty(scan, models.num_classes());
    for class in out.labels().collect::<Vec<_>>() {
        if let Ok(born) = models.birth.sample_birth(class, config.particles_per_birth, rng) {
            out.classes[class.index()].extend(born);
        }
    }
    out
}

/// Per-detection bookkeeping from one sensor update.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateReport {
    /// Posterior mass contributed by each detection; each lies in `[0, 1]`.
    pub detection_mass: Vec<f64>,
    /// Posterior mass carried by the missed-detection term.
    pub missed_mass: f64,
}

/// PHD corrector for one sensor's detections. States are unchanged.
pub fn update_single_sensor(
    pred: &ParticleIntensity,
    detections: &[Detection],
    sensor: &SensorConfig,
    models: &Models,
) -> Result<ParticleIntensity> {
    update_single_sensor_detailed(pred, detections, sensor, models).map(|(post, _)| post)
}

/// As [`update_single_sensor`], also reporting the mass each detection contributes.
///
/// Products of weight, detection probability and likelihoods are formed in
/// log space and normalised per detection after shifting by the maximum.
pub fn update_single_sensor_detailed(
    pred: &ParticleIntensity,
    detections: &[Detection],
    sensor: &SensorConfig,
    models: &Models,
) -> Result<(ParticleIntensity, UpdateReport)> {
    let num_classes = pred.num_classes();
    if models.bands.len() != num_classes {
        return Err(config_err("intensity and model class counts differ"));
    }
    for d in detections {
        if d.amplitude < sensor.tau {
            return Err(Error::BelowThreshold { amplitude: d.amplitude, tau: sensor.tau });
        }
    }
    let pd: Vec<f64> = models.bands.iter().map(|b| sensor.detection_probability(b)).collect();
    // amplitude likelihood h = g_a / p_D^tau, per class and detection
    let ln_h: Vec<Vec<f64>> = models
        .bands
        .iter()
        .map(|b| {
            let ln_norm = p_d(sensor.tau, b).ln();
            detections.iter().map(|d| ln_target_amp_pdf(d.amplitude, b) - ln_norm).collect()
        })
        .collect();
    let ln_kappa: Vec<f64> = detections.iter().map(|d| models.clutter.ln_intensity(d, sensor)).collect();

    let m = detections.len();
    // ln(w * p_D * g * h) per particle (row) and detection (column)
    let mut terms: Vec<Vec<f64>> = Vec::with_capacity(num_classes);
    for class in pred.labels() {
        let c = class.index();
        let ln_pd = pd[c].ln();
        let mut rows = Vec::with_capacity(pred.class(class).len() * m);
        for (s, p) in pred.class(class).iter().enumerate() {
            let ln_w = p.weight.ln();
            for (j, d) in detections.iter().enumerate() {
                let t = ln_w + ln_pd + ln_kinematic_likelihood(&d.z, &p.state.kin, sensor) + ln_h[c][j];
                if t.is_nan() || t == f64::INFINITY {
                    return Err(Error::NonFiniteLikelihood { class: class.number(), particle: s, detection: j });
                }
                rows.push(t);
            }
        }
        terms.push(rows);
    }

    // ln(kappa + Psi) per detection
    let mut ln_denom = vec![f64::NEG_INFINITY; m];
    for (j, denom) in ln_denom.iter_mut().enumerate() {
        let mut peak = ln_kappa[j];
        for rows in &terms {
            for t in rows.iter().skip(j).step_by(m) {
                peak = peak.max(*t);
            }
        }
        if peak == f64::NEG_INFINITY {
            continue;
        }
        let mut acc = (ln_kappa[j] - peak).exp();
        for rows in &terms {
            for t in rows.iter().skip(j).step_by(m) {
                acc += (t - peak).exp();
            }
        }
        *denom = peak + acc.ln();
    }

    let mut detection_mass = vec![0.0; m];
    let mut missed_mass = 0.0;
    let mut weights = Vec::with_capacity(num_classes);
    for class in pred.labels() {
        let c = class.index();
        let ps = pred.class(class);
        let mut ws = Vec::with_capacity(ps.len());
        for (s, p) in ps.iter().enumerate() {
            let missed = p.weight * (1.0 - pd[c]);
            missed_mass += missed;
            let mut w = missed;
            for j in 0..m {
                if ln_denom[j] == f64::NEG_INFINITY {
                    continue;
                }
                let share = (terms[c][s * m + j] - ln_denom[j]).exp();
                detection_mass[j] += share;
                w += share;
            }
            ws.push(w);
        }
        weights.push(ws);
    }
    Ok((pred.with_weights(&weights), UpdateReport { detection_mass, missed_mass }))
}

/// Multi-sensor update as an iterated corrector over `config.update_order`.
///
/// `scan[i]` holds the detections of `sensors[i]`.
pub fn update(
    pred: &ParticleIntensity,
    scan: &[Vec<Detection>],
    sensors: &[SensorConfig],
    models: &Models,
    config: &FilterConfig,
) -> Result<ParticleIntensity> {
    if scan.len() != sensors.len() {
        return Err(config_err(format!("{} detection lists for {} sensors", scan.len(), sensors.len())));
    }
    let order: Vec<usize> = if config.update_order.is_empty() {
        (0..sensors.len()).collect()
    } else {
        config
            .update_order
            .iter()
            .map(|id| {
                sensors
                    .iter()
                    .position(|s| s.id == *id)
                    .ok_or_else(|| config_err(format!("update order names unknown sensor {id}")))
            })
            .collect::<Result<_>>()?
    };
    let mut post = pred.clone();
    for i in order {
        post = update_single_sensor(&post, &scan[i], &sensors[i], models)?;
    }
    Ok(post)
}

/// Number of particles a class of mass `mass` is resampled to.
pub fn target_count(mass: f64, config: &FilterConfig) -> usize {
    if !(mass > 0.0) || !mass.is_finite() {
        return 0;
    }
    let proportional = (config.particles_per_target as f64 * mass).round() as usize;
    if mass > config.mass_floor {
        proportional.max(config.particles_per_birth)
    } else {
        proportional.max(1)
    }
}

/// Systematic resampling within each class. Class mass is preserved and the
/// output weights within a class are equal.
pub fn resample<R: Rng + ?Sized>(post: &ParticleIntensity, config: &FilterConfig, rng: &mut R) -> ParticleIntensity {
    let mut out = ParticleIntensity::empty(post.scan(), post.num_classes());
    for class in post.labels() {
        let ps = post.class(class);
        let weights: Vec<f64> = ps.iter().map(|p| p.weight).collect();
        let mass: f64 = weights.iter().sum();
        let n = target_count(mass, config);
        if n == 0 {
            continue;
        }
        let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
        let ess = mass * mass / sum_sq;
        if ps.len() == n && ess >= config.resample_threshold * n as f64 {
            out.classes[class.index()] = ps.to_vec();
            continue;
        }
        let w = mass / n as f64;
        out.classes[class.index()] = systematic_indices(&weights, n, rng)
            .into_iter()
            .map(|i| Particle::new(w, ps[i].state))
            .collect();
    }
    out
}

/// Low-variance systematic selection of `n` indices proportional to `weights`.
pub fn systematic_indices<R: Rng + ?Sized>(weights: &[f64], n: usize, rng: &mut R) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    if n == 0 || weights.is_empty() || !(total > 0.0) {
        return Vec::new();
    }
    let step = total / n as f64;
    let mut u = rng.random::<f64>() * step;
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    let mut cum = weights[0];
    for _ in 0..n {
        while u >= cum && i + 1 < weights.len() {
            i += 1;
            cum += weights[i];
        }
        out.push(i);
        u += step;
    }
    out
}
