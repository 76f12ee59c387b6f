//! Fixed-lag backward smoothing of the particle PHD.
//!
//! For a pair of consecutive filtered intensities the backward kernel holds,
//! per class, every admitted transition weight `pi(r_q | r_s) f(x_q | x_s, r_q)`
//! together with the predictive intensity `mu_q` at each later particle. The
//! kernel depends only on filtered quantities, so the window builds it once
//! per pair and reuses it at every lag.

use std::collections::{HashMap, VecDeque};

use crate::error::{config_err, Error, Result};
use crate::forward::{resample, FilterConfig, Models, ParticleIntensity};
use crate::state_space::{ClassLabel, KinematicState, MotionMode, MotionModel, Particle};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatingConfig {
    pub enabled: bool,
    /// Mahalanobis distance bound on admitted pairs.
    pub radius: f64,
}

impl Default for GatingConfig {
    fn default() -> Self {
        Self { enabled: true, radius: 8.0 }
    }
}

impl GatingConfig {
    pub fn exact() -> Self {
        Self { enabled: false, radius: f64::INFINITY }
    }

    pub fn with_radius(radius: f64) -> Result<Self> {
        let g = Self { enabled: true, radius };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.enabled && !(self.radius > 0.0) {
            return Err(config_err(format!("gate radius must be positive, got {}", self.radius)));
        }
        Ok(())
    }

    fn bounded(&self) -> Option<f64> {
        (self.enabled && self.radius.is_finite()).then_some(self.radius)
    }
}

/// Uniform grid over 2-D points for radius queries.
struct Grid {
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<u32>>,
}

impl Grid {
    fn new(points: impl Iterator<Item = [f64; 2]>, cell: f64) -> Self {
        let mut buckets: HashMap<(i64, i64), Vec<u32>> = HashMap::new();
        for (i, p) in points.enumerate() {
            buckets.entry(Self::key(p, cell)).or_default().push(i as u32);
        }
        Self { cell, buckets }
    }

    fn key(p: [f64; 2], cell: f64) -> (i64, i64) {
        ((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64)
    }

    /// Indices in the 3x3 block of cells around `p`, in ascending order.
    fn near(&self, p: [f64; 2], out: &mut Vec<u32>) {
        out.clear();
        let (cx, cy) = Self::key(p, self.cell);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(b) = self.buckets.get(&(cx + dx, cy + dy)) {
                    out.extend_from_slice(b);
                }
            }
        }
        out.sort_unstable();
    }
}

/// Candidate earlier particles for a later particle, by the later particle's mode.
struct TransitionIndex<'a> {
    motion: &'a MotionModel,
    means: [Vec<KinematicState>; 2],
    grids: Option<[Grid; 2]>,
    radius2: f64,
}

impl<'a> TransitionIndex<'a> {
    fn new(from: &[Particle], motion: &'a MotionModel, gate: &GatingConfig) -> Self {
        let means = MotionMode::ALL.map(|m| from.iter().map(|p| motion.mean(&p.state.kin, m)).collect::<Vec<_>>());
        let grids = gate.bounded().map(|r| {
            [0, 1].map(|i| {
                let mode = MotionMode::ALL[i];
                Grid::new(means[i].iter().map(KinematicState::position), r * motion.position_sigma(mode))
            })
        });
        let radius2 = gate.bounded().map_or(f64::INFINITY, |r| r * r);
        Self { motion, means, grids, radius2 }
    }

    /// Calls `visit(s, maha2)` for every admitted earlier particle `s`.
    fn for_each(&self, to: &Particle, scratch: &mut Vec<u32>, mut visit: impl FnMut(usize, f64)) {
        let mode = to.state.mode;
        let means = &self.means[mode.index()];
        let mut check = |s: usize| {
            let d2 = self.motion.maha2_from_mean(&means[s], &to.state.kin, mode);
            if d2 <= self.radius2 {
                visit(s, d2);
            }
        };
        match &self.grids {
            None => (0..means.len()).for_each(&mut check),
            Some(grids) => {
                grids[mode.index()].near(to.state.kin.position(), scratch);
                scratch.iter().for_each(|&s| check(s as usize));
            }
        }
    }
}

/// Pairs `(s, q)` of earlier particle `s` and later particle `q` whose
/// transition Mahalanobis distance under `q`'s mode is within the gate.
/// Disabled gating yields the full cross product. Ordered by `q`, then `s`.
pub fn gated_pairs(from: &[Particle], to: &[Particle], motion: &MotionModel, gate: &GatingConfig) -> Vec<(usize, usize)> {
    if !gate.enabled {
        return (0..to.len()).flat_map(|q| (0..from.len()).map(move |s| (s, q))).collect();
    }
    let index = TransitionIndex::new(from, motion, gate);
    let mut scratch = Vec::new();
    let mut out = Vec::new();
    for (q, p) in to.iter().enumerate() {
        index.for_each(p, &mut scratch, |s, _| out.push((s, q)));
    }
    out
}

/// Backward kernel of one class, stored row-wise by later particle `q`.
#[derive(Debug, Clone, PartialEq)]
struct ClassKernel {
    row_start: Vec<usize>,
    from_idx: Vec<u32>,
    values: Vec<f64>,
    mu: Vec<f64>,
    survival: Vec<f64>,
}

/// Transition weights and predictive intensities between two consecutive filtered scans.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardKernel {
    scan: usize,
    classes: Vec<ClassKernel>,
}

impl BackwardKernel {
    /// Builds the kernel from the filtered set at `t` to the particle states at `t + 1`.
    pub fn build(from: &ParticleIntensity, to: &ParticleIntensity, models: &Models, gate: &GatingConfig) -> Result<Self> {
        if to.scan() != from.scan() + 1 {
            return Err(Error::NonConsecutive { earlier: from.scan(), later: to.scan() });
        }
        if from.num_classes() != to.num_classes() || from.num_classes() != models.num_classes() {
            return Err(config_err("class counts differ between smoother inputs"));
        }
        gate.validate()?;
        let spawn = SpawnInflow::new(from, models, gate);
        let mut scratch = Vec::new();
        let mut classes = Vec::with_capacity(from.num_classes());
        for class in from.labels() {
            let src = from.class(class);
            let dst = to.class(class);
            let pi = models.motion.mode_transition.class(class);
            let index = TransitionIndex::new(src, &models.motion, gate);
            let ln_norm = MotionMode::ALL.map(|m| models.motion.ln_norm(m));
            let survival: Vec<f64> = src.iter().map(|p| models.survival.probability(&p.state)).collect();

            let mut row_start = Vec::with_capacity(dst.len() + 1);
            let mut from_idx = Vec::new();
            let mut values = Vec::new();
            let mut mu = Vec::with_capacity(dst.len());
            row_start.push(0);
            for q in dst {
                let mode = q.state.mode;
                let mut inflow = 0.0;
                index.for_each(q, &mut scratch, |s, d2| {
                    let k = pi.get(src[s].state.mode.index(), mode.index()) * (ln_norm[mode.index()] - 0.5 * d2).exp();
                    if k > 0.0 {
                        from_idx.push(s as u32);
                        values.push(k);
                        inflow += src[s].weight * survival[s] * k;
                    }
                });
                row_start.push(values.len());
                mu.push(models.birth.intensity(&q.state) + inflow + spawn.at(q, &mut scratch));
            }
            classes.push(ClassKernel { row_start, from_idx, values, mu, survival });
        }
        Ok(Self { scan: from.scan(), classes })
    }

    /// Scan index of the earlier filtered set.
    pub fn scan(&self) -> usize {
        self.scan
    }

    /// Number of stored transition entries across classes.
    pub fn num_entries(&self) -> usize {
        self.classes.iter().map(|k| k.values.len()).sum()
    }

    /// Predictive intensity at each later particle of `class`.
    pub fn predictive(&self, class: ClassLabel) -> &[f64] {
        &self.classes[class.index()].mu
    }

    /// Backward recursion: reweights the filtered set at `t` given smoothed
    /// weights on the same later particles the kernel was built from.
    pub fn apply(&self, filtered: &ParticleIntensity, smoothed_next: &ParticleIntensity) -> Result<ParticleIntensity> {
        if filtered.scan() != self.scan || smoothed_next.scan() != self.scan + 1 {
            return Err(Error::NonConsecutive { earlier: filtered.scan(), later: smoothed_next.scan() });
        }
        let mut weights = Vec::with_capacity(self.classes.len());
        for (class, k) in filtered.labels().zip(&self.classes) {
            let src = filtered.class(class);
            let dst = smoothed_next.class(class);
            if src.len() != k.survival.len() || dst.len() != k.mu.len() {
                return Err(config_err(format!("class {class} particle counts do not match the kernel")));
            }
            let mut acc = vec![0.0; src.len()];
            for (q, p) in dst.iter().enumerate() {
                if p.weight == 0.0 {
                    continue;
                }
                let mu = k.mu[q];
                if !(mu > 0.0) {
                    return Err(Error::ZeroPredictive { class: class.number(), particle: q, scan: self.scan + 1, weight: p.weight });
                }
                let coef = p.weight / mu;
                for e in k.row_start[q]..k.row_start[q + 1] {
                    acc[k.from_idx[e] as usize] += k.values[e] * coef;
                }
            }
            weights.push(
                src.iter()
                    .zip(&acc)
                    .zip(&k.survival)
                    .map(|((p, a), ps)| p.weight * (ps * a + 1.0 - ps))
                    .collect::<Vec<f64>>(),
            );
        }
        Ok(filtered.with_weights(&weights))
    }
}

/// Spawn contribution to the predictive intensity, summed over source classes.
struct SpawnInflow<'a> {
    models: &'a Models,
    parents: Vec<&'a Particle>,
    grid: Option<Grid>,
    radius2: f64,
}

impl<'a> SpawnInflow<'a> {
    fn new(from: &'a ParticleIntensity, models: &'a Models, gate: &GatingConfig) -> Self {
        let parents: Vec<&Particle> =
            if models.spawn.rate > 0.0 { from.iter().filter(|p| p.weight > 0.0).collect() } else { Vec::new() };
        let grid = gate.bounded().map(|r| {
            let [sx, sy] = models.spawn.shape.position_sigma();
            Grid::new(parents.iter().map(|p| p.state.kin.position()), r * sx.max(sy))
        });
        let radius2 = gate.bounded().map_or(f64::INFINITY, |r| r * r);
        Self { models, parents, grid, radius2 }
    }

    fn at(&self, q: &Particle, scratch: &mut Vec<u32>) -> f64 {
        if self.parents.is_empty() {
            return 0.0;
        }
        let spawn = &self.models.spawn;
        let mut total = 0.0;
        let mut add = |u: usize| {
            let parent = self.parents[u];
            if self.radius2.is_finite() {
                let d = q.state.kin.to_vector() - parent.state.kin.to_vector();
                if spawn.shape.maha2(&d, q.state.mode) > self.radius2 {
                    return;
                }
            }
            total += parent.weight * spawn.intensity(&q.state, &parent.state);
        };
        match &self.grid {
            None => (0..self.parents.len()).for_each(&mut add),
            Some(g) => {
                g.near(q.state.kin.position(), scratch);
                scratch.iter().for_each(|&u| add(u as usize));
            }
        }
        total
    }
}

/// One backward step: smoothed intensity at `t` from the filtered set at `t`
/// and the smoothed set at `t + 1`.
pub fn smooth_step(
    t_filtered: &ParticleIntensity,
    t1_smoothed: &ParticleIntensity,
    models: &Models,
    gate: &GatingConfig,
) -> Result<ParticleIntensity> {
    BackwardKernel::build(t_filtered, t1_smoothed, models, gate)?.apply(t_filtered, t1_smoothed)
}

/// Ring buffer of the last `lag + 1` filtered intensities and the kernels between them.
#[derive(Debug, Clone)]
pub struct SmootherWindow {
    lag: usize,
    gate: GatingConfig,
    filtered: VecDeque<ParticleIntensity>,
    kernels: VecDeque<BackwardKernel>,
}

impl SmootherWindow {
    pub fn new(lag: usize, gate: GatingConfig) -> Result<Self> {
        gate.validate()?;
        Ok(Self { lag, gate, filtered: VecDeque::new(), kernels: VecDeque::new() })
    }

    pub fn lag(&self) -> usize {
        self.lag
    }

    pub fn gate(&self) -> &GatingConfig {
        &self.gate
    }

    pub fn len(&self) -> usize {
        self.filtered.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filtered.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.filtered.len() == self.lag + 1
    }

    /// Scan of the oldest buffered intensity, which is what [`Self::smooth`] returns.
    pub fn oldest_scan(&self) -> Option<usize> {
        self.filtered.front().map(ParticleIntensity::scan)
    }

    pub fn latest(&self) -> Option<&ParticleIntensity> {
        self.filtered.back()
    }

    /// Appends the newest filtered intensity, evicting the oldest once more than `lag + 1` are held.
    pub fn push(&mut self, filtered: ParticleIntensity, models: &Models) -> Result<()> {
        if let Some(last) = self.filtered.back() {
            if self.lag > 0 {
                self.kernels.push_back(BackwardKernel::build(last, &filtered, models, &self.gate)?);
            } else if filtered.scan() != last.scan() + 1 {
                return Err(Error::NonConsecutive { earlier: last.scan(), later: filtered.scan() });
            }
        }
        self.filtered.push_back(filtered);
        while self.filtered.len() > self.lag + 1 {
            self.filtered.pop_front();
            self.kernels.pop_front();
        }
        Ok(())
    }

    /// Smoothed intensity at the oldest buffered scan given everything up to the newest.
    pub fn smooth(&self) -> Result<ParticleIntensity> {
        let mut current = self.filtered.back().cloned().ok_or_else(|| config_err("smoother window is empty"))?;
        for (kernel, filtered) in self.kernels.iter().zip(&self.filtered).rev() {
            current = kernel.apply(filtered, &current)?;
        }
        Ok(current)
    }
}

/// Applies the backward recursion across the whole window.
pub fn smooth_window(window: &SmootherWindow) -> Result<ParticleIntensity> {
    window.smooth()
}

/// Per-class resampling of a smoothed intensity; same contract as the forward resampler.
pub fn resample_smoothed<R: rand::Rng + ?Sized>(sm: &ParticleIntensity, config: &FilterConfig, rng: &mut R) -> ParticleIntensity {
    resample(sm, config, rng)
}
