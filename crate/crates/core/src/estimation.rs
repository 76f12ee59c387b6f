//! Target reports from a particle intensity: per-class counts, clustered
//! state estimates and class decisions.

use rand::Rng;

use crate::forward::ParticleIntensity;
use crate::state_space::{ClassLabel, KinematicState};

#[derive(Debug, Clone, PartialEq)]
pub struct TrackEstimate {
    pub kin: KinematicState,
    /// Decided class: the argmax of `class_masses`.
    pub class: ClassLabel,
    /// Class whose particles formed the cluster.
    pub source_class: ClassLabel,
    /// Mass of each class within the class radius of the estimate.
    pub class_masses: Vec<f64>,
    /// Weight of the cluster's member particles.
    pub cluster_mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cardinality {
    pub masses: Vec<f64>,
    pub counts: Vec<usize>,
    pub total: usize,
}

/// Nearest-integer rounding with ties going up.
pub fn round_count(mass: f64) -> usize {
    if mass > 0.0 && mass.is_finite() {
        (mass + 0.5).floor() as usize
    } else {
        0
    }
}

pub fn estimate_cardinality(pi: &ParticleIntensity) -> Cardinality {
    let masses = pi.masses();
    let counts: Vec<usize> = masses.iter().map(|&m| round_count(m)).collect();
    let total = counts.iter().sum();
    Cardinality { masses, counts, total }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationConfig {
    pub max_iterations: usize,
    /// Stop once no center moves by more than this fraction of its magnitude (floored at 1 m).
    pub tolerance: f64,
    /// Radius around an estimate within which per-class masses are collected, m.
    pub class_radius: f64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self { max_iterations: 50, tolerance: 1e-6, class_radius: 300.0 }
    }
}

/// Classes whose cluster count had to be cut to the number of distinct positions.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedCount {
    pub class: ClassLabel,
    pub requested: usize,
    pub used: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Extraction {
    pub estimates: Vec<TrackEstimate>,
    pub reduced: Vec<ReducedCount>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centers: Vec<[f64; 2]>,
    pub assignment: Vec<usize>,
    pub iterations: usize,
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn nearest(p: [f64; 2], centers: &[[f64; 2]]) -> (usize, f64) {
    centers
        .iter()
        .enumerate()
        .map(|(i, &c)| (i, dist2(p, c)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

fn draw_proportional<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Weighted k-means with k-means++ seeding. `k` must not exceed the number
/// of positive-weight points.
pub fn weighted_kmeans<R: Rng + ?Sized>(
    points: &[[f64; 2]],
    weights: &[f64],
    k: usize,
    config: &EstimationConfig,
    rng: &mut R,
) -> KMeans {
    let mut centers: Vec<[f64; 2]> = Vec::with_capacity(k);
    if k == 0 || points.is_empty() {
        return KMeans { centers, assignment: vec![0; points.len()], iterations: 0 };
    }
    centers.push(points[draw_proportional(weights, rng)]);
    while centers.len() < k {
        let score: Vec<f64> = points.iter().zip(weights).map(|(&p, &w)| w * nearest(p, &centers).1).collect();
        if !(score.iter().sum::<f64>() > 0.0) {
            break;
        }
        centers.push(points[draw_proportional(&score, rng)]);
    }

    let mut assignment = vec![0; points.len()];
    let mut iterations = 0;
    while iterations < config.max_iterations {
        iterations += 1;
        for (a, &p) in assignment.iter_mut().zip(points) {
            *a = nearest(p, &centers).0;
        }
        let mut sums = vec![[0.0; 3]; centers.len()];
        for ((&a, p), &w) in assignment.iter().zip(points).zip(weights) {
            sums[a][0] += w * p[0];
            sums[a][1] += w * p[1];
            sums[a][2] += w;
        }
        let mut shift: f64 = 0.0;
        for (i, s) in sums.iter().enumerate() {
            let next = if s[2] > 0.0 {
                [s[0] / s[2], s[1] / s[2]]
            } else {
                // empty cluster: move it to the worst-served point
                let worst = points
                    .iter()
                    .zip(weights)
                    .map(|(&p, &w)| w * nearest(p, &centers).1)
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b })
                    .0;
                points[worst]
            };
            let scale = centers[i][0].hypot(centers[i][1]).max(1.0);
            shift = shift.max(dist2(next, centers[i]).sqrt() / scale);
            centers[i] = next;
        }
        if shift <= config.tolerance {
            break;
        }
    }
    for (a, &p) in assignment.iter_mut().zip(points) {
        *a = nearest(p, &centers).0;
    }
    KMeans { centers, assignment, iterations }
}

fn distinct_positions(points: &[[f64; 2]]) -> usize {
    let mut keys: Vec<(u64, u64)> = points.iter().map(|p| (p[0].to_bits(), p[1].to_bits())).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

/// Clusters each class's particles into as many estimates as its rounded mass.
pub fn extract_states<R: Rng + ?Sized>(pi: &ParticleIntensity, config: &EstimationConfig, rng: &mut R) -> Extraction {
    let card = estimate_cardinality(pi);
    let mut out = Extraction::default();
    for class in pi.labels() {
        let requested = card.counts[class.index()];
        if requested == 0 {
            continue;
        }
        let members: Vec<_> = pi.class(class).iter().filter(|p| p.weight > 0.0).collect();
        let points: Vec<[f64; 2]> = members.iter().map(|p| p.state.kin.position()).collect();
        let weights: Vec<f64> = members.iter().map(|p| p.weight).collect();
        let k = requested.min(distinct_positions(&points));
        if k < requested {
            out.reduced.push(ReducedCount { class, requested, used: k });
        }
        if k == 0 {
            continue;
        }
        let km = weighted_kmeans(&points, &weights, k, config, rng);
        let mut sums = vec![([0.0; 5], 0.0); km.centers.len()];
        for ((&a, p), &w) in km.assignment.iter().zip(&members).zip(&weights) {
            for (acc, v) in sums[a].0.iter_mut().zip(p.state.kin.to_array()) {
                *acc += w * v;
            }
            sums[a].1 += w;
        }
        for (acc, mass) in sums {
            if !(mass > 0.0) {
                continue;
            }
            let kin = KinematicState::from_array(acc.map(|v| v / mass));
            let class_masses = class_masses_near(pi, kin.position(), config.class_radius);
            let decided = decide_class(&class_masses, class);
            out.estimates.push(TrackEstimate { kin, class: decided, source_class: class, class_masses, cluster_mass: mass });
        }
    }
    out
}

/// Per-class particle mass within `radius` of `center`.
pub fn class_masses_near(pi: &ParticleIntensity, center: [f64; 2], radius: f64) -> Vec<f64> {
    let r2 = radius * radius;
    pi.labels()
        .map(|c| pi.class(c).iter().filter(|p| dist2(p.state.kin.position(), center) <= r2).map(|p| p.weight).sum())
        .collect()
}

/// Argmax of the masses; ties and an all-zero vector keep `fallback`.
pub fn decide_class(masses: &[f64], fallback: ClassLabel) -> ClassLabel {
    let mut best = fallback;
    let mut best_mass = masses.get(fallback.index()).copied().unwrap_or(0.0);
    for (i, &m) in masses.iter().enumerate() {
        if m > best_mass {
            best = ClassLabel::new(i);
            best_mass = m;
        }
    }
    best
}
