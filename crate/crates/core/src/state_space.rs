//! Augmented single-target state `(kinematics, motion mode, class)` and the
//! jump-Markov models that move it forward: CV / unknown-turn-rate CT motion,
//! survival, birth and spawn.
//!
//! States in CV mode always carry `omega == 0`. The CV transition matrix
//! zeroes the turn-rate slot, so the turn rate of a CV state is a point mass
//! at zero; densities of CV states are therefore taken over the four
//! position/velocity coordinates only, while CT states use all five.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{Matrix4, Matrix5, Vector4, Vector5};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;
const ROW_SUM_TOL: f64 = 1e-12;
/// Below this `|omega * dt|` the CT coefficients switch to their Taylor series.
pub const CT_TAYLOR_THRESHOLD: f64 = 1e-6;

/// Planar kinematics `[x, vx, y, vy, omega]` in m, m/s and rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KinematicState {
    pub x: f64,
    pub vx: f64,
    pub y: f64,
    pub vy: f64,
    pub omega: f64,
}

impl KinematicState {
    pub const fn new(x: f64, vx: f64, y: f64, vy: f64, omega: f64) -> Self {
        Self { x, vx, y, vy, omega }
    }

    pub const fn from_array(a: [f64; 5]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4])
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.x, self.vx, self.y, self.vy, self.omega]
    }

    pub fn to_vector(&self) -> Vector5<f64> {
        Vector5::from(self.to_array())
    }

    pub fn from_vector(v: &Vector5<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4])
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    fn check_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFiniteState(self.to_array()))
        }
    }
}

/// Motion model index `r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionMode {
    Cv,
    Ct,
}

impl MotionMode {
    pub const ALL: [MotionMode; 2] = [MotionMode::Cv, MotionMode::Ct];

    pub fn index(self) -> usize {
        match self {
            MotionMode::Cv => 0,
            MotionMode::Ct => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

/// Target class. Stored zero-based; displayed and configured one-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClassLabel(usize);

impl ClassLabel {
    pub const fn new(index: usize) -> Self {
        Self(index)
    }

    /// One-based class number as written in configuration and reports.
    pub fn from_number(number: usize) -> Option<Self> {
        number.checked_sub(1).map(Self)
    }

    pub fn index(self) -> usize {
        self.0
    }

    pub fn number(self) -> usize {
        self.0 + 1
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentedState {
    pub kin: KinematicState,
    pub mode: MotionMode,
    pub class: ClassLabel,
}

impl AugmentedState {
    pub fn new(kin: KinematicState, mode: MotionMode, class: ClassLabel) -> Self {
        Self { kin, mode, class }
    }
}

/// A weighted particle `(w, x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub weight: f64,
    pub state: AugmentedState,
}

impl Particle {
    pub fn new(weight: f64, state: AugmentedState) -> Self {
        Self { weight, state }
    }
}

/// Square row-stochastic matrix, validated on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix {
    n: usize,
    data: Vec<f64>,
}

impl StochasticMatrix {
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(config_err("transition matrix has no rows"));
        }
        let mut data = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(config_err(format!(
                    "transition matrix row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(config_err(format!("transition matrix row {i} has entries outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(config_err(format!("transition matrix row {i} sums to {sum}")));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { n, data })
    }

    pub fn from_2x2(m: [[f64; 2]; 2]) -> Result<Self> {
        Self::new(&[m[0].to_vec(), m[1].to_vec()])
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { n, data }
    }

    pub fn uniform(n: usize) -> Self {
        Self { n, data: vec![1.0 / n as f64; n * n] }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// Probability of moving from `from` to `to`.
    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.data[from * self.n + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.data[from * self.n..(from + 1) * self.n]
    }

    pub fn sample_row<R: Rng + ?Sized>(&self, from: usize, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let row = self.row(from);
        for (j, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        // u landed in the rounding slack at the top; take the last reachable state
        row.iter().rposition(|&p| p > 0.0).unwrap_or(self.n - 1)
    }
}

/// Per-class 2x2 motion-mode transition matrices `pi`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeTransitionMatrix {
    per_class: Vec<StochasticMatrix>,
}

impl ModeTransitionMatrix {
    pub fn new(per_class: Vec<StochasticMatrix>) -> Result<Self> {
        if per_class.is_empty() {
            return Err(config_err("no mode transition matrices"));
        }
        if per_class.iter().any(|m| m.size() != 2) {
            return Err(config_err("mode transition matrices must be 2x2"));
        }
        Ok(Self { per_class })
    }

    /// The same matrix for every class.
    pub fn shared(m: StochasticMatrix, classes: usize) -> Result<Self> {
        Self::new(vec![m; classes])
    }

    pub fn num_classes(&self) -> usize {
        self.per_class.len()
    }

    pub fn class(&self, class: ClassLabel) -> &StochasticMatrix {
        &self.per_class[class.index()]
    }

    /// `P(r_next | r_prev, class)`
    pub fn prob(&self, class: ClassLabel, prev: MotionMode, next: MotionMode) -> f64 {
        self.per_class[class.index()].get(prev.index(), next.index())
    }
}

/// CV mean transition. Positions advance by velocity, the turn rate is zeroed.
pub fn cv_transition(state: &KinematicState, dt: f64) -> Result<KinematicState> {
    state.check_finite()?;
    if !(dt >= 0.0) {
        return Err(config_err(format!("negative time step {dt}")));
    }
    Ok(cv_mean(state, dt))
}

fn cv_mean(s: &KinematicState, dt: f64) -> KinematicState {
    KinematicState::new(s.x + dt * s.vx, s.vx, s.y + dt * s.vy, s.vy, 0.0)
}

/// Coordinated-turn mean transition using the state's own turn rate.
pub fn ct_transition(state: &KinematicState, dt: f64) -> KinematicState {
    let w = state.omega;
    let wt = w * dt;
    let (sin_over_w, one_minus_cos_over_w) = if wt.abs() < CT_TAYLOR_THRESHOLD {
        (dt * (1.0 - wt * wt / 6.0), w * dt * dt / 2.0)
    } else {
        (wt.sin() / w, (1.0 - wt.cos()) / w)
    };
    let (s, c) = wt.sin_cos();
    KinematicState::new(
        state.x + sin_over_w * state.vx - one_minus_cos_over_w * state.vy,
        c * state.vx - s * state.vy,
        state.y + one_minus_cos_over_w * state.vx + sin_over_w * state.vy,
        s * state.vx + c * state.vy,
        w,
    )
}

fn white_accel_block(dt: f64, l: f64) -> [[f64; 2]; 2] {
    [
        [dt.powi(3) * l / 3.0, dt * dt * l / 2.0],
        [dt * dt * l / 2.0, dt * l],
    ]
}

fn block_diag(block: [[f64; 2]; 2], omega_var: f64) -> Matrix5<f64> {
    let mut q = Matrix5::zeros();
    for off in [0usize, 2] {
        for i in 0..2 {
            for j in 0..2 {
                q[(off + i, off + j)] = block[i][j];
            }
        }
    }
    q[(4, 4)] = omega_var;
    q
}

/// White-noise-acceleration covariance for CV; zero in the turn-rate slot.
pub fn cv_process_cov(dt: f64, l: f64) -> Matrix5<f64> {
    block_diag(white_accel_block(dt, l), 0.0)
}

/// CT process covariance: CV-shaped axis blocks with `l1`, `dt * l2` on the turn rate.
pub fn ct_process_cov(dt: f64, l1: f64, l2: f64) -> Matrix5<f64> {
    block_diag(white_accel_block(dt, l1), dt * l2)
}

/// Symmetric positive-definite 2x2 block with cached factor and inverse.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Block2 {
    l11: f64,
    l21: f64,
    l22: f64,
    inv: [f64; 3],
    ln_det: f64,
}

impl Block2 {
    fn new(m: [[f64; 2]; 2]) -> Self {
        let (a, b, c) = (m[0][0], m[0][1], m[1][1]);
        let l11 = a.max(0.0).sqrt();
        let l21 = if l11 > 0.0 { b / l11 } else { 0.0 };
        let l22 = (c - l21 * l21).max(0.0).sqrt();
        let det = a * c - b * b;
        Self {
            l11,
            l21,
            l22,
            inv: [c / det, -b / det, a / det],
            ln_det: det.ln(),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let e1: f64 = rng.sample(StandardNormal);
        let e2: f64 = rng.sample(StandardNormal);
        (self.l11 * e1, self.l21 * e1 + self.l22 * e2)
    }

    fn maha2(&self, dp: f64, dv: f64) -> f64 {
        self.inv[0] * dp * dp + 2.0 * self.inv[1] * dp * dv + self.inv[2] * dv * dv
    }

    fn pos_sigma(&self) -> f64 {
        self.l11
    }
}

/// Jump-Markov CV/CT motion with sample time `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionModel {
    pub dt: f64,
    /// CV acceleration noise `l`, m^2/s^3.
    pub cv_noise: f64,
    /// CT acceleration noise `l1`, m^2/s^3.
    pub ct_noise: f64,
    /// CT turn-rate noise `l2`, rad^2/s^3.
    pub turn_noise: f64,
    pub mode_transition: ModeTransitionMatrix,
    cv_block: Block2,
    ct_block: Block2,
    turn_var: f64,
}

impl MotionModel {
    pub fn new(
        dt: f64,
        cv_noise: f64,
        ct_noise: f64,
        turn_noise: f64,
        mode_transition: ModeTransitionMatrix,
    ) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(config_err(format!("sample time must be positive, got {dt}")));
        }
        for (name, v) in [("cv_noise", cv_noise), ("ct_noise", ct_noise), ("turn_noise", turn_noise)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(config_err(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(Self {
            dt,
            cv_noise,
            ct_noise,
            turn_noise,
            mode_transition,
            cv_block: Block2::new(white_accel_block(dt, cv_noise)),
            ct_block: Block2::new(white_accel_block(dt, ct_noise)),
            turn_var: dt * turn_noise,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.mode_transition.num_classes()
    }

    /// Mean of the next kinematic state under `mode`.
    pub fn mean(&self, kin: &KinematicState, mode: MotionMode) -> KinematicState {
        match mode {
            MotionMode::Cv => cv_mean(kin, self.dt),
            MotionMode::Ct => ct_transition(kin, self.dt),
        }
    }

    pub fn process_cov(&self, mode: MotionMode) -> Matrix5<f64> {
        match mode {
            MotionMode::Cv => cv_process_cov(self.dt, self.cv_noise),
            MotionMode::Ct => ct_process_cov(self.dt, self.ct_noise, self.turn_noise),
        }
    }

    /// Position standard deviation of the process noise, per axis.
    pub fn position_sigma(&self, mode: MotionMode) -> f64 {
        match mode {
            MotionMode::Cv => self.cv_block.pos_sigma(),
            MotionMode::Ct => self.ct_block.pos_sigma(),
        }
    }

    /// Draw the next mode, then the next kinematics around the new mode's mean.
    /// The class never changes.
    pub fn sample_motion<R: Rng + ?Sized>(&self, state: &AugmentedState, rng: &mut R) -> AugmentedState {
        let pi = self.mode_transition.class(state.class);
        let mode = MotionMode::from_index(pi.sample_row(state.mode.index(), rng)).unwrap_or(state.mode);
        let mean = self.mean(&state.kin, mode);
        let (block, omega_sd) = match mode {
            MotionMode::Cv => (&self.cv_block, 0.0),
            MotionMode::Ct => (&self.ct_block, self.turn_var.sqrt()),
        };
        let (dx, dvx) = block.sample(rng);
        let (dy, dvy) = block.sample(rng);
        let domega = if omega_sd > 0.0 {
            omega_sd * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        let kin = KinematicState::new(
            mean.x + dx,
            mean.vx + dvx,
            mean.y + dy,
            mean.vy + dvy,
            mean.omega + domega,
        );
        AugmentedState::new(kin, mode, state.class)
    }

    /// Squared Mahalanobis distance of `next` from a precomputed mean under `mode`.
    pub fn maha2_from_mean(&self, mean: &KinematicState, next: &KinematicState, mode: MotionMode) -> f64 {
        match mode {
            MotionMode::Cv => {
                self.cv_block.maha2(next.x - mean.x, next.vx - mean.vx)
                    + self.cv_block.maha2(next.y - mean.y, next.vy - mean.vy)
            }
            MotionMode::Ct => {
                let dw = next.omega - mean.omega;
                self.ct_block.maha2(next.x - mean.x, next.vx - mean.vx)
                    + self.ct_block.maha2(next.y - mean.y, next.vy - mean.vy)
                    + dw * dw / self.turn_var
            }
        }
    }

    /// Log normalising constant of the kinematic transition density under `mode`.
    pub fn ln_norm(&self, mode: MotionMode) -> f64 {
        match mode {
            MotionMode::Cv => -2.0 * LN_2PI - self.cv_block.ln_det,
            MotionMode::Ct => -2.5 * LN_2PI - self.ct_block.ln_det - 0.5 * self.turn_var.ln(),
        }
    }

    /// `ln f(next.kin | prev.kin, next.mode)`; excludes the mode-switch probability.
    pub fn ln_kinematic_density(&self, prev: &KinematicState, next: &KinematicState, mode: MotionMode) -> f64 {
        let mean = self.mean(prev, mode);
        self.ln_norm(mode) - 0.5 * self.maha2_from_mean(&mean, next, mode)
    }
}

/// A 5x5 covariance with cached factors for the 4-D (CV) and 5-D (CT) views.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianShape {
    cov: Matrix5<f64>,
    chol4: Matrix4<f64>,
    inv4: Matrix4<f64>,
    ln_norm4: f64,
    chol5: Option<Matrix5<f64>>,
    inv5: Option<Matrix5<f64>>,
    ln_norm5: f64,
}

impl GaussianShape {
    /// Requires a symmetric covariance whose position/velocity block is positive definite.
    /// The full 5-D matrix may be singular only if no CT-mode density is needed from it.
    pub fn new(cov: Matrix5<f64>) -> Result<Self> {
        if (cov - cov.transpose()).abs().max() > 1e-9 * cov.abs().max().max(1.0) {
            return Err(config_err("covariance is not symmetric"));
        }
        let cov4: Matrix4<f64> = cov.fixed_view::<4, 4>(0, 0).into_owned();
        let chol4 = cov4
            .cholesky()
            .ok_or_else(|| config_err("position/velocity covariance is not positive definite"))?;
        let ln_det4 = 2.0 * chol4.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let (chol5, inv5, ln_norm5) = match cov.cholesky() {
            Some(c) => {
                let ln_det5 = 2.0 * c.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
                (Some(c.l()), Some(c.inverse()), -2.5 * LN_2PI - 0.5 * ln_det5)
            }
            None => (None, None, f64::NEG_INFINITY),
        };
        Ok(Self {
            cov,
            chol4: chol4.l(),
            inv4: chol4.inverse(),
            ln_norm4: -2.0 * LN_2PI - 0.5 * ln_det4,
            chol5,
            inv5,
            ln_norm5,
        })
    }

    pub fn from_diagonal(diag: [f64; 5]) -> Result<Self> {
        Self::new(Matrix5::from_diagonal(&Vector5::from(diag)))
    }

    pub fn cov(&self) -> &Matrix5<f64> {
        &self.cov
    }

    pub fn position_sigma(&self) -> [f64; 2] {
        [self.cov[(0, 0)].sqrt(), self.cov[(2, 2)].sqrt()]
    }

    /// Zero-mean offset; the turn-rate slot is zero in CV mode.
    pub fn sample_offset<R: Rng + ?Sized>(&self, mode: MotionMode, rng: &mut R) -> Vector5<f64> {
        match (mode, &self.chol5) {
            (MotionMode::Ct, Some(l)) => {
                let e = Vector5::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                l * e
            }
            _ => {
                let e = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                let d = self.chol4 * e;
                Vector5::new(d[0], d[1], d[2], d[3], 0.0)
            }
        }
    }

    pub fn maha2(&self, delta: &Vector5<f64>, mode: MotionMode) -> f64 {
        match (mode, &self.inv5) {
            (MotionMode::Ct, Some(inv)) => (delta.transpose() * inv * delta)[0],
            (MotionMode::Ct, None) => f64::INFINITY,
            (MotionMode::Cv, _) => {
                let d4 = delta.fixed_rows::<4>(0);
                (d4.transpose() * self.inv4 * d4)[0]
            }
        }
    }

    pub fn ln_density(&self, delta: &Vector5<f64>, mode: MotionMode) -> f64 {
        let norm = match mode {
            MotionMode::Cv => self.ln_norm4,
            MotionMode::Ct => self.ln_norm5,
        };
        norm - 0.5 * self.maha2(delta, mode)
    }
}

/// One Gaussian term `weight * N(mean, cov)` of a birth intensity.
#[derive(Debug, Clone, PartialEq)]
pub struct BirthComponent {
    pub weight: f64,
    pub mean: KinematicState,
    pub shape: GaussianShape,
}

impl BirthComponent {
    pub fn new(weight: f64, mean: KinematicState, shape: GaussianShape) -> Result<Self> {
        if !(weight >= 0.0) || !weight.is_finite() {
            return Err(config_err(format!("birth weight must be non-negative, got {weight}")));
        }
        Ok(Self { weight, mean, shape })
    }
}

/// Per-class Gaussian-mixture birth intensity. Birth modes are uniform over {CV, CT}.
#[derive(Debug, Clone, PartialEq)]
pub struct BirthModel {
    per_class: Vec<Vec<BirthComponent>>,
}

impl BirthModel {
    pub fn new(per_class: Vec<Vec<BirthComponent>>) -> Self {
        Self { per_class }
    }

    /// No births in any of `classes` classes.
    pub fn none(classes: usize) -> Self {
        Self { per_class: vec![Vec::new(); classes] }
    }

    pub fn num_classes(&self) -> usize {
        self.per_class.len()
    }

    pub fn components(&self, class: ClassLabel) -> Result<&[BirthComponent]> {
        self.per_class
            .get(class.index())
            .map(Vec::as_slice)
            .ok_or(Error::UnknownClass(class.number()))
    }

    pub fn total_mass(&self, class: ClassLabel) -> Result<f64> {
        Ok(self.components(class)?.iter().map(|c| c.weight).sum())
    }

    /// `n` particles for each birth component of `class`, each carrying `weight / n`.
    pub fn sample_birth<R: Rng + ?Sized>(&self, class: ClassLabel, n: usize, rng: &mut R) -> Result<Vec<Particle>> {
        if n == 0 {
            return Err(config_err("birth particle count must be positive"));
        }
        let comps = self.components(class)?;
        let mut out = Vec::with_capacity(n * comps.len());
        for comp in comps {
            let w = comp.weight / n as f64;
            for _ in 0..n {
                let mode = if rng.random::<f64>() < 0.5 { MotionMode::Cv } else { MotionMode::Ct };
                let d = comp.shape.sample_offset(mode, rng);
                let mut kin = KinematicState::from_vector(&(comp.mean.to_vector() + d));
                if mode == MotionMode::Cv {
                    kin.omega = 0.0;
                }
                out.push(Particle::new(w, AugmentedState::new(kin, mode, class)));
            }
        }
        Ok(out)
    }

    /// Birth intensity `gamma(x, r, c)` at a state; zero for unknown classes.
    pub fn intensity(&self, state: &AugmentedState) -> f64 {
        let Some(comps) = self.per_class.get(state.class.index()) else {
            return 0.0;
        };
        let x = state.kin.to_vector();
        0.5 * comps
            .iter()
            .filter(|c| c.weight > 0.0)
            .map(|c| c.weight * c.shape.ln_density(&(x - c.mean.to_vector()), state.mode).exp())
            .sum::<f64>()
    }
}

/// Spawn intensity `lambda * f_beta(x | x') * f(r | r') * b(c | c')`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpawnModel {
    pub rate: f64,
    pub shape: GaussianShape,
    pub mode_transition: StochasticMatrix,
    pub class_transition: StochasticMatrix,
}

impl SpawnModel {
    pub fn new(
        rate: f64,
        shape: GaussianShape,
        mode_transition: StochasticMatrix,
        class_transition: StochasticMatrix,
    ) -> Result<Self> {
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(config_err(format!("spawn rate must be non-negative, got {rate}")));
        }
        if mode_transition.size() != 2 {
            return Err(config_err("spawn mode transition must be 2x2"));
        }
        Ok(Self { rate, shape, mode_transition, class_transition })
    }

    /// A spawn model that never spawns.
    pub fn disabled(classes: usize) -> Self {
        Self {
            rate: 0.0,
            shape: GaussianShape::from_diagonal([1.0; 5]).expect("unit covariance"),
            mode_transition: StochasticMatrix::identity(2),
            class_transition: StochasticMatrix::identity(classes),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_transition.size()
    }

    /// Spawns `n` children from `parent` with total weight `parent.weight * rate`.
    ///
    /// Child classes are allocated across `b(. | parent class)` in proportion
    /// to the row (every reachable class gets at least one child), and each
    /// child carries the importance weight that makes the class split exact.
    pub fn sample_spawn<R: Rng + ?Sized>(&self, parent: &Particle, n: usize, rng: &mut R) -> Vec<Particle> {
        if self.rate == 0.0 || parent.weight == 0.0 || n == 0 {
            return Vec::new();
        }
        let row = self.class_transition.row(parent.state.class.index());
        let counts = allocate_counts(row, n);
        let total = parent.weight * self.rate;
        let mut out = Vec::with_capacity(counts.iter().sum());
        for (c, (&count, &p)) in counts.iter().zip(row).enumerate() {
            if count == 0 {
                continue;
            }
            let w = total * p / count as f64;
            for _ in 0..count {
                let mode = MotionMode::from_index(self.mode_transition.sample_row(parent.state.mode.index(), rng))
                    .unwrap_or(parent.state.mode);
                let d = self.shape.sample_offset(mode, rng);
                let mut kin = KinematicState::from_vector(&(parent.state.kin.to_vector() + d));
                if mode == MotionMode::Cv {
                    kin.omega = 0.0;
                }
                out.push(Particle::new(w, AugmentedState::new(kin, mode, ClassLabel::new(c))));
            }
        }
        out
    }

    /// `beta(child | parent)` including the rate.
    pub fn intensity(&self, child: &AugmentedState, parent: &AugmentedState) -> f64 {
        let pc = self.class_transition.get(parent.class.index(), child.class.index());
        let pm = self.mode_transition.get(parent.mode.index(), child.mode.index());
        if pc == 0.0 || pm == 0.0 || self.rate == 0.0 {
            return 0.0;
        }
        let d = child.kin.to_vector() - parent.kin.to_vector();
        self.rate * pc * pm * self.shape.ln_density(&d, child.mode).exp()
    }
}

/// Split `n` draws across a probability row: largest-remainder rounding with
/// at least one draw for every positive entry.
fn allocate_counts(row: &[f64], n: usize) -> Vec<usize> {
    let positive = row.iter().filter(|&&p| p > 0.0).count();
    let n = n.max(positive);
    let mut counts: Vec<usize> = row
        .iter()
        .map(|&p| if p > 0.0 { ((p * n as f64).floor() as usize).max(1) } else { 0 })
        .collect();
    let mut assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..row.len()).filter(|&i| row[i] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let ra = row[a] * n as f64 - counts[a] as f64;
        let rb = row[b] * n as f64 - counts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut i = 0;
    while assigned < n && !order.is_empty() {
        counts[order[i % order.len()]] += 1;
        assigned += 1;
        i += 1;
    }
    counts
}

/// Target survival probability `P_s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvivalModel {
    pub ps: f64,
}

impl SurvivalModel {
    pub fn new(ps: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&ps) {
            return Err(config_err(format!("survival probability must lie in [0, 1], got {ps}")));
        }
        Ok(Self { ps })
    }

    pub fn probability(&self, _state: &AugmentedState) -> f64 {
        self.ps
    }
}

/// Wrap an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}
