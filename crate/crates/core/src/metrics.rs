//! OSPA distance between estimated and true position sets.

use serde::{Deserialize, Serialize};

use crate::assignment::min_cost_assignment;
use crate::error::{config_err, Result};
use crate::estimation::TrackEstimate;
use crate::state_space::ClassLabel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OspaParams {
    /// Cutoff `c`, m.
    pub cutoff: f64,
    /// Order `p`.
    pub order: f64,
}

impl Default for OspaParams {
    fn default() -> Self {
        Self { cutoff: 1000.0, order: 1.0 }
    }
}

impl OspaParams {
    pub fn new(cutoff: f64, order: f64) -> Result<Self> {
        let p = Self { cutoff, order };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff > 0.0) || !self.cutoff.is_finite() {
            return Err(config_err(format!("OSPA cutoff must be positive, got {}", self.cutoff)));
        }
        if !(self.order >= 1.0) || !self.order.is_finite() {
            return Err(config_err(format!("OSPA order must be at least 1, got {}", self.order)));
        }
        Ok(())
    }
}

/// OSPA distance with cutoff and order from `params`; two empty sets are at distance 0.
pub fn ospa(est: &[[f64; 2]], truth: &[[f64; 2]], params: &OspaParams) -> f64 {
    let (small, large) = if est.len() <= truth.len() { (est, truth) } else { (truth, est) };
    let n = large.len();
    if n == 0 {
        return 0.0;
    }
    let c = params.cutoff;
    let p = params.order;
    let cost: Vec<Vec<f64>> = small
        .iter()
        .map(|a| large.iter().map(|b| (a[0] - b[0]).hypot(a[1] - b[1]).min(c).powf(p)).collect())
        .collect();
    let (_, matched) = min_cost_assignment(&cost);
    let penalty = c.powf(p) * (n - small.len()) as f64;
    ((matched + penalty) / n as f64).powf(1.0 / p)
}

/// A true target position with its class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthPoint {
    pub position: [f64; 2],
    pub class: ClassLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassOspa {
    /// OSPA between class-`c` estimates and class-`c` truth, per class.
    pub per_class: Vec<f64>,
    /// Class-blind OSPA over all estimates and all truth.
    pub combined: f64,
}

pub fn per_class_ospa(estimates: &[TrackEstimate], truth: &[TruthPoint], num_classes: usize, params: &OspaParams) -> ClassOspa {
    let per_class = (0..num_classes)
        .map(ClassLabel::new)
        .map(|c| {
            let e: Vec<[f64; 2]> = estimates.iter().filter(|t| t.class == c).map(|t| t.kin.position()).collect();
            let t: Vec<[f64; 2]> = truth.iter().filter(|t| t.class == c).map(|t| t.position).collect();
            ospa(&e, &t, params)
        })
        .collect();
    let e: Vec<[f64; 2]> = estimates.iter().map(|t| t.kin.position()).collect();
    let t: Vec<[f64; 2]> = truth.iter().map(|t| t.position).collect();
    ClassOspa { per_class, combined: ospa(&e, &t, params) }
}
