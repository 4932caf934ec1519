//! Density classes `M_δ` (pointwise bounds) and `M̃_{d1,d2}` (ball averages).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::measures::DiscreteMeasure;

const SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityClassSpec {
    pub delta: f64,
    /// Ball radius and ratio bound of `M̃`; defaults to `(min spacing, δ)`.
    pub d1: Option<f64>,
    pub d2: Option<f64>,
}

impl DensityClassSpec {
    pub fn check(&self, mu: &DiscreteMeasure) -> Result<(bool, bool)> {
        let d1 = self.d1.unwrap_or_else(|| mu.domain().min_spacing());
        let d2 = self.d2.unwrap_or(self.delta);
        Ok((in_m_delta(mu, self.delta), in_m_tilde(mu, d1, d2)?))
    }
}

/// `δ ≤ ρ ≤ 1/δ` at every node, with `1e−12` slack.
pub fn in_m_delta(mu: &DiscreteMeasure, delta: f64) -> bool {
    if !(delta > 0.0 && delta < 1.0) {
        return false;
    }
    mu.density().iter().all(|&r| r >= delta - SLACK && r <= 1.0 / delta + SLACK)
}

/// Quadrature average of `ρ` over the closed ball of radius `d1` around each node.
pub fn ball_averages(mu: &DiscreteMeasure, d1: f64) -> Result<Vec<f64>> {
    if !(d1 > 0.0) {
        return invalid("ball radius must be positive");
    }
    let dom = mu.domain();
    let rho = mu.density();
    let w = dom.weights();
    (0..mu.len())
        .into_par_iter()
        .map(|i| {
            let (mut num, mut den, mut count) = (0.0, 0.0, 0usize);
            for j in 0..mu.len() {
                if dom.distance(i, j) <= d1 * (1.0 + 1e-12) {
                    num += w[j] * rho[j];
                    den += w[j];
                    count += 1;
                }
            }
            if count < 2 {
                return invalid(format!("ball of radius {d1} around node {i} holds a single node; the grid is too coarse"));
            }
            Ok(num / den)
        })
        .collect()
}

/// Every ball average lies in `[d2, 1/d2]`.
pub fn in_m_tilde(mu: &DiscreteMeasure, d1: f64, d2: f64) -> Result<bool> {
    if !(d2 > 0.0 && d2 <= 1.0) {
        return invalid("d2 must lie in (0, 1]");
    }
    Ok(ball_averages(mu, d1)?.iter().all(|&a| a >= d2 - SLACK && a <= 1.0 / d2 + SLACK))
}
