//! The cone over the base space: points `[x, r]` with all apexes identified.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::measures::{DiscreteMeasure, GridDomain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConePoint {
    pub x: Vec<f64>,
    pub r: f64,
}

impl ConePoint {
    pub fn new(x: Vec<f64>, r: f64) -> Self {
        Self { x, r }
    }
    pub fn is_apex(&self) -> bool {
        self.r == 0.0
    }
}

/// `√(r0² + r1² − 2 r0 r1 cos(min(|x0 − x1|, π)))`, evaluated as
/// `(r0 − r1)² + 4 r0 r1 sin²(d/2)` to avoid cancellation for nearby points.
pub fn cone_distance(z0: &ConePoint, z1: &ConePoint) -> f64 {
    let d: f64 = z0.x.iter().zip(&z1.x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let h = (0.5 * d.min(PI)).sin();
    let dr = z0.r - z1.r;
    (dr * dr + 4.0 * z0.r * z1.r * h * h).sqrt()
}

/// Weighted cone point sitting over a grid node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftedPoint {
    pub point: ConePoint,
    pub weight: f64,
}

/// Lift `μ ⊗ δ_1`: unit radii with weights equal to node masses.
pub fn cone_lift(mu: &DiscreteMeasure) -> Vec<LiftedPoint> {
    let dom = mu.domain();
    mu.support()
        .into_iter()
        .map(|i| LiftedPoint { point: ConePoint::new(dom.coords(i).to_vec(), 1.0), weight: mu.node_mass(i) })
        .collect()
}

/// Projection `∫ r² λ(·, dr)` onto the grid.
pub fn cone_project(domain: &Arc<GridDomain>, lifted: &[LiftedPoint]) -> Result<DiscreteMeasure> {
    let mut masses = vec![0.0; domain.len()];
    let tol = 1e-12 * (1.0 + domain.spacing().iter().cloned().fold(0.0, f64::max));
    for lp in lifted {
        if !(lp.weight >= 0.0) || !(lp.point.r >= 0.0) {
            return invalid("lifted weights and radii must be nonnegative");
        }
        if lp.point.is_apex() {
            continue;
        }
        let node = (0..domain.len()).find(|&i| {
            domain.coords(i).len() == lp.point.x.len()
                && domain.coords(i).iter().zip(&lp.point.x).all(|(a, b)| (a - b).abs() <= tol)
        });
        let Some(i) = node else {
            return invalid(format!("cone point base {:?} is not a grid node", lp.point.x));
        };
        masses[i] += lp.point.r * lp.point.r * lp.weight;
    }
    DiscreteMeasure::from_masses(domain.clone(), &masses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn distance_examples() {
        let p = |x: f64, r: f64| ConePoint::new(vec![x], r);
        assert_eq!(cone_distance(&p(0.3, 1.0), &p(0.3, 1.0)), 0.0);
        assert!((cone_distance(&p(0.0, 2.5), &p(1.0, 0.0)) - 2.5).abs() < 1e-15);
        assert!((cone_distance(&p(0.0, 1.0), &p(FRAC_PI_2, 1.0)) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn lift_project_examples() {
        let dom = Arc::new(GridDomain::interval(0.0, 1.0, 5).unwrap());
        let mu = DiscreteMeasure::from_fn(dom.clone(), |x| 1.0 + x[0] * x[0]).unwrap();
        let back = cone_project(&dom, &cone_lift(&mu)).unwrap();
        for (a, b) in back.density().iter().zip(mu.density()) {
            assert!((a - b).abs() < 1e-14 * b);
        }
        let apex = [LiftedPoint { point: ConePoint::new(vec![0.5], 0.0), weight: 3.0 }];
        assert_eq!(cone_project(&dom, &apex).unwrap().mass(), 0.0);
        let two = [LiftedPoint { point: ConePoint::new(vec![0.5], 2.0), weight: 1.0 }];
        assert!((cone_project(&dom, &two).unwrap().node_mass(2) - 4.0).abs() < 1e-14);
        let off = [LiftedPoint { point: ConePoint::new(vec![0.3], 1.0), weight: 1.0 }];
        assert!(cone_project(&dom, &off).is_err());
    }
}
