//! Scalar minimizing movement for spatially uniform densities on a unit-volume
//! domain, where `HK²(c0, c1) = (√c1 − √c0)²` and a step solves
//! `1 − √(c0/c1) + 2τ E'(c1) = 0`.

use serde::Serialize;

use crate::entropy::EntropySpec;
use crate::error::{invalid, Error, Result};

/// Euler–Lagrange residual `1 − √(c0/c) + 2τ E'(c)`, increasing in `c`.
pub fn el_residual(c0: f64, c: f64, tau: f64, entropy: &EntropySpec) -> f64 {
    1.0 - (c0 / c).sqrt() + 2.0 * tau * entropy.de(c)
}

/// One scalar step by bisection on the Euler–Lagrange equation.
pub fn scalar_step(c0: f64, tau: f64, entropy: &EntropySpec) -> Result<f64> {
    if !(c0 >= 0.0 && c0.is_finite() && tau > 0.0) {
        return invalid("scalar step needs c0 ≥ 0 and τ > 0");
    }
    let h = |c: f64| el_residual(c0, c, tau, entropy);
    let mut lo = if c0 > 0.0 { c0 } else { 1.0 };
    let mut guard = 0;
    while h(lo) >= 0.0 {
        lo *= 0.5;
        guard += 1;
        if guard > 2000 || lo == 0.0 {
            // The objective is nondecreasing in c: the minimizer sits at 0.
            return Ok(0.0);
        }
    }
    let upper = entropy.upper_bound();
    let mut hi = if c0 > 0.0 { c0 } else { 1.0 };
    if let Some(u) = upper {
        hi = u;
        if h(u) <= 0.0 {
            return Ok(u);
        }
    } else {
        guard = 0;
        while h(hi) <= 0.0 {
            hi *= 2.0;
            guard += 1;
            if guard > 2000 || !hi.is_finite() {
                return Err(Error::Solver(format!("no bracket for the scalar step from c0 = {c0}")));
            }
        }
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if h(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `n` scalar steps; returns `c_0..c_n`.
pub fn scalar_mm(c0: f64, tau: f64, entropy: &EntropySpec, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(c0);
    for _ in 0..n {
        let c = scalar_step(*out.last().expect("nonempty"), tau, entropy)?;
        out.push(c);
    }
    Ok(out)
}

/// Margins of the four scalar observations; `None` when a hypothesis fails.
///
/// A margin is `bound side − value side` and is nonnegative when the bound holds.
#[derive(Debug, Clone, Serialize)]
pub struct ScalarBoundReport {
    /// `E'(c0) ≥ 0 ⟹ c1 ≤ c0`.
    pub d1: Option<f64>,
    /// `E'(c0) ≤ 0 ⟹ c1 ≥ c0`.
    pub d2: Option<f64>,
    /// `c1 ≤ max{a, c0/(1 + 2τ min{E'(a), 0})²}` when `2τE'(a) > −1`.
    pub d3: Option<f64>,
    /// `c1 ≥ min{b, c0/(1 + 2τ max{E'(b), 0})²}`.
    pub d4: Option<f64>,
}

impl ScalarBoundReport {
    /// All applicable margins are above `−tol · (1 + c)` for the compared scale `c`.
    pub fn holds(&self, tol: f64, scale: f64) -> bool {
        [self.d1, self.d2, self.d3, self.d4].iter().flatten().all(|m| *m >= -tol * (1.0 + scale))
    }
}

pub fn check_scalar_bounds(c0: f64, c1: f64, tau: f64, entropy: &EntropySpec, a: f64, b: f64) -> ScalarBoundReport {
    let e0 = entropy.de(c0);
    let d1 = (e0 >= 0.0).then(|| c0 - c1);
    let d2 = (e0 <= 0.0).then(|| c1 - c0);
    let ea = entropy.de(a);
    let d3 = (2.0 * tau * ea > -1.0).then(|| {
        let k = 1.0 + 2.0 * tau * ea.min(0.0);
        a.max(c0 / (k * k)) - c1
    });
    let k = 1.0 + 2.0 * tau * entropy.de(b).max(0.0);
    let d4 = Some(c1 - b.min(c0 / (k * k)));
    ScalarBoundReport { d1, d2, d3, d4 }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_energy_is_constant() {
        let s = scalar_mm(0.7, 0.1, &EntropySpec::zero(), 5).unwrap();
        assert!(s.iter().all(|c| (c - 0.7).abs() < 1e-14));
    }

    #[test]
    fn quadratic_step_solves_cubic() {
        // E = c², τ = 1/4: the step solves 1 + c = 1/√c
        let c = scalar_step(1.0, 0.25, &EntropySpec::power_mass(1.0, 2.0, 0.0).unwrap()).unwrap();
        assert!((1.0 + c - 1.0 / c.sqrt()).abs() < 1e-13);
        assert!(c < 1.0);
    }

    #[test]
    fn limit_family_stays_below_one() {
        let e = EntropySpec::limit(-1.0).unwrap();
        let c = scalar_step(0.9, 0.5, &e).unwrap();
        assert_eq!(c, 1.0);
        let c = scalar_step(0.2, 0.01, &e).unwrap();
        assert!(c > 0.2 && c < 1.0);
    }

    #[test]
    fn residual_vanishes_at_step() {
        let e = EntropySpec::quadratic_minus_linear();
        for c0 in [0.1, 0.5, 2.0] {
            let c1 = scalar_step(c0, 0.05, &e).unwrap();
            assert!(el_residual(c0, c1, 0.05, &e).abs() < 1e-12);
        }
    }
}
