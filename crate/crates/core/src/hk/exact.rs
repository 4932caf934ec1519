//! Primal oracle: damped Newton with a logarithmic barrier on the plan entries.
//!
//! The objective is smooth and convex in the admissible entries. Each
//! barrier-centered iterate yields dual feasible potentials
//! `f_i = −log σ0_i`, `g_j = −log σ1_j` (capped by the pair constraints), so the
//! reported gap certifies optimality.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hk::{entropy_f, let_cost, PlanEntry, Problem, TransportPlan};
use crate::measures::DiscreteMeasure;

/// Largest combined support accepted by [`hk_exact_small`].
pub const EXACT_SUPPORT_LIMIT: usize = 8;

#[derive(Debug, Clone, Serialize)]
pub struct ExactLet {
    pub value: f64,
    /// Certified primal-dual gap.
    pub gap: f64,
    pub plan: TransportPlan,
}

pub fn hk_exact_small(mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> Result<ExactLet> {
    mu0.ensure_same_domain(mu1)?;
    let n = mu0.len();
    let mut combined = vec![false; n];
    for i in mu0.support().into_iter().chain(mu1.support()) {
        combined[i] = true;
    }
    let found = combined.iter().filter(|c| **c).count();
    if found > EXACT_SUPPORT_LIMIT {
        return Err(Error::SupportTooLarge { found, limit: EXACT_SUPPORT_LIMIT });
    }
    let (m0, m1) = (mu0.mass(), mu1.mass());
    if m0 == 0.0 || m1 == 0.0 {
        return Ok(ExactLet { value: m0 + m1, gap: 0.0, plan: TransportPlan::default() });
    }
    let prob = Problem::new(mu0, mu1);
    let (n0, n1) = (prob.s0.len(), prob.s1.len());
    let np = prob.pairs.len();
    if np == 0 {
        return Ok(ExactLet { value: m0 + m1, gap: 0.0, plan: TransportPlan::default() });
    }

    let objective = |h: &[f64], mu: f64| -> f64 {
        let mut e0 = vec![0.0; n0];
        let mut e1 = vec![0.0; n1];
        let mut v = 0.0;
        for (p, &(i, j, c)) in prob.pairs.iter().enumerate() {
            e0[i] += h[p];
            e1[j] += h[p];
            v += c * h[p] - mu * h[p].ln();
        }
        v + (0..n0).map(|i| prob.a[i] * entropy_f(e0[i] / prob.a[i])).sum::<f64>()
            + (0..n1).map(|j| prob.b[j] * entropy_f(e1[j] / prob.b[j])).sum::<f64>()
    };
    let margins = |h: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let mut e0 = vec![0.0; n0];
        let mut e1 = vec![0.0; n1];
        for (p, &(i, j, _)) in prob.pairs.iter().enumerate() {
            e0[i] += h[p];
            e1[j] += h[p];
        }
        (e0, e1)
    };

    let mut h: Vec<f64> = prob.pairs.iter().map(|&(i, j, _)| (prob.a[i] * prob.b[j]).sqrt() / np as f64).collect();
    let mut mu = 0.1 * (m0 + m1) / np as f64;
    let mut best: Option<(f64, f64, Vec<f64>)> = None;

    for _outer in 0..60 {
        for _ in 0..100 {
            let (e0, e1) = margins(&h);
            let mut grad = DVector::zeros(np);
            let mut hess = DMatrix::zeros(np, np);
            for (p, &(i, j, c)) in prob.pairs.iter().enumerate() {
                grad[p] = (e0[i] / prob.a[i]).ln() + (e1[j] / prob.b[j]).ln() + c - mu / h[p];
                for (q, &(k, l, _)) in prob.pairs.iter().enumerate() {
                    let mut v = 0.0;
                    if i == k {
                        v += 1.0 / e0[i];
                    }
                    if j == l {
                        v += 1.0 / e1[j];
                    }
                    hess[(p, q)] = v;
                }
                hess[(p, p)] += mu / (h[p] * h[p]);
            }
            let Some(ch) = hess.cholesky() else {
                return Err(Error::Solver("oracle Hessian lost positive definiteness".into()));
            };
            let dir = -ch.solve(&grad);
            let dec = -grad.dot(&dir);
            if dec * 0.5 <= 1e-3 * mu * np as f64 || dec <= 1e-32 {
                break;
            }
            let mut t: f64 = 1.0;
            for p in 0..np {
                if dir[p] < 0.0 {
                    t = t.min(-0.99 * h[p] / dir[p]);
                }
            }
            let f0 = objective(&h, mu);
            let mut moved = false;
            for _ in 0..60 {
                let trial: Vec<f64> = h.iter().zip(dir.iter()).map(|(a, d)| a + t * d).collect();
                let ft = objective(&trial, mu);
                if ft <= f0 - 1e-4 * t * dec || (ft - f0).abs() <= 1e-16 * f0.abs() {
                    h = trial;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
        }
        let (value, lower) = certify(&prob, &h, &margins);
        let gap = value - lower;
        if best.as_ref().map_or(true, |b| gap < b.0 - b.1) {
            best = Some((value, lower, h.clone()));
        }
        if gap < 1e-10 || mu < 1e-20 {
            break;
        }
        mu *= 0.1;
    }
    let (_, lower, h) = best.expect("at least one outer iteration");
    let plan = TransportPlan {
        entries: prob
            .pairs
            .iter()
            .zip(&h)
            .map(|(&(i, j, _), &m)| PlanEntry { i: prob.s0[i], j: prob.s1[j], mass: m })
            .collect(),
    };
    let value = let_cost(&plan, mu0, mu1)?;
    Ok(ExactLet { value, gap: (value - lower).max(0.0), plan })
}

fn certify(prob: &Problem, h: &[f64], margins: &impl Fn(&[f64]) -> (Vec<f64>, Vec<f64>)) -> (f64, f64) {
    let (e0, e1) = margins(h);
    let (n0, n1) = (e0.len(), e1.len());
    let mut value = 0.0;
    for (p, &(_, _, c)) in prob.pairs.iter().enumerate() {
        value += c * h[p];
    }
    value += (0..n0).map(|i| prob.a[i] * entropy_f(e0[i] / prob.a[i])).sum::<f64>();
    value += (0..n1).map(|j| prob.b[j] * entropy_f(e1[j] / prob.b[j])).sum::<f64>();
    let g: Vec<f64> = (0..n1).map(|j| -(e1[j] / prob.b[j]).ln()).collect();
    let mut f: Vec<f64> = (0..n0).map(|i| -(e0[i] / prob.a[i]).ln()).collect();
    let mut capped = vec![f64::INFINITY; n0];
    for &(i, j, c) in &prob.pairs {
        capped[i] = capped[i].min(c - g[j]);
    }
    for i in 0..n0 {
        f[i] = f[i].min(capped[i]);
    }
    let lower = (0..n0).map(|i| prob.a[i] * (1.0 - (-f[i]).exp())).sum::<f64>()
        + (0..n1).map(|j| prob.b[j] * (1.0 - (-g[j]).exp())).sum::<f64>();
    (value, lower)
}
