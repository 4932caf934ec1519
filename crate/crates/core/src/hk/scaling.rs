//! Entropic scaling iterations in the log domain.
//!
//! With regularization `ε KL(H | a⊗b)` and unit KL marginal penalties the
//! potential updates are closed form:
//! `f_i = −ε/(1+ε) · LSE_j(log b_j + (g_j − ℓ_ij)/ε)` and symmetrically for `g`.
//! After each sweep the potentials are shifted by the optimal constant
//! `(+c, −c)`, which removes the slow total-mass mode of the plain iteration.

use crate::error::Result;
use crate::hk::{let_cost, HkOptions, LetResult, PathRecord, PlanEntry, Problem, TransportPlan};
use crate::measures::DiscreteMeasure;

struct Dense {
    n0: usize,
    n1: usize,
    /// Row-major cost over `s0 × s1`; `+∞` outside the cutoff.
    cost: Vec<f64>,
}

fn lse(vals: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = vals.collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub(super) fn solve(mu0: &DiscreteMeasure, mu1: &DiscreteMeasure, opts: &HkOptions) -> Result<LetResult> {
    let n = mu0.len();
    let prob = Problem::new(mu0, mu1);
    let (n0, n1) = (prob.s0.len(), prob.s1.len());
    let mut dense = Dense { n0, n1, cost: vec![f64::INFINITY; n0 * n1] };
    for &(i, j, c) in &prob.pairs {
        dense.cost[i * n1 + j] = c;
    }
    let la: Vec<f64> = prob.a.iter().map(|v| v.ln()).collect();
    let lb: Vec<f64> = prob.b.iter().map(|v| v.ln()).collect();
    let total = prob.a.iter().sum::<f64>() + prob.b.iter().sum::<f64>();
    let mut f = vec![0.0; n0];
    let mut g = vec![0.0; n1];
    let mut path = Vec::new();
    let mut converged = true;
    let mut iterations = 0;
    let mut last_res = [0.0, 0.0];
    let schedule = if opts.eps_schedule.is_empty() { super::default_eps_schedule() } else { opts.eps_schedule.clone() };

    for &eps in &schedule {
        let k = eps / (1.0 + eps);
        let mut it = 0;
        let mut stage_ok = false;
        while it < opts.max_iter {
            for i in 0..dense.n0 {
                let row = &dense.cost[i * n1..(i + 1) * n1];
                let s = lse((0..n1).filter(|&j| row[j].is_finite()).map(|j| lb[j] + (g[j] - row[j]) / eps));
                f[i] = -k * s;
            }
            for j in 0..dense.n1 {
                let s = lse(
                    (0..n0)
                        .filter(|&i| dense.cost[i * n1 + j].is_finite())
                        .map(|i| la[i] + (f[i] - dense.cost[i * n1 + j]) / eps),
                );
                g[j] = -k * s;
            }
            let big_a: f64 = (0..n0).map(|i| prob.a[i] * (-f[i]).exp()).sum();
            let big_b: f64 = (0..n1).map(|j| prob.b[j] * (-g[j]).exp()).sum();
            if big_a > 0.0 && big_b > 0.0 {
                let c = 0.5 * (big_a / big_b).ln();
                f.iter_mut().filter(|v| v.is_finite()).for_each(|v| *v += c);
                g.iter_mut().filter(|v| v.is_finite()).for_each(|v| *v -= c);
            }
            it += 1;
            if it % 5 == 0 || it == opts.max_iter {
                last_res = residuals(&dense, &prob, &f, &g, eps);
                if last_res[0] + last_res[1] <= opts.tol * total {
                    stage_ok = true;
                    break;
                }
            }
        }
        iterations += it;
        path.push(PathRecord { eps, iterations: it, residual: last_res[0] + last_res[1] });
        converged &= stage_ok;
    }

    let eps = *schedule.last().expect("nonempty schedule");
    let mut plan = TransportPlan::default();
    for i in 0..n0 {
        for j in 0..n1 {
            let c = dense.cost[i * n1 + j];
            if c.is_finite() {
                let h = prob.a[i] * prob.b[j] * ((f[i] + g[j] - c) / eps).exp();
                if h > 0.0 {
                    plan.entries.push(PlanEntry { i: prob.s0[i], j: prob.s1[j], mass: h });
                }
            }
        }
    }
    let mut value = let_cost(&plan, mu0, mu1)?;
    // optimal uniform rescaling of the plan
    let m = plan.total_mass();
    if m > 0.0 {
        let (eta0, eta1) = plan.marginal_masses(n);
        let dom = mu0.domain();
        let mut s = 0.0;
        for idx in 0..n {
            if eta0[idx] > 0.0 {
                s += eta0[idx] * (eta0[idx] / mu0.node_mass(idx)).ln();
            }
            if eta1[idx] > 0.0 {
                s += eta1[idx] * (eta1[idx] / mu1.node_mass(idx)).ln();
            }
        }
        s += plan.entries.iter().map(|e| super::transport_cost(dom.distance(e.i, e.j)) * e.mass).sum::<f64>();
        let t = (-s / (2.0 * m)).exp();
        let scaled = plan.scaled(t);
        let v = let_cost(&scaled, mu0, mu1)?;
        if v < value {
            value = v;
            plan = scaled;
        }
    }
    // feasible duals for a certified lower bound
    let mut lower = 0.0;
    for i in 0..n0 {
        let row = &dense.cost[i * n1..(i + 1) * n1];
        let cap = (0..n1).map(|j| row[j] - g[j]).fold(f64::INFINITY, f64::min);
        let fi = f[i].min(cap);
        lower += prob.a[i] * (1.0 - (-fi).exp());
    }
    lower += (0..n1).map(|j| prob.b[j] * (1.0 - (-g[j]).exp())).sum::<f64>();

    let mut dual0 = vec![None; n];
    let mut dual1 = vec![None; n];
    for (k, &i) in prob.s0.iter().enumerate() {
        dual0[i] = Some(f[k]);
    }
    for (k, &j) in prob.s1.iter().enumerate() {
        dual1[j] = Some(g[k]);
    }
    Ok(LetResult {
        value,
        lower_bound: lower.min(value),
        plan,
        dual0,
        dual1,
        path,
        iterations,
        marginal_residuals: last_res,
        converged,
    })
}

fn residuals(dense: &Dense, prob: &Problem, f: &[f64], g: &[f64], eps: f64) -> [f64; 2] {
    let (n0, n1) = (dense.n0, dense.n1);
    let mut eta0 = vec![0.0; n0];
    let mut eta1 = vec![0.0; n1];
    for i in 0..n0 {
        for j in 0..n1 {
            let c = dense.cost[i * n1 + j];
            if c.is_finite() {
                let h = prob.a[i] * prob.b[j] * ((f[i] + g[j] - c) / eps).exp();
                eta0[i] += h;
                eta1[j] += h;
            }
        }
    }
    let r0 = (0..n0).map(|i| (eta0[i] - prob.a[i] * (-f[i]).exp()).abs()).sum();
    let r1 = (0..n1).map(|j| (eta1[j] - prob.b[j] * (-g[j]).exp()).abs()).sum();
    [r0, r1]
}
