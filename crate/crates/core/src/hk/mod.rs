//! Hellinger–Kantorovich and spherical Hellinger–Kantorovich distances via the
//! logarithmic entropy-transport (LET) program
//!
//! `LET(H) = Σ_i F(σ0_i) μ0_i + Σ_j F(σ1_j) μ1_j + Σ_ij ℓ(d_ij) H_ij`
//!
//! with `F(r) = r log r − r + 1` and `ℓ(R) = −2 log cos R` (infinite from π/2 on).
//! Three independent solvers are provided: entropic scaling iterations, an
//! interior-point method on the dual, and a primal Newton oracle for small
//! supports.

pub(crate) mod barrier;
pub mod cone;
mod exact;
mod scaling;

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::measures::DiscreteMeasure;

pub use cone::{cone_distance, cone_lift, cone_project, ConePoint, LiftedPoint};
pub use exact::{hk_exact_small, ExactLet, EXACT_SUPPORT_LIMIT};

/// `F(r) = r log r − r + 1`, with `F(0) = 1`.
pub fn entropy_f(r: f64) -> f64 {
    if r <= 0.0 {
        1.0
    } else {
        r * r.ln() - r + 1.0
    }
}

/// `ℓ(R) = −2 log cos R` for `R < π/2`, `+∞` otherwise.
pub fn transport_cost(d: f64) -> f64 {
    if d < FRAC_PI_2 {
        -2.0 * d.cos().ln()
    } else {
        f64::INFINITY
    }
}

/// Squared distance convention used by a metric gradient system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Hk,
    Shk,
}

impl Metric {
    /// Converts a squared HK distance between unit-mass measures to the metric's squared distance.
    pub fn from_hk2(self, hk2: f64) -> f64 {
        match self {
            Metric::Hk => hk2,
            Metric::Shk => {
                let s = shk_from_hk2(hk2);
                s * s
            }
        }
    }
}

/// `2 arcsin(√HK² / 2)`.
pub fn shk_from_hk2(hk2: f64) -> f64 {
    2.0 * (0.5 * hk2.clamp(0.0, 2.0).sqrt()).asin()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HkSolver {
    /// Entropic regularization with generalized scaling iterations.
    Scaling,
    /// Interior-point method on the unregularized dual.
    Barrier,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HkOptions {
    pub solver: HkSolver,
    /// Regularization levels, largest first (scaling solver).
    pub eps_schedule: Vec<f64>,
    /// Marginal optimality residual per level, relative to total mass (scaling)
    /// or relative duality gap (barrier).
    pub tol: f64,
    /// Iteration cap per level (scaling) or Newton-step cap (barrier).
    pub max_iter: usize,
}

impl Default for HkOptions {
    fn default() -> Self {
        Self { solver: HkSolver::Scaling, eps_schedule: default_eps_schedule(), tol: 1e-10, max_iter: 200_000 }
    }
}

impl HkOptions {
    pub fn barrier() -> Self {
        Self { solver: HkSolver::Barrier, tol: 1e-10, max_iter: 600, ..Self::default() }
    }
}

/// Geometric levels from 1e−1 down to 1e−4, two per decade.
pub fn default_eps_schedule() -> Vec<f64> {
    (0..=6).map(|k| 10f64.powf(-1.0 - 0.5 * k as f64)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub i: usize,
    pub j: usize,
    pub mass: f64,
}

/// Sparse coupling between nodes of two measures on one grid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub entries: Vec<PlanEntry>,
}

impl TransportPlan {
    pub fn total_mass(&self) -> f64 {
        self.entries.iter().map(|e| e.mass).sum()
    }

    /// Node masses of the two marginals.
    pub fn marginal_masses(&self, n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        for e in &self.entries {
            a[e.i] += e.mass;
            b[e.j] += e.mass;
        }
        (a, b)
    }

    pub fn scaled(&self, t: f64) -> Self {
        Self { entries: self.entries.iter().map(|e| PlanEntry { mass: t * e.mass, ..*e }).collect() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathRecord {
    pub eps: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// Outcome of a distance evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LetResult {
    /// `let_cost` of the returned plan; an upper bound for HK².
    pub value: f64,
    /// Dual objective at feasible potentials; a lower bound for HK².
    pub lower_bound: f64,
    pub plan: TransportPlan,
    /// `f_i = −log σ0_i` on the support of `μ0`.
    pub dual0: Vec<Option<f64>>,
    /// `g_j = −log σ1_j` on the support of `μ1`.
    pub dual1: Vec<Option<f64>>,
    pub path: Vec<PathRecord>,
    pub iterations: usize,
    /// Summed `|η_k − μ_k e^{−potential}|` on both sides.
    pub marginal_residuals: [f64; 2],
    pub converged: bool,
}

impl LetResult {
    fn closed_form(value: f64, n: usize) -> Self {
        Self {
            value,
            lower_bound: value,
            plan: TransportPlan::default(),
            dual0: vec![None; n],
            dual1: vec![None; n],
            path: Vec::new(),
            iterations: 0,
            marginal_residuals: [0.0, 0.0],
            converged: true,
        }
    }
}

/// LET value of an arbitrary plan.
pub fn let_cost(plan: &TransportPlan, mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> Result<f64> {
    mu0.ensure_same_domain(mu1)?;
    let dom = mu0.domain();
    let n = dom.len();
    let (eta0, eta1) = plan.marginal_masses(n);
    let a = mu0.masses();
    let b = mu1.masses();
    let mut total = 0.0;
    let mut infinite = false;
    for e in &plan.entries {
        if e.mass < 0.0 || !e.mass.is_finite() {
            return invalid("plan entries must be finite and nonnegative");
        }
        if e.mass > 0.0 {
            let c = transport_cost(dom.distance(e.i, e.j));
            if c.is_infinite() {
                infinite = true;
            } else {
                total += c * e.mass;
            }
        }
    }
    for i in 0..n {
        total += side_term(eta0[i], a[i])?;
        total += side_term(eta1[i], b[i])?;
    }
    Ok(if infinite { f64::INFINITY } else { total })
}

fn side_term(eta: f64, m: f64) -> Result<f64> {
    if m > 0.0 {
        Ok(m * entropy_f(eta / m))
    } else if eta > 0.0 {
        invalid("plan marginal is not dominated by the measure")
    } else {
        Ok(0.0)
    }
}

/// Support indices and admissible pairs shared by the solvers.
pub(crate) struct Problem {
    pub s0: Vec<usize>,
    pub s1: Vec<usize>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// `(index into s0, index into s1, ℓ)`.
    pub pairs: Vec<(usize, usize, f64)>,
}

impl Problem {
    pub fn new(mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> Self {
        let dom = mu0.domain();
        let s0 = mu0.support();
        let s1 = mu1.support();
        let a: Vec<f64> = s0.iter().map(|&i| mu0.node_mass(i)).collect();
        let b: Vec<f64> = s1.iter().map(|&j| mu1.node_mass(j)).collect();
        let mut pairs = Vec::new();
        for (ii, &i) in s0.iter().enumerate() {
            for (jj, &j) in s1.iter().enumerate() {
                let c = transport_cost(dom.distance(i, j));
                if c.is_finite() {
                    pairs.push((ii, jj, c));
                }
            }
        }
        Self { s0, s1, a, b, pairs }
    }
}

/// `HK²(μ0, μ1)` with the solver selected in `opts`.
pub fn hk_distance_squared(mu0: &DiscreteMeasure, mu1: &DiscreteMeasure, opts: &HkOptions) -> Result<LetResult> {
    mu0.ensure_same_domain(mu1)?;
    let n = mu0.len();
    let (m0, m1) = (mu0.mass(), mu1.mass());
    if m0 == 0.0 || m1 == 0.0 {
        return Ok(LetResult::closed_form(m0 + m1, n));
    }
    if mu0.density() == mu1.density() {
        // The identity coupling costs 0, which matches the lower bound HK² ≥ 0.
        let mut r = LetResult::closed_form(0.0, n);
        for i in mu0.support() {
            r.plan.entries.push(PlanEntry { i, j: i, mass: mu0.node_mass(i) });
            r.dual0[i] = Some(0.0);
            r.dual1[i] = Some(0.0);
        }
        return Ok(r);
    }
    match opts.solver {
        HkSolver::Scaling => scaling::solve(mu0, mu1, opts),
        HkSolver::Barrier => solve_barrier(mu0, mu1, opts),
    }
}

/// Exact `HK²` through the dual interior-point method.
pub fn hk2_exact(mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> Result<f64> {
    Ok(hk_distance_squared(mu0, mu1, &HkOptions::barrier())?.value)
}

fn solve_barrier(mu0: &DiscreteMeasure, mu1: &DiscreteMeasure, opts: &HkOptions) -> Result<LetResult> {
    let n = mu0.len();
    let prob = Problem::new(mu0, mu1);
    let mut has0 = vec![false; prob.s0.len()];
    let mut has1 = vec![false; prob.s1.len()];
    for &(i, j, _) in &prob.pairs {
        has0[i] = true;
        has1[j] = true;
    }
    let idx0: Vec<usize> = (0..prob.s0.len()).filter(|&i| has0[i]).collect();
    let idx1: Vec<usize> = (0..prob.s1.len()).filter(|&j| has1[j]).collect();
    let mut pos0 = vec![usize::MAX; prob.s0.len()];
    let mut pos1 = vec![usize::MAX; prob.s1.len()];
    idx0.iter().enumerate().for_each(|(k, &i)| pos0[i] = k);
    idx1.iter().enumerate().for_each(|(k, &j)| pos1[j] = k);
    let unpaired: f64 = (0..prob.s0.len()).filter(|&i| !has0[i]).map(|i| prob.a[i]).sum::<f64>()
        + (0..prob.s1.len()).filter(|&j| !has1[j]).map(|j| prob.b[j]).sum::<f64>();

    let mut dual0 = vec![None; n];
    let mut dual1 = vec![None; n];
    let mut plan = TransportPlan::default();
    let (mut lower, mut steps, mut converged, mut residuals) = (unpaired, 0, true, [0.0, 0.0]);
    if !prob.pairs.is_empty() {
        let dp = barrier::DualProblem {
            src: idx0.iter().map(|&i| prob.a[i]).collect(),
            target: barrier::Target::Masses(idx1.iter().map(|&j| prob.b[j]).collect()),
            pairs: prob
                .pairs
                .iter()
                .map(|&(i, j, c)| barrier::Pair { i: pos0[i], j: pos1[j], cost: c })
                .collect(),
            scale: 1.0,
        };
        let bo = barrier::BarrierOptions { gap_tol: opts.tol, max_newton: opts.max_iter, start_shift: None };
        let sol = dp.solve(&bo)?;
        lower += sol.dual;
        steps = sol.newton_steps;
        converged = sol.converged;
        let mut eta0 = vec![0.0; idx0.len()];
        let mut eta1 = vec![0.0; idx1.len()];
        for (p, h) in dp.pairs.iter().zip(&sol.plan) {
            eta0[p.i] += h;
            eta1[p.j] += h;
            plan.entries.push(PlanEntry { i: prob.s0[idx0[p.i]], j: prob.s1[idx1[p.j]], mass: *h });
        }
        for (k, &i) in idx0.iter().enumerate() {
            dual0[prob.s0[i]] = Some(sol.f[k]);
            residuals[0] += (eta0[k] - prob.a[i] * (-sol.f[k]).exp()).abs();
        }
        for (k, &j) in idx1.iter().enumerate() {
            dual1[prob.s1[j]] = Some(sol.g[k]);
            residuals[1] += (eta1[k] - prob.b[j] * (-sol.g[k]).exp()).abs();
        }
    }
    let value = let_cost(&plan, mu0, mu1)?;
    Ok(LetResult {
        value,
        lower_bound: lower.min(value),
        plan,
        dual0,
        dual1,
        path: Vec::new(),
        iterations: steps,
        marginal_residuals: residuals,
        converged,
    })
}

/// `2 arcsin(HK/2)` between probability measures.
pub fn shk_distance(nu0: &DiscreteMeasure, nu1: &DiscreteMeasure, opts: &HkOptions) -> Result<f64> {
    for (k, nu) in [nu0, nu1].iter().enumerate() {
        if (nu.mass() - 1.0).abs() >= 1e-8 {
            return invalid(format!("SHK needs probability measures; mass of input {k} is {}", nu.mass()));
        }
    }
    let hk2 = hk_distance_squared(nu0, nu1, opts)?.value;
    Ok(shk_from_hk2(hk2))
}

/// Squared distance in the chosen metric via the exact dual solver.
pub fn metric_distance_squared(metric: Metric, a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<f64> {
    let hk2 = hk2_exact(a, b)?;
    Ok(metric.from_hk2(hk2))
}

/// `(√m0 − √m1)²`.
pub fn hk_mass_lower_bound(mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> f64 {
    let d = mu0.mass().sqrt() - mu1.mass().sqrt();
    d * d
}

fn check_injective(map: &[usize], support: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    for &i in support {
        let t = map[i];
        if t >= n {
            return invalid(format!("map sends node {i} outside the grid"));
        }
        if seen[t] {
            return invalid(format!("map is not injective on the support (node {t} hit twice)"));
        }
        seen[t] = true;
    }
    Ok(())
}

/// Cost `Σ (1 + q² − 2q cos(min(|x − T x|, π/2))) μ0` of a dilation-transport couple.
pub fn dilation_cost(q: &[f64], map: &[usize], mu0: &DiscreteMeasure) -> Result<f64> {
    let n = mu0.len();
    if q.len() != n || map.len() != n {
        return invalid("q and map need one entry per node");
    }
    if q.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return invalid("dilation factors must be finite and nonnegative");
    }
    let support = mu0.support();
    check_injective(map, &support, n)?;
    let dom = mu0.domain();
    Ok(support
        .iter()
        .map(|&i| {
            let d = dom.distance(i, map[i]).min(FRAC_PI_2);
            (1.0 + q[i] * q[i] - 2.0 * q[i] * d.cos()) * mu0.node_mass(i)
        })
        .sum())
}

/// Push-forward of `q² μ0` under the node map.
pub fn dilation_pushforward(q: &[f64], map: &[usize], mu0: &DiscreteMeasure) -> Result<DiscreteMeasure> {
    let n = mu0.len();
    if q.len() != n || map.len() != n {
        return invalid("q and map need one entry per node");
    }
    check_injective(map, &mu0.support(), n)?;
    let mut masses = vec![0.0; n];
    for i in mu0.support() {
        masses[map[i]] += q[i] * q[i] * mu0.node_mass(i);
    }
    DiscreteMeasure::from_masses(mu0.domain().clone(), &masses)
}

/// `|HK²(t0²μ0, t1²μ1) − (t0t1 HK²(μ0,μ1) + (t0² − t0t1)m0 + (t1² − t0t1)m1)|` via the exact oracle.
pub fn check_scaling_identity(mu0: &DiscreteMeasure, mu1: &DiscreteMeasure, t0: f64, t1: f64) -> Result<f64> {
    if !(t0 >= 0.0 && t1 >= 0.0) {
        return invalid("scaling factors must be nonnegative");
    }
    let base = hk_exact_small(mu0, mu1)?.value;
    let lhs = hk_exact_small(&mu0.scale(t0)?, &mu1.scale(t1)?)?.value;
    let (m0, m1) = (mu0.mass(), mu1.mass());
    let rhs = t0 * t1 * base + (t0 * t0 - t0 * t1) * m0 + (t1 * t1 - t0 * t1) * m1;
    Ok((lhs - rhs).abs())
}

/// Largest `|σ0_i σ1_j − cos² d_ij|` over plan entries above `threshold`.
pub fn optimality_residual(result: &LetResult, mu0: &DiscreteMeasure, mu1: &DiscreteMeasure, threshold: f64) -> f64 {
    let n = mu0.len();
    let (eta0, eta1) = result.plan.marginal_masses(n);
    let dom = mu0.domain();
    result
        .plan
        .entries
        .iter()
        .filter(|e| e.mass > threshold)
        .map(|e| {
            let s0 = eta0[e.i] / mu0.node_mass(e.i);
            let s1 = eta1[e.j] / mu1.node_mass(e.j);
            let c = dom.distance(e.i, e.j).cos();
            (s0 * s1 - c * c).abs()
        })
        .fold(0.0, f64::max)
}

/// `Σ_k HK²(μ0^k, μ1^k) − HK²(μ0, μ1)` for the given node-mask splits; nonnegative by subadditivity.
pub fn subadditivity_gap(mu0: &DiscreteMeasure, mu1: &DiscreteMeasure, splits: &[(Vec<bool>, Vec<bool>)]) -> Result<f64> {
    let whole = hk2_exact(mu0, mu1)?;
    let mut parts = 0.0;
    for (m0, m1) in splits {
        parts += hk2_exact(&mu0.restrict(m0)?, &mu1.restrict(m1)?)?;
    }
    Ok(parts - whole)
}
