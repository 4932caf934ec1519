//! Integrated EVI residuals, discrete error budgets, contraction and
//! convergence diagnostics for minimizing-movement trajectories.
//!
//! Curves are piecewise constant in time at the left node, so every time
//! integral below is an exact left sum over the sample grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::entropy::EntropySpec;
use crate::error::{invalid, Error, Result};
use crate::hk::{metric_distance_squared, Metric};
use crate::measures::DiscreteMeasure;
use crate::mm::{run_mm, MmConfig, MmTrajectory};

/// `λ* = 2 min{λ, 0} − 2`.
pub fn lambda_star(lambda: f64) -> f64 {
    2.0 * lambda.min(0.0) - 2.0
}

#[derive(Debug, Clone)]
pub struct Curve {
    pub times: Vec<f64>,
    pub measures: Vec<DiscreteMeasure>,
}

impl Curve {
    pub fn new(times: Vec<f64>, measures: Vec<DiscreteMeasure>) -> Result<Self> {
        if times.is_empty() || times.len() != measures.len() {
            return invalid("curve needs one measure per time");
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return invalid("curve times must increase");
        }
        Ok(Self { times, measures })
    }

    pub fn from_trajectory(traj: &MmTrajectory) -> Self {
        Self { times: traj.times(), measures: traj.measures.clone() }
    }

    pub fn constant(mu: &DiscreteMeasure, tau: f64, steps: usize) -> Self {
        Self { times: (0..=steps).map(|k| k as f64 * tau).collect(), measures: vec![mu.clone(); steps + 1] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverJson {
    pub id: String,
    pub density: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Observer {
    pub id: String,
    pub measure: DiscreteMeasure,
}

/// `μ0` scaled by `{0.5, 1, 2}` (HK) or blended with the uniform probability
/// measure at weights `{0.25, 0.5, 0.75}` (SHK).
pub fn default_observers(mu0: &DiscreteMeasure, metric: Metric) -> Result<Vec<Observer>> {
    match metric {
        Metric::Hk => [0.5, 1.0, 2.0]
            .iter()
            .map(|&s| Ok(Observer { id: format!("scale_{s}"), measure: mu0.scale_density(s)? }))
            .collect(),
        Metric::Shk => {
            let vol = mu0.domain().volume();
            let uni = DiscreteMeasure::uniform(mu0.domain().clone(), 1.0 / vol)?;
            [0.25, 0.5, 0.75]
                .iter()
                .map(|&s| Ok(Observer { id: format!("blend_{s}"), measure: mu0.blend(&uni, s)? }))
                .collect()
        }
    }
}

/// Squared distances from each curve sample to `o`, computed in parallel.
fn distances_to(curve: &Curve, o: &DiscreteMeasure, metric: Metric) -> Result<Vec<f64>> {
    curve.measures.par_iter().map(|m| metric_distance_squared(metric, m, o)).collect()
}

fn energies(curve: &Curve, entropy: &EntropySpec) -> Result<Vec<f64>> {
    let e: Vec<f64> = curve.measures.iter().map(|m| entropy.energy(m)).collect();
    if let Some(k) = e.iter().position(|v| !v.is_finite()) {
        return invalid(format!("infinite energy at curve sample {k}"));
    }
    Ok(e)
}

/// Residual table `R[s][t]`, `s ≤ t`, of
/// `½d²(x_t,o) − ½d²(x_s,o) + ∫_s^t (φ(x) + (λ/2) d²(x,o)) − (t−s) φ(o)`.
fn residual_table(times: &[f64], d2: &[f64], phi: &[f64], phi_o: f64, lambda: f64) -> Vec<Vec<f64>> {
    let n = times.len();
    // prefix[k] = ∫_0^{t_k} (φ + λ/2 d²) over the left-constant curve
    let mut prefix = vec![0.0; n];
    for k in 1..n {
        let dt = times[k] - times[k - 1];
        prefix[k] = prefix[k - 1] + dt * (phi[k - 1] + 0.5 * lambda * d2[k - 1]);
    }
    (0..n)
        .map(|s| {
            (0..n)
                .map(|t| {
                    if t <= s {
                        return 0.0;
                    }
                    0.5 * d2[t] - 0.5 * d2[s] + (prefix[t] - prefix[s]) - (times[t] - times[s]) * phi_o
                })
                .collect()
        })
        .collect()
}

/// Integrated EVI residual for every pair `s < t` of sample indices.
pub fn evi_residual_integrated(
    curve: &Curve,
    observer: &DiscreteMeasure,
    lambda: f64,
    entropy: &EntropySpec,
    metric: Metric,
) -> Result<Vec<(usize, usize, f64)>> {
    let phi = energies(curve, entropy)?;
    let phi_o = entropy.energy(observer);
    if !phi_o.is_finite() {
        return invalid("observer has infinite energy");
    }
    let d2 = distances_to(curve, observer, metric)?;
    let tab = residual_table(&curve.times, &d2, &phi, phi_o, lambda);
    let n = curve.times.len();
    Ok((0..n).flat_map(|s| (s + 1..n).map(move |t| (s, t))).map(|(s, t)| (s, t, tab[s][t])).collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualEntry {
    pub s: f64,
    pub t: f64,
    pub observer: String,
    pub residual_lambda_star: f64,
    pub residual_lambda: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EviReport {
    pub observers: Vec<String>,
    pub entries: Vec<ResidualEntry>,
    pub worst_lambda_star: f64,
    pub worst_lambda: f64,
    pub tau: f64,
    pub lambda: f64,
    pub lambda_star: f64,
    pub quadrature: String,
}

impl EviReport {
    /// CSV `s,t,observer_id,residual_lambda_star,residual_lambda`.
    pub fn to_csv(&self) -> String {
        use crate::runner::fmt_float as f;
        let mut out = String::from("s,t,observer_id,residual_lambda_star,residual_lambda\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{},{},{}\n", f(e.s), f(e.t), e.observer, f(e.residual_lambda_star), f(e.residual_lambda)));
        }
        out
    }
}

/// Residuals at `λ*` and at `λ` over all observers and sample pairs.
pub fn evi_report(curve: &Curve, observers: &[Observer], lambda: f64, entropy: &EntropySpec, metric: Metric) -> Result<EviReport> {
    if observers.is_empty() {
        return invalid("no observers");
    }
    let phi = energies(curve, entropy)?;
    let ls = lambda_star(lambda);
    let per_obs = observers
        .par_iter()
        .map(|o| -> Result<Vec<ResidualEntry>> {
            let phi_o = entropy.energy(&o.measure);
            if !phi_o.is_finite() {
                return invalid(format!("observer {} has infinite energy", o.id));
            }
            let d2 = distances_to(curve, &o.measure, metric)?;
            let a = residual_table(&curve.times, &d2, &phi, phi_o, ls);
            let b = residual_table(&curve.times, &d2, &phi, phi_o, lambda);
            let n = curve.times.len();
            let mut out = Vec::with_capacity(n * (n - 1) / 2);
            for s in 0..n {
                for t in s + 1..n {
                    out.push(ResidualEntry {
                        s: curve.times[s],
                        t: curve.times[t],
                        observer: o.id.clone(),
                        residual_lambda_star: a[s][t],
                        residual_lambda: b[s][t],
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let entries: Vec<ResidualEntry> = per_obs.into_iter().flatten().collect();
    let worst_lambda_star = entries.iter().map(|e| e.residual_lambda_star).fold(f64::NEG_INFINITY, f64::max);
    let worst_lambda = entries.iter().map(|e| e.residual_lambda).fold(f64::NEG_INFINITY, f64::max);
    let tau = if curve.times.len() > 1 { curve.times[1] - curve.times[0] } else { 0.0 };
    Ok(EviReport {
        observers: observers.iter().map(|o| o.id.clone()).collect(),
        entries,
        worst_lambda_star,
        worst_lambda,
        tau,
        lambda,
        lambda_star: ls,
        quadrature: "left-constant".into(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorBudget {
    pub tau: f64,
    pub kappa: f64,
    pub lambda: f64,
    pub lambda_star: f64,
    /// Slope estimate at the start, `max{slope0, (1+λτ) d(x0,x1)/τ}`.
    pub slope0: f64,
    /// `Δ^τ_n` with the comparison surrogate for `Δ²`.
    pub delta: Vec<f64>,
    /// `Δ^τ_n` with `Δ² = 0`.
    pub delta_zero: Vec<f64>,
    pub delta2_surrogate: Vec<f64>,
    /// Cumulative `∫_0^{t_k} e^{2λ* t} Δ^τ`, `k = 0..=N`.
    pub cumulative: Vec<f64>,
    pub weighted_l1: f64,
    pub weighted_l1_zero: f64,
    /// `τ (4 + τκ) slope0²`.
    pub bound: f64,
    pub pass: bool,
}

/// Discrete error budget of a trajectory; `λ` enters through `min{λ, 0}`.
pub fn error_budget(traj: &MmTrajectory, kappa: f64, lambda: f64) -> Result<ErrorBudget> {
    let n = traj.records.len();
    if n == 0 {
        return invalid("error budget needs at least one step");
    }
    if !(kappa >= 0.0) {
        return invalid("κ must be nonnegative");
    }
    let tau = traj.tau;
    let lam = lambda.min(0.0);
    let ls = lambda_star(lambda);
    let d2: Vec<f64> = traj.records.iter().map(|r| r.d2.max(0.0)).collect();
    // skip[k] = d²(x_k, x_{k+2})
    let skip: Vec<f64> = (0..n.saturating_sub(1))
        .into_par_iter()
        .map(|k| metric_distance_squared(traj.metric, &traj.measures[k], &traj.measures[k + 2]))
        .collect::<Result<_>>()?;
    let slope0 = traj.slope0.max((1.0 + lam * tau) * d2[0].sqrt() / tau);
    let mut delta = Vec::with_capacity(n);
    let mut delta_zero = Vec::with_capacity(n);
    let mut surrogate = Vec::with_capacity(n);
    for k in 0..n {
        if k == 0 {
            let v = (1.0 - 2.0 * lam) * d2[0] + (1.0 + 1.0 / (1.0 + lam * tau)) * slope0 * slope0;
            delta.push(v);
            delta_zero.push(v);
            surrogate.push(0.0);
        } else {
            let s = (2.0 * d2[k - 1] + 2.0 * d2[k] - skip[k - 1]).max(0.0);
            let base = (1.0 - 2.0 * lam + kappa / tau) * d2[k];
            delta.push(base + s / (tau * tau));
            delta_zero.push(base);
            surrogate.push(s);
        }
    }
    let weight = |k: usize| -> f64 {
        let (a, b) = (k as f64 * tau, (k + 1) as f64 * tau);
        ((2.0 * ls * b).exp() - (2.0 * ls * a).exp()) / (2.0 * ls)
    };
    let mut cumulative = vec![0.0];
    let mut zero = 0.0;
    for k in 0..n {
        cumulative.push(cumulative[k] + weight(k) * delta[k]);
        zero += weight(k) * delta_zero[k];
    }
    let weighted_l1 = cumulative[n];
    let bound = tau * (4.0 + tau * kappa) * slope0 * slope0;
    let pass = weighted_l1 <= bound * (1.0 + 1e-9) + 1e-12;
    Ok(ErrorBudget {
        tau,
        kappa,
        lambda,
        lambda_star: ls,
        slope0,
        delta,
        delta_zero,
        delta2_surrogate: surrogate,
        cumulative,
        weighted_l1,
        weighted_l1_zero: zero,
        bound,
        pass,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ContractionReport {
    pub times: Vec<f64>,
    /// `e^{λ* t} d(x¹(t), x²(t))`.
    pub lhs: Vec<f64>,
    /// `d(x¹(0), x²(0)) + (2 ∫_0^t e^{2λ* r}(Δ¹ + Δ²))^{1/2}`.
    pub rhs: Vec<f64>,
    pub worst_margin: f64,
    pub pass: bool,
}

/// Budgeted non-expansion of two trajectories on the same time grid.
pub fn contraction_check(
    a: &MmTrajectory,
    b: &MmTrajectory,
    lambda: f64,
    budgets: (&ErrorBudget, &ErrorBudget),
) -> Result<ContractionReport> {
    if a.tau != b.tau || a.measures.len() != b.measures.len() || a.metric != b.metric {
        return invalid("trajectories must share τ, length and metric");
    }
    let n = a.measures.len();
    if budgets.0.cumulative.len() != n || budgets.1.cumulative.len() != n {
        return Err(Error::DomainMismatch("budgets do not match the trajectories".into()));
    }
    let ls = lambda_star(lambda);
    let d: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|k| Ok(metric_distance_squared(a.metric, &a.measures[k], &b.measures[k])?.max(0.0).sqrt()))
        .collect::<Result<_>>()?;
    let times = a.times();
    let lhs: Vec<f64> = (0..n).map(|k| (ls * times[k]).exp() * d[k]).collect();
    let rhs: Vec<f64> =
        (0..n).map(|k| d[0] + (2.0 * (budgets.0.cumulative[k] + budgets.1.cumulative[k])).max(0.0).sqrt()).collect();
    // Distances carry the solver tolerance; allow a matching slack.
    let slack = 1e-6;
    let worst = lhs.iter().zip(&rhs).map(|(l, r)| r - l).fold(f64::INFINITY, f64::min);
    Ok(ContractionReport { times, lhs, rhs, worst_margin: worst, pass: worst >= -slack })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub tau: f64,
    pub tau_fine: f64,
    /// `sup_{t ≤ T} d(x^τ(t), x^{τ'}(t))` over the finer grid.
    pub sup_gap: f64,
    /// Previous gap divided by this one.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceTable {
    pub metric: Metric,
    pub t_end: f64,
    pub rows: Vec<ConvergenceRow>,
    pub monotone: bool,
    /// One trajectory per `τ`, in input order.
    #[serde(skip)]
    pub trajectories: Vec<MmTrajectory>,
}

impl ConvergenceTable {
    pub fn to_csv(&self) -> String {
        use crate::runner::fmt_float as f;
        let mut out = String::from("tau,tau_fine,sup_gap,ratio\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", f(r.tau), f(r.tau_fine), f(r.sup_gap), r.ratio.map(f).unwrap_or_default()));
        }
        out
    }
}

/// Runs the MM scheme for each `τ` to time `T` and compares consecutive
/// piecewise-constant interpolants.
pub fn convergence_study(
    mu0: &DiscreteMeasure,
    entropy: &EntropySpec,
    metric: Metric,
    taus: &[f64],
    t_end: f64,
    base: &MmConfig,
) -> Result<ConvergenceTable> {
    if taus.len() < 2 || taus.windows(2).any(|w| !(w[1] < w[0])) {
        return invalid("need at least two decreasing time steps");
    }
    let trajs = taus
        .par_iter()
        .map(|&tau| {
            let steps = (t_end / tau).round() as usize;
            if ((steps as f64) * tau - t_end).abs() > 1e-9 * t_end.max(1.0) {
                return invalid(format!("T = {t_end} is not a multiple of τ = {tau}"));
            }
            let traj = run_mm(mu0, entropy, &MmConfig { tau, steps, metric, ..base.clone() })?;
            if let Some(r) = traj.records.iter().find(|r| !r.converged) {
                return Err(Error::Solver(format!(
                    "τ = {tau}: step {} not converged (gap {:.2e}, stationarity {:.2e})",
                    r.k, r.gap, r.stationarity
                )));
            }
            Ok(traj)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for w in trajs.windows(2) {
        let (c, f) = (&w[0], &w[1]);
        let gaps = (0..f.measures.len())
            .into_par_iter()
            .map(|j| {
                let t = j as f64 * f.tau;
                let k = ((t / c.tau) + 1e-9).floor() as usize;
                Ok(metric_distance_squared(metric, &c.measures[k.min(c.measures.len() - 1)], &f.measures[j])?.max(0.0).sqrt())
            })
            .collect::<Result<Vec<f64>>>()?;
        let sup_gap = gaps.into_iter().fold(0.0, f64::max);
        let ratio = rows.last().map(|r| r.sup_gap / sup_gap);
        rows.push(ConvergenceRow { tau: c.tau, tau_fine: f.tau, sup_gap, ratio });
    }
    let monotone = rows.windows(2).all(|w| w[1].sup_gap < w[0].sup_gap);
    Ok(ConvergenceTable { metric, t_end, rows, monotone, trajectories: trajs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::GridDomain;
    use std::sync::Arc;

    fn grid(n: usize) -> Arc<GridDomain> {
        Arc::new(GridDomain::interval(0.0, 1.0, n).unwrap())
    }

    #[test]
    fn zero_energy_constant_curve_has_zero_residual() {
        let mu = DiscreteMeasure::from_fn(grid(6), |x| 1.0 + x[0]).unwrap();
        let curve = Curve::constant(&mu, 0.1, 4);
        for o in default_observers(&mu, Metric::Hk).unwrap() {
            let r = evi_residual_integrated(&curve, &o.measure, 0.0, &EntropySpec::zero(), Metric::Hk).unwrap();
            assert!(r.iter().all(|(_, _, v)| *v == 0.0));
        }
    }

    #[test]
    fn residual_is_additive() {
        let times = vec![0.0, 0.5, 1.0, 1.5];
        let d2 = vec![1.0, 0.7, 0.2, 0.4];
        let phi = vec![3.0, 2.0, 1.5, 1.4];
        let tab = residual_table(&times, &d2, &phi, 0.3, -0.7);
        for s in 0..4 {
            assert_eq!(tab[s][s], 0.0);
            for u in s..4 {
                for t in u..4 {
                    assert!((tab[s][u] + tab[u][t] - tab[s][t]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn collinear_surrogate_is_squared_difference() {
        // On the Hellinger line d(c, c') = |√c − √c'|.
        let (c0, c1, c2): (f64, f64, f64) = (2.0, 1.2, 0.9);
        let d01 = c0.sqrt() - c1.sqrt();
        let d12 = c1.sqrt() - c2.sqrt();
        let d02 = c0.sqrt() - c2.sqrt();
        let s = 2.0 * d01 * d01 + 2.0 * d12 * d12 - d02 * d02;
        assert!((s - (d01 - d12).powi(2)).abs() < 1e-15);
    }

    #[test]
    fn stationary_trajectory_has_zero_budget_after_start() {
        let mu = DiscreteMeasure::uniform(grid(5), 1.0).unwrap();
        let traj = run_mm(&mu, &EntropySpec::zero(), &MmConfig::new(Metric::Hk, 0.1, 3)).unwrap();
        let b = error_budget(&traj, 0.5, 0.0).unwrap();
        assert!(b.delta.iter().all(|v| v.abs() < 1e-12), "{:?}", b.delta);
        assert!(b.pass);
    }
}
