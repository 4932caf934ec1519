//! Density-bound checkers for minimizing-movement trajectories.

use serde::{Deserialize, Serialize};

use crate::entropy::{log_grid, EntropySpec};
use crate::mm::MmTrajectory;

/// Free constants of the bounds; `None` selects the tightest admissible value.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundParams {
    pub c_upp: Option<f64>,
    pub c_low: Option<f64>,
    /// Threshold `c_*` of `E'(c) ≥ −e_*/√c` for `c ≥ c_*`.
    pub c_star: Option<f64>,
    pub e_star: Option<f64>,
    pub slack: f64,
}

impl Default for BoundParams {
    fn default() -> Self {
        Self { c_upp: None, c_low: None, c_star: None, e_star: None, slack: 1e-6 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundCheck {
    pub name: String,
    pub applicable: bool,
    pub note: String,
    /// Smallest `bound − value` (upper) or `value − bound` (lower) over steps.
    pub worst_margin: f64,
    pub first_failure: Option<usize>,
    pub pass: bool,
}

impl BoundCheck {
    fn skipped(name: &str, note: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            applicable: false,
            note: note.into(),
            worst_margin: f64::INFINITY,
            first_failure: None,
            pass: true,
        }
    }

    fn from_margins(name: &str, note: impl Into<String>, margins: &[f64], slack: f64) -> Self {
        let mut worst = f64::INFINITY;
        let mut first = None;
        for (k, &m) in margins.iter().enumerate() {
            worst = worst.min(m);
            if m < -slack && first.is_none() {
                first = Some(k + 1);
            }
        }
        Self { name: name.into(), applicable: true, note: note.into(), worst_margin: worst, first_failure: first, pass: first.is_none() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DensityBoundReport {
    pub checks: Vec<BoundCheck>,
}

impl DensityBoundReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&BoundCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Largest admissible `c_low`: any point with `E' < 0`, pushed to the sign change.
fn resolve_c_low(entropy: &EntropySpec, params: &BoundParams) -> Option<f64> {
    if let Some(c) = params.c_low {
        return (entropy.de(c) < 0.0).then_some(c);
    }
    if let Some(c) = entropy.c_low() {
        return Some(c);
    }
    if let Some(r) = entropy.derivative_root() {
        return Some(r);
    }
    (entropy.de(1e12) < 0.0).then_some(f64::INFINITY)
}

/// `min_{c_upp} max{c_upp, c_max / (1 + 2τ min{E'(c_upp), 0})²}` over admissible `c_upp`.
fn incremental_upper(entropy: &EntropySpec, tau: f64, c_max: f64, fixed: Option<f64>) -> f64 {
    let bound = |c: f64| -> Option<f64> {
        let e = entropy.de(c);
        if !(e * tau > -0.5) {
            return None;
        }
        let k = 1.0 + 2.0 * tau * e.min(0.0);
        Some(c.max(c_max / (k * k)))
    };
    if let Some(c) = fixed {
        return bound(c).unwrap_or(f64::INFINITY);
    }
    let mut cands = log_grid(1e-6, 1e6, 400);
    cands.push(c_max);
    if let Some(r) = entropy.derivative_root() {
        cands.push(r);
    }
    cands.into_iter().filter_map(bound).fold(f64::INFINITY, f64::min)
}

/// Smallest `e_* ≥ 0` with `E'(c) ≥ −e_*/√c` on a log grid of `[c_*, 1e8]`.
fn resolve_e_star(entropy: &EntropySpec, c_star: f64) -> f64 {
    log_grid(c_star, c_star.max(1.0) * 1e8, 400)
        .into_iter()
        .map(|c| -entropy.de(c) * c.sqrt())
        .fold(0.0, f64::max)
}

/// HK bounds: incremental upper and lower bounds and their iterated forms.
pub fn check_density_bounds_hk(traj: &MmTrajectory, entropy: &EntropySpec, params: &BoundParams) -> DensityBoundReport {
    let tau = traj.tau;
    let ms = &traj.measures;
    let slack = params.slack;
    let mut checks = Vec::new();
    let maxs: Vec<f64> = ms.iter().map(|m| m.max_density()).collect();
    let mins: Vec<f64> = ms.iter().map(|m| m.min_density()).collect();
    let steps = ms.len() - 1;

    let up: Vec<f64> =
        (1..=steps).map(|k| incremental_upper(entropy, tau, maxs[k - 1], params.c_upp) - maxs[k]).collect();
    checks.push(BoundCheck::from_margins("incremental_upper", "ρ_k ≤ max{c_upp, c_max/(1+2τ min{E'(c_upp),0})²}", &up, slack));

    let c_low = resolve_c_low(entropy, params);
    match c_low {
        Some(cl) => {
            let low: Vec<f64> = (1..=steps).map(|k| mins[k] - cl.min(mins[k - 1])).collect();
            checks.push(BoundCheck::from_margins("incremental_lower", format!("ρ_k ≥ min{{c_low, c_min}}, c_low = {cl}"), &low, slack));
            let it: Vec<f64> = (1..=steps).map(|k| mins[k] - cl.min(mins[0])).collect();
            checks.push(BoundCheck::from_margins("iterated_lower", "ρ_k ≥ min{ρ_0 min, c_low}", &it, slack));
        }
        None => {
            checks.push(BoundCheck::skipped("incremental_lower", "no c_low with E'(c_low) < 0"));
            checks.push(BoundCheck::skipped("iterated_lower", "no c_low with E'(c_low) < 0"));
        }
    }

    // E' is nondecreasing, so the infimum over c ≥ ρ̄0 sits at ρ̄0.
    let s_bar = entropy.de(maxs[0]);
    if tau * s_bar >= -0.25 {
        let rate = 8.0 * (-s_bar).max(0.0);
        let it: Vec<f64> = (1..=steps).map(|k| maxs[0] * (rate * k as f64 * tau).exp() - maxs[k]).collect();
        checks.push(BoundCheck::from_margins("iterated_upper", format!("ρ_k ≤ ρ̄0 exp(8 max{{−S̄,0}} kτ), S̄ = {s_bar}"), &it, slack));
    } else {
        checks.push(BoundCheck::skipped("iterated_upper", "τ S̄ < −1/4"));
    }

    let c_star = params.c_star.unwrap_or(1.0);
    let e_star = params.e_star.unwrap_or_else(|| resolve_e_star(entropy, c_star));
    let hypothesis = log_grid(c_star, c_star.max(1.0) * 1e8, 400)
        .into_iter()
        .all(|c| entropy.de(c) >= -e_star / c.sqrt() - 1e-12);
    if hypothesis && e_star.is_finite() {
        let base = maxs[0].max(c_star).max(4.0 * tau * tau * e_star * e_star).sqrt();
        let it: Vec<f64> = (1..=steps)
            .map(|k| {
                let r = base + 4.0 * e_star * k as f64 * tau;
                r * r - maxs[k]
            })
            .collect();
        checks.push(BoundCheck::from_margins("iterated_upper_quadratic", format!("c_* = {c_star}, e_* = {e_star}"), &it, slack));
    } else {
        checks.push(BoundCheck::skipped("iterated_upper_quadratic", "E'(c) ≥ −e_*/√c fails"));
    }

    if let Some(cs) = entropy.derivative_root() {
        let lo = cs.min(mins[0]);
        let hi = cs.max(maxs[0]);
        let g: Vec<f64> = (1..=steps).map(|k| (mins[k] - lo).min(hi - maxs[k])).collect();
        checks.push(BoundCheck::from_margins("sign_change", format!("min{{c_*, ρ̲0}} ≤ ρ_k ≤ max{{c_*, ρ̄0}}, c_* = {cs}"), &g, slack));
    } else {
        checks.push(BoundCheck::skipped("sign_change", "E' has no sign change"));
    }
    DensityBoundReport { checks }
}

/// SHK bounds: `[min ρ_k, max ρ_k]` nested in `[min ρ_{k−1}, max ρ_{k−1}]`.
pub fn check_density_bounds_shk(traj: &MmTrajectory, slack: f64) -> DensityBoundReport {
    let ms = &traj.measures;
    let steps = ms.len() - 1;
    let lower: Vec<f64> = (1..=steps).map(|k| ms[k].min_density() - ms[k - 1].min_density()).collect();
    let upper: Vec<f64> = (1..=steps).map(|k| ms[k - 1].max_density() - ms[k].max_density()).collect();
    DensityBoundReport {
        checks: vec![
            BoundCheck::from_margins("shk_min_nondecreasing", "c_min ≤ ρ_k", &lower, slack),
            BoundCheck::from_margins("shk_max_nonincreasing", "ρ_k ≤ c_max", &upper, slack),
        ],
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MonotoneReport {
    /// Violating share of the transported plan mass, per step.
    pub fractions: Vec<f64>,
    pub worst_fraction: f64,
    pub pass: bool,
}

/// Share of off-diagonal plan mass sent to nodes of larger new density.
///
/// Entries below `1e−6` of the largest entry are ignored; the soft threshold is 1%.
pub fn monotone_test_lemma_check(traj: &MmTrajectory, tol: f64) -> MonotoneReport {
    let mut fractions = Vec::with_capacity(traj.plans.len());
    for (k, plan) in traj.plans.iter().enumerate() {
        let rho1 = traj.measures[k + 1].density();
        let big = plan.entries.iter().map(|e| e.mass).fold(0.0, f64::max);
        let total: f64 = plan.total_mass();
        let mut bad = 0.0;
        for e in &plan.entries {
            if e.i == e.j || e.mass < 1e-6 * big {
                continue;
            }
            if rho1[e.j] > rho1[e.i] + tol * (1.0 + rho1[e.i]) {
                bad += e.mass;
            }
        }
        fractions.push(if total > 0.0 { bad / total } else { 0.0 });
    }
    let worst = fractions.iter().cloned().fold(0.0, f64::max);
    MonotoneReport { fractions, worst_fraction: worst, pass: worst < 0.01 }
}
