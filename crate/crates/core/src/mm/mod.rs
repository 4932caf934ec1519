//! Minimizing-movement scheme `μ_k ∈ argmin d²(μ_{k−1}, ·)/(2τ) + 𝖤(·)` for
//! the HK and SHK metrics.
//!
//! One HK step is a single convex program. Writing the LET through its dual,
//! the step value is
//!
//! `max_{f+g ≤ ℓ} (1/2τ) Σ a_i (1 − e^{−f_i}) + Σ w_j min_ρ [y_j ρ + E(ρ)]`,
//! `y_j = (1 − e^{−g_j}) / (2τ)`,
//!
//! which the interior-point solver in [`crate::hk`] maximizes directly; the
//! new density is the inner argmin. The SHK step uses `SHK² = φ(HK²)` with
//! `φ(s) = 4 arcsin²(√s/2)` convex and increasing, so its stationary point is
//! a mass-constrained HK step with the effective step `τ/φ'(HK²)`; that scalar
//! is found by a bracketed fixed-point iteration.

pub mod bounds;
pub mod scalar;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::entropy::EntropySpec;
use crate::error::{invalid, Error, Result};
use crate::hk::barrier::{exact_argmin, BarrierOptions, DualProblem, Pair, Target};
use crate::hk::{let_cost, transport_cost, Metric, PlanEntry, TransportPlan};
use crate::measures::{measure_like, DiscreteMeasure, DomainSpec, GridDomain};

pub use bounds::{
    check_density_bounds_hk, check_density_bounds_shk, monotone_test_lemma_check, BoundCheck, BoundParams,
    DensityBoundReport, MonotoneReport,
};
pub use scalar::{check_scalar_bounds, scalar_mm, scalar_step, ScalarBoundReport};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MmConfig {
    pub tau: f64,
    pub steps: usize,
    pub metric: Metric,
    /// Stationarity tolerance on the log-density gradient.
    pub tol_g: f64,
    /// Acceptance threshold on the certified duality gap of each convex step,
    /// relative to `1 + |objective| + mass/(2τ)`. The solver itself always
    /// aims for `1e−10` and keeps its best certificate.
    pub dist_tol: f64,
    /// Densities below this are reported as having hit the floor.
    pub density_floor: f64,
    pub max_newton: usize,
    /// Extra solves from perturbed dual starts per step (0 disables).
    pub restarts: usize,
    pub seed: u64,
}

impl Default for MmConfig {
    fn default() -> Self {
        Self {
            tau: 0.01,
            steps: 10,
            metric: Metric::Hk,
            tol_g: 1e-7,
            dist_tol: 1e-8,
            density_floor: 1e-12,
            max_newton: 600,
            restarts: 0,
            seed: 0,
        }
    }
}

impl MmConfig {
    pub fn new(metric: Metric, tau: f64, steps: usize) -> Self {
        Self { metric, tau, steps, ..Self::default() }
    }

    /// Step-size conditions `τ > 0`, `1 + λτ > 0` and `τλ > −1/2` for `λ < 0`.
    pub fn validate(&self, lambda: f64) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return invalid(format!("time step must be positive, got {}", self.tau));
        }
        if lambda < 0.0 && !(self.tau * lambda > -0.5) {
            return invalid(format!("τλ = {} violates τλ > −1/2", self.tau * lambda));
        }
        if !(1.0 + lambda * self.tau > 0.0) {
            return invalid("1 + λτ must be positive");
        }
        if !(self.tol_g > 0.0 && self.dist_tol > 0.0) {
            return invalid("tolerances must be positive");
        }
        Ok(())
    }
}

/// One accepted minimizing-movement step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub measure: DiscreteMeasure,
    pub plan: TransportPlan,
    /// LET value of `plan`; an upper bound for `HK²(μ0, μ1)`.
    pub hk2: f64,
    /// Squared distance in the step's metric.
    pub d2: f64,
    pub energy: f64,
    /// `d2/(2τ) + energy`.
    pub objective: f64,
    /// Objective of the stay-put candidate, `𝖤(μ0)`.
    pub stay_put: f64,
    /// Sup over nodes of `ρ |∂_ρ objective|` (mass-projected for SHK).
    pub stationarity: f64,
    /// Duality gap of the convex step.
    pub gap: f64,
    /// Effective HK step of the SHK fixed point (`τ` for HK).
    pub tau_eff: f64,
    pub newton_steps: usize,
    pub converged: bool,
    /// Largest objective spread across restarts.
    pub restart_spread: f64,
    /// The stay-put candidate beat the solver output and was returned.
    pub kept_start: bool,
}

/// Joint solution of one convex step on the full grid.
struct Joint {
    rho: Vec<f64>,
    plan: TransportPlan,
    /// `(1 − e^{−g_j})/(2τ)` per node, the HK part of the density gradient.
    price: Vec<f64>,
    gap: f64,
    primal: f64,
    steps: usize,
    converged: bool,
}

fn solve_joint(
    mu0: &DiscreteMeasure,
    entropy: &EntropySpec,
    scale: f64,
    mass: Option<f64>,
    cfg: &MmConfig,
    shift: Option<(Vec<f64>, Vec<f64>)>,
) -> Result<Joint> {
    let dom = mu0.domain();
    let n = dom.len();
    let src: Vec<usize> = mu0.support();
    let mut tgt_pos = vec![usize::MAX; n];
    let mut tgt = Vec::new();
    let mut src_pos = vec![usize::MAX; n];
    let mut src_used = Vec::new();
    let mut pairs = Vec::new();
    for &i in &src {
        for j in 0..n {
            let c = transport_cost(dom.distance(i, j));
            if !c.is_finite() {
                continue;
            }
            if src_pos[i] == usize::MAX {
                src_pos[i] = src_used.len();
                src_used.push(i);
            }
            if tgt_pos[j] == usize::MAX {
                tgt_pos[j] = tgt.len();
                tgt.push(j);
            }
            pairs.push(Pair { i: src_pos[i], j: tgt_pos[j], cost: c });
        }
    }
    if pairs.is_empty() {
        return invalid("initial measure is zero; a step needs positive mass");
    }
    if mass.is_some() && tgt.len() < n {
        return invalid("mass-constrained step needs every node within π/2 of the support");
    }
    let mut shift = shift;
    if let Some((sf, sg)) = shift.as_mut() {
        sf.truncate(src_used.len());
        sg.truncate(tgt.len());
    }
    let dp = DualProblem {
        src: src_used.iter().map(|&i| mu0.node_mass(i)).collect(),
        target: Target::Energy { entropy, weights: tgt.iter().map(|&j| dom.weight(j)).collect(), mass },
        pairs,
        scale,
    };
    let opts = BarrierOptions { gap_tol: cfg.dist_tol.min(1e-10), max_newton: cfg.max_newton, start_shift: shift };
    let sol = dp.solve(&opts)?;
    let magnitude = 1.0 + sol.primal.abs() + scale * dp.src.iter().sum::<f64>();
    let accepted = sol.gap() <= cfg.dist_tol * magnitude;

    let mut rho = vec![0.0; n];
    let mut price = vec![scale; n];
    for (k, &j) in tgt.iter().enumerate() {
        rho[j] = sol.rho[k];
        price[j] = scale * (1.0 - (-sol.g[k]).exp());
    }
    // Nodes out of reach of the support only see the creation cost.
    for j in 0..n {
        if tgt_pos[j] == usize::MAX {
            rho[j] = exact_argmin(entropy, scale);
            if !rho[j].is_finite() {
                return Err(Error::Solver("unbounded density at an unreachable node".into()));
            }
        }
    }
    let plan = TransportPlan {
        entries: dp
            .pairs
            .iter()
            .zip(&sol.plan)
            .map(|(p, h)| PlanEntry { i: src_used[p.i], j: tgt[p.j], mass: *h })
            .collect(),
    };
    Ok(Joint { rho, plan, price, gap: sol.gap(), primal: sol.primal, steps: sol.newton_steps, converged: accepted })
}

/// `φ(s) = 4 arcsin²(√s / 2)`, mapping `HK²` to `SHK²` on probability measures.
pub fn shk2_of_hk2(s: f64) -> f64 {
    let a = (0.5 * s.clamp(0.0, 4.0).sqrt()).min(1.0).asin();
    4.0 * a * a
}

/// `φ'(s)`; equals 1 at `s = 0` and `π/2` at `s = 2`.
pub fn shk2_slope(s: f64) -> f64 {
    let u = 0.5 * s.max(0.0).sqrt();
    if u < 1e-6 {
        return 1.0 + s / 12.0;
    }
    u.asin() / (u * (1.0 - u * u).sqrt())
}

/// Sup-norm of `ρ_j (p_j + E'(ρ_j) + κ̂)` with `κ̂` the least-squares mass multiplier.
fn stationarity(rho: &[f64], price: &[f64], entropy: &EntropySpec, weights: &[f64], project: bool) -> f64 {
    let upper = entropy.upper_bound();
    let grad: Vec<f64> = rho
        .iter()
        .zip(price)
        .map(|(&r, &p)| {
            let v = p + entropy.de(r);
            // At the upper constraint only the outward component counts.
            match upper {
                Some(u) if r >= u * (1.0 - 1e-9) => v.max(0.0),
                _ => v,
            }
        })
        .collect();
    let kappa = if project {
        let num: f64 = (0..rho.len()).map(|j| weights[j] * rho[j] * rho[j] * grad[j]).sum();
        let den: f64 = (0..rho.len()).map(|j| weights[j] * rho[j] * rho[j]).sum();
        if den > 0.0 {
            -num / den
        } else {
            0.0
        }
    } else {
        0.0
    };
    rho.iter().zip(&grad).map(|(r, g)| (r * (g + kappa)).abs()).fold(0.0, f64::max)
}

fn restart_shifts(cfg: &MmConfig, n: usize, salt: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    (0..cfg.restarts)
        .map(|_| {
            let f = (0..n).map(|_| rng.gen_range(-0.2..0.2)).collect();
            let g = (0..n).map(|_| rng.gen_range(-0.2..0.2)).collect();
            (f, g)
        })
        .collect()
}

/// One HK minimizing-movement step.
pub fn mm_step_hk(mu0: &DiscreteMeasure, tau: f64, entropy: &EntropySpec, cfg: &MmConfig) -> Result<StepOutcome> {
    let cfg = MmConfig { tau, ..cfg.clone() };
    cfg.validate(entropy.lambda())?;
    step(mu0, entropy, &cfg, Metric::Hk, 0)
}

/// One SHK minimizing-movement step on probability measures.
pub fn mm_step_shk(nu0: &DiscreteMeasure, tau: f64, entropy: &EntropySpec, cfg: &MmConfig) -> Result<StepOutcome> {
    if (nu0.mass() - 1.0).abs() >= 1e-8 {
        return invalid(format!("SHK step needs a probability measure, mass is {}", nu0.mass()));
    }
    let cfg = MmConfig { tau, ..cfg.clone() };
    cfg.validate(entropy.lambda())?;
    step(nu0, entropy, &cfg, Metric::Shk, 0)
}

fn step(mu0: &DiscreteMeasure, entropy: &EntropySpec, cfg: &MmConfig, metric: Metric, salt: u64) -> Result<StepOutcome> {
    let tau = cfg.tau;
    let stay_put = entropy.energy(mu0);
    let (joint, tau_eff) = match metric {
        Metric::Hk => (solve_joint(mu0, entropy, 0.5 / tau, None, cfg, None)?, tau),
        Metric::Shk => shk_fixed_point(mu0, entropy, cfg, None)?,
    };
    let mut spread: f64 = 0.0;
    let n = mu0.len();
    for sh in restart_shifts(cfg, n, salt) {
        let other = match metric {
            Metric::Hk => solve_joint(mu0, entropy, 0.5 / tau, None, cfg, Some(sh))?,
            Metric::Shk => shk_fixed_point(mu0, entropy, cfg, Some(sh))?.0,
        };
        spread = spread.max((other.primal - joint.primal).abs());
    }

    let measure = measure_like(mu0, joint.rho.clone())?;
    let hk2 = let_cost(&joint.plan, mu0, &measure)?;
    let d2 = metric.from_hk2(hk2);
    let energy = entropy.energy(&measure);
    let objective = d2 / (2.0 * tau) + energy;
    let weights = mu0.domain().weights();
    let mut price = joint.price.clone();
    if metric == Metric::Shk {
        // Rescale the HK price from the effective step back to the SHK gradient.
        let fac = shk2_slope(hk2) * tau_eff / tau;
        price.iter_mut().for_each(|p| *p *= fac);
    }
    let stat = stationarity(&joint.rho, &price, entropy, weights, metric == Metric::Shk);
    let converged = joint.converged && stat <= cfg.tol_g;

    if objective > stay_put {
        return Ok(StepOutcome {
            measure: mu0.clone(),
            plan: identity_plan(mu0),
            hk2: 0.0,
            d2: 0.0,
            energy: stay_put,
            objective: stay_put,
            stay_put,
            stationarity: stat,
            gap: joint.gap,
            tau_eff,
            newton_steps: joint.steps,
            converged,
            restart_spread: spread,
            kept_start: true,
        });
    }
    Ok(StepOutcome {
        measure,
        plan: joint.plan,
        hk2,
        d2,
        energy,
        objective,
        stay_put,
        stationarity: stat,
        gap: joint.gap,
        tau_eff,
        newton_steps: joint.steps,
        converged,
        restart_spread: spread,
        kept_start: false,
    })
}

fn identity_plan(mu: &DiscreteMeasure) -> TransportPlan {
    TransportPlan { entries: mu.support().into_iter().map(|i| PlanEntry { i, j: i, mass: mu.node_mass(i) }).collect() }
}

/// Finds `τ' ∈ [2τ/π, τ]` with `τ' = τ / φ'(HK²(ν0, ν1(τ')))`.
fn shk_fixed_point(
    nu0: &DiscreteMeasure,
    entropy: &EntropySpec,
    cfg: &MmConfig,
    shift: Option<(Vec<f64>, Vec<f64>)>,
) -> Result<(Joint, f64)> {
    let tau = cfg.tau;
    let (mut lo, mut hi) = (2.0 * tau / std::f64::consts::PI, tau);
    let mut tp = tau;
    let mut last = None;
    for _ in 0..100 {
        let joint = solve_joint(nu0, entropy, 0.5 / tp, Some(1.0), cfg, shift.clone())?;
        let nu1 = measure_like(nu0, joint.rho.clone())?;
        let s = let_cost(&joint.plan, nu0, &nu1)?;
        let target = tau / shk2_slope(s);
        let h = tp - target;
        if h.abs() <= 1e-13 * tau || hi - lo <= 1e-15 * tau {
            return Ok((joint, tp));
        }
        if h > 0.0 {
            hi = tp;
        } else {
            lo = tp;
        }
        last = Some((joint, tp));
        tp = if target > lo && target < hi { target } else { 0.5 * (lo + hi) };
    }
    last.ok_or_else(|| Error::Solver("SHK fixed point did not start".into()))
}

/// Per-step diagnostics of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub d2: f64,
    pub energy: f64,
    pub objective: f64,
    pub stay_put: f64,
    pub min_rho: f64,
    pub max_rho: f64,
    pub mass: f64,
    /// `d(μ_{k−1}, μ_k) / τ`.
    pub slope_surrogate: f64,
    pub stationarity: f64,
    pub gap: f64,
    pub converged: bool,
    /// `(1 + λτ) d(μ_{k−1}, μ_k)/τ ≤` slope surrogate at `μ_{k−1}` plus slack.
    pub euler_ok: bool,
    pub restart_spread: f64,
    pub newton_steps: usize,
}

#[derive(Debug, Clone)]
pub struct MmTrajectory {
    pub tau: f64,
    pub metric: Metric,
    pub measures: Vec<DiscreteMeasure>,
    /// `records[k−1]` describes the step to `measures[k]`.
    pub records: Vec<StepRecord>,
    /// Plan of each step, aligned with `records`.
    pub plans: Vec<TransportPlan>,
    /// Slope estimate at `μ0` used for the first Euler check.
    pub slope0: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryJson {
    tau: f64,
    metric: Metric,
    domain: DomainSpec,
    slope0: f64,
    densities: Vec<Vec<f64>>,
    records: Vec<StepRecord>,
}

impl MmTrajectory {
    pub fn energies(&self, entropy: &EntropySpec) -> Vec<f64> {
        self.measures.iter().map(|m| entropy.energy(m)).collect()
    }

    /// Times `kτ` of the stored measures.
    pub fn times(&self) -> Vec<f64> {
        (0..self.measures.len()).map(|k| k as f64 * self.tau).collect()
    }

    /// Plans are not serialized.
    pub fn to_json_value(&self) -> serde_json::Value {
        let t = TrajectoryJson {
            tau: self.tau,
            metric: self.metric,
            domain: self.measures[0].domain().spec().clone(),
            slope0: self.slope0,
            densities: self.measures.iter().map(|m| m.density().to_vec()).collect(),
            records: self.records.clone(),
        };
        serde_json::to_value(t).expect("trajectory serializes")
    }

    pub fn from_json_value(v: serde_json::Value) -> Result<Self> {
        let t: TrajectoryJson = serde_json::from_value(v)?;
        if t.densities.is_empty() || t.records.len() + 1 != t.densities.len() {
            return invalid("trajectory needs n + 1 densities for n records");
        }
        let dom = std::sync::Arc::new(GridDomain::from_spec(t.domain)?);
        let measures = t
            .densities
            .into_iter()
            .map(|d| DiscreteMeasure::new(dom.clone(), d))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { tau: t.tau, metric: t.metric, measures, records: t.records, plans: Vec::new(), slope0: t.slope0 })
    }

    /// Per-step CSV `k,d2,energy,min_rho,max_rho,slope_surrogate,converged`.
    pub fn to_csv(&self) -> String {
        use crate::runner::fmt_float as f;
        let mut out = String::from("k,d2,energy,min_rho,max_rho,slope_surrogate,converged\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.k,
                f(r.d2),
                f(r.energy),
                f(r.min_rho),
                f(r.max_rho),
                f(r.slope_surrogate),
                u8::from(r.converged)
            ));
        }
        out
    }
}

/// Runs `cfg.steps` steps from `mu0`.
///
/// `slope0` bounds the metric slope at `μ0` for the first Euler check; pass
/// `None` to use the Onsager slope of the formal gradient-flow equation.
pub fn run_mm(mu0: &DiscreteMeasure, entropy: &EntropySpec, cfg: &MmConfig) -> Result<MmTrajectory> {
    run_mm_with_slope(mu0, entropy, cfg, None)
}

pub fn run_mm_with_slope(
    mu0: &DiscreteMeasure,
    entropy: &EntropySpec,
    cfg: &MmConfig,
    slope0: Option<f64>,
) -> Result<MmTrajectory> {
    cfg.validate(entropy.lambda())?;
    if cfg.metric == Metric::Shk && (mu0.mass() - 1.0).abs() >= 1e-8 {
        return invalid("SHK run needs a probability measure");
    }
    let lambda = entropy.lambda();
    let slope0 = match slope0 {
        Some(s) => s,
        None => crate::pde::onsager_slope(mu0, entropy, cfg.metric, &crate::pde::Onsager::default()),
    };
    let mut measures = vec![mu0.clone()];
    let mut records = Vec::with_capacity(cfg.steps);
    let mut plans = Vec::with_capacity(cfg.steps);
    let mut prev_slope = slope0;
    for k in 1..=cfg.steps {
        let cur = measures.last().expect("nonempty");
        let out = step(cur, entropy, cfg, cfg.metric, k as u64)?;
        log::debug!("mm step {k}: d2 {:.3e} energy {:.6e} gap {:.1e}", out.d2, out.energy, out.gap);
        let surrogate = out.d2.max(0.0).sqrt() / cfg.tau;
        let slack = 1e-6 * (1.0 + prev_slope) + (out.gap.abs() + out.restart_spread).sqrt() / cfg.tau;
        let euler_ok = (1.0 + lambda * cfg.tau) * surrogate <= prev_slope + slack;
        records.push(StepRecord {
            k,
            d2: out.d2,
            energy: out.energy,
            objective: out.objective,
            stay_put: out.stay_put,
            min_rho: out.measure.min_density(),
            max_rho: out.measure.max_density(),
            mass: out.measure.mass(),
            slope_surrogate: surrogate,
            stationarity: out.stationarity,
            gap: out.gap,
            converged: out.converged,
            euler_ok,
            restart_spread: out.restart_spread,
            newton_steps: out.newton_steps,
        });
        prev_slope = surrogate;
        plans.push(out.plan);
        measures.push(out.measure);
    }
    Ok(MmTrajectory { tau: cfg.tau, metric: cfg.metric, measures, records, plans, slope0 })
}
