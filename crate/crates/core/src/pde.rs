//! Finite-volume and ODE oracles for the formal gradient-flow equations
//!
//! `ρ̇ = α div(ρE''(ρ)∇ρ) − βρE'(ρ)` (HK) and
//! `ρ̇ = α div(ρE''(ρ)∇ρ) − βρ(E'(ρ) − ⟨E'⟩_ρ)` (SHK),
//!
//! with no-flux boundaries. Fluxes live on grid edges and are divided by the
//! trapezoid node weights, so `Σ w_i ρ̇_i` telescopes to the reaction part.

use std::time::Instant;

use rayon::prelude::*;

use serde::{Deserialize, Serialize};

use crate::entropy::EntropySpec;
use crate::error::{invalid, Error, Result};
use crate::hk::Metric;
use crate::measures::{measure_like, DiscreteMeasure};
use crate::mm::{run_mm, MmConfig, MmTrajectory};

/// Onsager coefficients; the HK metric corresponds to `α = 1`, `β = 4`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Onsager {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for Onsager {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 4.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdeConfig {
    pub alpha: f64,
    pub beta: f64,
    /// Largest time step; the stability bound may shrink it.
    pub dt: f64,
    pub t_end: f64,
    /// Fraction of the explicit stability bound actually used.
    pub safety: f64,
    /// Spacing of stored snapshots (0 stores only the end state).
    pub record_every: f64,
}

impl Default for PdeConfig {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 4.0, dt: 1e-3, t_end: 0.1, safety: 0.4, record_every: 0.0 }
    }
}

impl PdeConfig {
    fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return invalid("Onsager coefficients must be nonnegative");
        }
        if !(self.dt > 0.0 && self.t_end >= 0.0 && self.safety > 0.0 && self.safety <= 1.0) {
            return invalid("need dt > 0, t_end ≥ 0 and safety in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PdeTrajectory {
    pub times: Vec<f64>,
    pub densities: Vec<Vec<f64>>,
    pub steps: usize,
    /// Mass removed or added by clipping negative densities.
    pub clipped_mass: f64,
    /// Largest per-step change of the mass not explained by the reaction term.
    pub max_mass_drift: f64,
    pub halvings: usize,
}

impl PdeTrajectory {
    pub fn final_density(&self) -> &[f64] {
        self.densities.last().expect("trajectory is never empty")
    }
}

/// Mean `Σ wρE'(ρ) / Σ wρ` entering the SHK reaction term.
fn shk_mean(rho: &[f64], w: &[f64], de: &[f64]) -> f64 {
    let m: f64 = rho.iter().zip(w).map(|(r, w)| r * w).sum();
    if m <= 0.0 {
        return 0.0;
    }
    rho.iter().zip(w).zip(de).map(|((r, w), e)| r * w * e).sum::<f64>() / m
}

struct Scheme<'a> {
    entropy: &'a EntropySpec,
    metric: Metric,
    alpha: f64,
    beta: f64,
    weights: Vec<f64>,
    edges: Vec<crate::measures::Edge>,
    dim: usize,
    hmin: f64,
}

impl<'a> Scheme<'a> {
    fn rhs(&self, rho: &[f64], out: &mut [f64]) {
        let n = rho.len();
        let de: Vec<f64> = rho.iter().map(|&r| self.entropy.de(r)).collect();
        out.iter_mut().for_each(|v| *v = 0.0);
        if self.alpha > 0.0 {
            for e in &self.edges {
                let mob = 0.5 * (rho[e.i] * self.entropy.d2e(rho[e.i]) + rho[e.j] * self.entropy.d2e(rho[e.j]));
                let flux = self.alpha * mob * (rho[e.j] - rho[e.i]) / e.h * e.face;
                out[e.i] += flux;
                out[e.j] -= flux;
            }
            for i in 0..n {
                out[i] /= self.weights[i];
            }
        }
        let mean = match self.metric {
            Metric::Hk => 0.0,
            Metric::Shk => shk_mean(rho, &self.weights, &de),
        };
        for i in 0..n {
            out[i] -= self.beta * rho[i] * (de[i] - mean);
        }
    }

    /// Explicit stability bound for the diffusion and reaction parts.
    fn stable_dt(&self, rho: &[f64]) -> f64 {
        let mut mob: f64 = 0.0;
        let mut react: f64 = 0.0;
        for &r in rho {
            mob = mob.max(r * self.entropy.d2e(r));
            react = react.max(self.beta * (self.entropy.de(r).abs() + r * self.entropy.d2e(r)));
        }
        let diff = if self.alpha > 0.0 && mob > 0.0 {
            self.hmin * self.hmin / (2.0 * self.dim as f64 * self.alpha * mob)
        } else {
            f64::INFINITY
        };
        let reac = if react > 0.0 { 1.0 / react } else { f64::INFINITY };
        diff.min(reac)
    }
}

fn run_explicit(rho0: &DiscreteMeasure, entropy: &EntropySpec, cfg: &PdeConfig, metric: Metric) -> Result<PdeTrajectory> {
    cfg.validate()?;
    let dom = rho0.domain();
    let scheme = Scheme {
        entropy,
        metric,
        alpha: cfg.alpha,
        beta: cfg.beta,
        weights: dom.weights().to_vec(),
        edges: dom.edges(),
        dim: dom.dim(),
        hmin: dom.min_spacing(),
    };
    let n = rho0.len();
    let mut rho = rho0.density().to_vec();
    let mut t = 0.0;
    let mut times = vec![0.0];
    let mut densities = vec![rho.clone()];
    let mut next_record = if cfg.record_every > 0.0 { cfg.record_every } else { f64::INFINITY };
    let (mut k1, mut k2, mut stage) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let (mut steps, mut halvings, mut clipped, mut drift) = (0usize, 0usize, 0.0f64, 0.0f64);
    let mass = |r: &[f64]| -> f64 { r.iter().zip(&scheme.weights).map(|(a, b)| a * b).sum() };
    while t < cfg.t_end * (1.0 - 1e-14) {
        let stable = cfg.safety * scheme.stable_dt(&rho);
        let mut dt = cfg.dt.min(stable).min(cfg.t_end - t);
        if !(dt > 0.0) {
            return Err(Error::Solver("explicit stability bound collapsed to zero".into()));
        }
        let mut tries = 0;
        let next = loop {
            // Heun's method: second order, same stability interval as Euler.
            scheme.rhs(&rho, &mut k1);
            for i in 0..n {
                stage[i] = rho[i] + dt * k1[i];
            }
            scheme.rhs(&stage, &mut k2);
            let cand: Vec<f64> = (0..n).map(|i| rho[i] + 0.5 * dt * (k1[i] + k2[i])).collect();
            let scale = cand.iter().cloned().fold(0.0, f64::max);
            let bad = cand.iter().any(|v| !v.is_finite() || *v < -1e-12 * scale.max(1.0));
            if !bad {
                break cand;
            }
            tries += 1;
            halvings += 1;
            if tries > 8 {
                return Err(Error::Solver(format!("explicit step unstable at t = {t} after 8 halvings")));
            }
            dt *= 0.5;
        };
        let reaction: f64 = if metric == Metric::Hk {
            let r0: f64 = (0..n).map(|i| scheme.weights[i] * rho[i] * entropy.de(rho[i])).sum();
            let r1: f64 = (0..n).map(|i| scheme.weights[i] * next[i] * entropy.de(next[i])).sum();
            -cfg.beta * 0.5 * dt * (r0 + r1)
        } else {
            0.0
        };
        let expected = mass(&rho) + reaction;
        let mut next = next;
        for (v, w) in next.iter_mut().zip(&scheme.weights) {
            if *v < 0.0 {
                clipped += -*v * w;
                *v = 0.0;
            }
        }
        let m_next = mass(&next);
        if metric == Metric::Shk || cfg.beta == 0.0 {
            drift = drift.max((m_next - expected).abs());
        }
        rho = next;
        t += dt;
        steps += 1;
        if t >= next_record * (1.0 - 1e-12) {
            times.push(t);
            densities.push(rho.clone());
            next_record += cfg.record_every;
        }
    }
    if *times.last().expect("nonempty") < t {
        times.push(t);
        densities.push(rho);
    }
    Ok(PdeTrajectory { times, densities, steps, clipped_mass: clipped, max_mass_drift: drift, halvings })
}

/// Explicit finite-volume solve of the HK gradient-flow equation.
pub fn solve_reaction_diffusion_hk(rho0: &DiscreteMeasure, entropy: &EntropySpec, cfg: &PdeConfig) -> Result<PdeTrajectory> {
    run_explicit(rho0, entropy, cfg, Metric::Hk)
}

/// Explicit finite-volume solve of the SHK gradient-flow equation.
pub fn solve_shk_pde(rho0: &DiscreteMeasure, entropy: &EntropySpec, cfg: &PdeConfig) -> Result<PdeTrajectory> {
    if (rho0.mass() - 1.0).abs() >= 1e-8 {
        return invalid("SHK equation needs a probability measure");
    }
    run_explicit(rho0, entropy, cfg, Metric::Shk)
}

/// Adaptive Dormand–Prince 5(4) integration.
///
/// `accept(y_old, y_new)` may veto an otherwise acceptable step, which is then
/// retried with half the step size.
#[derive(Debug, Clone)]
pub struct Dopri {
    pub rtol: f64,
    pub atol: f64,
    pub h0: f64,
    pub max_steps: usize,
}

impl Default for Dopri {
    fn default() -> Self {
        Self { rtol: 1e-10, atol: 1e-13, h0: 1e-4, max_steps: 2_000_000 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OdePath {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub rejected: usize,
}

impl OdePath {
    pub fn last(&self) -> &[f64] {
        self.states.last().expect("path is never empty")
    }
}

const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] =
    [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];

impl Dopri {
    pub fn integrate(
        &self,
        f: impl Fn(f64, &[f64], &mut [f64]),
        y0: &[f64],
        t_end: f64,
        accept: impl Fn(&[f64], &[f64]) -> bool,
        out_times: &[f64],
    ) -> Result<OdePath> {
        let n = y0.len();
        let mut y = y0.to_vec();
        let mut t = 0.0;
        let mut h = self.h0.min(t_end.max(1e-300));
        let mut k = vec![vec![0.0; n]; 7];
        let mut tmp = vec![0.0; n];
        let mut times = vec![0.0];
        let mut states = vec![y.clone()];
        let mut targets: Vec<f64> = out_times.iter().cloned().filter(|&s| s > 0.0 && s < t_end).collect();
        targets.push(t_end);
        let mut ti = 0;
        let mut rejected = 0;
        let mut steps = 0;
        while ti < targets.len() {
            let stop = targets[ti];
            if t >= stop * (1.0 - 1e-15) {
                times.push(t);
                states.push(y.clone());
                ti += 1;
                continue;
            }
            steps += 1;
            if steps > self.max_steps {
                return Err(Error::Solver("ODE step budget exhausted".into()));
            }
            let hh = h.min(stop - t);
            f(t, &y, &mut k[0]);
            for s in 0..6 {
                for i in 0..n {
                    let mut acc = y[i];
                    for (r, a) in A[s].iter().enumerate().take(s + 1) {
                        acc += hh * a * k[r][i];
                    }
                    tmp[i] = acc;
                }
                let (head, tail) = k.split_at_mut(s + 1);
                let _ = head;
                f(t + C[s] * hh, &tmp, &mut tail[0]);
            }
            // The last stage was evaluated at the fifth-order solution.
            let y5 = tmp.clone();
            let mut err: f64 = 0.0;
            for i in 0..n {
                let mut e = 0.0;
                for s in 0..7 {
                    e += (B5[s] - B4[s]) * k[s][i];
                }
                let sc = self.atol + self.rtol * y[i].abs().max(y5[i].abs());
                err = err.max((hh * e).abs() / sc);
            }
            if !err.is_finite() || y5.iter().any(|v| !v.is_finite()) {
                return Err(Error::Solver(format!("ODE blow-up near t = {t}")));
            }
            if err <= 1.0 && accept(&y, &y5) {
                t += hh;
                y = y5;
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                h = hh * fac;
            } else {
                rejected += 1;
                let fac = if err <= 1.0 { 0.5 } else { (0.9 * err.powf(-0.2)).clamp(0.1, 0.5) };
                h = hh * fac;
                if h < 1e-300 {
                    return Err(Error::Solver("ODE step size underflow".into()));
                }
            }
        }
        Ok(OdePath { times, states, rejected })
    }
}

/// `ċ = −4c E'(c)` with relative local error `rtol`.
pub fn solve_scalar_ode(c0: f64, entropy: &EntropySpec, t_end: f64, out_times: &[f64]) -> Result<OdePath> {
    if !(c0 > 0.0) {
        return invalid("scalar ODE needs c0 > 0");
    }
    let path = Dopri::default().integrate(
        |_, y, dy| dy[0] = -4.0 * y[0] * entropy.de(y[0]),
        &[c0],
        t_end,
        |_, y| y[0] > 0.0 && y[0] < 1e12,
        out_times,
    )?;
    Ok(path)
}

/// `ċ = −4c(E'(c) − ⟨E'⟩_c)` per node; inf is nondecreasing and sup nonincreasing
/// at every accepted step up to `1e−12`.
pub fn solve_spherical_hellinger_ode(c0: &DiscreteMeasure, entropy: &EntropySpec, t_end: f64, out_times: &[f64]) -> Result<OdePath> {
    if (c0.mass() - 1.0).abs() >= 1e-8 {
        return invalid("spherical Hellinger flow needs a probability measure");
    }
    let w = c0.domain().weights().to_vec();
    let f = |_: f64, y: &[f64], dy: &mut [f64]| {
        let de: Vec<f64> = y.iter().map(|&c| entropy.de(c)).collect();
        let mean = shk_mean(y, &w, &de);
        for i in 0..y.len() {
            dy[i] = -4.0 * y[i] * (de[i] - mean);
        }
    };
    let accept = |old: &[f64], new: &[f64]| {
        let lo0 = old.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi0 = old.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo1 = new.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi1 = new.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        lo1 >= lo0 - 1e-12 && hi1 <= hi0 + 1e-12
    };
    Dopri::default().integrate(f, c0.density(), t_end, accept, out_times)
}

/// Metric slope `(∫ρ(α|∇E'|² + β(E' − m)²))^{1/2}` of the formal gradient flow,
/// with `m = 0` for HK and `m = ⟨E'⟩_ρ` for SHK.
pub fn onsager_slope(mu: &DiscreteMeasure, entropy: &EntropySpec, metric: Metric, k: &Onsager) -> f64 {
    let dom = mu.domain();
    let rho = mu.density();
    let w = dom.weights();
    let de: Vec<f64> = rho.iter().map(|&r| entropy.de(r)).collect();
    let mut s = 0.0;
    for e in dom.edges() {
        let g = (de[e.j] - de[e.i]) / e.h;
        s += k.alpha * e.face * e.h * 0.5 * (rho[e.i] + rho[e.j]) * g * g;
    }
    let mean = match metric {
        Metric::Hk => 0.0,
        Metric::Shk => shk_mean(rho, w, &de),
    };
    for i in 0..rho.len() {
        let v = de[i] - mean;
        s += k.beta * w[i] * rho[i] * v * v;
    }
    s.max(0.0).sqrt()
}

/// `Σ w |ρ_MM(T) − ρ_PDE(T)|` using the MM iterate at step `round(T/τ)`.
pub fn compare_mm_to_pde(traj: &MmTrajectory, pde: &PdeTrajectory, t: f64) -> Result<f64> {
    let k = (t / traj.tau).round() as usize;
    if k >= traj.measures.len() {
        return invalid(format!("trajectory ends before T = {t}"));
    }
    let idx = pde
        .times
        .iter()
        .position(|&s| (s - t).abs() <= 1e-9 * (1.0 + t))
        .ok_or_else(|| Error::InvalidInput(format!("PDE trajectory has no snapshot at T = {t}")))?;
    let mm = &traj.measures[k];
    let p = &pde.densities[idx];
    if p.len() != mm.len() {
        return Err(Error::DomainMismatch("MM and PDE grids differ".into()));
    }
    let w = mm.domain().weights();
    Ok(mm.density().iter().zip(p).zip(w).map(|((a, b), w)| w * (a - b).abs()).sum())
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub tau: f64,
    pub l1_gap: f64,
    /// Wall-clock seconds; not reproducible.
    pub runtime: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub metric: Metric,
    pub t_end: f64,
    pub rows: Vec<SweepRow>,
    pub monotone: bool,
}

/// MM runs for each `τ` compared to one PDE solve at `T`.
pub fn mm_pde_sweep(
    mu0: &DiscreteMeasure,
    entropy: &EntropySpec,
    metric: Metric,
    taus: &[f64],
    pde_cfg: &PdeConfig,
    base: &MmConfig,
) -> Result<SweepReport> {
    let t_end = pde_cfg.t_end;
    let pde = match metric {
        Metric::Hk => solve_reaction_diffusion_hk(mu0, entropy, pde_cfg)?,
        Metric::Shk => solve_shk_pde(mu0, entropy, pde_cfg)?,
    };
    let rows = taus
        .par_iter()
        .map(|&tau| -> Result<SweepRow> {
        let start = Instant::now();
        let steps = (t_end / tau).round() as usize;
        if ((steps as f64) * tau - t_end).abs() > 1e-9 * t_end.max(1.0) {
            return invalid(format!("T = {t_end} is not a multiple of τ = {tau}"));
        }
        let cfg = MmConfig { tau, steps, metric, ..base.clone() };
        let traj = run_mm(mu0, entropy, &cfg)?;
        let gap = compare_mm_to_pde(&traj, &pde, t_end)?;
        Ok(SweepRow { tau, l1_gap: gap, runtime: start.elapsed().as_secs_f64() })
        })
        .collect::<Result<Vec<_>>>()?;
    let monotone = rows.windows(2).all(|w| w[1].l1_gap < w[0].l1_gap);
    Ok(SweepReport { metric, t_end, rows, monotone })
}

/// Density of the PDE snapshot closest to `t`, as a measure.
pub fn snapshot(pde: &PdeTrajectory, like: &DiscreteMeasure, t: f64) -> Result<DiscreteMeasure> {
    let idx = pde
        .times
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
        .map(|(i, _)| i)
        .expect("nonempty");
    measure_like(like, pde.densities[idx].clone())
}
