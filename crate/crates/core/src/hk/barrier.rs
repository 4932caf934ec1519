//! Interior-point solver for the dual of the logarithmic entropy-transport
//! program.
//!
//! Dual variables are `f_i = −log σ0_i` on source nodes and `g_j = −log σ1_j`
//! on target nodes, subject to `f_i + g_j ≤ ℓ_ij` for every admissible pair.
//! The target side is either a fixed mass vector (distance evaluation) or an
//! energy `Σ w_j E(ρ_j)` minimized jointly with the plan (one minimizing-movement
//! step). In the latter case the inner minimization over `ρ` is solved in
//! closed form per node through the convex conjugate of `E`, so the step is a
//! single concave maximization.
//!
//! On the central path the plan is `H_p = μ / s_p` with slack
//! `s_p = ℓ_p − f_i − g_j`. Every iterate is dual feasible, so the duality gap
//! against the primal candidate built from `H` is a certificate.

use nalgebra::{DMatrix, DVector};

use crate::entropy::EntropySpec;
use crate::error::{Error, Result};
use crate::hk::entropy_f;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Pair {
    pub i: usize,
    pub j: usize,
    pub cost: f64,
}

pub(crate) enum Target<'a> {
    /// Fixed masses `b_j > 0`.
    Masses(Vec<f64>),
    /// Node weights `w_j`; optional total-mass constraint.
    Energy { entropy: &'a EntropySpec, weights: Vec<f64>, mass: Option<f64> },
}

pub(crate) struct DualProblem<'a> {
    pub src: Vec<f64>,
    pub target: Target<'a>,
    pub pairs: Vec<Pair>,
    /// Multiplies the transport part of the objective (`1/(2τ)` for steps).
    pub scale: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct BarrierOptions {
    pub gap_tol: f64,
    pub max_newton: usize,
    /// Additive perturbation of the starting duals (restarts).
    pub start_shift: Option<(Vec<f64>, Vec<f64>)>,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        Self { gap_tol: 1e-10, max_newton: 600, start_shift: None }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct DualSolution {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    /// Plan entry per pair (mass units).
    pub plan: Vec<f64>,
    /// Target densities (energy targets only).
    pub rho: Vec<f64>,
    pub primal: f64,
    pub dual: f64,
    pub newton_steps: usize,
    pub converged: bool,
}

impl DualSolution {
    pub fn gap(&self) -> f64 {
        self.primal - self.dual
    }
}

struct Eval {
    phi: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
    rho: Vec<f64>,
}

impl<'a> DualProblem<'a> {
    fn n_src(&self) -> usize {
        self.src.len()
    }
    fn n_tgt(&self) -> usize {
        match &self.target {
            Target::Masses(b) => b.len(),
            Target::Energy { weights, .. } => weights.len(),
        }
    }
    fn has_kappa(&self) -> bool {
        matches!(self.target, Target::Energy { mass: Some(_), .. })
    }
    fn dim(&self) -> usize {
        self.n_src() + self.n_tgt() + usize::from(self.has_kappa())
    }

    /// Lower limit on the price `y` below which `min_ρ yρ + E(ρ)` is `−∞`.
    fn price_floor(&self) -> f64 {
        match &self.target {
            Target::Energy { entropy, .. } if entropy.upper_bound().is_none() => -entropy.recession_slope(),
            _ => f64::NEG_INFINITY,
        }
    }

    fn price(&self, g: f64, kappa: f64) -> f64 {
        self.scale * (1.0 - (-g).exp()) + kappa
    }

    /// Evaluates the barrier objective; `None` when infeasible.
    fn evaluate(&self, x: &[f64], mu: f64, rho_guess: &[f64], with_derivs: bool) -> Option<Eval> {
        let (ns, nt) = (self.n_src(), self.n_tgt());
        let (f, rest) = x.split_at(ns);
        let (g, tail) = rest.split_at(nt);
        let kappa = tail.first().copied().unwrap_or(0.0);
        let bar = mu * self.scale;
        let dim = self.dim();
        let mut grad = DVector::zeros(if with_derivs { dim } else { 0 });
        let mut hess = DMatrix::zeros(if with_derivs { dim } else { 0 }, if with_derivs { dim } else { 0 });

        let mut phi = 0.0;
        for p in &self.pairs {
            let s = p.cost - f[p.i] - g[p.j];
            if !(s > 0.0) {
                return None;
            }
            phi += bar * s.ln();
            if with_derivs {
                let (inv, inv2) = (1.0 / s, 1.0 / (s * s));
                grad[p.i] -= bar * inv;
                grad[ns + p.j] -= bar * inv;
                hess[(p.i, p.i)] -= bar * inv2;
                hess[(ns + p.j, ns + p.j)] -= bar * inv2;
                hess[(p.i, ns + p.j)] -= bar * inv2;
                hess[(ns + p.j, p.i)] -= bar * inv2;
            }
        }
        for i in 0..ns {
            let e = (-f[i]).exp();
            phi += self.scale * self.src[i] * (1.0 - e);
            if with_derivs {
                grad[i] += self.scale * self.src[i] * e;
                hess[(i, i)] -= self.scale * self.src[i] * e;
            }
        }
        let mut rho = Vec::new();
        match &self.target {
            Target::Masses(b) => {
                for j in 0..nt {
                    let e = (-g[j]).exp();
                    phi += self.scale * b[j] * (1.0 - e);
                    if with_derivs {
                        grad[ns + j] += self.scale * b[j] * e;
                        hess[(ns + j, ns + j)] -= self.scale * b[j] * e;
                    }
                }
            }
            Target::Energy { entropy, weights, mass } => {
                let floor = self.price_floor();
                let upper = entropy.upper_bound();
                rho.reserve(nt);
                let mut kk = 0.0;
                for j in 0..nt {
                    let y = self.price(g[j], kappa);
                    if !(y > floor) {
                        return None;
                    }
                    let r = solve_rho(entropy, y, bar, upper, rho_guess.get(j).copied().unwrap_or(1.0));
                    let mut val = y * r + entropy.e(r) - bar * r.ln();
                    if let Some(u) = upper {
                        val -= bar * (u - r).ln();
                    }
                    if !val.is_finite() {
                        return None;
                    }
                    phi += weights[j] * val;
                    if with_derivs {
                        let e = (-g[j]).exp();
                        let dy = self.scale * e;
                        let mut curv = entropy.d2e(r) + bar / (r * r);
                        if let Some(u) = upper {
                            curv += bar / ((u - r) * (u - r));
                        }
                        let m2 = -1.0 / curv;
                        grad[ns + j] += weights[j] * r * dy;
                        hess[(ns + j, ns + j)] += weights[j] * (m2 * dy * dy - r * dy);
                        if mass.is_some() {
                            let k = ns + nt;
                            grad[k] += weights[j] * r;
                            hess[(k, ns + j)] += weights[j] * m2 * dy;
                            hess[(ns + j, k)] += weights[j] * m2 * dy;
                            kk += weights[j] * m2;
                        }
                    }
                    rho.push(r);
                }
                if let Some(m) = mass {
                    phi -= kappa * m;
                    if with_derivs {
                        let k = ns + nt;
                        grad[k] -= m;
                        hess[(k, k)] += kk;
                    }
                }
            }
        }
        Some(Eval { phi, grad, hess, rho })
    }

    fn starting_point(&self) -> Result<Vec<f64>> {
        let (ns, nt) = (self.n_src(), self.n_tgt());
        let floor = self.price_floor();
        let y0 = if floor < 0.0 { 0.0 } else { 0.5 * (floor + self.scale) };
        if y0 >= self.scale {
            return Err(Error::InvalidInput(
                "time step too large for an energy with finite negative recession slope".into(),
            ));
        }
        let g0 = -(1.0 - y0 / self.scale).ln();
        let mut x = vec![-1.0 - g0; ns];
        x.extend(std::iter::repeat(g0).take(nt));
        if self.has_kappa() {
            x.push(0.0);
        }
        Ok(x)
    }

    /// Path-following Newton iteration.
    pub fn solve(&self, opts: &BarrierOptions) -> Result<DualSolution> {
        let dim = self.dim();
        let (ns, nt) = (self.n_src(), self.n_tgt());
        let mut x = self.starting_point()?;
        if let Some((sf, sg)) = &opts.start_shift {
            for i in 0..ns {
                x[i] += sf[i];
            }
            for j in 0..nt {
                x[ns + j] += sg[j];
            }
            if self.evaluate(&x, 1.0, &[], false).is_none() {
                x = self.starting_point()?;
            }
        }
        let npairs = self.pairs.len().max(1) as f64;
        let total_src: f64 = self.src.iter().sum();
        let mut mu = (total_src.max(1e-300) / npairs).max(1e-300);
        let mut rho_guess: Vec<f64> = vec![1.0; nt];
        let mut steps = 0usize;
        let mut best: Option<DualSolution> = None;
        let mut stalled = 0usize;

        loop {
            // centering
            let mut centered = false;
            let mut prev_dec = f64::INFINITY;
            for inner in 0..80 {
                let ev = self
                    .evaluate(&x, mu, &rho_guess, true)
                    .ok_or_else(|| Error::Solver("barrier iterate left the feasible region".into()))?;
                rho_guess.clone_from(&ev.rho);
                let neg = -ev.hess.clone();
                let dir = match neg.clone().cholesky() {
                    Some(ch) => ch.solve(&ev.grad),
                    None => {
                        let mut reg = neg;
                        let bump = 1e-12 * (1.0 + reg.diagonal().amax());
                        for k in 0..dim {
                            reg[(k, k)] += bump;
                        }
                        match reg.cholesky() {
                            Some(ch) => ch.solve(&ev.grad),
                            None => ev.grad.clone(),
                        }
                    }
                };
                let dec = ev.grad.dot(&dir);
                if !(dec.is_finite()) {
                    return Err(Error::Solver("non-finite Newton decrement".into()));
                }
                // Newton converges quadratically near the center, so a stagnating
                // decrement means the rounding floor has been reached.
                let floor_hit = inner >= 3 && dec > 0.25 * prev_dec && dec <= 1e-6 * mu * self.scale * npairs;
                if dec * 0.5 <= 1e-12 * mu * self.scale * npairs || dec <= 1e-30 || floor_hit {
                    centered = true;
                    break;
                }
                prev_dec = dec;
                steps += 1;
                let mut t = 1.0;
                let mut accepted = false;
                for _ in 0..60 {
                    let trial: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, d)| a + t * d).collect();
                    if let Some(tv) = self.evaluate(&trial, mu, &rho_guess, false) {
                        if tv.phi >= ev.phi + 1e-4 * t * dec || (tv.phi - ev.phi).abs() <= 1e-15 * ev.phi.abs() {
                            x = trial;
                            rho_guess = tv.rho;
                            accepted = true;
                            break;
                        }
                    }
                    t *= 0.5;
                }
                if !accepted || steps >= opts.max_newton {
                    break;
                }
            }
            let sol = self.certificate(&x, mu, &rho_guess, steps);
            let gap = sol.gap();
            let improved = best.as_ref().map_or(true, |b| gap < b.gap());
            if improved {
                best = Some(sol);
                stalled = 0;
            } else {
                stalled += 1;
            }
            let b = best.as_ref().expect("set above");
            // Gap relative to the size of the individual objective terms.
            if b.gap() <= opts.gap_tol * (1.0 + b.primal.abs() + self.scale * total_src) {
                let mut out = best.take().expect("set above");
                out.converged = true;
                return Ok(out);
            }
            if steps >= opts.max_newton || mu < 1e-22 || stalled >= 4 {
                let out = best.take().expect("set above");
                return Ok(out);
            }
            mu *= if centered { 0.1 } else { 0.5 };
        }
    }

    /// Primal candidate from the barrier plan and the exact dual value.
    ///
    /// The barrier plan charges `μ/s` to every inactive pair; a copy with those
    /// entries dropped is also feasible, and the smaller primal value is kept.
    fn certificate(&self, x: &[f64], mu: f64, rho_bar: &[f64], steps: usize) -> DualSolution {
        let (ns, nt) = (self.n_src(), self.n_tgt());
        let f = x[..ns].to_vec();
        let g = x[ns..ns + nt].to_vec();
        let kappa = if self.has_kappa() { x[ns + nt] } else { 0.0 };
        let plan: Vec<f64> = self.pairs.iter().map(|p| mu / (p.cost - f[p.i] - g[p.j])).collect();
        let mut row_max = vec![0.0f64; ns];
        for (p, h) in self.pairs.iter().zip(&plan) {
            row_max[p.i] = row_max[p.i].max(*h);
        }
        let pruned: Vec<f64> =
            self.pairs.iter().zip(&plan).map(|(p, &h)| if h < 1e-8 * row_max[p.i] { 0.0 } else { h }).collect();

        let mut dual: f64 = (0..ns).map(|i| self.scale * self.src[i] * (1.0 - (-f[i]).exp())).sum();
        match &self.target {
            Target::Masses(b) => {
                dual += (0..nt).map(|j| self.scale * b[j] * (1.0 - (-g[j]).exp())).sum::<f64>();
            }
            Target::Energy { entropy, weights, mass } => {
                for j in 0..nt {
                    dual += weights[j] * exact_conjugate(entropy, self.price(g[j], kappa));
                }
                if let Some(m) = mass {
                    dual -= kappa * m;
                }
            }
        }
        // Density candidates: the barrier iterate and the dual-optimal argmin,
        // each rescaled onto the mass constraint when there is one.
        let rhos: Vec<Vec<f64>> = match &self.target {
            Target::Masses(_) => vec![Vec::new()],
            Target::Energy { entropy, weights, mass } => {
                let dual_rho: Vec<f64> = (0..nt).map(|j| exact_argmin(entropy, self.price(g[j], kappa))).collect();
                let mut cands = vec![rho_bar.to_vec()];
                if dual_rho.iter().all(|r| r.is_finite()) {
                    cands.push(dual_rho);
                }
                if let Some(m) = mass {
                    for rho in cands.iter_mut() {
                        let cur: f64 = rho.iter().zip(weights.iter()).map(|(r, w)| r * w).sum();
                        if cur > 0.0 {
                            let s = m / cur;
                            rho.iter_mut().for_each(|r| *r *= s);
                        }
                    }
                }
                cands
            }
        };
        let mut best: Option<(usize, usize, f64)> = None;
        for (pi, p) in [&plan, &pruned].into_iter().enumerate() {
            for (ri, rho) in rhos.iter().enumerate() {
                let v = self.primal_value(p, rho);
                if v.is_finite() && best.map_or(true, |b| v < b.2) {
                    best = Some((pi, ri, v));
                }
            }
        }
        let (pi, ri, primal) = best.unwrap_or((0, 0, f64::INFINITY));
        let plan = if pi == 0 { plan } else { pruned };
        let rho = rhos[ri].clone();
        DualSolution { f, g, plan, rho, primal, dual, newton_steps: steps, converged: false }
    }

    fn primal_value(&self, plan: &[f64], rho: &[f64]) -> f64 {
        let (ns, nt) = (self.n_src(), self.n_tgt());
        let mut eta0 = vec![0.0; ns];
        let mut eta1 = vec![0.0; nt];
        let mut lin = 0.0;
        for (p, h) in self.pairs.iter().zip(plan) {
            eta0[p.i] += h;
            eta1[p.j] += h;
            lin += p.cost * h;
        }
        let src_part: f64 = (0..ns).map(|i| self.src[i] * entropy_f(eta0[i] / self.src[i])).sum();
        match &self.target {
            Target::Masses(b) => {
                let tgt: f64 = (0..nt).map(|j| b[j] * entropy_f(eta1[j] / b[j])).sum();
                self.scale * (src_part + tgt + lin)
            }
            Target::Energy { entropy, weights, .. } => {
                let mut tgt = 0.0;
                let mut energy = 0.0;
                for j in 0..nt {
                    let b = weights[j] * rho[j];
                    tgt += b * entropy_f(eta1[j] / b);
                    energy += weights[j] * entropy.e(rho[j]);
                }
                self.scale * (src_part + tgt + lin) + energy
            }
        }
    }
}

/// Solves `y + E'(ρ) − ν/ρ [+ ν/(u−ρ)] = 0` for `ρ` in `(0, u)`.
pub(crate) fn solve_rho(entropy: &EntropySpec, y: f64, nu: f64, upper: Option<f64>, guess: f64) -> f64 {
    let h = |r: f64| -> f64 {
        let mut v = y + entropy.de(r) - nu / r;
        if let Some(u) = upper {
            v += nu / (u - r);
        }
        v
    };
    let dh = |r: f64| -> f64 {
        let mut v = entropy.d2e(r) + nu / (r * r);
        if let Some(u) = upper {
            v += nu / ((u - r) * (u - r));
        }
        v
    };
    let (mut lo, mut hi);
    match upper {
        Some(u) => {
            lo = 0.0;
            hi = u;
        }
        None => {
            hi = guess.max(1.0);
            let mut k = 0;
            while h(hi) <= 0.0 && k < 2000 {
                hi *= 4.0;
                k += 1;
            }
            lo = guess.min(1.0);
            k = 0;
            while h(lo) >= 0.0 && k < 2000 {
                lo *= 0.25;
                k += 1;
            }
        }
    }
    let mut r = if guess > lo && guess < hi { guess } else { mid(lo, hi) };
    for _ in 0..300 {
        let v = h(r);
        if v == 0.0 {
            return r;
        }
        if v < 0.0 {
            lo = r;
        } else {
            hi = r;
        }
        let d = dh(r);
        let mut next = r - v / d;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = mid(lo, hi);
        }
        if (next - r).abs() <= 1e-15 * r || hi - lo <= 1e-16 * hi {
            return next;
        }
        r = next;
    }
    r
}

fn mid(lo: f64, hi: f64) -> f64 {
    if lo > 0.0 && hi / lo > 16.0 {
        (lo * hi).sqrt()
    } else {
        0.5 * (lo + hi)
    }
}

/// `min_{ρ ≥ 0} yρ + E(ρ)` without smoothing.
pub(crate) fn exact_conjugate(entropy: &EntropySpec, y: f64) -> f64 {
    let r = exact_argmin(entropy, y);
    if r.is_infinite() {
        return f64::NEG_INFINITY;
    }
    y * r + entropy.e(r)
}

pub(crate) fn exact_argmin(entropy: &EntropySpec, y: f64) -> f64 {
    let upper = entropy.upper_bound();
    if y + entropy.de(0.0) >= 0.0 {
        return 0.0;
    }
    if let Some(u) = upper {
        if y + entropy.de(u) <= 0.0 {
            return u;
        }
    } else if y + entropy.recession_slope() <= 0.0 {
        return f64::INFINITY;
    }
    let mut lo = 0.0;
    let mut hi = upper.unwrap_or(1.0);
    if upper.is_none() {
        while y + entropy.de(hi) < 0.0 {
            hi *= 2.0;
            if hi > 1e300 {
                return f64::INFINITY;
            }
        }
    }
    for _ in 0..2000 {
        let m = 0.5 * (lo + hi);
        if y + entropy.de(m) < 0.0 {
            lo = m;
        } else {
            hi = m;
        }
        if hi - lo <= 1e-16 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}
