//! Entropy densities `E`, the functional `Σ E(ρ_i) w_i`, the limit functional,
//! and a numerical certificate for the convexity conditions on the auxiliary
//! function `N(ρ, γ)`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::measures::DiscreteMeasure;

/// Shape of the density function.
#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    /// `α c^m + γ c` with `α ≥ 0`, `m > 1`.
    PowerMass { alpha: f64, m: f64, gamma: f64 },
    /// `−β c^q` with `0 < q < 1`, `β > 0`.
    NegPower { beta: f64, q: f64 },
    /// Monotone cubic interpolant of `(c, E(c))` samples.
    Table(MonotoneCubic),
    /// `γ c` on `[0, 1]` and `+∞` above.
    Limit { gamma: f64 },
}

/// A convex density `E` with its derivatives and declared convexity modulus.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropySpec {
    family: Family,
    lambda: f64,
    c_low: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyTag {
    PowerMass,
    NegPower,
    CustomTable,
    Limit,
}

/// JSON form `{family, params, lambda?, c_low?}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntropyConfig {
    pub family: FamilyTag,
    pub params: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_low: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PowerMassParams {
    alpha: f64,
    m: f64,
    gamma: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NegPowerParams {
    q: f64,
    #[serde(default = "one")]
    beta: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TableParams {
    c: Vec<f64>,
    e: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LimitParams {
    gamma: f64,
}

fn one() -> f64 {
    1.0
}

impl EntropySpec {
    /// `α c^m + γ c`; declared modulus `2γ`.
    pub fn power_mass(alpha: f64, m: f64, gamma: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) || !(m > 1.0 && m.is_finite()) || !gamma.is_finite() {
            return invalid("power_mass needs alpha >= 0, m > 1, finite gamma");
        }
        Self::build(Family::PowerMass { alpha, m, gamma }, 2.0 * gamma, None)
    }

    /// `c² − c`, the standard example with a sign change of `E'` at 1/2.
    pub fn quadratic_minus_linear() -> Self {
        Self::power_mass(1.0, 2.0, -1.0).expect("valid parameters")
    }

    /// `E ≡ 0`.
    pub fn zero() -> Self {
        Self::power_mass(0.0, 2.0, 0.0).expect("valid parameters")
    }

    /// `−β c^q`; declared modulus 0.
    pub fn neg_power(beta: f64, q: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) || !(q > 0.0 && q < 1.0) {
            return invalid("neg_power needs beta > 0 and 0 < q < 1");
        }
        Self::build(Family::NegPower { beta, q }, 0.0, None)
    }

    /// `γ c` restricted to densities at most 1.
    pub fn limit(gamma: f64) -> Result<Self> {
        if !gamma.is_finite() {
            return invalid("limit functional needs finite gamma");
        }
        Self::build(Family::Limit { gamma }, 2.0 * gamma, None)
    }

    pub fn table(c: Vec<f64>, e: Vec<f64>, lambda: f64) -> Result<Self> {
        Self::build(Family::Table(MonotoneCubic::new(c, e)?), lambda, None)
    }

    fn build(family: Family, lambda: f64, c_low: Option<f64>) -> Result<Self> {
        let spec = Self { family, lambda, c_low };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_c_low(mut self, c_low: f64) -> Result<Self> {
        if !(c_low > 0.0) || !(self.de(c_low) < 0.0) {
            return invalid(format!("c_low = {c_low} must be positive with E'(c_low) < 0"));
        }
        self.c_low = Some(c_low);
        Ok(self)
    }

    pub fn from_config(cfg: &EntropyConfig) -> Result<Self> {
        let p = cfg.params.clone();
        let mut spec = match cfg.family {
            FamilyTag::PowerMass => {
                let p: PowerMassParams = serde_json::from_value(p)?;
                Self::power_mass(p.alpha, p.m, p.gamma)?
            }
            FamilyTag::NegPower => {
                let p: NegPowerParams = serde_json::from_value(p)?;
                Self::neg_power(p.beta, p.q)?
            }
            FamilyTag::CustomTable => {
                let p: TableParams = serde_json::from_value(p)?;
                Self::table(p.c, p.e, 0.0)?
            }
            FamilyTag::Limit => {
                let p: LimitParams = serde_json::from_value(p)?;
                Self::limit(p.gamma)?
            }
        };
        if let Some(l) = cfg.lambda {
            spec = spec.with_lambda(l);
        }
        if let Some(c) = cfg.c_low {
            spec = spec.with_c_low(c)?;
        }
        Ok(spec)
    }

    pub fn to_config(&self) -> EntropyConfig {
        let (family, params) = match &self.family {
            Family::PowerMass { alpha, m, gamma } => {
                (FamilyTag::PowerMass, serde_json::json!({"alpha": alpha, "m": m, "gamma": gamma}))
            }
            Family::NegPower { beta, q } => (FamilyTag::NegPower, serde_json::json!({"q": q, "beta": beta})),
            Family::Table(t) => (FamilyTag::CustomTable, serde_json::json!({"c": t.x, "e": t.y})),
            Family::Limit { gamma } => (FamilyTag::Limit, serde_json::json!({"gamma": gamma})),
        };
        EntropyConfig { family, params, lambda: Some(self.lambda), c_low: self.c_low }
    }

    pub fn family(&self) -> &Family {
        &self.family
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn c_low(&self) -> Option<f64> {
        self.c_low
    }

    /// Upper end of the effective domain, if finite.
    pub fn upper_bound(&self) -> Option<f64> {
        match self.family {
            Family::Limit { .. } => Some(1.0),
            _ => None,
        }
    }

    /// `E(c)`; `c = 0` gives the right limit.
    pub fn e(&self, c: f64) -> f64 {
        match &self.family {
            Family::PowerMass { alpha, m, gamma } => {
                if *alpha == 0.0 {
                    gamma * c
                } else {
                    alpha * c.powf(*m) + gamma * c
                }
            }
            Family::NegPower { beta, q } => -beta * c.powf(*q),
            Family::Table(t) => t.value(c),
            Family::Limit { gamma } => {
                if c <= 1.0 + 1e-12 {
                    gamma * c
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// `E'(c)`; `c = 0` gives the right derivative (possibly `−∞`).
    pub fn de(&self, c: f64) -> f64 {
        match &self.family {
            Family::PowerMass { alpha, m, gamma } => {
                if *alpha == 0.0 {
                    *gamma
                } else {
                    alpha * m * c.powf(m - 1.0) + gamma
                }
            }
            Family::NegPower { beta, q } => {
                if c == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    -beta * q * c.powf(q - 1.0)
                }
            }
            Family::Table(t) => t.derivative(c),
            Family::Limit { gamma } => *gamma,
        }
    }

    pub fn d2e(&self, c: f64) -> f64 {
        match &self.family {
            Family::PowerMass { alpha, m, .. } => {
                if *alpha == 0.0 {
                    0.0
                } else {
                    alpha * m * (m - 1.0) * c.powf(m - 2.0)
                }
            }
            Family::NegPower { beta, q } => beta * q * (1.0 - q) * c.powf(q - 2.0),
            Family::Table(t) => t.second_derivative(c).max(0.0),
            Family::Limit { .. } => 0.0,
        }
    }

    /// Recession slope `lim E(t)/t`.
    pub fn recession_slope(&self) -> f64 {
        match &self.family {
            Family::PowerMass { alpha, gamma, .. } => {
                if *alpha > 0.0 {
                    f64::INFINITY
                } else {
                    *gamma
                }
            }
            Family::NegPower { .. } => 0.0,
            Family::Table(t) => t.end_slope(),
            Family::Limit { .. } => f64::INFINITY,
        }
    }

    /// Supremum of `E'` over the effective domain.
    pub fn sup_derivative(&self) -> f64 {
        match self.family {
            Family::Limit { gamma } => gamma,
            _ => self.recession_slope(),
        }
    }

    /// The root of `E'` if `E'` changes sign, found by bisection.
    pub fn derivative_root(&self) -> Option<f64> {
        let (mut lo, mut hi) = (1e-12, 1.0);
        if self.de(lo) >= 0.0 {
            return None;
        }
        let cap = self.upper_bound().unwrap_or(1e12);
        while self.de(hi) < 0.0 {
            hi *= 2.0;
            if hi > cap {
                return None;
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.de(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        Some(0.5 * (lo + hi))
    }

    /// Convexity and monotonicity on a log grid, plus the `c_low` witness.
    fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() {
            return invalid("declared lambda must be finite");
        }
        let hi = self.upper_bound().unwrap_or(1e3);
        let grid = log_grid(1e-3, hi, 200);
        let vals: Vec<f64> = grid.iter().map(|&c| self.e(c)).collect();
        for k in 1..grid.len() - 1 {
            let (h0, h1) = (grid[k] - grid[k - 1], grid[k + 1] - grid[k]);
            let second = (vals[k + 1] - vals[k]) / h1 - (vals[k] - vals[k - 1]) / h0;
            let scale = 1.0 + vals[k].abs() / grid[k];
            if second < -1e-10 * scale {
                return invalid(format!("E is not convex near c = {}", grid[k]));
            }
        }
        for k in 1..grid.len() {
            let (a, b) = (self.de(grid[k - 1]), self.de(grid[k]));
            if b < a - 1e-10 * (1.0 + a.abs()) {
                return invalid(format!("E' decreases near c = {}", grid[k]));
            }
        }
        if let Some(c) = self.c_low {
            if !(self.de(c) < 0.0) {
                return invalid("c_low witness needs E'(c_low) < 0");
            }
        }
        Ok(())
    }

    /// `Σ E(ρ_i) w_i + E'_∞ · singular_mass`.
    pub fn eval_functional(&self, mu: &DiscreteMeasure, singular_mass: f64) -> Result<f64> {
        if !(singular_mass >= 0.0) {
            return invalid("singular mass must be nonnegative");
        }
        let w = mu.domain().weights();
        let mut total = 0.0;
        for (r, wi) in mu.density().iter().zip(w) {
            let e = self.e(*r);
            if e == f64::INFINITY {
                return Ok(f64::INFINITY);
            }
            total += e * wi;
        }
        if singular_mass > 0.0 {
            let s = self.recession_slope();
            if s == f64::INFINITY {
                return Ok(f64::INFINITY);
            }
            total += s * singular_mass;
        }
        Ok(total)
    }

    /// Energy of an absolutely continuous measure.
    pub fn energy(&self, mu: &DiscreteMeasure) -> f64 {
        self.eval_functional(mu, 0.0).expect("zero singular mass is valid")
    }

    /// Largest point of a log grid on `(c_max·1e−12, c_max]` where `E' < 0`.
    pub fn find_c_low(&self, c_max: f64) -> Option<f64> {
        if !(c_max > 0.0) {
            return None;
        }
        log_grid(c_max * 1e-12, c_max, 256).into_iter().rev().find(|&c| self.de(c) < 0.0)
    }

    /// Hessian of `(ρ/γ)^d E(γ^{2+d}/ρ^d) − λγ²/2` by the chain rule through `E', E''`.
    fn ne_hessian(&self, lambda: f64, d: f64, rho: f64, gam: f64) -> Option<(f64, f64, f64)> {
        let a = (rho / gam).powf(d);
        let s = gam.powf(2.0 + d) / rho.powf(d);
        let (e0, e1, e2) = (self.e(s), self.de(s), self.d2e(s));
        if !(e0.is_finite() && e1.is_finite() && e2.is_finite()) {
            return None;
        }
        let (a_r, a_g) = (d * a / rho, -d * a / gam);
        let (s_r, s_g) = (-d * s / rho, (2.0 + d) * s / gam);
        let a_rr = d * (d - 1.0) * a / (rho * rho);
        let a_gg = d * (d + 1.0) * a / (gam * gam);
        let a_rg = -d * d * a / (rho * gam);
        let s_rr = d * (d + 1.0) * s / (rho * rho);
        let s_gg = (2.0 + d) * (1.0 + d) * s / (gam * gam);
        let s_rg = -d * (2.0 + d) * s / (rho * gam);
        let part = |aij: f64, ai: f64, aj: f64, si: f64, sj: f64, sij: f64| {
            aij * e0 + (ai * sj + aj * si) * e1 + a * e2 * si * sj + a * e1 * sij
        };
        let hxx = part(a_rr, a_r, a_r, s_r, s_r, s_rr);
        let hxy = part(a_rg, a_r, a_g, s_r, s_g, s_rg);
        let hyy = part(a_gg, a_g, a_g, s_g, s_g, s_gg) - lambda;
        Some((hxx, hxy, hyy))
    }

    /// Grid certificate for convexity of `N(ρ,γ) = (ρ/γ)^d E(γ^{2+d}/ρ^d) − (λ/2)γ²`
    /// and, for `d ≥ 2`, monotone decay of `(d−1) N` in `ρ`.
    pub fn check_ne_conditions(&self, lambda: f64, d: usize, grid: &NeGrid) -> Result<NeReport> {
        if !(grid.lo > 0.0 && grid.hi > grid.lo && grid.n >= 3) {
            return invalid("NE grid needs 0 < lo < hi and at least 3 points");
        }
        let df = d as f64;
        let n_fn = |rho: f64, gam: f64| -> f64 {
            (rho / gam).powf(df) * self.e(gam.powf(2.0 + df) / rho.powf(df)) - 0.5 * lambda * gam * gam
        };
        let pts = log_grid(grid.lo, grid.hi, grid.n);
        let mut report = NeReport {
            convex: true,
            monotone: true,
            worst_eigenvalue: f64::INFINITY,
            worst_eigenvalue_at: (0.0, 0.0),
            worst_increase: f64::NEG_INFINITY,
            flagged: Vec::new(),
        };
        for &rho in &pts[1..pts.len() - 1] {
            for &gam in &pts[1..pts.len() - 1] {
                let Some((hxx, hxy, hyy)) = self.ne_hessian(lambda, df, rho, gam) else {
                    report.flagged.push((rho, gam));
                    continue;
                };
                let tr = 0.5 * (hxx + hyy);
                let disc = (0.25 * (hxx - hyy).powi(2) + hxy * hxy).sqrt();
                let eig = tr - disc;
                if eig < report.worst_eigenvalue {
                    report.worst_eigenvalue = eig;
                    report.worst_eigenvalue_at = (rho, gam);
                }
            }
        }
        if report.worst_eigenvalue < -grid.tol {
            report.convex = false;
        }
        if d >= 2 {
            for &gam in &pts {
                for k in 1..pts.len() {
                    let (a, b) = (n_fn(pts[k - 1], gam), n_fn(pts[k], gam));
                    if !(a.is_finite() && b.is_finite()) {
                        report.flagged.push((pts[k], gam));
                        continue;
                    }
                    let inc = (df - 1.0) * (b - a) / (1.0 + a.abs().max(b.abs()));
                    report.worst_increase = report.worst_increase.max(inc);
                }
            }
            report.monotone = report.worst_increase <= grid.tol;
        }
        Ok(report)
    }
}

/// Log-spaced grid for [`EntropySpec::check_ne_conditions`].
#[derive(Debug, Clone, Copy)]
pub struct NeGrid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub tol: f64,
}

impl Default for NeGrid {
    fn default() -> Self {
        Self { lo: 0.25, hi: 4.0, n: 40, tol: 1e-8 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NeReport {
    pub convex: bool,
    pub monotone: bool,
    /// Smallest Hessian eigenvalue divided by `1 + max |H_ij|`.
    pub worst_eigenvalue: f64,
    pub worst_eigenvalue_at: (f64, f64),
    /// Largest relative first difference of `(d−1)N` in `ρ`; `−∞` when `d = 1`.
    pub worst_increase: f64,
    /// Grid points where `N` overflowed.
    pub flagged: Vec<(f64, f64)>,
}

/// `γ · mass(μ)` if `ρ ≤ 1 + 1e−12` everywhere, else `+∞`.
pub fn eval_limit_functional(gamma: f64, mu: &DiscreteMeasure) -> f64 {
    if mu.density().iter().any(|r| *r > 1.0 + 1e-12) {
        f64::INFINITY
    } else {
        gamma * mu.mass()
    }
}

pub(crate) fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp()).collect()
}

/// Shape-preserving piecewise cubic Hermite interpolant, extended linearly
/// beyond the last sample and towards 0 before the first.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneCubic {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl MonotoneCubic {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return invalid("table needs at least two (c, E) samples of equal length");
        }
        if x[0] < 0.0 || x.windows(2).any(|w| !(w[1] > w[0])) {
            return invalid("table abscissae must be nonnegative and strictly increasing");
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return invalid("table entries must be finite");
        }
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = delta[0];
            d[1] = delta[0];
        } else {
            for k in 1..n - 1 {
                if delta[k - 1] * delta[k] > 0.0 {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
                }
            }
            d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
            d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Ok(Self { x, y, d })
    }

    fn locate(&self, c: f64) -> usize {
        match self.x.binary_search_by(|v| v.partial_cmp(&c).expect("finite table")) {
            Ok(k) => k.min(self.x.len() - 2),
            Err(k) => k.saturating_sub(1).min(self.x.len() - 2),
        }
    }

    fn end_slope(&self) -> f64 {
        self.d[self.d.len() - 1]
    }

    pub fn value(&self, c: f64) -> f64 {
        let n = self.x.len();
        if c <= self.x[0] {
            return self.y[0] + self.d[0] * (c - self.x[0]);
        }
        if c >= self.x[n - 1] {
            return self.y[n - 1] + self.d[n - 1] * (c - self.x[n - 1]);
        }
        let k = self.locate(c);
        let h = self.x[k + 1] - self.x[k];
        let t = (c - self.x[k]) / h;
        let (t2, t3) = (t * t, t * t * t);
        (2.0 * t3 - 3.0 * t2 + 1.0) * self.y[k]
            + (t3 - 2.0 * t2 + t) * h * self.d[k]
            + (-2.0 * t3 + 3.0 * t2) * self.y[k + 1]
            + (t3 - t2) * h * self.d[k + 1]
    }

    pub fn derivative(&self, c: f64) -> f64 {
        let n = self.x.len();
        if c <= self.x[0] {
            return self.d[0];
        }
        if c >= self.x[n - 1] {
            return self.d[n - 1];
        }
        let k = self.locate(c);
        let h = self.x[k + 1] - self.x[k];
        let t = (c - self.x[k]) / h;
        let t2 = t * t;
        ((6.0 * t2 - 6.0 * t) * self.y[k] + (-6.0 * t2 + 6.0 * t) * self.y[k + 1]) / h
            + (3.0 * t2 - 4.0 * t + 1.0) * self.d[k]
            + (3.0 * t2 - 2.0 * t) * self.d[k + 1]
    }

    pub fn second_derivative(&self, c: f64) -> f64 {
        let n = self.x.len();
        if c <= self.x[0] || c >= self.x[n - 1] {
            return 0.0;
        }
        let k = self.locate(c);
        let h = self.x[k + 1] - self.x[k];
        let t = (c - self.x[k]) / h;
        ((12.0 * t - 6.0) * (self.y[k] - self.y[k + 1]) / h + (6.0 * t - 4.0) * self.d[k] + (6.0 * t - 2.0) * self.d[k + 1])
            / h
    }
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if s.signum() != d0.signum() {
        0.0
    } else if d0.signum() != d1.signum() && s.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        s
    }
}
