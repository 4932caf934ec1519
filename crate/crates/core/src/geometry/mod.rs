//! Metric-geometry probes on spaces with closed-form geodesics.
//!
//! Three model spaces are supported: a Euclidean space, the cone over a
//! segment of length at most π (embedded isometrically as a planar sector
//! `[x, r] ↦ r(cos x, sin x)`), and single Diracs under HK, which form the cone
//! with angles capped at π/2. Angles at a vertex are estimated along the shrink
//! schedule `s = t = 2^{−k}`.

use std::f64::consts::{FRAC_PI_2, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hk::cone::{cone_distance, ConePoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    /// `ℝ^dim` with the Euclidean norm.
    Euclid { dim: usize },
    /// Points `[x, r]`, `x ∈ [0, base_len]`, `r ≥ 0`.
    Cone { base_len: f64 },
    /// Points `[x, a]` standing for `a δ_x` on the real line.
    Hk2,
}

/// A model space with exact distances and geodesics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSpaceProbe {
    pub space: Space,
}

impl MetricSpaceProbe {
    pub fn euclid(dim: usize) -> Self {
        Self { space: Space::Euclid { dim } }
    }

    pub fn cone(base_len: f64) -> Result<Self> {
        if !(base_len > 0.0 && base_len <= PI) {
            return invalid("cone base must have length in (0, π]");
        }
        Ok(Self { space: Space::Cone { base_len } })
    }

    pub fn hk2() -> Self {
        Self { space: Space::Hk2 }
    }

    pub fn check_point(&self, p: &[f64]) -> Result<()> {
        match self.space {
            Space::Euclid { dim } => {
                if p.len() != dim {
                    return invalid(format!("expected {dim} coordinates, got {}", p.len()));
                }
            }
            Space::Cone { base_len } => {
                if p.len() != 2 || !(p[0] >= 0.0 && p[0] <= base_len) || !(p[1] >= 0.0) {
                    return invalid("cone points are [x, r] with x in the base and r ≥ 0");
                }
            }
            Space::Hk2 => {
                if p.len() != 2 || !p[0].is_finite() || !(p[1] >= 0.0) {
                    return invalid("Dirac points are [x, a] with a ≥ 0");
                }
            }
        }
        Ok(())
    }

    pub fn distance(&self, p: &[f64], q: &[f64]) -> f64 {
        match self.space {
            Space::Euclid { .. } => p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
            Space::Cone { .. } => cone_distance(&ConePoint::new(vec![p[0]], p[1]), &ConePoint::new(vec![q[0]], q[1])),
            Space::Hk2 => {
                let h = (0.5 * (p[0] - q[0]).abs().min(FRAC_PI_2)).sin();
                let dr = p[1].sqrt() - q[1].sqrt();
                (dr * dr + 4.0 * (p[1] * q[1]).sqrt() * h * h).sqrt()
            }
        }
    }

    /// Constant-speed geodesic from `p` to `q`.
    pub fn geodesic(&self, p: &[f64], q: &[f64]) -> Result<Geodesic> {
        self.check_point(p)?;
        self.check_point(q)?;
        if self.space == Space::Hk2 && (p[0] - q[0]).abs() > FRAC_PI_2 && p[1] > 0.0 && q[1] > 0.0 {
            return invalid("Diracs further apart than π/2 are joined by a two-Dirac geodesic");
        }
        Ok(Geodesic { probe: *self, from: p.to_vec(), to: q.to_vec() })
    }
}

/// Planar image of a sector point at angle `x` and radius `r`.
fn sector(x: f64, r: f64) -> [f64; 2] {
    [r * x.cos(), r * x.sin()]
}

/// Inverse of [`sector`] on the closed upper half-plane.
fn unsector(v: [f64; 2]) -> (f64, f64) {
    let r = v[0].hypot(v[1]);
    let x = if r == 0.0 { 0.0 } else { v[1].max(0.0).atan2(v[0]) };
    (x, r)
}

#[derive(Debug, Clone, Serialize)]
pub struct Geodesic {
    pub probe: MetricSpaceProbe,
    pub from: Vec<f64>,
    pub to: Vec<f64>,
}

impl Geodesic {
    pub fn length(&self) -> f64 {
        self.probe.distance(&self.from, &self.to)
    }

    pub fn at(&self, t: f64) -> Vec<f64> {
        if t == 0.0 {
            return self.from.clone();
        }
        if t == 1.0 {
            return self.to.clone();
        }
        let (p, q) = (&self.from, &self.to);
        match self.probe.space {
            Space::Euclid { .. } => p.iter().zip(q).map(|(a, b)| a + t * (b - a)).collect(),
            Space::Cone { .. } => {
                let (a, b) = (sector(p[0], p[1]), sector(q[0], q[1]));
                let (x, r) = unsector([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
                // The apex has no base coordinate; keep the one of the nearer end.
                let x = if r == 0.0 { if t < 0.5 { p[0] } else { q[0] } } else { x };
                vec![x, r]
            }
            Space::Hk2 => {
                // Rotate so the start sits at angle 0, then work in the sector.
                let (sa, sb) = (p[1].sqrt(), q[1].sqrt());
                if sa == 0.0 || sb == 0.0 {
                    let x = if sa == 0.0 { q[0] } else { p[0] };
                    let s = (1.0 - t) * sa + t * sb;
                    return vec![x, s * s];
                }
                let dx = q[0] - p[0];
                let b = sector(dx.abs(), sb);
                let (ang, r) = unsector([sa + t * (b[0] - sa), t * b[1]]);
                vec![p[0] + ang * dx.signum(), r * r]
            }
        }
    }

    pub fn sample(&self, ts: &[f64]) -> GeodesicSample {
        GeodesicSample { ts: ts.to_vec(), points: ts.iter().map(|&t| self.at(t)).collect(), from: self.from.clone(), to: self.to.clone() }
    }

    /// Reversed curve `t ↦ g(1 − t)`.
    pub fn reversed(&self) -> Geodesic {
        Geodesic { probe: self.probe, from: self.to.clone(), to: self.from.clone() }
    }

    /// Restriction to `[0, s]` reparametrized onto `[0, 1]`.
    pub fn truncated(&self, s: f64) -> Geodesic {
        Geodesic { probe: self.probe, from: self.from.clone(), to: self.at(s) }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GeodesicSample {
    pub ts: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    pub from: Vec<f64>,
    pub to: Vec<f64>,
}

impl GeodesicSample {
    /// `max |d(g(s), g(t)) − |s − t| d(x, y)|` over sampled pairs.
    pub fn constant_speed_residual(&self, probe: &MetricSpaceProbe) -> f64 {
        let len = probe.distance(&self.from, &self.to);
        let mut worst: f64 = 0.0;
        for a in 0..self.ts.len() {
            for b in a + 1..self.ts.len() {
                let d = probe.distance(&self.points[a], &self.points[b]);
                worst = worst.max((d - (self.ts[b] - self.ts[a]).abs() * len).abs());
            }
        }
        worst
    }
}

/// `arccos` of `(d²(x,y) + d²(x,z) − d²(y,z)) / (2 d(x,y) d(x,z))`.
pub fn comparison_angle(probe: &MetricSpaceProbe, x: &[f64], y: &[f64], z: &[f64]) -> Result<f64> {
    let dxy = probe.distance(x, y);
    let dxz = probe.distance(x, z);
    if dxy == 0.0 || dxz == 0.0 {
        return Err(Error::InvalidInput("comparison angle at a degenerate vertex".into()));
    }
    let dyz = probe.distance(y, z);
    let c = (dxy * dxy + dxz * dxz - dyz * dyz) / (2.0 * dxy * dxz);
    Ok(c.clamp(-1.0, 1.0).acos())
}

/// Shrink schedule `2^{−k}` for `k = 3..=14`.
pub fn default_schedule() -> Vec<f64> {
    (3..=14).map(|k| 0.5f64.powi(k)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct AngleEstimate {
    /// Max over the last four schedule values.
    pub upper: f64,
    /// Min over the last four schedule values.
    pub lower: f64,
    pub spread: f64,
    pub strict: bool,
    pub values: Vec<f64>,
}

/// Upper angle between two geodesics leaving the same point.
pub fn upper_angle(g1: &Geodesic, g2: &Geodesic, schedule: &[f64]) -> Result<AngleEstimate> {
    let probe = &g1.probe;
    if probe.distance(&g1.from, &g2.from) > 1e-12 {
        return invalid("geodesics must emanate from the same point");
    }
    if schedule.is_empty() {
        return invalid("empty shrink schedule");
    }
    let values = schedule
        .iter()
        .map(|&s| comparison_angle(probe, &g1.from, &g1.at(s), &g2.at(s)))
        .collect::<Result<Vec<_>>>()?;
    let tail = &values[values.len().saturating_sub(4)..];
    let upper = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lower = tail.iter().cloned().fold(f64::INFINITY, f64::min);
    let spread = upper - lower;
    if spread > 1e-6 {
        log::warn!("angle estimate has not stabilized: tail spread {spread:.3e}");
    }
    Ok(AngleEstimate { upper, lower, spread, strict: spread <= 1e-6, values })
}

/// `d(x,y) d(x,z) cos ∠_up`; zero when either geodesic is trivial.
pub fn up_inner_product(g1: &Geodesic, g2: &Geodesic) -> Result<f64> {
    let (a, b) = (g1.length(), g2.length());
    if a == 0.0 || b == 0.0 {
        return Ok(0.0);
    }
    Ok(a * b * upper_angle(g1, g2, &default_schedule())?.upper.cos())
}

/// `d²(x,y) + d²(x,z) + 2⟨g1, g2⟩_up`, clamped at zero.
pub fn delta_squared(g1: &Geodesic, g2: &Geodesic) -> Result<f64> {
    let (a, b) = (g1.length(), g2.length());
    let v = a * a + b * b + 2.0 * up_inner_product(g1, g2)?;
    if v < -1e-6 * (1.0 + a * a + b * b) {
        log::warn!("Δ² estimate {v:.3e} is clearly negative");
    }
    Ok(v.max(0.0))
}

#[derive(Debug, Clone, Serialize)]
pub struct LacReport {
    pub angles: [f64; 3],
    pub sum: f64,
    pub pass: bool,
}

/// Sum of the three pairwise upper angles against `2π`.
pub fn check_lac(g1: &Geodesic, g2: &Geodesic, g3: &Geodesic, tol: f64) -> Result<LacReport> {
    let s = default_schedule();
    let angles = [upper_angle(g1, g2, &s)?.upper, upper_angle(g2, g3, &s)?.upper, upper_angle(g1, g3, &s)?.upper];
    let sum = angles.iter().sum::<f64>();
    Ok(LacReport { angles, sum, pass: sum <= 2.0 * PI + tol })
}

/// `⟨g_xy, g_xo⟩_up + ⟨g_xo, g_xz⟩_up + d(x,o) Δ(g_xy, g_xz)`, nonnegative under LAC.
pub fn check_cauchy_schwarz_type(probe: &MetricSpaceProbe, x: &[f64], y: &[f64], z: &[f64], ob: &[f64]) -> Result<f64> {
    let gy = probe.geodesic(x, y)?;
    let gz = probe.geodesic(x, z)?;
    let go = probe.geodesic(x, ob)?;
    let lhs = up_inner_product(&gy, &go)? + up_inner_product(&go, &gz)?;
    let delta = delta_squared(&gy, &gz)?.sqrt();
    Ok(lhs + go.length() * delta)
}

#[derive(Debug, Clone, Serialize)]
pub struct ConcavityReport {
    /// `max_t ((1−t) f(0) + t f(1) − f(t) − κ t(1−t)/2)`.
    pub worst_violation: f64,
    pub at_t: f64,
}

/// `κ`-concavity test of `f` on `n + 1` equispaced points of `[0, 1]`.
pub fn check_kappa_concavity(f: impl Fn(f64) -> f64, kappa_eff: f64, n: usize) -> ConcavityReport {
    let (f0, f1) = (f(0.0), f(1.0));
    let mut worst = f64::NEG_INFINITY;
    let mut at = 0.0;
    for i in 0..=n.max(1) {
        let t = i as f64 / n.max(1) as f64;
        let v = (1.0 - t) * f0 + t * f1 - f(t) - 0.5 * kappa_eff * t * (1.0 - t);
        if v > worst {
            worst = v;
            at = t;
        }
    }
    ConcavityReport { worst_violation: worst, at_t: at }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < PI) {
        return invalid(format!("δ = {delta} outside (0, π)"));
    }
    Ok(())
}

/// `β_δ(t) = sin(tδ) / (sin(tδ) + sin((1−t)δ))`.
pub fn reparam_beta(t: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    let (a, b) = ((t * delta).sin(), ((1.0 - t) * delta).sin());
    Ok(a / (a + b))
}

/// `r_δ(t) = sin δ / (sin(tδ) + sin((1−t)δ))`, with values in `[cos(δ/2), 1]`.
/// The minimum sits at `t = 1/2`, so `r_δ ≥ 1/2` only for `δ ≤ 2π/3`.
pub fn reparam_r(t: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    Ok(delta.sin() / ((t * delta).sin() + ((1.0 - t) * delta).sin()))
}

/// `Q_p(t,δ) = sin(tδ) (sin(tδ) + sin((1−t)δ))^{p−1} / (t (sin δ)^p)`; at `t = 0`
/// the limit `δ (sin δ)^{−1}` is used.
pub fn q_p(p: f64, t: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if !(0.0..=1.0).contains(&t) {
        return invalid("t outside [0, 1]");
    }
    let sd = delta.sin();
    if t == 0.0 {
        return Ok(delta / sd);
    }
    let a = (t * delta).sin();
    Ok(a / (t * sd.powf(p)) * (a + ((1.0 - t) * delta).sin()).powf(p - 1.0))
}

#[derive(Debug, Clone, Serialize)]
pub struct TransferReport {
    pub p: f64,
    pub n: usize,
    /// `min (1 − β)/r^p − (1 − t)`.
    pub min_first: f64,
    /// `min β/r^p − t`.
    pub min_second: f64,
    pub min_q: f64,
    /// `(t, δ)` attaining `min_q`.
    pub argmin_q: (f64, f64),
    /// First grid point (by δ, then t, descending) with `Q_p < 1 − 1e−9`.
    pub witness: Option<(f64, f64, f64)>,
}

/// Both transfer estimates and `Q_p` on the interior grid `t_i = i/(n+1)`,
/// `δ_j = jπ/(n+1)`, `i, j = 1..=n`.
pub fn check_transfer_estimates(p: f64, n: usize) -> Result<TransferReport> {
    if !(p > 0.0) || n == 0 {
        return invalid("need p > 0 and a nonempty grid");
    }
    let h = 1.0 / (n + 1) as f64;
    let rows: Vec<(f64, f64, f64, (f64, f64), Option<(f64, f64, f64)>)> = (1..=n)
        .into_par_iter()
        .map(|j| {
            let delta = j as f64 * PI * h;
            let (mut m1, mut m2, mut mq) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
            let mut arg = (0.0, delta);
            let mut wit = None;
            for i in (1..=n).rev() {
                let t = i as f64 * h;
                let beta = reparam_beta(t, delta).expect("δ inside (0, π)");
                let rp = reparam_r(t, delta).expect("δ inside (0, π)").powf(p);
                m1 = m1.min((1.0 - beta) / rp - (1.0 - t));
                m2 = m2.min(beta / rp - t);
                let q = q_p(p, t, delta).expect("grid inside the domain");
                if q < mq {
                    mq = q;
                    arg = (t, delta);
                }
                if q < 1.0 - 1e-9 && wit.is_none() {
                    wit = Some((t, delta, q));
                }
            }
            (m1, m2, mq, arg, wit)
        })
        .collect();
    let mut rep = TransferReport {
        p,
        n,
        min_first: f64::INFINITY,
        min_second: f64::INFINITY,
        min_q: f64::INFINITY,
        argmin_q: (0.0, 0.0),
        witness: None,
    };
    for (m1, m2, mq, arg, wit) in rows.into_iter().rev() {
        rep.min_first = rep.min_first.min(m1);
        rep.min_second = rep.min_second.min(m2);
        if mq < rep.min_q {
            rep.min_q = mq;
            rep.argmin_q = arg;
        }
        if rep.witness.is_none() {
            rep.witness = wit;
        }
    }
    Ok(rep)
}
