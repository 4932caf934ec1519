//! Grid domains and nonnegative grid measures.
//!
//! Densities are collocated at nodes; masses are always density times the
//! trapezoid weight of the node.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Serialized form of a [`GridDomain`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub nodes: Vec<usize>,
}

/// Axis-aligned box in one or two dimensions with a uniform node grid.
///
/// Node `i` in 2-D has axis indices `(i % n0, i / n0)`.
#[derive(Debug, Clone)]
pub struct GridDomain {
    spec: DomainSpec,
    spacing: Vec<f64>,
    points: Vec<[f64; 2]>,
    weights: Vec<f64>,
}

impl PartialEq for GridDomain {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
    }
}

impl GridDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, nodes: Vec<usize>) -> Result<Self> {
        Self::from_spec(DomainSpec { lower, upper, nodes })
    }

    /// One-dimensional interval `[a, b]` with `n` nodes.
    pub fn interval(a: f64, b: f64, n: usize) -> Result<Self> {
        Self::new(vec![a], vec![b], vec![n])
    }

    pub fn from_spec(spec: DomainSpec) -> Result<Self> {
        let d = spec.lower.len();
        if !(d == 1 || d == 2) || spec.upper.len() != d || spec.nodes.len() != d {
            return invalid("domain dimension must be 1 or 2 with matching lower/upper/nodes");
        }
        let mut spacing = Vec::with_capacity(d);
        for k in 0..d {
            let (lo, hi, n) = (spec.lower[k], spec.upper[k], spec.nodes[k]);
            if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
                return invalid(format!("axis {k}: need finite lower < upper"));
            }
            if n < 2 {
                return invalid(format!("axis {k}: need at least 2 nodes"));
            }
            spacing.push((hi - lo) / (n - 1) as f64);
        }
        let axis_coord = |k: usize, i: usize| -> f64 {
            if i + 1 == spec.nodes[k] {
                spec.upper[k]
            } else {
                spec.lower[k] + i as f64 * spacing[k]
            }
        };
        let axis_weight = |k: usize, i: usize| -> f64 {
            if i == 0 || i + 1 == spec.nodes[k] {
                0.5 * spacing[k]
            } else {
                spacing[k]
            }
        };
        let n0 = spec.nodes[0];
        let n1 = if d == 2 { spec.nodes[1] } else { 1 };
        let mut points = Vec::with_capacity(n0 * n1);
        let mut weights = Vec::with_capacity(n0 * n1);
        for j in 0..n1 {
            for i in 0..n0 {
                if d == 1 {
                    points.push([axis_coord(0, i), 0.0]);
                    weights.push(axis_weight(0, i));
                } else {
                    points.push([axis_coord(0, i), axis_coord(1, j)]);
                    weights.push(axis_weight(0, i) * axis_weight(1, j));
                }
            }
        }
        Ok(Self { spec, spacing, points, weights })
    }

    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }
    pub fn dim(&self) -> usize {
        self.spec.lower.len()
    }
    pub fn len(&self) -> usize {
        self.points.len()
    }
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
    pub fn nodes_per_axis(&self) -> &[usize] {
        &self.spec.nodes
    }
    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }
    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(f64::INFINITY, f64::min)
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }
    /// Node coordinates; the second entry is 0 in 1-D.
    pub fn point(&self, i: usize) -> [f64; 2] {
        self.points[i]
    }
    pub fn coords(&self, i: usize) -> &[f64] {
        &self.points[i][..self.dim()]
    }
    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.spec.upper[k] - self.spec.lower[k]).product()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let (p, q) = (self.points[i], self.points[j]);
        (p[0] - q[0]).hypot(p[1] - q[1])
    }

    /// Row-major `len × len` distance matrix.
    pub fn distance_matrix(&self) -> Vec<f64> {
        let n = self.len();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = self.distance(i, j);
                out[i * n + j] = d;
                out[j * n + i] = d;
            }
        }
        out
    }

    /// Axis indices of node `i`.
    pub fn axis_index(&self, i: usize) -> (usize, usize) {
        let n0 = self.spec.nodes[0];
        (i % n0, i / n0)
    }

    /// Nearest-neighbour edges of the grid.
    ///
    /// `face` is the trapezoid cross-section of the dual cell boundary, so a
    /// flux density `F` across the edge moves mass `face · F` per unit time and
    /// `Σ face · h · g²` integrates `|∇u|²`-type terms with `g = Δu / h`.
    pub fn edges(&self) -> Vec<Edge> {
        let d = self.dim();
        let n0 = self.spec.nodes[0];
        let n1 = if d == 2 { self.spec.nodes[1] } else { 1 };
        let perp = |k: usize, i: usize| -> f64 {
            if d == 1 {
                1.0
            } else {
                let n = self.spec.nodes[k];
                if i == 0 || i + 1 == n {
                    0.5 * self.spacing[k]
                } else {
                    self.spacing[k]
                }
            }
        };
        let mut out = Vec::new();
        for b in 0..n1 {
            for a in 0..n0 {
                let i = a + b * n0;
                if a + 1 < n0 {
                    out.push(Edge { i, j: i + 1, h: self.spacing[0], face: perp(1.min(d - 1), b) });
                }
                if d == 2 && b + 1 < n1 {
                    out.push(Edge { i, j: i + n0, h: self.spacing[1], face: perp(0, a) });
                }
            }
        }
        out
    }
}

/// Grid edge between nodes `i < j` along one axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub h: f64,
    pub face: f64,
}

/// Nonnegative density collocated at the nodes of a shared domain.
#[derive(Debug, Clone)]
pub struct DiscreteMeasure {
    domain: Arc<GridDomain>,
    density: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeasureJson {
    domain: DomainSpec,
    density: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(domain: Arc<GridDomain>, density: Vec<f64>) -> Result<Self> {
        if density.len() != domain.len() {
            return invalid(format!(
                "density has {} entries, domain has {} nodes",
                density.len(),
                domain.len()
            ));
        }
        if let Some(i) = density.iter().position(|r| !(r.is_finite() && *r >= 0.0)) {
            return invalid(format!("density[{i}] = {} is not a finite nonnegative value", density[i]));
        }
        Ok(Self { domain, density })
    }

    pub fn zero(domain: Arc<GridDomain>) -> Self {
        let n = domain.len();
        Self { domain, density: vec![0.0; n] }
    }

    pub fn uniform(domain: Arc<GridDomain>, c: f64) -> Result<Self> {
        let n = domain.len();
        Self::new(domain, vec![c; n])
    }

    pub fn from_fn(domain: Arc<GridDomain>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let density = (0..domain.len()).map(|i| f(domain.coords(i))).collect();
        Self::new(domain, density)
    }

    /// Builds the measure whose node masses are `masses`.
    pub fn from_masses(domain: Arc<GridDomain>, masses: &[f64]) -> Result<Self> {
        if masses.len() != domain.len() {
            return invalid("mass vector length does not match the domain");
        }
        let density = masses.iter().zip(domain.weights()).map(|(m, w)| m / w).collect();
        Self::new(domain, density)
    }

    pub fn domain(&self) -> &Arc<GridDomain> {
        &self.domain
    }
    pub fn density(&self) -> &[f64] {
        &self.density
    }
    pub fn len(&self) -> usize {
        self.density.len()
    }
    pub fn is_empty(&self) -> bool {
        self.density.is_empty()
    }

    pub fn node_mass(&self, i: usize) -> f64 {
        self.density[i] * self.domain.weight(i)
    }
    pub fn masses(&self) -> Vec<f64> {
        self.density.iter().zip(self.domain.weights()).map(|(r, w)| r * w).collect()
    }
    pub fn mass(&self) -> f64 {
        self.density.iter().zip(self.domain.weights()).map(|(r, w)| r * w).sum()
    }
    pub fn min_density(&self) -> f64 {
        self.density.iter().cloned().fold(f64::INFINITY, f64::min)
    }
    pub fn max_density(&self) -> f64 {
        self.density.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
    pub fn support(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.density[i] > 0.0).collect()
    }

    pub fn same_domain(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.domain, &other.domain) || *self.domain == *other.domain
    }

    pub fn ensure_same_domain(&self, other: &Self) -> Result<()> {
        if self.same_domain(other) {
            Ok(())
        } else {
            Err(Error::DomainMismatch("measures live on different grids".into()))
        }
    }

    /// Density `t² ρ`.
    pub fn scale(&self, t: f64) -> Result<Self> {
        if !(t >= 0.0) || !t.is_finite() {
            return invalid(format!("scale factor must be finite and nonnegative, got {t}"));
        }
        let t2 = t * t;
        Ok(Self {
            domain: self.domain.clone(),
            density: self.density.iter().map(|r| t2 * r).collect(),
        })
    }

    /// Multiplies the density by `s` (no squaring).
    pub fn scale_density(&self, s: f64) -> Result<Self> {
        Self::new(self.domain.clone(), self.density.iter().map(|r| s * r).collect())
    }

    pub fn restrict(&self, mask: &[bool]) -> Result<Self> {
        if mask.len() != self.len() {
            return invalid("mask length does not match the node count");
        }
        Ok(Self {
            domain: self.domain.clone(),
            density: self
                .density
                .iter()
                .zip(mask)
                .map(|(r, &keep)| if keep { *r } else { 0.0 })
                .collect(),
        })
    }

    /// `(1 − s) ρ + s ρ_other`.
    pub fn blend(&self, other: &Self, s: f64) -> Result<Self> {
        self.ensure_same_domain(other)?;
        let density = self.density.iter().zip(&other.density).map(|(a, b)| (1.0 - s) * a + s * b).collect();
        Self::new(self.domain.clone(), density)
    }

    /// Rescales to unit mass.
    pub fn normalized(&self) -> Result<Self> {
        let m = self.mass();
        if !(m > 0.0) {
            return invalid("cannot normalize a zero measure");
        }
        self.scale_density(1.0 / m)
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(MeasureJson { domain: self.domain.spec().clone(), density: self.density.clone() })
            .expect("measure serializes")
    }

    pub fn from_json_value(v: serde_json::Value) -> Result<Self> {
        let m: MeasureJson = serde_json::from_value(v)?;
        Self::new(Arc::new(GridDomain::from_spec(m.domain)?), m.density)
    }

    pub fn to_json(&self) -> String {
        self.to_json_value().to_string()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_json_value(serde_json::from_str(s)?)
    }

    /// CSV with coordinate columns followed by `density`.
    pub fn to_csv(&self) -> String {
        let d = self.domain.dim();
        let mut out = String::new();
        out.push_str(if d == 1 { "x,density\n" } else { "x,y,density\n" });
        for i in 0..self.len() {
            for c in self.domain.coords(i) {
                let _ = write!(out, "{},", crate::runner::fmt_float(*c));
            }
            let _ = writeln!(out, "{}", crate::runner::fmt_float(self.density[i]));
        }
        out
    }
}

/// Builds a measure on a fresh copy of the domain shared by `like`.
pub fn measure_like(like: &DiscreteMeasure, density: Vec<f64>) -> Result<DiscreteMeasure> {
    DiscreteMeasure::new(like.domain().clone(), density)
}
