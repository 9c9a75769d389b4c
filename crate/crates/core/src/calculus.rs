//! Finite-difference Klein-Gordon operators and tensor Gauss-Legendre
//! quadrature on axis-aligned boxes.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{ManifoldKind, ManifoldSpec};
use crate::summation::CompensatedSum;

/// Default step for finite-difference residuals.
pub const DEFAULT_STEP: f64 = 1e-3;

/// Minimum clearance between a box and its own deck images.
pub const DOMAIN_MARGIN: f64 = 0.05;

/// Central-difference `(Δ − α²) f (x)` with step `h`.
pub fn kg_residual<F: Fn(&[f64]) -> f64>(field: &F, alpha: f64, x: &[f64], h: f64) -> f64 {
    let f0 = field(x);
    let mut p = x.to_vec();
    let mut lap = 0.0;
    for i in 0..x.len() {
        p[i] = x[i] + h;
        let fp = field(&p);
        p[i] = x[i] - h;
        let fm = field(&p);
        p[i] = x[i];
        lap += (fp - 2.0 * f0 + fm) / (h * h);
    }
    lap - alpha * alpha * f0
}

/// Residuals at the Richardson pair `(h, h/2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualReport {
    pub h: f64,
    pub coarse: f64,
    pub fine: f64,
    /// `(4 R(h/2) − R(h)) / 3`, the fourth-order estimate of the true residual.
    pub extrapolated: f64,
    /// `log2 |R(h) / R(h/2)|`.
    pub observed_order: f64,
}

pub fn kg_residual_report<F: Fn(&[f64]) -> f64>(field: &F, alpha: f64, x: &[f64], h: f64) -> ResidualReport {
    let coarse = kg_residual(field, alpha, x, h);
    let fine = kg_residual(field, alpha, x, h / 2.0);
    ResidualReport {
        h,
        coarse,
        fine,
        extrapolated: (4.0 * fine - coarse) / 3.0,
        observed_order: (coarse / fine).abs().log2(),
    }
}

fn central_gradient<F: Fn(&[f64]) -> f64>(field: &F, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let diff = |p: &mut Vec<f64>, d: f64| {
                p[i] = x[i] + d;
                let fp = field(p);
                p[i] = x[i] - d;
                let fm = field(p);
                p[i] = x[i];
                (fp - fm) / (2.0 * d)
            };
            let coarse = diff(&mut p, h);
            let fine = diff(&mut p, h / 2.0);
            (4.0 * fine - coarse) / 3.0
        })
        .collect()
}

/// Richardson-extrapolated central-difference gradient.
pub fn gradient<F: Fn(&[f64]) -> f64>(field: &F, x: &[f64], h: f64) -> Vec<f64> {
    central_gradient(field, x, h)
}

/// `∂u/∂ν (y) = lim_{t→0+} ν · ∇u(y − tν)`, with the gradient taken at the
/// interior offsets `t ∈ {h, h/2, h/4}` and extrapolated quadratically to `t = 0`.
pub fn normal_derivative<F: Fn(&[f64]) -> f64>(field: &F, y: &[f64], normal: &[f64], h: f64) -> f64 {
    let directional = |t: f64| {
        let p: Vec<f64> = y.iter().zip(normal).map(|(a, b)| a - t * b).collect();
        let g = central_gradient(field, &p, t / 2.0);
        g.iter().zip(normal).map(|(a, b)| a * b).sum::<f64>()
    };
    let d1 = directional(h);
    let d2 = directional(h / 2.0);
    let d4 = directional(h / 4.0);
    (d1 - 6.0 * d2 + 8.0 * d4) / 3.0
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    if order == 1 {
        return (vec![0.0], vec![2.0]);
    }
    let mut nodes = vec![0.0; order];
    let mut weights = vec![0.0; order];
    for i in 0..order.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (order as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=order {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = order as f64 * (x * p1 - p0) / (x * x - 1.0);
            let step = p1 / dp;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[order - 1 - i] = x;
        weights[i] = w;
        weights[order - 1 - i] = w;
    }
    (nodes, weights)
}

/// Composite Gauss-Legendre rule: `panels` equal panels per box edge,
/// `order` nodes per panel per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    panels: usize,
    order: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn new(panels: usize, order: usize) -> Result<Self> {
        if panels == 0 || order == 0 || order > 64 {
            return Err(Error::InvalidParameter(format!(
                "quadrature needs panels >= 1 and 1 <= order <= 64, got {panels} and {order}"
            )));
        }
        let (nodes, weights) = gauss_legendre(order);
        Ok(Self { panels, order, nodes, weights })
    }

    pub fn panels(&self) -> usize {
        self.panels
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Reference nodes on `[-1, 1]`.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// The same rule with twice as many panels.
    pub fn refined(&self) -> Self {
        Self { panels: 2 * self.panels, ..self.clone() }
    }

    /// Composite `(node, weight)` pairs for panel `p` of `[a, b]`.
    fn panel_nodes(&self, a: f64, b: f64, p: usize) -> impl Iterator<Item = (f64, f64)> + '_ {
        let width = (b - a) / self.panels as f64;
        let lo = a + p as f64 * width;
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(t, w)| (lo + 0.5 * width * (t + 1.0), 0.5 * width * w))
    }
}

/// A weighted quadrature point.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadNode {
    pub point: Vec<f64>,
    pub weight: f64,
}

/// One boundary panel of a box: a face cell with constant outward normal.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryPanel {
    pub axis: usize,
    pub outward: f64,
    pub center: Vec<f64>,
    pub normal: Vec<f64>,
    pub width: f64,
    pub nodes: Vec<QuadNode>,
}

/// Axis-aligned box `[lower, upper]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.len() < 2 {
            return Err(Error::InvalidDomain(format!(
                "box corners must share a dimension >= 2, got {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        if lower.iter().chain(&upper).any(|c| !c.is_finite()) {
            return Err(Error::InvalidDomain("non-finite box corner".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::InvalidDomain("box needs lower < upper on every axis".into()));
        }
        Ok(Self { lower, upper })
    }

    /// A box validated against the quotient: inside the period cell and
    /// separated by `DOMAIN_MARGIN` from all of its nontrivial deck images,
    /// so the two-point kernel is singular on `D × D` only on the diagonal.
    pub fn for_manifold(spec: &ManifoldSpec, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let domain = Self::new(lower, upper)?;
        domain.validate(spec)?;
        Ok(domain)
    }

    pub fn validate(&self, spec: &ManifoldSpec) -> Result<()> {
        let n = spec.n();
        if self.dim() != n {
            return Err(Error::RankMismatch { expected: n, got: self.dim() });
        }
        let k = spec.k();
        for i in 0..k {
            let cell_hi = if spec.kind() == ManifoldKind::KleinBottle && i == n - 1 { 2.0 } else { 1.0 };
            if self.lower[i] < 0.0 || self.upper[i] > cell_hi {
                return Err(Error::InvalidDomain(format!(
                    "axis {i} range [{}, {}] leaves the period cell [0, {cell_hi}]",
                    self.lower[i], self.upper[i]
                )));
            }
        }
        // images of the expanded box are boxes; only |γ|_max <= 2 can reach it
        let lo: Vec<f64> = self.lower.iter().map(|c| c - DOMAIN_MARGIN / 2.0).collect();
        let hi: Vec<f64> = self.upper.iter().map(|c| c + DOMAIN_MARGIN / 2.0).collect();
        for m in 1..=2 {
            let mut clash = None;
            crate::lattice::for_each_shell_point(k, m, |v| {
                if clash.is_some() {
                    return;
                }
                let mut a = lo.clone();
                let mut b = hi.clone();
                crate::lattice::apply_in_place(spec, v, &mut a);
                crate::lattice::apply_in_place(spec, v, &mut b);
                let overlap = (0..n).all(|i| {
                    let (ia, ib) = (a[i].min(b[i]), a[i].max(b[i]));
                    ia < hi[i] && ib > lo[i]
                });
                if overlap {
                    clash = Some(v.to_vec());
                }
            });
            if let Some(v) = clash {
                return Err(Error::InvalidDomain(format!(
                    "box lies within {DOMAIN_MARGIN} of its image under {v:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).product()
    }

    pub fn surface_area(&self) -> f64 {
        let v = self.volume();
        2.0 * self.lower.iter().zip(&self.upper).map(|(l, u)| v / (u - l)).sum::<f64>()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.signed_distance(x) > 0.0
    }

    /// Sup-norm distance to the boundary, positive inside and negative outside.
    pub fn signed_distance(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(c, (l, u))| (c - l).min(u - c))
            .fold(f64::INFINITY, f64::min)
    }

    /// Boundary panels, faces ordered by axis then lower/upper side.
    pub fn boundary_panels(&self, rule: &QuadratureRule) -> Vec<BoundaryPanel> {
        let n = self.dim();
        let p = rule.panels();
        let mut out = Vec::with_capacity(2 * n * p.pow(n as u32 - 1));
        for axis in 0..n {
            for (outward, fixed) in [(-1.0, self.lower[axis]), (1.0, self.upper[axis])] {
                let others: Vec<usize> = (0..n).filter(|&i| i != axis).collect();
                let mut normal = vec![0.0; n];
                normal[axis] = outward;
                for_each_index(others.len(), p, |cell| {
                    let mut center = vec![fixed; n];
                    let mut width = f64::INFINITY;
                    let mut axes = Vec::with_capacity(others.len());
                    for (slot, &i) in others.iter().enumerate() {
                        let h = (self.upper[i] - self.lower[i]) / p as f64;
                        center[i] = self.lower[i] + (cell[slot] as f64 + 0.5) * h;
                        width = width.min(h);
                        axes.push(rule.panel_nodes(self.lower[i], self.upper[i], cell[slot]).collect::<Vec<_>>());
                    }
                    let mut nodes = Vec::new();
                    tensor_nodes(&axes, |coords, w| {
                        let mut point = vec![fixed; n];
                        for (slot, &i) in others.iter().enumerate() {
                            point[i] = coords[slot];
                        }
                        nodes.push(QuadNode { point, weight: w });
                    });
                    out.push(BoundaryPanel { axis, outward, center, normal: normal.clone(), width, nodes });
                });
            }
        }
        out
    }

    /// Tensor volume nodes, `panels^n` cells of `order^n` points.
    pub fn volume_nodes(&self, rule: &QuadratureRule) -> Vec<QuadNode> {
        let n = self.dim();
        let axes: Vec<Vec<(f64, f64)>> = (0..n)
            .map(|i| {
                (0..rule.panels())
                    .flat_map(|p| rule.panel_nodes(self.lower[i], self.upper[i], p).collect::<Vec<_>>())
                    .collect()
            })
            .collect();
        let mut out = Vec::with_capacity(axes.iter().map(Vec::len).product());
        tensor_nodes(&axes, |coords, w| out.push(QuadNode { point: coords.to_vec(), weight: w }));
        out
    }
}

fn for_each_index(dims: usize, base: usize, mut visit: impl FnMut(&[usize])) {
    let mut idx = vec![0usize; dims];
    loop {
        visit(&idx);
        let mut d = dims;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < base {
                break;
            }
            idx[d] = 0;
        }
    }
}

fn tensor_nodes(axes: &[Vec<(f64, f64)>], mut visit: impl FnMut(&[f64], f64)) {
    let sizes: Vec<usize> = axes.iter().map(Vec::len).collect();
    let mut coords = vec![0.0; axes.len()];
    let mut idx = vec![0usize; axes.len()];
    loop {
        let mut w = 1.0;
        for (a, (&i, axis)) in idx.iter().zip(axes).enumerate() {
            coords[a] = axis[i].0;
            w *= axis[i].1;
        }
        visit(&coords, w);
        let mut d = axes.len();
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < sizes[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

/// Weighted sum with values computed in parallel and reduced in node order.
pub(crate) fn reduce_nodes<T: Sync>(
    items: &[T],
    eval: impl Fn(&T) -> Result<f64> + Sync + Send,
) -> Result<f64> {
    let values: Vec<Result<f64>> = items.par_iter().map(eval).collect();
    let mut acc = CompensatedSum::new();
    for v in values {
        acc.add(v?);
    }
    Ok(acc.value())
}

/// `∫_{∂D} f(y, ν(y)) dS(y)` with fallible integrand.
pub fn try_surface_integral<F>(integrand: F, domain: &BoxDomain, rule: &QuadratureRule) -> Result<f64>
where
    F: Fn(&[f64], &[f64]) -> Result<f64> + Sync + Send,
{
    let panels = domain.boundary_panels(rule);
    let nodes: Vec<(&QuadNode, &[f64])> = panels
        .iter()
        .flat_map(|p| p.nodes.iter().map(move |q| (q, p.normal.as_slice())))
        .collect();
    reduce_nodes(&nodes, |(q, normal)| Ok(q.weight * integrand(&q.point, normal)?))
}

/// `∫_D f(y) dV(y)` with fallible integrand.
pub fn try_volume_integral<F>(integrand: F, domain: &BoxDomain, rule: &QuadratureRule) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64> + Sync + Send,
{
    let nodes = domain.volume_nodes(rule);
    reduce_nodes(&nodes, |q| Ok(q.weight * integrand(&q.point)?))
}

pub fn surface_integral<F>(integrand: F, domain: &BoxDomain, rule: &QuadratureRule) -> f64
where
    F: Fn(&[f64], &[f64]) -> f64 + Sync + Send,
{
    try_surface_integral(|y, nu| Ok(integrand(y, nu)), domain, rule).expect("infallible integrand")
}

pub fn volume_integral<F>(integrand: F, domain: &BoxDomain, rule: &QuadratureRule) -> f64
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    try_volume_integral(|y| Ok(integrand(y)), domain, rule).expect("infallible integrand")
}
