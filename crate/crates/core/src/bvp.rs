//! Boundary-integral representation, Newton potential and a Dirichlet
//! solver for `(Δ − α²) u = f` on boxes inside a quotient cell.
//!
//! With `(Δ − α²) G(x, ·) = δ_x` Green's second identity gives, for `x ∈ D`,
//!
//! ```text
//! u(x) = ∫_D G(x, y) f(y) dV + ∫_{∂D} [u ∂_ν G(x, y) − G(x, y) ∂_ν u] dS
//! ```
//!
//! and `0` on the right for `x` outside `D` and its deck images.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::calculus::{reduce_nodes, BoundaryPanel, BoxDomain, QuadratureRule};
use crate::error::{Error, Result};
use crate::kernels::{MultiIndex, PeriodizedKernel};
use crate::summation::CompensatedSum;

/// A scalar field shared across worker threads.
pub type Field = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Ordering of the boundary term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SignConvention {
    /// `∫ [u ∂_ν G − G ∂_ν u] dS`, the identity that holds for `(Δ − α²) G = δ`.
    #[default]
    Classical,
    /// `∫ [G ∂_ν u − u ∂_ν G] dS`.
    Reversed,
}

impl SignConvention {
    pub fn factor(self) -> f64 {
        match self {
            SignConvention::Classical => 1.0,
            SignConvention::Reversed => -1.0,
        }
    }
}

/// `(G(x, y), ∂_{ν_y} G(x, y))` at a boundary point with outward normal along `axis`.
fn kernel_and_flux(kernel: &PeriodizedKernel, x: &[f64], y: &[f64], axis: usize, outward: f64) -> Result<(f64, f64)> {
    let n = x.len();
    let orders = [MultiIndex::zero(n), MultiIndex::unit(n, axis)];
    // G is symmetric, so the y-gradient is the first-slot gradient at (y, x)
    let jet = kernel.green_jet(y, x, &orders)?;
    Ok((jet[0].value, outward * jet[1].value))
}

/// Boundary term of the representation formula at `x`.
pub fn green_reproduce<U, Q>(
    kernel: &PeriodizedKernel,
    u: &U,
    du_dnu: &Q,
    domain: &BoxDomain,
    x: &[f64],
    rule: &QuadratureRule,
    sign: SignConvention,
) -> Result<f64>
where
    U: Fn(&[f64]) -> f64 + Sync,
    Q: Fn(&[f64], &[f64]) -> f64 + Sync,
{
    check_domain(kernel, domain)?;
    let panels = domain.boundary_panels(rule);
    let nodes: Vec<(&BoundaryPanel, usize)> = panels
        .iter()
        .flat_map(|p| (0..p.nodes.len()).map(move |i| (p, i)))
        .collect();
    let total = reduce_nodes(&nodes, |&(panel, i)| {
        let node = &panel.nodes[i];
        let (g, dg) = kernel_and_flux(kernel, x, &node.point, panel.axis, panel.outward)?;
        Ok(node.weight * (u(&node.point) * dg - g * du_dnu(&node.point, &panel.normal)))
    })?;
    Ok(sign.factor() * total)
}

/// Representation values under successive panel doubling.
#[derive(Debug, Clone, PartialEq)]
pub struct ReproductionReport {
    /// One value per refinement level, coarsest first.
    pub values: Vec<f64>,
    /// `|values[i + 1] − values[i]|`.
    pub increments: Vec<f64>,
    /// Whether the increments shrink monotonically.
    pub converged: bool,
}

impl ReproductionReport {
    pub fn value(&self) -> f64 {
        *self.values.last().expect("at least one level")
    }
}

/// `green_reproduce` at `levels` rules obtained by panel doubling.
pub fn green_reproduce_refined<U, Q>(
    kernel: &PeriodizedKernel,
    u: &U,
    du_dnu: &Q,
    domain: &BoxDomain,
    x: &[f64],
    rule: &QuadratureRule,
    sign: SignConvention,
    levels: usize,
) -> Result<ReproductionReport>
where
    U: Fn(&[f64]) -> f64 + Sync,
    Q: Fn(&[f64], &[f64]) -> f64 + Sync,
{
    if levels < 2 {
        return Err(Error::InvalidParameter("panel doubling needs at least two levels".into()));
    }
    let mut values = Vec::with_capacity(levels);
    let mut r = rule.clone();
    for _ in 0..levels {
        values.push(green_reproduce(kernel, u, du_dnu, domain, x, &r, sign)?);
        r = r.refined();
    }
    let increments: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let scale = values.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let converged = increments
        .windows(2)
        .all(|w| w[1] < w[0] || w[1] <= 1e-13 * scale);
    Ok(ReproductionReport { values, increments, converged })
}

/// `∫_D G(x, y) f(y) dV(y)`.
///
/// For interior `x` the singular part is removed with `f(x) ∫_D G(x, y) dV`,
/// which reduces to a boundary flux: `∫_D G = (∫_{∂D} ∂_ν G dS − 1) / α²`.
pub fn newton_potential<F>(
    kernel: &PeriodizedKernel,
    f: &F,
    domain: &BoxDomain,
    x: &[f64],
    rule: &QuadratureRule,
) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync + ?Sized,
{
    check_domain(kernel, domain)?;
    let nodes = domain.volume_nodes(rule);
    if !domain.contains(x) {
        return reduce_nodes(&nodes, |q| {
            let fy = f(&q.point);
            if fy == 0.0 {
                return Ok(0.0);
            }
            Ok(q.weight * fy * kernel.green(x, &q.point)?.value)
        });
    }
    let fx = f(x);
    let smooth = reduce_nodes(&nodes, |q| {
        let df = f(&q.point) - fx;
        if df == 0.0 {
            return Ok(0.0);
        }
        Ok(q.weight * df * kernel.green(x, &q.point)?.value)
    })?;
    if fx == 0.0 {
        return Ok(smooth);
    }
    let panels = domain.boundary_panels(rule);
    let flux = panel_sum(&panels, |panel, node| {
        let (_, dg) = kernel_and_flux(kernel, x, &node.point, panel.axis, panel.outward)?;
        Ok(node.weight * dg)
    })?;
    let alpha = kernel.params().alpha();
    Ok(smooth + fx * (flux - 1.0) / (alpha * alpha))
}

fn panel_sum(
    panels: &[BoundaryPanel],
    eval: impl Fn(&BoundaryPanel, &crate::calculus::QuadNode) -> Result<f64> + Sync + Send,
) -> Result<f64> {
    let nodes: Vec<(&BoundaryPanel, usize)> = panels
        .iter()
        .flat_map(|p| (0..p.nodes.len()).map(move |i| (p, i)))
        .collect();
    reduce_nodes(&nodes, |&(panel, i)| eval(panel, &panel.nodes[i]))
}

fn check_domain(kernel: &PeriodizedKernel, domain: &BoxDomain) -> Result<()> {
    domain.validate(kernel.spec())
}

/// Discretization of the Dirichlet solve.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletOptions {
    /// Boundary panels and per-panel quadrature.
    pub boundary_rule: QuadratureRule,
    /// Volume quadrature for the Newton potential.
    pub volume_rule: QuadratureRule,
    /// Collocation points per panel per axis.
    pub collocation_order: usize,
    /// Distance of collocation points outside the boundary, in panel widths.
    pub offset: f64,
    /// Tikhonov parameter relative to the largest squared singular value.
    pub ridge: f64,
    pub sign: SignConvention,
}

impl Default for DirichletOptions {
    fn default() -> Self {
        Self {
            boundary_rule: QuadratureRule::new(2, 6).expect("valid rule"),
            volume_rule: QuadratureRule::new(4, 4).expect("valid rule"),
            collocation_order: 2,
            offset: 0.5,
            ridge: 1e-14,
            sign: SignConvention::Classical,
        }
    }
}

/// Relative residual above which a solve is flagged as ill-conditioned.
pub const ILL_CONDITIONED_RESIDUAL: f64 = 1e-6;

/// Solution of a Dirichlet problem, evaluable anywhere inside the box.
#[derive(Clone)]
pub struct DirichletSolution {
    kernel: PeriodizedKernel,
    domain: BoxDomain,
    source: Option<Field>,
    volume_rule: QuadratureRule,
    sign: SignConvention,
    panels: Vec<BoundaryPanel>,
    trace: Vec<Vec<f64>>,
    density: Vec<f64>,
    residual: f64,
    warning: Option<String>,
}

impl std::fmt::Debug for DirichletSolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DirichletSolution")
            .field("domain", &self.domain)
            .field("panels", &self.panels.len())
            .field("residual", &self.residual)
            .field("warning", &self.warning)
            .finish()
    }
}

impl DirichletSolution {
    /// Recovered Neumann data, one constant per boundary panel.
    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn panels(&self) -> &[BoundaryPanel] {
        &self.panels
    }

    /// `|A q − b| / |b|` of the regularized collocation system.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn warning(&self) -> Option<&str> {
        self.warning.as_deref()
    }

    /// `u(x)` for `x` inside the box.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        if !self.domain.contains(x) {
            return Err(Error::InvalidDomain(format!("evaluation point {x:?} is not inside the box")));
        }
        let volume = match &self.source {
            Some(f) => newton_potential(&self.kernel, f.as_ref(), &self.domain, x, &self.volume_rule)?,
            None => 0.0,
        };
        let boundary = self.boundary_term(x)?;
        Ok(volume + boundary)
    }

    pub fn evaluate_many(&self, points: &[Vec<f64>]) -> Vec<Result<f64>> {
        points.par_iter().map(|x| self.evaluate(x)).collect()
    }

    fn boundary_term(&self, x: &[f64]) -> Result<f64> {
        let mut acc = CompensatedSum::new();
        for ((panel, g), &q) in self.panels.iter().zip(&self.trace).zip(&self.density) {
            if q == 0.0 && g.iter().all(|&v| v == 0.0) {
                continue;
            }
            for (node, &gv) in panel.nodes.iter().zip(g) {
                let (k, dk) = kernel_and_flux(&self.kernel, x, &node.point, panel.axis, panel.outward)?;
                acc.add(node.weight * (gv * dk - k * q));
            }
        }
        Ok(self.sign.factor() * acc.value())
    }
}

/// Solves `(Δ − α²) u = f` in `D`, `u = g` on `∂D`.
///
/// The unknown Neumann trace is piecewise constant on the boundary panels and
/// is fixed by requiring the representation formula to vanish at collocation
/// points just outside `D`; the resulting first-kind system is solved by
/// ridge-regularized least squares.
pub fn solve_dirichlet<G>(
    kernel: &PeriodizedKernel,
    source: Option<Field>,
    g: &G,
    domain: &BoxDomain,
    options: &DirichletOptions,
) -> Result<DirichletSolution>
where
    G: Fn(&[f64]) -> f64 + Sync,
{
    check_domain(kernel, domain)?;
    if options.collocation_order == 0 || !(options.offset > 0.0) || !(options.ridge >= 0.0) {
        return Err(Error::InvalidParameter("collocation order, offset and ridge must be positive".into()));
    }
    let panels = domain.boundary_panels(&options.boundary_rule);
    let trace: Vec<Vec<f64>> = panels.iter().map(|p| p.nodes.iter().map(|q| g(&q.point)).collect()).collect();
    let sign = options.sign.factor();

    let colloc_rule = QuadratureRule::new(1, options.collocation_order)?;
    let mut points = Vec::new();
    for panel in &panels {
        let delta = options.offset * panel.width;
        let half = panel.width / 2.0;
        let n = panel.center.len();
        let others: Vec<usize> = (0..n).filter(|&i| i != panel.axis).collect();
        let mut idx = vec![0usize; others.len()];
        loop {
            let mut c = panel.center.clone();
            c[panel.axis] += panel.outward * delta;
            for (slot, &i) in others.iter().enumerate() {
                c[i] += half * colloc_rule.nodes()[idx[slot]];
            }
            points.push(c);
            let mut d = others.len();
            let mut finished = true;
            while d > 0 {
                d -= 1;
                idx[d] += 1;
                if idx[d] < options.collocation_order {
                    finished = false;
                    break;
                }
                idx[d] = 0;
            }
            if finished {
                break;
            }
        }
    }

    let rows: Vec<Result<(Vec<f64>, f64)>> = points
        .par_iter()
        .map(|c| {
            let mut row = vec![0.0; panels.len()];
            let mut rhs = CompensatedSum::new();
            for (j, (panel, gvals)) in panels.iter().zip(&trace).enumerate() {
                let mut single = CompensatedSum::new();
                for (node, &gv) in panel.nodes.iter().zip(gvals) {
                    let (k, dk) = kernel_and_flux(kernel, c, &node.point, panel.axis, panel.outward)?;
                    single.add(node.weight * k);
                    rhs.add(sign * node.weight * gv * dk);
                }
                row[j] = sign * single.value();
            }
            let volume = match &source {
                Some(f) => newton_potential(kernel, f.as_ref(), domain, c, &options.volume_rule)?,
                None => 0.0,
            };
            Ok((row, rhs.value() + volume))
        })
        .collect();

    let m = points.len();
    let p = panels.len();
    let mut a = DMatrix::zeros(m, p);
    let mut b = DVector::zeros(m);
    for (i, row) in rows.into_iter().enumerate() {
        let (coeffs, rhs) = row?;
        for (j, v) in coeffs.into_iter().enumerate() {
            a[(i, j)] = v;
        }
        b[i] = rhs;
    }

    let density = if b.iter().all(|&v| v == 0.0) {
        vec![0.0; p]
    } else {
        ridge_solve(&a, &b, options.ridge)?
    };
    let q = DVector::from_column_slice(&density);
    let bnorm = b.norm();
    let residual = if bnorm == 0.0 { 0.0 } else { (&a * &q - &b).norm() / bnorm };
    let warning = (residual > ILL_CONDITIONED_RESIDUAL).then(|| {
        format!("collocation residual {residual:.3e} exceeds {ILL_CONDITIONED_RESIDUAL:.0e}; the system is ill-conditioned")
    });

    Ok(DirichletSolution {
        kernel: kernel.clone(),
        domain: domain.clone(),
        source,
        volume_rule: options.volume_rule.clone(),
        sign: options.sign,
        panels,
        trace,
        density,
        residual,
        warning,
    })
}

/// Tikhonov least squares through the SVD: `x = Σ σ/(σ² + λ σ_max²) (uᵀb) v`.
fn ridge_solve(a: &DMatrix<f64>, b: &DVector<f64>, ridge: f64) -> Result<Vec<f64>> {
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().ok_or_else(|| Error::Numerical("SVD without U".into()))?;
    let vt = svd.v_t.as_ref().ok_or_else(|| Error::Numerical("SVD without V".into()))?;
    let smax = svd.singular_values.max();
    if !(smax > 0.0) {
        return Err(Error::Numerical("collocation matrix vanishes".into()));
    }
    let lambda = ridge * smax * smax;
    let mut x = DVector::zeros(a.ncols());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        let c = u.column(i).dot(b) * s / (s * s + lambda);
        x += vt.row(i).transpose() * c;
    }
    Ok(x.iter().copied().collect())
}
