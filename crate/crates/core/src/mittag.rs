//! Finite pole expansions built from derivative kernels, least-squares
//! fitting of such expansions to samples, and singularity-order estimates.
//!
//! A term `(a, m, b)` contributes `b ∂^m_a G(x, a)`. Differentiating in the
//! pole position leaves the deck behaviour in `x` untouched, so every
//! expansion obeys the same pseudo-periodicity as `G` itself, while the
//! singularity at `a` has order `n − 2 + |m|`.
//!
//! Away from the poles `Δ_a G = α² G`, so the multi-indices of a fixed order
//! span a space of dimension `#{m : |m| = p, m_n <= 1}`. Fitting uses that
//! reduced basis by default.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{MultiIndex, PeriodizedKernel};
use crate::lattice::orbit_distance;
use crate::specfun::MAX_JET_ORDER;
use crate::summation::CompensatedSum;

/// Minimum separation between pole orbits.
pub const POLE_SEPARATION: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct PoleTerm {
    pub multi_index: MultiIndex,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pole {
    pub location: Vec<f64>,
    pub terms: Vec<PoleTerm>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PoleExpansion {
    pub poles: Vec<Pole>,
}

impl PoleExpansion {
    pub fn new(poles: Vec<Pole>) -> Self {
        Self { poles }
    }

    /// All coefficients, pole by pole in term order.
    pub fn coefficients(&self) -> Vec<f64> {
        self.poles.iter().flat_map(|p| p.terms.iter().map(|t| t.coefficient)).collect()
    }

    pub fn term_count(&self) -> usize {
        self.poles.iter().map(|p| p.terms.len()).sum()
    }

    fn validate(&self, kernel: &PeriodizedKernel) -> Result<()> {
        let spec = kernel.spec();
        let n = spec.n();
        for pole in &self.poles {
            if pole.location.len() != n {
                return Err(Error::RankMismatch { expected: n, got: pole.location.len() });
            }
            for t in &pole.terms {
                if t.multi_index.dim() != n {
                    return Err(Error::RankMismatch { expected: n, got: t.multi_index.dim() });
                }
                if t.multi_index.order() > MAX_JET_ORDER {
                    return Err(Error::InvalidParameter(format!(
                        "pole term order {} exceeds {MAX_JET_ORDER}",
                        t.multi_index.order()
                    )));
                }
            }
        }
        check_incongruent(kernel, self.poles.iter().map(|p| p.location.as_slice()))
    }
}

fn check_incongruent<'a>(kernel: &PeriodizedKernel, poles: impl Iterator<Item = &'a [f64]>) -> Result<()> {
    let poles: Vec<&[f64]> = poles.collect();
    for i in 0..poles.len() {
        for j in 0..i {
            let d = orbit_distance(kernel.spec(), poles[i], poles[j], 3)?;
            if d <= POLE_SEPARATION {
                return Err(Error::InvalidParameter(format!(
                    "poles {j} and {i} are congruent (orbit distance {d:.3e})"
                )));
            }
        }
    }
    Ok(())
}

/// `b ∂^m_a G(x, a)` for each requested multi-index at one pole.
fn pole_columns(kernel: &PeriodizedKernel, a: &[f64], x: &[f64], orders: &[MultiIndex]) -> Result<Vec<f64>> {
    // ∂_a G(x, a) is the first-slot derivative of G(a, x) by symmetry
    Ok(kernel.green_jet(a, x, orders)?.into_iter().map(|v| v.value).collect())
}

/// An expansion bound to a base kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionField {
    kernel: PeriodizedKernel,
    expansion: PoleExpansion,
    orders: Vec<Vec<MultiIndex>>,
}

impl ExpansionField {
    pub fn expansion(&self) -> &PoleExpansion {
        &self.expansion
    }

    pub fn kernel(&self) -> &PeriodizedKernel {
        &self.kernel
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        let mut acc = CompensatedSum::new();
        for (pole, orders) in self.expansion.poles.iter().zip(&self.orders) {
            if orders.is_empty() {
                continue;
            }
            let values = pole_columns(&self.kernel, &pole.location, x, orders)?;
            for (t, v) in pole.terms.iter().zip(values) {
                acc.add(t.coefficient * v);
            }
        }
        Ok(acc.value())
    }

    pub fn evaluate_many(&self, points: &[Vec<f64>]) -> Vec<Result<f64>> {
        points.par_iter().map(|x| self.evaluate(x)).collect()
    }
}

/// Binds `expansion` to `kernel` after checking dimensions, orders and pole separation.
pub fn build_expansion(expansion: &PoleExpansion, kernel: &PeriodizedKernel) -> Result<ExpansionField> {
    expansion.validate(kernel)?;
    let orders = expansion
        .poles
        .iter()
        .map(|p| p.terms.iter().map(|t| t.multi_index.clone()).collect())
        .collect();
    Ok(ExpansionField { kernel: kernel.clone(), expansion: expansion.clone(), orders })
}

/// Multi-indices offered per pole.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FitBasis {
    /// `|m| <= max_order` with `m_n <= 1`; linearly independent.
    #[default]
    Reduced,
    /// Every `|m| <= max_order`; rank-deficient from order 2 on.
    Full,
}

impl FitBasis {
    pub fn multi_indices(self, n: usize, max_order: usize) -> Vec<MultiIndex> {
        let all = MultiIndex::up_to(n, max_order);
        match self {
            FitBasis::Full => all,
            FitBasis::Reduced => all.into_iter().filter(|m| m.0[n - 1] <= 1).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_order: usize,
    pub basis: FitBasis,
    /// Residuals above `threshold · max(1, rms(values))` are flagged.
    pub residual_threshold: f64,
    /// Relative singular-value cutoff for the numerical rank.
    pub rank_tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_order: 2, basis: FitBasis::Reduced, residual_threshold: 1e-8, rank_tolerance: 1e-11 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub expansion: PoleExpansion,
    /// Root-mean-square misfit at the samples.
    pub residual: f64,
    pub rank: usize,
    pub unknowns: usize,
    /// Terms with `|b| <= 1e−10 · max |b|`.
    pub negligible_terms: usize,
    pub rank_deficient: bool,
    pub residual_flagged: bool,
    pub warnings: Vec<String>,
}

/// Least-squares coefficients of a pole expansion with the given candidate
/// poles that best matches `samples` (`(x, f(x))` pairs).
pub fn fit_expansion(
    kernel: &PeriodizedKernel,
    samples: &[(Vec<f64>, f64)],
    poles: &[Vec<f64>],
    options: &FitOptions,
) -> Result<FitReport> {
    let n = kernel.spec().n();
    if options.max_order > MAX_JET_ORDER {
        return Err(Error::InvalidParameter(format!(
            "max_order {} exceeds {MAX_JET_ORDER}",
            options.max_order
        )));
    }
    if let Some(p) = poles.iter().find(|p| p.len() != n) {
        return Err(Error::RankMismatch { expected: n, got: p.len() });
    }
    if let Some((x, _)) = samples.iter().find(|(x, _)| x.len() != n) {
        return Err(Error::RankMismatch { expected: n, got: x.len() });
    }
    check_incongruent(kernel, poles.iter().map(Vec::as_slice))?;
    let orders = options.basis.multi_indices(n, options.max_order);
    let unknowns = orders.len() * poles.len();
    if samples.len() < 2 * unknowns {
        return Err(Error::InvalidParameter(format!(
            "{} samples for {unknowns} unknowns; need at least twice as many",
            samples.len()
        )));
    }

    let rows: Vec<Result<Vec<f64>>> = samples
        .par_iter()
        .map(|(x, _)| {
            let mut row = Vec::with_capacity(unknowns);
            for a in poles {
                row.extend(pole_columns(kernel, a, x, &orders)?);
            }
            Ok(row)
        })
        .collect();
    let mut a = DMatrix::zeros(samples.len(), unknowns);
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row?.into_iter().enumerate() {
            a[(i, j)] = v;
        }
    }
    let y = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.1));

    let scales: Vec<f64> = (0..unknowns)
        .map(|j| {
            let s = a.column(j).norm();
            if s > 0.0 { s } else { 1.0 }
        })
        .collect();
    for (j, s) in scales.iter().enumerate() {
        a.column_mut(j).scale_mut(1.0 / s);
    }

    let mut warnings = Vec::new();
    let (coef, rank) = if y.iter().all(|&v| v == 0.0) {
        (DVector::zeros(unknowns), rank_of(&a, options.rank_tolerance))
    } else {
        let svd = a.clone().svd(true, true);
        let u = svd.u.as_ref().ok_or_else(|| Error::Numerical("SVD without U".into()))?;
        let vt = svd.v_t.as_ref().ok_or_else(|| Error::Numerical("SVD without V".into()))?;
        let smax = svd.singular_values.max();
        let mut x = DVector::zeros(unknowns);
        let mut rank = 0;
        for (i, &s) in svd.singular_values.iter().enumerate() {
            if s > options.rank_tolerance * smax {
                rank += 1;
                x += vt.row(i).transpose() * (u.column(i).dot(&y) / s);
            }
        }
        (x, rank)
    };
    let misfit = &a * &coef - &y;
    let residual = (misfit.norm_squared() / samples.len() as f64).sqrt();
    let coef: Vec<f64> = coef.iter().zip(&scales).map(|(c, s)| c / s).collect();

    let rank_deficient = rank < unknowns;
    if rank_deficient {
        warnings.push(format!("design matrix has rank {rank} < {unknowns} unknowns"));
    }
    let y_rms = (y.norm_squared() / samples.len() as f64).sqrt();
    let residual_flagged = residual > options.residual_threshold * y_rms.max(1.0);
    if residual_flagged {
        warnings.push(format!(
            "fit residual {residual:.3e} is large: a pole is missing or the singularity is not a finite pole"
        ));
    }
    let bmax = coef.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let negligible_terms = coef.iter().filter(|c| c.abs() <= 1e-10 * bmax).count();

    let mut it = coef.into_iter();
    let expansion = PoleExpansion::new(
        poles
            .iter()
            .map(|a| Pole {
                location: a.clone(),
                terms: orders
                    .iter()
                    .map(|m| PoleTerm { multi_index: m.clone(), coefficient: it.next().unwrap_or(0.0) })
                    .collect(),
            })
            .collect(),
    );
    Ok(FitReport {
        expansion,
        residual,
        rank,
        unknowns,
        negligible_terms,
        rank_deficient,
        residual_flagged,
        warnings,
    })
}

fn rank_of(a: &DMatrix<f64>, tol: f64) -> usize {
    let sv = a.clone().singular_values();
    let smax = sv.max();
    sv.iter().filter(|&&s| s > tol * smax).count()
}

/// Radii used by `singularity_order` when none are given.
pub fn default_probe_radii() -> Vec<f64> {
    (0..9).map(|i| 1e-2 * 10f64.powf(-0.25 * i as f64)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderEstimate {
    pub order: u32,
    pub slope: f64,
    pub warning: Option<String>,
}

/// Slope of `log max_d |f(s + ρ d)|` against `log(1/ρ)`, rounded half-up
/// (negative slopes count as order 0).
pub fn singularity_order<F>(field: F, s: &[f64], radii: &[f64]) -> Result<OrderEstimate>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if radii.len() < 2 {
        return Err(Error::InvalidParameter("at least two probe radii are needed".into()));
    }
    if radii.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::InvalidParameter("probe radii must be positive".into()));
    }
    let n = s.len();
    let mut directions: Vec<Vec<f64>> = Vec::new();
    for i in 0..n {
        for sgn in [1.0, -1.0] {
            let mut d = vec![0.0; n];
            d[i] = sgn;
            directions.push(d);
        }
    }
    let generic: Vec<f64> = (0..n).map(|i| 1.0 / (i as f64 + 1.3)).collect();
    let norm = generic.iter().map(|c| c * c).sum::<f64>().sqrt();
    directions.push(generic.iter().map(|c| c / norm).collect());

    let mut pts = Vec::with_capacity(radii.len());
    for &rho in radii {
        let mut peak: f64 = 0.0;
        for d in &directions {
            let p: Vec<f64> = s.iter().zip(d).map(|(a, b)| a + rho * b).collect();
            peak = peak.max(field(&p)?.abs());
        }
        if peak == 0.0 {
            return Ok(OrderEstimate { order: 0, slope: f64::NEG_INFINITY, warning: None });
        }
        pts.push(((1.0 / rho).ln(), peak.ln()));
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let rounded = (slope + 0.5).floor();
    let warning = ((slope - rounded).abs() > 0.2).then(|| {
        format!("slope {slope:.3} is not close to an integer: logarithmic or essential singularity?")
    });
    Ok(OrderEstimate { order: rounded.max(0.0) as u32, slope, warning })
}
