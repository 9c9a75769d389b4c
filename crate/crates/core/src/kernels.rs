//! Periodized Klein-Gordon kernels on `M_k^-` and `K_n`.
//!
//! Every kernel is a lattice sum `Σ_γ χ(γ) ∂^m E_α(z_γ)` where `z_γ` is the
//! deck image of the evaluation point (one-point form) or `x − γ y`
//! (two-point orbit form). Sums run shell by shell in increasing sup-norm
//! radius, lexicographically inside each shell, with compensated
//! accumulation, so results are bit-reproducible.
//!
//! Truncation is certified: after shell `M` the remaining shells are
//! bounded by `Σ_{j>M} #Ω_j · B(j − s)`, where `s` bounds the sup-norm
//! shift of the arguments (so that `|z_γ| >= |γ|_max − s`) and `B` is a
//! decreasing envelope of `|∂^m E_α|`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{
    for_each_shell_point, parity_sign, shell_count, ManifoldKind, ManifoldSpec, PinCharacter,
};
use crate::specfun::{factorial, tail_bound, KernelParams, MAX_JET_ORDER, TAIL_CERTIFIED_ALPHA_R};
use crate::summation::CompensatedSum;

/// Arguments closer than this to a singular orbit are rejected.
pub const SINGULAR_DISTANCE: f64 = 1e-9;

/// Default absolute tail tolerance.
pub const DEFAULT_TOL: f64 = 1e-12;

/// Hard cap on the number of shells in adaptive mode.
pub const DEFAULT_MAX_RADIUS: usize = 400;

/// Multi-index `m ∈ N_0^n` of a Cartesian derivative `∂^{|m|} / ∂x_1^{m_1} ⋯ ∂x_n^{m_n}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(pub Vec<u8>);

impl MultiIndex {
    pub fn zero(n: usize) -> Self {
        Self(vec![0; n])
    }

    pub fn unit(n: usize, axis: usize) -> Self {
        let mut m = vec![0; n];
        m[axis] = 1;
        Self(m)
    }

    pub fn order(&self) -> usize {
        self.0.iter().map(|&c| c as usize).sum()
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    /// All multi-indices of total order exactly `order`, in lexicographic
    /// order of descending leading exponent.
    pub fn of_order(n: usize, order: usize) -> Vec<Self> {
        let mut out = Vec::new();
        let mut buf = vec![0u8; n];
        fn rec(buf: &mut Vec<u8>, pos: usize, left: usize, out: &mut Vec<MultiIndex>) {
            let n = buf.len();
            if pos == n - 1 {
                buf[pos] = left as u8;
                out.push(MultiIndex(buf.clone()));
                return;
            }
            for c in (0..=left).rev() {
                buf[pos] = c as u8;
                rec(buf, pos + 1, left - c, out);
            }
        }
        rec(&mut buf, 0, order, &mut out);
        out
    }

    /// All multi-indices with `|m| <= max_order`, grouped by order.
    pub fn up_to(n: usize, max_order: usize) -> Vec<Self> {
        (0..=max_order).flat_map(|p| Self::of_order(n, p)).collect()
    }
}

impl From<Vec<u8>> for MultiIndex {
    fn from(v: Vec<u8>) -> Self {
        Self(v)
    }
}

/// How many lattice shells to sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TruncationMode {
    /// Sum exactly shells `0..=radius` and report the certified tail.
    FixedRadius,
    /// Stop at the first shell whose certified tail is below `tol`
    /// (`radius` caps the search).
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationPolicy {
    pub mode: TruncationMode,
    pub radius: usize,
    pub tol: f64,
}

impl TruncationPolicy {
    pub fn adaptive(tol: f64) -> Self {
        Self { mode: TruncationMode::Adaptive, radius: DEFAULT_MAX_RADIUS, tol }
    }

    pub fn fixed(radius: usize) -> Self {
        Self { mode: TruncationMode::FixedRadius, radius, tol: DEFAULT_TOL }
    }
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        Self::adaptive(DEFAULT_TOL)
    }
}

/// A truncated lattice sum together with its certificate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelValue {
    pub value: f64,
    /// Certified bound on the omitted shells.
    pub tail: f64,
    /// Number of shells summed (`Ω_0, …, Ω_{shells_used − 1}`).
    pub shells_used: usize,
}

/// `∂^m φ(|z|²/2) = Σ_j Π_i [m_i! / (j_i! (m_i−2j_i)! 2^{j_i}) z_i^{m_i−2j_i}] φ^{(|m|−|j|)}`.
#[derive(Debug, Clone)]
struct Stencil {
    order: usize,
    last_exponent: u8,
    terms: Vec<StencilTerm>,
}

#[derive(Debug, Clone)]
struct StencilTerm {
    coef: f64,
    powers: Vec<i32>,
    jet: usize,
}

impl Stencil {
    fn new(m: &MultiIndex) -> Self {
        let mut terms = vec![StencilTerm { coef: 1.0, powers: Vec::new(), jet: 0 }];
        for &mi in &m.0 {
            let mi = mi as usize;
            let mut next = Vec::new();
            for t in &terms {
                for j in 0..=mi / 2 {
                    let c = factorial(mi)
                        / (factorial(j) * factorial(mi - 2 * j) * 2f64.powi(j as i32));
                    let mut powers = t.powers.clone();
                    powers.push((mi - 2 * j) as i32);
                    next.push(StencilTerm { coef: t.coef * c, powers, jet: t.jet + mi - j });
                }
            }
            terms = next;
        }
        Self { order: m.order(), last_exponent: *m.0.last().unwrap_or(&0), terms }
    }

    #[inline]
    fn eval(&self, z: &[f64], jet: &[f64]) -> f64 {
        let mut total = 0.0;
        for t in &self.terms {
            let mut mono = t.coef;
            for (zi, &p) in z.iter().zip(&t.powers) {
                if p != 0 {
                    mono *= zi.powi(p);
                }
            }
            total += mono * jet[t.jet];
        }
        total
    }

    /// Bound on `|∂^m E_α(z)|` over `|z| = r`; decreasing in `r`.
    fn envelope(&self, params: &KernelParams, r: f64) -> f64 {
        let mut jet = [0.0; MAX_JET_ORDER + 1];
        params.radial_jet(r, &mut jet[..=self.order]);
        self.terms
            .iter()
            .map(|t| t.coef * r.powi(t.powers.iter().sum()) * jet[t.jet].abs())
            .sum()
    }
}

/// A Klein-Gordon kernel periodized over a quotient's deck group and twisted
/// by a pin character, with an optional Cartesian derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodizedKernel {
    spec: ManifoldSpec,
    chi: PinCharacter,
    params: KernelParams,
    derivative: MultiIndex,
    truncation: TruncationPolicy,
}

impl PeriodizedKernel {
    pub fn new(spec: ManifoldSpec, chi: PinCharacter, params: KernelParams) -> Result<Self> {
        if params.n() != spec.n() {
            return Err(Error::RankMismatch { expected: spec.n(), got: params.n() });
        }
        if let Some(&i) = chi.twisted().iter().find(|&&i| i >= spec.k()) {
            return Err(Error::InvalidParameter(format!(
                "character twists generator {i} but the lattice has rank {}",
                spec.k()
            )));
        }
        let derivative = MultiIndex::zero(spec.n());
        Ok(Self { spec, chi, params, derivative, truncation: TruncationPolicy::default() })
    }

    pub fn with_derivative(mut self, m: MultiIndex) -> Result<Self> {
        self.check_multi_index(&m)?;
        self.derivative = m;
        Ok(self)
    }

    pub fn with_truncation(mut self, truncation: TruncationPolicy) -> Result<Self> {
        if !(truncation.tol > 0.0) {
            return Err(Error::InvalidParameter(format!("tolerance must be positive, got {}", truncation.tol)));
        }
        self.truncation = truncation;
        Ok(self)
    }

    pub fn spec(&self) -> &ManifoldSpec {
        &self.spec
    }

    pub fn character(&self) -> &PinCharacter {
        &self.chi
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn derivative(&self) -> &MultiIndex {
        &self.derivative
    }

    pub fn truncation(&self) -> &TruncationPolicy {
        &self.truncation
    }

    fn check_multi_index(&self, m: &MultiIndex) -> Result<()> {
        if m.dim() != self.spec.n() {
            return Err(Error::RankMismatch { expected: self.spec.n(), got: m.dim() });
        }
        if m.order() > MAX_JET_ORDER {
            return Err(Error::InvalidParameter(format!(
                "derivative order {} exceeds {MAX_JET_ORDER}",
                m.order()
            )));
        }
        Ok(())
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.n() {
            return Err(Error::RankMismatch { expected: self.spec.n(), got: x.len() });
        }
        if x.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("non-finite coordinate".into()));
        }
        Ok(())
    }

    /// One-point kernel `℘(x) = Σ_γ χ(γ) E_α(γ ∘ x)` and its derivatives in `x`.
    pub fn one_point_jet(&self, x: &[f64], orders: &[MultiIndex]) -> Result<Vec<KernelValue>> {
        self.check_point(x)?;
        let spec = self.spec;
        let n = spec.n();
        let k = spec.k();
        match spec.kind() {
            ManifoldKind::MobiusStrip => {
                let shift = sup_norm(&x[..k]);
                self.orbit_sum(shift, orders, |v, z| {
                    z.copy_from_slice(x);
                    for i in 0..k {
                        z[i] += v[i] as f64;
                    }
                    let s = spec.flip_sign(v);
                    z[n - 1] *= s;
                    s
                })
            }
            ManifoldKind::KleinBottle => {
                let shift = sup_norm(x);
                self.orbit_sum(shift, orders, |v, z| {
                    for i in 0..n - 1 {
                        z[i] = x[i] + v[i] as f64;
                    }
                    let s = parity_sign(v[n - 1]);
                    z[n - 1] = s * x[n - 1] + v[n - 1] as f64;
                    s
                })
            }
        }
    }

    /// Two-point kernel `G(x, y) = Σ_γ χ(γ) E_α(x − γ ∘ y)` and its derivatives in `x`.
    pub fn green_jet(&self, x: &[f64], y: &[f64], orders: &[MultiIndex]) -> Result<Vec<KernelValue>> {
        self.check_point(x)?;
        self.check_point(y)?;
        let spec = self.spec;
        let n = spec.n();
        let k = spec.k();
        match spec.kind() {
            ManifoldKind::MobiusStrip => {
                let shift = (0..k).map(|i| (x[i] - y[i]).abs()).fold(0.0, f64::max);
                self.orbit_sum(shift, orders, |v, z| {
                    for i in 0..n {
                        z[i] = x[i] - y[i];
                    }
                    for i in 0..k {
                        z[i] -= v[i] as f64;
                    }
                    z[n - 1] = x[n - 1] - spec.flip_sign(v) * y[n - 1];
                    1.0
                })
            }
            ManifoldKind::KleinBottle => {
                let shift = (0..n - 1)
                    .map(|i| (x[i] - y[i]).abs())
                    .fold(x[n - 1].abs() + y[n - 1].abs(), f64::max);
                self.orbit_sum(shift, orders, |v, z| {
                    for i in 0..n - 1 {
                        z[i] = x[i] - y[i] - v[i] as f64;
                    }
                    let mn = v[n - 1];
                    z[n - 1] = x[n - 1] - (parity_sign(mn) * y[n - 1] + mn as f64);
                    1.0
                })
            }
        }
    }

    /// One-point value with this kernel's derivative.
    pub fn value(&self, x: &[f64]) -> Result<KernelValue> {
        Ok(self.one_point_jet(x, std::slice::from_ref(&self.derivative))?[0])
    }

    /// Two-point value with this kernel's derivative (taken in `x`).
    pub fn green(&self, x: &[f64], y: &[f64]) -> Result<KernelValue> {
        Ok(self.green_jet(x, y, std::slice::from_ref(&self.derivative))?[0])
    }

    /// One-point values at many points, evaluated in parallel; order preserved.
    pub fn evaluate_many(&self, points: &[Vec<f64>]) -> Vec<Result<KernelValue>> {
        points.par_iter().map(|x| self.value(x)).collect()
    }

    fn orbit_sum<F>(&self, shift: f64, orders: &[MultiIndex], mut argument: F) -> Result<Vec<KernelValue>>
    where
        F: FnMut(&[i64], &mut [f64]) -> f64,
    {
        for m in orders {
            self.check_multi_index(m)?;
        }
        let stencils: Vec<Stencil> = orders.iter().map(Stencil::new).collect();
        let max_order = stencils.iter().map(|s| s.order).max().unwrap_or(0);
        let n = self.spec.n();
        let k = self.spec.k();
        let alpha = self.params.alpha();
        let policy = self.truncation;

        let mut sums = vec![CompensatedSum::new(); stencils.len()];
        let mut z = vec![0.0; n];
        let mut jet = [0.0; MAX_JET_ORDER + 1];
        let mut failure: Option<Error> = None;

        // first shell whose every point is certified by the tail bound
        let first_certifiable = (shift + TAIL_CERTIFIED_ALPHA_R / alpha).ceil() as usize;
        let mut m = 0usize;
        loop {
            for_each_shell_point(k, m, |v| {
                if failure.is_some() {
                    return;
                }
                let flip = argument(v, &mut z);
                let r = z.iter().map(|c| c * c).sum::<f64>().sqrt();
                if r < SINGULAR_DISTANCE {
                    failure = Some(Error::Singular { distance: r });
                    return;
                }
                self.params.radial_jet(r, &mut jet[..=max_order]);
                let chi = self.chi.eval(v);
                for (acc, st) in sums.iter_mut().zip(&stencils) {
                    let sign = if st.last_exponent % 2 == 1 { chi * flip } else { chi };
                    acc.add(sign * st.eval(&z, &jet));
                }
            });
            if let Some(err) = failure {
                return Err(err);
            }

            let done = match policy.mode {
                TruncationMode::FixedRadius => m >= policy.radius,
                TruncationMode::Adaptive => {
                    if m + 1 >= first_certifiable {
                        let tail = self.shell_tail(&stencils, shift, m)?;
                        if tail < policy.tol {
                            true
                        } else if m >= policy.radius {
                            return Err(Error::TruncationLimit { tol: policy.tol, max_radius: policy.radius });
                        } else {
                            false
                        }
                    } else {
                        false
                    }
                }
            };
            if done {
                break;
            }
            m += 1;
        }
        let tail = self.shell_tail(&stencils, shift, m)?;
        Ok(sums
            .iter()
            .map(|s| KernelValue { value: s.value(), tail, shells_used: m + 1 })
            .collect())
    }

    /// Certified bound on `Σ_{j > last} Σ_{v ∈ Ω_j} |term|`.
    fn shell_tail(&self, stencils: &[Stencil], shift: f64, last: usize) -> Result<f64> {
        let k = self.spec.k();
        let alpha = self.params.alpha();
        let decay = (-alpha).exp();
        let bound = |d: f64| -> Result<f64> {
            if !(alpha * d >= TAIL_CERTIFIED_ALPHA_R) {
                return Err(Error::NotCertified { alpha_r: alpha * d });
            }
            let mut worst: f64 = 0.0;
            for st in stencils {
                let b = if st.order == 0 {
                    tail_bound(&self.params, d)?
                } else {
                    st.envelope(&self.params, d)
                };
                worst = worst.max(b);
            }
            Ok(worst)
        };

        let mut total = 0.0;
        let mut j = last + 1;
        loop {
            let term = shell_count(k, j) as f64 * bound(j as f64 - shift)?;
            total += term;
            // later terms shrink at least by this ratio
            let ratio = shell_count(k, j + 1) as f64 / shell_count(k, j) as f64 * decay;
            if ratio < 1.0 {
                let rest = term * ratio / (1.0 - ratio);
                if rest <= 1e-3 * total || total == 0.0 {
                    return Ok(total + rest);
                }
            }
            j += 1;
            if j > last + 100_000 {
                return Err(Error::TruncationLimit { tol: f64::NAN, max_radius: j });
            }
        }
    }
}

fn sup_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |acc, c| acc.max(c.abs()))
}

fn check_kind(kernel: &PeriodizedKernel, kind: ManifoldKind) -> Result<()> {
    if kernel.spec.kind() != kind {
        return Err(Error::InvalidParameter(format!(
            "kernel is defined on {:?}, not {:?}",
            kernel.spec.kind(),
            kind
        )));
    }
    Ok(())
}

/// `℘^{M_k^-}` (with the kernel's character and derivative) at `x`.
pub fn wp_mobius(kernel: &PeriodizedKernel, x: &[f64]) -> Result<KernelValue> {
    check_kind(kernel, ManifoldKind::MobiusStrip)?;
    kernel.value(x)
}

/// `℘^{K_n}` (with the kernel's character and derivative) at `x`.
pub fn wp_klein(kernel: &PeriodizedKernel, x: &[f64]) -> Result<KernelValue> {
    check_kind(kernel, ManifoldKind::KleinBottle)?;
    kernel.value(x)
}

pub fn green_mobius(kernel: &PeriodizedKernel, x: &[f64], y: &[f64]) -> Result<KernelValue> {
    check_kind(kernel, ManifoldKind::MobiusStrip)?;
    kernel.green(x, y)
}

pub fn green_klein(kernel: &PeriodizedKernel, x: &[f64], y: &[f64]) -> Result<KernelValue> {
    check_kind(kernel, ManifoldKind::KleinBottle)?;
    kernel.green(x, y)
}

/// `∂^m_x G(x, y)` for the multi-index `m`, on either quotient.
pub fn kernel_derivative(
    kernel: &PeriodizedKernel,
    m: &MultiIndex,
    x: &[f64],
    y: &[f64],
) -> Result<KernelValue> {
    Ok(kernel.green_jet(x, y, std::slice::from_ref(m))?[0])
}
