//! Special functions behind the free-space Klein-Gordon kernel.
//!
//! The fundamental solution of `Δ − α²` in `R^n` is
//!
//! ```text
//! E_α(x) = −(α / 2r)^ν K_ν(αr) / (ω_n Γ(n/2)),    ν = n/2 − 1,  r = |x|
//! ```
//!
//! which is the real form of the Hankel-function expression
//! `−iπ/(2 ω_n Γ(n/2)) (iα/2)^ν r^{−ν} H^{(1)}_ν(iαr)` obtained from
//! `H^{(1)}_ν(iz) = (2 / π) i^{−ν−1} K_ν(z)`. The powers of `i` cancel for
//! every `n`, so the kernel is real and continuous in `n`. With this
//! normalization `(Δ − α²) E_α = +δ`.
//!
//! Radial derivatives are expressed through the jet
//! `G_p(r) = ((1/r) d/dr)^p E_α(r) = A α^{2p} (−1)^p z^{−ν−p} K_{ν+p}(z)`
//! with `z = αr` and `A = −α^{2ν} / (2^ν ω_n Γ(n/2))`.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Euler–Mascheroni constant.
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Below this argument `K_0`, `K_1` come from their power series.
const SERIES_MAX_Z: f64 = 2.0;
/// At and above this argument the Hankel asymptotic expansion is used.
const ASYMPTOTIC_MIN_Z: f64 = 40.0;

/// Largest order accepted by [`bessel_k`].
pub const MAX_BESSEL_ORDER: f64 = 64.0;

/// Deepest radial jet (and Cartesian derivative order) supported.
pub const MAX_JET_ORDER: usize = 4;

/// `Γ(two_x / 2)` by recurrence from `Γ(1/2) = √π` and `Γ(1) = 1`.
pub fn gamma_half(two_x: u32) -> f64 {
    assert!(two_x >= 1, "gamma_half needs a positive argument");
    let (mut value, mut twice) = if two_x.is_multiple_of(2) {
        (1.0, 2)
    } else {
        (PI.sqrt(), 1)
    };
    while twice < two_x {
        value *= twice as f64 / 2.0;
        twice += 2;
    }
    value
}

/// Surface measure `ω_n = 2 π^{n/2} / Γ(n/2)` of the unit sphere in `R^n`.
pub fn sphere_area(n: usize) -> f64 {
    assert!(n >= 2, "sphere_area needs n >= 2");
    2.0 * PI.powf(n as f64 / 2.0) / gamma_half(n as u32)
}

/// `e^z K_0(z)` and `e^z K_1(z)` for `z > 0`.
fn scaled_k0_k1(z: f64) -> (f64, f64) {
    if z <= SERIES_MAX_Z {
        let (k0, k1) = k0_k1_series(z);
        let ez = z.exp();
        (k0 * ez, k1 * ez)
    } else if z < ASYMPTOTIC_MIN_Z {
        scaled_k_steed(z)
    } else {
        (scaled_k_asymptotic(0.0, z), scaled_k_asymptotic(1.0, z))
    }
}

/// Power series with digamma terms, accurate for `0 < z <= 2`.
fn k0_k1_series(z: f64) -> (f64, f64) {
    let y = 0.25 * z * z;
    let log_half = (0.5 * z).ln();

    // term0_k = y^k / (k!)^2, term1_k = y^k / (k! (k+1)!)
    let mut term0 = 1.0;
    let mut term1 = 1.0;
    let mut harmonic = 0.0; // H_k
    let mut i0 = 0.0;
    let mut s0 = 0.0;
    let mut i1 = 0.0;
    let mut s1 = 0.0;
    for k in 0..60 {
        let kf = k as f64;
        if k > 0 {
            harmonic += 1.0 / kf;
            term0 *= y / (kf * kf);
            term1 *= y / (kf * (kf + 1.0));
        }
        let psi_k1 = -EULER_GAMMA + harmonic;
        let psi_k2 = psi_k1 + 1.0 / (kf + 1.0);
        i0 += term0;
        s0 += harmonic * term0;
        i1 += term1;
        s1 += (psi_k1 + psi_k2) * term1;
        if term0 < 1e-18 * i0 && term1 < 1e-18 * i1 {
            break;
        }
    }
    let k0 = -(log_half + EULER_GAMMA) * i0 + s0;
    let k1 = 1.0 / z + log_half * (0.5 * z * i1) - 0.25 * z * s1;
    (k0, k1)
}

/// Steed's continued fraction (CF2) for `e^z K_0`, `e^z K_1`, `z >= 2`.
fn scaled_k_steed(z: f64) -> (f64, f64) {
    let a1 = 0.25;
    let mut b = 2.0 * (1.0 + z);
    let mut d = 1.0 / b;
    let mut h = d;
    let mut delh = d;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let mut q = a1;
    let mut c = a1;
    let mut a = -a1;
    let mut s = 1.0 + q * delh;
    for i in 2..10_000 {
        let fi = i as f64;
        a -= 2.0 * (fi - 1.0);
        c = -a * c / fi;
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh *= b * d - 1.0;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() < 1e-17 {
            break;
        }
    }
    h *= a1;
    let k0 = (PI / (2.0 * z)).sqrt() / s;
    let k1 = k0 * (z + 0.5 - h) / z;
    (k0, k1)
}

/// Hankel asymptotic series `e^z K_ν(z) ~ √(π/2z) Σ a_k(ν) / z^k`.
fn scaled_k_asymptotic(nu: f64, z: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        let odd = (2 * k - 1) as f64;
        let next = term * (mu - odd * odd) / (8.0 * k as f64 * z);
        if next.abs() >= term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    (PI / (2.0 * z)).sqrt() * sum
}

/// Fills `out[j] = e^z K_{ν0 + j}(z)` with `ν0 = two_nu0 / 2`, using
/// upward recurrence from the base pair of order `0` or `1/2`.
pub(crate) fn scaled_k_run(two_nu0: u32, z: f64, out: &mut [f64]) {
    let half = two_nu0 % 2 == 1;
    let (mut prev, mut cur) = if half {
        let k_half = (PI / (2.0 * z)).sqrt();
        (k_half, k_half * (1.0 + 1.0 / z))
    } else {
        scaled_k0_k1(z)
    };
    let mu = if half { 0.5 } else { 0.0 };
    // prev = K_{mu + j}, cur = K_{mu + j + 1}
    let start = (two_nu0 / 2) as usize;
    let last = start + out.len();
    let mut j = 0usize;
    loop {
        if j >= start && j < last {
            out[j - start] = prev;
        }
        if j + 1 >= last {
            break;
        }
        let next = prev + 2.0 * (mu + j as f64 + 1.0) / z * cur;
        prev = cur;
        cur = next;
        j += 1;
    }
}

fn two_nu_of(nu: f64) -> Result<u32> {
    let twice = 2.0 * nu;
    if !(0.0..=2.0 * MAX_BESSEL_ORDER).contains(&twice) || twice.fract() != 0.0 {
        return Err(Error::InvalidParameter(format!(
            "Bessel order must be a half-integer in [0, {MAX_BESSEL_ORDER}], got {nu}"
        )));
    }
    Ok(twice as u32)
}

/// Modified Bessel function of the second kind `K_ν(z)` for integer and
/// half-integer `ν >= 0` and `z > 0`.
///
/// Returns `0.0` when `e^{−z}` underflows.
pub fn bessel_k(nu: f64, z: f64) -> Result<f64> {
    let two_nu = two_nu_of(nu)?;
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "Bessel argument must be positive and finite, got {z}"
        )));
    }
    let decay = (-z).exp();
    if decay == 0.0 {
        return Ok(0.0);
    }
    let mut out = [0.0];
    scaled_k_run(two_nu, z, &mut out);
    let value = out[0] * decay;
    if !value.is_finite() {
        return Err(Error::Overflow { nu, z });
    }
    Ok(value)
}

/// Dimension and mass parameter of the Klein-Gordon operator `Δ − α²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    n: usize,
    alpha: f64,
    prefactor: f64,
}

impl KernelParams {
    pub fn new(n: usize, alpha: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter(format!("dimension must be >= 2, got {n}")));
        }
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "alpha must be positive and finite, got {alpha}"
            )));
        }
        let nu = n as f64 / 2.0 - 1.0;
        let prefactor =
            -alpha.powf(2.0 * nu) / (2f64.powf(nu) * sphere_area(n) * gamma_half(n as u32));
        Ok(Self { n, alpha, prefactor })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Bessel order `ν = n/2 − 1`.
    pub fn nu(&self) -> f64 {
        self.n as f64 / 2.0 - 1.0
    }

    fn two_nu(&self) -> u32 {
        (self.n - 2) as u32
    }

    /// Fills `jet[p] = ((1/r) d/dr)^p E_α(r)` for `p < jet.len()`.
    pub(crate) fn radial_jet(&self, r: f64, jet: &mut [f64]) {
        debug_assert!(jet.len() <= MAX_JET_ORDER + 1);
        let z = self.alpha * r;
        let decay = (-z).exp();
        let mut ks = [0.0; MAX_JET_ORDER + 1];
        let ks = &mut ks[..jet.len()];
        scaled_k_run(self.two_nu(), z, ks);

        let half = self.n % 2 == 1;
        let nu_floor = (self.n as i32 - 2) / 2;
        let base_pow = if half { 1.0 / z.sqrt() } else { 1.0 };
        let alpha2 = self.alpha * self.alpha;
        let mut scale = self.prefactor * decay * base_pow * z.powi(-nu_floor);
        for (p, slot) in jet.iter_mut().enumerate() {
            *slot = scale * ks[p];
            scale *= -alpha2 / z;
        }
    }
}

/// Free-space fundamental solution `E_α` at radius `r > 0`.
pub fn yukawa(params: &KernelParams, r: f64) -> f64 {
    debug_assert!(r > 0.0);
    let mut jet = [0.0];
    params.radial_jet(r, &mut jet);
    jet[0]
}

/// `d^order/dr^order E_α(r)` for `0 <= order <= 4`.
pub fn yukawa_radial_derivative(params: &KernelParams, r: f64, order: usize) -> Result<f64> {
    if order > MAX_JET_ORDER {
        return Err(Error::InvalidParameter(format!(
            "radial derivative order {order} exceeds {MAX_JET_ORDER}"
        )));
    }
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!("radius must be positive, got {r}")));
    }
    let mut jet = [0.0; MAX_JET_ORDER + 1];
    params.radial_jet(r, &mut jet[..=order]);
    // d^k/dr^k φ(r²/2) = Σ_j k! / (j! (k−2j)! 2^j) r^{k−2j} φ^{(k−j)}
    let mut total = 0.0;
    for j in 0..=order / 2 {
        let coef = factorial(order) / (factorial(j) * factorial(order - 2 * j) * 2f64.powi(j as i32));
        total += coef * r.powi((order - 2 * j) as i32) * jet[order - j];
    }
    Ok(total)
}

pub(crate) fn factorial(k: usize) -> f64 {
    (1..=k).fold(1.0, |acc, i| acc * i as f64)
}

/// Minimum `αR` for which [`tail_bound`] is certified.
pub const TAIL_CERTIFIED_ALPHA_R: f64 = 5.0;

/// Upper bound for `|E_α(r)|` valid for every `r >= radius`.
///
/// Twice the leading asymptotic term `|A| √(π/2) z^{−(n−1)/2} e^{−z}`,
/// `z = αR`. The ratio `K_ν(z) / (√(π/2z) e^{−z})` decreases in `z` for
/// `ν >= 1/2` (and stays below one for `ν = 0`), so checking it at `z = αR`
/// certifies the bound on the whole ray.
pub fn tail_bound(params: &KernelParams, radius: f64) -> Result<f64> {
    let z = params.alpha * radius;
    if !(z >= TAIL_CERTIFIED_ALPHA_R) {
        return Err(Error::NotCertified { alpha_r: z });
    }
    let mut scaled = [0.0];
    scaled_k_run(params.two_nu(), z.min(600.0), &mut scaled);
    let ratio = scaled[0] / (PI / (2.0 * z.min(600.0))).sqrt();
    if ratio > 2.0 {
        return Err(Error::NotCertified { alpha_r: z });
    }
    let exponent = -(params.n as f64 - 1.0) / 2.0;
    Ok(2.0 * params.prefactor.abs() * (PI / 2.0).sqrt() * z.powf(exponent) * (-z).exp())
}
