//! Self-checks of the kernel library, runnable from the command line.

use kgq_core::calculus::kg_residual_report;
use kgq_core::kernels::{MultiIndex, PeriodizedKernel, TruncationPolicy};
use kgq_core::lattice::{deck_apply, orbit_distance, LatticeVector, ManifoldKind, ManifoldSpec, PinCharacter};
use kgq_core::mittag::{build_expansion, fit_expansion, FitBasis, FitOptions, Pole, PoleExpansion, PoleTerm};
use kgq_core::specfun::KernelParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Config;
use crate::CliError;

pub const SUITES: [&str; 6] = ["conv", "reg", "periodic", "klein-periodic", "green", "liouville"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub passed: bool,
    pub checks: usize,
    pub failures: usize,
    pub summary: String,
}

impl SuiteReport {
    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.summary)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub suites: Vec<SuiteReport>,
}

/// Runs the configured suites; a failed check is reported, not raised.
pub fn cmd_verify(cfg: &Config) -> Result<VerifyReport, CliError> {
    let names = cfg.verify.clone().unwrap_or_default().suites;
    if let Some(bad) = names.iter().find(|s| !SUITES.contains(&s.as_str())) {
        return Err(CliError::Config(format!("unknown suite {bad:?}; known: {}", SUITES.join(", "))));
    }
    let seed = cfg.verify.as_ref().and_then(|v| v.seed).unwrap_or(20240601);
    let mut suites = Vec::new();
    for name in &names {
        let report = match name.as_str() {
            "conv" => conv(cfg, seed)?,
            "reg" => reg(cfg, seed)?,
            "periodic" => periodic(cfg, seed)?,
            "klein-periodic" => klein_periodic(cfg, seed)?,
            "green" => green(cfg, seed)?,
            "liouville" => liouville(cfg, seed)?,
            _ => unreachable!(),
        };
        suites.push(report);
    }
    Ok(VerifyReport { passed: suites.iter().all(|s| s.passed), suites })
}

fn kernel_for(spec: ManifoldSpec, chi: PinCharacter, alpha: f64) -> Result<PeriodizedKernel, CliError> {
    Ok(PeriodizedKernel::new(spec, chi, KernelParams::new(spec.n(), alpha)?)?)
}

fn cell_point(spec: &ManifoldSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = spec.n();
    (0..n)
        .map(|i| match spec.kind() {
            ManifoldKind::KleinBottle if i == n - 1 => rng.gen_range(0.0..2.0),
            ManifoldKind::MobiusStrip if i >= spec.k() => rng.gen_range(-0.5..0.5),
            _ => rng.gen_range(0.0..1.0),
        })
        .collect()
}

/// Random cell points at orbit distance at least `clearance` from every
/// point of `avoid`.
pub fn sample_points(spec: &ManifoldSpec, count: usize, clearance: f64, avoid: &[Vec<f64>], seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let origin = [vec![0.0; spec.n()]];
    let avoid = if avoid.is_empty() { &origin[..] } else { avoid };
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let x = cell_point(spec, &mut rng);
        if avoid.iter().all(|a| orbit_distance(spec, &x, a, 3).map(|d| d >= clearance).unwrap_or(false)) {
            out.push(x);
        }
    }
    out
}

fn tally(name: &str, outcomes: &[(bool, f64)], describe: impl FnOnce(f64) -> String) -> SuiteReport {
    let failures = outcomes.iter().filter(|o| !o.0).count();
    let worst = outcomes.iter().fold(0.0f64, |m, o| m.max(o.1));
    SuiteReport {
        name: name.into(),
        passed: failures == 0,
        checks: outcomes.len(),
        failures,
        summary: describe(worst),
    }
}

fn conv(cfg: &Config, seed: u64) -> Result<SuiteReport, CliError> {
    let spec = cfg.spec()?;
    let alpha = cfg.alpha;
    let base = kernel_for(spec, PinCharacter::trivial(), alpha)?;
    let top = (40.0 / alpha).ceil() as usize + 2;
    let points = sample_points(&spec, 5, 0.2, &[], seed);
    let results: Vec<Result<(bool, f64), CliError>> = points
        .par_iter()
        .map(|x| {
            // below this radius the tail bound is not certified
            let start = (5.0 / alpha).ceil() as usize + 2;
            let sums: Vec<_> = (start..=top)
                .map(|m| base.clone().with_truncation(TruncationPolicy::fixed(m))?.value(x))
                .collect::<kgq_core::Result<_>>()?;
            let at = |m: usize| &sums[m - start];
            let mut ok = true;
            for m in start.max(10)..top - 1 {
                // two ulps of slack: both partial sums are rounded
                let ulps = 2.0 * f64::EPSILON * at(m).value.abs();
                ok &= (at(m + 2).value - at(m).value).abs() <= at(m).tail + ulps;
            }
            let reference = at(top).value;
            let floor = 1e-13 * reference.abs().max(1e-300);
            let fit: Vec<(f64, f64)> = (start..top)
                .map(|m| (m as f64, (at(m).value - reference).abs()))
                .filter(|p| p.1 > floor)
                .map(|(m, t)| (m, t.ln()))
                .collect();
            let rate = if fit.len() >= 4 { -slope(&fit) } else { f64::NAN };
            let dev = ((rate - alpha) / alpha).abs();
            Ok((ok && dev <= 0.1, dev))
        })
        .collect();
    let outcomes = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(tally("conv", &outcomes, |w| {
        format!("{} points, Cauchy bound holds and decay rate within {:.1}% of alpha", outcomes.len(), 100.0 * w)
    }))
}

fn slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn reg(cfg: &Config, seed: u64) -> Result<SuiteReport, CliError> {
    let spec = cfg.spec()?;
    let radius = (30.0 / cfg.alpha).ceil() as usize + 1;
    let kernel = kernel_for(spec, cfg.character_of(&spec)?, cfg.alpha)?.with_truncation(TruncationPolicy::fixed(radius))?;
    let points = sample_points(&spec, 20, 0.2, &[], seed);
    let outcomes: Vec<(bool, f64)> = points
        .par_iter()
        .map(|x| {
            let f = |p: &[f64]| kernel.value(p).map(|v| v.value).unwrap_or(f64::NAN);
            let rep = kg_residual_report(&f, cfg.alpha, x, 1e-3);
            let ok = (rep.observed_order - 2.0).abs() <= 0.2 && rep.extrapolated.abs() < 1e-6;
            (ok, rep.extrapolated.abs())
        })
        .collect();
    Ok(tally("reg", &outcomes, |w| {
        format!("{} points, Richardson order 2 and residual {w:.1e} < 1e-6", outcomes.len())
    }))
}

/// `℘(x + e_j)` against `χ(e_j) ℘(x̲, −x_n)` (or `χ(e_j) ℘(x)` for the
/// unflipped Klein directions), for every character and generator.
fn pseudo_periodicity(spec: ManifoldSpec, alpha: f64, seed: u64) -> Result<Vec<(bool, f64)>, CliError> {
    let n = spec.n();
    let k = spec.k();
    let points = sample_points(&spec, 10, 0.1, &[], seed);
    let mut cases = Vec::new();
    for chi in PinCharacter::all(k) {
        for j in 0..k {
            cases.push((chi.clone(), j));
        }
    }
    let results: Vec<Result<Vec<(bool, f64)>, CliError>> = cases
        .par_iter()
        .map(|(chi, j)| {
            let kernel = kernel_for(spec, chi.clone(), alpha)?;
            let c = if chi.twisted().contains(j) { -1.0 } else { 1.0 };
            let flips = match spec.kind() {
                ManifoldKind::MobiusStrip => true,
                ManifoldKind::KleinBottle => *j == n - 1,
            };
            points
                .iter()
                .map(|x| {
                    let mut shifted = x.clone();
                    shifted[*j] += 1.0;
                    let mut other = x.clone();
                    if flips {
                        other[n - 1] = -other[n - 1];
                    }
                    let d = (kernel.value(&shifted)?.value - c * kernel.value(&other)?.value).abs();
                    Ok((d <= 1e-10, d))
                })
                .collect()
        })
        .collect();
    Ok(results.into_iter().collect::<Result<Vec<_>, _>>()?.concat())
}

fn periodic(cfg: &Config, seed: u64) -> Result<SuiteReport, CliError> {
    let spec = cfg.spec()?;
    let outcomes = pseudo_periodicity(spec, cfg.alpha, seed)?;
    let k = spec.k();
    Ok(tally("periodic", &outcomes, |w| {
        format!("{} characters x {k} generators, {} checks, max defect {w:.1e}", 1usize << k, outcomes.len())
    }))
}

fn klein_periodic(cfg: &Config, seed: u64) -> Result<SuiteReport, CliError> {
    // full-rank sums grow like M^n; beyond K_3 only a configured Klein manifold is checked
    let n = match cfg.manifold.kind {
        crate::config::Kind::Klein => cfg.manifold.n,
        crate::config::Kind::Mobius => cfg.manifold.n.min(3),
    };
    let spec = ManifoldSpec::klein(n)?;
    let outcomes = pseudo_periodicity(spec, cfg.alpha, seed)?;
    let k = spec.k();
    Ok(tally("klein-periodic", &outcomes, |w| {
        format!("{} characters x {k} generators, {} checks, max defect {w:.1e}", 1usize << k, outcomes.len())
    }))
}

fn green(cfg: &Config, seed: u64) -> Result<SuiteReport, CliError> {
    let spec = cfg.spec()?;
    let kernel = kernel_for(spec, cfg.character_of(&spec)?, cfg.alpha)?;
    let xs = sample_points(&spec, 10, 0.1, &[], seed);
    let ys = sample_points(&spec, 10, 0.1, &[], seed ^ 0x5eed);
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = xs
        .into_iter()
        .zip(ys)
        .filter(|(x, y)| orbit_distance(&spec, x, y, 3).map(|d| d > 0.1).unwrap_or(false))
        .collect();
    let results: Vec<Result<Vec<(bool, f64)>, CliError>> = pairs
        .par_iter()
        .map(|(x, y)| {
            let g = kernel.green(x, y)?.value;
            let mut out = vec![{
                let d = (g - kernel.green(y, x)?.value).abs();
                (d <= 1e-12, d)
            }];
            for j in 0..spec.k() {
                let gy = deck_apply(&spec, &LatticeVector::unit(spec.k(), j), y)?;
                let c = if kernel.character().twisted().contains(&j) { -1.0 } else { 1.0 };
                let d = (kernel.green(x, &gy)?.value - c * g).abs();
                out.push((d <= 1e-10, d));
            }
            Ok(out)
        })
        .collect();
    let outcomes = results.into_iter().collect::<Result<Vec<_>, _>>()?.concat();
    Ok(tally("green", &outcomes, |w| {
        format!("{} pairs, symmetry and equivariance for all generators, max defect {w:.1e}", pairs.len())
    }))
}

fn liouville(cfg: &Config, seed: u64) -> Result<SuiteReport, CliError> {
    let n = if cfg.manifold.kind == crate::config::Kind::Klein { cfg.manifold.n } else { 2 };
    let spec = ManifoldSpec::klein(n)?;
    let alpha = cfg.alpha.max(1.5);
    let kernel = kernel_for(spec, PinCharacter::trivial(), alpha)?;
    let poles: Vec<Vec<f64>> = vec![
        (0..n).map(|i| if i == n - 1 { 0.2 } else { 0.25 }).collect(),
        (0..n).map(|i| if i == n - 1 { 1.3 } else { 0.7 }).collect(),
    ];
    let spurious: Vec<f64> = (0..n).map(|i| if i == n - 1 { 0.8 } else { 0.5 }).collect();
    let orders = FitBasis::Reduced.multi_indices(n, 2);
    let truth = PoleExpansion::new(
        poles
            .iter()
            .enumerate()
            .map(|(i, a)| Pole {
                location: a.clone(),
                terms: orders
                    .iter()
                    .enumerate()
                    .map(|(j, m): (usize, &MultiIndex)| PoleTerm {
                        multi_index: m.clone(),
                        coefficient: 1.0 + 0.25 * j as f64 - 0.5 * i as f64,
                    })
                    .collect(),
            })
            .collect(),
    );
    let field = build_expansion(&truth, &kernel)?;
    let mut avoid = poles.clone();
    avoid.push(spurious.clone());
    let unknowns = orders.len() * avoid.len();
    let points = sample_points(&spec, 4 * unknowns, 0.15, &avoid, seed);
    let values = field.evaluate_many(&points);
    let samples: Vec<(Vec<f64>, f64)> = points
        .into_iter()
        .zip(values)
        .map(|(x, v)| v.map(|v| (x, v)))
        .collect::<kgq_core::Result<_>>()?;

    let fit = fit_expansion(&kernel, &samples, &avoid, &FitOptions::default())?;
    let got = fit.expansion.coefficients();
    let want = truth.coefficients();
    let coef_err = got
        .iter()
        .zip(&want)
        .map(|(g, w)| ((g - w) / w).abs())
        .fold(0.0f64, f64::max);
    let spurious_max = got[want.len()..].iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let outcomes = vec![
        (coef_err < 1e-6, coef_err),
        (spurious_max < 1e-6, spurious_max),
        (fit.residual < 1e-8, fit.residual),
    ];
    Ok(tally("liouville", &outcomes, |_| {
        format!(
            "K_{n} round trip: coefficient error {coef_err:.1e}, spurious pole {spurious_max:.1e}, residual {:.1e}",
            fit.residual
        )
    }))
}
