//! Acceptance checks, one numbered line per criterion.
//!
//! Runs without the libtest harness so the PASS/FAIL lines are always
//! printed; the process exits non-zero if any criterion fails.

use std::panic::{self, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use kgq_cli::config::Config;
use kgq_cli::{cmd_grid, with_threads};
use kgq_core::bvp::{green_reproduce, green_reproduce_refined, solve_dirichlet, DirichletOptions, Field, SignConvention};
use kgq_core::calculus::{kg_residual_report, BoxDomain, QuadratureRule};
use kgq_core::kernels::{wp_klein, wp_mobius, MultiIndex, PeriodizedKernel, TruncationPolicy};
use kgq_core::lattice::{deck_apply, orbit_distance, LatticeVector, ManifoldKind, ManifoldSpec, PinCharacter};
use kgq_core::mittag::{
    build_expansion, default_probe_radii, fit_expansion, singularity_order, FitBasis, FitOptions, Pole, PoleExpansion,
    PoleTerm,
};
use kgq_core::specfun::{yukawa, KernelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond { Ok(detail) } else { Err(detail) }
}

fn kernel(spec: ManifoldSpec, chi: PinCharacter, alpha: f64) -> PeriodizedKernel {
    PeriodizedKernel::new(spec, chi, KernelParams::new(spec.n(), alpha).unwrap()).unwrap()
}

fn random_points(spec: &ManifoldSpec, count: usize, clearance: f64, avoid: &[Vec<f64>], seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.n();
    let origin = [vec![0.0; n]];
    let avoid = if avoid.is_empty() { &origin[..] } else { avoid };
    let mut out = Vec::new();
    while out.len() < count {
        let x: Vec<f64> = (0..n)
            .map(|i| match spec.kind() {
                ManifoldKind::KleinBottle if i == n - 1 => rng.gen_range(0.0..2.0),
                ManifoldKind::MobiusStrip if i >= spec.k() => rng.gen_range(-0.5..0.5),
                _ => rng.gen_range(0.0..1.0),
            })
            .collect();
        if avoid.iter().all(|a| orbit_distance(spec, &x, a, 3).unwrap() >= clearance) {
            out.push(x);
        }
    }
    out
}

fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// `K_0(z) = ∫_0^∞ e^{−z cosh t} dt` by the trapezoidal rule, which converges
/// geometrically for this analytic, doubly-exponentially decaying integrand.
fn k0_integral(z: f64) -> f64 {
    let h = 0.2 / (1.0 + z.sqrt());
    let mut sum = 0.5 * (-z).exp();
    let mut t = h;
    loop {
        let term = (-z * t.cosh()).exp();
        sum += term;
        if term < 1e-300 || term < sum * 1e-18 {
            break;
        }
        t += h;
    }
    sum * h
}

fn slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn criterion_1() -> Outcome {
    let zs = log_space(1e-2, 300.0, 400);
    let mut worst3: f64 = 0.0;
    let mut worst2: f64 = 0.0;
    let mut elapsed = 0.0;
    for alpha in [0.5, 1.0, 2.0] {
        let p3 = KernelParams::new(3, alpha).unwrap();
        let p2 = KernelParams::new(2, alpha).unwrap();
        let start = Instant::now();
        let got3: Vec<f64> = zs.iter().map(|z| yukawa(&p3, z / alpha)).collect();
        let got2: Vec<f64> = zs.iter().map(|z| yukawa(&p2, z / alpha)).collect();
        elapsed += start.elapsed().as_secs_f64();
        for (i, &z) in zs.iter().enumerate() {
            let r = z / alpha;
            let want3 = -(-z).exp() / (4.0 * std::f64::consts::PI * r);
            worst3 = worst3.max(((got3[i] - want3) / want3).abs());
            let want2 = -k0_integral(z) / (2.0 * std::f64::consts::PI);
            worst2 = worst2.max(((got2[i] - want2) / want2).abs());
        }
    }
    check(
        worst3 <= 1e-12 && worst2 <= 1e-10 && elapsed < 1.0,
        format!("n=3 rel err {worst3:.1e} (<= 1e-12), n=2 rel err {worst2:.1e} (<= 1e-10), {elapsed:.3} s"),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let alpha = 1.0;
    let mut notes = Vec::new();
    let mut ok = true;
    for (n, k, seed) in [(3usize, 1usize, 11u64), (4, 2, 12)] {
        let spec = ManifoldSpec::mobius(n, k).unwrap();
        let base = kernel(spec, PinCharacter::trivial(), alpha);
        let mut worst_dev: f64 = 0.0;
        let mut cauchy_ok = true;
        let top = 42;
        for x in random_points(&spec, 5, 0.2, &[], seed) {
            let sums: Vec<_> = (10..=top)
                .map(|m| base.clone().with_truncation(TruncationPolicy::fixed(m)).unwrap().value(&x).unwrap())
                .collect();
            let at = |m: usize| &sums[m - 10];
            for m in 10..top - 1 {
                // the partial sums are themselves rounded: allow two ulps
                let slack = 2.0 * f64::EPSILON * at(m).value.abs();
                cauchy_ok &= (at(m + 2).value - at(m).value).abs() <= at(m).tail + slack;
            }
            let reference = at(top).value;
            let fit: Vec<(f64, f64)> = (10..top)
                .map(|m| (m as f64, (at(m).value - reference).abs()))
                .filter(|p| p.1 > 1e-13 * reference.abs())
                .map(|(m, t)| (m, t.ln()))
                .collect();
            let rate = -slope(&fit);
            worst_dev = worst_dev.max(((rate - alpha) / alpha).abs());
        }
        ok &= cauchy_ok && worst_dev <= 0.1;
        notes.push(format!("n={n},k={k}: rate within {:.1}%, Cauchy {}", 100.0 * worst_dev, if cauchy_ok { "ok" } else { "violated" }));
    }
    let secs = start.elapsed().as_secs_f64();
    check(ok && secs < 30.0, format!("{}; {secs:.1} s", notes.join("; ")))
}

fn criterion_3() -> Outcome {
    let cases = [
        (ManifoldSpec::mobius(3, 1).unwrap(), 1.0, 31u64),
        (ManifoldSpec::klein(2).unwrap(), 1.0, 32),
        (ManifoldSpec::klein(3).unwrap(), 1.5, 33),
    ];
    let mut ok = true;
    let mut notes = Vec::new();
    for (spec, alpha, seed) in cases {
        let radius = (30.0 / alpha) as usize + 1;
        let k = kernel(spec, PinCharacter::trivial(), alpha).with_truncation(TruncationPolicy::fixed(radius)).unwrap();
        let f = |x: &[f64]| match spec.kind() {
            ManifoldKind::MobiusStrip => wp_mobius(&k, x).unwrap().value,
            ManifoldKind::KleinBottle => wp_klein(&k, x).unwrap().value,
        };
        let mut worst_order: f64 = 0.0;
        let mut worst_res: f64 = 0.0;
        for x in random_points(&spec, 20, 0.2, &[], seed) {
            let rep = kg_residual_report(&f, alpha, &x, 1e-3);
            worst_order = worst_order.max((rep.observed_order - 2.0).abs());
            worst_res = worst_res.max(rep.extrapolated.abs());
        }
        ok &= worst_order <= 0.2 && worst_res < 1e-6;
        notes.push(format!(
            "{:?} n={}: |order-2| <= {worst_order:.3}, residual {worst_res:.1e}",
            spec.kind(),
            spec.n()
        ));
    }
    check(ok, notes.join("; "))
}

fn criterion_4() -> Outcome {
    let specs = [
        ManifoldSpec::mobius(4, 1).unwrap(),
        ManifoldSpec::mobius(4, 2).unwrap(),
        ManifoldSpec::mobius(4, 3).unwrap(),
        ManifoldSpec::klein(2).unwrap(),
        ManifoldSpec::klein(3).unwrap(),
    ];
    let mut worst: f64 = 0.0;
    let mut checks = 0;
    for (s, spec) in specs.iter().enumerate() {
        let points = random_points(spec, 10, 0.1, &[], 40 + s as u64);
        let alpha = if spec.k() == 3 { 2.0 } else { 1.0 };
        for chi in PinCharacter::all(spec.k()) {
            let kern = kernel(*spec, chi.clone(), alpha);
            for j in 0..spec.k() {
                let c = if chi.twisted().contains(&j) { -1.0 } else { 1.0 };
                let gen = LatticeVector::unit(spec.k(), j);
                for x in &points {
                    let moved = deck_apply(spec, &gen, x).unwrap();
                    let d = (kern.value(&moved).unwrap().value - c * kern.value(x).unwrap().value).abs();
                    worst = worst.max(d);
                    checks += 1;
                }
            }
        }
    }
    check(worst <= 1e-10, format!("{checks} identities over M_1..M_3 (n=4), K_2, K_3; max defect {worst:.1e}"))
}

fn criterion_5() -> Outcome {
    let cases = [
        (ManifoldSpec::mobius(3, 1).unwrap(), PinCharacter::contiguous(1), 1.0),
        (ManifoldSpec::mobius(4, 2).unwrap(), PinCharacter::new(vec![1], 2).unwrap(), 1.0),
        (ManifoldSpec::klein(2).unwrap(), PinCharacter::contiguous(2), 1.0),
        (ManifoldSpec::klein(3).unwrap(), PinCharacter::new(vec![0, 2], 3).unwrap(), 2.0),
    ];
    let mut sym: f64 = 0.0;
    let mut equi: f64 = 0.0;
    for (i, (spec, chi, alpha)) in cases.into_iter().enumerate() {
        let kern = kernel(spec, chi.clone(), alpha);
        let xs = random_points(&spec, 10, 0.1, &[], 50 + i as u64);
        let ys = random_points(&spec, 10, 0.1, &[], 60 + i as u64);
        for (x, y) in xs.iter().zip(&ys) {
            if orbit_distance(&spec, x, y, 3).unwrap() < 0.1 {
                continue;
            }
            let g = kern.green(x, y).unwrap().value;
            sym = sym.max((g - kern.green(y, x).unwrap().value).abs());
            for j in 0..spec.k() {
                let gy = deck_apply(&spec, &LatticeVector::unit(spec.k(), j), y).unwrap();
                let c = if chi.twisted().contains(&j) { -1.0 } else { 1.0 };
                equi = equi.max((kern.green(x, &gy).unwrap().value - c * g).abs());
            }
        }
    }
    check(sym <= 1e-12 && equi <= 1e-10, format!("symmetry defect {sym:.1e} (<= 1e-12), equivariance defect {equi:.1e} (<= 1e-10)"))
}

const ALPHA: f64 = 1.0;

fn mobius_setup() -> (PeriodizedKernel, BoxDomain) {
    let spec = ManifoldSpec::mobius(3, 1).unwrap();
    let domain = BoxDomain::for_manifold(&spec, vec![0.25, -0.25, -0.25], vec![0.75, 0.25, 0.25]).unwrap();
    (kernel(spec, PinCharacter::trivial(), ALPHA), domain)
}

fn probes() -> Vec<Vec<f64>> {
    vec![
        vec![0.5, 0.0, 0.0],
        vec![0.4, 0.1, -0.05],
        vec![0.6, -0.1, 0.1],
        vec![0.45, 0.05, 0.12],
        vec![0.55, -0.12, -0.08],
    ]
}

fn exp_u(x: &[f64]) -> f64 {
    (ALPHA * x[0]).exp()
}

fn exp_dn(x: &[f64], nu: &[f64]) -> f64 {
    ALPHA * (ALPHA * x[0]).exp() * nu[0]
}

fn reproduction_errors(sign: SignConvention) -> (f64, bool, f64) {
    let (kern, domain) = mobius_setup();
    let rule = QuadratureRule::new(2, 4).unwrap();
    let mut worst: f64 = 0.0;
    let mut decreasing = true;
    for x in probes() {
        let rep = green_reproduce_refined(&kern, &exp_u, &exp_dn, &domain, &x, &rule, sign, 3).unwrap();
        let errs: Vec<f64> = rep.values.iter().map(|v| (v - exp_u(&x)).abs()).collect();
        decreasing &= errs.windows(2).all(|w| w[1] < w[0]);
        worst = worst.max(*errs.last().unwrap());
    }
    let ext = green_reproduce(&kern, &exp_u, &exp_dn, &domain, &[0.9, 0.1, 0.0], &rule.refined().refined(), sign).unwrap();
    (worst, decreasing, ext.abs())
}

fn dirichlet_error(sign: SignConvention) -> f64 {
    let (kern, domain) = mobius_setup();
    let lo = domain.lower().to_vec();
    let hi = domain.upper().to_vec();
    let phi = |t: f64| {
        let w = t * (1.0 - t);
        let dw = 1.0 - 2.0 * t;
        (w.powi(3), 6.0 * w * dw * dw - 6.0 * w * w)
    };
    let (lo2, hi2) = (lo.clone(), hi.clone());
    let exact = move |x: &[f64]| {
        exp_u(x) + 40.0 * x.iter().enumerate().map(|(i, &c)| phi((c - lo[i]) / (hi[i] - lo[i])).0).product::<f64>()
    };
    let source: Field = Arc::new(move |x: &[f64]| {
        let parts: Vec<(f64, f64)> = (0..3).map(|i| phi((x[i] - lo2[i]) / (hi2[i] - lo2[i]))).collect();
        let base: f64 = parts.iter().map(|p| p.0).product();
        let lap: f64 = (0..3)
            .map(|i| {
                let l = hi2[i] - lo2[i];
                parts.iter().enumerate().map(|(j, p)| if j == i { p.1 / (l * l) } else { p.0 }).product::<f64>()
            })
            .sum();
        40.0 * (lap - ALPHA * ALPHA * base)
    });
    let options = DirichletOptions { sign, ..DirichletOptions::default() };
    let sol = solve_dirichlet(&kern, Some(source), &exact, &domain, &options).unwrap();
    probes().iter().map(|x| (sol.evaluate(x).unwrap() - exact(x)).abs()).fold(0.0, f64::max)
}

fn criterion_6() -> Outcome {
    let (worst, decreasing, exterior) = reproduction_errors(SignConvention::Classical);
    check(
        worst < 1e-3 && decreasing && exterior < 1e-4,
        format!("max interior error {worst:.1e} (< 1e-3), decreasing under doubling: {decreasing}, exterior {exterior:.1e} (< 1e-4)"),
    )
}

fn criterion_7() -> Outcome {
    let err = dirichlet_error(SignConvention::Classical);
    let (rep_reversed, _, _) = reproduction_errors(SignConvention::Reversed);
    let err_reversed = dirichlet_error(SignConvention::Reversed);
    check(
        err < 1e-3 && rep_reversed > 1e-1 && err_reversed > 1e-1,
        format!(
            "interior error {err:.1e} (< 1e-3) with the sign that passes criterion 6; reversed sign errors {rep_reversed:.2} / {err_reversed:.2}"
        ),
    )
}

fn criterion_8() -> Outcome {
    let spec = ManifoldSpec::klein(3).unwrap();
    let kern = kernel(spec, PinCharacter::new(vec![2], 3).unwrap(), 2.0);
    let poles = vec![vec![0.2, 0.3, 0.25], vec![0.7, 0.6, 1.3], vec![0.4, 0.8, 0.75]];
    let spurious = vec![0.8, 0.15, 1.7];
    let orders = FitBasis::Reduced.multi_indices(3, 2);
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
                        coefficient: (1.0 + 0.3 * j as f64) * if (i + j) % 2 == 0 { 1.0 } else { -0.7 },
                    })
                    .collect(),
            })
            .collect(),
    );
    let field = build_expansion(&truth, &kern).unwrap();
    let mut candidates = poles.clone();
    candidates.push(spurious);
    let unknowns = orders.len() * candidates.len();
    let points = random_points(&spec, 4 * unknowns, 0.15, &candidates, 80);
    let samples: Vec<(Vec<f64>, f64)> = field
        .evaluate_many(&points)
        .into_iter()
        .zip(points)
        .map(|(v, x)| (x, v.unwrap()))
        .collect();

    let exact = fit_expansion(&kern, &samples, &poles, &FitOptions::default()).unwrap();
    let coef_err = exact
        .expansion
        .coefficients()
        .iter()
        .zip(truth.coefficients())
        .map(|(g, w)| ((g - w) / w).abs())
        .fold(0.0, f64::max);
    let extra = fit_expansion(&kern, &samples, &candidates, &FitOptions::default()).unwrap();
    let spurious_max = extra.expansion.poles[3].terms.iter().map(|t| t.coefficient.abs()).fold(0.0, f64::max);
    check(
        coef_err < 1e-6 && exact.residual < 1e-8 && spurious_max < 1e-6 && extra.residual < 1e-8,
        format!(
            "K_3, 3 poles x {} terms (|m| <= 2): coefficient error {coef_err:.1e}, residual {:.1e}; spurious pole max |b| {spurious_max:.1e}",
            orders.len(),
            exact.residual
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut failures = Vec::new();
    let mut count = 0;
    for (spec, alpha) in [
        (ManifoldSpec::mobius(3, 1).unwrap(), 1.0),
        (ManifoldSpec::mobius(4, 2).unwrap(), 1.0),
        (ManifoldSpec::klein(3).unwrap(), 2.0),
    ] {
        let n = spec.n();
        let mut s = vec![0.0; n];
        s[0] = 1.0;
        let mut mixed = vec![0u8; n];
        mixed[0] = 1;
        mixed[n - 1] = 1;
        let orders = [
            MultiIndex::zero(n),
            MultiIndex::unit(n, 0),
            MultiIndex::unit(n, n - 1),
            MultiIndex({
                let mut m = vec![0u8; n];
                m[0] = 2;
                m
            }),
            MultiIndex(mixed),
        ];
        for m in orders {
            let kern = kernel(spec, PinCharacter::trivial(), alpha).with_derivative(m.clone()).unwrap();
            let est = singularity_order(|x: &[f64]| Ok(kern.value(x)?.value), &s, &default_probe_radii()).unwrap();
            let want = (n - 2 + m.order()) as u32;
            count += 1;
            if est.order != want {
                failures.push(format!("{:?} n={n} m={:?}: got {} (slope {:.3}), want {want}", spec.kind(), m.0, est.order, est.slope));
            }
        }
    }
    if failures.is_empty() {
        Ok(format!("{count} kernels and derivatives (n = 3, 4; |m| <= 2): all orders equal n-2+|m|"))
    } else {
        Err(failures.join("; "))
    }
}

fn criterion_10() -> Outcome {
    let cfg = Config::from_json(
        r#"{"manifold": {"kind": "klein", "n": 2}, "alpha": 1.0, "character": [1],
            "grid": {"min": [0.0, 0.0], "max": [1.0, 2.0], "steps": 64}}"#,
    )
    .unwrap();
    let one = with_threads(Some(1), || cmd_grid(&cfg)).unwrap().unwrap().to_csv();
    let four = with_threads(Some(4), || cmd_grid(&cfg)).unwrap().unwrap().to_csv();
    check(
        one == four && one.lines().count() > 64 * 64,
        format!("64x64 K_2 grid, {} rows, {} bytes, identical with 1 and 4 workers: {}", one.lines().count() - 1, one.len(), one == four),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "special-function accuracy", criterion_1),
        (2, "lattice-sum convergence", criterion_2),
        (3, "Klein-Gordon residual of the kernels", criterion_3),
        (4, "pseudo-periodicity for all characters", criterion_4),
        (5, "two-point kernel symmetry and equivariance", criterion_5),
        (6, "Green representation of e^(alpha x_1)", criterion_6),
        (7, "inhomogeneous Dirichlet problem", criterion_7),
        (8, "pole-expansion round trip", criterion_8),
        (9, "singularity orders", criterion_9),
        (10, "grid determinism across worker counts", criterion_10),
    ];
    let filter: Option<u32> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (id, name, run) in criteria {
        if filter.is_some_and(|f| f != id) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
