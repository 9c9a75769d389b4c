use std::sync::Arc;

use kgq_core::bvp::{solve_dirichlet, DirichletOptions, Field};
use kgq_core::calculus::{BoxDomain, QuadratureRule};
use kgq_core::kernels::{KernelValue, PeriodizedKernel};
use kgq_core::mittag::{fit_expansion, FitBasis, FitOptions};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{BasisConfig, Config, KernelForm, Problem, Steps};
use crate::output::{coordinate_header, Cell, Table};
use crate::CliError;

fn evaluate(kernel: &PeriodizedKernel, cfg: &Config, x: &[f64]) -> kgq_core::Result<KernelValue> {
    match (cfg.kernel, &cfg.source) {
        (KernelForm::OnePoint, _) => kernel.value(x),
        (KernelForm::TwoPoint, Some(y)) => kernel.green(x, y),
        (KernelForm::TwoPoint, None) => unreachable!("checked by value_header"),
    }
}

fn check_form(cfg: &Config) -> Result<(), CliError> {
    if cfg.kernel == KernelForm::TwoPoint {
        let y = cfg.source.as_ref().ok_or_else(|| CliError::Config("two_point kernels need a source point".into()))?;
        cfg.check_point(y, "source")?;
    }
    Ok(())
}

fn value_row(x: &[f64], v: &KernelValue) -> Vec<Cell> {
    let mut row: Vec<Cell> = x.iter().map(|&c| Cell::Real(c)).collect();
    row.extend([Cell::Real(v.value), Cell::Real(v.tail), Cell::from(v.shells_used)]);
    row
}

/// Kernel values at the configured points: `x_1..x_n, value, tail, shells_used`.
pub fn cmd_eval(cfg: &Config) -> Result<Table, CliError> {
    let kernel = cfg.kernel()?;
    check_form(cfg)?;
    if cfg.points.is_empty() {
        return Err(CliError::Config("eval needs at least one entry in points".into()));
    }
    for p in &cfg.points {
        cfg.check_point(p, "point")?;
    }
    let values: Vec<_> = cfg.points.par_iter().map(|x| evaluate(&kernel, cfg, x)).collect();
    let mut header = coordinate_header(cfg.manifold.n, "x");
    header.extend(["value", "tail", "shells_used"].map(String::from));
    let mut table = Table::new(header);
    for (x, v) in cfg.points.iter().zip(values) {
        table.push(value_row(x, &v?));
    }
    Ok(table)
}

/// Points of the configured grid, last axis varying fastest.
pub fn grid_points(cfg: &Config) -> Result<Vec<Vec<f64>>, CliError> {
    let grid = cfg.grid.as_ref().ok_or_else(|| CliError::Config("grid command needs a grid block".into()))?;
    let n = cfg.manifold.n;
    cfg.check_point(&grid.min, "grid.min")?;
    cfg.check_point(&grid.max, "grid.max")?;
    let steps = match &grid.steps {
        Steps::Uniform(s) => vec![*s; n],
        Steps::PerAxis(v) if v.len() == n => v.clone(),
        Steps::PerAxis(v) => {
            return Err(CliError::Config(format!("grid.steps has {} entries for dimension {n}", v.len())));
        }
    };
    if steps.contains(&0) {
        return Err(CliError::Config("grid.steps must be positive".into()));
    }
    let axes: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let s = steps[i];
            (0..s)
                .map(|j| {
                    if s == 1 {
                        grid.min[i]
                    } else {
                        grid.min[i] + (grid.max[i] - grid.min[i]) * j as f64 / (s - 1) as f64
                    }
                })
                .collect()
        })
        .collect();
    let mut out = vec![Vec::with_capacity(n)];
    for axis in &axes {
        out = out
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&c| {
                    let mut q = p.clone();
                    q.push(c);
                    q
                })
            })
            .collect();
    }
    Ok(out)
}

/// Kernel values on the configured grid. Points where evaluation fails
/// (for instance on a singular orbit) are kept with `nan` values and the
/// error code in the `status` column.
pub fn cmd_grid(cfg: &Config) -> Result<Table, CliError> {
    let kernel = cfg.kernel()?;
    check_form(cfg)?;
    let points = grid_points(cfg)?;
    let values: Vec<_> = points.par_iter().map(|x| evaluate(&kernel, cfg, x)).collect();
    let mut header = coordinate_header(cfg.manifold.n, "x");
    header.extend(["value", "tail", "shells_used", "status"].map(String::from));
    let mut table = Table::new(header);
    for (x, v) in points.iter().zip(values) {
        let mut row = match &v {
            Ok(v) => value_row(x, v),
            Err(_) => {
                let mut r: Vec<Cell> = x.iter().map(|&c| Cell::Real(c)).collect();
                r.extend([Cell::Real(f64::NAN), Cell::Real(f64::NAN), Cell::Int(0)]);
                r
            }
        };
        row.push(match v {
            Ok(_) => Cell::from("ok"),
            Err(e) => Cell::from(e.code()),
        });
        table.push(row);
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub problem: Problem,
    pub panels: usize,
    pub collocation_residual: f64,
    pub warning: Option<String>,
    pub max_error: f64,
}

fn manufactured(problem: Problem, alpha: f64, domain: &BoxDomain) -> (Field, Option<Field>) {
    let exp: Field = Arc::new(move |x: &[f64]| (alpha * x[0]).exp());
    match problem {
        Problem::Exponential => (exp, None),
        Problem::BumpExponential => {
            let lo = domain.lower().to_vec();
            let hi = domain.upper().to_vec();
            // φ(s) = (s(1 − s))³ and φ''
            let parts = |t: f64| {
                let w = t * (1.0 - t);
                let dw = 1.0 - 2.0 * t;
                (w.powi(3), 6.0 * w * dw * dw - 6.0 * w * w)
            };
            let (lo2, hi2) = (lo.clone(), hi.clone());
            let u: Field = Arc::new(move |x: &[f64]| {
                let bump: f64 = x.iter().enumerate().map(|(i, &c)| parts((c - lo[i]) / (hi[i] - lo[i])).0).product();
                (alpha * x[0]).exp() + 50.0 * bump
            });
            let f: Field = Arc::new(move |x: &[f64]| {
                let n = x.len();
                let p: Vec<(f64, f64)> = (0..n).map(|i| parts((x[i] - lo2[i]) / (hi2[i] - lo2[i]))).collect();
                let base: f64 = p.iter().map(|q| q.0).product();
                let lap: f64 = (0..n)
                    .map(|i| {
                        let l = hi2[i] - lo2[i];
                        p.iter().enumerate().map(|(j, q)| if j == i { q.1 / (l * l) } else { q.0 }).product::<f64>()
                    })
                    .sum();
                50.0 * (lap - alpha * alpha * base)
            });
            (u, Some(f))
        }
    }
}

/// Dirichlet solve of a manufactured problem on the configured box:
/// `x_1..x_n, value, exact, error`.
pub fn cmd_solve(cfg: &Config) -> Result<(Table, SolveReport), CliError> {
    let kernel = cfg.kernel()?;
    let dom = cfg.domain.as_ref().ok_or_else(|| CliError::Config("solve needs a domain block".into()))?;
    let domain = BoxDomain::for_manifold(kernel.spec(), dom.lower.clone(), dom.upper.clone())?;
    let solve = cfg.solve.clone().unwrap_or(crate::config::SolveConfig {
        problem: Problem::Exponential,
        panels: None,
        order: None,
        volume_panels: None,
        probes: Vec::new(),
    });
    let defaults = DirichletOptions::default();
    let options = DirichletOptions {
        boundary_rule: QuadratureRule::new(
            solve.panels.unwrap_or(defaults.boundary_rule.panels()),
            solve.order.unwrap_or(defaults.boundary_rule.order()),
        )?,
        volume_rule: QuadratureRule::new(
            solve.volume_panels.unwrap_or(defaults.volume_rule.panels()),
            defaults.volume_rule.order(),
        )?,
        ..defaults
    };
    let (exact, source) = manufactured(solve.problem, cfg.alpha, &domain);
    let probes = if solve.probes.is_empty() {
        vec![domain.lower().iter().zip(domain.upper()).map(|(l, u)| 0.5 * (l + u)).collect()]
    } else {
        solve.probes.clone()
    };
    for p in &probes {
        cfg.check_point(p, "probe")?;
    }
    let g = exact.clone();
    let solution = solve_dirichlet(&kernel, source, &move |x: &[f64]| g(x), &domain, &options)?;
    let values = solution.evaluate_many(&probes);

    let mut header = coordinate_header(cfg.manifold.n, "x");
    header.extend(["value", "exact", "error"].map(String::from));
    let mut table = Table::new(header);
    let mut max_error: f64 = 0.0;
    for (x, v) in probes.iter().zip(values) {
        let v = v?;
        let e = exact(x);
        max_error = max_error.max((v - e).abs());
        let mut row: Vec<Cell> = x.iter().map(|&c| Cell::Real(c)).collect();
        row.extend([Cell::Real(v), Cell::Real(e), Cell::Real(v - e)]);
        table.push(row);
    }
    let report = SolveReport {
        problem: solve.problem,
        panels: solution.panels().len(),
        collocation_residual: solution.residual(),
        warning: solution.warning().map(str::to_string),
        max_error,
    };
    Ok((table, report))
}

/// Reads `x_1..x_n,value` rows (with a header line).
pub fn read_samples(path: &std::path::Path, n: usize) -> Result<Vec<(Vec<f64>, f64)>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if record.len() != n + 1 {
            return Err(CliError::Config(format!(
                "{} row {}: expected {} columns, found {}",
                path.display(),
                line + 2,
                n + 1,
                record.len()
            )));
        }
        let vals: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let vals = vals.map_err(|e| CliError::Config(format!("{} row {}: {e}", path.display(), line + 2)))?;
        out.push((vals[..n].to_vec(), vals[n]));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitTerm {
    pub multi_index: Vec<u8>,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitPole {
    pub location: Vec<f64>,
    pub terms: Vec<FitTerm>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSummary {
    pub samples: usize,
    pub residual: f64,
    pub rank: usize,
    pub unknowns: usize,
    pub negligible_terms: usize,
    pub rank_deficient: bool,
    pub residual_flagged: bool,
    pub warnings: Vec<String>,
    pub poles: Vec<FitPole>,
}

/// Pole-expansion fit of a sample file: `pole, m_1..m_n, coefficient`.
pub fn cmd_fit(cfg: &Config) -> Result<(Table, FitSummary), CliError> {
    let kernel = cfg.kernel()?;
    let n = cfg.manifold.n;
    let fit = cfg.fit.as_ref().ok_or_else(|| CliError::Config("fit needs a fit block with poles".into()))?;
    let path = cfg.samples_path.as_ref().ok_or_else(|| CliError::Config("fit needs samples_path".into()))?;
    for p in &fit.poles {
        cfg.check_point(p, "pole")?;
    }
    let samples = read_samples(path, n)?;
    let options = FitOptions {
        max_order: fit.max_order,
        basis: match fit.basis {
            BasisConfig::Reduced => FitBasis::Reduced,
            BasisConfig::Full => FitBasis::Full,
        },
        ..FitOptions::default()
    };
    let report = fit_expansion(&kernel, &samples, &fit.poles, &options)?;

    let mut header = vec!["pole".to_string()];
    header.extend(coordinate_header(n, "m"));
    header.push("coefficient".into());
    let mut table = Table::new(header);
    let mut poles = Vec::new();
    for (i, pole) in report.expansion.poles.iter().enumerate() {
        let mut terms = Vec::new();
        for t in &pole.terms {
            let mut row = vec![Cell::from(i)];
            row.extend(t.multi_index.0.iter().map(|&m| Cell::Int(m as i64)));
            row.push(Cell::Real(t.coefficient));
            table.push(row);
            terms.push(FitTerm { multi_index: t.multi_index.0.clone(), coefficient: t.coefficient });
        }
        poles.push(FitPole { location: pole.location.clone(), terms });
    }
    let summary = FitSummary {
        samples: samples.len(),
        residual: report.residual,
        rank: report.rank,
        unknowns: report.unknowns,
        negligible_terms: report.negligible_terms,
        rank_deficient: report.rank_deficient,
        residual_flagged: report.residual_flagged,
        warnings: report.warnings,
        poles,
    };
    Ok((table, summary))
}
