use std::path::{Path, PathBuf};

use kgq_core::kernels::{MultiIndex, PeriodizedKernel, TruncationMode, TruncationPolicy, DEFAULT_MAX_RADIUS, DEFAULT_TOL};
use kgq_core::lattice::{ManifoldSpec, PinCharacter, SignRule};
use kgq_core::specfun::KernelParams;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Mobius,
    Klein,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SignRuleConfig {
    #[default]
    Parity,
    EvenSublattice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldConfig {
    pub kind: Kind,
    pub n: usize,
    /// Lattice rank; ignored for Klein bottles.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub sign_rule: SignRuleConfig,
}

impl Default for ManifoldConfig {
    fn default() -> Self {
        Self { kind: Kind::Mobius, n: 3, k: Some(1), sign_rule: SignRuleConfig::Parity }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModeConfig {
    #[default]
    Adaptive,
    FixedRadius,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TruncationConfig {
    #[serde(default)]
    pub mode: ModeConfig,
    #[serde(default)]
    pub radius: Option<usize>,
    #[serde(default)]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelForm {
    /// `℘(x)`.
    #[default]
    OnePoint,
    /// `G(x, source)`.
    TwoPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Steps {
    Uniform(usize),
    PerAxis(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub steps: Steps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    /// `u = e^{α x_1}`, `f = 0`.
    #[default]
    Exponential,
    /// `u = e^{α x_1} + 50 Π_i (s_i (1 − s_i))³` in box coordinates `s`.
    BumpExponential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    #[serde(default)]
    pub problem: Problem,
    #[serde(default)]
    pub panels: Option<usize>,
    #[serde(default)]
    pub order: Option<usize>,
    #[serde(default)]
    pub volume_panels: Option<usize>,
    /// Evaluation points; the box center when empty.
    #[serde(default)]
    pub probes: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BasisConfig {
    #[default]
    Reduced,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub poles: Vec<Vec<f64>>,
    #[serde(default = "default_max_order")]
    pub max_order: usize,
    #[serde(default)]
    pub basis: BasisConfig,
}

fn default_max_order() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default = "default_suites")]
    pub suites: Vec<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { suites: default_suites(), seed: None }
    }
}

fn default_suites() -> Vec<String> {
    crate::verify::SUITES.iter().map(|s| s.to_string()).collect()
}

fn default_alpha() -> f64 {
    1.0
}

/// A complete run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub manifold: ManifoldConfig,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Twisted generators, 1-based.
    #[serde(default)]
    pub character: Vec<usize>,
    #[serde(default)]
    pub truncation: TruncationConfig,
    #[serde(default)]
    pub kernel: KernelForm,
    #[serde(default)]
    pub source: Option<Vec<f64>>,
    #[serde(default)]
    pub derivative: Option<Vec<u8>>,
    #[serde(default)]
    pub points: Vec<Vec<f64>>,
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub domain: Option<DomainConfig>,
    #[serde(default)]
    pub solve: Option<SolveConfig>,
    #[serde(default)]
    pub samples_path: Option<PathBuf>,
    #[serde(default)]
    pub fit: Option<FitConfig>,
    #[serde(default)]
    pub verify: Option<VerifyConfig>,
    #[serde(default)]
    pub threads: Option<usize>,
}

impl Default for Config {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config is valid")
    }
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        // relative sample paths are resolved against the config file
        if let (Some(p), Some(dir)) = (cfg.samples_path.as_mut(), path.parent()) {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn spec(&self) -> Result<ManifoldSpec, CliError> {
        let m = &self.manifold;
        let spec = match m.kind {
            Kind::Mobius => {
                let k = m.k.ok_or_else(|| CliError::Config("manifold.k is required for a Moebius strip".into()))?;
                ManifoldSpec::mobius(m.n, k)?
            }
            Kind::Klein => ManifoldSpec::klein(m.n)?,
        };
        Ok(spec.with_sign_rule(match m.sign_rule {
            SignRuleConfig::Parity => SignRule::Parity,
            SignRuleConfig::EvenSublattice => SignRule::EvenSublattice,
        }))
    }

    pub fn character_of(&self, spec: &ManifoldSpec) -> Result<PinCharacter, CliError> {
        if self.character.contains(&0) {
            return Err(CliError::Config("character indices are 1-based".into()));
        }
        Ok(PinCharacter::new(self.character.iter().map(|i| i - 1).collect(), spec.k())?)
    }

    pub fn truncation_policy(&self) -> Result<TruncationPolicy, CliError> {
        let t = &self.truncation;
        let tol = t.tol.unwrap_or(DEFAULT_TOL);
        if tol.is_nan() || tol <= 0.0 {
            return Err(CliError::Config(format!("truncation.tol must be positive, got {tol}")));
        }
        Ok(match t.mode {
            ModeConfig::Adaptive => TruncationPolicy {
                mode: TruncationMode::Adaptive,
                radius: t.radius.unwrap_or(DEFAULT_MAX_RADIUS),
                tol,
            },
            ModeConfig::FixedRadius => TruncationPolicy {
                mode: TruncationMode::FixedRadius,
                radius: t.radius.ok_or_else(|| CliError::Config("fixed_radius mode needs truncation.radius".into()))?,
                tol,
            },
        })
    }

    /// The configured kernel, including its derivative.
    pub fn kernel(&self) -> Result<PeriodizedKernel, CliError> {
        let spec = self.spec()?;
        let params = KernelParams::new(spec.n(), self.alpha)?;
        let mut kernel = PeriodizedKernel::new(spec, self.character_of(&spec)?, params)?
            .with_truncation(self.truncation_policy()?)?;
        if let Some(m) = &self.derivative {
            kernel = kernel.with_derivative(MultiIndex(m.clone()))?;
        }
        Ok(kernel)
    }

    pub fn check_point(&self, x: &[f64], what: &str) -> Result<(), CliError> {
        if x.len() != self.manifold.n {
            return Err(CliError::Config(format!(
                "{what} has {} coordinates, manifold has dimension {}",
                x.len(),
                self.manifold.n
            )));
        }
        Ok(())
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub alpha: Option<f64>,
    pub tol: Option<f64>,
    pub radius: Option<usize>,
    pub mode: Option<ModeConfig>,
    pub threads: Option<usize>,
    pub character: Option<Vec<usize>>,
    pub samples_path: Option<PathBuf>,
    pub suites: Option<Vec<String>>,
}

impl Overrides {
    pub fn apply(self, cfg: &mut Config) {
        if let Some(a) = self.alpha {
            cfg.alpha = a;
        }
        if let Some(t) = self.tol {
            cfg.truncation.tol = Some(t);
        }
        if let Some(r) = self.radius {
            cfg.truncation.radius = Some(r);
        }
        if let Some(m) = self.mode {
            cfg.truncation.mode = m;
        }
        if let Some(t) = self.threads {
            cfg.threads = Some(t);
        }
        if let Some(c) = self.character {
            cfg.character = c;
        }
        if let Some(p) = self.samples_path {
            cfg.samples_path = Some(p);
        }
        if let Some(s) = self.suites {
            cfg.verify.get_or_insert_with(VerifyConfig::default).suites = s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_parsing() {
        let cfg = Config::default();
        assert_eq!(cfg.manifold.n, 3);
        assert_eq!(cfg.alpha, 1.0);
        assert!(cfg.kernel().is_ok());

        let cfg = Config::from_json(
            r#"{"manifold": {"kind": "klein", "n": 2}, "alpha": 1.5, "character": [2],
                "truncation": {"mode": "fixed_radius", "radius": 30},
                "grid": {"min": [0.1, 0.1], "max": [0.9, 1.9], "steps": 8}}"#,
        )
        .unwrap();
        let kernel = cfg.kernel().unwrap();
        assert_eq!(kernel.character().twisted(), &[1]);
        assert_eq!(kernel.truncation().radius, 30);
        assert!(matches!(cfg.grid.unwrap().steps, Steps::Uniform(8)));
    }

    #[test]
    fn schema_violations() {
        assert!(matches!(Config::from_json(r#"{"alpha": "one"}"#), Err(CliError::Config(_))));
        assert!(matches!(Config::from_json(r#"{"bogus": 1}"#), Err(CliError::Config(_))));
        let cfg = Config::from_json(r#"{"character": [0]}"#).unwrap();
        assert!(cfg.kernel().is_err());
        let cfg = Config::from_json(r#"{"manifold": {"kind": "mobius", "n": 3}}"#).unwrap();
        assert!(cfg.spec().is_err());
        let cfg = Config::from_json(r#"{"truncation": {"mode": "fixed_radius"}}"#).unwrap();
        assert!(cfg.truncation_policy().is_err());
    }

    #[test]
    fn overrides_win() {
        let mut cfg = Config::from_json(r#"{"alpha": 2.0, "truncation": {"tol": 1e-8}}"#).unwrap();
        Overrides { alpha: Some(3.0), tol: Some(1e-10), ..Default::default() }.apply(&mut cfg);
        assert_eq!(cfg.alpha, 3.0);
        assert_eq!(cfg.truncation.tol, Some(1e-10));
    }
}
