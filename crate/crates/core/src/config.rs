//! Flat TOML run configuration.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernels::{theta_lower_bound, MatrixKernel, ResampleMove, RwmKernel};
use crate::ladder::{LadderOptions, SamplerKind, Sampler};
use crate::targets::{matrix_from_rows, FiniteTarget, GaussianTarget, TemperatureLadder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Gaussian,
    Finite,
}

fn default_true() -> bool {
    true
}
fn default_scale() -> f64 {
    1.0
}
fn default_iterations() -> usize {
    10_000
}
fn default_replications() -> usize {
    100
}
fn default_oracle_replications() -> usize {
    2_000
}
fn default_oracle_steps() -> usize {
    100_000
}

/// Every key a run configuration may contain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub target: TargetKind,
    /// Gaussian covariance, one inner list per row.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
    /// Finite-target energies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energies: Option<Vec<f64>>,
    /// Symmetric proposal matrix of the finite Metropolis moves; uniform if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_true")]
    pub exact_sampler: bool,

    /// `t_0 > ... > t_K = 1`.
    pub temperatures: Vec<f64>,
    /// Common theta of every adaptive level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    /// Per-level thetas `theta_1..theta_K`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thetas: Option<Vec<f64>>,

    /// Kind used by `run`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<SamplerKind>,
    /// Kinds compared by `table1`, first is the baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernels: Option<Vec<SamplerKind>>,
    /// Gaussian random-walk proposal `N(0, scale I)`.
    #[serde(default = "default_scale")]
    pub proposal_scale: f64,
    #[serde(default)]
    pub ir_move: ResampleMove,
    #[serde(default)]
    pub include_initial_state: bool,

    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub burn_in: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,

    /// Drift rates `lambda_1..lambda_K` for the theta bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambdas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,

    /// Function of the finite state whose variances the oracle reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_function: Option<Vec<f64>>,
    #[serde(default)]
    pub cross_check: bool,
    #[serde(default = "default_oracle_replications")]
    pub oracle_replications: usize,
    #[serde(default = "default_oracle_steps")]
    pub oracle_steps: usize,
}

/// A configured sampler for either target family.
#[derive(Debug, Clone)]
pub enum BuiltSampler {
    Gaussian(Sampler<GaussianTarget, RwmKernel>),
    Finite(Sampler<FiniteTarget, MatrixKernel>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaCheck {
    pub level: usize,
    pub theta: f64,
    pub bound: std::result::Result<f64, String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
    pub theta_checks: Vec<ThetaCheck>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.theta_checks {
            match &c.bound {
                Ok(b) => {
                    let verdict = if c.theta >= *b { "ok" } else { "below bound" };
                    writeln!(f, "level {}: theta = {} lower bound = {:.6} ({verdict})", c.level, c.theta, b)?
                }
                Err(e) => writeln!(f, "level {}: theta = {} lower bound undefined: {e}", c.level, c.theta)?,
            }
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        for e in &self.errors {
            writeln!(f, "error: {e}")?;
        }
        write!(f, "{}", if self.is_valid() { "valid" } else { "invalid" })
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of the canonical serialization, as lowercase hex.
    pub fn digest(&self) -> String {
        Sha256::digest(self.to_toml_string().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn ladder(&self) -> Result<TemperatureLadder> {
        let k = self.temperatures.len().saturating_sub(1);
        let thetas = match (&self.theta, &self.thetas) {
            (Some(_), Some(_)) => return Err(Error::Config("give either `theta` or `thetas`, not both".into())),
            (Some(t), None) => vec![*t; k],
            (None, Some(ts)) => ts.clone(),
            (None, None) if k == 0 => Vec::new(),
            (None, None) => return Err(Error::Config("`theta` or `thetas` is required for adaptive levels".into())),
        };
        TemperatureLadder::new(self.temperatures.clone(), thetas)
    }

    fn options(&self) -> LadderOptions {
        LadderOptions { resample_move: self.ir_move, include_initial_state: self.include_initial_state }
    }

    pub fn finite_target(&self) -> Result<FiniteTarget> {
        if self.target != TargetKind::Finite {
            return Err(Error::Config("`target` must be \"finite\"".into()));
        }
        if self.covariance.is_some() {
            return Err(Error::Config("`covariance` only applies to gaussian targets".into()));
        }
        let energies = self.energies.clone().ok_or_else(|| Error::Config("finite targets need `energies`".into()))?;
        let t = FiniteTarget::new(energies)?;
        Ok(if self.exact_sampler { t } else { t.without_exact_sampler() })
    }

    /// Symmetric proposal of the finite target; uniform over all states by default.
    pub fn proposal(&self, states: usize) -> Result<DMatrix<f64>> {
        match &self.proposal_matrix {
            Some(rows) => matrix_from_rows(rows).map_err(Error::Config),
            None => Ok(DMatrix::from_element(states, states, 1.0 / states as f64)),
        }
    }

    pub fn build(&self) -> Result<BuiltSampler> {
        let ladder = self.ladder()?;
        if !(self.proposal_scale.is_finite() && self.proposal_scale > 0.0) {
            return Err(Error::Config(format!("proposal_scale = {} must be positive", self.proposal_scale)));
        }
        match self.target {
            TargetKind::Gaussian => {
                if self.energies.is_some() || self.proposal_matrix.is_some() {
                    return Err(Error::Config("`energies` and `proposal_matrix` only apply to finite targets".into()));
                }
                let rows = self.covariance.as_ref().ok_or_else(|| Error::Config("gaussian targets need `covariance`".into()))?;
                let target = GaussianTarget::from_rows(rows)?;
                let target = if self.exact_sampler { target } else { target.without_exact_sampler() };
                let local = RwmKernel::isotropic(target.dimension(), self.proposal_scale)?;
                Ok(BuiltSampler::Gaussian(Sampler::new(target, ladder, local).with_options(self.options())))
            }
            TargetKind::Finite => {
                let target = self.finite_target()?;
                let q = self.proposal(target.state_count())?;
                let local = MatrixKernel::metropolis(&target, &ladder, &q)?;
                Ok(BuiltSampler::Finite(Sampler::new(target, ladder, local).with_options(self.options())))
            }
        }
    }

    /// Kinds compared by the MSE table; all five by default.
    pub fn table_kinds(&self) -> Vec<SamplerKind> {
        self.kernels.clone().unwrap_or_else(|| SamplerKind::ALL.to_vec())
    }

    /// Checks every precondition without running anything.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let built = match self.build() {
            Ok(b) => Some(b),
            Err(e) => {
                report.errors.push(e.to_string());
                None
            }
        };
        if self.iterations == 0 {
            report.errors.push("iterations must be at least 1".into());
        }
        if self.replications == 0 {
            report.errors.push("replications must be at least 1".into());
        }
        if self.replications == 1 {
            report.warnings.push("one replication gives unreliable MSE ratios".into());
        }
        let mut kinds = self.kernels.clone().unwrap_or_default();
        kinds.extend(self.kernel);
        if kinds.iter().any(|k| k.needs_exact_sampler()) && !self.exact_sampler {
            report.errors.push("limit kernels need an exact sampler but `exact_sampler = false`".into());
        }
        if let Some(f) = &self.oracle_function {
            if let Some(BuiltSampler::Finite(s)) = &built {
                if f.len() != s.target.state_count() {
                    report.errors.push(format!(
                        "oracle_function has {} entries for {} states",
                        f.len(),
                        s.target.state_count()
                    ));
                }
            }
        }
        if self.kappa.is_some() != self.lambdas.is_some() {
            report.errors.push("`lambdas` and `kappa` must be given together".into());
        }
        if let (Some(lambdas), Some(kappa), Ok(ladder)) = (&self.lambdas, self.kappa, self.ladder()) {
            let k = ladder.coldest();
            if lambdas.len() != k {
                report.errors.push(format!("expected {k} lambdas, found {}", lambdas.len()));
            } else {
                let t = ladder.temperatures();
                for l in 1..=k {
                    let theta = ladder.thetas()[l - 1];
                    let bound = theta_lower_bound(lambdas[l - 1], kappa, t[l], t[l - 1]).map_err(|e| e.to_string());
                    match &bound {
                        Ok(b) if theta < *b => report.warnings.push(format!(
                            "level {l}: theta = {theta} is below the sufficient bound {b:.6}"
                        )),
                        Err(e) => report.warnings.push(format!("level {l}: {e}")),
                        _ => {}
                    }
                    report.theta_checks.push(ThetaCheck { level: l, theta, bound });
                }
            }
        }
        report
    }
}
