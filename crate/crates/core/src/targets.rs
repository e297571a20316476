//! Energy-based target families.
//!
//! Level `l` of a ladder targets the tempered density `exp(-E(x) / t_l)`.
//! Normalizing constants are never computed: every density enters the
//! samplers as a log-domain difference.

use std::fmt::Debug;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// A target known through its energy function `E`, plus optionally an exact
/// sampler for every tempered version `exp(-E / t)`.
pub trait EnergyTarget: Send + Sync {
    type State: Clone + PartialEq + Debug + Send + Sync;

    /// `E(x)`. Must be finite and bounded below on valid states.
    fn energy(&self, x: &Self::State) -> f64;

    /// Rejects states the target cannot evaluate (wrong dimension, index out
    /// of range).
    fn validate_state(&self, x: &Self::State) -> Result<()>;

    /// Default starting point for chains: the origin, or state 0.
    fn initial_state(&self) -> Self::State;

    fn has_exact_sampler(&self) -> bool {
        false
    }

    /// One exact draw from the distribution proportional to `exp(-E / temperature)`.
    fn sample_tempered<R: Rng + ?Sized>(&self, temperature: f64, rng: &mut R) -> Result<Self::State> {
        let _ = (temperature, rng);
        Err(Error::MissingExactSampler)
    }
}

/// Temperatures `t_0 > t_1 > ... > t_K = 1` and mixing probabilities
/// `theta_1..theta_K` of the adaptive levels. Level 0 is the hottest chain and
/// has no theta.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureLadder {
    temperatures: Vec<f64>,
    thetas: Vec<f64>,
}

impl TemperatureLadder {
    pub fn new(temperatures: Vec<f64>, thetas: Vec<f64>) -> Result<Self> {
        if temperatures.is_empty() {
            return Err(Error::InvalidLadder("at least one temperature is required".into()));
        }
        for (i, &t) in temperatures.iter().enumerate() {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::InvalidLadder(format!(
                    "temperatures[{i}] = {t} must be positive and finite"
                )));
            }
        }
        for (i, pair) in temperatures.windows(2).enumerate() {
            if pair[1] >= pair[0] {
                return Err(Error::InvalidLadder(format!(
                    "temperatures must be strictly decreasing: temperatures[{}] = {} is not below temperatures[{}] = {}",
                    i + 1,
                    pair[1],
                    i,
                    pair[0]
                )));
            }
        }
        let last = *temperatures.last().unwrap();
        if last != 1.0 {
            return Err(Error::InvalidLadder(format!(
                "the coldest temperature must be exactly 1, found {last}"
            )));
        }
        if thetas.len() + 1 != temperatures.len() {
            return Err(Error::InvalidLadder(format!(
                "expected {} thetas for {} temperatures, found {}",
                temperatures.len() - 1,
                temperatures.len(),
                thetas.len()
            )));
        }
        for (i, &theta) in thetas.iter().enumerate() {
            if !(theta > 0.0 && theta <= 1.0) {
                return Err(Error::InvalidLadder(format!(
                    "theta for level {} is {theta}; every adaptive level needs theta in (0, 1]",
                    i + 1
                )));
            }
        }
        Ok(Self { temperatures, thetas })
    }

    /// Same theta on every adaptive level.
    pub fn with_common_theta(temperatures: Vec<f64>, theta: f64) -> Result<Self> {
        let k = temperatures.len().saturating_sub(1);
        Self::new(temperatures, vec![theta; k])
    }

    /// Number of levels, `K + 1`.
    pub fn levels(&self) -> usize {
        self.temperatures.len()
    }

    /// Index of the coldest level, `K`.
    pub fn coldest(&self) -> usize {
        self.temperatures.len() - 1
    }

    pub fn temperatures(&self) -> &[f64] {
        &self.temperatures
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn temperature(&self, level: usize) -> Result<f64> {
        self.temperatures
            .get(level)
            .copied()
            .ok_or(Error::LevelOutOfRange { level, levels: self.levels() })
    }

    /// `theta_l` for an adaptive level `l >= 1`.
    pub fn theta(&self, level: usize) -> Result<f64> {
        if level == 0 {
            return Err(Error::InvalidParameter("level 0 has no theta".into()));
        }
        self.thetas
            .get(level - 1)
            .copied()
            .ok_or(Error::LevelOutOfRange { level, levels: self.levels() })
    }
}

/// Unnormalized log density `-E(x) / t_level`.
pub fn tempered_log_density<T: EnergyTarget>(
    target: &T,
    ladder: &TemperatureLadder,
    level: usize,
    x: &T::State,
) -> Result<f64> {
    let t = ladder.temperature(level)?;
    target.validate_state(x)?;
    let e = target.energy(x);
    if !e.is_finite() {
        return Err(Error::NonFiniteEnergy);
    }
    Ok(-e / t)
}

/// Log importance weight `log r^(l)(x) = E(x)/t_{l-1} - E(x)/t_l` between level
/// `l` and the hotter level feeding it.
pub fn importance_log_weight<T: EnergyTarget>(
    target: &T,
    ladder: &TemperatureLadder,
    level: usize,
    x: &T::State,
) -> Result<f64> {
    if level == 0 {
        return Err(Error::NoImportanceWeight);
    }
    let t = ladder.temperature(level)?;
    let t_prev = ladder.temperature(level - 1)?;
    target.validate_state(x)?;
    let e = target.energy(x);
    if !e.is_finite() {
        return Err(Error::NonFiniteEnergy);
    }
    Ok(-e * (1.0 / t - 1.0 / t_prev))
}

/// Zero-mean Gaussian `N(0, Sigma)` with energy `x' Sigma^{-1} x / 2`.
///
/// Tempering at `t` gives `N(0, t Sigma)`, so exact tempered draws are
/// `sqrt(t) L z` with `L` the Cholesky factor of `Sigma`.
#[derive(Debug, Clone)]
pub struct GaussianTarget {
    covariance: DMatrix<f64>,
    precision: DMatrix<f64>,
    cholesky: DMatrix<f64>,
    exact_sampler: bool,
}

impl GaussianTarget {
    pub fn new(covariance: DMatrix<f64>) -> Result<Self> {
        let d = covariance.nrows();
        if d == 0 || covariance.ncols() != d {
            return Err(Error::InvalidTarget("covariance must be a non-empty square matrix".into()));
        }
        if covariance.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTarget("covariance entries must be finite".into()));
        }
        for i in 0..d {
            for j in 0..i {
                let (a, b) = (covariance[(i, j)], covariance[(j, i)]);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::InvalidTarget(format!(
                        "covariance is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let chol = covariance
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidTarget("covariance is not positive definite".into()))?;
        let precision = chol.inverse();
        Ok(Self { cholesky: chol.l(), covariance, precision, exact_sampler: true })
    }

    /// Convenience constructor from row-major nested slices.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(matrix_from_rows(rows).map_err(Error::InvalidTarget)?)
    }

    /// Hides the exact sampler, turning the limit kernels into errors.
    pub fn without_exact_sampler(mut self) -> Self {
        self.exact_sampler = false;
        self
    }

    pub fn dimension(&self) -> usize {
        self.covariance.nrows()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }
}

impl EnergyTarget for GaussianTarget {
    type State = Vec<f64>;

    fn energy(&self, x: &Vec<f64>) -> f64 {
        let d = self.dimension();
        let mut q = 0.0;
        for i in 0..d {
            let mut row = 0.0;
            for j in 0..d {
                row += self.precision[(i, j)] * x[j];
            }
            q += x[i] * row;
        }
        0.5 * q
    }

    fn validate_state(&self, x: &Vec<f64>) -> Result<()> {
        if x.len() != self.dimension() {
            return Err(Error::DimensionMismatch { expected: self.dimension(), found: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteEnergy);
        }
        Ok(())
    }

    fn initial_state(&self) -> Vec<f64> {
        vec![0.0; self.dimension()]
    }

    fn has_exact_sampler(&self) -> bool {
        self.exact_sampler
    }

    fn sample_tempered<R: Rng + ?Sized>(&self, temperature: f64, rng: &mut R) -> Result<Vec<f64>> {
        if !self.exact_sampler {
            return Err(Error::MissingExactSampler);
        }
        let d = self.dimension();
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let s = temperature.sqrt();
        Ok((0..d)
            .map(|i| s * (0..=i).map(|j| self.cholesky[(i, j)] * z[j]).sum::<f64>())
            .collect())
    }
}

/// Target on states `0..n` with an explicit energy per state.
#[derive(Debug, Clone)]
pub struct FiniteTarget {
    energies: Vec<f64>,
    min_energy: f64,
    exact_sampler: bool,
}

impl FiniteTarget {
    pub fn new(energies: Vec<f64>) -> Result<Self> {
        if energies.is_empty() {
            return Err(Error::InvalidTarget("energy vector is empty".into()));
        }
        if let Some(i) = energies.iter().position(|e| !e.is_finite()) {
            return Err(Error::InvalidTarget(format!("energies[{i}] is not finite")));
        }
        let min_energy = energies.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Self { energies, min_energy, exact_sampler: true })
    }

    pub fn without_exact_sampler(mut self) -> Self {
        self.exact_sampler = false;
        self
    }

    pub fn state_count(&self) -> usize {
        self.energies.len()
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// Normalized tempered distribution at temperature `t`.
    pub fn tempered_probabilities(&self, temperature: f64) -> Vec<f64> {
        let w: Vec<f64> = self
            .energies
            .iter()
            .map(|e| (-(e - self.min_energy) / temperature).exp())
            .collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|v| v / total).collect()
    }
}

impl EnergyTarget for FiniteTarget {
    type State = usize;

    fn energy(&self, x: &usize) -> f64 {
        self.energies[*x]
    }

    fn validate_state(&self, x: &usize) -> Result<()> {
        if *x >= self.energies.len() {
            return Err(Error::InvalidParameter(format!(
                "state {x} out of range for {} states",
                self.energies.len()
            )));
        }
        Ok(())
    }

    fn initial_state(&self) -> usize {
        0
    }

    fn has_exact_sampler(&self) -> bool {
        self.exact_sampler
    }

    fn sample_tempered<R: Rng + ?Sized>(&self, temperature: f64, rng: &mut R) -> Result<usize> {
        if !self.exact_sampler {
            return Err(Error::MissingExactSampler);
        }
        let mut total = 0.0;
        for e in &self.energies {
            total += (-(e - self.min_energy) / temperature).exp();
        }
        let mut u = rng.random::<f64>() * total;
        for (i, e) in self.energies.iter().enumerate() {
            u -= (-(e - self.min_energy) / temperature).exp();
            if u < 0.0 {
                return Ok(i);
            }
        }
        Ok(self.energies.len() - 1)
    }
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>]) -> std::result::Result<DMatrix<f64>, String> {
    let n = rows.len();
    if n == 0 {
        return Err("matrix has no rows".into());
    }
    let m = rows[0].len();
    if let Some(i) = rows.iter().position(|r| r.len() != m) {
        return Err(format!("row {i} has {} entries, expected {m}", rows[i].len()));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}
