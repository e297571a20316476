//! Single-step transition kernels.
//!
//! Every level `l >= 1` mixes a local move `P^(l)` (probability `theta`) with a
//! move built from the hotter level `l - 1`:
//!
//! * EE: draw `Y` uniformly from the hotter chain's history and accept it with
//!   probability `min(1, r(Y) / r(X))`.
//! * IR: draw `Y` from the history with weights `r(Y)`, then apply a
//!   `pi^(l)`-invariant move from `Y`.
//!
//! The limit kernels replace the history by exact draws from `pi^(l-1)` (EE)
//! or `pi^(l)` (IR). Branch selection always consumes exactly one uniform
//! variate before any sub-step.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reservoir::Reservoir;
use crate::targets::{importance_log_weight, tempered_log_density, EnergyTarget, FiniteTarget, TemperatureLadder};

/// Tolerance on row sums of stochastic matrices.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Local,
    Exchange,
    Resample,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Local => "local",
            Branch::Exchange => "exchange",
            Branch::Resample => "resample",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "local" => Some(Branch::Local),
            "exchange" => Some(Branch::Exchange),
            "resample" => Some(Branch::Resample),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome<S> {
    pub next: S,
    pub branch: Branch,
    pub accepted: bool,
    pub log_accept_ratio: Option<f64>,
}

/// What IR-MCMC does after resampling `Y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleMove {
    /// One step of the level's own local kernel started at `Y`.
    #[default]
    Local,
    /// Keep `Y` as is.
    Identity,
}

/// `min(1, exp(log_ratio))`, without NaN for any non-NaN input.
pub fn acceptance_probability(log_ratio: f64) -> f64 {
    if log_ratio >= 0.0 {
        1.0
    } else {
        log_ratio.exp()
    }
}

fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    rng.random::<f64>() < acceptance_probability(log_ratio)
}

fn check_theta(theta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&theta) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("theta = {theta} is outside [0, 1]")))
    }
}

fn check_adaptive_level(ladder: &TemperatureLadder, level: usize) -> Result<()> {
    if level == 0 {
        return Err(Error::InvalidParameter("adaptive moves need a level >= 1".into()));
    }
    ladder.temperature(level).map(|_| ())
}

/// The `pi^(l)`-invariant local move `P^(l)` of a level.
pub trait LocalKernel<T: EnergyTarget>: Send + Sync {
    fn step<R: Rng + ?Sized>(
        &self,
        target: &T,
        ladder: &TemperatureLadder,
        level: usize,
        x: &T::State,
        rng: &mut R,
    ) -> Result<StepOutcome<T::State>>;
}

/// Random-walk Metropolis with a fixed Gaussian proposal `N(0, C)`.
#[derive(Debug, Clone)]
pub struct RwmKernel {
    proposal_cholesky: DMatrix<f64>,
}

impl RwmKernel {
    pub fn new(proposal_covariance: DMatrix<f64>) -> Result<Self> {
        let d = proposal_covariance.nrows();
        if d == 0 || proposal_covariance.ncols() != d {
            return Err(Error::InvalidParameter("proposal covariance must be square".into()));
        }
        let chol = proposal_covariance
            .cholesky()
            .ok_or_else(|| Error::InvalidParameter("proposal covariance is not positive definite".into()))?;
        Ok(Self { proposal_cholesky: chol.l() })
    }

    /// `N(0, scale * I_d)`.
    pub fn isotropic(dimension: usize, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("proposal scale {scale} must be positive")));
        }
        Self::new(DMatrix::identity(dimension, dimension) * scale)
    }

    pub fn dimension(&self) -> usize {
        self.proposal_cholesky.nrows()
    }
}

/// One random-walk Metropolis step targeting `pi^(level)`.
pub fn rwm_step<T, R>(
    target: &T,
    ladder: &TemperatureLadder,
    level: usize,
    x: &Vec<f64>,
    kernel: &RwmKernel,
    rng: &mut R,
) -> Result<StepOutcome<Vec<f64>>>
where
    T: EnergyTarget<State = Vec<f64>>,
    R: Rng + ?Sized,
{
    let d = kernel.dimension();
    if x.len() != d {
        return Err(Error::DimensionMismatch { expected: d, found: x.len() });
    }
    let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let l = &kernel.proposal_cholesky;
    let y: Vec<f64> = (0..d).map(|i| x[i] + (0..=i).map(|j| l[(i, j)] * z[j]).sum::<f64>()).collect();
    let log_ratio = tempered_log_density(target, ladder, level, &y)? - tempered_log_density(target, ladder, level, x)?;
    let accepted = accept(log_ratio, rng);
    Ok(StepOutcome {
        next: if accepted { y } else { x.clone() },
        branch: Branch::Local,
        accepted,
        log_accept_ratio: Some(log_ratio),
    })
}

impl<T: EnergyTarget<State = Vec<f64>>> LocalKernel<T> for RwmKernel {
    fn step<R: Rng + ?Sized>(
        &self,
        target: &T,
        ladder: &TemperatureLadder,
        level: usize,
        x: &Vec<f64>,
        rng: &mut R,
    ) -> Result<StepOutcome<Vec<f64>>> {
        rwm_step(target, ladder, level, x, self, rng)
    }
}

/// Local moves on a finite target given as one explicit transition matrix per
/// level.
#[derive(Debug, Clone)]
pub struct MatrixKernel {
    matrices: Vec<DMatrix<f64>>,
    cumulative: Vec<Vec<Vec<f64>>>,
}

impl MatrixKernel {
    pub fn from_matrices(matrices: Vec<DMatrix<f64>>) -> Result<Self> {
        if matrices.is_empty() {
            return Err(Error::InvalidParameter("at least one base matrix is required".into()));
        }
        let n = matrices[0].nrows();
        for m in &matrices {
            if m.nrows() != n {
                return Err(Error::DimensionMismatch { expected: n, found: m.nrows() });
            }
            check_stochastic(m)?;
        }
        let cumulative = matrices
            .iter()
            .map(|m| {
                (0..n)
                    .map(|i| {
                        let mut acc = 0.0;
                        m.row(i)
                            .iter()
                            .map(|p| {
                                acc += p;
                                acc
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Ok(Self { matrices, cumulative })
    }

    /// One Metropolis matrix per level built from a symmetric proposal matrix.
    pub fn metropolis(target: &FiniteTarget, ladder: &TemperatureLadder, proposal: &DMatrix<f64>) -> Result<Self> {
        let matrices = (0..ladder.levels())
            .map(|l| metropolis_matrix(target, ladder, l, proposal))
            .collect::<Result<Vec<_>>>()?;
        Self::from_matrices(matrices)
    }

    pub fn matrix(&self, level: usize) -> Result<&DMatrix<f64>> {
        self.matrices.get(level).ok_or(Error::LevelOutOfRange { level, levels: self.matrices.len() })
    }

    pub fn state_count(&self) -> usize {
        self.matrices[0].nrows()
    }
}

/// One row draw from the level's base matrix.
pub fn matrix_step<R: Rng + ?Sized>(kernel: &MatrixKernel, level: usize, x: usize, rng: &mut R) -> Result<StepOutcome<usize>> {
    let rows = kernel
        .cumulative
        .get(level)
        .ok_or(Error::LevelOutOfRange { level, levels: kernel.matrices.len() })?;
    let row = rows.get(x).ok_or_else(|| Error::InvalidParameter(format!("state {x} out of range")))?;
    let u = rng.random::<f64>();
    let mut next = row.partition_point(|&c| c <= u);
    if next >= row.len() {
        // Rounding left the last cumulative entry just below 1.
        next = (0..row.len()).rev().find(|&j| kernel.matrices[level][(x, j)] > 0.0).unwrap_or(x);
    }
    Ok(StepOutcome { next, branch: Branch::Local, accepted: next != x, log_accept_ratio: None })
}

impl LocalKernel<FiniteTarget> for MatrixKernel {
    fn step<R: Rng + ?Sized>(
        &self,
        target: &FiniteTarget,
        _ladder: &TemperatureLadder,
        level: usize,
        x: &usize,
        rng: &mut R,
    ) -> Result<StepOutcome<usize>> {
        if self.state_count() != target.state_count() {
            return Err(Error::DimensionMismatch { expected: target.state_count(), found: self.state_count() });
        }
        matrix_step(self, level, *x, rng)
    }
}

/// Adaptive EE move `P_mu^(l)` with `mu` the reservoir of level `l - 1`.
///
/// An empty reservoir forces the local branch.
#[allow(clippy::too_many_arguments)]
pub fn ee_adaptive_step<T, L, R>(
    target: &T,
    ladder: &TemperatureLadder,
    level: usize,
    x: &T::State,
    reservoir: &Reservoir<T::State>,
    local: &L,
    theta: f64,
    rng: &mut R,
) -> Result<StepOutcome<T::State>>
where
    T: EnergyTarget,
    L: LocalKernel<T>,
    R: Rng + ?Sized,
{
    check_adaptive_level(ladder, level)?;
    check_theta(theta)?;
    let u = rng.random::<f64>();
    if u < theta || reservoir.is_empty() {
        return local.step(target, ladder, level, x, rng);
    }
    let y = reservoir.sample_uniform(rng)?;
    exchange(target, ladder, level, x, y.clone(), rng)
}

/// Adaptive IR move: importance resampling from the reservoir of level `l - 1`
/// followed by `resample_move`.
#[allow(clippy::too_many_arguments)]
pub fn ir_adaptive_step<T, L, R>(
    target: &T,
    ladder: &TemperatureLadder,
    level: usize,
    x: &T::State,
    reservoir: &Reservoir<T::State>,
    local: &L,
    theta: f64,
    resample_move: ResampleMove,
    rng: &mut R,
) -> Result<StepOutcome<T::State>>
where
    T: EnergyTarget,
    L: LocalKernel<T>,
    R: Rng + ?Sized,
{
    check_adaptive_level(ladder, level)?;
    check_theta(theta)?;
    let u = rng.random::<f64>();
    if u < theta || reservoir.is_empty() {
        return local.step(target, ladder, level, x, rng);
    }
    let y = if reservoir.is_indexed() {
        reservoir.sample_indexed(rng)?.clone()
    } else {
        // A weight that fails to evaluate maps to NaN and is reported by the reservoir.
        let w = |s: &T::State| importance_log_weight(target, ladder, level, s).unwrap_or(f64::NAN);
        reservoir.sample_weighted(w, rng)?.clone()
    };
    resample_then_move(target, ladder, level, y, local, resample_move, rng)
}

/// Limit of the EE move: exchange with an exact draw from `pi^(l-1)`.
pub fn limit_ee_step<T, L, R>(
    target: &T,
    ladder: &TemperatureLadder,
    level: usize,
    x: &T::State,
    local: &L,
    theta: f64,
    rng: &mut R,
) -> Result<StepOutcome<T::State>>
where
    T: EnergyTarget,
    L: LocalKernel<T>,
    R: Rng + ?Sized,
{
    check_adaptive_level(ladder, level)?;
    check_theta(theta)?;
    if !target.has_exact_sampler() {
        return Err(Error::MissingExactSampler);
    }
    let u = rng.random::<f64>();
    if u < theta {
        return local.step(target, ladder, level, x, rng);
    }
    let y = target.sample_tempered(ladder.temperature(level - 1)?, rng)?;
    exchange(target, ladder, level, x, y, rng)
}

/// Limit of the IR move: with probability `1 - theta`, an exact draw from `pi^(l)`.
pub fn limit_ir_step<T, L, R>(
    target: &T,
    ladder: &TemperatureLadder,
    level: usize,
    x: &T::State,
    local: &L,
    theta: f64,
    rng: &mut R,
) -> Result<StepOutcome<T::State>>
where
    T: EnergyTarget,
    L: LocalKernel<T>,
    R: Rng + ?Sized,
{
    let t = ladder.temperature(level)?;
    check_theta(theta)?;
    if !target.has_exact_sampler() {
        return Err(Error::MissingExactSampler);
    }
    let u = rng.random::<f64>();
    if u < theta {
        return local.step(target, ladder, level, x, rng);
    }
    let y = target.sample_tempered(t, rng)?;
    Ok(StepOutcome { next: y, branch: Branch::Resample, accepted: true, log_accept_ratio: None })
}

fn exchange<T, R>(
    target: &T,
    ladder: &TemperatureLadder,
    level: usize,
    x: &T::State,
    y: T::State,
    rng: &mut R,
) -> Result<StepOutcome<T::State>>
where
    T: EnergyTarget,
    R: Rng + ?Sized,
{
    let log_ratio = importance_log_weight(target, ladder, level, &y)? - importance_log_weight(target, ladder, level, x)?;
    let accepted = accept(log_ratio, rng);
    Ok(StepOutcome {
        next: if accepted { y } else { x.clone() },
        branch: Branch::Exchange,
        accepted,
        log_accept_ratio: Some(log_ratio),
    })
}

fn resample_then_move<T, L, R>(
    target: &T,
    ladder: &TemperatureLadder,
    level: usize,
    y: T::State,
    local: &L,
    resample_move: ResampleMove,
    rng: &mut R,
) -> Result<StepOutcome<T::State>>
where
    T: EnergyTarget,
    L: LocalKernel<T>,
    R: Rng + ?Sized,
{
    match resample_move {
        ResampleMove::Identity => {
            Ok(StepOutcome { next: y, branch: Branch::Resample, accepted: true, log_accept_ratio: None })
        }
        ResampleMove::Local => {
            let moved = local.step(target, ladder, level, &y, rng)?;
            Ok(StepOutcome { branch: Branch::Resample, ..moved })
        }
    }
}

/// Lower bound on `theta_l` from the drift condition:
/// `1 / (1 + (1 - lambda) (kappa^{-1} (1/t_l - 1/t_prev) - 1))`.
pub fn theta_lower_bound(lambda: f64, kappa: f64, t_level: f64, t_prev: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::InvalidParameter(format!("lambda = {lambda} must lie in (0, 1)")));
    }
    if !(t_level > 0.0 && t_prev > t_level) {
        return Err(Error::InvalidParameter(format!(
            "temperatures must satisfy t_prev > t_level > 0 (got {t_prev}, {t_level})"
        )));
    }
    let gap = 1.0 / t_level - 1.0 / t_prev;
    if !(kappa > 0.0 && kappa < gap) {
        return Err(Error::KappaTooLarge { kappa, sup: gap });
    }
    Ok(1.0 / (1.0 + (1.0 - lambda) * (gap / kappa - 1.0)))
}

/// Which explicit transition matrix to build on a finite target.
#[derive(Debug, Clone, Copy)]
pub enum FiniteKernelKind<'a> {
    /// The local matrix `P^(l)` itself.
    Base,
    /// `theta P + (1 - theta) R`, `R` the independence Metropolis kernel with
    /// proposal `pi^(l-1)` and target `pi^(l)`.
    EeLimit,
    /// `theta P + (1 - theta) 1 pi^(l)'`.
    IrLimit,
    /// EE move with a fixed measure over states in place of `pi^(l-1)`.
    EeFrozen(&'a [f64]),
    /// IR move with a fixed measure, resampling by `r^(l)` then one step of `P`.
    IrFrozen(&'a [f64]),
}

pub fn check_stochastic(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::InvalidParameter("transition matrix must be square and non-empty".into()));
    }
    for i in 0..m.nrows() {
        let row = m.row(i);
        if row.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::NotStochastic { row: i, sum: row.sum() });
        }
        let sum = row.sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::NotStochastic { row: i, sum });
        }
    }
    Ok(())
}

fn check_measure(mu: &[f64], n: usize) -> Result<()> {
    if mu.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: mu.len() });
    }
    let sum: f64 = mu.iter().sum();
    if mu.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter("frozen measure must be a probability vector".into()));
    }
    Ok(())
}

/// Metropolis matrix for `pi^(level)` from a symmetric proposal matrix.
pub fn metropolis_matrix(
    target: &FiniteTarget,
    ladder: &TemperatureLadder,
    level: usize,
    proposal: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = target.state_count();
    if proposal.nrows() != n {
        return Err(Error::DimensionMismatch { expected: n, found: proposal.nrows() });
    }
    check_stochastic(proposal)?;
    for i in 0..n {
        for j in 0..i {
            if (proposal[(i, j)] - proposal[(j, i)]).abs() > 1e-15 {
                return Err(Error::InvalidParameter(format!("proposal matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    let logp: Vec<f64> = (0..n)
        .map(|x| tempered_log_density(target, ladder, level, &x))
        .collect::<Result<_>>()?;
    let mut m = DMatrix::zeros(n, n);
    for x in 0..n {
        let mut off = 0.0;
        for y in 0..n {
            if y != x {
                let p = proposal[(x, y)] * acceptance_probability(logp[y] - logp[x]);
                m[(x, y)] = p;
                off += p;
            }
        }
        m[(x, x)] = (1.0 - off).max(0.0);
    }
    Ok(m)
}

/// Explicit transition matrix of one kernel on a finite target.
pub fn finite_kernel_matrix(
    kind: FiniteKernelKind<'_>,
    target: &FiniteTarget,
    ladder: &TemperatureLadder,
    level: usize,
    base: &DMatrix<f64>,
    theta: f64,
) -> Result<DMatrix<f64>> {
    let n = target.state_count();
    if base.nrows() != n {
        return Err(Error::DimensionMismatch { expected: n, found: base.nrows() });
    }
    check_stochastic(base)?;
    check_theta(theta)?;
    ladder.temperature(level)?;
    if matches!(kind, FiniteKernelKind::Base) || theta == 1.0 {
        return Ok(base.clone());
    }
    let other = match kind {
        FiniteKernelKind::Base => unreachable!(),
        FiniteKernelKind::EeLimit => {
            check_adaptive_level(ladder, level)?;
            let proposal = target.tempered_probabilities(ladder.temperature(level - 1)?);
            exchange_matrix(target, ladder, level, &proposal)?
        }
        FiniteKernelKind::EeFrozen(mu) => {
            check_adaptive_level(ladder, level)?;
            check_measure(mu, n)?;
            exchange_matrix(target, ladder, level, mu)?
        }
        FiniteKernelKind::IrLimit => {
            let pi = target.tempered_probabilities(ladder.temperature(level)?);
            DMatrix::from_fn(n, n, |_, y| pi[y])
        }
        FiniteKernelKind::IrFrozen(mu) => {
            check_adaptive_level(ladder, level)?;
            check_measure(mu, n)?;
            let logr: Vec<f64> = (0..n)
                .map(|x| importance_log_weight(target, ladder, level, &x))
                .collect::<Result<_>>()?;
            let max = (0..n).filter(|&x| mu[x] > 0.0).map(|x| logr[x]).fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = (0..n).map(|x| if mu[x] > 0.0 { mu[x] * (logr[x] - max).exp() } else { 0.0 }).collect();
            let total: f64 = w.iter().sum();
            let mut law = vec![0.0; n];
            for (y, wy) in w.iter().enumerate() {
                for (z, l) in law.iter_mut().enumerate() {
                    *l += wy / total * base[(y, z)];
                }
            }
            DMatrix::from_fn(n, n, |_, z| law[z])
        }
    };
    Ok(base * theta + other * (1.0 - theta))
}

/// `R(x, y) = proposal(y) min(1, r(y)/r(x))` off the diagonal, rejection mass on it.
fn exchange_matrix(target: &FiniteTarget, ladder: &TemperatureLadder, level: usize, proposal: &[f64]) -> Result<DMatrix<f64>> {
    let n = target.state_count();
    let logr: Vec<f64> = (0..n)
        .map(|x| importance_log_weight(target, ladder, level, &x))
        .collect::<Result<_>>()?;
    let mut m = DMatrix::zeros(n, n);
    for x in 0..n {
        let mut off = 0.0;
        for y in 0..n {
            if y != x {
                let p = proposal[y] * acceptance_probability(logr[y] - logr[x]);
                m[(x, y)] = p;
                off += p;
            }
        }
        m[(x, x)] = (1.0 - off).max(0.0);
    }
    Ok(m)
}
