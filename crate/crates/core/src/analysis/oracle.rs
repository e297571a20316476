//! Exact variance computations on finite chains.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::{check_stochastic, finite_kernel_matrix, metropolis_matrix, FiniteKernelKind};
use crate::targets::{importance_log_weight, FiniteTarget, TemperatureLadder};

/// Relative pivot size below which a linear system is treated as singular.
const PIVOT_TOL: f64 = 1e-13;
const RESIDUAL_TOL: f64 = 1e-10;

/// A row-stochastic matrix together with its stationary vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteChainModel {
    pub matrix: DMatrix<f64>,
    pub stationary: DVector<f64>,
}

impl FiniteChainModel {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let stationary = stationary_distribution(&matrix)?;
        Ok(Self { matrix, stationary })
    }

    /// Uses a known stationary vector after checking it.
    pub fn with_stationary(matrix: DMatrix<f64>, stationary: DVector<f64>) -> Result<Self> {
        check_stochastic(&matrix)?;
        if stationary.len() != matrix.nrows() {
            return Err(Error::DimensionMismatch { expected: matrix.nrows(), found: stationary.len() });
        }
        let residual = stationary_residual(&matrix, &stationary);
        if residual > RESIDUAL_TOL || (stationary.sum() - 1.0).abs() > RESIDUAL_TOL {
            return Err(Error::InvalidParameter(format!("vector is not stationary (residual {residual:e})")));
        }
        Ok(Self { matrix, stationary })
    }

    pub fn state_count(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn mean(&self, f: &DVector<f64>) -> f64 {
        self.stationary.dot(f)
    }

    pub fn center(&self, f: &DVector<f64>) -> DVector<f64> {
        f.add_scalar(-self.mean(f))
    }

    fn check_function(&self, f: &DVector<f64>) -> Result<()> {
        if f.len() != self.state_count() {
            return Err(Error::DimensionMismatch { expected: self.state_count(), found: f.len() });
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("function values must be finite".into()));
        }
        Ok(())
    }
}

/// `max_j |(pi' M - pi')_j|`.
pub fn stationary_residual(m: &DMatrix<f64>, pi: &DVector<f64>) -> f64 {
    (m.tr_mul(pi) - pi).amax()
}

fn solve_checked(a: DMatrix<f64>, b: &DVector<f64>, what: &'static str) -> Result<DVector<f64>> {
    let lu = a.clone().lu();
    let u = lu.u();
    let diag = u.diagonal().map(f64::abs);
    if diag.min() <= PIVOT_TOL * diag.max().max(1.0) {
        return Err(Error::SingularSystem(what));
    }
    let mut x = lu.solve(b).ok_or(Error::SingularSystem(what))?;
    // One round of refinement recovers the last bits lost to pivoting.
    let r = b - &a * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem(what));
    }
    Ok(x)
}

/// Solves `pi' M = pi'`, `sum pi = 1` directly. Reducible chains surface as
/// [`Error::SingularSystem`]; periodicity is not detected.
pub fn stationary_distribution(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_stochastic(m)?;
    let n = m.nrows();
    let mut a = m.transpose() - DMatrix::identity(n, n);
    a.row_mut(n - 1).fill(1.0);
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let pi = solve_checked(a, &b, "stationary distribution")?;
    if pi.iter().any(|&p| p < -1e-12) {
        return Err(Error::SingularSystem("stationary distribution"));
    }
    let residual = stationary_residual(m, &pi);
    if residual > RESIDUAL_TOL {
        return Err(Error::SingularSystem("stationary distribution"));
    }
    Ok(pi)
}

/// Solves `(I - M + 1 pi') U = f`, i.e. `U - MU = f - pi(f)` with `pi(U) = pi(f)`.
pub fn poisson_solve(model: &FiniteChainModel, f: &DVector<f64>) -> Result<DVector<f64>> {
    model.check_function(f)?;
    let n = model.state_count();
    let a = DMatrix::identity(n, n) - &model.matrix + DMatrix::from_fn(n, n, |_, j| model.stationary[j]);
    solve_checked(a, f, "Poisson equation")
}

/// `max |U - MU - (f - pi(f))|`.
pub fn poisson_residual(model: &FiniteChainModel, f: &DVector<f64>, u: &DVector<f64>) -> f64 {
    (u - &model.matrix * u - model.center(f)).amax()
}

/// Asymptotic variance `pi(f_c (2U - f_c))` of `n^{-1/2} sum f(X_k)`.
pub fn asymptotic_variance(model: &FiniteChainModel, f: &DVector<f64>) -> Result<f64> {
    let fc = model.center(f);
    let u = poisson_solve(model, &fc)?;
    Ok(model.stationary.dot(&fc.component_mul(&(u * 2.0 - &fc))))
}

/// `Gamma(f, g) = pi(U_f U_g - (P U_f)(P U_g))` with both inputs centered first.
pub fn gamma_covariance(model: &FiniteChainModel, f: &DVector<f64>, g: &DVector<f64>) -> Result<f64> {
    model.check_function(g)?;
    let uf = poisson_solve(model, &model.center(f))?;
    let ug = poisson_solve(model, &model.center(g))?;
    let pf = &model.matrix * &uf;
    let pg = &model.matrix * &ug;
    Ok(model.stationary.dot(&(uf.component_mul(&ug) - pf.component_mul(&pg))))
}

/// Two adjacent levels on a finite target: the hot chain, the cold local
/// kernel, the importance weights between them and the EE limit kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLevelInstance {
    /// `P^(0)` with `pi^(0)`.
    pub level0: FiniteChainModel,
    /// `P^(1)` with `pi^(1)`.
    pub base1: FiniteChainModel,
    /// `theta P^(1) + (1 - theta) R^(1)`.
    pub limit: FiniteChainModel,
    /// `log r^(1)`, up to a constant.
    pub log_importance: DVector<f64>,
    pub theta: f64,
}

impl TwoLevelInstance {
    /// `pi^(1)` must be proportional to `pi^(0) r`.
    pub fn from_parts(level0: FiniteChainModel, base1: FiniteChainModel, log_importance: DVector<f64>, theta: f64) -> Result<Self> {
        let n = level0.state_count();
        if base1.state_count() != n || log_importance.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: base1.state_count().min(log_importance.len()) });
        }
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::InvalidParameter(format!("theta = {theta} must lie in [0, 1]")));
        }
        let max = log_importance.max();
        let tilted = level0.stationary.zip_map(&log_importance, |p, lr| p * (lr - max).exp());
        let tilted = &tilted / tilted.sum();
        if (tilted - &base1.stationary).amax() > 1e-10 {
            return Err(Error::InvalidParameter("pi^(1) is not proportional to pi^(0) r".into()));
        }
        let r = exchange_operator(&level0.stationary, &log_importance);
        let matrix = &base1.matrix * theta + r * (1.0 - theta);
        let limit = FiniteChainModel::with_stationary(matrix, base1.stationary.clone())?;
        Ok(Self { level0, base1, limit, log_importance, theta })
    }

    /// Levels 0 and 1 of a two-level ladder with Metropolis local moves built
    /// from a symmetric proposal matrix; theta is the ladder's.
    pub fn from_target(target: &FiniteTarget, ladder: &TemperatureLadder, proposal: &DMatrix<f64>) -> Result<Self> {
        if ladder.levels() != 2 {
            return Err(Error::InvalidLadder(format!(
                "a two-level instance needs exactly 2 temperatures, found {}",
                ladder.levels()
            )));
        }
        let p0 = metropolis_matrix(target, ladder, 0, proposal)?;
        let p1 = metropolis_matrix(target, ladder, 1, proposal)?;
        let pi0 = DVector::from_vec(target.tempered_probabilities(ladder.temperature(0)?));
        let pi1 = DVector::from_vec(target.tempered_probabilities(ladder.temperature(1)?));
        let level0 = FiniteChainModel::with_stationary(p0, pi0)?;
        let base1 = FiniteChainModel::with_stationary(p1, pi1)?;
        let logr = (0..target.state_count())
            .map(|x| importance_log_weight(target, ladder, 1, &x))
            .collect::<Result<Vec<_>>>()?;
        let theta = ladder.theta(1)?;
        let instance = Self::from_parts(level0, base1, DVector::from_vec(logr), theta)?;
        debug_assert!({
            let k = finite_kernel_matrix(FiniteKernelKind::EeLimit, target, ladder, 1, &instance.base1.matrix, theta)?;
            (k - &instance.limit.matrix).amax() < 1e-14
        });
        Ok(instance)
    }

    /// `P^(0) = P^(1)` and `pi^(0) = pi^(1)`.
    pub fn is_shared_level_case(&self) -> bool {
        (&self.level0.matrix - &self.base1.matrix).amax() <= 1e-12
            && (&self.level0.stationary - &self.base1.stationary).amax() <= 1e-12
    }
}

/// `R(x, y) = pi0(y) min(1, r(y)/r(x))` off the diagonal.
fn exchange_operator(pi0: &DVector<f64>, logr: &DVector<f64>) -> DMatrix<f64> {
    let n = pi0.len();
    let mut m = DMatrix::from_fn(n, n, |x, y| if x == y { 0.0 } else { pi0[y] * accept(logr[y] - logr[x]) });
    for x in 0..n {
        let off = m.row(x).sum();
        m[(x, x)] = (1.0 - off).max(0.0);
    }
    m
}

fn accept(log_ratio: f64) -> f64 {
    if log_ratio >= 0.0 {
        1.0
    } else {
        log_ratio.exp()
    }
}

/// `H[(x, y)] = H_x(y) = T(y, x, U) - sum_y' pi0(y') T(y', x, U)` where
/// `T(y, x, U) = a U(y) + (1 - a) U(x)`, `a = min(1, r(y)/r(x))` and `U`
/// solves the Poisson equation of the limit kernel for `f`.
pub fn ee_h_function(instance: &TwoLevelInstance, f: &DVector<f64>) -> Result<DMatrix<f64>> {
    let limit = &instance.limit;
    let u = poisson_solve(limit, &limit.center(f))?;
    let logr = &instance.log_importance;
    let n = limit.state_count();
    let t = DMatrix::from_fn(n, n, |x, y| {
        let a = accept(logr[y] - logr[x]);
        a * u[y] + (1.0 - a) * u[x]
    });
    let pi0 = &instance.level0.stationary;
    let avg = &t * pi0;
    Ok(DMatrix::from_fn(n, n, |x, y| t[(x, y)] - avg[x]))
}

/// `g(y) = sum_x pi1(x) H_x(y)`.
pub fn ee_gbar(instance: &TwoLevelInstance, h: &DMatrix<f64>) -> DVector<f64> {
    h.tr_mul(&instance.base1.stationary)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceReport {
    pub theta: f64,
    /// Asymptotic variance of `f` under the limit kernel.
    pub sigma_star_sq: f64,
    /// `Gamma(g, g)` under the hot chain.
    pub gamma_gbar: f64,
    /// `sigma_star_sq + 4 (1 - theta)^2 gamma_gbar`.
    pub clt_variance: f64,
    /// `sigma_star_sq + 2 (1 - theta)^2 gamma_gbar`, defined only when both
    /// levels share kernel and stationary law.
    pub second_moment_limit: Option<f64>,
}

pub fn ee_limit_clt_variance(instance: &TwoLevelInstance, f: &DVector<f64>) -> Result<VarianceReport> {
    let sigma_star_sq = asymptotic_variance(&instance.limit, f)?;
    let h = ee_h_function(instance, f)?;
    let gbar = ee_gbar(instance, &h);
    let gamma_gbar = gamma_covariance(&instance.level0, &gbar, &gbar)?;
    let c = (1.0 - instance.theta).powi(2) * gamma_gbar;
    Ok(VarianceReport {
        theta: instance.theta,
        sigma_star_sq,
        gamma_gbar,
        clt_variance: sigma_star_sq + 4.0 * c,
        second_moment_limit: instance.is_shared_level_case().then_some(sigma_star_sq + 2.0 * c),
    })
}
