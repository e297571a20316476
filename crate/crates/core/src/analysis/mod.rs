//! Exact finite-chain variance oracle and simulation-side estimators.

mod estimators;
mod harness;
mod oracle;

pub use estimators::{batch_means_variance, mean_with_se, sample_variance_with_se, BatchMeans, MIN_BATCH_LEN};
pub use harness::{
    ee_second_moment_simulation, ergodic_averages, gaussian_moment_estimands, mse_harness, Estimand, HarnessOptions,
    MseRow, MseTable, SecondMomentCheck,
};
pub use oracle::{
    asymptotic_variance, ee_gbar, ee_h_function, ee_limit_clt_variance, gamma_covariance, poisson_residual,
    poisson_solve, stationary_distribution, stationary_residual, FiniteChainModel, TwoLevelInstance, VarianceReport,
};
