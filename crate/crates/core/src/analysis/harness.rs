//! Replication harnesses: the MSE table and the replicated second-moment check.

use rayon::prelude::*;

use crate::analysis::estimators::sample_variance_with_se;
use crate::error::{Error, Result};
use crate::kernels::LocalKernel;
use crate::ladder::{replication_seed, SamplerKind, Sampler};
use crate::targets::EnergyTarget;

/// A function of the state whose stationary expectation is known.
pub struct Estimand<S> {
    pub name: String,
    pub truth: f64,
    pub function: Box<dyn Fn(&S) -> f64 + Send + Sync>,
}

impl<S> Estimand<S> {
    pub fn new(name: impl Into<String>, truth: f64, function: impl Fn(&S) -> f64 + Send + Sync + 'static) -> Self {
        Self { name: name.into(), truth, function: Box::new(function) }
    }
}

impl<S> std::fmt::Debug for Estimand<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Estimand").field("name", &self.name).field("truth", &self.truth).finish()
    }
}

/// First and second coordinate moments of a zero-mean Gaussian with the
/// given covariance diagonal.
pub fn gaussian_moment_estimands(variances: &[f64]) -> Vec<Estimand<Vec<f64>>> {
    let mut out: Vec<Estimand<Vec<f64>>> = (0..variances.len())
        .map(|i| Estimand::new(format!("E X{}", i + 1), 0.0, move |x: &Vec<f64>| x[i]))
        .collect();
    out.extend(
        variances
            .iter()
            .enumerate()
            .map(|(i, &v)| Estimand::new(format!("E X{}^2", i + 1), v, move |x: &Vec<f64>| x[i] * x[i])),
    );
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HarnessOptions {
    pub replications: usize,
    /// Steps averaged per replication, after `burn_in` discarded steps.
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Worker cap; `None` uses every available core. Results do not depend on it.
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MseRow {
    pub kind: SamplerKind,
    pub mse: Vec<f64>,
    /// Replication standard error of each MSE.
    pub mse_se: Vec<f64>,
    /// Baseline MSE over this row's MSE.
    pub ratio: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MseTable {
    pub estimands: Vec<String>,
    pub truths: Vec<f64>,
    /// The first row is the baseline.
    pub rows: Vec<MseRow>,
    pub options: HarnessOptions,
}

impl MseTable {
    /// One replication gives no error estimate, so ratios carry no information.
    pub fn reliable(&self) -> bool {
        self.options.replications > 1
    }

    pub fn row(&self, kind: SamplerKind) -> Option<&MseRow> {
        self.rows.iter().find(|r| r.kind == kind)
    }
}

pub(crate) fn in_pool<R: Send>(jobs: Option<usize>, work: impl FnOnce() -> R + Send) -> Result<R> {
    match jobs {
        None => Ok(work()),
        Some(0) => Err(Error::InvalidParameter("jobs must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidParameter(e.to_string()))?;
            Ok(pool.install(work))
        }
    }
}

/// Ergodic averages at the coldest level after burn-in, one per estimand.
pub fn ergodic_averages<T, L>(
    sampler: &Sampler<T, L>,
    kind: SamplerKind,
    estimands: &[Estimand<T::State>],
    iterations: usize,
    burn_in: usize,
    seed: u64,
) -> Result<Vec<f64>>
where
    T: EnergyTarget,
    L: LocalKernel<T>,
{
    if iterations == 0 {
        return Err(Error::InvalidParameter("iterations must be at least 1".into()));
    }
    let mut sums = vec![0.0; estimands.len()];
    sampler.run_coldest_with(kind, burn_in + iterations, seed, |n, out| {
        if n > burn_in {
            for (s, e) in sums.iter_mut().zip(estimands) {
                *s += (e.function)(&out.next);
            }
        }
    })?;
    Ok(sums.into_iter().map(|s| s / iterations as f64).collect())
}

/// Runs every sampler kind for `replications` independent seeds and tabulates
/// the MSE of each estimand against its truth. Replication `r` of every kind
/// uses master seed `replication_seed(seed, r)`.
pub fn mse_harness<T, L>(
    sampler: &Sampler<T, L>,
    kinds: &[SamplerKind],
    estimands: &[Estimand<T::State>],
    options: HarnessOptions,
) -> Result<MseTable>
where
    T: EnergyTarget,
    L: LocalKernel<T>,
{
    if kinds.is_empty() || estimands.is_empty() {
        return Err(Error::InvalidParameter("the harness needs at least one sampler and one estimand".into()));
    }
    if options.replications == 0 {
        return Err(Error::InvalidParameter("replications must be at least 1".into()));
    }
    let reps = options.replications;
    let averages: Vec<Vec<f64>> = in_pool(options.jobs, || {
        (0..kinds.len() * reps)
            .into_par_iter()
            .map(|task| {
                let (k, r) = (task / reps, task % reps);
                let seed = replication_seed(options.seed, r as u64);
                ergodic_averages(sampler, kinds[k], estimands, options.iterations, options.burn_in, seed)
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let mut rows: Vec<MseRow> = kinds
        .iter()
        .enumerate()
        .map(|(k, &kind)| {
            let (mse, mse_se) = estimands
                .iter()
                .enumerate()
                .map(|(e, est)| {
                    let sq: Vec<f64> = (0..reps).map(|r| (averages[k * reps + r][e] - est.truth).powi(2)).collect();
                    let mse = sq.iter().sum::<f64>() / reps as f64;
                    let (var, _) = sample_variance_with_se(&sq);
                    (mse, if reps > 1 { (var / reps as f64).sqrt() } else { f64::NAN })
                })
                .unzip();
            MseRow { kind, mse, mse_se, ratio: Vec::new() }
        })
        .collect();
    let baseline = rows[0].mse.clone();
    for row in &mut rows {
        row.ratio = baseline.iter().zip(&row.mse).map(|(b, m)| b / m).collect();
    }
    Ok(MseTable {
        estimands: estimands.iter().map(|e| e.name.clone()).collect(),
        truths: estimands.iter().map(|e| e.truth).collect(),
        rows,
        options,
    })
}

/// Spread of `n^{-1/2} S_n` over independent adaptive EE runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecondMomentCheck {
    pub variance: f64,
    pub standard_error: f64,
    pub mean: f64,
    pub replications: usize,
    pub steps: usize,
}

/// Replicates the EE ladder and returns the sample variance of
/// `n^{-1/2} sum_k (f(X_k) - center)` at the coldest level.
pub fn ee_second_moment_simulation<T, L, F>(
    sampler: &Sampler<T, L>,
    f: F,
    center: f64,
    replications: usize,
    steps: usize,
    seed: u64,
    jobs: Option<usize>,
) -> Result<SecondMomentCheck>
where
    T: EnergyTarget,
    L: LocalKernel<T>,
    F: Fn(&T::State) -> f64 + Sync,
{
    if replications < 2 {
        return Err(Error::InvalidParameter("the cross-check needs at least 2 replications".into()));
    }
    let z: Vec<f64> = in_pool(jobs, || {
        (0..replications)
            .into_par_iter()
            .map(|r| {
                let mut s = 0.0;
                sampler.run_coldest_with(SamplerKind::Ee, steps, replication_seed(seed, r as u64), |_, out| {
                    s += f(&out.next) - center;
                })?;
                Ok(s / (steps as f64).sqrt())
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let (variance, standard_error) = sample_variance_with_se(&z);
    Ok(SecondMomentCheck {
        variance,
        standard_error,
        mean: z.iter().sum::<f64>() / replications as f64,
        replications,
        steps,
    })
}
