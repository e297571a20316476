//! Append-only empirical measure of a chain's history.
//!
//! After `n` pushes the reservoir represents `mu_n = (1/n) sum_k delta_{X_k}`,
//! the measure obtained by applying `H_n(mu, x) = mu + (delta_x - mu) / n` from
//! the zero measure. The zero measure is the empty reservoir, which cannot be
//! sampled.

use rand::Rng;

use crate::error::{Error, Result};

/// Past states of one chain, with uniform and importance-weighted draws.
#[derive(Debug, Clone)]
pub struct Reservoir<S> {
    samples: Vec<S>,
    index: Option<WeightIndex>,
}

/// Running prefix sums of `exp(log_w - reference)`, rescaled whenever a new
/// weight climbs too far above the reference.
#[derive(Debug, Clone)]
struct WeightIndex {
    reference: f64,
    cumulative: Vec<f64>,
}

const RESCALE_GAP: f64 = 64.0;

impl WeightIndex {
    fn push(&mut self, log_w: f64) {
        if self.cumulative.is_empty() {
            self.reference = log_w;
        } else if log_w - self.reference > RESCALE_GAP {
            let factor = (self.reference - log_w).exp();
            for c in &mut self.cumulative {
                *c *= factor;
            }
            self.reference = log_w;
        }
        let last = self.cumulative.last().copied().unwrap_or(0.0);
        self.cumulative.push(last + (log_w - self.reference).exp());
    }

    fn draw(&self, u: f64) -> usize {
        let total = *self.cumulative.last().unwrap();
        let target = u * total;
        let k = self.cumulative.partition_point(|&c| c <= target);
        k.min(self.cumulative.len() - 1)
    }
}

impl<S> Default for Reservoir<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S> Reservoir<S> {
    pub fn new() -> Self {
        Self { samples: Vec::new(), index: None }
    }

    /// A reservoir that caches one importance log-weight per stored state so
    /// weighted draws cost `O(log n)`. Fill it with [`Reservoir::push_weighted`].
    pub fn indexed() -> Self {
        Self { samples: Vec::new(), index: Some(WeightIndex { reference: 0.0, cumulative: Vec::new() }) }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_indexed(&self) -> bool {
        self.index.is_some()
    }

    pub fn samples(&self) -> &[S] {
        &self.samples
    }

    /// Appends `x`, i.e. `mu_n = H_n(mu_{n-1}, x)`.
    ///
    /// # Panics
    /// On an indexed reservoir, which needs the weight as well.
    pub fn push(&mut self, x: S) {
        assert!(self.index.is_none(), "indexed reservoirs must be filled with push_weighted");
        self.samples.push(x);
    }

    /// Appends `x` together with its cached importance log-weight.
    pub fn push_weighted(&mut self, x: S, log_weight: f64) -> Result<()> {
        if !log_weight.is_finite() {
            return Err(Error::NonFiniteWeight { index: self.samples.len() });
        }
        match &mut self.index {
            Some(index) => index.push(log_weight),
            None => {
                return Err(Error::InvalidParameter("push_weighted on a reservoir without a weight index".into()))
            }
        }
        self.samples.push(x);
        Ok(())
    }

    /// Each stored sample with probability `1 / len`.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<&S> {
        if self.samples.is_empty() {
            return Err(Error::EmptyReservoir);
        }
        Ok(&self.samples[rng.random_range(0..self.samples.len())])
    }

    /// Sample `k` with probability proportional to `exp(log_weight(X_k))`.
    ///
    /// The normalization is recomputed on every call, shifted by the maximum
    /// log-weight so no term overflows.
    pub fn sample_weighted<R, F>(&self, log_weight: F, rng: &mut R) -> Result<&S>
    where
        R: Rng + ?Sized,
        F: Fn(&S) -> f64,
    {
        if self.samples.is_empty() {
            return Err(Error::EmptyReservoir);
        }
        let mut logs = Vec::with_capacity(self.samples.len());
        let mut max = f64::NEG_INFINITY;
        for (index, x) in self.samples.iter().enumerate() {
            let w = log_weight(x);
            if !w.is_finite() {
                return Err(Error::NonFiniteWeight { index });
            }
            max = max.max(w);
            logs.push(w);
        }
        let mut cumulative = logs;
        let mut total = 0.0;
        for w in &mut cumulative {
            total += (*w - max).exp();
            *w = total;
        }
        let target = rng.random::<f64>() * total;
        let k = cumulative.partition_point(|&c| c <= target).min(self.samples.len() - 1);
        Ok(&self.samples[k])
    }

    /// Weighted draw using the cached weights of an indexed reservoir.
    pub fn sample_indexed<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<&S> {
        let index = self
            .index
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("reservoir has no weight index".into()))?;
        if self.samples.is_empty() {
            return Err(Error::EmptyReservoir);
        }
        Ok(&self.samples[index.draw(rng.random::<f64>())])
    }

    /// `mu_n(f) = (1/n) sum_k f(X_k)`, summed in insertion order. `None` when empty.
    pub fn empirical_mean<F: Fn(&S) -> f64>(&self, f: F) -> Option<f64> {
        if self.samples.is_empty() {
            return None;
        }
        let sum: f64 = self.samples.iter().map(f).sum();
        Some(sum / self.samples.len() as f64)
    }
}

impl Reservoir<usize> {
    /// The empirical measure as a probability vector over `0..states`.
    pub fn empirical_distribution(&self, states: usize) -> Vec<f64> {
        let mut p = vec![0.0; states];
        for &x in &self.samples {
            p[x] += 1.0;
        }
        let n = self.samples.len().max(1) as f64;
        p.iter_mut().for_each(|v| *v /= n);
        p
    }
}
