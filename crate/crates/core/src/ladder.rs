//! The multi-level driver: `K + 1` coupled chains advanced in lockstep.
//!
//! At iteration `n`, level 0 takes a local step, then every level `l >= 1`
//! takes its adaptive step reading the level `l - 1` reservoir as it stood
//! after iteration `n - 1`. Only once every level has moved are the new states
//! `X_n^(0..K-1)` pushed into the reservoirs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{
    ee_adaptive_step, ir_adaptive_step, limit_ee_step, limit_ir_step, Branch, LocalKernel, ResampleMove, StepOutcome,
};
use crate::reservoir::Reservoir;
use crate::targets::{importance_log_weight, EnergyTarget, TemperatureLadder};

/// Adaptive scheme used on levels `1..=K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Ee,
    Ir,
}

/// The five samplers compared by the MSE harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Rwm,
    Ir,
    IrLimit,
    Ee,
    EeLimit,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 5] =
        [SamplerKind::Rwm, SamplerKind::Ir, SamplerKind::IrLimit, SamplerKind::Ee, SamplerKind::EeLimit];

    pub fn as_str(self) -> &'static str {
        match self {
            SamplerKind::Rwm => "rwm",
            SamplerKind::Ir => "ir",
            SamplerKind::IrLimit => "ir_limit",
            SamplerKind::Ee => "ee",
            SamplerKind::EeLimit => "ee_limit",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SamplerKind::Rwm => "RWM",
            SamplerKind::Ir => "IR-MCMC",
            SamplerKind::IrLimit => "Limit IR-MCMC",
            SamplerKind::Ee => "EE",
            SamplerKind::EeLimit => "Limit EE",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    pub fn needs_exact_sampler(self) -> bool {
        matches!(self, SamplerKind::EeLimit | SamplerKind::IrLimit)
    }
}

/// Single-chain kernels run at one fixed level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SingleKind {
    Rwm,
    EeLimit,
    IrLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LadderOptions {
    pub resample_move: ResampleMove,
    /// Push the initial states `X_0` into the reservoirs before iteration 1.
    pub include_initial_state: bool,
}

/// Random stream of one level: ChaCha8 keyed by the master seed, with the
/// level index as stream id. Adding levels never perturbs existing streams.
pub fn level_stream(seed: u64, level: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(level as u64);
    rng
}

/// Master seed of replication `index`: SplitMix64 of `seed + index * golden`.
pub fn replication_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Joint state of the ladder after `iteration` steps.
#[derive(Debug, Clone)]
pub struct LadderState<S> {
    pub states: Vec<S>,
    pub reservoirs: Vec<Reservoir<S>>,
    pub iteration: usize,
    scheme: Scheme,
    rngs: Vec<ChaCha8Rng>,
}

impl<S> LadderState<S> {
    pub fn scheme(&self) -> Scheme {
        self.scheme
    }
}

/// Per-level record of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelTrace<S> {
    pub level: usize,
    pub temperature: f64,
    pub states: Vec<S>,
    pub branches: Vec<Branch>,
    pub accepted: Vec<bool>,
}

impl<S> LevelTrace<S> {
    fn new(level: usize, temperature: f64, capacity: usize) -> Self {
        Self {
            level,
            temperature,
            states: Vec::with_capacity(capacity),
            branches: Vec::with_capacity(capacity),
            accepted: Vec::with_capacity(capacity),
        }
    }

    fn record(&mut self, out: &StepOutcome<S>)
    where
        S: Clone,
    {
        self.states.push(out.next.clone());
        self.branches.push(out.branch);
        self.accepted.push(out.accepted);
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.accepted.is_empty() {
            return 0.0;
        }
        self.accepted.iter().filter(|&&a| a).count() as f64 / self.accepted.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S> {
    pub kind: SamplerKind,
    pub seed: u64,
    /// States `X_1..X_n` per level; `X_0` is not recorded.
    pub levels: Vec<LevelTrace<S>>,
}

impl<S> Trajectory<S> {
    pub fn iterations(&self) -> usize {
        self.levels.first().map_or(0, |l| l.len())
    }

    /// Trace of the coldest simulated level.
    pub fn coldest(&self) -> &LevelTrace<S> {
        self.levels.last().expect("trajectory has at least one level")
    }
}

/// A target, its ladder and the local kernels, ready to run.
#[derive(Debug, Clone)]
pub struct Sampler<T, L> {
    pub target: T,
    pub ladder: TemperatureLadder,
    pub local: L,
    pub options: LadderOptions,
}

impl<T, L> Sampler<T, L>
where
    T: EnergyTarget,
    L: LocalKernel<T>,
{
    pub fn new(target: T, ladder: TemperatureLadder, local: L) -> Self {
        Self { target, ladder, local, options: LadderOptions::default() }
    }

    pub fn with_options(mut self, options: LadderOptions) -> Self {
        self.options = options;
        self
    }

    /// Every level starts at the target's default initial state.
    pub fn init_state(&self, scheme: Scheme, seed: u64) -> Result<LadderState<T::State>> {
        let initial = vec![self.target.initial_state(); self.ladder.levels()];
        self.init_state_from(scheme, seed, initial)
    }

    pub fn init_state_from(&self, scheme: Scheme, seed: u64, initial: Vec<T::State>) -> Result<LadderState<T::State>> {
        let levels = self.ladder.levels();
        if initial.len() != levels {
            return Err(Error::InvalidParameter(format!(
                "expected {levels} initial states, found {}",
                initial.len()
            )));
        }
        for x in &initial {
            self.target.validate_state(x)?;
        }
        let mut reservoirs: Vec<Reservoir<T::State>> = (0..levels.saturating_sub(1))
            .map(|_| match scheme {
                Scheme::Ee => Reservoir::new(),
                Scheme::Ir => Reservoir::indexed(),
            })
            .collect();
        if self.options.include_initial_state {
            for (l, r) in reservoirs.iter_mut().enumerate() {
                self.push(r, scheme, l, initial[l].clone())?;
            }
        }
        Ok(LadderState {
            states: initial,
            reservoirs,
            iteration: 0,
            scheme,
            rngs: (0..levels).map(|l| level_stream(seed, l)).collect(),
        })
    }

    fn push(&self, reservoir: &mut Reservoir<T::State>, scheme: Scheme, level: usize, x: T::State) -> Result<()> {
        match scheme {
            Scheme::Ee => {
                reservoir.push(x);
                Ok(())
            }
            Scheme::Ir => {
                let w = importance_log_weight(&self.target, &self.ladder, level + 1, &x)?;
                reservoir.push_weighted(x, w)
            }
        }
    }

    /// Advances every level by one iteration and returns the per-level outcomes.
    pub fn ladder_step(&self, state: &mut LadderState<T::State>) -> Result<Vec<StepOutcome<T::State>>> {
        let levels = self.ladder.levels();
        let offset = self.options.include_initial_state as usize;
        let mut outcomes = Vec::with_capacity(levels);
        let (target, ladder) = (&self.target, &self.ladder);
        {
            let LadderState { states, reservoirs, rngs, iteration, scheme } = state;
            debug_assert!(reservoirs.iter().all(|r| r.len() == *iteration + offset));
            outcomes.push(self.local.step(target, ladder, 0, &states[0], &mut rngs[0])?);
            for l in 1..levels {
                let theta = ladder.theta(l)?;
                let rng = &mut rngs[l];
                let out = match scheme {
                    Scheme::Ee => ee_adaptive_step(target, ladder, l, &states[l], &reservoirs[l - 1], &self.local, theta, rng)?,
                    Scheme::Ir => ir_adaptive_step(
                        target,
                        ladder,
                        l,
                        &states[l],
                        &reservoirs[l - 1],
                        &self.local,
                        theta,
                        self.options.resample_move,
                        rng,
                    )?,
                };
                outcomes.push(out);
            }
        }
        for (l, out) in outcomes.iter().enumerate() {
            state.states[l] = out.next.clone();
        }
        for l in 0..levels.saturating_sub(1) {
            let x = outcomes[l].next.clone();
            self.push(&mut state.reservoirs[l], state.scheme, l, x)?;
        }
        state.iteration += 1;
        Ok(outcomes)
    }

    /// Runs the ladder, handing each iteration's outcomes to `observe`.
    pub fn run_ladder_with<F>(&self, scheme: Scheme, iterations: usize, seed: u64, mut observe: F) -> Result<LadderState<T::State>>
    where
        F: FnMut(usize, &[StepOutcome<T::State>]),
    {
        if iterations == 0 {
            return Err(Error::InvalidParameter("iterations must be at least 1".into()));
        }
        let mut state = self.init_state(scheme, seed)?;
        for n in 1..=iterations {
            let outcomes = self.ladder_step(&mut state)?;
            observe(n, &outcomes);
        }
        Ok(state)
    }

    pub fn run_ladder(&self, scheme: Scheme, iterations: usize, seed: u64) -> Result<Trajectory<T::State>> {
        let mut levels: Vec<LevelTrace<T::State>> = self
            .ladder
            .temperatures()
            .iter()
            .enumerate()
            .map(|(l, &t)| LevelTrace::new(l, t, iterations))
            .collect();
        self.run_ladder_with(scheme, iterations, seed, |_, outcomes| {
            for (trace, out) in levels.iter_mut().zip(outcomes) {
                trace.record(out);
            }
        })?;
        let kind = match scheme {
            Scheme::Ee => SamplerKind::Ee,
            Scheme::Ir => SamplerKind::Ir,
        };
        Ok(Trajectory { kind, seed, levels })
    }

    /// One chain at `level` driven by `kind`, using the random stream of that level.
    pub fn run_single_with<F>(
        &self,
        kind: SingleKind,
        level: usize,
        theta: f64,
        iterations: usize,
        seed: u64,
        mut observe: F,
    ) -> Result<T::State>
    where
        F: FnMut(usize, &StepOutcome<T::State>),
    {
        if iterations == 0 {
            return Err(Error::InvalidParameter("iterations must be at least 1".into()));
        }
        self.ladder.temperature(level)?;
        if kind != SingleKind::Rwm && !self.target.has_exact_sampler() {
            return Err(Error::MissingExactSampler);
        }
        let mut rng = level_stream(seed, level);
        let mut x = self.target.initial_state();
        let (target, ladder, local) = (&self.target, &self.ladder, &self.local);
        for n in 1..=iterations {
            let out = match kind {
                SingleKind::Rwm => local.step(target, ladder, level, &x, &mut rng)?,
                SingleKind::EeLimit => limit_ee_step(target, ladder, level, &x, local, theta, &mut rng)?,
                SingleKind::IrLimit => limit_ir_step(target, ladder, level, &x, local, theta, &mut rng)?,
            };
            observe(n, &out);
            x = out.next;
        }
        Ok(x)
    }

    pub fn run_single(
        &self,
        kind: SingleKind,
        level: usize,
        theta: f64,
        iterations: usize,
        seed: u64,
    ) -> Result<Trajectory<T::State>> {
        let mut trace = LevelTrace::new(level, self.ladder.temperature(level)?, iterations);
        self.run_single_with(kind, level, theta, iterations, seed, |_, out| trace.record(out))?;
        let kind = match kind {
            SingleKind::Rwm => SamplerKind::Rwm,
            SingleKind::EeLimit => SamplerKind::EeLimit,
            SingleKind::IrLimit => SamplerKind::IrLimit,
        };
        Ok(Trajectory { kind, seed, levels: vec![trace] })
    }

    /// Theta of the coldest level, or 1 for a single-level ladder.
    pub fn coldest_theta(&self) -> f64 {
        let k = self.ladder.coldest();
        if k == 0 {
            1.0
        } else {
            self.ladder.thetas()[k - 1]
        }
    }

    /// Runs any of the five samplers; single-chain kinds run at the coldest level.
    pub fn run(&self, kind: SamplerKind, iterations: usize, seed: u64) -> Result<Trajectory<T::State>> {
        let k = self.ladder.coldest();
        match kind {
            SamplerKind::Ee => self.run_ladder(Scheme::Ee, iterations, seed),
            SamplerKind::Ir => self.run_ladder(Scheme::Ir, iterations, seed),
            SamplerKind::Rwm => self.run_single(SingleKind::Rwm, k, 1.0, iterations, seed),
            SamplerKind::EeLimit => self.run_single(SingleKind::EeLimit, k, self.coldest_theta(), iterations, seed),
            SamplerKind::IrLimit => self.run_single(SingleKind::IrLimit, k, self.coldest_theta(), iterations, seed),
        }
    }

    /// Streams the coldest-level outcome of each iteration of any sampler to `observe`.
    pub fn run_coldest_with<F>(&self, kind: SamplerKind, iterations: usize, seed: u64, mut observe: F) -> Result<()>
    where
        F: FnMut(usize, &StepOutcome<T::State>),
    {
        let k = self.ladder.coldest();
        let theta = self.coldest_theta();
        match kind {
            SamplerKind::Ee | SamplerKind::Ir => {
                let scheme = if kind == SamplerKind::Ee { Scheme::Ee } else { Scheme::Ir };
                self.run_ladder_with(scheme, iterations, seed, |n, outs| observe(n, &outs[k]))?;
            }
            SamplerKind::Rwm => {
                self.run_single_with(SingleKind::Rwm, k, 1.0, iterations, seed, observe)?;
            }
            SamplerKind::EeLimit => {
                self.run_single_with(SingleKind::EeLimit, k, theta, iterations, seed, observe)?;
            }
            SamplerKind::IrLimit => {
                self.run_single_with(SingleKind::IrLimit, k, theta, iterations, seed, observe)?;
            }
        }
        Ok(())
    }
}
