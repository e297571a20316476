//! Adaptive multi-level Monte Carlo: equi-energy (EE) and importance-resampling
//! (IR) samplers over a temperature ladder, their limit kernels, a random-walk
//! Metropolis baseline, and an exact variance oracle for finite chains.

pub mod analysis;
pub mod config;
pub mod error;
pub mod io;
pub mod kernels;
pub mod ladder;
pub mod reservoir;
pub mod targets;

pub use config::{BuiltSampler, RunConfig};
pub use error::{Error, Result};
pub use kernels::{Branch, MatrixKernel, ResampleMove, RwmKernel, StepOutcome};
pub use ladder::{LadderOptions, Sampler, SamplerKind, Scheme, SingleKind, Trajectory};
pub use reservoir::Reservoir;
pub use targets::{EnergyTarget, FiniteTarget, GaussianTarget, TemperatureLadder};
