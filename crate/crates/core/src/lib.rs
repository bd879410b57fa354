//! Random walks in one-dimensional i.i.d. random environments.
//!
//! The crate samples environments (plain, conditioned on the left half never
//! reaching a product of odds ratios above one, or reflected), computes
//! quenched moments of hitting times in closed form, simulates the walk and a
//! coupled reflected walk, and estimates heavy-tail and scaling statistics.
//! The [`experiment`] module binds these into reproducible campaigns that the
//! `rwre` binary runs.

pub mod algebra;
pub mod blocks;
pub mod env;
pub mod error;
pub mod experiment;
pub mod ladder;
pub mod law;
pub mod numeric;
pub mod quenched;
pub mod report;
pub mod rng;
pub mod stability;
pub mod stats;
pub mod subseq;
pub mod validate;
pub mod walk;

pub use env::{Environment, LeftMode, SampleOptions};
pub use error::{Error, Result};
pub use ladder::LadderIndex;
pub use law::EnvLaw;
pub use quenched::{CrossingStats, Reflection};
pub use stability::{solve_stability_index, Regime, StabilityReport};
