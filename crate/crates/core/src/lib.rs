//! Simulation and numerical-verification toolkit for β-biased random walks
//! on Galton-Watson trees without leaves.
//!
//! The crate is organised around one pipeline:
//!
//! * [`progeny`] — finite-support offspring distributions, stochastic
//!   dominance, and monotone couplings between a dominating pair.
//! * [`tree`] — an arena for lazily grown rooted trees.
//! * [`walk`] — the shared-uniform coupling of two biased walks, one on a
//!   tree per distribution, driven by interval tables over a single
//!   uniform variable per step.
//! * [`regen`] — regeneration-time detection on the backbone walk,
//!   rejection sampling of trajectories conditioned to escape, and
//!   harvesting of i.i.d. regeneration blocks.
//! * [`speed`] — speed estimators: ergodic (trajectory average),
//!   regenerative (block ratio), and the escape-probability formula.
//! * [`thresholds`] — explicit bias thresholds above which the speed gap
//!   between a dominating pair is provably positive, plus numeric
//!   refinements of those bounds.
//!
//! All samplers take a caller-owned RNG; [`rng::derive_stream`] builds
//! statistically independent reproducible streams for parallel tasks.

pub mod error;
pub mod progeny;
pub mod regen;
pub mod rng;
pub mod speed;
pub mod stats;
pub mod thresholds;
pub mod tree;
pub mod walk;

pub use error::Error;
pub use progeny::{MonotoneCoupling, ProgenyDistribution};
pub use speed::SpeedEstimate;
pub use thresholds::ThresholdReport;
pub use tree::{Tree, VertexId};
pub use walk::{BiasParams, IntervalTable};

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
