use thiserror::Error;

/// Errors surfaced by the simulation and bound-evaluation APIs.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Offspring distribution failed validation.
    #[error("invalid progeny distribution: {0}")]
    InvalidDistribution(String),

    /// A coupling construction requires `p1` to strictly dominate `p2`.
    #[error("dominance violation: {0}")]
    DominanceViolation(String),

    /// No coupling with the requested property exists for these inputs.
    #[error("coupling unavailable: {0}")]
    CouplingUnavailable(String),

    /// Supplied coupling table does not couple the supplied marginals.
    #[error("coupling mismatch: {0}")]
    CouplingMismatch(String),

    /// Operation needs mean offspring > 1.
    #[error("mean offspring {mean} is not supercritical")]
    MeanNotSupercritical { mean: f64 },

    /// A branching-process population exceeded the configured cap.
    #[error("population exceeded cap {cap} at generation {generation}")]
    PopulationOverflow { cap: u64, generation: u32 },

    /// `realize_children` called twice on one vertex.
    #[error("children of vertex {id} already realized")]
    AlreadyRealized { id: u32 },

    /// Interval-table audit found a tiling gap or marginal error.
    #[error("table audit failure at z1={z1} z2={z2} beta={beta} ({detail}), error {err:.3e}")]
    AuditFailure {
        z1: u64,
        z2: u64,
        beta: f64,
        detail: String,
        err: f64,
    },

    /// Walk state violated a structural invariant (defensive check).
    #[error("walk state corrupt: {0}")]
    StateCorrupt(String),

    /// Distribution support dips below the backbone scale `d`.
    #[error("support minimum {min_support} below backbone scale d={d}")]
    MinDegreeViolation { min_support: u64, d: u64 },

    /// A conditioned trajectory failed to produce a confirmed
    /// regeneration within the step horizon.
    #[error("no confirmed regeneration within horizon of {horizon} steps")]
    HorizonExceeded { horizon: u64 },

    /// Escape-probability recursion hit its depth or node budget before
    /// reaching the requested sandwich width.
    #[error("escape recursion exceeded cap (depth {depth}, gap {gap:.3e} > tol {tol:.3e})")]
    DepthCapExceeded { depth: u32, gap: f64, tol: f64 },

    /// Bound series evaluated at a bias where it diverges.
    #[error("series divergent: ratio {ratio} >= 1 at beta={beta}")]
    SeriesDivergent { beta: f64, ratio: f64 },

    /// Threshold ratio has a zero denominator (coupling never separates).
    #[error("degenerate coupling: {0}")]
    DegenerateCoupling(String),
}
