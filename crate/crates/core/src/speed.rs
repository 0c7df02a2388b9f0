//! Speed estimators for the biased walk on a supercritical random tree
//! without leaves.
//!
//! Four routes to the same number, used to cross-validate each other:
//!
//! * [`speed_ergodic`]: run long walks and average terminal depth over
//!   elapsed steps. Works for any positive bias.
//! * [`speed_regen`]: harvest iid regeneration blocks from a coupled
//!   pair and take per-walk ratio estimators (depth gained over steps
//!   taken). Also reports the per-block depth-gain difference of the
//!   pair, the monotonicity statistic.
//! * [`speed_aidekon`]: an exact ratio of two expectations in the
//!   offspring count and the escape probabilities of independent
//!   subtrees, estimated by Monte Carlo over sandwiched escape values.
//! * [`closed_form_regular`]: `(b*beta - 1)/(b*beta + 1)` for the
//!   deterministic `b`-ary tree.
//!
//! Escape probabilities solve `y = beta*S / (1 + beta*S)` where `S`
//! sums the children's escape values. Evaluating a truncation with
//! boundary value 1 upper-bounds the truth; boundary value
//! `(m*beta - 1)/(m*beta)` with `m` the minimum offspring lower-bounds
//! it (that value is the escape probability of the thinnest possible
//! subtree, and the recursion is monotone in its inputs). Deepening
//! tightens both, so the pair brackets the true value at every depth.

use rand::Rng;
use serde::Serialize;

use crate::error::Error;
use crate::progeny::{MonotoneCoupling, ProgenyDistribution};
use crate::regen::{BlockSampler, SamplerConfig, TailReport};
use crate::rng::unit_draw;
use crate::stats::{RatioMoments, RunningMoments};
use crate::tree::Tree;
use crate::walk::{single_walk_dest, BiasParams, Dest};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SpeedMethod {
    Ergodic,
    Regeneration,
    EscapeRatio,
    ClosedForm,
}

impl SpeedMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            SpeedMethod::Ergodic => "ergodic",
            SpeedMethod::Regeneration => "regen",
            SpeedMethod::EscapeRatio => "escape_ratio",
            SpeedMethod::ClosedForm => "closed_form",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SpeedEstimate {
    pub value: f64,
    /// Statistical standard error, plus any systematic allowance the
    /// method folds in (see [`speed_aidekon`]).
    pub std_error: f64,
    pub method: SpeedMethod,
    /// Walks, blocks or samples behind the estimate.
    pub n: u64,
    pub beta: f64,
    pub distribution: String,
    pub warning: Option<String>,
}

/// Speed on the deterministic `b`-ary tree: `(b*beta - 1)/(b*beta + 1)`.
/// Defined for `b*beta >= 1` (the boundary case is standstill).
pub fn closed_form_regular(b: u64, beta: f64) -> Result<f64> {
    if b == 0 || !beta.is_finite() || beta <= 0.0 {
        return Err(Error::InvalidDistribution(format!(
            "regular tree speed needs b >= 1 and positive beta, got b={b} beta={beta}"
        )));
    }
    let bb = b as f64 * beta;
    if bb < 1.0 {
        return Err(Error::InvalidDistribution(format!(
            "regular tree speed needs b*beta >= 1, got {bb}"
        )));
    }
    Ok((bb - 1.0) / (bb + 1.0))
}

/// Exact speed at unit bias: the offspring expectation of
/// `(z - 1)/(z + 1)`.
pub fn speed_unit_bias_exact(p: &ProgenyDistribution) -> f64 {
    p.atoms()
        .map(|(z, m)| m * (z as f64 - 1.0) / (z as f64 + 1.0))
        .sum()
}

/// Long-run average depth per step over independent walks, each run
/// for `steps` steps from the root of a fresh tree. Any `beta > 0`.
pub fn speed_ergodic<R: Rng + ?Sized>(
    p: &ProgenyDistribution,
    beta: f64,
    walks: u64,
    steps: u64,
    rng: &mut R,
) -> Result<SpeedEstimate> {
    if !beta.is_finite() || beta <= 0.0 {
        return Err(Error::InvalidDistribution(format!(
            "ergodic estimator needs beta > 0, got {beta}"
        )));
    }
    if walks < 2 || steps == 0 {
        return Err(Error::InvalidDistribution(
            "ergodic estimator needs at least 2 walks and 1 step".into(),
        ));
    }
    let mut tree = Tree::new();
    let mut moments = RunningMoments::new();
    for _ in 0..walks {
        tree.reset();
        let mut pos = tree.root();
        for _ in 0..steps {
            if !tree.is_realized(pos) {
                tree.realize_children(pos, p.sample(rng))?;
            }
            let z = tree.child_count(pos).expect("realized above");
            let at_root = tree.depth(pos) == 0;
            pos = match single_walk_dest(z, beta, at_root, unit_draw(rng)) {
                Dest::Parent => tree.parent(pos).expect("parent move off the root"),
                Dest::Child(j) => tree.child(pos, j),
            };
        }
        moments.push(tree.depth(pos) as f64 / steps as f64);
    }
    Ok(SpeedEstimate {
        value: moments.mean(),
        std_error: moments.std_error(),
        method: SpeedMethod::Ergodic,
        n: walks,
        beta,
        distribution: p.to_string(),
        warning: None,
    })
}

/// A random tree addressed by pure hashing: every vertex key
/// deterministically yields its offspring count and its children's
/// keys, so deepening a traversal revisits exactly the same tree.
#[derive(Debug, Clone, Copy)]
pub struct VirtualTree<'a> {
    dist: &'a ProgenyDistribution,
    seed: u64,
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn key_to_unit(x: u64) -> f64 {
    // (0, 1], matching the quantile domain
    ((x >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

impl<'a> VirtualTree<'a> {
    pub fn new(dist: &'a ProgenyDistribution, seed: u64) -> Self {
        Self { dist, seed }
    }

    pub fn root_key(&self) -> u64 {
        splitmix64(self.seed ^ 0xD6E8_FEB8_6659_FD93)
    }

    pub fn progeny(&self, key: u64) -> u64 {
        self.dist
            .quantile(key_to_unit(splitmix64(key ^ 0xA076_1D64_78BD_642F)))
    }

    /// Key of the `j`-th child (1-based).
    pub fn child_key(&self, key: u64, j: u64) -> u64 {
        splitmix64(key ^ 0xE703_7ED1_A0B4_28DB_u64.wrapping_mul(j))
    }
}

/// Budget for the escape recursion.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EscapeCaps {
    pub max_depth: u32,
    /// Total vertex visits across all deepening passes.
    pub max_nodes: u64,
}

impl Default for EscapeCaps {
    fn default() -> Self {
        Self {
            max_depth: 64,
            max_nodes: 50_000_000,
        }
    }
}

/// Sandwich around one tree's escape probability.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EscapeBounds {
    pub lo: f64,
    pub hi: f64,
    /// Truncation depth that produced these bounds.
    pub depth: u32,
    /// Vertex visits spent.
    pub nodes: u64,
}

impl EscapeBounds {
    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn gap(&self) -> f64 {
        self.hi - self.lo
    }
}

fn escape_floor(p: &ProgenyDistribution, beta: f64) -> Result<f64> {
    let m = p.min_support() as f64;
    if !beta.is_finite() || m * beta <= 1.0 {
        return Err(Error::InvalidDistribution(format!(
            "escape recursion needs beta * min_support > 1, got beta={beta} with \
             minimum offspring {m}"
        )));
    }
    Ok((m * beta - 1.0) / (m * beta))
}

fn escape_step(beta: f64, s: f64) -> f64 {
    beta * s / (1.0 + beta * s)
}

/// Bounds at one fixed truncation depth. `budget` counts vertex visits
/// and aborts with `None` when exhausted.
fn bounds_at(
    tree: &VirtualTree,
    beta: f64,
    floor: f64,
    key: u64,
    depth: u32,
    budget: &mut u64,
) -> Option<(f64, f64)> {
    if *budget == 0 {
        return None;
    }
    *budget -= 1;
    if depth == 0 {
        return Some((floor, 1.0));
    }
    let z = tree.progeny(key);
    let mut s_lo = 0.0;
    let mut s_hi = 0.0;
    for j in 1..=z {
        let (lo, hi) = bounds_at(tree, beta, floor, tree.child_key(key, j), depth - 1, budget)?;
        s_lo += lo;
        s_hi += hi;
    }
    Some((escape_step(beta, s_lo), escape_step(beta, s_hi)))
}

/// Escape sandwich at one fixed depth.
pub fn escape_bounds_at(
    tree: &VirtualTree,
    beta: f64,
    depth: u32,
    caps: &EscapeCaps,
) -> Result<EscapeBounds> {
    let floor = escape_floor(tree.dist, beta)?;
    let mut budget = caps.max_nodes;
    match bounds_at(tree, beta, floor, tree.root_key(), depth, &mut budget) {
        Some((lo, hi)) => Ok(EscapeBounds {
            lo,
            hi,
            depth,
            nodes: caps.max_nodes - budget,
        }),
        None => Err(Error::DepthCapExceeded {
            depth,
            gap: f64::INFINITY,
            tol: 0.0,
        }),
    }
}

/// Escape probability of the walk below one virtual tree, sandwiched to
/// width `gap_tol` by adaptive deepening. Point masses collapse to a
/// scalar iteration (the tree is regular), so very tight tolerances are
/// cheap there.
pub fn sample_escape(
    tree: &VirtualTree,
    beta: f64,
    gap_tol: f64,
    caps: &EscapeCaps,
) -> Result<EscapeBounds> {
    assert!(gap_tol > 0.0);
    let floor = escape_floor(tree.dist, beta)?;
    if tree.dist.support().len() == 1 {
        let b = tree.dist.min_support() as f64;
        let mut lo = floor;
        let mut hi = 1.0;
        let mut iters = 0u32;
        while hi - lo > gap_tol {
            if iters >= caps.max_depth.max(256) {
                return Err(Error::DepthCapExceeded {
                    depth: iters,
                    gap: hi - lo,
                    tol: gap_tol,
                });
            }
            lo = escape_step(beta, b * lo);
            hi = escape_step(beta, b * hi);
            iters += 1;
        }
        return Ok(EscapeBounds {
            lo,
            hi,
            depth: iters,
            nodes: iters as u64,
        });
    }
    let mut budget = caps.max_nodes;
    let mut depth = 4u32;
    let mut last_gap = f64::INFINITY;
    loop {
        match bounds_at(tree, beta, floor, tree.root_key(), depth, &mut budget) {
            Some((lo, hi)) => {
                if hi - lo <= gap_tol {
                    return Ok(EscapeBounds {
                        lo,
                        hi,
                        depth,
                        nodes: caps.max_nodes - budget,
                    });
                }
                if depth + 4 > caps.max_depth {
                    return Err(Error::DepthCapExceeded {
                        depth,
                        gap: hi - lo,
                        tol: gap_tol,
                    });
                }
                last_gap = hi - lo;
                depth += 4;
            }
            None => {
                return Err(Error::DepthCapExceeded {
                    depth,
                    gap: last_gap,
                    tol: gap_tol,
                });
            }
        }
    }
}

/// Monte Carlo escape frequency on the same virtual tree: walk from the
/// root until it either pops above the root (failure) or reaches
/// `success_depth` (success; the chance of falling back all the way
/// from there is geometrically negligible). Returns `(p_hat, se)`.
pub fn escape_mc<R: Rng + ?Sized>(
    tree: &VirtualTree,
    beta: f64,
    trials: u64,
    success_depth: u32,
    rng: &mut R,
) -> (f64, f64) {
    let mut escapes = 0u64;
    let mut stack: Vec<u64> = Vec::with_capacity(success_depth as usize);
    for _ in 0..trials {
        stack.clear();
        stack.push(tree.root_key());
        loop {
            if stack.len() >= success_depth as usize {
                escapes += 1;
                break;
            }
            let key = *stack.last().expect("stack nonempty");
            let z = tree.progeny(key);
            match single_walk_dest(z, beta, false, unit_draw(rng)) {
                Dest::Parent => {
                    stack.pop();
                    if stack.is_empty() {
                        break;
                    }
                }
                Dest::Child(j) => stack.push(tree.child_key(key, j)),
            }
        }
    }
    let p = escapes as f64 / trials as f64;
    (p, (p * (1.0 - p) / trials as f64).sqrt())
}

/// Speed as a ratio of two expectations over the offspring count `Z`
/// and `Z + 1` independent subtree escape probabilities `Y_0..Y_Z`:
///
/// ```text
///     E[ (beta Z - 1) Y_0 / (1 - beta + beta (Y_0 + .. + Y_Z)) ]
/// v = -----------------------------------------------------------
///     E[ (beta Z + 1) Y_0 / (1 - beta + beta (Y_0 + .. + Y_Z)) ]
/// ```
///
/// Each escape value is only known to a sandwich of width `gap_tol`;
/// half that width is folded into the reported standard error as a
/// systematic allowance. Requires `beta > 1`.
pub fn speed_aidekon<R: Rng + ?Sized>(
    p: &ProgenyDistribution,
    beta: f64,
    samples: u64,
    gap_tol: f64,
    rng: &mut R,
) -> Result<SpeedEstimate> {
    if !beta.is_finite() || beta <= 1.0 {
        return Err(Error::InvalidDistribution(format!(
            "escape-ratio estimator needs beta > 1, got {beta}"
        )));
    }
    if samples < 2 {
        return Err(Error::InvalidDistribution(
            "escape-ratio estimator needs at least 2 samples".into(),
        ));
    }
    let caps = EscapeCaps::default();
    let mut moments = RatioMoments::new();
    let mut flagged = 0u64;
    for _ in 0..samples {
        let z = p.sample(rng);
        let mut ys = Vec::with_capacity(z as usize + 1);
        for _ in 0..=z {
            let tree = VirtualTree::new(p, rng.random::<u64>());
            ys.push(sample_escape(&tree, beta, gap_tol, &caps)?.mid());
        }
        let sum: f64 = ys.iter().sum();
        let denom = 1.0 - beta + beta * sum;
        if denom.abs() < 1e-12 {
            flagged += 1;
            continue;
        }
        let y0 = ys[0];
        let zf = z as f64;
        moments.push(
            (beta * zf - 1.0) * y0 / denom,
            (beta * zf + 1.0) * y0 / denom,
        );
    }
    if moments.count() < 2 {
        return Err(Error::DegenerateCoupling(
            "all escape-ratio samples were flagged by the denominator guard".into(),
        ));
    }
    Ok(SpeedEstimate {
        value: moments.ratio(),
        std_error: moments.ratio_std_error() + 0.5 * gap_tol,
        method: SpeedMethod::EscapeRatio,
        n: moments.count(),
        beta,
        distribution: p.to_string(),
        warning: (flagged > 0)
            .then(|| format!("{flagged} samples skipped by the denominator floor guard")),
    })
}

/// Output of [`speed_regen`]: per-walk speeds and the per-block
/// depth-gain difference of the coupled pair.
#[derive(Debug, Clone, Serialize)]
pub struct RegenSpeedReport {
    pub speed1: SpeedEstimate,
    pub speed2: SpeedEstimate,
    /// Mean of `gain1 - gain2` over blocks.
    pub gap_mean: f64,
    pub gap_std_error: f64,
    pub mean_duration: f64,
    pub n_blocks: u64,
    /// `(accepted, attempted)` trajectory starts.
    pub acceptance: (u64, u64),
    pub tail: TailReport,
}

/// Ratio estimators `E[depth gain] / E[duration]` per walk over iid
/// regeneration blocks of the coupled pair, plus the gap statistic.
/// Estimating a single distribution's speed this way is the diagonal
/// coupling of the distribution with itself.
pub fn speed_regen<R: Rng + ?Sized>(
    params: BiasParams,
    p1: &ProgenyDistribution,
    p2: &ProgenyDistribution,
    coupling: &MonotoneCoupling,
    n_blocks: u64,
    config: Option<SamplerConfig>,
    rng: &mut R,
) -> Result<RegenSpeedReport> {
    if n_blocks < 2 {
        return Err(Error::InvalidDistribution(
            "regeneration estimator needs at least 2 blocks".into(),
        ));
    }
    let mut sampler = BlockSampler::new(params, p1, p2, coupling)?;
    if let Some(cfg) = config {
        sampler = sampler.with_config(cfg);
    }
    let blocks = sampler.sample_blocks(n_blocks, rng)?;
    let mut r1 = RatioMoments::new();
    let mut r2 = RatioMoments::new();
    let mut gap = RunningMoments::new();
    let mut duration = RunningMoments::new();
    for b in &blocks {
        r1.push(b.gain1 as f64, b.duration as f64);
        r2.push(b.gain2 as f64, b.duration as f64);
        gap.push((b.gain1 - b.gain2) as f64);
        duration.push(b.duration as f64);
    }
    let beta = params.beta();
    let tail = crate::regen::tail_of_b(&blocks, beta);
    let estimate = |r: &RatioMoments, p: &ProgenyDistribution| SpeedEstimate {
        value: r.ratio(),
        std_error: r.ratio_std_error(),
        method: SpeedMethod::Regeneration,
        n: n_blocks,
        beta,
        distribution: p.to_string(),
        warning: None,
    };
    Ok(RegenSpeedReport {
        speed1: estimate(&r1, p1),
        speed2: estimate(&r2, p2),
        gap_mean: gap.mean(),
        gap_std_error: gap.std_error(),
        mean_duration: duration.mean(),
        n_blocks,
        acceptance: sampler.acceptance_counts(),
        tail,
    })
}
