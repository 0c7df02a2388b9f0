//! The shared-uniform coupling of two biased tree walks.
//!
//! One uniform `U` per time step drives three walks at once: a backbone
//! walk `Y` on the non-negative integers that ascends iff
//! `U > 1/(d*beta+1)`, and a biased walk on each of the two trees. Every
//! transition law is laid out as a table of disjoint `U`-bands over
//! `(0, 1]`; because both tree walks read the same `U`, their moves are
//! maximally aligned while each still follows its own marginal law
//! (parent with probability `1/(Z*beta+1)`, each child `beta/(Z*beta+1)`).
//!
//! Band layout, for child counts `z1 >= z2` at the two current sites,
//! with split point `s = 1/(d*beta+1)`, `a_i = 1/(z_i*beta+1)` and the
//! slice widths of [`Etas`]:
//!
//! * forward region `(s, 1]`: walk 1 descends through `z1` bands of
//!   width `eta1` (child order `z1+1-i`); walk 2 first through `z2`
//!   bands of `eta2`, then `z2` bands of `eta1` (child order `z2+1-i`
//!   both times).
//! * backward region `[0, s]`, case `eta3 >= eta4`: walk 1 takes parent
//!   on `[0, a1]` then `z1` bands of `eta4`; walk 2 takes parent on
//!   `[0, a2]`, then `z2` bands of `eta5`, then `z2` bands of `eta4`.
//! * backward region, case `eta3 < eta4`: walk 1 takes parent on
//!   `[0, a1]`, then `z1-z2` bands of `eta4`, then `z2` bands of `eta5`
//!   (this block ends exactly at `a2`), then `z2` bands of `eta3`;
//!   walk 2 takes parent on `[0, a2]` then `z2` bands of `eta3`.
//! * `z1 < z2`: no alignment is attempted; each walk uses its
//!   single-walk table (parent band, then children in natural order).
//!
//! The first band of a table is closed at 0, all others are `(lo, hi]`,
//! and the driving uniform lives in `(0, 1]`.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::Serialize;

use crate::error::Error;
use crate::progeny::{MonotoneCoupling, ProgenyDistribution};
use crate::tree::{Tree, VertexId};
use crate::Result;
use rand::Rng;

/// Tiling tolerance for the float audit.
pub const TILING_TOL: f64 = 1e-14;
/// Per-destination marginal tolerance for the float audit.
pub const MARGINAL_TOL: f64 = 1e-12;

/// Bias and backbone scale. `beta > 1` is required by the coupled
/// construction (the backbone must be transient); `d >= 1` scales the
/// backbone threshold to `1/(d*beta+1)` for walks on trees whose
/// offspring never falls below `d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BiasParams {
    beta: f64,
    d: u64,
}

impl BiasParams {
    pub fn new(beta: f64) -> Result<Self> {
        Self::with_scale(beta, 1)
    }

    pub fn with_scale(beta: f64, d: u64) -> Result<Self> {
        if !beta.is_finite() || beta <= 1.0 {
            return Err(Error::InvalidDistribution(format!(
                "bias beta must be finite and > 1, got {beta}"
            )));
        }
        if d == 0 {
            return Err(Error::InvalidDistribution(
                "backbone scale d must be >= 1".into(),
            ));
        }
        Ok(Self { beta, d })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn scale(&self) -> u64 {
        self.d
    }

    /// Backbone back-step threshold `1/(d*beta+1)`.
    pub fn split(&self) -> f64 {
        1.0 / (self.d as f64 * self.beta + 1.0)
    }

    /// Probability that the backbone never returns to its start once
    /// forced up: `(d*beta - 1)/(d*beta)`.
    pub fn escape_probability(&self) -> f64 {
        let db = self.d as f64 * self.beta;
        (db - 1.0) / db
    }
}

/// Destination of one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Dest {
    Parent,
    /// 1-based child index.
    Child(u64),
}

/// Which construction region/case a step's uniform fell into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BandClass {
    /// Forward region, aligned tables (`z1 >= z2`).
    Forward,
    /// Backward region, `eta3 >= eta4` layout.
    BackwardA,
    /// Backward region, `eta3 < eta4` layout.
    BackwardB,
    /// Independent single-walk tables (`z1 < z2`), forward side.
    FallbackForward,
    /// Independent single-walk tables (`z1 < z2`), backward side.
    FallbackBackward,
}

impl BandClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            BandClass::Forward => "fwd",
            BandClass::BackwardA => "bwd_a",
            BandClass::BackwardB => "bwd_b",
            BandClass::FallbackForward => "ind_fwd",
            BandClass::FallbackBackward => "ind_bwd",
        }
    }
}

/// One `U`-band. The first band of a table is closed at its left end;
/// all others are half-open `(lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
    pub dest: Dest,
}

/// Transition law of one walk at one site, materialized as bands.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalTable {
    bands: Vec<Band>,
}

impl IntervalTable {
    fn from_bands(bands: Vec<Band>) -> Self {
        debug_assert!(!bands.is_empty());
        Self { bands }
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    /// Destination for `u` in `(0, 1]`.
    pub fn lookup(&self, u: f64) -> Dest {
        debug_assert!(u > 0.0 && u <= 1.0);
        let idx = self.bands.partition_point(|b| b.hi < u);
        self.bands[idx.min(self.bands.len() - 1)].dest
    }
}

/// Slice widths of the aligned band layout for child counts
/// `z1 >= z2`. With `s` the backbone split point and
/// `a_i = 1/(z_i*beta+1)`:
///
/// * `eta1 = (1-s)/z1` — forward band of walk 1 (at `d = 1` this is
///   `beta/((beta+1) z1)`),
/// * `eta2 = (1-s) (1/z2 - 1/z1)`,
/// * `eta3 = (s - a2)/z2`,
/// * `eta4 = (s - a1)/z1`,
/// * `eta5 = |eta3 - eta4|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Etas {
    pub eta1: f64,
    pub eta2: f64,
    pub eta3: f64,
    pub eta4: f64,
    pub eta5: f64,
}

impl Etas {
    /// Requires `z1 >= z2 >= d` (so that all widths are non-negative).
    pub fn new(params: &BiasParams, z1: u64, z2: u64) -> Result<Self> {
        if z1 < z2 {
            return Err(Error::StateCorrupt(format!(
                "etas need z1 >= z2, got ({z1}, {z2})"
            )));
        }
        if z2 < params.scale() {
            return Err(Error::MinDegreeViolation {
                min_support: z2,
                d: params.scale(),
            });
        }
        let beta = params.beta();
        let s = params.split();
        let (z1f, z2f) = (z1 as f64, z2 as f64);
        let a1 = 1.0 / (z1f * beta + 1.0);
        let a2 = 1.0 / (z2f * beta + 1.0);
        let eta1 = (1.0 - s) / z1f;
        let eta2 = (1.0 - s) * (1.0 / z2f - 1.0 / z1f);
        let eta3 = (s - a2) / z2f;
        let eta4 = (s - a1) / z1f;
        Ok(Self {
            eta1,
            eta2,
            eta3,
            eta4,
            eta5: (eta3 - eta4).abs(),
        })
    }
}

/// Biased-walk transition table for a single walk at a site with `z`
/// children. At the root every child is equally likely and there is no
/// parent band. `beta` may be any positive bias here; the coupled
/// construction is what needs `beta > 1`.
pub fn single_walk_table(z: u64, beta: f64, at_root: bool) -> IntervalTable {
    assert!(z >= 1 && beta > 0.0 && beta.is_finite());
    let mut bands = Vec::with_capacity(z as usize + 1);
    if at_root {
        let w = 1.0 / z as f64;
        for j in 1..=z {
            bands.push(Band {
                lo: (j - 1) as f64 * w,
                hi: j as f64 * w,
                dest: Dest::Child(j),
            });
        }
    } else {
        let a = 1.0 / (z as f64 * beta + 1.0);
        let w = beta * a;
        bands.push(Band {
            lo: 0.0,
            hi: a,
            dest: Dest::Parent,
        });
        for j in 1..=z {
            bands.push(Band {
                lo: a + (j - 1) as f64 * w,
                hi: a + j as f64 * w,
                dest: Dest::Child(j),
            });
        }
    }
    IntervalTable::from_bands(bands)
}

/// Closed-form lookup equivalent of [`single_walk_table`]; the hot path
/// of the ergodic estimator.
pub fn single_walk_dest(z: u64, beta: f64, at_root: bool, u: f64) -> Dest {
    debug_assert!(u > 0.0 && u <= 1.0);
    if at_root {
        return Dest::Child(band_index(u, 1.0 / z as f64, z));
    }
    let a = 1.0 / (z as f64 * beta + 1.0);
    if u <= a {
        Dest::Parent
    } else {
        Dest::Child(band_index(u - a, beta * a, z))
    }
}

/// 1-based index of `t` among `count` bands of width `width`, clamped.
#[inline]
fn band_index(t: f64, width: f64, count: u64) -> u64 {
    debug_assert!(width > 0.0);
    let i = (t / width).ceil();
    if i < 1.0 {
        1
    } else if i > count as f64 {
        count
    } else {
        i as u64
    }
}

/// Materializes the pair of aligned tables for current child counts
/// `(z1, z2)`. Used by the audit and by tests; the stepping hot path
/// uses [`coupled_dests`], which encodes the same mapping.
pub fn coupled_tables(
    params: &BiasParams,
    z1: u64,
    z2: u64,
) -> Result<(IntervalTable, IntervalTable)> {
    let beta = params.beta();
    if z1 < z2 {
        // no alignment: each walk keeps its own natural-order table
        check_scale(params, z1.min(z2))?;
        return Ok((
            single_walk_table(z1, beta, false),
            single_walk_table(z2, beta, false),
        ));
    }
    let e = Etas::new(params, z1, z2)?;
    let s = params.split();
    let a1 = 1.0 / (z1 as f64 * beta + 1.0);
    let a2 = 1.0 / (z2 as f64 * beta + 1.0);

    let mut t1: Vec<Band> = Vec::new();
    let mut t2: Vec<Band> = Vec::new();
    push_band(&mut t1, 0.0, a1, Dest::Parent);
    push_band(&mut t2, 0.0, a2, Dest::Parent);

    if e.eta3 >= e.eta4 {
        for i in 1..=z1 {
            push_band(
                &mut t1,
                a1 + (i - 1) as f64 * e.eta4,
                a1 + i as f64 * e.eta4,
                Dest::Child(z1 + 1 - i),
            );
        }
        for i in 1..=z2 {
            push_band(
                &mut t2,
                a2 + (i - 1) as f64 * e.eta5,
                a2 + i as f64 * e.eta5,
                Dest::Child(z2 + 1 - i),
            );
        }
        let base = a2 + z2 as f64 * e.eta5;
        for i in 1..=z2 {
            push_band(
                &mut t2,
                base + (i - 1) as f64 * e.eta4,
                base + i as f64 * e.eta4,
                Dest::Child(z2 + 1 - i),
            );
        }
    } else {
        let excess = z1 - z2;
        for i in 1..=excess {
            push_band(
                &mut t1,
                a1 + (i - 1) as f64 * e.eta4,
                a1 + i as f64 * e.eta4,
                Dest::Child(z1 + 1 - i),
            );
        }
        let base = a1 + excess as f64 * e.eta4;
        for i in 1..=z2 {
            push_band(
                &mut t1,
                base + (i - 1) as f64 * e.eta5,
                base + i as f64 * e.eta5,
                Dest::Child(z2 + 1 - i),
            );
        }
        // the eta5 block ends exactly at a2; anchor the eta3 block there
        for i in 1..=z2 {
            push_band(
                &mut t1,
                a2 + (i - 1) as f64 * e.eta3,
                a2 + i as f64 * e.eta3,
                Dest::Child(z2 + 1 - i),
            );
        }
        for i in 1..=z2 {
            push_band(
                &mut t2,
                a2 + (i - 1) as f64 * e.eta3,
                a2 + i as f64 * e.eta3,
                Dest::Child(z2 + 1 - i),
            );
        }
    }

    // forward region, shared by both cases
    for i in 1..=z1 {
        push_band(
            &mut t1,
            s + (i - 1) as f64 * e.eta1,
            s + i as f64 * e.eta1,
            Dest::Child(z1 + 1 - i),
        );
    }
    for i in 1..=z2 {
        push_band(
            &mut t2,
            s + (i - 1) as f64 * e.eta2,
            s + i as f64 * e.eta2,
            Dest::Child(z2 + 1 - i),
        );
    }
    let base = s + z2 as f64 * e.eta2;
    for i in 1..=z2 {
        push_band(
            &mut t2,
            base + (i - 1) as f64 * e.eta1,
            base + i as f64 * e.eta1,
            Dest::Child(z2 + 1 - i),
        );
    }
    Ok((IntervalTable::from_bands(t1), IntervalTable::from_bands(t2)))
}

fn push_band(bands: &mut Vec<Band>, lo: f64, hi: f64, dest: Dest) {
    // zero-width slices (z1 == z2, or child bands at z == d) carry no mass
    if hi > lo {
        bands.push(Band { lo, hi, dest });
    }
}

fn check_scale(params: &BiasParams, min_z: u64) -> Result<()> {
    if min_z < params.scale() {
        return Err(Error::MinDegreeViolation {
            min_support: min_z,
            d: params.scale(),
        });
    }
    Ok(())
}

/// Closed-form destinations of both walks for one shared uniform.
/// Exactly the mapping of [`coupled_tables`]; property-tested against
/// the materialized tables.
pub fn coupled_dests(
    params: &BiasParams,
    z1: u64,
    z2: u64,
    u: f64,
) -> Result<(Dest, Dest, BandClass)> {
    debug_assert!(u > 0.0 && u <= 1.0);
    let beta = params.beta();
    let s = params.split();
    if z1 < z2 {
        check_scale(params, z1)?;
        let class = if u > s {
            BandClass::FallbackForward
        } else {
            BandClass::FallbackBackward
        };
        return Ok((
            single_walk_dest(z1, beta, false, u),
            single_walk_dest(z2, beta, false, u),
            class,
        ));
    }
    let e = Etas::new(params, z1, z2)?;
    let a1 = 1.0 / (z1 as f64 * beta + 1.0);
    let a2 = 1.0 / (z2 as f64 * beta + 1.0);
    if u > s {
        let t = u - s;
        let d1 = Dest::Child(z1 + 1 - band_index(t, e.eta1, z1));
        let d2 = if z1 == z2 {
            d1
        } else {
            let block = z2 as f64 * e.eta2;
            if t <= block {
                Dest::Child(z2 + 1 - band_index(t, e.eta2, z2))
            } else {
                Dest::Child(z2 + 1 - band_index(t - block, e.eta1, z2))
            }
        };
        return Ok((d1, d2, BandClass::Forward));
    }
    if e.eta3 >= e.eta4 {
        let d1 = if u <= a1 {
            Dest::Parent
        } else {
            Dest::Child(z1 + 1 - band_index(u - a1, e.eta4, z1))
        };
        let d2 = if u <= a2 {
            Dest::Parent
        } else {
            let t = u - a2;
            let block = z2 as f64 * e.eta5;
            if e.eta5 > 0.0 && t <= block {
                Dest::Child(z2 + 1 - band_index(t, e.eta5, z2))
            } else {
                Dest::Child(z2 + 1 - band_index(t - block, e.eta4, z2))
            }
        };
        Ok((d1, d2, BandClass::BackwardA))
    } else {
        let d1 = if u <= a1 {
            Dest::Parent
        } else {
            let t = u - a1;
            let excess = z1 - z2;
            let block = excess as f64 * e.eta4;
            if t <= block {
                Dest::Child(z1 + 1 - band_index(t, e.eta4, excess))
            } else if u <= a2 {
                Dest::Child(z2 + 1 - band_index(t - block, e.eta5, z2))
            } else {
                Dest::Child(z2 + 1 - band_index(u - a2, e.eta3, z2))
            }
        };
        let d2 = if u <= a2 {
            Dest::Parent
        } else {
            Dest::Child(z2 + 1 - band_index(u - a2, e.eta3, z2))
        };
        Ok((d1, d2, BandClass::BackwardB))
    }
}

/// Expected total band length for one destination of the single-walk
/// law (shared by the audit paths).
fn law_mass(dest: Dest, z: u64, beta: f64, at_root: bool) -> f64 {
    match (dest, at_root) {
        (Dest::Parent, true) => 0.0,
        (Dest::Parent, false) => 1.0 / (z as f64 * beta + 1.0),
        (Dest::Child(_), true) => 1.0 / z as f64,
        (Dest::Child(_), false) => beta / (z as f64 * beta + 1.0),
    }
}

/// Verifies that a table tiles `(0, 1]` within [`TILING_TOL`] and that
/// per-destination total lengths match the biased law within
/// [`MARGINAL_TOL`]. Returns `(max_tiling_err, max_marginal_err)`.
pub fn check_table(table: &IntervalTable, z: u64, beta: f64, at_root: bool) -> Result<(f64, f64)> {
    let bands = table.bands();
    let fail = |detail: String, err: f64| Error::AuditFailure {
        z1: z,
        z2: z,
        beta,
        detail,
        err,
    };
    let mut tiling_err: f64 = bands[0].lo.abs();
    if tiling_err > 0.0 {
        return Err(fail("first band must start at 0".into(), tiling_err));
    }
    for w in bands.windows(2) {
        let gap = (w[1].lo - w[0].hi).abs();
        tiling_err = tiling_err.max(gap);
        if gap > TILING_TOL {
            return Err(fail(format!("gap between bands at {:.17}", w[0].hi), gap));
        }
    }
    let closure = (bands.last().expect("nonempty").hi - 1.0).abs();
    tiling_err = tiling_err.max(closure);
    if closure > TILING_TOL {
        return Err(fail("last band must end at 1".into(), closure));
    }

    let mut marginal_err: f64 = 0.0;
    let mut parent_mass = 0.0;
    let mut child_mass = vec![0.0f64; z as usize];
    for b in bands {
        let w = b.hi - b.lo;
        if w <= 0.0 {
            return Err(fail(format!("empty band at {:.17}", b.lo), w.abs()));
        }
        match b.dest {
            Dest::Parent => parent_mass += w,
            Dest::Child(j) => {
                if j < 1 || j > z {
                    return Err(fail(format!("child index {j} out of 1..={z}"), j as f64));
                }
                child_mass[j as usize - 1] += w;
            }
        }
    }
    let parent_expected = law_mass(Dest::Parent, z, beta, at_root);
    let err = (parent_mass - parent_expected).abs();
    marginal_err = marginal_err.max(err);
    if err > MARGINAL_TOL {
        return Err(fail("parent marginal off law".into(), err));
    }
    let child_expected = law_mass(Dest::Child(1), z, beta, at_root);
    for (j, &m) in child_mass.iter().enumerate() {
        let err = (m - child_expected).abs();
        marginal_err = marginal_err.max(err);
        if err > MARGINAL_TOL {
            return Err(fail(format!("child {} marginal off law", j + 1), err));
        }
    }
    Ok((tiling_err, marginal_err))
}

/// Float-mode audit over every pair `1 <= z1, z2 <= z_max` and every
/// bias in `betas` (plus the single-walk tables at both root and
/// non-root sites). Fails fast with the offending tuple.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AuditReport {
    pub tables_checked: u64,
    pub max_tiling_err: f64,
    pub max_marginal_err: f64,
}

pub fn audit_tables(z_max: u64, betas: &[f64], d: u64) -> Result<AuditReport> {
    let mut report = AuditReport {
        tables_checked: 0,
        max_tiling_err: 0.0,
        max_marginal_err: 0.0,
    };
    let absorb = |r: (f64, f64), report: &mut AuditReport| {
        report.tables_checked += 1;
        report.max_tiling_err = report.max_tiling_err.max(r.0);
        report.max_marginal_err = report.max_marginal_err.max(r.1);
    };
    for &beta in betas {
        let params = BiasParams::with_scale(beta, d)?;
        for z in d.max(1)..=z_max {
            absorb(
                check_table(&single_walk_table(z, beta, false), z, beta, false)?,
                &mut report,
            );
            absorb(
                check_table(&single_walk_table(z, beta, true), z, beta, true)?,
                &mut report,
            );
        }
        for z1 in d.max(1)..=z_max {
            for z2 in d.max(1)..=z_max {
                let (t1, t2) = coupled_tables(&params, z1, z2)?;
                let r1 = check_table(&t1, z1, beta, false).map_err(|e| retag(e, z1, z2))?;
                let r2 = check_table(&t2, z2, beta, false).map_err(|e| retag(e, z1, z2))?;
                absorb(r1, &mut report);
                absorb(r2, &mut report);
            }
        }
    }
    Ok(report)
}

fn retag(e: Error, z1: u64, z2: u64) -> Error {
    match e {
        Error::AuditFailure {
            beta, detail, err, ..
        } => Error::AuditFailure {
            z1,
            z2,
            beta,
            detail,
            err,
        },
        other => other,
    }
}

/// Exact-rational audit path: rebuilds every band with arbitrary
/// precision rationals for `beta = num/den` and demands exact tiling
/// and exact marginals, then cross-checks the float bands against the
/// rational ones to `1e-12`.
pub mod exact {
    use super::*;

    type Q = BigRational;

    fn q(n: i64) -> Q {
        Q::from_integer(BigInt::from(n))
    }

    fn qu(n: u64) -> Q {
        Q::from_integer(BigInt::from(n))
    }

    struct QBand {
        lo: Q,
        hi: Q,
        dest: Dest,
    }

    struct Geometry {
        s: Q,
        a1: Q,
        a2: Q,
        eta1: Q,
        eta2: Q,
        eta3: Q,
        eta4: Q,
        eta5: Q,
    }

    fn geometry(beta: &Q, d: u64, z1: u64, z2: u64) -> Geometry {
        let one = Q::one();
        let s = &one / (qu(d) * beta + &one);
        let a1 = &one / (qu(z1) * beta + &one);
        let a2 = &one / (qu(z2) * beta + &one);
        let eta1 = (&one - &s) / qu(z1);
        let eta2 = (&one - &s) * (&one / qu(z2) - &one / qu(z1));
        let eta3 = (&s - &a2) / qu(z2);
        let eta4 = (&s - &a1) / qu(z1);
        let eta5 = (&eta3 - &eta4).abs();
        Geometry {
            s,
            a1,
            a2,
            eta1,
            eta2,
            eta3,
            eta4,
            eta5,
        }
    }

    fn push(bands: &mut Vec<QBand>, lo: Q, hi: Q, dest: Dest) {
        if hi > lo {
            bands.push(QBand { lo, hi, dest });
        }
    }

    fn block(
        bands: &mut Vec<QBand>,
        base: &Q,
        width: &Q,
        count: u64,
        child_of: impl Fn(u64) -> u64,
    ) {
        for i in 1..=count {
            push(
                bands,
                base + qu(i - 1) * width,
                base + qu(i) * width,
                Dest::Child(child_of(i)),
            );
        }
    }

    fn single_table(z: u64, beta: &Q, at_root: bool) -> Vec<QBand> {
        let one = Q::one();
        let mut bands = Vec::new();
        if at_root {
            let w = &one / qu(z);
            block(&mut bands, &Q::zero(), &w, z, |j| j);
        } else {
            let a = &one / (qu(z) * beta + &one);
            let w = beta * &a;
            push(&mut bands, Q::zero(), a.clone(), Dest::Parent);
            block(&mut bands, &a, &w, z, |j| j);
        }
        bands
    }

    fn coupled_pair(beta: &Q, d: u64, z1: u64, z2: u64) -> (Vec<QBand>, Vec<QBand>) {
        if z1 < z2 {
            return (single_table(z1, beta, false), single_table(z2, beta, false));
        }
        let g = geometry(beta, d, z1, z2);
        let mut t1 = Vec::new();
        let mut t2 = Vec::new();
        push(&mut t1, Q::zero(), g.a1.clone(), Dest::Parent);
        push(&mut t2, Q::zero(), g.a2.clone(), Dest::Parent);
        if g.eta3 >= g.eta4 {
            block(&mut t1, &g.a1, &g.eta4, z1, |i| z1 + 1 - i);
            block(&mut t2, &g.a2, &g.eta5, z2, |i| z2 + 1 - i);
            let base = &g.a2 + qu(z2) * &g.eta5;
            block(&mut t2, &base, &g.eta4, z2, |i| z2 + 1 - i);
        } else {
            let excess = z1 - z2;
            block(&mut t1, &g.a1, &g.eta4, excess, |i| z1 + 1 - i);
            let base = &g.a1 + qu(excess) * &g.eta4;
            block(&mut t1, &base, &g.eta5, z2, |i| z2 + 1 - i);
            block(&mut t1, &g.a2, &g.eta3, z2, |i| z2 + 1 - i);
            block(&mut t2, &g.a2, &g.eta3, z2, |i| z2 + 1 - i);
        }
        block(&mut t1, &g.s, &g.eta1, z1, |i| z1 + 1 - i);
        block(&mut t2, &g.s, &g.eta2, z2, |i| z2 + 1 - i);
        let base = &g.s + qu(z2) * &g.eta2;
        block(&mut t2, &base, &g.eta1, z2, |i| z2 + 1 - i);
        (t1, t2)
    }

    fn check_exact(
        bands: &[QBand],
        z: u64,
        beta: &Q,
        at_root: bool,
        tag: (u64, u64, f64),
    ) -> Result<()> {
        let fail = |detail: String| Error::AuditFailure {
            z1: tag.0,
            z2: tag.1,
            beta: tag.2,
            detail,
            err: f64::NAN,
        };
        if bands[0].lo != Q::zero() {
            return Err(fail("exact: first band not anchored at 0".into()));
        }
        for w in bands.windows(2) {
            if w[1].lo != w[0].hi {
                return Err(fail(format!(
                    "exact: tiling break after band ending at {}",
                    w[0].hi
                )));
            }
        }
        if bands.last().expect("nonempty").hi != Q::one() {
            return Err(fail("exact: last band does not end at 1".into()));
        }
        let one = Q::one();
        let parent_expected = if at_root {
            Q::zero()
        } else {
            &one / (qu(z) * beta + &one)
        };
        let child_expected = if at_root {
            &one / qu(z)
        } else {
            beta / (qu(z) * beta + &one)
        };
        let mut parent = Q::zero();
        let mut children = vec![Q::zero(); z as usize];
        for b in bands {
            let w = &b.hi - &b.lo;
            match b.dest {
                Dest::Parent => parent += w,
                Dest::Child(j) => children[j as usize - 1] += w,
            }
        }
        if parent != parent_expected {
            return Err(fail("exact: parent marginal off law".into()));
        }
        for (j, c) in children.iter().enumerate() {
            if *c != child_expected {
                return Err(fail(format!("exact: child {} marginal off law", j + 1)));
            }
        }
        Ok(())
    }

    fn cross_check(exact: &[QBand], float: &IntervalTable, tag: (u64, u64, f64)) -> Result<()> {
        if exact.len() != float.bands().len() {
            return Err(Error::AuditFailure {
                z1: tag.0,
                z2: tag.1,
                beta: tag.2,
                detail: format!(
                    "band count mismatch: exact {} vs float {}",
                    exact.len(),
                    float.bands().len()
                ),
                err: f64::NAN,
            });
        }
        for (qb, fb) in exact.iter().zip(float.bands()) {
            let lo = qb.lo.to_f64().expect("rational in unit interval");
            let hi = qb.hi.to_f64().expect("rational in unit interval");
            let err = (lo - fb.lo).abs().max((hi - fb.hi).abs());
            if qb.dest != fb.dest || err > 1e-12 {
                return Err(Error::AuditFailure {
                    z1: tag.0,
                    z2: tag.1,
                    beta: tag.2,
                    detail: format!("float band diverges from exact at lo={lo}"),
                    err,
                });
            }
        }
        Ok(())
    }

    /// Audits every pair up to `z_max` for each rational bias
    /// `beta = num/den`, exactly, and cross-checks the float tables.
    pub fn audit_tables_exact(z_max: u64, betas: &[(i64, i64)], d: u64) -> Result<()> {
        for &(num, den) in betas {
            assert!(num > 0 && den > 0, "beta must be a positive rational");
            let beta = q(num) / q(den);
            let beta_f = num as f64 / den as f64;
            let params = BiasParams::with_scale(beta_f, d)?;
            for z in d.max(1)..=z_max {
                let bands = single_table(z, &beta, false);
                check_exact(&bands, z, &beta, false, (z, z, beta_f))?;
                cross_check(&bands, &single_walk_table(z, beta_f, false), (z, z, beta_f))?;
                let root = single_table(z, &beta, true);
                check_exact(&root, z, &beta, true, (z, z, beta_f))?;
            }
            for z1 in d.max(1)..=z_max {
                for z2 in d.max(1)..=z_max {
                    let (q1, q2) = coupled_pair(&beta, d, z1, z2);
                    check_exact(&q1, z1, &beta, false, (z1, z2, beta_f))?;
                    check_exact(&q2, z2, &beta, false, (z1, z2, beta_f))?;
                    let (f1, f2) = coupled_tables(&params, z1, z2)?;
                    cross_check(&q1, &f1, (z1, z2, beta_f))?;
                    cross_check(&q2, &f2, (z1, z2, beta_f))?;
                }
            }
        }
        Ok(())
    }
}

/// One step of the pair of walks, as reported to callers.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StepOutcome {
    /// 1-based step index.
    pub n: u64,
    pub u: f64,
    pub band: BandClass,
    pub move1: Dest,
    pub move2: Dest,
    /// Whether the backbone ascended (`u` above the split point).
    pub forward: bool,
    pub depth1: u64,
    pub depth2: u64,
    pub y: i64,
    /// Whether walk 1 arrived at a vertex whose children are still
    /// unrealized, i.e. a vertex it has never stepped from before.
    pub fresh1: bool,
    pub fresh2: bool,
}

/// The two tree walks driven by one shared uniform per step.
///
/// Offspring assignment when a step begins: if both current sites are
/// fresh (children unrealized) a coupled pair is drawn; if exactly one
/// is fresh, that tree draws independently from its own marginal; if
/// both are realized, the stored counts are reused.
#[derive(Debug)]
pub struct CoupledWalk<'a> {
    params: BiasParams,
    p1: &'a ProgenyDistribution,
    p2: &'a ProgenyDistribution,
    coupling: &'a MonotoneCoupling,
    tree1: Tree,
    tree2: Tree,
    pos1: VertexId,
    pos2: VertexId,
    y: i64,
    n: u64,
}

impl<'a> CoupledWalk<'a> {
    pub fn new(
        params: BiasParams,
        p1: &'a ProgenyDistribution,
        p2: &'a ProgenyDistribution,
        coupling: &'a MonotoneCoupling,
    ) -> Result<Self> {
        for p in [p1, p2] {
            if p.min_support() < params.scale() {
                return Err(Error::MinDegreeViolation {
                    min_support: p.min_support(),
                    d: params.scale(),
                });
            }
        }
        Ok(Self {
            params,
            p1,
            p2,
            coupling,
            tree1: Tree::new(),
            tree2: Tree::new(),
            pos1: VertexId(0),
            pos2: VertexId(0),
            y: 0,
            n: 0,
        })
    }

    /// Fresh trees, walks back at the roots; arena capacity is kept.
    pub fn reset(&mut self) {
        self.tree1.reset();
        self.tree2.reset();
        self.pos1 = self.tree1.root();
        self.pos2 = self.tree2.root();
        self.y = 0;
        self.n = 0;
    }

    pub fn params(&self) -> &BiasParams {
        &self.params
    }

    pub fn y(&self) -> i64 {
        self.y
    }

    pub fn step_count(&self) -> u64 {
        self.n
    }

    pub fn depths(&self) -> (u64, u64) {
        (
            self.tree1.depth(self.pos1) as u64,
            self.tree2.depth(self.pos2) as u64,
        )
    }

    pub fn trees(&self) -> (&Tree, &Tree) {
        (&self.tree1, &self.tree2)
    }

    /// Total vertices realized across both arenas; drivers use this to
    /// rotate trajectories before memory grows without bound.
    pub fn arena_len(&self) -> usize {
        self.tree1.len() + self.tree2.len()
    }

    /// Advances both walks with the supplied uniform. `rng` feeds
    /// offspring assignment only.
    pub fn step<R: Rng + ?Sized>(&mut self, u: f64, rng: &mut R) -> Result<StepOutcome> {
        let fresh1 = !self.tree1.is_realized(self.pos1);
        let fresh2 = !self.tree2.is_realized(self.pos2);
        match (fresh1, fresh2) {
            (true, true) => {
                let (z1, z2) = self.coupling.sample(rng);
                self.tree1.realize_children(self.pos1, z1)?;
                self.tree2.realize_children(self.pos2, z2)?;
            }
            (true, false) => {
                let z1 = self.p1.sample(rng);
                self.tree1.realize_children(self.pos1, z1)?;
            }
            (false, true) => {
                let z2 = self.p2.sample(rng);
                self.tree2.realize_children(self.pos2, z2)?;
            }
            (false, false) => {}
        }
        let z1 = self.tree1.child_count(self.pos1).expect("just realized");
        let z2 = self.tree2.child_count(self.pos2).expect("just realized");
        let at_root1 = self.tree1.depth(self.pos1) == 0;
        let at_root2 = self.tree2.depth(self.pos2) == 0;
        let forward = u > self.params.split();
        if (at_root1 || at_root2) && !forward {
            // conditioned drivers restrict the uniform whenever a walk
            // sits at its root, so landing backward there is a bug
            return Err(Error::StateCorrupt(format!(
                "backward uniform {u} while at a root (step {})",
                self.n + 1
            )));
        }
        let (mv1, mv2, band) = coupled_dests(&self.params, z1, z2, u)?;
        self.pos1 = self.apply(WalkSide::One, mv1)?;
        self.pos2 = self.apply(WalkSide::Two, mv2)?;
        self.y += if forward { 1 } else { -1 };
        self.n += 1;
        let (depth1, depth2) = self.depths();
        debug_assert!(depth1 as i64 >= self.y && depth2 as i64 >= self.y);
        debug_assert!((depth1 as i64 - self.y) % 2 == 0);
        debug_assert!((depth2 as i64 - self.y) % 2 == 0);
        debug_assert!(!forward || (mv1 != Dest::Parent && mv2 != Dest::Parent));
        Ok(StepOutcome {
            n: self.n,
            u,
            band,
            move1: mv1,
            move2: mv2,
            forward,
            depth1,
            depth2,
            y: self.y,
            fresh1: !self.tree1.is_realized(self.pos1),
            fresh2: !self.tree2.is_realized(self.pos2),
        })
    }

    fn apply(&mut self, side: WalkSide, mv: Dest) -> Result<VertexId> {
        let (tree, pos) = match side {
            WalkSide::One => (&self.tree1, self.pos1),
            WalkSide::Two => (&self.tree2, self.pos2),
        };
        match mv {
            Dest::Parent => tree
                .parent(pos)
                .ok_or_else(|| Error::StateCorrupt("parent move at a root".into())),
            Dest::Child(j) => {
                let count = tree.child_count(pos).expect("realized before moving");
                if j < 1 || j > count {
                    return Err(Error::StateCorrupt(format!(
                        "child index {j} out of 1..={count}"
                    )));
                }
                Ok(tree.child(pos, j))
            }
        }
    }
}

#[derive(Clone, Copy)]
enum WalkSide {
    One,
    Two,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive_stream, unit_draw, unit_draw_above};
    use approx::assert_relative_eq;

    fn params(beta: f64) -> BiasParams {
        BiasParams::new(beta).unwrap()
    }

    #[test]
    fn bias_params_validation() {
        assert!(BiasParams::new(1.0).is_err());
        assert!(BiasParams::new(f64::NAN).is_err());
        assert!(BiasParams::with_scale(2.0, 0).is_err());
        let p = BiasParams::with_scale(2.0, 3).unwrap();
        assert_relative_eq!(p.split(), 1.0 / 7.0);
        assert_relative_eq!(p.escape_probability(), 5.0 / 6.0);
    }

    #[test]
    fn etas_fixture_z3_z2_beta2() {
        let e = Etas::new(&params(2.0), 3, 2).unwrap();
        assert_relative_eq!(e.eta1, 2.0 / 9.0, epsilon = 1e-15);
        assert_relative_eq!(e.eta2, 1.0 / 9.0, epsilon = 1e-15);
        assert_relative_eq!(e.eta3, 1.0 / 15.0, epsilon = 1e-15);
        assert_relative_eq!(e.eta4, 4.0 / 63.0, epsilon = 1e-15);
        assert_relative_eq!(e.eta5, 1.0 / 315.0, epsilon = 1e-15);
        assert!(
            e.eta3 >= e.eta4,
            "this pair lays out as the first backward case"
        );
    }

    #[test]
    fn single_table_fixtures() {
        // z=3, beta=2, non-root: parent 1/7, each child 2/7
        let t = single_walk_table(3, 2.0, false);
        assert_eq!(t.bands().len(), 4);
        assert_eq!(t.bands()[0].dest, Dest::Parent);
        assert_relative_eq!(t.bands()[0].hi, 1.0 / 7.0, epsilon = 1e-15);
        for j in 1..=3u64 {
            let b = t.bands()[j as usize];
            assert_eq!(b.dest, Dest::Child(j));
            assert_relative_eq!(b.hi - b.lo, 2.0 / 7.0, epsilon = 1e-15);
        }
        // beta=1 is legal for the single-walk law
        let t = single_walk_table(3, 1.0, false);
        assert_relative_eq!(t.bands()[0].hi, 0.25, epsilon = 1e-15);
        // root: thirds, no parent band
        let t = single_walk_table(3, 2.0, true);
        assert_eq!(t.bands().len(), 3);
        assert_eq!(t.lookup(0.1), Dest::Child(1));
        assert_eq!(t.lookup(0.99), Dest::Child(3));
    }

    #[test]
    fn coupled_tables_fixture_z3_z2_beta2() {
        let (t1, t2) = coupled_tables(&params(2.0), 3, 2).unwrap();
        check_table(&t1, 3, 2.0, false).unwrap();
        check_table(&t2, 2, 2.0, false).unwrap();
        // walk 2 layout: parent up to 1/5, two eta5 slivers, two eta4
        // bands ending at 1/3, then the forward blocks
        let b = t2.bands();
        assert_eq!(b[0].dest, Dest::Parent);
        assert_relative_eq!(b[0].hi, 0.2, epsilon = 1e-15);
        assert_eq!(b[1].dest, Dest::Child(2));
        assert_relative_eq!(b[1].hi - b[1].lo, 1.0 / 315.0, epsilon = 1e-15);
        assert_eq!(b[2].dest, Dest::Child(1));
        assert_eq!(b[3].dest, Dest::Child(2));
        assert_relative_eq!(b[3].hi - b[3].lo, 4.0 / 63.0, epsilon = 1e-15);
        assert_eq!(b[4].dest, Dest::Child(1));
        assert_relative_eq!(b[4].hi, 1.0 / 3.0, epsilon = 1e-14);
        // forward: eta2 bands then eta1 bands, reversed child order
        assert_eq!(b[5].dest, Dest::Child(2));
        assert_relative_eq!(b[5].hi, 4.0 / 9.0, epsilon = 1e-14);
        assert_eq!(b[6].dest, Dest::Child(1));
        assert_eq!(b[7].dest, Dest::Child(2));
        assert_eq!(b[8].dest, Dest::Child(1));
        assert_relative_eq!(b[8].hi, 1.0, epsilon = 1e-15);

        // walk 1 in the same configuration: parent band is 1/7
        assert_relative_eq!(t1.bands()[0].hi, 1.0 / 7.0, epsilon = 1e-15);
        assert_eq!(t1.bands().len(), 1 + 3 + 3);
    }

    #[test]
    fn equal_counts_collapse_to_identical_tables() {
        let (t1, t2) = coupled_tables(&params(3.0), 4, 4).unwrap();
        assert_eq!(t1, t2);
        // eta2/eta5 slivers vanish: parent + z backward + z forward
        assert_eq!(t1.bands().len(), 9);
    }

    #[test]
    fn fallback_tables_use_natural_order() {
        let (t1, t2) = coupled_tables(&params(2.0), 2, 5).unwrap();
        check_table(&t1, 2, 2.0, false).unwrap();
        check_table(&t2, 5, 2.0, false).unwrap();
        assert_eq!(t1.bands()[1].dest, Dest::Child(1));
        assert_eq!(t2.bands()[1].dest, Dest::Child(1));
        assert_eq!(t2.bands()[5].dest, Dest::Child(5));
    }

    #[test]
    fn corrupted_table_fails_audit() {
        let (mut t1, _) = coupled_tables(&params(2.0), 3, 2).unwrap();
        // poke a 1e-9 hole between two bands
        t1.bands[2].lo += 1e-9;
        t1.bands[2].hi += 1e-9;
        assert!(matches!(
            check_table(&t1, 3, 2.0, false),
            Err(Error::AuditFailure { .. })
        ));
        // flip the sign of the eta5 sliver on a fresh table: walk 2's
        // first child band now overlaps the parent band
        let (_, mut t2) = coupled_tables(&params(2.0), 3, 2).unwrap();
        let w = t2.bands[1].hi - t2.bands[1].lo;
        t2.bands[1].lo -= 2.0 * w;
        t2.bands[1].hi -= 2.0 * w;
        assert!(matches!(
            check_table(&t2, 2, 2.0, false),
            Err(Error::AuditFailure { .. })
        ));
    }

    #[test]
    fn audit_small_grid_float_and_exact() {
        let report = audit_tables(8, &[1.5, 2.0, 8.0], 1).unwrap();
        assert!(report.max_tiling_err < TILING_TOL);
        assert!(report.max_marginal_err < MARGINAL_TOL);
        assert!(report.tables_checked > 0);
        exact::audit_tables_exact(6, &[(3, 2), (2, 1), (8, 1)], 1).unwrap();
    }

    #[test]
    fn audit_exact_with_backbone_scale() {
        exact::audit_tables_exact(6, &[(2, 1), (144, 25)], 2).unwrap();
    }

    #[test]
    fn min_degree_enforced() {
        let p = BiasParams::with_scale(2.0, 3).unwrap();
        assert!(matches!(
            coupled_tables(&p, 5, 2),
            Err(Error::MinDegreeViolation { .. })
        ));
        assert!(matches!(
            coupled_dests(&p, 2, 5, 0.7),
            Err(Error::MinDegreeViolation { .. })
        ));
        assert!(coupled_tables(&p, 5, 3).is_ok());
    }

    #[test]
    fn dests_match_tables_randomized() {
        let mut rng = derive_stream(17, 0);
        for _ in 0..400 {
            let z1 = rng.random_range(1..=12u64);
            let z2 = rng.random_range(1..=12u64);
            let beta = 1.0 + 9.0 * unit_draw(&mut rng);
            let bp = params(beta);
            let (t1, t2) = coupled_tables(&bp, z1, z2).unwrap();
            for _ in 0..64 {
                let u = unit_draw(&mut rng);
                // skip draws that sit within fp noise of a band edge
                let near_edge = t1
                    .bands()
                    .iter()
                    .chain(t2.bands())
                    .any(|b| (u - b.hi).abs() < 1e-9 || (u - b.lo).abs() < 1e-9);
                if near_edge {
                    continue;
                }
                let (d1, d2, _) = coupled_dests(&bp, z1, z2, u).unwrap();
                assert_eq!(d1, t1.lookup(u), "z1={z1} z2={z2} beta={beta} u={u}");
                assert_eq!(d2, t2.lookup(u), "z1={z1} z2={z2} beta={beta} u={u}");
            }
        }
    }

    #[test]
    fn single_dest_matches_table_randomized() {
        let mut rng = derive_stream(18, 0);
        for _ in 0..200 {
            let z = rng.random_range(1..=15u64);
            let beta = 0.5 + 7.0 * unit_draw(&mut rng);
            for at_root in [false, true] {
                let t = single_walk_table(z, beta, at_root);
                for _ in 0..32 {
                    let u = unit_draw(&mut rng);
                    if t.bands()
                        .iter()
                        .any(|b| (u - b.hi).abs() < 1e-9 || (u - b.lo).abs() < 1e-9)
                    {
                        continue;
                    }
                    assert_eq!(single_walk_dest(z, beta, at_root, u), t.lookup(u));
                }
            }
        }
    }

    #[test]
    fn single_walk_frequencies_match_law() {
        // chi-square on (parent, child1..child3) at z=3, beta=2
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let mut rng = derive_stream(19, 0);
        let n = 1_000_000u64;
        let mut counts = [0u64; 4];
        for _ in 0..n {
            match single_walk_dest(3, 2.0, false, unit_draw(&mut rng)) {
                Dest::Parent => counts[0] += 1,
                Dest::Child(j) => counts[j as usize] += 1,
            }
        }
        let expected = [1.0 / 7.0, 2.0 / 7.0, 2.0 / 7.0, 2.0 / 7.0];
        let stat: f64 = counts
            .iter()
            .zip(&expected)
            .map(|(&o, &p)| {
                let e = p * n as f64;
                (o as f64 - e).powi(2) / e
            })
            .sum();
        let p_value = 1.0 - ChiSquared::new(3.0).unwrap().cdf(stat);
        assert!(p_value > 0.001, "chi-square stat {stat}, p {p_value}");
    }

    #[test]
    fn coupled_walk_runs_conditioned_trajectories() {
        let p1 = ProgenyDistribution::uniform_on(&[1, 4]).unwrap();
        let p2 = ProgenyDistribution::uniform_on(&[1, 2]).unwrap();
        let coupling = MonotoneCoupling::quantile(&p1, &p2).unwrap();
        let bp = params(2.0);
        let mut walk = CoupledWalk::new(bp, &p1, &p2, &coupling).unwrap();
        let mut rng = derive_stream(23, 0);
        let mut total_steps = 0u64;
        for _ in 0..200 {
            walk.reset();
            // forced ascent out of the roots, then free steps; restart
            // whenever the backbone touches 0 again
            let u0 = unit_draw_above(&mut rng, bp.split());
            walk.step(u0, &mut rng).unwrap();
            for _ in 0..200 {
                if walk.y() == 0 {
                    break;
                }
                let out = walk.step(unit_draw(&mut rng), &mut rng).unwrap();
                assert!(out.depth1 as i64 >= out.y);
                assert!(out.depth2 as i64 >= out.y);
                assert_eq!((out.depth1 as i64 - out.y) % 2, 0);
                total_steps += 1;
            }
        }
        assert!(total_steps > 1000);
    }

    #[test]
    fn walk_rejects_min_degree_violation() {
        let p1 = ProgenyDistribution::uniform_on(&[1, 4]).unwrap();
        let p2 = ProgenyDistribution::uniform_on(&[1, 2]).unwrap();
        let coupling = MonotoneCoupling::quantile(&p1, &p2).unwrap();
        let bp = BiasParams::with_scale(8.0, 2).unwrap();
        assert!(matches!(
            CoupledWalk::new(bp, &p1, &p2, &coupling),
            Err(Error::MinDegreeViolation { .. })
        ));
    }
}
