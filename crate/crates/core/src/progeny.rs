//! Finite-support offspring distributions on the positive integers and
//! monotone couplings between a stochastically ordered pair.
//!
//! Supports never contain 0: every tree in this crate is leafless. All
//! mass arithmetic is f64 with a documented tolerance of `1e-12`;
//! constructors normalize and drop atoms below that tolerance.

use std::fmt;
use std::io::BufRead;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::Serialize;

use crate::error::Error;
use crate::rng::unit_draw;
use crate::Result;

/// Mass / CDF comparison tolerance used throughout the module.
pub const MASS_TOL: f64 = 1e-12;

/// Default cap for branching-process population sizes.
pub const DEFAULT_POPULATION_CAP: u64 = 1_000_000_000;

/// Probability distribution with finite support on `{1, 2, ...}`.
///
/// Invariants: support strictly increasing, all masses positive, masses
/// sum to 1 (last CDF entry is exactly 1.0).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProgenyDistribution {
    support: Vec<u64>,
    mass: Vec<f64>,
    #[serde(skip)]
    cdf: Vec<f64>,
    mean: f64,
}

impl ProgenyDistribution {
    /// Validates raw `(value, mass)` pairs into a distribution.
    ///
    /// Duplicated values are merged, masses are renormalized, and atoms
    /// whose normalized mass falls below [`MASS_TOL`] are truncated away.
    /// Rejects empty input, support values of 0 (leaves are out of
    /// model), and negative or non-finite masses.
    pub fn from_pairs(pairs: &[(u64, f64)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        let mut merged: Vec<(u64, f64)> = Vec::with_capacity(pairs.len());
        for &(value, mass) in pairs {
            if value == 0 {
                return Err(Error::InvalidDistribution(
                    "support value 0 (every vertex must have a child)".into(),
                ));
            }
            if !mass.is_finite() || mass < 0.0 {
                return Err(Error::InvalidDistribution(format!(
                    "mass {mass} at value {value} is not a finite non-negative number"
                )));
            }
            merged.push((value, mass));
        }
        merged.sort_by_key(|&(v, _)| v);
        merged.dedup_by(|next, prev| {
            if next.0 == prev.0 {
                prev.1 += next.1;
                true
            } else {
                false
            }
        });
        let total: f64 = merged.iter().map(|&(_, m)| m).sum();
        if total <= 0.0 {
            return Err(Error::InvalidDistribution("total mass is zero".into()));
        }
        let kept: Vec<(u64, f64)> = merged
            .into_iter()
            .map(|(v, m)| (v, m / total))
            .filter(|&(_, m)| m >= MASS_TOL)
            .collect();
        if kept.is_empty() {
            return Err(Error::InvalidDistribution(
                "all atoms below mass tolerance".into(),
            ));
        }
        let renorm: f64 = kept.iter().map(|&(_, m)| m).sum();
        let support: Vec<u64> = kept.iter().map(|&(v, _)| v).collect();
        let mass: Vec<f64> = kept.iter().map(|&(_, m)| m / renorm).collect();
        let mut cdf = Vec::with_capacity(mass.len());
        let mut acc = 0.0;
        for &m in &mass {
            acc += m;
            cdf.push(acc);
        }
        *cdf.last_mut().expect("nonempty") = 1.0;
        let mean = support.iter().zip(&mass).map(|(&v, &m)| v as f64 * m).sum();
        Ok(Self {
            support,
            mass,
            cdf,
            mean,
        })
    }

    /// Uniform distribution on the given values, e.g. `{1, 4}`.
    pub fn uniform_on(values: &[u64]) -> Result<Self> {
        let w = 1.0 / values.len() as f64;
        Self::from_pairs(&values.iter().map(|&v| (v, w)).collect::<Vec<_>>())
    }

    /// Point mass at `b`.
    pub fn point_mass(b: u64) -> Result<Self> {
        Self::from_pairs(&[(b, 1.0)])
    }

    /// Parses the config literal format: `"1:0.5,4:0.5"`.
    pub fn parse_literal(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for item in text.split(',') {
            let item = item.trim();
            if item.is_empty() {
                continue;
            }
            let (v, m) = item.split_once(':').ok_or_else(|| {
                Error::InvalidDistribution(format!("expected value:mass, got {item:?}"))
            })?;
            let value: u64 = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidDistribution(format!("bad support value {v:?}")))?;
            let mass: f64 = m
                .trim()
                .parse()
                .map_err(|_| Error::InvalidDistribution(format!("bad mass {m:?}")))?;
            pairs.push((value, mass));
        }
        Self::from_pairs(&pairs)
    }

    pub fn support(&self) -> &[u64] {
        &self.support
    }

    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn min_support(&self) -> u64 {
        self.support[0]
    }

    pub fn max_support(&self) -> u64 {
        *self.support.last().expect("nonempty")
    }

    /// `(value, mass)` atoms in increasing value order.
    pub fn atoms(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.support.iter().copied().zip(self.mass.iter().copied())
    }

    /// Mass at an exact value (0 if absent).
    pub fn mass_at(&self, value: u64) -> f64 {
        match self.support.binary_search(&value) {
            Ok(i) => self.mass[i],
            Err(_) => 0.0,
        }
    }

    /// `P(Z <= t)`.
    pub fn cdf_at(&self, t: u64) -> f64 {
        let idx = self.support.partition_point(|&v| v <= t);
        if idx == 0 {
            0.0
        } else {
            self.cdf[idx - 1]
        }
    }

    /// Internal CDF table aligned with `support()`.
    pub fn cdf_table(&self) -> &[f64] {
        &self.cdf
    }

    /// Generalized inverse CDF: smallest support value `s` with
    /// `F(s) >= u` (up to [`MASS_TOL`] slack), for `u` in `(0, 1]`.
    pub fn quantile(&self, u: f64) -> u64 {
        let idx = self.cdf.partition_point(|&c| c < u - MASS_TOL);
        self.support[idx.min(self.support.len() - 1)]
    }

    /// One draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        self.quantile(unit_draw(rng))
    }

    /// Equality up to [`MASS_TOL`] on the masses.
    pub fn approx_eq(&self, other: &Self) -> bool {
        self.support == other.support
            && self
                .mass
                .iter()
                .zip(&other.mass)
                .all(|(a, b)| (a - b).abs() <= MASS_TOL)
    }
}

impl fmt::Display for ProgenyDistribution {
    /// Emits the config literal format.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (v, m)) in self.atoms().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}:{m}")?;
        }
        Ok(())
    }
}

/// True iff `p1` strictly stochastically dominates `p2`:
/// `F1(t) <= F2(t)` for every `t` and the distributions differ.
pub fn dominates(p1: &ProgenyDistribution, p2: &ProgenyDistribution) -> bool {
    if p1.approx_eq(p2) {
        return false;
    }
    union_support(p1, p2)
        .into_iter()
        .all(|t| p1.cdf_at(t) <= p2.cdf_at(t) + MASS_TOL)
}

fn union_support(p1: &ProgenyDistribution, p2: &ProgenyDistribution) -> Vec<u64> {
    let mut ts: Vec<u64> = p1
        .support
        .iter()
        .chain(p2.support.iter())
        .copied()
        .collect();
    ts.sort_unstable();
    ts.dedup();
    ts
}

/// Joint law of a pair `(Z1, Z2)` with `Z1 >= Z2` almost surely and
/// prescribed marginals; the carrier of every coupled-walk run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotoneCoupling {
    pairs: Vec<(u64, u64, f64)>,
    #[serde(skip)]
    cum: Vec<f64>,
}

impl MonotoneCoupling {
    /// Comonotone (inverse-CDF) coupling of a strictly dominating pair:
    /// `(Z1, Z2) = (Q1(U), Q2(U))` for one shared uniform `U`.
    pub fn quantile(p1: &ProgenyDistribution, p2: &ProgenyDistribution) -> Result<Self> {
        if !dominates(p1, p2) {
            return Err(Error::DominanceViolation(format!(
                "{p1} does not strictly dominate {p2}"
            )));
        }
        let pairs = comonotone_pairs(&p1.support, &p1.cdf, &p2.support, &p2.cdf);
        let coupling = Self::assemble(pairs)?;
        coupling.check_marginals(p1, p2)?;
        Ok(coupling)
    }

    /// Diagonal coupling `(Z, Z)` of a distribution with itself; lets the
    /// regenerative estimator run a single distribution through the
    /// two-walk machinery (both walks then share one trajectory).
    pub fn diagonal(p: &ProgenyDistribution) -> Self {
        let pairs = p.atoms().map(|(v, m)| (v, v, m)).collect();
        Self::assemble(pairs).expect("valid distribution gives valid diagonal")
    }

    /// Builds from explicit `(z1, z2, prob)` rows (an alternative
    /// coupling supplied by the caller). Rows are merged and normalized;
    /// each row must satisfy `z1 >= z2`.
    pub fn from_rows(rows: &[(u64, u64, f64)]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::CouplingUnavailable("empty coupling table".into()));
        }
        let mut merged: Vec<(u64, u64, f64)> = Vec::with_capacity(rows.len());
        for &(z1, z2, w) in rows {
            if z1 == 0 || z2 == 0 {
                return Err(Error::CouplingUnavailable(
                    "coupling row with value 0".into(),
                ));
            }
            if z1 < z2 {
                return Err(Error::CouplingUnavailable(format!(
                    "row ({z1}, {z2}) violates z1 >= z2"
                )));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(Error::CouplingUnavailable(format!(
                    "row ({z1}, {z2}) has bad probability {w}"
                )));
            }
            merged.push((z1, z2, w));
        }
        merged.sort_by_key(|&(a, b, _)| (a, b));
        merged.dedup_by(|next, prev| {
            if next.0 == prev.0 && next.1 == prev.1 {
                prev.2 += next.2;
                true
            } else {
                false
            }
        });
        let total: f64 = merged.iter().map(|&(_, _, w)| w).sum();
        if total <= 0.0 {
            return Err(Error::CouplingUnavailable("zero total probability".into()));
        }
        let pairs = merged
            .into_iter()
            .map(|(a, b, w)| (a, b, w / total))
            .filter(|&(_, _, w)| w >= MASS_TOL)
            .collect();
        Self::assemble(pairs)
    }

    /// Reads a `z1,z2,prob` CSV (header required) and validates the
    /// marginals against the given pair.
    pub fn from_csv<R: BufRead>(
        reader: R,
        p1: &ProgenyDistribution,
        p2: &ProgenyDistribution,
    ) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::CouplingUnavailable(format!("read error: {e}")))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if lineno == 0 {
                let header: Vec<&str> = line.split(',').map(str::trim).collect();
                if header != ["z1", "z2", "prob"] {
                    return Err(Error::CouplingUnavailable(format!(
                        "expected header z1,z2,prob, got {line:?}"
                    )));
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(Error::CouplingUnavailable(format!(
                    "line {}: expected 3 fields",
                    lineno + 1
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse().map_err(|_| {
                    Error::CouplingUnavailable(format!("line {}: bad number {s:?}", lineno + 1))
                })
            };
            let z1 = parse(fields[0])? as u64;
            let z2 = parse(fields[1])? as u64;
            rows.push((z1, z2, parse(fields[2])?));
        }
        let coupling = Self::from_rows(&rows)?;
        coupling.check_marginals(p1, p2)?;
        Ok(coupling)
    }

    fn assemble(pairs: Vec<(u64, u64, f64)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::CouplingUnavailable("empty coupling table".into()));
        }
        let mut cum = Vec::with_capacity(pairs.len());
        let mut acc = 0.0;
        for &(_, _, w) in &pairs {
            acc += w;
            cum.push(acc);
        }
        *cum.last_mut().expect("nonempty") = 1.0;
        Ok(Self { pairs, cum })
    }

    fn check_marginals(&self, p1: &ProgenyDistribution, p2: &ProgenyDistribution) -> Result<()> {
        // loose factor: each marginal atom accumulates several rows
        let tol = 64.0 * MASS_TOL;
        for (select, p, side) in [(0usize, p1, "z1"), (1, p2, "z2")] {
            let mut atoms: Vec<(u64, f64)> = Vec::new();
            for &(z1, z2, w) in &self.pairs {
                let z = if select == 0 { z1 } else { z2 };
                match atoms.iter_mut().find(|(v, _)| *v == z) {
                    Some((_, acc)) => *acc += w,
                    None => atoms.push((z, w)),
                }
            }
            atoms.sort_by_key(|&(v, _)| v);
            let expected: Vec<(u64, f64)> = p.atoms().collect();
            let ok = atoms.len() == expected.len()
                && atoms
                    .iter()
                    .zip(&expected)
                    .all(|(&(v, m), &(ev, em))| v == ev && (m - em).abs() <= tol);
            if !ok {
                return Err(Error::CouplingMismatch(format!(
                    "{side} marginal does not match {p}"
                )));
            }
        }
        Ok(())
    }

    /// `(z1, z2, prob)` rows in lexicographic order.
    pub fn pairs(&self) -> &[(u64, u64, f64)] {
        &self.pairs
    }

    /// `E[f(Z1, Z2)]` as an exact finite sum.
    pub fn expectation<F: Fn(u64, u64) -> f64>(&self, f: F) -> f64 {
        self.pairs.iter().map(|&(a, b, w)| w * f(a, b)).sum()
    }

    /// One coupled draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (u64, u64) {
        let u = unit_draw(rng);
        let idx = self.cum.partition_point(|&c| c < u - MASS_TOL);
        let (z1, z2, _) = self.pairs[idx.min(self.pairs.len() - 1)];
        (z1, z2)
    }
}

/// Comonotone pairing of two step CDFs over the merged breakpoint
/// refinement. Requires `cdf_a(t) <= cdf_b(t)` pointwise so that
/// `value_a >= value_b` on every refined interval.
fn comonotone_pairs(
    support_a: &[u64],
    cdf_a: &[f64],
    support_b: &[u64],
    cdf_b: &[f64],
) -> Vec<(u64, u64, f64)> {
    let mut cuts: Vec<f64> = cdf_a.iter().chain(cdf_b.iter()).copied().collect();
    cuts.sort_by(|x, y| x.partial_cmp(y).expect("finite cdf values"));
    cuts.dedup_by(|next, prev| (*next - *prev).abs() <= MASS_TOL / 8.0);
    let quantile = |support: &[u64], cdf: &[f64], u: f64| -> u64 {
        let idx = cdf.partition_point(|&c| c < u - MASS_TOL);
        support[idx.min(support.len() - 1)]
    };
    let mut out: Vec<(u64, u64, f64)> = Vec::new();
    let mut prev = 0.0;
    for &cut in &cuts {
        let w = cut - prev;
        if w <= MASS_TOL / 8.0 {
            continue;
        }
        let za = quantile(support_a, cdf_a, cut);
        let zb = quantile(support_b, cdf_b, cut);
        match out.last_mut() {
            Some((a, b, acc)) if *a == za && *b == zb => *acc += w,
            _ => out.push((za, zb, w)),
        }
        prev = cut;
    }
    debug_assert!((prev - 1.0).abs() <= 1e-9, "breakpoints must end at 1");
    out
}

/// Exact existence criterion for the `ell`-fold vector coupling:
/// the minimum of `ell` i.i.d. draws from `p1` stochastically dominates
/// (weakly) the maximum of `ell` i.i.d. draws from `p2`, i.e.
/// `1 - (1 - F1(t))^ell <= F2(t)^ell` for every `t`.
pub fn ell_fold_check(p1: &ProgenyDistribution, p2: &ProgenyDistribution, ell: u32) -> bool {
    assert!(ell >= 1, "ell must be a positive integer");
    union_support(p1, p2).into_iter().all(|t| {
        let min_cdf = 1.0 - (1.0 - p1.cdf_at(t)).powi(ell as i32);
        let max_cdf = p2.cdf_at(t).powi(ell as i32);
        min_cdf <= max_cdf + MASS_TOL
    })
}

/// Sampler for the `ell`-fold vector coupling: emits
/// `(z1_vec, z2_vec)` of length `ell` each, with i.i.d. marginals from
/// `p1` and `p2` respectively and `min(z1_vec) >= max(z2_vec)` surely.
#[derive(Debug, Clone)]
pub struct EllFoldCoupling {
    p1: ProgenyDistribution,
    p2: ProgenyDistribution,
    ell: u32,
    /// Comonotone law of `(min of ell from p1, max of ell from p2)`.
    extreme_pairs: Vec<(u64, u64, f64)>,
    extreme_cum: Vec<f64>,
}

impl EllFoldCoupling {
    pub fn new(p1: &ProgenyDistribution, p2: &ProgenyDistribution, ell: u32) -> Result<Self> {
        if ell == 0 {
            return Err(Error::CouplingUnavailable("ell must be >= 1".into()));
        }
        if !ell_fold_check(p1, p2, ell) {
            return Err(Error::CouplingUnavailable(format!(
                "min of {ell} from {p1} does not dominate max of {ell} from {p2}"
            )));
        }
        let min_cdf: Vec<f64> = p1
            .cdf
            .iter()
            .map(|&c| 1.0 - (1.0 - c).powi(ell as i32))
            .collect();
        let max_cdf: Vec<f64> = p2.cdf.iter().map(|&c| c.powi(ell as i32)).collect();
        let extreme_pairs = comonotone_pairs(&p1.support, &min_cdf, &p2.support, &max_cdf);
        let mut extreme_cum = Vec::with_capacity(extreme_pairs.len());
        let mut acc = 0.0;
        for &(_, _, w) in &extreme_pairs {
            acc += w;
            extreme_cum.push(acc);
        }
        *extreme_cum.last_mut().expect("nonempty") = 1.0;
        Ok(Self {
            p1: p1.clone(),
            p2: p2.clone(),
            ell,
            extreme_pairs,
            extreme_cum,
        })
    }

    /// Draws the coupled pair of vectors.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<u64>, Vec<u64>) {
        let u = unit_draw(rng);
        let idx = self.extreme_cum.partition_point(|&c| c < u - MASS_TOL);
        let (m1, m2, _) = self.extreme_pairs[idx.min(self.extreme_pairs.len() - 1)];
        let v1 = conditioned_vector(&self.p1, self.ell, m1, Extreme::Min, rng);
        let v2 = conditioned_vector(&self.p2, self.ell, m2, Extreme::Max, rng);
        debug_assert!(v1.iter().min() >= v2.iter().max());
        (v1, v2)
    }
}

/// One-shot convenience wrapper around [`EllFoldCoupling`].
pub fn ell_fold_sample<R: Rng + ?Sized>(
    p1: &ProgenyDistribution,
    p2: &ProgenyDistribution,
    ell: u32,
    rng: &mut R,
) -> Result<(Vec<u64>, Vec<u64>)> {
    Ok(EllFoldCoupling::new(p1, p2, ell)?.sample(rng))
}

#[derive(Clone, Copy)]
enum Extreme {
    Min,
    Max,
}

/// Samples an i.i.d. vector of length `ell` from `p` conditioned on its
/// min (resp. max) equalling `m`: first the multiplicity of `m` (its
/// conditional law is binomial-shaped over `1..=ell`), then the free
/// coordinates i.i.d. from `p` restricted strictly beyond `m`, then a
/// uniform shuffle to restore exchangeability.
fn conditioned_vector<R: Rng + ?Sized>(
    p: &ProgenyDistribution,
    ell: u32,
    m: u64,
    side: Extreme,
    rng: &mut R,
) -> Vec<u64> {
    let atom = p.mass_at(m);
    debug_assert!(atom > 0.0, "extreme value must be a support atom");
    // mass strictly beyond m on the free side
    let beyond = match side {
        Extreme::Min => 1.0 - p.cdf_at(m),
        Extreme::Max => p.cdf_at(m) - atom,
    };
    // weights[k-1] ~ C(ell, k) atom^k beyond^(ell-k), k = 1..=ell
    let ell_f = ell as f64;
    let mut weights = Vec::with_capacity(ell as usize);
    let mut w = ell_f * atom * beyond.powi(ell as i32 - 1);
    for k in 1..=ell {
        weights.push(w);
        let kf = k as f64;
        if beyond > 0.0 {
            w *= (ell_f - kf) / (kf + 1.0) * (atom / beyond);
        } else {
            w = 0.0;
        }
    }
    if beyond <= 0.0 {
        // all coordinates must equal m
        weights.iter_mut().for_each(|w| *w = 0.0);
        weights[ell as usize - 1] = 1.0;
    }
    let total: f64 = weights.iter().sum();
    let mut pick = unit_draw(rng) * total;
    let mut count = ell;
    for (k, &w) in weights.iter().enumerate() {
        pick -= w;
        if pick <= 0.0 {
            count = k as u32 + 1;
            break;
        }
    }
    let mut out = vec![m; count as usize];
    for _ in count..ell {
        out.push(sample_beyond(p, m, side, rng));
    }
    out.shuffle(rng);
    out
}

fn sample_beyond<R: Rng + ?Sized>(
    p: &ProgenyDistribution,
    m: u64,
    side: Extreme,
    rng: &mut R,
) -> u64 {
    let keep = |v: u64| match side {
        Extreme::Min => v > m,
        Extreme::Max => v < m,
    };
    let total: f64 = p.atoms().filter(|&(v, _)| keep(v)).map(|(_, w)| w).sum();
    debug_assert!(total > 0.0);
    let mut pick = unit_draw(rng) * total;
    let mut last = None;
    for (v, w) in p.atoms().filter(|&(v, _)| keep(v)) {
        pick -= w;
        last = Some(v);
        if pick <= 0.0 {
            break;
        }
    }
    last.expect("restricted support nonempty")
}

/// Tail exponent `-log f'(0) / log f'(1)` of the generating function:
/// `f'(0)` is the mass at 1 and `f'(1)` the mean. Returns `+inf` when
/// the distribution puts no mass on 1; errors unless the mean exceeds 1.
pub fn alpha(p: &ProgenyDistribution) -> Result<f64> {
    if p.mean() <= 1.0 {
        return Err(Error::MeanNotSupercritical { mean: p.mean() });
    }
    let p1 = p.mass_at(1);
    if p1 == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-p1.ln() / p.mean().ln())
}

/// Population size of generation `k` of a branching process with
/// progeny `p`, started from a single ancestor, capped at `cap`.
///
/// Each generation is drawn as one multinomial split of the current
/// population over the support (a chain of binomials), which has exactly
/// the law of summing per-individual draws.
pub fn generation_k_sample_capped<R: Rng + ?Sized>(
    p: &ProgenyDistribution,
    k: u32,
    cap: u64,
    rng: &mut R,
) -> Result<u64> {
    let mut population: u64 = 1;
    for generation in 1..=k {
        let mut next: u64 = 0;
        let mut remaining = population;
        let mut remaining_mass = 1.0;
        for (i, (value, mass)) in p.atoms().enumerate() {
            if remaining == 0 {
                break;
            }
            let count = if i + 1 == p.support.len() || remaining_mass <= mass {
                remaining
            } else {
                let q = (mass / remaining_mass).clamp(0.0, 1.0);
                Binomial::new(remaining, q)
                    .expect("probability in range")
                    .sample(rng)
            };
            remaining -= count;
            remaining_mass -= mass;
            next = next
                .checked_add(
                    count
                        .checked_mul(value)
                        .ok_or(Error::PopulationOverflow { cap, generation })?,
                )
                .ok_or(Error::PopulationOverflow { cap, generation })?;
        }
        if next > cap {
            return Err(Error::PopulationOverflow { cap, generation });
        }
        population = next;
    }
    Ok(population)
}

/// [`generation_k_sample_capped`] with the default cap of `10^9`.
pub fn generation_k_sample<R: Rng + ?Sized>(
    p: &ProgenyDistribution,
    k: u32,
    rng: &mut R,
) -> Result<u64> {
    generation_k_sample_capped(p, k, DEFAULT_POPULATION_CAP, rng)
}

/// Random strictly dominating pair with support bounded by
/// `max_value`; a test-support utility (also used by the acceptance
/// suite) built by drawing monotone pair-atoms and reading off the
/// marginals, which makes dominance hold by construction.
pub fn random_dominating_pair<R: Rng + ?Sized>(
    rng: &mut R,
    max_value: u64,
    max_atoms: usize,
) -> (ProgenyDistribution, ProgenyDistribution) {
    assert!(max_value >= 2 && max_atoms >= 1);
    loop {
        let n_atoms = rng.random_range(1..=max_atoms);
        let mut rows = Vec::with_capacity(n_atoms + 1);
        for _ in 0..n_atoms {
            let z2 = rng.random_range(1..=max_value);
            let z1 = rng.random_range(z2..=max_value);
            rows.push((z1, z2, rng.random_range(1..=1000) as f64));
        }
        // force at least one strictly separated atom so the marginals differ
        let z2 = rng.random_range(1..max_value);
        let z1 = rng.random_range(z2 + 1..=max_value);
        rows.push((z1, z2, rng.random_range(1..=1000) as f64));
        let p1 = ProgenyDistribution::from_pairs(
            &rows.iter().map(|&(a, _, w)| (a, w)).collect::<Vec<_>>(),
        )
        .expect("positive weights");
        let p2 = ProgenyDistribution::from_pairs(
            &rows.iter().map(|&(_, b, w)| (b, w)).collect::<Vec<_>>(),
        )
        .expect("positive weights");
        if dominates(&p1, &p2) {
            return (p1, p2);
        }
        // mass truncation can in principle erase the separating atom; redraw
    }
}
