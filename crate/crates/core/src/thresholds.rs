//! Bias thresholds above which a dominating progeny law provably yields
//! the faster walk, plus numeric evaluation of the underlying gap
//! bound.
//!
//! Everything is driven by two exact expectations of a dominated pair
//! `(p1, p2)` with a monotone coupling `(Z1', Z2')`:
//!
//! * the crossing expectation `A = E[(1/Z1 - 1/Z2) 1{Z1 < Z2}]` under
//!   independent draws, the mass with which the dominated law overtakes
//!   the dominating one when sampled separately, and
//! * the separation expectation `D = E[1/Z2' - 1/Z1']` under the
//!   coupling, which is positive exactly when the coupled laws split.
//!
//! The headline threshold is `beta1 = c_delta * min(A/D, E[1-Z2'/Z1']/D
//! + 1)`, floored at `23/4 + delta`; the per-block gap in depth gains
//! admits two explicit lower bounds (one per ratio branch) whose
//! penalty series converge only for `beta > 23/4`, where the block-tail
//! rate `r = 27/(4(1+beta))` drops below one.

use rand::Rng;
use rand_distr::{Binomial, Distribution as RandDistribution};
use serde::Serialize;

use crate::error::Error;
use crate::progeny::{
    alpha, generation_k_sample_capped, MonotoneCoupling, ProgenyDistribution,
    DEFAULT_POPULATION_CAP,
};
use crate::stats::RunningMoments;
use crate::Result;

/// Bias floor under which the block-tail series diverge.
pub const SERIES_EDGE: f64 = 23.0 / 4.0;

/// Crossing expectation `E[(1/Z1 - 1/Z2) 1{Z1 < Z2}]` over independent
/// draws from the two laws, computed exactly over the atoms.
pub fn crossing_expectation(p1: &ProgenyDistribution, p2: &ProgenyDistribution) -> f64 {
    let mut total = 0.0;
    for (z1, m1) in p1.atoms() {
        for (z2, m2) in p2.atoms() {
            if z1 < z2 {
                total += m1 * m2 * (1.0 / z1 as f64 - 1.0 / z2 as f64);
            }
        }
    }
    total
}

/// Separation expectation `E[1/Z2' - 1/Z1']` of a coupling.
pub fn separation_expectation(coupling: &MonotoneCoupling) -> f64 {
    coupling.expectation(|z1, z2| 1.0 / z2 as f64 - 1.0 / z1 as f64)
}

/// Which ratio produced `beta1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ThresholdBranch {
    /// `A / D`, from the independent crossing mass.
    Crossing,
    /// `E[1 - Z2'/Z1'] / D + 1`, bounded by one plus the dominated
    /// law's maximum support.
    Support,
}

#[derive(Debug, Clone, Serialize)]
pub struct ThresholdReport {
    pub beta1: f64,
    /// `max(beta1, 23/4 + delta)`.
    pub beta0: f64,
    pub delta: f64,
    pub c_delta: f64,
    pub branch: ThresholdBranch,
    pub crossing_ratio: f64,
    pub support_ratio: f64,
    pub crossing_expectation: f64,
    pub separation_expectation: f64,
}

/// Exact threshold computation for a dominated pair under `coupling`.
pub fn threshold_report(
    p1: &ProgenyDistribution,
    p2: &ProgenyDistribution,
    coupling: &MonotoneCoupling,
    c_delta: f64,
    delta: f64,
) -> Result<ThresholdReport> {
    if !c_delta.is_finite() || c_delta <= 0.0 || !delta.is_finite() || delta <= 0.0 {
        return Err(Error::InvalidDistribution(format!(
            "threshold needs positive finite c_delta and delta, got {c_delta} and {delta}"
        )));
    }
    let a = crossing_expectation(p1, p2);
    let d = separation_expectation(coupling);
    if d <= 0.0 {
        return Err(Error::DegenerateCoupling(format!(
            "separation expectation is {d}; the coupled laws never split"
        )));
    }
    let crossing_ratio = a / d;
    let support_ratio = coupling.expectation(|z1, z2| 1.0 - z2 as f64 / z1 as f64) / d + 1.0;
    let (ratio, branch) = if crossing_ratio <= support_ratio {
        (crossing_ratio, ThresholdBranch::Crossing)
    } else {
        (support_ratio, ThresholdBranch::Support)
    };
    let beta1 = c_delta * ratio;
    Ok(ThresholdReport {
        beta1,
        beta0: beta1.max(SERIES_EDGE + delta),
        delta,
        c_delta,
        branch,
        crossing_ratio,
        support_ratio,
        crossing_expectation: a,
        separation_expectation: d,
    })
}

/// Upper bound on `sum_{k >= k0} poly(k) * r^(k - shift)`, truncated
/// once a certified geometric majorant of the tail drops below `1e-15`
/// of the partial sum. Successive-term ratios of these summands are
/// decreasing (the polynomials are products of positive increasing
/// linear factors), so the tail after `K` is at most
/// `t_{K+1} / (1 - t_{K+2}/t_{K+1})`.
fn certified_series(
    r: f64,
    beta: f64,
    k0: u64,
    shift: u64,
    poly: impl Fn(f64) -> f64,
) -> Result<f64> {
    if !(0.0..1.0).contains(&r) {
        return Err(Error::SeriesDivergent { beta, ratio: r });
    }
    let term = |k: u64| poly(k as f64) * r.powi((k - shift) as i32);
    let mut sum = 0.0;
    for k in k0.. {
        sum += term(k);
        let t1 = term(k + 1);
        if t1 == 0.0 {
            return Ok(sum);
        }
        let rho = term(k + 2) / t1;
        debug_assert!(rho > r && rho < term(k + 1) / term(k));
        if rho < 1.0 {
            let tail = t1 / (1.0 - rho);
            if tail <= 1e-15 * sum.abs() {
                return Ok(sum + tail);
            }
        }
    }
    unreachable!("series loop always returns for r < 1")
}

/// The two explicit lower bounds on the expected per-block depth-gain
/// difference, and their maximum. Positive values certify that the
/// dominating law's walk is strictly faster at this bias.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GapBound {
    pub beta: f64,
    /// Branch driven by the independent crossing expectation; its
    /// penalty decays one power of `beta` faster, so it wins
    /// asymptotically.
    pub crossing_form: f64,
    /// Branch driven by the coupled separation alone.
    pub support_form: f64,
    pub best: f64,
}

/// Evaluates both gap bounds at bias `beta` with penalty scale `c`.
/// Errors with [`Error::SeriesDivergent`] for `beta <= 23/4`.
pub fn lower_bound_gap(
    beta: f64,
    p1: &ProgenyDistribution,
    p2: &ProgenyDistribution,
    coupling: &MonotoneCoupling,
    c: f64,
) -> Result<GapBound> {
    if !beta.is_finite() || !c.is_finite() || c <= 0.0 {
        return Err(Error::InvalidDistribution(format!(
            "gap bound needs finite beta and positive c, got beta={beta} c={c}"
        )));
    }
    let r = 27.0 / (4.0 * (1.0 + beta));
    if r >= 1.0 {
        return Err(Error::SeriesDivergent { beta, ratio: r });
    }
    let d = separation_expectation(coupling);
    let a = crossing_expectation(p1, p2);
    let e = coupling.expectation(|z1, z2| 1.0 - z2 as f64 / z1 as f64);
    let main = 2.0
        * (beta / (beta + 1.0)).powi(4)
        * coupling
            .expectation(|z1, z2| (z1 as f64 - z2 as f64) / (4.0 * z2 as f64 * z1 as f64 * beta));
    let series_crossing = certified_series(r, beta, 2, 2, |k| {
        16.0 * k * (k - 1.0) * (3.0 * k + 2.0).powi(2)
    })?;
    let crossing_penalty =
        c * 729.0 * beta / (16.0 * (beta - 1.0) * (beta + 1.0).powi(2)) * a * series_crossing;
    let series_sq = certified_series(r, beta, 1, 0, |k| 2.0 * (3.0 * k + 2.0).powi(2))?;
    let series_lin = certified_series(r, beta, 1, 0, |k| 2.0 * k * (3.0 * k + 2.0))?;
    let support_penalty = c * beta / (beta - 1.0) * (e * series_sq + d * series_lin);
    let crossing_form = main - crossing_penalty;
    let support_form = main - support_penalty;
    Ok(GapBound {
        beta,
        crossing_form,
        support_form,
        best: crossing_form.max(support_form),
    })
}

/// Smallest bias (to within `1e-6`) at which [`lower_bound_gap`] turns
/// positive, floored at the series edge plus `delta`. Returns the floor
/// itself when the bound is already positive there.
pub fn numeric_threshold(
    p1: &ProgenyDistribution,
    p2: &ProgenyDistribution,
    coupling: &MonotoneCoupling,
    c: f64,
    delta: f64,
) -> Result<f64> {
    if !delta.is_finite() || delta <= 0.0 {
        return Err(Error::InvalidDistribution(format!(
            "numeric threshold needs delta > 0, got {delta}"
        )));
    }
    let positive =
        |beta: f64| -> Result<bool> { Ok(lower_bound_gap(beta, p1, p2, coupling, c)?.best > 0.0) };
    let edge = SERIES_EDGE + delta;
    if positive(edge)? {
        return Ok(edge);
    }
    let mut lo = edge;
    let mut hi = edge;
    let mut bracketed = false;
    for _ in 0..64 {
        lo = hi;
        hi *= 2.0;
        if positive(hi)? {
            bracketed = true;
            break;
        }
    }
    if !bracketed {
        return Err(Error::DegenerateCoupling(format!(
            "gap bound never turned positive up to beta={hi:.3e}"
        )));
    }
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if positive(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Scale constant of the fold-comparison threshold: `(27/4) * 3^(5/3)`.
pub fn ell_scale() -> f64 {
    6.75 * 243f64.cbrt()
}

/// Bias threshold when the dominated law is only beaten by an
/// `ell`-fold maximum: `max(ell_scale * beta1^(1/ell), 23/4 + delta)`.
pub fn ell_threshold(beta1: f64, ell: u32, delta: f64) -> Result<f64> {
    if ell == 0 || !beta1.is_finite() || beta1 < 0.0 || !delta.is_finite() || delta <= 0.0 {
        return Err(Error::InvalidDistribution(format!(
            "fold threshold needs ell >= 1, beta1 >= 0 and delta > 0, got \
             ell={ell} beta1={beta1} delta={delta}"
        )));
    }
    Ok((ell_scale() * beta1.powf(1.0 / ell as f64)).max(SERIES_EDGE + delta))
}

/// Threshold rescaled by a minimum-degree floor `d`: laws whose support
/// never drops below `d` compare at bias `beta0 / d` already.
pub fn d_scaled_threshold(
    beta0: f64,
    d: u64,
    p1: &ProgenyDistribution,
    p2: &ProgenyDistribution,
) -> Result<f64> {
    if d == 0 || !beta0.is_finite() || beta0 <= 0.0 {
        return Err(Error::InvalidDistribution(format!(
            "scaled threshold needs d >= 1 and beta0 > 0, got d={d} beta0={beta0}"
        )));
    }
    for p in [p1, p2] {
        if p.min_support() < d {
            return Err(Error::MinDegreeViolation {
                min_support: p.min_support(),
                d,
            });
        }
    }
    Ok(beta0 / d as f64)
}

/// Generation-`k` population pair grown through the coupling: each
/// matched pair of individuals draws one coupled offspring pair, and
/// the dominating line's excess individuals draw from its marginal
/// alone. Pathwise `n1 >= n2` is preserved, so the generation counts
/// stay dominated.
pub fn coupled_generation_sample<R: Rng + ?Sized>(
    coupling: &MonotoneCoupling,
    p1: &ProgenyDistribution,
    k: u32,
    cap: u64,
    rng: &mut R,
) -> Result<(u64, u64)> {
    let mut n1: u64 = 1;
    let mut n2: u64 = 1;
    for generation in 1..=k {
        let overflow = || Error::PopulationOverflow { cap, generation };
        let mut next1: u64 = 0;
        let mut next2: u64 = 0;
        // multinomial split of the matched individuals over pair atoms
        let pairs = coupling.pairs();
        let mut remaining = n2;
        let mut remaining_mass = 1.0;
        for (i, &(z1, z2, w)) in pairs.iter().enumerate() {
            if remaining == 0 {
                break;
            }
            let count = if i + 1 == pairs.len() || remaining_mass <= w {
                remaining
            } else {
                let q = (w / remaining_mass).clamp(0.0, 1.0);
                Binomial::new(remaining, q)
                    .expect("probability in range")
                    .sample(rng)
            };
            remaining -= count;
            remaining_mass -= w;
            next1 = count
                .checked_mul(z1)
                .and_then(|add| next1.checked_add(add))
                .ok_or_else(overflow)?;
            next2 = count
                .checked_mul(z2)
                .and_then(|add| next2.checked_add(add))
                .ok_or_else(overflow)?;
        }
        // excess individuals of the dominating line
        let mut remaining = n1 - n2;
        let mut remaining_mass = 1.0;
        let support_len = p1.support().len();
        for (i, (value, mass)) in p1.atoms().enumerate() {
            if remaining == 0 {
                break;
            }
            let count = if i + 1 == support_len || remaining_mass <= mass {
                remaining
            } else {
                let q = (mass / remaining_mass).clamp(0.0, 1.0);
                Binomial::new(remaining, q)
                    .expect("probability in range")
                    .sample(rng)
            };
            remaining -= count;
            remaining_mass -= mass;
            next1 = count
                .checked_mul(value)
                .and_then(|add| next1.checked_add(add))
                .ok_or_else(overflow)?;
        }
        if next1 > cap || next2 > cap {
            return Err(overflow());
        }
        debug_assert!(next1 >= next2);
        n1 = next1;
        n2 = next2;
    }
    Ok((n1, n2))
}

/// Monte Carlo crossing ratio at generation `k`: independent
/// generation-`k` draws feed the numerator, coupled generation growth
/// feeds the denominator.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct KEvaluation {
    pub k: u32,
    pub crossing_ratio: f64,
    pub std_error: f64,
    /// 99% upper confidence bound; infinite when the denominator is
    /// statistically indistinguishable from zero.
    pub upper_confidence: f64,
    pub num_mean: f64,
    pub den_mean: f64,
    pub samples: u64,
}

pub fn generation_crossing_ratio<R: Rng + ?Sized>(
    p1: &ProgenyDistribution,
    p2: &ProgenyDistribution,
    coupling: &MonotoneCoupling,
    k: u32,
    samples: u64,
    cap: u64,
    rng: &mut R,
) -> Result<KEvaluation> {
    if samples < 2 {
        return Err(Error::InvalidDistribution(
            "crossing ratio needs at least 2 samples".into(),
        ));
    }
    let mut num = RunningMoments::new();
    for _ in 0..samples {
        let z1 = generation_k_sample_capped(p1, k, cap, rng)?;
        let z2 = generation_k_sample_capped(p2, k, cap, rng)?;
        num.push(if z1 < z2 {
            1.0 / z1 as f64 - 1.0 / z2 as f64
        } else {
            0.0
        });
    }
    let mut den = RunningMoments::new();
    for _ in 0..samples {
        let (z1, z2) = coupled_generation_sample(coupling, p1, k, cap, rng)?;
        den.push(1.0 / z2 as f64 - 1.0 / z1 as f64);
    }
    let (nm, dm) = (num.mean(), den.mean());
    let resolvable = dm > 3.0 * den.std_error() && dm > 0.0;
    let ratio = if dm > 0.0 { nm / dm } else { f64::INFINITY };
    let se = if dm > 0.0 {
        ((num.std_error() / dm).powi(2) + (nm * den.std_error() / (dm * dm)).powi(2)).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(KEvaluation {
        k,
        crossing_ratio: ratio,
        std_error: se,
        upper_confidence: if resolvable {
            ratio + 2.576 * se
        } else {
            f64::INFINITY
        },
        num_mean: nm,
        den_mean: dm,
        samples,
    })
}

/// Search result of [`find_k`].
#[derive(Debug, Clone, Serialize)]
pub struct FindKReport {
    /// Smallest generation whose certified crossing ratio satisfies
    /// `c * ratio < beta`, if one was found within the search cap.
    pub k: Option<u32>,
    pub beta: f64,
    pub c: f64,
    pub evaluations: Vec<KEvaluation>,
    /// Whether `mean1 > mean2^max(2/alpha, 1/alpha + 1)` holds, the
    /// condition under which the ratio is guaranteed to decay.
    pub mean_condition_ok: bool,
    pub warning: Option<String>,
}

/// Finds the smallest generation `k` at which the Monte Carlo crossing
/// ratio's 99% upper bound satisfies `c * ratio < beta`. The mean
/// condition is advisory: its failure only withdraws the guarantee that
/// larger `k` keeps shrinking the ratio.
pub fn find_k<R: Rng + ?Sized>(
    p1: &ProgenyDistribution,
    p2: &ProgenyDistribution,
    coupling: &MonotoneCoupling,
    beta: f64,
    c: f64,
    samples: u64,
    max_k: u32,
    rng: &mut R,
) -> Result<FindKReport> {
    if !beta.is_finite() || beta <= 0.0 || !c.is_finite() || c <= 0.0 || max_k == 0 {
        return Err(Error::InvalidDistribution(format!(
            "generation search needs positive beta, c and max_k, got \
             beta={beta} c={c} max_k={max_k}"
        )));
    }
    let a = alpha(p1)?;
    let exponent = if a.is_infinite() {
        1.0
    } else {
        (2.0 / a).max(1.0 / a + 1.0)
    };
    let required = p2.mean().powf(exponent);
    let mean_condition_ok = p1.mean() > required;
    let warning = (!mean_condition_ok).then(|| {
        format!(
            "mean condition fails: {} <= {:.6} = mean2^{:.4}; the crossing ratio \
             need not decay with the generation",
            p1.mean(),
            required,
            exponent
        )
    });
    let mut evaluations = Vec::new();
    let mut found = None;
    for k in 1..=max_k {
        let eval =
            generation_crossing_ratio(p1, p2, coupling, k, samples, DEFAULT_POPULATION_CAP, rng)?;
        let ok = c * eval.upper_confidence < beta;
        evaluations.push(eval);
        if ok {
            found = Some(k);
            break;
        }
    }
    Ok(FindKReport {
        k: found,
        beta,
        c,
        evaluations,
        mean_condition_ok,
        warning,
    })
}
