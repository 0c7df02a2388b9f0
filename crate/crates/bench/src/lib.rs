//! Shared fixtures for the benchmark targets.

use gwspeed_core::progeny::{MonotoneCoupling, ProgenyDistribution};

/// The standard dominating pair exercised throughout the benches.
pub fn uniform_pair() -> (ProgenyDistribution, ProgenyDistribution, MonotoneCoupling) {
    let p1 = ProgenyDistribution::uniform_on(&[1, 4]).expect("valid law");
    let p2 = ProgenyDistribution::uniform_on(&[1, 2]).expect("valid law");
    let coupling = MonotoneCoupling::quantile(&p1, &p2).expect("dominating pair");
    (p1, p2, coupling)
}
