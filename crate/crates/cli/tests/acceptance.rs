//! Acceptance suite: twelve numbered end-to-end criteria.
//!
//! Each test prints one `PASS criterion N` line (with timing) on
//! success and panics with a `FAIL criterion N` message otherwise, so
//! the libtest result line per `criterion_NN_*` test doubles as the
//! per-criterion verdict. Sample sizes are fixed and seeds are fixed,
//! so every run is a deterministic replay.

use std::process::Command;
use std::time::Instant;

use gwspeed_core::progeny::{
    dominates, ell_fold_check, random_dominating_pair, EllFoldCoupling, MonotoneCoupling,
    ProgenyDistribution,
};
use gwspeed_core::regen::{find_regenerations, BlockSampler, SamplerConfig};
use gwspeed_core::rng::derive_stream;
use gwspeed_core::speed::{
    closed_form_regular, speed_aidekon, speed_ergodic, speed_regen, speed_unit_bias_exact,
    SpeedEstimate,
};
use gwspeed_core::stats::{agree_within, RunningMoments};
use gwspeed_core::thresholds::{lower_bound_gap, numeric_threshold, threshold_report, SERIES_EDGE};
use gwspeed_core::walk::{self, BiasParams};

/// Master seed of the whole suite; each criterion uses its own stream.
const SEED: u64 = 20_260_815;

fn pass(label: &str, t0: Instant) {
    println!("PASS {label} in {:.2?}", t0.elapsed());
}

fn budget(criterion: u32, t0: Instant, seconds: u64) {
    let dt = t0.elapsed();
    assert!(
        dt.as_secs() < seconds,
        "FAIL criterion {criterion}: took {dt:?}, budget {seconds}s"
    );
}

fn uniform(atoms: &[u64]) -> ProgenyDistribution {
    ProgenyDistribution::uniform_on(atoms).unwrap()
}

fn point(b: u64) -> ProgenyDistribution {
    ProgenyDistribution::point_mass(b).unwrap()
}

#[test]
fn criterion_01_step_table_audit() {
    let t0 = Instant::now();
    let betas = [1.5, 2.0, 5.76, 8.0, 50.0];
    let report = walk::audit_tables(20, &betas, 1)
        .unwrap_or_else(|e| panic!("FAIL criterion 1: float audit rejected: {e}"));
    assert!(
        report.max_tiling_err < 1e-12 && report.max_marginal_err < 1e-12,
        "FAIL criterion 1: table errors too large: {report:?}"
    );
    let rationals = [(3, 2), (2, 1), (144, 25), (8, 1), (50, 1)];
    walk::exact::audit_tables_exact(20, &rationals, 1)
        .unwrap_or_else(|e| panic!("FAIL criterion 1: exact audit rejected: {e}"));
    budget(1, t0, 10);
    pass(
        &format!(
            "criterion 1: {} float tables under 1e-12 plus exact rational audit",
            report.tables_checked
        ),
        t0,
    );
}

#[test]
fn criterion_02_binary_tree_speed() {
    let t0 = Instant::now();
    let p = point(2);
    let mut rng = derive_stream(SEED, 2);
    let erg = speed_ergodic(&p, 2.0, 64, 20_000, &mut rng).unwrap();
    assert!(
        (erg.value - 0.6).abs() <= 3.0 * erg.std_error,
        "FAIL criterion 2: ergodic {} +- {} vs 0.6",
        erg.value,
        erg.std_error
    );
    let aid = speed_aidekon(&p, 2.0, 64, 1e-12, &mut rng).unwrap();
    assert!(
        (aid.value - 0.6).abs() < 1e-9,
        "FAIL criterion 2: escape-ratio {} vs 0.6",
        aid.value
    );
    budget(2, t0, 60);
    pass("criterion 2: binary tree at bias 2 hits 0.6 both ways", t0);
}

#[test]
fn criterion_03_unit_bias_speed() {
    let t0 = Instant::now();
    let p = uniform(&[1, 3]);
    let exact = speed_unit_bias_exact(&p);
    assert!(
        (exact - 0.25).abs() < 1e-15,
        "FAIL criterion 3: exact unit-bias value {exact} vs 0.25"
    );
    let mut rng = derive_stream(SEED, 3);
    let erg = speed_ergodic(&p, 1.0, 64, 20_000, &mut rng).unwrap();
    assert!(
        (erg.value - 0.25).abs() <= 3.0 * erg.std_error,
        "FAIL criterion 3: ergodic {} +- {} vs 0.25",
        erg.value,
        erg.std_error
    );
    budget(3, t0, 60);
    pass(
        "criterion 3: unbiased walk speed matches (Z-1)/(Z+1) mean",
        t0,
    );
}

#[test]
fn criterion_04_acceptance_rate() {
    let t0 = Instant::now();
    let (p1, p2) = (uniform(&[1, 4]), uniform(&[1, 2]));
    let coupling = MonotoneCoupling::quantile(&p1, &p2).unwrap();
    let params = BiasParams::new(8.0).unwrap();
    let mut sampler = BlockSampler::new(params, &p1, &p2, &coupling)
        .unwrap()
        .with_config(SamplerConfig {
            blocks_per_trajectory: 1,
            ..SamplerConfig::default()
        });
    let mut rng = derive_stream(SEED, 4);
    sampler.sample_blocks(92_000, &mut rng).unwrap();
    let (accepted, attempts) = sampler.acceptance_counts();
    assert!(
        attempts >= 100_000,
        "FAIL criterion 4: only {attempts} attempts"
    );
    let p = params.escape_probability();
    let p_hat = accepted as f64 / attempts as f64;
    let se = (p * (1.0 - p) / attempts as f64).sqrt();
    assert!(
        (p_hat - p).abs() <= 3.0 * se,
        "FAIL criterion 4: acceptance {p_hat} vs {p} (se {se}, {attempts} attempts)"
    );
    budget(4, t0, 120);
    pass(
        &format!("criterion 4: acceptance {p_hat:.5} vs 7/8 over {attempts} attempts"),
        t0,
    );
}

fn block_sweep(mut check: impl FnMut(&gwspeed_core::regen::RegenBlock)) -> u64 {
    let pairs = [(point(3), point(2)), (uniform(&[1, 4]), uniform(&[1, 2]))];
    let mut total = 0u64;
    for (pi, (p1, p2)) in pairs.iter().enumerate() {
        let coupling = MonotoneCoupling::quantile(p1, p2).unwrap();
        for (bi, &beta) in [6.0, 8.0, 16.0].iter().enumerate() {
            let params = BiasParams::new(beta).unwrap();
            let mut sampler = BlockSampler::new(params, p1, p2, &coupling).unwrap();
            let mut rng = derive_stream(SEED, 50 + (pi * 3 + bi) as u64);
            let blocks = sampler.sample_blocks(17_000, &mut rng).unwrap();
            total += blocks.len() as u64;
            blocks.iter().for_each(&mut check);
        }
    }
    total
}

#[test]
fn criterion_05_duration_bound() {
    let t0 = Instant::now();
    let mut violations = 0u64;
    let total = block_sweep(|b| {
        if b.duration > 3 * b.back_steps + 2 {
            violations += 1;
        }
    });
    assert!(total >= 100_000, "FAIL criterion 5: only {total} blocks");
    assert_eq!(
        violations, 0,
        "FAIL criterion 5: {violations} blocks broke duration <= 3k + 2"
    );
    budget(5, t0, 300);
    pass(
        &format!("criterion 5: duration <= 3k + 2 on all {total} blocks"),
        t0,
    );
}

#[test]
fn criterion_06_gap_rules() {
    let t0 = Instant::now();
    let mut violations = 0u64;
    let total = block_sweep(|b| {
        let k = b.back_steps as i64;
        let gap = b.gap();
        let ok = b.y_gain >= 1
            && match k {
                0 => gap == 0,
                1 => gap == 0 || gap == 2,
                _ => gap >= -2 * (k - 1),
            };
        if !ok {
            violations += 1;
        }
    });
    assert!(total >= 100_000, "FAIL criterion 6: only {total} blocks");
    assert_eq!(
        violations, 0,
        "FAIL criterion 6: {violations} blocks broke the per-block gap rules"
    );
    budget(6, t0, 300);
    pass(
        &format!("criterion 6: gap and ascent rules hold on all {total} blocks"),
        t0,
    );
}

#[test]
fn criterion_07_regeneration_audit() {
    let t0 = Instant::now();
    let cases = [
        (point(3), point(2), 2.0),
        (uniform(&[1, 4]), uniform(&[1, 2]), 8.0),
    ];
    let mut total_blocks = 0u64;
    for (ci, (p1, p2, beta)) in cases.iter().enumerate() {
        let coupling = MonotoneCoupling::quantile(p1, p2).unwrap();
        let params = BiasParams::new(*beta).unwrap();
        let margin = SamplerConfig::default().margin;
        let mut sampler = BlockSampler::new(params, p1, p2, &coupling).unwrap();
        let mut rng = derive_stream(SEED, 70 + ci as u64);
        let (blocks, audits) = sampler.sample_blocks_audited(5_000, &mut rng).unwrap();
        total_blocks += blocks.len() as u64;
        for audit in &audits {
            for &(f1, f2) in &audit.fresh_at_regen {
                assert!(
                    f1 && f2,
                    "FAIL criterion 7: a confirmed regeneration landed on a revisited vertex"
                );
            }
            let rederived = find_regenerations(&audit.increments, margin);
            assert!(
                audit.regen_times.len() <= rederived.len()
                    && audit.regen_times[..] == rederived[..audit.regen_times.len()],
                "FAIL criterion 7: sampler times {:?} disagree with the reference detector {:?}",
                audit.regen_times,
                rederived
            );
        }
    }
    assert!(total_blocks >= 10_000);
    budget(7, t0, 300);
    pass(
        &format!("criterion 7: {total_blocks} regenerations fresh in both trees and re-derivable"),
        t0,
    );
}

#[test]
fn criterion_08_estimator_cross_agreement() {
    let t0 = Instant::now();
    let dists = [uniform(&[1, 2]), uniform(&[2, 3]), point(2), point(3)];
    let betas = [2.0, 6.0, 8.0, 16.0];
    let mut task = 0u64;
    for p in &dists {
        for &beta in &betas {
            let mut rng = derive_stream(SEED, 100 + task);
            task += 1;
            let erg = speed_ergodic(p, beta, 48, 15_000, &mut rng).unwrap();
            let aid = speed_aidekon(p, beta, 3_000, 1e-3, &mut rng).unwrap();
            let params = BiasParams::new(beta).unwrap();
            let reg = speed_regen(
                params,
                p,
                p,
                &MonotoneCoupling::diagonal(p),
                15_000,
                None,
                &mut rng,
            )
            .unwrap()
            .speed1;
            let check = |a: &SpeedEstimate, b: &SpeedEstimate, who: &str| {
                assert!(
                    agree_within(a.value, a.std_error, b.value, b.std_error, 3.0),
                    "FAIL criterion 8: {who} disagree for {p} at bias {beta}: \
                     {} +- {} vs {} +- {}",
                    a.value,
                    a.std_error,
                    b.value,
                    b.std_error
                );
            };
            check(&erg, &aid, "ergodic/escape-ratio");
            check(&erg, &reg, "ergodic/regenerative");
            check(&aid, &reg, "escape-ratio/regenerative");
        }
    }
    budget(8, t0, 900);
    pass(
        "criterion 8: three estimators agree within 3 sigma on 16 law/bias combos",
        t0,
    );
}

#[test]
fn criterion_09_certified_gap_is_observable() {
    let t0 = Instant::now();
    let (p1, p2) = (uniform(&[1, 4]), uniform(&[1, 2]));
    let coupling = MonotoneCoupling::quantile(&p1, &p2).unwrap();
    let threshold = numeric_threshold(&p1, &p2, &coupling, 1.0, 0.01).unwrap();
    assert!(threshold > SERIES_EDGE);
    let beta = 1.1 * threshold;
    let bound = lower_bound_gap(beta, &p1, &p2, &coupling, 1.0).unwrap();
    assert!(
        bound.best > 0.0,
        "FAIL criterion 9: bound not positive at 1.1x its own threshold: {bound:?}"
    );

    let observe = |p1: &ProgenyDistribution,
                   p2: &ProgenyDistribution,
                   beta: f64,
                   blocks: u64,
                   stream: u64| {
        let coupling = MonotoneCoupling::quantile(p1, p2).unwrap();
        let params = BiasParams::new(beta).unwrap();
        let mut sampler = BlockSampler::new(params, p1, p2, &coupling).unwrap();
        let mut rng = derive_stream(SEED, stream);
        let mut gap = RunningMoments::new();
        let mut left = blocks;
        while left > 0 {
            let take = left.min(2_000_000);
            for b in sampler.sample_blocks(take, &mut rng).unwrap() {
                gap.push(b.gap() as f64);
            }
            left -= take;
        }
        (gap.mean(), gap.std_error())
    };

    // z_{0.01} = 2.326: one-sided 99% evidence that the gap is positive
    let (mean, se) = observe(&p1, &p2, beta, 32_000_000, 90);
    assert!(
        mean > 2.326 * se,
        "FAIL criterion 9: gap {mean} +- {se} not positive at 99% at bias {beta:.1}"
    );
    let (mean8, se8) = observe(&uniform(&[2, 3]), &uniform(&[1, 2]), 8.0, 1_000_000, 91);
    assert!(
        mean8 > 2.326 * se8,
        "FAIL criterion 9: gap {mean8} +- {se8} not positive at 99% at bias 8"
    );
    budget(9, t0, 1800);
    pass(
        &format!(
            "criterion 9: positive gap at 99% (z {:.1} at bias {beta:.0}, z {:.1} at bias 8)",
            mean / se,
            mean8 / se8
        ),
        t0,
    );
}

#[test]
fn criterion_10_threshold_fixtures() {
    let t0 = Instant::now();
    let (p1, p2) = (uniform(&[1, 4]), uniform(&[1, 2]));
    let coupling = MonotoneCoupling::quantile(&p1, &p2).unwrap();
    let r = threshold_report(&p1, &p2, &coupling, 1.0, 0.01).unwrap();
    assert!(
        (r.crossing_ratio - 1.0).abs() < 1e-12 && (r.support_ratio - 3.0).abs() < 1e-12,
        "FAIL criterion 10: uniform-pair ratios ({}, {}) vs (1, 3)",
        r.crossing_ratio,
        r.support_ratio
    );
    let (d1, d2) = (point(3), point(2));
    let dc = MonotoneCoupling::quantile(&d1, &d2).unwrap();
    let rd = threshold_report(&d1, &d2, &dc, 1.0, 0.01).unwrap();
    assert!(
        rd.crossing_ratio == 0.0 && rd.beta1 == 0.0,
        "FAIL criterion 10: point-mass crossing ratio {} vs 0",
        rd.crossing_ratio
    );
    let mut rng = derive_stream(SEED, 10);
    for i in 0..100 {
        let (q1, q2) = random_dominating_pair(&mut rng, 12, 4);
        assert!(dominates(&q1, &q2));
        let c = MonotoneCoupling::quantile(&q1, &q2).unwrap();
        let rep = threshold_report(&q1, &q2, &c, 1.0, 0.01).unwrap();
        let cap = q2.max_support() as f64 + 1.0;
        assert!(
            rep.support_ratio <= cap + 1e-9,
            "FAIL criterion 10: pair {i}: support ratio {} above {cap} for {q1} / {q2}",
            rep.support_ratio
        );
    }
    budget(10, t0, 60);
    pass(
        "criterion 10: exact ratio fixtures and support-ratio cap on 100 random pairs",
        t0,
    );
}

#[test]
fn criterion_11_fold_coupling() {
    let t0 = Instant::now();
    let (p1, p2) = (uniform(&[3, 4]), uniform(&[2, 3]));
    assert!(
        ell_fold_check(&p1, &p2, 2),
        "FAIL criterion 11: 2-fold check should hold for {p1} over {p2}"
    );
    assert!(
        !ell_fold_check(&uniform(&[2, 5]), &uniform(&[1, 4]), 2),
        "FAIL criterion 11: 2-fold check should fail for 2:0.5,5:0.5 over 1:0.5,4:0.5"
    );
    let coupling = EllFoldCoupling::new(&p1, &p2, 2).unwrap();
    let mut rng = derive_stream(SEED, 11);
    let draws = 1_000_000u64;
    let mut violations = 0u64;
    let mut counts1 = [0u64; 2];
    let mut counts2 = [0u64; 2];
    for _ in 0..draws {
        let (v1, v2) = coupling.sample(&mut rng);
        if v1.iter().min() < v2.iter().max() {
            violations += 1;
        }
        for v in v1 {
            counts1[(v - 3) as usize] += 1;
        }
        for v in v2 {
            counts2[(v - 2) as usize] += 1;
        }
    }
    assert_eq!(
        violations, 0,
        "FAIL criterion 11: {violations} draws broke min >= max"
    );
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    for (name, counts) in [("first law", counts1), ("second law", counts2)] {
        let expected = (draws * 2) as f64 / 2.0;
        let stat: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        let p_value = 1.0 - ChiSquared::new(1.0).unwrap().cdf(stat);
        assert!(
            p_value > 0.001,
            "FAIL criterion 11: {name} marginal skewed: chi-square {stat}, p {p_value}"
        );
    }
    budget(11, t0, 300);
    pass(
        &format!("criterion 11: fold coupling valid on {draws} draws with clean marginals"),
        t0,
    );
}

#[test]
fn criterion_12_cli_reproducibility() {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("exp.toml");
    std::fs::write(
        &config_path,
        r#"
seed = 99
[walk]
betas = [6.0, 8.0]
[distributions]
p1 = "3:1"
p2 = "2:1"
[samples]
blocks = 20000
"#,
    )
    .unwrap();
    let run = |workers: &str, out: &str| {
        let status = Command::new(env!("CARGO_BIN_EXE_gwspeed"))
            .args([
                "compare",
                "--config",
                config_path.to_str().unwrap(),
                "--workers",
                workers,
                "--out",
            ])
            .arg(dir.path().join(out))
            .status()
            .unwrap();
        assert!(status.success(), "FAIL criterion 12: compare run failed");
    };
    run("1", "w1");
    run("8", "w8");
    for file in ["compare.csv", "compare.json", "gap.svg", "manifest.json"] {
        let a = std::fs::read(dir.path().join("w1").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("w8").join(file)).unwrap();
        assert!(
            a == b,
            "FAIL criterion 12: {file} differs between 1 and 8 workers"
        );
    }
    // sanity: the point-mass speeds in the CSV sit near their closed forms
    let csv = std::fs::read_to_string(dir.path().join("w1/compare.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let f: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        let (beta, v1, v1_se, v2, v2_se) = (f[0], f[1], f[2], f[3], f[4]);
        let c1 = closed_form_regular(3, beta).unwrap();
        let c2 = closed_form_regular(2, beta).unwrap();
        assert!(
            (v1 - c1).abs() <= 3.5 * v1_se && (v2 - c2).abs() <= 3.5 * v2_se,
            "FAIL criterion 12: CSV speeds ({v1}, {v2}) off closed forms ({c1}, {c2}) at bias {beta}"
        );
    }
    budget(12, t0, 300);
    pass(
        "criterion 12: CLI output byte-identical across worker counts and numerically sane",
        t0,
    );
}
