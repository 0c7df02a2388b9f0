//! One function per subcommand.
//!
//! Every command resolves its inputs from the config, fans independent
//! work units out through [`runner::run_indexed`] (task index = RNG
//! stream index, so worker count never changes results), and writes its
//! artifacts plus a manifest through [`output::OutputWriter`].

use serde::Serialize;

use gwspeed_core::progeny::{
    ell_fold_check, EllFoldCoupling, MonotoneCoupling, ProgenyDistribution,
};
use gwspeed_core::regen::{tail_of_b, BlockSampler, RegenBlock, TailReport};
use gwspeed_core::rng::Stream;
use gwspeed_core::speed::{
    closed_form_regular, speed_aidekon, speed_ergodic, speed_regen, speed_unit_bias_exact,
    RegenSpeedReport, SpeedEstimate, SpeedMethod,
};
use gwspeed_core::thresholds::{
    d_scaled_threshold, ell_threshold, find_k, lower_bound_gap, numeric_threshold,
    threshold_report, GapBound,
};
use gwspeed_core::walk::BiasParams;
use gwspeed_core::Error;

use crate::config::Run;
use crate::error::{CliError, CliResult};
use crate::output::{fmt_f64, Csv, OutputWriter};
use crate::plot::{line_plot, Series};
use crate::runner::{chunk_counts, run_indexed};

/// Fixed chunk size for block-sampling commands; results depend only on
/// the total count, not on this granularity's interaction with workers.
const BLOCK_CHUNK: u64 = 4096;
const DRAW_CHUNK: u64 = 65_536;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Method {
    Ergodic,
    EscapeRatio,
    Regen,
    ClosedForm,
    ExactUnit,
}

impl Method {
    fn parse(name: &str) -> CliResult<Self> {
        match name {
            "ergodic" => Ok(Method::Ergodic),
            "escape_ratio" => Ok(Method::EscapeRatio),
            "regen" => Ok(Method::Regen),
            "closed_form" => Ok(Method::ClosedForm),
            "exact_unit" => Ok(Method::ExactUnit),
            other => Err(CliError::config(format!(
                "unknown speed method {other:?}; expected ergodic, escape_ratio, \
                 regen, closed_form or exact_unit"
            ))),
        }
    }
}

fn estimate_csv(estimates: &[SpeedEstimate]) -> String {
    let mut csv = Csv::new(&[
        "method",
        "distribution",
        "beta",
        "value",
        "std_error",
        "n",
        "warning",
    ]);
    for e in estimates {
        csv.row([
            e.method.as_str().to_string(),
            e.distribution.clone(),
            fmt_f64(e.beta),
            fmt_f64(e.value),
            fmt_f64(e.std_error),
            e.n.to_string(),
            e.warning.clone().unwrap_or_default(),
        ]);
    }
    csv.into_string()
}

pub fn cmd_speed(run: &Run) -> CliResult<()> {
    let cfg = &run.config;
    let p = cfg.distributions.single()?;
    let betas = cfg.walk.grid()?;
    let d = cfg.walk.d;
    let methods: Vec<Method> = cfg
        .speed
        .methods
        .iter()
        .map(|m| Method::parse(m))
        .collect::<CliResult<_>>()?;

    let mut tasks = Vec::new();
    for &beta in &betas {
        for &method in &methods {
            match method {
                Method::Ergodic if beta <= 0.0 => {
                    return Err(CliError::config(format!(
                        "ergodic estimator needs beta > 0, got {beta}"
                    )))
                }
                Method::EscapeRatio | Method::Regen if beta <= 1.0 => {
                    return Err(CliError::config(format!(
                        "method needs beta > 1, got {beta}; drop it or raise the bias"
                    )))
                }
                Method::ClosedForm if p.support().len() != 1 => {
                    return Err(CliError::config(
                        "closed_form only applies to a point-mass law (regular tree)",
                    ))
                }
                Method::ExactUnit if beta != 1.0 => {
                    return Err(CliError::config(format!(
                        "exact_unit is the beta = 1 expectation; got beta {beta}"
                    )))
                }
                _ => {}
            }
            tasks.push((beta, method));
        }
    }

    let samples = &cfg.samples;
    let estimates = run_indexed(run.seed, &tasks, run.workers, |_, &(beta, method), rng| {
        let est = match method {
            Method::Ergodic => speed_ergodic(&p, beta, samples.walks, samples.steps, rng)?,
            Method::EscapeRatio => speed_aidekon(
                &p,
                beta,
                samples.escape_samples,
                cfg.tolerances.gap_tol,
                rng,
            )?,
            Method::Regen => {
                let params = BiasParams::with_scale(beta, d)?;
                let coupling = MonotoneCoupling::diagonal(&p);
                speed_regen(
                    params,
                    &p,
                    &p,
                    &coupling,
                    samples.blocks,
                    Some(cfg.regen.sampler_config()),
                    rng,
                )?
                .speed1
            }
            Method::ClosedForm => SpeedEstimate {
                value: closed_form_regular(p.support()[0], beta)?,
                std_error: 0.0,
                method: SpeedMethod::ClosedForm,
                n: 0,
                beta,
                distribution: p.to_string(),
                warning: None,
            },
            Method::ExactUnit => SpeedEstimate {
                value: speed_unit_bias_exact(&p),
                std_error: 0.0,
                method: SpeedMethod::ClosedForm,
                n: 0,
                beta,
                distribution: p.to_string(),
                warning: None,
            },
        };
        Ok(est)
    })?;

    let mut out = OutputWriter::new(&run.out);
    out.write("speed.csv", &estimate_csv(&estimates))?;
    out.write_json("speed.json", &estimates)?;
    if cfg.output.svg && betas.len() > 1 {
        let series: Vec<Series> = methods
            .iter()
            .enumerate()
            .map(|(mi, _)| Series {
                label: estimates[mi].method.as_str().to_string(),
                points: estimates
                    .iter()
                    .skip(mi)
                    .step_by(methods.len())
                    .map(|e| (e.beta, e.value, e.std_error))
                    .collect(),
            })
            .collect();
        out.write(
            "speed.svg",
            &line_plot(&format!("walk speed, law {p}"), "bias", "speed", &series),
        )?;
    }
    out.finish("speed", run.seed, &run.config_text)
}

#[derive(Serialize)]
struct CompareRow {
    beta: f64,
    v1: f64,
    v1_se: f64,
    v2: f64,
    v2_se: f64,
    gap_mean: f64,
    gap_se: f64,
    mean_duration: f64,
    n_blocks: u64,
    accepted: u64,
    attempts: u64,
}

pub fn cmd_compare(run: &Run) -> CliResult<()> {
    let cfg = &run.config;
    let (p1, p2) = cfg.distributions.pair()?;
    let coupling = cfg.distributions.coupling(&p1, &p2)?;
    let betas = cfg.walk.grid()?;
    let d = cfg.walk.d;

    let reports: Vec<RegenSpeedReport> =
        run_indexed(run.seed, &betas, run.workers, |_, &beta, rng| {
            let params = BiasParams::with_scale(beta, d)?;
            Ok(speed_regen(
                params,
                &p1,
                &p2,
                &coupling,
                cfg.samples.blocks,
                Some(cfg.regen.sampler_config()),
                rng,
            )?)
        })?;

    let rows: Vec<CompareRow> = reports
        .iter()
        .map(|r| CompareRow {
            beta: r.speed1.beta,
            v1: r.speed1.value,
            v1_se: r.speed1.std_error,
            v2: r.speed2.value,
            v2_se: r.speed2.std_error,
            gap_mean: r.gap_mean,
            gap_se: r.gap_std_error,
            mean_duration: r.mean_duration,
            n_blocks: r.n_blocks,
            accepted: r.acceptance.0,
            attempts: r.acceptance.1,
        })
        .collect();
    let mut csv = Csv::new(&[
        "beta",
        "v1",
        "v1_se",
        "v2",
        "v2_se",
        "gap_mean",
        "gap_se",
        "mean_duration",
        "n_blocks",
        "accepted",
        "attempts",
    ]);
    for r in &rows {
        csv.row([
            fmt_f64(r.beta),
            fmt_f64(r.v1),
            fmt_f64(r.v1_se),
            fmt_f64(r.v2),
            fmt_f64(r.v2_se),
            fmt_f64(r.gap_mean),
            fmt_f64(r.gap_se),
            fmt_f64(r.mean_duration),
            r.n_blocks.to_string(),
            r.accepted.to_string(),
            r.attempts.to_string(),
        ]);
    }

    let mut out = OutputWriter::new(&run.out);
    out.write("compare.csv", &csv.into_string())?;
    out.write_json("compare.json", &reports)?;
    if cfg.output.svg && betas.len() > 1 {
        let speeds = vec![
            Series {
                label: format!("law {p1}"),
                points: rows.iter().map(|r| (r.beta, r.v1, r.v1_se)).collect(),
            },
            Series {
                label: format!("law {p2}"),
                points: rows.iter().map(|r| (r.beta, r.v2, r.v2_se)).collect(),
            },
        ];
        out.write(
            "compare.svg",
            &line_plot("coupled walk speeds", "bias", "speed", &speeds),
        )?;
        let gap = vec![Series {
            label: "per-block gap".into(),
            points: rows
                .iter()
                .map(|r| (r.beta, r.gap_mean, r.gap_se))
                .collect(),
        }];
        out.write(
            "gap.svg",
            &line_plot("depth-gain gap per block", "bias", "gap", &gap),
        )?;
    }
    out.finish("compare", run.seed, &run.config_text)
}

#[derive(Serialize)]
struct AuditSummary {
    float: gwspeed_core::walk::AuditReport,
    exact_pairs_checked: Option<u64>,
}

pub fn cmd_coupling_audit(run: &Run) -> CliResult<()> {
    let cfg = &run.config.audit;
    let d = run.config.walk.d;
    let verification = |e: Error| match e {
        Error::AuditFailure { .. } => CliError::Verification(e.to_string()),
        other => CliError::Run(other),
    };
    let float = gwspeed_core::walk::audit_tables(cfg.z_max, &cfg.betas, d).map_err(verification)?;
    let exact_pairs_checked = if cfg.exact {
        gwspeed_core::walk::exact::audit_tables_exact(cfg.exact_z_max, &cfg.exact_betas, d)
            .map_err(verification)?;
        Some(cfg.exact_z_max * cfg.exact_z_max * cfg.exact_betas.len() as u64)
    } else {
        None
    };
    let mut out = OutputWriter::new(&run.out);
    out.write_json(
        "audit.json",
        &AuditSummary {
            float,
            exact_pairs_checked,
        },
    )?;
    out.finish("coupling-audit", run.seed, &run.config_text)
}

#[derive(Serialize)]
struct RegenSummary {
    beta: f64,
    d: u64,
    n_blocks: u64,
    accepted: u64,
    attempts: u64,
    acceptance_rate: f64,
    escape_probability: f64,
    mean_duration: f64,
    mean_gap: f64,
    tail: TailReport,
}

pub fn cmd_regen_stats(run: &Run) -> CliResult<()> {
    let cfg = &run.config;
    let (p1, p2) = cfg.distributions.pair()?;
    let coupling = cfg.distributions.coupling(&p1, &p2)?;
    let beta = cfg.walk.single()?;
    let d = cfg.walk.d;
    let params = BiasParams::with_scale(beta, d)?;

    let chunks = chunk_counts(cfg.samples.blocks, BLOCK_CHUNK);
    let parts: Vec<(Vec<RegenBlock>, (u64, u64))> =
        run_indexed(run.seed, &chunks, run.workers, |_, &count, rng| {
            let mut sampler = BlockSampler::new(params, &p1, &p2, &coupling)?
                .with_config(cfg.regen.sampler_config());
            let blocks = sampler.sample_blocks(count, rng)?;
            Ok((blocks, sampler.acceptance_counts()))
        })?;

    let mut blocks = Vec::with_capacity(cfg.samples.blocks as usize);
    let (mut accepted, mut attempts) = (0u64, 0u64);
    for (part, (a, t)) in parts {
        blocks.extend(part);
        accepted += a;
        attempts += t;
    }

    let mut csv = Csv::new(&[
        "block_index",
        "duration",
        "back_steps",
        "gain1",
        "gain2",
        "gap",
        "y_gain",
        "decouple",
    ]);
    let mut duration_sum = 0.0;
    let mut gap_sum = 0.0;
    for (i, b) in blocks.iter().enumerate() {
        duration_sum += b.duration as f64;
        gap_sum += b.gap() as f64;
        csv.row([
            i.to_string(),
            b.duration.to_string(),
            b.back_steps.to_string(),
            b.gain1.to_string(),
            b.gain2.to_string(),
            b.gap().to_string(),
            b.y_gain.to_string(),
            b.decouple.as_str().to_string(),
        ]);
    }

    let n = blocks.len() as f64;
    let summary = RegenSummary {
        beta,
        d,
        n_blocks: blocks.len() as u64,
        accepted,
        attempts,
        acceptance_rate: accepted as f64 / attempts as f64,
        escape_probability: params.escape_probability(),
        mean_duration: duration_sum / n,
        mean_gap: gap_sum / n,
        tail: tail_of_b(&blocks, beta),
    };

    let mut out = OutputWriter::new(&run.out);
    out.write("blocks.csv", &csv.into_string())?;
    out.write_json("regen.json", &summary)?;
    out.finish("regen-stats", run.seed, &run.config_text)
}

#[derive(Serialize)]
struct ThresholdSummary {
    report: gwspeed_core::ThresholdReport,
    numeric_threshold: f64,
    ell: u32,
    ell_threshold: f64,
    d: u64,
    d_scaled_threshold: Option<f64>,
    penalty_scale: f64,
}

pub fn cmd_threshold(run: &Run) -> CliResult<()> {
    let cfg = &run.config;
    let (p1, p2) = cfg.distributions.pair()?;
    let coupling = cfg.distributions.coupling(&p1, &p2)?;
    let (c, c_delta, delta) = (
        cfg.tolerances.c,
        cfg.tolerances.c_delta,
        cfg.tolerances.delta,
    );

    let report = threshold_report(&p1, &p2, &coupling, c_delta, delta)?;
    let numeric = numeric_threshold(&p1, &p2, &coupling, c, delta)?;
    let ell = cfg.ell.ell;
    let ell_thr = ell_threshold(report.beta1, ell, delta)?;
    let d = cfg.walk.d;
    let d_scaled = if p1.min_support() >= d && p2.min_support() >= d && report.beta0 > 0.0 {
        Some(d_scaled_threshold(report.beta0, d, &p1, &p2)?)
    } else {
        None
    };

    // sign-change picture of the bound around the numeric threshold
    let lo = numeric
        .min(report.beta0)
        .max(gwspeed_core::thresholds::SERIES_EDGE + delta)
        * 1.0001;
    let hi = numeric * 4.0;
    let n_grid = 33;
    let ratio = (hi / lo).powf(1.0 / (n_grid - 1) as f64);
    let mut grid: Vec<GapBound> = Vec::with_capacity(n_grid);
    let mut csv = Csv::new(&["beta", "crossing_form", "support_form", "best"]);
    for i in 0..n_grid {
        let beta = lo * ratio.powi(i as i32);
        let bound = lower_bound_gap(beta, &p1, &p2, &coupling, c)?;
        csv.row([
            fmt_f64(bound.beta),
            fmt_f64(bound.crossing_form),
            fmt_f64(bound.support_form),
            fmt_f64(bound.best),
        ]);
        grid.push(bound);
    }

    let mut out = OutputWriter::new(&run.out);
    out.write("bounds.csv", &csv.into_string())?;
    out.write_json(
        "threshold.json",
        &ThresholdSummary {
            report,
            numeric_threshold: numeric,
            ell,
            ell_threshold: ell_thr,
            d,
            d_scaled_threshold: d_scaled,
            penalty_scale: c,
        },
    )?;
    if cfg.output.svg {
        let series = vec![Series {
            label: "best lower bound".into(),
            points: grid.iter().map(|g| (g.beta.log10(), g.best, 0.0)).collect(),
        }];
        out.write(
            "bounds.svg",
            &line_plot("per-block gap lower bound", "log10(bias)", "bound", &series),
        )?;
    }
    out.finish("threshold", run.seed, &run.config_text)
}

#[derive(Serialize)]
struct ChiSquared {
    law: String,
    statistic: f64,
    dof: u64,
}

#[derive(Serialize)]
struct EllSummary {
    ell: u32,
    holds: bool,
    draws: u64,
    violations: u64,
    marginal_chi_squared: Vec<ChiSquared>,
}

pub fn cmd_ell_check(run: &Run) -> CliResult<()> {
    let cfg = &run.config;
    let (p1, p2) = cfg.distributions.pair()?;
    let ell = cfg.ell.ell;
    if ell == 0 {
        return Err(CliError::config("ell.ell must be at least 1"));
    }

    let holds = ell_fold_check(&p1, &p2, ell);
    let mut summary = EllSummary {
        ell,
        holds,
        draws: 0,
        violations: 0,
        marginal_chi_squared: Vec::new(),
    };
    if holds {
        let coupling = EllFoldCoupling::new(&p1, &p2, ell)?;
        let chunks = chunk_counts(cfg.samples.draws, DRAW_CHUNK);
        struct Part {
            violations: u64,
            counts1: Vec<u64>,
            counts2: Vec<u64>,
        }
        let tally = |p: &ProgenyDistribution, counts: &mut [u64], vs: &[u64]| {
            for v in vs {
                let idx = p
                    .support()
                    .iter()
                    .position(|s| s == v)
                    .expect("support atom");
                counts[idx] += 1;
            }
        };
        let parts: Vec<Part> = run_indexed(run.seed, &chunks, run.workers, |_, &count, rng| {
            let mut part = Part {
                violations: 0,
                counts1: vec![0; p1.support().len()],
                counts2: vec![0; p2.support().len()],
            };
            for _ in 0..count {
                let (v1, v2) = coupling.sample(rng);
                if v1.iter().min() < v2.iter().max() {
                    part.violations += 1;
                }
                tally(&p1, &mut part.counts1, &v1);
                tally(&p2, &mut part.counts2, &v2);
            }
            Ok(part)
        })?;
        let mut counts1 = vec![0u64; p1.support().len()];
        let mut counts2 = vec![0u64; p2.support().len()];
        for part in parts {
            summary.violations += part.violations;
            for (acc, c) in counts1.iter_mut().zip(part.counts1) {
                *acc += c;
            }
            for (acc, c) in counts2.iter_mut().zip(part.counts2) {
                *acc += c;
            }
        }
        summary.draws = cfg.samples.draws;
        let chi = |p: &ProgenyDistribution, counts: &[u64], name: &str| {
            let total = (cfg.samples.draws * ell as u64) as f64;
            let statistic = p
                .atoms()
                .zip(counts)
                .map(|((_, mass), &obs)| {
                    let expected = total * mass;
                    (obs as f64 - expected).powi(2) / expected
                })
                .sum();
            ChiSquared {
                law: name.to_string(),
                statistic,
                dof: counts.len() as u64 - 1,
            }
        };
        summary.marginal_chi_squared = vec![chi(&p1, &counts1, "p1"), chi(&p2, &counts2, "p2")];
    }

    let violations = summary.violations;
    let mut out = OutputWriter::new(&run.out);
    out.write_json("ell.json", &summary)?;
    out.finish("ell-check", run.seed, &run.config_text)?;
    if violations > 0 {
        return Err(CliError::Verification(format!(
            "{violations} of {} fold-coupling draws broke min >= max",
            cfg.samples.draws
        )));
    }
    Ok(())
}

pub fn cmd_gen_k(run: &Run) -> CliResult<()> {
    let cfg = &run.config;
    let (p1, p2) = cfg.distributions.pair()?;
    let coupling = cfg.distributions.coupling(&p1, &p2)?;
    let beta = cfg.walk.single()?;

    let reports = run_indexed(run.seed, &[()], run.workers, |_, _, rng: &mut Stream| {
        Ok(find_k(
            &p1,
            &p2,
            &coupling,
            beta,
            cfg.tolerances.c,
            cfg.samples.samples_per_k,
            cfg.samples.max_k,
            rng,
        )?)
    })?;
    let report = &reports[0];

    let mut csv = Csv::new(&[
        "k",
        "crossing_ratio",
        "std_error",
        "upper_confidence",
        "num_mean",
        "den_mean",
        "samples",
    ]);
    for e in &report.evaluations {
        csv.row([
            e.k.to_string(),
            fmt_f64(e.crossing_ratio),
            fmt_f64(e.std_error),
            fmt_f64(e.upper_confidence),
            fmt_f64(e.num_mean),
            fmt_f64(e.den_mean),
            e.samples.to_string(),
        ]);
    }

    let mut out = OutputWriter::new(&run.out);
    out.write("gen_k.csv", &csv.into_string())?;
    out.write_json("gen_k.json", report)?;
    out.finish("gen-k", run.seed, &run.config_text)
}
