//! TOML experiment description.
//!
//! One config file drives every subcommand; each command reads only the
//! sections it needs and rejects the run (exit 2) when a required field
//! is missing. The master seed is mandatory, either as `seed = <N>` in
//! the file or as `--seed` on the command line, so every run is
//! reproducible by construction.
//!
//! Worker resolution order: `--workers` flag, then the
//! `GWSPEED_WORKERS` environment variable, then `workers` in the file,
//! then 1. Worker count never changes results, only wall-clock time.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use gwspeed_core::progeny::{MonotoneCoupling, ProgenyDistribution};

use crate::error::{CliError, CliResult};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub walk: WalkSection,
    #[serde(default)]
    pub distributions: DistSection,
    #[serde(default)]
    pub speed: SpeedSection,
    #[serde(default)]
    pub samples: SamplesSection,
    #[serde(default)]
    pub regen: RegenSection,
    #[serde(default)]
    pub tolerances: TolSection,
    #[serde(default)]
    pub audit: AuditSection,
    #[serde(default)]
    pub ell: EllSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkSection {
    /// Single bias value; ignored when `betas` is present.
    pub beta: Option<f64>,
    /// Bias grid for commands that sweep.
    pub betas: Option<Vec<f64>>,
    /// Backbone degree floor: both laws must have support >= d, and the
    /// split point of the step tables is 1 / (d beta + 1).
    #[serde(default = "one_u64")]
    pub d: u64,
}

impl Default for WalkSection {
    fn default() -> Self {
        WalkSection {
            beta: None,
            betas: None,
            d: 1,
        }
    }
}

impl WalkSection {
    /// The bias grid: `betas` if given, else the single `beta`.
    pub fn grid(&self) -> CliResult<Vec<f64>> {
        match (&self.betas, self.beta) {
            (Some(bs), _) if !bs.is_empty() => Ok(bs.clone()),
            (_, Some(b)) => Ok(vec![b]),
            _ => Err(CliError::config(
                "set walk.beta or a non-empty walk.betas in the config",
            )),
        }
    }

    pub fn single(&self) -> CliResult<f64> {
        let grid = self.grid()?;
        if grid.len() != 1 {
            return Err(CliError::config(
                "this command needs exactly one bias value (walk.beta)",
            ));
        }
        Ok(grid[0])
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistSection {
    /// Single offspring law, literal `value:mass,value:mass,...`.
    pub dist: Option<String>,
    /// Dominating law of a pair.
    pub p1: Option<String>,
    /// Dominated law of a pair.
    pub p2: Option<String>,
    /// `"quantile"` (default) or a path to a `z1,z2,prob` CSV.
    pub coupling: Option<String>,
}

fn parse_dist(text: &str, field: &str) -> CliResult<ProgenyDistribution> {
    ProgenyDistribution::parse_literal(text)
        .map_err(|e| CliError::config(format!("distributions.{field}: {e}")))
}

impl DistSection {
    pub fn single(&self) -> CliResult<ProgenyDistribution> {
        let text = self
            .dist
            .as_ref()
            .ok_or_else(|| CliError::config("set distributions.dist in the config"))?;
        parse_dist(text, "dist")
    }

    pub fn pair(&self) -> CliResult<(ProgenyDistribution, ProgenyDistribution)> {
        let p1 = self
            .p1
            .as_ref()
            .ok_or_else(|| CliError::config("set distributions.p1 in the config"))?;
        let p2 = self
            .p2
            .as_ref()
            .ok_or_else(|| CliError::config("set distributions.p2 in the config"))?;
        Ok((parse_dist(p1, "p1")?, parse_dist(p2, "p2")?))
    }

    /// Builds the coupling named in the config for an already-parsed
    /// pair: the quantile coupling by default, or rows from a CSV.
    pub fn coupling(
        &self,
        p1: &ProgenyDistribution,
        p2: &ProgenyDistribution,
    ) -> CliResult<MonotoneCoupling> {
        match self.coupling.as_deref() {
            None | Some("quantile") => Ok(MonotoneCoupling::quantile(p1, p2)?),
            Some(path) => {
                let file = fs::File::open(path).map_err(|e| {
                    CliError::config(format!("distributions.coupling: cannot open {path}: {e}"))
                })?;
                Ok(MonotoneCoupling::from_csv(BufReader::new(file), p1, p2)?)
            }
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedSection {
    /// Estimators to run: `ergodic`, `escape_ratio`, `regen`,
    /// `closed_form` (regular trees only), `exact_unit` (bias 1 only).
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
}

fn default_methods() -> Vec<String> {
    vec!["ergodic".into(), "escape_ratio".into()]
}

impl Default for SpeedSection {
    fn default() -> Self {
        SpeedSection {
            methods: default_methods(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplesSection {
    /// Independent trajectories for the ergodic estimator.
    #[serde(default = "default_walks")]
    pub walks: u64,
    /// Steps per ergodic trajectory.
    #[serde(default = "default_steps")]
    pub steps: u64,
    /// Regeneration blocks per bias value.
    #[serde(default = "default_blocks")]
    pub blocks: u64,
    /// Samples for the escape-ratio estimator.
    #[serde(default = "default_escape_samples")]
    pub escape_samples: u64,
    /// Monte Carlo draws for `ell-check`.
    #[serde(default = "default_draws")]
    pub draws: u64,
    /// Monte Carlo samples per generation in `gen-k`.
    #[serde(default = "default_samples_per_k")]
    pub samples_per_k: u64,
    /// Largest generation `gen-k` will try.
    #[serde(default = "default_max_k")]
    pub max_k: u32,
}

fn one_u64() -> u64 {
    1
}
fn default_walks() -> u64 {
    64
}
fn default_steps() -> u64 {
    20_000
}
fn default_blocks() -> u64 {
    20_000
}
fn default_escape_samples() -> u64 {
    20_000
}
fn default_draws() -> u64 {
    100_000
}
fn default_samples_per_k() -> u64 {
    20_000
}
fn default_max_k() -> u32 {
    8
}

impl Default for SamplesSection {
    fn default() -> Self {
        toml::from_str("").expect("empty table deserializes to defaults")
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegenSection {
    #[serde(default = "default_margin")]
    pub margin: u64,
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    #[serde(default = "default_bpt")]
    pub blocks_per_trajectory: u64,
}

fn default_margin() -> u64 {
    64
}
fn default_horizon() -> u64 {
    1_000_000
}
fn default_bpt() -> u64 {
    256
}

impl Default for RegenSection {
    fn default() -> Self {
        RegenSection {
            margin: default_margin(),
            horizon: default_horizon(),
            blocks_per_trajectory: default_bpt(),
        }
    }
}

impl RegenSection {
    pub fn sampler_config(&self) -> gwspeed_core::regen::SamplerConfig {
        gwspeed_core::regen::SamplerConfig {
            margin: self.margin,
            horizon: self.horizon,
            blocks_per_trajectory: self.blocks_per_trajectory,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TolSection {
    /// Escape-probability sandwich width for the escape-ratio method.
    #[serde(default = "default_gap_tol")]
    pub gap_tol: f64,
    /// Margin added to the series-edge bias floor.
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Penalty scale of the gap lower bound and the gen-k criterion.
    #[serde(default = "one_f64")]
    pub c: f64,
    /// Scale applied to the ratio thresholds.
    #[serde(default = "one_f64")]
    pub c_delta: f64,
}

fn default_gap_tol() -> f64 {
    1e-3
}
fn default_delta() -> f64 {
    0.01
}
fn one_f64() -> f64 {
    1.0
}

impl Default for TolSection {
    fn default() -> Self {
        TolSection {
            gap_tol: default_gap_tol(),
            delta: default_delta(),
            c: 1.0,
            c_delta: 1.0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditSection {
    /// Largest child count checked in floating point.
    #[serde(default = "default_z_max")]
    pub z_max: u64,
    #[serde(default = "default_audit_betas")]
    pub betas: Vec<f64>,
    /// Also run the exact-arithmetic audit.
    #[serde(default = "default_true")]
    pub exact: bool,
    #[serde(default = "default_exact_z_max")]
    pub exact_z_max: u64,
    /// Rational bias values as `[numerator, denominator]` pairs.
    #[serde(default = "default_exact_betas")]
    pub exact_betas: Vec<(i64, i64)>,
}

fn default_z_max() -> u64 {
    12
}
fn default_audit_betas() -> Vec<f64> {
    vec![1.5, 2.0, 8.0]
}
fn default_true() -> bool {
    true
}
fn default_exact_z_max() -> u64 {
    6
}
fn default_exact_betas() -> Vec<(i64, i64)> {
    vec![(3, 2), (2, 1), (8, 1)]
}

impl Default for AuditSection {
    fn default() -> Self {
        AuditSection {
            z_max: default_z_max(),
            betas: default_audit_betas(),
            exact: true,
            exact_z_max: default_exact_z_max(),
            exact_betas: default_exact_betas(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EllSection {
    #[serde(default = "default_ell")]
    pub ell: u32,
}

fn default_ell() -> u32 {
    2
}

impl Default for EllSection {
    fn default() -> Self {
        EllSection { ell: default_ell() }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Emit SVG plots alongside the CSV/JSON artifacts.
    #[serde(default = "default_true")]
    pub svg: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { svg: true }
    }
}

/// Fully resolved run parameters.
pub struct Run {
    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
    pub config: ExperimentConfig,
    /// Raw config text, digested into the manifest.
    pub config_text: String,
}

pub fn load(
    path: &Path,
    seed: Option<u64>,
    workers: Option<usize>,
    out: Option<PathBuf>,
) -> CliResult<Run> {
    let config_text = fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let config: ExperimentConfig = toml::from_str(&config_text)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let seed = seed.or(config.seed).ok_or_else(|| {
        CliError::config("a master seed is required: set seed = <N> in the config or pass --seed")
    })?;
    let workers = match workers {
        Some(w) => w,
        None => match std::env::var("GWSPEED_WORKERS") {
            Ok(v) => v.parse().map_err(|_| {
                CliError::config(format!(
                    "GWSPEED_WORKERS must be a positive integer, got {v:?}"
                ))
            })?,
            Err(_) => config.workers.unwrap_or(1),
        },
    };
    if workers == 0 {
        return Err(CliError::config("workers must be at least 1"));
    }
    let out = out
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from("gwspeed-out"));
    fs::create_dir_all(&out)?;
    Ok(Run {
        seed,
        workers,
        out,
        config,
        config_text,
    })
}
