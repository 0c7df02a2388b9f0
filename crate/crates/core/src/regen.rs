//! Regeneration decomposition of conditioned coupled trajectories.
//!
//! A step `n` is a joint regeneration when the backbone height reaches
//! a strict running maximum at `n` and never falls below that level
//! afterwards. At such a step both tree walks arrive at never-visited
//! vertices (their depth gap over the backbone is non-decreasing, so a
//! revisit would force an earlier backbone height at least as large,
//! contradicting the strict maximum), both subtrees below are virgin,
//! and the next offspring draw is a fresh coupled pair. Trajectory
//! pieces between consecutive regenerations are therefore iid, and the
//! piece started at the roots (forced first ascent, conditioned on the
//! backbone never returning to 0) has the same law.
//!
//! Detection is streaming: each strict fresh maximum opens a candidate,
//! a candidate dies when the backbone drops below its level, and it is
//! confirmed once the backbone climbs `margin` levels above it while
//! the candidate is still alive. A confirmed-then-violated candidate
//! requires the backbone to fall `margin + 1` levels, which has
//! probability `(d*beta)^-(margin+1)`; with the default margin of 64
//! this is far below any tolerance used here, and the sampler turns it
//! into a loud error rather than a silent bias.

use std::collections::VecDeque;

use rand::Rng;
use serde::Serialize;

use crate::error::Error;
use crate::progeny::{MonotoneCoupling, ProgenyDistribution};
use crate::rng::{unit_draw, unit_draw_above};
use crate::walk::{BiasParams, CoupledWalk, Dest, StepOutcome};
use crate::Result;

/// Streaming candidate bookkeeping shared by [`find_regenerations`]
/// and [`BlockSampler`].
struct Detector {
    y: i64,
    max_seen: i64,
    margin: i64,
    /// `(time, level)` candidates, levels strictly increasing.
    pending: VecDeque<(u64, i64)>,
    confirmed: Vec<u64>,
}

impl Detector {
    fn new(margin: u64) -> Self {
        Self {
            y: 0,
            max_seen: 0,
            margin: margin as i64,
            pending: VecDeque::new(),
            confirmed: Vec::new(),
        }
    }

    fn observe(&mut self, n: u64, up: bool) {
        if up {
            self.y += 1;
            if self.y > self.max_seen {
                self.max_seen = self.y;
                self.pending.push_back((n, self.y));
            }
        } else {
            self.y -= 1;
            while self
                .pending
                .back()
                .is_some_and(|&(_, level)| level > self.y)
            {
                self.pending.pop_back();
            }
        }
        while self
            .pending
            .front()
            .is_some_and(|&(_, level)| self.y >= level + self.margin)
        {
            let (time, _) = self.pending.pop_front().expect("front checked");
            self.confirmed.push(time);
        }
    }
}

/// Regeneration times of a backbone increment sequence (`true` for an
/// ascent), 1-based, confirmed with the given margin. Candidates still
/// pending when the data runs out are not reported.
pub fn find_regenerations(increments: &[bool], margin: u64) -> Vec<u64> {
    let mut det = Detector::new(margin);
    for (i, &up) in increments.iter().enumerate() {
        det.observe(i as u64 + 1, up);
    }
    det.confirmed
}

/// How a trajectory piece first left the aligned regime, if it did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Decouple {
    /// Moves matched for the whole piece.
    None,
    /// Walk 1 stepped to a child while walk 2 stepped to its parent.
    E,
    /// Both stepped to children with different indices.
    F,
}

impl Decouple {
    pub fn as_str(&self) -> &'static str {
        match self {
            Decouple::None => "none",
            Decouple::E => "e",
            Decouple::F => "f",
        }
    }
}

/// One iid piece between consecutive confirmed regenerations.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RegenBlock {
    /// Steps in the piece.
    pub duration: u64,
    /// Number of backbone descents in the piece.
    pub back_steps: u64,
    /// Depth gained by walk 1 over the piece.
    pub gain1: i64,
    pub gain2: i64,
    /// Backbone levels gained (`duration - 2 * back_steps`).
    pub y_gain: i64,
    pub decouple: Decouple,
}

impl RegenBlock {
    /// Depth-gain difference of the two walks over the piece.
    pub fn gap(&self) -> i64 {
        self.gain1 - self.gain2
    }
}

/// Per-trajectory trace kept by the audited sampling mode.
#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryAudit {
    pub increments: Vec<bool>,
    pub regen_times: Vec<u64>,
    /// Whether each walk arrived at a never-visited vertex at each
    /// confirmed regeneration step.
    pub fresh_at_regen: Vec<(bool, bool)>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SamplerConfig {
    /// Levels the backbone must climb above a candidate to confirm it.
    pub margin: u64,
    /// Hard cap on steps within one trajectory attempt.
    pub horizon: u64,
    /// Confirmed blocks harvested per trajectory before rotating to a
    /// fresh pair of trees (bounds arena memory).
    pub blocks_per_trajectory: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            margin: 64,
            horizon: 1_000_000,
            blocks_per_trajectory: 256,
        }
    }
}

/// Draws iid regeneration blocks from conditioned coupled trajectories
/// by rejection: each attempt starts at fresh roots with a forced
/// ascent, and is discarded if the backbone returns to 0 before the
/// first confirmation.
#[derive(Debug)]
pub struct BlockSampler<'a> {
    walk: CoupledWalk<'a>,
    config: SamplerConfig,
    attempts: u64,
    accepted: u64,
}

struct Anchor {
    time: u64,
    depth1: u64,
    depth2: u64,
}

impl<'a> BlockSampler<'a> {
    pub fn new(
        params: BiasParams,
        p1: &'a ProgenyDistribution,
        p2: &'a ProgenyDistribution,
        coupling: &'a MonotoneCoupling,
    ) -> Result<Self> {
        Ok(Self {
            walk: CoupledWalk::new(params, p1, p2, coupling)?,
            config: SamplerConfig::default(),
            attempts: 0,
            accepted: 0,
        })
    }

    pub fn with_config(mut self, config: SamplerConfig) -> Self {
        assert!(config.margin >= 1 && config.blocks_per_trajectory >= 1);
        self.config = config;
        self
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    /// `(accepted, attempted)` trajectory starts so far. The ratio
    /// estimates the no-return probability of one forced ascent.
    pub fn acceptance_counts(&self) -> (u64, u64) {
        (self.accepted, self.attempts)
    }

    pub fn sample_blocks<R: Rng + ?Sized>(
        &mut self,
        count: u64,
        rng: &mut R,
    ) -> Result<Vec<RegenBlock>> {
        let mut blocks = Vec::with_capacity(count.min(1 << 20) as usize);
        while (blocks.len() as u64) < count {
            let want = (count - blocks.len() as u64).min(self.config.blocks_per_trajectory);
            self.run_trajectory(want, rng, &mut blocks, None)?;
        }
        Ok(blocks)
    }

    /// As [`Self::sample_blocks`], additionally recording one
    /// [`TrajectoryAudit`] per accepted trajectory (rejected attempts
    /// are not traced).
    pub fn sample_blocks_audited<R: Rng + ?Sized>(
        &mut self,
        count: u64,
        rng: &mut R,
    ) -> Result<(Vec<RegenBlock>, Vec<TrajectoryAudit>)> {
        let mut blocks = Vec::new();
        let mut audits = Vec::new();
        while (blocks.len() as u64) < count {
            let want = (count - blocks.len() as u64).min(self.config.blocks_per_trajectory);
            self.run_trajectory(want, rng, &mut blocks, Some(&mut audits))?;
        }
        Ok((blocks, audits))
    }

    /// Runs rejection attempts until one trajectory yields `want`
    /// confirmed blocks, pushing them onto `out`.
    fn run_trajectory<R: Rng + ?Sized>(
        &mut self,
        want: u64,
        rng: &mut R,
        out: &mut Vec<RegenBlock>,
        mut audits: Option<&mut Vec<TrajectoryAudit>>,
    ) -> Result<()> {
        debug_assert!(want >= 1);
        let split = self.walk.params().split();
        'attempt: loop {
            self.attempts += 1;
            self.walk.reset();
            let mut det = Detector::new(self.config.margin);
            let mut log: VecDeque<StepOutcome> = VecDeque::new();
            let mut anchor = Anchor {
                time: 0,
                depth1: 0,
                depth2: 0,
            };
            let mut trace = audits.as_ref().map(|_| TrajectoryAudit {
                increments: Vec::new(),
                regen_times: Vec::new(),
                fresh_at_regen: Vec::new(),
            });
            let mut harvested = 0u64;
            let mut confirmed_any = false;
            for n in 1..=self.config.horizon {
                let u = if n == 1 {
                    unit_draw_above(rng, split)
                } else {
                    unit_draw(rng)
                };
                let step = self.walk.step(u, rng)?;
                det.observe(n, step.forward);
                log.push_back(step);
                if let Some(t) = trace.as_mut() {
                    t.increments.push(step.forward);
                }
                if step.y == 0 {
                    if confirmed_any {
                        return Err(Error::StateCorrupt(format!(
                            "confirmation margin {} breached: backbone returned to 0 \
                             after a confirmed regeneration",
                            self.config.margin
                        )));
                    }
                    continue 'attempt;
                }
                for &time in &std::mem::take(&mut det.confirmed) {
                    if !confirmed_any {
                        confirmed_any = true;
                        self.accepted += 1;
                    }
                    let (block, regen_step) = close_block(&mut log, &mut anchor, time)?;
                    if let Some(t) = trace.as_mut() {
                        t.regen_times.push(time);
                        t.fresh_at_regen
                            .push((regen_step.fresh1, regen_step.fresh2));
                    }
                    out.push(block);
                    harvested += 1;
                    if harvested == want {
                        if let (Some(list), Some(t)) = (audits.as_deref_mut(), trace) {
                            list.push(t);
                        }
                        return Ok(());
                    }
                }
            }
            return Err(Error::HorizonExceeded {
                horizon: self.config.horizon,
            });
        }
    }
}

/// Drains the step log up to `time`, classifies the piece since the
/// previous anchor, and advances the anchor in place.
fn close_block(
    log: &mut VecDeque<StepOutcome>,
    anchor: &mut Anchor,
    time: u64,
) -> Result<(RegenBlock, StepOutcome)> {
    debug_assert!(time > anchor.time);
    let mut back_steps = 0u64;
    let mut decouple = Decouple::None;
    let mut corresponding = true;
    let mut last = None;
    while log.front().is_some_and(|s| s.n <= time) {
        let step = log.pop_front().expect("front checked");
        if !step.forward {
            back_steps += 1;
        }
        if corresponding {
            match (step.move1, step.move2) {
                (Dest::Parent, Dest::Parent) => {}
                (Dest::Child(a), Dest::Child(b)) if a == b => {}
                (Dest::Child(_), Dest::Parent) => {
                    debug_assert!(!step.forward);
                    decouple = Decouple::E;
                    corresponding = false;
                }
                (Dest::Child(_), Dest::Child(_)) => {
                    decouple = Decouple::F;
                    corresponding = false;
                }
                (Dest::Parent, Dest::Child(_)) => {
                    return Err(Error::StateCorrupt(
                        "walk 1 moved to its parent while walk 2 descended at \
                         corresponding sites"
                            .into(),
                    ));
                }
            }
        }
        if step.n == time {
            last = Some(step);
        }
    }
    let last = last.ok_or_else(|| {
        Error::StateCorrupt(format!("regeneration step {time} missing from the log"))
    })?;
    let duration = time - anchor.time;
    let block = RegenBlock {
        duration,
        back_steps,
        gain1: last.depth1 as i64 - anchor.depth1 as i64,
        gain2: last.depth2 as i64 - anchor.depth2 as i64,
        y_gain: duration as i64 - 2 * back_steps as i64,
        decouple,
    };
    *anchor = Anchor {
        time,
        depth1: last.depth1,
        depth2: last.depth2,
    };
    Ok((block, last))
}

/// Histogram and geometric-tail fit of the per-block backbone descent
/// counts, with the theoretical rate ceiling `27 / (4 (1 + beta))`.
#[derive(Debug, Clone, Serialize)]
pub struct TailReport {
    pub n_blocks: u64,
    pub mean_back_steps: f64,
    /// Maximum-likelihood geometric rate `m / (1 + m)`.
    pub geometric_rate: f64,
    pub rate_bound: f64,
    pub histogram: Vec<(u64, u64)>,
}

pub fn tail_of_b(blocks: &[RegenBlock], beta: f64) -> TailReport {
    let n = blocks.len() as u64;
    let mut counts: Vec<u64> = Vec::new();
    let mut total = 0u128;
    for b in blocks {
        let k = b.back_steps as usize;
        if counts.len() <= k {
            counts.resize(k + 1, 0);
        }
        counts[k] += 1;
        total += b.back_steps as u128;
    }
    let mean = if n == 0 { 0.0 } else { total as f64 / n as f64 };
    TailReport {
        n_blocks: n,
        mean_back_steps: mean,
        geometric_rate: mean / (1.0 + mean),
        rate_bound: 27.0 / (4.0 * (1.0 + beta)),
        histogram: counts
            .into_iter()
            .enumerate()
            .map(|(k, c)| (k as u64, c))
            .collect(),
    }
}
