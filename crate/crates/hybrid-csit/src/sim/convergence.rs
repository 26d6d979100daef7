//! Convergence diagnostics for the frame controller.
//!
//! Two studies back its design guarantees:
//!
//! * **Frame tracking** — over one frame the empirical service of the
//!   derandomized policy concentrates on the LP target as the frame grows.
//!   Probe frames enter from the LP solution's own state marginal: the
//!   target averages the recurrent classes by their LP mass, so frames
//!   entered from an arbitrary state would be biased toward whichever class
//!   absorbs that state.
//! * **Utility/backlog trade-off** — raising the arrival weight `V` pushes
//!   the achieved utility up (at the price of longer queues) while the
//!   queues stay strongly stable.

use crate::error::{Error, Result};
use crate::mdp::{derandomize, lp_rates, solve_saf_lp, MdpModel, StationaryPolicy};
use crate::numerics::RngStream;
use crate::scheduler::{solve_virtual_arrivals, FrameConfig, PolicyKind, VirtualQueues};
use crate::sim::{run_trajectory, stability_ratio};

/// Grid for the convergence studies.
#[derive(Debug, Clone)]
pub struct ConvergenceSpec {
    /// Frame lengths for the tracking study.
    pub frame_lengths: Vec<usize>,
    /// Arrival weights for the utility study.
    pub weights_v: Vec<f64>,
    /// Probe frames per (frame length, seed) cell.
    pub frames_per_length: usize,
    /// Trajectory length per (weight, seed) cell.
    pub intervals_per_weight: u64,
    /// Frame length used for the warm-up and the utility trajectories.
    pub fixed_frame_length: usize,
    pub seeds: Vec<u64>,
}

impl Default for ConvergenceSpec {
    fn default() -> Self {
        Self {
            frame_lengths: vec![10, 50, 200],
            weights_v: vec![1.0, 10.0, 100.0],
            frames_per_length: 40,
            intervals_per_weight: 100_000,
            fixed_frame_length: 100,
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

impl ConvergenceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frame_lengths.is_empty() && self.weights_v.is_empty() {
            return Err(Error::InvalidInput(
                "convergence spec has neither frame lengths nor weights".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidInput("convergence spec needs at least one seed".into()));
        }
        if self.frame_lengths.contains(&0) || self.fixed_frame_length == 0 {
            return Err(Error::InvalidInput("frame lengths must be ≥ 1".into()));
        }
        if !self.frame_lengths.is_empty() && self.frames_per_length == 0 {
            return Err(Error::InvalidInput("frames_per_length must be ≥ 1".into()));
        }
        if !self.weights_v.is_empty() && self.intervals_per_weight == 0 {
            return Err(Error::InvalidInput("intervals_per_weight must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Mean frame deviation `‖frame-average service − R*‖₂` at one frame length.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDeviationRow {
    pub frame_length: usize,
    pub mean_deviation: f64,
    pub stderr: f64,
}

/// Achieved utility and queue diagnostics at one arrival weight.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityRow {
    pub weight_v: f64,
    pub mean_utility: f64,
    pub stderr: f64,
    /// Utility of the arrival point the controller targets at the observed
    /// mean backlog — where the achieved utility should settle.
    pub bound: f64,
    /// Last-half mean total queue over third-quarter mean; ≈ 1 when stable.
    pub stability_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvergenceReport {
    pub frame_rows: Vec<FrameDeviationRow>,
    pub utility_rows: Vec<UtilityRow>,
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Draws a state index from a probability vector by inverse CDF.
fn sample_state(marginal: &[f64], rng: &mut RngStream) -> u64 {
    use rand::Rng;
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (s, &p) in marginal.iter().enumerate() {
        acc += p;
        if u < acc {
            return s as u64;
        }
    }
    (marginal.len() - 1) as u64
}

/// Runs one probe frame of `frame_length` intervals under a fixed policy
/// from a marginal-drawn entry state; returns `‖frame average − target‖₂`.
fn probe_frame(
    model: &MdpModel,
    policy: &StationaryPolicy,
    target: &[f64],
    marginal: &[f64],
    frame_length: usize,
    rng: &mut RngStream,
) -> f64 {
    let mut fields = model.space.decode(sample_state(marginal, rng));
    let mut service = vec![0.0f64; model.space.num_users()];
    for _ in 0..frame_length {
        let state = model.space.encode(&fields) as usize;
        let action = model.actions[policy.action_at(state)];
        for (slot, v) in service.iter_mut().zip(model.reward_vector(&fields, &action)) {
            *slot += v;
        }
        model.sample_next(&mut fields, &action, rng);
    }
    service
        .iter()
        .zip(target)
        .map(|(s, t)| (s / frame_length as f64 - t).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Queue operating point for the tracking study: the per-user mean backlog
/// over the last half of a warm-up run under the frame controller itself.
fn warmup_queue_point(
    model: &MdpModel,
    frame: &FrameConfig,
    spec: &ConvergenceSpec,
) -> Result<Vec<f64>> {
    let mut warm = frame.clone();
    warm.frame_length = spec.fixed_frame_length;
    let intervals = 30 * spec.fixed_frame_length as u64;
    let (_, log) = run_trajectory(
        model,
        &warm,
        PolicyKind::Frame,
        intervals,
        &RngStream::new(spec.seeds[0], 0),
    )?;
    let n = model.space.num_users();
    let half = log.records.len() / 2;
    let tail = &log.records[half..];
    let mut mean = vec![0.0f64; n];
    for r in tail {
        for (slot, &q) in mean.iter_mut().zip(&r.queues) {
            *slot += q;
        }
    }
    for slot in &mut mean {
        *slot /= tail.len() as f64;
    }
    Ok(mean)
}

/// Runs both studies against one model. The LP is solved and derandomized
/// once, at a warm-up operating point; every probe frame then replays that
/// fixed policy, so frame length is the only thing varying along the rows.
pub fn convergence_report(
    model: &MdpModel,
    frame: &FrameConfig,
    spec: &ConvergenceSpec,
) -> Result<ConvergenceReport> {
    spec.validate()?;
    frame.validate(model.space.num_users())?;
    let mut report = ConvergenceReport::default();

    if !spec.frame_lengths.is_empty() {
        let q_ref = warmup_queue_point(model, frame, spec)?;
        let x = solve_saf_lp(&q_ref, model)?;
        let target = lp_rates(&x, model);
        let marginal = x.state_marginal();
        let policy = derandomize(&x, model, &q_ref)?;
        for &t in &spec.frame_lengths {
            let mut deviations = Vec::with_capacity(spec.seeds.len() * spec.frames_per_length);
            for (seed_idx, &seed) in spec.seeds.iter().enumerate() {
                let rng = RngStream::new(seed, 1);
                for f in 0..spec.frames_per_length {
                    let mut probe_rng = rng.substream((t * spec.frames_per_length) as u64
                        + (seed_idx * spec.frames_per_length + f) as u64);
                    deviations.push(probe_frame(model, &policy, &target, &marginal, t, &mut probe_rng));
                }
            }
            let (mean_deviation, stderr) = mean_and_stderr(&deviations);
            report.frame_rows.push(FrameDeviationRow { frame_length: t, mean_deviation, stderr });
        }
    }

    for &v in &spec.weights_v {
        let mut run_frame = frame.clone();
        run_frame.weight_v = v;
        run_frame.frame_length = spec.fixed_frame_length;
        let mut utilities = Vec::with_capacity(spec.seeds.len());
        let mut ratios = Vec::with_capacity(spec.seeds.len());
        let mut mean_backlog = vec![0.0f64; model.space.num_users()];
        for &seed in &spec.seeds {
            let (metrics, log) = run_trajectory(
                model,
                &run_frame,
                PolicyKind::Frame,
                spec.intervals_per_weight,
                &RngStream::new(seed, 2),
            )?;
            utilities.push(metrics.utility);
            ratios.push(stability_ratio(&log));
            let half = log.records.len() / 2;
            let tail = &log.records[half..];
            for r in tail {
                for (slot, &q) in mean_backlog.iter_mut().zip(&r.queues) {
                    *slot += q / (tail.len() * spec.seeds.len()) as f64;
                }
            }
        }
        let queues = VirtualQueues::from_lengths(&mean_backlog);
        let bound_arrivals = solve_virtual_arrivals(&queues, &run_frame)?;
        let bound = run_frame.utility_kind()?.value(&bound_arrivals);
        let (mean_utility, stderr) = mean_and_stderr(&utilities);
        let ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
        report.utility_rows.push(UtilityRow {
            weight_v: v,
            mean_utility,
            stderr,
            bound,
            stability_ratio: ratio,
        });
    }

    Ok(report)
}

// ── tests ──────────────────────────────────────────────────────────────────
