//! Trajectory execution and exact metric accounting.
//!
//! A trajectory is the set-up phase followed by `J` controller intervals.
//! Every interval appends one log record; all reported metrics are computed
//! from those records alone, so anything the harness claims can be recomputed
//! bit-for-bit from a serialized log.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::mdp::{Action, ActionKind, MdpModel, StateFields};
use crate::numerics::RngStream;
use crate::scheduler::{
    policy_step, queue_update, FrameConfig, PolicyKind, SchedulerState, ServiceModel,
};
use crate::transmission::{sample_oneshot_rates, sample_pair_rates};

/// One logged interval: state and action, the realized per-user service, and
/// the queue lengths after the interval's update.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub interval: u64,
    pub state: u64,
    pub action: Action,
    pub rates: Vec<f64>,
    pub queues: Vec<f64>,
}

/// A full trajectory log: the newline-delimited records plus the per-frame
/// LP targets (frame controller only; empty for the baselines).
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub records: Vec<LogRecord>,
    pub frame_targets: Vec<Vec<f64>>,
    pub frame_length: usize,
}

impl TrajectoryLog {
    /// Newline-delimited text form: `interval state action rates queues`
    /// with comma-joined vectors. Rust's float formatting is shortest-
    /// roundtrip, so parsing recovers every value bit-exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let rates = r
                .rates
                .iter()
                .map(f64::to_string)
                .collect::<Vec<_>>()
                .join(",");
            let queues = r
                .queues
                .iter()
                .map(f64::to_string)
                .collect::<Vec<_>>()
                .join(",");
            writeln!(out, "{} {} {} {} {}", r.interval, r.state, r.action, rates, queues)
                .expect("string write");
        }
        out
    }
}

/// Parses the text form back into records; `#`-prefixed lines are comments.
pub fn parse_log_text(text: &str) -> Result<Vec<LogRecord>> {
    let bad = |line: usize, what: &str| {
        Error::InvalidInput(format!("log line {}: {what}", line + 1))
    };
    let mut records = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split(' ');
        let interval = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(ln, "missing interval"))?;
        let state = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(ln, "missing state"))?;
        let action = parts
            .next()
            .and_then(parse_action)
            .ok_or_else(|| bad(ln, "missing or malformed action"))?;
        let vector = |field: Option<&str>, what: &str| -> Result<Vec<f64>> {
            field
                .ok_or_else(|| bad(ln, what))?
                .split(',')
                .map(|v| v.parse().map_err(|_| bad(ln, what)))
                .collect()
        };
        let rates = vector(parts.next(), "malformed rates")?;
        let queues = vector(parts.next(), "malformed queues")?;
        if parts.next().is_some() {
            return Err(bad(ln, "trailing fields"));
        }
        records.push(LogRecord { interval, state, action, rates, queues });
    }
    Ok(records)
}

fn parse_action(text: &str) -> Option<Action> {
    let (kind, rest) = if let Some(rest) = text.strip_prefix("pair(") {
        (ActionKind::Pair, rest)
    } else if let Some(rest) = text.strip_prefix("oneshot(") {
        (ActionKind::OneShot, rest)
    } else {
        return None;
    };
    let inner = rest.strip_suffix(')')?;
    let (i, j) = inner.split_once(',')?;
    Some(Action { kind, i: i.parse().ok()?, j: j.parse().ok()? })
}

/// Everything measured on a trajectory, computed exactly from its log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryMetrics {
    /// Per-user total service over the run (bits).
    pub cumulative_service: Vec<f64>,
    /// Per-user empirical throughput: cumulative service / intervals.
    pub throughput: Vec<f64>,
    /// The configured utility evaluated at the throughput vector.
    pub utility: f64,
    /// Mean of the total queue length `Σ_n Q_n` over the run.
    pub queue_mean: f64,
    /// Maximum total queue length over the run.
    pub queue_max: f64,
    /// Lyapunov value `½ Σ Q_n²` at the final interval.
    pub lyapunov_final: f64,
    /// `‖frame-average service − R*‖₂` per complete frame (frame controller
    /// only; empty otherwise).
    pub frame_deviations: Vec<f64>,
}

impl TrajectoryMetrics {
    pub fn from_log(log: &TrajectoryLog, frame: &FrameConfig) -> Result<Self> {
        let records = &log.records;
        if records.is_empty() {
            return Err(Error::InvalidInput("empty trajectory log".into()));
        }
        let n = records[0].rates.len();
        let utility_kind = frame.utility_kind()?;
        let mut cumulative = vec![0.0f64; n];
        let mut queue_sum = 0.0f64;
        let mut queue_max = 0.0f64;
        for r in records {
            for (slot, &v) in cumulative.iter_mut().zip(&r.rates) {
                *slot += v;
            }
            let total: f64 = r.queues.iter().sum();
            queue_sum += total;
            queue_max = queue_max.max(total);
        }
        let intervals = records.len() as f64;
        let throughput: Vec<f64> = cumulative.iter().map(|&c| c / intervals).collect();
        let last = &records[records.len() - 1];
        let lyapunov_final = 0.5 * last.queues.iter().map(|q| q * q).sum::<f64>();

        let t = log.frame_length;
        let mut frame_deviations = Vec::new();
        for (f, target) in log.frame_targets.iter().enumerate() {
            let (lo, hi) = (f * t, (f + 1) * t);
            if hi > records.len() {
                break;
            }
            let mut avg = vec![0.0f64; n];
            for r in &records[lo..hi] {
                for (slot, &v) in avg.iter_mut().zip(&r.rates) {
                    *slot += v;
                }
            }
            let dev: f64 = avg
                .iter()
                .zip(target)
                .map(|(a, t_n)| (a / t as f64 - t_n).powi(2))
                .sum::<f64>()
                .sqrt();
            frame_deviations.push(dev);
        }

        Ok(Self {
            cumulative_service: cumulative,
            throughput: throughput.clone(),
            utility: utility_kind.value(&throughput),
            queue_mean: queue_sum / intervals,
            queue_max,
            lyapunov_final,
            frame_deviations,
        })
    }
}

/// Drift detector for strong stability: mean total queue over the last half
/// of the run divided by the mean over the third quarter. A ratio near 1
/// means the queues stopped growing.
pub fn stability_ratio(log: &TrajectoryLog) -> f64 {
    let n = log.records.len();
    let total = |range: std::ops::Range<usize>| -> f64 {
        let len = range.len().max(1) as f64;
        log.records[range]
            .iter()
            .map(|r| r.queues.iter().sum::<f64>())
            .sum::<f64>()
            / len
    };
    let third_quarter = total(n / 2..3 * n / 4);
    let last_half = total(n / 2..n);
    if third_quarter == 0.0 {
        if last_half == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        last_half / third_quarter
    }
}

/// The realized per-user service of one interval under the configured
/// service model: conditional means from the reward tables, or one fresh
/// channel realization.
fn realized_service(
    model: &MdpModel,
    fields: &StateFields,
    action: &Action,
    service: ServiceModel,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    match service {
        ServiceModel::Expected => Ok(model.reward_vector(fields, action)),
        ServiceModel::Instantaneous => {
            let pair = match action.kind {
                ActionKind::Pair => sample_pair_rates(
                    &model.cfg,
                    &model.books,
                    &model.pools,
                    &model.tuple_for(fields, action),
                    rng,
                )?,
                ActionKind::OneShot => sample_oneshot_rates(
                    &model.cfg,
                    &model.books,
                    &model.pools,
                    fields.cur_coarse[action.i],
                    fields.cur_coarse[action.j],
                    rng,
                )?,
            };
            let mut out = vec![0.0; model.space.num_users()];
            out[action.i] = pair.rate_i;
            out[action.j] = pair.rate_j;
            Ok(out)
        }
    }
}

/// Runs the set-up phase and `intervals` controller intervals, returning the
/// metrics and the full log. The parent stream splits into independent
/// substreams for set-up, kernel sampling, and service realizations, so runs
/// are bit-reproducible whatever the thread layout around them.
pub fn run_trajectory(
    model: &MdpModel,
    frame: &FrameConfig,
    kind: PolicyKind,
    intervals: u64,
    rng: &RngStream,
) -> Result<(TrajectoryMetrics, TrajectoryLog)> {
    frame.validate(model.space.num_users())?;
    if intervals == 0 {
        return Err(Error::InvalidInput("a trajectory needs at least one interval".into()));
    }
    let mut setup_rng = rng.substream(0);
    let mut kernel_rng = rng.substream(1);
    let mut service_rng = rng.substream(2);
    let mut state = SchedulerState::new(model, &mut setup_rng)?;
    let mut records = Vec::with_capacity(intervals as usize);
    let mut frame_targets = Vec::new();
    for k in 0..intervals {
        let action = policy_step(&mut state, k, model, frame, kind)?;
        if kind == PolicyKind::Frame && k % frame.frame_length as u64 == 0 {
            frame_targets.push(state.frame_target.clone());
        }
        let state_index = model.space.encode(&state.fields);
        let service = realized_service(model, &state.fields, &action, frame.service_model, &mut service_rng)?;
        state.apply_action(&action, model, &mut kernel_rng);
        let arrivals = state.arrivals.clone();
        queue_update(&mut state.queues, &service, &arrivals);
        records.push(LogRecord {
            interval: k,
            state: state_index,
            action,
            rates: service,
            queues: state.queues.lengths().to_vec(),
        });
    }
    let log = TrajectoryLog { records, frame_targets, frame_length: frame.frame_length };
    let metrics = TrajectoryMetrics::from_log(&log, frame)?;
    Ok((metrics, log))
}

// ── tests ──────────────────────────────────────────────────────────────────
