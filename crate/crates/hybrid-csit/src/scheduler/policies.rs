//! The three controllers and the set-up phase.
//!
//! The frame controller re-solves the target arrivals and the occupancy LP
//! once per frame from the queue lengths at the boundary, then follows the
//! derandomized policy until the next boundary. The myopic baseline re-reads
//! the queues every interval and takes the one-step argmax, ignoring
//! transitions. The conventional baseline only ever looks at current coarse
//! symbols and transmits one-shot, so its pair records never refresh.

use crate::channel::{ConditionalModel, SystemConfig};
use crate::error::Result;
use crate::mdp::{
    derandomize, lp_rates, solve_saf_lp, Action, ActionKind, MdpModel, PairRecord, StateFields,
    StationaryPolicy,
};
use crate::numerics::RngStream;

use super::queues::{solve_virtual_arrivals, FrameConfig, VirtualQueues};

/// Which controller drives a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyKind {
    /// Per-frame LP policy on the virtual queues.
    Frame,
    /// Queue-weighted one-step argmax, re-read every interval.
    Myopic,
    /// Current-coarse-only one-shot transmission.
    Conventional,
}

/// Everything a controller carries across intervals: the live CSI state,
/// the virtual queues, and the current frame's arrivals and policy.
#[derive(Debug, Clone)]
pub struct SchedulerState {
    /// Pair records plus current coarse ids (the MDP state, live).
    pub fields: StateFields,
    /// Absolute interval at which each pair's record was last refreshed;
    /// set-up intervals count `0..P`, the main run continues from `P`.
    pub last_refresh: Vec<u64>,
    /// Next absolute interval index (set-up included).
    pub interval: u64,
    pub queues: VirtualQueues,
    /// The current frame's target arrivals `r*[τ]`.
    pub arrivals: Vec<f64>,
    /// The current frame's derandomized LP policy (frame controller only).
    pub frame_policy: Option<StationaryPolicy>,
    /// The current frame's occupancy rates (the `R*` the frame aims at).
    pub frame_target: Vec<f64>,
    /// How many LP solves have run — one per frame boundary.
    pub lp_solves: u64,
}

impl SchedulerState {
    /// Runs the set-up phase and starts with empty queues.
    pub fn new(model: &MdpModel, rng: &mut RngStream) -> Result<Self> {
        let num_users = model.space.num_users();
        let num_pairs = model.space.num_pairs();
        let fields = setup_phase(&model.cfg, &model.cond, rng)?;
        Ok(Self {
            fields,
            last_refresh: (0..num_pairs as u64).collect(),
            interval: num_pairs as u64,
            queues: VirtualQueues::new(num_users),
            arrivals: vec![0.0; num_users],
            frame_policy: None,
            frame_target: vec![0.0; num_users],
            lp_solves: 0,
        })
    }

    /// Applies a chosen action: refreshes the scheduled pair's record (pair
    /// actions only), advances the CSI state through the kernel, and bumps
    /// the interval counter. Queue updates are the caller's step, since the
    /// realized service depends on the service model.
    pub fn apply_action(&mut self, action: &Action, model: &MdpModel, rng: &mut RngStream) {
        if action.kind == ActionKind::Pair {
            let p = model.space.pair_index(action.i, action.j);
            self.last_refresh[p] = self.interval;
        }
        model.sample_next(&mut self.fields, action, rng);
        self.interval += 1;
    }
}

/// The initial set-up: each pair is served once, in pair-index order, so
/// every record is populated before the controller takes over. Current
/// coarse ids evolve through the same kernel as the main run.
pub fn setup_phase(
    cfg: &SystemConfig,
    cond: &ConditionalModel,
    rng: &mut RngStream,
) -> Result<StateFields> {
    cfg.validate()?;
    cond.validate()?;
    let n = cfg.num_users;
    let mut cur_coarse: Vec<usize> = (0..n).map(|_| cond.sample_coarse(rng)).collect();
    let mut records = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            records.push(PairRecord {
                past_fine_i: cond.sample_fine_given(cur_coarse[i], rng),
                past_fine_j: cond.sample_fine_given(cur_coarse[j], rng),
                past_coarse_i: cur_coarse[i],
                past_coarse_j: cur_coarse[j],
            });
            for slot in cur_coarse.iter_mut() {
                *slot = cond.sample_coarse(rng);
            }
        }
    }
    Ok(StateFields { records, cur_coarse })
}

/// The frame controller's per-interval decision. At `k ≡ 0 (mod T)` the
/// target arrivals and the LP policy are re-solved from the queue lengths at
/// the boundary; inside a frame the stored policy is reused untouched.
pub fn frame_policy_step(
    state: &mut SchedulerState,
    k: u64,
    model: &MdpModel,
    frame: &FrameConfig,
) -> Result<Action> {
    if k % frame.frame_length as u64 == 0 || state.frame_policy.is_none() {
        state.arrivals = solve_virtual_arrivals(&state.queues, frame)?;
        let q = state.queues.lengths().to_vec();
        let x = solve_saf_lp(&q, model)?;
        state.frame_target = lp_rates(&x, model);
        state.frame_policy = Some(derandomize(&x, model, &q)?);
        state.lp_solves += 1;
    }
    let policy = state.frame_policy.as_ref().expect("policy solved above");
    let s = model.space.encode(&state.fields) as usize;
    Ok(model.actions[policy.action_at(s)])
}

/// The myopic decision: the action maximizing `qᵀR(s, a)` right now, ties to
/// the lowest action index. Transition structure is deliberately ignored.
pub fn myopic_step(state: &SchedulerState, model: &MdpModel) -> Action {
    let q = state.queues.lengths();
    let mut best = 0usize;
    let mut best_value = f64::NEG_INFINITY;
    for (aidx, action) in model.actions.iter().enumerate() {
        let value = model.q_weighted_reward(q, &state.fields, action);
        if value > best_value {
            best_value = value;
            best = aidx;
        }
    }
    model.actions[best]
}

/// The conventional decision: the pair maximizing the queue-weighted
/// expected one-shot rates under the current coarse symbols, ties to the
/// lowest pair index. Always one-shot, so records never refresh.
pub fn conventional_step(state: &SchedulerState, model: &MdpModel) -> Action {
    let q = state.queues.lengths();
    let c = model.space.coarse_symbols();
    let mut best = 0usize;
    let mut best_value = f64::NEG_INFINITY;
    for (p, &(i, j)) in model.space.pairs().iter().enumerate() {
        let rates =
            model.oneshot_rewards[state.fields.cur_coarse[i] * c + state.fields.cur_coarse[j]];
        let value = q[i] * rates.rate_i + q[j] * rates.rate_j;
        if value > best_value {
            best_value = value;
            best = p;
        }
    }
    let (i, j) = model.space.pairs()[best];
    Action { kind: ActionKind::OneShot, i, j }
}

/// One controller-agnostic decision. The myopic and conventional baselines
/// run with frame length 1: their arrivals are re-solved every interval.
pub fn policy_step(
    state: &mut SchedulerState,
    k: u64,
    model: &MdpModel,
    frame: &FrameConfig,
    kind: PolicyKind,
) -> Result<Action> {
    match kind {
        PolicyKind::Frame => frame_policy_step(state, k, model, frame),
        PolicyKind::Myopic => {
            state.arrivals = solve_virtual_arrivals(&state.queues, frame)?;
            Ok(myopic_step(state, model))
        }
        PolicyKind::Conventional => {
            state.arrivals = solve_virtual_arrivals(&state.queues, frame)?;
            Ok(conventional_step(state, model))
        }
    }
}

// ── tests ──────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::super::queues::queue_update;
    use super::*;
    use crate::channel::tests_support::desk_system;
    use crate::error::Error;
    use crate::mdp::tests_support::desk_model;
    use crate::mdp::{evaluate_policy, StationaryPolicy};

    #[test]
    fn setup_serves_every_pair_once_and_is_deterministic() {
        let model = desk_model();
        let mut rng = RngStream::new(5, 0);
        let fields = setup_phase(&model.cfg, &model.cond, &mut rng).unwrap();
        assert_eq!(fields.records.len(), 3);
        assert_eq!(fields.cur_coarse.len(), 3);
        let mut rng2 = RngStream::new(5, 0);
        let again = setup_phase(&model.cfg, &model.cond, &mut rng2).unwrap();
        assert_eq!(fields, again);

        // N = 4 → 6 set-up intervals, one record each.
        let mut cfg = desk_system();
        cfg.num_users = 4;
        let wide = setup_phase(&cfg, &model.cond, &mut RngStream::new(5, 1)).unwrap();
        assert_eq!(wide.records.len(), 6);
    }

    #[test]
    fn frame_policy_resolves_once_per_frame() {
        let model = desk_model();
        let frame = FrameConfig {
            frame_length: 5,
            utility: "sum".into(),
            ..FrameConfig::default()
        };
        let mut state = SchedulerState::new(model, &mut RngStream::new(11, 0)).unwrap();
        let mut rng = RngStream::new(11, 1);
        for k in 0..12 {
            let action = frame_policy_step(&mut state, k, model, &frame).unwrap();
            let service = model.reward_vector(&state.fields, &action);
            state.apply_action(&action, model, &mut rng);
            let arrivals = state.arrivals.clone();
            queue_update(&mut state.queues, &service, &arrivals);
        }
        // Boundaries at k = 0, 5, 10 — and nowhere else.
        assert_eq!(state.lp_solves, 3);
    }

    #[test]
    fn myopic_takes_the_queue_weighted_argmax_with_low_tie() {
        let model = desk_model();
        let mut state = SchedulerState::new(model, &mut RngStream::new(13, 0)).unwrap();

        // Zero queues: every action scores 0, tie-break picks action 0.
        let action = myopic_step(&state, model);
        assert_eq!(action, model.actions[0]);

        // Non-trivial queues: must match a direct argmax, and scaling the
        // queues must not change the choice.
        state.queues.q = vec![3.0, 0.5, 1.0];
        let chosen = myopic_step(&state, model);
        let values: Vec<f64> = model
            .actions
            .iter()
            .map(|a| model.q_weighted_reward(&state.queues.q, &state.fields, a))
            .collect();
        let best = values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(chosen, model.actions[best]);
        state.queues.q = vec![30.0, 5.0, 10.0];
        assert_eq!(myopic_step(&state, model), chosen);
    }

    #[test]
    fn conventional_never_refreshes_records() {
        let model = desk_model();
        let mut state = SchedulerState::new(model, &mut RngStream::new(17, 0)).unwrap();
        let initial_records = state.fields.records.clone();
        let initial_refresh = state.last_refresh.clone();
        let mut rng = RngStream::new(17, 1);
        for _ in 0..50 {
            let action = conventional_step(&state, model);
            assert_eq!(action.kind, ActionKind::OneShot);
            state.apply_action(&action, model, &mut rng);
        }
        assert_eq!(state.fields.records, initial_records);
        assert_eq!(state.last_refresh, initial_refresh);
    }

    #[test]
    fn conventional_selection_follows_the_queue_weighted_rates() {
        // The desk instance has a single coarse symbol, so every pair shares
        // the same expected one-shot rates. Equal queues then tie everywhere
        // and the lowest pair index must win; unequal queues make the pair
        // with the largest queue sum the strict argmax.
        let model = desk_model();
        let mut state = SchedulerState::new(model, &mut RngStream::new(19, 0)).unwrap();
        state.queues.q = vec![1.0; 3];
        let action = conventional_step(&state, model);
        assert_eq!((action.i, action.j), (0, 1));

        state.queues.q = vec![0.2, 1.0, 2.0];
        let action = conventional_step(&state, model);
        assert_eq!((action.i, action.j), (1, 2));
    }

    #[test]
    fn myopic_fixed_queue_value_never_beats_the_lp() {
        // The myopic rule with a frozen queue vector is one particular
        // stationary deterministic policy, so its exact long-run value must
        // sit inside the LP region.
        let model = desk_model();
        let q = vec![1.0; 3];
        let opt = solve_saf_lp(&q, model).unwrap();
        let n = model.space.total_states() as usize;
        let actions: Vec<usize> = (0..n)
            .map(|s| {
                let fields = model.space.decode(s as u64);
                let mut best = 0;
                let mut best_value = f64::NEG_INFINITY;
                for (aidx, action) in model.actions.iter().enumerate() {
                    let value = model.q_weighted_reward(&q, &fields, action);
                    if value > best_value {
                        best_value = value;
                        best = aidx;
                    }
                }
                best
            })
            .collect();
        let policy = StationaryPolicy::pure(&actions, model.num_actions());
        let class_values = match evaluate_policy(&policy, model) {
            Ok(rates) => vec![rates],
            Err(Error::ReducibleChain { per_class_rates }) => per_class_rates,
            Err(other) => panic!("evaluation failed: {other:?}"),
        };
        for rates in class_values {
            let value: f64 = rates.iter().sum();
            assert!(
                value <= opt.objective + 1e-6,
                "myopic value {value} beats the LP objective {}",
                opt.objective
            );
        }
    }

    #[test]
    fn frame_averages_track_the_frame_target() {
        // Lemma-2 style: a frame started from the solution's own state
        // marginal has expected frame-average service equal to the frame's
        // occupancy rates (stationarity), so the per-user deviation over
        // many frames must be noise, not drift. Starting from the marginal
        // matters: an arbitrary entry state is absorbed into one recurrent
        // class of the deterministic policy, while the occupancy rates
        // average over all classes it charges with mass.
        use rand::Rng;
        let model = desk_model();
        let frame = FrameConfig {
            frame_length: 200,
            utility: "sum".into(),
            ..FrameConfig::default()
        };
        let mut state = SchedulerState::new(model, &mut RngStream::new(23, 0)).unwrap();
        state.queues.q = vec![12.0, 9.0, 10.5];
        let mut rng = RngStream::new(23, 1);
        let frames = 15usize;
        let t = frame.frame_length as u64;

        let q = state.queues.lengths().to_vec();
        let x = solve_saf_lp(&q, model).unwrap();
        let target = lp_rates(&x, model);
        let marginal = x.state_marginal();
        let mut deviations: Vec<Vec<f64>> = vec![Vec::new(); 3];
        for tau in 0..frames as u64 {
            // Draw the frame's entry state from the occupancy marginal.
            let mut u: f64 = rng.gen::<f64>() * marginal.iter().sum::<f64>();
            let mut entry = marginal.len() - 1;
            for (s, &mass) in marginal.iter().enumerate() {
                if u < mass {
                    entry = s;
                    break;
                }
                u -= mass;
            }
            state.fields = model.space.decode(entry as u64);
            state.queues.q = q.clone();
            state.frame_policy = None;
            let mut served = vec![0.0f64; 3];
            for k in tau * t..(tau + 1) * t {
                let action = frame_policy_step(&mut state, k, model, &frame).unwrap();
                let service = model.reward_vector(&state.fields, &action);
                for (slot, r) in served.iter_mut().zip(&service) {
                    *slot += r;
                }
                state.apply_action(&action, model, &mut rng);
            }
            assert_eq!(state.frame_target, target, "same queues, same LP target");
            for user in 0..3 {
                deviations[user].push(served[user] / t as f64 - target[user]);
            }
        }
        for user in 0..3 {
            let mean: f64 = deviations[user].iter().sum::<f64>() / frames as f64;
            let var: f64 = deviations[user]
                .iter()
                .map(|d| (d - mean).powi(2))
                .sum::<f64>()
                / (frames - 1) as f64;
            let se = (var / frames as f64).sqrt();
            assert!(
                mean.abs() < 3.0 * se + 1e-9,
                "user {user}: mean frame deviation {mean} (se {se})"
            );
        }
    }
}
