//! The finite MDP: tuple-keyed reward tables and the factorized transition
//! kernel.
//!
//! Rewards depend on a scheduled pair only through six symbols — the pair's
//! stored past reports and the two current coarse reports — so they are
//! tabulated once per ordered 6-tuple instead of once per full state. The
//! transition kernel is never densified: a step refreshes the scheduled
//! pair's record from the current coarse symbols (fine reports drawn from
//! the conditional model, past-coarse set to the old current symbols), draws
//! every user's next coarse symbol i.i.d. from the marginal, and leaves all
//! other pair records untouched. One-shot actions refresh no record at all.

use rayon::prelude::*;

use crate::channel::{ChannelPools, Codebooks, ConditionalModel, RateMode, SystemConfig};
use crate::error::{Error, Result};
use crate::numerics::RngStream;
use crate::transmission::{
    expected_oneshot_rates, expected_pair_rates_with_assignment, rate_assignment, CsiTuple,
    PairRates,
};

use super::state::{Action, ActionKind, StateFields, StateSpace};

// Substream children of the model-build stream. Each reward cell owns a
// stream keyed by its table index, so the build is reproducible whatever the
// thread count or evaluation order.
const POOLS_CHILD: u64 = 0;
const ASSIGN_BASE: u64 = 1 << 32;
const PAIR_TABLE_BASE: u64 = 2 << 32;
const ONESHOT_TABLE_BASE: u64 = 3 << 32;

/// Everything the solver, the policies, and the simulator need: geometry,
/// symbol model, conditioned channel pools, and the reward tables. Immutable
/// after build.
#[derive(Debug, Clone)]
pub struct MdpModel {
    pub cfg: SystemConfig,
    pub space: StateSpace,
    pub actions: Vec<Action>,
    pub cond: ConditionalModel,
    pub books: Codebooks,
    pub pools: ChannelPools,
    /// Expected pair rates per ordered 6-tuple index (see
    /// [`MdpModel::tuple_index`]).
    pub pair_rewards: Vec<PairRates>,
    /// Expected one-shot rates per ordered current-coarse pair
    /// `cc_i · c + cc_j`. Always built: the conventional baseline consumes
    /// it even when one-shot actions are not part of the MDP.
    pub oneshot_rewards: Vec<PairRates>,
}

/// Builds codebooks' conditional tables into a full model. Rewards are
/// Monte-Carlo expectations over the channel pools; cells the symbol model
/// gives zero probability are skipped with zero reward (no state carrying
/// stationary mass ever conditions on them). `rng` is only forked: every
/// table cell draws from its own child stream.
pub fn build_model(
    cfg: &SystemConfig,
    books: &Codebooks,
    cond: &ConditionalModel,
    rng: &RngStream,
) -> Result<MdpModel> {
    cfg.validate()?;
    cond.validate()?;
    let space = StateSpace::for_config(cfg)?;
    if cond.coarse_symbols() != space.coarse_symbols()
        || cond.fine_symbols() != space.fine_symbols()
    {
        return Err(Error::InvalidInput(format!(
            "conditional model is {}×{} symbols but the configuration implies {}×{}",
            cond.coarse_symbols(),
            cond.fine_symbols(),
            space.coarse_symbols(),
            space.fine_symbols()
        )));
    }
    let pools = ChannelPools::build(cfg, books, cond, &mut rng.substream(POOLS_CHILD))?;
    let c = space.coarse_symbols();
    let f = space.fine_symbols();

    // Guaranteed-throughput mode fixes one rate assignment per ordered
    // coarse pair; every tuple sharing that coarse pair reuses it.
    let assignments: Vec<Option<(f64, f64)>> = if cfg.rate_mode == RateMode::Conservative {
        (0..c * c)
            .into_par_iter()
            .map(|idx| -> Result<Option<(f64, f64)>> {
                let (a, b) = (idx / c, idx % c);
                if cond.pi_coarse[a] == 0.0 || cond.pi_coarse[b] == 0.0 {
                    return Ok(None);
                }
                let mut cell_rng = rng.substream(ASSIGN_BASE + idx as u64);
                rate_assignment(cfg, books, cond, &pools, a, b, &mut cell_rng)
                    .map(Some)
                    .map_err(|e| tag_cell(e, &format!("rate assignment for coarse pair ({a},{b})")))
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        vec![None; c * c]
    };

    let tuple_count = f * f * c * c * c * c;
    let pair_rewards: Vec<PairRates> = (0..tuple_count)
        .into_par_iter()
        .map(|idx| -> Result<PairRates> {
            let tuple = tuple_at(idx, c, f);
            if cond.joint_prob(tuple.past_coarse_i, tuple.past_fine_i) == 0.0
                || cond.joint_prob(tuple.past_coarse_j, tuple.past_fine_j) == 0.0
                || cond.pi_coarse[tuple.cur_coarse_i] == 0.0
                || cond.pi_coarse[tuple.cur_coarse_j] == 0.0
            {
                return Ok(PairRates { rate_i: 0.0, rate_j: 0.0 });
            }
            let assigned = assignments[tuple.past_coarse_i * c + tuple.past_coarse_j];
            let mut cell_rng = rng.substream(PAIR_TABLE_BASE + idx as u64);
            expected_pair_rates_with_assignment(cfg, books, &pools, &tuple, assigned, &mut cell_rng)
                .map_err(|e| tag_cell(e, &format!("reward tuple {tuple:?}")))
        })
        .collect::<Result<Vec<_>>>()?;

    let oneshot_rewards: Vec<PairRates> = (0..c * c)
        .into_par_iter()
        .map(|idx| -> Result<PairRates> {
            let (a, b) = (idx / c, idx % c);
            if cond.pi_coarse[a] == 0.0 || cond.pi_coarse[b] == 0.0 {
                return Ok(PairRates { rate_i: 0.0, rate_j: 0.0 });
            }
            let mut cell_rng = rng.substream(ONESHOT_TABLE_BASE + idx as u64);
            expected_oneshot_rates(cfg, books, &pools, a, b, &mut cell_rng)
                .map_err(|e| tag_cell(e, &format!("one-shot rewards for coarse pair ({a},{b})")))
        })
        .collect::<Result<Vec<_>>>()?;

    let actions = space.action_list(cfg.enable_oneshot_actions);
    Ok(MdpModel {
        cfg: cfg.clone(),
        space,
        actions,
        cond: cond.clone(),
        books: books.clone(),
        pools,
        pair_rewards,
        oneshot_rewards,
    })
}

/// Reassembles a model from prebuilt tables — the cache-load path. The
/// channel pools depend only on geometry and are cheap next to the reward
/// sweeps, so they are rebuilt on the same child stream the original build
/// used rather than stored.
pub fn assemble_model(
    cfg: &SystemConfig,
    books: Codebooks,
    cond: ConditionalModel,
    pair_rewards: Vec<PairRates>,
    oneshot_rewards: Vec<PairRates>,
    rng: &RngStream,
) -> Result<MdpModel> {
    cfg.validate()?;
    cond.validate()?;
    let space = StateSpace::for_config(cfg)?;
    let c = space.coarse_symbols();
    let f = space.fine_symbols();
    if cond.coarse_symbols() != c || cond.fine_symbols() != f {
        return Err(Error::InvalidInput(format!(
            "conditional model is {}×{} symbols but the configuration implies {c}×{f}",
            cond.coarse_symbols(),
            cond.fine_symbols()
        )));
    }
    if pair_rewards.len() != f * f * c * c * c * c {
        return Err(Error::InvalidInput(format!(
            "pair-reward table has {} entries, expected {}",
            pair_rewards.len(),
            f * f * c * c * c * c
        )));
    }
    if oneshot_rewards.len() != c * c {
        return Err(Error::InvalidInput(format!(
            "one-shot reward table has {} entries, expected {}",
            oneshot_rewards.len(),
            c * c
        )));
    }
    let pools = ChannelPools::build(cfg, &books, &cond, &mut rng.substream(POOLS_CHILD))?;
    let actions = space.action_list(cfg.enable_oneshot_actions);
    Ok(MdpModel {
        cfg: cfg.clone(),
        space,
        actions,
        cond,
        books,
        pools,
        pair_rewards,
        oneshot_rewards,
    })
}

/// Attaches the offending table cell to a build error.
fn tag_cell(err: Error, cell: &str) -> Error {
    match err {
        Error::InfeasibleConditioning { context, attempts } => Error::InfeasibleConditioning {
            context: format!("{context} ({cell})"),
            attempts,
        },
        Error::DegeneratePrecoder(msg) => Error::DegeneratePrecoder(format!("{msg} ({cell})")),
        other => other,
    }
}

pub fn tuple_at(mut idx: usize, c: usize, f: usize) -> CsiTuple {
    let cur_coarse_j = idx % c;
    idx /= c;
    let cur_coarse_i = idx % c;
    idx /= c;
    let past_coarse_j = idx % c;
    idx /= c;
    let past_coarse_i = idx % c;
    idx /= c;
    let past_fine_j = idx % f;
    idx /= f;
    let past_fine_i = idx % f;
    debug_assert!(past_fine_i < f);
    CsiTuple {
        past_fine_i,
        past_fine_j,
        past_coarse_i,
        past_coarse_j,
        cur_coarse_i,
        cur_coarse_j,
    }
}

impl MdpModel {
    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    /// Number of ordered 6-tuples in the pair-reward table.
    pub fn tuple_count(&self) -> usize {
        let c = self.space.coarse_symbols();
        let f = self.space.fine_symbols();
        f * f * c * c * c * c
    }

    /// Flat index of an ordered 6-tuple: digits `(past_fine_i, past_fine_j,
    /// past_coarse_i, past_coarse_j, cur_coarse_i, cur_coarse_j)`, most
    /// significant first.
    pub fn tuple_index(&self, t: &CsiTuple) -> usize {
        let c = self.space.coarse_symbols();
        let f = self.space.fine_symbols();
        debug_assert!(t.past_fine_i < f && t.past_fine_j < f);
        debug_assert!(t.past_coarse_i < c && t.past_coarse_j < c);
        debug_assert!(t.cur_coarse_i < c && t.cur_coarse_j < c);
        ((((t.past_fine_i * f + t.past_fine_j) * c + t.past_coarse_i) * c + t.past_coarse_j) * c
            + t.cur_coarse_i)
            * c
            + t.cur_coarse_j
    }

    /// The 6-tuple an action reads out of a state.
    pub fn tuple_for(&self, fields: &StateFields, action: &Action) -> CsiTuple {
        let rec = fields.records[self.space.pair_index(action.i, action.j)];
        CsiTuple {
            past_fine_i: rec.past_fine_i,
            past_fine_j: rec.past_fine_j,
            past_coarse_i: rec.past_coarse_i,
            past_coarse_j: rec.past_coarse_j,
            cur_coarse_i: fields.cur_coarse[action.i],
            cur_coarse_j: fields.cur_coarse[action.j],
        }
    }

    /// Expected service rates of the action's two users in this state.
    pub fn action_rates(&self, fields: &StateFields, action: &Action) -> PairRates {
        match action.kind {
            ActionKind::Pair => {
                let tuple = self.tuple_for(fields, action);
                self.pair_rewards[self.tuple_index(&tuple)]
            }
            ActionKind::OneShot => {
                let c = self.space.coarse_symbols();
                self.oneshot_rewards
                    [fields.cur_coarse[action.i] * c + fields.cur_coarse[action.j]]
            }
        }
    }

    /// Per-user reward vector: zero for everyone outside the scheduled pair.
    pub fn reward_vector(&self, fields: &StateFields, action: &Action) -> Vec<f64> {
        let rates = self.action_rates(fields, action);
        let mut reward = vec![0.0; self.space.num_users()];
        reward[action.i] = rates.rate_i;
        reward[action.j] = rates.rate_j;
        reward
    }

    /// Queue-weighted reward `q_i·R_i + q_j·R_j` (the myopic score and the
    /// LP objective coefficient).
    pub fn q_weighted_reward(&self, q: &[f64], fields: &StateFields, action: &Action) -> f64 {
        let rates = self.action_rates(fields, action);
        q[action.i] * rates.rate_i + q[action.j] * rates.rate_j
    }

    /// All successor states of `(state, action)` with their probabilities.
    /// The enumeration is `c^N` current-coarse combinations, times `f²` new
    /// fine reports for a pair action; zero-probability branches are
    /// omitted, so the returned probabilities sum to 1.
    pub fn successors(&self, state: u64, action: &Action) -> Vec<(u64, f64)> {
        self.successors_fields(&self.space.decode(state), action)
    }

    /// As [`Self::successors`], for an already-decoded state.
    pub fn successors_fields(&self, fields: &StateFields, action: &Action) -> Vec<(u64, f64)> {
        let c = self.space.coarse_symbols();
        let f = self.space.fine_symbols();
        let n = self.space.num_users();
        let pair_idx = self.space.pair_index(action.i, action.j);
        let (old_cc_i, old_cc_j) = (fields.cur_coarse[action.i], fields.cur_coarse[action.j]);

        // New fine reports for the scheduled pair; a one-shot action keeps
        // the record, expressed as a single unit-probability branch.
        let fine_branches: Vec<(Option<(usize, usize)>, f64)> = match action.kind {
            ActionKind::Pair => {
                let mut branches = Vec::with_capacity(f * f);
                for nf_i in 0..f {
                    let p_i = self.cond.p_fine_given_coarse[old_cc_i][nf_i];
                    if p_i == 0.0 {
                        continue;
                    }
                    for nf_j in 0..f {
                        let p = p_i * self.cond.p_fine_given_coarse[old_cc_j][nf_j];
                        if p > 0.0 {
                            branches.push((Some((nf_i, nf_j)), p));
                        }
                    }
                }
                branches
            }
            ActionKind::OneShot => vec![(None, 1.0)],
        };

        let mut next = fields.clone();
        let mut out = Vec::new();
        for &(fine, p_fine) in &fine_branches {
            next.records = fields.records.clone();
            if let Some((nf_i, nf_j)) = fine {
                next.records[pair_idx] = super::state::PairRecord {
                    past_fine_i: nf_i,
                    past_fine_j: nf_j,
                    past_coarse_i: old_cc_i,
                    past_coarse_j: old_cc_j,
                };
            }
            // Mixed-radix sweep over every user's next coarse symbol.
            let mut digits = vec![0usize; n];
            loop {
                let p_cur: f64 = digits.iter().map(|&d| self.cond.pi_coarse[d]).product();
                if p_cur > 0.0 {
                    next.cur_coarse.copy_from_slice(&digits);
                    out.push((self.space.encode(&next), p_fine * p_cur));
                }
                let mut pos = n;
                loop {
                    if pos == 0 {
                        break;
                    }
                    pos -= 1;
                    digits[pos] += 1;
                    if digits[pos] < c {
                        break;
                    }
                    digits[pos] = 0;
                }
                if digits.iter().all(|&d| d == 0) {
                    break;
                }
            }
        }
        out
    }

    /// Single-entry transition probability `P(next | cur, action)`.
    pub fn transition_prob(&self, next: u64, cur: u64, action: &Action) -> f64 {
        let from = self.space.decode(cur);
        let to = self.space.decode(next);
        let pair_idx = self.space.pair_index(action.i, action.j);
        for (k, (rec_from, rec_to)) in from.records.iter().zip(&to.records).enumerate() {
            if k != pair_idx || action.kind == ActionKind::OneShot {
                if rec_from != rec_to {
                    return 0.0;
                }
            }
        }
        let mut prob = 1.0;
        if action.kind == ActionKind::Pair {
            let rec = &to.records[pair_idx];
            if rec.past_coarse_i != from.cur_coarse[action.i]
                || rec.past_coarse_j != from.cur_coarse[action.j]
            {
                return 0.0;
            }
            prob *= self.cond.p_fine_given_coarse[rec.past_coarse_i][rec.past_fine_i]
                * self.cond.p_fine_given_coarse[rec.past_coarse_j][rec.past_fine_j];
        }
        for &cc in &to.cur_coarse {
            prob *= self.cond.pi_coarse[cc];
        }
        prob
    }

    /// Samples the next state in place. Draw order is fixed — the pair's new
    /// fine reports (user `i` then `j`), then every user's coarse symbol in
    /// index order — so trajectories are reproducible.
    pub fn sample_next(&self, fields: &mut StateFields, action: &Action, rng: &mut RngStream) {
        if action.kind == ActionKind::Pair {
            let pair_idx = self.space.pair_index(action.i, action.j);
            let (cc_i, cc_j) = (fields.cur_coarse[action.i], fields.cur_coarse[action.j]);
            fields.records[pair_idx] = super::state::PairRecord {
                past_fine_i: self.cond.sample_fine_given(cc_i, rng),
                past_fine_j: self.cond.sample_fine_given(cc_j, rng),
                past_coarse_i: cc_i,
                past_coarse_j: cc_j,
            };
        }
        for slot in fields.cur_coarse.iter_mut() {
            *slot = self.cond.sample_coarse(rng);
        }
    }

    /// The state count as a dense-enumeration size, or a refusal naming the
    /// cap that machinery imposes.
    pub fn dense_state_count(&self, limit: usize) -> Result<usize> {
        let total = self.space.total_states();
        if total > limit as u64 {
            return Err(Error::StateSpaceTooLarge {
                states: total as f64,
                limit: limit as u64,
            });
        }
        Ok(total as usize)
    }
}

// ── tests ──────────────────────────────────────────────────────────────────
