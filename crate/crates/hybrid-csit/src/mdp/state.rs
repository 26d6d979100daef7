//! Dense indexing of the finite scheduling-MDP state space.
//!
//! A state records, for every unordered user pair, the four symbols the pair
//! reported the last time it was scheduled (fine and coarse for both users),
//! plus every user's current coarse symbol. With `f` fine symbols, `c`
//! coarse symbols and `N` users that makes `(f²c²)^{N(N−1)/2} · c^N` states.
//! The whole record is packed into one mixed-radix `u64` — small instances
//! can be enumerated densely, larger ones still get stable indices for
//! logging — and configurations whose count does not fit are rejected with
//! the computed size so the refusal can cite it.

use crate::channel::SystemConfig;
use crate::error::{Error, Result};

/// States are indexed by `u64`; configurations beyond this are refused.
pub const STATE_COUNT_LIMIT: u64 = u64::MAX;

/// What a scheduled pair does with its interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActionKind {
    /// Three-slot transmission: new packets plus interference resolution for
    /// the pair's previous interval.
    Pair,
    /// Conventional one-shot transmission; no pair record is refreshed.
    OneShot,
}

/// One scheduling decision: a user pair and how it is served.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Action {
    pub kind: ActionKind,
    /// First user of the pair, `i < j`.
    pub i: usize,
    /// Second user of the pair.
    pub j: usize,
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.kind {
            ActionKind::Pair => write!(f, "pair({},{})", self.i, self.j),
            ActionKind::OneShot => write!(f, "oneshot({},{})", self.i, self.j),
        }
    }
}

/// The four symbols a pair reported when it was last scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PairRecord {
    pub past_fine_i: usize,
    pub past_fine_j: usize,
    pub past_coarse_i: usize,
    pub past_coarse_j: usize,
}

/// A fully decoded state: one record per pair (in [`StateSpace::pairs`]
/// order) plus each user's current coarse symbol.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StateFields {
    pub records: Vec<PairRecord>,
    pub cur_coarse: Vec<usize>,
}

/// Mixed-radix layout of the state integer.
///
/// Digits from most to least significant: pair 0's record through the last
/// pair's record (each `past_fine_i, past_fine_j, past_coarse_i,
/// past_coarse_j`), then the current coarse symbols of users `0..N`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSpace {
    num_users: usize,
    coarse_symbols: usize,
    fine_symbols: usize,
    pairs: Vec<(usize, usize)>,
    total_states: u64,
}

impl StateSpace {
    /// Lays out the space for explicit symbol-alphabet sizes.
    pub fn new(num_users: usize, coarse_symbols: usize, fine_symbols: usize) -> Result<Self> {
        if num_users < 2 || coarse_symbols == 0 || fine_symbols == 0 {
            return Err(Error::InvalidInput(format!(
                "state space needs ≥ 2 users and nonempty codebooks, got N={num_users}, c={coarse_symbols}, f={fine_symbols}"
            )));
        }
        let pairs: Vec<(usize, usize)> = (0..num_users)
            .flat_map(|i| ((i + 1)..num_users).map(move |j| (i, j)))
            .collect();
        let total_states = match checked_state_count(num_users, coarse_symbols, fine_symbols) {
            Some(total) if total <= STATE_COUNT_LIMIT as u128 => total as u64,
            _ => {
                return Err(Error::StateSpaceTooLarge {
                    states: approx_state_count(num_users, coarse_symbols, fine_symbols),
                    limit: STATE_COUNT_LIMIT,
                })
            }
        };
        Ok(Self {
            num_users,
            coarse_symbols,
            fine_symbols,
            pairs,
            total_states,
        })
    }

    /// Lays out the space implied by a configuration's codebook sizes
    /// (`2^bits` directions times the norm levels, for both alphabets).
    pub fn for_config(cfg: &SystemConfig) -> Result<Self> {
        let coarse = (1usize << cfg.coarse_bits) * cfg.norm_levels;
        let fine = (1usize << cfg.fine_bits) * cfg.norm_levels;
        Self::new(cfg.num_users, coarse, fine)
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn coarse_symbols(&self) -> usize {
        self.coarse_symbols
    }

    pub fn fine_symbols(&self) -> usize {
        self.fine_symbols
    }

    /// Unordered user pairs in lexicographic order; pair index = position.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn total_states(&self) -> u64 {
        self.total_states
    }

    /// Position of pair `(i, j)`, `i < j`, in [`Self::pairs`] order.
    pub fn pair_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j && j < self.num_users);
        let idx = i * self.num_users - i * (i + 1) / 2 + (j - i - 1);
        debug_assert_eq!(self.pairs[idx], (i, j));
        idx
    }

    /// All scheduling actions: every pair, plus one-shot variants of every
    /// pair when enabled.
    pub fn action_list(&self, include_oneshot: bool) -> Vec<Action> {
        let mut actions: Vec<Action> = self
            .pairs
            .iter()
            .map(|&(i, j)| Action { kind: ActionKind::Pair, i, j })
            .collect();
        if include_oneshot {
            actions.extend(
                self.pairs
                    .iter()
                    .map(|&(i, j)| Action { kind: ActionKind::OneShot, i, j }),
            );
        }
        actions
    }

    /// Packs decoded fields into the dense index.
    pub fn encode(&self, fields: &StateFields) -> u64 {
        debug_assert_eq!(fields.records.len(), self.pairs.len());
        debug_assert_eq!(fields.cur_coarse.len(), self.num_users);
        let (f, c) = (self.fine_symbols as u64, self.coarse_symbols as u64);
        let mut idx: u64 = 0;
        for rec in &fields.records {
            debug_assert!(rec.past_fine_i < self.fine_symbols && rec.past_fine_j < self.fine_symbols);
            debug_assert!(
                rec.past_coarse_i < self.coarse_symbols && rec.past_coarse_j < self.coarse_symbols
            );
            idx = idx * f + rec.past_fine_i as u64;
            idx = idx * f + rec.past_fine_j as u64;
            idx = idx * c + rec.past_coarse_i as u64;
            idx = idx * c + rec.past_coarse_j as u64;
        }
        for &cc in &fields.cur_coarse {
            debug_assert!(cc < self.coarse_symbols);
            idx = idx * c + cc as u64;
        }
        debug_assert!(idx < self.total_states);
        idx
    }

    /// Unpacks a dense index; panics on an out-of-range index.
    pub fn decode(&self, index: u64) -> StateFields {
        assert!(
            index < self.total_states,
            "state index {index} out of range (total {})",
            self.total_states
        );
        let (f, c) = (self.fine_symbols as u64, self.coarse_symbols as u64);
        let mut idx = index;
        let mut cur_coarse = vec![0usize; self.num_users];
        for slot in cur_coarse.iter_mut().rev() {
            *slot = (idx % c) as usize;
            idx /= c;
        }
        let mut records = vec![PairRecord::default(); self.pairs.len()];
        for rec in records.iter_mut().rev() {
            rec.past_coarse_j = (idx % c) as usize;
            idx /= c;
            rec.past_coarse_i = (idx % c) as usize;
            idx /= c;
            rec.past_fine_j = (idx % f) as usize;
            idx /= f;
            rec.past_fine_i = (idx % f) as usize;
            idx /= f;
        }
        debug_assert_eq!(idx, 0);
        StateFields { records, cur_coarse }
    }
}

fn checked_state_count(num_users: usize, coarse: usize, fine: usize) -> Option<u128> {
    let pairs = num_users * (num_users - 1) / 2;
    let per_pair = (fine as u128)
        .checked_mul(fine as u128)?
        .checked_mul(coarse as u128)?
        .checked_mul(coarse as u128)?;
    let mut total: u128 = 1;
    for _ in 0..pairs {
        total = total.checked_mul(per_pair)?;
    }
    for _ in 0..num_users {
        total = total.checked_mul(coarse as u128)?;
    }
    Some(total)
}

/// Floating-point size estimate for refusal messages; may be infinite.
fn approx_state_count(num_users: usize, coarse: usize, fine: usize) -> f64 {
    let pairs = (num_users * (num_users - 1) / 2) as f64;
    let log2 = pairs * 2.0 * ((fine as f64).log2() + (coarse as f64).log2())
        + num_users as f64 * (coarse as f64).log2();
    log2.exp2()
}

// ── tests ──────────────────────────────────────────────────────────────────
