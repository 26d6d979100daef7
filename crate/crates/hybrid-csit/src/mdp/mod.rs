//! The scheduling decision process: CSI state space, tuple-keyed reward
//! tables, factorized transition kernel, and the occupancy-measure LP.
//!
//! The state tracks each pair's pending resolution record plus every user's
//! current coarse symbol; an action either serves a pair with the three-slot
//! scheme or sends a one-shot transmission. Rewards depend on the state only
//! through a six-symbol tuple, so the tables stay tiny even when the state
//! space runs to billions; dense enumeration is reserved for desk-scale
//! instances, where the LP over state-action frequencies and exact chain
//! evaluation certify each other.

mod lp;
mod model;
mod policy;
mod state;

pub use lp::{
    lp_rates, polytope_feasibility, solve_saf_lp, StateActionFrequency, LP_MAX_COLUMNS,
};
pub use model::{assemble_model, build_model, tuple_at, MdpModel};
pub use policy::{
    derandomize, evaluate_policy, evaluate_policy_from, extract_policy, StationaryPolicy,
    DENSE_EVAL_LIMIT,
};
pub use state::{
    Action, ActionKind, PairRecord, StateFields, StateSpace, STATE_COUNT_LIMIT,
};
