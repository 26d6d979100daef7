//! Scheduling policies: the frame-based virtual-queue controller and its
//! myopic and conventional baselines.
//!
//! The controller keeps one virtual queue per user. Every `T` intervals it
//! picks target arrival rates by maximizing `V·U(r) − Qᵀr` over the box
//! `[0, r_max]^N`, re-solves the state-action-frequency LP with the queue
//! vector as reward weights, and follows the derandomized LP policy for the
//! rest of the frame; queues absorb arrivals minus realized service every
//! interval.

mod policies;
mod queues;

pub use policies::{
    conventional_step, frame_policy_step, myopic_step, policy_step, setup_phase, PolicyKind,
    SchedulerState,
};
pub use queues::{
    queue_update, solve_virtual_arrivals, FrameConfig, ServiceModel, UtilityKind, VirtualQueues,
};
