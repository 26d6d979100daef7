//! Downlink multi-user MIMO scheduling under hybrid channel state
//! information.
//!
//! The base station sees two kinds of feedback: coarse-but-current channel
//! estimates from every user, and fine-but-delayed estimates only from users
//! it recently served. This crate models that feedback loop end to end:
//!
//! * [`channel`] — true channel generation, coarse/fine quantization
//!   codebooks, and the Monte-Carlo estimate of the conditional distribution
//!   linking fine to coarse cells;
//! * [`transmission`] — the three-slot extended-MAT precoders and every rate
//!   formula (instantaneous, optimistic, conservative/outage, optimal-filter,
//!   and the conventional one-shot baseline);
//! * [`mdp`] — the finite average-reward MDP induced by the quantized
//!   records, its state-action-frequency LP, and exact policy evaluation;
//! * [`scheduler`] — the virtual-queue frame controller with myopic and
//!   conventional baselines;
//! * [`sim`] — trajectory execution, SNR sweeps, and convergence reports;
//! * [`cache`] — a versioned, checksummed model cache for the CLI.
//!
//! All randomness flows through [`numerics::RngStream`], so every result is
//! reproducible bit-for-bit from a seed, independent of thread count.

pub mod cache;
pub mod channel;
pub mod error;
pub mod mdp;
pub mod numerics;
pub mod scheduler;
pub mod sim;
pub mod transmission;

pub use error::{Error, Result};
