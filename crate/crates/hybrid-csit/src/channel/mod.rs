//! Channel generation, quantization codebooks, and the conditional model
//! linking fine to coarse feedback.
//!
//! The estimation chain is: true channel `h` (i.i.d. CN(0, δ²) entries) →
//! noisy observation `h + CN(0, σ²I)` → nearest codebook direction plus
//! nearest norm level. Coarse and fine estimates quantize the *same* true
//! channel with independent noises σ_c² ≥ σ_f², which fixes the conditional
//! distribution of fine cells given coarse cells that the MDP transitions
//! consume.

mod codebook;
mod conditional;
mod config;
mod sampling;

pub use codebook::{
    build_coarse_codebook, build_fine_codebook, chordal_distance, min_pairwise_chordal, quantize,
    Codebook, CodebookKind, Codebooks, QuantizedCsi,
};
pub use conditional::{estimate_conditional_model, ConditionalModel};
pub use config::{CsitMode, RateMode, RunConfig, SystemConfig};
pub use sampling::{
    sample_true_channels, sample_true_given_estimates, sample_true_given_estimates_counted,
    ChannelPools, POOL_DRAW_CAP, POOL_MIN, POOL_TARGET,
};
