//! Simulation harness: trajectory execution, SNR sweeps, and convergence
//! studies, plus the canonical deterministic build pipeline they share.
//!
//! Every artifact the harness constructs — codebooks, the symbol model, the
//! MDP tables — draws from a fixed stream id keyed only on the config seed,
//! so two processes given the same configuration build bit-identical models
//! without coordinating.

mod convergence;
mod sweep;
mod trajectory;

pub use convergence::{
    convergence_report, ConvergenceReport, ConvergenceSpec, FrameDeviationRow, UtilityRow,
};
pub use sweep::{snr_sweep, PolicySpec, SweepError, SweepRow, SweepSpec, SweepTable};
pub use trajectory::{
    parse_log_text, run_trajectory, stability_ratio, LogRecord, TrajectoryLog, TrajectoryMetrics,
};

use crate::channel::{
    build_coarse_codebook, build_fine_codebook, estimate_conditional_model, Codebooks,
    ConditionalModel, SystemConfig,
};
use crate::error::Result;
use crate::mdp::{build_model, MdpModel};
use crate::numerics::RngStream;

// Stream ids for the build pipeline. Fixed so that independently built
// artifacts agree bit-for-bit and the disk cache can verify by hash.
const STREAM_CODEBOOKS: u64 = 30;
const STREAM_CONDITIONAL: u64 = 31;
pub(crate) const STREAM_MODEL: u64 = 32;

/// Builds both codebooks from the config's own seed.
pub fn canonical_codebooks(cfg: &SystemConfig) -> Codebooks {
    let rng = RngStream::new(cfg.seed, STREAM_CODEBOOKS);
    Codebooks {
        coarse: build_coarse_codebook(cfg, &mut rng.substream(0)),
        fine: build_fine_codebook(cfg, &mut rng.substream(1)),
    }
}

/// Estimates the symbol model on the canonical estimation stream.
pub fn canonical_conditional(cfg: &SystemConfig, books: &Codebooks) -> Result<ConditionalModel> {
    estimate_conditional_model(cfg, books, &mut RngStream::new(cfg.seed, STREAM_CONDITIONAL))
}

/// Builds the MDP tables on the canonical model stream. Splitting this from
/// [`canonical_conditional`] lets an SNR sweep reuse one geometry across
/// power points, where only these tables change.
pub fn canonical_model(
    cfg: &SystemConfig,
    books: &Codebooks,
    cond: &ConditionalModel,
) -> Result<MdpModel> {
    build_model(cfg, books, cond, &RngStream::new(cfg.seed, STREAM_MODEL))
}

/// The whole pipeline: codebooks, symbol model, MDP tables.
pub fn build_model_for(cfg: &SystemConfig) -> Result<MdpModel> {
    let books = canonical_codebooks(cfg);
    let cond = canonical_conditional(cfg, &books)?;
    canonical_model(cfg, &books, &cond)
}
