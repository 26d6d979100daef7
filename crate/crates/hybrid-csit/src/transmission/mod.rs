//! The three-slot transmission scheme and its expected-rate estimators.
//!
//! An interval carries a packet pair to two scheduled users in slot 1, and
//! two interference-resolution transmissions in slots 2 and 3 that complete
//! the pair's previous pending interval. [`precoders`] holds the fixed
//! mappings from quantizer symbols to transmit vectors; [`rates`] assembles
//! the per-user effective channels, evaluates the instantaneous rates, and
//! estimates conditional expected rates by Monte Carlo over pre-conditioned
//! channel pools.

mod precoders;
mod rates;

pub use precoders::{
    multicast_direction, oneshot_zf_precoders, resolution_precoders, slot1_precoders, PrecoderSet,
};
pub use rates::{
    effective_channel_optimal, effective_channel_suboptimal, expected_oneshot_rates,
    expected_pair_rates, expected_pair_rates_with_assignment, instantaneous_rate,
    oneshot_instantaneous_rate, rate_assignment, sample_oneshot_rates, sample_pair_rates,
    CsiTuple, EffectiveChannel, PairRates,
};
