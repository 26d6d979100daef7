//! System configuration shared by every module.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scheduler::FrameConfig;

/// How per-pair rewards are computed from the rate distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RateMode {
    /// Mean instantaneous rate (rateless-coding view), suboptimal receiver
    /// filter.
    #[default]
    Optimistic,
    /// Assigned outage rate delivered with its empirical success
    /// probability.
    Conservative,
    /// Mean instantaneous rate with the optimal linear receiver filter.
    OptimalFilter,
}

/// Which channel information the slot-1/resolution precoders may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CsitMode {
    /// Coarse current estimates plus fine delayed estimates.
    #[default]
    Hybrid,
    /// Fine delayed estimates only: slot-1 precoders and the resolution
    /// direction are fixed blind choices, and the coarse codebook collapses
    /// to a single cell (`coarse_bits` must be 0).
    DelayedOnly,
}

/// Scenario parameters: geometry, power, codebook sizes, estimation noises,
/// reward estimator settings, and the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// Number of single-antenna users, `N ≥ 2`.
    pub num_users: usize,
    /// Transmit antennas at the base station, `M_t ≥ 2`.
    pub num_tx_antennas: usize,
    /// Per-slot transmit power budget in dB over the (unit) noise floor.
    pub power_db: f64,
    /// Per-entry channel amplitude scale δ (entries are CN(0, δ²)).
    #[serde(default = "default_pathloss")]
    pub pathloss_delta: f64,
    /// Coarse codebook size is `2^coarse_bits` directions.
    pub coarse_bits: u32,
    /// Fine codebook size is `2^fine_bits` directions; at least coarse_bits.
    pub fine_bits: u32,
    /// Number of quantized norm levels L (1 keeps norms out of the state).
    #[serde(default = "default_norm_levels")]
    pub norm_levels: usize,
    /// Coarse estimation-noise variance σ_c²; defaults to 0.1·δ².
    #[serde(default)]
    pub est_noise_coarse: Option<f64>,
    /// Fine estimation-noise variance σ_f² ≤ σ_c²; defaults to 0.01·δ².
    #[serde(default)]
    pub est_noise_fine: Option<f64>,
    #[serde(default)]
    pub rate_mode: RateMode,
    #[serde(default)]
    pub csit_mode: CsitMode,
    /// Substitute the exact past channel for the fine reconstruction inside
    /// rate evaluation (perfect-delayed-CSI reference curves). The state
    /// space is unchanged.
    #[serde(default)]
    pub delayed_csi_bypass: bool,
    /// Add one-shot variants of every pair action to the MDP.
    #[serde(default)]
    pub enable_oneshot_actions: bool,
    /// Outage level ε for conservative rate assignment.
    #[serde(default = "default_epsilon")]
    pub outage_epsilon: f64,
    /// Monte-Carlo draws for the conditional model estimate.
    #[serde(default = "default_mc_model")]
    pub mc_samples_model: usize,
    /// Monte-Carlo draws per reward-table cell.
    #[serde(default = "default_mc_reward")]
    pub mc_samples_reward: usize,
    /// Offline noise-shaping scalar c₂ in the naive slot-1 design.
    #[serde(default = "default_precoder_c")]
    pub precoder_c2: f64,
    /// Offline noise-shaping scalar c₃ in the naive slot-1 design.
    #[serde(default = "default_precoder_c")]
    pub precoder_c3: f64,
    /// Master seed; every internal stream is derived from it.
    pub seed: u64,
}

fn default_pathloss() -> f64 {
    1.0
}

fn default_norm_levels() -> usize {
    1
}

fn default_epsilon() -> f64 {
    0.1
}

fn default_mc_model() -> usize {
    20_000
}

fn default_mc_reward() -> usize {
    1_000
}

fn default_precoder_c() -> f64 {
    1.0
}

impl SystemConfig {
    /// Linear power budget `P` (noise power is normalized to 1).
    pub fn power_budget(&self) -> f64 {
        10f64.powf(self.power_db / 10.0)
    }

    /// Coarse estimation-noise variance σ_c².
    pub fn sigma_coarse_sq(&self) -> f64 {
        self.est_noise_coarse
            .unwrap_or(0.1 * self.pathloss_delta * self.pathloss_delta)
    }

    /// Fine estimation-noise variance σ_f².
    pub fn sigma_fine_sq(&self) -> f64 {
        self.est_noise_fine
            .unwrap_or(0.01 * self.pathloss_delta * self.pathloss_delta)
    }

    /// Copy with a different operating power (sweeps vary only this).
    pub fn at_power_db(&self, power_db: f64) -> Self {
        Self { power_db, ..self.clone() }
    }

    /// Copy configured for the given CSIT mode; delayed-only collapses the
    /// coarse codebook to a single cell.
    pub fn for_mode(&self, mode: CsitMode) -> Self {
        let mut cfg = self.clone();
        cfg.csit_mode = mode;
        if mode == CsitMode::DelayedOnly {
            cfg.coarse_bits = 0;
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.num_users < 2 {
            return fail(format!("num_users must be ≥ 2, got {}", self.num_users));
        }
        if self.num_tx_antennas < 2 {
            return fail(format!(
                "num_tx_antennas must be ≥ 2, got {}",
                self.num_tx_antennas
            ));
        }
        if self.num_tx_antennas > 8 {
            return fail("num_tx_antennas above 8 is outside the dense kernels".into());
        }
        if !self.power_db.is_finite() {
            return fail("power_db must be finite".into());
        }
        if !(self.pathloss_delta > 0.0) {
            return fail(format!(
                "pathloss_delta must be > 0, got {}",
                self.pathloss_delta
            ));
        }
        if self.fine_bits < self.coarse_bits {
            return fail(format!(
                "fine_bits ({}) must be ≥ coarse_bits ({})",
                self.fine_bits, self.coarse_bits
            ));
        }
        if self.fine_bits > 12 {
            return fail("fine_bits above 12 is not supported".into());
        }
        if self.norm_levels == 0 || self.norm_levels > 8 {
            return fail(format!(
                "norm_levels must be in 1..=8, got {}",
                self.norm_levels
            ));
        }
        let (sc, sf) = (self.sigma_coarse_sq(), self.sigma_fine_sq());
        if sc < 0.0 || sf < 0.0 || sf > sc {
            return fail(format!(
                "estimation noises need 0 ≤ σ_f² ≤ σ_c², got σ_f²={sf}, σ_c²={sc}"
            ));
        }
        if !(0.0..=1.0).contains(&self.outage_epsilon) {
            return fail(format!(
                "outage_epsilon must be in [0, 1], got {}",
                self.outage_epsilon
            ));
        }
        if self.mc_samples_model == 0 || self.mc_samples_reward == 0 {
            return fail("Monte-Carlo sample counts must be positive".into());
        }
        if self.precoder_c2 < 0.0 || !(self.precoder_c3 > 0.0) {
            return fail("precoder scalars need c₂ ≥ 0 and c₃ > 0".into());
        }
        if self.csit_mode == CsitMode::DelayedOnly && self.coarse_bits != 0 {
            return fail(
                "delayed-only mode carries no current CSIT; set coarse_bits = 0".into(),
            );
        }
        Ok(())
    }
}

/// Full run configuration as stored in config files and the model cache.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    #[serde(default)]
    pub frame: FrameConfig,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(s).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.system.validate()?;
        cfg.frame.validate(cfg.system.num_users)?;
        Ok(cfg)
    }

    /// Canonical serialization used for hashing and the cache snapshot;
    /// independent of file formatting and comment noise.
    pub fn canonical_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

// ── tests ──────────────────────────────────────────────────────────────────

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn desk_system() -> SystemConfig {
        SystemConfig {
            num_users: 3,
            num_tx_antennas: 2,
            power_db: 10.0,
            pathloss_delta: 1.0,
            coarse_bits: 0,
            fine_bits: 1,
            norm_levels: 1,
            est_noise_coarse: None,
            est_noise_fine: None,
            rate_mode: RateMode::Optimistic,
            csit_mode: CsitMode::Hybrid,
            delayed_csi_bypass: false,
            enable_oneshot_actions: false,
            outage_epsilon: 0.1,
            mc_samples_model: 20_000,
            mc_samples_reward: 1_000,
            precoder_c2: 1.0,
            precoder_c3: 1.0,
            seed: 7,
        }
    }

    #[test]
    fn desk_config_validates() {
        desk_system().validate().unwrap();
    }

    #[test]
    fn fine_bits_below_coarse_rejected() {
        let mut cfg = desk_system();
        cfg.coarse_bits = 3;
        cfg.fine_bits = 2;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn noise_defaults_scale_with_pathloss() {
        let mut cfg = desk_system();
        cfg.pathloss_delta = 2.0;
        assert!((cfg.sigma_coarse_sq() - 0.4).abs() < 1e-12);
        assert!((cfg.sigma_fine_sq() - 0.04).abs() < 1e-12);
    }

    #[test]
    fn delayed_only_forces_single_coarse_cell() {
        let mut cfg = desk_system();
        cfg.coarse_bits = 2;
        cfg.fine_bits = 2;
        assert!(cfg.for_mode(CsitMode::DelayedOnly).validate().is_ok());
        cfg.csit_mode = CsitMode::DelayedOnly;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn canonical_toml_roundtrips() {
        let cfg = RunConfig {
            system: desk_system(),
            frame: Default::default(),
        };
        let text = cfg.canonical_toml();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(text, back.canonical_toml());
    }

    #[test]
    fn unknown_fields_rejected_with_field_name() {
        let err = RunConfig::from_toml_str(
            "[system]\nnum_users = 2\nnum_tx_antennas = 2\npower_db = 10.0\ncoarse_bits = 0\nfine_bits = 1\nseed = 1\nbogus_knob = 3\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("bogus_knob"), "{err}");
    }
}
