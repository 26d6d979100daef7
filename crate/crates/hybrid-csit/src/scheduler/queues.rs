//! Virtual queues, the per-frame arrival optimization, and its closed forms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Concave, componentwise-nondecreasing utility over `[0, r_max]^N`.
#[derive(Debug, Clone, PartialEq)]
pub enum UtilityKind {
    /// `U(r) = Σ r_n`.
    Sum,
    /// `U(r) = Σ log₂(1 + r_n)` (proportional-fair flavor, in bits).
    Log1p,
    /// `U(r) = Σ w_n r_n` with nonnegative weights.
    WeightedSum(Vec<f64>),
}

impl UtilityKind {
    pub fn value(&self, rates: &[f64]) -> f64 {
        match self {
            UtilityKind::Sum => rates.iter().sum(),
            UtilityKind::Log1p => rates.iter().map(|r| (1.0 + r).log2()).sum(),
            UtilityKind::WeightedSum(w) => rates.iter().zip(w).map(|(r, w)| r * w).sum(),
        }
    }
}

/// Whether queue updates consume the expected reward-table rates or a fresh
/// per-interval realization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ServiceModel {
    #[default]
    Expected,
    Instantaneous,
}

/// Frame-controller parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameConfig {
    /// Frame length `T ≥ 1` in scheduling intervals.
    #[serde(default = "default_frame_length")]
    pub frame_length: usize,
    /// Utility weight `V > 0`.
    #[serde(default = "default_weight_v")]
    pub weight_v: f64,
    /// Arrival-rate cap `r_max > 0` (bits per interval).
    #[serde(default = "default_r_max")]
    pub r_max: f64,
    /// `"sum"`, `"log1p"`, or `"weighted-sum"` (the latter needs `weights`).
    #[serde(default = "default_utility")]
    pub utility: String,
    /// Per-user weights for the weighted-sum utility.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    #[serde(default)]
    pub service_model: ServiceModel,
}

fn default_frame_length() -> usize {
    100
}

fn default_weight_v() -> f64 {
    10.0
}

fn default_r_max() -> f64 {
    2.0
}

fn default_utility() -> String {
    "log1p".into()
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            frame_length: default_frame_length(),
            weight_v: default_weight_v(),
            r_max: default_r_max(),
            utility: default_utility(),
            weights: None,
            service_model: ServiceModel::Expected,
        }
    }
}

impl FrameConfig {
    pub fn utility_kind(&self) -> Result<UtilityKind> {
        match self.utility.as_str() {
            "sum" => Ok(UtilityKind::Sum),
            "log1p" => Ok(UtilityKind::Log1p),
            "weighted-sum" => {
                let w = self.weights.clone().ok_or_else(|| {
                    Error::Config("weighted-sum utility needs a weights array".into())
                })?;
                if w.iter().any(|&x| x < 0.0) {
                    return Err(Error::Config("utility weights must be nonnegative".into()));
                }
                Ok(UtilityKind::WeightedSum(w))
            }
            other => Err(Error::Config(format!(
                "unknown utility '{other}' (expected sum | log1p | weighted-sum)"
            ))),
        }
    }

    pub fn validate(&self, num_users: usize) -> Result<()> {
        if self.frame_length == 0 {
            return Err(Error::Config("frame_length must be ≥ 1".into()));
        }
        if !(self.weight_v > 0.0) {
            return Err(Error::Config(format!(
                "weight_v must be > 0, got {}",
                self.weight_v
            )));
        }
        if !(self.r_max > 0.0) {
            return Err(Error::Config(format!(
                "r_max must be > 0, got {}",
                self.r_max
            )));
        }
        if let UtilityKind::WeightedSum(w) = self.utility_kind()? {
            if w.len() != num_users {
                return Err(Error::Config(format!(
                    "weights length {} does not match num_users {num_users}",
                    w.len()
                )));
            }
        }
        Ok(())
    }

    pub fn with_frame_length(&self, frame_length: usize) -> Self {
        Self { frame_length, ..self.clone() }
    }

    pub fn with_weight_v(&self, weight_v: f64) -> Self {
        Self { weight_v, ..self.clone() }
    }
}

/// One nonnegative virtual queue per user; starts empty.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualQueues {
    pub(crate) q: Vec<f64>,
}

impl VirtualQueues {
    pub fn new(num_users: usize) -> Self {
        Self { q: vec![0.0; num_users] }
    }

    /// Queues preloaded at the given backlogs (negative entries clamp to 0).
    pub fn from_lengths(lengths: &[f64]) -> Self {
        Self { q: lengths.iter().map(|&q| q.max(0.0)).collect() }
    }

    pub fn lengths(&self) -> &[f64] {
        &self.q
    }

    pub fn total(&self) -> f64 {
        self.q.iter().sum()
    }

    /// Lyapunov value `L(Q) = ½ Σ Q_n²`.
    pub fn lyapunov(&self) -> f64 {
        0.5 * self.q.iter().map(|q| q * q).sum::<f64>()
    }
}

/// Maximizes `V·U(r) − Σ Q_n r_n` over `0 ⪯ r ⪯ r_max·1`, per coordinate.
///
/// Closed forms: the linear utilities are bang-bang (ties at `V·w_n = Q_n`
/// resolve to `r_max`), and log1p gives `clamp(V/(Q_n ln 2) − 1, 0, r_max)`.
pub fn solve_virtual_arrivals(queues: &VirtualQueues, frame: &FrameConfig) -> Result<Vec<f64>> {
    let utility = frame.utility_kind()?;
    let v = frame.weight_v;
    let r_max = frame.r_max;
    let arrivals = queues
        .q
        .iter()
        .enumerate()
        .map(|(n, &q)| {
            debug_assert!(q >= 0.0);
            match &utility {
                UtilityKind::Sum => {
                    if v >= q {
                        r_max
                    } else {
                        0.0
                    }
                }
                UtilityKind::WeightedSum(w) => {
                    if v * w[n] >= q {
                        r_max
                    } else {
                        0.0
                    }
                }
                UtilityKind::Log1p => {
                    if q <= 0.0 {
                        r_max
                    } else {
                        (v / (q * std::f64::consts::LN_2) - 1.0).clamp(0.0, r_max)
                    }
                }
            }
        })
        .collect();
    Ok(arrivals)
}

/// Queue recursion `Q' = (Q − R)⁺ + r*`, componentwise.
pub fn queue_update(queues: &mut VirtualQueues, service: &[f64], arrivals: &[f64]) {
    debug_assert_eq!(queues.q.len(), service.len());
    debug_assert_eq!(queues.q.len(), arrivals.len());
    for ((q, &r), &a) in queues.q.iter_mut().zip(service).zip(arrivals) {
        debug_assert!(r >= 0.0 && a >= 0.0);
        *q = (*q - r).max(0.0) + a;
    }
}

// ── tests ──────────────────────────────────────────────────────────────────
