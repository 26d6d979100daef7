//! Empirical model of the quantized-CSI process: the marginal over coarse
//! symbols and the conditional of the fine symbol given the coarse one.
//!
//! Both quantizers see the same channel draw (through independent estimation
//! noise), so the conditional carries the real coupling between the reports.
//! Rows for coarse symbols never observed in the Monte-Carlo pass fall back
//! to uniform and are flagged so callers can tell estimated from assumed.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::RngStream;

use super::codebook::Codebooks;
use super::config::SystemConfig;
use super::sampling::labeled_draw;

/// Minimum Monte-Carlo sample size accepted for model estimation.
pub const MIN_MODEL_SAMPLES: usize = 10_000;

/// Symbol-level distribution of the quantizer outputs for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalModel {
    /// Marginal probability of each coarse symbol.
    pub pi_coarse: Vec<f64>,
    /// `p_fine_given_coarse[c][f]` = P(fine symbol f | coarse symbol c).
    pub p_fine_given_coarse: Vec<Vec<f64>>,
    /// Coarse symbols never observed during estimation; their conditional
    /// rows are uniform placeholders rather than estimates.
    pub uniform_fallback_rows: Vec<usize>,
    /// Number of Monte-Carlo draws behind the estimates.
    pub sample_count: usize,
}

impl ConditionalModel {
    pub fn coarse_symbols(&self) -> usize {
        self.pi_coarse.len()
    }

    pub fn fine_symbols(&self) -> usize {
        self.p_fine_given_coarse.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let check_row = |row: &[f64], what: &str| -> Result<()> {
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::InvalidInput(format!("{what} has entries outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!("{what} sums to {sum}, not 1")));
            }
            Ok(())
        };
        check_row(&self.pi_coarse, "coarse marginal")?;
        if self.p_fine_given_coarse.len() != self.pi_coarse.len() {
            return Err(Error::InvalidInput(
                "conditional row count does not match coarse alphabet".into(),
            ));
        }
        for (c, row) in self.p_fine_given_coarse.iter().enumerate() {
            if row.len() != self.fine_symbols() {
                return Err(Error::InvalidInput(format!("row {c} has ragged length")));
            }
            check_row(row, &format!("conditional row {c}"))?;
        }
        if self
            .uniform_fallback_rows
            .iter()
            .any(|&c| c >= self.pi_coarse.len())
        {
            return Err(Error::InvalidInput("fallback row index out of range".into()));
        }
        Ok(())
    }

    /// Joint probability of a (coarse, fine) report pair.
    pub fn joint_prob(&self, coarse: usize, fine: usize) -> f64 {
        self.pi_coarse[coarse] * self.p_fine_given_coarse[coarse][fine]
    }

    pub fn sample_coarse(&self, rng: &mut RngStream) -> usize {
        sample_index(&self.pi_coarse, rng)
    }

    pub fn sample_fine_given(&self, coarse: usize, rng: &mut RngStream) -> usize {
        sample_index(&self.p_fine_given_coarse[coarse], rng)
    }
}

/// Inverse-CDF draw from a probability row. The final index absorbs any
/// floating-point shortfall in the cumulative sum.
fn sample_index(probs: &[f64], rng: &mut RngStream) -> usize {
    debug_assert!(!probs.is_empty());
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Estimates the symbol model by quantizing `mc_samples_model` channel draws
/// with both codebooks. Deterministic given the stream.
pub fn estimate_conditional_model(
    cfg: &SystemConfig,
    books: &Codebooks,
    rng: &mut RngStream,
) -> Result<ConditionalModel> {
    if cfg.mc_samples_model < MIN_MODEL_SAMPLES {
        return Err(Error::InvalidInput(format!(
            "mc_samples_model = {} is below the floor of {MIN_MODEL_SAMPLES}",
            cfg.mc_samples_model
        )));
    }
    let c_syms = books.coarse.symbol_count();
    let f_syms = books.fine.symbol_count();
    let mut coarse_counts = vec![0u64; c_syms];
    let mut joint_counts = vec![vec![0u64; f_syms]; c_syms];
    for _ in 0..cfg.mc_samples_model {
        let (_, c, f) = labeled_draw(cfg, books, rng)?;
        coarse_counts[c] += 1;
        joint_counts[c][f] += 1;
    }
    let n = cfg.mc_samples_model as f64;
    let pi_coarse: Vec<f64> = coarse_counts.iter().map(|&k| k as f64 / n).collect();
    let mut uniform_fallback_rows = Vec::new();
    let p_fine_given_coarse: Vec<Vec<f64>> = (0..c_syms)
        .map(|c| {
            if coarse_counts[c] == 0 {
                uniform_fallback_rows.push(c);
                vec![1.0 / f_syms as f64; f_syms]
            } else {
                joint_counts[c]
                    .iter()
                    .map(|&k| k as f64 / coarse_counts[c] as f64)
                    .collect()
            }
        })
        .collect();
    let model = ConditionalModel {
        pi_coarse,
        p_fine_given_coarse,
        uniform_fallback_rows,
        sample_count: cfg.mc_samples_model,
    };
    model.validate()?;
    Ok(model)
}

// ── tests ──────────────────────────────────────────────────────────────────
