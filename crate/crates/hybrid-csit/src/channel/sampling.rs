//! Generative channel sampling, conditioned sampling by rejection, and
//! pre-conditioned draw pools.
//!
//! Everything here shares one generative law: a channel is CN(0, δ²I), and
//! its coarse/fine reports come from quantizing that same draw through
//! independent estimation noise. `sample_true_given_estimates` inverts the
//! law by literal rejection; `ChannelPools` batches the same rejection into
//! reusable per-cell pools so reward estimation does not pay the rejection
//! cost once per Monte-Carlo sample. Pools depend only on the channel
//! geometry, never on transmit power, so one build serves a whole SNR sweep.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{sample_cn, ComplexVector, RngStream};

use super::codebook::{quantize, Codebooks};
use super::conditional::ConditionalModel;
use super::config::SystemConfig;

/// Per-cell pool size the build aims for.
pub const POOL_TARGET: usize = 3000;
/// Smallest pool a cell may have and still be drawn from.
pub const POOL_MIN: usize = 200;
/// Hard cap on generative draws during a pool build.
pub const POOL_DRAW_CAP: u64 = 8_000_000;

/// Attempt cap for one rejection-sampled conditioned draw.
const REJECTION_CAP: u64 = 1_000_000;

/// One generative draw with its two quantizer outputs as symbols.
pub(crate) fn labeled_draw(
    cfg: &SystemConfig,
    books: &Codebooks,
    rng: &mut RngStream,
) -> Result<(ComplexVector, usize, usize)> {
    let h = sample_cn(
        cfg.num_tx_antennas,
        cfg.pathloss_delta * cfg.pathloss_delta,
        rng,
    )?;
    let qc = quantize(&h, cfg.sigma_coarse_sq(), &books.coarse, rng)?;
    let qf = quantize(&h, cfg.sigma_fine_sq(), &books.fine, rng)?;
    let c = books.coarse.symbol_of(qc);
    let f = books.fine.symbol_of(qf);
    Ok((h, c, f))
}

/// Draws one i.i.d. CN(0, δ²I) channel per user.
pub fn sample_true_channels(cfg: &SystemConfig, rng: &mut RngStream) -> Result<Vec<ComplexVector>> {
    let var = cfg.pathloss_delta * cfg.pathloss_delta;
    (0..cfg.num_users)
        .map(|_| sample_cn(cfg.num_tx_antennas, var, rng))
        .collect()
}

/// Draws a true channel consistent with the given quantizer reports, by
/// rejection against the generative law. `fine_sym = None` conditions on the
/// coarse report alone.
pub fn sample_true_given_estimates(
    cfg: &SystemConfig,
    books: &Codebooks,
    coarse_sym: usize,
    fine_sym: Option<usize>,
    rng: &mut RngStream,
) -> Result<ComplexVector> {
    sample_true_given_estimates_counted(cfg, books, coarse_sym, fine_sym, rng).map(|(h, _)| h)
}

/// As [`sample_true_given_estimates`], but also reports how many generative
/// attempts the accepted draw took.
pub fn sample_true_given_estimates_counted(
    cfg: &SystemConfig,
    books: &Codebooks,
    coarse_sym: usize,
    fine_sym: Option<usize>,
    rng: &mut RngStream,
) -> Result<(ComplexVector, u64)> {
    if coarse_sym >= books.coarse.symbol_count() {
        return Err(Error::InvalidInput(format!(
            "coarse symbol {coarse_sym} out of range"
        )));
    }
    if let Some(f) = fine_sym {
        if f >= books.fine.symbol_count() {
            return Err(Error::InvalidInput(format!("fine symbol {f} out of range")));
        }
    }
    for attempt in 1..=REJECTION_CAP {
        let (h, c, f) = labeled_draw(cfg, books, rng)?;
        if c == coarse_sym && fine_sym.map_or(true, |want| f == want) {
            return Ok((h, attempt));
        }
    }
    Err(Error::InfeasibleConditioning {
        context: format!("rejection for coarse {coarse_sym}, fine {fine_sym:?}"),
        attempts: REJECTION_CAP,
    })
}

/// Pools of true channels pre-conditioned on quantizer reports: one pool per
/// joint (coarse, fine) cell and one per coarse symbol.
///
/// Cells the symbol model gives zero probability are exempt from fill
/// requirements — nothing that matters ever conditions on them. Every other
/// cell must reach [`POOL_MIN`] before the build returns, and the build keeps
/// drawing until they all reach the target or the draw cap.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelPools {
    f_syms: usize,
    joint: Vec<Vec<ComplexVector>>,
    coarse_only: Vec<Vec<ComplexVector>>,
    pub draws_used: u64,
}

impl ChannelPools {
    pub fn build(
        cfg: &SystemConfig,
        books: &Codebooks,
        model: &ConditionalModel,
        rng: &mut RngStream,
    ) -> Result<Self> {
        Self::build_with_limits(cfg, books, model, POOL_TARGET, POOL_MIN, POOL_DRAW_CAP, rng)
    }

    /// Build with explicit sizing, for callers that want smaller pools.
    pub fn build_with_limits(
        cfg: &SystemConfig,
        books: &Codebooks,
        model: &ConditionalModel,
        target: usize,
        min: usize,
        draw_cap: u64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if min < 2 || target < min {
            return Err(Error::InvalidInput(format!(
                "pool limits must satisfy 2 <= min <= target, got min {min}, target {target}"
            )));
        }
        let c_syms = books.coarse.symbol_count();
        let f_syms = books.fine.symbol_count();
        if model.coarse_symbols() != c_syms || model.fine_symbols() != f_syms {
            return Err(Error::InvalidInput(
                "symbol model does not match the codebooks".into(),
            ));
        }
        let joint_required: Vec<bool> = (0..c_syms * f_syms)
            .map(|idx| model.joint_prob(idx / f_syms, idx % f_syms) > 0.0)
            .collect();
        let coarse_required: Vec<bool> = (0..c_syms).map(|c| model.pi_coarse[c] > 0.0).collect();
        let mut pending = joint_required.iter().filter(|&&r| r).count()
            + coarse_required.iter().filter(|&&r| r).count();
        let mut joint = vec![Vec::new(); c_syms * f_syms];
        let mut coarse_only: Vec<Vec<ComplexVector>> = vec![Vec::new(); c_syms];
        let mut draws = 0u64;
        while pending > 0 && draws < draw_cap {
            let (h, c, f) = labeled_draw(cfg, books, rng)?;
            draws += 1;
            let cell = &mut joint[c * f_syms + f];
            if cell.len() < target {
                cell.push(h.clone());
                if cell.len() == target && joint_required[c * f_syms + f] {
                    pending -= 1;
                }
            }
            let cell = &mut coarse_only[c];
            if cell.len() < target {
                cell.push(h);
                if cell.len() == target && coarse_required[c] {
                    pending -= 1;
                }
            }
        }
        for (idx, required) in joint_required.iter().enumerate() {
            if *required && joint[idx].len() < min {
                return Err(Error::InfeasibleConditioning {
                    context: format!(
                        "pool cell coarse {}, fine {} holds {} draws (need {min})",
                        idx / f_syms,
                        idx % f_syms,
                        joint[idx].len()
                    ),
                    attempts: draws,
                });
            }
        }
        for (c, required) in coarse_required.iter().enumerate() {
            if *required && coarse_only[c].len() < min {
                return Err(Error::InfeasibleConditioning {
                    context: format!(
                        "coarse pool {c} holds {} draws (need {min})",
                        coarse_only[c].len()
                    ),
                    attempts: draws,
                });
            }
        }
        Ok(Self {
            f_syms,
            joint,
            coarse_only,
            draws_used: draws,
        })
    }

    fn joint_cell(&self, coarse: usize, fine: usize) -> Result<&[ComplexVector]> {
        let cell = &self.joint[coarse * self.f_syms + fine];
        if cell.len() < 2 {
            return Err(Error::InfeasibleConditioning {
                context: format!("joint pool cell coarse {coarse}, fine {fine} is undersampled"),
                attempts: cell.len() as u64,
            });
        }
        Ok(cell)
    }

    fn coarse_cell(&self, coarse: usize) -> Result<&[ComplexVector]> {
        let cell = &self.coarse_only[coarse];
        if cell.len() < 2 {
            return Err(Error::InfeasibleConditioning {
                context: format!("coarse pool {coarse} is undersampled"),
                attempts: cell.len() as u64,
            });
        }
        Ok(cell)
    }

    /// One channel conditioned on a joint (coarse, fine) report.
    pub fn draw_joint(&self, coarse: usize, fine: usize, rng: &mut RngStream) -> Result<&ComplexVector> {
        let cell = self.joint_cell(coarse, fine)?;
        Ok(&cell[rng.gen_range(0..cell.len())])
    }

    /// Two independent users' channels, each conditioned on its own joint
    /// report. When both users share a cell the draws use distinct indices so
    /// the pair never aliases one stored vector.
    pub fn draw_pair_joint(
        &self,
        a: (usize, usize),
        b: (usize, usize),
        rng: &mut RngStream,
    ) -> Result<(&ComplexVector, &ComplexVector)> {
        if a == b {
            pick_two(self.joint_cell(a.0, a.1)?, rng)
        } else {
            let ha = self.draw_joint(a.0, a.1, rng)?;
            let hb = self.draw_joint(b.0, b.1, rng)?;
            Ok((ha, hb))
        }
    }

    /// Two users' channels conditioned on coarse reports only.
    pub fn draw_pair_coarse(
        &self,
        a: usize,
        b: usize,
        rng: &mut RngStream,
    ) -> Result<(&ComplexVector, &ComplexVector)> {
        if a == b {
            pick_two(self.coarse_cell(a)?, rng)
        } else {
            let cell_a = self.coarse_cell(a)?;
            let cell_b = self.coarse_cell(b)?;
            let ha = &cell_a[rng.gen_range(0..cell_a.len())];
            let hb = &cell_b[rng.gen_range(0..cell_b.len())];
            Ok((ha, hb))
        }
    }

    pub fn joint_len(&self, coarse: usize, fine: usize) -> usize {
        self.joint[coarse * self.f_syms + fine].len()
    }

    pub fn coarse_len(&self, coarse: usize) -> usize {
        self.coarse_only[coarse].len()
    }
}

/// Two distinct uniform indices from one pool.
fn pick_two<'a>(
    pool: &'a [ComplexVector],
    rng: &mut RngStream,
) -> Result<(&'a ComplexVector, &'a ComplexVector)> {
    debug_assert!(pool.len() >= 2);
    let i = rng.gen_range(0..pool.len());
    let mut j = rng.gen_range(0..pool.len() - 1);
    if j >= i {
        j += 1;
    }
    Ok((&pool[i], &pool[j]))
}

// ── tests ──────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::super::codebook::{build_coarse_codebook, build_fine_codebook};
    use super::super::conditional::estimate_conditional_model;
    use super::super::config::tests::desk_system;
    use super::*;

    fn desk_setup() -> (SystemConfig, Codebooks, ConditionalModel) {
        let cfg = desk_system();
        let rng = RngStream::new(cfg.seed, 20);
        let books = Codebooks {
            coarse: build_coarse_codebook(&cfg, &mut rng.substream(0)),
            fine: build_fine_codebook(&cfg, &mut rng.substream(1)),
        };
        let model = estimate_conditional_model(&cfg, &books, &mut rng.substream(2)).unwrap();
        (cfg, books, model)
    }

    #[test]
    fn per_user_channels_have_the_right_scale() {
        let mut cfg = desk_system();
        cfg.pathloss_delta = 2.0;
        let mut rng = RngStream::new(5, 0);
        let mut acc = 0.0;
        let n = 2000;
        for _ in 0..n {
            let hs = sample_true_channels(&cfg, &mut rng).unwrap();
            assert_eq!(hs.len(), cfg.num_users);
            acc += hs.iter().map(|h| h.norm_sq()).sum::<f64>();
        }
        // E‖h‖² = M_t·δ² = 8 per user.
        let mean = acc / (n * cfg.num_users) as f64;
        assert!((mean - 8.0).abs() < 0.3, "mean energy {mean}");
    }

    #[test]
    fn rejection_attempt_counts_match_cell_probability() {
        let (cfg, books, model) = desk_setup();
        let mut rng = RngStream::new(cfg.seed, 21);
        let p = model.joint_prob(0, 1);
        let n = 500;
        let mut total = 0u64;
        for _ in 0..n {
            let (_, attempts) =
                sample_true_given_estimates_counted(&cfg, &books, 0, Some(1), &mut rng).unwrap();
            total += attempts;
        }
        let mean = total as f64 / n as f64;
        // Attempts are geometric with mean 1/p; allow 4 combined standard
        // errors to absorb the Monte-Carlo error in p itself.
        let se = ((1.0 - p) / (p * p) / n as f64).sqrt();
        assert!(
            (mean - 1.0 / p).abs() < 4.0 * se + 0.1,
            "mean attempts {mean} vs expected {}",
            1.0 / p
        );
    }

    #[test]
    fn rejection_rejects_out_of_range_symbols() {
        let (cfg, books, _) = desk_setup();
        let mut rng = RngStream::new(1, 0);
        assert!(sample_true_given_estimates(&cfg, &books, 9, None, &mut rng).is_err());
        assert!(sample_true_given_estimates(&cfg, &books, 0, Some(9), &mut rng).is_err());
    }

    #[test]
    fn pools_and_rejection_agree_on_the_conditional_law() {
        let (cfg, books, model) = desk_setup();
        let mut rng = RngStream::new(cfg.seed, 22);
        let pools =
            ChannelPools::build_with_limits(&cfg, &books, &model, 800, 50, 1_000_000, &mut rng)
                .unwrap();
        // Statistic: squared alignment with the fine codeword of the cell.
        let stat = |h: &ComplexVector| books.fine.direction(1).inner(h).norm_sqr();
        let cell_n = pools.joint_len(0, 1);
        let mut pool_mean = 0.0;
        for idx in 0..cell_n {
            pool_mean += stat(pools.draw_joint(0, 1, &mut rng).unwrap());
            let _ = idx;
        }
        pool_mean /= cell_n as f64;
        let n_rej = 400;
        let mut rej = Vec::with_capacity(n_rej);
        for _ in 0..n_rej {
            let h = sample_true_given_estimates(&cfg, &books, 0, Some(1), &mut rng).unwrap();
            rej.push(stat(&h));
        }
        let rej_mean: f64 = rej.iter().sum::<f64>() / n_rej as f64;
        let rej_var: f64 =
            rej.iter().map(|x| (x - rej_mean).powi(2)).sum::<f64>() / (n_rej - 1) as f64;
        let se = (rej_var / n_rej as f64 + rej_var / cell_n as f64).sqrt();
        assert!(
            (pool_mean - rej_mean).abs() < 4.0 * se,
            "pool mean {pool_mean} vs rejection mean {rej_mean} (se {se})"
        );
    }

    #[test]
    fn pool_build_is_deterministic_and_bounded() {
        let (cfg, books, model) = desk_setup();
        let build = || {
            ChannelPools::build_with_limits(
                &cfg,
                &books,
                &model,
                300,
                50,
                500_000,
                &mut RngStream::new(cfg.seed, 23),
            )
            .unwrap()
        };
        let a = build();
        let b = build();
        assert_eq!(a, b);
        for f in 0..books.fine.symbol_count() {
            assert!(a.joint_len(0, f) >= 50);
            assert!(a.joint_len(0, f) <= 300);
        }
        assert!(a.coarse_len(0) == 300);
    }

    #[test]
    fn same_cell_pair_draws_are_distinct_vectors() {
        let (cfg, books, model) = desk_setup();
        let mut rng = RngStream::new(cfg.seed, 24);
        let pools =
            ChannelPools::build_with_limits(&cfg, &books, &model, 100, 20, 500_000, &mut rng)
                .unwrap();
        for _ in 0..300 {
            let (ha, hb) = pools.draw_pair_joint((0, 0), (0, 0), &mut rng).unwrap();
            assert!(!std::ptr::eq(ha, hb), "pair draw aliased one pool entry");
            let (ha, hb) = pools.draw_pair_coarse(0, 0, &mut rng).unwrap();
            assert!(!std::ptr::eq(ha, hb), "coarse pair draw aliased one pool entry");
        }
    }

    #[test]
    fn starving_the_draw_budget_fails_loudly() {
        let (cfg, books, model) = desk_setup();
        let mut rng = RngStream::new(cfg.seed, 25);
        let err = ChannelPools::build_with_limits(&cfg, &books, &model, 300, 200, 50, &mut rng)
            .unwrap_err();
        assert!(matches!(err, Error::InfeasibleConditioning { .. }));
    }

    #[test]
    fn zero_probability_cells_are_exempt_from_fill_requirements() {
        let (cfg, books, model) = desk_setup();
        // Doctor the model to claim fine symbol 1 never accompanies coarse 0;
        // the build must then succeed without filling that cell's quota even
        // under a tight budget sized for the remaining cells alone.
        let mut doctored = model.clone();
        doctored.p_fine_given_coarse[0] = vec![1.0, 0.0];
        let mut rng = RngStream::new(cfg.seed, 26);
        let pools = ChannelPools::build_with_limits(
            &cfg, &books, &doctored, 400, 100, 5_000, &mut rng,
        )
        .unwrap();
        assert!(pools.joint_len(0, 0) == 400);
        // The exempt cell still collects whatever fell in, but drawing from
        // it is only legal if it happens to be populated.
        let _ = pools.joint_len(0, 1);
    }
}
