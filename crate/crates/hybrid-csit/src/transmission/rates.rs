//! Effective channels, instantaneous rates, and conditional expected rates.
//!
//! Each scheduled user resolves its interval from three observations: the
//! slot-1 superposition, a subtraction slot that cancels the co-user's
//! packet through the user's own fine estimate, and an extra observation
//! slot that carries the user's packet through the co-user's fine estimate.
//! For user i the subtraction beam is z₂ and the observation beam z₃; for
//! user j the roles swap. Both users are handled by one set of functions
//! with the beams passed in the right order (the row permutation between the
//! two conventions leaves every determinant unchanged).

use num_complex::Complex64;

use crate::channel::{
    quantize, ChannelPools, Codebooks, ConditionalModel, RateMode, SystemConfig,
};
use crate::error::{Error, Result};
use crate::numerics::{
    cholesky, logdet_id_plus, solve_lower_triangular, ComplexMatrix, ComplexVector, RngStream,
};

use super::precoders::{multicast_direction, oneshot_zf_precoders, resolution_precoders, slot1_precoders};

/// The six quantizer symbols that condition one scheduled pair's rates: the
/// pair's fine and coarse reports from its previous interval, and the two
/// current coarse reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CsiTuple {
    pub past_fine_i: usize,
    pub past_fine_j: usize,
    pub past_coarse_i: usize,
    pub past_coarse_j: usize,
    pub cur_coarse_i: usize,
    pub cur_coarse_j: usize,
}

/// Expected service rates for the two users of one action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairRates {
    pub rate_i: f64,
    pub rate_j: f64,
}

/// Signal and noise-plus-interference description of one user's resolved
/// observations: rate follows from log₂|I + Γ⁻¹GG†|.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveChannel {
    pub g: ComplexMatrix,
    pub gamma: ComplexMatrix,
}

/// Two-observation model after explicit interference subtraction: the first
/// row keeps residual interference from the fine-estimation error and the
/// noise amplified by the subtraction beam; the second row is the clean
/// extra observation.
#[allow(clippy::too_many_arguments)]
pub fn effective_channel_suboptimal(
    h_me_past: &ComplexVector,
    hbreve_me: &ComplexVector,
    hbreve_other: &ComplexVector,
    h_me_cur: &ComplexVector,
    w_me: &ComplexMatrix,
    w_other: &ComplexMatrix,
    z_sub: &ComplexVector,
    z_obs: &ComplexVector,
) -> Result<EffectiveChannel> {
    let hz_sub = h_me_cur.dot(z_sub);
    if hz_sub.norm_sqr() == 0.0 {
        return Err(Error::DegenerateGeometry(
            "current channel orthogonal to the subtraction beam".into(),
        ));
    }
    let delta = h_me_cur.dot(z_obs);
    let h_err = h_me_past.sub(hbreve_me);
    let residual = h_err.row_times(w_other).norm_sq();
    let g = ComplexMatrix::from_rows(&[
        h_me_past.row_times(w_me),
        hbreve_other.row_times(w_me).scale(delta),
    ]);
    let mut gamma = ComplexMatrix::zeros(2, 2);
    gamma[(0, 0)] = Complex64::new(1.0 + residual + 1.0 / hz_sub.norm_sqr(), 0.0);
    gamma[(1, 1)] = Complex64::new(1.0, 0.0);
    Ok(EffectiveChannel { g, gamma })
}

/// Three-observation model with no pre-processing: the optimal linear filter
/// works on the raw slots, with the co-user's packet entering through the
/// full interference stack.
#[allow(clippy::too_many_arguments)]
pub fn effective_channel_optimal(
    h_me_past: &ComplexVector,
    hbreve_me: &ComplexVector,
    hbreve_other: &ComplexVector,
    h_me_cur: &ComplexVector,
    w_me: &ComplexMatrix,
    w_other: &ComplexMatrix,
    z_sub: &ComplexVector,
    z_obs: &ComplexVector,
) -> Result<EffectiveChannel> {
    let dim = h_me_past.len();
    let hz_sub = h_me_cur.dot(z_sub);
    let delta = h_me_cur.dot(z_obs);
    let zero = ComplexVector::zeros(dim);
    let signal_stack = ComplexMatrix::from_rows(&[
        h_me_past.clone(),
        zero.clone(),
        hbreve_other.scale(delta),
    ]);
    let interference_stack = ComplexMatrix::from_rows(&[
        h_me_past.clone(),
        hbreve_me.scale(hz_sub),
        zero,
    ]);
    let g = signal_stack.matmul(w_me);
    let b = interference_stack.matmul(w_other);
    let gamma = ComplexMatrix::identity(3).add(&b.matmul(&b.adjoint()));
    Ok(EffectiveChannel { g, gamma })
}

/// Instantaneous rate (1/3)·log₂|I + Γ⁻¹GG†|, evaluated by whitening G with
/// the Cholesky factor of Γ and reducing to the 2×2 Gram determinant.
pub fn instantaneous_rate(eff: &EffectiveChannel) -> Result<f64> {
    let l = cholesky(&eff.gamma)?;
    let y = solve_lower_triangular(&l, &eff.g);
    let gram = y.adjoint().matmul(&y);
    Ok(logdet_id_plus(&gram)? / 3.0)
}

/// One-shot rate log₂(1 + |h·w_me|²/(1 + |h·w_other|²)). No 1/3 factor: the
/// one-shot action uses the whole interval the same way.
pub fn oneshot_instantaneous_rate(
    h: &ComplexVector,
    w_me: &ComplexVector,
    w_other: &ComplexVector,
) -> f64 {
    let signal = h.dot(w_me).norm_sqr();
    let interference = h.dot(w_other).norm_sqr();
    (1.0 + signal / (1.0 + interference)).log2()
}

/// The user's past estimate as the receiver models it: the exact channel
/// under the perfect-delayed-CSI bypass; otherwise the fine codeword carrying
/// the realized norm (single-level quantizer) or its quantized norm level.
fn reconstruct_fine(
    cfg: &SystemConfig,
    books: &Codebooks,
    fine_sym: usize,
    h_true: &ComplexVector,
) -> ComplexVector {
    if cfg.delayed_csi_bypass {
        h_true.clone()
    } else if cfg.norm_levels == 1 {
        books.fine.direction(fine_sym).scale_re(h_true.norm())
    } else {
        books.fine.reconstruct(fine_sym)
    }
}

fn mean(samples: &[f64]) -> f64 {
    samples.iter().sum::<f64>() / samples.len() as f64
}

/// Guaranteed-throughput value r·(1 − P̂(I < r)) from rate samples.
fn conservative_value(samples: &[f64], assigned: f64) -> f64 {
    let below = samples.iter().filter(|&&x| x < assigned).count();
    assigned * (1.0 - below as f64 / samples.len() as f64)
}

/// Empirical ε-quantile: the sample at index ⌊ε·n⌋ of the sorted rates.
fn epsilon_quantile(mut samples: Vec<f64>, epsilon: f64) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = ((epsilon * samples.len() as f64).floor() as usize).min(samples.len() - 1);
    samples[k]
}

/// Expected rates for a scheduled pair given its conditioning tuple. In
/// guaranteed-throughput mode the assigned rates are derived internally from
/// the same coarse-keyed mapping as [`rate_assignment`].
pub fn expected_pair_rates(
    cfg: &SystemConfig,
    books: &Codebooks,
    model: &ConditionalModel,
    pools: &ChannelPools,
    tuple: &CsiTuple,
    rng: &mut RngStream,
) -> Result<PairRates> {
    let assigned = match cfg.rate_mode {
        RateMode::Conservative => Some(rate_assignment(
            cfg,
            books,
            model,
            pools,
            tuple.past_coarse_i,
            tuple.past_coarse_j,
            rng,
        )?),
        _ => None,
    };
    expected_pair_rates_with_assignment(cfg, books, pools, tuple, assigned, rng)
}

/// As [`expected_pair_rates`] but with the assigned rates supplied, so a
/// table builder can share one assignment per coarse pair across all tuples.
pub fn expected_pair_rates_with_assignment(
    cfg: &SystemConfig,
    books: &Codebooks,
    pools: &ChannelPools,
    tuple: &CsiTuple,
    assigned: Option<(f64, f64)>,
    rng: &mut RngStream,
) -> Result<PairRates> {
    if cfg.rate_mode == RateMode::Conservative && assigned.is_none() {
        return Err(Error::InvalidInput(
            "guaranteed-throughput rates need assigned rates".into(),
        ));
    }
    let power = cfg.power_budget();
    let (w_i, w_j) = slot1_precoders(cfg, books, tuple.past_coarse_i, tuple.past_coarse_j)?;
    let z_dir = multicast_direction(cfg, books, tuple.cur_coarse_i, tuple.cur_coarse_j)?;
    let n = cfg.mc_samples_reward;
    let mut samples_i = Vec::with_capacity(n);
    let mut samples_j = Vec::with_capacity(n);
    for _ in 0..n {
        let (rate_i, rate_j) = pair_rate_draw(cfg, books, pools, tuple, &w_i, &w_j, &z_dir, power, rng)?;
        samples_i.push(rate_i);
        samples_j.push(rate_j);
    }
    Ok(match (cfg.rate_mode, assigned) {
        (RateMode::Conservative, Some((r_i, r_j))) => PairRates {
            rate_i: conservative_value(&samples_i, r_i),
            rate_j: conservative_value(&samples_j, r_j),
        },
        _ => PairRates {
            rate_i: mean(&samples_i),
            rate_j: mean(&samples_j),
        },
    })
}

/// One realized three-slot rate draw under the tuple's conditioning, with
/// the slot-1 precoders and multicast direction supplied by the caller (they
/// depend only on the tuple, so table builders hoist them out of the loop).
#[allow(clippy::too_many_arguments)]
fn pair_rate_draw(
    cfg: &SystemConfig,
    books: &Codebooks,
    pools: &ChannelPools,
    tuple: &CsiTuple,
    w_i: &ComplexMatrix,
    w_j: &ComplexMatrix,
    z_dir: &ComplexVector,
    power: f64,
    rng: &mut RngStream,
) -> Result<(f64, f64)> {
    let (h_i_past, h_j_past) = pools.draw_pair_joint(
        (tuple.past_coarse_i, tuple.past_fine_i),
        (tuple.past_coarse_j, tuple.past_fine_j),
        rng,
    )?;
    let (h_i_cur, h_j_cur) = pools.draw_pair_coarse(tuple.cur_coarse_i, tuple.cur_coarse_j, rng)?;
    let hb_i = reconstruct_fine(cfg, books, tuple.past_fine_i, h_i_past);
    let hb_j = reconstruct_fine(cfg, books, tuple.past_fine_j, h_j_past);
    let (z2, z3) = resolution_precoders(z_dir, &hb_i, &hb_j, w_i, w_j, power)?;
    Ok(match cfg.rate_mode {
        RateMode::OptimalFilter => (
            instantaneous_rate(&effective_channel_optimal(
                h_i_past, &hb_i, &hb_j, h_i_cur, w_i, w_j, &z2, &z3,
            )?)?,
            instantaneous_rate(&effective_channel_optimal(
                h_j_past, &hb_j, &hb_i, h_j_cur, w_j, w_i, &z3, &z2,
            )?)?,
        ),
        _ => (
            instantaneous_rate(&effective_channel_suboptimal(
                h_i_past, &hb_i, &hb_j, h_i_cur, w_i, w_j, &z2, &z3,
            )?)?,
            instantaneous_rate(&effective_channel_suboptimal(
                h_j_past, &hb_j, &hb_i, h_j_cur, w_j, w_i, &z3, &z2,
            )?)?,
        ),
    })
}

/// One realized rate pair for a scheduled pair — a single draw of the
/// construction [`expected_pair_rates`] averages. Always the realized
/// instantaneous rates: the per-realization service model substitutes these
/// for the conditional means, whatever the rate mode.
pub fn sample_pair_rates(
    cfg: &SystemConfig,
    books: &Codebooks,
    pools: &ChannelPools,
    tuple: &CsiTuple,
    rng: &mut RngStream,
) -> Result<PairRates> {
    let power = cfg.power_budget();
    let (w_i, w_j) = slot1_precoders(cfg, books, tuple.past_coarse_i, tuple.past_coarse_j)?;
    let z_dir = multicast_direction(cfg, books, tuple.cur_coarse_i, tuple.cur_coarse_j)?;
    let (rate_i, rate_j) = pair_rate_draw(cfg, books, pools, tuple, &w_i, &w_j, &z_dir, power, rng)?;
    Ok(PairRates { rate_i, rate_j })
}

/// One realized one-shot rate pair under the current coarse conditioning.
pub fn sample_oneshot_rates(
    cfg: &SystemConfig,
    books: &Codebooks,
    pools: &ChannelPools,
    cur_coarse_i: usize,
    cur_coarse_j: usize,
    rng: &mut RngStream,
) -> Result<PairRates> {
    let (w_i, w_j) = oneshot_zf_precoders(cfg, books, cur_coarse_i, cur_coarse_j)?;
    let (h_i, h_j) = pools.draw_pair_coarse(cur_coarse_i, cur_coarse_j, rng)?;
    Ok(PairRates {
        rate_i: oneshot_instantaneous_rate(h_i, &w_i, &w_j),
        rate_j: oneshot_instantaneous_rate(h_j, &w_j, &w_i),
    })
}

/// The fixed rate-assignment mapping for guaranteed-throughput service: the
/// ε-outage rate of each user's instantaneous rate, keyed on the coarse
/// symbols available when the pair's packets were first sent. Everything not
/// yet known at that point — fine reports, the future interval's coarse
/// reports — is marginalized under the generative law.
pub fn rate_assignment(
    cfg: &SystemConfig,
    books: &Codebooks,
    model: &ConditionalModel,
    pools: &ChannelPools,
    past_coarse_i: usize,
    past_coarse_j: usize,
    rng: &mut RngStream,
) -> Result<(f64, f64)> {
    let power = cfg.power_budget();
    let (w_i, w_j) = slot1_precoders(cfg, books, past_coarse_i, past_coarse_j)?;
    let n = cfg.mc_samples_reward;
    let mut samples_i = Vec::with_capacity(n);
    let mut samples_j = Vec::with_capacity(n);
    for _ in 0..n {
        let (h_i_past, h_j_past) = pools.draw_pair_coarse(past_coarse_i, past_coarse_j, rng)?;
        let qf_i = quantize(h_i_past, cfg.sigma_fine_sq(), &books.fine, rng)?;
        let qf_j = quantize(h_j_past, cfg.sigma_fine_sq(), &books.fine, rng)?;
        let hb_i = reconstruct_fine(cfg, books, books.fine.symbol_of(qf_i), h_i_past);
        let hb_j = reconstruct_fine(cfg, books, books.fine.symbol_of(qf_j), h_j_past);
        let cur_i = model.sample_coarse(rng);
        let cur_j = model.sample_coarse(rng);
        let z_dir = multicast_direction(cfg, books, cur_i, cur_j)?;
        let (h_i_cur, h_j_cur) = pools.draw_pair_coarse(cur_i, cur_j, rng)?;
        let (z2, z3) = resolution_precoders(&z_dir, &hb_i, &hb_j, &w_i, &w_j, power)?;
        samples_i.push(instantaneous_rate(&effective_channel_suboptimal(
            h_i_past, &hb_i, &hb_j, h_i_cur, &w_i, &w_j, &z2, &z3,
        )?)?);
        samples_j.push(instantaneous_rate(&effective_channel_suboptimal(
            h_j_past, &hb_j, &hb_i, h_j_cur, &w_j, &w_i, &z3, &z2,
        )?)?);
    }
    Ok((
        epsilon_quantile(samples_i, cfg.outage_epsilon),
        epsilon_quantile(samples_j, cfg.outage_epsilon),
    ))
}

/// Expected one-shot rates for a pair given current coarse symbols. The
/// guaranteed-throughput variant assigns its own ε-outage rate, since for a
/// one-shot action the conditioning available at assignment time is exactly
/// the current coarse pair.
pub fn expected_oneshot_rates(
    cfg: &SystemConfig,
    books: &Codebooks,
    pools: &ChannelPools,
    cur_coarse_i: usize,
    cur_coarse_j: usize,
    rng: &mut RngStream,
) -> Result<PairRates> {
    let (w_i, w_j) = oneshot_zf_precoders(cfg, books, cur_coarse_i, cur_coarse_j)?;
    let n = cfg.mc_samples_reward;
    let mut samples_i = Vec::with_capacity(n);
    let mut samples_j = Vec::with_capacity(n);
    for _ in 0..n {
        let (h_i, h_j) = pools.draw_pair_coarse(cur_coarse_i, cur_coarse_j, rng)?;
        samples_i.push(oneshot_instantaneous_rate(h_i, &w_i, &w_j));
        samples_j.push(oneshot_instantaneous_rate(h_j, &w_j, &w_i));
    }
    Ok(match cfg.rate_mode {
        RateMode::Conservative => {
            let value = |samples: Vec<f64>| {
                let r = epsilon_quantile(samples.clone(), cfg.outage_epsilon);
                conservative_value(&samples, r)
            };
            PairRates {
                rate_i: value(samples_i),
                rate_j: value(samples_j),
            }
        }
        _ => PairRates {
            rate_i: mean(&samples_i),
            rate_j: mean(&samples_j),
        },
    })
}

// ── tests ──────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::super::precoders::tests::desk_books;
    use super::*;
    use crate::channel::tests_support::desk_system;
    use crate::channel::{estimate_conditional_model, sample_true_given_estimates, CsitMode};
    use crate::numerics::sample_cn;

    // Independent rate oracle: cofactor determinants of Γ + GG† and Γ, with
    // no Cholesky factorization or Gram reduction anywhere.
    fn det2(m: &ComplexMatrix) -> Complex64 {
        m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]
    }

    fn det3(m: &ComplexMatrix) -> Complex64 {
        m[(0, 0)] * (m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)])
            - m[(0, 1)] * (m[(1, 0)] * m[(2, 2)] - m[(1, 2)] * m[(2, 0)])
            + m[(0, 2)] * (m[(1, 0)] * m[(2, 1)] - m[(1, 1)] * m[(2, 0)])
    }

    fn oracle_rate(eff: &EffectiveChannel) -> f64 {
        let total = eff.gamma.add(&eff.g.matmul(&eff.g.adjoint()));
        let (num, den) = match eff.gamma.rows() {
            2 => (det2(&total), det2(&eff.gamma)),
            3 => (det3(&total), det3(&eff.gamma)),
            n => panic!("unexpected dimension {n}"),
        };
        (num.re / den.re).log2() / 3.0
    }

    struct RandomScene {
        h_past: ComplexVector,
        hb_me: ComplexVector,
        hb_other: ComplexVector,
        h_cur: ComplexVector,
        w_me: ComplexMatrix,
        w_other: ComplexMatrix,
        z_sub: ComplexVector,
        z_obs: ComplexVector,
    }

    fn random_scene(rng: &mut RngStream) -> RandomScene {
        let dim = 2;
        let mat = |rng: &mut RngStream| {
            ComplexMatrix::from_columns(&[
                sample_cn(dim, 1.0, rng).unwrap(),
                sample_cn(dim, 1.0, rng).unwrap(),
            ])
        };
        RandomScene {
            h_past: sample_cn(dim, 1.0, rng).unwrap(),
            hb_me: sample_cn(dim, 1.0, rng).unwrap(),
            hb_other: sample_cn(dim, 1.0, rng).unwrap(),
            h_cur: sample_cn(dim, 1.0, rng).unwrap(),
            w_me: mat(rng),
            w_other: mat(rng),
            z_sub: sample_cn(dim, 4.0, rng).unwrap(),
            z_obs: sample_cn(dim, 4.0, rng).unwrap(),
        }
    }

    fn channels(s: &RandomScene) -> (EffectiveChannel, EffectiveChannel) {
        let sub = effective_channel_suboptimal(
            &s.h_past, &s.hb_me, &s.hb_other, &s.h_cur, &s.w_me, &s.w_other, &s.z_sub, &s.z_obs,
        )
        .unwrap();
        let opt = effective_channel_optimal(
            &s.h_past, &s.hb_me, &s.hb_other, &s.h_cur, &s.w_me, &s.w_other, &s.z_sub, &s.z_obs,
        )
        .unwrap();
        (sub, opt)
    }

    #[test]
    fn rates_match_the_determinant_oracle() {
        let mut rng = RngStream::new(42, 0);
        for _ in 0..200 {
            let scene = random_scene(&mut rng);
            let (sub, opt) = channels(&scene);
            for eff in [&sub, &opt] {
                let fast = instantaneous_rate(eff).unwrap();
                let slow = oracle_rate(eff);
                assert!(
                    (fast - slow).abs() < 1e-9,
                    "whitened rate {fast} vs determinant oracle {slow}"
                );
            }
        }
    }

    #[test]
    fn optimal_filter_never_loses_to_the_suboptimal_one() {
        let mut rng = RngStream::new(43, 0);
        for _ in 0..500 {
            let scene = random_scene(&mut rng);
            let (sub, opt) = channels(&scene);
            let r_sub = instantaneous_rate(&sub).unwrap();
            let r_opt = instantaneous_rate(&opt).unwrap();
            assert!(
                r_opt >= r_sub - 1e-9,
                "optimal {r_opt} below suboptimal {r_sub}"
            );
        }
    }

    #[test]
    fn oneshot_rate_textbook_case() {
        // |h·w_me|² = 3 with no interference ⇒ log₂(4) = 2 bits exactly.
        let h = ComplexVector::new(vec![
            Complex64::new(3f64.sqrt(), 0.0),
            Complex64::new(0.0, 0.0),
        ]);
        let w_me = ComplexVector::new(vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]);
        let w_other = ComplexVector::new(vec![Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)]);
        let rate = oneshot_instantaneous_rate(&h, &w_me, &w_other);
        assert!((rate - 2.0).abs() < 1e-12, "rate {rate}");
    }

    fn desk_world(
        cfg: &SystemConfig,
    ) -> (Codebooks, ConditionalModel, ChannelPools) {
        let books = desk_books(cfg);
        let rng = RngStream::new(cfg.seed, 31);
        let model = estimate_conditional_model(cfg, &books, &mut rng.substream(0)).unwrap();
        let pools = ChannelPools::build_with_limits(
            cfg,
            &books,
            &model,
            600,
            50,
            500_000,
            &mut rng.substream(1),
        )
        .unwrap();
        (books, model, pools)
    }

    #[test]
    fn pooled_expectation_agrees_with_rejection_sampling() {
        let mut cfg = desk_system();
        cfg.mc_samples_reward = 2000;
        let (books, model, pools) = desk_world(&cfg);
        let tuple = CsiTuple {
            past_fine_i: 0,
            past_fine_j: 1,
            past_coarse_i: 0,
            past_coarse_j: 0,
            cur_coarse_i: 0,
            cur_coarse_j: 0,
        };
        let mut rng = RngStream::new(cfg.seed, 32);
        let pooled = expected_pair_rates(&cfg, &books, &model, &pools, &tuple, &mut rng).unwrap();
        // Oracle path: fresh rejection-conditioned channels through the same
        // formulas, with its own Monte-Carlo error bar.
        let power = cfg.power_budget();
        let (w_i, w_j) = slot1_precoders(&cfg, &books, 0, 0).unwrap();
        let z_dir = multicast_direction(&cfg, &books, 0, 0).unwrap();
        let mut oracle_rng = RngStream::new(991, 0);
        let n = 400;
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let h_i = sample_true_given_estimates(&cfg, &books, 0, Some(0), &mut oracle_rng).unwrap();
            let h_j = sample_true_given_estimates(&cfg, &books, 0, Some(1), &mut oracle_rng).unwrap();
            let h_i_cur = sample_true_given_estimates(&cfg, &books, 0, None, &mut oracle_rng).unwrap();
            let hb_i = reconstruct_fine(&cfg, &books, 0, &h_i);
            let hb_j = reconstruct_fine(&cfg, &books, 1, &h_j);
            let (z2, z3) = resolution_precoders(&z_dir, &hb_i, &hb_j, &w_i, &w_j, power).unwrap();
            let eff = effective_channel_suboptimal(
                &h_i, &hb_i, &hb_j, &h_i_cur, &w_i, &w_j, &z2, &z3,
            )
            .unwrap();
            samples.push(instantaneous_rate(&eff).unwrap());
        }
        let oracle_mean = mean(&samples);
        let var = samples.iter().map(|x| (x - oracle_mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64 + var / cfg.mc_samples_reward as f64).sqrt();
        assert!(
            (pooled.rate_i - oracle_mean).abs() < 4.0 * se,
            "pooled {} vs rejection oracle {} (se {se})",
            pooled.rate_i,
            oracle_mean
        );
    }

    #[test]
    fn perfect_delayed_csi_beats_quantized_delayed_csi() {
        let mut cfg = desk_system();
        cfg.power_db = 30.0;
        cfg.mc_samples_reward = 1500;
        let (books, model, pools) = desk_world(&cfg);
        let tuple = CsiTuple {
            past_fine_i: 0,
            past_fine_j: 1,
            past_coarse_i: 0,
            past_coarse_j: 0,
            cur_coarse_i: 0,
            cur_coarse_j: 0,
        };
        let quantized =
            expected_pair_rates(&cfg, &books, &model, &pools, &tuple, &mut RngStream::new(1, 0))
                .unwrap();
        let mut bypass_cfg = cfg.clone();
        bypass_cfg.delayed_csi_bypass = true;
        let perfect = expected_pair_rates(
            &bypass_cfg,
            &books,
            &model,
            &pools,
            &tuple,
            &mut RngStream::new(1, 0),
        )
        .unwrap();
        assert!(
            perfect.rate_i + perfect.rate_j > quantized.rate_i + quantized.rate_j,
            "bypass {:?} not above quantized {:?}",
            perfect,
            quantized
        );
    }

    #[test]
    fn full_multiplexing_slope_under_perfect_delayed_csi() {
        // With exact past estimates and blind full-rank precoding, the pair
        // sum rate must climb at about (4/3)·log₂10 bits per decade.
        let mut cfg = desk_system();
        cfg.csit_mode = CsitMode::DelayedOnly;
        cfg.coarse_bits = 0;
        cfg.delayed_csi_bypass = true;
        cfg.mc_samples_reward = 600;
        let (books, model, pools) = desk_world(&cfg);
        let tuple = CsiTuple {
            past_fine_i: 0,
            past_fine_j: 1,
            past_coarse_i: 0,
            past_coarse_j: 0,
            cur_coarse_i: 0,
            cur_coarse_j: 0,
        };
        let sum_rate = |db: f64| {
            let cfg = cfg.at_power_db(db);
            let r = expected_pair_rates(
                &cfg,
                &books,
                &model,
                &pools,
                &tuple,
                &mut RngStream::new(3, 0),
            )
            .unwrap();
            r.rate_i + r.rate_j
        };
        let slope = sum_rate(40.0) - sum_rate(30.0);
        let want = 4.0 / 3.0 * 10f64.log2();
        assert!(
            (slope - want).abs() < 0.2 * want,
            "decade slope {slope} vs nominal {want}"
        );
    }

    #[test]
    fn guaranteed_rate_stays_within_its_assignment() {
        let mut cfg = desk_system();
        cfg.rate_mode = RateMode::Conservative;
        cfg.mc_samples_reward = 800;
        let (books, model, pools) = desk_world(&cfg);
        let (r_i, r_j) = rate_assignment(
            &cfg,
            &books,
            &model,
            &pools,
            0,
            0,
            &mut RngStream::new(5, 0),
        )
        .unwrap();
        assert!(r_i > 0.0 && r_j > 0.0);
        let tuple = CsiTuple {
            past_fine_i: 1,
            past_fine_j: 0,
            past_coarse_i: 0,
            past_coarse_j: 0,
            cur_coarse_i: 0,
            cur_coarse_j: 0,
        };
        let rates = expected_pair_rates_with_assignment(
            &cfg,
            &books,
            &pools,
            &tuple,
            Some((r_i, r_j)),
            &mut RngStream::new(6, 0),
        )
        .unwrap();
        assert!(rates.rate_i >= 0.0 && rates.rate_i <= r_i);
        assert!(rates.rate_j >= 0.0 && rates.rate_j <= r_j);
    }

    #[test]
    fn rate_assignment_is_deterministic() {
        let cfg = desk_system();
        let (books, model, pools) = desk_world(&cfg);
        let a = rate_assignment(&cfg, &books, &model, &pools, 0, 0, &mut RngStream::new(9, 4))
            .unwrap();
        let b = rate_assignment(&cfg, &books, &model, &pools, 0, 0, &mut RngStream::new(9, 4))
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn oneshot_rates_saturate_when_estimates_coincide() {
        // A single coarse codeword forces the matched-beam fallback; both
        // users then see interference comparable to signal, capping the rate
        // near one bit however large the power grows.
        let mut cfg = desk_system();
        cfg.power_db = 30.0;
        cfg.mc_samples_reward = 1500;
        let (books, _, pools) = desk_world(&cfg);
        let rates =
            expected_oneshot_rates(&cfg, &books, &pools, 0, 0, &mut RngStream::new(11, 0)).unwrap();
        assert!(rates.rate_i < 1.1, "saturated rate {} too high", rates.rate_i);
        assert!(rates.rate_j < 1.1);
        let low = cfg.at_power_db(0.0);
        let low_rates =
            expected_oneshot_rates(&low, &books, &pools, 0, 0, &mut RngStream::new(11, 0)).unwrap();
        assert!(low_rates.rate_i < rates.rate_i);
    }

    #[test]
    fn conservative_mode_requires_an_assignment() {
        let mut cfg = desk_system();
        cfg.rate_mode = RateMode::Conservative;
        let (books, _, pools) = desk_world(&cfg);
        let tuple = CsiTuple {
            past_fine_i: 0,
            past_fine_j: 0,
            past_coarse_i: 0,
            past_coarse_j: 0,
            cur_coarse_i: 0,
            cur_coarse_j: 0,
        };
        let err = expected_pair_rates_with_assignment(
            &cfg,
            &books,
            &pools,
            &tuple,
            None,
            &mut RngStream::new(1, 0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }
}
