//! Fixed mappings from quantizer symbols to transmit precoders.
//!
//! All of these are functions of symbols alone (plus the codebooks that give
//! symbols their geometry), so a scheduler state determines its precoders
//! exactly — there is no per-realization adaptation except the slot-2/3
//! power scaling, which the power constraint ties to realized estimates.

use num_complex::Complex64;

use crate::channel::{Codebooks, CsitMode, SystemConfig};
use crate::error::{Error, Result};
use crate::numerics::{svd_thin, waterfill, ComplexMatrix, ComplexVector};

/// Number of relative-phase candidates in the multicast grid search.
const PHASE_GRID: usize = 64;

/// Everything slot precoding fixes for one scheduled pair: the two slot-1
/// matrices and the shared unit direction reused by both resolution slots.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderSet {
    pub w_i: ComplexMatrix,
    pub w_j: ComplexMatrix,
    pub z_direction: ComplexVector,
}

impl PrecoderSet {
    /// Builds the full set for a pair whose previous interval recorded the
    /// given coarse symbols and whose current interval reports the others.
    pub fn for_symbols(
        cfg: &SystemConfig,
        books: &Codebooks,
        past_coarse_i: usize,
        past_coarse_j: usize,
        cur_coarse_i: usize,
        cur_coarse_j: usize,
    ) -> Result<Self> {
        let (w_i, w_j) = slot1_precoders(cfg, books, past_coarse_i, past_coarse_j)?;
        let z_direction = multicast_direction(cfg, books, cur_coarse_i, cur_coarse_j)?;
        Ok(Self {
            w_i,
            w_j,
            z_direction,
        })
    }
}

fn standard_basis(dim: usize, k: usize) -> ComplexVector {
    ComplexVector::from_fn(dim, |i| Complex64::new(if i == k { 1.0 } else { 0.0 }, 0.0))
}

/// Slot-1 precoder pair, each M_t × 2 with power P/2.
///
/// With coarse feedback the design treats the two coarse reconstructions as
/// exact channels, whitens the naive two-observation model by the offline
/// noise scalars diag(1 + c₂, c₃), and applies SVD beamforming with
/// waterfilling. Without coarse feedback the transmitter is blind and spends
/// the budget evenly on two fixed orthogonal beams, keeping full rank.
pub fn slot1_precoders(
    cfg: &SystemConfig,
    books: &Codebooks,
    past_coarse_i: usize,
    past_coarse_j: usize,
) -> Result<(ComplexMatrix, ComplexMatrix)> {
    let budget = cfg.power_budget() / 2.0;
    if cfg.csit_mode == CsitMode::DelayedOnly {
        let dim = cfg.num_tx_antennas;
        let scale = (budget / 2.0).sqrt();
        let blind = ComplexMatrix::from_columns(&[
            standard_basis(dim, 0).scale_re(scale),
            standard_basis(dim, 1).scale_re(scale),
        ]);
        return Ok((blind.clone(), blind));
    }
    let hhat_i = books.coarse.reconstruct(past_coarse_i);
    let hhat_j = books.coarse.reconstruct(past_coarse_j);
    let w_i = naive_mimo_precoder(cfg, &hhat_i, &hhat_j, budget);
    let w_j = naive_mimo_precoder(cfg, &hhat_j, &hhat_i, budget);
    Ok((w_i, w_j))
}

/// Point-to-point design against the whitened stack [own; other]: the first
/// observation carries subtraction noise 1 + c₂, the second the scaled noise
/// c₃ of the extra resolution observation.
fn naive_mimo_precoder(
    cfg: &SystemConfig,
    own: &ComplexVector,
    other: &ComplexVector,
    budget: f64,
) -> ComplexMatrix {
    let stack = ComplexMatrix::from_rows(&[
        own.scale_re(1.0 / (1.0 + cfg.precoder_c2).sqrt()),
        other.scale_re(1.0 / cfg.precoder_c3.sqrt()),
    ]);
    let (_, sigma, v) = svd_thin(&stack);
    let gains: Vec<f64> = sigma.iter().map(|s| s * s).collect();
    let powers = waterfill(&gains, budget);
    ComplexMatrix::from_columns(&[
        v.col(0).scale_re(powers[0].sqrt()),
        v.col(1).scale_re(powers.get(1).copied().unwrap_or(0.0).sqrt()),
    ])
}

/// Unit multicast direction serving both resolution slots, from the current
/// coarse symbols: a grid search over relative phases of the two conjugate
/// beams, maximizing the weaker user's beamforming gain. Ties keep the
/// earliest candidate, so the mapping is deterministic.
pub fn multicast_direction(
    cfg: &SystemConfig,
    books: &Codebooks,
    cur_coarse_i: usize,
    cur_coarse_j: usize,
) -> Result<ComplexVector> {
    if cfg.csit_mode == CsitMode::DelayedOnly {
        return Ok(standard_basis(cfg.num_tx_antennas, 0));
    }
    let hhat_i = books.coarse.reconstruct(cur_coarse_i);
    let hhat_j = books.coarse.reconstruct(cur_coarse_j);
    let u_i = hhat_i
        .conj()
        .normalized()
        .ok_or_else(|| Error::DegenerateGeometry("zero coarse reconstruction".into()))?;
    let u_j = hhat_j
        .conj()
        .normalized()
        .ok_or_else(|| Error::DegenerateGeometry("zero coarse reconstruction".into()))?;
    let score = |z: &ComplexVector| hhat_i.dot(z).norm().min(hhat_j.dot(z).norm());
    let mut best = u_i.clone();
    let mut best_score = score(&u_i);
    let mut consider = |cand: ComplexVector| {
        let s = score(&cand);
        if s > best_score {
            best_score = s;
            best = cand;
        }
    };
    consider(u_j.clone());
    for t in 0..PHASE_GRID {
        let phi = 2.0 * std::f64::consts::PI * t as f64 / PHASE_GRID as f64;
        let rotated = u_j.scale(Complex64::from_polar(1.0, phi));
        if let Some(cand) = u_i.add(&rotated).normalized() {
            consider(cand);
        }
    }
    Ok(best)
}

/// Scales the shared direction into the two resolution beams z₂, z₃ so each
/// slot transmits at exactly the power budget: ‖z₂‖·‖h̆_i W_j‖ = √P and
/// ‖z₃‖·‖h̆_j W_i‖ = √P.
pub fn resolution_precoders(
    z_direction: &ComplexVector,
    hbreve_i: &ComplexVector,
    hbreve_j: &ComplexVector,
    w_i: &ComplexMatrix,
    w_j: &ComplexMatrix,
    power: f64,
) -> Result<(ComplexVector, ComplexVector)> {
    let n2 = hbreve_i.row_times(w_j).norm();
    let n3 = hbreve_j.row_times(w_i).norm();
    if n2 < 1e-12 || n3 < 1e-12 {
        return Err(Error::DegeneratePrecoder(format!(
            "resolution scaling degenerate: ‖h̆_i W_j‖ = {n2}, ‖h̆_j W_i‖ = {n3}"
        )));
    }
    let root_p = power.sqrt();
    Ok((
        z_direction.scale_re(root_p / n2),
        z_direction.scale_re(root_p / n3),
    ))
}

/// One-shot precoder pair from current coarse symbols: each user gets a
/// zero-forcing beam orthogonal to the co-user's reconstruction, at power
/// P/2. When the two reconstructions are (numerically) collinear there is no
/// zero-forcing direction; both users then fall back to the shared matched
/// beam and live with the interference, which is what a current-CSI-only
/// design degenerates to.
pub fn oneshot_zf_precoders(
    cfg: &SystemConfig,
    books: &Codebooks,
    cur_coarse_i: usize,
    cur_coarse_j: usize,
) -> Result<(ComplexVector, ComplexVector)> {
    let scale = (cfg.power_budget() / 2.0).sqrt();
    let hhat_i = books.coarse.reconstruct(cur_coarse_i);
    let hhat_j = books.coarse.reconstruct(cur_coarse_j);
    let w_i = zf_direction(&hhat_i, &hhat_j)?.scale_re(scale);
    let w_j = zf_direction(&hhat_j, &hhat_i)?.scale_re(scale);
    Ok((w_i, w_j))
}

fn zf_direction(own: &ComplexVector, other: &ComplexVector) -> Result<ComplexVector> {
    let beam = own.conj();
    let null = other
        .conj()
        .normalized()
        .ok_or_else(|| Error::DegenerateGeometry("zero coarse reconstruction".into()))?;
    let overlap = null.inner(&beam);
    let projected = beam.sub(&null.scale(overlap));
    if projected.norm() > 1e-9 * beam.norm() {
        Ok(projected.normalized().expect("norm bounded away from zero"))
    } else {
        beam.normalized()
            .ok_or_else(|| Error::DegenerateGeometry("zero coarse reconstruction".into()))
    }
}

// ── tests ──────────────────────────────────────────────────────────────────

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::channel::{build_coarse_codebook, build_fine_codebook};
    use crate::channel::tests_support::desk_system;
    use crate::numerics::RngStream;

    pub(crate) fn desk_books(cfg: &SystemConfig) -> Codebooks {
        let rng = RngStream::new(cfg.seed, 30);
        Codebooks {
            coarse: build_coarse_codebook(cfg, &mut rng.substream(0)),
            fine: build_fine_codebook(cfg, &mut rng.substream(1)),
        }
    }

    fn two_bit_system() -> (SystemConfig, Codebooks) {
        let mut cfg = desk_system();
        cfg.coarse_bits = 2;
        cfg.fine_bits = 2;
        let books = desk_books(&cfg);
        (cfg, books)
    }

    #[test]
    fn slot1_precoders_spend_exactly_half_the_budget_each() {
        let (cfg, books) = two_bit_system();
        let p = cfg.power_budget();
        let (w_i, w_j) = slot1_precoders(&cfg, &books, 0, 2).unwrap();
        assert!((w_i.frobenius_norm_sq() - p / 2.0).abs() < 1e-9 * p);
        assert!((w_j.frobenius_norm_sq() - p / 2.0).abs() < 1e-9 * p);
    }

    #[test]
    fn blind_precoder_is_orthogonal_and_full_power() {
        let mut cfg = desk_system();
        cfg.csit_mode = CsitMode::DelayedOnly;
        cfg.coarse_bits = 0;
        let books = desk_books(&cfg);
        let p = cfg.power_budget();
        let (w_i, w_j) = slot1_precoders(&cfg, &books, 0, 0).unwrap();
        assert_eq!(w_i, w_j);
        assert!((w_i.frobenius_norm_sq() - p / 2.0).abs() < 1e-12 * p);
        let cross = w_i.col(0).inner(&w_i.col(1)).norm();
        assert!(cross < 1e-15, "blind beams not orthogonal: {cross}");
    }

    #[test]
    fn identical_coarse_symbols_collapse_to_rank_one() {
        let (cfg, books) = two_bit_system();
        let (w_i, _) = slot1_precoders(&cfg, &books, 1, 1).unwrap();
        // The naive stack has two identical rows, so waterfilling puts all
        // power on one mode and the second column must vanish.
        assert!(w_i.col(1).norm() < 1e-9);
        assert!((w_i.col(0).norm_sq() - cfg.power_budget() / 2.0).abs() < 1e-9);
    }

    #[test]
    fn multicast_direction_is_unit_and_no_worse_than_either_beam() {
        let (cfg, books) = two_bit_system();
        for (a, b) in [(0, 1), (1, 3), (2, 2)] {
            let z = multicast_direction(&cfg, &books, a, b).unwrap();
            assert!((z.norm() - 1.0).abs() < 1e-12);
            let ha = books.coarse.reconstruct(a);
            let hb = books.coarse.reconstruct(b);
            let score = ha.dot(&z).norm().min(hb.dot(&z).norm());
            for endpoint in [&ha, &hb] {
                let u = endpoint.conj().normalized().unwrap();
                let endpoint_score = ha.dot(&u).norm().min(hb.dot(&u).norm());
                assert!(score >= endpoint_score - 1e-12);
            }
        }
    }

    #[test]
    fn multicast_direction_with_shared_symbol_is_the_matched_beam() {
        let (cfg, books) = two_bit_system();
        let z = multicast_direction(&cfg, &books, 1, 1).unwrap();
        let matched = books.coarse.reconstruct(1).conj().normalized().unwrap();
        let alignment = matched.inner(&z).norm();
        assert!((alignment - 1.0).abs() < 1e-9);
    }

    #[test]
    fn resolution_precoders_meet_the_power_constraint_exactly() {
        let (cfg, books) = two_bit_system();
        let p = cfg.power_budget();
        let (w_i, w_j) = slot1_precoders(&cfg, &books, 0, 2).unwrap();
        let z = multicast_direction(&cfg, &books, 1, 3).unwrap();
        let hb_i = books.fine.reconstruct(2);
        let hb_j = books.fine.reconstruct(3);
        let (z2, z3) = resolution_precoders(&z, &hb_i, &hb_j, &w_i, &w_j, p).unwrap();
        let p2 = z2.norm_sq() * hb_i.row_times(&w_j).norm_sq();
        let p3 = z3.norm_sq() * hb_j.row_times(&w_i).norm_sq();
        assert!((p2 - p).abs() < 1e-9 * p, "slot-2 power {p2} vs budget {p}");
        assert!((p3 - p).abs() < 1e-9 * p, "slot-3 power {p3} vs budget {p}");
    }

    #[test]
    fn resolution_precoders_reject_null_couplings() {
        let z = standard_basis(2, 0);
        let hb = standard_basis(2, 0);
        let w = ComplexMatrix::from_columns(&[standard_basis(2, 1), ComplexVector::zeros(2)]);
        // h̆ ⊥ both columns of W ⇒ no power scaling exists.
        assert!(resolution_precoders(&z, &hb, &hb, &w, &w, 10.0).is_err());
    }

    #[test]
    fn zero_forcing_nulls_the_co_user_estimate() {
        let (cfg, books) = two_bit_system();
        let (w_i, w_j) = oneshot_zf_precoders(&cfg, &books, 0, 3).unwrap();
        let hhat_i = books.coarse.reconstruct(0);
        let hhat_j = books.coarse.reconstruct(3);
        assert!(hhat_j.dot(&w_i).norm() < 1e-9, "w_i leaks into user j's estimate");
        assert!(hhat_i.dot(&w_j).norm() < 1e-9, "w_j leaks into user i's estimate");
        let half = cfg.power_budget() / 2.0;
        assert!((w_i.norm_sq() - half).abs() < 1e-9);
        assert!((w_j.norm_sq() - half).abs() < 1e-9);
    }

    #[test]
    fn collinear_estimates_fall_back_to_matched_beams() {
        let (cfg, books) = two_bit_system();
        let (w_i, w_j) = oneshot_zf_precoders(&cfg, &books, 2, 2).unwrap();
        let matched = books.coarse.reconstruct(2).conj().normalized().unwrap();
        for w in [&w_i, &w_j] {
            let unit = w.normalized().unwrap();
            assert!((matched.inner(&unit).norm() - 1.0).abs() < 1e-9);
        }
    }
}
