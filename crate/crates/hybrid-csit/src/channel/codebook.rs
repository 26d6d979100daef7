//! Direction codebooks and the separate norm/direction quantizer.
//!
//! Coarse codebooks are Grassmannian-style: the best of 200 random candidate
//! sets under the max-min pairwise chordal distance, refined by repulsion
//! sweeps that push the closest pair apart (accepting only improvements).
//! Fine codebooks are plain random-vector codebooks. Norm levels default to
//! the single mean-norm level so the scheduling state stays directions-only.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::{sample_cn, ComplexVector, RngStream};

use super::config::SystemConfig;

const CANDIDATE_SETS: usize = 200;
const REFINE_SWEEPS: usize = 100;
const TANGENT_TRIES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodebookKind {
    Coarse,
    Fine,
}

/// A quantized channel estimate: a direction codeword plus a norm level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QuantizedCsi {
    pub direction_id: usize,
    pub norm_id: usize,
}

/// Finite set of unit-norm directions plus sorted positive norm levels.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub kind: CodebookKind,
    pub directions: Vec<ComplexVector>,
    pub norm_levels: Vec<f64>,
}

impl Codebook {
    /// Number of distinct quantizer outputs (directions × norm levels); this
    /// is the alphabet size the MDP state space counts.
    pub fn symbol_count(&self) -> usize {
        self.directions.len() * self.norm_levels.len()
    }

    pub fn symbol_of(&self, q: QuantizedCsi) -> usize {
        debug_assert!(q.direction_id < self.directions.len());
        debug_assert!(q.norm_id < self.norm_levels.len());
        q.direction_id * self.norm_levels.len() + q.norm_id
    }

    pub fn decode_symbol(&self, symbol: usize) -> QuantizedCsi {
        debug_assert!(symbol < self.symbol_count());
        QuantizedCsi {
            direction_id: symbol / self.norm_levels.len(),
            norm_id: symbol % self.norm_levels.len(),
        }
    }

    /// Estimate vector for a symbol: norm level × unit direction.
    pub fn reconstruct(&self, symbol: usize) -> ComplexVector {
        let q = self.decode_symbol(symbol);
        self.directions[q.direction_id].scale_re(self.norm_levels[q.norm_id])
    }

    /// Unit direction for a symbol (norm level ignored).
    pub fn direction(&self, symbol: usize) -> &ComplexVector {
        &self.directions[self.decode_symbol(symbol).direction_id]
    }

    pub fn validate(&self) -> Result<()> {
        if self.directions.is_empty() || self.norm_levels.is_empty() {
            return Err(Error::InvalidInput("empty codebook".into()));
        }
        for (i, d) in self.directions.iter().enumerate() {
            if (d.norm() - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidInput(format!(
                    "codebook direction {i} has norm {}",
                    d.norm()
                )));
            }
        }
        if self.norm_levels.iter().any(|&l| !(l > 0.0))
            || self.norm_levels.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::InvalidInput(
                "norm levels must be positive and strictly increasing".into(),
            ));
        }
        Ok(())
    }
}

/// The coarse/fine codebook pair most operations need together.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebooks {
    pub coarse: Codebook,
    pub fine: Codebook,
}

/// Chordal distance `√(1 − |⟨u, v⟩|²)` between unit directions.
pub fn chordal_distance(u: &ComplexVector, v: &ComplexVector) -> f64 {
    (1.0 - u.inner(v).norm_sqr()).max(0.0).sqrt()
}

/// Minimum pairwise chordal distance of a direction set (∞ for fewer than
/// two directions, making the bound vacuous).
pub fn min_pairwise_chordal(directions: &[ComplexVector]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..directions.len() {
        for j in (i + 1)..directions.len() {
            best = best.min(chordal_distance(&directions[i], &directions[j]));
        }
    }
    best
}

fn random_unit(dim: usize, rng: &mut RngStream) -> ComplexVector {
    loop {
        let v = sample_cn(dim, 1.0, rng).expect("unit variance");
        if let Some(u) = v.normalized() {
            return u;
        }
    }
}

/// Mean channel norm `E‖h‖ = δ·Γ(M_t + ½)/Γ(M_t)` for CN(0, δ²) entries.
fn mean_channel_norm(num_tx_antennas: usize, delta: f64) -> f64 {
    // Γ(m+½)/Γ(m) by recurrence from Γ(3/2)/Γ(1) = √π/2.
    let mut ratio = std::f64::consts::PI.sqrt() / 2.0;
    for m in 1..num_tx_antennas {
        ratio *= (m as f64 + 0.5) / m as f64;
    }
    delta * ratio
}

/// Norm quantizer levels: the single mean norm for L = 1, otherwise the
/// conditional means of L equiprobable bins of the norm distribution
/// (Monte-Carlo, deterministic given the stream).
fn norm_quantizer_levels(cfg: &SystemConfig, rng: &mut RngStream) -> Vec<f64> {
    let levels = cfg.norm_levels;
    if levels == 1 {
        return vec![mean_channel_norm(cfg.num_tx_antennas, cfg.pathloss_delta)];
    }
    let samples = 200_000;
    let mut norms: Vec<f64> = (0..samples)
        .map(|_| {
            sample_cn(
                cfg.num_tx_antennas,
                cfg.pathloss_delta * cfg.pathloss_delta,
                rng,
            )
            .expect("positive variance")
            .norm()
        })
        .collect();
    norms.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (0..levels)
        .map(|bin| {
            let lo = bin * samples / levels;
            let hi = (bin + 1) * samples / levels;
            norms[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Candidate replacements for direction `u`: deterministic repulsion away
/// from its nearest neighbor `v` (full orthogonalization at t = 1), plus a
/// few random tangent kicks whose size decays over sweeps.
fn endpoint_candidates(
    u: &ComplexVector,
    v: &ComplexVector,
    sweep: usize,
    rng: &mut RngStream,
) -> Vec<ComplexVector> {
    let mut out = Vec::with_capacity(3 + TANGENT_TRIES);
    let overlap = v.inner(u); // component of u along v
    for t in [0.1, 0.3, 1.0] {
        let moved = u.sub(&v.scale(overlap * Complex64::new(t, 0.0)));
        if let Some(unit) = moved.normalized() {
            out.push(unit);
        }
    }
    let eps = 0.5 * 0.97f64.powi(sweep as i32);
    for _ in 0..TANGENT_TRIES {
        let kick = sample_cn(u.len(), 1.0, rng).expect("unit variance");
        if let Some(unit) = u.add(&kick.scale_re(eps)).normalized() {
            out.push(unit);
        }
    }
    out
}

/// Builds the coarse codebook: best-of-`CANDIDATE_SETS` random sets under
/// max-min chordal distance, then repulsion refinement. Deterministic given
/// the config seed.
pub fn build_coarse_codebook(cfg: &SystemConfig, rng: &mut RngStream) -> Codebook {
    let size = 1usize << cfg.coarse_bits;
    let dim = cfg.num_tx_antennas;
    let norm_levels = norm_quantizer_levels(cfg, &mut rng.substream(0));
    let mut gen = rng.substream(1);
    let mut best: Vec<ComplexVector> = (0..size).map(|_| random_unit(dim, &mut gen)).collect();
    if size > 1 {
        let mut best_score = min_pairwise_chordal(&best);
        for _ in 1..CANDIDATE_SETS {
            let cand: Vec<ComplexVector> =
                (0..size).map(|_| random_unit(dim, &mut gen)).collect();
            let score = min_pairwise_chordal(&cand);
            if score > best_score {
                best = cand;
                best_score = score;
            }
        }
        let mut refine = rng.substream(2);
        for sweep in 0..REFINE_SWEEPS {
            // Locate the closest pair and try to push either endpoint away.
            let (mut wi, mut wj, mut wd) = (0, 1, f64::INFINITY);
            for i in 0..size {
                for j in (i + 1)..size {
                    let d = chordal_distance(&best[i], &best[j]);
                    if d < wd {
                        (wi, wj, wd) = (i, j, d);
                    }
                }
            }
            let mut improved: Option<(usize, ComplexVector, f64)> = None;
            for (slot, other) in [(wi, wj), (wj, wi)] {
                for cand in endpoint_candidates(&best[slot], &best[other], sweep, &mut refine) {
                    let mut trial = best.clone();
                    trial[slot] = cand.clone();
                    let score = min_pairwise_chordal(&trial);
                    let current = improved.as_ref().map(|x| x.2).unwrap_or(best_score);
                    if score > current {
                        improved = Some((slot, cand, score));
                    }
                }
            }
            if let Some((slot, cand, score)) = improved {
                best[slot] = cand;
                best_score = score;
            }
        }
    }
    Codebook {
        kind: CodebookKind::Coarse,
        directions: best,
        norm_levels,
    }
}

/// Builds the fine codebook: `2^fine_bits` independent isotropic unit
/// directions (random-vector codebook). Deterministic given the seed.
pub fn build_fine_codebook(cfg: &SystemConfig, rng: &mut RngStream) -> Codebook {
    let size = 1usize << cfg.fine_bits;
    let norm_levels = norm_quantizer_levels(cfg, &mut rng.substream(0));
    let mut gen = rng.substream(3);
    Codebook {
        kind: CodebookKind::Fine,
        directions: (0..size)
            .map(|_| random_unit(cfg.num_tx_antennas, &mut gen))
            .collect(),
        norm_levels,
    }
}

/// Quantizes a channel: adds estimation noise CN(0, noise_var·I), then picks
/// the direction maximizing `|⟨c, h̃⟩|` and the nearest norm level. All ties
/// break to the lowest index.
pub fn quantize(
    h: &ComplexVector,
    noise_var: f64,
    codebook: &Codebook,
    rng: &mut RngStream,
) -> Result<QuantizedCsi> {
    if h.norm() == 0.0 {
        return Err(Error::InvalidInput("cannot quantize a zero channel".into()));
    }
    if noise_var < 0.0 {
        return Err(Error::InvalidInput(format!(
            "negative estimation noise {noise_var}"
        )));
    }
    let observed = if noise_var > 0.0 {
        h.add(&sample_cn(h.len(), noise_var, rng)?)
    } else {
        h.clone()
    };
    let mut direction_id = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, c) in codebook.directions.iter().enumerate() {
        let score = c.inner(&observed).norm();
        if score > best_score {
            best_score = score;
            direction_id = i;
        }
    }
    let norm = observed.norm();
    let mut norm_id = 0;
    let mut best_dist = f64::INFINITY;
    for (i, &level) in codebook.norm_levels.iter().enumerate() {
        let dist = (norm - level).abs();
        if dist < best_dist {
            best_dist = dist;
            norm_id = i;
        }
    }
    Ok(QuantizedCsi {
        direction_id,
        norm_id,
    })
}

// ── tests ──────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::super::config::tests::desk_system;
    use super::*;

    fn e(k: usize, dim: usize) -> ComplexVector {
        ComplexVector::from_fn(dim, |i| {
            Complex64::new(if i == k { 1.0 } else { 0.0 }, 0.0)
        })
    }

    fn basis_codebook() -> Codebook {
        Codebook {
            kind: CodebookKind::Coarse,
            directions: vec![e(0, 2), e(1, 2)],
            norm_levels: vec![1.0],
        }
    }

    #[test]
    fn zero_bit_codebook_has_single_direction() {
        let cfg = desk_system();
        let mut rng = RngStream::new(cfg.seed, 0);
        let cb = build_coarse_codebook(&cfg, &mut rng);
        assert_eq!(cb.directions.len(), 1);
        cb.validate().unwrap();
    }

    #[test]
    fn one_bit_codebook_beats_random_pairs() {
        let mut cfg = desk_system();
        cfg.coarse_bits = 1;
        let mut rng = RngStream::new(cfg.seed, 0);
        let cb = build_coarse_codebook(&cfg, &mut rng);
        let built = min_pairwise_chordal(&cb.directions);
        // Oracle: the best of 10⁴ random pairs.
        let mut oracle_rng = RngStream::new(999, 0);
        let mut oracle = 0.0f64;
        for _ in 0..10_000 {
            let u = random_unit(2, &mut oracle_rng);
            let v = random_unit(2, &mut oracle_rng);
            oracle = oracle.max(chordal_distance(&u, &v));
        }
        assert!(
            built >= oracle,
            "constructed min distance {built} below random-search oracle {oracle}"
        );
    }

    #[test]
    fn two_bit_codebook_directions_are_distinct() {
        let mut cfg = desk_system();
        cfg.num_tx_antennas = 4;
        cfg.coarse_bits = 2;
        cfg.fine_bits = 2;
        let mut rng = RngStream::new(cfg.seed, 0);
        let cb = build_coarse_codebook(&cfg, &mut rng);
        assert_eq!(cb.directions.len(), 4);
        cb.validate().unwrap();
        for i in 0..4 {
            for j in (i + 1)..4 {
                let overlap = cb.directions[i].inner(&cb.directions[j]).norm();
                assert!(overlap < 1.0 - 1e-6, "pair ({i},{j}) collinear");
            }
        }
    }

    #[test]
    fn fine_codebook_size_and_norms() {
        let mut cfg = desk_system();
        cfg.fine_bits = 5;
        let mut rng = RngStream::new(cfg.seed, 0);
        let cb = build_fine_codebook(&cfg, &mut rng);
        assert_eq!(cb.directions.len(), 32);
        for d in &cb.directions {
            assert!((d.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn codebooks_are_seed_deterministic() {
        let cfg = desk_system();
        let a = build_fine_codebook(&cfg, &mut RngStream::new(cfg.seed, 0));
        let b = build_fine_codebook(&cfg, &mut RngStream::new(cfg.seed, 0));
        assert_eq!(a, b);
    }

    #[test]
    fn quantize_picks_dominant_axis() {
        let cb = basis_codebook();
        let mut rng = RngStream::new(1, 0);
        let h = ComplexVector::new(vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]);
        assert_eq!(quantize(&h, 0.0, &cb, &mut rng).unwrap().direction_id, 0);
        let h = ComplexVector::new(vec![Complex64::new(0.6, 0.0), Complex64::new(0.8, 0.0)]);
        assert_eq!(quantize(&h, 0.0, &cb, &mut rng).unwrap().direction_id, 1);
    }

    #[test]
    fn quantize_tie_breaks_to_lowest_id() {
        let cb = basis_codebook();
        let mut rng = RngStream::new(1, 0);
        let s = 1.0 / 2f64.sqrt();
        let h = ComplexVector::new(vec![Complex64::new(s, 0.0), Complex64::new(s, 0.0)]);
        assert_eq!(quantize(&h, 0.0, &cb, &mut rng).unwrap().direction_id, 0);
    }

    #[test]
    fn quantize_rejects_zero_channel() {
        let cb = basis_codebook();
        let mut rng = RngStream::new(1, 0);
        assert!(quantize(&ComplexVector::zeros(2), 0.0, &cb, &mut rng).is_err());
    }

    #[test]
    fn quantize_direction_is_scale_invariant_at_zero_noise() {
        let cfg = desk_system();
        let mut rng = RngStream::new(5, 0);
        let cb = build_fine_codebook(&cfg, &mut RngStream::new(cfg.seed, 0));
        for _ in 0..50 {
            let h = sample_cn(2, 1.0, &mut rng).unwrap();
            let a = quantize(&h, 0.0, &cb, &mut rng).unwrap().direction_id;
            let b = quantize(&h.scale_re(7.5), 0.0, &cb, &mut rng).unwrap().direction_id;
            assert_eq!(a, b);
        }
    }

    #[test]
    fn mean_norm_matches_closed_form() {
        // M_t = 2, δ = 1: E‖h‖ = Γ(2.5)/Γ(2) = 0.75·√π.
        let expect = 0.75 * std::f64::consts::PI.sqrt();
        assert!((mean_channel_norm(2, 1.0) - expect).abs() < 1e-12);
    }

    #[test]
    fn multi_level_norms_are_sorted_and_bracket_the_mean() {
        let mut cfg = desk_system();
        cfg.norm_levels = 3;
        let mut rng = RngStream::new(cfg.seed, 0);
        let levels = norm_quantizer_levels(&cfg, &mut rng);
        assert_eq!(levels.len(), 3);
        assert!(levels.windows(2).all(|w| w[0] < w[1]));
        let mean = mean_channel_norm(2, 1.0);
        assert!(levels[0] < mean && mean < levels[2]);
    }

    #[test]
    fn symbol_encoding_roundtrips() {
        let mut cb = basis_codebook();
        cb.norm_levels = vec![0.5, 1.5];
        for s in 0..cb.symbol_count() {
            assert_eq!(cb.symbol_of(cb.decode_symbol(s)), s);
        }
    }

    mod props {
        use proptest::prelude::*;

        use super::*;

        proptest! {
            // The chosen direction depends only on where the channel points,
            // not on how long it is (noiseless quantization: the score
            // |⟨c, s·h⟩| = s·|⟨c, h⟩| preserves the argmax for any s > 0).
            #[test]
            fn quantized_direction_ignores_channel_scale(
                seed in 0u64..1_000,
                scale in 1e-3..1e3f64,
            ) {
                let cfg = desk_system();
                let cb = build_fine_codebook(&cfg, &mut RngStream::new(cfg.seed, 0));
                let mut rng = RngStream::new(seed, 9);
                let h = sample_cn(2, 1.0, &mut rng).unwrap();
                let base = quantize(&h, 0.0, &cb, &mut rng).unwrap().direction_id;
                let scaled = quantize(&h.scale_re(scale), 0.0, &cb, &mut rng)
                    .unwrap()
                    .direction_id;
                prop_assert_eq!(base, scaled);
            }
        }
    }
}
