//! The state-action-frequency linear program and its dense simplex solver.
//!
//! The feasible set is the occupancy polytope: nonnegative frequencies
//! `x(s,a)` that sum to one and balance probability flow at every state. One
//! balance row is linearly dependent (all of them sum to zero), so the last
//! one is dropped before solving. The solver is a two-phase full-tableau
//! simplex — Dantzig entering with a lexicographic leaving rule, which stays
//! finite under the extreme degeneracy of balance systems (almost every
//! right-hand side is zero) — deliberately boring, bit-deterministic, and
//! exact at the vertex, which is what lets a basic optimal point be
//! derandomized into a deterministic policy.

use crate::error::{Error, Result};

use super::model::MdpModel;

/// Dense-tableau cap on `states × actions` columns.
pub const LP_MAX_COLUMNS: usize = 4096;

const EPS_COST: f64 = 1e-9;
const EPS_PIVOT: f64 = 1e-9;
const PHASE1_TOL: f64 = 1e-7;
const MAX_PIVOTS: usize = 200_000;

/// A point of the occupancy polytope, flattened as `state · num_actions +
/// action`, with the objective value the solver reported for it.
#[derive(Debug, Clone)]
pub struct StateActionFrequency {
    pub x: Vec<f64>,
    pub num_actions: usize,
    pub objective: f64,
}

impl StateActionFrequency {
    pub fn num_states(&self) -> usize {
        self.x.len() / self.num_actions
    }

    pub fn value(&self, state: usize, action: usize) -> f64 {
        self.x[state * self.num_actions + action]
    }

    /// Per-state occupancy `Σ_a x(s, a)`.
    pub fn state_marginal(&self) -> Vec<f64> {
        self.x
            .chunks(self.num_actions)
            .map(|row| row.iter().sum())
            .collect()
    }

    /// `(normalization deviation, max balance deviation)` against the
    /// model's kernel — the two polytope residuals.
    pub fn residuals(&self, model: &MdpModel) -> (f64, f64) {
        let n_states = self.num_states();
        let norm_dev = (self.x.iter().sum::<f64>() - 1.0).abs();
        let mut outflow = vec![0.0f64; n_states];
        let mut inflow = vec![0.0f64; n_states];
        for s in 0..n_states {
            let fields = model.space.decode(s as u64);
            for (aidx, action) in model.actions.iter().enumerate() {
                let mass = self.value(s, aidx);
                outflow[s] += mass;
                if mass != 0.0 {
                    for (s2, p) in model.successors_fields(&fields, action) {
                        inflow[s2 as usize] += p * mass;
                    }
                }
            }
        }
        let balance_dev = outflow
            .iter()
            .zip(&inflow)
            .map(|(o, i)| (o - i).abs())
            .fold(0.0, f64::max);
        (norm_dev, balance_dev)
    }
}

/// Long-run per-user rates induced by an occupancy point (the `R*` readout).
pub fn lp_rates(x: &StateActionFrequency, model: &MdpModel) -> Vec<f64> {
    let mut rates = vec![0.0f64; model.space.num_users()];
    for s in 0..x.num_states() {
        let fields = model.space.decode(s as u64);
        for (aidx, action) in model.actions.iter().enumerate() {
            let mass = x.value(s, aidx);
            if mass != 0.0 {
                let pair = model.action_rates(&fields, action);
                rates[action.i] += mass * pair.rate_i;
                rates[action.j] += mass * pair.rate_j;
            }
        }
    }
    rates
}

/// Maximizes `Σ q_n R_n(s,a) x(s,a)` over the occupancy polytope.
pub fn solve_saf_lp(q: &[f64], model: &MdpModel) -> Result<StateActionFrequency> {
    if q.len() != model.space.num_users() {
        return Err(Error::InvalidInput(format!(
            "queue vector has {} entries for {} users",
            q.len(),
            model.space.num_users()
        )));
    }
    if q.iter().any(|&v| !v.is_finite() || v < 0.0) {
        return Err(Error::InvalidInput(
            "queue weights must be finite and nonnegative".into(),
        ));
    }
    let (a, b, n_states, n_actions) = polytope_system(model)?;
    let mut c = vec![0.0f64; n_states * n_actions];
    for s in 0..n_states {
        let fields = model.space.decode(s as u64);
        for (aidx, action) in model.actions.iter().enumerate() {
            c[s * n_actions + aidx] = model.q_weighted_reward(q, &fields, action);
        }
    }
    let outcome = simplex(&a, &b, Some(&c))?;
    let x: Vec<f64> = outcome
        .x
        .iter()
        .map(|&v| if v.abs() < 1e-12 { 0.0 } else { v })
        .collect();
    let objective = c.iter().zip(&x).map(|(c, x)| c * x).sum();
    Ok(StateActionFrequency { x, num_actions: n_actions, objective })
}

/// Phase-1 residual of the polytope intersected with `Σ R_n(s,a)·x =
/// target_n` for every user: ≈ 0 exactly when the target rate vector is
/// achievable, which certifies membership in the rate region.
pub fn polytope_feasibility(model: &MdpModel, target: &[f64]) -> Result<f64> {
    if target.len() != model.space.num_users() {
        return Err(Error::InvalidInput(format!(
            "target has {} entries for {} users",
            target.len(),
            model.space.num_users()
        )));
    }
    if target.iter().any(|&v| !v.is_finite() || v < 0.0) {
        return Err(Error::InvalidInput(
            "target rates must be finite and nonnegative".into(),
        ));
    }
    let (mut a, mut b, n_states, n_actions) = polytope_system(model)?;
    let num_users = model.space.num_users();
    let mut rate_rows = vec![vec![0.0f64; n_states * n_actions]; num_users];
    for s in 0..n_states {
        let fields = model.space.decode(s as u64);
        for (aidx, action) in model.actions.iter().enumerate() {
            let pair = model.action_rates(&fields, action);
            let col = s * n_actions + aidx;
            rate_rows[action.i][col] += pair.rate_i;
            rate_rows[action.j][col] += pair.rate_j;
        }
    }
    a.extend(rate_rows);
    b.extend_from_slice(target);
    Ok(simplex(&a, &b, None)?.phase1_residual)
}

/// Equality system of the occupancy polytope: one balance row per state with
/// the last (redundant) one dropped, then the normalization row.
fn polytope_system(model: &MdpModel) -> Result<(Vec<Vec<f64>>, Vec<f64>, usize, usize)> {
    let n_actions = model.num_actions();
    let total = model.space.total_states() as u128 * n_actions as u128;
    if total > LP_MAX_COLUMNS as u128 {
        return Err(Error::LpTooLarge {
            columns: total.min(usize::MAX as u128) as usize,
            limit: LP_MAX_COLUMNS,
        });
    }
    let n_states = model.space.total_states() as usize;
    let cols = n_states * n_actions;
    let mut balance = vec![vec![0.0f64; cols]; n_states];
    for s in 0..n_states {
        let fields = model.space.decode(s as u64);
        for (aidx, action) in model.actions.iter().enumerate() {
            let col = s * n_actions + aidx;
            balance[s][col] += 1.0;
            for (s2, p) in model.successors_fields(&fields, action) {
                balance[s2 as usize][col] -= p;
            }
        }
    }
    balance.truncate(n_states - 1);
    let mut b = vec![0.0f64; n_states - 1];
    balance.push(vec![1.0; cols]);
    b.push(1.0);
    Ok((balance, b, n_states, n_actions))
}

#[derive(Debug)]
struct SimplexOutcome {
    x: Vec<f64>,
    phase1_residual: f64,
}

/// Two-phase dense simplex for `max c·x` s.t. `Ax = b, x ≥ 0` with `b ≥ 0`.
/// With `c = None` only phase 1 runs (feasibility). Entering columns follow
/// Dantzig's rule (most negative reduced cost, ties to the lowest index);
/// leaving rows follow the lexicographic rule over the right-hand side and
/// the artificial block (the running basis inverse), so degenerate pivots
/// cannot cycle and every choice is deterministic.
fn simplex(a: &[Vec<f64>], b: &[f64], c: Option<&[f64]>) -> Result<SimplexOutcome> {
    let m = a.len();
    if m == 0 || m != b.len() {
        return Err(Error::Solver("empty or inconsistent system".into()));
    }
    let n = a[0].len();
    let width = n + m + 1;
    let mut tab: Vec<Vec<f64>> = Vec::with_capacity(m);
    for (i, row) in a.iter().enumerate() {
        if row.len() != n {
            return Err(Error::Solver("ragged constraint matrix".into()));
        }
        if b[i] < 0.0 {
            return Err(Error::Solver(format!("negative right-hand side at row {i}")));
        }
        let mut t = vec![0.0f64; width];
        t[..n].copy_from_slice(row);
        t[n + i] = 1.0;
        t[width - 1] = b[i];
        tab.push(t);
    }
    let mut basis: Vec<usize> = (n..n + m).collect();

    // Phase 1: minimize the artificial total. The cost row starts as the
    // reduced form of that objective (artificials are basic, so subtract
    // every row).
    let mut cost = vec![0.0f64; width];
    for slot in cost.iter_mut().take(n + m).skip(n) {
        *slot = 1.0;
    }
    for row in &tab {
        for (slot, &v) in cost.iter_mut().zip(row) {
            *slot -= v;
        }
    }
    pivot_until_optimal(&mut tab, &mut basis, &mut cost, n, n + m, "phase 1")?;
    let phase1_residual = (-cost[width - 1]).max(0.0);

    if phase1_residual <= PHASE1_TOL {
        // Drive leftover artificials out of the basis; a row where no
        // original column can pivot is redundant (zero row) and is dropped.
        let mut keep = vec![true; tab.len()];
        for i in 0..tab.len() {
            if basis[i] >= n {
                match (0..n).find(|&j| tab[i][j].abs() > EPS_PIVOT) {
                    Some(j) => pivot(&mut tab, &mut basis, &mut cost, i, j),
                    None => keep[i] = false,
                }
            }
        }
        let mut idx = 0;
        tab.retain(|_| {
            idx += 1;
            keep[idx - 1]
        });
        let mut idx = 0;
        basis.retain(|_| {
            idx += 1;
            keep[idx - 1]
        });
    }

    if let Some(c) = c {
        if phase1_residual > PHASE1_TOL {
            return Err(Error::Solver(format!(
                "infeasible constraint system: phase-1 residual {phase1_residual:.3e}"
            )));
        }
        // Phase 2: minimize −c over the feasible basis from phase 1.
        cost = vec![0.0f64; width];
        for (slot, &v) in cost.iter_mut().zip(c) {
            *slot = -v;
        }
        for (i, row) in tab.iter().enumerate() {
            let cb = cost[basis[i]];
            if cb != 0.0 {
                for (slot, &v) in cost.iter_mut().zip(row) {
                    *slot -= cb * v;
                }
            }
        }
        pivot_until_optimal(&mut tab, &mut basis, &mut cost, n, n + m, "phase 2")?;
    }

    let mut x = vec![0.0f64; n];
    for (i, &var) in basis.iter().enumerate() {
        if var < n {
            x[var] = tab[i][width - 1].max(0.0);
        }
    }
    Ok(SimplexOutcome { x, phase1_residual })
}

/// Pivots until no entering column improves the cost row. Artificial
/// columns never re-enter (`entering_limit` = original columns); `lex_hi`
/// marks the end of the artificial block used by the lexicographic tie-break.
fn pivot_until_optimal(
    tab: &mut [Vec<f64>],
    basis: &mut [usize],
    cost: &mut [f64],
    entering_limit: usize,
    lex_hi: usize,
    phase: &str,
) -> Result<()> {
    let width = cost.len();
    for _ in 0..MAX_PIVOTS {
        // Dantzig entering: most negative reduced cost, ties to the lowest
        // column index.
        let mut col = None;
        let mut most_negative = -EPS_COST;
        for (j, &cj) in cost.iter().enumerate().take(entering_limit) {
            if cj < most_negative {
                most_negative = cj;
                col = Some(j);
            }
        }
        let Some(col) = col else {
            return Ok(());
        };
        let mut leave: Option<usize> = None;
        for (i, row) in tab.iter().enumerate() {
            if row[col] > EPS_PIVOT {
                let better = match leave {
                    None => true,
                    Some(best) => lex_less(row, &tab[best], col, entering_limit, lex_hi, width),
                };
                if better {
                    leave = Some(i);
                }
            }
        }
        let Some(row) = leave else {
            return Err(Error::Solver(format!(
                "{phase}: unbounded direction entering column {col}"
            )));
        };
        pivot(tab, basis, cost, row, col);
        // Degenerate pivots leave right-hand sides that should be exactly
        // zero; snap the round-off so later ratio tests stay clean.
        for r in tab.iter_mut() {
            if r[width - 1] < 0.0 && r[width - 1] > -1e-11 {
                r[width - 1] = 0.0;
            }
        }
    }
    Err(Error::Solver(format!(
        "{phase}: pivot limit {MAX_PIVOTS} exceeded (basis size {})",
        basis.len()
    )))
}

/// Lexicographic comparison of two candidate leaving rows: the usual ratio
/// test on the right-hand side first, then the artificial block scaled by
/// the pivot coefficient. Exact ties keep the earlier row.
fn lex_less(
    row: &[f64],
    best: &[f64],
    col: usize,
    lex_lo: usize,
    lex_hi: usize,
    width: usize,
) -> bool {
    let ci = row[col];
    let cb = best[col];
    let a = row[width - 1] / ci;
    let b = best[width - 1] / cb;
    if a < b - 1e-12 {
        return true;
    }
    if a > b + 1e-12 {
        return false;
    }
    for k in lex_lo..lex_hi {
        let a = row[k] / ci;
        let b = best[k] / cb;
        if a < b - 1e-12 {
            return true;
        }
        if a > b + 1e-12 {
            return false;
        }
    }
    false
}

fn pivot(tab: &mut [Vec<f64>], basis: &mut [usize], cost: &mut [f64], row: usize, col: usize) {
    let p = tab[row][col];
    debug_assert!(p.abs() > 0.0);
    for v in tab[row].iter_mut() {
        *v /= p;
    }
    let pivot_row = tab[row].clone();
    for (i, other) in tab.iter_mut().enumerate() {
        if i != row && other[col] != 0.0 {
            let factor = other[col];
            for (slot, &v) in other.iter_mut().zip(&pivot_row) {
                *slot -= factor * v;
            }
        }
    }
    if cost[col] != 0.0 {
        let factor = cost[col];
        for (slot, &v) in cost.iter_mut().zip(&pivot_row) {
            *slot -= factor * v;
        }
    }
    basis[row] = col;
}

// ── tests ──────────────────────────────────────────────────────────────────
