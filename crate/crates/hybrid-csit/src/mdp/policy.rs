//! Stationary policies: extraction from occupancies, derandomization, and
//! exact long-run evaluation of the induced Markov chain.
//!
//! Evaluation is the module's oracle: it finds the chain's recurrent classes
//! (Tarjan), solves each class's stationary distribution by dense linear
//! algebra, and reports exact per-user rates. A chain with several recurrent
//! classes has no single long-run value, so evaluation from nowhere reports
//! all of them as an error, while evaluation from an initial distribution
//! resolves the ambiguity through exact absorption probabilities.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{solve_real, RngStream};

use super::lp::StateActionFrequency;
use super::model::MdpModel;

/// Chain evaluation builds dense per-class systems; refuse beyond this many
/// states.
pub const DENSE_EVAL_LIMIT: usize = 2048;

/// A per-state distribution over actions.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryPolicy {
    /// `rows[s][a]` = probability of action `a` in state `s`.
    pub rows: Vec<Vec<f64>>,
    /// True when every row is a point mass.
    pub deterministic: bool,
}

impl StationaryPolicy {
    /// Deterministic policy from one action index per state.
    pub fn pure(actions: &[usize], num_actions: usize) -> Self {
        let rows = actions
            .iter()
            .map(|&a| {
                debug_assert!(a < num_actions);
                let mut row = vec![0.0; num_actions];
                row[a] = 1.0;
                row
            })
            .collect();
        Self { rows, deterministic: true }
    }

    pub fn num_states(&self) -> usize {
        self.rows.len()
    }

    /// The most likely action (the action itself for deterministic rows);
    /// ties break to the lowest index.
    pub fn action_at(&self, state: usize) -> usize {
        let row = &self.rows[state];
        let mut best = 0;
        for (a, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = a;
            }
        }
        best
    }

    pub fn sample_action(&self, state: usize, rng: &mut RngStream) -> usize {
        let row = &self.rows[state];
        let mut u: f64 = rng.gen();
        for (a, &p) in row.iter().enumerate() {
            if u < p {
                return a;
            }
            u -= p;
        }
        row.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        for (s, row) in self.rows.iter().enumerate() {
            if row.iter().any(|&p| !(0.0..=1.0 + 1e-9).contains(&p)) {
                return Err(Error::InvalidInput(format!(
                    "policy row {s} has entries outside [0, 1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "policy row {s} sums to {sum}, not 1"
                )));
            }
        }
        Ok(())
    }
}

/// The Bayesian readout of an occupancy point: rows proportional to
/// `x(s,·)`; states with no mass get a point mass on action 0 (the paper
/// leaves the choice arbitrary, ours is the lowest index).
pub fn extract_policy(x: &StateActionFrequency) -> StationaryPolicy {
    let mut deterministic = true;
    let rows: Vec<Vec<f64>> = x
        .x
        .chunks(x.num_actions)
        .map(|chunk| {
            let clamped: Vec<f64> = chunk.iter().map(|&v| v.max(0.0)).collect();
            let total: f64 = clamped.iter().sum();
            let row = if total > 0.0 {
                clamped.iter().map(|&v| v / total).collect()
            } else {
                let mut row = vec![0.0; x.num_actions];
                row[0] = 1.0;
                row
            };
            if row.iter().filter(|&&p| p > 0.0).count() > 1 {
                deterministic = false;
            }
            row
        })
        .collect();
    StationaryPolicy { rows, deterministic }
}

/// Sparse transition rows of the chain a policy induces on the model.
fn policy_chain(policy: &StationaryPolicy, model: &MdpModel) -> Result<Vec<Vec<(usize, f64)>>> {
    let n = model.dense_state_count(DENSE_EVAL_LIMIT)?;
    if policy.num_states() != n {
        return Err(Error::InvalidInput(format!(
            "policy covers {} states, model has {n}",
            policy.num_states()
        )));
    }
    policy.validate()?;
    let mut chain = Vec::with_capacity(n);
    for s in 0..n {
        let fields = model.space.decode(s as u64);
        let mut row: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
        for (aidx, action) in model.actions.iter().enumerate() {
            let pa = policy.rows[s][aidx];
            if pa > 0.0 {
                for (s2, p) in model.successors_fields(&fields, action) {
                    *row.entry(s2 as usize).or_insert(0.0) += pa * p;
                }
            }
        }
        chain.push(row.into_iter().collect());
    }
    Ok(chain)
}

/// Strongly connected components of the chain's support graph, iterative
/// Tarjan (no recursion, states can number in the thousands).
fn strongly_connected_components(chain: &[Vec<(usize, f64)>]) -> Vec<Vec<usize>> {
    let n = chain.len();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack: Vec<usize> = Vec::new();
    let mut next_index = 0usize;
    let mut comps: Vec<Vec<usize>> = Vec::new();
    let mut call: Vec<(usize, usize)> = Vec::new();
    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        call.push((root, 0));
        while let Some(frame) = call.last_mut() {
            let (v, ci) = (frame.0, frame.1);
            if ci == 0 {
                index[v] = next_index;
                low[v] = next_index;
                next_index += 1;
                stack.push(v);
                on_stack[v] = true;
            }
            if ci < chain[v].len() {
                frame.1 += 1;
                let w = chain[v][ci].0;
                if index[w] == usize::MAX {
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(parent) = call.last() {
                    let p = parent.0;
                    low[p] = low[p].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().expect("Tarjan stack underflow");
                        on_stack[w] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    comp.sort_unstable();
                    comps.push(comp);
                }
            }
        }
    }
    comps
}

/// Recurrent classes (components with no outgoing edge), sorted by their
/// smallest state for a deterministic report order.
fn recurrent_classes(chain: &[Vec<(usize, f64)>]) -> Vec<Vec<usize>> {
    let comps = strongly_connected_components(chain);
    let mut comp_of = vec![usize::MAX; chain.len()];
    for (k, comp) in comps.iter().enumerate() {
        for &s in comp {
            comp_of[s] = k;
        }
    }
    let mut recurrent: Vec<Vec<usize>> = comps
        .iter()
        .enumerate()
        .filter(|(k, comp)| {
            comp.iter()
                .all(|&s| chain[s].iter().all(|&(s2, _)| comp_of[s2] == *k))
        })
        .map(|(_, comp)| comp.clone())
        .collect();
    recurrent.sort_by_key(|comp| comp[0]);
    recurrent
}

/// Stationary distribution of the chain restricted to one closed class:
/// solves `μᵀP = μᵀ, Σμ = 1` with the last balance equation replaced by the
/// normalization.
fn class_stationary(chain: &[Vec<(usize, f64)>], class: &[usize]) -> Result<Vec<f64>> {
    let k = class.len();
    let mut local = std::collections::HashMap::with_capacity(k);
    for (li, &s) in class.iter().enumerate() {
        local.insert(s, li);
    }
    let mut a = vec![0.0f64; k * k];
    for (li, &s) in class.iter().enumerate() {
        a[li * k + li] -= 1.0;
        for &(s2, p) in &chain[s] {
            let lj = *local
                .get(&s2)
                .expect("closed class has an outgoing edge");
            // Column li of μᵀ(P − I) → row lj of the transposed system.
            a[lj * k + li] += p;
        }
    }
    // a currently holds Pᵀ − I in row-major form; overwrite the last row
    // with the normalization.
    for slot in a[(k - 1) * k..].iter_mut() {
        *slot = 1.0;
    }
    let mut b = vec![0.0f64; k];
    b[k - 1] = 1.0;
    let mu = solve_real(a, b)?;
    let clamped: Vec<f64> = mu.iter().map(|&v| v.max(0.0)).collect();
    let total: f64 = clamped.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Solver("stationary distribution collapsed to zero".into()));
    }
    Ok(clamped.iter().map(|&v| v / total).collect())
}

/// Per-user long-run rates earned inside one closed class.
fn class_rates(
    policy: &StationaryPolicy,
    model: &MdpModel,
    class: &[usize],
    mu: &[f64],
) -> Vec<f64> {
    let mut rates = vec![0.0f64; model.space.num_users()];
    for (li, &s) in class.iter().enumerate() {
        let fields = model.space.decode(s as u64);
        for (aidx, action) in model.actions.iter().enumerate() {
            let pa = policy.rows[s][aidx];
            if pa > 0.0 {
                let pair = model.action_rates(&fields, action);
                rates[action.i] += mu[li] * pa * pair.rate_i;
                rates[action.j] += mu[li] * pa * pair.rate_j;
            }
        }
    }
    rates
}

/// Exact long-run per-user rates of the policy's chain. A chain with one
/// recurrent class has an initial-state-independent answer; otherwise every
/// class's rate vector is reported through [`Error::ReducibleChain`].
pub fn evaluate_policy(policy: &StationaryPolicy, model: &MdpModel) -> Result<Vec<f64>> {
    let chain = policy_chain(policy, model)?;
    let classes = recurrent_classes(&chain);
    let mut per_class = Vec::with_capacity(classes.len());
    for class in &classes {
        let mu = class_stationary(&chain, class)?;
        per_class.push(class_rates(policy, model, class, &mu));
    }
    match per_class.len() {
        1 => Ok(per_class.pop().expect("one class")),
        _ => Err(Error::ReducibleChain { per_class_rates: per_class }),
    }
}

/// Exact long-run per-user rates starting from an initial distribution:
/// absorption probabilities into each recurrent class (a linear solve on the
/// transient states) weight the per-class rates.
pub fn evaluate_policy_from(
    policy: &StationaryPolicy,
    model: &MdpModel,
    init: &[f64],
) -> Result<Vec<f64>> {
    let chain = policy_chain(policy, model)?;
    let n = chain.len();
    if init.len() != n {
        return Err(Error::InvalidInput(format!(
            "initial distribution has {} entries for {n} states",
            init.len()
        )));
    }
    let total_init: f64 = init.iter().map(|&v| v.max(0.0)).sum();
    if !(total_init > 0.0) {
        return Err(Error::InvalidInput("initial distribution has no mass".into()));
    }
    let init: Vec<f64> = init.iter().map(|&v| v.max(0.0) / total_init).collect();

    let classes = recurrent_classes(&chain);
    let mut class_of = vec![usize::MAX; n];
    for (k, class) in classes.iter().enumerate() {
        for &s in class {
            class_of[s] = k;
        }
    }
    let transient: Vec<usize> = (0..n).filter(|&s| class_of[s] == usize::MAX).collect();
    let mut absorb = vec![vec![0.0f64; classes.len()]; transient.len()];
    if !transient.is_empty() {
        let t = transient.len();
        let mut local = std::collections::HashMap::with_capacity(t);
        for (li, &s) in transient.iter().enumerate() {
            local.insert(s, li);
        }
        // (I − P_TT) h_k = P_T→class_k · 1, one solve per class.
        let mut a = vec![0.0f64; t * t];
        for (li, &s) in transient.iter().enumerate() {
            a[li * t + li] += 1.0;
            for &(s2, p) in &chain[s] {
                if let Some(&lj) = local.get(&s2) {
                    a[li * t + lj] -= p;
                }
            }
        }
        for (k, _) in classes.iter().enumerate() {
            let mut b = vec![0.0f64; t];
            for (li, &s) in transient.iter().enumerate() {
                b[li] = chain[s]
                    .iter()
                    .filter(|&&(s2, _)| class_of[s2] == k)
                    .map(|&(_, p)| p)
                    .sum();
            }
            let h = solve_real(a.clone(), b)?;
            for (li, &v) in h.iter().enumerate() {
                absorb[li][k] = v.clamp(0.0, 1.0);
            }
        }
    }

    let mut weights = vec![0.0f64; classes.len()];
    for (s, &mass) in init.iter().enumerate() {
        if mass == 0.0 {
            continue;
        }
        if class_of[s] != usize::MAX {
            weights[class_of[s]] += mass;
        } else {
            let li = transient.iter().position(|&t| t == s).expect("transient index");
            for (k, w) in weights.iter_mut().enumerate() {
                *w += mass * absorb[li][k];
            }
        }
    }
    let total_w: f64 = weights.iter().sum();
    debug_assert!((total_w - 1.0).abs() < 1e-6, "absorption weights sum to {total_w}");

    let mut rates = vec![0.0f64; model.space.num_users()];
    for (k, class) in classes.iter().enumerate() {
        if weights[k] == 0.0 {
            continue;
        }
        let mu = class_stationary(&chain, class)?;
        let vals = class_rates(policy, model, class, &mu);
        for (slot, v) in rates.iter_mut().zip(&vals) {
            *slot += weights[k] / total_w * v;
        }
    }
    Ok(rates)
}

/// Rounds an optimal occupancy into a deterministic policy without giving up
/// objective value: argmax per supported state, action 0 elsewhere, verified
/// by exact evaluation from the occupancy's own state marginal. If the
/// argmax choice falls short (possible when a basic solution splits mass
/// across actions of a state), a bounded coordinate search over the
/// supported actions is tried before reporting failure.
pub fn derandomize(
    x: &StateActionFrequency,
    model: &MdpModel,
    q: &[f64],
) -> Result<StationaryPolicy> {
    let n_states = x.num_states();
    let marginal = x.state_marginal();
    let mut actions: Vec<usize> = Vec::with_capacity(n_states);
    let mut ambiguous: Vec<usize> = Vec::new();
    for s in 0..n_states {
        let row = &x.x[s * x.num_actions..(s + 1) * x.num_actions];
        let supported = row.iter().filter(|&&v| v > 0.0).count();
        if supported == 0 {
            actions.push(0);
            continue;
        }
        if supported > 1 {
            ambiguous.push(s);
        }
        let mut best = 0;
        for (a, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = a;
            }
        }
        actions.push(best);
    }

    let objective_of = |actions: &[usize]| -> Result<f64> {
        let policy = StationaryPolicy::pure(actions, x.num_actions);
        let rates = evaluate_policy_from(&policy, model, &marginal)?;
        Ok(q.iter().zip(&rates).map(|(q, r)| q * r).sum())
    };

    let target = x.objective - 1e-6;
    let mut achieved = objective_of(&actions)?;
    if achieved >= target {
        return Ok(StationaryPolicy::pure(&actions, x.num_actions));
    }
    // Coordinate search over the supported actions of ambiguous states.
    for _ in 0..2 {
        for &s in &ambiguous {
            let row = &x.x[s * x.num_actions..(s + 1) * x.num_actions];
            let current = actions[s];
            for (a, &v) in row.iter().enumerate() {
                if v > 0.0 && a != current {
                    let mut trial = actions.clone();
                    trial[s] = a;
                    let value = objective_of(&trial)?;
                    if value > achieved {
                        achieved = value;
                        actions = trial;
                    }
                }
            }
        }
        if achieved >= target {
            return Ok(StationaryPolicy::pure(&actions, x.num_actions));
        }
    }
    Err(Error::DerandomizationFailure { achieved, expected: x.objective })
}

// ── tests ──────────────────────────────────────────────────────────────────
