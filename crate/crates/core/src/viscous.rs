//! User authority within a category.
//!
//! The viscous score of `u` sums `alpha^d` over every user whose delegation
//! chain reaches `u` after `d` hops (`u` itself contributes `alpha^0 = 1`).
//! Delegation graphs are functional (out-degree at most one), so they split
//! into cycles with in-trees hanging off them. Trees are folded bottom-up; each
//! cycle is then closed with a sliding sum over its nodes. Every contributor is
//! counted once, at its shortest distance.
//!
//! [`compute_katz_scores`] is the walk-counting alternative: it solves
//! `v = 1 + alpha * A^T v` by Gauss-Seidel sweeps. It agrees with the exact
//! scores on acyclic graphs and inflates them on cycles, where every lap of
//! the cycle is counted again.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Category, DelegationGraph, UserId, VoteGraph};

/// Marks "no delegate" in index-level successor arrays.
pub const NO_DELEGATE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error("alpha must lie in (0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("alpha = 1 requires an acyclic delegation graph")]
    CycleAtAlphaOne,
    #[error("walk-counting scores require alpha < 1")]
    KatzAlphaOne,
    #[error("delegation graph contains a cycle")]
    CycleDetected,
    #[error("no convergence after {iterations} sweeps (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
}

/// Damping factor: the share of voting power passed along one delegation.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Alpha(f64);

impl Alpha {
    pub const DEFAULT: Alpha = Alpha(0.75);

    pub fn new(value: f64) -> Result<Self, ScoreError> {
        if value.is_finite() && value > 0.0 && value <= 1.0 {
            Ok(Alpha(value))
        } else {
            Err(ScoreError::InvalidAlpha(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_one(self) -> bool {
        self.0 == 1.0
    }
}

impl Default for Alpha {
    fn default() -> Self {
        Alpha::DEFAULT
    }
}

impl TryFrom<f64> for Alpha {
    type Error = ScoreError;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Alpha::new(value)
    }
}

impl From<Alpha> for f64 {
    fn from(a: Alpha) -> f64 {
        a.0
    }
}

impl fmt::Display for Alpha {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Which scoring semantics a recompute uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    /// Shortest-distance sum over the cycle/tree decomposition.
    #[default]
    Exact,
    /// Walk-counting Katz scores by Gauss-Seidel iteration.
    Katz,
}

impl FromStr for Engine {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exact" => Ok(Engine::Exact),
            "katz" => Ok(Engine::Katz),
            other => Err(format!("unknown engine {other:?} (expected exact or katz)")),
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::Exact => "exact",
            Engine::Katz => "katz",
        })
    }
}

/// Stopping rule for [`compute_katz_scores`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KatzParams {
    pub tol: f64,
    pub max_iters: usize,
}

impl KatzParams {
    pub const DEFAULT_TOL: f64 = 1e-10;

    /// `tol = 1e-10`; `max_iters = 10 * ceil(ln tol / ln alpha)`, capped at 10,000.
    pub fn for_alpha(alpha: Alpha) -> Self {
        Self::with_tol(alpha, Self::DEFAULT_TOL)
    }

    pub fn with_tol(alpha: Alpha, tol: f64) -> Self {
        let a = alpha.value();
        let max_iters = if a >= 1.0 {
            10_000
        } else {
            let sweeps = (tol.ln() / a.ln()).ceil();
            (10.0 * sweeps).clamp(1.0, 10_000.0) as usize
        };
        KatzParams { tol, max_iters }
    }
}

/// Result of peeling in-trees off a functional graph.
struct Peeled {
    /// Tree nodes in an order where every node follows all of its delegators.
    order: Vec<u32>,
    /// Nodes left over after peeling; exactly the cycle members.
    on_cycle: Vec<bool>,
}

/// Kahn-style peel: repeatedly removes nodes nobody (remaining) delegates to.
/// `visit(w)` runs once per tree node, after all of `w`'s delegators.
fn peel(next: &[u32], mut visit: impl FnMut(u32)) -> Peeled {
    let n = next.len();
    let mut indegree = vec![0u32; n];
    for &t in next {
        if t != NO_DELEGATE {
            indegree[t as usize] += 1;
        }
    }
    let mut stack: Vec<u32> = (0..n as u32)
        .filter(|&i| indegree[i as usize] == 0)
        .collect();
    let mut order = Vec::with_capacity(n);
    while let Some(w) = stack.pop() {
        visit(w);
        order.push(w);
        let t = next[w as usize];
        if t != NO_DELEGATE {
            let d = &mut indegree[t as usize];
            *d -= 1;
            if *d == 0 {
                stack.push(t);
            }
        }
    }
    let on_cycle = indegree.iter().map(|&d| d > 0).collect();
    Peeled { order, on_cycle }
}

/// Collects each cycle of the functional graph as a list of nodes in
/// delegation order (`cycle[i]` delegates `cycle[i + 1]`).
fn cycles(next: &[u32], on_cycle: &[bool]) -> Vec<Vec<u32>> {
    let mut seen = vec![false; next.len()];
    let mut out = Vec::new();
    for start in 0..next.len() {
        if !on_cycle[start] || seen[start] {
            continue;
        }
        let mut cycle = Vec::new();
        let mut node = start as u32;
        while !seen[node as usize] {
            seen[node as usize] = true;
            cycle.push(node);
            node = next[node as usize];
        }
        out.push(cycle);
    }
    out
}

/// Exact viscous scores over a successor array (`NO_DELEGATE` = no arc).
pub fn viscous_scores_indexed(next: &[u32], alpha: Alpha) -> Result<Vec<f64>, ScoreError> {
    let a = alpha.value();
    let n = next.len();
    // `inflow[u]` = alpha * Σ v(w) over peeled delegators w of u.
    let mut inflow = vec![0.0f64; n];
    let mut scores = vec![0.0f64; n];
    let peeled = peel(next, |w| {
        let w = w as usize;
        scores[w] = 1.0 + inflow[w];
        let t = next[w];
        if t != NO_DELEGATE {
            inflow[t as usize] += a * scores[w];
        }
    });
    if peeled.order.len() == n {
        return Ok(scores);
    }
    if alpha.is_one() {
        return Err(ScoreError::CycleAtAlphaOne);
    }

    let lap = |len: usize| a.powi(len as i32);
    for cycle in cycles(next, &peeled.on_cycle) {
        let len = cycle.len();
        // base[i]: cycle node i plus everything hanging off it in its in-tree.
        let base: Vec<f64> = cycle.iter().map(|&c| 1.0 + inflow[c as usize]).collect();
        // First node: sum upstream contributions directly, nearest first.
        let mut sum = 0.0;
        let mut weight = 1.0;
        for j in 0..len {
            sum += weight * base[(len - j) % len];
            weight *= a;
        }
        scores[cycle[0] as usize] = sum;
        // S_i = alpha * S_{i-1} + (1 - alpha^L) * base_i
        let keep = 1.0 - lap(len);
        for i in 1..len {
            sum = a * sum + keep * base[i];
            scores[cycle[i] as usize] = sum;
        }
    }
    Ok(scores)
}

/// Walk-counting scores `v = 1 + alpha * A^T v` by Gauss-Seidel sweeps.
///
/// Sweeps visit tree nodes delegators-first, then cycles in delegation order,
/// so acyclic graphs settle after a single sweep.
pub fn katz_scores_indexed(
    next: &[u32],
    alpha: Alpha,
    params: KatzParams,
) -> Result<Vec<f64>, ScoreError> {
    if alpha.is_one() {
        return Err(ScoreError::KatzAlphaOne);
    }
    let a = alpha.value();
    let n = next.len();

    // Reverse adjacency in CSR form: delegators of u are preds[start[u]..start[u+1]].
    let mut start = vec![0usize; n + 1];
    for &t in next {
        if t != NO_DELEGATE {
            start[t as usize + 1] += 1;
        }
    }
    for i in 0..n {
        start[i + 1] += start[i];
    }
    let mut fill = start.clone();
    let mut preds = vec![0u32; start[n]];
    for (w, &t) in next.iter().enumerate() {
        if t != NO_DELEGATE {
            preds[fill[t as usize]] = w as u32;
            fill[t as usize] += 1;
        }
    }

    let peeled = peel(next, |_| {});
    let mut order = peeled.order;
    for cycle in cycles(next, &peeled.on_cycle) {
        order.extend(cycle);
    }

    let update = |v: &[f64], u: usize| -> f64 {
        1.0 + a * preds[start[u]..start[u + 1]]
            .iter()
            .map(|&w| v[w as usize])
            .sum::<f64>()
    };

    let mut v = vec![1.0f64; n];
    let mut residual = f64::INFINITY;
    for _ in 0..params.max_iters {
        for &u in &order {
            v[u as usize] = update(&v, u as usize);
        }
        residual = (0..n)
            .map(|u| (v[u] - update(&v, u)).abs())
            .fold(0.0, f64::max);
        if residual < params.tol {
            return Ok(v);
        }
    }
    Err(ScoreError::NoConvergence {
        iterations: params.max_iters,
        residual,
    })
}

/// Number of users whose delegation chain reaches each node, itself included.
pub fn tree_sizes_indexed(next: &[u32]) -> Result<Vec<u64>, ScoreError> {
    let mut sizes = vec![0u64; next.len()];
    let mut inflow = vec![0u64; next.len()];
    let peeled = peel(next, |w| {
        let w = w as usize;
        sizes[w] = 1 + inflow[w];
        if next[w] != NO_DELEGATE {
            inflow[next[w] as usize] += sizes[w];
        }
    });
    if peeled.order.len() != next.len() {
        return Err(ScoreError::CycleDetected);
    }
    Ok(sizes)
}

/// Dense numbering of the users in a domain plus every delegation endpoint.
pub struct UserIndex<'a> {
    users: Vec<&'a UserId>,
    position: HashMap<&'a UserId, u32>,
}

impl<'a> UserIndex<'a> {
    pub fn build(
        d: &'a DelegationGraph,
        domain: impl IntoIterator<Item = &'a UserId>,
    ) -> UserIndex<'a> {
        let mut index = UserIndex {
            users: Vec::new(),
            position: HashMap::new(),
        };
        for u in domain {
            index.intern(u);
        }
        for (from, to) in d.arcs() {
            index.intern(from);
            index.intern(to);
        }
        index
    }

    fn intern(&mut self, u: &'a UserId) -> u32 {
        if let Some(&i) = self.position.get(u) {
            return i;
        }
        let i = self.users.len() as u32;
        self.users.push(u);
        self.position.insert(u, i);
        i
    }

    /// Successor array of `d` under this numbering.
    pub fn successors(&self, d: &DelegationGraph) -> Vec<u32> {
        let mut next = vec![NO_DELEGATE; self.users.len()];
        for (from, to) in d.arcs() {
            next[self.position[from] as usize] = self.position[to];
        }
        next
    }

    pub fn users(&self) -> &[&'a UserId] {
        &self.users
    }

    pub fn position(&self, u: &UserId) -> Option<u32> {
        self.position.get(u).copied()
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    fn label<T: Copy>(&self, values: &[T]) -> HashMap<UserId, T> {
        self.users
            .iter()
            .zip(values)
            .map(|(u, &x)| ((*u).clone(), x))
            .collect()
    }
}

/// Viscous score of every user in `domain` and every delegation endpoint.
pub fn compute_viscous_scores(
    d: &DelegationGraph,
    alpha: Alpha,
    domain: &BTreeSet<UserId>,
) -> Result<HashMap<UserId, f64>, ScoreError> {
    let index = UserIndex::build(d, domain);
    let scores = viscous_scores_indexed(&index.successors(d), alpha)?;
    Ok(index.label(&scores))
}

/// Walk-counting Katz scores over the same user set as [`compute_viscous_scores`].
pub fn compute_katz_scores(
    d: &DelegationGraph,
    alpha: Alpha,
    domain: &BTreeSet<UserId>,
    tol: f64,
    max_iters: usize,
) -> Result<HashMap<UserId, f64>, ScoreError> {
    let index = UserIndex::build(d, domain);
    let scores = katz_scores_indexed(&index.successors(d), alpha, KatzParams { tol, max_iters })?;
    Ok(index.label(&scores))
}

pub fn liquid_tree_size(
    d: &DelegationGraph,
    domain: &BTreeSet<UserId>,
) -> Result<HashMap<UserId, u64>, ScoreError> {
    let index = UserIndex::build(d, domain);
    let sizes = tree_sizes_indexed(&index.successors(d))?;
    Ok(index.label(&sizes))
}

/// Share of active users with a strictly lower score, scaled to `[0, 100)`.
/// Only active users are ranked; active users without a score are skipped.
pub fn percentile_ranks(
    scores: &HashMap<UserId, f64>,
    active: &BTreeSet<UserId>,
) -> HashMap<UserId, f64> {
    let ranked: Vec<(&UserId, f64)> = active
        .iter()
        .filter_map(|u| scores.get(u).map(|&s| (u, s)))
        .collect();
    let mut sorted: Vec<f64> = ranked.iter().map(|&(_, s)| s).collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    ranked
        .into_iter()
        .map(|(u, s)| {
            let below = sorted.partition_point(|&x| x < s);
            (u.clone(), 100.0 * below as f64 / n)
        })
        .collect()
}

/// Total change in song scores caused by `u`'s votes: each voted song loses
/// exactly `v(u)` when they are removed.
pub fn influence(u: &UserId, scores: &HashMap<UserId, f64>, votes: &VoteGraph) -> f64 {
    let n = votes.votes(u).len();
    if n == 0 {
        return 0.0;
    }
    scores.get(u).copied().unwrap_or(0.0) * n as f64
}

/// Scores and percentiles of every scored user in one category.
#[derive(Debug, Clone, PartialEq)]
pub struct UserScoreTable {
    category: Category,
    alpha: Alpha,
    scores: HashMap<UserId, f64>,
    percentiles: HashMap<UserId, f64>,
}

impl UserScoreTable {
    /// Builds the table from raw scores. Active users are ranked among
    /// themselves; a scored user outside the active set (a pure delegation
    /// target) is ranked as if it were one more active user.
    pub fn build(
        category: Category,
        alpha: Alpha,
        scores: HashMap<UserId, f64>,
        active: &BTreeSet<UserId>,
    ) -> Self {
        let mut percentiles = percentile_ranks(&scores, active);
        if percentiles.len() < scores.len() {
            let mut sorted: Vec<f64> = percentiles.keys().map(|u| scores[u]).collect();
            sorted.sort_by(f64::total_cmp);
            let denom = (sorted.len() + 1) as f64;
            for (u, &s) in &scores {
                if !percentiles.contains_key(u) {
                    let below = sorted.partition_point(|&x| x < s);
                    percentiles.insert(u.clone(), 100.0 * below as f64 / denom);
                }
            }
        }
        UserScoreTable {
            category,
            alpha,
            scores,
            percentiles,
        }
    }

    /// Reassembles a table from stored values.
    pub fn from_parts(
        category: Category,
        alpha: Alpha,
        entries: impl IntoIterator<Item = (UserId, f64, f64)>,
    ) -> Self {
        let mut scores = HashMap::new();
        let mut percentiles = HashMap::new();
        for (u, score, perc) in entries {
            scores.insert(u.clone(), score);
            percentiles.insert(u, perc);
        }
        UserScoreTable {
            category,
            alpha,
            scores,
            percentiles,
        }
    }

    pub fn empty(category: Category, alpha: Alpha) -> Self {
        Self::from_parts(category, alpha, [])
    }

    pub fn category(&self) -> &Category {
        &self.category
    }

    pub fn alpha(&self) -> Alpha {
        self.alpha
    }

    pub fn score(&self, u: &UserId) -> Option<f64> {
        self.scores.get(u).copied()
    }

    pub fn percentile(&self, u: &UserId) -> Option<f64> {
        self.percentiles.get(u).copied()
    }

    pub fn scores(&self) -> &HashMap<UserId, f64> {
        &self.scores
    }

    /// `(user, score, percentile)` sorted by user id.
    pub fn entries(&self) -> Vec<(&UserId, f64, f64)> {
        let mut out: Vec<_> = self
            .scores
            .iter()
            .map(|(u, &s)| (u, s, self.percentiles.get(u).copied().unwrap_or(0.0)))
            .collect();
        out.sort_by(|a, b| a.0.cmp(b.0));
        out
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}
