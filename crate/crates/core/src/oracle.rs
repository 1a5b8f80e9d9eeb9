//! Brute-force reference implementations used only by tests.
//!
//! Everything here walks delegation chains node by node and sums the defining
//! formulas directly. None of it shares code with the production scorers.

use std::collections::{BTreeMap, BTreeSet};

use crate::model::{DelegationGraph, SongKey, UserId, VoteGraph};

/// Users reached from `start` by following delegations, with their hop distance.
/// `start` itself is at distance 0. Each user appears once, at its first visit.
pub fn chain_distances(d: &DelegationGraph, start: &UserId) -> Vec<(UserId, u32)> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let mut node = start.clone();
    let mut dist = 0u32;
    loop {
        if !seen.insert(node.clone()) {
            break;
        }
        out.push((node.clone(), dist));
        match d.delegate_of(&node) {
            Some(next) => {
                node = next.clone();
                dist += 1;
            }
            None => break,
        }
    }
    out
}

fn universe(d: &DelegationGraph, domain: &BTreeSet<UserId>) -> BTreeSet<UserId> {
    let mut all = domain.clone();
    for (a, b) in d.arcs() {
        all.insert(a.clone());
        all.insert(b.clone());
    }
    all
}

/// `v(u) = Σ_{u'} alpha^{d(u', u)}` by walking from every contributor.
pub fn viscous_scores(
    d: &DelegationGraph,
    alpha: f64,
    domain: &BTreeSet<UserId>,
) -> BTreeMap<UserId, f64> {
    let all = universe(d, domain);
    let mut scores: BTreeMap<UserId, f64> = all.iter().map(|u| (u.clone(), 0.0)).collect();
    for contributor in &all {
        for (reached, dist) in chain_distances(d, contributor) {
            *scores.get_mut(&reached).unwrap() += alpha.powi(dist as i32);
        }
    }
    scores
}

/// Number of users whose chain reaches `u` (including `u`).
pub fn tree_sizes(d: &DelegationGraph, domain: &BTreeSet<UserId>) -> BTreeMap<UserId, u64> {
    let all = universe(d, domain);
    let mut sizes: BTreeMap<UserId, u64> = all.iter().map(|u| (u.clone(), 0)).collect();
    for contributor in &all {
        for (reached, _) in chain_distances(d, contributor) {
            *sizes.get_mut(&reached).unwrap() += 1;
        }
    }
    sizes
}

/// `r(s)` summed voter by voter.
pub fn song_scores(v: &VoteGraph, scores: &BTreeMap<UserId, f64>) -> BTreeMap<SongKey, f64> {
    let mut r = BTreeMap::new();
    for (voter, advices) in v.iter() {
        for a in advices {
            *r.entry(a.song.clone()).or_insert(0.0) += scores[voter];
        }
    }
    r
}

/// `Σ_s r(s) - r_{V \ {u}}(s)`, rebuilding the vote graph without `u`.
pub fn influence(u: &UserId, v: &VoteGraph, scores: &BTreeMap<UserId, f64>) -> f64 {
    let with = song_scores(v, scores);
    let mut without_graph = VoteGraph::new(v.category().clone());
    for (voter, advices) in v.iter() {
        if voter != u {
            for a in advices {
                without_graph.add(voter.clone(), a.clone()).unwrap();
            }
        }
    }
    let without = song_scores(&without_graph, scores);
    with.iter()
        .map(|(s, r)| r - without.get(s).copied().unwrap_or(0.0))
        .sum()
}

/// `p(s, u) = Σ_{voters u'} alpha^{d(u, u')}` along `u`'s chain.
pub fn personal_weights(
    u: &UserId,
    d: &DelegationGraph,
    v: &VoteGraph,
    alpha: f64,
) -> BTreeMap<SongKey, f64> {
    let mut p = BTreeMap::new();
    for (node, dist) in chain_distances(d, u) {
        for a in v.votes(&node) {
            *p.entry(a.song.clone()).or_insert(0.0) += alpha.powi(dist as i32);
        }
    }
    p
}

/// Every song sorted by the normalized blend, descending; ties by song key.
///
/// Without any personal weight the order is the global one. With `delta == 1`
/// only songs with positive personal weight are kept and the global score
/// breaks ties.
pub fn eager_blend_order(
    p: &BTreeMap<SongKey, f64>,
    r: &BTreeMap<SongKey, f64>,
    delta: f64,
) -> Vec<SongKey> {
    let p_max = p.values().copied().fold(0.0, f64::max);
    let r_max = r.values().copied().fold(0.0, f64::max);
    let songs: BTreeSet<&SongKey> = p.keys().chain(r.keys()).collect();
    let get = |m: &BTreeMap<SongKey, f64>, s: &SongKey| m.get(s).copied().unwrap_or(0.0);

    if p_max == 0.0 {
        let mut out: Vec<&SongKey> = r.keys().collect();
        out.sort_by(|a, b| get(r, b).total_cmp(&get(r, a)).then(a.cmp(b)));
        return out.into_iter().cloned().collect();
    }
    if delta >= 1.0 {
        let mut out: Vec<&SongKey> = songs.into_iter().filter(|s| get(p, s) > 0.0).collect();
        out.sort_by(|a, b| {
            get(p, b)
                .total_cmp(&get(p, a))
                .then(get(r, b).total_cmp(&get(r, a)))
                .then(a.cmp(b))
        });
        return out.into_iter().cloned().collect();
    }

    let blend = |s: &SongKey| {
        let personal = if p_max > 0.0 { get(p, s) / p_max } else { 0.0 };
        let global = if r_max > 0.0 { get(r, s) / r_max } else { 0.0 };
        delta * personal + (1.0 - delta) * global
    };
    let mut scored: Vec<(f64, &SongKey)> = songs.into_iter().map(|s| (blend(s), s)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
    scored.into_iter().map(|(_, s)| s.clone()).collect()
}

/// `100 * |{a in active : v(a) < v(u)}| / |active|`, by counting.
pub fn percentiles(
    scores: &BTreeMap<UserId, f64>,
    active: &BTreeSet<UserId>,
) -> BTreeMap<UserId, f64> {
    active
        .iter()
        .map(|u| {
            let below = active.iter().filter(|a| scores[*a] < scores[u]).count();
            (u.clone(), 100.0 * below as f64 / active.len() as f64)
        })
        .collect()
}

/// `k * p + r` for every song, sorted descending with ties by song key: the
/// eager counterpart of a lazily drained blended stream.
pub fn eager_rank_key_order(
    p: &BTreeMap<SongKey, f64>,
    r: &BTreeMap<SongKey, f64>,
    delta: f64,
) -> Vec<SongKey> {
    let p_max = p.values().copied().fold(0.0, f64::max);
    let r_max = r.values().copied().fold(0.0, f64::max);
    if p_max == 0.0 || delta == 0.0 {
        return eager_blend_order(&BTreeMap::new(), r, delta);
    }
    if delta == 1.0 || r_max == 0.0 {
        return eager_blend_order(p, r, 1.0);
    }
    let k = delta * r_max / ((1.0 - delta) * p_max);
    let get = |m: &BTreeMap<SongKey, f64>, s: &SongKey| m.get(s).copied().unwrap_or(0.0);
    let songs: BTreeSet<&SongKey> = p.keys().chain(r.keys()).collect();
    let mut scored: Vec<(f64, &SongKey)> = songs
        .into_iter()
        .map(|s| (k * get(p, s) + get(r, s), s))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
    scored.into_iter().map(|(_, s)| s.clone()).collect()
}

/// Checks that `order` lists the same songs as the eager blend order and is
/// non-increasing in `c`, where scores closer than `tol` count as tied
/// (rounding can separate sums that are equal in exact arithmetic).
pub fn check_blend_order(
    order: &[SongKey],
    p: &BTreeMap<SongKey, f64>,
    r: &BTreeMap<SongKey, f64>,
    delta: f64,
    tol: f64,
) -> Result<(), String> {
    let expected = eager_blend_order(p, r, delta);
    let mut a: Vec<&SongKey> = order.iter().collect();
    let mut b: Vec<&SongKey> = expected.iter().collect();
    a.sort();
    b.sort();
    if a != b {
        return Err(format!(
            "song sets differ: {} vs {}",
            order.len(),
            expected.len()
        ));
    }
    let p_max = p.values().copied().fold(0.0, f64::max);
    let r_max = r.values().copied().fold(0.0, f64::max);
    let get = |m: &BTreeMap<SongKey, f64>, s: &SongKey| m.get(s).copied().unwrap_or(0.0);
    let key = |s: &SongKey| -> (f64, f64) {
        if p_max == 0.0 {
            return (get(r, s), 0.0);
        }
        let personal = get(p, s) / p_max;
        let global = if r_max > 0.0 { get(r, s) / r_max } else { 0.0 };
        if delta >= 1.0 {
            (personal, global)
        } else {
            (delta * personal + (1.0 - delta) * global, 0.0)
        }
    };
    for pair in order.windows(2) {
        let (hi, lo) = (key(&pair[0]), key(&pair[1]));
        let primary_ok = hi.0 >= lo.0 - tol;
        let tied = (hi.0 - lo.0).abs() <= tol;
        if !primary_ok || (tied && hi.1 < lo.1 - tol) {
            return Err(format!(
                "{} ({:?}) ranked above {} ({:?})",
                pair[0], hi, pair[1], lo
            ));
        }
    }
    Ok(())
}
