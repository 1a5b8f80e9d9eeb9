//! Synthetic delegation graphs for experiments and benchmarks.
//!
//! Users are `u0 .. u{n-1}`; song `j` is artist `a{j}`, title `s{j}`, media
//! `m{j}`. Output is a function of the parameters and the seed only.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{canonicalize_song, Advice, Category, ModelError, UserId, MAX_VOTES_PER_USER};
use crate::store::{Action, MaterializedState, NewEvent};

/// 2015-01-01T00:00:00Z; generated events are one second apart from here.
pub const BASE_TS: i64 = 1_420_070_400_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    /// `u_i` delegates to `u_{i+1}`.
    Chain,
    /// Everyone delegates to `u0`.
    Star,
    /// A chain closed back onto `u0`.
    Cycle,
    /// Each user delegates to an earlier one, picked with probability
    /// proportional to one plus the delegations it already received.
    Preferential,
}

impl FromStr for Model {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "chain" => Ok(Model::Chain),
            "star" => Ok(Model::Star),
            "cycle" => Ok(Model::Cycle),
            "preferential" => Ok(Model::Preferential),
            other => Err(format!(
                "unknown model {other:?} (expected chain, star, cycle or preferential)"
            )),
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::Chain => "chain",
            Model::Star => "star",
            Model::Cycle => "cycle",
            Model::Preferential => "preferential",
        })
    }
}

#[derive(Debug, Clone)]
pub struct GenParams {
    pub users: usize,
    pub model: Model,
    pub votes_per_user: usize,
    pub seed: u64,
    pub category: Category,
}

impl GenParams {
    pub fn new(users: usize, model: Model, seed: u64) -> Self {
        GenParams {
            users,
            model,
            votes_per_user: 2,
            seed,
            category: Category::new("jazz").expect("valid category"),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Synthetic {
    pub events: Vec<NewEvent>,
    pub friendships: Vec<(UserId, UserId)>,
}

impl Synthetic {
    pub fn materialize(&self) -> MaterializedState {
        let mut state = MaterializedState::new();
        for e in &self.events {
            state.apply(e).expect("generated events are valid");
        }
        state
    }
}

fn user(i: usize) -> UserId {
    UserId::new(format!("u{i}")).expect("valid user id")
}

fn song(j: usize) -> Advice {
    Advice::new(
        canonicalize_song(&format!("a{j}"), &format!("s{j}")).expect("valid song"),
        format!("m{j}"),
    )
    .expect("valid advice")
}

pub fn generate(params: &GenParams) -> Result<Synthetic, ModelError> {
    if params.votes_per_user > MAX_VOTES_PER_USER {
        return Err(ModelError::VoteLimitReached);
    }
    let n = params.users;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut out = Synthetic::default();
    let mut ts = BASE_TS;
    let mut push = |out: &mut Synthetic, actor: usize, action: Action| {
        ts += 1000;
        out.events
            .push(NewEvent::new(params.category.clone(), user(actor), action).at(ts));
    };

    match params.model {
        Model::Chain | Model::Star | Model::Cycle => {
            // User i votes a window of consecutive songs ending at s{i+1}, so
            // neighbours along a chain share songs.
            let songs = n.saturating_sub(1).max(1);
            let k = params.votes_per_user;
            for i in 0..n {
                let target = match params.model {
                    Model::Chain => (i + 1 < n).then_some(i + 1),
                    Model::Star => (i > 0).then_some(0),
                    _ => (n > 1).then_some((i + 1) % n),
                };
                if let Some(t) = target {
                    out.friendships.push((user(i), user(t)));
                    push(&mut out, i, Action::Delegate { target: user(t) });
                }
                if k > 0 {
                    let hi = (i + 1).min(songs);
                    let lo = (i + 2).saturating_sub(k).max(1);
                    for j in lo..=hi {
                        push(&mut out, i, Action::Vote(song(j)));
                    }
                }
            }
        }
        Model::Preferential => {
            let songs = (n / 3).max(1);
            // Each user appears once, plus once per delegation received.
            let mut targets: Vec<u32> = Vec::with_capacity(2 * n);
            let mut cast: Vec<u32> = Vec::with_capacity(n * params.votes_per_user);
            for i in 0..n {
                let mut delegate = None;
                if i > 0 && rng.gen_bool(0.8) {
                    let t = targets[rng.gen_range(0..targets.len())] as usize;
                    targets.push(t as u32);
                    out.friendships.push((user(i), user(t)));
                    delegate = Some(t);
                    push(&mut out, i, Action::Delegate { target: user(t) });
                }
                if i > 0 {
                    let f = rng.gen_range(0..i);
                    if Some(f) != delegate {
                        out.friendships.push((user(i), user(f)));
                    }
                }
                targets.push(i as u32);

                let mut mine: Vec<u32> = Vec::with_capacity(params.votes_per_user);
                let mut attempts = 0;
                while mine.len() < params.votes_per_user && attempts < 8 * params.votes_per_user {
                    attempts += 1;
                    let j = if !cast.is_empty() && rng.gen_bool(0.5) {
                        cast[rng.gen_range(0..cast.len())]
                    } else {
                        rng.gen_range(1..=songs) as u32
                    };
                    if !mine.contains(&j) {
                        mine.push(j);
                    }
                }
                for &j in &mine {
                    cast.push(j);
                    push(&mut out, i, Action::Vote(song(j as usize)));
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::active_users;
    use crate::viscous::{compute_viscous_scores, Alpha, ScoreError};

    #[test]
    fn three_user_chain_is_the_fixture() {
        let s = generate(&GenParams::new(3, Model::Chain, 7)).unwrap();
        let state = s.materialize();
        let g = state.graphs(&Category::new("jazz").unwrap()).unwrap();
        let titles = |u: &str| -> Vec<String> {
            g.votes
                .votes(&UserId::new(u).unwrap())
                .iter()
                .map(|a| a.song.title().to_string())
                .collect()
        };
        assert_eq!(titles("u0"), ["s1"]);
        assert_eq!(titles("u1"), ["s1", "s2"]);
        assert_eq!(titles("u2"), ["s2"]);
        assert_eq!(g.delegations.delegate_of(&user(0)), Some(&user(1)));
        assert_eq!(g.delegations.delegate_of(&user(1)), Some(&user(2)));
        assert_eq!(g.delegations.delegate_of(&user(2)), None);
    }

    #[test]
    fn same_seed_same_output() {
        let mut p = GenParams::new(500, Model::Preferential, 42);
        p.votes_per_user = 3;
        let a = generate(&p).unwrap();
        let b = generate(&p).unwrap();
        assert_eq!(a.events, b.events);
        assert_eq!(a.friendships, b.friendships);
        p.seed = 43;
        assert_ne!(generate(&p).unwrap().events, a.events);
    }

    #[test]
    fn preferential_is_acyclic_and_valid() {
        let mut p = GenParams::new(2000, Model::Preferential, 1);
        p.votes_per_user = 3;
        let s = generate(&p).unwrap();
        let state = s.materialize();
        let g = state.graphs(&p.category).unwrap();
        let active = active_users(&g.delegations, &g.votes);
        assert!(compute_viscous_scores(&g.delegations, Alpha::new(1.0).unwrap(), &active).is_ok());
        let mut friends = crate::model::FriendshipGraph::new();
        for (a, b) in &s.friendships {
            friends.add_edge(a.clone(), b.clone()).unwrap();
        }
        for (from, to) in g.delegations.arcs() {
            assert!(friends.are_friends(from, to));
        }
    }

    #[test]
    fn cycle_fails_at_alpha_one() {
        let s = generate(&GenParams::new(4, Model::Cycle, 0)).unwrap();
        let state = s.materialize();
        let g = state.graphs(&Category::new("jazz").unwrap()).unwrap();
        let active = active_users(&g.delegations, &g.votes);
        assert_eq!(
            compute_viscous_scores(&g.delegations, Alpha::new(1.0).unwrap(), &active),
            Err(ScoreError::CycleAtAlphaOne)
        );
    }

    #[test]
    fn vote_cap_is_enforced() {
        let mut p = GenParams::new(3, Model::Star, 0);
        p.votes_per_user = 4;
        assert_eq!(generate(&p).unwrap_err(), ModelError::VoteLimitReached);
    }
}
