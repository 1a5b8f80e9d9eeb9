//! Global recompute: graphs in, one [`ScoreEpoch`] out.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::model::{active_users, Category, CategorySet};
use crate::recommend::{global_ranking, SongScoreTable};
use crate::store::{CategoryEpoch, CategoryGraphs, MaterializedState, ScoreEpoch};
use crate::viscous::{
    compute_katz_scores, compute_viscous_scores, Alpha, Engine, KatzParams, ScoreError,
    UserScoreTable,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecomputeParams {
    pub alpha: Alpha,
    pub engine: Engine,
    pub katz: KatzParams,
}

impl RecomputeParams {
    pub fn new(alpha: Alpha, engine: Engine) -> Self {
        RecomputeParams {
            alpha,
            engine,
            katz: KatzParams::for_alpha(alpha),
        }
    }
}

/// User and song tables of one category.
pub fn score_category(
    graphs: &CategoryGraphs,
    category: &Category,
    params: &RecomputeParams,
) -> Result<CategoryEpoch, ScoreError> {
    let active = active_users(&graphs.delegations, &graphs.votes);
    let scores = match params.engine {
        Engine::Exact => compute_viscous_scores(&graphs.delegations, params.alpha, &active)?,
        Engine::Katz => compute_katz_scores(
            &graphs.delegations,
            params.alpha,
            &active,
            params.katz.tol,
            params.katz.max_iters,
        )?,
    };
    let songs =
        global_ranking(&graphs.votes, &scores).expect("every voter is active and therefore scored");
    let users = UserScoreTable::build(category.clone(), params.alpha, scores, &active);
    Ok(CategoryEpoch { users, songs })
}

pub struct Recompute {
    pub epoch: ScoreEpoch,
    /// Categories that kept their previous tables, with the reason.
    pub failures: Vec<(Category, ScoreError)>,
}

/// Scores every configured category in parallel. A category that fails to
/// score keeps its tables from `previous` (or empty ones).
pub fn recompute(
    state: Arc<MaterializedState>,
    categories: &CategorySet,
    params: &RecomputeParams,
    epoch_id: u64,
    created_at: i64,
    through_seq: u64,
    previous: Option<&ScoreEpoch>,
) -> Recompute {
    let cats: Vec<&Category> = categories.iter().collect();
    let results: Vec<(Category, Result<CategoryEpoch, ScoreError>)> = cats
        .par_iter()
        .map(|&c| {
            let result = match state.graphs(c) {
                Some(g) => score_category(g, c, params),
                None => Ok(CategoryEpoch {
                    users: UserScoreTable::empty(c.clone(), params.alpha),
                    songs: SongScoreTable::empty(c.clone()),
                }),
            };
            (c.clone(), result)
        })
        .collect();

    let mut tables = BTreeMap::new();
    let mut failures = Vec::new();
    for (c, result) in results {
        let table = match result {
            Ok(t) => Arc::new(t),
            Err(e) => {
                failures.push((c.clone(), e));
                previous
                    .and_then(|p| p.category(&c).cloned())
                    .unwrap_or_else(|| Arc::new(CategoryEpoch::empty(&c, params.alpha)))
            }
        };
        tables.insert(c, table);
    }
    let epoch = ScoreEpoch::new(
        epoch_id,
        created_at,
        params.alpha,
        params.engine,
        through_seq,
        tables,
        Some(state),
    );
    Recompute { epoch, failures }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{canonicalize_song, Advice, UserId};
    use crate::store::{Action, NewEvent};

    fn uid(s: &str) -> UserId {
        UserId::new(s).unwrap()
    }

    fn chain_state() -> MaterializedState {
        let jazz = Category::new("jazz").unwrap();
        let mut s = MaterializedState::new();
        let mut apply = |actor: &str, action| {
            s.apply(&NewEvent::new(jazz.clone(), uid(actor), action))
                .unwrap();
        };
        let vote =
            |t: &str| Action::Vote(Advice::new(canonicalize_song("a", t).unwrap(), "m").unwrap());
        apply("A", Action::Delegate { target: uid("B") });
        apply("B", Action::Delegate { target: uid("C") });
        apply("A", vote("s1"));
        apply("B", vote("s1"));
        apply("B", vote("s2"));
        apply("C", vote("s2"));
        s
    }

    #[test]
    fn chain_fixture_tables() {
        let params = RecomputeParams::new(Alpha::new(0.5).unwrap(), Engine::Exact);
        let out = recompute(
            Arc::new(chain_state()),
            &CategorySet::default(),
            &params,
            1,
            0,
            6,
            None,
        );
        assert!(out.failures.is_empty());
        let jazz = out
            .epoch
            .category(&Category::new("jazz").unwrap())
            .unwrap()
            .clone();
        let ranked: Vec<(&str, f64)> = jazz
            .songs
            .entries()
            .iter()
            .map(|e| (e.song.title(), e.r))
            .collect();
        assert_eq!(ranked, [("s2", 3.25), ("s1", 2.5)]);
        assert_eq!(jazz.users.score(&uid("C")), Some(1.75));
        assert_eq!(out.epoch.categories().count(), 9);
    }

    #[test]
    fn cold_start_has_nine_empty_categories() {
        let params = RecomputeParams::new(Alpha::DEFAULT, Engine::Exact);
        let out = recompute(
            Arc::default(),
            &CategorySet::default(),
            &params,
            1,
            0,
            0,
            None,
        );
        assert_eq!(out.epoch.categories().count(), 9);
        assert!(out.epoch.categories().all(|(_, t)| t.songs.is_empty()));
    }

    #[test]
    fn repeated_recompute_is_deterministic() {
        let params = RecomputeParams::new(Alpha::new(0.75).unwrap(), Engine::Exact);
        let state = Arc::new(chain_state());
        let a = recompute(
            state.clone(),
            &CategorySet::default(),
            &params,
            1,
            0,
            6,
            None,
        )
        .epoch;
        let b = recompute(state, &CategorySet::default(), &params, 2, 0, 6, Some(&a)).epoch;
        assert_ne!(a.epoch_id, b.epoch_id);
        let mut da = a.to_document();
        let db = b.to_document();
        da.epoch_id = db.epoch_id;
        assert_eq!(da, db);
    }

    #[test]
    fn failing_category_keeps_previous_tables() {
        let jazz = Category::new("jazz").unwrap();
        let mut state = chain_state();
        let good = RecomputeParams::new(Alpha::new(0.5).unwrap(), Engine::Exact);
        let first = recompute(
            Arc::new(state.clone()),
            &CategorySet::default(),
            &good,
            1,
            0,
            6,
            None,
        )
        .epoch;

        let mut delegate = |actor: &str, target: &str| {
            state
                .apply(&NewEvent::new(
                    jazz.clone(),
                    uid(actor),
                    Action::Delegate {
                        target: uid(target),
                    },
                ))
                .unwrap();
        };
        delegate("C", "A");
        let rock = Category::new("rock").unwrap();
        state
            .apply(&NewEvent::new(
                rock.clone(),
                uid("Z"),
                Action::Vote(Advice::new(canonicalize_song("b", "t").unwrap(), "m").unwrap()),
            ))
            .unwrap();
        let at_one = RecomputeParams::new(Alpha::new(1.0).unwrap(), Engine::Exact);
        let second = recompute(
            Arc::new(state),
            &CategorySet::default(),
            &at_one,
            2,
            0,
            8,
            Some(&first),
        );
        assert_eq!(second.failures.len(), 1);
        assert_eq!(
            second.failures[0],
            (jazz.clone(), ScoreError::CycleAtAlphaOne)
        );
        assert_eq!(second.epoch.category(&jazz), first.category(&jazz));
        assert_eq!(second.epoch.category(&rock).unwrap().songs.len(), 1);
    }
}
