use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::catalog::{catalog_check, Catalog, CatalogStatus};
use super::event::{Action, Event, NewEvent};
use super::StoreError;
use crate::model::{
    validate_delegation, validate_vote, Category, CategorySet, DelegationGraph, FriendshipGraph,
    ModelError, VoteGraph,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryGraphs {
    pub delegations: DelegationGraph,
    pub votes: VoteGraph,
}

impl CategoryGraphs {
    pub fn new(category: Category) -> Self {
        CategoryGraphs {
            delegations: DelegationGraph::new(category.clone()),
            votes: VoteGraph::new(category),
        }
    }
}

/// Current delegation and vote graphs of every category that has seen events.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaterializedState {
    categories: BTreeMap<Category, CategoryGraphs>,
}

impl MaterializedState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn graphs(&self, category: &Category) -> Option<&CategoryGraphs> {
        self.categories.get(category)
    }

    pub fn categories(&self) -> impl Iterator<Item = (&Category, &CategoryGraphs)> {
        self.categories.iter()
    }

    /// Applies one action. Rules that need no outside context (no
    /// self-delegation, vote cap, no duplicate songs) are enforced here;
    /// friendship and catalog checks belong to [`Validator`].
    pub fn apply(&mut self, event: &NewEvent) -> Result<(), ModelError> {
        let graphs = self
            .categories
            .entry(event.category.clone())
            .or_insert_with(|| CategoryGraphs::new(event.category.clone()));
        match &event.action {
            Action::Delegate { target } => {
                graphs
                    .delegations
                    .set(event.actor.clone(), target.clone())?;
            }
            Action::Undelegate => {
                graphs.delegations.remove(&event.actor);
            }
            Action::Vote(advice) => graphs.votes.add(event.actor.clone(), advice.clone())?,
            Action::Unvote(song) => {
                graphs.votes.remove(&event.actor, song);
            }
        }
        Ok(())
    }
}

/// Everything a new event is checked against before it is logged.
pub struct Validator<'a> {
    pub categories: &'a CategorySet,
    pub friends: &'a FriendshipGraph,
    pub catalog: Option<&'a Catalog>,
    /// Reject votes for songs missing from the catalog.
    pub strict_catalog: bool,
}

impl Validator<'_> {
    pub fn validate(&self, state: &MaterializedState, event: &NewEvent) -> Result<(), ModelError> {
        if !self.categories.contains(&event.category) {
            return Err(ModelError::UnknownCategory(event.category.to_string()));
        }
        let graphs = state.graphs(&event.category);
        match &event.action {
            Action::Delegate { target } => validate_delegation(self.friends, &event.actor, target),
            Action::Vote(advice) => {
                if let Some(g) = graphs {
                    validate_vote(&g.votes, &event.actor, advice)?;
                }
                if self.strict_catalog
                    && catalog_check(&advice.song, self.catalog) == CatalogStatus::Unknown
                {
                    return Err(ModelError::UnknownSong);
                }
                Ok(())
            }
            Action::Undelegate | Action::Unvote(_) => Ok(()),
        }
    }
}

/// Folds a log into state. Sequence numbers must strictly increase and every
/// event must apply cleanly.
pub fn replay<'a>(
    events: impl IntoIterator<Item = &'a Event>,
) -> Result<MaterializedState, StoreError> {
    let mut state = MaterializedState::new();
    replay_onto(&mut state, 0, events)?;
    Ok(state)
}

/// Continues a replay from `after_seq`.
pub fn replay_onto<'a>(
    state: &mut MaterializedState,
    after_seq: u64,
    events: impl IntoIterator<Item = &'a Event>,
) -> Result<u64, StoreError> {
    let mut last = after_seq;
    for event in events {
        if event.seq <= last {
            return Err(StoreError::CorruptLog {
                seq: Some(event.seq),
                line: None,
                reason: format!("sequence number not above {last}"),
            });
        }
        let new = NewEvent {
            ts: Some(event.ts),
            category: event.category.clone(),
            actor: event.actor.clone(),
            action: event.action.clone(),
        };
        state.apply(&new).map_err(|e| StoreError::CorruptLog {
            seq: Some(event.seq),
            line: None,
            reason: e.to_string(),
        })?;
        last = event.seq;
    }
    Ok(last)
}
