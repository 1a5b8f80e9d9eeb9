//! Users, categories, songs, and the three graphs everything else is computed
//! from: friendships (who may delegate whom), delegations and votes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum number of songs a user may vote in one category.
pub const MAX_VOTES_PER_USER: usize = 3;

/// The category set used when none is configured.
pub const DEFAULT_CATEGORIES: [&str; 9] = [
    "classical",
    "electronic",
    "folk",
    "hiphop",
    "indie",
    "jazz",
    "metal",
    "pop",
    "rock",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("invalid user id {0:?}: must be non-empty and contain no whitespace")]
    InvalidUserId(String),
    #[error("invalid category name {0:?}")]
    InvalidCategory(String),
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("artist and title must both be non-empty")]
    EmptySongField,
    #[error("media reference must be non-empty")]
    EmptyMediaRef,
    #[error("{from} is not a friend of {to}")]
    NotAFriend { from: UserId, to: UserId },
    #[error("users cannot delegate themselves")]
    SelfDelegation,
    #[error("users cannot befriend themselves")]
    SelfFriendship,
    #[error("at most {MAX_VOTES_PER_USER} votes per category")]
    VoteLimitReached,
    #[error("song already voted by this user")]
    DuplicateSong,
    #[error("song is not in the catalog")]
    UnknownSong,
}

impl ModelError {
    /// Stable machine-readable name, used in API error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            ModelError::InvalidUserId(_) => "InvalidUserId",
            ModelError::InvalidCategory(_) => "InvalidCategory",
            ModelError::UnknownCategory(_) => "UnknownCategory",
            ModelError::EmptySongField => "EmptySongField",
            ModelError::EmptyMediaRef => "EmptyMediaRef",
            ModelError::NotAFriend { .. } => "NotAFriend",
            ModelError::SelfDelegation => "SelfDelegation",
            ModelError::SelfFriendship => "SelfFriendship",
            ModelError::VoteLimitReached => "VoteLimitReached",
            ModelError::DuplicateSong => "DuplicateSong",
            ModelError::UnknownSong => "UnknownSong",
        }
    }
}

/// Opaque user token: non-empty, no whitespace.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct UserId(String);

impl UserId {
    pub fn new(id: impl Into<String>) -> Result<Self, ModelError> {
        let id = id.into();
        if id.is_empty() || id.chars().any(char::is_whitespace) {
            return Err(ModelError::InvalidUserId(id));
        }
        Ok(UserId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for UserId {
    type Error = ModelError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        UserId::new(value)
    }
}

impl From<UserId> for String {
    fn from(value: UserId) -> Self {
        value.0
    }
}

impl FromStr for UserId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        UserId::new(s)
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for UserId {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// A topic (music genre). Names are lowercase ASCII letters, digits, `-` or `_`.
///
/// Whether a category is *configured* is checked by [`CategorySet::parse`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Category(String);

impl Category {
    pub fn new(name: impl Into<String>) -> Result<Self, ModelError> {
        let name = name.into();
        let well_formed = !name.is_empty()
            && name
                .bytes()
                .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-' || b == b'_');
        if !well_formed {
            return Err(ModelError::InvalidCategory(name));
        }
        Ok(Category(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Category {
    type Error = ModelError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Category::new(value)
    }
}

impl From<Category> for String {
    fn from(value: Category) -> Self {
        value.0
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// The configured set of categories, in display order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategorySet {
    categories: Vec<Category>,
}

impl CategorySet {
    pub fn new<I, S>(names: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut categories: Vec<Category> = Vec::new();
        for name in names {
            let c = Category::new(name.into().trim().to_lowercase())?;
            if !categories.contains(&c) {
                categories.push(c);
            }
        }
        Ok(CategorySet { categories })
    }

    /// Looks up a configured category by name (case-insensitive).
    pub fn parse(&self, name: &str) -> Result<Category, ModelError> {
        let lower = name.trim().to_lowercase();
        self.categories
            .iter()
            .find(|c| c.as_str() == lower)
            .cloned()
            .ok_or_else(|| ModelError::UnknownCategory(name.to_string()))
    }

    pub fn contains(&self, category: &Category) -> bool {
        self.categories.contains(category)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Category> {
        self.categories.iter()
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }
}

impl Default for CategorySet {
    fn default() -> Self {
        CategorySet::new(DEFAULT_CATEGORIES).expect("default categories are well-formed")
    }
}

/// Song identity: canonical artist and title.
///
/// Only constructible through [`canonicalize_song`], so every value is canonical.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawSongKey")]
pub struct SongKey {
    artist: String,
    title: String,
}

#[derive(Deserialize)]
struct RawSongKey {
    artist: String,
    title: String,
}

impl TryFrom<RawSongKey> for SongKey {
    type Error = ModelError;

    fn try_from(raw: RawSongKey) -> Result<Self, Self::Error> {
        canonicalize_song(&raw.artist, &raw.title)
    }
}

impl SongKey {
    pub fn artist(&self) -> &str {
        &self.artist
    }

    pub fn title(&self) -> &str {
        &self.title
    }
}

impl fmt::Display for SongKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} - {}", self.artist, self.title)
    }
}

fn canonical_field(raw: &str) -> String {
    raw.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Lowercases, trims and collapses internal whitespace runs of both fields.
pub fn canonicalize_song(artist: &str, title: &str) -> Result<SongKey, ModelError> {
    let artist = canonical_field(artist);
    let title = canonical_field(title);
    if artist.is_empty() || title.is_empty() {
        return Err(ModelError::EmptySongField);
    }
    Ok(SongKey { artist, title })
}

/// A vote: a song plus an opaque media reference (e.g. a video id).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Advice {
    pub song: SongKey,
    pub media_ref: String,
}

impl Advice {
    pub fn new(song: SongKey, media_ref: impl Into<String>) -> Result<Self, ModelError> {
        let media_ref = media_ref.into();
        if media_ref.trim().is_empty() {
            return Err(ModelError::EmptyMediaRef);
        }
        Ok(Advice { song, media_ref })
    }
}

/// Undirected acquaintance graph; delegations must follow its edges.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FriendshipGraph {
    adjacency: HashMap<UserId, BTreeSet<UserId>>,
}

impl FriendshipGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds the undirected edge `{a, b}`. Returns `false` if it was already present.
    pub fn add_edge(&mut self, a: UserId, b: UserId) -> Result<bool, ModelError> {
        if a == b {
            return Err(ModelError::SelfFriendship);
        }
        let inserted = self
            .adjacency
            .entry(a.clone())
            .or_default()
            .insert(b.clone());
        self.adjacency.entry(b).or_default().insert(a);
        Ok(inserted)
    }

    pub fn are_friends(&self, a: &UserId, b: &UserId) -> bool {
        self.adjacency.get(a).is_some_and(|s| s.contains(b))
    }

    /// Friends of `u` in ascending id order.
    pub fn friends_of<'a>(&'a self, u: &UserId) -> impl Iterator<Item = &'a UserId> + 'a {
        self.adjacency.get(u).into_iter().flat_map(|s| s.iter())
    }

    pub fn user_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.values().map(BTreeSet::len).sum::<usize>() / 2
    }

    /// Every edge once, as `(smaller, larger)`, sorted.
    pub fn edges(&self) -> Vec<(&UserId, &UserId)> {
        let mut edges: Vec<_> = self
            .adjacency
            .iter()
            .flat_map(|(a, bs)| bs.iter().filter(move |b| a < *b).map(move |b| (a, b)))
            .collect();
        edges.sort();
        edges
    }
}

/// Per-category functional graph: each user delegates at most one other user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelegationGraph {
    category: Category,
    delegate_of: BTreeMap<UserId, UserId>,
}

impl DelegationGraph {
    pub fn new(category: Category) -> Self {
        DelegationGraph {
            category,
            delegate_of: BTreeMap::new(),
        }
    }

    pub fn category(&self) -> &Category {
        &self.category
    }

    pub fn delegate_of(&self, u: &UserId) -> Option<&UserId> {
        self.delegate_of.get(u)
    }

    /// Sets `u`'s delegate, replacing any previous one, which is returned.
    pub fn set(&mut self, u: UserId, target: UserId) -> Result<Option<UserId>, ModelError> {
        if u == target {
            return Err(ModelError::SelfDelegation);
        }
        Ok(self.delegate_of.insert(u, target))
    }

    pub fn remove(&mut self, u: &UserId) -> Option<UserId> {
        self.delegate_of.remove(u)
    }

    /// Arcs `(delegator, delegate)` in delegator order.
    pub fn arcs(&self) -> impl Iterator<Item = (&UserId, &UserId)> {
        self.delegate_of.iter()
    }

    pub fn len(&self) -> usize {
        self.delegate_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delegate_of.is_empty()
    }
}

/// Per-category bipartite graph from users to the (at most three) songs they voted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteGraph {
    category: Category,
    votes_of: BTreeMap<UserId, Vec<Advice>>,
}

impl VoteGraph {
    pub fn new(category: Category) -> Self {
        VoteGraph {
            category,
            votes_of: BTreeMap::new(),
        }
    }

    pub fn category(&self) -> &Category {
        &self.category
    }

    pub fn votes(&self, u: &UserId) -> &[Advice] {
        self.votes_of.get(u).map_or(&[], Vec::as_slice)
    }

    pub fn add(&mut self, u: UserId, advice: Advice) -> Result<(), ModelError> {
        validate_vote(self, &u, &advice)?;
        self.votes_of.entry(u).or_default().push(advice);
        Ok(())
    }

    /// Removes `u`'s vote for `song`; returns whether one existed.
    pub fn remove(&mut self, u: &UserId, song: &SongKey) -> bool {
        let Some(list) = self.votes_of.get_mut(u) else {
            return false;
        };
        let before = list.len();
        list.retain(|a| &a.song != song);
        let removed = list.len() != before;
        if list.is_empty() {
            self.votes_of.remove(u);
        }
        removed
    }

    /// Voters with their votes, in voter order. Users without votes are absent.
    pub fn iter(&self) -> impl Iterator<Item = (&UserId, &[Advice])> {
        self.votes_of.iter().map(|(u, v)| (u, v.as_slice()))
    }

    pub fn voter_count(&self) -> usize {
        self.votes_of.len()
    }

    pub fn vote_count(&self) -> usize {
        self.votes_of.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.votes_of.is_empty()
    }
}

pub fn validate_delegation(
    friends: &FriendshipGraph,
    u: &UserId,
    target: &UserId,
) -> Result<(), ModelError> {
    if u == target {
        return Err(ModelError::SelfDelegation);
    }
    if !friends.are_friends(u, target) {
        return Err(ModelError::NotAFriend {
            from: u.clone(),
            to: target.clone(),
        });
    }
    Ok(())
}

pub fn validate_vote(votes: &VoteGraph, u: &UserId, advice: &Advice) -> Result<(), ModelError> {
    let current = votes.votes(u);
    if current.iter().any(|a| a.song == advice.song) {
        return Err(ModelError::DuplicateSong);
    }
    if current.len() >= MAX_VOTES_PER_USER {
        return Err(ModelError::VoteLimitReached);
    }
    Ok(())
}

/// Users with positive out-degree in either graph: they delegated or voted.
///
/// Delegation targets that neither delegate nor vote are not included.
pub fn active_users(delegations: &DelegationGraph, votes: &VoteGraph) -> BTreeSet<UserId> {
    debug_assert_eq!(delegations.category(), votes.category());
    delegations
        .arcs()
        .map(|(u, _)| u)
        .chain(votes.iter().map(|(u, _)| u))
        .cloned()
        .collect()
}
