//! Song rankings: the global score of a song is the sum of its voters' viscous
//! scores; the personal score of a song for `u` sums `alpha^k` over the voters
//! found `k` hops down `u`'s delegation chain. The two are blended as
//!
//! ```text
//! c(s, u) = delta * p(s, u) / max p + (1 - delta) * r(s) / max r
//! ```
//!
//! Sorting by `c` is the same as sorting by `k * p(s, u) + r(s)` with
//! `k = delta * max r / ((1 - delta) * max p)`. That form needs no
//! normalization of `r`, so a personalized list is an eagerly sorted head
//! (songs with personal weight plus every song whose global score could still
//! beat them) followed by the rest of the stored global ranking, read lazily.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use thiserror::Error;

use crate::model::{Category, DelegationGraph, FriendshipGraph, SongKey, UserId, VoteGraph};
use crate::viscous::{Alpha, UserScoreTable};

/// Default stopping threshold for the personal-weight walk.
pub const DEFAULT_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecommendError {
    #[error("voter {0} has no viscous score")]
    UnscoredVoter(UserId),
    #[error("delta must lie in [0, 1], got {0}")]
    InvalidDelta(f64),
}

/// Personalization weight in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Delta(f64);

impl Delta {
    pub const DEFAULT: Delta = Delta(0.9);

    pub fn new(value: f64) -> Result<Self, RecommendError> {
        if (0.0..=1.0).contains(&value) {
            Ok(Delta(value))
        } else {
            Err(RecommendError::InvalidDelta(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Delta {
    fn default() -> Self {
        Delta::DEFAULT
    }
}

/// Descending by score, then ascending by song key.
fn by_score_desc(a_score: f64, a: &SongKey, b_score: f64, b: &SongKey) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a.cmp(b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SongEntry {
    pub song: SongKey,
    pub media_ref: String,
    pub r: f64,
}

/// Global ranking of one category, sorted by `r` descending (ties by song key).
#[derive(Debug, Clone, PartialEq)]
pub struct SongScoreTable {
    category: Category,
    entries: Vec<SongEntry>,
    index: HashMap<SongKey, usize>,
}

impl SongScoreTable {
    /// Sorts `entries` and indexes them. Later duplicates of a key are dropped.
    pub fn from_entries(category: Category, mut entries: Vec<SongEntry>) -> Self {
        entries.sort_by(|a, b| by_score_desc(a.r, &a.song, b.r, &b.song));
        let mut index = HashMap::with_capacity(entries.len());
        entries.retain(|e| {
            if index.contains_key(&e.song) {
                return false;
            }
            index.insert(e.song.clone(), index.len());
            true
        });
        SongScoreTable {
            category,
            entries,
            index,
        }
    }

    pub fn empty(category: Category) -> Self {
        Self::from_entries(category, Vec::new())
    }

    pub fn category(&self) -> &Category {
        &self.category
    }

    pub fn entries(&self) -> &[SongEntry] {
        &self.entries
    }

    pub fn get(&self, song: &SongKey) -> Option<&SongEntry> {
        self.index.get(song).map(|&i| &self.entries[i])
    }

    /// Global score of `song`; 0 for songs nobody voted.
    pub fn r(&self, song: &SongKey) -> f64 {
        self.get(song).map_or(0.0, |e| e.r)
    }

    pub fn r_max(&self) -> f64 {
        self.entries.first().map_or(0.0, |e| e.r)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Scores every voted song by the summed viscous scores of its voters. Each
/// song keeps the media reference most of its voters attached (ties go to the
/// lexicographically smallest).
pub fn global_ranking(
    votes: &VoteGraph,
    scores: &HashMap<UserId, f64>,
) -> Result<SongScoreTable, RecommendError> {
    struct Tally<'a> {
        r: f64,
        media: Vec<(&'a str, u32)>,
    }
    let mut tallies: HashMap<&SongKey, Tally<'_>> = HashMap::new();
    for (voter, advices) in votes.iter() {
        let v = *scores
            .get(voter)
            .ok_or_else(|| RecommendError::UnscoredVoter(voter.clone()))?;
        for advice in advices {
            let tally = tallies.entry(&advice.song).or_insert_with(|| Tally {
                r: 0.0,
                media: Vec::new(),
            });
            tally.r += v;
            match tally.media.iter_mut().find(|(m, _)| *m == advice.media_ref) {
                Some((_, count)) => *count += 1,
                None => tally.media.push((&advice.media_ref, 1)),
            }
        }
    }
    let entries = tallies
        .into_iter()
        .map(|(song, tally)| {
            let media = tally
                .media
                .iter()
                .min_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)))
                .map(|(m, _)| m.to_string())
                .unwrap_or_default();
            SongEntry {
                song: song.clone(),
                media_ref: media,
                r: tally.r,
            }
        })
        .collect();
    Ok(SongScoreTable::from_entries(
        votes.category().clone(),
        entries,
    ))
}

/// Personal song weights for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonalWeights {
    pub user: UserId,
    weights: HashMap<SongKey, f64>,
    media: HashMap<SongKey, String>,
    p_max: f64,
}

impl PersonalWeights {
    pub fn weight(&self, song: &SongKey) -> f64 {
        self.weights.get(song).copied().unwrap_or(0.0)
    }

    pub fn weights(&self) -> &HashMap<SongKey, f64> {
        &self.weights
    }

    /// Media reference of the closest chain member that voted `song`.
    pub fn media(&self, song: &SongKey) -> Option<&str> {
        self.media.get(song).map(String::as_str)
    }

    pub fn p_max(&self) -> f64 {
        self.p_max
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

pub fn personal_weights(
    u: &UserId,
    delegations: &DelegationGraph,
    votes: &VoteGraph,
    alpha: Alpha,
) -> PersonalWeights {
    personal_weights_with_threshold(u, delegations, votes, alpha, DEFAULT_EPSILON)
}

/// Walks `u`'s delegation chain; the node `k` hops away adds `alpha^k` to each
/// song it voted (`u` itself is hop 0). Stops at the chain end, on the first
/// revisited node, or once `alpha^k < epsilon`.
pub fn personal_weights_with_threshold(
    u: &UserId,
    delegations: &DelegationGraph,
    votes: &VoteGraph,
    alpha: Alpha,
    epsilon: f64,
) -> PersonalWeights {
    let mut weights: HashMap<SongKey, f64> = HashMap::new();
    let mut media: HashMap<SongKey, String> = HashMap::new();
    let mut visited: HashSet<&UserId> = HashSet::new();
    let mut node = u;
    let mut t = 1.0;
    while t >= epsilon && visited.insert(node) {
        for advice in votes.votes(node) {
            *weights.entry(advice.song.clone()).or_insert(0.0) += t;
            media
                .entry(advice.song.clone())
                .or_insert_with(|| advice.media_ref.clone());
        }
        match delegations.delegate_of(node) {
            Some(next) => node = next,
            None => break,
        }
        t *= alpha.value();
    }
    let p_max = weights.values().copied().fold(0.0, f64::max);
    PersonalWeights {
        user: u.clone(),
        weights,
        media,
        p_max,
    }
}

/// The normalized blend `c(s, u)`, in `[0, 1]`. A zero maximum makes its term 0.
pub fn combined_score(
    song: &SongKey,
    weights: &PersonalWeights,
    table: &SongScoreTable,
    delta: Delta,
) -> f64 {
    let d = delta.value();
    let personal = if weights.p_max() > 0.0 {
        weights.weight(song) / weights.p_max()
    } else {
        0.0
    };
    let global = if table.r_max() > 0.0 {
        table.r(song) / table.r_max()
    } else {
        0.0
    };
    d * personal + (1.0 - d) * global
}

/// A song with the key it was ranked by. Keys are comparable within one
/// stream only: `k * p + r` when blending, `p` for fully personal streams, and
/// `r` when the stream is just the global ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedSong {
    pub song: SongKey,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamMode {
    /// No personal signal (`delta = 0` or empty weights): stored global order.
    Global,
    /// `k * p + r` head followed by the global tail.
    Blend,
    /// `delta = 1` (or no global scores): personal weight only, `r` breaks ties.
    Personal,
}

/// The eagerly computed part of a personalized ranking. This is what gets
/// cached; the tail is always read from the epoch's global table.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonalizedHead {
    mode: StreamMode,
    items: Vec<RankedSong>,
    members: HashSet<SongKey>,
    /// Table entries before this position are all in `items`.
    tail_start: usize,
}

impl PersonalizedHead {
    pub fn build(weights: &PersonalWeights, table: &SongScoreTable, delta: Delta) -> Self {
        let d = delta.value();
        let mode = if d == 0.0 || weights.p_max() <= 0.0 {
            StreamMode::Global
        } else if d == 1.0 || table.r_max() <= 0.0 {
            StreamMode::Personal
        } else {
            StreamMode::Blend
        };

        let mut items: Vec<RankedSong> = Vec::new();
        let mut tail_start = 0;
        match mode {
            StreamMode::Global => {}
            StreamMode::Personal => {
                let mut scored: Vec<(&SongKey, f64, f64)> = weights
                    .weights()
                    .iter()
                    .map(|(s, &p)| (s, p, table.r(s)))
                    .collect();
                scored.sort_by(|a, b| {
                    b.1.total_cmp(&a.1)
                        .then(b.2.total_cmp(&a.2))
                        .then_with(|| a.0.cmp(b.0))
                });
                items = scored
                    .into_iter()
                    .map(|(s, p, _)| RankedSong {
                        song: s.clone(),
                        score: p,
                    })
                    .collect();
            }
            StreamMode::Blend => {
                let k = d * table.r_max() / ((1.0 - d) * weights.p_max());
                let mut blended: HashMap<&SongKey, f64> = weights
                    .weights()
                    .iter()
                    .map(|(s, &p)| (s, k * p + table.r(s)))
                    .collect();
                let floor = blended.values().copied().fold(f64::INFINITY, f64::min);
                // The table is sorted by r, so songs that can still reach the
                // head form a prefix.
                for entry in table.entries() {
                    if entry.r < floor {
                        break;
                    }
                    blended.entry(&entry.song).or_insert(entry.r);
                    tail_start += 1;
                }
                items = blended
                    .into_iter()
                    .map(|(s, score)| RankedSong {
                        song: s.clone(),
                        score,
                    })
                    .collect();
                items.sort_by(|a, b| by_score_desc(a.score, &a.song, b.score, &b.song));
            }
        }
        let members = items.iter().map(|i| i.song.clone()).collect();
        PersonalizedHead {
            mode,
            items,
            members,
            tail_start,
        }
    }

    pub fn mode(&self) -> StreamMode {
        self.mode
    }

    pub fn items(&self) -> &[RankedSong] {
        &self.items
    }

    /// Chains this head with the lazily read remainder of `table`.
    pub fn stream(self: Arc<Self>, table: &SongScoreTable) -> PersonalizedStream<'_> {
        let tail_pos = self.tail_start;
        PersonalizedStream {
            head: self,
            head_pos: 0,
            table,
            tail_pos,
        }
    }
}

/// Lazy personalized ranking: the sorted head, then every other song of the
/// global table in stored order.
pub struct PersonalizedStream<'a> {
    head: Arc<PersonalizedHead>,
    head_pos: usize,
    table: &'a SongScoreTable,
    tail_pos: usize,
}

impl Iterator for PersonalizedStream<'_> {
    type Item = RankedSong;

    fn next(&mut self) -> Option<RankedSong> {
        if let Some(item) = self.head.items.get(self.head_pos) {
            self.head_pos += 1;
            return Some(item.clone());
        }
        if self.head.mode == StreamMode::Personal {
            return None;
        }
        let entries = self.table.entries();
        while let Some(entry) = entries.get(self.tail_pos) {
            self.tail_pos += 1;
            if !self.head.members.contains(&entry.song) {
                return Some(RankedSong {
                    song: entry.song.clone(),
                    score: entry.r,
                });
            }
        }
        None
    }
}

/// Personalized ranking of every song for `weights.user`.
pub fn personalized_iterator<'a>(
    weights: &PersonalWeights,
    table: &'a SongScoreTable,
    delta: Delta,
) -> PersonalizedStream<'a> {
    Arc::new(PersonalizedHead::build(weights, table, delta)).stream(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Insight {
    pub category: Category,
    pub score: f64,
    pub percentile: f64,
}

/// The user's standing in every category where they hold a score, best
/// percentile first.
pub fn user_insights<'a>(
    u: &UserId,
    tables: impl IntoIterator<Item = &'a UserScoreTable>,
) -> Vec<Insight> {
    let mut out: Vec<Insight> = tables
        .into_iter()
        .filter_map(|t| {
            Some(Insight {
                category: t.category().clone(),
                score: t.score(u)?,
                percentile: t.percentile(u)?,
            })
        })
        .collect();
    out.sort_by(|a, b| {
        b.percentile
            .total_cmp(&a.percentile)
            .then_with(|| a.category.cmp(&b.category))
    });
    out
}

/// Friends of `u` holding a score in the table's category, highest
/// percentile first (ties by id).
pub fn friend_experts(
    u: &UserId,
    friends: &FriendshipGraph,
    table: &UserScoreTable,
) -> Vec<(UserId, f64)> {
    let mut out: Vec<(UserId, f64)> = friends
        .friends_of(u)
        .filter_map(|f| table.percentile(f).map(|p| (f.clone(), p)))
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}
