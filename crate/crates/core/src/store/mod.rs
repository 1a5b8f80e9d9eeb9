//! Event-sourced persistence.
//!
//! The append-only event log is the source of truth. Current graphs are a fold
//! over it, periodically snapshotted so startup need not re-apply everything.

mod catalog;
mod epoch;
mod event;
mod friendship;
mod log;
mod state;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

pub use catalog::{catalog_check, Catalog, CatalogStatus};
pub use epoch::{
    epoch_file_name, latest_epoch, AdviceDoc, CategoryEpoch, CategorySongsDoc, EpochCell,
    EpochDocument, ScoreEpoch, ScorePerc, SongDoc, UserDoc,
};
pub use event::{
    new_event_json_line, parse_event_line, Action, Event, EventKind, NewEvent, ParsedLine,
};
pub use friendship::{load_friendship, parse_friendship, write_friendship};
pub use log::{read_events, EventLog, ReadLog};
pub use state::{replay, replay_onto, CategoryGraphs, MaterializedState, Validator};

use crate::model::{CategorySet, FriendshipGraph, ModelError};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error(transparent)]
    ValidationFailed(#[from] ModelError),
    #[error("storage failure: {0}")]
    StorageFailure(#[from] std::io::Error),
    #[error("corrupt event log{}{}: {reason}", .seq.map(|s| format!(" at seq {s}")).unwrap_or_default(), .line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    CorruptLog {
        seq: Option<u64>,
        line: Option<usize>,
        reason: String,
    },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: user {user} is listed as their own friend")]
    SelfLoop { line: usize, user: String },
    #[error("line {line}: {source}")]
    ImportFailed { line: usize, source: ModelError },
    #[error("bad epoch file: {0}")]
    BadEpoch(String),
    #[error("epoch {offered} is not newer than the current epoch {current}")]
    EpochOrder { current: u64, offered: u64 },
}

pub const DEFAULT_SNAPSHOT_EVERY: u64 = 10_000;

#[derive(Debug, Clone)]
pub struct StoreConfig {
    pub events_path: PathBuf,
    pub friendship_path: Option<PathBuf>,
    pub catalog_path: Option<PathBuf>,
    /// Reject votes for songs missing from the catalog.
    pub strict_catalog: bool,
    pub categories: CategorySet,
    pub snapshot_every: u64,
}

impl StoreConfig {
    /// Conventional layout of a data directory: `events.jsonl`, and
    /// `friendship.txt` / `catalog.tsv` when present.
    pub fn in_dir(dir: &Path) -> Self {
        let existing = |name: &str| Some(dir.join(name)).filter(|p| p.exists());
        StoreConfig {
            events_path: dir.join("events.jsonl"),
            friendship_path: existing("friendship.txt"),
            catalog_path: existing("catalog.tsv"),
            strict_catalog: false,
            categories: CategorySet::default(),
            snapshot_every: DEFAULT_SNAPSHOT_EVERY,
        }
    }

    pub fn snapshot_path(&self) -> PathBuf {
        let mut p = self.events_path.as_os_str().to_owned();
        p.push(".snapshot.json");
        PathBuf::from(p)
    }
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    through_seq: u64,
    state: MaterializedState,
}

/// The event log together with its materialized state.
pub struct Store {
    config: StoreConfig,
    log: EventLog,
    state: Arc<MaterializedState>,
    friends: FriendshipGraph,
    catalog: Option<Catalog>,
    last_seq: u64,
    since_snapshot: u64,
}

impl Store {
    pub fn open(config: StoreConfig) -> Result<Self, StoreError> {
        let friends = match &config.friendship_path {
            Some(p) => load_friendship(p)?,
            None => FriendshipGraph::new(),
        };
        let catalog = config
            .catalog_path
            .as_deref()
            .map(Catalog::load)
            .transpose()?;
        let read = read_events(&config.events_path)?;
        let log_last = read.events.last().map_or(0, |e| e.seq);

        // A snapshot is only a shortcut; if it is unreadable or ahead of the
        // log, fall back to a full replay.
        let snapshot = std::fs::read_to_string(config.snapshot_path())
            .ok()
            .and_then(|text| serde_json::from_str::<Snapshot>(&text).ok())
            .filter(|s| s.through_seq <= log_last);
        let (mut state, from) = match snapshot {
            Some(s) => (s.state, s.through_seq),
            None => (MaterializedState::new(), 0),
        };
        let rest = read.events.iter().filter(|e| e.seq > from);
        let last_seq = replay_onto(&mut state, from, rest)?;
        let replayed = last_seq - from;

        let log = EventLog::open(&config.events_path, read.torn_tail)?;
        Ok(Store {
            config,
            log,
            state: Arc::new(state),
            friends,
            catalog,
            last_seq,
            since_snapshot: replayed,
        })
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn state(&self) -> &MaterializedState {
        &self.state
    }

    /// A shared handle to the current state; later appends copy on write.
    pub fn shared_state(&self) -> Arc<MaterializedState> {
        Arc::clone(&self.state)
    }

    pub fn friends(&self) -> &FriendshipGraph {
        &self.friends
    }

    pub fn catalog(&self) -> Option<&Catalog> {
        self.catalog.as_ref()
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    fn validator(&self) -> Validator<'_> {
        Validator {
            categories: &self.config.categories,
            friends: &self.friends,
            catalog: self.catalog.as_ref(),
            strict_catalog: self.config.strict_catalog,
        }
    }

    /// Validates, durably logs and applies one event. Nothing is logged if
    /// validation fails.
    pub fn append(&mut self, event: NewEvent) -> Result<Event, StoreError> {
        // Validation covers every rule `apply` enforces, so an accepted event
        // always applies.
        self.validator().validate(&self.state, &event)?;
        let logged = self.sequence(event, now_ms());
        self.log.append(&logged)?;
        let new = NewEvent {
            ts: Some(logged.ts),
            category: logged.category.clone(),
            actor: logged.actor.clone(),
            action: logged.action.clone(),
        };
        Arc::make_mut(&mut self.state).apply(&new)?;
        self.last_seq = logged.seq;
        self.after_write(1)?;
        Ok(logged)
    }

    /// All-or-nothing bulk append. Each item carries the input line number
    /// reported on failure.
    pub fn import(
        &mut self,
        events: impl IntoIterator<Item = (usize, NewEvent)>,
    ) -> Result<Vec<Event>, StoreError> {
        let mut state = (*self.state).clone();
        let mut logged = Vec::new();
        let now = now_ms();
        let mut seq = self.last_seq;
        for (line, event) in events {
            let fail = |source| StoreError::ImportFailed { line, source };
            self.validator().validate(&state, &event).map_err(fail)?;
            state.apply(&event).map_err(fail)?;
            seq += 1;
            let ts = event.ts.unwrap_or(now);
            logged.push(Event {
                seq,
                ts,
                category: event.category,
                actor: event.actor,
                action: event.action,
            });
        }
        self.log.append_all(&logged)?;
        self.state = Arc::new(state);
        self.last_seq = seq;
        self.after_write(logged.len() as u64)?;
        Ok(logged)
    }

    fn sequence(&self, event: NewEvent, now: i64) -> Event {
        Event {
            seq: self.last_seq + 1,
            ts: event.ts.unwrap_or(now),
            category: event.category,
            actor: event.actor,
            action: event.action,
        }
    }

    fn after_write(&mut self, count: u64) -> Result<(), StoreError> {
        self.since_snapshot += count;
        if self.config.snapshot_every > 0 && self.since_snapshot >= self.config.snapshot_every {
            self.snapshot()?;
        }
        Ok(())
    }

    /// Writes the materialized state next to the log.
    pub fn snapshot(&mut self) -> Result<(), StoreError> {
        #[derive(Serialize)]
        struct SnapshotRef<'a> {
            through_seq: u64,
            state: &'a MaterializedState,
        }
        let text = serde_json::to_vec(&SnapshotRef {
            through_seq: self.last_seq,
            state: &self.state,
        })
        .map_err(std::io::Error::other)?;
        epoch::write_atomically(&self.config.snapshot_path(), &text)?;
        self.since_snapshot = 0;
        Ok(())
    }
}

pub fn now_ms() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as i64)
}
