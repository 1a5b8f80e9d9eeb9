//! Published results of a global recompute.
//!
//! An epoch is immutable once published. Readers grab the current epoch
//! through [`EpochCell`] without locking and keep it alive for as long as they
//! hold the `Arc`, so a reader always sees one complete epoch.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use arc_swap::ArcSwap;
use serde::{Deserialize, Serialize};

use super::state::MaterializedState;
use super::StoreError;
use crate::model::{canonicalize_song, Category, CategorySet, UserId};
use crate::recommend::{SongEntry, SongScoreTable};
use crate::viscous::{Alpha, Engine, UserScoreTable};

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryEpoch {
    pub users: UserScoreTable,
    pub songs: SongScoreTable,
}

impl CategoryEpoch {
    pub fn empty(category: &Category, alpha: Alpha) -> Self {
        CategoryEpoch {
            users: UserScoreTable::empty(category.clone(), alpha),
            songs: SongScoreTable::empty(category.clone()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScoreEpoch {
    pub epoch_id: u64,
    /// UTC milliseconds.
    pub created_at: i64,
    pub alpha: Alpha,
    pub engine: Engine,
    /// Last event sequence number included.
    pub through_seq: u64,
    categories: BTreeMap<Category, Arc<CategoryEpoch>>,
    /// The graphs the epoch was computed from, when kept in memory.
    graphs: Option<Arc<MaterializedState>>,
}

impl ScoreEpoch {
    pub fn new(
        epoch_id: u64,
        created_at: i64,
        alpha: Alpha,
        engine: Engine,
        through_seq: u64,
        categories: BTreeMap<Category, Arc<CategoryEpoch>>,
        graphs: Option<Arc<MaterializedState>>,
    ) -> Self {
        ScoreEpoch {
            epoch_id,
            created_at,
            alpha,
            engine,
            through_seq,
            categories,
            graphs,
        }
    }

    /// Epoch 0: every configured category with empty tables.
    pub fn empty(categories: &CategorySet, alpha: Alpha) -> Self {
        let tables = categories
            .iter()
            .map(|c| (c.clone(), Arc::new(CategoryEpoch::empty(c, alpha))))
            .collect();
        ScoreEpoch::new(0, 0, alpha, Engine::Exact, 0, tables, None)
    }

    pub fn category(&self, category: &Category) -> Option<&Arc<CategoryEpoch>> {
        self.categories.get(category)
    }

    pub fn categories(&self) -> impl Iterator<Item = (&Category, &Arc<CategoryEpoch>)> {
        self.categories.iter()
    }

    pub fn graphs(&self) -> Option<&Arc<MaterializedState>> {
        self.graphs.as_ref()
    }

    pub fn to_document(&self) -> EpochDocument {
        let mut songs = BTreeMap::new();
        let mut users: BTreeMap<UserId, BTreeMap<String, ScorePerc>> = BTreeMap::new();
        for (category, tables) in &self.categories {
            let items = tables
                .songs
                .entries()
                .iter()
                .map(|e| SongDoc {
                    advice: AdviceDoc {
                        artist: e.song.artist().to_string(),
                        title: e.song.title().to_string(),
                        media: e.media_ref.clone(),
                    },
                    rank: e.r,
                })
                .collect();
            songs.insert(
                category.to_string(),
                CategorySongsDoc {
                    max_rank: tables.songs.r_max(),
                    items,
                },
            );
            for (u, score, perc) in tables.users.entries() {
                users
                    .entry(u.clone())
                    .or_default()
                    .insert(category.to_string(), ScorePerc { score, perc });
            }
        }
        EpochDocument {
            epoch_id: self.epoch_id,
            created_at: self.created_at,
            alpha: self.alpha.value(),
            engine: self.engine,
            through_seq: self.through_seq,
            categories: self.categories.keys().map(ToString::to_string).collect(),
            songs,
            users: users
                .into_iter()
                .map(|(id, categories)| UserDoc { id, categories })
                .collect(),
        }
    }

    pub fn from_document(doc: EpochDocument) -> Result<Self, StoreError> {
        let bad = |reason: String| StoreError::BadEpoch(reason);
        let alpha = Alpha::new(doc.alpha).map_err(|e| bad(e.to_string()))?;
        let mut user_rows: BTreeMap<String, Vec<(UserId, f64, f64)>> = BTreeMap::new();
        for user in doc.users {
            for (category, sp) in user.categories {
                user_rows
                    .entry(category)
                    .or_default()
                    .push((user.id.clone(), sp.score, sp.perc));
            }
        }
        let mut categories = BTreeMap::new();
        for name in doc.categories {
            let category = Category::new(name.clone()).map_err(|e| bad(e.to_string()))?;
            let entries = match doc.songs.get(&name) {
                Some(songs) => songs
                    .items
                    .iter()
                    .map(|s| {
                        Ok(SongEntry {
                            song: canonicalize_song(&s.advice.artist, &s.advice.title)
                                .map_err(|e| bad(e.to_string()))?,
                            media_ref: s.advice.media.clone(),
                            r: s.rank,
                        })
                    })
                    .collect::<Result<Vec<_>, StoreError>>()?,
                None => Vec::new(),
            };
            let users = UserScoreTable::from_parts(
                category.clone(),
                alpha,
                user_rows.remove(&name).unwrap_or_default(),
            );
            let songs = SongScoreTable::from_entries(category.clone(), entries);
            categories.insert(category, Arc::new(CategoryEpoch { users, songs }));
        }
        if let Some(stray) = user_rows.keys().next() {
            return Err(bad(format!("user scores for unlisted category {stray:?}")));
        }
        Ok(ScoreEpoch::new(
            doc.epoch_id,
            doc.created_at,
            alpha,
            doc.engine,
            doc.through_seq,
            categories,
            None,
        ))
    }

    pub fn write_json(&self, path: &Path) -> Result<(), StoreError> {
        let text = serde_json::to_string_pretty(&self.to_document())
            .map_err(|e| StoreError::BadEpoch(e.to_string()))?;
        write_atomically(path, text.as_bytes())
    }

    pub fn read_json(path: &Path) -> Result<Self, StoreError> {
        let text = fs::read_to_string(path)?;
        let doc: EpochDocument =
            serde_json::from_str(&text).map_err(|e| StoreError::BadEpoch(e.to_string()))?;
        ScoreEpoch::from_document(doc)
    }
}

/// JSON shape of a persisted epoch. Songs mirror `{advice, rank}` documents
/// per category; users mirror `{_id, <category>: {score, perc}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochDocument {
    pub epoch_id: u64,
    pub created_at: i64,
    pub alpha: f64,
    pub engine: Engine,
    #[serde(default)]
    pub through_seq: u64,
    pub categories: Vec<String>,
    pub songs: BTreeMap<String, CategorySongsDoc>,
    pub users: Vec<UserDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySongsDoc {
    pub max_rank: f64,
    pub items: Vec<SongDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SongDoc {
    pub advice: AdviceDoc,
    pub rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdviceDoc {
    pub artist: String,
    pub title: String,
    pub media: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserDoc {
    #[serde(rename = "_id")]
    pub id: UserId,
    #[serde(flatten)]
    pub categories: BTreeMap<String, ScorePerc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorePerc {
    pub score: f64,
    pub perc: f64,
}

pub(crate) fn write_atomically(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        std::io::Write::write_all(&mut f, bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// File name of epoch `id` inside an epochs directory.
pub fn epoch_file_name(id: u64) -> String {
    format!("epoch-{id:06}.json")
}

/// Loads the highest-numbered epoch in `dir`, if any.
pub fn latest_epoch(dir: &Path) -> Result<Option<ScoreEpoch>, StoreError> {
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let mut best: Option<(u64, PathBuf)> = None;
    for entry in entries {
        let path = entry?.path();
        let id = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("epoch-"))
            .and_then(|n| n.strip_suffix(".json"))
            .and_then(|n| n.parse::<u64>().ok());
        if let Some(id) = id {
            if best.as_ref().is_none_or(|(b, _)| id > *b) {
                best = Some((id, path));
            }
        }
    }
    best.map(|(_, p)| ScoreEpoch::read_json(&p)).transpose()
}

/// Holder of the current epoch. Reads are lock-free; publishing swaps the
/// pointer atomically.
pub struct EpochCell {
    current: ArcSwap<ScoreEpoch>,
    publish: Mutex<()>,
}

impl EpochCell {
    pub fn new(initial: ScoreEpoch) -> Self {
        EpochCell {
            current: ArcSwap::from_pointee(initial),
            publish: Mutex::new(()),
        }
    }

    pub fn current(&self) -> Arc<ScoreEpoch> {
        self.current.load_full()
    }

    /// Replaces the current epoch. Ids must strictly increase.
    pub fn publish(&self, epoch: ScoreEpoch) -> Result<Arc<ScoreEpoch>, StoreError> {
        let _guard = self.publish.lock().unwrap_or_else(|e| e.into_inner());
        let current = self.current.load().epoch_id;
        if epoch.epoch_id <= current {
            return Err(StoreError::EpochOrder {
                current,
                offered: epoch.epoch_id,
            });
        }
        let next = Arc::new(epoch);
        self.current.store(Arc::clone(&next));
        Ok(next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::canonicalize_song;
    use std::collections::HashMap;
    use std::sync::atomic::{AtomicBool, Ordering};
    use std::thread;

    fn sample(id: u64) -> ScoreEpoch {
        let cats = CategorySet::default();
        let alpha = Alpha::new(0.5).unwrap();
        let mut epoch = ScoreEpoch::empty(&cats, alpha);
        let jazz = cats.parse("jazz").unwrap();
        let songs = SongScoreTable::from_entries(
            jazz.clone(),
            vec![
                SongEntry {
                    song: canonicalize_song("a", "s1").unwrap(),
                    media_ref: "m1".into(),
                    r: 2.5,
                },
                SongEntry {
                    song: canonicalize_song("a", "s2").unwrap(),
                    media_ref: "m2".into(),
                    r: 3.25,
                },
            ],
        );
        let scores: HashMap<UserId, f64> = [("A", 1.0), ("B", 1.5), ("C", 1.75)]
            .iter()
            .map(|(u, s)| (UserId::new(*u).unwrap(), *s))
            .collect();
        let active = scores.keys().cloned().collect();
        let users = UserScoreTable::build(jazz.clone(), alpha, scores, &active);
        epoch
            .categories
            .insert(jazz, Arc::new(CategoryEpoch { users, songs }));
        epoch.epoch_id = id;
        epoch.created_at = 1234;
        epoch
    }

    #[test]
    fn document_round_trip() {
        let e = sample(3);
        let doc = e.to_document();
        let json = serde_json::to_value(&doc).unwrap();
        assert_eq!(json["songs"]["jazz"]["items"][0]["rank"], 3.25);
        assert_eq!(json["songs"]["jazz"]["items"][0]["advice"]["title"], "s2");
        assert_eq!(json["songs"]["jazz"]["max_rank"], 3.25);
        assert_eq!(json["users"][2]["_id"], "C");
        assert_eq!(json["users"][2]["jazz"]["score"], 1.75);
        assert!(json["users"][2]["jazz"]["perc"].as_f64().unwrap() > 66.6);

        let back = ScoreEpoch::from_document(doc.clone()).unwrap();
        assert_eq!(back.to_document(), doc);
        assert_eq!(back.categories().count(), 9);
    }

    #[test]
    fn write_and_find_latest() {
        let dir = tempfile::tempdir().unwrap();
        assert!(latest_epoch(dir.path()).unwrap().is_none());
        sample(1)
            .write_json(&dir.path().join(epoch_file_name(1)))
            .unwrap();
        sample(12)
            .write_json(&dir.path().join(epoch_file_name(12)))
            .unwrap();
        let latest = latest_epoch(dir.path()).unwrap().unwrap();
        assert_eq!(latest.epoch_id, 12);
    }

    #[test]
    fn cold_start_is_epoch_zero() {
        let cell = EpochCell::new(ScoreEpoch::empty(&CategorySet::default(), Alpha::DEFAULT));
        let e = cell.current();
        assert_eq!(e.epoch_id, 0);
        assert_eq!(e.categories().count(), 9);
        assert!(e
            .categories()
            .all(|(_, t)| t.songs.is_empty() && t.users.is_empty()));
    }

    #[test]
    fn publish_then_read_and_reject_stale_ids() {
        let cell = EpochCell::new(ScoreEpoch::empty(&CategorySet::default(), Alpha::DEFAULT));
        cell.publish(sample(1)).unwrap();
        assert_eq!(cell.current().epoch_id, 1);
        assert!(matches!(
            cell.publish(sample(1)),
            Err(StoreError::EpochOrder {
                current: 1,
                offered: 1
            })
        ));
        assert_eq!(cell.current().epoch_id, 1);
    }

    #[test]
    fn concurrent_readers_see_whole_epochs() {
        // Each epoch stores its own id as the score of user "A" in jazz; a
        // reader seeing a mismatch would have observed a mixed epoch.
        fn stamped(id: u64) -> ScoreEpoch {
            let mut e = sample(id);
            let jazz = Category::new("jazz").unwrap();
            let users = UserScoreTable::from_parts(
                jazz.clone(),
                e.alpha,
                [(UserId::new("A").unwrap(), id as f64, 0.0)],
            );
            let songs = e.categories[&jazz].songs.clone();
            e.categories
                .insert(jazz, Arc::new(CategoryEpoch { users, songs }));
            e
        }
        let cell = Arc::new(EpochCell::new(stamped(0)));
        let done = Arc::new(AtomicBool::new(false));
        let readers: Vec<_> = (0..4)
            .map(|_| {
                let cell = Arc::clone(&cell);
                let done = Arc::clone(&done);
                thread::spawn(move || {
                    let jazz = Category::new("jazz").unwrap();
                    let a = UserId::new("A").unwrap();
                    let mut last = 0;
                    let mut reads = 0u64;
                    loop {
                        let stop = done.load(Ordering::Relaxed);
                        let e = cell.current();
                        let stamp = e.category(&jazz).unwrap().users.score(&a).unwrap();
                        assert_eq!(stamp, e.epoch_id as f64);
                        assert!(e.epoch_id >= last);
                        last = e.epoch_id;
                        reads += 1;
                        if stop {
                            break;
                        }
                    }
                    reads
                })
            })
            .collect();
        for id in 1..=300 {
            cell.publish(stamped(id)).unwrap();
        }
        done.store(true, Ordering::Relaxed);
        for r in readers {
            assert!(r.join().unwrap() > 0);
        }
        assert_eq!(cell.current().epoch_id, 300);
    }
}
