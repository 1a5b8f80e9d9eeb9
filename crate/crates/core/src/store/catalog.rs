//! Local song catalog: one `artist<TAB>title` per line.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use super::StoreError;
use crate::model::{canonicalize_song, SongKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CatalogStatus {
    Known,
    Unknown,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Catalog {
    songs: HashSet<SongKey>,
}

impl Catalog {
    pub fn from_keys(keys: impl IntoIterator<Item = SongKey>) -> Self {
        Catalog {
            songs: keys.into_iter().collect(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, StoreError> {
        let mut songs = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parse_error = |reason: String| StoreError::Parse {
                line: i + 1,
                reason,
            };
            let (artist, title) = line
                .split_once('\t')
                .ok_or_else(|| parse_error("expected artist<TAB>title".into()))?;
            let key = canonicalize_song(artist, title).map_err(|e| parse_error(e.to_string()))?;
            songs.insert(key);
        }
        Ok(Catalog { songs })
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        Catalog::parse(&fs::read_to_string(path)?)
    }

    pub fn contains(&self, song: &SongKey) -> bool {
        self.songs.contains(song)
    }

    pub fn len(&self) -> usize {
        self.songs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.songs.is_empty()
    }
}

/// Membership test; without a catalog every song is known.
pub fn catalog_check(song: &SongKey, catalog: Option<&Catalog>) -> CatalogStatus {
    match catalog {
        Some(c) if !c.contains(song) => CatalogStatus::Unknown,
        _ => CatalogStatus::Known,
    }
}
