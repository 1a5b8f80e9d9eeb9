//! LRU cache of personalized stream heads.

use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use liquidrec_core::model::{Category, UserId};
use liquidrec_core::recommend::{Delta, PersonalWeights, PersonalizedHead};
use lru::LruCache;
use parking_lot::Mutex;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub user: UserId,
    pub category: Category,
    delta_bits: u64,
    pub epoch_id: u64,
}

impl CacheKey {
    pub fn new(user: UserId, category: Category, delta: Delta, epoch_id: u64) -> Self {
        CacheKey {
            user,
            category,
            delta_bits: delta.value().to_bits(),
            epoch_id,
        }
    }
}

/// What a personalized page needs besides the epoch's song table.
#[derive(Debug)]
pub struct Personalized {
    pub weights: PersonalWeights,
    pub head: Arc<PersonalizedHead>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub len: usize,
}

pub struct PersonalCache {
    entries: Mutex<LruCache<CacheKey, Arc<Personalized>>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl PersonalCache {
    pub fn new(capacity: usize) -> Self {
        let capacity = NonZeroUsize::new(capacity).unwrap_or(NonZeroUsize::MIN);
        PersonalCache {
            entries: Mutex::new(LruCache::new(capacity)),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    /// Returns the cached value for `key`, computing and storing it on a miss.
    /// `compute` runs without the lock held.
    pub fn get_or_compute(
        &self,
        key: CacheKey,
        compute: impl FnOnce() -> Personalized,
    ) -> Arc<Personalized> {
        if let Some(hit) = self.entries.lock().get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Arc::clone(hit);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let value = Arc::new(compute());
        self.entries.lock().put(key, Arc::clone(&value));
        value
    }

    /// Drops entries of every epoch other than `epoch_id`.
    pub fn retain_epoch(&self, epoch_id: u64) {
        let mut entries = self.entries.lock();
        let stale: Vec<CacheKey> = entries
            .iter()
            .filter(|(k, _)| k.epoch_id != epoch_id)
            .map(|(k, _)| k.clone())
            .collect();
        for k in stale {
            entries.pop(&k);
        }
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            len: self.entries.lock().len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use liquidrec_core::model::{DelegationGraph, VoteGraph};
    use liquidrec_core::recommend::{personal_weights, SongScoreTable};
    use liquidrec_core::viscous::Alpha;

    fn key(user: &str, epoch: u64) -> CacheKey {
        CacheKey::new(
            UserId::new(user).unwrap(),
            Category::new("jazz").unwrap(),
            Delta::DEFAULT,
            epoch,
        )
    }

    fn value(user: &str) -> Personalized {
        let jazz = Category::new("jazz").unwrap();
        let weights = personal_weights(
            &UserId::new(user).unwrap(),
            &DelegationGraph::new(jazz.clone()),
            &VoteGraph::new(jazz.clone()),
            Alpha::DEFAULT,
        );
        let head = PersonalizedHead::build(&weights, &SongScoreTable::empty(jazz), Delta::DEFAULT);
        Personalized {
            weights,
            head: Arc::new(head),
        }
    }

    #[test]
    fn second_identical_request_hits() {
        let cache = PersonalCache::new(8);
        cache.get_or_compute(key("A", 1), || value("A"));
        cache.get_or_compute(key("A", 1), || panic!("should be cached"));
        assert_eq!(
            cache.stats(),
            CacheStats {
                hits: 1,
                misses: 1,
                len: 1
            }
        );
    }

    #[test]
    fn new_epoch_recomputes() {
        let cache = PersonalCache::new(8);
        cache.get_or_compute(key("A", 1), || value("A"));
        cache.get_or_compute(key("A", 2), || value("A"));
        assert_eq!(cache.stats().misses, 2);
        cache.retain_epoch(2);
        assert_eq!(cache.stats().len, 1);
    }

    #[test]
    fn capacity_one_evicts_least_recent() {
        let cache = PersonalCache::new(1);
        cache.get_or_compute(key("A", 1), || value("A"));
        cache.get_or_compute(key("B", 1), || value("B"));
        cache.get_or_compute(key("A", 1), || value("A"));
        assert_eq!(
            cache.stats(),
            CacheStats {
                hits: 0,
                misses: 3,
                len: 1
            }
        );
    }
}
