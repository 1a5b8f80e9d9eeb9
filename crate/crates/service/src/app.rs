use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use liquidrec_core::model::{Category, DelegationGraph, UserId, VoteGraph};
use liquidrec_core::pipeline::{recompute, RecomputeParams};
use liquidrec_core::recommend::{personal_weights, Delta, PersonalizedHead};
use liquidrec_core::store::now_ms;
use liquidrec_core::store::{
    epoch_file_name, latest_epoch, CategoryEpoch, EpochCell, Event, NewEvent, ScoreEpoch, Store,
    StoreError,
};
use parking_lot::Mutex;

use crate::cache::{CacheKey, CacheStats, PersonalCache, Personalized};
use crate::config::ServiceConfig;

/// Shared state behind every handler.
pub struct AppState {
    pub config: ServiceConfig,
    store: Mutex<Store>,
    epochs: EpochCell,
    cache: PersonalCache,
    recompute_lock: tokio::sync::Mutex<()>,
    requested: AtomicU64,
    served: AtomicU64,
}

impl AppState {
    /// Opens the store and starts from epoch 0, numbering later epochs after
    /// the newest one found in the epochs directory.
    pub fn open(config: ServiceConfig) -> Result<Arc<Self>, StoreError> {
        let store = Store::open(config.store_config())?;
        let mut initial = ScoreEpoch::empty(&config.categories, config.alpha);
        if let Some(dir) = &config.epochs_dir {
            if let Some(latest) = latest_epoch(dir)? {
                // Only its id is reused; its tables may predate the log.
                initial.epoch_id = latest.epoch_id;
            }
        }
        Ok(Arc::new(AppState {
            cache: PersonalCache::new(config.cache_capacity),
            config,
            store: Mutex::new(store),
            epochs: EpochCell::new(initial),
            recompute_lock: tokio::sync::Mutex::new(()),
            requested: AtomicU64::new(0),
            served: AtomicU64::new(0),
        }))
    }

    pub fn current_epoch(&self) -> Arc<ScoreEpoch> {
        self.epochs.current()
    }

    pub fn cache_stats(&self) -> CacheStats {
        self.cache.stats()
    }

    pub fn parse_category(&self, name: &str) -> Option<Category> {
        self.config
            .categories
            .parse(name)
            .ok()
            .filter(|c| self.config.categories.contains(c))
    }

    /// Validates and durably appends one event on a blocking thread.
    pub async fn append(self: &Arc<Self>, event: NewEvent) -> Result<Event, StoreError> {
        let this = Arc::clone(self);
        tokio::task::spawn_blocking(move || this.store.lock().append(event))
            .await
            .expect("append task panicked")
    }

    pub fn with_store<T>(&self, f: impl FnOnce(&Store) -> T) -> T {
        f(&self.store.lock())
    }

    /// Recomputes every category and publishes the result. Concurrent calls
    /// coalesce: a caller whose request is covered by a run that started after
    /// it arrived gets that run's epoch.
    pub async fn recompute_all(self: &Arc<Self>) -> Result<Arc<ScoreEpoch>, StoreError> {
        let ticket = self.requested.fetch_add(1, Ordering::SeqCst) + 1;
        let _running = self.recompute_lock.lock().await;
        if self.served.load(Ordering::SeqCst) >= ticket {
            return Ok(self.epochs.current());
        }
        let covers = self.requested.load(Ordering::SeqCst);
        let (state, through_seq) = {
            let store = self.store.lock();
            (store.shared_state(), store.last_seq())
        };
        let previous = self.epochs.current();
        let params = RecomputeParams::new(self.config.alpha, self.config.engine);
        let categories = self.config.categories.clone();
        let epochs_dir = self.config.epochs_dir.clone();
        let out = tokio::task::spawn_blocking(move || {
            let out = recompute(
                state,
                &categories,
                &params,
                previous.epoch_id + 1,
                now_ms(),
                through_seq,
                Some(&previous),
            );
            if let Some(dir) = epochs_dir {
                write_epoch(&dir, &out.epoch)?;
            }
            Ok::<_, StoreError>(out)
        })
        .await
        .expect("recompute task panicked")?;
        for (category, error) in &out.failures {
            tracing::warn!(%category, %error, "category kept its previous tables");
        }
        let published = self.epochs.publish(out.epoch)?;
        self.cache.retain_epoch(published.epoch_id);
        self.served.store(covers, Ordering::SeqCst);
        tracing::info!(epoch = published.epoch_id, through_seq, "published epoch");
        Ok(published)
    }

    /// Cached personalized head of `user` in one category of `epoch`.
    pub fn personalized(
        &self,
        epoch: &ScoreEpoch,
        tables: &CategoryEpoch,
        user: &UserId,
        category: &Category,
        delta: Delta,
    ) -> Arc<Personalized> {
        let key = CacheKey::new(user.clone(), category.clone(), delta, epoch.epoch_id);
        self.cache.get_or_compute(key, || {
            let graphs = epoch.graphs().and_then(|g| g.graphs(category));
            let weights = match graphs {
                Some(g) => personal_weights(user, &g.delegations, &g.votes, epoch.alpha),
                None => personal_weights(
                    user,
                    &DelegationGraph::new(category.clone()),
                    &VoteGraph::new(category.clone()),
                    epoch.alpha,
                ),
            };
            let head = PersonalizedHead::build(&weights, &tables.songs, delta);
            Personalized {
                weights,
                head: Arc::new(head),
            }
        })
    }

    pub fn snapshot(&self) -> Result<(), StoreError> {
        self.store.lock().snapshot()
    }
}

fn write_epoch(dir: &Path, epoch: &ScoreEpoch) -> Result<(), StoreError> {
    epoch.write_json(&dir.join(epoch_file_name(epoch.epoch_id)))
}
