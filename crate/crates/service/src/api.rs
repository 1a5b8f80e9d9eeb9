//! HTTP routes.

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use liquidrec_core::model::{canonicalize_song, Advice, Category, ModelError, UserId};
use liquidrec_core::recommend::{combined_score, friend_experts, user_insights, Delta};
use liquidrec_core::store::{
    catalog_check, Action, CatalogStatus, NewEvent, ScoreEpoch, StoreError,
};

use crate::app::AppState;

pub const USER_HEADER: &str = "x-user-id";
pub const EPOCH_HEADER: &str = "x-epoch-id";
pub const DEFAULT_LIMIT: usize = 20;
pub const MAX_LIMIT: usize = 100;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/categories", get(categories))
        .route(
            "/api/categories/{c}/delegation",
            put(put_delegation)
                .delete(delete_delegation)
                .get(get_delegation),
        )
        .route(
            "/api/categories/{c}/votes",
            post(post_vote).delete(delete_vote).get(get_votes),
        )
        .route("/api/categories/{c}/ranking", get(ranking))
        .route(
            "/api/categories/{c}/ranking/personal",
            get(personal_ranking),
        )
        .route("/api/me/insights", get(insights))
        .route("/api/me/friends", get(friends))
        .route("/api/me/friends/experts", get(experts))
        .route("/api/catalog/check", get(catalog))
        .route("/api/admin/recompute", post(admin_recompute))
        .with_state(state)
}

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    MissingIdentity,
    UnknownCategory(String),
    StaleEpoch { requested: u64, current: u64 },
    Model(ModelError),
    Internal(String),
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::ValidationFailed(m) => ApiError::Model(m),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code, message) = match self {
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, "BadRequest", m),
            ApiError::MissingIdentity => (
                StatusCode::UNAUTHORIZED,
                "MissingIdentity",
                format!("the {USER_HEADER} header is required"),
            ),
            ApiError::UnknownCategory(c) => (
                StatusCode::NOT_FOUND,
                "UnknownCategory",
                format!("unknown category {c:?}"),
            ),
            ApiError::StaleEpoch { requested, current } => (
                StatusCode::CONFLICT,
                "StaleEpoch",
                format!("epoch {requested} is no longer served; current epoch is {current}"),
            ),
            ApiError::Model(e) => (StatusCode::UNPROCESSABLE_ENTITY, e.code(), e.to_string()),
            ApiError::Internal(m) => {
                tracing::error!(error = %m, "request failed");
                (StatusCode::INTERNAL_SERVER_ERROR, "StorageFailure", m)
            }
        };
        (status, Json(json!({ "error": code, "message": message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn identity(headers: &HeaderMap) -> ApiResult<UserId> {
    let raw = headers.get(USER_HEADER).ok_or(ApiError::MissingIdentity)?;
    let text = raw
        .to_str()
        .map_err(|_| ApiError::BadRequest(format!("{USER_HEADER} is not valid text")))?;
    UserId::new(text.trim()).map_err(|e| ApiError::BadRequest(e.to_string()))
}

fn category(state: &AppState, name: &str) -> ApiResult<Category> {
    state
        .parse_category(name)
        .ok_or_else(|| ApiError::UnknownCategory(name.to_string()))
}

fn body<T: DeserializeOwned>(bytes: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(bytes).map_err(|e| ApiError::BadRequest(format!("malformed body: {e}")))
}

fn query_param<T: std::str::FromStr>(
    q: &HashMap<String, String>,
    key: &str,
) -> ApiResult<Option<T>> {
    q.get(key)
        .map(|v| {
            v.parse()
                .map_err(|_| ApiError::BadRequest(format!("bad value for `{key}`: {v:?}")))
        })
        .transpose()
}

struct Page {
    offset: usize,
    limit: usize,
}

fn page(q: &HashMap<String, String>) -> ApiResult<Page> {
    Ok(Page {
        offset: query_param(q, "offset")?.unwrap_or(0),
        limit: query_param::<usize>(q, "limit")?
            .unwrap_or(DEFAULT_LIMIT)
            .min(MAX_LIMIT),
    })
}

/// The current epoch, or 409 if the client pinned a different one.
fn pinned_epoch(state: &AppState, q: &HashMap<String, String>) -> ApiResult<Arc<ScoreEpoch>> {
    let epoch = state.current_epoch();
    if let Some(requested) = query_param::<u64>(q, "epoch")? {
        if requested != epoch.epoch_id {
            return Err(ApiError::StaleEpoch {
                requested,
                current: epoch.epoch_id,
            });
        }
    }
    Ok(epoch)
}

fn with_epoch<T: Serialize>(epoch: &ScoreEpoch, value: T) -> Response {
    let mut response = Json(value).into_response();
    response
        .headers_mut()
        .insert(EPOCH_HEADER, HeaderValue::from(epoch.epoch_id));
    response
}

async fn categories(State(state): State<Arc<AppState>>) -> Json<Vec<String>> {
    Json(
        state
            .config
            .categories
            .iter()
            .map(ToString::to_string)
            .collect(),
    )
}

#[derive(Deserialize)]
struct DelegationBody {
    to: String,
}

async fn put_delegation(
    State(state): State<Arc<AppState>>,
    Path(c): Path<String>,
    headers: HeaderMap,
    bytes: Bytes,
) -> ApiResult<StatusCode> {
    let user = identity(&headers)?;
    let category = category(&state, &c)?;
    let b: DelegationBody = body(&bytes)?;
    let target = UserId::new(b.to.trim()).map_err(ApiError::Model)?;
    state
        .append(NewEvent::new(category, user, Action::Delegate { target }))
        .await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn delete_delegation(
    State(state): State<Arc<AppState>>,
    Path(c): Path<String>,
    headers: HeaderMap,
) -> ApiResult<StatusCode> {
    let user = identity(&headers)?;
    let category = category(&state, &c)?;
    state
        .append(NewEvent::new(category, user, Action::Undelegate))
        .await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn get_delegation(
    State(state): State<Arc<AppState>>,
    Path(c): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Json<serde_json::Value>> {
    let user = identity(&headers)?;
    let category = category(&state, &c)?;
    let to = state.with_store(|s| {
        s.state()
            .graphs(&category)
            .and_then(|g| g.delegations.delegate_of(&user).cloned())
    });
    Ok(Json(json!({ "to": to })))
}

#[derive(Deserialize)]
struct VoteBody {
    artist: String,
    title: String,
    media: String,
}

#[derive(Deserialize)]
struct UnvoteBody {
    artist: String,
    title: String,
}

async fn post_vote(
    State(state): State<Arc<AppState>>,
    Path(c): Path<String>,
    headers: HeaderMap,
    bytes: Bytes,
) -> ApiResult<StatusCode> {
    let user = identity(&headers)?;
    let category = category(&state, &c)?;
    let b: VoteBody = body(&bytes)?;
    let song = canonicalize_song(&b.artist, &b.title).map_err(ApiError::Model)?;
    let advice = Advice::new(song, b.media.trim()).map_err(ApiError::Model)?;
    state
        .append(NewEvent::new(category, user, Action::Vote(advice)))
        .await?;
    Ok(StatusCode::CREATED)
}

async fn delete_vote(
    State(state): State<Arc<AppState>>,
    Path(c): Path<String>,
    headers: HeaderMap,
    bytes: Bytes,
) -> ApiResult<StatusCode> {
    let user = identity(&headers)?;
    let category = category(&state, &c)?;
    let b: UnvoteBody = body(&bytes)?;
    let song = canonicalize_song(&b.artist, &b.title).map_err(ApiError::Model)?;
    state
        .append(NewEvent::new(category, user, Action::Unvote(song)))
        .await?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Serialize)]
struct SongItem {
    artist: String,
    title: String,
    media: String,
}

async fn get_votes(
    State(state): State<Arc<AppState>>,
    Path(c): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Json<Vec<SongItem>>> {
    let user = identity(&headers)?;
    let category = category(&state, &c)?;
    let votes = state.with_store(|s| {
        s.state()
            .graphs(&category)
            .map(|g| {
                g.votes
                    .votes(&user)
                    .iter()
                    .map(|a| SongItem {
                        artist: a.song.artist().to_string(),
                        title: a.song.title().to_string(),
                        media: a.media_ref.clone(),
                    })
                    .collect()
            })
            .unwrap_or_default()
    });
    Ok(Json(votes))
}

#[derive(Serialize)]
struct RankItem {
    artist: String,
    title: String,
    media: String,
    rank: f64,
}

async fn ranking(
    State(state): State<Arc<AppState>>,
    Path(c): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let category = category(&state, &c)?;
    let page = page(&q)?;
    let epoch = pinned_epoch(&state, &q)?;
    let items: Vec<RankItem> = epoch
        .category(&category)
        .map(|t| {
            t.songs
                .entries()
                .iter()
                .skip(page.offset)
                .take(page.limit)
                .map(|e| RankItem {
                    artist: e.song.artist().to_string(),
                    title: e.song.title().to_string(),
                    media: e.media_ref.clone(),
                    rank: e.r,
                })
                .collect()
        })
        .unwrap_or_default();
    Ok(with_epoch(&epoch, items))
}

#[derive(Serialize)]
struct PersonalItem {
    artist: String,
    title: String,
    media: String,
    score: f64,
}

async fn personal_ranking(
    State(state): State<Arc<AppState>>,
    Path(c): Path<String>,
    headers: HeaderMap,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let user = identity(&headers)?;
    let category = category(&state, &c)?;
    let delta = match query_param::<f64>(&q, "delta")? {
        Some(d) => Delta::new(d).map_err(|e| ApiError::BadRequest(e.to_string()))?,
        None => state.config.delta,
    };
    let page = page(&q)?;
    let epoch = pinned_epoch(&state, &q)?;
    let Some(tables) = epoch.category(&category) else {
        return Ok(with_epoch(&epoch, Vec::<PersonalItem>::new()));
    };
    let personalized = state.personalized(&epoch, tables, &user, &category, delta);
    let items: Vec<PersonalItem> = Arc::clone(&personalized.head)
        .stream(&tables.songs)
        .skip(page.offset)
        .take(page.limit)
        .map(|ranked| {
            let media = tables
                .songs
                .get(&ranked.song)
                .map(|e| e.media_ref.clone())
                .or_else(|| personalized.weights.media(&ranked.song).map(str::to_string))
                .unwrap_or_default();
            PersonalItem {
                artist: ranked.song.artist().to_string(),
                title: ranked.song.title().to_string(),
                media,
                score: combined_score(&ranked.song, &personalized.weights, &tables.songs, delta),
            }
        })
        .collect();
    Ok(with_epoch(&epoch, items))
}

#[derive(Serialize)]
struct InsightItem {
    category: String,
    score: f64,
    percentile: f64,
}

async fn insights(State(state): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult<Response> {
    let user = identity(&headers)?;
    let epoch = state.current_epoch();
    let items: Vec<InsightItem> = user_insights(&user, epoch.categories().map(|(_, t)| &t.users))
        .into_iter()
        .map(|i| InsightItem {
            category: i.category.to_string(),
            score: i.score,
            percentile: i.percentile,
        })
        .collect();
    Ok(with_epoch(&epoch, items))
}

async fn friends(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
) -> ApiResult<Json<Vec<UserId>>> {
    let user = identity(&headers)?;
    Ok(Json(state.with_store(|s| {
        s.friends().friends_of(&user).cloned().collect()
    })))
}

#[derive(Serialize)]
struct ExpertItem {
    user: UserId,
    percentile: f64,
}

async fn experts(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let user = identity(&headers)?;
    let name = q
        .get("category")
        .ok_or_else(|| ApiError::BadRequest("`category` is required".into()))?;
    let category = category(&state, name)?;
    let epoch = state.current_epoch();
    let items: Vec<ExpertItem> = match epoch.category(&category) {
        Some(t) => state.with_store(|s| friend_experts(&user, s.friends(), &t.users)),
        None => Vec::new(),
    }
    .into_iter()
    .map(|(user, percentile)| ExpertItem { user, percentile })
    .collect();
    Ok(with_epoch(&epoch, items))
}

async fn catalog(
    State(state): State<Arc<AppState>>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<serde_json::Value>> {
    let field = |k: &str| {
        q.get(k)
            .ok_or_else(|| ApiError::BadRequest(format!("`{k}` is required")))
    };
    let song = canonicalize_song(field("artist")?, field("title")?).map_err(ApiError::Model)?;
    let status = state.with_store(|s| catalog_check(&song, s.catalog()));
    let status = match status {
        CatalogStatus::Known => "known",
        CatalogStatus::Unknown => "unknown",
    };
    Ok(Json(json!({ "status": status })))
}

async fn admin_recompute(State(state): State<Arc<AppState>>) -> ApiResult<Json<serde_json::Value>> {
    let epoch = state.recompute_all().await?;
    Ok(Json(json!({ "epoch_id": epoch.epoch_id })))
}
