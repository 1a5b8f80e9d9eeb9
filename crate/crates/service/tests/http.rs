use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use liquidrec_core::store::read_events;
use liquidrec_core::store::replay;
use liquidrec_core::viscous::Alpha;
use liquidrec_service::{router, AppState, ServiceConfig};

struct Fixture {
    _dir: tempfile::TempDir,
    state: Arc<AppState>,
    app: Router,
}

struct Reply {
    status: StatusCode,
    epoch: Option<u64>,
    body: Value,
}

fn fixture_with(edit: impl FnOnce(&Path, &mut ServiceConfig)) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("friendship.txt"), "A B\nB C\nC D\n").unwrap();
    let mut config = ServiceConfig::for_data_dir(dir.path());
    config.alpha = Alpha::new(0.5).unwrap();
    edit(dir.path(), &mut config);
    let state = AppState::open(config).unwrap();
    let app = router(Arc::clone(&state));
    Fixture {
        _dir: dir,
        state,
        app,
    }
}

fn fixture() -> Fixture {
    fixture_with(|_, _| {})
}

impl Fixture {
    async fn call(
        &self,
        method: Method,
        uri: &str,
        user: Option<&str>,
        body: Option<&str>,
    ) -> Reply {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(u) = user {
            req = req.header("X-User-Id", u);
        }
        let req = match body {
            Some(b) => req
                .header("content-type", "application/json")
                .body(Body::from(b.to_string())),
            None => req.body(Body::empty()),
        }
        .unwrap();
        let res = self.app.clone().oneshot(req).await.unwrap();
        let status = res.status();
        let epoch = res
            .headers()
            .get("x-epoch-id")
            .map(|v| v.to_str().unwrap().parse().unwrap());
        let bytes = res.into_body().collect().await.unwrap().to_bytes();
        let body = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap()
        };
        Reply {
            status,
            epoch,
            body,
        }
    }

    async fn get(&self, uri: &str, user: &str) -> Reply {
        self.call(Method::GET, uri, Some(user), None).await
    }

    async fn vote(&self, user: &str, title: &str) -> Reply {
        let body =
            json!({"artist": "a", "title": title, "media": format!("m-{title}")}).to_string();
        self.call(
            Method::POST,
            "/api/categories/jazz/votes",
            Some(user),
            Some(&body),
        )
        .await
    }

    async fn delegate(&self, user: &str, to: &str) -> Reply {
        let body = json!({ "to": to }).to_string();
        self.call(
            Method::PUT,
            "/api/categories/jazz/delegation",
            Some(user),
            Some(&body),
        )
        .await
    }

    async fn recompute(&self) -> u64 {
        let r = self
            .call(Method::POST, "/api/admin/recompute", None, None)
            .await;
        assert_eq!(r.status, StatusCode::OK);
        r.body["epoch_id"].as_u64().unwrap()
    }

    /// The chain A -> B -> C with votes A: s1, B: s1 s2, C: s2.
    async fn chain(&self) {
        assert_eq!(self.delegate("A", "B").await.status, StatusCode::NO_CONTENT);
        assert_eq!(self.delegate("B", "C").await.status, StatusCode::NO_CONTENT);
        for (u, t) in [("A", "s1"), ("B", "s1"), ("B", "s2"), ("C", "s2")] {
            assert_eq!(self.vote(u, t).await.status, StatusCode::CREATED);
        }
    }
}

fn titles(body: &Value) -> Vec<&str> {
    body.as_array()
        .unwrap()
        .iter()
        .map(|i| i["title"].as_str().unwrap())
        .collect()
}

#[tokio::test]
async fn lists_configured_categories() {
    let f = fixture();
    let r = f.call(Method::GET, "/api/categories", None, None).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.body.as_array().unwrap().len(), 9);
    assert!(r.body.as_array().unwrap().contains(&json!("jazz")));
}

#[tokio::test]
async fn identity_header_is_required() {
    let f = fixture();
    let body = r#"{"artist":"a","title":"b","media":"m"}"#;
    let r = f
        .call(Method::POST, "/api/categories/jazz/votes", None, Some(body))
        .await;
    assert_eq!(r.status, StatusCode::UNAUTHORIZED);
    assert_eq!(r.body["error"], "MissingIdentity");
    for uri in ["/api/me/insights", "/api/categories/jazz/ranking/personal"] {
        assert_eq!(
            f.call(Method::GET, uri, None, None).await.status,
            StatusCode::UNAUTHORIZED
        );
    }
}

#[tokio::test]
async fn malformed_requests_are_400() {
    let f = fixture();
    let r = f
        .call(
            Method::POST,
            "/api/categories/jazz/votes",
            Some("A"),
            Some("{not json"),
        )
        .await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    let r = f
        .call(
            Method::PUT,
            "/api/categories/jazz/delegation",
            Some("A"),
            Some(r#"{"target":"B"}"#),
        )
        .await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    let r = f.get("/api/categories/jazz/ranking?limit=lots", "A").await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    let r = f
        .get("/api/categories/jazz/ranking/personal?delta=1.5", "A")
        .await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    let r = f.get("/api/me/friends/experts", "A").await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    let r = f.get("/api/me/insights", "two words").await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn unknown_category_is_404() {
    let f = fixture();
    assert_eq!(
        f.get("/api/categories/polka/ranking", "A").await.status,
        StatusCode::NOT_FOUND
    );
    let r = f
        .call(
            Method::DELETE,
            "/api/categories/polka/delegation",
            Some("A"),
            None,
        )
        .await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    assert_eq!(r.body["error"], "UnknownCategory");
    let r = f.get("/api/me/friends/experts?category=polka", "A").await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    // Category names are case-insensitive.
    assert_eq!(
        f.get("/api/categories/Jazz/ranking", "A").await.status,
        StatusCode::OK
    );
}

#[tokio::test]
async fn delegation_rules() {
    let f = fixture();
    let r = f.delegate("A", "C").await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.body["error"], "NotAFriend");
    let r = f.delegate("A", "A").await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.body["error"], "SelfDelegation");

    assert_eq!(f.delegate("A", "B").await.status, StatusCode::NO_CONTENT);
    assert_eq!(
        f.get("/api/categories/jazz/delegation", "A").await.body,
        json!({"to": "B"})
    );
    for _ in 0..2 {
        let r = f
            .call(
                Method::DELETE,
                "/api/categories/jazz/delegation",
                Some("A"),
                None,
            )
            .await;
        assert_eq!(r.status, StatusCode::NO_CONTENT);
    }
    assert_eq!(
        f.get("/api/categories/jazz/delegation", "A").await.body,
        json!({"to": null})
    );
}

#[tokio::test]
async fn vote_rules() {
    let f = fixture();
    assert_eq!(f.vote("A", "one").await.status, StatusCode::CREATED);
    let dup = json!({"artist": " A ", "title": "ONE", "media": "other"}).to_string();
    let r = f
        .call(
            Method::POST,
            "/api/categories/jazz/votes",
            Some("A"),
            Some(&dup),
        )
        .await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.body["error"], "DuplicateSong");
    assert_eq!(f.vote("A", "two").await.status, StatusCode::CREATED);
    assert_eq!(f.vote("A", "three").await.status, StatusCode::CREATED);
    let r = f.vote("A", "four").await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.body["error"], "VoteLimitReached");

    let empty = json!({"artist": "  ", "title": "x", "media": "m"}).to_string();
    let r = f
        .call(
            Method::POST,
            "/api/categories/jazz/votes",
            Some("B"),
            Some(&empty),
        )
        .await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.body["error"], "EmptySongField");

    let r = f
        .call(
            Method::DELETE,
            "/api/categories/jazz/votes",
            Some("A"),
            Some(r#"{"artist":"a","title":"two"}"#),
        )
        .await;
    assert_eq!(r.status, StatusCode::NO_CONTENT);
    let mine = f.get("/api/categories/jazz/votes", "A").await;
    assert_eq!(titles(&mine.body), ["one", "three"]);
    assert_eq!(f.vote("A", "four").await.status, StatusCode::CREATED);
}

#[tokio::test]
async fn strict_catalog_rejects_unknown_songs() {
    let f = fixture_with(|dir, config| {
        let path = dir.join("catalog.tsv");
        std::fs::write(&path, "A\tKnown Song\n").unwrap();
        config.catalog_path = Some(path);
        config.catalog_strict = true;
    });
    assert_eq!(f.vote("A", "known song").await.status, StatusCode::CREATED);
    let r = f.vote("A", "mystery").await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.body["error"], "UnknownSong");
    let r = f
        .get("/api/catalog/check?artist=a&title=KNOWN%20song", "A")
        .await;
    assert_eq!(r.body, json!({"status": "known"}));
    let r = f
        .get("/api/catalog/check?artist=a&title=mystery", "A")
        .await;
    assert_eq!(r.body, json!({"status": "unknown"}));
}

#[tokio::test]
async fn empty_epoch_ranking_is_empty() {
    let f = fixture();
    let r = f.get("/api/categories/jazz/ranking", "A").await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.epoch, Some(0));
    assert_eq!(r.body, json!([]));
    let r = f.get("/api/categories/jazz/ranking/personal", "A").await;
    assert_eq!(r.body, json!([]));
    assert_eq!(f.get("/api/me/insights", "A").await.body, json!([]));
}

#[tokio::test]
async fn chain_fixture_through_the_api() {
    let f = fixture();
    f.chain().await;
    let id = f.recompute().await;
    assert_eq!(id, 1);

    let r = f.get("/api/categories/jazz/ranking", "A").await;
    assert_eq!(r.epoch, Some(1));
    assert_eq!(
        r.body,
        json!([
            {"artist": "a", "title": "s2", "media": "m-s2", "rank": 3.25},
            {"artist": "a", "title": "s1", "media": "m-s1", "rank": 2.5},
        ])
    );

    let r = f
        .get("/api/categories/jazz/ranking/personal?delta=0.5", "A")
        .await;
    assert_eq!(titles(&r.body), ["s1", "s2"]);
    let c1 = r.body[0]["score"].as_f64().unwrap();
    assert!((c1 - (0.5 + 0.5 * 2.5 / 3.25)).abs() < 1e-12);
    assert_eq!(r.body[1]["score"].as_f64().unwrap(), 0.75);

    let r = f
        .get("/api/categories/jazz/ranking/personal?delta=0", "A")
        .await;
    assert_eq!(titles(&r.body), ["s2", "s1"]);

    let insights = f.get("/api/me/insights", "C").await.body;
    assert_eq!(insights[0]["category"], "jazz");
    assert_eq!(insights[0]["score"], 1.75);

    let experts = f
        .get("/api/me/friends/experts?category=jazz", "B")
        .await
        .body;
    assert_eq!(experts[0]["user"], "C");
    assert_eq!(experts[1]["user"], "A");
    let friends = f.get("/api/me/friends", "B").await.body;
    assert_eq!(friends, json!(["A", "C"]));
}

#[tokio::test]
async fn rankings_move_only_at_epoch_boundaries() {
    let f = fixture();
    f.chain().await;
    f.recompute().await;
    assert_eq!(f.vote("C", "fresh").await.status, StatusCode::CREATED);
    // Validation already sees the new vote...
    assert_eq!(f.vote("C", "fresh").await.body["error"], "DuplicateSong");
    // ...but the ranking does not until the next epoch.
    let before = f.get("/api/categories/jazz/ranking", "A").await;
    assert!(!titles(&before.body).contains(&"fresh"));
    f.recompute().await;
    let after = f.get("/api/categories/jazz/ranking", "A").await;
    let fresh = after
        .body
        .as_array()
        .unwrap()
        .iter()
        .find(|i| i["title"] == "fresh")
        .unwrap();
    // r equals the voter's viscous score: v(C) = 1 + 0.5 * (1 + 0.5) = 1.75.
    assert_eq!(fresh["rank"], 1.75);
}

#[tokio::test]
async fn stale_epoch_page_is_409() {
    let f = fixture();
    f.chain().await;
    let first = f.recompute().await;
    let r = f
        .get(
            &format!("/api/categories/jazz/ranking/personal?epoch={first}&offset=1&limit=1"),
            "A",
        )
        .await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.body.as_array().unwrap().len(), 1);
    f.recompute().await;
    for uri in [
        format!("/api/categories/jazz/ranking/personal?epoch={first}&offset=1"),
        format!("/api/categories/jazz/ranking?epoch={first}"),
    ] {
        let r = f.get(&uri, "A").await;
        assert_eq!(r.status, StatusCode::CONFLICT);
        assert_eq!(r.body["error"], "StaleEpoch");
    }
}

#[tokio::test]
async fn personal_pages_are_cached_per_epoch() {
    let f = fixture();
    f.chain().await;
    f.recompute().await;
    let uri = "/api/categories/jazz/ranking/personal?delta=0.5";
    f.get(uri, "A").await;
    f.get(uri, "A").await;
    let stats = f.state.cache_stats();
    assert_eq!((stats.hits, stats.misses), (1, 1));
    f.recompute().await;
    f.get(uri, "A").await;
    let stats = f.state.cache_stats();
    assert_eq!((stats.hits, stats.misses, stats.len), (1, 2, 1));
}

#[tokio::test]
async fn pagination_defaults_and_clamps() {
    let f = fixture();
    let users: Vec<String> = (0..50).map(|i| format!("v{i}")).collect();
    for u in &users {
        for t in 0..3 {
            let title = format!("{u}-{t}");
            assert_eq!(f.vote(u, &title).await.status, StatusCode::CREATED);
        }
    }
    f.recompute().await;
    let len = |r: Reply| r.body.as_array().unwrap().len();
    assert_eq!(len(f.get("/api/categories/jazz/ranking", "A").await), 20);
    assert_eq!(
        len(f.get("/api/categories/jazz/ranking?limit=1000", "A").await),
        100
    );
    assert_eq!(
        len(f
            .get("/api/categories/jazz/ranking?offset=140&limit=100", "A")
            .await),
        10
    );
    assert_eq!(
        len(f
            .get("/api/categories/jazz/ranking/personal?limit=1000", "A")
            .await),
        100
    );
}

#[tokio::test]
async fn recompute_writes_epoch_files_and_coalesces() {
    let f = fixture();
    f.chain().await;
    let calls: Vec<_> = (0..8)
        .map(|_| {
            let state = Arc::clone(&f.state);
            tokio::spawn(async move { state.recompute_all().await.unwrap().epoch_id })
        })
        .collect();
    let mut ids = Vec::new();
    for c in calls {
        ids.push(c.await.unwrap());
    }
    let max = *ids.iter().max().unwrap();
    assert!(max <= 8);
    let dir = f.state.config.epochs_dir.clone().unwrap();
    let latest = liquidrec_core::store::latest_epoch(&dir).unwrap().unwrap();
    assert_eq!(latest.epoch_id, max);
    assert_eq!(latest.through_seq, 6);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_writes_leave_a_valid_log() {
    let f = fixture();
    let mut tasks = Vec::new();
    for i in 0..40 {
        let app = f.app.clone();
        let (user, body, method, uri) = match i % 4 {
            0 => (
                "A",
                json!({"to": "B"}),
                Method::PUT,
                "/api/categories/jazz/delegation",
            ),
            1 => (
                "A",
                json!({}),
                Method::DELETE,
                "/api/categories/jazz/delegation",
            ),
            2 => (
                ["A", "B", "C"][i % 3],
                json!({"artist": "x", "title": format!("t{}", i % 5), "media": "m"}),
                Method::POST,
                "/api/categories/jazz/votes",
            ),
            _ => (
                ["A", "B", "C"][i % 3],
                json!({"artist": "x", "title": format!("t{}", i % 5)}),
                Method::DELETE,
                "/api/categories/jazz/votes",
            ),
        };
        tasks.push(tokio::spawn(async move {
            let req = Request::builder()
                .method(method)
                .uri(uri)
                .header("X-User-Id", user)
                .body(Body::from(body.to_string()))
                .unwrap();
            app.oneshot(req).await.unwrap().status()
        }));
        if i % 10 == 0 {
            let state = Arc::clone(&f.state);
            tasks.push(tokio::spawn(async move {
                state.recompute_all().await.unwrap();
                StatusCode::OK
            }));
        }
    }
    for t in tasks {
        let status = t.await.unwrap();
        assert!(status.is_success() || status == StatusCode::UNPROCESSABLE_ENTITY);
    }
    let events_path = f.state.config.events_path.clone();
    let log = read_events(&events_path).unwrap();
    let replayed = replay(&log.events).unwrap();
    f.state.with_store(|s| assert_eq!(s.state(), &replayed));
}
