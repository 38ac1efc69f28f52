use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use autojudge::annotation::http::{router, SubmitRequest};
use autojudge::annotation::service::{NextTask, Progress, RatingInput, ServiceConfig};
use autojudge::annotation::store::ratings_from_csv;
use autojudge::annotation::{AnnotationService, RatingStore};
use autojudge::corpus::{Dialogue, Speaker, System, Utterance};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use tower::ServiceExt;

fn dialogues(n: usize, turns: usize) -> Vec<Dialogue> {
    (0..n)
        .map(|i| Dialogue {
            dialogue_id: format!("HRED:ctx-{i}"),
            origin_system: System::Hred,
            seed: vec![Utterance::new(Speaker::A, format!("seed {i}"))],
            generated: (0..turns)
                .map(|t| Utterance::new(if t % 2 == 0 { Speaker::B } else { Speaker::A }, format!("turn {t}")))
                .collect(),
        })
        .collect()
}

struct Api {
    app: Router,
    clock: Arc<AtomicU64>,
}

fn api(store: RatingStore, config: ServiceConfig) -> Api {
    let clock = Arc::new(AtomicU64::new(1_000));
    let c = clock.clone();
    let svc = AnnotationService::new(dialogues(10, 10), store, config, Arc::new(move || c.load(Ordering::SeqCst)));
    Api {
        app: router(Arc::new(svc)),
        clock,
    }
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn next(app: &Router, judge: &str) -> (StatusCode, Option<NextTask>) {
    let req = Request::get(format!("/api/judges/{judge}/next-task")).body(Body::empty()).unwrap();
    let (s, b) = call(app, req).await;
    (s, serde_json::from_slice(&b).ok())
}

async fn submit(app: &Router, judge: &str, ratings: Vec<RatingInput>) -> (StatusCode, serde_json::Value) {
    let body = serde_json::to_vec(&SubmitRequest {
        judge_id: judge.into(),
        ratings,
    })
    .unwrap();
    let req = Request::post("/api/ratings")
        .header("content-type", "application/json")
        .body(Body::from(body))
        .unwrap();
    let (s, b) = call(app, req).await;
    (s, serde_json::from_slice(&b).unwrap_or(serde_json::Value::Null))
}

fn rate_all(task: &autojudge::annotation::Task, judge: usize) -> Vec<RatingInput> {
    task.rate_turns
        .iter()
        .map(|&t| RatingInput {
            dialogue_id: task.dialogue_id.clone(),
            turn_index: t,
            rating: ((t + judge) % 5 + 1) as i64,
        })
        .collect()
}

#[tokio::test]
async fn three_judges_rate_everything_exactly_once() {
    let dir = tempfile::tempdir().unwrap();
    let store = RatingStore::open(dir.path().join("store.json")).unwrap();
    let Api { app, .. } = api(store, ServiceConfig::default());
    let judges = ["ann", "bo", "cy"];
    let mut double_submits = 0;
    loop {
        let mut progressed = false;
        for (j, judge) in judges.iter().enumerate() {
            let (status, task) = next(&app, judge).await;
            assert_eq!(status, StatusCode::OK);
            let Some(NextTask::Task(task)) = task else { continue };
            assert_eq!(task.rate_turns.len(), 10);
            let batch = rate_all(&task, j);
            let (s, _) = submit(&app, judge, batch.clone()).await;
            assert_eq!(s, StatusCode::OK);
            // A double click sends the same batch again.
            let (s, body) = submit(&app, judge, batch).await;
            assert_eq!(s, StatusCode::CONFLICT);
            assert_eq!(body["kind"], "duplicate");
            double_submits += 1;
            progressed = true;
        }
        if !progressed {
            break;
        }
    }
    assert_eq!(double_submits, 30);

    let (s, body) = call(&app, Request::get("/api/progress").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    let p: Progress = serde_json::from_slice(&body).unwrap();
    assert_eq!((p.dialogues_complete, p.turns_complete, p.ratings), (10, 100, 300));

    let (s, body) = call(&app, Request::get("/api/export").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    let ratings = ratings_from_csv(std::str::from_utf8(&body).unwrap()).unwrap();
    assert_eq!(ratings.len(), 300);
    assert!(ratings.iter().all(|r| (1..=5).contains(&r.rating)));
    let mut per_turn: BTreeMap<(String, usize), BTreeSet<String>> = BTreeMap::new();
    for r in &ratings {
        assert!(per_turn
            .entry((r.dialogue_id.clone(), r.turn_index))
            .or_default()
            .insert(r.judge_id.clone()));
    }
    assert_eq!(per_turn.len(), 100);
    assert!(per_turn.values().all(|j| j.len() == 3));

    // The store on disk holds the same ratings after a restart.
    let reopened = RatingStore::open(dir.path().join("store.json")).unwrap();
    assert_eq!(reopened.len(), 300);
}

#[tokio::test]
async fn bad_batches_are_rejected_whole() {
    let Api { app, .. } = api(RatingStore::in_memory(), ServiceConfig::default());
    let (_, Some(NextTask::Task(task))) = next(&app, "ann").await else {
        panic!("no task")
    };
    let mut batch = rate_all(&task, 0);
    batch[3].rating = 6;
    let (s, body) = submit(&app, "ann", batch).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["kind"], "invalid_rating");
    assert_eq!(body["turn_index"], task.rate_turns[3]);

    let mut partial = rate_all(&task, 0);
    partial.pop();
    let (s, body) = submit(&app, "ann", partial).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["kind"], "coverage");

    let mut unknown = rate_all(&task, 0);
    for r in &mut unknown {
        r.dialogue_id = "nope".into();
    }
    let (s, _) = submit(&app, "ann", unknown).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, body) = submit(&app, "bo", rate_all(&task, 1)).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(body["kind"], "no_lease");

    let (s, _) = submit(&app, "ann", rate_all(&task, 0)).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn expired_leases_are_refused_and_reassigned() {
    let config = ServiceConfig {
        lease_secs: 60,
        judges_per_turn: 1,
        judges: vec!["ann".into(), "bo".into()],
    };
    let Api { app, clock } = api(RatingStore::in_memory(), config);
    let (s, _) = next(&app, "mallory").await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (_, Some(NextTask::Task(first))) = next(&app, "ann").await else {
        panic!("no task")
    };
    // While leased, the dialogue is not offered to anyone else.
    let (_, Some(NextTask::Task(other))) = next(&app, "bo").await else {
        panic!("no task")
    };
    assert_ne!(other.dialogue_id, first.dialogue_id);

    clock.fetch_add(61, Ordering::SeqCst);
    let (s, body) = submit(&app, "ann", rate_all(&first, 0)).await;
    assert_eq!(s, StatusCode::GONE);
    assert_eq!(body["kind"], "lease_expired");
    assert!(body["retry"].is_string());

    let (_, Some(NextTask::Task(again))) = next(&app, "ann").await else {
        panic!("no task")
    };
    assert_eq!(again.dialogue_id, first.dialogue_id);
    let (s, _) = submit(&app, "ann", rate_all(&again, 0)).await;
    assert_eq!(s, StatusCode::OK);
}
