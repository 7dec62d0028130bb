mod common;

use std::sync::Arc;

use chrono::Duration;
use reqwest::StatusCode;
use serde_json::{json, Value};

use common::{factor_ids, fixture, t0, Server};
use sdoh::annotation::{AnnotationService, ManualClock, StudyData};
use sdoh::corpus::FactorRegistry;

async fn service(log: Option<&std::path::Path>, clock: Arc<ManualClock>) -> (Arc<AnnotationService>, Vec<String>) {
    let (corpus, traces) = fixture(11, 6).await;
    let ids = corpus.iter().map(|r| r.incident_id.clone()).collect();
    let data = StudyData::new(FactorRegistry::builtin(), corpus, traces);
    (Arc::new(AnnotationService::open(data, log, clock).unwrap()), ids)
}

fn study(incidents: &[String], n: usize) -> Value {
    json!({
        "study_id": "s1",
        "factors": factor_ids(),
        "incidents": incidents[..n],
        "seed": 9,
    })
}

async fn minimal_answers(srv: &Server) -> Value {
    let (_, qs) = srv.get("/api/questionnaire").await;
    let answers: serde_json::Map<String, Value> =
        qs.as_array().unwrap().iter().map(|q| (q["id"].as_str().unwrap().to_string(), q["min"].clone())).collect();
    json!({ "answers": answers })
}

#[tokio::test]
async fn full_session_over_http() {
    let clock = Arc::new(ManualClock::new(t0()));
    let (svc, ids) = service(None, clock.clone()).await;
    let srv = Server::start(svc, None).await;

    let (status, created) = srv.post("/api/studies", &study(&ids, 2)).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(created["min_arm_gap_secs"], 86_400);
    assert_eq!(srv.get("/api/studies/s1").await.1, created);

    let (status, session) = srv.post("/api/studies/s1/sessions", &json!({"annotator_id": "a1", "arm": "control"})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(session["total"], 8);
    let sid = session["session_id"].as_str().unwrap().to_string();

    let mut served = 0;
    loop {
        let (status, next) = srv.get(&format!("/api/sessions/{sid}/next")).await;
        assert_eq!(status, StatusCode::OK);
        if next["status"] == "done" {
            assert_eq!(next["questionnaire_submitted"], false);
            break;
        }
        served += 1;
        assert_eq!(next["position"], served);
        assert!(next["highlights"].as_array().unwrap().is_empty());
        clock.advance(Duration::seconds(7));
        let (status, ack) = srv
            .post(
                &format!("/api/sessions/{sid}/decision"),
                &json!({"incident_id": next["incident_id"], "factor_id": next["factor_id"], "decision": true}),
            )
            .await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(ack["elapsed_ms"], 7_000);
        assert_eq!(ack["remaining"], 8 - served);
    }
    assert_eq!(served, 8);

    let answers = minimal_answers(&srv).await;
    let (status, _) = srv.post(&format!("/api/sessions/{sid}/questionnaire"), &answers).await;
    assert_eq!(status, StatusCode::CREATED);
    let (status, err) = srv.post(&format!("/api/sessions/{sid}/questionnaire"), &answers).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::CONFLICT, Some("conflict")));

    let (status, report) = srv.get("/api/studies/s1/report").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(report["control"]["decisions"], 8);
    assert_eq!(report["control"]["mean_item_secs"], 7.0);
    assert!(report["intervention"].is_null());

    let (_, events) = srv.get("/api/studies/s1/events").await;
    assert_eq!(events.as_array().unwrap().len(), 8);
    srv.stop().await;
}

#[tokio::test]
async fn error_statuses_and_codes() {
    let clock = Arc::new(ManualClock::new(t0()));
    let (svc, ids) = service(None, clock.clone()).await;
    let srv = Server::start(svc, None).await;

    let (status, err) = srv.get("/api/studies/nope").await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));
    let (status, err) = srv.get("/api/no/such/route").await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));

    let (status, err) = srv.post_raw("/api/studies", "{not json".into()).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::BAD_REQUEST, Some("bad_request")));
    let mut extra = study(&ids, 2);
    extra["surprise"] = json!(1);
    assert_eq!(srv.post("/api/studies", &extra).await.0, StatusCode::BAD_REQUEST);

    let mut dangling = study(&ids, 2);
    dangling["factors"] = json!(["job_problem", "made_up"]);
    let (status, err) = srv.post("/api/studies", &dangling).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("validation")));

    assert_eq!(srv.post("/api/studies", &study(&ids, 2)).await.0, StatusCode::CREATED);
    assert_eq!(srv.post("/api/studies", &study(&ids, 2)).await.0, StatusCode::CONFLICT);
    assert_eq!(srv.get("/api/studies/s1/report").await.0, StatusCode::CONFLICT);

    let (_, s) = srv.post("/api/studies/s1/sessions", &json!({"annotator_id": "a1", "arm": "intervention"})).await;
    let isid = s["session_id"].as_str().unwrap().to_string();
    let (status, err) = srv.get(&format!("/api/sessions/{isid}/next")).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::LOCKED, Some("arm_locked")));
    assert!(err.get("unlock_at").is_none());

    let (_, s) = srv.post("/api/studies/s1/sessions", &json!({"annotator_id": "a1", "arm": "control"})).await;
    let sid = s["session_id"].as_str().unwrap().to_string();
    let (_, first) = srv.get(&format!("/api/sessions/{sid}/next")).await;
    let other = if first["incident_id"] == ids[0].as_str() { &ids[1] } else { &ids[0] };
    let wrong = json!({"incident_id": other, "factor_id": first["factor_id"], "decision": false});
    let (status, err) = srv.post(&format!("/api/sessions/{sid}/decision"), &wrong).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::CONFLICT, Some("out_of_order")));
    let early = srv.post(&format!("/api/sessions/{sid}/questionnaire"), &minimal_answers(&srv).await).await;
    assert_eq!(early.0, StatusCode::CONFLICT);
    let bad_answers = json!({"answers": {"Q1": 99}});
    assert_eq!(srv.post(&format!("/api/sessions/{sid}/questionnaire"), &bad_answers).await.0, StatusCode::CONFLICT);

    loop {
        let (_, next) = srv.get(&format!("/api/sessions/{sid}/next")).await;
        if next["status"] == "done" {
            break;
        }
        let d = json!({"incident_id": next["incident_id"], "factor_id": next["factor_id"], "decision": true});
        assert_eq!(srv.post(&format!("/api/sessions/{sid}/decision"), &d).await.0, StatusCode::OK);
    }
    let (status, err) = srv.get(&format!("/api/sessions/{isid}/next")).await;
    assert_eq!(status, StatusCode::LOCKED);
    let unlock = err["unlock_at"].as_str().unwrap();
    assert_eq!(unlock, (t0() + Duration::days(1)).to_rfc3339_opts(chrono::SecondsFormat::AutoSi, true));

    clock.advance(Duration::days(1));
    let (status, next) = srv.get(&format!("/api/sessions/{isid}/next")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(next["status"], "item");
    srv.stop().await;
}

#[tokio::test]
async fn state_survives_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.jsonl");
    let clock = Arc::new(ManualClock::new(t0()));

    let (svc, ids) = service(Some(&log), clock.clone()).await;
    let srv = Server::start(svc, None).await;
    srv.post("/api/studies", &study(&ids, 1)).await;
    let (_, s) = srv.post("/api/studies/s1/sessions", &json!({"annotator_id": "a1", "arm": "control"})).await;
    let sid = s["session_id"].as_str().unwrap().to_string();
    let (_, first) = srv.get(&format!("/api/sessions/{sid}/next")).await;
    clock.advance(Duration::seconds(3));
    let d = json!({"incident_id": first["incident_id"], "factor_id": first["factor_id"], "decision": false});
    srv.post(&format!("/api/sessions/{sid}/decision"), &d).await;
    let (_, second) = srv.get(&format!("/api/sessions/{sid}/next")).await;
    srv.stop().await;

    clock.advance(Duration::seconds(30));
    let (svc, _) = service(Some(&log), clock.clone()).await;
    let srv = Server::start(svc, None).await;
    let (_, info) = srv.get(&format!("/api/sessions/{sid}")).await;
    assert_eq!(info["answered"], 1);
    let (_, again) = srv.get(&format!("/api/sessions/{sid}/next")).await;
    assert_eq!(again, second);
    let d = json!({"incident_id": again["incident_id"], "factor_id": again["factor_id"], "decision": true});
    let (_, ack) = srv.post(&format!("/api/sessions/{sid}/decision"), &d).await;
    assert_eq!(ack["elapsed_ms"], 30_000);
    let (_, events) = srv.get("/api/studies/s1/events").await;
    assert_eq!(events.as_array().unwrap().len(), 2);
    srv.stop().await;
}

#[tokio::test]
async fn serves_the_ui_bundle_beside_the_api() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<html>annotate</html>").unwrap();
    let clock = Arc::new(ManualClock::new(t0()));
    let (svc, _) = service(None, clock).await;
    let srv = Server::start(svc, Some(dir.path().to_path_buf())).await;
    let page = srv.client.get(format!("{}/", srv.base)).send().await.unwrap();
    assert_eq!(page.status(), StatusCode::OK);
    assert_eq!(page.text().await.unwrap(), "<html>annotate</html>");
    assert_eq!(srv.get("/api/questionnaire").await.0, StatusCode::OK);
    srv.stop().await;
}
