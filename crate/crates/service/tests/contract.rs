mod common;

use std::collections::HashSet;
use std::time::Duration;

use common::{fixture, item_ids, oracle_decisions, Server};
use reqwest::StatusCode;
use screening_core::classifier::Label;
use screening_service::{JobStatus, ServiceConfig};
use serde_json::{json, Value};

fn small_config() -> Value {
    json!({ "strategy": "hp", "batch_size": 100, "init_size": 200, "seed": 3 })
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn create_upload_batch_label_retrain_metrics() {
    let server = Server::start(ServiceConfig::default()).await;
    let (status, health) = server.get("/health").await;
    assert_eq!((status, health["status"].as_str()), (StatusCode::OK, Some("ok")));

    let (status, created) = server.post("/projects", small_config()).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(created["phase"], "bootstrapping");
    assert_eq!(created["corpus_frozen"], false);
    let id = created["project_id"].as_str().unwrap().to_string();
    let other = server.create(small_config()).await;
    assert_ne!(id, other);

    // fresh project: no effort, empty histories
    let (_, m) = server.get(&format!("/projects/{id}/metrics")).await;
    assert_eq!(m["human_effort"], 0.0);
    assert_eq!(m["batch_rates"], json!([]));
    assert_eq!(m["iterations"], json!([]));

    let fx = fixture(1200, 11);
    let (status, up) = server.post_raw(&format!("/projects/{id}/documents"), fx.jsonl.clone()).await;
    assert_eq!(status, StatusCode::OK, "{up}");
    assert_eq!((up["accepted"].as_u64(), up["n_documents"].as_u64()), (Some(1200), Some(1200)));
    let (_, again) = server.post_raw(&format!("/projects/{id}/documents"), fx.jsonl.lines().take(3).collect::<Vec<_>>().join("\n")).await;
    assert_eq!((again["accepted"].as_u64(), again["duplicates"].as_u64()), (Some(0), Some(3)));

    // bootstrapping: random documents without scores
    let first = server.batch(&id, 50).await;
    assert_eq!(first["phase"], "bootstrapping");
    assert_eq!(first["items"].as_array().unwrap().len(), 50);
    assert!(first["items"][0].get("priority_score").is_none());
    assert!(first["items"][0]["text"].as_str().is_some());
    // the whole initial batch, clamped to what is issued
    let initial = item_ids(&server.batch(&id, 5000).await);
    assert_eq!(initial.len(), 200);

    let (status, frozen) = server.post_raw(&format!("/projects/{id}/documents"), fx.jsonl.clone()).await;
    assert_eq!((status, frozen["code"].as_str()), (StatusCode::CONFLICT, Some("corpus_frozen")));

    let ack = server.label(&id, &oracle_decisions(&initial, &fx.truth)).await;
    let included = initial.iter().filter(|d| fx.truth[*d] == Label::Included).count();
    assert_eq!(ack["accepted"], 200);
    assert_eq!(ack["screened"], 200);
    assert_eq!(ack["identified"].as_u64().unwrap() as usize, included);

    let (_, session) = server.get(&format!("/projects/{id}")).await;
    assert_eq!((session["phase"].as_str(), session["retrain_ready"].as_bool()), (Some("active_learning"), Some(true)));

    let (status, job) = server.post(&format!("/projects/{id}/retrain"), json!(null)).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{job}");
    assert_eq!(job["base_model_version"], 0);
    assert_eq!(job["training_size"], 200);
    let done = server.wait_job(&id, job["job_id"].as_str().unwrap()).await;
    assert_eq!(done.status, JobStatus::Done, "{:?}", done.error);
    assert_eq!(done.model_version, Some(1));
    let (_, session) = server.get(&format!("/projects/{id}")).await;
    assert_eq!(session["model_version"], 1);
    assert_eq!(session["pending"], 100);

    // active learning: the sampled batch, scored, never already labeled
    let batch = server.batch(&id, 1000).await;
    let ids = item_ids(&batch);
    assert_eq!(ids.len(), 100);
    let labeled: HashSet<&String> = initial.iter().collect();
    assert!(ids.iter().all(|d| !labeled.contains(d)));
    let scores: Vec<f64> = batch["items"].as_array().unwrap().iter().map(|i| i["priority_score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]), "hp batch is in priority order");

    let (_, m) = server.get(&format!("/projects/{id}/metrics")).await;
    assert_eq!(m["model_version"], 1);
    assert!((m["human_effort"].as_f64().unwrap() - 200.0 / 1200.0).abs() < 1e-12);
    assert_eq!(m["batch_rates"][0]["size"], 200);
    assert_eq!(m["batch_rates"][0]["included"].as_u64().unwrap() as usize, included);
    assert_eq!(m["iterations"][0]["model_version"], 1);
    assert!(m["iterations"][0]["validation_f1"].is_number());
    assert_eq!(m["inclusion_rate"]["lower_bound_denominator_unknown"], true);
    assert_eq!(m["inclusion_rate"]["denominator"].as_u64().unwrap() as usize, included);

    let (status, advice) = server.get(&format!("/projects/{id}/advice")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(advice["model_version"], 1);
    assert_eq!(advice["rho_threshold"], 0.95);
    assert!(advice["stop_training"].is_boolean());

    // second round, then prioritized screening in descending score order
    server.label(&id, &oracle_decisions(&ids, &fx.truth)).await;
    let (_, job) = server.post(&format!("/projects/{id}/retrain"), json!(null)).await;
    let done = server.wait_job(&id, job["job_id"].as_str().unwrap()).await;
    assert_eq!(done.model_version, Some(2));
    let (_, m) = server.get(&format!("/projects/{id}/metrics")).await;
    assert!(m["iterations"][1]["rank_similarity"].is_number());

    let pending = item_ids(&server.batch(&id, 1000).await);
    server.label(&id, &oracle_decisions(&pending, &fx.truth)).await;
    let (status, phase) = server.post(&format!("/projects/{id}/phase"), json!({ "to": "prioritized_screening" })).await;
    assert_eq!((status, phase["phase"].as_str()), (StatusCode::OK, Some("prioritized_screening")), "{phase}");

    let queue = server.batch(&id, 3).await;
    assert_eq!(queue["items"].as_array().unwrap().len(), 3);
    let scores: Vec<f64> = queue["items"].as_array().unwrap().iter().map(|i| i["priority_score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));

    // screen everything that remains
    let rest = item_ids(&server.batch(&id, 5000).await);
    assert_eq!(rest.len(), 1200 - 400);
    server.label(&id, &oracle_decisions(&rest, &fx.truth)).await;
    let end = server.batch(&id, 10).await;
    assert_eq!((end["done"].as_bool(), end["items"].as_array().unwrap().len()), (Some(true), 0));
    let (_, m) = server.get(&format!("/projects/{id}/metrics")).await;
    assert_eq!((m["phase"].as_str(), m["human_effort"].as_f64()), (Some("done"), Some(1.0)));

    let (_, list) = server.get("/projects").await;
    assert_eq!(list.as_array().unwrap().len(), 2);
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn conflict_and_pending_label_errors() {
    let server = Server::start(ServiceConfig {
        job_start_delay: Duration::from_millis(400),
        ..Default::default()
    })
    .await;
    let id = server.create(small_config()).await;
    let fx = fixture(800, 5);
    server.post_raw(&format!("/projects/{id}/documents"), fx.jsonl.clone()).await;
    let initial = item_ids(&server.batch(&id, 1000).await);

    // retrain with ten unlabeled documents lists exactly those
    let (labeled, unlabeled) = initial.split_at(190);
    server.label(&id, &oracle_decisions(labeled, &fx.truth)).await;
    let (status, err) = server.post(&format!("/projects/{id}/retrain"), json!(null)).await;
    assert_eq!(status, StatusCode::PRECONDITION_FAILED);
    assert_eq!(err["code"], "pending_labels");
    let listed: HashSet<String> = serde_json::from_value(err["details"]["pending"].clone()).unwrap();
    assert_eq!(listed, unlabeled.iter().cloned().collect::<HashSet<_>>());
    assert!(err["message"].as_str().unwrap().contains("10"));

    // at most one job in flight
    server.label(&id, &oracle_decisions(unlabeled, &fx.truth)).await;
    let (status, job) = server.post(&format!("/projects/{id}/retrain"), json!(null)).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_eq!(job["status"], "queued");
    let (status, err) = server.post(&format!("/projects/{id}/retrain"), json!(null)).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::CONFLICT, Some("job_conflict")));
    assert_eq!(err["details"]["job_id"], job["job_id"]);
    let (_, session) = server.get(&format!("/projects/{id}")).await;
    assert_eq!(session["job"]["job_id"], job["job_id"]);
    assert_eq!(session["retrain_ready"], false);
    // reads are served while the job is outstanding
    let (status, _) = server.get(&format!("/projects/{id}/metrics")).await;
    assert_eq!(status, StatusCode::OK);
    let (status, err) = server.post(&format!("/projects/{id}/phase"), json!({ "to": "done" })).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::CONFLICT, Some("job_conflict")));
    let done = server.wait_job(&id, job["job_id"].as_str().unwrap()).await;
    assert_eq!(done.status, JobStatus::Done);

    let (status, err) = server.get(&format!("/projects/{id}/jobs/nope")).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::NOT_FOUND, Some("job_not_found")));
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn label_submission_partial_apply() {
    let server = Server::start(ServiceConfig::default()).await;
    let id = server
        .create(json!({ "init_size": 20, "batch_size": 10, "exclusion_criteria": ["wrong population", "not an evaluation"] }))
        .await;

    let (status, err) = server.post(&format!("/projects/{id}/labels"), json!({ "records": [] })).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::CONFLICT, Some("not_started")));

    let fx = fixture(300, 2);
    server.post_raw(&format!("/projects/{id}/documents"), fx.jsonl.clone()).await;
    let ids = item_ids(&server.batch(&id, 20).await);

    let ack = server.label(&id, &[]).await;
    assert_eq!(ack["accepted"], 0);

    let body = json!({ "records": [
        { "doc_id": ids[0], "decision": "included", "screener_id": "a" },
        { "doc_id": "no-such-doc", "decision": "excluded", "screener_id": "a" },
        { "doc_id": ids[1], "decision": "excluded", "exclusion_criterion": "wrong population", "screener_id": "b" },
    ]});
    let (status, ack) = server.post(&format!("/projects/{id}/labels"), body).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ack["accepted"], 2);
    assert_eq!(ack["errors"].as_array().unwrap().len(), 1);
    assert_eq!(ack["errors"][0]["index"], 1);
    assert_eq!(ack["errors"][0]["code"], "unknown_document");
    assert_eq!((ack["screened"].as_u64(), ack["identified"].as_u64()), (Some(2), Some(1)));

    let body = json!({ "records": [
        { "doc_id": ids[2], "decision": "excluded", "exclusion_criterion": "too old" },
        { "doc_id": ids[3], "decision": "included", "exclusion_criterion": "wrong population" },
    ]});
    let (_, ack) = server.post(&format!("/projects/{id}/labels"), body).await;
    assert_eq!(ack["accepted"], 0);
    assert!(ack["errors"].as_array().unwrap().iter().all(|e| e["code"] == "invalid_criterion"));

    // a superseding decision leaves the screened count unchanged
    let ack = server.label(&id, &[(ids[0].clone(), Label::Excluded)]).await;
    assert_eq!((ack["screened"].as_u64(), ack["identified"].as_u64()), (Some(2), Some(0)));

    // labeled documents never come back in a batch
    let remaining = item_ids(&server.batch(&id, 100).await);
    assert_eq!(remaining.len(), 18);
    assert!(!remaining.contains(&ids[0]) && !remaining.contains(&ids[1]));

    let (status, err) = server.post(&format!("/projects/{id}/labels"), json!({ "oops": 1 })).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::BAD_REQUEST, Some("bad_request")));
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn config_validation_and_routing_errors() {
    let server = Server::start(ServiceConfig::default()).await;
    for (config, field) in [
        (json!({ "batch_size": 0 }), "batch_size"),
        (json!({ "strategy": "margin" }), "strategy"),
        (json!({ "train_fraction": 1.5 }), "train_fraction"),
        (json!({ "batchsize": 10 }), "batchsize"),
        (json!({ "auto_retrain": "yes" }), "auto_retrain"),
        (json!({ "stop": { "rho_threshold": "high" } }), "stop.rho_threshold"),
    ] {
        let (status, err) = server.post("/projects", config.clone()).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{config}");
        assert_eq!(err["code"], "invalid_config");
        assert_eq!(err["details"]["field"], field, "{err}");
    }
    // an empty body takes every default
    let (status, created) = server.post_raw("/projects", String::new()).await;
    assert_eq!((status, created["phase"].as_str()), (StatusCode::CREATED, Some("bootstrapping")));
    let id = created["project_id"].as_str().unwrap();

    let (status, err) = server.get(&format!("/projects/{id}/batch")).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::CONFLICT, Some("empty_corpus")));
    let (_, up) = server
        .post_raw(&format!("/projects/{id}/documents"), "not json\n{\"id\":\"x\",\"title\":\"\",\"abstract\":\"\"}\n{\"id\":\"y\",\"title\":\"T\",\"abstract\":\"A.\"}\n".into())
        .await;
    assert_eq!(up["accepted"], 1);
    let codes: Vec<&str> = up["errors"].as_array().unwrap().iter().map(|e| e["code"].as_str().unwrap()).collect();
    assert_eq!(codes, ["parse_error", "invalid_record"]);
    let (status, err) = server.get(&format!("/projects/{id}/batch?limit=0")).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::BAD_REQUEST, Some("bad_request")));
    let (status, err) = server.get(&format!("/projects/{id}/batch?limit=abc")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{err}");
    let (status, err) = server.post(&format!("/projects/{id}/retrain"), json!(null)).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::CONFLICT, Some("not_started")));

    let (status, err) = server.get("/projects/nope/metrics").await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::NOT_FOUND, Some("project_not_found")));
    let (status, err) = server.get("/projects/nope/batch").await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::NOT_FOUND, Some("project_not_found")));
    let (status, _) = server.get("/elsewhere").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn static_token_guards_everything_but_health() {
    let server = Server::start(ServiceConfig {
        token: Some("s3cret".into()),
        ..Default::default()
    })
    .await;
    let client = reqwest::Client::new();
    let resp = client.get(format!("{}/projects", server.base)).send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::UNAUTHORIZED);
    let body: Value = resp.json().await.unwrap();
    assert_eq!(body["code"], "unauthorized");
    let resp = client.get(format!("{}/projects", server.base)).bearer_auth("wrong").send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::UNAUTHORIZED);
    let resp = client.get(format!("{}/health", server.base)).send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let (status, _) = server.get("/projects").await;
    assert_eq!(status, StatusCode::OK);
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn auto_retrain_runs_after_each_batch() {
    let server = Server::start(ServiceConfig::default()).await;
    let id = server
        .create(json!({ "init_size": 100, "batch_size": 50, "auto_retrain": true, "seed": 1 }))
        .await;
    let fx = fixture(600, 8);
    server.post_raw(&format!("/projects/{id}/documents"), fx.jsonl.clone()).await;
    let initial = item_ids(&server.batch(&id, 1000).await);
    let ack = server.label(&id, &oracle_decisions(&initial, &fx.truth)).await;
    let job = ack["job"]["job_id"].as_str().expect("labels completing a batch start a job");
    let done = server.wait_job(&id, job).await;
    assert_eq!(done.model_version, Some(1));
    assert_eq!(item_ids(&server.batch(&id, 1000).await).len(), 50);
    server.stop().await;
}

/// Human effort and batch rate against a corpus of the reference review's size.
#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn live_metrics_at_full_review_scale() {
    let server = Server::start(ServiceConfig::default()).await;
    let id = server.create(json!({ "init_size": 1000, "batch_size": 1000 })).await;
    let body: String = (0..68_539)
        .map(|i| format!("{{\"id\":\"r{i}\",\"title\":\"Record {i}\",\"abstract\":\"Topic w{} and w{}.\"}}\n", i % 997, i % 89))
        .collect();
    let (status, up) = server.post_raw(&format!("/projects/{id}/documents"), body).await;
    assert_eq!((status, up["n_documents"].as_u64()), (StatusCode::OK, Some(68_539)), "{up}");

    let ids = item_ids(&server.batch(&id, 1000).await);
    assert_eq!(ids.len(), 1000);
    let decisions: Vec<(String, Label)> = ids
        .iter()
        .enumerate()
        .map(|(i, d)| (d.clone(), Label::from_included(i < 12)))
        .collect();
    server.label(&id, &decisions).await;
    let (_, m) = server.get(&format!("/projects/{id}/metrics")).await;
    let he = m["human_effort"].as_f64().unwrap();
    assert_eq!(he, 1000.0 / 68_539.0);
    assert!((he - 0.01459).abs() < 5e-6);
    assert_eq!(m["batch_rates"][0]["rate"], 0.012);
    assert_eq!(m["identified"], 12);
    server.stop().await;
}
