#![allow(dead_code)]

use std::collections::HashMap;
use std::time::Duration;

use reqwest::{Client, StatusCode};
use screening_core::classifier::Label;
use screening_core::simulator::generate_synthetic_corpus;
use screening_service::{AppState, JobStatus, JobView, ServiceConfig};
use serde_json::{json, Value};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

pub struct Server {
    pub base: String,
    pub client: Client,
    pub token: Option<String>,
    stop: Option<oneshot::Sender<()>>,
    task: Option<JoinHandle<std::io::Result<()>>>,
}

impl Server {
    pub async fn start(config: ServiceConfig) -> Server {
        let state = AppState::new(&config).expect("data dir opens");
        let listener = screening_service::bind("127.0.0.1:0".parse().unwrap()).await.unwrap();
        let base = format!("http://{}/v1", listener.local_addr().unwrap());
        let (tx, rx) = oneshot::channel::<()>();
        let task = tokio::spawn(screening_service::serve(listener, state, async {
            let _ = rx.await;
        }));
        Server {
            base,
            client: Client::new(),
            token: config.token,
            stop: Some(tx),
            task: Some(task),
        }
    }

    pub async fn stop(mut self) {
        let _ = self.stop.take().unwrap().send(());
        self.task.take().unwrap().await.unwrap().unwrap();
    }

    fn auth(&self, rb: reqwest::RequestBuilder) -> reqwest::RequestBuilder {
        match &self.token {
            Some(t) => rb.bearer_auth(t),
            None => rb,
        }
    }

    pub async fn get(&self, path: &str) -> (StatusCode, Value) {
        let resp = self.auth(self.client.get(format!("{}{path}", self.base))).send().await.unwrap();
        let status = resp.status();
        (status, resp.json().await.unwrap())
    }

    pub async fn post(&self, path: &str, body: Value) -> (StatusCode, Value) {
        let resp = self
            .auth(self.client.post(format!("{}{path}", self.base)))
            .json(&body)
            .send()
            .await
            .unwrap();
        let status = resp.status();
        (status, resp.json().await.unwrap())
    }

    pub async fn post_raw(&self, path: &str, body: String) -> (StatusCode, Value) {
        let resp = self
            .auth(self.client.post(format!("{}{path}", self.base)))
            .body(body)
            .send()
            .await
            .unwrap();
        let status = resp.status();
        (status, resp.json().await.unwrap())
    }

    pub async fn create(&self, config: Value) -> String {
        let (status, body) = self.post("/projects", config).await;
        assert_eq!(status, StatusCode::CREATED, "{body}");
        body["project_id"].as_str().unwrap().to_string()
    }

    pub async fn batch(&self, id: &str, limit: usize) -> Value {
        let (status, body) = self.get(&format!("/projects/{id}/batch?limit={limit}")).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        body
    }

    pub async fn label(&self, id: &str, decisions: &[(String, Label)]) -> Value {
        let records: Vec<Value> = decisions
            .iter()
            .map(|(doc, l)| json!({ "doc_id": doc, "decision": l, "screener_id": "tester" }))
            .collect();
        let (status, body) = self.post(&format!("/projects/{id}/labels"), json!({ "records": records })).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        body
    }

    /// Polls a job until it finishes.
    pub async fn wait_job(&self, id: &str, job: &str) -> JobView {
        for _ in 0..600 {
            let (status, body) = self.get(&format!("/projects/{id}/jobs/{job}")).await;
            assert_eq!(status, StatusCode::OK, "{body}");
            let view: JobView = serde_json::from_value(body).unwrap();
            if view.status == JobStatus::Done || view.status == JobStatus::Failed {
                return view;
            }
            tokio::time::sleep(Duration::from_millis(50)).await;
        }
        panic!("job {job} did not finish");
    }
}

pub struct Fixture {
    pub jsonl: String,
    pub truth: HashMap<String, Label>,
}

/// A small labeled corpus as an upload body.
pub fn fixture(n: usize, seed: u64) -> Fixture {
    let oracle = generate_synthetic_corpus(n, 0.1, 0.9, seed).unwrap();
    let jsonl = oracle
        .corpus
        .documents
        .iter()
        .map(|d| serde_json::to_string(d).unwrap() + "\n")
        .collect();
    Fixture {
        jsonl,
        truth: oracle.truth,
    }
}

pub fn item_ids(batch: &Value) -> Vec<String> {
    batch["items"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| i["doc_id"].as_str().unwrap().to_string())
        .collect()
}

pub fn oracle_decisions(ids: &[String], truth: &HashMap<String, Label>) -> Vec<(String, Label)> {
    ids.iter().map(|id| (id.clone(), truth[id])).collect()
}
