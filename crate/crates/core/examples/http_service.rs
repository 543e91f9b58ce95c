//! Start the HTTP service on an ephemeral port with a scripted backend and
//! drive one session through it.

use std::sync::Arc;

use dramaturge::backend::{ScriptedBackend, ScriptedFixture};
use dramaturge::engine::EngineConfig;
use dramaturge::service::{router, AppState};
use dramaturge::store::Store;
use serde_json::{json, Value};

fn main() {
    let dir = env!("CARGO_MANIFEST_DIR");
    let story: Value = serde_json::from_str(
        &std::fs::read_to_string(format!("{dir}/fixtures/sepideh_byron.json")).unwrap(),
    )
    .unwrap();
    let fixture =
        std::fs::read_to_string(format!("{dir}/fixtures/sepideh_byron.scripted.json")).unwrap();
    let backend = ScriptedBackend::from_fixture(ScriptedFixture::from_json(&fixture).unwrap());

    let data = tempfile::tempdir().unwrap();
    let state = AppState::new(
        Store::open(data.path()).unwrap(),
        Arc::new(backend),
        EngineConfig::default(),
    );
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        tokio::runtime::Runtime::new()
            .unwrap()
            .block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                tx.send(listener.local_addr().unwrap()).unwrap();
                axum::serve(listener, router(state)).await.unwrap();
            })
    });
    let base = format!("http://{}", rx.recv().unwrap());
    let http = reqwest::blocking::Client::new();
    let post = |path: &str, body: Value| -> Value {
        http.post(format!("{base}{path}"))
            .json(&body)
            .send()
            .unwrap()
            .json()
            .unwrap()
    };

    let story_id = post("/stories", story)["id"].as_str().unwrap().to_string();
    let session = post("/sessions", json!({"story_id": story_id}));
    let id = session["id"].as_str().unwrap();
    println!("session {id}");

    for _ in 0..2 {
        let r = post(&format!("/sessions/{id}/step"), json!({}));
        println!(
            "step -> state {}, new lines {}",
            r["state"]["state"], r["lines"]
        );
    }
    let r = post(
        &format!("/sessions/{id}/player-line"),
        json!({"text": "Let's just enjoy dinner."}),
    );
    println!("player line -> {}", r["lines"]);
    let r = post(&format!("/sessions/{id}/step"), json!({}));
    println!("step -> firing {}", r["outcome"]["firing"]);

    let missing = http.get(format!("{base}/sessions/nope")).send().unwrap();
    println!("GET /sessions/nope -> {}", missing.status());
    let text = http
        .get(format!("{base}/sessions/{id}/export.txt"))
        .send()
        .unwrap()
        .text()
        .unwrap();
    println!("\n{text}");
}
