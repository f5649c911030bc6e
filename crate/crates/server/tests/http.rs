use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use vislabel_core::loops::{Oracle, Prompt, Response, SimulatedOracle};
use vislabel_core::loops::{Answer, NewCategoryDecision};
use vislabel_core::session::{DatasetExport, MemoryLog, NextView, Session, SessionConfig, StateView};
use vislabel_core::synth::{self, SyntheticDataset};
use vislabel_server::api::{router, AnswerBody, AnswerReply, CreateSession};
use vislabel_server::Store;

struct Harness {
    app: Router,
    _dir: tempfile::TempDir,
}

impl Harness {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        Harness {
            app: router(Arc::new(Store::new(dir.path()))),
            _dir: dir,
        }
    }

    async fn call(&self, method: Method, uri: &str, body: Option<String>) -> (StatusCode, Value) {
        let mut req = Request::builder().method(method).uri(uri);
        let body = match body {
            Some(b) => {
                req = req.header("content-type", "application/json");
                Body::from(b)
            }
            None => Body::empty(),
        };
        let resp = self.app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let value = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap()
        };
        (status, value)
    }

    async fn get(&self, uri: &str) -> (StatusCode, Value) {
        self.call(Method::GET, uri, None).await
    }

    async fn post(&self, uri: &str, body: &impl serde::Serialize) -> (StatusCode, Value) {
        self.call(Method::POST, uri, Some(serde_json::to_string(body).unwrap())).await
    }
}

fn dataset(seed: u64) -> SyntheticDataset {
    synth::table1_dataset(&synth::TABLE1_EXPERT1, seed)
}

fn config(id: &str, data: &SyntheticDataset) -> SessionConfig {
    SessionConfig::new(id, data.manifest.feature_dim, "memory://manifest")
}

fn create_body(id: &str, data: &SyntheticDataset, seeded: bool) -> CreateSession {
    CreateSession {
        config: config(id, data),
        manifest: Some(data.manifest.to_jsonl()),
        seed: seeded.then(|| data.reference.skeleton()),
    }
}

fn oracle(data: &SyntheticDataset, flip_p: f64, seed: u64) -> SimulatedOracle {
    SimulatedOracle::new(&data.reference, data.ground_truth.clone(), flip_p, seed).unwrap()
}

fn respond(oracle: &mut SimulatedOracle, prompt: &Prompt) -> Answer {
    let response = match prompt {
        Prompt::Question(q) => Response::Verdict(oracle.answer(q).unwrap()),
        Prompt::NewCategory(r) => Response::NewCategory(oracle.describe_new(r).unwrap()),
    };
    Answer {
        seq: prompt.seq(),
        response,
    }
}

#[tokio::test]
async fn http_session_matches_in_process_run() {
    for (seed, flip_p, seeded) in [(3, 0.0, true), (4, 0.05, true), (5, 0.0, false)] {
        let data = dataset(seed);
        let h = Harness::new();
        let (status, _) = h.post("/sessions", &create_body("parity", &data, seeded)).await;
        assert_eq!(status, StatusCode::CREATED);

        let mut http_oracle = oracle(&data, flip_p, seed);
        loop {
            let (status, next) = h.get("/session/parity/next").await;
            assert_eq!(status, StatusCode::OK);
            let next: NextView = serde_json::from_value(next).unwrap();
            let Some(prompt) = next.prompt else {
                assert!(next.done);
                break;
            };
            let body = AnswerBody::from_answer(&respond(&mut http_oracle, &prompt));
            let (status, reply) = h.post("/session/parity/answer", &body).await;
            assert_eq!(status, StatusCode::OK, "{reply}");
            let reply: AnswerReply = serde_json::from_value(reply).unwrap();
            assert_eq!(reply.status, "applied");
        }

        let mut lib = Session::create(
            config("parity", &data),
            &data.manifest,
            seeded.then(|| data.reference.skeleton()).as_ref(),
            MemoryLog::default(),
        )
        .unwrap();
        lib.run_with(&mut oracle(&data, flip_p, seed)).unwrap();

        let (_, state) = h.get("/session/parity/state").await;
        let state: StateView = serde_json::from_value(state).unwrap();
        assert_eq!(state, lib.state().state_view());
        let (_, export) = h.get("/session/parity/export").await;
        let export: DatasetExport = serde_json::from_value(export).unwrap();
        assert_eq!(export.to_files(), lib.export().to_files());
        let (_, stats) = h.get("/session/parity/stats").await;
        assert_eq!(stats, serde_json::to_value(lib.state().stats()).unwrap());
        if flip_p == 0.0 && seeded {
            assert_eq!(export.labels(), data.ground_truth);
        }
    }
}

#[tokio::test]
async fn unknown_session_is_404() {
    let h = Harness::new();
    for uri in ["state", "next", "stats", "export"] {
        let (status, body) = h.get(&format!("/session/nope/{uri}")).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
        assert!(body["error"].as_str().unwrap().contains("nope"));
    }
    let (status, _) = h.post("/session/nope/answer", &json!({"seq": 1, "verdict": true})).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = h.get("/session/..%2F..%2Fetc/state").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn stale_seq_is_409_with_pending_prompt() {
    let data = dataset(7);
    let h = Harness::new();
    h.post("/sessions", &create_body("s", &data, true)).await;
    let (_, next) = h.get("/session/s/next").await;
    let pending: Prompt = serde_json::from_value(next["prompt"].clone()).unwrap();

    let (status, body) = h
        .post("/session/s/answer", &json!({"seq": pending.seq() + 5, "verdict": true}))
        .await;
    assert_eq!(status, StatusCode::CONFLICT);
    let echoed: Prompt = serde_json::from_value(body["pending"].clone()).unwrap();
    assert_eq!(echoed, pending);

    // answering, then re-posting the same answer, is a no-op
    let mut o = oracle(&data, 0.0, 7);
    let body = AnswerBody::from_answer(&respond(&mut o, &pending));
    let (status, first) = h.post("/session/s/answer", &body).await;
    assert_eq!((status, first["status"].as_str()), (StatusCode::OK, Some("applied")));
    let (_, before) = h.get("/session/s/state").await;
    let (status, again) = h.post("/session/s/answer", &body).await;
    assert_eq!((status, again["status"].as_str()), (StatusCode::OK, Some("duplicate")));
    let (_, after) = h.get("/session/s/state").await;
    assert_eq!(before, after);

    // a different answer to the answered prompt is stale
    let mut flipped = body.clone();
    flipped.verdict = flipped.verdict.map(|v| !v);
    let (status, body) = h.post("/session/s/answer", &flipped).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(body["pending"].is_object());
}

#[tokio::test]
async fn malformed_answers_are_422() {
    let data = dataset(8);
    let h = Harness::new();
    h.post("/sessions", &create_body("m", &data, false)).await;
    let (_, next) = h.get("/session/m/next").await;
    let seq = next["prompt"]["seq"].as_u64().unwrap();
    // an unseeded session starts with a new-category prompt at the root
    assert_eq!(next["prompt"]["type"], "new_category");

    let cases = [
        json!({"seq": seq}),
        json!({"seq": seq, "verdict": true, "keep_at_parent": true}),
        json!({"seq": seq, "keep_at_parent": false}),
        json!({"seq": "one", "verdict": true}),
        json!({"seq": seq, "verdict": true, "extra": 1}),
        json!({"seq": seq, "new_category": {"genus": ""}}),
        // a verdict does not answer a new-category prompt
        json!({"seq": seq, "verdict": true}),
        // the root layer cannot keep objects
        json!({"seq": seq, "keep_at_parent": true}),
    ];
    for case in cases {
        let (status, body) = h.post("/session/m/answer", &case).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{case} -> {body}");
        assert!(body["error"].is_string());
    }
    let (status, _) = h.call(Method::POST, "/session/m/answer", Some("{not json".into())).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (_, unchanged) = h.get("/session/m/next").await;
    assert_eq!(unchanged, next);

    let (status, reply) = h
        .post(
            "/session/m/answer",
            &json!({"seq": seq, "new_category": {"name": "cup", "genus": "round vessel"}}),
        )
        .await;
    assert_eq!(status, StatusCode::OK, "{reply}");
}

#[tokio::test]
async fn create_errors() {
    let data = dataset(9);
    let h = Harness::new();
    let (status, state) = h.post("/sessions", &create_body("dup", &data, false)).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(state["session_id"], "dup");
    let (status, _) = h.post("/sessions", &create_body("dup", &data, false)).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let mut bad_id = create_body("../escape", &data, false);
    let (status, _) = h.post("/sessions", &bad_id).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    bad_id.config.session_id = "ok".into();
    bad_id.manifest = Some("{\"version\": 1}\n".into());
    let (status, _) = h.post("/sessions", &bad_id).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = h.post("/sessions", &json!({"config": {"session_id": "x"}})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (_, list) = h.get("/sessions").await;
    assert_eq!(list, json!(["dup"]));
}

#[tokio::test]
async fn exhausted_queue_reports_done() {
    let data = synth::synthesize(
        &synth::table1_taxonomy(),
        &[("1_2".parse().unwrap(), 2)],
        11,
        0.1,
    );
    let h = Harness::new();
    h.post("/sessions", &create_body("d", &data, true)).await;
    let mut o = oracle(&data, 0.0, 0);
    loop {
        let (_, next) = h.get("/session/d/next").await;
        let Ok(prompt) = serde_json::from_value::<Prompt>(next["prompt"].clone()) else {
            break;
        };
        h.post("/session/d/answer", &AnswerBody::from_answer(&respond(&mut o, &prompt)))
            .await;
    }
    let (status, next) = h.get("/session/d/next").await;
    assert_eq!((status, next), (StatusCode::OK, json!({"done": true})));
    let (_, stats) = h.get("/session/d/stats").await;
    assert_eq!(stats["assigned"], 2);
}

#[tokio::test]
async fn sessions_survive_restart() {
    let data = dataset(12);
    let dir = tempfile::tempdir().unwrap();
    let first = router(Arc::new(Store::new(dir.path())));
    let h = Harness {
        app: first,
        _dir: tempfile::tempdir().unwrap(),
    };
    h.post("/sessions", &create_body("r", &data, true)).await;
    let mut o = oracle(&data, 0.0, 0);
    for _ in 0..20 {
        let (_, next) = h.get("/session/r/next").await;
        let prompt: Prompt = serde_json::from_value(next["prompt"].clone()).unwrap();
        h.post("/session/r/answer", &AnswerBody::from_answer(&respond(&mut o, &prompt)))
            .await;
    }
    let (_, before) = h.get("/session/r/state").await;
    drop(h);

    let restarted = Harness {
        app: router(Arc::new(Store::new(dir.path()))),
        _dir: tempfile::tempdir().unwrap(),
    };
    let (status, after) = restarted.get("/session/r/state").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(before, after);
}

#[test]
fn answer_body_round_trips() {
    let answers = [
        Response::Verdict(false),
        Response::NewCategory(NewCategoryDecision::KeepAtParent),
        Response::NewCategory(NewCategoryDecision::Create(synth::reference_descriptors(
            &"1_2".parse().unwrap(),
        ))),
    ];
    for (seq, response) in answers.into_iter().enumerate() {
        let answer = Answer {
            seq: seq as u64,
            response,
        };
        let body = AnswerBody::from_answer(&answer);
        let text = serde_json::to_string(&body).unwrap();
        let parsed: AnswerBody = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed.into_answer().unwrap(), answer);
    }
}
