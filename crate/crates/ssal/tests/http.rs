mod common;

use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};
use ssal::labeler::{serve, HumanOracle, LabelQueue, LabelServer};
use ssal::metrics::MetricsWriter;
use ssal::recorder::RunRecorder;
use ssal_core::datasets::{make_synthetic_blobs, SplitState};
use ssal_core::oracle::{AnswerSource, Oracle, OracleError, SimulatedOracle};
use ssal_core::trainer::Trainer;

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into()
}

struct Client {
    agent: ureq::Agent,
    base: String,
}

impl Client {
    fn new(server: &LabelServer) -> Self {
        Client {
            agent: agent(),
            base: format!("http://{}", server.local_addr()),
        }
    }

    fn get(&self, path: &str) -> (u16, Vec<u8>, String) {
        let mut r = self.agent.get(format!("{}{path}", self.base)).call().unwrap();
        let ct = r
            .headers()
            .get("content-type")
            .map(|v| v.to_str().unwrap().to_string())
            .unwrap_or_default();
        (r.status().as_u16(), r.body_mut().read_to_vec().unwrap(), ct)
    }

    fn get_json(&self, path: &str) -> (u16, Value) {
        let (s, body, _) = self.get(path);
        (s, if body.is_empty() { Value::Null } else { serde_json::from_slice(&body).unwrap() })
    }

    fn post(&self, body: &str) -> (u16, Value) {
        let mut r = self
            .agent
            .post(format!("{}/api/v1/labels", self.base))
            .header("content-type", "application/json")
            .send(body)
            .unwrap();
        (r.status().as_u16(), r.body_mut().read_json().unwrap())
    }

    fn label(&self, query_id: u64, label: i64) -> (u16, Value) {
        self.post(&json!({ "query_id": query_id, "label": label }).to_string())
    }

    /// Poll until a query is waiting.
    fn next(&self) -> Value {
        for _ in 0..2000 {
            let (s, v) = self.get_json("/api/v1/queries/next");
            if s == 200 {
                return v;
            }
            assert_eq!(s, 204);
            thread::sleep(Duration::from_millis(2));
        }
        panic!("no query arrived");
    }
}

#[test]
fn label_round_trip() {
    let ds = make_synthetic_blobs(3, 4, 8, 1).unwrap();
    let queue = LabelQueue::new(4);
    let server = serve("127.0.0.1:0", queue.clone(), None).unwrap();
    let client = Client::new(&server);

    assert_eq!(client.get_json("/api/v1/queries/next").0, 204);

    let asker = {
        let queue = queue.clone();
        let ds = ds.clone();
        thread::spawn(move || {
            let mut split = SplitState::unlabeled(ds.len());
            let q = split.issue_query(&ds, 5).unwrap();
            HumanOracle::new(queue).ask(&q, None)
        })
    };

    let q = client.next();
    let id = q["query_id"].as_u64().unwrap();
    assert_eq!(q["dataset_index"], 5);
    assert_eq!(q["queue_depth"], 1);
    assert_eq!(q["image_url"], format!("/api/v1/images/{id}"));
    assert_eq!(q["class_names"].as_array().unwrap().len(), 3);

    let (s, png, ct) = client.get(&format!("/api/v1/images/{id}"));
    assert_eq!((s, ct.as_str()), (200, "image/png"));
    let decoder = png::Decoder::new(std::io::Cursor::new(png));
    let info = decoder.read_info().unwrap().info().clone();
    assert_eq!((info.width, info.height, info.color_type), (8, 8, png::ColorType::Rgb));
    assert_eq!(client.get("/api/v1/images/999").0, 404);
    assert_eq!(client.get("/api/v1/images/not-a-number").0, 404);

    assert_eq!(client.post("{\"query_id\": 0}").0, 422);
    assert_eq!(client.post("not json").0, 422);
    assert_eq!(client.label(id, 3).0, 422);
    assert_eq!(client.label(id, -1).0, 422);
    assert_eq!(client.label(id + 100, 1).0, 404);

    let (s, v) = client.label(id, 2);
    assert_eq!(s, 200);
    assert_eq!(v, json!({ "query_id": id, "label": 2, "accepted": true }));
    assert_eq!(client.label(id, 1).0, 409);

    let answer = asker.join().unwrap().unwrap();
    assert_eq!((answer.query_id, answer.label, answer.source), (id, 2, AnswerSource::Human));
    assert_eq!(client.get_json("/api/v1/queries/next").0, 204);
    assert_eq!(client.get(&format!("/api/v1/images/{id}")).0, 404);
    server.shutdown();
}

#[test]
fn answers_may_arrive_out_of_order() {
    let ds = make_synthetic_blobs(3, 4, 8, 1).unwrap();
    let queue = LabelQueue::new(4);
    let server = serve("127.0.0.1:0", queue.clone(), None).unwrap();
    let client = Client::new(&server);

    let mut split = SplitState::unlabeled(ds.len());
    let queries: Vec<_> = [2, 7].iter().map(|&i| split.issue_query(&ds, i).unwrap()).collect();
    let askers: Vec<_> = queries
        .iter()
        .cloned()
        .map(|q| {
            let queue = queue.clone();
            thread::spawn(move || HumanOracle::new(queue).ask(&q, Some(Duration::from_secs(30))))
        })
        .collect();
    while queue.depth() < 2 {
        thread::sleep(Duration::from_millis(1));
    }
    assert_eq!(client.next()["query_id"], queries[0].query_id);
    assert_eq!(client.label(queries[1].query_id, 1).0, 200);
    assert_eq!(client.next()["queue_depth"], 1);
    assert_eq!(client.label(queries[0].query_id, 0).0, 200);
    let answers: Vec<_> = askers.into_iter().map(|h| h.join().unwrap().unwrap()).collect();
    assert_eq!(answers[0].label, 0);
    assert_eq!(answers[1].label, 1);
    assert_eq!(answers[1].query_id, queries[1].query_id);
}

#[test]
fn unanswered_query_times_out_and_is_withdrawn() {
    let ds = make_synthetic_blobs(2, 2, 8, 1).unwrap();
    let queue = LabelQueue::new(2);
    let mut split = SplitState::unlabeled(ds.len());
    let q = split.issue_query(&ds, 0).unwrap();
    let err = HumanOracle::new(queue.clone()).ask(&q, Some(Duration::from_millis(20))).unwrap_err();
    assert_eq!(err, OracleError::Timeout { query_id: q.query_id });
    assert_eq!(queue.depth(), 0);
    assert_eq!(format!("{:?}", queue.submit(q.query_id, 0)), "UnknownQuery");
}

#[test]
fn bind_failure_is_reported() {
    let queue = LabelQueue::new(1);
    let first = serve("127.0.0.1:0", queue.clone(), None).unwrap();
    let taken = first.local_addr().to_string();
    assert!(serve(&taken, queue, None).is_err());
}

#[test]
fn static_files_are_served_beside_the_api() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<h1>labels</h1>").unwrap();
    let server = serve("127.0.0.1:0", LabelQueue::new(1), Some(dir.path().to_path_buf())).unwrap();
    let client = Client::new(&server);
    let (s, body, _) = client.get("/index.html");
    assert_eq!((s, body.as_slice()), (200, b"<h1>labels</h1>".as_slice()));
    assert_eq!(client.get_json("/api/v1/status").0, 200);
}

/// A person answering every query correctly over HTTP produces the same run
/// as the simulated oracle.
#[test]
fn human_run_over_http_matches_simulated_run() {
    let cfg = common::tiny();
    let (train, test) = cfg.data.load().unwrap();
    let trainer = Trainer::new(cfg.train.clone(), &train, &test).unwrap();

    let mut sim = SimulatedOracle::new(&train);
    let state = trainer.initial_state(&mut sim).unwrap();
    let expected = trainer.run(state, &mut sim, &mut ()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let queue = LabelQueue::new(4);
    let server = serve("127.0.0.1:0", queue.clone(), None).unwrap();
    let client = Client::new(&server);
    let metrics = MetricsWriter::append(&dir.path().join("metrics.jsonl")).unwrap();
    let mut recorder =
        RunRecorder::new(cfg.clone(), metrics, dir.path().join("checkpoint.json")).with_status(Arc::clone(&queue));

    let got = thread::scope(|s| {
        let run = s.spawn(|| {
            let mut human = HumanOracle::new(queue.clone());
            let state = trainer.initial_state(&mut human).unwrap();
            trainer.run(state, &mut human, &mut recorder).unwrap()
        });
        let mut answered = 0;
        while answered < cfg.train.active.budget {
            let q = client.next();
            let index = q["dataset_index"].as_u64().unwrap() as usize;
            let truth = train.hidden_label(index).unwrap() as i64;
            assert_eq!(client.label(q["query_id"].as_u64().unwrap(), truth).0, 200);
            answered += 1;
        }
        run.join().unwrap()
    });

    assert_eq!(got.final_accuracy, expected.final_accuracy);
    assert_eq!(got.history, expected.history);
    assert_eq!(got.state.net.params(), expected.state.net.params());
    assert_eq!(got.state.split.pool(), expected.state.split.pool());

    let (_, status) = client.get_json("/api/v1/status");
    assert_eq!(status["labels_collected"], 8);
    assert_eq!(status["budget"], 8);
    assert_eq!(status["total_steps"], 40);
    assert_eq!(status["finished"], true);
    assert_eq!(status["phase"], "joint");
    assert_eq!(status["test_accuracy"].as_f64(), Some(got.final_accuracy));
    assert_eq!(status["queue_depth"], 0);
}
