use std::sync::Arc;
use std::thread;

use abase_gateway::http::serve;
use abase_gateway::Gateway;
use analysis_base::{AnalysisBase, StorageUrls};
use reqwest::blocking::{Client, RequestBuilder};
use serde_json::{json, Value};

struct Api {
    base: String,
    client: Client,
    _dir: tempfile::TempDir,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    handle: Option<thread::JoinHandle<()>>,
}

impl Api {
    fn start() -> Api {
        let dir = tempfile::tempdir().unwrap();
        let storage = dir.path().join("storage");
        std::fs::create_dir_all(&storage).unwrap();
        let base = AnalysisBase::open(&dir.path().join("store"), StorageUrls::for_directory(&storage).unwrap()).unwrap();
        let gw = Arc::new(Gateway::new(base, 1));
        let runtime = tokio::runtime::Runtime::new().unwrap();
        let listener = runtime.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let handle = thread::spawn(move || {
            runtime
                .block_on(serve(listener, gw, async {
                    let _ = rx.await;
                }))
                .unwrap();
        });
        Api {
            base: format!("http://{addr}"),
            client: Client::new(),
            _dir: dir,
            stop: Some(tx),
            handle: Some(handle),
        }
    }

    fn call(&self, rb: RequestBuilder, caller: Option<&str>) -> (u16, Value) {
        let rb = match caller {
            Some(c) => rb.header("x-caller-id", c),
            None => rb,
        };
        let resp = rb.send().unwrap();
        let status = resp.status().as_u16();
        let text = resp.text().unwrap();
        (status, serde_json::from_str(&text).unwrap_or(Value::String(text)))
    }

    fn post(&self, path: &str, body: Value, caller: Option<&str>) -> (u16, Value) {
        self.call(self.client.post(format!("{}{path}", self.base)).json(&body), caller)
    }

    fn get(&self, path: &str, caller: Option<&str>) -> (u16, Value) {
        self.call(self.client.get(format!("{}{path}", self.base)), caller)
    }
}

impl Drop for Api {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn class(v: &Value) -> &str {
    v["error"]["class"].as_str().unwrap()
}

#[test]
fn error_classes_map_to_status_codes() {
    let api = Api::start();
    assert_eq!(api.get("/health", None), (200, json!({ "status": "ok" })));

    let (status, admin) = api.post("/users", json!({ "name": "admin", "role": "admin" }), None);
    assert_eq!(status, 201);
    let admin = admin["user_id"].as_str().unwrap().to_owned();

    // a second bootstrap without a caller is refused
    let (status, body) = api.post("/users", json!({ "name": "x", "role": "admin" }), None);
    assert_eq!((status, class(&body)), (403, "permission"));

    let (status, body) = api.post("/users", json!({ "name": "x" }), Some(&admin));
    assert_eq!((status, class(&body)), (400, "validation"));
    let (status, body) = api.post("/users", json!({ "name": "x", "role": "admin" }), Some("not-an-id"));
    assert_eq!((status, class(&body)), (400, "validation"));

    let (status, body) = api.get("/analyses/00000000000000000000000000000001", None);
    assert_eq!((status, class(&body)), (404, "not_found"));
    assert!(body["error"]["message"].as_str().unwrap().contains("analysis"));
    let (status, body) = api.get("/query/provenance/nonsense", None);
    assert_eq!((status, class(&body)), (404, "not_found"));

    let (status, _) = api.get("/no/such/route", None);
    assert_eq!(status, 404);

    let (status, body) = api.post("/algorithms", json!({ "name": "line-count", "toolkit": "toy", "executable_lfn": "lfn://toolkit/line-count" }), Some(&admin));
    assert_eq!(status, 201, "{body}");
    let (status, body) = api.post("/algorithms", json!({ "name": "line-count", "toolkit": "toy", "executable_lfn": "lfn://toolkit/line-count" }), Some(&admin));
    assert_eq!((status, class(&body)), (409, "state"));
}

#[test]
fn pipeline_versions_and_deactivation() {
    let api = Api::start();
    let (_, admin) = api.post("/users", json!({ "name": "admin", "role": "admin" }), None);
    let admin = admin["user_id"].as_str().unwrap().to_owned();
    let (_, user) = api.post("/users", json!({ "name": "ana", "role": "neuroscientist" }), Some(&admin));
    let user = user["user_id"].as_str().unwrap().to_owned();
    for name in ["line-count", "concatenate"] {
        let lfn = format!("lfn://toolkit/{name}");
        let (status, _) = api.post("/algorithms", json!({ "name": name, "toolkit": "toy", "executable_lfn": lfn }), Some(&admin));
        assert_eq!(status, 201);
    }
    let def = "pipeline tally\nstep a uses line-count in t=scalar out n\n";
    let (status, reg) = api.post("/pipelines", json!({ "definition": def }), Some(&user));
    assert_eq!(status, 201, "{reg}");
    let pid = reg["pipeline"]["pipeline_id"].as_str().unwrap().to_owned();
    assert_eq!(reg["version"], 1);

    let def2 = "pipeline tally\nstep a uses line-count in t=scalar out n\nstep b uses concatenate after a in x=a.n out y\n";
    let (status, v2) = api.post(&format!("/pipelines/{pid}/versions"), json!({ "definition": def2 }), Some(&user));
    assert_eq!((status, v2["version"].clone()), (201, json!(2)));

    let (status, run) = api.post(
        "/analyses",
        json!({ "pipeline": format!("{pid}@1"), "inputs": ["a.t=7"], "failure_rate": 0.0 }),
        Some(&user),
    );
    assert_eq!(status, 201, "{run}");
    assert_eq!(run["status"], "completed");
    let (status, found) = api.get("/query/pipelines?algorithm=concatenate", None);
    assert_eq!(status, 200);
    assert_eq!(found.as_array().unwrap().len(), 1);

    // deactivated users cannot submit
    let (status, _) = patch(&api, &format!("/users/{user}/active"), json!({ "active": false }), &admin);
    assert_eq!(status, 200);
    let (status, body) = api.post(
        "/analyses",
        json!({ "pipeline": format!("{pid}@2"), "inputs": ["a.t=7"] }),
        Some(&user),
    );
    assert_eq!((status, class(&body)), (403, "permission"));
    let (status, body) = patch(&api, &format!("/users/{admin}/active"), json!({ "active": false }), &user);
    assert_eq!((status, class(&body)), (403, "permission"));
}

fn patch(api: &Api, path: &str, body: Value, caller: &str) -> (u16, Value) {
    api.call(api.client.patch(format!("{}{path}", api.base)).json(&body), Some(caller))
}
