#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::atomic::Ordering;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use ptylab::config::{EvaluationConfig, SessionConfig};
use ptylab::formats;
use ptylab::session::{Session, SessionShared, StopReason};
use ptylab::AppResult;
use ptylab_core::evolution::{CompressionPolicy, PolicyConfig};
use ptylab_core::metrics::{Aggregation, TierPolicy};
use ptylab_core::sim::{Archetype, SimSetup};
use serde_json::{json, Value};

/// Simulates a dataset into `dir/name` and returns that directory.
pub fn save_sim(dir: &Path, name: &str, archetype: Archetype, size: usize, seed: u64) -> PathBuf {
    let out = dir.join(name);
    let ds = SimSetup::for_archetype(archetype, size, seed).build().unwrap();
    formats::save_dataset(&out, &ds).unwrap();
    out
}

pub fn config(
    dataset: &Path,
    output_dir: &Path,
    evaluation: EvaluationConfig,
    generations: u64,
    epochs: usize,
) -> SessionConfig {
    SessionConfig {
        dataset: dataset.to_path_buf(),
        evaluation,
        policy: PolicyConfig::default(),
        compression: CompressionPolicy::default(),
        tiers: TierPolicy::default(),
        backend: Default::default(),
        generations,
        epochs,
        output_dir: output_dir.to_path_buf(),
        seed: 42,
        checkpoint_every: 5,
    }
}

pub fn ground_truth() -> EvaluationConfig {
    EvaluationConfig::GroundTruth {
        aggregation: Aggregation::Mean,
    }
}

pub fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(30)))
        .build()
        .into()
}

pub fn get(agent: &ureq::Agent, url: &str) -> (u16, Vec<u8>) {
    let mut r = agent.get(url).call().unwrap();
    (r.status().as_u16(), r.body_mut().read_to_vec().unwrap())
}

pub fn get_json(agent: &ureq::Agent, url: &str) -> (u16, Value) {
    let (status, body) = get(agent, url);
    (status, serde_json::from_slice(&body).unwrap_or(Value::Null))
}

pub fn post(agent: &ureq::Agent, url: &str, body: &str) -> (u16, Value) {
    let mut r = agent
        .post(url)
        .header("Content-Type", "application/json")
        .send(body)
        .unwrap();
    let status = r.status().as_u16();
    let text = r.body_mut().read_to_string().unwrap();
    (status, serde_json::from_str(&text).unwrap_or(Value::Null))
}

/// Polls `f` every 50 ms until it yields a value or `timeout` passes.
pub fn wait_for<T>(timeout: Duration, mut f: impl FnMut() -> Option<T>) -> Option<T> {
    let start = Instant::now();
    while start.elapsed() < timeout {
        if let Some(v) = f() {
            return Some(v);
        }
        std::thread::sleep(Duration::from_millis(50));
    }
    None
}

/// A session loop plus the HTTP service on an ephemeral port.
pub struct Served {
    pub base: String,
    pub shared: Arc<SessionShared>,
    loop_thread: Option<JoinHandle<AppResult<StopReason>>>,
    server_thread: Option<JoinHandle<()>>,
}

impl Served {
    pub fn start(cfg: SessionConfig) -> Self {
        let mut session = Session::open(cfg).unwrap();
        let shared = session.shared.clone();
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        listener.set_nonblocking(true).unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let server_shared = shared.clone();
        let server_thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).unwrap();
                ptylab::server::serve(listener, server_shared).await.unwrap();
            });
        });
        let loop_thread = std::thread::spawn(move || session.run_configured().map(|(reason, _)| reason));
        Self {
            base,
            shared,
            loop_thread: Some(loop_thread),
            server_thread: Some(server_thread),
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    /// Raises the stop flag and joins both threads.
    pub fn stop(mut self) -> StopReason {
        self.shared.stop.store(true, Ordering::SeqCst);
        let reason = self.loop_thread.take().unwrap().join().unwrap().unwrap();
        self.server_thread.take().unwrap().join().unwrap();
        reason
    }
}

impl Drop for Served {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
    }
}

fn ensure(ok: bool, what: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what.into())
    }
}

/// Exercises the evaluation API against a human-mode session: pending
/// ticket, image fetch, score submission, recorded tier, loop advance, and
/// the 404 / 409 / 422 paths. Returns a one-line summary.
pub fn http_contract() -> Result<String, String> {
    let tmp = tempfile::tempdir().unwrap();
    let data = save_sim(tmp.path(), "data", Archetype::Multislice, 48, 3);
    let cfg = config(&data, &tmp.path().join("out"), EvaluationConfig::Human, 4, 3);
    let served = Served::start(cfg);
    let a = agent();
    let long = Duration::from_secs(120);
    let mut checked = 0usize;
    let mut check = |ok: bool, what: &str| -> Result<(), String> {
        checked += 1;
        ensure(ok, what)
    };

    let first = wait_for(long, || {
        let (s, v) = get_json(&a, &served.url("/api/pending"));
        (s == 200 && v.as_array().is_some_and(|x| !x.is_empty())).then(|| v[0].clone())
    })
    .ok_or("no pending ticket appeared")?;
    check(first["ticket"] == "t0000", "first ticket is t0000")?;
    check(first["layer_count"] == 2, "multislice ticket has two layers")?;
    let (s, session) = get_json(&a, &served.url("/api/session"));
    check(s == 200 && session["state"] == "awaiting_human", "session reports awaiting_human")?;
    check(session["generation"] == 0, "loop blocked at generation 0")?;

    for layer in 0..2 {
        let (s, png_bytes) = get(&a, &served.url(&format!("/api/images/t0000/{layer}.png")));
        check(s == 200, "image fetch succeeds")?;
        let decoder = png::Decoder::new(std::io::Cursor::new(png_bytes));
        let reader = decoder.read_info().map_err(|e| format!("png decode: {e}"))?;
        let info = reader.info();
        check(
            (info.width, info.height) == (48, 48) && info.color_type == png::ColorType::Grayscale,
            "image is a 48x48 grayscale PNG",
        )?;
    }
    check(get(&a, &served.url("/api/images/t0000/2.png")).0 == 404, "missing layer is 404")?;
    check(get(&a, &served.url("/api/images/t9999/0.png")).0 == 404, "unknown ticket image is 404")?;
    check(get(&a, &served.url("/api/images/t0000/zero.png")).0 == 404, "bad image name is 404")?;

    let eval = served.url("/api/evaluations/t0000");
    check(post(&a, &served.url("/api/evaluations/t9999"), r#"{"score":0.5}"#).0 == 404, "unknown ticket POST is 404")?;
    check(post(&a, &eval, r#"{"score":1.5}"#).0 == 422, "score above 1 is 422")?;
    check(post(&a, &eval, r#"{"score":-0.1}"#).0 == 422, "negative score is 422")?;
    check(post(&a, &eval, r#"{"feedback":"no score"}"#).0 == 422, "missing score is 422")?;
    check(post(&a, &eval, "not json").0 == 422, "malformed body is 422")?;

    let body = json!({"score": 0.95, "feedback": "sharp layers", "suggestions": "try stronger depth coupling"});
    let (s, result) = post(&a, &eval, &body.to_string());
    check(s == 200 && result["tier"] == "excellent", "score POST returns the excellent tier")?;
    check(post(&a, &eval, r#"{"score":0.2}"#).0 == 409, "second POST is 409")?;

    let record = wait_for(long, || {
        let (_, v) = get_json(&a, &served.url("/api/history"));
        v.as_array()
            .and_then(|h| h.iter().find(|r| r["generation"] == 0).cloned())
    })
    .ok_or("generation 0 never reached the history")?;
    check(record["outcome"]["eval"]["tier"] == "excellent", "recorded tier is excellent")?;
    check(record["outcome"]["eval"]["mode"] == "human", "recorded mode is human")?;
    check(
        record["outcome"]["eval"]["suggestions"] == "try stronger depth coupling",
        "suggestion is recorded",
    )?;

    let next = wait_for(long, || {
        let (_, v) = get_json(&a, &served.url("/api/pending"));
        v.as_array()
            .and_then(|x| x.first())
            .filter(|t| t["ticket"] == "t0001")
            .cloned()
    });
    check(next.is_some(), "loop advances to ticket t0001")?;
    let (_, session) = get_json(&a, &served.url("/api/session"));
    check(session["generation"] == 1, "session generation advanced to 1")?;
    check(session["best_score"] == 0.95, "best score is the submitted one")?;

    let id = record["id"].as_str().unwrap_or_default().to_string();
    let (s, tree) = get_json(&a, &served.url(&format!("/api/lineage/{id}")));
    check(s == 200 && tree["id"] == id.as_str(), "lineage of the recorded id")?;
    check(get(&a, &served.url("/api/lineage/g9999-missing")).0 == 404, "unknown lineage id is 404")?;

    let reason = served.stop();
    check(reason == StopReason::Interrupted, "stop while awaiting a score interrupts")?;
    let state = formats::latest_checkpoint(&tmp.path().join("out"))
        .map_err(|e| e.to_string())?
        .ok_or("no checkpoint after stop")?;
    check(state.exists(), "checkpoint written on stop")?;
    Ok(format!("{checked} checks, ticket t0000 scored 0.95 -> excellent, loop advanced to t0001"))
}

/// Minimal HTTP/1.1 server answering each POST from a responder closure.
/// Request bodies are recorded in arrival order.
pub struct MockEndpoint {
    pub url: String,
    pub requests: Arc<Mutex<Vec<String>>>,
}

impl MockEndpoint {
    pub fn start(mut respond: impl FnMut(usize, &str) -> (u16, String) + Send + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = requests.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        break;
                    }
                    let line = line.trim_end();
                    if line.is_empty() {
                        break;
                    }
                    if let Some((k, v)) = line.split_once(':') {
                        if k.eq_ignore_ascii_case("content-length") {
                            len = v.trim().parse().unwrap_or(0);
                        }
                    }
                }
                let mut body = vec![0u8; len];
                if reader.read_exact(&mut body).is_err() {
                    continue;
                }
                let body = String::from_utf8_lossy(&body).into_owned();
                let n = {
                    let mut l = log.lock().unwrap();
                    l.push(body.clone());
                    l.len() - 1
                };
                let (status, reply) = respond(n, &body);
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                    reply.len()
                );
            }
        });
        Self { url, requests }
    }

    pub fn count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}
