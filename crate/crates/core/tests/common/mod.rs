#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

pub mod goldens;

use annobias::corpus::{load_corpus, Format};
use annobias::llm::{Clock, EndpointConfig};
use annobias::synth::SynthConfig;
use annobias::{AttributeSchema, Corpus};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn fixture_synth_config() -> SynthConfig {
    let s = std::fs::read_to_string(fixture("fixture_synth.toml")).unwrap();
    SynthConfig::from_toml_str(&s, "fixture_synth.toml").unwrap()
}

pub fn fixture_schema() -> Arc<AttributeSchema> {
    Arc::new(AttributeSchema::load(&fixture("fixture_vocabulary.toml"), None).unwrap())
}

pub fn fixture_corpus() -> Corpus {
    load_corpus(&fixture("fixture_corpus.csv"), Format::CanonicalCsv, fixture_schema()).unwrap()
}

/// One text per post id, as synthetic corpora carry none.
pub fn synthetic_texts(corpus: &Corpus) -> BTreeMap<String, String> {
    corpus
        .index()
        .keys()
        .map(|p| (p.clone(), format!("synthetic post {p}")))
        .collect()
}

/// Compares `actual` with a checked-in file under the fixtures directory, or
/// rewrites it when `ANNOBIAS_BLESS` is set.
pub fn golden(name: &str, actual: &[u8]) -> Result<(), String> {
    let path = fixture(name);
    if std::env::var_os("ANNOBIAS_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return Ok(());
    }
    let expected = std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if expected == actual {
        Ok(())
    } else {
        Err(format!("{name} differs from golden"))
    }
}

/// Virtual time that advances only when slept on.
#[derive(Default)]
pub struct FakeClock(AtomicU64);

impl Clock for FakeClock {
    fn now(&self) -> Duration {
        Duration::from_micros(self.0.load(Ordering::SeqCst))
    }
    fn sleep(&self, d: Duration) {
        self.0.fetch_add(d.as_micros() as u64, Ordering::SeqCst);
    }
}

fn fnv(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

/// How the mock endpoint answers a prompt.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Script {
    /// A well-formed reply whose label is a hash of the prompt.
    Hashed,
    /// Prose with no JSON object in it.
    Malformed,
    /// Malformed for the first two requests of each prompt, then hashed.
    FlakyParse,
    /// HTTP 500 on every request.
    ServerError,
}

pub fn hashed_label(prompt: &str) -> &'static str {
    ["no", "maybe", "yes"][(fnv(prompt) % 3) as usize]
}

/// Scripted chat-completions server on a loopback port.
pub struct MockEndpoint {
    pub base_url: String,
    pub requests: Arc<AtomicUsize>,
    server: Arc<tiny_http::Server>,
    handle: Option<JoinHandle<()>>,
}

impl MockEndpoint {
    pub fn start(script: Script) -> Self {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").unwrap());
        let port = server.server_addr().to_ip().unwrap().port();
        let requests = Arc::new(AtomicUsize::new(0));
        let (srv, count) = (server.clone(), requests.clone());
        let handle = std::thread::spawn(move || {
            let mut seen: BTreeMap<u64, usize> = BTreeMap::new();
            for mut req in srv.incoming_requests() {
                count.fetch_add(1, Ordering::SeqCst);
                let mut body = String::new();
                req.as_reader().read_to_string(&mut body).unwrap();
                let v: serde_json::Value = serde_json::from_str(&body).unwrap();
                let prompt = v["messages"][0]["content"].as_str().unwrap_or_default().to_string();
                let nth = {
                    let e = seen.entry(fnv(&prompt)).or_default();
                    *e += 1;
                    *e
                };
                let content = match script {
                    Script::ServerError => {
                        let _ = req.respond(tiny_http::Response::from_string("boom").with_status_code(500));
                        continue;
                    }
                    Script::Malformed => "I would rather not answer in JSON.".to_string(),
                    Script::FlakyParse if nth <= 2 => "{\"hate_speech\": ".to_string(),
                    _ => format!(
                        "Sure. {{\"hate_speech\": \"{}\", \"targets\": []}}",
                        hashed_label(&prompt)
                    ),
                };
                let reply = serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]});
                let _ = req.respond(tiny_http::Response::from_string(reply.to_string()));
            }
        });
        MockEndpoint {
            base_url: format!("http://127.0.0.1:{port}/v1"),
            requests,
            server,
            handle: Some(handle),
        }
    }

    pub fn config(&self) -> EndpointConfig {
        EndpointConfig {
            base_url: self.base_url.clone(),
            model_name: "mock".into(),
            timeout_secs: 10,
            ..EndpointConfig::default()
        }
    }

    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Drop for MockEndpoint {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
