//! Completion client for the classification and triage calls, with a
//! content-addressed exchange cache and an offline classifier.

mod cache;
mod http;

use std::fmt;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{cache_key, CompletionExchange, ExchangeCache};

use crate::extraction::{Codebase, FunctionRecord};
use crate::summaries::FunctionSummary;
use crate::summary_validation::{ValidationConfig, Validator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheMode {
    /// Always call the endpoint; nothing is read or written.
    Live,
    /// Serve hits from the cache, call and persist on a miss.
    #[default]
    Record,
    /// Serve hits from the cache; a miss is an error.
    Replay,
}

impl std::str::FromStr for CacheMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "live" => Ok(CacheMode::Live),
            "record" => Ok(CacheMode::Record),
            "replay" => Ok(CacheMode::Replay),
            _ => Err(format!("unknown cache mode {s:?} (live, record, replay)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientConfig {
    /// OpenAI-compatible chat completions URL.
    pub endpoint: String,
    pub model_id: String,
    /// Environment variable holding a bearer token; empty means no auth.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub retry_backoff_ms: u64,
    pub temperature: f64,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model_id: "generation".into(),
            api_key_env: "LEAKSCOPE_API_KEY".into(),
            timeout_secs: 120,
            max_retries: 3,
            retry_backoff_ms: 500,
            temperature: 0.0,
        }
    }
}

impl ClientConfig {
    pub fn triage_default() -> Self {
        ClientConfig { model_id: "triage".into(), ..ClientConfig::default() }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        if self.timeout_secs == 0 {
            return Err(ClientError::Config("timeout must be positive".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(ClientError::Config(format!("invalid temperature {}", self.temperature)));
        }
        if self.model_id.is_empty() {
            return Err(ClientError::Config("model_id is empty".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transient failure after {attempts} attempt(s): {message}")]
    Transient { attempts: u32, message: String },
    #[error("permanent failure: {0}")]
    Permanent(String),
    #[error("no recorded exchange for key {key}")]
    CacheMiss { key: String },
    #[error("invalid client configuration: {0}")]
    Config(String),
    #[error("cache i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl ClientError {
    pub fn is_transient(&self) -> bool {
        matches!(self, ClientError::Transient { .. })
    }
}

/// Anything that turns a prompt into a completion.
pub trait Completer: Send + Sync {
    fn model_id(&self) -> &str;
    fn complete(&self, prompt: &str) -> Result<String, ClientError>;
}

pub struct LlmClient {
    config: ClientConfig,
    mode: CacheMode,
    cache: Option<ExchangeCache>,
    transport: http::Transport,
    network_calls: AtomicUsize,
}

impl fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LlmClient").field("model_id", &self.config.model_id).field("mode", &self.mode).finish()
    }
}

impl LlmClient {
    /// `cache_dir` is required for record and replay modes.
    pub fn new(config: ClientConfig, mode: CacheMode, cache_dir: Option<PathBuf>) -> Result<Self, ClientError> {
        config.validate()?;
        let cache = match (mode, cache_dir) {
            (CacheMode::Live, _) => None,
            (_, Some(dir)) => Some(ExchangeCache::open(dir)?),
            (_, None) => return Err(ClientError::Config(format!("{mode:?} mode needs a cache directory"))),
        };
        let transport = http::Transport::new(&config);
        Ok(LlmClient { config, mode, cache, transport, network_calls: AtomicUsize::new(0) })
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    pub fn mode(&self) -> CacheMode {
        self.mode
    }

    /// Number of requests that reached the transport.
    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::Relaxed)
    }

    fn call_with_retries(&self, prompt: &str) -> Result<String, ClientError> {
        let key = match self.config.api_key_env.as_str() {
            "" => None,
            var => std::env::var(var).ok(),
        };
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.network_calls.fetch_add(1, Ordering::Relaxed);
            match self.transport.send(&self.config, key.as_deref(), prompt) {
                Ok(text) => return Ok(text),
                Err(http::Failure::Permanent(m)) => return Err(ClientError::Permanent(m)),
                Err(http::Failure::Transient(m)) if attempt > self.config.max_retries => {
                    return Err(ClientError::Transient { attempts: attempt, message: m });
                }
                Err(http::Failure::Transient(m)) => {
                    let wait = self.config.retry_backoff_ms.saturating_mul(1 << (attempt - 1).min(10));
                    log::warn!("{}: attempt {attempt} failed ({m}), retrying in {wait} ms", self.config.model_id);
                    std::thread::sleep(Duration::from_millis(wait));
                }
            }
        }
    }
}

impl Completer for LlmClient {
    fn model_id(&self) -> &str {
        &self.config.model_id
    }

    fn complete(&self, prompt: &str) -> Result<String, ClientError> {
        let key = cache_key(&self.config.model_id, prompt);
        if let Some(cache) = &self.cache {
            if let Some(ex) = cache.get(&key)? {
                return Ok(ex.response);
            }
            if self.mode == CacheMode::Replay {
                return Err(ClientError::CacheMiss { key });
            }
        }
        let response = self.call_with_retries(prompt)?;
        if let Some(cache) = &self.cache {
            cache.put(&CompletionExchange {
                prompt: prompt.to_string(),
                response: response.clone(),
                cache_key: key,
                model_id: self.config.model_id.clone(),
            })?;
        }
        Ok(response)
    }
}

/// Offline stand-in for the model: every role the function's own CFG
/// supports, with callees resolved transitively up to the depth bound.
pub fn heuristic_classify(record: &FunctionRecord, codebase: &Codebase) -> Vec<FunctionSummary> {
    Validator::new(codebase, ValidationConfig::default()).classify(record)
}

/// Classifies many records with one shared resolver memo.
pub fn heuristic_classify_all(records: &[FunctionRecord], codebase: &Codebase, config: &ValidationConfig) -> Vec<FunctionSummary> {
    use rayon::prelude::*;
    let v = Validator::new(codebase, config.clone());
    records.par_iter().flat_map_iter(|r| v.classify(r)).collect()
}

#[cfg(test)]
mod tests {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    use super::*;
    use crate::extraction::{parse_source, Language, PointerAliasTable};
    use crate::summaries::{MmRole, OwnershipTarget, Provenance};

    /// Serves `replies` in order, one per connection, then stops.
    fn stub_server(replies: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                bodies.push(String::from_utf8(buf).unwrap());
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            bodies
        });
        (url, handle)
    }

    fn reply(text: &str) -> String {
        serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
    }

    fn config(url: &str) -> ClientConfig {
        ClientConfig { endpoint: url.into(), model_id: "m".into(), api_key_env: String::new(), retry_backoff_ms: 1, ..Default::default() }
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let (url, server) = stub_server(vec![(200, reply("fixed text"))]);
        let c = LlmClient::new(config(&url), CacheMode::Record, Some(dir.path().into())).unwrap();
        assert_eq!(c.complete("hello").unwrap(), "fixed text");
        let sent = server.join().unwrap();
        let req: serde_json::Value = serde_json::from_str(&sent[0]).unwrap();
        assert_eq!(req["model"], "m");
        assert_eq!(req["temperature"], 0.0);
        assert_eq!(req["messages"][0]["content"], "hello");
        let key = cache_key("m", "hello");
        assert!(dir.path().join(format!("{key}.json")).exists());

        let r = LlmClient::new(config("http://127.0.0.1:9/unused"), CacheMode::Replay, Some(dir.path().into())).unwrap();
        assert_eq!(r.complete("hello").unwrap(), "fixed text");
        assert_eq!(r.network_calls(), 0);
        assert!(matches!(r.complete("other"), Err(ClientError::CacheMiss { .. })));
    }

    #[test]
    fn transient_then_success_and_permanent() {
        let (url, server) = stub_server(vec![(503, "busy".into()), (200, reply("ok"))]);
        let c = LlmClient::new(config(&url), CacheMode::Live, None).unwrap();
        assert_eq!(c.complete("p").unwrap(), "ok");
        assert_eq!(c.network_calls(), 2);
        server.join().unwrap();

        let (url, server) = stub_server(vec![(401, "no".into())]);
        let c = LlmClient::new(config(&url), CacheMode::Live, None).unwrap();
        assert!(matches!(c.complete("p"), Err(ClientError::Permanent(_))));
        server.join().unwrap();
    }

    #[test]
    fn retries_exhausted_is_transient() {
        let (url, server) = stub_server(vec![(500, "x".into()), (500, "x".into())]);
        let c = LlmClient::new(ClientConfig { max_retries: 1, ..config(&url) }, CacheMode::Live, None).unwrap();
        let e = c.complete("p").unwrap_err();
        assert!(e.is_transient(), "{e}");
        server.join().unwrap();
    }

    #[test]
    fn config_checks() {
        assert!(ClientConfig { timeout_secs: 0, ..Default::default() }.validate().is_err());
        assert!(LlmClient::new(ClientConfig::default(), CacheMode::Replay, None).is_err());
        assert_eq!("replay".parse::<CacheMode>().unwrap(), CacheMode::Replay);
    }

    #[test]
    fn heuristic_examples() {
        let (rs, _, _) = parse_source(
            "h.c",
            "void *mk(int n){ return malloc(n); }\nint inc(int x){ return x + 1; }\n\
             void inner(struct c *c){ free(c->name); free(c); }\nvoid outer(struct c *c){ inner(c); }\n",
            Language::C,
        );
        let cb = Codebase::from_records("/", rs, PointerAliasTable::default());
        let mk = heuristic_classify(cb.get("mk").unwrap(), &cb);
        assert_eq!(mk.len(), 1);
        assert_eq!((mk[0].role, mk[0].target, mk[0].provenance), (MmRole::Allocator, OwnershipTarget::Return, Provenance::Heuristic));
        assert!(heuristic_classify(cb.get("inc").unwrap(), &cb).is_empty());
        let outer = heuristic_classify(cb.get("outer").unwrap(), &cb);
        assert_eq!(outer, vec![FunctionSummary::deallocator("outer", 0).with_provenance(Provenance::Heuristic)]);
    }
}
