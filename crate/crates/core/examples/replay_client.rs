//! Record a completion from an OpenAI-compatible endpoint into the exchange
//! cache, then serve it again in replay mode without touching the network.
//! A throwaway local server stands in for the model endpoint.
//!
//! cargo run --example replay_client

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;

use leakscope::llm_client::{CacheMode, ClientConfig, ClientError, Completer, ExchangeCache, LlmClient};

/// Answers `n` requests with a fixed summary response.
fn serve(n: usize) -> std::io::Result<(String, std::thread::JoinHandle<()>)> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let url = format!("http://{}/v1/chat/completions", listener.local_addr()?);
    let handle = std::thread::spawn(move || {
        for _ in 0..n {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream.try_clone().expect("clone stream"));
            let mut len = 0;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap_or(0);
                }
            }
            let mut body = vec![0; len];
            let _ = reader.read_exact(&mut body);
            let content = r#"{"hints": [{"name": "mk", "role": "Allocator", "target": "return"}]}"#;
            let reply = serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string();
            let mut stream = stream;
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{reply}",
                reply.len()
            );
        }
    });
    Ok((url, handle))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cache = tempfile::tempdir()?;
    let (url, server) = serve(1)?;
    let config = ClientConfig { endpoint: url, model_id: "demo-model".into(), api_key_env: String::new(), ..ClientConfig::default() };
    let prompt = "Classify: char *mk(int n) { return malloc(n); }";

    let recorder = LlmClient::new(config.clone(), CacheMode::Record, Some(cache.path().into()))?;
    println!("record:  {}", recorder.complete(prompt)?);
    println!("record again (cache hit): {}", recorder.complete(prompt)?);
    println!("network calls while recording: {}", recorder.network_calls());
    server.join().expect("server thread");

    let offline = ClientConfig { endpoint: "http://127.0.0.1:9/unreachable".into(), ..config };
    let replayer = LlmClient::new(offline, CacheMode::Replay, Some(cache.path().into()))?;
    println!("replay:  {}", replayer.complete(prompt)?);
    println!("network calls while replaying: {}", replayer.network_calls());
    match replayer.complete("a prompt nobody recorded") {
        Err(e @ ClientError::CacheMiss { .. }) => println!("unrecorded prompt: {e}"),
        other => println!("unexpected: {other:?}"),
    }

    for ex in ExchangeCache::open(cache.path())?.entries()? {
        println!("cached {} for model {}", &ex.cache_key[..16], ex.model_id);
    }
    Ok(())
}
